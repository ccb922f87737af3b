//! The three encryption suites behind the common public-key interface.
//!
//! - TEST: a keyed stream permutation with deterministic key derivation.
//!   Cheap and reproducible; the public and secret halves share the key
//!   material, which is fine for protocol tests and nothing else.
//! - HYBRID: ephemeral ElGamal KEM over the 2048-bit group plus an
//!   authenticated stream cipher. Probabilistic, wrong-key detectable.
//! - URE: plain-group universal re-encryption of byte strings. The message
//!   is chunked into group elements sharing one identity pair, so a node
//!   can re-randomize a stored ciphertext without any key material.

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;
use sha2::{Digest as _, Sha256};

use super::group::{Group, MODP_2048_ELEMENT_LEN};
use super::{CryptoError, SuiteId};

const TEST_KEY_LEN: usize = 32;
const NONCE_LEN: usize = 16;
const TAG_LEN: usize = 16;

/// Constant ciphertext overhead of the TEST suite: nonce plus tag.
pub const TEST_OVERHEAD: usize = NONCE_LEN + TAG_LEN;
/// Constant overhead of the HYBRID suite: KEM element plus tag.
pub const HYBRID_OVERHEAD: usize = MODP_2048_ELEMENT_LEN + TAG_LEN;

/// Plaintext bytes carried per group element in the URE suite. One byte of
/// headroom under the 256-byte element keeps every chunk value strictly
/// below (p-1)/2, plus two bytes so the +1 offset can never overflow.
pub const URE_CHUNK_LEN: usize = 253;
/// Fixed part of a URE ciphertext: element count plus the identity pair.
pub const URE_FIXED_OVERHEAD: usize = 2 + 2 * MODP_2048_ELEMENT_LEN;
const URE_LEN_PREFIX: usize = 4;

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Counter-mode keystream XOR from a 32-byte key and a nonce.
fn stream_xor(key: &[u8; 32], nonce: &[u8], data: &mut [u8]) {
    for (block_idx, chunk) in data.chunks_mut(32).enumerate() {
        let ctr = (block_idx as u64).to_be_bytes();
        let block = sha256(&[b"posthorn.stream", key, nonce, &ctr]);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

fn mac(key: &[u8; 32], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(b"posthorn.mac");
    h.update(key);
    for p in parts {
        h.update(p);
    }
    let full: [u8; 32] = h.finalize().into();
    full[..TAG_LEN].try_into().unwrap()
}

// ---------------------------------------------------------------------------
// TEST suite
// ---------------------------------------------------------------------------

pub fn test_keygen(seed: u64) -> (Vec<u8>, Vec<u8>) {
    let key = sha256(&[b"posthorn.test.keygen", &seed.to_be_bytes()]);
    (key.to_vec(), key.to_vec())
}

pub fn test_encrypt(pk: &[u8], m: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
    let key: [u8; 32] = pk[..TEST_KEY_LEN].try_into().unwrap();
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut body = m.to_vec();
    stream_xor(&key, &nonce, &mut body);
    let tag = mac(&key, &[&nonce, &body]);
    let mut out = Vec::with_capacity(m.len() + TEST_OVERHEAD);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body);
    out.extend_from_slice(&tag);
    out
}

pub fn test_decrypt(sk: &[u8], c: &[u8]) -> Option<Vec<u8>> {
    if c.len() < TEST_OVERHEAD || sk.len() != TEST_KEY_LEN {
        return None;
    }
    let key: [u8; 32] = sk.try_into().unwrap();
    let nonce = &c[..NONCE_LEN];
    let body = &c[NONCE_LEN..c.len() - TAG_LEN];
    let tag = &c[c.len() - TAG_LEN..];
    if mac(&key, &[nonce, body]) != tag {
        return None;
    }
    let mut out = body.to_vec();
    stream_xor(&key, nonce, &mut out);
    Some(out)
}

// ---------------------------------------------------------------------------
// HYBRID suite
// ---------------------------------------------------------------------------

pub fn hybrid_keygen(rng: &mut dyn RngCore) -> (Vec<u8>, Vec<u8>) {
    let grp = Group::modp2048();
    let x = grp.sample_exponent(rng);
    let y = grp.pow(&grp.g, &x);
    (
        grp.element_to_bytes(&y, MODP_2048_ELEMENT_LEN),
        grp.element_to_bytes(&x, MODP_2048_ELEMENT_LEN),
    )
}

fn kem_key(shared: &BigUint) -> [u8; 32] {
    let grp = Group::modp2048();
    sha256(&[
        b"posthorn.hybrid.kdf",
        &grp.element_to_bytes(shared, MODP_2048_ELEMENT_LEN),
    ])
}

pub fn hybrid_encrypt(pk: &[u8], m: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>, CryptoError> {
    let grp = Group::modp2048();
    let y = BigUint::from_bytes_be(pk);
    if !grp.contains(&y) {
        return Err(CryptoError::BadKey);
    }
    let k = grp.sample_exponent(rng);
    let u = grp.pow(&grp.g, &k);
    let key = kem_key(&grp.pow(&y, &k));
    let u_bytes = grp.element_to_bytes(&u, MODP_2048_ELEMENT_LEN);
    let mut body = m.to_vec();
    stream_xor(&key, &u_bytes, &mut body);
    let tag = mac(&key, &[&u_bytes, &body]);
    let mut out = Vec::with_capacity(m.len() + HYBRID_OVERHEAD);
    out.extend_from_slice(&u_bytes);
    out.extend_from_slice(&body);
    out.extend_from_slice(&tag);
    Ok(out)
}

pub fn hybrid_decrypt(sk: &[u8], c: &[u8]) -> Option<Vec<u8>> {
    if c.len() < HYBRID_OVERHEAD {
        return None;
    }
    let grp = Group::modp2048();
    let x = BigUint::from_bytes_be(sk);
    let u_bytes = &c[..MODP_2048_ELEMENT_LEN];
    let u = BigUint::from_bytes_be(u_bytes);
    if !grp.contains(&u) {
        return None;
    }
    let key = kem_key(&grp.pow(&u, &x));
    let body = &c[MODP_2048_ELEMENT_LEN..c.len() - TAG_LEN];
    let tag = &c[c.len() - TAG_LEN..];
    if mac(&key, &[u_bytes, body]) != tag {
        return None;
    }
    let mut out = body.to_vec();
    stream_xor(&key, u_bytes, &mut out);
    Some(out)
}

// ---------------------------------------------------------------------------
// URE suite (byte strings)
// ---------------------------------------------------------------------------

pub fn ure_keygen(rng: &mut dyn RngCore) -> (Vec<u8>, Vec<u8>) {
    // Same key shape as the hybrid KEM, over the same group.
    hybrid_keygen(rng)
}

fn ure_chunk_count(m_len: usize) -> usize {
    (URE_LEN_PREFIX + m_len).div_ceil(URE_CHUNK_LEN).max(1)
}

pub fn ure_ciphertext_len(m_len: usize) -> usize {
    URE_FIXED_OVERHEAD + 2 * MODP_2048_ELEMENT_LEN * ure_chunk_count(m_len)
}

/// Largest plaintext whose URE ciphertext fits in `budget` bytes.
pub fn ure_max_plaintext(budget: usize) -> Option<usize> {
    if budget < URE_FIXED_OVERHEAD + 2 * MODP_2048_ELEMENT_LEN {
        return None;
    }
    let chunks = (budget - URE_FIXED_OVERHEAD) / (2 * MODP_2048_ELEMENT_LEN);
    Some(chunks * URE_CHUNK_LEN - URE_LEN_PREFIX)
}

pub fn ure_encrypt_bytes(
    pk: &[u8],
    m: &[u8],
    rng: &mut dyn RngCore,
) -> Result<Vec<u8>, CryptoError> {
    let grp = Group::modp2048();
    let y = BigUint::from_bytes_be(pk);
    if !grp.contains(&y) {
        return Err(CryptoError::BadKey);
    }
    let n = ure_chunk_count(m.len());
    if n > u16::MAX as usize || m.len() > u32::MAX as usize {
        return Err(CryptoError::Oversize {
            len: m.len(),
            max: URE_CHUNK_LEN * u16::MAX as usize,
        });
    }
    let mut framed = Vec::with_capacity(n * URE_CHUNK_LEN);
    framed.extend_from_slice(&(m.len() as u32).to_be_bytes());
    framed.extend_from_slice(m);
    framed.resize(n * URE_CHUNK_LEN, 0);

    let k1 = grp.sample_unit_exponent(rng);
    let a1 = grp.pow(&y, &k1);
    let b1 = grp.pow(&grp.g, &k1);

    let mut out = Vec::with_capacity(ure_ciphertext_len(m.len()));
    out.extend_from_slice(&(n as u16).to_be_bytes());
    out.extend_from_slice(&grp.element_to_bytes(&a1, MODP_2048_ELEMENT_LEN));
    out.extend_from_slice(&grp.element_to_bytes(&b1, MODP_2048_ELEMENT_LEN));
    for chunk in framed.chunks(URE_CHUNK_LEN) {
        let v = BigUint::from_bytes_be(chunk) + 1u32;
        let w = grp.encode_residue(&v);
        let k0 = grp.sample_exponent(rng);
        let a0 = grp.mul(&w, &grp.pow(&y, &k0));
        let b0 = grp.pow(&grp.g, &k0);
        out.extend_from_slice(&grp.element_to_bytes(&a0, MODP_2048_ELEMENT_LEN));
        out.extend_from_slice(&grp.element_to_bytes(&b0, MODP_2048_ELEMENT_LEN));
    }
    Ok(out)
}

struct UreWire<'a> {
    a1: BigUint,
    b1: BigUint,
    pairs: Vec<(&'a [u8], &'a [u8])>,
}

fn ure_parse(c: &[u8]) -> Option<UreWire<'_>> {
    const E: usize = MODP_2048_ELEMENT_LEN;
    if c.len() < 2 {
        return None;
    }
    let n = u16::from_be_bytes([c[0], c[1]]) as usize;
    if n == 0 || c.len() != 2 + 2 * E + 2 * E * n {
        return None;
    }
    let a1 = BigUint::from_bytes_be(&c[2..2 + E]);
    let b1 = BigUint::from_bytes_be(&c[2 + E..2 + 2 * E]);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let off = 2 + 2 * E + 2 * E * i;
        pairs.push((&c[off..off + E], &c[off + E..off + 2 * E]));
    }
    Some(UreWire { a1, b1, pairs })
}

pub fn ure_decrypt_bytes(sk: &[u8], c: &[u8]) -> Option<Vec<u8>> {
    let grp = Group::modp2048();
    let x = BigUint::from_bytes_be(sk);
    let wire = ure_parse(c)?;
    if !grp.contains(&wire.a1) || !grp.contains(&wire.b1) {
        return None;
    }
    // Identity check: (a1, b1) must decrypt to 1 under this key.
    if !grp.div(&wire.a1, &grp.pow(&wire.b1, &x)).is_one() {
        return None;
    }
    let mut framed = Vec::with_capacity(wire.pairs.len() * URE_CHUNK_LEN);
    for (a0_bytes, b0_bytes) in &wire.pairs {
        let a0 = BigUint::from_bytes_be(a0_bytes);
        let b0 = BigUint::from_bytes_be(b0_bytes);
        if !grp.contains(&a0) || !grp.contains(&b0) {
            return None;
        }
        let w = grp.div(&a0, &grp.pow(&b0, &x));
        let v = grp.decode_residue(&w);
        let chunk_int = v - 1u32;
        let bytes = chunk_int.to_bytes_be();
        if bytes.len() > URE_CHUNK_LEN {
            return None;
        }
        let pad = URE_CHUNK_LEN - bytes.len();
        framed.resize(framed.len() + pad, 0);
        framed.extend_from_slice(&bytes);
    }
    let len = u32::from_be_bytes(framed[..4].try_into().unwrap()) as usize;
    if len > framed.len() - URE_LEN_PREFIX {
        return None;
    }
    Some(framed[URE_LEN_PREFIX..URE_LEN_PREFIX + len].to_vec())
}

/// Re-randomize a URE ciphertext in place, without key material. Every
/// group element of the output differs from the input (up to the negligible
/// chance of a unit exponent draw), while decryption is unchanged.
pub fn ure_reencrypt_bytes(c: &[u8], rng: &mut dyn RngCore) -> Option<Vec<u8>> {
    const E: usize = MODP_2048_ELEMENT_LEN;
    let grp = Group::modp2048();
    let wire = ure_parse(c)?;
    if !grp.contains(&wire.a1) || !grp.contains(&wire.b1) {
        return None;
    }
    let mut out = Vec::with_capacity(c.len());
    out.extend_from_slice(&c[..2]);
    let k1 = grp.sample_unit_exponent(rng);
    out.extend_from_slice(&grp.element_to_bytes(&grp.pow(&wire.a1, &k1), E));
    out.extend_from_slice(&grp.element_to_bytes(&grp.pow(&wire.b1, &k1), E));
    for (a0_bytes, b0_bytes) in &wire.pairs {
        let a0 = BigUint::from_bytes_be(a0_bytes);
        let b0 = BigUint::from_bytes_be(b0_bytes);
        if !grp.contains(&a0) || !grp.contains(&b0) {
            return None;
        }
        let k0 = grp.sample_exponent(rng);
        out.extend_from_slice(&grp.element_to_bytes(
            &grp.mul(&a0, &grp.pow(&wire.a1, &k0)),
            E,
        ));
        out.extend_from_slice(&grp.element_to_bytes(
            &grp.mul(&b0, &grp.pow(&wire.b1, &k0)),
            E,
        ));
    }
    Some(out)
}

/// Whether `suite` supports keyless ciphertext re-randomization.
pub fn supports_reencryption(suite: SuiteId) -> bool {
    suite == SuiteId::Ure
}
