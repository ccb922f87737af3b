//! Pluggable public-key encryption, hashing, and universal re-encryption.
//!
//! Every suite exposes the same four operations — deterministic key
//! generation from a seed, probabilistic encryption, authenticated
//! decryption that returns a rejection instead of garbage on a wrong key,
//! and a fixed 32-byte hash — so the rest of the protocol is agnostic to
//! the primitive in use.

pub mod group;
mod suites;
pub mod ure;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

pub use suites::{
    supports_reencryption, ure_reencrypt_bytes, HYBRID_OVERHEAD, TEST_OVERHEAD, URE_CHUNK_LEN,
    URE_FIXED_OVERHEAD,
};
pub use ure::{ure_decrypt, ure_encrypt, ure_encrypt_with, ure_reencrypt, ure_reencrypt_with,
    UreCiphertext, UreError};

/// Output width of [`hash`], and the width of the ACK prefix on the wire.
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported suite tag {0}")]
    UnsupportedSuite(u8),
    #[error("plaintext of {len} bytes exceeds suite maximum {max}")]
    Oversize { len: usize, max: usize },
    #[error("key bytes are not valid for this suite")]
    BadKey,
    #[error("malformed key file")]
    BadKeyFile,
}

/// Identifies which primitive family a key or ciphertext belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteId {
    /// Deterministic keyed permutation for reproducible tests.
    Test,
    /// Ephemeral-key KEM plus authenticated stream cipher.
    Hybrid,
    /// Plain-group universal re-encryption; supports keyless
    /// re-randomization of stored ciphertexts.
    Ure,
}

impl SuiteId {
    pub fn tag(self) -> u8 {
        match self {
            SuiteId::Test => 1,
            SuiteId::Hybrid => 2,
            SuiteId::Ure => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, CryptoError> {
        match tag {
            1 => Ok(SuiteId::Test),
            2 => Ok(SuiteId::Hybrid),
            3 => Ok(SuiteId::Ure),
            other => Err(CryptoError::UnsupportedSuite(other)),
        }
    }

    pub fn parse(name: &str) -> Result<Self, CryptoError> {
        match name.to_ascii_lowercase().as_str() {
            "test" => Ok(SuiteId::Test),
            "hybrid" => Ok(SuiteId::Hybrid),
            "ure" => Ok(SuiteId::Ure),
            _ => Err(CryptoError::UnsupportedSuite(0)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SuiteId::Test => "test",
            SuiteId::Hybrid => "hybrid",
            SuiteId::Ure => "ure",
        }
    }

    /// Fixed ciphertext overhead for the byte suites. The URE suite is not
    /// linear in the plaintext; use [`ciphertext_len`] instead.
    pub fn overhead(self) -> usize {
        match self {
            SuiteId::Test => TEST_OVERHEAD,
            SuiteId::Hybrid => HYBRID_OVERHEAD,
            SuiteId::Ure => URE_FIXED_OVERHEAD,
        }
    }
}

impl fmt::Display for SuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// 32-byte hash value; also the ACK prefix carried in slots.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Digest)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}…)", hex::encode(&self.0[..8]))
    }
}

/// SHA-256, fixed at 32 bytes across the deployment.
pub fn hash(m: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(m);
    Digest(h.finalize().into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub suite: SuiteId,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey {
    pub suite: SuiteId,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// Deterministic key generation: a fixed seed always yields the same pair,
/// distinct seeds yield distinct keys with overwhelming probability.
pub fn keygen(suite: SuiteId, seed: u64) -> KeyPair {
    let seed_bytes = {
        let mut h = Sha256::new();
        h.update(b"posthorn.keygen");
        h.update([suite.tag()]);
        h.update(seed.to_be_bytes());
        let out: [u8; 32] = h.finalize().into();
        out
    };
    let mut rng = ChaCha20Rng::from_seed(seed_bytes);
    let (public, secret) = match suite {
        SuiteId::Test => suites::test_keygen(seed),
        SuiteId::Hybrid => suites::hybrid_keygen(&mut rng),
        SuiteId::Ure => suites::ure_keygen(&mut rng),
    };
    KeyPair {
        public: PublicKey {
            suite,
            bytes: public,
        },
        secret: SecretKey {
            suite,
            bytes: secret,
        },
    }
}

/// Probabilistic encryption. Two encryptions of the same plaintext differ.
pub fn encrypt(pk: &PublicKey, m: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>, CryptoError> {
    match pk.suite {
        SuiteId::Test => Ok(suites::test_encrypt(&pk.bytes, m, rng)),
        SuiteId::Hybrid => suites::hybrid_encrypt(&pk.bytes, m, rng),
        SuiteId::Ure => suites::ure_encrypt_bytes(&pk.bytes, m, rng),
    }
}

/// Authenticated decryption. `None` means the bytes were not produced by
/// [`encrypt`] under the matching public key; it is a value, not a fault.
pub fn decrypt(sk: &SecretKey, c: &[u8]) -> Option<Vec<u8>> {
    match sk.suite {
        SuiteId::Test => suites::test_decrypt(&sk.bytes, c),
        SuiteId::Hybrid => suites::hybrid_decrypt(&sk.bytes, c),
        SuiteId::Ure => suites::ure_decrypt_bytes(&sk.bytes, c),
    }
}

/// Exact ciphertext length for a plaintext of `m_len` bytes.
pub fn ciphertext_len(suite: SuiteId, m_len: usize) -> usize {
    match suite {
        SuiteId::Test => m_len + TEST_OVERHEAD,
        SuiteId::Hybrid => m_len + HYBRID_OVERHEAD,
        SuiteId::Ure => suites::ure_ciphertext_len(m_len),
    }
}

/// Largest plaintext whose ciphertext fits in `budget` bytes, or `None`
/// when even the empty plaintext does not fit.
pub fn max_plaintext_len(suite: SuiteId, budget: usize) -> Option<usize> {
    match suite {
        SuiteId::Test => budget.checked_sub(TEST_OVERHEAD),
        SuiteId::Hybrid => budget.checked_sub(HYBRID_OVERHEAD),
        SuiteId::Ure => suites::ure_max_plaintext(budget),
    }
}

// ---------------------------------------------------------------------------
// Key files: tag byte, then length-prefixed public and secret halves.
// A public-only file carries a zero-length secret field.
// ---------------------------------------------------------------------------

pub fn encode_key_file(pair: &KeyPair, include_secret: bool) -> Vec<u8> {
    let mut out = vec![pair.public.suite.tag()];
    out.extend_from_slice(&(pair.public.bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&pair.public.bytes);
    if include_secret {
        out.extend_from_slice(&(pair.secret.bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&pair.secret.bytes);
    } else {
        out.extend_from_slice(&0u32.to_be_bytes());
    }
    out
}

pub fn decode_key_file(data: &[u8]) -> Result<(PublicKey, Option<SecretKey>), CryptoError> {
    let take_u32 = |data: &[u8], off: usize| -> Result<u32, CryptoError> {
        data.get(off..off + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or(CryptoError::BadKeyFile)
    };
    let suite = SuiteId::from_tag(*data.first().ok_or(CryptoError::BadKeyFile)?)?;
    let pk_len = take_u32(data, 1)? as usize;
    let pk_end = 5 + pk_len;
    let pk = data.get(5..pk_end).ok_or(CryptoError::BadKeyFile)?;
    let sk_len = take_u32(data, pk_end)? as usize;
    let sk_end = pk_end + 4 + sk_len;
    let sk = data.get(pk_end + 4..sk_end).ok_or(CryptoError::BadKeyFile)?;
    if sk_end != data.len() {
        return Err(CryptoError::BadKeyFile);
    }
    let public = PublicKey {
        suite,
        bytes: pk.to_vec(),
    };
    let secret = if sk.is_empty() {
        None
    } else {
        Some(SecretKey {
            suite,
            bytes: sk.to_vec(),
        })
    };
    Ok((public, secret))
}
