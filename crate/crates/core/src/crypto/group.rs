//! Modular-arithmetic helpers shared by the hybrid KEM and the universal
//! re-encryption suite.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;
use std::sync::OnceLock;

/// A multiplicative group `<g> mod p` with `q` the order of `g`.
///
/// Two instances are used in practice: the 2048-bit safe-prime group for
/// realistic runs (where `g` generates the subgroup of quadratic residues,
/// `q = (p-1)/2`), and a tiny explicit group for worked tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub p: BigUint,
    pub g: BigUint,
    /// Order of `g`.
    pub q: BigUint,
}

/// 2048-bit MODP safe prime (RFC 3526, group 14), generator 2.
const MODP_2048_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// Byte width of one element of the 2048-bit group.
pub const MODP_2048_ELEMENT_LEN: usize = 256;

impl Group {
    /// The 2048-bit production group. `g = 2` generates the quadratic
    /// residues, so messages are mapped into the subgroup before use.
    pub fn modp2048() -> &'static Group {
        static GROUP: OnceLock<Group> = OnceLock::new();
        GROUP.get_or_init(|| {
            let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).unwrap();
            let q = (&p - 1u32) >> 1;
            Group {
                p,
                g: BigUint::from(2u32),
                q,
            }
        })
    }

    /// `p = 23`, `g = 5` (a generator of the full group, order 22). Only for
    /// worked examples and fast statistical tests.
    pub fn tiny23() -> Group {
        Group {
            p: BigUint::from(23u32),
            g: BigUint::from(5u32),
            q: BigUint::from(22u32),
        }
    }

    /// `g` generates the full multiplicative group (no residue encoding
    /// needed) iff `q == p - 1`.
    pub fn is_full_group(&self) -> bool {
        self.q == &self.p - 1u32
    }

    /// Uniform element of `[1, bound)` by rejection sampling.
    pub fn sample_below(bound: &BigUint, rng: &mut dyn RngCore) -> BigUint {
        assert!(bound > &BigUint::one());
        let bits = bound.bits();
        let bytes = bits.div_ceil(8) as usize;
        let top_mask = if bits.is_multiple_of(8) {
            0xff
        } else {
            (1u16 << (bits % 8)) as u8 - 1
        };
        let mut buf = vec![0u8; bytes];
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= top_mask;
            let v = BigUint::from_bytes_be(&buf);
            if !v.is_zero() && &v < bound {
                return v;
            }
        }
    }

    /// Fresh exponent in `[1, q)`.
    pub fn sample_exponent(&self, rng: &mut dyn RngCore) -> BigUint {
        Self::sample_below(&self.q, rng)
    }

    /// Fresh exponent in `[1, q)` coprime to `q`. Identity-pair exponents
    /// must be units modulo the group order: otherwise a chain of
    /// re-encryptions can drive the pair to the group identity, which
    /// would pass the decryption check under any key. For prime `q` every
    /// exponent qualifies.
    pub fn sample_unit_exponent(&self, rng: &mut dyn RngCore) -> BigUint {
        loop {
            let k = Self::sample_below(&self.q, rng);
            if gcd(k.clone(), self.q.clone()).is_one() {
                return k;
            }
        }
    }

    pub fn contains(&self, v: &BigUint) -> bool {
        !v.is_zero() && v < &self.p
    }

    /// Whether `v` is a quadratic residue mod `p` (Euler's criterion).
    pub fn is_residue(&self, v: &BigUint) -> bool {
        let half = (&self.p - 1u32) >> 1;
        v.modpow(&half, &self.p).is_one()
    }

    /// Membership in the subgroup generated by `g`.
    pub fn in_subgroup(&self, v: &BigUint) -> bool {
        self.contains(v) && (self.is_full_group() || self.is_residue(v))
    }

    /// Map `v` in `[1, (p-1)/2]` onto a quadratic residue. Exactly one of
    /// `v` and `p - v` is a residue when `p ≡ 3 (mod 4)`, so the mapping is
    /// invertible via [`Group::decode_residue`].
    pub fn encode_residue(&self, v: &BigUint) -> BigUint {
        debug_assert!(!v.is_zero() && v <= &((&self.p - 1u32) >> 1));
        if self.is_residue(v) {
            v.clone()
        } else {
            &self.p - v
        }
    }

    pub fn decode_residue(&self, w: &BigUint) -> BigUint {
        let half = (&self.p - 1u32) >> 1;
        if w <= &half {
            w.clone()
        } else {
            &self.p - w
        }
    }

    /// `a * b mod p`.
    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.p
    }

    /// `a / b mod p` via Fermat inversion (`p` prime).
    pub fn div(&self, a: &BigUint, b: &BigUint) -> BigUint {
        let inv = b.modpow(&(&self.p - 2u32), &self.p);
        (a * inv) % &self.p
    }

    pub fn pow(&self, base: &BigUint, exp: &BigUint) -> BigUint {
        base.modpow(exp, &self.p)
    }

    /// Fixed-width big-endian encoding of an element.
    pub fn element_to_bytes(&self, v: &BigUint, width: usize) -> Vec<u8> {
        let mut out = v.to_bytes_be();
        assert!(out.len() <= width, "element wider than group");
        let mut padded = vec![0u8; width - out.len()];
        padded.append(&mut out);
        padded
    }
}

fn gcd(mut a: BigUint, mut b: BigUint) -> BigUint {
    while !b.is_zero() {
        let r = &a % &b;
        a = std::mem::replace(&mut b, r);
    }
    a
}

/// Independent square-and-multiply used as a test oracle, deliberately not
/// `BigUint::modpow`.
#[cfg(test)]
pub(crate) fn oracle_modpow(base: &BigUint, exp: &BigUint, p: &BigUint) -> BigUint {
    let mut acc = BigUint::one();
    let mut b = base.clone() % p;
    for i in 0..exp.bits() {
        if exp.bit(i) {
            acc = (&acc * &b) % p;
        }
        b = (&b * &b) % p;
    }
    acc
}
