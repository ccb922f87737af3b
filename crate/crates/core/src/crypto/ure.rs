//! Universal re-encryption: re-randomizing an ElGamal-style ciphertext
//! without knowing the public key it was produced under.
//!
//! A ciphertext is four group elements. `(a0, b0)` carries the message,
//! `(a1, b1)` is an encryption of the group identity; anyone can fold fresh
//! powers of the identity pair into both halves, which changes every
//! component while preserving the plaintext. Decryption checks that the
//! identity pair really decrypts to 1 under the secret key, which doubles as
//! the wrong-key rejection test.

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;
use thiserror::Error;

use super::group::Group;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UreError {
    #[error("plaintext is not an element of the group")]
    OutsideGroup,
    #[error("ciphertext component is not an element of the group")]
    Malformed,
}

/// `(a0, b0)` message pair plus `(a1, b1)` identity pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UreCiphertext {
    pub a0: BigUint,
    pub b0: BigUint,
    pub a1: BigUint,
    pub b1: BigUint,
}

impl UreCiphertext {
    fn check(&self, grp: &Group) -> Result<(), UreError> {
        for v in [&self.a0, &self.b0, &self.a1, &self.b1] {
            if !grp.contains(v) {
                return Err(UreError::Malformed);
            }
        }
        Ok(())
    }
}

/// Encrypt a group element `m` under public key `y` with fresh randomness.
pub fn ure_encrypt(
    grp: &Group,
    y: &BigUint,
    m: &BigUint,
    rng: &mut dyn RngCore,
) -> Result<UreCiphertext, UreError> {
    let k0 = grp.sample_exponent(rng);
    let k1 = grp.sample_unit_exponent(rng);
    ure_encrypt_with(grp, y, m, &k0, &k1)
}

/// Encrypt with caller-chosen exponents; used by worked examples and by the
/// deterministic test vectors.
pub fn ure_encrypt_with(
    grp: &Group,
    y: &BigUint,
    m: &BigUint,
    k0: &BigUint,
    k1: &BigUint,
) -> Result<UreCiphertext, UreError> {
    if !grp.in_subgroup(m) {
        return Err(UreError::OutsideGroup);
    }
    Ok(UreCiphertext {
        a0: grp.mul(m, &grp.pow(y, k0)),
        b0: grp.pow(&grp.g, k0),
        a1: grp.pow(y, k1),
        b1: grp.pow(&grp.g, k1),
    })
}

/// Re-randomize a ciphertext. Needs no key material: the identity pair is
/// all the randomization source required.
pub fn ure_reencrypt(
    grp: &Group,
    c: &UreCiphertext,
    rng: &mut dyn RngCore,
) -> Result<UreCiphertext, UreError> {
    let k0 = grp.sample_exponent(rng);
    let k1 = grp.sample_unit_exponent(rng);
    ure_reencrypt_with(grp, c, &k0, &k1)
}

pub fn ure_reencrypt_with(
    grp: &Group,
    c: &UreCiphertext,
    k0: &BigUint,
    k1: &BigUint,
) -> Result<UreCiphertext, UreError> {
    c.check(grp)?;
    Ok(UreCiphertext {
        a0: grp.mul(&c.a0, &grp.pow(&c.a1, k0)),
        b0: grp.mul(&c.b0, &grp.pow(&c.b1, k0)),
        a1: grp.pow(&c.a1, k1),
        b1: grp.pow(&c.b1, k1),
    })
}

/// Decrypt under secret key `x`. Returns `None` when the identity check
/// fails, i.e. the ciphertext was not produced for this key.
pub fn ure_decrypt(grp: &Group, x: &BigUint, c: &UreCiphertext) -> Option<BigUint> {
    if c.check(grp).is_err() {
        return None;
    }
    if !grp.div(&c.a1, &grp.pow(&c.b1, x)).is_one() {
        return None;
    }
    Some(grp.div(&c.a0, &grp.pow(&c.b0, x)))
}
