//! RSA key decoding, fingerprints, and private-key recovery.
//!
//! Everything here is a pure function over immutable values. The recovery
//! routines exist because a shared prime or a shared modulus hands an
//! observer the private key of the affected relays; reconstructing the key
//! is how a finding is confirmed rather than merely suspected.

mod der;
mod pem;

pub use der::{decode_rsa_public, encode_rsa_public};
pub use pem::{decode_public_block, encode_public_block};

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

/// Random bases tried when factoring a modulus from `(e, d)`.
const RECOVERY_RETRY_BASES: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum KeyMathError {
    #[error("malformed DER: {0}")]
    BadDer(String),
    #[error("malformed PEM: {0}")]
    BadPem(String),
    #[error("given value is not a proper factor of the modulus")]
    NotAFactor,
    #[error("exponent is not invertible modulo phi(N)")]
    NoInverse,
    #[error("keys do not share a modulus")]
    ModulusMismatch,
    #[error("could not factor the modulus from (e, d) within the retry budget")]
    RecoveryFailed,
}

/// An RSA public key: modulus and exponent, nothing else.
///
/// Provenance (which relay, which role, when) lives in
/// [`KeyObservation`](crate::ingest::KeyObservation); this type is what the
/// arithmetic operates on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RsaPublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

impl RsaPublicKey {
    pub fn new(n: BigUint, e: BigUint) -> Self {
        RsaPublicKey { n, e }
    }

    /// Parse from the DER bytes of a PKCS#1 `RSAPublicKey`.
    pub fn from_der(der: &[u8]) -> Result<Self, KeyMathError> {
        let (n, e) = decode_rsa_public(der)?;
        Ok(RsaPublicKey { n, e })
    }

    /// Parse from a PEM-armored `RSA PUBLIC KEY` block.
    pub fn from_pem(block: &str) -> Result<Self, KeyMathError> {
        Self::from_der(&decode_public_block(block)?)
    }

    /// Canonical DER encoding, the exact bytes Tor fingerprints.
    pub fn to_der(&self) -> Vec<u8> {
        encode_rsa_public(&self.n, &self.e)
    }

    pub fn bit_len(&self) -> u64 {
        self.n.bits()
    }

    /// Well-formed keys have odd `N >= 3` and odd `e >= 3`.
    pub fn is_well_formed(&self) -> bool {
        self.n >= BigUint::from(3u8)
            && self.n.is_odd()
            && self.e >= BigUint::from(3u8)
            && self.e.is_odd()
    }
}

/// A private key reconstructed from a leaked factor or a shared modulus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredPrivateKey {
    /// Modulus, hex.
    pub n: String,
    /// Public exponent, hex.
    pub e: String,
    /// Private exponent, hex.
    pub d: String,
    /// Smaller prime factor, hex.
    pub p: String,
    /// Larger prime factor, hex.
    pub q: String,
}

impl RecoveredPrivateKey {
    fn from_parts(n: &BigUint, e: &BigUint, d: &BigUint, p: &BigUint, q: &BigUint) -> Self {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        RecoveredPrivateKey {
            n: n.to_str_radix(16),
            e: e.to_str_radix(16),
            d: d.to_str_radix(16),
            p: lo.to_str_radix(16),
            q: hi.to_str_radix(16),
        }
    }

    pub fn d_value(&self) -> BigUint {
        BigUint::parse_bytes(self.d.as_bytes(), 16).expect("stored as hex")
    }

    pub fn p_value(&self) -> BigUint {
        BigUint::parse_bytes(self.p.as_bytes(), 16).expect("stored as hex")
    }

    pub fn q_value(&self) -> BigUint {
        BigUint::parse_bytes(self.q.as_bytes(), 16).expect("stored as hex")
    }
}

/// SHA-1 over the canonical DER encoding, hex-uppercased.
///
/// This is the 40-char string Tor calls the relay fingerprint when applied
/// to an identity key. Note that the exponent participates in the digest --
/// grinding `e` changes the fingerprint, which is the whole trick behind
/// positioning a relay at a chosen spot of the hash ring.
pub fn fingerprint(key: &RsaPublicKey) -> String {
    let digest = Sha1::digest(key.to_der());
    let mut out = String::with_capacity(40);
    for b in digest {
        out.push_str(&format!("{b:02X}"));
    }
    out
}

/// Raw 20-byte fingerprint digest.
pub fn fingerprint_bytes(key: &RsaPublicKey) -> [u8; 20] {
    Sha1::digest(key.to_der()).into()
}

/// Rebuild the full private key once one prime factor is known.
///
/// `q` is `N/p` and `d` is `e^-1 mod (p-1)(q-1)`, computed with Euler's
/// totient rather than the Carmichael function.
pub fn recover_from_factor(
    key: &RsaPublicKey,
    p: &BigUint,
) -> Result<RecoveredPrivateKey, KeyMathError> {
    let one = BigUint::one();
    if *p <= one || *p >= key.n {
        return Err(KeyMathError::NotAFactor);
    }
    let (q, rem) = key.n.div_rem(p);
    if !rem.is_zero() {
        return Err(KeyMathError::NotAFactor);
    }
    let phi = (p - &one) * (&q - &one);
    let d = key.e.modinv(&phi).ok_or(KeyMathError::NoInverse)?;
    Ok(RecoveredPrivateKey::from_parts(&key.n, &key.e, &d, p, &q))
}

/// Recover `key_b`'s private exponent given `key_a`'s, when both share `N`.
///
/// Factors `N` from `(e_a, d_a)` with the even-part/square-root method,
/// then inverts `e_b` modulo phi. The factoring step draws random bases
/// from a seeded generator and gives up after a fixed budget; the result is
/// roundtrip-checked before it is returned.
pub fn recover_from_shared_modulus(
    key_a: &RsaPublicKey,
    key_b: &RsaPublicKey,
    d_a: &BigUint,
    seed: u64,
) -> Result<BigUint, KeyMathError> {
    if key_a.n != key_b.n {
        return Err(KeyMathError::ModulusMismatch);
    }
    if key_a.e == key_b.e {
        return Ok(d_a.clone());
    }
    let p = factor_from_exponents(&key_a.n, &key_a.e, d_a, seed)?;
    let recovered = recover_from_factor(key_b, &p)?;
    let d_b = recovered.d_value();
    if !roundtrip_holds(key_b, &d_b, seed) {
        return Err(KeyMathError::RecoveryFailed);
    }
    Ok(d_b)
}

/// Factor `N` given a valid exponent pair `(e, d)`.
///
/// Classic probabilistic method: `e*d - 1` is a multiple of phi; writing it
/// as `2^t * r`, a random base raised to `r` and squared repeatedly hits a
/// non-trivial square root of 1 with probability >= 1/2 per base.
pub fn factor_from_exponents(
    n: &BigUint,
    e: &BigUint,
    d: &BigUint,
    seed: u64,
) -> Result<BigUint, KeyMathError> {
    let one = BigUint::one();
    let k = e * d - &one;
    if k.is_zero() || k.is_odd() {
        return Err(KeyMathError::RecoveryFailed);
    }
    let t = k.trailing_zeros().unwrap_or(0);
    let r = &k >> t;
    let n_minus_one = n - &one;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..RECOVERY_RETRY_BASES {
        let g = random_below(&mut rng, &n_minus_one) + &one; // in [1, N-1]
        let shared = g.gcd(n);
        if shared > one && shared < *n {
            return Ok(shared);
        }
        let mut x = g.modpow(&r, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 0..t {
            let y = (&x * &x) % n;
            if y == one {
                let p = (&x - &one).gcd(n);
                if p > one && p < *n {
                    return Ok(p);
                }
                break;
            }
            if y == n_minus_one {
                break;
            }
            x = y;
        }
    }
    Err(KeyMathError::RecoveryFailed)
}

/// Checks `(m^e)^d == m (mod N)` for a handful of seeded messages.
pub fn roundtrip_holds(key: &RsaPublicKey, d: &BigUint, seed: u64) -> bool {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x726f756e64747269); // distinct stream
    (0..3).all(|_| {
        let m = random_below(&mut rng, &key.n);
        let c = m.modpow(&key.e, &key.n);
        c.modpow(d, &key.n) == m
    })
}

/// Uniform value in `[0, bound)`.
pub(crate) fn random_below<R: Rng>(rng: &mut R, bound: &BigUint) -> BigUint {
    use num_bigint::RandBigInt;
    rng.gen_biguint_below(bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(n: u64, e: u64) -> RsaPublicKey {
        RsaPublicKey::new(BigUint::from(n), BigUint::from(e))
    }

    // Oracle values for this fixed 1024-bit key were produced by an
    // independent encoder/hash script; see tests/fingerprint_oracle data.
    const FIXED_N: &str = "eaa2e41a99d2214a559096d4ce2d6ab59c6d7ca60949bcde80b6c2151386b744\
                           01e91eaaec3d64bd16ea0320ad443c10daf192fceb39bb27abf3ba0c053e0add\
                           4d0f7b0b100cb8d052d3f8a15c8e854981dfbc45f3cb941bd161894075afda09\
                           9c0f11728bce063f26ad8d5e8ea16b639326c192ae80ad2be964278a249bd6a3";

    fn fixed_key(e: u64) -> RsaPublicKey {
        let n = BigUint::parse_bytes(FIXED_N.as_bytes(), 16).unwrap();
        RsaPublicKey::new(n, BigUint::from(e))
    }

    #[test]
    fn fingerprint_matches_reference_script() {
        assert_eq!(
            fingerprint(&key(3233, 17)),
            "EAA7D4A79CD76EBA61B5E178848C7B500EE32ADD"
        );
        assert_eq!(
            fingerprint(&fixed_key(65537)),
            "C3729157D083F589D7C10F360AEA5F78E7213F0C"
        );
    }

    #[test]
    fn fingerprint_is_deterministic() {
        let k = fixed_key(65537);
        assert_eq!(fingerprint(&k), fingerprint(&k));
    }

    #[test]
    fn exponent_changes_fingerprint() {
        // reference value for e=3 from the same script
        assert_eq!(
            fingerprint(&fixed_key(3)),
            "2CAD9CD424B7283E8793E4C018B16E44909FA50E"
        );
        assert_ne!(fingerprint(&fixed_key(3)), fingerprint(&fixed_key(65537)));
    }

    #[test]
    fn textbook_recovery() {
        // N=3233=61*53, e=17: extended-Euclid oracle gives d=2753 on phi=3120
        let rec = recover_from_factor(&key(3233, 17), &BigUint::from(61u32)).unwrap();
        assert_eq!(rec.p, "35"); // 53
        assert_eq!(rec.q, "3d"); // 61
        assert_eq!(rec.d_value(), BigUint::from(2753u32));
    }

    #[test]
    fn factor_order_is_irrelevant() {
        let k = key(3233, 17);
        let a = recover_from_factor(&k, &BigUint::from(61u32)).unwrap();
        let b = recover_from_factor(&k, &BigUint::from(53u32)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn modulus_itself_is_not_a_factor() {
        let k = key(3233, 17);
        assert!(matches!(
            recover_from_factor(&k, &BigUint::from(3233u32)),
            Err(KeyMathError::NotAFactor)
        ));
        assert!(matches!(
            recover_from_factor(&k, &BigUint::one()),
            Err(KeyMathError::NotAFactor)
        ));
        assert!(matches!(
            recover_from_factor(&k, &BigUint::from(7u32)),
            Err(KeyMathError::NotAFactor)
        ));
    }

    #[test]
    fn shared_modulus_identity_case() {
        let a = key(3233, 17);
        let d = BigUint::from(2753u32);
        assert_eq!(recover_from_shared_modulus(&a, &a, &d, 1).unwrap(), d);
    }

    #[test]
    fn shared_modulus_mismatch() {
        let a = key(3233, 17);
        let b = key(3127, 17);
        assert!(matches!(
            recover_from_shared_modulus(&a, &b, &BigUint::from(2753u32), 1),
            Err(KeyMathError::ModulusMismatch)
        ));
    }

    #[test]
    fn shared_modulus_small_pair() {
        // N=3233, e_a=17/d_a=2753, e_b=7: phi=3120, 7^-1 mod 3120 = 1783
        let a = key(3233, 17);
        let b = key(3233, 7);
        let d_b = recover_from_shared_modulus(&a, &b, &BigUint::from(2753u32), 7).unwrap();
        assert_eq!(d_b, BigUint::from(1783u32));
    }
}
