//! Seeded generators for synthetic corpora with known ground truth.
//!
//! Everything here is driven by an explicit seed: the same seed always
//! produces the same primes, keys, and archives. These generators exist
//! for test fixtures and for the `gen-fixtures` command; they are not a
//! key-generation facility for real use.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::batchgcd::to_gmp;
use crate::cluster::AttributeVector;
use crate::ingest::{KeyObservation, KeyRole, RelayRecord};
use crate::keymath::{self, RsaPublicKey};

/// Probabilistic primality via GMP (trial division, BPSW, Miller-Rabin).
pub fn is_probable_prime(n: &BigUint) -> bool {
    to_gmp(n).is_probably_prime(30) != rug::integer::IsPrime::No
}

/// A random prime of exactly `bits` bits, top two bits set.
pub fn gen_prime<R: Rng>(rng: &mut R, bits: u64) -> BigUint {
    assert!(bits >= 8, "prime size too small to be useful");
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    loop {
        let candidate = rng.gen_biguint(bits) | &top | BigUint::one();
        if is_probable_prime(&candidate) {
            return candidate;
        }
    }
}

/// A generated RSA key with its private half, for roundtrip checks.
#[derive(Debug, Clone)]
pub struct GeneratedKeyPair {
    pub public: RsaPublicKey,
    pub p: BigUint,
    pub q: BigUint,
    pub d: BigUint,
}

/// Generate a keypair with modulus of exactly `bits` bits and e = 65537.
pub fn gen_keypair<R: Rng>(rng: &mut R, bits: u64) -> GeneratedKeyPair {
    let e = BigUint::from(crate::batchgcd::STANDARD_EXPONENT);
    loop {
        let p = gen_prime(rng, bits / 2);
        let q = gen_prime(rng, bits - bits / 2);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() != bits {
            continue;
        }
        let phi = (&p - BigUint::one()) * (&q - BigUint::one());
        if let Some(d) = e.modinv(&phi) {
            return GeneratedKeyPair {
                public: RsaPublicKey::new(n, e),
                p,
                q,
                d,
            };
        }
    }
}

/// A pair of keys sharing one modulus with different exponents, both
/// private exponents known.
#[derive(Debug, Clone)]
pub struct SharedModulusPair {
    pub key_a: RsaPublicKey,
    pub d_a: BigUint,
    pub key_b: RsaPublicKey,
    pub d_b: BigUint,
}

pub fn gen_shared_modulus_pair<R: Rng>(rng: &mut R, bits: u64) -> SharedModulusPair {
    loop {
        let base = gen_keypair(rng, bits);
        let phi = (&base.p - BigUint::one()) * (&base.q - BigUint::one());
        // grind a second exponent the way shared-prefix relays did
        let e_b = loop {
            let candidate = BigUint::from(rng.gen_range(3u32..10_000_000) | 1);
            if candidate != base.public.e && candidate.gcd(&phi).is_one() {
                break candidate;
            }
        };
        if let Some(d_b) = e_b.modinv(&phi) {
            return SharedModulusPair {
                key_a: base.public.clone(),
                d_a: base.d,
                key_b: RsaPublicKey::new(base.public.n.clone(), e_b),
                d_b,
            };
        }
    }
}

/// A corpus of moduli with known planted shared primes.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub moduli: Vec<BigUint>,
    /// Ground truth: each planted prime with the indices it divides.
    pub planted: Vec<(BigUint, Vec<usize>)>,
}

/// Build `count` pairwise-coprime moduli of exactly `modulus_bits` bits,
/// except for planted sharing: `group_sizes[g]` moduli share one prime.
///
/// Every constituent prime is drawn once, so the ground truth is exact:
/// the only gcd findings in the corpus are the planted groups.
pub fn planted_corpus(
    seed: u64,
    count: usize,
    modulus_bits: u64,
    group_sizes: &[usize],
) -> PlantedCorpus {
    let planted_total: usize = group_sizes.iter().sum();
    assert!(
        planted_total <= count,
        "more planted members than moduli requested"
    );
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let factor_bits = if modulus_bits >= 1024 {
        256
    } else {
        modulus_bits / 2
    };
    let factors_per_modulus = (modulus_bits / factor_bits) as usize;

    let mut used: HashSet<BigUint> = HashSet::new();
    let mut fresh_prime = |rng: &mut ChaCha20Rng, bits: u64| loop {
        let p = gen_prime(rng, bits);
        if used.insert(p.clone()) {
            return p;
        }
    };

    let planted_primes: Vec<BigUint> = group_sizes
        .iter()
        .map(|_| fresh_prime(&mut rng, factor_bits))
        .collect();

    // the first planted_total slots carry planted primes; a seeded
    // shuffle then hides the layout
    let mut slots: Vec<Option<usize>> = Vec::with_capacity(count);
    for (g, size) in group_sizes.iter().enumerate() {
        slots.extend(std::iter::repeat(Some(g)).take(*size));
    }
    slots.resize(count, None);
    for i in (1..slots.len()).rev() {
        let j = rng.gen_range(0..=i);
        slots.swap(i, j);
    }

    let mut moduli = Vec::with_capacity(count);
    let mut planted: Vec<(BigUint, Vec<usize>)> =
        planted_primes.iter().map(|p| (p.clone(), vec![])).collect();
    for (index, slot) in slots.iter().enumerate() {
        loop {
            let mut n = BigUint::one();
            let mut fillers = factors_per_modulus;
            if let Some(g) = slot {
                n *= &planted_primes[*g];
                fillers -= 1;
            }
            let filler_primes: Vec<BigUint> = (0..fillers)
                .map(|_| fresh_prime(&mut rng, factor_bits))
                .collect();
            for p in &filler_primes {
                n *= p;
            }
            if n.bits() == modulus_bits {
                if let Some(g) = slot {
                    planted[*g].1.push(index);
                }
                moduli.push(n);
                break;
            }
            // wrong width: retire these fillers and redraw
        }
    }
    PlantedCorpus { moduli, planted }
}

/// Render one synthetic server descriptor.
pub fn render_descriptor(record: &RelayRecord) -> String {
    let published = chrono::DateTime::from_timestamp(record.published, 0)
        .expect("timestamp in range")
        .format("%Y-%m-%d %H:%M:%S");
    format!(
        "@type server-descriptor 1.0\n\
         router {nick} {addr} {or_port} 0 {dir_port}\n\
         platform {platform}\n\
         published {published}\n\
         fingerprint {fp}\n\
         bandwidth 1024 2048 512\n\
         onion-key\n{onion}\
         signing-key\n{signing}\
         reject *:*\n\
         router-signature\n\
         -----BEGIN SIGNATURE-----\naaaa\n-----END SIGNATURE-----\n",
        nick = record.nickname,
        addr = record.address,
        or_port = record.or_port,
        dir_port = record.dir_port,
        platform = record.platform,
        fp = spaced_fingerprint(&record.fingerprint),
        onion = keymath::encode_public_block(&record.onion_key.to_der()),
        signing = keymath::encode_public_block(&record.identity_key.to_der()),
    )
}

fn spaced_fingerprint(fp: &str) -> String {
    fp.as_bytes()
        .chunks(4)
        .map(|c| std::str::from_utf8(c).expect("hex is ascii"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// What [`write_synthetic_archive`] planted, for asserting against scans.
#[derive(Debug, Clone)]
pub struct SyntheticArchive {
    pub records: Vec<RelayRecord>,
    /// Hex of primes shared between identity keys, with member positions.
    pub planted_factor_hex: Vec<String>,
}

/// Write a small descriptor archive with controllable anomalies.
///
/// `shared_prime_pairs` pairs of identity keys share one prime each;
/// `republished` descriptors repeat an earlier relay's keys at a later
/// publication time (same key seen twice). Keys are 512-bit to keep
/// generation fast.
pub fn write_synthetic_archive(
    dir: &Path,
    seed: u64,
    clean_relays: usize,
    shared_prime_pairs: usize,
    republished: usize,
) -> std::io::Result<SyntheticArchive> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bits = 512;
    let mut records: Vec<RelayRecord> = Vec::new();
    let mut planted_factor_hex = Vec::new();

    let make_record = |identity: RsaPublicKey, onion: RsaPublicKey, idx: usize, t: i64| {
        RelayRecord {
            fingerprint: keymath::fingerprint(&identity),
            nickname: format!("synthetic{idx}"),
            address: std::net::IpAddr::V4(std::net::Ipv4Addr::new(
                10,
                (idx / 250) as u8,
                (idx % 250) as u8 + 1,
                1,
            )),
            or_port: 9001,
            dir_port: 0,
            platform: "Tor 0.2.6.10 on Linux".to_string(),
            published: t,
            identity_key: identity,
            onion_key: onion,
        }
    };

    let base_time = 1_439_510_400; // consistent archive area
    for i in 0..clean_relays {
        let identity = gen_keypair(&mut rng, bits).public;
        let onion = gen_keypair(&mut rng, bits).public;
        records.push(make_record(identity, onion, i, base_time + i as i64 * 3600));
    }
    for pair in 0..shared_prime_pairs {
        let shared = gen_prime(&mut rng, bits / 2);
        planted_factor_hex.push(shared.to_str_radix(16));
        for half in 0..2 {
            let idx = clean_relays + pair * 2 + half;
            let other = gen_prime(&mut rng, bits / 2);
            let n = &shared * &other;
            let identity = RsaPublicKey::new(n, BigUint::from(65_537u32));
            let onion = gen_keypair(&mut rng, bits).public;
            records.push(make_record(identity, onion, idx, base_time + idx as i64 * 3600));
        }
    }
    for r in 0..republished {
        let source = records[r % records.len().max(1)].clone();
        let mut again = source.clone();
        again.published += 86_400;
        records.push(again);
    }

    std::fs::create_dir_all(dir)?;
    for (i, record) in records.iter().enumerate() {
        let path = dir.join(format!("descriptor-{i:04}.txt"));
        let mut f = std::fs::File::create(path)?;
        f.write_all(render_descriptor(record).as_bytes())?;
    }
    Ok(SyntheticArchive {
        records,
        planted_factor_hex,
    })
}

/// The ten shared-modulus relays: four groups sharing a modulus, printed
/// exponents, fingerprint prefixes, and the five hosting addresses.
pub const SHARED_MODULUS_TABLE: [(&str, &str, u64, usize); 10] = [
    ("838A296A", "188.165.164.163", 1_854_629, 0),
    ("838A305F", "188.165.26.13", 718_645, 0),
    ("838A71E2", "178.32.143.175", 220_955, 0),
    ("2249EB42", "188.165.26.13", 4_510_659, 1),
    ("2249EC78", "178.32.143.175", 1_074_365, 1),
    ("E1EFA388", "188.165.3.63", 18_177, 2),
    ("E1EF8985", "188.165.138.181", 546_019, 2),
    ("E1EF9EB8", "5.39.122.66", 73_389, 2),
    ("410BA17E", "188.165.138.181", 1_979_465, 3),
    ("410BB962", "5.39.122.66", 341_785, 3),
];

/// The shared-modulus relay table as key observations plus clustering
/// attributes, with one synthetic modulus per group.
pub fn shared_modulus_fixture(seed: u64) -> (Vec<KeyObservation>, Vec<AttributeVector>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let group_count = SHARED_MODULUS_TABLE
        .iter()
        .map(|(_, _, _, g)| *g
        )
        .max()
        .expect("table non-empty")
        + 1;
    let moduli: Vec<BigUint> = (0..group_count)
        .map(|_| gen_keypair(&mut rng, 512).public.n)
        .collect();

    let mut observations = Vec::new();
    let mut relays = Vec::new();
    for (prefix, address, exponent, group) in SHARED_MODULUS_TABLE {
        let fingerprint = format!("{prefix}{}", "0".repeat(40 - prefix.len()));
        observations.push(KeyObservation {
            key: RsaPublicKey::new(moduli[group].clone(), BigUint::from(exponent)),
            role: KeyRole::Identity,
            relay_fingerprint: fingerprint.clone(),
            first_seen: 1_407_888_000, // the month the relays appeared
            last_seen: 1_407_888_000,
        });
        relays.push(AttributeVector {
            fingerprint,
            nickname: format!("Unnamed{prefix}"),
            address: address.parse().expect("table addresses are valid"),
            or_port: 443,
            platform: "Tor 0.2.4.23 on Linux".to_string(),
            uptime_windows: vec![(1_407_888_000, 1_407_974_400)],
        });
    }
    (observations, relays)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primality_spot_checks() {
        assert!(is_probable_prime(&BigUint::from(65_537u32)));
        assert!(!is_probable_prime(&BigUint::from(65_535u32)));
        assert!(is_probable_prime(
            &BigUint::from(18_446_744_073_709_551_557u64)
        ));
        assert!(!is_probable_prime(&BigUint::from(3_215_031_751u64)));
    }

    #[test]
    fn generated_primes_have_exact_width() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for bits in [128u64, 256] {
            let p = gen_prime(&mut rng, bits);
            assert_eq!(p.bits(), bits);
        }
    }

    #[test]
    fn keypair_roundtrips() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let pair = gen_keypair(&mut rng, 512);
        assert_eq!(pair.public.bit_len(), 512);
        assert_eq!(&pair.p * &pair.q, pair.public.n);
        let m = BigUint::from(424_242u32);
        let c = m.modpow(&pair.public.e, &pair.public.n);
        assert_eq!(c.modpow(&pair.d, &pair.public.n), m);
    }

    #[test]
    fn planted_corpus_is_exactly_as_ordered() {
        let corpus = planted_corpus(3, 40, 256, &[3, 2]);
        assert_eq!(corpus.moduli.len(), 40);
        assert!(corpus.moduli.iter().all(|n| n.bits() == 256));
        assert_eq!(corpus.planted.len(), 2);
        assert_eq!(corpus.planted[0].1.len(), 3);
        assert_eq!(corpus.planted[1].1.len(), 2);
        for (prime, members) in &corpus.planted {
            for &i in members {
                assert!((&corpus.moduli[i] % prime).is_zero());
            }
        }
        // determinism
        let again = planted_corpus(3, 40, 256, &[3, 2]);
        assert_eq!(corpus.moduli, again.moduli);
    }

    #[test]
    fn synthetic_archive_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let archive = write_synthetic_archive(dir.path(), 5, 3, 1, 1).unwrap();
        assert_eq!(archive.records.len(), 6);
        assert_eq!(archive.planted_factor_hex.len(), 1);
        let (observations, summary) =
            crate::ingest::stream_keys(dir.path(), crate::ingest::RoleFilter::Both).unwrap();
        assert_eq!(summary.files_scanned, 6);
        // 5 distinct identities (the republished one dedups), 5 onions
        assert_eq!(summary.distinct_identity_keys, 5);
        assert_eq!(summary.distinct_onion_keys, 5);
        assert_eq!(observations.len(), 10);
        // republished descriptor widened its observation window
        let widened = observations
            .iter()
            .filter(|o| o.last_seen - o.first_seen >= 86_400)
            .count();
        assert_eq!(widened, 2);
    }

    #[test]
    fn shared_modulus_fixture_shape() {
        let (observations, relays) = shared_modulus_fixture(1);
        assert_eq!(observations.len(), 10);
        assert_eq!(relays.len(), 10);
        let distinct: HashSet<&BigUint> = observations.iter().map(|o| &o.key.n).collect();
        assert_eq!(distinct.len(), 4);
    }
}
