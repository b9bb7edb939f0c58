//! Shared-factor scanning across large sets of RSA moduli.
//!
//! Computing gcd(Ni, Nj) for every pair is hopeless at archive scale, so
//! the scan follows the product/remainder-tree approach: one product P of
//! all moduli, then for each Ni the remainder P mod Ni^2, from which
//! gcd(Ni, (P/Ni) mod Ni) falls out. A modulus gets a gcd above one exactly
//! when it shares a prime with some other modulus in the set, or when the
//! set contains it twice.
//!
//! The suspect subset that survives is tiny in practice, which is why the
//! follow-up work (pairwise refinement into factor groups) can afford to be
//! quadratic in the number of suspects.
//!
//! Tree arithmetic runs on GMP integers (via `rug`): at archive scale the
//! grand product is hundreds of megabits and subquadratic multiplication
//! is what keeps the scan quasilinear. The public surface speaks
//! `BigUint` like the rest of the crate; conversion happens once at the
//! module boundary. The refinement step deliberately stays on the
//! `num-bigint` side, so group extraction double-checks the tree's
//! suspects through an independent arithmetic path.

use std::collections::BTreeMap;
use std::io::BufRead;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::ingest::{KeyObservation, KeyRole};

pub(crate) fn to_gmp(n: &BigUint) -> rug::Integer {
    rug::Integer::from_digits(&n.to_bytes_be(), rug::integer::Order::Msf)
}

pub(crate) fn from_gmp(n: &rug::Integer) -> BigUint {
    BigUint::from_bytes_be(&n.to_digits::<u8>(rug::integer::Order::Msf))
}

#[derive(Debug, thiserror::Error)]
pub enum BatchGcdError {
    #[error("line {line}: not lowercase hex: {text}")]
    BadHexLine { line: usize, text: String },
    #[error("modulus at line {line} must be > 1")]
    TrivialModulus { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a modulus came from, for reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KeySource {
    pub fingerprint: Option<String>,
    pub role: Option<KeyRole>,
    /// Exponent in hex, when the source key is known.
    pub exponent: Option<String>,
}

/// An indexed set of moduli with stable indices for the scan's lifetime.
#[derive(Debug, Clone, Default)]
pub struct ModulusSet {
    moduli: Vec<BigUint>,
    sources: Vec<KeySource>,
}

impl ModulusSet {
    pub fn from_moduli(moduli: Vec<BigUint>) -> Self {
        let sources = vec![KeySource::default(); moduli.len()];
        ModulusSet { moduli, sources }
    }

    pub fn from_observations(observations: &[KeyObservation]) -> Self {
        let mut set = ModulusSet::default();
        for obs in observations {
            set.moduli.push(obs.key.n.clone());
            set.sources.push(KeySource {
                fingerprint: Some(obs.relay_fingerprint.clone()),
                role: Some(obs.role),
                exponent: Some(obs.key.e.to_str_radix(16)),
            });
        }
        set
    }

    /// Read the hex-moduli export format: lowercase hex, one per line.
    pub fn from_hex_lines<R: BufRead>(reader: R) -> Result<Self, BatchGcdError> {
        let mut moduli = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let n = BigUint::parse_bytes(text.as_bytes(), 16).ok_or_else(|| {
                BatchGcdError::BadHexLine {
                    line: idx + 1,
                    text: text.to_string(),
                }
            })?;
            if n <= BigUint::one() {
                return Err(BatchGcdError::TrivialModulus { line: idx + 1 });
            }
            moduli.push(n);
        }
        Ok(ModulusSet::from_moduli(moduli))
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    pub fn modulus(&self, index: usize) -> &BigUint {
        &self.moduli[index]
    }

    pub fn source(&self, index: usize) -> &KeySource {
        &self.sources[index]
    }

    pub fn moduli(&self) -> &[BigUint] {
        &self.moduli
    }
}

/// Keys sharing one prime factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SharedFactorGroup {
    /// The common factor (prime for two-prime moduli), hex.
    pub factor: String,
    /// Indices into the scanned [`ModulusSet`], ascending.
    pub members: Vec<usize>,
    /// True when every member belongs to one relay -- a relay sharing
    /// primes only with its own rotated keys is its own kind of finding.
    pub single_relay: bool,
}

impl SharedFactorGroup {
    pub fn factor_value(&self) -> BigUint {
        BigUint::parse_bytes(self.factor.as_bytes(), 16).expect("stored as hex")
    }
}

/// Keys with bit-identical moduli but distinct identity or exponent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SharedModulusGroup {
    pub modulus: String,
    pub members: Vec<usize>,
}

/// A key whose exponent is outside the expected set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExponentAnomaly {
    pub index: usize,
    /// Decimal rendering; grinding exponents stay small.
    pub exponent: String,
    pub role: KeyRole,
    pub fingerprint: Option<String>,
}

/// Tuning knobs for [`batch_gcd_with`].
#[derive(Debug, Clone, Copy)]
pub struct BatchGcdOptions {
    /// Moduli per product-tree chunk; bounds peak memory on huge corpora.
    pub chunk_size: usize,
}

impl Default for BatchGcdOptions {
    fn default() -> Self {
        BatchGcdOptions { chunk_size: 65_536 }
    }
}

pub const DEFAULT_CHUNK_SIZE: usize = 65_536;

/// Per-modulus gcd with the product of all the others.
///
/// Returns `(index, g)` for every modulus; `g > 1` flags index as a
/// suspect. Tree levels are processed in parallel across siblings and the
/// result does not depend on scheduling.
pub fn batch_gcd(set: &ModulusSet) -> Vec<(usize, BigUint)> {
    batch_gcd_with(set, BatchGcdOptions::default())
}

pub fn batch_gcd_with(set: &ModulusSet, options: BatchGcdOptions) -> Vec<(usize, BigUint)> {
    if set.moduli.is_empty() {
        return Vec::new();
    }
    if set.moduli.len() == 1 {
        return vec![(0, BigUint::one())];
    }
    let chunk_size = options.chunk_size.max(2);
    let moduli: Vec<rug::Integer> = set.moduli.par_iter().map(to_gmp).collect();

    // Pass 1: per-chunk products, then the grand product of the chunks.
    let chunk_products: Vec<rug::Integer> = moduli
        .par_chunks(chunk_size)
        .map(tree_product)
        .collect();
    let grand_product = tree_product(&chunk_products);

    // Pass 2: reduce the grand product into each chunk, then walk each
    // chunk's remainder tree down to squared leaves.
    let per_chunk: Vec<Vec<rug::Integer>> = moduli
        .par_chunks(chunk_size)
        .zip(chunk_products.par_iter())
        .map(|(chunk, product)| {
            let squared = rug::Integer::from(product * product);
            let top = rug::Integer::from(&grand_product % squared);
            remainder_tree(chunk, top)
        })
        .collect();

    let remainders: Vec<rug::Integer> = per_chunk.into_iter().flatten().collect();
    moduli
        .par_iter()
        .zip(remainders)
        .enumerate()
        .map(|(i, (n, r))| {
            // r = P mod n^2, and n divides P, so r/n is (P/n) mod n.
            let quotient = rug::Integer::from(&r / n);
            debug_assert!(
                rug::Integer::from(&r % n).is_zero(),
                "modulus must divide the grand product"
            );
            (i, from_gmp(&quotient.gcd(n)))
        })
        .collect()
}

fn tree_product(values: &[rug::Integer]) -> rug::Integer {
    match values.len() {
        0 => rug::Integer::from(1u8),
        1 => values[0].clone(),
        _ => {
            let mut level: Vec<rug::Integer> = values.to_vec();
            while level.len() > 1 {
                level = level
                    .par_chunks(2)
                    .map(|pair| match pair {
                        [a, b] => rug::Integer::from(a * b),
                        [a] => a.clone(),
                        _ => unreachable!(),
                    })
                    .collect();
            }
            level.pop().expect("non-empty")
        }
    }
}

/// Walk `top = P mod (prod leaves)^2` down to `P mod leaf^2` per leaf.
fn remainder_tree(leaves: &[rug::Integer], top: rug::Integer) -> Vec<rug::Integer> {
    // Build the product tree bottom-up, keeping every level.
    let mut levels: Vec<Vec<rug::Integer>> = vec![leaves.to_vec()];
    while levels.last().expect("non-empty").len() > 1 {
        let next: Vec<rug::Integer> = levels
            .last()
            .expect("non-empty")
            .par_chunks(2)
            .map(|pair| match pair {
                [a, b] => rug::Integer::from(a * b),
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
        levels.push(next);
    }

    let mut rems = vec![top];
    for level in levels.iter().rev().skip(1) {
        rems = level
            .par_iter()
            .enumerate()
            .map(|(i, node)| {
                let squared = rug::Integer::from(node * node);
                rug::Integer::from(&rems[i / 2] % squared)
            })
            .collect();
    }
    rems
}

/// Resolve suspect gcds into factor groups.
///
/// A suspect's g can be composite when it shares different primes with
/// different partners, so candidate factors are taken from pairwise gcds
/// within the suspect subset and refined into a pairwise-coprime basis.
/// Membership is then established by direct divisibility, which doubles as
/// the soundness check: a factor is only ever reported for moduli it
/// divides. Identical moduli are skipped here; those are shared-modulus
/// findings, not shared factors.
pub fn extract_groups(set: &ModulusSet, gcds: &[(usize, BigUint)]) -> Vec<SharedFactorGroup> {
    let one = BigUint::one();
    let suspects: Vec<usize> = gcds
        .iter()
        .filter(|(_, g)| *g > one)
        .map(|(i, _)| *i)
        .collect();

    let mut candidates: Vec<BigUint> = Vec::new();
    for (a_pos, &a) in suspects.iter().enumerate() {
        for &b in &suspects[a_pos + 1..] {
            let (na, nb) = (&set.moduli[a], &set.moduli[b]);
            if na == nb {
                continue;
            }
            let d = na.gcd(nb);
            if d > one {
                candidates.push(d);
            }
        }
    }

    let mut groups: Vec<SharedFactorGroup> = coprime_basis(candidates)
        .into_iter()
        .filter_map(|factor| {
            let members: Vec<usize> = suspects
                .iter()
                .copied()
                .filter(|&i| (&set.moduli[i] % &factor).is_zero())
                .collect();
            if members.len() < 2 {
                return None;
            }
            let mut fingerprints = members
                .iter()
                .map(|&i| set.sources[i].fingerprint.as_deref());
            let first = fingerprints.next().expect("at least two members");
            let single_relay = first.is_some() && fingerprints.all(|fp| fp == first);
            Some(SharedFactorGroup {
                factor: factor.to_str_radix(16),
                members,
                single_relay,
            })
        })
        .collect();
    groups.sort_by(|a, b| a.factor_value().cmp(&b.factor_value()));
    groups
}

/// Reduce candidate factors to a pairwise-coprime basis.
fn coprime_basis(candidates: Vec<BigUint>) -> Vec<BigUint> {
    let one = BigUint::one();
    let mut basis: Vec<BigUint> = Vec::new();
    let mut work: Vec<BigUint> = candidates;
    work.sort();
    work.dedup();

    'next: while let Some(d) = work.pop() {
        if d <= one {
            continue;
        }
        for i in 0..basis.len() {
            let g = d.gcd(&basis[i]);
            if g.is_one() {
                continue;
            }
            if g == d && g == basis[i] {
                continue 'next; // already in the basis
            }
            // split: replace the clashing element by its coprime parts
            let b = basis.swap_remove(i);
            work.push(g.clone());
            let b_rest = strip_factor(b, &g);
            if b_rest > one {
                work.push(b_rest);
            }
            let d_rest = strip_factor(d, &g);
            if d_rest > one {
                work.push(d_rest);
            }
            continue 'next;
        }
        basis.push(d);
    }
    basis
}

fn strip_factor(mut value: BigUint, factor: &BigUint) -> BigUint {
    loop {
        let (q, r) = value.div_rem(factor);
        if !r.is_zero() {
            return value;
        }
        value = q;
    }
}

/// Group keys that share a modulus outright.
///
/// Two entries count as the same key when fingerprint and exponent agree
/// (the same key republished over time is not a finding); anything else
/// sharing N means the holders can compute each other's private exponents.
pub fn find_shared_moduli(set: &ModulusSet) -> Vec<SharedModulusGroup> {
    let mut by_modulus: BTreeMap<&BigUint, Vec<usize>> = BTreeMap::new();
    for (i, n) in set.moduli.iter().enumerate() {
        by_modulus.entry(n).or_default().push(i);
    }

    let mut groups = Vec::new();
    for (n, indices) in by_modulus {
        if indices.len() < 2 {
            continue;
        }
        let mut distinct: Vec<usize> = Vec::new();
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for &i in &indices {
            let src = &set.sources[i];
            // entries without provenance cannot be proven to be the same
            // key republished, so they stay distinct
            match (src.fingerprint.as_deref(), src.exponent.as_deref()) {
                (Some(fp), Some(e)) => {
                    if seen.contains(&(fp, e)) {
                        continue;
                    }
                    seen.push((fp, e));
                    distinct.push(i);
                }
                _ => distinct.push(i),
            }
        }
        if distinct.len() >= 2 {
            groups.push(SharedModulusGroup {
                modulus: n.to_str_radix(16),
                members: distinct,
            });
        }
    }
    groups
}

pub const STANDARD_EXPONENT: u32 = 65_537;

/// Flag keys whose exponent is outside the whitelist (default: 65537).
pub fn find_exponent_anomalies(
    observations: &[KeyObservation],
    whitelist: &[BigUint],
) -> Vec<ExponentAnomaly> {
    observations
        .iter()
        .enumerate()
        .filter(|(_, obs)| !whitelist.contains(&obs.key.e))
        .map(|(index, obs)| ExponentAnomaly {
            index,
            exponent: obs.key.e.to_str_radix(10),
            role: obs.role,
            fingerprint: Some(obs.relay_fingerprint.clone()),
        })
        .collect()
}

pub fn standard_whitelist() -> Vec<BigUint> {
    vec![BigUint::from(STANDARD_EXPONENT)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keymath::RsaPublicKey;

    fn set_of(values: &[u64]) -> ModulusSet {
        ModulusSet::from_moduli(values.iter().map(|v| BigUint::from(*v)).collect())
    }

    /// Naive O(n^2) oracle: every pairwise shared factor.
    fn naive_pairs(moduli: &[BigUint]) -> Vec<(usize, usize, BigUint)> {
        let one = BigUint::one();
        let mut out = Vec::new();
        for i in 0..moduli.len() {
            for j in i + 1..moduli.len() {
                if moduli[i] == moduli[j] {
                    continue;
                }
                let g = moduli[i].gcd(&moduli[j]);
                if g > one {
                    out.push((i, j, g));
                }
            }
        }
        out
    }

    #[test]
    fn textbook_trio() {
        // 143=11*13, 187=11*17, 221=13*17: every modulus is a suspect
        let set = set_of(&[143, 187, 221]);
        let gcds = batch_gcd(&set);
        assert!(gcds.iter().all(|(_, g)| *g > BigUint::one()));
        let groups = extract_groups(&set, &gcds);
        let as_pairs: Vec<(BigUint, Vec<usize>)> = groups
            .iter()
            .map(|g| (g.factor_value(), g.members.clone()))
            .collect();
        assert_eq!(
            as_pairs,
            vec![
                (BigUint::from(11u32), vec![0, 1]),
                (BigUint::from(13u32), vec![0, 2]),
                (BigUint::from(17u32), vec![1, 2]),
            ]
        );
    }

    #[test]
    fn coprime_set_is_clean() {
        let set = set_of(&[15, 77]);
        let gcds = batch_gcd(&set);
        assert!(gcds.iter().all(|(_, g)| g.is_one()));
        assert!(extract_groups(&set, &gcds).is_empty());
    }

    #[test]
    fn duplicates_route_to_shared_moduli() {
        let set = set_of(&[221, 221]);
        let gcds = batch_gcd(&set);
        assert!(gcds.iter().all(|(_, g)| *g > BigUint::one()));
        assert!(extract_groups(&set, &gcds).is_empty());
        let dupes = find_shared_moduli(&set);
        assert_eq!(dupes.len(), 1);
        assert_eq!(dupes[0].members, vec![0, 1]);
    }

    #[test]
    fn matches_naive_oracle_on_small_sets() {
        // mixed primes so that some moduli share factors
        let primes = [11u64, 13, 17, 19, 23, 29, 31, 37];
        let mut moduli = Vec::new();
        for i in 0..primes.len() {
            for j in (i + 1)..primes.len() {
                if (i + j) % 3 == 0 {
                    moduli.push(BigUint::from(primes[i] * primes[j]));
                }
            }
        }
        let set = ModulusSet::from_moduli(moduli.clone());
        let gcds = batch_gcd(&set);
        let groups = extract_groups(&set, &gcds);

        let mut from_tree: Vec<(usize, usize, BigUint)> = Vec::new();
        for g in &groups {
            let f = g.factor_value();
            for (a_pos, &a) in g.members.iter().enumerate() {
                for &b in &g.members[a_pos + 1..] {
                    from_tree.push((a, b, f.clone()));
                }
            }
        }
        from_tree.sort();
        let mut expected = naive_pairs(&moduli);
        expected.sort();
        assert_eq!(from_tree, expected);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let set = set_of(&[143, 187, 221, 15, 35, 77, 221 * 2 + 1, 899, 901, 907]);
        let whole = batch_gcd_with(&set, BatchGcdOptions { chunk_size: 64 });
        let chunked = batch_gcd_with(&set, BatchGcdOptions { chunk_size: 2 });
        assert_eq!(whole, chunked);
    }

    #[test]
    fn single_and_empty_inputs() {
        assert!(batch_gcd(&set_of(&[])).is_empty());
        let one = batch_gcd(&set_of(&[143]));
        assert_eq!(one, vec![(0, BigUint::one())]);
    }

    #[test]
    fn self_sharing_relay_is_marked() {
        // one relay with two rotated keys sharing a prime
        let obs = |n: u64, fp: &str| KeyObservation {
            key: RsaPublicKey::new(BigUint::from(n), BigUint::from(65537u32)),
            role: KeyRole::Identity,
            relay_fingerprint: fp.to_string(),
            first_seen: 0,
            last_seen: 0,
        };
        let observations = vec![obs(143, "AAAA"), obs(187, "AAAA"), obs(35, "BBBB")];
        let set = ModulusSet::from_observations(&observations);
        let groups = extract_groups(&set, &batch_gcd(&set));
        assert_eq!(groups.len(), 1);
        assert!(groups[0].single_relay);
        assert_eq!(groups[0].members, vec![0, 1]);
    }

    #[test]
    fn shared_modulus_distinctness_rules() {
        let obs = |n: u64, e: u64, fp: &str| KeyObservation {
            key: RsaPublicKey::new(BigUint::from(n), BigUint::from(e)),
            role: KeyRole::Identity,
            relay_fingerprint: fp.to_string(),
            first_seen: 0,
            last_seen: 0,
        };
        // same key republished: not a finding
        let set = ModulusSet::from_observations(&[obs(3233, 17, "AAAA"), obs(3233, 17, "AAAA")]);
        assert!(find_shared_moduli(&set).is_empty());
        // same N, different exponents: a finding
        let set = ModulusSet::from_observations(&[obs(3233, 17, "AAAA"), obs(3233, 7, "BBBB")]);
        assert_eq!(find_shared_moduli(&set).len(), 1);
    }

    #[test]
    fn exponent_anomalies_flag_non_standard() {
        let obs = |e: u64, role: KeyRole| KeyObservation {
            key: RsaPublicKey::new(BigUint::from(3233u32), BigUint::from(e)),
            role,
            relay_fingerprint: "CCCC".to_string(),
            first_seen: 0,
            last_seen: 0,
        };
        let observations = vec![
            obs(1_854_629, KeyRole::Identity),
            obs(65_537, KeyRole::Identity),
            obs(3, KeyRole::Onion),
        ];
        let anomalies = find_exponent_anomalies(&observations, &standard_whitelist());
        assert_eq!(anomalies.len(), 2);
        assert_eq!(anomalies[0].exponent, "1854629");
        assert_eq!(anomalies[1].role, KeyRole::Onion);
    }

    #[test]
    fn hex_lines_round_trip() {
        let input = "8f\na3\n\nff01\n";
        let set = ModulusSet::from_hex_lines(std::io::Cursor::new(input)).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.modulus(2), &BigUint::from(0xff01u32));
        assert!(ModulusSet::from_hex_lines(std::io::Cursor::new("zz\n")).is_err());
        assert!(ModulusSet::from_hex_lines(std::io::Cursor::new("1\n")).is_err());
    }
}
