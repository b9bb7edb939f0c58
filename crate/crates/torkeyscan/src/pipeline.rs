//! End-to-end scan orchestration behind the command surface.
//!
//! The binary stays a thin argument parser; these functions do the actual
//! wiring of ingest -> scans -> reports and are what integration tests
//! drive directly.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use chrono::{NaiveDate, Timelike};

use crate::batchgcd::{self, BatchGcdOptions, ModulusSet};
use crate::cluster::{self, AttributeVector, ClusterRule};
use crate::config::ScanConfig;
use crate::hashring::{
    self, collision_probability_note, DescriptorIdParams, HashRingError, OnionService,
    RingSnapshot, Suspect, TimePeriodRule,
};
use crate::ingest::{self, RoleFilter};
use crate::report::{summarize_services, AnomalyReport, CollisionReport, ReportMeta};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    BatchGcd(#[from] batchgcd::BatchGcdError),
    #[error(transparent)]
    HashRing(#[from] HashRingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    BadInput(String),
}

fn exponent_whitelist(config: &ScanConfig) -> Vec<num_bigint::BigUint> {
    config
        .exponent_whitelist
        .iter()
        .map(|&e| num_bigint::BigUint::from(e))
        .collect()
}

/// Run the full key scan over an archive: ingest, batch GCD, shared
/// moduli, exponent anomalies, and clustering of the flagged relays.
pub fn scan_keys(config: &ScanConfig) -> Result<AnomalyReport, PipelineError> {
    config.validate()?;
    let archive = config
        .archive
        .as_ref()
        .ok_or_else(|| PipelineError::BadInput("scan-keys needs an archive path".into()))?;
    let scan = ingest::scan_archive(archive, RoleFilter::Both)?;
    let set = ModulusSet::from_observations(&scan.observations);

    let gcds = batchgcd::batch_gcd_with(
        &set,
        BatchGcdOptions {
            chunk_size: config.chunk_size,
        },
    );
    let factor_groups = batchgcd::extract_groups(&set, &gcds);
    let modulus_groups = batchgcd::find_shared_moduli(&set);
    let anomalies = batchgcd::find_exponent_anomalies(&scan.observations, &exponent_whitelist(config));

    // cluster only the relays that appear in some finding
    let mut flagged: Vec<&str> = Vec::new();
    for group in &factor_groups {
        flagged.extend(group.members.iter().filter_map(|&i| {
            set.source(i).fingerprint.as_deref()
        }));
    }
    for group in &modulus_groups {
        flagged.extend(group.members.iter().filter_map(|&i| {
            set.source(i).fingerprint.as_deref()
        }));
    }
    flagged.extend(anomalies.iter().filter_map(|a| a.fingerprint.as_deref()));
    flagged.sort_unstable();
    flagged.dedup();

    let vectors: Vec<AttributeVector> = scan
        .relays
        .iter()
        .filter(|r| flagged.binary_search(&r.fingerprint.as_str()).is_ok())
        .map(|r| AttributeVector {
            fingerprint: r.fingerprint.clone(),
            nickname: r.nickname.clone(),
            address: r.address,
            or_port: r.or_port,
            platform: r.platform.clone(),
            uptime_windows: vec![(r.first_published, r.last_published)],
        })
        .collect();
    let clusters = cluster::cluster_relays(&vectors, &ClusterRule::default_set());

    Ok(AnomalyReport::build(
        ReportMeta::new(config.clone()),
        scan.summary,
        &set,
        &factor_groups,
        &modulus_groups,
        &anomalies,
        clusters,
    ))
}

/// Key scan over a plain hex-moduli file instead of an archive.
pub fn scan_moduli_file(config: &ScanConfig, path: &Path) -> Result<AnomalyReport, PipelineError> {
    config.validate()?;
    let file = std::fs::File::open(path)?;
    let set = ModulusSet::from_hex_lines(std::io::BufReader::new(file))?;
    let gcds = batchgcd::batch_gcd_with(
        &set,
        BatchGcdOptions {
            chunk_size: config.chunk_size,
        },
    );
    let factor_groups = batchgcd::extract_groups(&set, &gcds);
    let modulus_groups = batchgcd::find_shared_moduli(&set);
    Ok(AnomalyReport::build(
        ReportMeta::new(config.clone()),
        Default::default(),
        &set,
        &factor_groups,
        &modulus_groups,
        &[],
        Vec::new(),
    ))
}

/// Outcome of parsing a line-oriented input file with a partial-failure
/// contract: invalid lines are skipped with a warning.
pub struct ParsedLines<T> {
    pub values: Vec<T>,
    pub skipped: usize,
}

pub fn read_services(path: &Path) -> Result<ParsedLines<OnionService>, PipelineError> {
    let file = std::fs::File::open(path)?;
    let mut values = Vec::new();
    let mut skipped = 0usize;
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        match OnionService::from_address(text) {
            Ok(service) => values.push(service),
            Err(err) => {
                skipped += 1;
                log::warn!("services line {}: {err}", idx + 1);
            }
        }
    }
    Ok(ParsedLines { values, skipped })
}

pub fn read_suspects(path: &Path) -> Result<ParsedLines<Suspect>, PipelineError> {
    let file = std::fs::File::open(path)?;
    let mut values = Vec::new();
    let mut skipped = 0usize;
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        match Suspect::parse(text) {
            Ok(suspect) => values.push(suspect),
            Err(err) => {
                skipped += 1;
                log::warn!("suspects line {}: {err}", idx + 1);
            }
        }
    }
    Ok(ParsedLines { values, skipped })
}

/// Load per-day ring snapshots from a directory of consensus documents.
///
/// One snapshot per day is kept: the consensus whose valid-after hour
/// matches `ring_hour` (default 0, the midnight consensus).
pub fn load_rings(
    consensus_dir: &Path,
    ring_hour: u32,
) -> Result<BTreeMap<NaiveDate, RingSnapshot>, PipelineError> {
    let files = ingest::collect_files(consensus_dir)?;
    let mut rings = BTreeMap::new();
    for path in files {
        let docs = match ingest::read_documents(&path) {
            Ok(docs) => docs,
            Err(err) => {
                log::warn!("skipping unreadable consensus file {}: {err}", path.display());
                continue;
            }
        };
        for doc in docs {
            let snapshot = match ingest::parse_consensus(&doc.text) {
                Ok(s) => s,
                Err(err) => {
                    log::warn!("{}: {err}", doc.name);
                    continue;
                }
            };
            let when = chrono::DateTime::from_timestamp(snapshot.valid_after, 0)
                .ok_or_else(|| PipelineError::BadInput("consensus timestamp out of range".into()))?;
            if when.time().hour() != ring_hour {
                continue;
            }
            let ring = RingSnapshot::from_consensus(&snapshot)?;
            rings.entry(when.date_naive()).or_insert(ring);
        }
    }
    Ok(rings)
}

/// The descriptor-id knobs a config implies.
pub fn descriptor_params(config: &ScanConfig) -> DescriptorIdParams {
    DescriptorIdParams {
        rule: if config.naive_days {
            TimePeriodRule::NaiveDays
        } else {
            TimePeriodRule::Deployed
        },
        lead_periods: config.lead_periods,
        cookie: None,
    }
}

/// Run the collision scan over services x suspects x dates.
pub fn itos(
    config: &ScanConfig,
    services: &[OnionService],
    suspects: &[Suspect],
    rings: &BTreeMap<NaiveDate, RingSnapshot>,
) -> Result<CollisionReport, PipelineError> {
    config.validate()?;
    let dates = config.dates();
    if dates.is_empty() {
        return Err(PipelineError::BadInput(
            "itos needs --from and --to dates".into(),
        ));
    }
    let params = descriptor_params(config);
    let events = hashring::scan_collisions(
        services,
        suspects,
        &dates,
        rings,
        &params,
        config.threshold,
    );
    let per_service = summarize_services(&events);
    let mean_ring = if rings.is_empty() {
        3000 // typical ring size when no consensus data is supplied
    } else {
        rings.values().map(|r| r.len()).sum::<usize>() / rings.len()
    };
    Ok(CollisionReport {
        meta: ReportMeta::new(config.clone()),
        per_service,
        events,
        expected_chance_collisions: collision_probability_note(
            config.threshold as u32,
            mean_ring,
            dates.len(),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn scan_keys_finds_planted_archive_anomalies() {
        let dir = tempfile::tempdir().unwrap();
        let archive =
            fixtures::write_synthetic_archive(dir.path(), 99, 4, 2, 0).unwrap();
        let config = ScanConfig {
            archive: Some(dir.path().to_path_buf()),
            ..ScanConfig::default()
        };
        let report = scan_keys(&config).unwrap();
        assert_eq!(report.shared_factor_groups.len(), 2);
        let found: Vec<&str> = report
            .shared_factor_groups
            .iter()
            .map(|g| g.factor.as_str())
            .collect();
        for planted in &archive.planted_factor_hex {
            assert!(found.contains(&planted.as_str()));
        }
        assert!(report.has_findings());
        // every factor group of a planted pair is two relays
        for group in &report.shared_factor_groups {
            assert_eq!(group.members.len(), 2);
        }
    }

    #[test]
    fn scan_keys_clean_archive_is_quiet() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_synthetic_archive(dir.path(), 17, 5, 0, 0).unwrap();
        let config = ScanConfig {
            archive: Some(dir.path().to_path_buf()),
            ..ScanConfig::default()
        };
        let report = scan_keys(&config).unwrap();
        assert!(!report.has_findings());
    }

    #[test]
    fn missing_archive_is_an_error() {
        let config = ScanConfig {
            archive: Some("/no/such/path".into()),
            ..ScanConfig::default()
        };
        assert!(scan_keys(&config).is_err());
    }

    #[test]
    fn reports_are_byte_identical_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_synthetic_archive(dir.path(), 7, 3, 1, 1).unwrap();
        let config = ScanConfig {
            archive: Some(dir.path().to_path_buf()),
            ..ScanConfig::default()
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| scan_keys(&config).unwrap().to_json());
        let several = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| scan_keys(&config).unwrap().to_json());
        assert_eq!(single, several);
    }
}
