//! Parsing of archived relay documents into normalized records.
//!
//! Input is the CollecTor on-disk layout: server descriptors and v3
//! network-status consensuses, possibly gzip- or tar-packed. Output is a
//! deduplicated stream of key observations plus the hex-moduli export the
//! GCD stage consumes.
//!
//! Formats evolved over the 2005-2016 archive span, so unknown lines are
//! skipped rather than rejected; only the absence of a mandatory item makes
//! a document malformed.

mod archive;
mod consensus;
mod descriptor;

pub use archive::{collect_files, read_documents};
pub use consensus::{parse_consensus, ConsensusEntry, ConsensusSnapshot, Flag};
pub use descriptor::{parse_server_descriptor, split_descriptors, RelayRecord};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::keymath::{KeyMathError, RsaPublicKey};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
    #[error("bad key encoding: {0}")]
    BadKeyEncoding(#[from] KeyMathError),
    #[error("malformed consensus: {0}")]
    MalformedConsensus(String),
    #[error("unreadable archive root {path}: {source}")]
    UnreadableRoot {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which descriptor field a key came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRole {
    Identity,
    Onion,
}

impl std::fmt::Display for KeyRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeyRole::Identity => write!(f, "identity"),
            KeyRole::Onion => write!(f, "onion"),
        }
    }
}

/// Filter for [`stream_keys`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoleFilter {
    Identity,
    Onion,
    #[default]
    Both,
}

impl RoleFilter {
    fn admits(self, role: KeyRole) -> bool {
        matches!(
            (self, role),
            (RoleFilter::Both, _)
                | (RoleFilter::Identity, KeyRole::Identity)
                | (RoleFilter::Onion, KeyRole::Onion)
        )
    }
}

/// One distinct key as observed in the archive, with its time range.
///
/// Identity is the tuple (role, N, e, relay fingerprint); observing the
/// same key again only widens `first_seen..last_seen`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyObservation {
    #[serde(with = "serde_key")]
    pub key: RsaPublicKey,
    pub role: KeyRole,
    pub relay_fingerprint: String,
    /// Earliest `published` timestamp, UTC epoch seconds.
    pub first_seen: i64,
    /// Latest `published` timestamp, UTC epoch seconds.
    pub last_seen: i64,
}

mod serde_key {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Hex {
        n: String,
        e: String,
    }

    pub fn serialize<S: Serializer>(key: &RsaPublicKey, s: S) -> Result<S::Ok, S::Error> {
        Hex {
            n: key.n.to_str_radix(16),
            e: key.e.to_str_radix(16),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RsaPublicKey, D::Error> {
        let h = Hex::deserialize(d)?;
        let parse = |s: &String, what| {
            BigUint::parse_bytes(s.as_bytes(), 16)
                .ok_or_else(|| serde::de::Error::custom(format!("bad hex in {what}")))
        };
        Ok(RsaPublicKey::new(parse(&h.n, "n")?, parse(&h.e, "e")?))
    }
}

/// Summary counters for a [`stream_keys`] pass.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StreamSummary {
    pub files_scanned: usize,
    pub files_skipped: usize,
    pub descriptors_parsed: usize,
    pub descriptors_rejected: usize,
    /// Distinct (N, e) pairs per role, the way the archive totals count keys.
    pub distinct_identity_keys: usize,
    pub distinct_onion_keys: usize,
}

/// Per-relay attributes accumulated over the archive, for clustering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelayAttributes {
    pub fingerprint: String,
    pub nickname: String,
    pub address: std::net::IpAddr,
    pub or_port: u16,
    pub platform: String,
    /// Publication range seen in descriptors; a coarse uptime proxy when
    /// no consensus history is at hand.
    pub first_published: i64,
    pub last_published: i64,
}

/// Everything one archive walk produces.
pub struct ArchiveScan {
    pub observations: Vec<KeyObservation>,
    pub relays: Vec<RelayAttributes>,
    pub summary: StreamSummary,
}

/// Walk an archive tree and return every distinct key observation.
///
/// Files parse in parallel; the per-file results merge through an
/// associative union so the outcome is independent of file order and
/// worker count. Unreadable or unparsable files are skipped and counted;
/// only an unreadable root aborts the scan.
pub fn stream_keys(
    archive_path: &Path,
    filter: RoleFilter,
) -> Result<(Vec<KeyObservation>, StreamSummary), IngestError> {
    let scan = scan_archive(archive_path, filter)?;
    Ok((scan.observations, scan.summary))
}

/// [`stream_keys`] plus per-relay attributes from the same walk.
pub fn scan_archive(archive_path: &Path, filter: RoleFilter) -> Result<ArchiveScan, IngestError> {
    let files = collect_files(archive_path)?;
    let per_file: Vec<_> = files
        .par_iter()
        .map(|path| {
            let mut map = ObservationMap::new();
            let mut attrs = AttributeMap::new();
            let mut parsed = 0usize;
            let mut rejected = 0usize;
            match read_documents(path) {
                Ok(docs) => {
                    for doc in &docs {
                        for desc in split_descriptors(&doc.text) {
                            match parse_server_descriptor(desc) {
                                Ok(record) => {
                                    parsed += 1;
                                    record_observations(&mut map, &record, filter);
                                    record_attributes(&mut attrs, &record);
                                }
                                Err(err) => {
                                    rejected += 1;
                                    log::debug!("{}: skipping descriptor: {err}", doc.name);
                                }
                            }
                        }
                    }
                    (map, attrs, parsed, rejected, false)
                }
                Err(err) => {
                    log::warn!("skipping unreadable file {}: {err}", path.display());
                    (map, attrs, 0, 0, true)
                }
            }
        })
        .collect();

    let mut merged = ObservationMap::new();
    let mut merged_attrs = AttributeMap::new();
    let mut summary = StreamSummary::default();
    for (map, attrs, parsed, rejected, skipped) in per_file {
        summary.files_scanned += 1;
        summary.descriptors_parsed += parsed;
        summary.descriptors_rejected += rejected;
        if skipped {
            summary.files_skipped += 1;
        }
        merge_observations(&mut merged, map);
        merge_attributes(&mut merged_attrs, attrs);
    }

    let observations: Vec<KeyObservation> = merged.into_values().collect();
    let mut identity = std::collections::BTreeSet::new();
    let mut onion = std::collections::BTreeSet::new();
    for obs in &observations {
        match obs.role {
            KeyRole::Identity => identity.insert((&obs.key.n, &obs.key.e)),
            KeyRole::Onion => onion.insert((&obs.key.n, &obs.key.e)),
        };
    }
    summary.distinct_identity_keys = identity.len();
    summary.distinct_onion_keys = onion.len();
    Ok(ArchiveScan {
        observations,
        relays: merged_attrs.into_values().collect(),
        summary,
    })
}

type AttributeMap = BTreeMap<String, RelayAttributes>;

fn record_attributes(map: &mut AttributeMap, record: &RelayRecord) {
    map.entry(record.fingerprint.clone())
        .and_modify(|attrs| {
            if record.published >= attrs.last_published {
                attrs.nickname = record.nickname.clone();
                attrs.address = record.address;
                attrs.or_port = record.or_port;
                attrs.platform = record.platform.clone();
            }
            attrs.first_published = attrs.first_published.min(record.published);
            attrs.last_published = attrs.last_published.max(record.published);
        })
        .or_insert_with(|| RelayAttributes {
            fingerprint: record.fingerprint.clone(),
            nickname: record.nickname.clone(),
            address: record.address,
            or_port: record.or_port,
            platform: record.platform.clone(),
            first_published: record.published,
            last_published: record.published,
        });
}

fn merge_attributes(into: &mut AttributeMap, from: AttributeMap) {
    for (fp, attrs) in from {
        match into.entry(fp) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(attrs);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let current = o.get_mut();
                if attrs.last_published >= current.last_published {
                    current.nickname = attrs.nickname;
                    current.address = attrs.address;
                    current.or_port = attrs.or_port;
                    current.platform = attrs.platform;
                }
                current.first_published = current.first_published.min(attrs.first_published);
                current.last_published = current.last_published.max(attrs.last_published);
            }
        }
    }
}

type ObservationKey = (KeyRole, BigUint, BigUint, String);
type ObservationMap = BTreeMap<ObservationKey, KeyObservation>;

fn record_observations(map: &mut ObservationMap, record: &RelayRecord, filter: RoleFilter) {
    let mut add = |key: &RsaPublicKey, role: KeyRole| {
        if !filter.admits(role) {
            return;
        }
        let map_key = (
            role,
            key.n.clone(),
            key.e.clone(),
            record.fingerprint.clone(),
        );
        map.entry(map_key)
            .and_modify(|obs| {
                obs.first_seen = obs.first_seen.min(record.published);
                obs.last_seen = obs.last_seen.max(record.published);
            })
            .or_insert_with(|| KeyObservation {
                key: key.clone(),
                role,
                relay_fingerprint: record.fingerprint.clone(),
                first_seen: record.published,
                last_seen: record.published,
            });
    };
    add(&record.identity_key, KeyRole::Identity);
    add(&record.onion_key, KeyRole::Onion);
}

fn merge_observations(into: &mut ObservationMap, from: ObservationMap) {
    for (k, v) in from {
        into.entry(k)
            .and_modify(|obs| {
                obs.first_seen = obs.first_seen.min(v.first_seen);
                obs.last_seen = obs.last_seen.max(v.last_seen);
            })
            .or_insert(v);
    }
}

/// Hex-moduli export for the GCD stage: lowercase, no prefix, one per line.
pub fn write_moduli_hex<W: Write>(observations: &[KeyObservation], mut w: W) -> std::io::Result<()> {
    for obs in observations {
        writeln!(w, "{}", obs.key.n.to_str_radix(16))?;
    }
    Ok(())
}

/// Newline-delimited JSON export of key observations.
pub fn write_observations_jsonl<W: Write>(
    observations: &[KeyObservation],
    mut w: W,
) -> std::io::Result<()> {
    for obs in observations {
        serde_json::to_writer(&mut w, obs)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Parse an epoch-seconds timestamp out of `YYYY-MM-DD HH:MM:SS`.
pub(crate) fn parse_timestamp(s: &str) -> Option<i64> {
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}
