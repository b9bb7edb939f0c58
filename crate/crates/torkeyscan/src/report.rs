//! Report assembly: consolidated JSON findings with provenance.
//!
//! Reports are deterministic: identical config and inputs produce
//! byte-identical output regardless of worker count, so they diff cleanly
//! across runs and re-runs.

use chrono::NaiveDate;
use serde::Serialize;

use crate::batchgcd::{
    ExponentAnomaly, ModulusSet, SharedFactorGroup, SharedModulusGroup,
};
use crate::cluster::Cluster;
use crate::config::ScanConfig;
use crate::hashring::CollisionEvent;
use crate::ingest::{KeyRole, StreamSummary};

pub const SCHEMA_VERSION: u32 = 1;

/// Provenance header embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub config: ScanConfig,
}

impl ReportMeta {
    pub fn new(config: ScanConfig) -> Self {
        ReportMeta {
            schema_version: SCHEMA_VERSION,
            tool: "torkeyscan",
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
        }
    }
}

/// One key as it appears in a finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyRef {
    pub fingerprint: Option<String>,
    pub role: Option<KeyRole>,
    /// Modulus, lowercase hex.
    pub modulus: String,
    /// Exponent, lowercase hex.
    pub exponent: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SharedFactorFinding {
    /// The shared factor, lowercase hex.
    pub factor: String,
    pub single_relay: bool,
    pub members: Vec<KeyRef>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SharedModulusFinding {
    pub modulus: String,
    pub members: Vec<KeyRef>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentFinding {
    /// Decimal, the way exponent tables are usually printed.
    pub exponent: String,
    pub role: KeyRole,
    pub fingerprint: Option<String>,
    pub modulus: String,
}

/// The consolidated output of a key scan.
#[derive(Debug, Clone, Serialize)]
pub struct AnomalyReport {
    pub meta: ReportMeta,
    pub summary: ScanSummary,
    pub shared_factor_groups: Vec<SharedFactorFinding>,
    pub shared_moduli_groups: Vec<SharedModulusFinding>,
    pub exponent_anomalies: Vec<ExponentFinding>,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScanSummary {
    #[serde(flatten)]
    pub stream: StreamSummary,
    pub shared_factor_groups: usize,
    pub shared_moduli_groups: usize,
    pub exponent_anomalies: usize,
    pub keys_in_shared_factor_groups: usize,
}

impl AnomalyReport {
    pub fn build(
        meta: ReportMeta,
        stream: StreamSummary,
        set: &ModulusSet,
        factor_groups: &[SharedFactorGroup],
        modulus_groups: &[SharedModulusGroup],
        anomalies: &[ExponentAnomaly],
        clusters: Vec<Cluster>,
    ) -> Self {
        let key_ref = |index: usize| -> KeyRef {
            let source = set.source(index);
            KeyRef {
                fingerprint: source.fingerprint.clone(),
                role: source.role,
                modulus: set.modulus(index).to_str_radix(16),
                exponent: source.exponent.clone(),
            }
        };

        let mut shared_factor_groups: Vec<SharedFactorFinding> = factor_groups
            .iter()
            .map(|g| {
                let mut members: Vec<KeyRef> = g.members.iter().map(|&i| key_ref(i)).collect();
                members.sort_by(|a, b| {
                    (&a.fingerprint, &a.modulus, &a.exponent).cmp(&(
                        &b.fingerprint,
                        &b.modulus,
                        &b.exponent,
                    ))
                });
                SharedFactorFinding {
                    factor: g.factor.clone(),
                    single_relay: g.single_relay,
                    members,
                }
            })
            .collect();
        shared_factor_groups.sort_by(|a, b| (a.factor.len(), &a.factor).cmp(&(b.factor.len(), &b.factor)));

        let mut shared_moduli_groups: Vec<SharedModulusFinding> = modulus_groups
            .iter()
            .map(|g| {
                let mut members: Vec<KeyRef> = g.members.iter().map(|&i| key_ref(i)).collect();
                members.sort_by(|a, b| {
                    (&a.fingerprint, &a.exponent).cmp(&(&b.fingerprint, &b.exponent))
                });
                SharedModulusFinding {
                    modulus: g.modulus.clone(),
                    members,
                }
            })
            .collect();
        shared_moduli_groups.sort_by(|a, b| (a.modulus.len(), &a.modulus).cmp(&(b.modulus.len(), &b.modulus)));

        let mut exponent_anomalies: Vec<ExponentFinding> = anomalies
            .iter()
            .map(|a| ExponentFinding {
                exponent: a.exponent.clone(),
                role: a.role,
                fingerprint: a.fingerprint.clone(),
                modulus: set.modulus(a.index).to_str_radix(16),
            })
            .collect();
        exponent_anomalies.sort_by(|a, b| {
            (&a.fingerprint, &a.role, &a.exponent).cmp(&(&b.fingerprint, &b.role, &b.exponent))
        });

        let distinct_keys: std::collections::BTreeSet<&String> = shared_factor_groups
            .iter()
            .flat_map(|g| g.members.iter().map(|m| &m.modulus))
            .collect();

        let summary = ScanSummary {
            stream,
            shared_factor_groups: shared_factor_groups.len(),
            shared_moduli_groups: shared_moduli_groups.len(),
            exponent_anomalies: exponent_anomalies.len(),
            keys_in_shared_factor_groups: distinct_keys.len(),
        };

        AnomalyReport {
            meta,
            summary,
            shared_factor_groups,
            shared_moduli_groups,
            exponent_anomalies,
            clusters,
        }
    }

    pub fn has_findings(&self) -> bool {
        !self.shared_factor_groups.is_empty()
            || !self.shared_moduli_groups.is_empty()
            || !self.exponent_anomalies.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Per-service rollup of collision events, the shape attack summaries
/// are usually quoted in: which replicas, how many days, whether the days
/// ran back to back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceSummary {
    pub service: String,
    pub events: usize,
    pub days_attacked: usize,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub consecutive_days: bool,
    /// Distinct replica positions hit over the whole window (1 or 2).
    pub replicas_covered: usize,
}

pub fn summarize_services(events: &[CollisionEvent]) -> Vec<ServiceSummary> {
    use std::collections::{BTreeMap, BTreeSet};
    let mut per_service: BTreeMap<&str, Vec<&CollisionEvent>> = BTreeMap::new();
    for event in events {
        per_service.entry(&event.service).or_default().push(event);
    }
    per_service
        .into_iter()
        .map(|(service, events)| {
            let days: BTreeSet<NaiveDate> = events.iter().map(|e| e.date).collect();
            let replicas: BTreeSet<u8> = events.iter().map(|e| e.replica.index()).collect();
            let first_day = *days.iter().next().expect("non-empty");
            let last_day = *days.iter().last().expect("non-empty");
            let consecutive_days = days
                .iter()
                .zip(days.iter().skip(1))
                .all(|(a, b)| *b == a.succ_opt().expect("date in range"));
            ServiceSummary {
                service: service.to_string(),
                events: events.len(),
                days_attacked: days.len(),
                first_day,
                last_day,
                consecutive_days,
                replicas_covered: replicas.len(),
            }
        })
        .collect()
}

/// The collision-scan report.
#[derive(Debug, Clone, Serialize)]
pub struct CollisionReport {
    pub meta: ReportMeta,
    pub per_service: Vec<ServiceSummary>,
    pub events: Vec<CollisionEvent>,
    /// Expected chance collisions for the scanned window, for calibration.
    pub expected_chance_collisions: f64,
}

impl CollisionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// CSV with the columns attack tables print: service, HSDir
    /// fingerprint, descriptor id, shared prefix length, date, replica.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "service",
            "hsdir_fingerprint",
            "descriptor_id",
            "shared_prefix_len",
            "date",
            "replica",
            "responsible",
        ])
        .expect("csv header");
        for e in &self.events {
            w.write_record([
                e.service.as_str(),
                e.hsdir_fingerprint.as_str(),
                e.descriptor_id.as_str(),
                &e.shared_prefix_len.to_string(),
                &e.date.to_string(),
                &e.replica.index().to_string(),
                match e.responsible {
                    Some(true) => "true",
                    Some(false) => "false",
                    None => "unknown",
                },
            ])
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashring::Replica;

    fn event(service: &str, day: u32, replica: Replica) -> CollisionEvent {
        CollisionEvent {
            service: service.to_string(),
            hsdir_fingerprint: "ABCD".to_string(),
            descriptor_id: "ABCD1234".to_string(),
            shared_prefix_len: 5,
            date: NaiveDate::from_ymd_opt(2015, 8, day).unwrap(),
            replica,
            responsible: None,
        }
    }

    #[test]
    fn service_summary_shapes() {
        let events = vec![
            event("aaaa", 14, Replica::First),
            event("aaaa", 14, Replica::Second),
            event("aaaa", 15, Replica::First),
            event("bbbb", 14, Replica::First),
            event("bbbb", 20, Replica::First),
        ];
        let summaries = summarize_services(&events);
        assert_eq!(summaries.len(), 2);
        assert_eq!(summaries[0].service, "aaaa");
        assert_eq!(summaries[0].days_attacked, 2);
        assert!(summaries[0].consecutive_days);
        assert_eq!(summaries[0].replicas_covered, 2);
        assert_eq!(summaries[1].days_attacked, 2);
        assert!(!summaries[1].consecutive_days);
        assert_eq!(summaries[1].replicas_covered, 1);
    }

    #[test]
    fn csv_has_a_row_per_event() {
        let report = CollisionReport {
            meta: ReportMeta::new(ScanConfig::default()),
            per_service: vec![],
            events: vec![event("aaaa", 14, Replica::First)],
            expected_chance_collisions: 0.0,
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("aaaa,ABCD,"));
    }
}
