//! Grouping flagged relays by shared operational attributes.
//!
//! Attribution of anomalous relays to operators is manual work; what this
//! module does is surface the evidence -- shared addresses, address
//! blocks, fingerprint prefixes, arithmetic port schemes, overlapping
//! uptimes, identical platform strings -- as declarative, individually
//! toggleable rules, and cluster relays into connected components under
//! whichever rules are enabled.

use std::collections::BTreeMap;
use std::net::IpAddr;

use serde::Serialize;

use crate::ingest::{ConsensusSnapshot, RelayRecord};

/// Consensus gap below which two sightings count as one uptime interval.
pub const DEFAULT_GAP_TOLERANCE: i64 = 2 * 3600;

/// Everything the clustering rules look at for one relay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeVector {
    pub fingerprint: String,
    pub nickname: String,
    pub address: IpAddr,
    pub or_port: u16,
    pub platform: String,
    /// Maximal presence intervals, UTC epoch seconds.
    pub uptime_windows: Vec<(i64, i64)>,
}

impl AttributeVector {
    pub fn from_record(record: &RelayRecord, uptime_windows: Vec<(i64, i64)>) -> Self {
        AttributeVector {
            fingerprint: record.fingerprint.clone(),
            nickname: record.nickname.clone(),
            address: record.address,
            or_port: record.or_port,
            platform: record.platform.clone(),
            uptime_windows,
        }
    }

    pub fn fingerprint_prefix(&self, hex_digits: usize) -> &str {
        &self.fingerprint[..hex_digits.min(self.fingerprint.len())]
    }

    /// The enclosing /24, IPv4 only.
    pub fn slash24(&self) -> Option<String> {
        match self.address {
            IpAddr::V4(v4) => {
                let o = v4.octets();
                Some(format!("{}.{}.{}.0/24", o[0], o[1], o[2]))
            }
            IpAddr::V6(_) => None,
        }
    }

    /// The enclosing /16, IPv4 only.
    pub fn slash16(&self) -> Option<String> {
        match self.address {
            IpAddr::V4(v4) => {
                let o = v4.octets();
                Some(format!("{}.{}.0.0/16", o[0], o[1]))
            }
            IpAddr::V6(_) => None,
        }
    }
}

/// One pairwise-evidence rule. Rules only ever merge relays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ClusterRule {
    SameAddress,
    SameSlash24,
    SameSlash16,
    /// Ports following `base + stride*k`; fires only when at least
    /// `min_run` relays sit on one scheme, to avoid spurious pairs.
    ArithmeticPorts { stride: u16, min_run: usize },
    /// Identical leading hex digits of the fingerprint (4 or 5 catch the
    /// ground-in prefixes).
    FingerprintPrefix { hex_digits: usize },
    OverlappingUptime,
    SamePlatform,
}

impl ClusterRule {
    /// The rule set the evidence tables suggest: addresses, /24 blocks,
    /// stride-4 port schemes, and 4-digit fingerprint prefixes.
    pub fn default_set() -> Vec<ClusterRule> {
        vec![
            ClusterRule::SameAddress,
            ClusterRule::SameSlash24,
            ClusterRule::ArithmeticPorts {
                stride: 4,
                min_run: 3,
            },
            ClusterRule::FingerprintPrefix { hex_digits: 4 },
        ]
    }

    fn name(&self) -> String {
        match self {
            ClusterRule::SameAddress => "same-address".into(),
            ClusterRule::SameSlash24 => "same-/24".into(),
            ClusterRule::SameSlash16 => "same-/16".into(),
            ClusterRule::ArithmeticPorts { stride, .. } => format!("arithmetic-ports-{stride}"),
            ClusterRule::FingerprintPrefix { hex_digits } => {
                format!("fingerprint-prefix-{hex_digits}")
            }
            ClusterRule::OverlappingUptime => "overlapping-uptime".into(),
            ClusterRule::SamePlatform => "same-platform".into(),
        }
    }
}

/// A connected component with the evidence that formed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub id: usize,
    /// Member fingerprints, ascending.
    pub members: Vec<String>,
    pub fired_rules: Vec<String>,
    pub evidence: Vec<String>,
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

struct Match {
    rule: String,
    evidence: String,
    members: Vec<usize>,
}

/// Cluster relays into connected components under the enabled rules.
///
/// Deterministic and order-independent: clusters are identified by their
/// sorted member fingerprints, and the output partitions the input.
pub fn cluster_relays(relays: &[AttributeVector], rules: &[ClusterRule]) -> Vec<Cluster> {
    let mut matches: Vec<Match> = Vec::new();
    for rule in rules {
        collect_matches(relays, rule, &mut matches);
    }

    let mut dsu = Dsu::new(relays.len());
    for m in &matches {
        for window in m.members.windows(2) {
            dsu.union(window[0], window[1]);
        }
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..relays.len() {
        components.entry(dsu.find(i)).or_default().push(i);
    }

    let mut clusters: Vec<Cluster> = components
        .into_values()
        .map(|indices| {
            let mut members: Vec<String> = indices
                .iter()
                .map(|&i| relays[i].fingerprint.clone())
                .collect();
            members.sort();
            let mut fired_rules: Vec<String> = Vec::new();
            let mut evidence: Vec<String> = Vec::new();
            for m in &matches {
                if m.members.iter().all(|i| indices.contains(i)) {
                    if !fired_rules.contains(&m.rule) {
                        fired_rules.push(m.rule.clone());
                    }
                    evidence.push(m.evidence.clone());
                }
            }
            fired_rules.sort();
            evidence.sort();
            Cluster {
                id: 0,
                members,
                fired_rules,
                evidence,
            }
        })
        .collect();

    clusters.sort_by(|a, b| a.members.cmp(&b.members));
    for (id, cluster) in clusters.iter_mut().enumerate() {
        cluster.id = id;
    }
    clusters
}

fn collect_matches(relays: &[AttributeVector], rule: &ClusterRule, out: &mut Vec<Match>) {
    match rule {
        ClusterRule::SameAddress => {
            group_by(relays, rule, out, |r| Some(r.address.to_string()));
        }
        ClusterRule::SameSlash24 => group_by(relays, rule, out, |r| r.slash24()),
        ClusterRule::SameSlash16 => group_by(relays, rule, out, |r| r.slash16()),
        ClusterRule::SamePlatform => {
            group_by(relays, rule, out, |r| Some(r.platform.clone()));
        }
        ClusterRule::FingerprintPrefix { hex_digits } => {
            group_by(relays, rule, out, |r| {
                Some(r.fingerprint_prefix(*hex_digits).to_string())
            });
        }
        ClusterRule::ArithmeticPorts { stride, min_run } => {
            arithmetic_port_matches(relays, *stride, *min_run, rule, out);
        }
        ClusterRule::OverlappingUptime => uptime_matches(relays, rule, out),
    }
}

fn group_by<F>(relays: &[AttributeVector], rule: &ClusterRule, out: &mut Vec<Match>, key: F)
where
    F: Fn(&AttributeVector) -> Option<String>,
{
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, relay) in relays.iter().enumerate() {
        if let Some(k) = key(relay) {
            groups.entry(k).or_default().push(i);
        }
    }
    for (k, members) in groups {
        if members.len() >= 2 {
            out.push(Match {
                rule: rule.name(),
                evidence: format!("{}: {k} shared by {} relays", rule.name(), members.len()),
                members,
            });
        }
    }
}

/// Ports on a common residue class chain into schemes; a gap of up to two
/// missing rungs still counts as the same scheme.
fn arithmetic_port_matches(
    relays: &[AttributeVector],
    stride: u16,
    min_run: usize,
    rule: &ClusterRule,
    out: &mut Vec<Match>,
) {
    if stride == 0 {
        return;
    }
    let mut by_residue: BTreeMap<u16, BTreeMap<u16, Vec<usize>>> = BTreeMap::new();
    for (i, relay) in relays.iter().enumerate() {
        by_residue
            .entry(relay.or_port % stride)
            .or_default()
            .entry(relay.or_port)
            .or_default()
            .push(i);
    }
    let max_gap = stride as u32 * 3;
    for ports in by_residue.into_values() {
        let mut chain: Vec<(u16, Vec<usize>)> = Vec::new();
        let mut flush = |chain: &mut Vec<(u16, Vec<usize>)>| {
            let members: Vec<usize> = chain.iter().flat_map(|(_, m)| m.clone()).collect();
            if chain.len() >= 2 && members.len() >= min_run {
                let first = chain.first().expect("non-empty").0;
                let last = chain.last().expect("non-empty").0;
                out.push(Match {
                    rule: rule.name(),
                    evidence: format!(
                        "{}: ports {{{first}, .., {last}}} stride {stride} across {} relays",
                        rule.name(),
                        members.len()
                    ),
                    members,
                });
            }
            chain.clear();
        };
        for (port, members) in ports {
            if let Some((prev, _)) = chain.last() {
                if (port - prev) as u32 > max_gap {
                    flush(&mut chain);
                }
            }
            chain.push((port, members));
        }
        flush(&mut chain);
    }
}

fn uptime_matches(relays: &[AttributeVector], rule: &ClusterRule, out: &mut Vec<Match>) {
    // sweep over all windows; transitive overlap chains become one match
    let mut windows: Vec<(i64, i64, usize)> = Vec::new();
    for (i, relay) in relays.iter().enumerate() {
        for &(start, end) in &relay.uptime_windows {
            windows.push((start, end, i));
        }
    }
    windows.sort_unstable();
    let mut current: Vec<usize> = Vec::new();
    let mut current_end = i64::MIN;
    let mut flush = |members: &mut Vec<usize>, from: i64, to: i64| {
        members.sort_unstable();
        members.dedup();
        if members.len() >= 2 {
            out.push(Match {
                rule: rule.name(),
                evidence: format!(
                    "{}: {} relays online together in [{from}, {to}]",
                    rule.name(),
                    members.len()
                ),
                members: members.clone(),
            });
        }
        members.clear();
    };
    let mut current_start = i64::MIN;
    for (start, end, idx) in windows {
        if current.is_empty() || start <= current_end {
            if current.is_empty() {
                current_start = start;
            }
            current.push(idx);
            current_end = current_end.max(end);
        } else {
            flush(&mut current, current_start, current_end);
            current_start = start;
            current_end = end;
            current.push(idx);
        }
    }
    flush(&mut current, current_start, current_end);
}

/// Maximal intervals of consecutive consensus presence for a relay.
///
/// `history` must be sorted by `valid_after`; sightings further apart than
/// `gap_tolerance` seconds start a new interval.
pub fn presence_intervals(
    fingerprint: &str,
    history: &[ConsensusSnapshot],
    gap_tolerance: i64,
) -> Vec<(i64, i64)> {
    let mut intervals: Vec<(i64, i64)> = Vec::new();
    for snapshot in history {
        if !snapshot
            .entries
            .iter()
            .any(|e| e.fingerprint == fingerprint)
        {
            continue;
        }
        let t = snapshot.valid_after;
        match intervals.last_mut() {
            Some((_, last)) if t - *last <= gap_tolerance => *last = t,
            _ => intervals.push((t, t)),
        }
    }
    intervals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ConsensusEntry, Flag};
    use std::collections::BTreeSet;

    fn relay(fp: &str, addr: &str, port: u16) -> AttributeVector {
        AttributeVector {
            fingerprint: fp.to_string(),
            nickname: format!("relay-{fp}"),
            address: addr.parse().unwrap(),
            or_port: port,
            platform: "Tor 0.2.2.37 on Linux x86_64".to_string(),
            uptime_windows: vec![],
        }
    }

    /// The ten shared-modulus relays: four fingerprint-prefix groups over
    /// five addresses, two of which host two relays each.
    fn shared_modulus_relays() -> Vec<AttributeVector> {
        vec![
            relay("838A296A0000000000000000000000000000AAAA", "188.165.164.163", 9001),
            relay("838A305F0000000000000000000000000000AAAA", "188.165.26.13", 9001),
            relay("838A71E20000000000000000000000000000AAAA", "178.32.143.175", 9001),
            relay("2249EB420000000000000000000000000000AAAA", "188.165.26.13", 9001),
            relay("2249EC780000000000000000000000000000AAAA", "178.32.143.175", 9001),
            relay("E1EFA3880000000000000000000000000000AAAA", "188.165.3.63", 9001),
            relay("E1EF89850000000000000000000000000000AAAA", "188.165.138.181", 9001),
            relay("E1EF9EB80000000000000000000000000000AAAA", "5.39.122.66", 9001),
            relay("410BA17E0000000000000000000000000000AAAA", "188.165.138.181", 9001),
            relay("410BB9620000000000000000000000000000AAAA", "5.39.122.66", 9001),
        ]
    }

    #[test]
    fn prefix_rule_recovers_the_four_groups() {
        let relays = shared_modulus_relays();
        let clusters = cluster_relays(&relays, &[ClusterRule::FingerprintPrefix { hex_digits: 4 }]);
        let sizes: Vec<usize> = clusters.iter().map(|c| c.members.len()).collect();
        assert_eq!(sizes, vec![2, 2, 3, 3]); // 2249, 410B, 838A, E1EF
        let prefixes: BTreeSet<&str> = clusters
            .iter()
            .map(|c| &c.members[0][..4])
            .collect();
        assert_eq!(
            prefixes,
            BTreeSet::from(["2249", "410B", "838A", "E1EF"])
        );
    }

    #[test]
    fn address_rule_links_the_shared_hosts() {
        let relays = shared_modulus_relays();
        let clusters = cluster_relays(&relays, &[ClusterRule::SameAddress]);
        // two doubled-up addresses twice -> four pairs, rest singletons
        let pairs: Vec<&Cluster> = clusters.iter().filter(|c| c.members.len() == 2).collect();
        assert_eq!(pairs.len(), 4);
        let evidence: String = pairs.iter().flat_map(|c| c.evidence.clone()).collect();
        assert!(evidence.contains("188.165.26.13"));
        assert!(evidence.contains("178.32.143.175"));
    }

    #[test]
    fn arithmetic_ports_fire_at_three() {
        let mut relays = vec![
            relay("A000000000000000000000000000000000000001", "10.0.0.1", 7003),
            relay("A000000000000000000000000000000000000002", "10.0.0.2", 7007),
            relay("A000000000000000000000000000000000000003", "10.0.0.3", 7011),
            relay("B000000000000000000000000000000000000004", "10.1.0.4", 9030),
        ];
        let rule = ClusterRule::ArithmeticPorts {
            stride: 4,
            min_run: 3,
        };
        let clusters = cluster_relays(&relays, &[rule.clone()]);
        let big: Vec<&Cluster> = clusters.iter().filter(|c| c.members.len() > 1).collect();
        assert_eq!(big.len(), 1);
        assert_eq!(big[0].members.len(), 3);
        assert!(big[0].fired_rules.contains(&"arithmetic-ports-4".to_string()));

        // two relays on a stride are not enough
        relays.truncate(2);
        let clusters = cluster_relays(&relays, &[rule]);
        assert!(clusters.iter().all(|c| c.members.len() == 1));
    }

    #[test]
    fn singleton_cluster_has_no_evidence() {
        let relays = vec![relay("ABCD000000000000000000000000000000000000", "10.0.0.1", 9001)];
        let clusters = cluster_relays(&relays, &ClusterRule::default_set());
        assert_eq!(clusters.len(), 1);
        assert!(clusters[0].evidence.is_empty());
        assert!(clusters[0].fired_rules.is_empty());
    }

    #[test]
    fn adding_rules_only_coarsens() {
        let relays = shared_modulus_relays();
        let base = cluster_relays(&relays, &[ClusterRule::FingerprintPrefix { hex_digits: 4 }]);
        let more = cluster_relays(
            &relays,
            &[
                ClusterRule::FingerprintPrefix { hex_digits: 4 },
                ClusterRule::SameAddress,
            ],
        );
        // every base cluster is wholly contained in some richer cluster
        for cluster in &base {
            assert!(more.iter().any(|c| {
                cluster.members.iter().all(|m| c.members.contains(m))
            }));
        }
        // and clustering partitions the input either way
        let count = |clusters: &[Cluster]| -> usize {
            clusters.iter().map(|c| c.members.len()).sum()
        };
        assert_eq!(count(&base), relays.len());
        assert_eq!(count(&more), relays.len());
    }

    #[test]
    fn order_independence() {
        let mut relays = shared_modulus_relays();
        let forward = cluster_relays(&relays, &ClusterRule::default_set());
        relays.reverse();
        let backward = cluster_relays(&relays, &ClusterRule::default_set());
        let members = |clusters: &[Cluster]| -> Vec<Vec<String>> {
            clusters.iter().map(|c| c.members.clone()).collect()
        };
        assert_eq!(members(&forward), members(&backward));
    }

    fn snapshot_at(t: i64, fingerprints: &[&str]) -> ConsensusSnapshot {
        ConsensusSnapshot {
            valid_after: t,
            entries: fingerprints
                .iter()
                .map(|fp| ConsensusEntry {
                    fingerprint: fp.to_string(),
                    flags: BTreeSet::from([Flag::Running]),
                    address: "10.0.0.1".parse().unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn presence_intervals_merge_and_split() {
        let fp = "AAAA000000000000000000000000000000000000";
        // hourly presence for 3 days
        let hourly: Vec<ConsensusSnapshot> =
            (0..72).map(|h| snapshot_at(h * 3600, &[fp])).collect();
        let intervals = presence_intervals(fp, &hourly, DEFAULT_GAP_TOLERANCE);
        assert_eq!(intervals, vec![(0, 71 * 3600)]);

        // present days 1-2 and 5-6: the four-day hole splits the run
        let mut sparse: Vec<ConsensusSnapshot> = Vec::new();
        for h in 0..48 {
            sparse.push(snapshot_at(h * 3600, &[fp]));
        }
        for h in (4 * 24)..(6 * 24) {
            sparse.push(snapshot_at(h * 3600, &[fp]));
        }
        let intervals = presence_intervals(fp, &sparse, DEFAULT_GAP_TOLERANCE);
        assert_eq!(intervals.len(), 2);
        assert_eq!(intervals[0], (0, 47 * 3600));
        assert_eq!(intervals[1], (4 * 24 * 3600, (6 * 24 - 1) * 3600));

        // absent relay
        assert!(presence_intervals("BBBB", &hourly, DEFAULT_GAP_TOLERANCE).is_empty());
    }

    #[test]
    fn two_experiment_windows_fixture() {
        let fp = "CCCC000000000000000000000000000000000000";
        // two separated windows like the two observed experiments
        let window_a = (0..5 * 24).map(|h| 1_352_592_000 + h * 3600); // 2012-11-11 ..
        let window_b = (0..23 * 24).map(|h| 1_358_121_600 + h * 3600); // 2013-01-14 ..
        let history: Vec<ConsensusSnapshot> = window_a
            .chain(window_b)
            .map(|t| snapshot_at(t, &[fp]))
            .collect();
        let intervals = presence_intervals(fp, &history, DEFAULT_GAP_TOLERANCE);
        assert_eq!(intervals.len(), 2);
        assert_eq!(intervals[0].0, 1_352_592_000);
        assert_eq!(intervals[1].0, 1_358_121_600);
    }
}
