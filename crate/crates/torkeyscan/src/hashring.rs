//! Onion-service descriptor placement and fingerprint-collision scanning.
//!
//! A v2 onion service stores its descriptor at two pseudorandom ring
//! positions per day:
//!
//! ```text
//! secret-id-part = SHA-1(time-period | descriptor-cookie | replica)
//! descriptor-id  = SHA-1(permanent-id | secret-id-part)
//! ```
//!
//! with time-period as a 4-byte big-endian day counter, the cookie almost
//! always empty, and replica a single byte (0 or 1). The ring is the set of
//! HSDir fingerprints ordered as 160-bit integers; the three successors of
//! a descriptor id hold the descriptor. Since tomorrow's positions are
//! computable today, a relay operator can grind a fingerprint that lands in
//! front of a chosen service -- which is exactly the pattern the collision
//! scanner looks for.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::ingest::ConsensusSnapshot;

/// Seconds per descriptor rotation period.
const PERIOD_SECONDS: i64 = 86_400;

/// Each descriptor lives at this many independent ring positions.
pub const NUM_REPLICAS: u8 = 2;

/// Responsible HSDirs per replica.
pub const HSDIRS_PER_REPLICA: usize = 3;

/// Attack reports in the archive convention label a collision with the
/// date two rotation periods before the descriptor becomes current;
/// grinding targets future positions, so the scanner defaults to the same
/// lead when mapping a date to a time-period.
pub const DEFAULT_PERIOD_LEAD: u32 = 2;

/// Hex digits two strings must share before the scanner reports them.
pub const DEFAULT_COLLISION_THRESHOLD: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum HashRingError {
    #[error("bad onion address {0:?}: expected 16 base32 chars")]
    BadOnionAddress(String),
    #[error("ring has {size} HSDirs, need at least {HSDIRS_PER_REPLICA}")]
    RingTooSmall { size: usize },
    #[error("not a hex fingerprint: {0:?}")]
    BadFingerprint(String),
}

/// A v2 onion service, identified by its 16-char address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnionService {
    pub address: String,
    /// The 80-bit hashed public key the address encodes.
    #[serde(skip)]
    pub permanent_id: [u8; 10],
}

impl OnionService {
    pub fn from_address(address: &str) -> Result<Self, HashRingError> {
        let address = address
            .trim()
            .trim_end_matches(".onion")
            .to_ascii_lowercase();
        let permanent_id = base32_decode_80(&address)
            .ok_or_else(|| HashRingError::BadOnionAddress(address.clone()))?;
        Ok(OnionService {
            address,
            permanent_id,
        })
    }
}

/// RFC 4648 base32, 16 chars -> 10 bytes, as used by .onion addresses.
fn base32_decode_80(address: &str) -> Option<[u8; 10]> {
    if address.len() != 16 {
        return None;
    }
    let mut acc: u128 = 0;
    for c in address.bytes() {
        let v = match c {
            b'a'..=b'z' => c - b'a',
            b'2'..=b'7' => c - b'2' + 26,
            _ => return None,
        };
        acc = (acc << 5) | v as u128;
    }
    let bytes = acc.to_be_bytes();
    let mut out = [0u8; 10];
    out.copy_from_slice(&bytes[6..]);
    Some(out)
}

/// One of the two ring positions a descriptor occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Replica {
    First,
    Second,
}

impl Replica {
    pub const ALL: [Replica; 2] = [Replica::First, Replica::Second];

    pub fn index(self) -> u8 {
        match self {
            Replica::First => 0,
            Replica::Second => 1,
        }
    }
}

impl From<Replica> for u8 {
    fn from(r: Replica) -> u8 {
        r.index()
    }
}

impl TryFrom<u8> for Replica {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Replica::First),
            1 => Ok(Replica::Second),
            other => Err(format!("replica must be 0 or 1, got {other}")),
        }
    }
}

/// How an instant maps to the time-period counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimePeriodRule {
    /// What relays actually compute: the day counter shifted per service
    /// by `first-id-byte * 86400 / 256` seconds, so rotations stagger
    /// through the day instead of stampeding at midnight.
    #[default]
    Deployed,
    /// Plain days-since-epoch, for comparing against naive descriptions.
    NaiveDays,
}

/// The time-period counter for `service` at `unix_time`.
pub fn time_period(rule: TimePeriodRule, unix_time: i64, service: &OnionService) -> u32 {
    let shifted = match rule {
        TimePeriodRule::Deployed => {
            unix_time + (service.permanent_id[0] as i64 * PERIOD_SECONDS) / 256
        }
        TimePeriodRule::NaiveDays => unix_time,
    };
    (shifted / PERIOD_SECONDS) as u32
}

/// Knobs for date-driven descriptor-id computation.
#[derive(Debug, Clone)]
pub struct DescriptorIdParams {
    pub rule: TimePeriodRule,
    /// Periods added on top of the date's own time-period; see
    /// [`DEFAULT_PERIOD_LEAD`].
    pub lead_periods: u32,
    /// Descriptor cookie, almost always absent.
    pub cookie: Option<Vec<u8>>,
}

impl Default for DescriptorIdParams {
    fn default() -> Self {
        DescriptorIdParams {
            rule: TimePeriodRule::Deployed,
            lead_periods: DEFAULT_PERIOD_LEAD,
            cookie: None,
        }
    }
}

/// A 20-byte descriptor position, with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorId {
    pub value: [u8; 20],
    pub service: String,
    pub date: NaiveDate,
    pub replica: Replica,
}

impl DescriptorId {
    pub fn hex(&self) -> String {
        to_hex(&self.value)
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02X}"));
    }
    out
}

/// Raw Eq.-1 computation for an explicit time-period value.
pub fn descriptor_id_for_period(
    service: &OnionService,
    period: u32,
    replica: Replica,
    cookie: &[u8],
) -> [u8; 20] {
    let mut h = Sha1::new();
    h.update(period.to_be_bytes());
    h.update(cookie);
    h.update([replica.index()]);
    let secret_id_part = h.finalize();

    let mut h = Sha1::new();
    h.update(service.permanent_id);
    h.update(secret_id_part);
    h.finalize().into()
}

/// The descriptor id associated with a UTC day.
pub fn descriptor_id(
    service: &OnionService,
    date: NaiveDate,
    replica: Replica,
    params: &DescriptorIdParams,
) -> DescriptorId {
    let midnight = date
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp();
    let period = time_period(params.rule, midnight, service) + params.lead_periods;
    let cookie = params.cookie.as_deref().unwrap_or(&[]);
    DescriptorId {
        value: descriptor_id_for_period(service, period, replica, cookie),
        service: service.address.clone(),
        date,
        replica,
    }
}

/// The descriptor id current at an arbitrary UTC instant (no lead).
pub fn descriptor_id_at(
    service: &OnionService,
    unix_time: i64,
    replica: Replica,
    rule: TimePeriodRule,
    cookie: &[u8],
) -> [u8; 20] {
    let period = time_period(rule, unix_time, service);
    descriptor_id_for_period(service, period, replica, cookie)
}

/// The HSDir ring at one instant: fingerprints sorted as 160-bit integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingSnapshot {
    pub timestamp: i64,
    hsdirs: Vec<[u8; 20]>,
}

impl RingSnapshot {
    pub fn new(timestamp: i64, mut hsdirs: Vec<[u8; 20]>) -> Self {
        hsdirs.sort_unstable();
        hsdirs.dedup();
        RingSnapshot { timestamp, hsdirs }
    }

    /// Build from a consensus, taking the HSDir-flagged relays.
    pub fn from_consensus(snapshot: &ConsensusSnapshot) -> Result<Self, HashRingError> {
        let mut hsdirs = Vec::new();
        for fp in snapshot.hsdirs() {
            hsdirs.push(parse_fingerprint(fp)?);
        }
        Ok(RingSnapshot::new(snapshot.valid_after, hsdirs))
    }

    pub fn len(&self) -> usize {
        self.hsdirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hsdirs.is_empty()
    }

    pub fn hsdirs(&self) -> &[[u8; 20]] {
        &self.hsdirs
    }
}

pub fn parse_fingerprint(hex: &str) -> Result<[u8; 20], HashRingError> {
    let cleaned: String = hex.split_whitespace().collect();
    if cleaned.len() != 40 || !cleaned.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HashRingError::BadFingerprint(hex.to_string()));
    }
    let mut out = [0u8; 20];
    for (i, chunk) in cleaned.as_bytes().chunks(2).enumerate() {
        let s = std::str::from_utf8(chunk).expect("hex is ascii");
        out[i] = u8::from_str_radix(s, 16).expect("checked hexdigit");
    }
    Ok(out)
}

/// The three HSDirs responsible for a descriptor id.
///
/// Successors in the positive direction, strictly greater than the id,
/// wrapping past the top of the ring.
pub fn responsible_hsdirs(
    ring: &RingSnapshot,
    id: &[u8; 20],
) -> Result<[[u8; 20]; HSDIRS_PER_REPLICA], HashRingError> {
    if ring.hsdirs.len() < HSDIRS_PER_REPLICA {
        return Err(HashRingError::RingTooSmall {
            size: ring.hsdirs.len(),
        });
    }
    let start = ring.hsdirs.partition_point(|fp| fp <= id);
    let mut out = [[0u8; 20]; HSDIRS_PER_REPLICA];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = ring.hsdirs[(start + k) % ring.hsdirs.len()];
    }
    Ok(out)
}

/// A suspect relay fingerprint, possibly truncated (archives often print
/// only a prefix). Comparison is at hex-digit granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suspect {
    pub hex: String,
}

impl Suspect {
    pub fn parse(hex: &str) -> Result<Self, HashRingError> {
        let cleaned: String = hex.split_whitespace().collect::<String>().to_ascii_uppercase();
        if cleaned.is_empty()
            || cleaned.len() > 40
            || !cleaned.bytes().all(|b| b.is_ascii_hexdigit())
        {
            return Err(HashRingError::BadFingerprint(hex.to_string()));
        }
        Ok(Suspect { hex: cleaned })
    }

    fn is_full_length(&self) -> bool {
        self.hex.len() == 40
    }
}

/// Leading hex digits `a` and `b` share, up to the shorter of the two.
pub fn shared_prefix_len(a: &str, b: &str) -> usize {
    a.bytes()
        .zip(b.bytes())
        .take_while(|(x, y)| x.eq_ignore_ascii_case(y))
        .count()
}

/// One suspect landing next to one descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub service: String,
    pub hsdir_fingerprint: String,
    pub descriptor_id: String,
    pub shared_prefix_len: usize,
    pub date: NaiveDate,
    pub replica: Replica,
    /// Whether the suspect sat in the descriptor's responsible set that
    /// day; `None` when no ring data was available.
    pub responsible: Option<bool>,
}

/// Scan services x dates x replicas for suspects with matching prefixes.
///
/// Prefix matching needs no ring data; when a day's ring is available the
/// event is annotated with actual responsibility, otherwise that field
/// stays unknown. Output is sorted by (service, date, replica, suspect).
pub fn scan_collisions(
    services: &[OnionService],
    suspects: &[Suspect],
    dates: &[NaiveDate],
    rings: &BTreeMap<NaiveDate, RingSnapshot>,
    params: &DescriptorIdParams,
    threshold: usize,
) -> Vec<CollisionEvent> {
    let mut work: Vec<(&OnionService, NaiveDate)> = Vec::new();
    for service in services {
        for &date in dates {
            work.push((service, date));
        }
    }

    let mut events: Vec<CollisionEvent> = work
        .par_iter()
        .flat_map_iter(|&(service, date)| {
            let ring = rings.get(&date);
            let mut found = Vec::new();
            for replica in Replica::ALL {
                let id = descriptor_id(service, date, replica, params);
                let id_hex = id.hex();
                let responsible_set = ring.and_then(|r| responsible_hsdirs(r, &id.value).ok());
                for suspect in suspects {
                    let shared = shared_prefix_len(&suspect.hex, &id_hex);
                    if shared < threshold {
                        continue;
                    }
                    let responsible = responsible_set.as_ref().map(|set| {
                        if suspect.is_full_length() {
                            set.iter().any(|fp| to_hex(fp) == suspect.hex)
                        } else {
                            set.iter().any(|fp| to_hex(fp).starts_with(&suspect.hex))
                        }
                    });
                    found.push(CollisionEvent {
                        service: service.address.clone(),
                        hsdir_fingerprint: suspect.hex.clone(),
                        descriptor_id: id_hex.clone(),
                        shared_prefix_len: shared,
                        date,
                        replica,
                        responsible,
                    });
                }
            }
            found
        })
        .collect();

    events.sort_by(|a, b| {
        (&a.service, a.date, a.replica, &a.hsdir_fingerprint).cmp(&(
            &b.service,
            b.date,
            b.replica,
            &b.hsdir_fingerprint,
        ))
    });
    events
}

/// Expected number of chance collisions at or above a threshold:
/// `days * replicas * ring_size / 16^threshold`. Context for reports; a
/// five-digit collision is cheap to mine but rare by accident.
pub fn collision_probability_note(threshold: u32, ring_size: usize, days: usize) -> f64 {
    days as f64 * NUM_REPLICAS as f64 * ring_size as f64 * 16f64.powi(-(threshold as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn service(addr: &str) -> OnionService {
        OnionService::from_address(addr).unwrap()
    }

    #[test]
    fn decodes_onion_addresses() {
        let s = service("silkroadvb5piz3r");
        assert_eq!(to_hex(&s.permanent_id), "9216A8B803A87AF46771");
        let s = service("HAYSTACKSVVNCNVQ.onion");
        assert_eq!(to_hex(&s.permanent_id), "383129804A956AD136B0");
        assert!(OnionService::from_address("tooshort").is_err());
        assert!(OnionService::from_address("0123456789abcdef").is_err()); // 0,1 invalid
    }

    #[test]
    fn known_attack_positions() {
        // ground truth from the archived attack reports
        let params = DescriptorIdParams::default();
        let id = descriptor_id(
            &service("silkroadvb5piz3r"),
            date(2013, 5, 21),
            Replica::First,
            &params,
        );
        assert_eq!(id.hex(), "BC89A889D3DF7F0027A59683BF73B1CDC8C07BC5");

        let id = descriptor_id(
            &service("22u75kqyl666joi2"),
            date(2015, 8, 14),
            Replica::Second,
            &params,
        );
        assert_eq!(id.hex(), "325CAC08B0A3180B590E765FA1F372A9428E7E0B");
    }

    #[test]
    fn matches_reference_script() {
        // frozen outputs of an independent implementation of the two-hash
        // construction, exercised at an explicit period
        let s = service("haystacksvvncnvq");
        assert_eq!(
            to_hex(&descriptor_id_for_period(&s, 17_000, Replica::First, &[])),
            "A4F27419D73F31E3877296C316BFC89825B1B18A"
        );
        assert_eq!(
            to_hex(&descriptor_id_for_period(&s, 17_000, Replica::Second, &[])),
            "2CEEEB54890453B229BD471F5547B5F7BDCB80AC"
        );
        assert_eq!(
            to_hex(&descriptor_id_for_period(
                &s,
                17_000,
                Replica::First,
                &[0xde, 0xad, 0xbe, 0xef]
            )),
            "A43147113B364BC13A94DF6B13C6C1DE987C8D01"
        );
    }

    #[test]
    fn deployed_and_naive_rules_diverge_late_in_the_day() {
        let s = service("22u75kqyl666joi2");
        assert_eq!(s.permanent_id[0], 214);
        let late = 1_439_595_000; // 2015-08-14 23:30 UTC
        assert_eq!(time_period(TimePeriodRule::Deployed, late, &s), 16_662);
        assert_eq!(time_period(TimePeriodRule::NaiveDays, late, &s), 16_661);
        // at midnight the rules agree
        let midnight = 1_439_510_400;
        assert_eq!(
            time_period(TimePeriodRule::Deployed, midnight, &s),
            time_period(TimePeriodRule::NaiveDays, midnight, &s),
        );
    }

    #[test]
    fn ids_differ_across_days_and_replicas() {
        let params = DescriptorIdParams::default();
        let s = service("silkroadvb5piz3r");
        let a = descriptor_id(&s, date(2013, 5, 21), Replica::First, &params);
        let b = descriptor_id(&s, date(2013, 5, 22), Replica::First, &params);
        let c = descriptor_id(&s, date(2013, 5, 21), Replica::Second, &params);
        assert_ne!(a.value, b.value);
        assert_ne!(a.value, c.value);
        // determinism
        let again = descriptor_id(&s, date(2013, 5, 21), Replica::First, &params);
        assert_eq!(a, again);
    }

    fn fp(first: u8) -> [u8; 20] {
        let mut out = [0u8; 20];
        out[0] = first;
        out
    }

    #[test]
    fn successor_lookup_wraps() {
        let ring = RingSnapshot::new(0, vec![fp(0x20), fp(0x50), fp(0x90), fp(0xC0)]);
        let got = responsible_hsdirs(&ring, &fp(0x60)).unwrap();
        assert_eq!(got, [fp(0x90), fp(0xC0), fp(0x20)]);
        // id above the top wraps fully
        let got = responsible_hsdirs(&ring, &fp(0xFF)).unwrap();
        assert_eq!(got, [fp(0x20), fp(0x50), fp(0x90)]);
        // equality is not "strictly greater"
        let got = responsible_hsdirs(&ring, &fp(0x90)).unwrap();
        assert_eq!(got, [fp(0xC0), fp(0x20), fp(0x50)]);
    }

    #[test]
    fn ring_of_three_always_returns_all() {
        let ring = RingSnapshot::new(0, vec![fp(3), fp(7), fp(11)]);
        for probe in [0u8, 4, 8, 200] {
            let got = responsible_hsdirs(&ring, &fp(probe)).unwrap();
            let mut sorted = got.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![fp(3), fp(7), fp(11)]);
        }
    }

    #[test]
    fn small_ring_is_an_error() {
        let ring = RingSnapshot::new(0, vec![fp(1), fp(2)]);
        assert!(matches!(
            responsible_hsdirs(&ring, &fp(0)),
            Err(HashRingError::RingTooSmall { size: 2 })
        ));
    }

    #[test]
    fn matches_linear_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0xA11CE);
        for _ in 0..50 {
            let mut nodes: Vec<[u8; 20]> = (0..100)
                .map(|_| {
                    let mut fp = [0u8; 20];
                    rng.fill(&mut fp);
                    fp
                })
                .collect();
            nodes.sort_unstable();
            nodes.dedup();
            let ring = RingSnapshot::new(0, nodes.clone());
            let mut id = [0u8; 20];
            rng.fill(&mut id);

            // oracle: walk every node, classify by wraparound distance
            let mut best: Vec<[u8; 20]> = nodes
                .iter()
                .map(|fp| {
                    let dist = distance_up(&id, fp);
                    (dist, *fp)
                })
                .collect::<std::collections::BTreeMap<_, _>>()
                .into_values()
                .take(3)
                .collect();
            best.truncate(3);

            let got = responsible_hsdirs(&ring, &id).unwrap();
            assert_eq!(got.to_vec(), best);
        }
    }

    /// Wraparound distance from `from` (exclusive) up to `to`, as a
    /// 160-bit integer difference.
    fn distance_up(from: &[u8; 20], to: &[u8; 20]) -> num_bigint::BigUint {
        use num_bigint::BigUint;
        let modulus = BigUint::from(1u8) << 160;
        let f = BigUint::from_bytes_be(from);
        let t = BigUint::from_bytes_be(to);
        (&modulus + t - f) % modulus
    }

    #[test]
    fn collision_scan_reports_planted_suspect() {
        let params = DescriptorIdParams::default();
        let s = service("haystacksvvncnvq");
        let day = date(2016, 1, 1);
        let id = descriptor_id(&s, day, Replica::First, &params);
        let planted = Suspect::parse(&id.hex()[..12]).unwrap();
        let random = Suspect::parse("0123456789ABCDEF0123456789ABCDEF01234567").unwrap();

        let events = scan_collisions(
            &[s],
            &[planted.clone(), random],
            &[day],
            &BTreeMap::new(),
            &params,
            5,
        );
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].hsdir_fingerprint, planted.hex);
        assert_eq!(events[0].shared_prefix_len, 12);
        assert_eq!(events[0].responsible, None);

        // no suspects, no events
        assert!(scan_collisions(&[], &[], &[day], &BTreeMap::new(), &params, 5).is_empty());
    }

    #[test]
    fn threshold_monotonicity() {
        let params = DescriptorIdParams::default();
        let s = service("haystacksvvncnvq");
        let days: Vec<NaiveDate> = (1..20).map(|d| date(2016, 1, d)).collect();
        // suspects with varying overlap lengths against real ids
        let mut suspects = Vec::new();
        for (i, &d) in days.iter().enumerate() {
            let id = descriptor_id(&s, d, Replica::ALL[i % 2], &params);
            suspects.push(Suspect::parse(&id.hex()[..(5 + i % 10)]).unwrap());
        }
        let services = [s];
        let rings = BTreeMap::new();
        let at = |t| scan_collisions(&services, &suspects, &days, &rings, &params, t);
        let lo = at(5);
        let hi = at(6);
        assert!(hi.len() < lo.len());
        for event in &hi {
            assert!(lo.contains(event));
        }
    }

    #[test]
    fn chance_collision_estimate() {
        let got = collision_probability_note(5, 3000, 1);
        assert!((got - 0.00572204589).abs() < 1e-9);
        let yearly = collision_probability_note(5, 3000, 365);
        assert!((yearly - 2.088).abs() < 0.01);
        assert_eq!(collision_probability_note(0, 3000, 7) as u64, 2 * 3000 * 7);
    }
}
