//! v3 network-status consensus parsing.

use std::collections::BTreeSet;
use std::net::IpAddr;
use std::str::FromStr;

use base64::engine::{DecodePaddingMode, GeneralPurpose, GeneralPurposeConfig};
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{parse_timestamp, IngestError};

/// Relay flags assigned by the directory authorities.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Flag {
    Authority,
    BadDirectory,
    BadExit,
    Exit,
    Fast,
    Guard,
    HSDir,
    Named,
    NoEdConsensus,
    Running,
    Stable,
    StaleDesc,
    Sybil,
    Unnamed,
    V2Dir,
    Valid,
}

impl FromStr for Flag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Authority" => Flag::Authority,
            "BadDirectory" => Flag::BadDirectory,
            "BadExit" => Flag::BadExit,
            "Exit" => Flag::Exit,
            "Fast" => Flag::Fast,
            "Guard" => Flag::Guard,
            "HSDir" => Flag::HSDir,
            "Named" => Flag::Named,
            "NoEdConsensus" => Flag::NoEdConsensus,
            "Running" => Flag::Running,
            "Stable" => Flag::Stable,
            "StaleDesc" => Flag::StaleDesc,
            "Sybil" => Flag::Sybil,
            "Unnamed" => Flag::Unnamed,
            "V2Dir" => Flag::V2Dir,
            "Valid" => Flag::Valid,
            _ => return Err(()),
        })
    }
}

/// One relay row of a consensus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusEntry {
    /// 40 uppercase hex chars, decoded from the r-line identity.
    pub fingerprint: String,
    pub flags: BTreeSet<Flag>,
    pub address: IpAddr,
}

/// The hourly relay listing at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusSnapshot {
    /// `valid-after`, UTC epoch seconds.
    pub valid_after: i64,
    pub entries: Vec<ConsensusEntry>,
}

impl ConsensusSnapshot {
    /// Fingerprints of the relays carrying the HSDir flag.
    pub fn hsdirs(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.flags.contains(&Flag::HSDir))
            .map(|e| e.fingerprint.as_str())
            .collect()
    }
}

// Archived identity digests come without padding; tolerate sloppy trailing
// bits from historic encoders.
fn b64() -> GeneralPurpose {
    GeneralPurpose::new(
        &base64::alphabet::STANDARD,
        GeneralPurposeConfig::new()
            .with_decode_padding_mode(DecodePaddingMode::Indifferent)
            .with_decode_allow_trailing_bits(true),
    )
}

fn decode_identity(field: &str) -> Option<String> {
    let bytes = b64().decode(field.trim_end_matches('=')).ok()?;
    if bytes.len() != 20 {
        return None;
    }
    let mut out = String::with_capacity(40);
    for b in bytes {
        out.push_str(&format!("{b:02X}"));
    }
    Some(out)
}

/// Parse a v3 network-status consensus document.
pub fn parse_consensus(raw: &str) -> Result<ConsensusSnapshot, IngestError> {
    let mut valid_after = None;
    let mut entries: Vec<ConsensusEntry> = Vec::new();

    for line in raw.lines() {
        let (kw, rest) = match line.split_once(' ') {
            Some((kw, rest)) => (kw, rest),
            None => (line, ""),
        };
        match kw {
            "valid-after" => {
                valid_after = Some(parse_timestamp(rest).ok_or_else(|| {
                    IngestError::MalformedConsensus(format!("bad valid-after {rest}"))
                })?);
            }
            "r" => {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                // nickname identity digest date time ip orport dirport
                if fields.len() < 8 {
                    return Err(IngestError::MalformedConsensus(format!(
                        "r line has {} fields",
                        fields.len()
                    )));
                }
                let fingerprint = decode_identity(fields[1]).ok_or_else(|| {
                    IngestError::MalformedConsensus(format!("bad identity {}", fields[1]))
                })?;
                let address: IpAddr = fields[5].parse().map_err(|_| {
                    IngestError::MalformedConsensus(format!("bad address {}", fields[5]))
                })?;
                entries.push(ConsensusEntry {
                    fingerprint,
                    flags: BTreeSet::new(),
                    address,
                });
            }
            "s" => {
                let entry = entries.last_mut().ok_or_else(|| {
                    IngestError::MalformedConsensus("s line before any r line".into())
                })?;
                entry.flags = rest
                    .split_whitespace()
                    .filter_map(|f| f.parse::<Flag>().ok())
                    .collect();
            }
            "directory-footer" => break,
            _ => {}
        }
    }

    let valid_after = valid_after
        .ok_or_else(|| IngestError::MalformedConsensus("missing valid-after".into()))?;
    Ok(ConsensusSnapshot {
        valid_after,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_identity(fp: &[u8; 20]) -> String {
        b64().encode(fp)
    }

    fn fixture(n_relays: usize, hsdirs: usize) -> String {
        let mut doc = String::from(
            "network-status-version 3\n\
             vote-status consensus\n\
             consensus-method 17\n\
             valid-after 2015-08-14 00:00:00\n\
             fresh-until 2015-08-14 01:00:00\n\
             valid-until 2015-08-14 03:00:00\n",
        );
        for i in 0..n_relays {
            let mut fp = [0u8; 20];
            fp[0] = i as u8 + 1;
            doc.push_str(&format!(
                "r relay{i} {} AAAAAAAAAAAAAAAAAAAAAAAAAAA 2015-08-13 21:00:00 10.0.0.{} 9001 0\n",
                encode_identity(&fp),
                i + 1
            ));
            let flags = if i < hsdirs {
                "s Fast HSDir Running Stable V2Dir Valid\n"
            } else {
                "s Fast Running Valid\n"
            };
            doc.push_str(flags);
            doc.push_str("v Tor 0.2.6.10\nw Bandwidth=1000\np reject 1-65535\n");
        }
        doc.push_str("directory-footer\n");
        doc
    }

    #[test]
    fn parses_relays_and_hsdir_flags() {
        let snap = parse_consensus(&fixture(5, 3)).unwrap();
        assert_eq!(snap.entries.len(), 5);
        assert_eq!(snap.hsdirs().len(), 3);
        assert_eq!(
            snap.entries[0].fingerprint,
            "0100000000000000000000000000000000000000"
        );
    }

    #[test]
    fn valid_after_echoes() {
        let snap = parse_consensus(&fixture(1, 0)).unwrap();
        assert_eq!(snap.valid_after, parse_timestamp("2015-08-14 00:00:00").unwrap());
    }

    #[test]
    fn empty_relay_section_is_fine() {
        let snap = parse_consensus(&fixture(0, 0)).unwrap();
        assert!(snap.entries.is_empty());
        assert!(snap.hsdirs().is_empty());
    }

    #[test]
    fn missing_valid_after_is_malformed() {
        assert!(matches!(
            parse_consensus("network-status-version 3\n"),
            Err(IngestError::MalformedConsensus(_))
        ));
    }

    #[test]
    fn unknown_flags_are_skipped() {
        let doc = fixture(1, 1).replace("Fast HSDir", "Fast SomeFutureFlag HSDir");
        let snap = parse_consensus(&doc).unwrap();
        assert_eq!(snap.hsdirs().len(), 1);
    }
}
