//! Server-descriptor parsing.

use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::{parse_timestamp, IngestError};
use crate::keymath::{self, RsaPublicKey};

/// One relay observation as published in a server descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayRecord {
    /// 40 uppercase hex chars; taken from the descriptor when present,
    /// otherwise recomputed as SHA-1 over the signing key DER.
    pub fingerprint: String,
    pub nickname: String,
    pub address: IpAddr,
    pub or_port: u16,
    pub dir_port: u16,
    pub platform: String,
    /// `published` line, UTC epoch seconds.
    pub published: i64,
    #[serde(with = "key_hex")]
    pub identity_key: RsaPublicKey,
    #[serde(with = "key_hex")]
    pub onion_key: RsaPublicKey,
}

mod key_hex {
    use super::*;
    use num_bigint::BigUint;
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
        let parse = |s: &String| {
            BigUint::parse_bytes(s.as_bytes(), 16)
                .ok_or_else(|| serde::de::Error::custom("bad key hex"))
        };
        Ok(RsaPublicKey::new(parse(&h.n)?, parse(&h.e)?))
    }
}

/// Split a text blob into individual descriptors.
///
/// Archive files concatenate descriptors; each one starts at a `router`
/// line (annotation lines such as `@type` in between belong to the next
/// descriptor and are ignored by the parser).
pub fn split_descriptors(raw: &str) -> impl Iterator<Item = &str> {
    let mut starts: Vec<usize> = Vec::new();
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        if line.starts_with("router ") || line.starts_with("opt router ") {
            starts.push(offset);
        }
        offset += line.len();
    }
    let mut bounds = Vec::with_capacity(starts.len());
    for (i, s) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(raw.len());
        bounds.push((*s, end));
    }
    bounds.into_iter().map(move |(s, e)| &raw[s..e])
}

struct Lines<'a> {
    iter: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(raw: &'a str) -> Self {
        Lines {
            iter: raw.lines().peekable(),
        }
    }

    /// Next (keyword, arguments) item, with any `opt ` prefix stripped.
    fn next_item(&mut self) -> Option<(&'a str, &'a str)> {
        for line in self.iter.by_ref() {
            let line = line.strip_prefix("opt ").unwrap_or(line);
            if line.is_empty() || line.starts_with('@') {
                continue;
            }
            let (kw, rest) = match line.split_once(char::is_whitespace) {
                Some((kw, rest)) => (kw, rest.trim_start()),
                None => (line, ""),
            };
            return Some((kw, rest));
        }
        None
    }

    /// Collect a PEM object that follows a keyword line.
    fn pem_block(&mut self) -> Result<String, IngestError> {
        let mut block = String::new();
        let mut armored = false;
        for line in self.iter.by_ref() {
            if line.starts_with("-----BEGIN") {
                armored = true;
            }
            if armored {
                block.push_str(line);
                block.push('\n');
            }
            if line.starts_with("-----END") {
                return Ok(block);
            }
        }
        Err(IngestError::MalformedDescriptor(
            "unterminated key block".into(),
        ))
    }
}

/// Parse one server descriptor in the archived text format.
pub fn parse_server_descriptor(raw: &str) -> Result<RelayRecord, IngestError> {
    let mut lines = Lines::new(raw);

    let mut router: Option<(String, IpAddr, u16, u16)> = None;
    let mut platform = None;
    let mut published = None;
    let mut declared_fingerprint: Option<String> = None;
    let mut identity_key = None;
    let mut onion_key = None;

    while let Some((kw, rest)) = lines.next_item() {
        match kw {
            "router" => {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.len() < 5 {
                    return Err(IngestError::MalformedDescriptor(format!(
                        "router line has {} fields, expected 5",
                        fields.len()
                    )));
                }
                let address: IpAddr = fields[1].parse().map_err(|_| {
                    IngestError::MalformedDescriptor(format!("bad address {}", fields[1]))
                })?;
                let port = |s: &str, what: &str| {
                    s.parse::<u16>().map_err(|_| {
                        IngestError::MalformedDescriptor(format!("bad {what} port {s}"))
                    })
                };
                router = Some((
                    fields[0].to_string(),
                    address,
                    port(fields[2], "OR")?,
                    port(fields[4], "dir")?,
                ));
            }
            "platform" => platform = Some(rest.to_string()),
            "published" => {
                published = Some(parse_timestamp(rest).ok_or_else(|| {
                    IngestError::MalformedDescriptor(format!("bad published time {rest}"))
                })?);
            }
            "fingerprint" => {
                let hex: String = rest.split_whitespace().collect();
                if hex.len() == 40 && hex.bytes().all(|b| b.is_ascii_hexdigit()) {
                    declared_fingerprint = Some(hex.to_ascii_uppercase());
                } else {
                    return Err(IngestError::MalformedDescriptor(format!(
                        "bad fingerprint line {rest}"
                    )));
                }
            }
            "signing-key" => {
                let block = lines.pem_block()?;
                identity_key = Some(RsaPublicKey::from_pem(&block)?);
            }
            "onion-key" => {
                let block = lines.pem_block()?;
                onion_key = Some(RsaPublicKey::from_pem(&block)?);
            }
            // formats gained lines over the years; anything else is noise
            _ => {}
        }
    }

    let (nickname, address, or_port, dir_port) = router
        .ok_or_else(|| IngestError::MalformedDescriptor("missing router line".into()))?;
    let platform =
        platform.ok_or_else(|| IngestError::MalformedDescriptor("missing platform".into()))?;
    let published =
        published.ok_or_else(|| IngestError::MalformedDescriptor("missing published".into()))?;
    let identity_key = identity_key
        .ok_or_else(|| IngestError::MalformedDescriptor("missing signing-key".into()))?;
    let onion_key =
        onion_key.ok_or_else(|| IngestError::MalformedDescriptor("missing onion-key".into()))?;

    for (key, what) in [(&identity_key, "signing-key"), (&onion_key, "onion-key")] {
        if key.n.bits() == 0 {
            return Err(IngestError::MalformedDescriptor(format!(
                "{what} has a zero modulus"
            )));
        }
    }

    let fingerprint =
        declared_fingerprint.unwrap_or_else(|| keymath::fingerprint(&identity_key));

    Ok(RelayRecord {
        fingerprint,
        nickname,
        address,
        or_port,
        dir_port,
        platform,
        published,
        identity_key,
        onion_key,
    })
}
