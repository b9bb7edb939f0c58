//! PEM armor handling for the `RSA PUBLIC KEY` blocks found in descriptors.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::KeyMathError;

const BEGIN: &str = "-----BEGIN RSA PUBLIC KEY-----";
const END: &str = "-----END RSA PUBLIC KEY-----";

/// Decode the base64 body of a Tor-style `RSA PUBLIC KEY` PEM block.
///
/// Accepts the block with or without the armor lines; descriptor parsing
/// hands over the lines between the key-word and the end of the block.
pub fn decode_public_block(block: &str) -> Result<Vec<u8>, KeyMathError> {
    let mut body = String::new();
    let mut seen_begin = false;
    let mut seen_end = false;
    for line in block.lines() {
        let line = line.trim();
        if line == BEGIN {
            seen_begin = true;
            body.clear();
            continue;
        }
        if line == END {
            seen_end = true;
            break;
        }
        if line.starts_with("-----") {
            return Err(KeyMathError::BadPem(format!("unexpected armor: {line}")));
        }
        body.push_str(line);
    }
    if seen_begin && !seen_end {
        return Err(KeyMathError::BadPem("missing END line".into()));
    }
    if body.is_empty() {
        return Err(KeyMathError::BadPem("empty key block".into()));
    }
    STANDARD
        .decode(body.as_bytes())
        .map_err(|e| KeyMathError::BadPem(format!("base64: {e}")))
}

/// Re-armor DER bytes as the PEM block Tor descriptors carry.
pub fn encode_public_block(der: &[u8]) -> String {
    let b64 = STANDARD.encode(der);
    let mut out = String::with_capacity(b64.len() + 64);
    out.push_str(BEGIN);
    out.push('\n');
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(END);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn armor_round_trip() {
        let der = vec![0x30, 0x07, 0x02, 0x02, 0x0c, 0xa1, 0x02, 0x01, 0x11];
        let pem = encode_public_block(&der);
        assert!(pem.starts_with(BEGIN));
        assert_eq!(decode_public_block(&pem).unwrap(), der);
    }

    #[test]
    fn missing_end_is_an_error() {
        let pem = format!("{BEGIN}\nAAAA\n");
        assert!(decode_public_block(&pem).is_err());
    }

    #[test]
    fn bad_base64_is_an_error() {
        let pem = format!("{BEGIN}\n!!!!\n{END}\n");
        assert!(decode_public_block(&pem).is_err());
    }
}
