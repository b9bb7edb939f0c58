//! Minimal DER support for the PKCS#1 `RSAPublicKey` structure.
//!
//! Tor archives relay keys as `SEQUENCE { modulus INTEGER, publicExponent
//! INTEGER }`, and relay fingerprints are SHA-1 digests over exactly these
//! bytes, so the encoding here has to be bit-exact.

use num_bigint::BigUint;
use num_traits::Zero;

use super::KeyMathError;

const TAG_INTEGER: u8 = 0x02;
const TAG_SEQUENCE: u8 = 0x30;

fn encode_len(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = len.to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (bytes.len() - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

fn encode_uint(out: &mut Vec<u8>, n: &BigUint) {
    let mut body = n.to_bytes_be();
    if body.is_empty() {
        body.push(0);
    }
    // INTEGER is signed: prepend 0x00 when the high bit is set
    let pad = body[0] & 0x80 != 0;
    out.push(TAG_INTEGER);
    encode_len(out, body.len() + pad as usize);
    if pad {
        out.push(0);
    }
    out.extend_from_slice(&body);
}

/// DER-encode `(n, e)` as a PKCS#1 `RSAPublicKey`.
pub fn encode_rsa_public(n: &BigUint, e: &BigUint) -> Vec<u8> {
    let mut body = Vec::new();
    encode_uint(&mut body, n);
    encode_uint(&mut body, e);
    let mut out = Vec::with_capacity(body.len() + 4);
    out.push(TAG_SEQUENCE);
    encode_len(&mut out, body.len());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn byte(&mut self) -> Result<u8, KeyMathError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or_else(|| KeyMathError::BadDer("truncated".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn length(&mut self) -> Result<usize, KeyMathError> {
        let first = self.byte()?;
        if first & 0x80 == 0 {
            return Ok(first as usize);
        }
        let count = (first & 0x7f) as usize;
        if count == 0 || count > 8 {
            return Err(KeyMathError::BadDer("bad length form".into()));
        }
        let mut len = 0usize;
        for _ in 0..count {
            len = len
                .checked_shl(8)
                .ok_or_else(|| KeyMathError::BadDer("length overflow".into()))?
                | self.byte()? as usize;
        }
        Ok(len)
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], KeyMathError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| KeyMathError::BadDer("truncated".into()))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn uint(&mut self) -> Result<BigUint, KeyMathError> {
        if self.byte()? != TAG_INTEGER {
            return Err(KeyMathError::BadDer("expected INTEGER".into()));
        }
        let len = self.length()?;
        let body = self.take(len)?;
        if body.is_empty() {
            return Err(KeyMathError::BadDer("empty INTEGER".into()));
        }
        if body[0] & 0x80 != 0 {
            return Err(KeyMathError::BadDer("negative INTEGER".into()));
        }
        Ok(BigUint::from_bytes_be(body))
    }
}

/// Decode a PKCS#1 `RSAPublicKey` into `(n, e)`.
pub fn decode_rsa_public(der: &[u8]) -> Result<(BigUint, BigUint), KeyMathError> {
    let mut r = Reader { buf: der, pos: 0 };
    if r.byte()? != TAG_SEQUENCE {
        return Err(KeyMathError::BadDer("expected SEQUENCE".into()));
    }
    let len = r.length()?;
    if r.pos + len != der.len() {
        return Err(KeyMathError::BadDer("trailing data".into()));
    }
    let n = r.uint()?;
    let e = r.uint()?;
    if r.pos != der.len() {
        return Err(KeyMathError::BadDer("trailing data in SEQUENCE".into()));
    }
    if n.is_zero() {
        return Err(KeyMathError::BadDer("zero modulus".into()));
    }
    Ok((n, e))
}
