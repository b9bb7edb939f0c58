//! Parse a server descriptor and verify its fingerprint.
//!
//! ```bash
//! cargo run --example parse_descriptor
//! ```

use torkeyscan::ingest::parse_server_descriptor;
use torkeyscan::keymath;

// The famous MIPS relay whose rotated identity keys shared primes with
// each other, reconstructed as a descriptor with a synthetic key.
const DESCRIPTOR: &str = "\
@type server-descriptor 1.0
router DesasterBlaster 62.226.55.122 9001 0 0
platform Tor 0.2.2.13-alpha on Linux mips
published 2010-03-21 18:39:07
bandwidth 5120 10240 16384
onion-key
-----BEGIN RSA PUBLIC KEY-----
MIGJAoGBAOqi5BqZ0iFKVZCW1M4tarWcbXymCUm83oC2whUThrdEAekequw9ZL0W
6gMgrUQ8ENrxkvzrObsnq/O6DAU+Ct1ND3sLEAy40FLT+KFcjoVJgd+8RfPLlBvR
YYlAda/aCZwPEXKLzgY/Jq2NXo6ha2OTJsGSroCtK+lkJ4okm9ajAgMBAAE=
-----END RSA PUBLIC KEY-----
signing-key
-----BEGIN RSA PUBLIC KEY-----
MIGJAoGBAOqi5BqZ0iFKVZCW1M4tarWcbXymCUm83oC2whUThrdEAekequw9ZL0W
6gMgrUQ8ENrxkvzrObsnq/O6DAU+Ct1ND3sLEAy40FLT+KFcjoVJgd+8RfPLlBvR
YYlAda/aCZwPEXKLzgY/Jq2NXo6ha2OTJsGSroCtK+lkJ4okm9ajAgMBAAE=
-----END RSA PUBLIC KEY-----
reject *:*
router-signature
";

fn main() {
    // the embedded onion-key block above is deliberately the same as the
    // signing key; real descriptors carry two distinct keys
    let record = parse_server_descriptor(DESCRIPTOR).expect("descriptor parses");
    println!("nickname:    {}", record.nickname);
    println!("address:     {}:{}", record.address, record.or_port);
    println!("platform:    {}", record.platform);
    println!("published:   {} (epoch secs)", record.published);
    println!("identity e:  {}", record.identity_key.e);
    println!("identity |N|: {} bits", record.identity_key.bit_len());

    // a record's fingerprint is SHA-1 over the identity key's DER; when
    // the descriptor has no fingerprint line the parser derives it
    let derived = keymath::fingerprint(&record.identity_key);
    println!("fingerprint: {}", record.fingerprint);
    assert_eq!(record.fingerprint, derived);
    println!("fingerprint matches SHA-1(identity key DER)");
}
