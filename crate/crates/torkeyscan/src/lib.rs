//! Forensic analysis of RSA keys in archived Tor relay documents.
//!
//! The toolkit answers three questions about a relay-key archive:
//!
//! 1. Are any keys weak or anomalous? ([`batchgcd`] finds shared prime
//!    factors across millions of moduli, duplicate moduli, and
//!    non-standard exponents; [`keymath`] turns a shared factor or shared
//!    modulus into the reconstructed private key that proves the finding.)
//! 2. Who ran the affected relays? ([`cluster`] groups flagged relays by
//!    shared addresses, ports, fingerprint prefixes, and uptimes.)
//! 3. What were they after? ([`hashring`] rebuilds onion-service
//!    descriptor positions day by day and reports relays whose
//!    fingerprints landed suspiciously close to a service's descriptor.)
//!
//! [`ingest`] feeds all of this from CollecTor-style archives, and
//! [`report`] shapes findings into stable JSON/CSV.
//!
//! The `examples/` directory has a runnable program per capability; the
//! `torkeyscan` binary wires them into a scanning pipeline.

pub mod batchgcd;
pub mod cluster;
pub mod config;
pub mod fixtures;
pub mod hashring;
pub mod ingest;
pub mod keymath;
pub mod pipeline;
pub mod report;
