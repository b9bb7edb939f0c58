//! Cluster anomalous relays by shared operational attributes.
//!
//! Runs the shared-modulus relay table through two rule sets: the
//! fingerprint-prefix rule alone recovers the four groups, and adding the
//! address rule shows the same operator behind them.
//!
//! ```bash
//! cargo run --example cluster_relays
//! ```

use torkeyscan::cluster::{cluster_relays, ClusterRule};
use torkeyscan::fixtures::shared_modulus_fixture;

fn main() {
    let (_, relays) = shared_modulus_fixture(1);

    println!("fingerprint-prefix rule only:");
    let clusters = cluster_relays(&relays, &[ClusterRule::FingerprintPrefix { hex_digits: 4 }]);
    for cluster in &clusters {
        let prefixes: Vec<&str> = cluster.members.iter().map(|m| &m[..8]).collect();
        println!("  cluster {}: {:?}", cluster.id, prefixes);
    }

    println!("\nprefix + same-address rules:");
    let clusters = cluster_relays(
        &relays,
        &[
            ClusterRule::FingerprintPrefix { hex_digits: 4 },
            ClusterRule::SameAddress,
        ],
    );
    for cluster in &clusters {
        println!("  cluster {} ({} members)", cluster.id, cluster.members.len());
        for line in &cluster.evidence {
            println!("    {line}");
        }
    }
    // the shared hosts merge the prefix groups pairwise: whoever ground
    // those fingerprints also shared machines across the groups
}
