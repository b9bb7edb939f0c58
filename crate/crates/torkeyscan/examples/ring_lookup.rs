//! Successor lookup on the HSDir hash ring, wraparound included.
//!
//! ```bash
//! cargo run --example ring_lookup
//! ```

use torkeyscan::hashring::{responsible_hsdirs, RingSnapshot};

fn fp(prefix: u8) -> [u8; 20] {
    let mut out = [0u8; 20];
    out[0] = prefix;
    out
}

fn show(bytes: &[u8; 20]) -> String {
    format!("{:02X}..", bytes[0])
}

fn main() {
    // a toy ring of six HSDirs, identified by their leading byte
    let ring = RingSnapshot::new(
        0,
        vec![fp(0x10), fp(0x35), fp(0x6A), fp(0x9C), fp(0xC1), fp(0xEE)],
    );
    println!("ring ({} HSDirs):", ring.len());
    for dir in ring.hsdirs() {
        println!("  {}", show(dir));
    }

    for probe in [0x00u8, 0x36, 0x9C, 0xF5] {
        let id = fp(probe);
        let responsible = responsible_hsdirs(&ring, &id).expect("ring is big enough");
        println!(
            "descriptor {} -> responsible: {}, {}, {}",
            show(&id),
            show(&responsible[0]),
            show(&responsible[1]),
            show(&responsible[2]),
        );
    }
    // note 0x9C: equal fingerprints are not successors, and 0xF5 wraps
    // past the top of the ring back to 0x10
}
