//! Find shared prime factors across a set of moduli.
//!
//! ```bash
//! cargo run --release --example batch_gcd
//! ```

use std::time::Instant;

use num_bigint::BigUint;
use torkeyscan::batchgcd::{batch_gcd, extract_groups, ModulusSet};
use torkeyscan::fixtures::planted_corpus;

fn main() {
    // textbook warm-up: 143=11*13, 187=11*17, 221=13*17
    let set = ModulusSet::from_moduli(vec![
        BigUint::from(143u32),
        BigUint::from(187u32),
        BigUint::from(221u32),
    ]);
    let gcds = batch_gcd(&set);
    println!("toy set gcds: {:?}", gcds.iter().map(|(_, g)| g.to_string()).collect::<Vec<_>>());
    for group in extract_groups(&set, &gcds) {
        println!("  factor {} shared by indices {:?}", group.factor, group.members);
    }

    // a corpus with known ground truth: 2000 moduli of 256 bits, one
    // prime planted into 25 of them, two more planted into pairs
    println!("\nbuilding planted corpus (2000 moduli)...");
    let corpus = planted_corpus(7, 2000, 256, &[25, 2, 2]);
    let set = ModulusSet::from_moduli(corpus.moduli.clone());

    let start = Instant::now();
    let gcds = batch_gcd(&set);
    let groups = extract_groups(&set, &gcds);
    println!("scan took {:?}", start.elapsed());

    for group in &groups {
        println!("  factor {}.. shared by {} moduli", &group.factor[..16], group.members.len());
    }
    assert_eq!(groups.len(), corpus.planted.len());
    println!("recovered all {} planted primes, nothing else", corpus.planted.len());
}
