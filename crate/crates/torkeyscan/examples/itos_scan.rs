//! Identify a targeted onion service: scan suspect HSDir fingerprints
//! against a service's descriptor positions over a date window.
//!
//! The data is the August 2015 attack on a Chinese-language forum: nine
//! relays positioned themselves over both replicas on two consecutive
//! days.
//!
//! ```bash
//! cargo run --example itos_scan
//! ```

use std::collections::BTreeMap;

use chrono::NaiveDate;
use torkeyscan::hashring::{scan_collisions, DescriptorIdParams, OnionService, Suspect};
use torkeyscan::report::summarize_services;

// truncated fingerprints of the nine relays involved
const SUSPECTS: [&str; 9] = [
    "325CAC0B7FA8CD77E39D",
    "325CAC0AB1AAD27493B9",
    "325CAC0A43B2121B81CD",
    "FA256741ED22FD96AF5A",
    "FA256743ACFCA9B7C85D",
    "E5E778326AF0FF0A634A",
    "A5C59B3D0FFBDE88405E",
    "A5C59B3FCCD2FA8FAD42",
    "A5C59B3FD5625A0D85D1",
];

fn main() {
    let service = OnionService::from_address("22u75kqyl666joi2").expect("valid address");
    let suspects: Vec<Suspect> = SUSPECTS
        .iter()
        .map(|s| Suspect::parse(s).expect("valid fingerprint"))
        .collect();
    let dates: Vec<NaiveDate> = ["2015-08-14", "2015-08-15"]
        .iter()
        .map(|d| d.parse().expect("valid date"))
        .collect();

    let events = scan_collisions(
        &[service],
        &suspects,
        &dates,
        &BTreeMap::new(), // no consensus data: responsibility stays unknown
        &DescriptorIdParams::default(),
        5,
    );

    println!("{} collision events:", events.len());
    for event in &events {
        println!(
            "  {} replica {}: HSDir {} vs descriptor {} ({} shared hex digits)",
            event.date,
            event.replica.index(),
            event.hsdir_fingerprint,
            &event.descriptor_id[..20],
            event.shared_prefix_len,
        );
    }

    for summary in summarize_services(&events) {
        println!(
            "\n{}.onion: {} events, {} day(s), replicas covered: {}, consecutive: {}",
            summary.service,
            summary.events,
            summary.days_attacked,
            summary.replicas_covered,
            summary.consecutive_days,
        );
    }
}
