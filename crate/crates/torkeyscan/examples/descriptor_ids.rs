//! Compute where an onion service's descriptor sits on the hash ring.
//!
//! ```bash
//! cargo run --example descriptor_ids [address] [YYYY-MM-DD]
//! ```

use chrono::NaiveDate;
use torkeyscan::hashring::{
    descriptor_id, DescriptorIdParams, OnionService, Replica, TimePeriodRule,
};

fn main() {
    let mut args = std::env::args().skip(1);
    let address = args.next().unwrap_or_else(|| "silkroadvb5piz3r".to_string());
    let date: NaiveDate = args
        .next()
        .unwrap_or_else(|| "2013-05-21".to_string())
        .parse()
        .expect("date like 2013-05-21");

    let service = OnionService::from_address(&address).expect("valid onion address");
    println!("service:      {}.onion", service.address);
    println!("permanent-id: {}", hex(&service.permanent_id));

    let params = DescriptorIdParams::default();
    for replica in Replica::ALL {
        let id = descriptor_id(&service, date, replica, &params);
        println!("{date} replica {}: {}", replica.index(), id.hex());
    }

    // the deployed time-period rule staggers rotation per service; the
    // naive day counter differs from it late in the day
    let naive = DescriptorIdParams {
        rule: TimePeriodRule::NaiveDays,
        ..DescriptorIdParams::default()
    };
    let id = descriptor_id(&service, date, Replica::First, &naive);
    println!("{date} replica 0 (naive-days rule): {}", id.hex());

    if address == "silkroadvb5piz3r" && date == NaiveDate::from_ymd_opt(2013, 5, 21).unwrap() {
        // one of the relays that positioned itself next to this
        // descriptor during the May 2013 measurement experiment
        println!("\nknown colliding HSDir:  BC89A92F53581C4F6169");
        println!("replica 0 shares the 5-digit prefix BC89A");
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect()
}
