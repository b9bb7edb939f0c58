//! The whole scan pipeline in one program: synthesize an archive with
//! planted weaknesses, scan it, and print the consolidated report.
//!
//! ```bash
//! cargo run --release --example scan_pipeline
//! ```

use torkeyscan::config::ScanConfig;
use torkeyscan::fixtures::write_synthetic_archive;
use torkeyscan::pipeline::scan_keys;

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let archive = write_synthetic_archive(dir.path(), 42, 6, 2, 1).expect("archive writes");
    println!(
        "synthetic archive: {} descriptors, {} planted shared primes\n",
        archive.records.len(),
        archive.planted_factor_hex.len(),
    );

    let config = ScanConfig {
        archive: Some(dir.path().to_path_buf()),
        ..ScanConfig::default()
    };
    let report = scan_keys(&config).expect("scan runs");

    println!("{}", report.to_json());
    assert_eq!(
        report.shared_factor_groups.len(),
        archive.planted_factor_hex.len(),
    );
    eprintln!("scan found exactly the planted groups");
}
