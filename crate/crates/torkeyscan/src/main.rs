//! Command surface over the library: scan-keys, itos, cluster, recover,
//! gen-fixtures. Exit codes are pipeline-friendly: 0 clean, 2 findings,
//! 1 error, so a cron job can alert on anomalies.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;

use torkeyscan::batchgcd;
use torkeyscan::cluster::{cluster_relays, AttributeVector, ClusterRule, DEFAULT_GAP_TOLERANCE};
use torkeyscan::config::{OutputFormat, ScanConfig};
use torkeyscan::fixtures;
use torkeyscan::hashring::descriptor_id;
use torkeyscan::ingest;
use torkeyscan::keymath::{self, RsaPublicKey};
use torkeyscan::pipeline::{self, PipelineError};
use torkeyscan::report::ReportMeta;

#[derive(Parser)]
#[command(name = "torkeyscan", version, about = "Scan Tor relay archives for anomalous RSA keys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Worker threads (0 = machine default); never changes report bytes
    #[arg(long, global = true, default_value_t = 0, env = "TORKEYSCAN_WORKERS")]
    workers: usize,
    /// Seed for randomized steps
    #[arg(long, global = true, default_value_t = 0, env = "TORKEYSCAN_SEED")]
    seed: u64,
    /// Report format
    #[arg(long, global = true, value_parser = parse_format, default_value = "json", env = "TORKEYSCAN_FORMAT")]
    format: String,
    /// Write the report here instead of stdout
    #[arg(long, global = true, env = "TORKEYSCAN_OUTPUT")]
    output: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<String, String> {
    match s {
        "json" | "csv" => Ok(s.to_string()),
        other => Err(format!("unknown format {other:?}, expected json or csv")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Scan an archive for shared factors, shared moduli, and odd exponents
    ScanKeys {
        /// CollecTor-style archive tree of server descriptors
        #[arg(long, env = "TORKEYSCAN_ARCHIVE", required_unless_present = "moduli")]
        archive: Option<PathBuf>,
        /// Scan a hex-moduli file (one lowercase modulus per line) instead
        #[arg(long, conflicts_with = "archive")]
        moduli: Option<PathBuf>,
        /// Moduli per product-tree chunk (memory knob)
        #[arg(long, default_value_t = batchgcd::DEFAULT_CHUNK_SIZE)]
        chunk_size: usize,
        /// Exponents that are not anomalies
        #[arg(long, value_delimiter = ',', default_value = "65537")]
        exponent_whitelist: Vec<u64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Identify targeted onion services: scan descriptor positions against
    /// suspect HSDir fingerprints
    Itos {
        /// Newline-delimited onion addresses (16-char base32)
        #[arg(long, env = "TORKEYSCAN_SERVICES")]
        services: PathBuf,
        /// Newline-delimited suspect fingerprints (hex, may be truncated)
        #[arg(long, env = "TORKEYSCAN_SUSPECTS")]
        suspects: PathBuf,
        /// First scan date (YYYY-MM-DD)
        #[arg(long)]
        from: NaiveDate,
        /// Last scan date, inclusive
        #[arg(long)]
        to: NaiveDate,
        /// Minimum shared hex digits to report
        #[arg(long, default_value_t = torkeyscan::hashring::DEFAULT_COLLISION_THRESHOLD, env = "TORKEYSCAN_THRESHOLD")]
        threshold: usize,
        /// Consensus directory for responsibility annotation
        #[arg(long)]
        consensus_dir: Option<PathBuf>,
        /// Which hourly consensus represents a day's ring
        #[arg(long, default_value_t = 0)]
        ring_hour: u32,
        /// Use plain days-since-epoch as the time-period rule
        #[arg(long, env = "TORKEYSCAN_NAIVE_DAYS")]
        naive_days: bool,
        /// Rotation periods of lead when mapping dates to descriptors
        #[arg(long, default_value_t = torkeyscan::hashring::DEFAULT_PERIOD_LEAD)]
        lead_days: u32,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Cluster relays from an archive by shared operational attributes
    Cluster {
        #[arg(long, env = "TORKEYSCAN_ARCHIVE")]
        archive: PathBuf,
        /// Consensus directory for real uptime intervals
        #[arg(long)]
        consensus_dir: Option<PathBuf>,
        /// Rules: same-address, same-slash24, same-slash16, ports4,
        /// prefix4, prefix5, uptime, platform
        #[arg(long, value_delimiter = ',', default_value = "same-address,same-slash24,ports4,prefix4")]
        rules: Vec<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Reconstruct a private key from a known factor or a shared modulus
    Recover {
        /// Public key: JSON {"n": hex, "e": hex} or a PEM block
        #[arg(long)]
        key: PathBuf,
        /// A known prime factor of the modulus, hex
        #[arg(long, conflicts_with_all = ["partner", "partner_d"])]
        factor: Option<String>,
        /// Partner key sharing the modulus (same formats as --key)
        #[arg(long, requires = "partner_d")]
        partner: Option<PathBuf>,
        /// The partner key's private exponent, hex
        #[arg(long)]
        partner_d: Option<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Write seeded fixture data: a synthetic archive, a planted moduli
    /// file, and a collision-scan sample
    GenFixtures {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(findings) => {
            if findings {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            eprintln!("torkeyscan: error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool")
        .install(f)
}

fn emit(common: &CommonOpts, text: &str) -> Result<(), PipelineError> {
    match &common.output {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            f.write_all(text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, PipelineError> {
    match cli.command {
        Command::ScanKeys {
            archive,
            moduli,
            chunk_size,
            exponent_whitelist,
            common,
        } => {
            let config = ScanConfig {
                archive: archive.clone(),
                chunk_size,
                exponent_whitelist,
                workers: common.workers,
                seed: common.seed,
                format: if common.format == "csv" {
                    OutputFormat::Csv
                } else {
                    OutputFormat::Json
                },
                ..ScanConfig::default()
            };
            let report = with_pool(common.workers, || match &moduli {
                Some(path) => pipeline::scan_moduli_file(&config, path),
                None => pipeline::scan_keys(&config),
            })?;
            let text = match config.format {
                OutputFormat::Json => report.to_json(),
                OutputFormat::Csv => anomaly_csv(&report),
            };
            emit(&common, &text)?;
            Ok(report.has_findings())
        }
        Command::Itos {
            services,
            suspects,
            from,
            to,
            threshold,
            consensus_dir,
            ring_hour,
            naive_days,
            lead_days,
            common,
        } => {
            let config = ScanConfig {
                from: Some(from),
                to: Some(to),
                threshold,
                naive_days,
                lead_periods: lead_days,
                workers: common.workers,
                seed: common.seed,
                format: if common.format == "csv" {
                    OutputFormat::Csv
                } else {
                    OutputFormat::Json
                },
                ..ScanConfig::default()
            };
            let service_lines = pipeline::read_services(&services)?;
            if service_lines.values.is_empty() && service_lines.skipped > 0 {
                return Err(PipelineError::BadInput(
                    "every line of the services file was invalid".into(),
                ));
            }
            let suspect_lines = pipeline::read_suspects(&suspects)?;
            if suspect_lines.values.is_empty() && suspect_lines.skipped > 0 {
                return Err(PipelineError::BadInput(
                    "every line of the suspects file was invalid".into(),
                ));
            }
            let rings = match &consensus_dir {
                Some(dir) => pipeline::load_rings(dir, ring_hour)?,
                None => Default::default(),
            };
            let report = with_pool(common.workers, || {
                pipeline::itos(&config, &service_lines.values, &suspect_lines.values, &rings)
            })?;
            let text = match config.format {
                OutputFormat::Json => report.to_json(),
                OutputFormat::Csv => report.to_csv(),
            };
            emit(&common, &text)?;
            Ok(!report.events.is_empty())
        }
        Command::Cluster {
            archive,
            consensus_dir,
            rules,
            common,
        } => {
            let rules = parse_rules(&rules)?;
            let scan = with_pool(common.workers, || {
                ingest::scan_archive(&archive, ingest::RoleFilter::Both)
            })?;
            let consensus_history = match &consensus_dir {
                Some(dir) => load_consensus_history(dir)?,
                None => Vec::new(),
            };
            let vectors: Vec<AttributeVector> = scan
                .relays
                .iter()
                .map(|r| {
                    let windows = if consensus_history.is_empty() {
                        vec![(r.first_published, r.last_published)]
                    } else {
                        torkeyscan::cluster::presence_intervals(
                            &r.fingerprint,
                            &consensus_history,
                            DEFAULT_GAP_TOLERANCE,
                        )
                    };
                    AttributeVector {
                        fingerprint: r.fingerprint.clone(),
                        nickname: r.nickname.clone(),
                        address: r.address,
                        or_port: r.or_port,
                        platform: r.platform.clone(),
                        uptime_windows: windows,
                    }
                })
                .collect();
            let clusters = cluster_relays(&vectors, &rules);
            let multi = clusters.iter().any(|c| c.members.len() > 1);
            let config = ScanConfig {
                archive: Some(archive),
                workers: common.workers,
                seed: common.seed,
                ..ScanConfig::default()
            };
            #[derive(serde::Serialize)]
            struct ClusterReport {
                meta: ReportMeta,
                clusters: Vec<torkeyscan::cluster::Cluster>,
            }
            let report = ClusterReport {
                meta: ReportMeta::new(config),
                clusters,
            };
            emit(
                &common,
                &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
            )?;
            Ok(multi)
        }
        Command::Recover {
            key,
            factor,
            partner,
            partner_d,
            common,
        } => {
            let key = read_key(&key)?;
            eprintln!("warning: recovered private keys are for research verification only");
            match (factor, partner) {
                (Some(factor_hex), None) => {
                    let p = parse_hex(&factor_hex)?;
                    let recovered = keymath::recover_from_factor(&key, &p)
                        .map_err(|e| PipelineError::BadInput(e.to_string()))?;
                    emit(
                        &common,
                        &(serde_json::to_string_pretty(&recovered).expect("key serializes")
                            + "\n"),
                    )?;
                    Ok(true)
                }
                (None, Some(partner_path)) => {
                    let partner_key = read_key(&partner_path)?;
                    let d_a = parse_hex(&partner_d.expect("clap enforces partner_d"))?;
                    // the partner holds (e_a, d_a); factor N from them,
                    // then rebuild this key's private half
                    let p = keymath::factor_from_exponents(
                        &partner_key.n,
                        &partner_key.e,
                        &d_a,
                        common.seed,
                    )
                    .map_err(|e| PipelineError::BadInput(e.to_string()))?;
                    if partner_key.n != key.n {
                        return Err(PipelineError::BadInput(
                            "keys do not share a modulus".into(),
                        ));
                    }
                    let recovered = keymath::recover_from_factor(&key, &p)
                        .map_err(|e| PipelineError::BadInput(e.to_string()))?;
                    emit(
                        &common,
                        &(serde_json::to_string_pretty(&recovered).expect("key serializes")
                            + "\n"),
                    )?;
                    Ok(true)
                }
                _ => Err(PipelineError::BadInput(
                    "recover needs --factor or --partner with --partner-d".into(),
                )),
            }
        }
        Command::GenFixtures { out, common } => {
            let seed = common.seed;
            std::fs::create_dir_all(&out)?;

            let archive_dir = out.join("archive");
            let archive = fixtures::write_synthetic_archive(&archive_dir, seed, 8, 2, 1)?;

            let corpus = fixtures::planted_corpus(seed, 200, 256, &[3, 2, 2]);
            let mut moduli_text = String::new();
            for n in &corpus.moduli {
                moduli_text.push_str(&n.to_str_radix(16));
                moduli_text.push('\n');
            }
            std::fs::write(out.join("moduli.hex"), moduli_text)?;

            // one service plus suspects ground to collide with its
            // positions on two days
            let service =
                torkeyscan::hashring::OnionService::from_address("haystacksvvncnvq")
                    .expect("fixture address is valid");
            let params = torkeyscan::pipeline::descriptor_params(&ScanConfig::default());
            let mut suspects_text = String::new();
            let days = [
                NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
                NaiveDate::from_ymd_opt(2016, 1, 2).expect("valid date"),
            ];
            for day in days {
                for replica in torkeyscan::hashring::Replica::ALL {
                    let id = descriptor_id(&service, day, replica, &params);
                    suspects_text.push_str(&id.hex()[..10]);
                    suspects_text.push_str(&"0".repeat(30));
                    suspects_text.push('\n');
                }
            }
            std::fs::write(out.join("suspects.txt"), suspects_text)?;
            std::fs::write(out.join("services.txt"), "haystacksvvncnvq\n")?;

            #[derive(serde::Serialize)]
            struct GroundTruth {
                seed: u64,
                planted_factors: Vec<String>,
                planted_members: Vec<Vec<usize>>,
                archive_shared_factors: Vec<String>,
                itos_window: [NaiveDate; 2],
            }
            let truth = GroundTruth {
                seed,
                planted_factors: corpus
                    .planted
                    .iter()
                    .map(|(p, _)| p.to_str_radix(16))
                    .collect(),
                planted_members: corpus.planted.iter().map(|(_, m)| m.clone()).collect(),
                archive_shared_factors: archive.planted_factor_hex,
                itos_window: [days[0], days[1]],
            };
            std::fs::write(
                out.join("ground-truth.json"),
                serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n",
            )?;
            eprintln!("fixtures written to {}", out.display());
            Ok(false)
        }
    }
}

fn anomaly_csv(report: &torkeyscan::report::AnomalyReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "group_key", "fingerprint", "role", "modulus", "exponent"])
        .expect("csv header");
    let role = |r: &Option<ingest::KeyRole>| match r {
        Some(ingest::KeyRole::Identity) => "identity",
        Some(ingest::KeyRole::Onion) => "onion",
        None => "",
    };
    for g in &report.shared_factor_groups {
        for m in &g.members {
            w.write_record([
                "shared-factor",
                &g.factor,
                m.fingerprint.as_deref().unwrap_or(""),
                role(&m.role),
                &m.modulus,
                m.exponent.as_deref().unwrap_or(""),
            ])
            .expect("csv row");
        }
    }
    for g in &report.shared_moduli_groups {
        for m in &g.members {
            w.write_record([
                "shared-modulus",
                &g.modulus,
                m.fingerprint.as_deref().unwrap_or(""),
                role(&m.role),
                &m.modulus,
                m.exponent.as_deref().unwrap_or(""),
            ])
            .expect("csv row");
        }
    }
    for a in &report.exponent_anomalies {
        w.write_record([
            "exponent",
            &a.exponent,
            a.fingerprint.as_deref().unwrap_or(""),
            match a.role {
                ingest::KeyRole::Identity => "identity",
                ingest::KeyRole::Onion => "onion",
            },
            &a.modulus,
            &a.exponent,
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf8")
}

fn parse_rules(tokens: &[String]) -> Result<Vec<ClusterRule>, PipelineError> {
    tokens
        .iter()
        .map(|t| match t.as_str() {
            "same-address" => Ok(ClusterRule::SameAddress),
            "same-slash24" => Ok(ClusterRule::SameSlash24),
            "same-slash16" => Ok(ClusterRule::SameSlash16),
            "ports4" => Ok(ClusterRule::ArithmeticPorts {
                stride: 4,
                min_run: 3,
            }),
            "prefix4" => Ok(ClusterRule::FingerprintPrefix { hex_digits: 4 }),
            "prefix5" => Ok(ClusterRule::FingerprintPrefix { hex_digits: 5 }),
            "uptime" => Ok(ClusterRule::OverlappingUptime),
            "platform" => Ok(ClusterRule::SamePlatform),
            other => Err(PipelineError::BadInput(format!(
                "unknown cluster rule {other:?}"
            ))),
        })
        .collect()
}

fn load_consensus_history(
    dir: &std::path::Path,
) -> Result<Vec<ingest::ConsensusSnapshot>, PipelineError> {
    let mut history = Vec::new();
    for path in ingest::collect_files(dir)? {
        match ingest::read_documents(&path) {
            Ok(docs) => {
                for doc in docs {
                    match ingest::parse_consensus(&doc.text) {
                        Ok(snapshot) => history.push(snapshot),
                        Err(err) => log::warn!("{}: {err}", doc.name),
                    }
                }
            }
            Err(err) => log::warn!("skipping {}: {err}", path.display()),
        }
    }
    history.sort_by_key(|s| s.valid_after);
    Ok(history)
}

fn read_key(path: &std::path::Path) -> Result<RsaPublicKey, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    if text.contains("-----BEGIN") {
        return RsaPublicKey::from_pem(&text).map_err(|e| PipelineError::BadInput(e.to_string()));
    }
    #[derive(serde::Deserialize)]
    struct KeyJson {
        n: String,
        e: String,
    }
    let parsed: KeyJson = serde_json::from_str(&text)
        .map_err(|e| PipelineError::BadInput(format!("key file is neither PEM nor JSON: {e}")))?;
    Ok(RsaPublicKey::new(parse_hex(&parsed.n)?, parse_hex(&parsed.e)?))
}

fn parse_hex(s: &str) -> Result<BigUint, PipelineError> {
    BigUint::parse_bytes(s.trim().trim_start_matches("0x").as_bytes(), 16)
        .ok_or_else(|| PipelineError::BadInput(format!("not hex: {s:?}")))
}
