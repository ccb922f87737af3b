//! Subcommand implementations. Every command validates its arguments
//! before touching state; exit codes are stable: 0 success, 1 I/O,
//! 2 validation.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use posthorn::adversary::{
    distinguisher, dos_drain, project, roles_to_labels, scan_repeated_bodies, DrainReport,
};
use posthorn::channels::{extract_carrier, transport_encode};
use posthorn::codec::{build_get, build_onion, max_onion_payload, unpad, OnionPlan};
use posthorn::crypto::{decode_key_file, encode_key_file, keygen, PublicKey, SecretKey, SuiteId};
use posthorn::gateway::{client, serve, GatewayConfig};
use posthorn::sim::{
    mean_chain_length, run, ReceiverSpec, SenderSpec, SimConfig, SimError, SimReport, TraceEvent,
};

use crate::svg;

#[derive(Debug)]
pub enum CliError {
    /// File system or network trouble: exit 1.
    Io(String),
    /// Bad arguments or configuration: exit 2.
    Validation(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, data).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_mailbox(text: &str) -> Result<u128, CliError> {
    let trimmed = text.trim().trim_start_matches("0x");
    u128::from_str_radix(trimmed, 16)
        .map_err(|e| CliError::Validation(format!("mailbox must be hex: {e}")))
}

fn load_keys(path: &Path) -> Result<(PublicKey, Option<SecretKey>), CliError> {
    let bytes = read_file(path)?;
    decode_key_file(&bytes)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Parse `url=keyfile,url=keyfile,...` into a loaded onion path.
fn parse_path_spec(spec: &str) -> Result<Vec<(String, PublicKey)>, CliError> {
    let mut path = Vec::new();
    for part in spec.split(',') {
        let (url, keyfile) = part.split_once('=').ok_or_else(|| {
            CliError::Validation(format!(
                "path element {part:?} must look like url=keyfile"
            ))
        })?;
        let (public, _) = load_keys(Path::new(keyfile))?;
        path.push((url.trim().to_string(), public));
    }
    if path.is_empty() {
        return Err(CliError::Validation("path spec is empty".into()));
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// keygen
// ---------------------------------------------------------------------------

pub fn cmd_keygen(
    suite: &str,
    seed: u64,
    out: &Path,
    public_out: Option<&Path>,
) -> Result<(), CliError> {
    let suite = SuiteId::parse(suite)
        .map_err(|_| CliError::Validation(format!("unknown suite {suite:?}")))?;
    let pair = keygen(suite, seed);
    write_file(out, &encode_key_file(&pair, true))?;
    println!("wrote {} ({} key pair, seed {seed})", out.display(), suite);
    if let Some(public_path) = public_out {
        write_file(public_path, &encode_key_file(&pair, false))?;
        println!("wrote {} (public only)", public_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// send
// ---------------------------------------------------------------------------

pub struct SendArgs<'a> {
    pub payload: &'a Path,
    pub path_spec: &'a str,
    pub mailbox: &'a str,
    pub via: SendVia,
    pub seed: u64,
    pub surfers: usize,
    pub ticks: u64,
    pub slot_out: Option<&'a Path>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SendVia {
    /// POST the slot to the first hop over HTTP.
    Http,
    /// Inject the message into a deterministic simulation and report the
    /// delivery tick.
    Sim,
    /// Build and print the plan without submitting.
    DryRun,
}

fn print_plan(plan: &OnionPlan, payload_len: usize, capacity: usize) {
    println!("onion plan:");
    println!("  first hop: {}", plan.first_hop);
    println!("  payload: {payload_len} bytes (path capacity {capacity})");
    for (i, (url, digest)) in plan.per_hop_acks.iter().enumerate() {
        println!("  hop {i} {url} expects ack {}", digest.to_hex());
    }
}

pub fn cmd_send(args: SendArgs<'_>) -> Result<(), CliError> {
    let payload = read_file(args.payload)?;
    let path = parse_path_spec(args.path_spec)?;
    let mailbox = parse_mailbox(args.mailbox)?;
    let urls: Vec<&str> = path.iter().map(|(u, _)| u.as_str()).collect();
    let suite = path[0].1.suite;
    let capacity = max_onion_payload(suite, &urls)
        .ok_or_else(|| CliError::Validation("path layers leave no payload capacity".into()))?;
    if payload.len() > capacity {
        return Err(CliError::Validation(format!(
            "payload of {} bytes exceeds this path's capacity of {capacity} bytes \
             (slot 4096 minus per-layer headers and ciphertext overhead)",
            payload.len()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let plan = build_onion(&payload, &path, mailbox, &mut rng)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    print_plan(&plan, payload.len(), capacity);
    if let Some(slot_out) = args.slot_out {
        write_file(slot_out, plan.first_slot.to_hex_dump().as_bytes())?;
        println!("  slot dump: {}", slot_out.display());
    }

    match args.via {
        SendVia::DryRun => {
            println!("dry run: not submitted");
            Ok(())
        }
        SendVia::Http => {
            let response = client::post_form(
                &plan.first_hop,
                None,
                "m",
                &transport_encode(plan.first_slot.as_bytes()),
            )
            .map_err(|e| CliError::Io(format!("submit to {}: {e}", plan.first_hop)))?;
            let class = if extract_carrier(&String::from_utf8_lossy(&response.body)).is_some() {
                "carrier"
            } else {
                "static"
            };
            println!(
                "submitted: HTTP {} ({} bytes, {class} response)",
                response.status, response.raw_len
            );
            Ok(())
        }
        SendVia::Sim => {
            let n_nodes = path.len().max(2);
            let config = SimConfig {
                n_nodes,
                n_linkers: n_nodes,
                n_surfers: args.surfers,
                senders: vec![SenderSpec {
                    payload,
                    path: (0..path.len()).collect(),
                    mailbox,
                    submit_tick: 0,
                }],
                receivers: vec![ReceiverSpec {
                    mailbox,
                    node: path.len() - 1,
                    poll_rate: 0.05,
                }],
                surfer_visit_rate: 0.2,
                trickle: true,
                seed: args.seed,
                max_ticks: args.ticks,
                ..SimConfig::default()
            };
            let report = run(&config).map_err(|e| CliError::Validation(e.to_string()))?;
            match report.delivered[0].delivered_tick {
                Some(tick) => println!("simulated delivery at tick {tick} (seed {})", args.seed),
                None => println!(
                    "undelivered within {} ticks (seed {})",
                    args.ticks, args.seed
                ),
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// poll
// ---------------------------------------------------------------------------

pub fn cmd_poll(
    node_url: &str,
    mailbox: &str,
    key: &Path,
    out: Option<&Path>,
    attempts: u32,
    seed: u64,
) -> Result<(), CliError> {
    let (public, _) = load_keys(key)?;
    let mailbox = parse_mailbox(mailbox)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for attempt in 1..=attempts.max(1) {
        let get = build_get(mailbox, &public, &mut rng)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let response = client::post_form(
            node_url,
            None,
            "m",
            &transport_encode(get.as_bytes()),
        )
        .map_err(|e| CliError::Io(format!("poll {node_url}: {e}")))?;
        let html = String::from_utf8_lossy(&response.body).to_string();
        if let Some((slot, _target)) = extract_carrier(&html) {
            if let Ok(payload) = unpad(&slot) {
                match out {
                    Some(path) => {
                        write_file(path, payload)?;
                        println!(
                            "attempt {attempt}: received {} bytes into {}",
                            payload.len(),
                            path.display()
                        );
                    }
                    None => println!(
                        "attempt {attempt}: received {} bytes: {}",
                        payload.len(),
                        hex::encode(payload)
                    ),
                }
                return Ok(());
            }
            println!("attempt {attempt}: carried slot was not recognizable (cover traffic)");
        } else {
            println!("attempt {attempt}: static response");
        }
    }
    println!("no mailbox content after {attempts} attempts");
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn summarize(report: &SimReport) -> String {
    let mut text = String::new();
    match mean_chain_length(report) {
        Ok(mean) => text.push_str(&format!(
            "mean chain length: {mean:.4} over {} visits\n",
            report.carry_chain_lengths.len()
        )),
        Err(_) => text.push_str("mean chain length: no chains recorded\n"),
    }
    for outcome in &report.delivered {
        match outcome.delivered_tick {
            Some(tick) => text.push_str(&format!(
                "sender {}: delivered at tick {tick} (latency {})\n",
                outcome.sender,
                tick.saturating_sub(report.config.senders[outcome.sender].submit_tick)
            )),
            None => text.push_str(&format!("sender {}: undelivered\n", outcome.sender)),
        }
    }
    let labels = roles_to_labels(report);
    match distinguisher(&project(&report.trace), &labels) {
        Ok(result) => text.push_str(&format!(
            "distinguisher accuracy: {:.4} over {} held-out clients\n  {}\n",
            result.accuracy, result.n_trials, result.feature_set
        )),
        Err(e) => text.push_str(&format!("distinguisher: skipped ({e})\n")),
    }
    text.push_str(&format!(
        "repeated carrier bodies: {}\n",
        scan_repeated_bodies(&report.trace)
    ));
    for (i, end) in report.end_state.iter().enumerate() {
        text.push_str(&format!(
            "node {i} end state: pool {} (unacked {}), ack table {}, mailbox slots {}\n",
            end.pool, end.unacked, end.ack_table, end.mailbox_slots
        ));
    }
    text
}

/// Command-line mirrors of the scalar config fields; every `Some` value
/// overrides what the config file (or the default) says.
#[derive(Debug, Default)]
pub struct SimOverrides {
    pub n_nodes: Option<usize>,
    pub n_linkers: Option<usize>,
    pub n_surfers: Option<usize>,
    pub surfer_visit_rate: Option<f64>,
    pub coin_bias: Option<f64>,
    pub trickle: Option<bool>,
    pub seed: Option<u64>,
    pub max_ticks: Option<u64>,
    pub suite: Option<String>,
    pub ack_enabled: Option<bool>,
    pub retry_interval: Option<u64>,
    pub retry_max: Option<u32>,
    pub broken_double_post: Option<bool>,
}

impl SimOverrides {
    fn apply(self, config: &mut SimConfig) -> Result<(), CliError> {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    config.$field = v;
                }
            };
        }
        set!(n_nodes);
        set!(n_linkers);
        set!(n_surfers);
        set!(surfer_visit_rate);
        set!(coin_bias);
        set!(trickle);
        set!(seed);
        set!(max_ticks);
        set!(ack_enabled);
        set!(broken_double_post);
        set!(retry_interval);
        if let Some(max) = self.retry_max {
            config.retry_max = Some(max);
        }
        if let Some(name) = self.suite {
            config.suite = SuiteId::parse(&name)
                .map_err(|_| CliError::Validation(format!("unknown suite {name:?}")))?;
        }
        Ok(())
    }
}

pub fn cmd_simulate(
    config_path: Option<&Path>,
    out_dir: &Path,
    overrides: SimOverrides,
) -> Result<(), CliError> {
    let mut config: SimConfig = match config_path {
        Some(path) => {
            let raw = read_file(path)?;
            serde_json::from_slice(&raw)
                .map_err(|e| CliError::Validation(format!("config parse: {e}")))?
        }
        None => SimConfig::default(),
    };
    overrides.apply(&mut config)?;
    config.validate().map_err(|e| match e {
        SimError::InvalidConfig(errs) => {
            CliError::Validation(format!("config rejected:\n  {}", errs.join("\n  ")))
        }
        other => CliError::Validation(other.to_string()),
    })?;
    let report = run(&config).map_err(|e| CliError::Validation(e.to_string()))?;

    // The trace goes to its own line-delimited file; the report document
    // holds everything else.
    let mut trace_lines = String::new();
    for event in &report.trace {
        trace_lines.push_str(&serde_json::to_string(event).expect("trace event serializes"));
        trace_lines.push('\n');
    }
    let mut doc = report.clone();
    doc.trace = Vec::new();
    write_file(
        &out_dir.join("report.json"),
        serde_json::to_string_pretty(&doc)
            .expect("report serializes")
            .as_bytes(),
    )?;
    write_file(&out_dir.join("trace.jsonl"), trace_lines.as_bytes())?;
    let summary = summarize(&report);
    write_file(&out_dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    println!("report written to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AttackMode {
    /// Frameset-fetch pool drain, with or without acknowledgements.
    Drain,
    /// Re-send linkage: repeated carrier bodies under the byte suite
    /// versus the re-encrypting suite.
    Resend,
}

fn drain_summary(report: &DrainReport) -> String {
    let mut text = format!(
        "acknowledgements {}: pool started at {}, {} fetches\n",
        if report.ack_enabled { "on" } else { "off" },
        report.initial_pool,
        report.fetches
    );
    match report.drained_at {
        Some(t) => text.push_str(&format!("pool drained to zero after {t} fetches\n")),
        None => text.push_str(&format!(
            "pool never drained; {} real messages still pending\n",
            report.pending_real_after
        )),
    }
    if let Some(recovered) = report.delivered_after_recovery {
        text.push_str(&format!(
            "recovery after attack: {}\n",
            if recovered {
                "delivered and acknowledged, tables empty"
            } else {
                "incomplete"
            }
        ));
    }
    text
}

pub fn cmd_attack(
    mode: AttackMode,
    ack: bool,
    pool: usize,
    fetches: u64,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    match mode {
        AttackMode::Drain => {
            if pool == 0 {
                return Err(CliError::Validation("pool must hold at least 1 message".into()));
            }
            let report = dos_drain(ack, pool, fetches, seed);
            print!("{}", drain_summary(&report));
            if let Some(dir) = out {
                write_file(
                    &dir.join("attack.json"),
                    serde_json::to_string_pretty(&report)
                        .expect("report serializes")
                        .as_bytes(),
                )?;
                println!("drain report written to {}", dir.display());
            }
            Ok(())
        }
        AttackMode::Resend => {
            let config_for = |suite: SuiteId| SimConfig {
                n_nodes: 2,
                n_linkers: 2,
                n_surfers: 8,
                suite,
                senders: vec![SenderSpec {
                    payload: b"resend linkage probe".to_vec(),
                    path: vec![0, 1],
                    mailbox: 1,
                    submit_tick: 0,
                }],
                receivers: vec![ReceiverSpec {
                    mailbox: 1,
                    node: 1,
                    poll_rate: 0.05,
                }],
                surfer_visit_rate: 0.4,
                trickle: true,
                retry_interval: 1,
                retry_max: Some(6),
                seed,
                max_ticks: 120,
                ..SimConfig::default()
            };
            let byte_report = run(&config_for(SuiteId::Test))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let ure_report = run(&config_for(SuiteId::Ure))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let byte_repeats = scan_repeated_bodies(&byte_report.trace);
            let ure_repeats = scan_repeated_bodies(&ure_report.trace);
            println!("repeated carrier bodies, byte suite: {byte_repeats}");
            println!("repeated carrier bodies, re-encrypting suite: {ure_repeats}");
            if let Some(dir) = out {
                let doc = serde_json::json!({
                    "byte_suite_repeats": byte_repeats,
                    "ure_suite_repeats": ure_repeats,
                    "seed": seed,
                });
                write_file(
                    &dir.join("attack.json"),
                    serde_json::to_string_pretty(&doc).unwrap().as_bytes(),
                )?;
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(report_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let raw = read_file(report_path)?;
    let mut report: SimReport = serde_json::from_slice(&raw)
        .map_err(|e| CliError::Validation(format!("report parse: {e}")))?;
    // Re-attach the trace when its side file is present.
    let trace_path = report_path.with_file_name("trace.jsonl");
    if report.trace.is_empty() && trace_path.exists() {
        let lines = read_file(&trace_path)?;
        for line in String::from_utf8_lossy(&lines).lines() {
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent = serde_json::from_str(line)
                .map_err(|e| CliError::Validation(format!("trace parse: {e}")))?;
            report.trace.push(event);
        }
    }

    let pool_series: Vec<(String, Vec<u32>)> = report
        .pool_sizes_over_time
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("node{i}"), s.clone()))
        .collect();
    write_file(
        &out_dir.join("pool_sizes.svg"),
        svg::line_chart("pool sizes over time", &pool_series).as_bytes(),
    )?;
    write_file(
        &out_dir.join("chain_histogram.svg"),
        svg::histogram("visit chain lengths", &report.carry_chain_lengths).as_bytes(),
    )?;
    write_file(&out_dir.join("summary.txt"), summarize(&report).as_bytes())?;
    println!("charts written to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

/// File-based gateway configuration; the environment variable
/// `POSTHORN_GATEWAY_CONFIG` names the file and command-line flags
/// override its fields.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeFileConfig {
    pub listen: Option<String>,
    pub public_url: Option<String>,
    pub key: Option<PathBuf>,
    pub peers: Vec<String>,
    pub snapshot: Option<PathBuf>,
    pub banner: Option<PathBuf>,
    pub coin_bias: Option<f64>,
    pub trickle: Option<bool>,
    pub retry_interval: Option<u64>,
    pub retry_max: Option<u32>,
    pub seed: Option<u64>,
}

pub struct ServeArgs {
    pub listen: Option<String>,
    pub public_url: Option<String>,
    pub key: Option<PathBuf>,
    pub peers: Vec<String>,
    pub snapshot: Option<PathBuf>,
    pub banner: Option<PathBuf>,
    pub coin_bias: Option<f64>,
    pub trickle: bool,
    pub retry_interval: Option<u64>,
    pub seed: Option<u64>,
}

pub fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let file_config = match std::env::var_os("POSTHORN_GATEWAY_CONFIG") {
        Some(path) => {
            let raw = read_file(Path::new(&path))?;
            serde_json::from_slice::<ServeFileConfig>(&raw)
                .map_err(|e| CliError::Validation(format!("gateway config parse: {e}")))?
        }
        None => ServeFileConfig::default(),
    };

    let listen = args
        .listen
        .or(file_config.listen)
        .ok_or_else(|| CliError::Validation("missing --listen (or config listen)".into()))?;
    let public_url = args
        .public_url
        .or(file_config.public_url)
        .ok_or_else(|| CliError::Validation("missing --public-url".into()))?;
    let key_path = args
        .key
        .or(file_config.key)
        .ok_or_else(|| CliError::Validation("missing --key".into()))?;
    let (public, secret) = load_keys(&key_path)?;
    let Some(secret) = secret else {
        return Err(CliError::Validation(format!(
            "{} holds no secret key; a node cannot decrypt without one",
            key_path.display()
        )));
    };
    let keypair = posthorn::crypto::KeyPair { public, secret };

    let mut config = GatewayConfig::new(listen, public_url);
    config.peers = if args.peers.is_empty() {
        file_config.peers
    } else {
        args.peers
    };
    if let Some(bias) = args.coin_bias.or(file_config.coin_bias) {
        if !(0.0..=1.0).contains(&bias) {
            return Err(CliError::Validation(format!(
                "coin bias {bias} outside [0, 1]"
            )));
        }
        config.coin_bias = bias;
    }
    config.trickle = args.trickle || file_config.trickle.unwrap_or(false);
    if let Some(interval) = args.retry_interval.or(file_config.retry_interval) {
        config.retry_interval = interval;
    }
    if let Some(max) = file_config.retry_max {
        config.retry_max = Some(max);
    }
    config.snapshot_path = args.snapshot.or(file_config.snapshot);
    if let Some(banner_path) = args.banner.or(file_config.banner) {
        config.banner = Some(read_file(&banner_path)?);
    }
    config.rng_seed = args.seed.or(file_config.seed).unwrap_or(0);

    let gateway =
        serve(config, keypair).map_err(|e| CliError::Io(format!("gateway start: {e}")))?;
    println!("listening on {}", gateway.local_addr());
    println!("routes: POST /mix, GET /frameset, GET /banner.img, GET /health");
    println!("press enter (or close stdin) to stop");
    std::io::stdout().flush().ok();

    let mut line = String::new();
    let _ = std::io::stdin().read_line(&mut line);
    gateway
        .shutdown()
        .map_err(|e| CliError::Io(format!("shutdown: {e}")))?;
    println!("stopped; state persisted");
    Ok(())
}

