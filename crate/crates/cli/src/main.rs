//! Operator entry point for the mix network: key generation, message
//! construction, mailbox polling, simulation runs, adversary experiments,
//! report rendering, and the gateway service.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AttackMode, SendArgs, SendVia, ServeArgs};

#[derive(Parser)]
#[command(
    name = "posthorn",
    version,
    about = "Chaumian mix network carried over covert channels in ordinary HTTP browsing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair file (suite tag, length-prefixed halves).
    Keygen {
        /// Suite: test, hybrid, or ure.
        #[arg(long, default_value = "hybrid")]
        suite: String,
        /// Seed; the same seed always yields the same pair.
        #[arg(long)]
        seed: u64,
        /// Key file to write (public and secret halves).
        #[arg(long)]
        out: PathBuf,
        /// Also write a public-only key file here.
        #[arg(long)]
        public_out: Option<PathBuf>,
    },
    /// Build a layered message for a path of nodes and submit it.
    Send {
        /// File whose bytes become the message payload.
        #[arg(long)]
        payload: PathBuf,
        /// Comma-separated hops: url=keyfile,url=keyfile,...
        #[arg(long)]
        path: String,
        /// Destination mailbox on the final hop, hex.
        #[arg(long)]
        mailbox: String,
        #[arg(long, value_enum, default_value = "http")]
        via: SendVia,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cover-traffic surfers for --via sim.
        #[arg(long, default_value_t = 20)]
        surfers: usize,
        /// Tick budget for --via sim.
        #[arg(long, default_value_t = 4000)]
        ticks: u64,
        /// Also write the submission slot as a hex dump.
        #[arg(long)]
        slot_out: Option<PathBuf>,
    },
    /// Request a mailbox from a node and extract any carried content.
    Poll {
        /// Node script URL, e.g. http://127.0.0.1:8080/mix
        #[arg(long)]
        node: String,
        /// Mailbox identifier, hex.
        #[arg(long)]
        mailbox: String,
        /// Key file holding the node's public key.
        #[arg(long)]
        key: PathBuf,
        /// Write received payload bytes here instead of printing hex.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Poll attempts; each hit pays off with the coin's probability.
        #[arg(long, default_value_t = 16)]
        attempts: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a deterministic simulation from a JSON config. Flags mirror the
    /// scalar config fields and override the file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for report.json, trace.jsonl, summary.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_nodes: Option<usize>,
        #[arg(long)]
        n_linkers: Option<usize>,
        #[arg(long)]
        n_surfers: Option<usize>,
        #[arg(long)]
        surfer_visit_rate: Option<f64>,
        #[arg(long)]
        coin_bias: Option<f64>,
        #[arg(long)]
        trickle: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_ticks: Option<u64>,
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        ack_enabled: Option<bool>,
        #[arg(long)]
        retry_interval: Option<u64>,
        #[arg(long)]
        retry_max: Option<u32>,
        #[arg(long)]
        broken_double_post: Option<bool>,
    },
    /// Run adversary experiments against a node.
    Attack {
        #[arg(long, value_enum, default_value = "drain")]
        mode: AttackMode,
        /// Disable acknowledgements (the vulnerable protocol variant).
        #[arg(long)]
        no_ack: bool,
        /// Messages seeded into the pool before the fetch loop.
        #[arg(long, default_value_t = 5)]
        pool: usize,
        #[arg(long, default_value_t = 10_000)]
        fetches: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for attack.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG charts and a text summary from a simulation report.
    Report {
        /// Path to report.json (trace.jsonl is picked up from the same
        /// directory when present).
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host one mix node over HTTP. The environment variable
    /// POSTHORN_GATEWAY_CONFIG may name a JSON config; flags override it.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        /// The script URL peers and senders know this node by.
        #[arg(long)]
        public_url: Option<String>,
        /// Key file with the secret half.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Peer node URLs (repeatable).
        #[arg(long = "peer")]
        peers: Vec<String>,
        /// Snapshot file: restored on start, persisted on shutdown.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Banner image served at /banner.img (a built-in placeholder
        /// otherwise).
        #[arg(long)]
        banner: Option<PathBuf>,
        #[arg(long)]
        coin_bias: Option<f64>,
        #[arg(long)]
        trickle: bool,
        #[arg(long)]
        retry_interval: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen {
            suite,
            seed,
            out,
            public_out,
        } => commands::cmd_keygen(&suite, seed, &out, public_out.as_deref()),
        Command::Send {
            payload,
            path,
            mailbox,
            via,
            seed,
            surfers,
            ticks,
            slot_out,
        } => commands::cmd_send(SendArgs {
            payload: &payload,
            path_spec: &path,
            mailbox: &mailbox,
            via,
            seed,
            surfers,
            ticks,
            slot_out: slot_out.as_deref(),
        }),
        Command::Poll {
            node,
            mailbox,
            key,
            out,
            attempts,
            seed,
        } => commands::cmd_poll(&node, &mailbox, &key, out.as_deref(), attempts, seed),
        Command::Simulate {
            config,
            out,
            n_nodes,
            n_linkers,
            n_surfers,
            surfer_visit_rate,
            coin_bias,
            trickle,
            seed,
            max_ticks,
            suite,
            ack_enabled,
            retry_interval,
            retry_max,
            broken_double_post,
        } => commands::cmd_simulate(
            config.as_deref(),
            &out,
            commands::SimOverrides {
                n_nodes,
                n_linkers,
                n_surfers,
                surfer_visit_rate,
                coin_bias,
                trickle,
                seed,
                max_ticks,
                suite,
                ack_enabled,
                retry_interval,
                retry_max,
                broken_double_post,
            },
        ),
        Command::Attack {
            mode,
            no_ack,
            pool,
            fetches,
            seed,
            out,
        } => commands::cmd_attack(mode, !no_ack, pool, fetches, seed, out.as_deref()),
        Command::Report { report, out } => commands::cmd_report(&report, &out),
        Command::Serve {
            listen,
            public_url,
            key,
            peers,
            snapshot,
            banner,
            coin_bias,
            trickle,
            retry_interval,
            seed,
        } => commands::cmd_serve(ServeArgs {
            listen,
            public_url,
            key,
            peers,
            snapshot,
            banner,
            coin_bias,
            trickle,
            retry_interval,
            seed,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("posthorn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
