use std::io::BufRead;
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcmsec::config::SessionConfig;
use lcmsec::transport::SimConfig;
use lcmsec_cli::discovery_bench::{self, DiscoveryOpts};
use lcmsec_cli::latency::{self, Codec, LatencyOpts};
use lcmsec_cli::node::{Polled, UdpNode};
use lcmsec_cli::{ca, report, CliError};

#[derive(Parser)]
#[command(name = "lcmsec", version, about = "Secure LCM: certificate authority, demo and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage a file-backed certificate authority.
    #[command(subcommand)]
    Ca(CaCommand),
    /// Publish stdin lines or print received messages.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Round-trip latency of plaintext LCM against the secure layer.
    BenchLatency(LatencyArgs),
    /// Discovery message counts and convergence time against group size.
    BenchDiscovery(DiscoveryArgs),
}

#[derive(Subcommand)]
enum CaCommand {
    /// Create a self-signed root in DIR.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "p256")]
        suite: String,
        #[arg(long, default_value = "lcmsec root")]
        name: String,
        #[arg(long, default_value_t = 365)]
        days: u64,
    },
    /// Issue a certificate. Each --urn is urn:lcmsec:<ip>:<port>:<channel>:<id|auto>;
    /// an empty channel grants the group itself.
    Issue {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long = "urn", required = true)]
        urns: Vec<String>,
        /// Output prefix; writes PREFIX.pem and PREFIX.key.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 90)]
        days: u64,
    },
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Publish each line of stdin.
    Pub(DemoArgs),
    /// Print `channel<TAB>payload` for every message received.
    Sub {
        #[command(flatten)]
        args: DemoArgs,
        /// Exit after this many messages.
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the first configured channel.
    #[arg(long)]
    channel: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Source,
    Reflector,
}

#[derive(Args)]
struct LatencyArgs {
    /// Run on the simulated network instead of UDP loopback.
    #[arg(long)]
    sim: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1_000, 10_000, 100_000])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["lcm", "lcmsec"])]
    codecs: Vec<Codec>,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 1_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 25.0)]
    mu_ms: f64,
    #[arg(long, default_value_t = 5.0)]
    sigma_ms: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Multicast group for the in-process loopback run.
    #[arg(long, default_value = "239.255.76.67:17667")]
    group: SocketAddrV4,
    /// Run one side only, with credentials from --config.
    #[arg(long, requires = "config")]
    role: Option<Role>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoveryArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32])]
    nodes: Vec<usize>,
    /// First seed; runs use SEED, SEED+1, ...
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 25.0)]
    mu_ms: f64,
    #[arg(long, default_value_t = 5.0)]
    sigma_ms: f64,
    #[arg(long, default_value_t = 0.1)]
    loss: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write per-size medians here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn channel_of(cfg: &SessionConfig, requested: Option<String>) -> Result<String, CliError> {
    match requested {
        Some(c) if cfg.channels.contains(&c) => Ok(c),
        Some(c) => Err(CliError::Usage(format!("channel {c:?} is not in the configuration"))),
        None => cfg.channels.first().cloned().ok_or_else(|| CliError::Usage("configuration lists no channels".into())),
    }
}

fn open_node(path: &Path) -> Result<(SessionConfig, UdpNode), CliError> {
    let cfg = SessionConfig::load(path)?;
    let mut node = UdpNode::open(&cfg)?;
    node.start()?;
    Ok((cfg, node))
}

fn demo_pub(args: DemoArgs) -> Result<(), CliError> {
    let (cfg, mut node) = open_node(&args.config)?;
    let channel = channel_of(&cfg, args.channel)?;
    node.wait_ready(Duration::from_millis(cfg.startup_timeout_ms))?;
    for line in std::io::stdin().lock().lines() {
        let line = line.map_err(|e| CliError::io("<stdin>", e))?;
        node.publish(&channel, line.as_bytes())?;
        // Keep serving discovery between lines.
        node.poll(Duration::ZERO)?;
    }
    // Give late messages and retransmissions a moment before leaving.
    let until = std::time::Instant::now() + Duration::from_millis(200);
    while std::time::Instant::now() < until {
        node.poll(Duration::from_millis(20))?;
    }
    Ok(())
}

fn demo_sub(args: DemoArgs, count: Option<usize>) -> Result<(), CliError> {
    let (cfg, mut node) = open_node(&args.config)?;
    let only = args.channel.map(|c| channel_of(&cfg, Some(c))).transpose()?;
    node.wait_ready(Duration::from_millis(cfg.startup_timeout_ms))?;
    let mut seen = 0;
    while count.is_none_or(|n| seen < n) {
        if let Polled::Delivered(ch, payload) = node.poll(Duration::from_millis(100))? {
            if only.as_ref().is_none_or(|o| *o == ch) {
                println!("{ch}\t{}", String::from_utf8_lossy(&payload));
                seen += 1;
            }
        }
    }
    Ok(())
}

fn bench_latency(a: LatencyArgs) -> Result<(), CliError> {
    let opts = LatencyOpts {
        codecs: a.codecs,
        sizes: a.sizes,
        count: a.count,
        warmup: a.warmup,
        timeout: Duration::from_millis(a.timeout_ms),
        seed: a.seed,
    };
    let rows = match (a.role, a.config) {
        (Some(Role::Reflector), Some(cfg)) => {
            let (_, mut node) = open_node(&cfg)?;
            latency::reflect(&mut node, &AtomicBool::new(false))?;
            return Ok(());
        }
        (Some(Role::Source), Some(cfg)) => {
            let (_, mut node) = open_node(&cfg)?;
            latency::run_source(&mut node, &opts)?
        }
        _ if a.sim => {
            let sim = SimConfig { seed: a.seed, mu_ms: a.mu_ms, sigma_ms: a.sigma_ms, ..SimConfig::default() };
            latency::run_sim(&sim, &opts)?
        }
        _ => latency::run_udp_loopback(a.group, &opts)?,
    };
    report::write_csv(&rows, a.csv.as_deref())
}

fn bench_discovery(a: DiscoveryArgs) -> Result<(), CliError> {
    let opts = DiscoveryOpts {
        nodes: a.nodes,
        seeds: (a.seed..a.seed + a.seeds).collect(),
        mu_ms: a.mu_ms,
        sigma_ms: a.sigma_ms,
        loss: a.loss,
    };
    let rows = discovery_bench::run(&opts, |r| {
        log::info!("n={} seed={} converged={} joins={} responses={}", r.nodes, r.seed, r.converged, r.joins, r.responses)
    })?;
    report::write_csv(&rows, a.csv.as_deref())?;
    let summary = discovery_bench::summarize(&rows);
    if let Some(path) = a.summary {
        report::write_csv(&summary, Some(&path))?;
    }
    let failed: Vec<String> =
        rows.iter().filter(|r| !r.converged).map(|r| format!("n={} seed={}", r.nodes, r.seed)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(failed.join(", ")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ca(CaCommand::Init { dir, suite, name, days }) => {
            let path = ca::init(&dir, &suite, &name, days)?;
            println!("{}", path.display());
        }
        Command::Ca(CaCommand::Issue { dir, urns, out, days }) => {
            for urn in ca::issue(&dir, &urns, &out, days)? {
                println!("{urn}");
            }
        }
        Command::Demo(DemoCommand::Pub(args)) => demo_pub(args)?,
        Command::Demo(DemoCommand::Sub { args, count }) => demo_sub(args, count)?,
        Command::BenchLatency(a) => bench_latency(a)?,
        Command::BenchDiscovery(a) => bench_discovery(a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcmsec: {e}");
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}
