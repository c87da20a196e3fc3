//! `neurdb` command-line entry point. Exit codes: 0 success, 1 engine
//! error, 2 usage error.

use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurdb_core::cc::{self, BenchSpec, CcPolicy, WindowRow};
use neurdb_core::datagen::{load_diabetes, load_drift, load_review, DriftSpec};
use neurdb_core::engine::runtime::{RuntimeConfig, TcpRuntimeServer};
use neurdb_core::experiments::{drift_adaptation, streaming_vs_materialize, DriftConfig, LoaderConfig};
use neurdb_core::qo::{self, GenParams, Mode, Outcome, QoBench};
use neurdb_core::{AiEngine, Config, Database};

#[derive(Debug, Parser)]
#[command(name = "neurdb", version, about = "Embedded database with in-database learning")]
struct Cli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `inprocess` or `tcp:<host>:<port>`.
    #[arg(long, global = true)]
    runtime: Option<String>,
    /// Seed for every generator and model initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for tables, model versions and metrics; in-memory if unset.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Interactive SQL shell; statements end with `;`.
    Repl,
    /// Runs a SQL script, stopping at the first error.
    Exec { file: PathBuf },
    /// Reproducible experiments that print CSV.
    #[command(subcommand)]
    Bench(Bench),
    /// Generates clustered drift tables `c1..ck`.
    GenDrift {
        #[arg(long, default_value_t = 5)]
        clusters: usize,
        #[arg(long, default_value_t = 8192)]
        rows_per_cluster: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
    },
    /// Loads the demo `review` and `diabetes` tables.
    GenDemo {
        #[arg(long, default_value_t = 2000)]
        reviews: usize,
        #[arg(long, default_value_t = 768)]
        patients: usize,
    },
    /// Prints recorded monitor samples as CSV.
    Metrics,
    /// Drops model layer versions no longer needed.
    Vacuum {
        /// Oldest timestamp that must stay resolvable; defaults to the latest.
        #[arg(long)]
        keep_from: Option<u64>,
    },
    /// Serves the AI runtime side of the wire protocol over TCP.
    Runtime {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Exit after this many connections.
        #[arg(long)]
        max_conns: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum Bench {
    /// Windowed concurrency-control throughput, CSV to stdout.
    Cc {
        /// Workload spec (`key = value`); defaults apply otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = CcMode::Learned)]
        policy: CcMode,
        /// Re-adapt the policy once the drift starts.
        #[arg(long)]
        adapt: bool,
    },
    /// Join-order choice against the executed oracle, CSV to stdout.
    Qo {
        /// Schema spec (`key = value`); a random 3-table schema otherwise.
        #[arg(long)]
        tables: Option<PathBuf>,
        /// File of SELECT statements; random chain queries otherwise.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Random queries drawn when no file is given.
        #[arg(long, default_value_t = 100)]
        n_queries: usize,
        #[arg(long, value_enum, default_value_t = QoMode::Learned)]
        mode: QoMode,
        #[arg(long, default_value_t = 30)]
        pretrain_budget: usize,
    },
    /// In-database learning experiments, CSV to stdout.
    Predict {
        #[arg(long, value_enum, default_value_t = Experiment::Drift)]
        experiment: Experiment,
        /// Table size for the loader experiment.
        #[arg(long, default_value_t = 500_000)]
        rows: usize,
        /// Rows per cluster for the drift experiment.
        #[arg(long, default_value_t = 4096)]
        rows_per_cluster: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CcMode {
    #[value(name = "2pl")]
    TwoPl,
    Occ,
    /// Adapted on the pre-drift workload.
    Learned,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QoMode {
    Learned,
    Builtin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Drift,
    Loader,
}

enum Failure {
    Usage(String),
    Engine(String),
}

impl Failure {
    fn engine(e: impl std::fmt::Display) -> Self {
        Failure::Engine(e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => Config::default(),
    };
    let mut set = |k: &str, v: String| c.set(k, &v).map_err(|e| Failure::Usage(e.to_string()));
    if let Some(r) = &cli.runtime {
        set("runtime", r.clone())?;
    }
    if let Some(s) = cli.seed {
        set("seed", s.to_string())?;
    }
    if let Some(d) = &cli.data_dir {
        set("data_dir", d.display().to_string())?;
    }
    Ok(c)
}

fn read(path: &PathBuf) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Engine(format!("{}: {e}", path.display())))
}

fn open(config: Config) -> Result<Database, Failure> {
    Database::open(config).map_err(Failure::engine)
}

fn exec(config: Config, file: &PathBuf) -> Result<(), Failure> {
    let script = read(file)?;
    let db = open(config)?;
    let mut out = io::stdout().lock();
    db.execute_with(&script, |r| {
        let _ = writeln!(out, "{r}");
    })
    .map_err(Failure::engine)?;
    Ok(())
}

/// Whether `buf` ends a statement: a trailing `;` outside quotes.
fn complete(buf: &str) -> bool {
    let mut quoted = false;
    let mut last = None;
    for c in buf.chars() {
        if c == '\'' {
            quoted = !quoted;
        }
        if !c.is_whitespace() {
            last = Some(c);
        }
    }
    !quoted && last == Some(';')
}

fn repl(config: Config) -> Result<(), Failure> {
    let db = open(config)?;
    let interactive = io::stdin().is_terminal();
    let mut buf = String::new();
    let prompt = |buf: &str| {
        if interactive {
            print!("{}", if buf.is_empty() { "neurdb> " } else { "   ...> " });
            let _ = io::stdout().flush();
        }
    };
    let run = |sql: &str| {
        if let Err(e) = db.execute_with(sql, |r| println!("{r}")) {
            println!("error: {e}");
        }
    };
    prompt(&buf);
    for line in io::stdin().lock().lines() {
        let line = line.map_err(Failure::engine)?;
        if buf.is_empty() && matches!(line.trim(), "\\q" | ".quit" | "quit" | "exit") {
            return Ok(());
        }
        buf.push_str(&line);
        buf.push('\n');
        if complete(&buf) {
            run(&buf);
            buf.clear();
        }
        prompt(&buf);
    }
    if !buf.trim().is_empty() {
        run(&buf);
    }
    Ok(())
}

fn bench_cc(config: &Config, spec: Option<&PathBuf>, mode: CcMode, adapt: bool, seeded: bool) -> Result<(), Failure> {
    let mut s = match spec {
        Some(p) => BenchSpec::parse(&read(p)?).map_err(Failure::Usage)?,
        None => BenchSpec::default(),
    };
    if seeded {
        s.workload.seed = config.seed;
    }
    let policy = match mode {
        CcMode::TwoPl => CcPolicy::two_pl(),
        CcMode::Occ => CcPolicy::occ(),
        CcMode::Learned => cc::pretrained_policy(&s),
    };
    let rows = cc::run_bench(&s, policy, adapt).map_err(Failure::Engine)?;
    println!("{}", WindowRow::CSV_HEADER);
    for r in rows {
        println!("{r}");
    }
    Ok(())
}

fn bench_qo(
    config: &Config,
    tables: Option<&PathBuf>,
    queries: Option<&PathBuf>,
    n_queries: usize,
    mode: QoMode,
    pretrain_budget: usize,
) -> Result<(), Failure> {
    let params = match tables {
        Some(p) => qo::parse_tables_spec(&read(p)?).map_err(|e| Failure::Usage(e.to_string()))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let u: Vec<f64> = (0..GenParams::dims(3)).map(|_| rng.gen()).collect();
            GenParams::from_unit(3, &u, config.seed)
        }
    };
    let bench = QoBench {
        params,
        queries: queries.map(read).transpose()?,
        n_queries,
        mode: match mode {
            QoMode::Learned => Mode::Learned,
            QoMode::Builtin => Mode::Builtin,
        },
        pretrain_budget,
        seed: config.seed,
    };
    let out = qo::run_qo_bench(&bench).map_err(Failure::engine)?;
    println!("{}", Outcome::CSV_HEADER);
    for o in &out {
        println!("{}", o.csv_row());
    }
    Ok(())
}

fn bench_predict(config: &Config, experiment: Experiment, rows: usize, rows_per_cluster: usize) -> Result<(), Failure> {
    let engine = AiEngine::new(config.engine());
    match experiment {
        Experiment::Drift => {
            let mut cfg = DriftConfig::default();
            cfg.data.seed = config.seed;
            cfg.data.rows_per_cluster = rows_per_cluster;
            let r = drift_adaptation(&engine, &cfg).map_err(Failure::engine)?;
            println!("cluster,window_loss_updated,window_loss_frozen,detected");
            for s in &r.switches {
                println!("{},{:.6},{:.6},{}", s.cluster, s.window_loss_updated, s.window_loss_frozen, s.detected);
            }
        }
        Experiment::Loader => {
            let cfg = LoaderConfig { rows, seed: config.seed, ..Default::default() };
            let r = streaming_vs_materialize(&engine, &cfg).map_err(Failure::engine)?;
            println!("mode,rows,rows_per_sec,peak_resident");
            for (name, run) in [("streamed", &r.streamed), ("materialized", &r.materialized)] {
                println!("{name},{rows},{:.1},{}", run.rows_per_sec, run.peak_resident);
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Repl => repl(config),
        Command::Exec { file } => exec(config, file),
        Command::Bench(Bench::Cc { spec, policy, adapt }) => {
            bench_cc(&config, spec.as_ref(), *policy, *adapt, cli.seed.is_some())
        }
        Command::Bench(Bench::Qo { tables, queries, n_queries, mode, pretrain_budget }) => {
            bench_qo(&config, tables.as_ref(), queries.as_ref(), *n_queries, *mode, *pretrain_budget)
        }
        Command::Bench(Bench::Predict { experiment, rows, rows_per_cluster }) => {
            bench_predict(&config, *experiment, *rows, *rows_per_cluster)
        }
        Command::GenDrift { clusters, rows_per_cluster, features } => {
            let spec = DriftSpec {
                n_clusters: *clusters,
                rows_per_cluster: *rows_per_cluster,
                n_features: *features,
                seed: config.seed,
            };
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let db = open(config)?;
            let tables = load_drift(db.catalog(), &spec).map_err(Failure::engine)?;
            println!("table,rows");
            for t in tables {
                println!("{},{}", t.name(), t.row_count());
            }
            Ok(())
        }
        Command::GenDemo { reviews, patients } => {
            let db = open(config.clone())?;
            let r = load_review(db.catalog(), "review", *reviews, config.seed).map_err(Failure::engine)?;
            let d = load_diabetes(db.catalog(), "diabetes", *patients, config.seed.wrapping_add(1))
                .map_err(Failure::engine)?;
            println!("table,rows");
            for t in [r, d] {
                println!("{},{}", t.name(), t.row_count());
            }
            Ok(())
        }
        Command::Metrics => {
            let db = open(config)?;
            match db.metrics_path().filter(|p| p.exists()) {
                Some(p) => print!("{}", read(&p)?),
                None => println!("metric_id,ts,value,baseline"),
            }
            Ok(())
        }
        Command::Vacuum { keep_from } => {
            if config.data_dir.is_none() {
                return Err(Failure::Usage("vacuum needs --data-dir".into()));
            }
            let db = open(config)?;
            let keep = keep_from.unwrap_or_else(|| db.models().current_timestamp());
            let removed = db.models().vacuum(keep).map_err(Failure::engine)?;
            println!("removed {removed} layer records");
            Ok(())
        }
        Command::Runtime { port, host, max_conns } => {
            let server = TcpRuntimeServer::spawn(&format!("{host}:{port}"), RuntimeConfig::default(), *max_conns)
                .map_err(Failure::engine)?;
            println!("listening on {}", server.addr());
            let _ = io::stdout().flush();
            server.join();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Engine(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
