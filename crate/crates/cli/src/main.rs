mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{cmd_attack, cmd_bench, cmd_eval, cmd_gen, cmd_link, BENCH_HEADER};
use crate::config::{Mode, RunConfig};

#[global_allocator]
static ALLOC: mpprl::memory::TrackingAllocator = mpprl::memory::TrackingAllocator;

/// Multi-party privacy-preserving record linkage.
///
/// Log verbosity follows MPPRL_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "mpprl", version)]
struct Cli {
    /// Configuration file of `key = value` lines under [bloom], [protocol], [gen] and [bench].
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// mpam, mpam-f or lai.
    #[arg(long, global = true)]
    mode: Option<String>,

    #[arg(long, global = true)]
    parties: Option<usize>,

    /// Dice match threshold s_t.
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Segment filtering threshold s_m (mpam-f only).
    #[arg(long, global = true)]
    seg_threshold: Option<f64>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Kv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one CSV per party plus truth.csv into the output directory.
    Gen {
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        corrupted: Option<f64>,
    },
    /// Link party CSVs and write report.json, report.txt and matches.csv.
    Link {
        /// Directory holding party1.csv ... partyP.csv.
        #[arg(long)]
        data_dir: PathBuf,
        /// Ground truth; defaults to truth.csv in the data directory if present.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Score a matches file against ground truth.
    Eval {
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Frequency attack and bit sensitivity on a dataset.
    Attack {
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Runtime, memory, filtering and quality across modes, party counts and sizes.
    Bench {
        /// Comma-separated records per party.
        #[arg(long)]
        sizes: Option<String>,
        /// Comma-separated party counts.
        #[arg(long)]
        bench_parties: Option<String>,
        /// Comma-separated modes.
        #[arg(long)]
        modes: Option<String>,
    },
}

fn configure(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &cli.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(p) = cli.parties {
        cfg.parties = p;
    }
    if let Some(t) = cli.threshold {
        cfg.match_threshold = t;
    }
    if let Some(t) = cli.seg_threshold {
        cfg.segment_threshold = Some(t);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = configure(&cli)?;
    match cli.cmd {
        Cmd::Gen { records, overlap, corrupted } => {
            if let Some(n) = records {
                cfg.records_per_party = n;
            }
            if let Some(o) = overlap {
                cfg.overlap = o;
            }
            if let Some(c) = corrupted {
                cfg.corrupted = c;
            }
            let ds = cmd_gen(&cfg, &cli.out_dir)?;
            println!("parties={}", ds.parties.len());
            println!("records_per_party={}", cfg.records_per_party);
            println!("truth_tuples={}", ds.truth.len());
        }
        Cmd::Link { data_dir, truth, format } => {
            let out = cmd_link(&cfg, &data_dir, truth.as_deref(), &cli.out_dir)?;
            match format {
                Format::Json => println!("{}", out.report.to_json()),
                Format::Kv => print!("{}", out.report.to_key_value()),
            }
            log::info!("report: {}, matches: {}", out.report_path.display(), out.matches_path.display());
        }
        Cmd::Eval { matches, truth } => {
            let q = cmd_eval(&matches, &truth)?;
            let json = serde_json::to_string_pretty(&q)?;
            std::fs::create_dir_all(&cli.out_dir)?;
            std::fs::write(cli.out_dir.join("quality.json"), &json)?;
            println!("{json}");
        }
        Cmd::Attack { data_dir } => {
            let doc = cmd_attack(&cfg, &data_dir, &cli.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Cmd::Bench { sizes, bench_parties, modes } => {
            if let Some(s) = sizes {
                cfg.set("bench.sizes", &s)?;
            }
            if let Some(p) = bench_parties {
                cfg.set("bench.parties", &p)?;
            }
            if let Some(m) = modes {
                cfg.set("bench.modes", &m)?;
            }
            let rows = cmd_bench(&cfg, &cli.out_dir)?;
            println!("{BENCH_HEADER}");
            for r in rows {
                println!("{r}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MPPRL_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
