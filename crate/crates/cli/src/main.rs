mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::exit::Usage;

#[derive(Parser, Debug)]
#[command(name = "duskmot", version, about = "Low-light multi-object tracking toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value config file (optional [section] headers)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; `--noise.ratio 0.5` is shorthand for `--set noise.ratio=0.5`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Darken and noise clean RAW sequences
    Synth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Check per-frame variance of constant frames against the model
        #[arg(long)]
        verify: bool,
    },
    /// Run the tracker on a detection file
    Track {
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        det: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_interp: bool,
    },
    /// HOTA / CLEAR / identity metrics
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        result: PathBuf,
        /// Writes `<out>.txt` and `<out>.kv`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjacent-frame IoU and appearance cosine histograms
    Stats {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every backward pass
    Gradcheck {
        /// Corrupt one analytic gradient; the check must then fail
        #[arg(long)]
        mutate: bool,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Paired clean/low-light A/B training run with and without the DSL losses
    Toytrain {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Blob file for the trained weights
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// RAW to PNG preview
    Isp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Rewrite `--section.key value` and `--section.key=value` into `--set`.
fn expand_overrides(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let dotted = a
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(k) if k.contains('=') => {
                out.push("--set".into());
                out.push(k.to_string());
            }
            Some(k) => {
                let k = k.to_string();
                out.push("--set".into());
                out.push(format!("{k}={}", it.next().unwrap_or_default()));
            }
            None => out.push(a),
        }
    }
    out
}

fn build_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::new(c.seed);
    if let Some(p) = &c.config {
        cfg.merge_file(p)?;
    }
    for pair in &c.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs)
        .build_global()
        .map_err(|e| Usage(format!("--jobs: {e}")))?;
    let cfg = build_config(&cli.common)?;
    for line in cfg.resolved().lines() {
        log::info!("config {line}");
    }
    eprintln!("config_sha256={}", cfg.hash());
    match cli.cmd {
        Cmd::Synth { input, output, verify } => commands::synth(&cfg, &input, &output, verify),
        Cmd::Track {
            seq,
            det,
            out,
            no_interp,
        } => commands::track(&cfg, seq.as_deref(), det.as_deref(), &out, no_interp),
        Cmd::Eval { gt, result, out } => commands::eval(&cfg, &gt, &result, out.as_deref()),
        Cmd::Stats { gt, embeddings, out } => commands::stats(&gt, embeddings.as_deref(), out.as_deref()),
        Cmd::Gradcheck { mutate, seeds } => commands::gradcheck(seeds, mutate),
        Cmd::Toytrain { out, snapshot } => commands::toytrain(&cfg, out.as_deref(), snapshot.as_deref()),
        Cmd::Isp { input, output } => commands::isp(&cfg, &input, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse_from(expand_overrides(std::env::args().collect())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
