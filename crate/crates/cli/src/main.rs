use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rtens_core::ensemble::PredictMode;
use rtens_core::harness::pipeline::{self, PipelineConfig, CLUSTERS_FILE, MODEL_FILE};
use rtens_core::signal::io::FEATURES_FILE;
use rtens_core::signal::NamedBand;
use rtens_core::synthgen::MANIFEST_FILE;
use rtens_core::{Error, ErrorCategory, Result};

/// Reaction-time prediction from EEG with a dynamically weighted SVR ensemble.
#[derive(Parser)]
#[command(name = "rtens", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Prediction mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Number of clusters.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Gaussian components per cluster.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Band powers used for weighting.
    #[arg(long, global = true, value_enum)]
    band: Option<BandArg>,
    /// Spectral zero-padding factor (2 or 4).
    #[arg(long, global = true)]
    pad_factor: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Fixed,
    Dynamic,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    Delta,
    Theta,
    Alpha,
    Beta,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus into --out.
    Synth,
    /// Compute features.csv for a session directory, or for every session of a corpus.
    Features { input: PathBuf },
    /// Recursive clustering of a featurized corpus; writes clusters.json.
    Cluster { corpus: PathBuf },
    /// Train the ensemble; writes ensemble.json.
    Train {
        corpus: PathBuf,
        /// Defaults to clusters.json in the corpus directory.
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Predict a session; writes trace.csv, or trace_<mode>.csv for --mode all.
    Predict {
        session: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Leave-one-session-out evaluation; writes report.json and summary CSVs.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
}

fn modes(arg: Option<ModeArg>, default: &[PredictMode]) -> Vec<PredictMode> {
    match arg {
        None => default.to_vec(),
        Some(ModeArg::All) => PredictMode::ALL.to_vec(),
        Some(ModeArg::Single) => vec![PredictMode::Single],
        Some(ModeArg::Fixed) => vec![PredictMode::Fixed],
        Some(ModeArg::Dynamic) => vec![PredictMode::Dynamic],
    }
}

fn config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::from_toml_file(p)?,
        None => PipelineConfig::default(),
    };
    let seed = c.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(k) = c.k {
        cfg = cfg.with_k(k)?;
    }
    if let Some(m) = c.m {
        cfg = cfg.with_m(m)?;
    }
    if let Some(b) = c.band {
        let bands = match b {
            BandArg::Delta => vec![NamedBand::Delta],
            BandArg::Theta => vec![NamedBand::Theta],
            BandArg::Alpha => vec![NamedBand::Alpha],
            BandArg::Beta => vec![NamedBand::Beta],
            BandArg::All => NamedBand::ALL.to_vec(),
        };
        cfg = cfg.with_bands(&bands)?;
    }
    if let Some(p) = c.pad_factor {
        cfg = cfg.with_pad_factor(p)?;
    }
    cfg.eval.modes = modes(c.mode, &cfg.eval.modes);
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    let out = &cli.common.out;
    create_dir(out)?;
    match cli.cmd {
        Cmd::Synth => {
            let m = pipeline::synth(out, &cfg)?;
            println!("{}", m.manifest_hash);
        }
        Cmd::Features { input } => {
            if input.join(MANIFEST_FILE).exists() {
                let n = pipeline::features_corpus(&input, &cfg)?;
                info!("featurized {n} sessions");
            } else {
                let set = pipeline::features_session(&input, &out.join(FEATURES_FILE), &cfg)?;
                info!("{} frames", set.frames.len());
            }
        }
        Cmd::Cluster { corpus } => {
            let c = pipeline::cluster(&corpus, &out.join(CLUSTERS_FILE), &cfg)?;
            info!("clustering stopped after {} iterations: {:?}", c.result.iterations, c.result.stop);
        }
        Cmd::Train { corpus, clusters } => {
            let clusters = clusters.unwrap_or_else(|| corpus.join(CLUSTERS_FILE));
            pipeline::train(&corpus, &clusters, &out.join(MODEL_FILE), &cfg)?;
        }
        Cmd::Predict { session, model } => {
            let modes = modes(cli.common.mode, &[PredictMode::Dynamic]);
            pipeline::predict_session(&model, &session, &modes, out, &cfg)?;
        }
        Cmd::Eval { corpus, clusters } => {
            let clusters = clusters.unwrap_or_else(|| corpus.join(CLUSTERS_FILE));
            let report = pipeline::eval(&corpus, &clusters, out, &cfg)?;
            println!("{}", serde_json::to_string(&report.median).map_err(|e| Error::invalid(e.to_string()))?);
        }
    }
    Ok(())
}

fn exit_code(c: ErrorCategory) -> u8 {
    match c {
        ErrorCategory::Parse => 3,
        ErrorCategory::Validation => 4,
        ErrorCategory::Numeric => 5,
        ErrorCategory::Io => 6,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            let msg = serde_json::json!({ "error": { "category": cat.as_str(), "message": e.to_string() } });
            eprintln!("{msg}");
            ExitCode::from(exit_code(cat))
        }
    }
}
