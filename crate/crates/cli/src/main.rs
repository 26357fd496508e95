use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::TryRngCore;

use tokenmark::experiment::{run_experiments, ExperimentConfig};
use tokenmark::open::GUARANTEED_EPSILON_MAX;
use tokenmark::oracles::{run_verify, VerifyLevel};
use tokenmark::prob::stream_from_seed;
use tokenmark::textgen::parse_text;
use tokenmark::{detect, generate, ModelConfig, SourceModel, SupportMode, WatermarkKey};

#[derive(Parser)]
#[command(name = "tokenmark", version, about = "Distribution-preserving watermarks for token sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Closed,
    Open,
}

#[derive(Clone, Copy, ValueEnum)]
enum SupportArg {
    FixedPerKey,
    FreshPerStep,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Plain,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Write a key file with a fresh random master seed.
    Keygen {
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        /// Dictionary size.
        #[arg(long)]
        d: usize,
        /// Noise scale (open scheme only; default 0.5).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Support size (open scheme only; default floor(sqrt(d))).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        support_mode: Option<SupportArg>,
        /// Closed scheme: reuse one coloring for every step.
        #[arg(long)]
        fixed_coloring: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a text from a toy source, watermarked if a key is given.
    Generate {
        /// Model config: a JSON file path or inline JSON.
        #[arg(long)]
        model: String,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Score a text against a key. Exit 0 if flagged, 1 if not, 2 on error.
    Detect {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Run the oracle suite. Exit 0 iff every check passes.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        level: LevelArg,
    },
    /// Run the sweeps declared in a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Keygen { scheme, d, epsilon, k, support_mode, fixed_coloring, out } => {
            keygen(scheme, d, epsilon, k, support_mode, fixed_coloring, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { model, key, n, seed, out, format } => {
            generate_text(&model, key.as_deref(), n, seed, &out, format)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Detect { text, key, delta } => {
            let key = WatermarkKey::load(&key).with_context(|| format!("reading key {}", key.display()))?;
            let raw = fs::read_to_string(&text).with_context(|| format!("reading text {}", text.display()))?;
            let tokens = parse_text(&raw)?.for_key(&key)?;
            let report = detect(&tokens, &key, delta)?;
            println!("{}", report.to_json());
            Ok(if report.verdict { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Verify { level } => {
            let level = match level {
                LevelArg::Quick => VerifyLevel::Quick,
                LevelArg::Full => VerifyLevel::Full,
            };
            let report = run_verify(level)?;
            println!("{}", report.to_json());
            for check in report.failures() {
                eprintln!("FAILED {}: value {} bound {}", check.name, check.value, check.bound);
            }
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Experiment { config, out } => {
            let parsed = ExperimentConfig::load(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let output = run_experiments(&parsed)?;
            output.write_to(&out)?;
            for (name, _) in &output.files {
                eprintln!("wrote {}", out.join(name).display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn keygen(
    scheme: SchemeArg,
    d: usize,
    epsilon: Option<f64>,
    k: Option<usize>,
    support_mode: Option<SupportArg>,
    fixed_coloring: bool,
    out: &Path,
) -> Result<()> {
    let mut seed = [0u8; 32];
    OsRng.try_fill_bytes(&mut seed).context("reading OS entropy")?;
    let key = match scheme {
        SchemeArg::Closed => {
            if epsilon.is_some() || k.is_some() || support_mode.is_some() {
                bail!("--epsilon, --k and --support-mode apply to the open scheme only");
            }
            WatermarkKey::closed(seed, d)?.with_fixed_coloring(fixed_coloring)
        }
        SchemeArg::Open => {
            if fixed_coloring {
                bail!("--fixed-coloring applies to the closed scheme only");
            }
            let epsilon = epsilon.unwrap_or(tokenmark::open::DEFAULT_EPSILON);
            if epsilon > GUARANTEED_EPSILON_MAX {
                eprintln!(
                    "warning: epsilon = {epsilon} exceeds {GUARANTEED_EPSILON_MAX}; the bias and completeness guarantees do not cover it"
                );
            }
            let k = k.unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
            let mode = match support_mode.unwrap_or(SupportArg::FixedPerKey) {
                SupportArg::FixedPerKey => SupportMode::FixedPerKey,
                SupportArg::FreshPerStep => SupportMode::FreshPerStep,
            };
            WatermarkKey::open(seed, d, epsilon, k, mode)?
        }
    };
    key.save(out).with_context(|| format!("writing key {}", out.display()))?;
    Ok(())
}

fn load_model(arg: &str) -> Result<ModelConfig> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_owned()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading model config {arg}"))?
    };
    serde_json::from_str(&text).context("parsing model config")
}

fn generate_text(model: &str, key: Option<&Path>, n: usize, seed: u64, out: &Path, format: FormatArg) -> Result<()> {
    let source = SourceModel::from_config(&load_model(model)?)?;
    let key = key
        .map(|p| WatermarkKey::load(p).with_context(|| format!("reading key {}", p.display())))
        .transpose()?;
    let record = generate(&source, n, key.as_ref(), &mut stream_from_seed(seed))?;
    let body = match format {
        FormatArg::Json => record.to_json() + "\n",
        FormatArg::Plain => record.to_plain(),
    };
    fs::write(out, body).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
