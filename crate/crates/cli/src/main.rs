use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use invoamc_core::gradcheck::{self, GradReport, Options};
use invoamc_core::model::{self, CheckpointMeta, ModelConfig};
use invoamc_core::signal::{generate_dataset, load_dataset, save_dataset, DatasetSpec};
use invoamc_core::train::{self, fit, TrainConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "invoamc",
    version,
    about = "Involution networks for modulation classification"
)]
struct Cli {
    /// Seed overriding the one in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled I/Q dataset.
    GenData {
        /// Dataset spec (JSON). Omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (JSON) with `model`, `sgd` and `snr_db` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Evaluate only these SNRs (comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
    },
    /// Compare parameter counts of the involution and convolution models.
    Params {
        /// Training or model config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One of the named checks; all of them when omitted.
        #[arg(long)]
        layer: Option<String>,
        /// Check at most this many coordinates per tensor.
        #[arg(long)]
        max_per_tensor: Option<usize>,
    },
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.sgd.seed = s;
    }
    Ok(cfg)
}

/// Accepts either a full training config or a bare model config.
fn model_config(path: Option<&Path>) -> Result<ModelConfig> {
    let Some(path) = path else {
        return Ok(ModelConfig::default());
    };
    let value = read_json(path)?;
    let full = ["model", "sgd", "snr_db"]
        .iter()
        .any(|k| value.get(k).is_some());
    let cfg = if full {
        serde_json::from_value::<TrainConfig>(value).map(|c| c.model)
    } else {
        serde_json::from_value::<ModelConfig>(value)
    }
    .with_context(|| format!("in {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: DatasetSpec = match spec {
        Some(p) => {
            serde_json::from_value(read_json(p)?).with_context(|| format!("in {}", p.display()))?
        }
        None => DatasetSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = generate_dataset(&spec)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} train and {} test frames to {}",
        ds.train.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn run_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = train_config(config, seed)?;
    let ds = load_dataset(data)?;
    let epochs = cfg.sgd.epochs;
    let (model, history) = fit(&cfg, &ds, |e| {
        eprintln!(
            "epoch {:>3}/{epochs}  loss {:.5}  lr {}",
            e.epoch + 1,
            e.mean_loss,
            e.lr
        );
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let meta = CheckpointMeta {
        seed: cfg.sgd.seed,
        epoch: history.len(),
        loss_history: history.clone(),
    };
    model::save(&model, &meta, out)?;
    if let Some(log) = log {
        train::write_loss_log(log, &history)?;
    }
    println!(
        "saved {} ({} parameters)",
        out.display(),
        model.parameter_count()
    );
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, report_dir: &Path, snr: Option<Vec<f64>>) -> Result<()> {
    let (mut model, manifest) = model::load::<f32>(ckpt)?;
    let mut ds = load_dataset(data)?;
    if let Some(snrs) = snr {
        ds = ds.restrict_snr(&snrs);
    }
    let mut report = train::evaluate(&mut model, &ds.test, &ds.spec.class_names())?;
    report.loss_history = manifest.meta.loss_history;
    report.write_dir(report_dir)?;
    for a in &report.per_snr_accuracy {
        println!("{:>6} dB  {:.4}", a.snr_db, a.accuracy);
    }
    println!("overall Pr_cc {:.4}", report.overall_pr_cc);
    Ok(())
}

fn run_params(config: Option<&Path>) -> Result<()> {
    let cfg = model_config(config)?;
    let c = model::compare(&cfg)?;
    println!("involution_params {}", c.involution);
    println!("convolution_params {}", c.convolution);
    println!("reduction_fraction {:.6}", c.reduction_fraction);
    Ok(())
}

fn print_report(r: &GradReport) {
    println!(
        "{:<24} {}  max {:.3e}  mean {:.3e}  ({} coords)",
        r.name,
        if r.passes() { "ok  " } else { "FAIL" },
        r.max_rel,
        r.mean_rel,
        r.checked
    );
}

fn run_gradcheck(layer: Option<&str>, max_per_tensor: Option<usize>, seed: u64) -> Result<bool> {
    let opts = Options { max_per_tensor };
    let names: Vec<&str> = match layer {
        Some(n) => vec![n],
        None => gradcheck::LAYERS.to_vec(),
    };
    let mut ok = true;
    for name in names {
        let r = gradcheck::run(name, seed, &opts)?;
        print_report(&r);
        ok &= r.passes();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(spec.as_deref(), &out, cli.seed)?,
        Command::Train {
            data,
            config,
            out,
            log,
        } => run_train(&data, config.as_deref(), &out, log.as_deref(), cli.seed)?,
        Command::Eval {
            ckpt,
            data,
            report,
            snr,
        } => run_eval(&ckpt, &data, &report, snr)?,
        Command::Params { config } => run_params(config.as_deref())?,
        Command::Gradcheck {
            layer,
            max_per_tensor,
        } => {
            let ok = run_gradcheck(layer.as_deref(), max_per_tensor, cli.seed.unwrap_or(0))?;
            if !ok {
                bail!("gradient check exceeded tolerance");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
