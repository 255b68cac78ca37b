//! `hcms`: generate data, train, evaluate, sweep budgets, export traces and
//! run the self checks. Every numeric choice comes from the config file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use hcms_core::data::Split;
use hcms_core::train_eval::{budget_sweep, evaluate, sweep_csv, trace_records, train_from, EvalOptions, TrainState};
use hcms_core::{
    generate_synthetic, read_dataset, verify, write_dataset, Checkpoint, CostModel, Dataset, Error, RunConfig,
};

#[derive(Parser)]
#[command(name = "hcms", version, about = "Hierarchical conditional modality selection")]
struct Cli {
    /// Log per-epoch progress.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the default config as TOML.
    Init {
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic train, validation and test sets.
    Generate {
        /// Run config (TOML); unset keys take their defaults.
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and write the checkpoint and the curve log.
    Train {
        /// Run config (TOML); unset keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write a metrics record.
    Eval {
        /// Run config (TOML); unset keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset split to run on.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Budgeted evaluation at every configured budget.
    Sweep {
        /// Run config (TOML); unset keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset split to run on.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Per-step gate decisions and cumulative cost.
    Trace {
        /// Run config (TOML); unset keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset split to run on.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Only this video id.
        #[arg(long)]
        video: Option<u64>,
    },
    /// Run the built-in checks against the configured cost model.
    Verify {
        /// Run config supplying the cost model; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Exit statuses, one per failure class.
mod exit {
    pub const CHECK_FAILED: u8 = 1;
    pub const MISSING_FILE: u8 = 3;
    pub const BAD_CONFIG: u8 = 4;
    pub const DIGEST_MISMATCH: u8 = 5;
    pub const BAD_DATA: u8 = 6;
    pub const DIVERGED: u8 = 7;
    pub const INTERNAL: u8 = 8;
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => exit::MISSING_FILE,
        Error::Config(_) | Error::InvalidSpec(_) => exit::BAD_CONFIG,
        Error::DigestMismatch { .. } => exit::DIGEST_MISMATCH,
        Error::Format(_)
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::DimMismatch { .. }
        | Error::LabelOutOfRange { .. }
        | Error::Dimension(_)
        | Error::EmptyDataset
        | Error::EmptySequence
        | Error::NonFiniteFeature { .. } => exit::BAD_DATA,
        Error::Divergence { .. } => exit::DIVERGED,
        _ => exit::INTERNAL,
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn data_path(config: &RunConfig, split: Split) -> PathBuf {
    let configured = match split {
        Split::Train => &config.data.train,
        Split::Validation => &config.data.validation,
        Split::Test => &config.data.test,
    };
    configured
        .clone()
        .unwrap_or_else(|| config.output_dir.join(format!("{}.hcmsd", split_name(split))))
}

fn checkpoint_path(config: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| config.output_dir.join("model.ckpt"))
}

fn write_file(path: &Path, contents: &[u8]) -> hcms_core::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn stamp(config: &RunConfig) -> serde_json::Value {
    json!({ "config_digest": config.digest(), "seed": config.train.seed })
}

/// Loads a checkpoint and checks it fits the network the config describes.
fn load_model(config: &RunConfig, path: &Path, data: &Dataset) -> hcms_core::Result<(Checkpoint, CostModel)> {
    let ckpt = Checkpoint::load(path)?;
    let arch = config.train.architecture(data);
    ckpt.expect_architecture(&arch)?;
    let cost = config.cost_model_for(Some(&arch));
    Ok((ckpt, cost))
}

fn generate(config: &RunConfig) -> hcms_core::Result<()> {
    let splits = generate_synthetic(&config.synthetic)?;
    let digest = config.digest();
    for split in [Split::Train, Split::Validation, Split::Test] {
        let mut data = splits.split(split).clone();
        data.header.config_digest = Some(digest.clone());
        let path = data_path(config, split);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.into(),
                source: e,
            })?;
        }
        write_dataset(&data, &path)?;
        println!("{}: {} videos -> {}", split_name(split), data.len(), path.display());
    }
    Ok(())
}

fn train(config: &RunConfig, resume: bool) -> hcms_core::Result<()> {
    let train_set = read_dataset(data_path(config, Split::Train))?;
    let val_path = data_path(config, Split::Validation);
    let validation = if config.data.validation.is_some() || val_path.exists() {
        Some(read_dataset(&val_path)?)
    } else {
        None
    };
    let arch = config.train.architecture(&train_set);
    let cost = config.cost_model_for(Some(&arch));
    let ckpt_path = checkpoint_path(config, None);
    let curve_path = config.output_dir.join("curve.jsonl");
    let digest = config.digest();

    let state = if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        ckpt.expect_config(&digest)?;
        ckpt.expect_architecture(&arch)?;
        ckpt.state
            .ok_or_else(|| Error::Format(format!("{} has no training state", ckpt_path.display())))?
    } else {
        write_file(&curve_path, b"")?;
        TrainState::fresh(&config.train, &train_set)?
    };

    let mut curve = fs::OpenOptions::new()
        .append(true)
        .open(&curve_path)
        .map_err(|e| Error::Io {
            path: curve_path.clone(),
            source: e,
        })?;
    let mut failure = None;
    let outcome = train_from(
        &config.train,
        &train_set,
        validation.as_ref(),
        &cost,
        state,
        &mut |record, state| {
            if failure.is_some() {
                return;
            }
            let mut line = stamp(config);
            line["record"] = serde_json::to_value(record).expect("records serialize");
            let saved = writeln!(curve, "{line}")
                .map_err(|e| Error::Io {
                    path: curve_path.clone(),
                    source: e,
                })
                .and_then(|_| {
                    let (network, selected_epoch) = state.selected(&config.train)?;
                    Checkpoint {
                        config_digest: digest.clone(),
                        seed: config.train.seed,
                        selected_epoch,
                        network,
                        state: Some(state.clone()),
                    }
                    .save(&ckpt_path)
                });
            if let Err(e) = saved {
                failure = Some(e);
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    println!(
        "trained {} epochs, selected epoch {} -> {}",
        outcome.state.epoch,
        outcome.selected_epoch,
        ckpt_path.display()
    );
    Ok(())
}

fn eval(config: &RunConfig, checkpoint: Option<PathBuf>, split: Split) -> hcms_core::Result<()> {
    let data = read_dataset(data_path(config, split))?;
    let (ckpt, cost) = load_model(config, &checkpoint_path(config, checkpoint), &data)?;
    let opts = EvalOptions {
        clamp: config.eval.clamp,
        workers: config.train.workers,
        ..EvalOptions::default()
    };
    let report = evaluate(&ckpt.network, &data, &cost, &opts)?;
    let mut record = stamp(config);
    record["checkpoint_config_digest"] = json!(ckpt.config_digest);
    record["split"] = json!(split_name(split));
    record["metrics"] = serde_json::to_value(&report.metrics).expect("metrics serialize");
    record["per_class_usage"] = json!(report.per_class_usage(data.header.classes));
    let path = config.output_dir.join(format!("metrics_{}.json", split_name(split)));
    let text = serde_json::to_string_pretty(&record).expect("json");
    write_file(&path, text.as_bytes())?;
    let m = &report.metrics;
    println!(
        "{}: accuracy {:.4} mAP {:.4} usage {:.3}/{:.3} mean GFLOPs {:.2} -> {}",
        split_name(split),
        m.accuracy,
        m.map,
        m.usage[0],
        m.usage[1],
        m.mean_gflops,
        path.display()
    );
    Ok(())
}

fn sweep(config: &RunConfig, checkpoint: Option<PathBuf>, split: Split) -> hcms_core::Result<()> {
    let data = read_dataset(data_path(config, split))?;
    let (ckpt, cost) = load_model(config, &checkpoint_path(config, checkpoint), &data)?;
    let rows = budget_sweep(
        &ckpt.network,
        &data,
        &config.eval.budgets,
        &cost,
        config.eval.budget_policy,
        config.train.workers,
    )?;
    let text = format!(
        "# config_digest={} seed={}\n{}",
        config.digest(),
        config.train.seed,
        sweep_csv(&rows)
    );
    let path = config.output_dir.join(format!("sweep_{}.csv", split_name(split)));
    write_file(&path, text.as_bytes())?;
    for r in &rows {
        println!(
            "budget {:>9.2}: accuracy {:.4} mAP {:.4} mean GFLOPs {:.2} max {:.2}",
            r.budget, r.metrics.accuracy, r.metrics.map, r.metrics.mean_gflops, r.max_gflops
        );
    }
    println!("-> {}", path.display());
    Ok(())
}

fn trace(config: &RunConfig, checkpoint: Option<PathBuf>, split: Split, video: Option<u64>) -> hcms_core::Result<()> {
    let mut data = read_dataset(data_path(config, split))?;
    if let Some(id) = video {
        data.videos.retain(|v| v.id == id);
        if data.videos.is_empty() {
            return Err(Error::Config(format!(
                "no video with id {id} in the {} split",
                split_name(split)
            )));
        }
        data.header.videos = data.videos.len();
    }
    let (ckpt, cost) = load_model(config, &checkpoint_path(config, checkpoint), &data)?;
    let opts = EvalOptions {
        clamp: config.eval.clamp,
        workers: config.train.workers,
        ..EvalOptions::default()
    };
    let report = evaluate(&ckpt.network, &data, &cost, &opts)?;
    let mut text = String::new();
    for r in trace_records(&report.videos, &cost, &config.digest()) {
        let mut line = serde_json::to_value(&r).expect("records serialize");
        line["seed"] = json!(config.train.seed);
        text.push_str(&line.to_string());
        text.push('\n');
    }
    let path = config.output_dir.join(format!("trace_{}.jsonl", split_name(split)));
    write_file(&path, text.as_bytes())?;
    println!(
        "{} videos, {} step records -> {}",
        data.len(),
        report.metrics.steps,
        path.display()
    );
    Ok(())
}

fn run_verify(config: Option<&RunConfig>) -> hcms_core::Result<bool> {
    let cost = config.map_or_else(CostModel::default, |c| c.cost_model_for(None));
    let checks = verify::run_all(&cost)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(failed == 0)
}

fn run(cli: Cli) -> hcms_core::Result<bool> {
    match cli.command {
        Command::Init { out } => {
            write_file(&out, RunConfig::default().to_toml().as_bytes())?;
        }
        Command::Generate { config } => generate(&RunConfig::load(config)?)?,
        Command::Train { config, resume } => train(&RunConfig::load(config)?, resume)?,
        Command::Eval {
            config,
            checkpoint,
            split,
        } => eval(&RunConfig::load(config)?, checkpoint, split.into())?,
        Command::Sweep {
            config,
            checkpoint,
            split,
        } => sweep(&RunConfig::load(config)?, checkpoint, split.into())?,
        Command::Trace {
            config,
            checkpoint,
            split,
            video,
        } => trace(&RunConfig::load(config)?, checkpoint, split.into(), video)?,
        Command::Verify { config } => {
            let config = config.map(RunConfig::load).transpose()?;
            return run_verify(config.as_ref());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // The environment is deliberately not consulted.
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(exit::CHECK_FAILED),
        Err(e) => {
            eprintln!("hcms: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
