use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stan_core::checkpoint::{graft, Checkpoint};
use stan_core::config::ExperimentConfig;
use stan_core::container::{load_corpus, save_corpus, write_atomic};
use stan_core::corpus::{generate_corpus, Corpus};
use stan_core::eval::{correlate_attention, evaluate, median, EvalOptions};
use stan_core::model::{build_model, count_params, roster, CountConvention};
use stan_core::nn::{Precision, Real};
use stan_core::rng::domain;
use stan_core::train::train;
use stan_core::{Error, Prng};

const SNAPSHOT: &str = "resolved_config.toml";

#[derive(Parser)]
#[command(name = "stan", version, about = "Sensor transformation attention networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Root seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override, e.g. `train.max_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Clean,
    Noisy,
    Profile,
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Evaluation condition.
    #[arg(long, value_enum)]
    condition: Option<ConditionArg>,
    /// Upper bound of the random-walk noise level.
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Per-sensor profile, e.g. `sweep:0:3`. Repeat once per sensor.
    #[arg(long = "profile")]
    profiles: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Write one noise schedule as CSV.
    NoisePreview {
        #[command(flatten)]
        common: Common,
        /// Profile to preview; defaults to a random walk.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        sigma_max: Option<f64>,
    },
    /// Train a model and write a checkpoint and a training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory; generated from the configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory; generated from the configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Write per-frame noise levels and attention weights as CSV.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory; generated from the configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        noise: NoiseArgs,
        /// Number of test samples to trace.
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
    /// Combine the sensor layers of one checkpoint with the classifier of another.
    Graft {
        #[command(flatten)]
        common: Common,
        /// Checkpoint supplying sensors, transforms and attention.
        #[arg(long)]
        front: PathBuf,
        /// Checkpoint supplying the classifier stack.
        #[arg(long)]
        body: PathBuf,
    },
    /// Parameter counts of the reference configurations.
    CountParams {
        #[command(flatten)]
        common: Common,
        /// Give every recurrent layer a trainable initial state.
        #[arg(long)]
        learned_initial_state: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InvalidConfig(_)) => 3,
        Some(Error::Format(_)) => 4,
        Some(Error::Infeasible { .. }) => 5,
        Some(Error::Numeric(_)) => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Resolves the configuration, creates the output directory and writes the
/// snapshot.
fn setup(common: &Common, extra: Vec<String>) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    write_file(&common.out.join(SNAPSHOT), config.to_toml()?.as_bytes())?;
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    write_atomic(path, bytes)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_file(path, &text)
}

fn corpus_for(config: &ExperimentConfig, data: Option<&Path>) -> anyhow::Result<Corpus> {
    Ok(match data {
        Some(dir) => load_corpus(dir)?,
        None => generate_corpus(&config.corpus, config.seed)?,
    })
}

fn noise_overrides(noise: &NoiseArgs) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(c) = noise.condition {
        let name = match c {
            ConditionArg::Clean => "clean",
            ConditionArg::Noisy => "noisy",
            ConditionArg::Profile => "profile",
        };
        out.push(format!("eval.condition={name}"));
    }
    if let Some(s) = noise.sigma_max {
        out.push(format!("eval.walk.sigma_max={s:?}"));
    }
    if !noise.profiles.is_empty() {
        let quoted: Vec<String> = noise.profiles.iter().map(|p| format!("{p:?}")).collect();
        out.push(format!("eval.profiles=[{}]", quoted.join(",")));
    }
    out
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData { common } => {
            let config = setup(&common, vec![])?;
            let corpus = generate_corpus(&config.corpus, config.seed)?;
            save_corpus(&common.out, &corpus)?;
            println!(
                "wrote {} train and {} test samples to {}",
                corpus.train.len(),
                corpus.test.len(),
                common.out.display()
            );
        }
        Command::NoisePreview { common, profile, sigma_max } => {
            let mut extra = Vec::new();
            if let Some(p) = profile {
                extra.push(format!("preview.profile={p:?}"));
            }
            if let Some(s) = sigma_max {
                extra.push(format!("preview.walk.sigma_max={s:?}"));
            }
            let config = setup(&common, extra)?;
            let spec = config.preview.profile()?;
            let mut prng = Prng::derive(config.seed, &[domain::PREVIEW]);
            let schedule = spec.realize(&mut prng, config.preview.length)?;
            write_file(&common.out.join("schedule.csv"), schedule.to_csv().as_bytes())?;
            println!("wrote {} frames to {}", schedule.len(), common.out.join("schedule.csv").display());
        }
        Command::Train { common, data } => {
            let config = setup(&common, vec![])?;
            let corpus = corpus_for(&config, data.as_deref())?;
            match config.precision {
                Precision::F32 => train_with::<f32>(&config, &corpus, &common.out)?,
                Precision::F64 => train_with::<f64>(&config, &corpus, &common.out)?,
            }
        }
        Command::Eval { common, checkpoint, data, noise } => {
            let config = setup(&common, noise_overrides(&noise))?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let corpus = corpus_for(&config, data.as_deref())?;
            let options = EvalOptions {
                average_copies: config.eval.average_copies,
                traces: false,
            };
            let report = match ckpt.precision() {
                Precision::F32 => evaluate(&ckpt.model::<f32>()?, &corpus.test, &config.eval.condition()?, config.seed, &options)?,
                Precision::F64 => evaluate(&ckpt.model::<f64>()?, &corpus.test, &config.eval.condition()?, config.seed, &options)?,
            };
            write_json(&common.out.join("metrics.json"), &serde_json::to_value(&report.metrics)?)?;
            println!("SER {:.2}  WER {:.2}", report.metrics.ser, report.metrics.wer);
        }
        Command::Trace { common, checkpoint, data, noise, limit } => {
            let config = setup(&common, noise_overrides(&noise))?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let corpus = corpus_for(&config, data.as_deref())?;
            let samples = &corpus.test[..limit.min(corpus.test.len())];
            let options = EvalOptions {
                average_copies: None,
                traces: true,
            };
            let condition = config.eval.condition()?;
            let report = match ckpt.precision() {
                Precision::F32 => evaluate(&ckpt.model::<f32>()?, samples, &condition, config.seed, &options)?,
                Precision::F64 => evaluate(&ckpt.model::<f64>()?, samples, &condition, config.seed, &options)?,
            };
            if report.traces.is_empty() && !samples.is_empty() {
                bail!(Error::Input("the checkpoint's model has no attention to trace".into()));
            }
            let mut rows = Vec::new();
            let mut rs = Vec::new();
            for t in &report.traces {
                let file = format!("trace_{:08}.csv", t.id);
                write_file(&common.out.join(&file), t.trace.to_csv().as_bytes())?;
                let corr = (t.trace.sensors() == 2).then(|| correlate_attention(&t.trace)).transpose()?;
                if let Some(r) = corr.and_then(|c| c.r) {
                    rs.push(r);
                }
                rows.push(json!({"id": t.id, "file": file, "r": corr.and_then(|c| c.r), "lag": corr.and_then(|c| c.lag)}));
            }
            let summary = json!({"samples": rows, "median_r": median(&mut rs)});
            write_json(&common.out.join("correlation.json"), &summary)?;
            println!("traced {} samples, median r {:?}", rows.len(), summary["median_r"]);
        }
        Command::Graft { common, front, body } => {
            setup(&common, vec![])?;
            let f = Checkpoint::load(&front).with_context(|| format!("front {}", front.display()))?;
            let b = Checkpoint::load(&body).with_context(|| format!("body {}", body.display()))?;
            let grafted = graft(&f, &b, &front.display().to_string(), &body.display().to_string())?;
            let path = common.out.join("model.ckpt");
            grafted.save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::CountParams { common, learned_initial_state } => {
            setup(&common, vec![])?;
            let convention = if learned_initial_state {
                CountConvention::LearnedInitialState
            } else {
                CountConvention::ZeroInitialState
            };
            let mut rows = Vec::new();
            println!("{:<22} {:>10} {:>10} {:>8}", "model", "count", "reference", "diff %");
            for (table, entries) in [("digits", roster::digits()), ("audio_visual", roster::audio_visual())] {
                for e in entries {
                    let count = count_params(&e.spec, convention)?;
                    let diff = e.reference.map(|r| 100.0 * (count as f64 - r as f64) / r as f64);
                    let show = |v: Option<String>| v.unwrap_or_else(|| "-".into());
                    println!(
                        "{:<22} {:>10} {:>10} {:>8}",
                        e.name,
                        count,
                        show(e.reference.map(|r| r.to_string())),
                        show(diff.map(|d| format!("{d:+.2}")))
                    );
                    rows.push(json!({"table": table, "model": e.name, "count": count, "reference": e.reference, "diff_percent": diff}));
                }
            }
            write_json(&common.out.join("params.json"), &serde_json::Value::Array(rows))?;
        }
    }
    Ok(())
}

fn train_with<F: Real>(config: &ExperimentConfig, corpus: &Corpus, out: &Path) -> anyhow::Result<()> {
    let spec = config.model.to_spec(corpus.feature_dim, corpus.num_classes())?;
    let model = build_model::<F>(&spec, &mut Prng::derive(config.seed, &[domain::INIT]))?;
    let outcome = train(model, &corpus.train, &config.train, config.seed, None)?;
    write_file(&out.join("train_log.jsonl"), outcome.log_jsonl().as_bytes())?;
    let mut ckpt = Checkpoint::from_model(&outcome.model);
    ckpt.config_hash = Some(config.hash());
    ckpt.metrics = BTreeMap::from([
        ("best_epoch".to_owned(), outcome.best_epoch as f64),
        ("best_validation_loss".to_owned(), outcome.best_validation_loss),
        ("epochs_run".to_owned(), outcome.log.len() as f64),
        ("excluded_infeasible".to_owned(), outcome.excluded_infeasible as f64),
    ]);
    ckpt.save(&out.join("model.ckpt"))?;
    if outcome.excluded_infeasible > 0 {
        eprintln!("excluded {} infeasible samples", outcome.excluded_infeasible);
    }
    println!(
        "best epoch {} of {}, validation loss {:.4}; blob sha256 {}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_validation_loss,
        ckpt.blob_hash()
    );
    Ok(())
}
