use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use steerank_autodiff::snapshot;
use steerank_core::bundle;
use steerank_core::config::RunConfig;
use steerank_core::data::{read_jsonl, write_jsonl};
use steerank_core::datagen::{demo_sessions, generate_dataset};
use steerank_core::evaluator::heldout_auc;
use steerank_core::instance::Instance;
use steerank_core::model::Model;
use steerank_core::training;

#[derive(Parser)]
#[command(name = "steerank", version, about = "Preference-controllable list re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration (defaults when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write train.jsonl, test.jsonl and demo_sessions.json.
    GenData(Common),
    /// Pre-train the list evaluator on logged clicks.
    TrainEvaluator {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.jsonl and test.jsonl.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train hypernetwork and actor; writes curves and a bundle.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Reuse an evaluator snapshot instead of pre-training one.
        #[arg(long)]
        evaluator: Option<PathBuf>,
    },
    /// Evaluate a bundle at the evaluation weights (eval.csv).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Sweep preference weights over a grid (sweep.csv).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        /// Utility swept from 0 to its cap; others stay at the eval weights.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Print parameter names, shapes and hashes of a bundle.
    Inspect {
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    Ok(RunConfig::load(c.config.as_deref(), &c.set)?)
}

/// Bundle config with `--set` overrides applied (used by eval, sweep, serve).
fn bundle_model(path: &Path, c: &Common) -> Result<(steerank_core::bundle::Bundle, Model)> {
    let b = bundle::load(path).with_context(|| format!("loading bundle {}", path.display()))?;
    let mut value = serde_json::to_value(&b.model.config)?;
    for s in &c.set {
        steerank_core::config::apply_override(&mut value, s)?;
    }
    let config = RunConfig::from_value(value)?;
    let model = bundle::from_parts(config, b.model.params.clone())?;
    Ok((b, model))
}

fn instances(path: &Path) -> Result<Vec<Instance>> {
    let samples = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(samples.iter().map(Instance::from_sample).collect::<steerank_core::Result<_>>()?)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(c) => {
            let config = load_config(&c)?;
            let ds = generate_dataset(&config)?;
            fs::create_dir_all(&c.out)?;
            write_jsonl(&c.out.join("train.jsonl"), &ds.train)?;
            write_jsonl(&c.out.join("test.jsonl"), &ds.test)?;
            let demo = demo_sessions(&ds.test, config.data.demo_sessions);
            fs::write(c.out.join("demo_sessions.json"), serde_json::to_string_pretty(&demo)?)?;
            eprintln!("wrote {} train and {} test samples to {}", ds.train.len(), ds.test.len(), c.out.display());
        }
        Command::TrainEvaluator { common, data } => {
            let config = load_config(&common)?;
            let train = instances(&data.join("train.jsonl"))?;
            let test = instances(&data.join("test.jsonl"))?;
            let mut model = Model::init(config)?;
            let curve = training::pretrain_evaluator(&mut model, &train)?;
            let limit = training::eval_slice(&model.config, &test);
            let auc = heldout_auc(&model.evaluator, &model.params, limit)?;
            fs::create_dir_all(&common.out)?;
            snapshot::save(&model.evaluator_params(), &common.out.join("evaluator"))?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in curve.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            fs::write(common.out.join(training::EVALUATOR_CURVE_FILE), csv)?;
            fs::write(common.out.join("evaluator_auc.json"), serde_json::to_string_pretty(&serde_json::json!({ "auc": auc }))?)?;
            println!("held-out AUC {auc:.4}");
        }
        Command::Train { common, data, evaluator } => {
            let config = load_config(&common)?;
            let train = instances(&data.join("train.jsonl"))?;
            let test = instances(&data.join("test.jsonl"))?;
            let eval = evaluator.map(|p| snapshot::load(&p)).transpose()?;
            let out = training::train(config, &train, &test, eval.as_ref(), Some(&common.out))?;
            println!("bundle {} ({})", common.out.join(training::BUNDLE_DIR).display(), out.hash);
        }
        Command::Eval { common, bundle: path, data } => {
            let (_, model) = bundle_model(&path, &common)?;
            let test = instances(&data.join("test.jsonl"))?;
            let w = model.config.eval_weights();
            let rows = training::evaluate_controllability(&model, &[w], training::eval_slice(&model.config, &test))?;
            fs::create_dir_all(&common.out)?;
            training::write_sweep(&common.out.join("eval.csv"), &model.config, &rows)?;
        }
        Command::Sweep { common, bundle: path, data, grid, axis } => {
            let (_, model) = bundle_model(&path, &common)?;
            let test = instances(&data.join("test.jsonl"))?;
            let points = grid.unwrap_or(model.config.eval.grid);
            let axis = axis.or_else(|| model.config.eval.axis.clone());
            let grid = training::weight_grid(&model.config, points, axis.as_deref())?;
            let rows = training::evaluate_controllability(&model, &grid, training::eval_slice(&model.config, &test))?;
            fs::create_dir_all(&common.out)?;
            training::write_sweep(&common.out.join("sweep.csv"), &model.config, &rows)?;
        }
        Command::Serve { common, bundle: path, bind } => {
            let (b, _) = bundle_model(&path, &common)?;
            let addr = bind.unwrap_or_else(|| b.model.config.serve.bind.clone());
            let state = steerank_serve::AppState::from_path(&path)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(steerank_serve::serve(state, &addr))?;
        }
        Command::Inspect { bundle: path } => {
            let report = bundle::inspect(&path)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

