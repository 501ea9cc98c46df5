use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qrcl::ablate::{self, Axis};
use qrcl::checkpoint;
use qrcl::dataset;
use qrcl::evaluate::evaluate;
use qrcl::profile::{count_flops, count_params, median_latency_ms};
use qrcl::report::{loss_csv, write_roc, write_text};
use qrcl::train::{train_with, TrainState};
use qrcl::{ExperimentConfig, HarnessError, Model, Result};
use qrcl_data::{build_sequences, load_unlabeled, synth};

#[derive(Parser)]
#[command(name = "qrcl", version, about = "Train, evaluate, profile and ablate quantile-region CNN + LSTM + attention classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured data and evaluate on its test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint at its epoch boundary.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write `epoch-<n>.qrcl` every N epochs.
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<usize>,
    },
    /// Re-evaluate a checkpoint on the test split of its data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare variants along one axis over `ablate.seeds`.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `backbone` or `attention`.
        #[arg(long)]
        axis: String,
    },
    /// Parameter count, FLOPs per inference and median latency.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Profile a trained checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score rows of a CSV laid out like the training data.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the configured synthetic dataset as CSV plus its schema.
    Synth {
        #[command(flatten)]
        common: Common,
        /// CSV path; defaults to `<out>/<kind>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn configure(base: ExperimentConfig, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.clone(),
            source: e,
        })?;
        cfg.apply_text(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {}", path.display(), e)))?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(common: &Common, resume: Option<&Path>, every: Option<usize>) -> Result<()> {
    let (cfg, state) = match resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            let cfg = configure(ck.config, common)?;
            log::info!("resuming {} at epoch {}", path.display(), ck.state.epochs_completed);
            let mut state = ck.state;
            state.optimizer.lr = cfg.train.lr;
            state.optimizer.momentum = cfg.train.momentum;
            (cfg, Some(state))
        }
        None => (configure(ExperimentConfig::default(), common)?, None),
    };
    let out = cfg.out.clone();
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    let save_every = |s: &TrainState| match every {
        Some(n) if n > 0 && s.epochs_completed.is_multiple_of(n) => {
            checkpoint::save(&out.join(format!("epoch-{}.qrcl", s.epochs_completed)), &cfg, s, None)
        }
        _ => Ok(()),
    };
    let run = train_with(&cfg, state, save_every)?;
    let report = &run.evaluation.report;
    checkpoint::save(&checkpoint::default_path(&out), &cfg, &run.state, Some(report))?;
    write_text(&out.join("report.json"), &report.to_json())?;
    write_text(&out.join("loss.csv"), &loss_csv(&report.loss_trace))?;
    if let Some(points) = run.evaluation.roc() {
        write_roc(&out.join("roc.csv"), &points)?;
    }
    println!("{}", report.to_json());
    Ok(())
}

fn evaluate_cmd(common: &Common, path: &Path) -> Result<()> {
    let ck = checkpoint::load(path)?;
    let cfg = configure(ck.config, common)?;
    let data = dataset::load(&cfg)?;
    let mut eval = evaluate(&ck.state.model, &data.test, cfg.threshold)?;
    eval.report.loss_trace = ck.state.loss_trace.clone();
    eval.report.training_time_s = ck.state.training_time_s;
    write_text(&cfg.out.join("evaluation.json"), &eval.report.to_json())?;
    println!("{}", eval.report.to_json());
    Ok(())
}

fn ablate_cmd(common: &Common, axis: &str) -> Result<()> {
    let axis: Axis = axis.parse()?;
    let cfg = configure(ExperimentConfig::default(), common)?;
    let variants = ablate::variants(axis, &cfg);
    let result = ablate::ablate(&cfg, axis, &variants, Some(&cfg.out))?;
    print!("{}", result.table());
    Ok(())
}

fn profile_cmd(common: &Common, path: Option<&Path>) -> Result<()> {
    let (cfg, model) = match path {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            (configure(ck.config, common)?, Some(ck.state.model))
        }
        None => (configure(ExperimentConfig::default(), common)?, None),
    };
    let data = dataset::load(&cfg)?;
    let model = match model {
        Some(m) => m,
        None => Model::new(&cfg.model, data.input, cfg.seed)?,
    };
    let latency = median_latency_ms(&model, data.test.iter().map(|s| &s.x))?;
    let summary = serde_json::json!({
        "variant": model.label(),
        "input": model.input,
        "parameter_count": count_params(&model),
        "flops_per_inference": count_flops(&model)?,
        "inference_time_ms_median": latency,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn predict_cmd(common: &Common, path: &Path, input: &Path, output: Option<&Path>) -> Result<()> {
    let ck = checkpoint::load(path)?;
    let cfg = configure(ck.config, common)?;
    // preprocessing is refit on the training split the snapshot describes
    let data = dataset::load(&cfg)?;
    let raw = load_unlabeled(input, &data.schema)?;
    let samples = build_sequences(&data.stats.apply(&raw)?)?;
    let model = &ck.state.model;
    let taus = &model.config.taus;
    let mut header = vec!["id".to_string(), "probability".to_string(), "label".to_string()];
    header.extend(taus.iter().map(|t| format!("q{t}")));
    let sink: Box<dyn std::io::Write> = match output {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| HarnessError::Io {
            path: p.to_path_buf(),
            source: e,
        })?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| HarnessError::Io {
        path: output.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source: e.into(),
    };
    w.write_record(&header).map_err(io_err)?;
    for s in &samples {
        let p = model.predict(&s.x)?;
        let mut rec = vec![s.id.clone(), p.prob.to_string(), u8::from(p.prob > cfg.threshold).to_string()];
        rec.extend(p.quantiles.iter().map(f64::to_string));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| io_err(e.into()))
}

fn synth_cmd(common: &Common, output: Option<&Path>) -> Result<()> {
    let cfg = configure(ExperimentConfig::default(), common)?;
    let d = &cfg.data;
    let samples = qrcl_data::synth_dataset(d.kind, d.n, d.steps, d.features, cfg.seed)?;
    let csv_path = output.map_or_else(|| cfg.out.join(format!("{}.csv", d.kind.name())), Path::to_path_buf);
    if let Some(dir) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    synth::write_csv(&samples, &csv_path)?;
    let schema_path = csv_path.with_extension("schema");
    let schema = synth::schema_for(d.kind.name(), d.steps, d.features);
    write_text(&schema_path, &schema.to_text())?;
    println!("{}\n{}", csv_path.display(), schema_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            common,
            resume,
            checkpoint_every,
        } => train_cmd(common, resume.as_deref(), *checkpoint_every),
        Command::Evaluate { common, checkpoint } => evaluate_cmd(common, checkpoint),
        Command::Ablate { common, axis } => ablate_cmd(common, axis),
        Command::Profile { common, checkpoint } => profile_cmd(common, checkpoint.as_deref()),
        Command::Predict {
            common,
            checkpoint,
            input,
            output,
        } => predict_cmd(common, checkpoint, input, output.as_deref()),
        Command::Synth { common, output } => synth_cmd(common, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
