//! `dhpm`: generate datasets, train, evaluate and export predictions.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dhpm::config::TrainConfig;
use dhpm::dataset::{build_dataset, read_dataset, test_functions, write_dataset};
use dhpm::evaluation::{
    error_distribution, evaluate_on_function, hidden_field_comparison, parameter_sweep, sweep_d_values, write_contours,
    EvalCase, TrainedRange, SWEEP_K_VALUES, SWEEP_K_VALUES_IN_RANGE,
};
use dhpm::model::{DhpModel, Scenario};
use dhpm::oracle::{InputFunction, InputFunctionSpec, PdeParams};
use dhpm::trainer::{self, CheckpointPolicy, TrainOptions, TrainState};

#[derive(Parser)]
#[command(
    name = "dhpm",
    version,
    about = "Generalized deep hidden physics models for u_t = D u_xx + K u^2"
)]
struct Cli {
    /// Worker threads (1 = fully serial).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the oracle for every training function and write a dataset directory.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, env = "DHPM_OUT_DIR")]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory from `generate`; generated in memory when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, env = "DHPM_OUT_DIR")]
        out: PathBuf,
        /// Checkpoint every N epochs.
        #[arg(long, default_value_t = 50)]
        checkpoint_every: usize,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Error distribution over unseen random periodic functions.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model or checkpoint file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, env = "DHPM_OUT_DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_test: usize,
        /// Seed of the unseen test functions.
        #[arg(long, default_value_t = 1_000_003)]
        test_seed: u64,
        #[command(flatten)]
        ctx: ContextArgs,
        /// Also run the D sweep (parameter-generalization models only).
        #[arg(long)]
        sweep: bool,
    },
    /// Predicted field for one input function, as x,t,value CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predicted, reference and hidden-physics fields as x,t,value CSVs.
    ExportContours {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        #[arg(long, env = "DHPM_OUT_DIR")]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// inputgen, paramgen or domaingen; must match the preset or config when both are given.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Bundled configuration name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// quadratic, cubic, trigonometric or periodic:a1;a2;a3;a4;a5
    #[arg(long, conflicts_with = "coeffs")]
    function: Option<String>,
    /// Five periodic coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coeffs: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
struct ContextArgs {
    /// Domain length.
    #[arg(long = "L", default_value_t = 1.0)]
    length: f64,
    /// Diffusion coefficient.
    #[arg(long = "D", default_value_t = 1e-3)]
    d: f64,
    /// Reaction rate.
    #[arg(long = "K", default_value_t = 1e-3)]
    k: f64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config_path: Option<PathBuf>,
    preset: Option<String>,
    master_seed: Option<u64>,
    config_hash: Option<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    threads: Option<usize>,
    parallel_build: bool,
    started_unix: u64,
    version: &'static str,
}

/// Error classes with distinct exit codes.
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<dhpm::Error> for Failure {
    fn from(e: dhpm::Error) -> Self {
        use dhpm::Error as E;
        match e {
            E::Shape(_)
            | E::InvalidConfig(_)
            | E::InvalidArgument(_)
            | E::Unstable { .. }
            | E::ConfigMismatch { .. }
            | E::Format { .. }
            | E::Json(_) => Failure::Validation(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure::Validation(anyhow!("{msg}"))
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    configure_threads(cli.threads)?;
    let threads = cli.threads;
    match cli.command {
        Command::Generate { cfg, out } => generate(&cfg, &out, threads),
        Command::Train {
            cfg,
            dataset,
            out,
            checkpoint_every,
            resume,
        } => train(
            &cfg,
            dataset.as_deref(),
            &out,
            checkpoint_every,
            resume.as_deref(),
            threads,
        ),
        Command::Evaluate {
            cfg,
            model,
            out,
            n_test,
            test_seed,
            ctx,
            sweep,
        } => evaluate(&cfg, &model, &out, n_test, test_seed, &ctx, sweep, threads),
        Command::Predict { model, input, ctx, out } => predict(&model, &input, &ctx, &out, threads),
        Command::ExportContours { model, input, ctx, out } => export_contours(&model, &input, &ctx, &out, threads),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Outcome {
    if let Some(n) = threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(anyhow!("thread pool: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> Outcome {
    match threads {
        Some(0) => Err(invalid("--threads must be at least 1")),
        Some(n) if n > 1 => {
            eprintln!("note: built without the `parallel` feature; running on one thread");
            Ok(())
        }
        _ => Ok(()),
    }
}

fn resolve_config(args: &ConfigArgs) -> Outcome<TrainConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), None) => TrainConfig::preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_json(&text)?
        }
        (None, None) => match args.scenario {
            Some(Scenario::InputGen) | None => TrainConfig::preset("desk-small")?,
            Some(Scenario::ParamGen) => TrainConfig::preset("desk-paramgen")?,
            Some(Scenario::DomainGen) => TrainConfig::preset("desk-domaingen")?,
        },
        (Some(_), Some(_)) => return Err(invalid("--preset and --config are exclusive")),
    };
    if let Some(s) = args.scenario {
        if s != cfg.scenario {
            return Err(invalid(format!(
                "--scenario {s} does not match the configuration's scenario {}",
                cfg.scenario
            )));
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg_args: Option<&ConfigArgs>,
    cfg: Option<&TrainConfig>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    threads: Option<usize>,
) -> Outcome {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = RunManifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        config_path: cfg_args.and_then(|a| a.config.clone()),
        preset: cfg_args.and_then(|a| a.preset.clone()),
        master_seed: cfg.map(|c| c.seed),
        config_hash: cfg.map(|c| c.hash()),
        inputs,
        outputs,
        threads,
        parallel_build: dhpm::par::is_parallel(),
        started_unix: now_unix(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = dir.join(format!("run-{command}.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn generate(args: &ConfigArgs, out: &Path, threads: Option<usize>) -> Outcome {
    let cfg = resolve_config(args)?;
    write_manifest(
        out,
        "generate",
        Some(args),
        Some(&cfg),
        vec![],
        vec![out.to_path_buf()],
        threads,
    )?;
    let records = build_dataset(&cfg)?;
    write_dataset(out, &cfg, &records)?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn train(
    args: &ConfigArgs,
    dataset: Option<&Path>,
    out: &Path,
    checkpoint_every: usize,
    resume: Option<&Path>,
    threads: Option<usize>,
) -> Outcome {
    let cfg = resolve_config(args)?;
    let mut inputs: Vec<PathBuf> = dataset.iter().map(|p| p.to_path_buf()).collect();
    inputs.extend(resume.map(Path::to_path_buf));
    let model_path = out.join("model.json");
    let log_path = out.join("train_log.csv");
    let ckpt_dir = out.join("checkpoints");
    write_manifest(
        out,
        "train",
        Some(args),
        Some(&cfg),
        inputs,
        vec![model_path.clone(), log_path.clone(), ckpt_dir.clone()],
        threads,
    )?;
    let records = match dataset {
        Some(dir) => {
            let (manifest, records) = read_dataset(dir)?;
            if manifest.config_hash != cfg.hash() {
                let mut expected = manifest.config.clone();
                expected.seed = cfg.seed;
                if expected != cfg {
                    return Err(invalid(format!(
                        "dataset {} was generated with a different configuration",
                        dir.display()
                    )));
                }
            }
            records
        }
        None => build_dataset(&cfg)?,
    };
    let state = match resume {
        Some(path) => TrainState::load(path)?,
        None => TrainState::new(DhpModel::new(cfg.scenario, cfg.seed)?, &cfg),
    };
    let total = cfg.total_epochs();
    let mut progress = |e: &trainer::TrainLogEntry| {
        if e.batch == 0 || e.step.is_multiple_of(500) {
            eprintln!(
                "epoch {}/{total} step {} total {:.4e} (data {:.4e}, equation {:.4e})",
                e.epoch + 1,
                e.step,
                e.losses.total,
                e.losses.data_loss,
                e.losses.equation_loss
            );
        }
    };
    let options = TrainOptions {
        checkpoints: Some(CheckpointPolicy {
            dir: ckpt_dir,
            every: checkpoint_every,
        }),
        stop_after: None,
        on_step: Some(&mut progress),
    };
    let (state, log) = if resume.is_some() {
        trainer::resume(state, &records, &cfg, options)?
    } else {
        trainer::run(state, &records, &cfg, options)?
    };
    let text = serde_json::to_string(&state.model).map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::write(&model_path, text).with_context(|| format!("writing {}", model_path.display()))?;
    // a resumed run appends to the log of the interrupted one
    if resume.is_some() && log_path.exists() {
        let mut csv = std::fs::read_to_string(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
        csv.extend(log.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
        std::fs::write(&log_path, csv).with_context(|| format!("writing {}", log_path.display()))?;
    } else {
        log.write_csv(&log_path)?;
    }
    if let Some((first, last)) = log.first_last() {
        eprintln!("trained {} steps: total loss {first:.4e} -> {last:.4e}", log.len());
    }
    Ok(())
}

/// A model file or a training checkpoint.
fn load_model(path: &Path) -> Outcome<DhpModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(model) = serde_json::from_str::<DhpModel>(&text) {
        return Ok(model);
    }
    serde_json::from_str::<TrainState>(&text)
        .map(|s| s.model)
        .map_err(|e| invalid(format!("{} is neither a model nor a checkpoint: {e}", path.display())))
}

fn input_spec(input: &InputArgs, length: f64) -> Outcome<InputFunctionSpec> {
    let function = match (&input.function, &input.coeffs) {
        (Some(f), None) => f.parse::<InputFunction>()?,
        (None, Some(c)) => InputFunction::Periodic {
            coefficients: c.clone(),
        },
        (None, None) => return Err(invalid("give --function or --coeffs")),
        (Some(_), Some(_)) => return Err(invalid("--function and --coeffs are exclusive")),
    };
    Ok(InputFunctionSpec::new(function, length)?)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    args: &ConfigArgs,
    model_path: &Path,
    out: &Path,
    n_test: usize,
    test_seed: u64,
    ctx: &ContextArgs,
    sweep: bool,
    threads: Option<usize>,
) -> Outcome {
    let cfg = resolve_config(args)?;
    if n_test == 0 {
        return Err(invalid("--n-test must be at least 1"));
    }
    let report_path = out.join("report.json");
    let sweep_path = out.join("sweep.csv");
    let mut outputs = vec![report_path.clone()];
    if sweep {
        outputs.push(sweep_path.clone());
    }
    write_manifest(
        out,
        "evaluate",
        Some(args),
        Some(&cfg),
        vec![model_path.to_path_buf()],
        outputs,
        threads,
    )?;
    let model = load_model(model_path)?;
    if model.scenario != cfg.scenario {
        return Err(invalid(format!(
            "model is {} but the configuration is {}",
            model.scenario, cfg.scenario
        )));
    }
    let params = PdeParams::new(ctx.d, ctx.k)?;
    let functions = test_functions(test_seed, n_test, ctx.length)?;
    let cases: Vec<EvalCase> = functions
        .iter()
        .enumerate()
        .map(|(id, spec)| EvalCase {
            id,
            spec: spec.clone(),
            params,
        })
        .collect();
    let mut report = error_distribution(&model, &cases)?;
    report.hidden_field_error = Some(hidden_field_comparison(&model, &functions[0], params)?.error);
    report.write_json(&report_path)?;
    eprintln!(
        "mean relative L2 error {:.4e} (std {:.4e}) over {n_test} functions; hidden-field error {:.4e}",
        report.mean,
        report.std,
        report.hidden_field_error.unwrap_or(f64::NAN)
    );
    if sweep {
        if model.scenario != Scenario::ParamGen {
            return Err(invalid("--sweep needs a parameter-generalization model"));
        }
        let mut k_values = SWEEP_K_VALUES.to_vec();
        k_values.extend(SWEEP_K_VALUES_IN_RANGE);
        let table = parameter_sweep(
            &model,
            &sweep_d_values(),
            &k_values,
            &functions,
            TrainedRange::of(&cfg.d_values),
            TrainedRange::of(&cfg.k_values),
        )?;
        table.write_csv(&sweep_path)?;
    }
    Ok(())
}

fn predict(model_path: &Path, input: &InputArgs, ctx: &ContextArgs, out: &Path, threads: Option<usize>) -> Outcome {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    write_manifest(
        dir,
        "predict",
        None,
        None,
        vec![model_path.to_path_buf()],
        vec![out.to_path_buf()],
        threads,
    )?;
    let model = load_model(model_path)?;
    let spec = input_spec(input, ctx.length)?;
    let params = PdeParams::new(ctx.d, ctx.k)?;
    let field = dhpm::evaluation::predict_field(&model, &spec, params)?;
    write_contours(out, &field.grid, &field.values)?;
    eprintln!("wrote {}x{} field to {}", field.grid.nx, field.grid.nt, out.display());
    Ok(())
}

fn export_contours(
    model_path: &Path,
    input: &InputArgs,
    ctx: &ContextArgs,
    out: &Path,
    threads: Option<usize>,
) -> Outcome {
    let names = [
        "state_predicted.csv",
        "state_reference.csv",
        "hidden_true.csv",
        "hidden_learned.csv",
    ];
    let outputs: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
    write_manifest(
        out,
        "export-contours",
        None,
        None,
        vec![model_path.to_path_buf()],
        outputs.clone(),
        threads,
    )?;
    let model = load_model(model_path)?;
    let spec = input_spec(input, ctx.length)?;
    let params = PdeParams::new(ctx.d, ctx.k)?;
    let ev = evaluate_on_function(&model, &spec, params)?;
    let hidden = hidden_field_comparison(&model, &spec, params)?;
    let g = &ev.predicted.grid;
    write_contours(&outputs[0], g, &ev.predicted.values)?;
    write_contours(&outputs[1], g, &ev.reference.values)?;
    write_contours(&outputs[2], g, &hidden.true_field)?;
    write_contours(&outputs[3], g, &hidden.learned_field)?;
    eprintln!(
        "state error {:.4e}, hidden-field error {:.4e}; wrote {}",
        ev.error,
        hidden.error,
        out.display()
    );
    Ok(())
}
