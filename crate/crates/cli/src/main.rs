//! `jit` — command-line driver for the zero-shot unlearning lab.
//!
//! Subcommands cover the whole workflow: train a classifier, apply JiT
//! unlearning given only the checkpoint and the forget samples, evaluate
//! models, and run the benchmark, the geometry / sigmoid / entropy studies,
//! the (eta, sigma) sensitivity sweep, the finite-difference gradient check
//! suite, and report rendering.
//!
//! Exit codes: `0` success, `1` usage error (help printed), `2` runtime
//! failure (diagnostic on stderr). Data goes to files or stdout; diagnostics
//! go to stderr. The environment variable `JIT_THREADS` caps worker
//! parallelism (default: machine cores).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use jit_core::autodiff::gradcheck;
use jit_core::data::{split_forget, ForgetSpec, LabeledDataset};
use jit_core::eval::{accuracy, output_entropy, EntropySummary};
use jit_core::experiment::{
    render_reports, run_benchmark, run_entropy_study, run_geometry_study, run_sensitivity_sweep,
    run_sigmoid_study, DatasetConfig, EntropyStudyConfig, ExperimentConfig, GeometryStudyConfig,
    ModelConfig, ReportInputs, SigmoidStudyConfig, SweepConfig, TrainSection,
};
use jit_core::models::{init_model, load_model, save_model, train_sgd};
use jit_core::seeding;
use jit_core::unlearn::{jit_unlearn, OutputSpace, UnlearnConfig};
use jit_core::{Error, Result};

/// Zero-shot machine-unlearning lab: train, unlearn, evaluate, and reproduce
/// the boundary, sigmoid, entropy, and sensitivity experiments.
#[derive(Parser)]
#[command(name = "jit", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a classifier from a TOML job file and save the checkpoint.
    Train(TrainArgs),
    /// Unlearn forget samples from a saved model (no retain data needed).
    Unlearn(UnlearnArgs),
    /// Evaluate a saved model on a dataset CSV.
    Eval(EvalArgs),
    /// Run the repeated-seeds benchmark and write its result CSV.
    Bench(BenchArgs),
    /// Run the 2-D decision-boundary study and render its figure.
    Geometry(StudyArgs),
    /// Run the 1-D sigmoid pull study and render its figure.
    Sigmoid(SigmoidArgs),
    /// Run the image-scale output-entropy study and render its figure.
    Entropy(StudyArgs),
    /// Run the (eta, sigma) sensitivity sweep and write its CSV.
    Sweep(StudyArgs),
    /// Check every op and the composite loss against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run every study named in a bundle config and render all artifacts.
    Render(RenderArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training job TOML: [dataset], [model], optional [train] and seed.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the job seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write train.csv / test.csv of the materialized dataset here.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

#[derive(Args)]
struct UnlearnArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// CSV of forget samples (header x0,..,label; labels are ignored).
    #[arg(long)]
    forget_data: PathBuf,
    /// Optional selector applied to the CSV rows, e.g. full_class:0,
    /// sub_class:3, random:100:7, or explicit:0,4,9.
    #[arg(long, value_parser = parse_forget)]
    forget: Option<ForgetSpec>,
    /// Where to write the unlearned model.
    #[arg(long)]
    out: PathBuf,
    /// Unlearning rate.
    #[arg(long, default_value_t = 0.0003)]
    eta: f64,
    /// Std of the Gaussian perturbations.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Monte-Carlo perturbations per sample.
    #[arg(long, default_value_t = 16)]
    n_perturb: usize,
    /// Passes over the forget set.
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Seed of the perturbation stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV (header x0,..,label).
    #[arg(long)]
    data: PathBuf,
    /// Optional split: also report retain/forget metrics under this spec.
    #[arg(long, value_parser = parse_forget)]
    forget: Option<ForgetSpec>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment TOML (dataset, model, forget, methods, repeats, ...).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the number of repeats.
    #[arg(long)]
    repeats: Option<usize>,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the forget spec, e.g. full_class:0 or random:100:7.
    #[arg(long, value_parser = parse_forget)]
    forget: Option<ForgetSpec>,
}

/// Shared shape of the geometry / entropy / sweep subcommands: a study TOML
/// plus an output directory.
#[derive(Args)]
struct StudyArgs {
    /// Study config TOML.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the study seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SigmoidArgs {
    /// Study config TOML; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the study seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random trials per operation.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Seed of the trial stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RenderArgs {
    /// Bundle TOML with optional [benchmark], [geometry], [entropy],
    /// [sigmoid] study sections; every present study is run and rendered.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
}

/// Training job file: which data, which architecture, how to fit it.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    dataset: DatasetConfig,
    model: ModelConfig,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    seed: u64,
}

/// Bundle file for `render`: any subset of the four study configs.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderBundle {
    benchmark: Option<ExperimentConfig>,
    geometry: Option<GeometryStudyConfig>,
    entropy: Option<EntropyStudyConfig>,
    sigmoid: Option<SigmoidStudyConfig>,
}

fn parse_forget(s: &str) -> std::result::Result<ForgetSpec, String> {
    s.parse::<ForgetSpec>().map_err(|e| e.to_string())
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Applies `JIT_THREADS` to the global worker pool; unset keeps the default
/// (machine cores).
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("JIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| Error::Config(format!("JIT_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land on stdout and succeed; real usage errors
            // print usage to stderr and exit 1.
            let usage_error = !matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(u8::from(usage_error));
        }
    };
    let run = init_threads().and_then(|()| dispatch(cli));
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => cmd_train(&args),
        Cmd::Unlearn(args) => cmd_unlearn(&args),
        Cmd::Eval(args) => cmd_eval(&args),
        Cmd::Bench(args) => cmd_bench(&args),
        Cmd::Geometry(args) => cmd_geometry(&args),
        Cmd::Sigmoid(args) => cmd_sigmoid(&args),
        Cmd::Entropy(args) => cmd_entropy(&args),
        Cmd::Sweep(args) => cmd_sweep(&args),
        Cmd::Gradcheck(args) => cmd_gradcheck(&args),
        Cmd::Render(args) => cmd_render(&args),
    }
}

/// Scratch directory for materialized corpora: next to the output artifact.
fn scratch_near(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut job: TrainJob = parse_toml(&args.config)?;
    if let Some(seed) = args.seed {
        job.seed = seed;
    }
    let scratch = scratch_near(&args.out);
    let (train_data, test_data) = job.dataset.materialize(job.seed, &scratch)?;
    let spec = job.model.to_spec(
        train_data.dim,
        train_data.classes,
        seeding::derive_seed(job.seed, "model-init"),
    )?;
    let train_cfg = job.train.to_config(seeding::derive_seed(job.seed, "shuffle"));
    let mut model = init_model(&spec)?;
    let losses = train_sgd(&mut model, &train_data, &train_cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_model(&model, &args.out)?;
    if let Some(dir) = &args.dump_data {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.csv"), train_data.to_csv())?;
        fs::write(dir.join("test.csv"), test_data.to_csv())?;
        eprintln!("wrote {}", dir.join("train.csv").display());
        eprintln!("wrote {}", dir.join("test.csv").display());
    }
    eprintln!("wrote {}", args.out.display());
    println!("train_samples={}", train_data.len());
    println!("test_samples={}", test_data.len());
    println!("dim={}", train_data.dim);
    println!("classes={}", train_data.classes);
    println!("final_epoch_loss={:.6}", losses.last().copied().unwrap_or(f64::NAN));
    println!("train_accuracy={:.6}", accuracy(&model, &train_data)?);
    println!("test_accuracy={:.6}", accuracy(&model, &test_data)?);
    Ok(())
}

fn cmd_unlearn(args: &UnlearnArgs) -> Result<()> {
    let mut model = load_model(&args.model)?;
    let text = fs::read_to_string(&args.forget_data)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.forget_data.display())))?;
    let all = LabeledDataset::from_csv("forget", &text, Some(model.spec.classes))?;
    let forget = match &args.forget {
        Some(spec) => split_forget(&all, spec)?.forget,
        None => all,
    };
    if forget.is_empty() {
        return Err(Error::Config("forget selection is empty".into()));
    }
    let cfg = UnlearnConfig {
        eta: args.eta,
        sigma: args.sigma,
        n_perturb: args.n_perturb,
        epochs: args.epochs,
        seed: args.seed,
        space: OutputSpace::Logits,
    };
    let trace = jit_unlearn(&mut model, &forget.inputs, &cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_model(&model, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    println!("forget_count={}", forget.len());
    // The trace holds one smoothing loss per sample step, epochs x |forget|.
    for (i, epoch) in trace.chunks(forget.len()).enumerate() {
        let mean = epoch.iter().sum::<f64>() / epoch.len() as f64;
        println!("epoch_{}_mean_loss={mean:.6}", i + 1);
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let text = fs::read_to_string(&args.data)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.data.display())))?;
    let data = LabeledDataset::from_csv("eval", &text, Some(model.spec.classes))?;
    println!("samples={}", data.len());
    println!("accuracy={:.6}", accuracy(&model, &data)?);
    let ent = EntropySummary::from_samples(output_entropy(&model, &data)?)?;
    println!("entropy_mean={:.6}", ent.mean);
    println!("entropy_median={:.6}", ent.median);
    if let Some(spec) = &args.forget {
        let part = split_forget(&data, spec)?;
        if part.forget.is_empty() {
            return Err(Error::Config("forget selection is empty".into()));
        }
        println!("retain_count={}", part.retain.len());
        println!("forget_count={}", part.forget.len());
        if !part.retain.is_empty() {
            println!("retain_accuracy={:.6}", accuracy(&model, &part.retain)?);
        }
        println!("forget_accuracy={:.6}", accuracy(&model, &part.forget)?);
        let fent = EntropySummary::from_samples(output_entropy(&model, &part.forget)?)?;
        println!("forget_entropy_mean={:.6}", fent.mean);
        println!("forget_entropy_median={:.6}", fent.median);
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(repeats) = args.repeats {
        cfg.repeats = repeats;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(forget) = &args.forget {
        cfg.forget = forget.clone();
    }
    cfg.validate()?;
    let table = run_benchmark(&cfg)?;
    for e in &table.errors {
        eprintln!(
            "warning: {} repeat {} (seed {}) failed: {}",
            e.method, e.repeat, e.seed, e.message
        );
    }
    let written = render_reports(
        &cfg.output_dir,
        &ReportInputs { benchmark: Some(&table), ..ReportInputs::default() },
    )?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_geometry(args: &StudyArgs) -> Result<()> {
    let mut cfg: GeometryStudyConfig = parse_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run_geometry_study(&cfg, &args.out)?;
    let written = render_reports(
        &args.out,
        &ReportInputs { geometry: Some(&report), ..ReportInputs::default() },
    )?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    for (a, b, v) in &report.agreements {
        println!("agreement_{a}_{b}={v:.6}");
    }
    for (i, fp) in report.forget_points.iter().enumerate() {
        println!(
            "forget_point_{i}: x=({}) baseline_confidence={:.6} jit_confidence={:.6}",
            fp.x.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            fp.baseline_confidence,
            fp.jit_confidence
        );
    }
    Ok(())
}

fn cmd_sigmoid(args: &SigmoidArgs) -> Result<()> {
    let mut cfg: SigmoidStudyConfig = match &args.config {
        Some(path) => parse_toml(path)?,
        None => SigmoidStudyConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run_sigmoid_study(&cfg)?;
    let written = render_reports(
        &args.out,
        &ReportInputs { sigmoid: Some(&report), ..ReportInputs::default() },
    )?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    println!("crossing={:.6}", report.crossing);
    let show = |name: &str, p: &jit_core::experiment::PointReport| {
        println!(
            "{name}: x={:.4} f_before={:.6} f_after={:.6} pull={:.6}",
            p.x,
            p.f_before,
            p.f_after,
            p.pull()
        );
    };
    show("boundary_probe", &report.boundary_probe);
    show("boundary_twin", &report.boundary_twin);
    show("saturated_probe", &report.saturated_probe);
    show("saturated_twin", &report.saturated_twin);
    println!("boundary_max_displacement={:.6}", report.boundary_max_displacement);
    println!("saturated_max_displacement={:.6}", report.saturated_max_displacement);
    Ok(())
}

fn cmd_entropy(args: &StudyArgs) -> Result<()> {
    let mut cfg: EntropyStudyConfig = parse_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run_entropy_study(&cfg)?;
    let written = render_reports(
        &args.out,
        &ReportInputs { entropy: Some(&report), ..ReportInputs::default() },
    )?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    println!("forget_count={}", report.forget_count);
    println!("baseline_entropy_median={:.6}", report.baseline_entropy.median);
    println!("retrain_entropy_median={:.6}", report.retrain_entropy.median);
    println!("jit_entropy_median={:.6}", report.jit_entropy.median);
    println!("wilcoxon_p={:.6}", report.wilcoxon_jit_vs_retrain.p_two_sided);
    println!("baseline_retain_acc={:.6}", report.baseline_retain_acc);
    println!("retrain_retain_acc={:.6}", report.retrain_retain_acc);
    println!("jit_retain_acc={:.6}", report.jit_retain_acc);
    println!("baseline_mia={:.6}", report.baseline_mia);
    println!("retrain_mia={:.6}", report.retrain_mia);
    println!("jit_mia={:.6}", report.jit_mia);
    Ok(())
}

fn cmd_sweep(args: &StudyArgs) -> Result<()> {
    let mut cfg: SweepConfig = parse_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let table = run_sensitivity_sweep(&cfg, &args.out)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("sweep.csv");
    fs::write(&path, table.to_csv())?;
    eprintln!("wrote {}", path.display());
    let failed = table.cells.iter().filter(|c| c.error.is_some()).count();
    println!("cells={}", table.cells.len());
    println!("failed_cells={failed}");
    println!("baseline_dr_acc={:.6}", table.baseline_dr_acc);
    println!("baseline_df_acc={:.6}", table.baseline_df_acc);
    println!("baseline_mia={:.6}", table.baseline_mia);
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    if args.trials == 0 {
        return Err(Error::Config("gradcheck needs at least 1 trial".into()));
    }
    let reports = gradcheck::run_suite(args.trials, args.seed)?;
    let mut failures = 0;
    for r in &reports {
        println!(
            "{:<16} trials={} max_rel_err={:.3e} {}",
            r.op,
            r.trials,
            r.max_rel_err,
            if r.pass { "pass" } else { "FAIL" }
        );
        failures += usize::from(!r.pass);
    }
    if failures > 0 {
        return Err(Error::Contract(format!("{failures} gradient check(s) failed")));
    }
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let bundle: RenderBundle = parse_toml(&args.config)?;
    let benchmark = bundle
        .benchmark
        .map(|cfg| {
            cfg.validate()?;
            run_benchmark(&cfg)
        })
        .transpose()?;
    let geometry = bundle.geometry.map(|cfg| run_geometry_study(&cfg, &args.out)).transpose()?;
    let entropy = bundle.entropy.map(|cfg| run_entropy_study(&cfg)).transpose()?;
    let sigmoid = bundle.sigmoid.map(|cfg| run_sigmoid_study(&cfg)).transpose()?;
    let written = render_reports(
        &args.out,
        &ReportInputs {
            benchmark: benchmark.as_ref(),
            geometry: geometry.as_ref(),
            entropy: entropy.as_ref(),
            sigmoid: sigmoid.as_ref(),
        },
    )?;
    for path in &written {
        println!("{}", path.display());
    }
    Ok(())
}
