//! Command-line entry point: `synth`, `train`, `eval`, `gradcheck`,
//! `stability` and `ablate`.
//!
//! Every command prints its resolved configuration (including the seed) as a
//! single JSON line before doing any work, and writes its files under
//! `--out`. Exit codes: 0 success, 1 invalid input or usage, 2 runtime
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::data::{self, synthesize, Dataset, SynthConfig};
use crate::diagnostics::gradient_suite;
use crate::error::{Error, Result};
use crate::graph::{stability_report, write_stability_csv, SkeletonGraph};
use crate::model::{Checkpoint, FlexGcnModel};
use crate::training::{
    ablate, evaluate, sweep, train, AblationFlag, CsvSink, EpochRecord, MetricSink, RunSummary,
    SweepParam, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "flexgcn",
    version,
    about = "Flexible graph convolution for 2D-to-3D pose lifting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset by forward kinematics.
    Synth(SynthArgs),
    /// Train a model on a JSONL dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a JSONL dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every op, layer and a toy model.
    Gradcheck(GradcheckArgs),
    /// Spectral-radius sweep of the propagation matrix.
    Stability(StabilityArgs),
    /// Paired runs toggling one switch, or a one-parameter sweep.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Skeleton JSON; defaults to the 17-joint Human3.6M layout.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Full generator config JSON; overrides --n, --seed and --noise-px.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Overrides for [`TrainConfig`] fields, one flag per field.
#[derive(Debug, Args, Default)]
struct TrainFlags {
    /// TrainConfig JSON; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    irc: Option<bool>,
    #[arg(long)]
    symmetry: Option<bool>,
    #[arg(long)]
    modulation: Option<bool>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    target_unit_mm: Option<f64>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            epochs,
            batch_size,
            lr0,
            decay,
            decay_every,
            s,
            alpha,
            dropout,
            hidden,
            blocks,
            seed,
            irc,
            symmetry,
            modulation,
            val_fraction,
            target_unit_mm
        );
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000.0)]
    target_unit_mm: f64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StabilityArgs {
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Comma-separated values in (0, 1).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    s: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["flag", "sweep"]))]
struct AblateArgs {
    /// Switch to toggle: irc, symmetry or modulation.
    #[arg(long)]
    flag: Option<String>,
    /// Parameter to sweep: batch_size, hidden, s or alpha.
    #[arg(long, requires = "values")]
    sweep: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// JSONL dataset; when absent, one is synthesized from the train seed.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Samples to synthesize when --data is absent.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Shape { .. }
            | Error::Topology(_)
            | Error::DegenerateGraph(_)
            | Error::Json(_) => Failure::Invalid(e.to_string()),
            Error::Domain(_) | Error::Contract(_) | Error::Io { .. } | Error::Csv(_) => {
                Failure::Runtime(e.to_string())
            }
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn print_resolved(command: &str, config: &impl Serialize) -> Result<()> {
    let line = json!({ "command": command, "resolved": config });
    println!("{}", serde_json::to_string(&line)?);
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_skeleton(path: Option<&Path>) -> Result<SkeletonGraph> {
    match path {
        Some(p) => SkeletonGraph::load(p),
        None => Ok(SkeletonGraph::h36m()),
    }
}

fn check_joint_count(dataset: &Dataset, skeleton: &SkeletonGraph) -> Result<()> {
    match dataset.samples.first() {
        Some(s) if s.n_joints() != skeleton.n_joints() => Err(Error::Topology(format!(
            "dataset has {} joints, skeleton has {}",
            s.n_joints(),
            skeleton.n_joints()
        ))),
        _ => Ok(()),
    }
}

fn metrics_file(path: &Path) -> Result<CsvSink<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(CsvSink::new(file))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut sink = metrics_file(path)?;
    for row in history {
        sink.record(row)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    let cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => {
            let mut cfg = SynthConfig::for_skeleton(&skeleton, a.n, a.seed);
            cfg.noise_px = a.noise_px;
            cfg
        }
    };
    cfg.validate(&skeleton)?;
    print_resolved("synth", &cfg)?;
    prepare_out(&a.out)?;
    let dataset = synthesize(&cfg, &skeleton)?;
    data::save(&dataset, a.out.join("data.jsonl"))?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    skeleton.save(a.out.join("skeleton.json"))?;
    println!(
        "wrote {} samples to {}",
        dataset.len(),
        a.out.join("data.jsonl").display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = a.flags.resolve()?;
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    print_resolved("train", &cfg)?;
    let dataset = data::load(&a.data)?;
    check_joint_count(&dataset, &skeleton)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("train_config.json"), &cfg)?;

    let model = cfg.build_model(&skeleton)?;
    let mut sink = metrics_file(&a.out.join("metrics.csv"))?;
    let out = train(model, &dataset, &cfg, &mut sink)?;
    out.best.save(a.out.join("best.ckpt.json"))?;
    out.model
        .to_checkpoint()
        .save(a.out.join("final.ckpt.json"))?;
    let summary = json!({
        "steps": out.steps,
        "best_epoch": out.best_epoch,
        "best_val_mpjpe": out.best_val_mpjpe,
        "final": out.history.last(),
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(Error::from)?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    if !(a.target_unit_mm > 0.0) {
        return Err(Error::Config("target_unit_mm must be positive".into()).into());
    }
    print_resolved(
        "eval",
        &json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "target_unit_mm": a.target_unit_mm,
        }),
    )?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = FlexGcnModel::from_checkpoint(&ckpt)?;
    let dataset = data::load(&a.data)?;
    check_joint_count(&dataset, model.skeleton())?;
    let report = evaluate(&model, &dataset, a.target_unit_mm)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("eval.json"), &report)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    print_resolved("gradcheck", &json!({ "seed": a.seed }))?;
    let report = gradient_suite(a.seed)?;
    for r in &report.rows {
        println!(
            "{:<32} {:>6} entries  max rel err {:.3e}  {}",
            r.name,
            r.entries_checked,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "max rel err {:.3e} (tolerance {:.0e})",
        report.max_rel_err, report.tolerance
    );
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check exceeded tolerance".into()))
    }
}

fn cmd_stability(a: StabilityArgs) -> CmdResult {
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    if let Some(bad) = a.s.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(Error::Config(format!("s = {bad} outside (0, 1)")).into());
    }
    print_resolved(
        "stability",
        &json!({ "skeleton": a.skeleton, "n_joints": skeleton.n_joints(), "s": a.s }),
    )?;
    let rows = stability_report(&skeleton, &a.s, None)?;
    prepare_out(&a.out)?;
    let path = a.out.join("stability.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_stability_csv(&rows, file)?;
    for r in &rows {
        println!(
            "s={:<5} rho_P={:.12} bound={:.12} holds={}",
            r.s, r.rho_p, r.bound, r.holds
        );
    }
    if rows.iter().all(|r| r.holds) {
        Ok(())
    } else {
        Err(Failure::Runtime("spectral bound violated".into()))
    }
}

fn cmd_ablate(a: AblateArgs) -> CmdResult {
    let base = a.flags.resolve()?;
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    let flag: Option<AblationFlag> = a.flag.as_deref().map(str::parse).transpose()?;
    let param: Option<SweepParam> = a.sweep.as_deref().map(str::parse).transpose()?;
    if let Some(p) = param {
        for &v in &a.values {
            p.apply(&mut base.clone(), v)?;
        }
    }
    print_resolved(
        "ablate",
        &json!({
            "train": base,
            "flag": flag,
            "sweep": param,
            "values": a.values,
            "data": a.data,
            "synthesized_samples": a.data.is_none().then_some(a.n),
        }),
    )?;
    let dataset = match &a.data {
        Some(p) => data::load(p)?,
        None => synthesize(
            &SynthConfig::for_skeleton(&skeleton, a.n, base.seed),
            &skeleton,
        )?,
    };
    check_joint_count(&dataset, &skeleton)?;
    prepare_out(&a.out)?;

    if let Some(flag) = flag {
        let report = ablate(flag, &base, &dataset, &skeleton)?;
        for run in [&report.with, &report.without] {
            write_history(&a.out.join(format!("{}.csv", run.label)), &run.history)?;
        }
        let summary = json!({
            "flag": flag,
            "with": { "final_val_mpjpe": report.with.final_val_mpjpe, "final_val_pa_mpjpe": report.with.final_val_pa_mpjpe },
            "without": { "final_val_mpjpe": report.without.final_val_mpjpe, "final_val_pa_mpjpe": report.without.final_val_pa_mpjpe },
            "delta_val_mpjpe": report.delta_val_mpjpe,
            "delta_val_pa_mpjpe": report.delta_val_pa_mpjpe,
        });
        write_json(&a.out.join("ablation_summary.json"), &summary)?;
        println!("{}", serde_json::to_string(&summary).map_err(Error::from)?);
    } else if let Some(param) = param {
        let runs = sweep(param, &a.values, &base, &dataset, &skeleton)?;
        let mut table = Vec::with_capacity(runs.len());
        for (i, run) in runs.iter().enumerate() {
            write_history(&a.out.join(format!("sweep_{i}.csv")), &run.history)?;
            table.push(sweep_row(run, a.values[i]));
        }
        write_json(&a.out.join("sweep_summary.json"), &table)?;
        println!("{}", serde_json::to_string(&table).map_err(Error::from)?);
    }
    Ok(())
}

fn sweep_row(run: &RunSummary, value: f64) -> serde_json::Value {
    json!({
        "label": run.label,
        "value": value,
        "final_val_mpjpe": run.final_val_mpjpe,
        "final_val_pa_mpjpe": run.final_val_pa_mpjpe,
        "best_val_mpjpe": run.best_val_mpjpe,
    })
}
