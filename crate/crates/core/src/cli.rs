//! The `state-vad` command line: `gen`, `train`, `eval` and `sweep-eta`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::detect::{evaluate, roc_curve, roc_svg, scores_csv, sweep_csv, EvalOptions, EvalSummary, SweepRow};
use crate::error::{Error, Result};
use crate::synth::{generate_dataset, load_split, read_manifest, write_dataset, CubeSet, Split};
use crate::train::{load_checkpoint, loss_csv, save_checkpoint, train_with_progress};

#[derive(Debug, Parser)]
#[command(name = "state-vad", version, about = "Object-level video anomaly detection on synthetic clips")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; omitted fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Scoring threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render the synthetic train and test splits.
    Gen,
    /// Train both branches and store a checkpoint.
    Train,
    /// Score the test split and report frame-level AUROC.
    Eval {
        /// Perturbation magnitude; 0 disables perturbation.
        #[arg(long)]
        eta: Option<f64>,
        /// Also report the unperturbed AUROC and the reduction gap.
        #[arg(long)]
        eta_compare: bool,
    },
    /// AUROC and score reductions for a list of perturbation magnitudes.
    SweepEta {
        /// Comma-separated values; defaults to `eval.sweep_etas`.
        #[arg(long, value_delimiter = ',')]
        etas: Vec<f64>,
    },
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

/// Loads the configuration file and applies command-line overrides.
pub fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.eval.threads = t;
    }
    for (flag, slot) in [
        (&common.out, &mut cfg.paths.out),
        (&common.data, &mut cfg.paths.data),
        (&common.checkpoint, &mut cfg.paths.checkpoint),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} path; pass --{what} or set paths.{what}")))
}

fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", dir.display())));
        }
        if !force && fs::read_dir(dir)?.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_gen(mut cfg: RunConfig, force: bool) -> Result<()> {
    cfg.data.validate()?;
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    prepare_out(&out, force)?;
    let (train, test) = generate_dataset(&cfg.data, cfg.seed)?;
    let m = write_dataset(&out, &cfg.data, cfg.seed, &train, &test)?;
    cfg.paths.data = Some(out.clone());
    cfg.write_resolved(&out)?;
    println!(
        "train: {} clips, {} frames; test: {} clips, {} frames, {} anomalous ({:.3})",
        m.train.len(),
        m.train_frames,
        m.test.len(),
        m.test_frames,
        m.test_anomalous_frames,
        m.test_anomalous_frames as f64 / m.test_frames.max(1) as f64
    );
    Ok(())
}

pub fn cmd_train(mut cfg: RunConfig, force: bool) -> Result<()> {
    let data = required(&cfg.paths.data, "data")?.to_path_buf();
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    cfg.data = read_manifest(&data)?.config;
    cfg.validate()?;
    let clips = load_split(&data, Split::Train)?;
    prepare_out(&out, force)?;
    let m = &cfg.model;
    let cubes = CubeSet::from_clips(&clips, m.context, (m.height, m.width), cfg.train.frame_stride)?;
    eprintln!("training on {} cubes", cubes.len());
    let ckpt = train_with_progress(&cubes, m, &cfg.train, cfg.seed, |e| {
        eprintln!("epoch {:>3}  raw {:.4}  motion {:.4}", e.epoch, e.loss_r, e.loss_m);
    })?;
    save_checkpoint(&ckpt, &out)?;
    fs::write(out.join("loss.csv"), loss_csv(&ckpt.meta.loss_curve))?;
    cfg.paths.checkpoint = Some(out.clone());
    cfg.write_resolved(&out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn load_for_scoring(cfg: &mut RunConfig) -> Result<(crate::train::Checkpoint, Vec<crate::synth::Clip>)> {
    let data = required(&cfg.paths.data, "data")?.to_path_buf();
    let ckpt_dir = required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
    let ckpt = load_checkpoint(&ckpt_dir)?;
    cfg.data = read_manifest(&data)?.config;
    cfg.model = ckpt.raw.config().clone();
    cfg.train = ckpt.meta.config.clone();
    cfg.validate()?;
    let test = load_split(&data, Split::Test)?;
    Ok((ckpt, test))
}

fn options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        batch_size: cfg.eval.batch_size,
        threads: cfg.eval.threads,
    }
}

pub fn cmd_eval(mut cfg: RunConfig, eta: Option<f64>, compare: bool, force: bool) -> Result<()> {
    if let Some(e) = eta {
        cfg.perturb.eta = e;
    }
    cfg.perturb.validate()?;
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let (ckpt, test) = load_for_scoring(&mut cfg)?;
    prepare_out(&out, force)?;
    let eval = evaluate(&ckpt, &test, &[cfg.perturb.eta], cfg.perturb, options(&cfg))?;
    fs::write(out.join("scores.csv"), scores_csv(&eval, Some(0))?)?;
    if compare {
        fs::write(out.join("scores_plain.csv"), scores_csv(&eval, None)?)?;
    }
    let summary = EvalSummary::new(&eval, 0, compare)?;
    write_json(&out.join("summary.json"), &summary)?;
    let roc = roc_curve(&eval.frame_scores(Some(0))?, &eval.labels())?;
    let title = format!("eta = {}", cfg.perturb.eta);
    fs::write(out.join("roc.svg"), roc_svg(&roc, summary.auroc, &title))?;
    cfg.write_resolved(&out)?;
    match (summary.auroc_plain, summary.auroc_perturbed) {
        (Some(p), Some(q)) => println!("AUROC plain {p:.4}, perturbed (eta {}) {q:.4}", cfg.perturb.eta),
        _ => println!("AUROC (eta {}) {:.4}", cfg.perturb.eta, summary.auroc),
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport {
    rows: Vec<SweepRow>,
    /// Index of the eta with the highest AUROC.
    best: Option<usize>,
}

pub fn cmd_sweep_eta(mut cfg: RunConfig, etas: Vec<f64>, force: bool) -> Result<()> {
    if !etas.is_empty() {
        cfg.eval.sweep_etas = etas;
    }
    if cfg.eval.sweep_etas.is_empty() {
        return Err(Error::Config("empty eta list".into()));
    }
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let (ckpt, test) = load_for_scoring(&mut cfg)?;
    prepare_out(&out, force)?;
    let eval = evaluate(&ckpt, &test, &cfg.eval.sweep_etas, cfg.perturb, options(&cfg))?;
    let rows = SweepRow::rows(&eval)?;
    fs::write(out.join("sweep.csv"), sweep_csv(&rows))?;
    let best = eval.best_eta()?;
    write_json(&out.join("sweep.json"), &SweepReport { rows: rows.clone(), best })?;
    cfg.write_resolved(&out)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    let force = cli.common.force;
    match cli.command {
        Command::Gen => cmd_gen(cfg, force),
        Command::Train => cmd_train(cfg, force),
        Command::Eval { eta, eta_compare } => cmd_eval(cfg, eta, eta_compare, force),
        Command::SweepEta { etas } => cmd_sweep_eta(cfg, etas, force),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
