use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use human_insert::bdp::{self, PairManifest};
use human_insert::harness::{self, ObjectiveKind, TrainConfig};
use human_insert::losses::{ffip_loss, hbaf_loss, HbafBatch};
use human_insert::masks::{BinaryMask, BoxesFile, DEFAULT_LATENT_FACTOR};
use human_insert::matching::{match_faces, FaceSet};
use human_insert::metrics::{evaluate_run, ids_score};
use human_insert::numerics::{itsr, Tensor};
use human_insert::schedule::{emit_schedule_curve, write_curve_csv, ScheduleConfig};

#[derive(Parser)]
#[command(name = "human-insert", version, about = "Losses, metrics and data tooling for person-insertion training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the lambda(t) curve as CSV (`t,lambda`).
    Schedule {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value_t = 1)]
        stride: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize person boxes and pool to a latent-resolution mask tensor.
    Mask {
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LATENT_FACTOR)]
        factor: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a loss and print its value.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Maximum-similarity one-to-one face matching.
    Match {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identity similarity score between generated and source faces.
    Ids {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        src: PathBuf,
    },
    /// Aggregate failure rates and identity scores over a run file.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Build or validate training-pair manifests.
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Toy end-to-end training.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Check every analytic gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = harness::gradcheck::DEFAULT_TRIALS)]
        trials: usize,
    },
}

#[derive(Args, Clone, Copy)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 2.5)]
    lambda_max: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_min: f64,
    #[arg(long, default_value_t = 900)]
    t_start: u32,
    #[arg(long, default_value_t = 808)]
    t_end: u32,
    #[arg(long, default_value_t = 1000)]
    t_max: u32,
}

impl ScheduleArgs {
    fn config(self) -> Result<ScheduleConfig> {
        let cfg = ScheduleConfig {
            lambda_max: self.lambda_max,
            lambda_min: self.lambda_min,
            t_start: self.t_start,
            t_end: self.t_end,
            t_max: self.t_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum LossCommand {
    /// Region-weighted denoising loss.
    Hbaf {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Binary (H, W) latent mask.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        t: i64,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long)]
        grad_out: Option<PathBuf>,
    },
    /// Matched-face identity loss.
    Ffip {
        #[arg(long)]
        pred_faces: PathBuf,
        #[arg(long)]
        src_faces: PathBuf,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    c: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// File of stems to leave out, one per line.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Add to the records already in `--out` instead of replacing them.
    #[arg(long)]
    append: bool,
}

#[derive(Subcommand)]
enum ManifestCommand {
    /// a = real humans, b = web backgrounds, c = synthetic composites.
    BuildForward(BuildArgs),
    /// a = real photos, b = inpainted backgrounds, c = synthetic humans.
    BuildReverse(BuildArgs),
    /// Check a manifest; relative paths resolve against the working directory.
    Validate { file: PathBuf },
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Train the toy denoiser and write a CSV log
    /// (`step,t,hbaf,ffip,total,mse,fg_mse,bg_mse`).
    Train(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = harness::train::DEFAULT_HIDDEN)]
    hidden: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = human_insert::losses::DEFAULT_LAMBDA_FACE)]
    lambda_face: f64,
    /// Disable the identity term.
    #[arg(long)]
    no_ffip: bool,
    /// Train on unweighted MSE only, ignoring schedule and identity settings.
    #[arg(long)]
    plain_mse: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    log: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Reads a prediction-like tensor, promoting `(H, W)` to `(1, H, W)`.
fn read_chw(path: &Path) -> Result<Tensor> {
    let t = itsr::read(path)?;
    Ok(match *t.shape() {
        [h, w] => t.reshape(vec![1, h, w])?,
        _ => t,
    })
}

fn exclusions(path: Option<&Path>) -> Result<HashSet<String>> {
    Ok(match path {
        Some(p) => bdp::read_exclusions(p)?,
        None => HashSet::new(),
    })
}

fn build_manifest(args: &BuildArgs, reverse: bool) -> Result<()> {
    let exclude = exclusions(args.exclude.as_deref())?;
    let outcome = if reverse {
        bdp::build_reverse(&args.a, &args.b, &args.c, &exclude)?
    } else {
        bdp::build_forward(&args.a, &args.b, &args.c, &exclude)?
    };
    for u in &outcome.unmatched {
        eprintln!("skipped `{}`: missing {:?}, ambiguous {:?}", u.stem, u.missing, u.ambiguous);
    }
    let mut manifest = if args.append && args.out.exists() {
        PairManifest::read(&args.out)?
    } else {
        PairManifest::default()
    };
    let added = outcome.records.len();
    manifest.extend(outcome.records);
    manifest.write(&args.out)?;
    println!(
        "{added} records added ({} excluded, {} unmatched); manifest has {} records",
        outcome.excluded.len(),
        outcome.unmatched.len(),
        manifest.records.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Schedule { schedule, stride, out } => {
            let points = emit_schedule_curve(&schedule.config()?, stride)?;
            let mut w = create(&out)?;
            write_curve_csv(&points, &mut w)?;
            w.flush()?;
        }
        Command::Mask { boxes, factor, out } => {
            let mask = BoxesFile::read(&boxes)?.latent_mask(factor)?;
            itsr::write(&out, &mask)?;
        }
        Command::Loss(LossCommand::Hbaf {
            pred,
            target,
            mask,
            t,
            schedule,
            grad_out,
        }) => {
            let cfg = schedule.config()?;
            let prediction = read_chw(&pred)?;
            let target = read_chw(&target)?;
            let latent_mask = BinaryMask::from_tensor(&itsr::read(&mask)?)?;
            let batch = HbafBatch {
                prediction: &prediction,
                target: &target,
                latent_mask: &latent_mask,
                t,
                cfg: &cfg,
            };
            let loss = hbaf_loss(&batch, grad_out.is_some())?;
            if let (Some(path), Some(grad)) = (grad_out, &loss.grad) {
                itsr::write(path, grad)?;
            }
            println!("{}", loss.value);
        }
        Command::Loss(LossCommand::Ffip { pred_faces, src_faces }) => {
            let pred = FaceSet::read(&pred_faces)?;
            let src = FaceSet::read(&src_faces)?;
            let m = match_faces(&pred, &src)?;
            let loss = ffip_loss(&pred.embeddings(), &src.embeddings(), &m, false)?;
            if loss.no_matches {
                eprintln!("no matched faces; loss defined as 0");
            }
            println!("{}", loss.value);
        }
        Command::Match { pred, src, out } => {
            let m = match_faces(&FaceSet::read(&pred)?, &FaceSet::read(&src)?)?;
            write_json(&out, &m)?;
            println!("{}", m.total);
        }
        Command::Ids { gen, src } => {
            println!("{}", ids_score(&FaceSet::read(&gen)?, &FaceSet::read(&src)?)?);
        }
        Command::Evaluate { run, report } => {
            let eval = evaluate_run(&run)?;
            if eval.report.n_ids_excluded > 0 {
                eprintln!("{} samples without source faces left out of IDS", eval.report.n_ids_excluded);
            }
            write_json(&report, &eval)?;
            println!("{}", eval.report);
        }
        Command::Manifest(ManifestCommand::BuildForward(args)) => build_manifest(&args, false)?,
        Command::Manifest(ManifestCommand::BuildReverse(args)) => build_manifest(&args, true)?,
        Command::Manifest(ManifestCommand::Validate { file }) => {
            let manifest = PairManifest::read(&file)?;
            let report = bdp::validate(&manifest, Path::new("."));
            for v in &report.violations {
                println!("{v}");
            }
            println!(
                "{} forward, {} reverse, {} violations",
                report.forward,
                report.reverse,
                report.violations.len()
            );
            if !report.is_clean() {
                bail!("manifest has {} violations", report.violations.len());
            }
        }
        Command::Demo(DemoCommand::Train(a)) => {
            let cfg = TrainConfig {
                steps: a.steps,
                lr: a.lr,
                batch_size: a.batch_size,
                hidden: a.hidden,
                schedule: a.schedule.config()?,
                lambda_face: a.lambda_face,
                use_ffip: !a.no_ffip,
                seed: a.seed,
                objective: if a.plain_mse { ObjectiveKind::PlainMse } else { ObjectiveKind::Weighted },
            };
            let log = harness::train_demo(cfg)?;
            match &a.log {
                Some(path) => {
                    let mut w = create(path)?;
                    log.write_csv(&mut w)?;
                    w.flush()?;
                }
                None => log.write_csv(io::stdout().lock())?,
            }
            let e = log.final_eval;
            eprintln!("held-out mse {:.6}  fg_mse {:.6}  bg_mse {:.6}", e.mse, e.fg_mse, e.bg_mse);
        }
        Command::Gradcheck { seed, trials } => {
            let summary = harness::gradcheck_with(seed, trials, None)?;
            println!("{summary}");
            if !summary.passed() {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
