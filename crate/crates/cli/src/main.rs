//! `contrack` command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 on I/O failure.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use contrack::contrastive::{
    contrastive_gradient, finite_difference_gradient, synthetic_batch, FINITE_DIFFERENCE_STEP,
};
use contrack::formats;
use contrack::metrics::{evaluate, LabeledScene};
use contrack::sampler::{BatchSampler, DatasetIndex};
use contrack::simulator;
use contrack::tracker::run_sequence;

use config::{Preset, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<contrack::Error> for CliError {
    fn from(e: contrack::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "contrack", version, about = "Embedding-based multi-object tracking toolkit")]
struct Cli {
    /// TOML run configuration layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hyper-parameter preset: mot17 or bdd100k.
    #[arg(long, global = true, default_value_t = Preset::Mot17)]
    preset: Preset,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sequences (gt.txt, dets.jsonl, meta.json).
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Assign ids to a detection stream and write MOTChallenge results.
    Track {
        #[arg(long)]
        dets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sidecar with the image size; defaults to meta.json next to the detections.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        memory_length: Option<usize>,
        #[arg(long)]
        objectness: Option<f64>,
        #[arg(long)]
        new_id_threshold: Option<f64>,
    },
    /// Score results against ground truth (CLEAR-MOT, IDF1, HOTA).
    Eval {
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        results: Option<PathBuf>,
        /// Sidecar with the image size; defaults to meta.json next to the ground truth.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the analytic contrastive gradient with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Draw training batches from a dataset index, one JSON line per batch.
    Sample {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        batches: usize,
        /// Draw pre-training batches (two views per image) instead.
        #[arg(long)]
        pretraining: bool,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| CliError::Invalid(format!("missing --{name}")))
}

fn sidecar(explicit: Option<PathBuf>, from_config: &Option<PathBuf>, beside: &Path) -> PathBuf {
    explicit
        .or_else(|| from_config.clone())
        .unwrap_or_else(|| beside.parent().unwrap_or(Path::new(".")).join(simulator::META_FILE))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.preset)?;
    match cli.command {
        Command::Simulate { out, seed } => {
            if let Some(s) = seed {
                cfg.simulator.seed = s;
            }
            let out = required(out, &cfg.paths.out, "out")?;
            let seqs = simulator::generate_all(&cfg.simulator)?;
            simulator::export_all(&seqs, Some(&cfg.simulator), &out)?;
            println!("wrote {} sequence(s) to {}", seqs.len(), out.display());
        }
        Command::Track {
            dets,
            out,
            meta,
            memory_length,
            objectness,
            new_id_threshold,
        } => {
            let t = &mut cfg.tracker;
            t.memory_length = memory_length.unwrap_or(t.memory_length);
            t.objectness_threshold = objectness.unwrap_or(t.objectness_threshold);
            t.new_instance_threshold = new_id_threshold.unwrap_or(t.new_instance_threshold);
            t.validate()?;
            let dets = required(dets, &cfg.paths.dets, "dets")?;
            let out = required(out, &cfg.paths.out, "out")?;
            let meta = formats::read_meta(&sidecar(meta, &cfg.paths.meta, &dets))?;
            let stream = formats::parse_detections(&dets)?;
            let output = run_sequence(stream.iter().map(|(f, d)| (*f, d.as_slice())), &cfg.tracker)?;
            formats::write_results(&output, meta.image_size(), &out)?;
            let mut ids: Vec<u64> = output
                .frames
                .iter()
                .flat_map(|f| f.objects.iter().map(|o| o.instance_id))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            println!(
                "tracked {} frames, {} identities (T={}, objectness {}, new-id threshold {}) -> {}",
                output.frames.len(),
                ids.len(),
                cfg.tracker.memory_length,
                cfg.tracker.objectness_threshold,
                cfg.tracker.new_instance_threshold,
                out.display()
            );
        }
        Command::Eval {
            gt,
            results,
            meta,
            iou,
            report,
        } => {
            if let Some(t) = iou {
                cfg.eval.iou_threshold = t;
            }
            cfg.validate()?;
            let gt = required(gt, &cfg.paths.gt, "gt")?;
            let results = required(results, &cfg.paths.results, "results")?;
            let meta = formats::read_meta(&sidecar(meta, &cfg.paths.meta, &gt))?;
            let truths = formats::parse_mot_gt(&gt, meta.image_size())?;
            let preds = formats::parse_mot_results(&results, meta.image_size())?;
            let scene = LabeledScene::from_objects(truths, preds)?;
            let r = evaluate(&scene, &cfg.eval)?;
            if let Some(path) = report.or(cfg.paths.report) {
                let mut json = serde_json::to_string_pretty(&r).map_err(|e| CliError::Invalid(e.to_string()))?;
                json.push('\n');
                write_output(Some(&path), &json)?;
            }
            print!("{}", r.to_table());
        }
        Command::Gradcheck {
            seed,
            dim,
            batch,
            tolerance,
        } => {
            let b = synthetic_batch(seed, batch, dim, cfg.loss.temperature)?;
            let analytic = contrastive_gradient(&b);
            let numeric = finite_difference_gradient(&b, FINITE_DIFFERENCE_STEP);
            let err = analytic.max_relative_error(&numeric);
            println!("max relative error {err:.3e} over {batch} x {dim} (tolerance {tolerance:e})");
            if err.is_nan() || err >= tolerance {
                return Err(CliError::Invalid("gradient check failed".into()));
            }
        }
        Command::Sample {
            index,
            videos,
            frames,
            seed,
            batches,
            pretraining,
            images,
            out,
        } => {
            let index_path = required(index, &cfg.paths.index, "index")?;
            let text = fs::read_to_string(&index_path)
                .map_err(|e| CliError::Io(format!("{}: {e}", index_path.display())))?;
            let index: DatasetIndex =
                serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", index_path.display())))?;
            index.validate()?;
            let p = cfg.sampler;
            let mut sampler = BatchSampler::new(seed.unwrap_or(p.seed));
            let mut lines = String::new();
            for _ in 0..batches {
                let ordinal = sampler.ordinal();
                let spec = if pretraining {
                    sampler.next_pretraining_batch(&index, images.unwrap_or(p.images))?
                } else {
                    sampler.next_tracking_batch(&index, videos.unwrap_or(p.videos), frames.unwrap_or(p.frames))?
                };
                let line = serde_json::json!({ "batch": ordinal, "items": spec.items });
                lines.push_str(&line.to_string());
                lines.push('\n');
            }
            write_output(out.or(cfg.paths.out).as_deref(), &lines)?;
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
