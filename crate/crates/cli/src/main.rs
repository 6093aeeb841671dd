use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use isoface::data::{energy_gap, Dataset, Split, MANIFEST_FILE};
use isoface::gradcheck::{grad_check, Check, GradCheckOptions};
use isoface::metrics::{
    evaluate, histogram_export, histogram_svg, read_scores_csv, roc, roc_svg, video_level, write_scores_csv, EvalOptions,
};
use isoface::model::{load_checkpoint, save_checkpoint};
use isoface::train::{score, train, write_log, write_windows_csv, RunConfig};
use isoface::{Error, Label};

const CHECKPOINT_FILE: &str = "checkpoint.isof";
const LOG_FILE: &str = "train_log.jsonl";
const HISTOGRAM_BINS: usize = 20;
const ENERGY_GAP_VIDEOS: usize = 16;

#[derive(Parser)]
#[command(name = "isoface", version, about = "Two-branch recurrent face-manipulation detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic video corpus.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory (default: the config's data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a detector and keep the best validation checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset directory (default: the config's data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory (default: the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every inference window of one split.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 7)]
        stride: usize,
        /// Score CSV; per-window spans go to `<out>.windows.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute sequence- and video-level metrics from a score CSV.
    Eval {
        scores: PathBuf,
        /// FAR cutoff for pAUC, tAUC and TAR (repeatable).
        #[arg(long = "cutoff", default_values_t = vec![0.1])]
        cutoffs: Vec<f64>,
        /// Recall target for log(wP) (repeatable).
        #[arg(long = "recall", default_values_t = vec![0.1, 0.5, 0.9])]
        recalls: Vec<f64>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify every backward pass against finite differences.
    GradCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Corrupt one check's analytic gradient (harness self-test).
        #[arg(long)]
        inject_fault: Option<Check>,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// A failed subcommand and its exit code: 2 configuration, 3 data,
/// 4 check failure.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: String) -> Self {
        Failure { code: 2, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Errors caused by the content of an input file are data errors even when
/// the library reports them as invalid arguments.
fn as_data(e: Error) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let ds = Dataset::generate(&cfg.data, cfg.seed)?;
    ds.save(out)?;
    let manifest = fs::read(out.join(MANIFEST_FILE))?;
    let mut splits = serde_json::Map::new();
    for split in Split::ALL {
        splits.insert(
            split.to_string(),
            json!({
                "natural": ds.manifest.count(split, Label::Natural),
                "manipulated": ds.manifest.count(split, Label::Manipulated),
            }),
        );
    }
    let gap = energy_gap(&cfg.data, cfg.seed, ENERGY_GAP_VIDEOS)?;
    print_json(&json!({
        "out": out,
        "videos": ds.len(),
        "natural": splits.values().map(|s| s["natural"].as_u64().unwrap_or(0)).sum::<u64>(),
        "manipulated": splits.values().map(|s| s["manipulated"].as_u64().unwrap_or(0)).sum::<u64>(),
        "splits": splits,
        "manifest_sha256": sha256_hex(&manifest),
        "energy_gap": { "natural": gap.natural, "manipulated": gap.manipulated, "gap": gap.gap(), "videos": gap.videos },
    }));
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), Failure> {
    let ds = Dataset::load(data)?;
    let outcome = train(cfg, &ds)?;
    fs::create_dir_all(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.checkpoint)?;
    write_log(&out.join(LOG_FILE), &outcome.log)?;
    fs::write(out.join("run_config.json"), serde_json::to_string_pretty(cfg).expect("serializable"))?;
    let best = outcome.best_epoch.map(|e| &outcome.log[e]);
    print_json(&json!({
        "checkpoint": ckpt,
        "epochs": outcome.log.len(),
        "best_epoch": outcome.best_epoch,
        "best_valid_auc": best.map(|l| l.valid_auc),
        "best_valid_loss": best.map(|l| l.valid_loss),
        "center_dim": outcome.checkpoint.hypersphere.dim(),
        "radii": [outcome.checkpoint.hypersphere.r_minus(), outcome.checkpoint.hypersphere.r_plus()],
    }));
    Ok(())
}

fn windows_path(out: &Path) -> PathBuf {
    out.with_extension("windows.csv")
}

fn score_cmd(checkpoint: &Path, data: &Path, split: Split, stride: usize, out: &Path) -> Result<(), Failure> {
    if stride == 0 {
        return Err(Failure::config("--stride must be positive".into()));
    }
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    let ds = Dataset::load(data)?;
    let scores = score(&ckpt, &ds, split, stride)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_scores_csv(fs::File::create(out)?, &scores.records)?;
    write_windows_csv(fs::File::create(windows_path(out))?, &scores.windows)?;
    print_json(&json!({ "scores": out, "windows": windows_path(out), "records": scores.records.len(), "split": split.to_string() }));
    Ok(())
}

fn eval_cmd(scores: &Path, cutoffs: &[f64], recalls: &[f64], out: &Path) -> Result<(), Failure> {
    if let Some(v) = cutoffs.iter().chain(recalls).find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Failure::config(format!("cutoffs and recall targets must lie in (0, 1], got {v}")));
    }
    let bytes = fs::read(scores)?;
    let records = read_scores_csv(bytes.as_slice()).map_err(as_data)?;
    let opts = EvalOptions { cutoffs: cutoffs.to_vec(), recalls: recalls.to_vec(), ..Default::default() };
    let report = evaluate(&records, &opts).map_err(as_data)?;
    let videos = video_level(&records).map_err(as_data)?;
    let (seq_curve, video_curve) = (roc(&records).map_err(as_data)?, roc(&videos).map_err(as_data)?);
    let hist = histogram_export(&records, HISTOGRAM_BINS).map_err(as_data)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("roc_sequence.svg"), roc_svg(&seq_curve, "sequence-level ROC"))?;
    fs::write(out.join("roc_video.svg"), roc_svg(&video_curve, "video-level ROC"))?;
    fs::write(out.join("histogram_sequence.svg"), histogram_svg(&hist, "anomaly score"))?;
    fs::write(out.join("histogram_sequence.csv"), hist.to_csv())?;
    let doc = json!({
        "input": { "path": scores, "sha256": sha256_hex(&bytes) },
        "cutoffs": cutoffs,
        "recalls": recalls,
        "alpha": opts.alpha,
        "histogram_overlap": hist.overlap(),
        "sequence": report.sequence,
        "video": report.video,
    });
    let text = serde_json::to_string_pretty(&doc).expect("serializable");
    fs::write(out.join("report.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn grad_check_cmd(cfg: &RunConfig, cases: usize, fault: Option<Check>, out: Option<&Path>) -> Result<(), Failure> {
    let opts = GradCheckOptions { seed: cfg.seed, cases, fault, ..Default::default() };
    let report = grad_check(&cfg.model, &opts)?;
    println!("{report}");
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.results.iter().filter(|r| !r.passed).map(|r| r.check.name()).collect();
        Err(Failure { code: 4, message: format!("gradient check failed: {}", failed.join(", ")) })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { run, out } => {
            let cfg = run.load()?;
            gen_data(&cfg, out.as_deref().unwrap_or(&cfg.data_dir))
        }
        Command::Train { run, data, out } => {
            let cfg = run.load()?;
            train_cmd(&cfg, data.as_deref().unwrap_or(&cfg.data_dir), out.as_deref().unwrap_or(&cfg.out_dir))
        }
        Command::Score { checkpoint, data, split, stride, out } => score_cmd(&checkpoint, &data, split, stride, &out),
        Command::Eval { scores, cutoffs, recalls, out } => eval_cmd(&scores, &cutoffs, &recalls, &out),
        Command::GradCheck { run, cases, inject_fault, out } => {
            let cfg = run.load()?;
            grad_check_cmd(&cfg, cases, inject_fault, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
