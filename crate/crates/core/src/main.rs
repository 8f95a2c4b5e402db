use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use wound_unet::checkpoint::{load_checkpoint, Checkpoint};
use wound_unet::config::TrainConfig;
use wound_unet::data::{load_manifest, split_dataset, Dataset};
use wound_unet::gradcheck;
use wound_unet::synth::{save_synth, synth_generate};
use wound_unet::train::{evaluate, predict, prediction_json, split_seed, train, EpochLog};

/// Dual-head U-Net for wound classification and segmentation.
#[derive(Parser, Debug)]
#[command(name = "wound-unet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a manifest; writes the best checkpoint and an epoch CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint path; the epoch log goes to `<out>.epochs.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print metrics for one split of a manifest as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Classify one image and write its binary mask as PNG.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output mask PNG.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset (PNGs and manifest.csv).
    SynthData {
        /// Images per class.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            manifest,
            out,
        } => cmd_train(&config, &manifest, &out),
        Command::Eval {
            ckpt,
            manifest,
            split,
            threshold,
        } => cmd_eval(&ckpt, &manifest, split, threshold),
        Command::Predict {
            ckpt,
            image,
            threshold,
            out,
        } => cmd_predict(&ckpt, &image, threshold, &out),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::SynthData { n, seed, out } => cmd_synth(n, seed, &out),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        ExitCode::from(1)
    })
}

fn check_threshold(threshold: f64) -> Result<(), String> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(format!("--threshold must lie in (0, 1), got {threshold}"))
    }
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, String> {
    load_checkpoint(path).map_err(|e| match e {
        wound_unet::error::Error::Checkpoint(inner) => format!("{}: {inner}", path.display()),
        other => other.to_string(),
    })
}

fn split_for(config: &TrainConfig, manifest: &Path) -> Result<Dataset, String> {
    let ds = load_manifest(manifest).map_err(|e| e.to_string())?;
    split_dataset(ds, config.val_fraction, split_seed(config.seed)).map_err(|e| e.to_string())
}

fn epochs_csv_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".epochs.csv");
    PathBuf::from(p)
}

/// Writes one CSV line to `csv` and to stdout.
fn emit(csv: &mut impl Write, line: &str) -> std::io::Result<()> {
    writeln!(csv, "{line}")?;
    csv.flush()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}")?;
    out.flush()
}

fn cmd_train(config: &Path, manifest: &Path, out: &Path) -> CliResult {
    let mut cfg = TrainConfig::load(config).map_err(|e| e.to_string())?;
    cfg.checkpoint_path = out.to_path_buf();
    let ds = split_for(&cfg, manifest)?;

    let csv_path = epochs_csv_path(out);
    let file = File::create(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    let mut csv = BufWriter::new(file);
    let csv_err = |e: std::io::Error| format!("{}: {e}", csv_path.display());
    emit(&mut csv, EpochLog::CSV_HEADER).map_err(csv_err)?;
    let mut write_error = None;
    let outcome = train(&cfg, &ds, |e| {
        if let Err(err) = emit(&mut csv, &e.csv_row()) {
            write_error.get_or_insert(err);
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(err) = write_error {
        return Err(csv_err(err));
    }
    csv.into_inner()
        .map_err(|e| csv_err(e.into_error()))?
        .sync_all()
        .map_err(csv_err)?;

    eprintln!(
        "best epoch {} (total loss {:.6}) saved to {}",
        outcome.best.epoch,
        outcome.best.best_total_loss,
        out.display()
    );
    if !ds.val.is_empty() {
        let report = evaluate(&outcome.best.params, &ds, &ds.val, cfg.threshold)
            .map_err(|e| e.to_string())?;
        let json = serde_json::to_string(&report).map_err(|e| e.to_string())?;
        eprintln!("validation metrics: {json}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(ckpt: &Path, manifest: &Path, split: Split, threshold: f64) -> CliResult {
    check_threshold(threshold)?;
    let ckpt = open_checkpoint(ckpt)?;
    let ds = split_for(&ckpt.config, manifest)?;
    let indices = match split {
        Split::Train => &ds.train,
        Split::Val => &ds.val,
    };
    if indices.is_empty() {
        return Err(format!("the {split:?} split is empty").to_lowercase());
    }
    let report = evaluate(&ckpt.params, &ds, indices, threshold).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(ckpt: &Path, image: &Path, threshold: f64, out: &Path) -> CliResult {
    check_threshold(threshold)?;
    let ckpt = open_checkpoint(ckpt)?;
    let pred = predict(&ckpt.params, image, threshold, out).map_err(|e| e.to_string())?;
    let json = prediction_json(&pred, out).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64) -> CliResult {
    let report = gradcheck::run(seed).map_err(|e| e.to_string())?;
    println!("seeds {:?}", report.seeds);
    for l in &report.layers {
        println!(
            "{:<16} max_rel_err {:.3e}  tol {:.0e}  checked {:>6}  skipped {:>4}  {}",
            l.layer,
            l.max_rel_error,
            l.tolerance,
            l.checked,
            l.skipped,
            if l.passed() { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {}", report.failing().join(", "));
        Ok(ExitCode::from(report.exit_code() as u8))
    }
}

fn cmd_synth(n: usize, seed: u64, out: &Path) -> CliResult {
    let items = synth_generate(n, seed).map_err(|e| e.to_string())?;
    let manifest = save_synth(&items, out).map_err(|e| e.to_string())?;
    eprintln!("wrote {} samples, manifest {}", items.len(), manifest.display());
    Ok(ExitCode::SUCCESS)
}
