//! `scopenet` command line: train, evaluate, predict, stream-classify
//! extracted video frames, and self-check the numeric fixtures.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use scopenet_core::data::{
    is_supported_image, load_image, normalize, resize_area, LabeledDataset, SplitIndices,
};
use scopenet_core::layers::Mode;
use scopenet_core::metrics::{
    metrics_to_csv, metrics_to_json, render_report, write_prediction_log, ConfusionMatrix,
    PredictionRecord,
};
use scopenet_core::tables::check_paper_consistency;
use scopenet_core::tensor::Tensor;
use scopenet_core::train::{fit, records_to_csv, Checkpoint, TrainConfig};
use scopenet_core::ModelGraph;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "scopenet", version, about = "CNN trainer and classifier for endoscopy-style image sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, epoch log, and split manifest
    Train {
        /// Dataset root with one subdirectory per class
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; every field optional
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of a manifest
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split manifest written by `train`
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify individual images
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Image files (ppm/png/jpg)
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Classify a directory of extracted video frames in name order
    Stream {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Poll interval for newly appearing frames
        #[arg(long, default_value_t = 200)]
        poll_ms: u64,
        /// Stop after this many frames (otherwise stops when no new frames
        /// appear for 10 polls)
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run embedded numeric fixtures and the published-table consistency check
    Selfcheck,
}

/// Marker for faults that are the caller's mistake (exit 2).
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { data, config, out } => cmd_train(&data, config.as_deref(), &out),
        Command::Eval {
            ckpt,
            data,
            manifest,
            out,
        } => cmd_eval(&ckpt, &data, &manifest, &out),
        Command::Predict { ckpt, images } => cmd_predict(&ckpt, &images),
        Command::Stream {
            ckpt,
            frames,
            poll_ms,
            stop_after,
        } => cmd_stream(&ckpt, &frames, poll_ms, stop_after),
        Command::Selfcheck => cmd_selfcheck(),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.chain().any(|c| {
                c.downcast_ref::<UsageError>().is_some()
                    || matches!(
                        c.downcast_ref::<scopenet_core::Error>(),
                        Some(scopenet_core::Error::Config(_))
                    )
            }) {
                2
            } else {
                1
            };
            std::process::exit(code);
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("config {} unreadable: {e}", p.display())))?;
            Ok(TrainConfig::from_json(&text)?)
        }
    }
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    if !data.is_dir() {
        return Err(usage(format!("dataset root {} not found", data.display())));
    }
    let config = load_config(config)?;
    std::fs::create_dir_all(out).context("creating output directory")?;
    let dataset = LabeledDataset::from_dir(data, config.input_size)?;
    if dataset.num_classes() < 2 {
        return Err(usage("dataset needs at least 2 class subdirectories"));
    }
    println!(
        "loaded {} samples across {} classes",
        dataset.len(),
        dataset.num_classes()
    );
    let outcome = fit(&config, &dataset)?;
    for r in &outcome.records {
        println!(
            "epoch {:3}  train loss {:.4}  val loss {:.4}  val acc {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        );
    }
    std::fs::write(out.join("split_manifest.tsv"), outcome.split.to_manifest(&dataset))?;
    std::fs::write(out.join("epochs.csv"), records_to_csv(&outcome.records))?;
    outcome.best.save(&out.join("model.kvf"))?;
    println!(
        "best epoch {} (val loss {:.4}); checkpoint written to {}",
        outcome.best.epoch,
        outcome.best.val_loss,
        out.join("model.kvf").display()
    );
    Ok(())
}

/// Forward one `[3, H, W]` image through the model, returning the
/// probability row.
fn predict_one(model: &mut ModelGraph<f32>, img: &Tensor<f32>) -> Result<Vec<f32>> {
    let s = img.shape().to_vec();
    let batch = img.clone().reshape(&[1, s[0], s[1], s[2]])?;
    let (probs, _) = model.forward(&batch, Mode::Infer)?;
    Ok(probs.data().to_vec())
}

fn load_for_model(path: &Path, input_size: usize) -> Result<Tensor<f32>> {
    let raw = load_image(path)?;
    Ok(normalize(&resize_area(&raw, input_size, input_size)?))
}

fn cmd_eval(ckpt: &Path, data: &Path, manifest: &Path, out: &Path) -> Result<()> {
    if !data.is_dir() {
        return Err(usage(format!("dataset root {} not found", data.display())));
    }
    let ckpt = Checkpoint::load(ckpt)?;
    let mut model = ckpt.instantiate()?;
    let dataset = LabeledDataset::from_dir(data, ckpt.kind.input_size)?;
    if dataset.class_names != ckpt.class_names {
        return Err(anyhow!(
            "dataset classes {:?} do not match checkpoint classes {:?}",
            dataset.class_names,
            ckpt.class_names
        ));
    }
    let manifest_text = std::fs::read_to_string(manifest)
        .map_err(|e| usage(format!("manifest {} unreadable: {e}", manifest.display())))?;
    let split = SplitIndices::from_manifest(&manifest_text, &dataset)?;
    if split.test.is_empty() {
        return Err(anyhow!("manifest marks no test samples"));
    }
    std::fs::create_dir_all(out).context("creating output directory")?;

    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for &i in &split.test {
        let sample = &dataset.samples[i];
        let probs = predict_one(&mut model, &sample.image)?;
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        labels.push(sample.label);
        preds.push(pred);
        records.push(PredictionRecord {
            path: sample.source.display().to_string(),
            true_label: sample.label,
            predicted: pred,
            probabilities: probs,
        });
    }
    let cm = ConfusionMatrix::from_pairs(&dataset.class_names, &labels, &preds)?;
    let report = render_report(&cm);
    print!("{report}");
    std::fs::write(out.join("report.txt"), &report)?;
    std::fs::write(out.join("metrics.csv"), metrics_to_csv(&cm))?;
    std::fs::write(out.join("metrics.json"), metrics_to_json(&cm))?;
    let mut confusion = String::new();
    let k = cm.num_classes();
    confusion.push_str(&format!("true\\pred,{}\n", cm.class_names.join(",")));
    for (c, row) in cm.counts.chunks(k).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        confusion.push_str(&format!("{},{}\n", cm.class_names[c], cells.join(",")));
    }
    std::fs::write(out.join("confusion.csv"), confusion)?;
    write_prediction_log(&out.join("predictions.csv"), &records)?;
    Ok(())
}

fn cmd_predict(ckpt: &Path, images: &[PathBuf]) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let mut model = ckpt.instantiate()?;
    let mut failures = 0usize;
    for path in images {
        match load_for_model(path, ckpt.kind.input_size)
            .and_then(|img| predict_one(&mut model, &img))
        {
            Ok(probs) => {
                let (top, _) = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                let cells: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                println!(
                    "{},{},{}",
                    path.display(),
                    ckpt.class_names[top],
                    cells.join(",")
                );
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures += 1;
            }
        }
    }
    if failures == images.len() {
        return Err(anyhow!("no image could be classified"));
    }
    Ok(())
}

fn timestamp_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn cmd_stream(ckpt: &Path, frames: &Path, poll_ms: u64, stop_after: Option<usize>) -> Result<()> {
    if !frames.is_dir() {
        return Err(usage(format!("frame directory {} not found", frames.display())));
    }
    let ckpt = Checkpoint::load(ckpt)?;
    let mut model = ckpt.instantiate()?;
    let mut done: Vec<PathBuf> = Vec::new();
    let mut counts = vec![0u64; ckpt.class_names.len()];
    let mut idle_polls = 0usize;
    const MAX_IDLE_POLLS: usize = 10;

    println!("timestamp_ms,frame,class,probability");
    loop {
        let mut pending: Vec<PathBuf> = std::fs::read_dir(frames)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && !done.contains(p))
            .collect();
        pending.sort();
        let mut progressed = false;
        for path in pending {
            done.push(path.clone());
            if !is_supported_image(&path) {
                eprintln!("warning: skipping non-image file {}", path.display());
                continue;
            }
            let probs = load_for_model(&path, ckpt.kind.input_size)
                .and_then(|img| predict_one(&mut model, &img))?;
            let (top, p) = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            counts[top] += 1;
            progressed = true;
            println!(
                "{},{},{},{}",
                timestamp_ms(),
                path.file_name().unwrap().to_string_lossy(),
                ckpt.class_names[top],
                p
            );
            if let Some(limit) = stop_after {
                if counts.iter().sum::<u64>() as usize >= limit {
                    print_stream_summary(&ckpt.class_names, &counts);
                    return Ok(());
                }
            }
        }
        idle_polls = if progressed { 0 } else { idle_polls + 1 };
        if idle_polls >= MAX_IDLE_POLLS {
            break;
        }
        std::thread::sleep(Duration::from_millis(poll_ms));
    }
    if counts.iter().sum::<u64>() == 0 {
        return Err(anyhow!("no frames appeared before timeout"));
    }
    print_stream_summary(&ckpt.class_names, &counts);
    Ok(())
}

fn print_stream_summary(class_names: &[String], counts: &[u64]) {
    let cells: Vec<String> = class_names
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0)
        .map(|(n, c)| format!("{n}={c}"))
        .collect();
    println!("summary,{}", cells.join(","));
}

fn cmd_selfcheck() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // one optimizer step from theta = 1, g = 2, lr = 0.1
    {
        use scopenet_core::graph::GradStore;
        use scopenet_core::optim::{OptimizerConfig, OptimizerState};
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            ..OptimizerConfig::default()
        };
        let mut opt = OptimizerState::<f64>::new(cfg);
        let mut theta = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut grads = GradStore::new();
        grads.insert("theta".to_string(), Tensor::from_vec(&[1], vec![2.0]).unwrap());
        let mut params = vec![("theta".to_string(), &mut theta)];
        opt.step(&mut params, &grads)?;
        let got = theta.data()[0];
        check(
            "optimizer hand step",
            (got - 0.6837727).abs() < 1e-6,
            format!("theta after one step = {got:.7} (want 0.6837727)"),
        );
    }

    // uniform 8-class prediction loses ln 8
    {
        use scopenet_core::loss::cross_entropy;
        let y = Tensor::from_vec(&[1, 8], {
            let mut v = vec![0.0f64; 8];
            v[3] = 1.0;
            v
        })
        .unwrap();
        let p = Tensor::from_vec(&[1, 8], vec![0.125; 8]).unwrap();
        let got = cross_entropy(&y, &p)?.mean;
        check(
            "uniform-prediction loss",
            (got - 8.0f64.ln()).abs() < 1e-6,
            format!("loss = {got:.7} (want ln 8 = 2.0794415)"),
        );
    }

    // published-table consistency: exactly the two known rows flag
    {
        let findings = check_paper_consistency();
        let flagged: Vec<String> = findings
            .iter()
            .filter(|f| f.flagged)
            .map(|f| format!("{} {}", f.model, f.row))
            .collect();
        for f in findings.iter().filter(|f| f.flagged) {
            println!(
                "note: published {} {} disagrees with its own numbers: recomputed {:.2} vs published {:.0}",
                f.model, f.row, f.recomputed, f.published
            );
        }
        check(
            "published-table consistency",
            flagged == ["ResNet152V2 Normal Z-Line", "ResNet152V2 overall"],
            format!("{} rows checked, flagged: {flagged:?}", findings.len()),
        );
    }

    if failures > 0 {
        return Err(anyhow!("{failures} selfcheck item(s) failed"));
    }
    Ok(())
}
