//! `nucprior` command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{Mode, RunConfig};
use crate::data::{load_dataset, training_tuples, DatasetManifest, Split};
use crate::detect_eval::{detect, match_golden, pr_curve, prf1, threshold_grid, MatchReport};
use crate::edges::{canny, EdgeMap};
use crate::error::{Error, Result};
use crate::io;
use crate::network::{forward, history_csv, train, NetworkParams};
use crate::shapes::{eliminate_shapes, group_shapes, similarity_matrix, ShapeKind};
use crate::synth::{expert_shapes, generate_dataset};

#[derive(Debug, Parser)]
#[command(name = "nucprior", version, about = "Nucleus center detection with shape priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Binary Canny edge map of an image, or of every image in a directory.
    Edges {
        input: PathBuf,
        /// Output file (or directory when INPUT is a directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Remove near-duplicate shapes; writes the reference set and the similarity matrix.
    PruneShapes {
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Similarity matrix CSV (default: OUT/similarity.csv).
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; writes checkpoint.json and loss_history.csv into OUT.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixed shape set (sp).
        #[arg(long)]
        shapes: Option<PathBuf>,
        /// Reference shape set that initializes and anchors the learnable set (tsp).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Precomputed edge maps named after the images; computed when omitted.
        #[arg(long)]
        edges: Option<PathBuf>,
    },
    /// Detect centers in one image; CSV to OUT or stdout.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `[detection] threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Per-image and mean precision/recall/F1 of detection CSVs against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Threshold sweep over the test split of a manifest.
    PrCurve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate the synthetic dataset, its manifest and an expert shape set.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses arguments, runs, and maps errors to exit codes (1 runtime, 2 input).
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Edges { input, out, config } => cmd_edges(&input, out.as_deref(), config.as_deref()),
        Command::PruneShapes {
            shapes,
            out,
            threshold,
            matrix,
            config,
        } => cmd_prune_shapes(&shapes, &out, threshold, matrix.as_deref(), config.as_deref()),
        Command::Train {
            manifest,
            mode,
            out,
            config,
            shapes,
            reference,
            edges,
        } => cmd_train(
            &manifest,
            mode,
            &out,
            config.as_deref(),
            shapes.as_deref(),
            reference.as_deref(),
            edges.as_deref(),
        ),
        Command::Detect {
            checkpoint,
            image,
            out,
            config,
            threshold,
        } => cmd_detect(&checkpoint, &image, out.as_deref(), config.as_deref(), threshold),
        Command::Eval {
            detections,
            ground_truth,
            out,
            config,
        } => cmd_eval(&detections, &ground_truth, out.as_deref(), config.as_deref()),
        Command::PrCurve {
            checkpoint,
            manifest,
            out,
            config,
        } => cmd_pr_curve(&checkpoint, &manifest, out.as_deref(), config.as_deref()),
        Command::Synth { out, config } => cmd_synth(&out, config.as_deref()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn cmd_edges(input: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    if input.is_dir() {
        let out = out.ok_or_else(|| Error::invalid("--out DIR is required for a directory input"))?;
        let files = io::list_images(input)?;
        if files.is_empty() {
            return Err(Error::invalid(format!("no images in {}", input.display())));
        }
        files.par_iter().try_for_each(|f| {
            let e = canny(&io::read_gray(f)?, &cfg.canny)?;
            io::write_gray(&out.join(format!("{}.png", stem(f))), e.grid())
        })
    } else {
        let e = canny(&io::read_gray(input)?, &cfg.canny)?;
        let target = match out {
            Some(p) => p.to_path_buf(),
            None => input.with_file_name(format!("{}_edges.png", stem(input))),
        };
        io::write_gray(&target, e.grid())
    }
}

pub fn cmd_prune_shapes(
    shapes: &Path,
    out: &Path,
    threshold: Option<f64>,
    matrix: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let threshold = threshold.unwrap_or(cfg.prune.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("--threshold must lie in [0, 1]"));
    }
    let expert = io::read_shape_dir(shapes, ShapeKind::Expert)?;
    let m = similarity_matrix(expert.shapes(), &cfg.cw_ssim)?;
    let groups = group_shapes(expert.shapes(), threshold, &cfg.cw_ssim)?;
    let reference = eliminate_shapes(&expert, threshold, &cfg.cw_ssim)?;
    io::write_shape_dir(out, &reference)?;
    let mut csv = String::new();
    for row in &m {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let matrix = matrix.map_or_else(|| out.join("similarity.csv"), Path::to_path_buf);
    io::write_text(&matrix, &csv)?;
    let reps: Vec<String> = groups.iter().map(|g| g[0].to_string()).collect();
    println!(
        "kept {} of {} shapes (representatives: {})",
        reference.len(),
        expert.len(),
        reps.join(" ")
    );
    Ok(())
}

pub fn cmd_train(
    manifest: &Path,
    mode: Mode,
    out: &Path,
    config: Option<&Path>,
    shapes: Option<&Path>,
    reference: Option<&Path>,
    edges: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let hyper = cfg.hyper(mode);
    match mode {
        Mode::Np | Mode::Wnp if shapes.is_some() || reference.is_some() => {
            return Err(Error::invalid(format!("mode {mode} takes no shape sets")));
        }
        Mode::Sp if shapes.is_none() || reference.is_some() => {
            return Err(Error::invalid("mode sp needs --shapes (and no --reference)"));
        }
        Mode::Tsp if reference.is_none() || shapes.is_some() => {
            return Err(Error::invalid("mode tsp needs --reference (and no --shapes)"));
        }
        _ => {}
    }
    let fixed = shapes.map(|d| io::read_shape_dir(d, ShapeKind::Expert)).transpose()?;
    let reference = reference.map(|d| io::read_shape_dir(d, ShapeKind::Reference)).transpose()?;
    let manifest = DatasetManifest::load(manifest)?;
    let mut dataset = load_dataset(&manifest)?;
    if let Some(dir) = edges {
        for rec in &mut dataset.train {
            let p = dir.join(format!("{}.png", stem(Path::new(&rec.name))));
            let g = io::read_gray(&p)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            if g.dims() != rec.image.dims() {
                return Err(Error::parse(p, "edge map size differs from its image"));
            }
            rec.edge = Some(EdgeMap::from_grid(g)?);
        }
    }
    let tuples = training_tuples(&dataset.train, &cfg.data, &cfg.canny)?;
    if tuples.is_empty() {
        return Err(Error::invalid("no training tuples after void filtering"));
    }
    let mut params = NetworkParams::init(cfg.network(), cfg.seed)?;
    if let Some(r) = &reference {
        params = params.with_shapes(r.to_learnable());
    }
    let shapes_ref = if mode == Mode::Tsp { reference.as_ref() } else { fixed.as_ref() };
    eprintln!(
        "training {mode}: {} tuples from {} images, {} epochs",
        tuples.len(),
        dataset.train.len(),
        hyper.epochs
    );
    let outcome = train(&tuples, params, shapes_ref, &hyper, |e| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  sp {:.6}  ssim {:.6}  total {:.6}",
            e.epoch, e.loss.data, e.loss.prior, e.loss.shape, e.loss.total
        );
    })?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    outcome.params.save(&out.join("checkpoint.json"))?;
    io::write_text(&out.join("loss_history.csv"), &history_csv(&outcome.history))?;
    io::write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    if let Some(learned) = &outcome.params.shapes {
        io::write_shape_dir(&out.join("learned_shapes"), learned)?;
    }
    Ok(())
}

fn check_network(cfg: &RunConfig, params: &NetworkParams) -> Result<()> {
    match cfg.network {
        Some(n) if n != params.config => Err(Error::invalid(format!(
            "config network {n:?} does not match checkpoint {:?}",
            params.config
        ))),
        _ => Ok(()),
    }
}

pub fn cmd_detect(
    checkpoint: &Path,
    image: &Path,
    out: Option<&Path>,
    config: Option<&Path>,
    threshold: Option<f64>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let params = NetworkParams::load(checkpoint)?;
    check_network(&cfg, &params)?;
    let mut det = cfg.detection;
    if let Some(t) = threshold {
        det.threshold = t;
        det.validate()?;
    }
    let x = io::read_gray(image)?;
    let centers = detect(&forward(&x, &params)?, &det);
    emit(out, &io::format_centers(&centers))
}

fn csv_files(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            names.push(p.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn report_row(name: &str, r: &MatchReport) -> String {
    format!(
        "{name},{},{},{},{},{},{}\n",
        r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1
    )
}

pub fn cmd_eval(detections: &Path, gt: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let dets = csv_files(detections)?;
    let truth = csv_files(gt)?;
    let missing: Vec<&String> = dets
        .iter()
        .filter(|n| !truth.contains(n))
        .chain(truth.iter().filter(|n| !dets.contains(n)))
        .collect();
    if !missing.is_empty() {
        let names: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
        return Err(Error::invalid(format!(
            "detection and ground-truth files do not pair up: {}",
            names.join(", ")
        )));
    }
    if dets.is_empty() {
        return Err(Error::invalid(format!("no CSV files in {}", detections.display())));
    }
    let mut csv = String::from("image,tp,fp,fn,precision,recall,f1\n");
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    let mut totals = (0, 0, 0);
    for name in &dets {
        let d = io::read_centers(&detections.join(name))?;
        let g = io::read_centers(&gt.join(name))?;
        let rep = prf1(match_golden(&d, &g, &cfg.eval).counts);
        csv.push_str(&report_row(&stem(Path::new(name)), &rep));
        p += rep.precision;
        r += rep.recall;
        f += rep.f1;
        totals = (totals.0 + rep.tp, totals.1 + rep.fp, totals.2 + rep.fn_);
    }
    let n = dets.len() as f64;
    let _ = writeln!(
        csv,
        "mean,{},{},{},{},{},{}",
        totals.0,
        totals.1,
        totals.2,
        p / n,
        r / n,
        f / n
    );
    emit(out, &csv)
}

pub fn cmd_pr_curve(
    checkpoint: &Path,
    manifest: &Path,
    out: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let params = NetworkParams::load(checkpoint)?;
    check_network(&cfg, &params)?;
    let manifest = DatasetManifest::load(manifest)?;
    let test = load_dataset(&manifest)?.test;
    if test.is_empty() {
        return Err(Error::invalid("manifest split leaves no test images"));
    }
    let yhats = test
        .iter()
        .map(|r| forward(&r.image, &params))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<_> = test.iter().map(|r| r.centers.clone()).collect();
    let curve = pr_curve(&yhats, &gts, &cfg.detection, &cfg.eval, &threshold_grid(cfg.pr.step)?)?;
    let mut csv = String::from("threshold,precision,recall,f1\n");
    for pt in &curve.points {
        let _ = writeln!(csv, "{},{},{},{}", pt.threshold, pt.precision, pt.recall, pt.f1);
    }
    emit(out, &csv)?;
    eprintln!(
        "best threshold {} precision {:.4} recall {:.4} f1 {:.4} ({} test images)",
        curve.best.threshold,
        curve.best.precision,
        curve.best.recall,
        curve.best.f1,
        test.len()
    );
    Ok(())
}

pub fn cmd_synth(out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let images = generate_dataset(&cfg.synth)?;
    let img_dir = out.join("images");
    let ann_dir = out.join("annotations");
    images.par_iter().enumerate().try_for_each(|(k, s)| {
        io::write_gray(&img_dir.join(format!("img_{k:03}.png")), &s.image)?;
        io::write_centers(&ann_dir.join(format!("img_{k:03}.csv")), &s.centers)
    })?;
    io::write_shape_dir(&out.join("expert_shapes"), &expert_shapes(20)?)?;
    let manifest = DatasetManifest {
        image_dir: "images".into(),
        annotation_dir: "annotations".into(),
        split: Split { train: 50, test: 50 },
        seed: cfg.seed,
    };
    io::write_text(&out.join("manifest.toml"), &manifest.to_toml())
}
