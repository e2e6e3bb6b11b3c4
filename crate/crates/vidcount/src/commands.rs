//! The five commands, callable without going through the binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use vidcount_core::data::{
    crop_patches, split_dataset, synthesize_annotated, AnnotatedSequence, FrameAnnotation, Image, Point,
    PointAnnotationSet,
};
use vidcount_core::metrics::{
    evaluate_split, filter_by_threshold, render_csv, stitch_patch_predictions, MetricsReport, PatchPredictions,
};
use vidcount_core::model::{predict as model_predict, ModelParams, PointPrediction, QueryMode};
use vidcount_core::train::{clip_inputs, TrainLog, TrainLogEntry, Trainer};

use crate::annotation::save_annotations;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{frame_file_name, load_split, read_frames, sequence_dir, write_sequence, Manifest};
use crate::error::{write, CliError, Result};
use crate::pnm::{density_sidecar, draw_cross, encode_density_pgm, encode_ppm};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_LOG_HEADER: &str = "step,l_cls,l_loc,l_dm,total";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: &str = "mode,T,MAE,MSE,NAE,wall_seconds";
pub const COUNTS_FILE: &str = "counts.txt";
pub const PREDICTIONS_FILE: &str = "predictions.json";

pub fn eval_csv_name(split: &str) -> String {
    format!("eval_{split}.csv")
}

pub fn sequence_id(i: usize) -> String {
    format!("seq{i:03}")
}

/// Writes `generate.sequences` synthetic sequences and a manifest to `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let ids: Vec<String> = (0..cfg.generate.sequences).map(sequence_id).collect();
    let [train, val, test] = cfg.generate.splits;
    let split = split_dataset(&ids, (train, val, test))?;
    for (i, id) in ids.iter().enumerate() {
        let seq = synthesize_annotated(&cfg.scene(i)?, id)?;
        write_sequence(&sequence_dir(out, id), &seq)?;
    }
    let manifest = Manifest::new(ids, split);
    manifest.save(out)?;
    info!(
        "generated {} sequences in {} ({}/{}/{})",
        manifest.sequences.len(),
        out.display(),
        train,
        val,
        test
    );
    Ok(manifest)
}

fn render_log_rows(entries: &[TrainLogEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{},{},{},{},{}", e.step, e.l_cls, e.l_loc, e.l_dm, e.total).unwrap();
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
    pub params: ModelParams,
}

fn save_trainer(trainer: &Trainer, path: &Path) -> Result<()> {
    Checkpoint { config: trainer.config.clone(), params: trainer.params.clone(), adam: Some(trainer.adam.clone()) }
        .save(path)
}

/// Runs `trainer` up to `total` steps on `data`. With `out` set, writes the
/// checkpoint every `checkpoint_every` steps and at the end.
fn run_steps(trainer: &mut Trainer, data: &[AnnotatedSequence], total: u64, every: u64, out: Option<&Path>) -> Result<()> {
    while trainer.step() < total {
        let entry = trainer.train_step(data).map_err(|e| CliError::from(e).context(format!("step {}", trainer.step() + 1)))?;
        if !entry.total.is_finite() {
            return Err(CliError::Numeric(format!("step {}: loss is {}", entry.step, entry.total)));
        }
        if entry.step % 50 == 0 || entry.step == total {
            info!(
                "step {} total {:.5} cls {:.5} loc {:.5} dm {:.5}",
                entry.step, entry.total, entry.l_cls, entry.l_loc, entry.l_dm
            );
        }
        if let Some(dir) = out {
            if every > 0 && entry.step % every == 0 && entry.step < total {
                save_trainer(trainer, &dir.join(CHECKPOINT_FILE))?;
            }
        }
    }
    if let Some(dir) = out {
        save_trainer(trainer, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(())
}

fn load_train_split(cfg: &RunConfig) -> Result<Vec<AnnotatedSequence>> {
    let data = load_split(&cfg.data.dataset, "train")?;
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: training split is empty", cfg.data.dataset.display())));
    }
    Ok(data)
}

/// Trains on the `train` split of `cfg.data.dataset`, writing the checkpoint
/// and `train_log.csv` to `out`. With `resume`, continues from a checkpoint
/// carrying optimizer state; the log rows of the resumed steps are appended.
pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let config = cfg.model_config()?;
    let settings = cfg.train_settings()?;
    let data = load_train_split(cfg)?;
    let mut trainer = match resume {
        None => Trainer::new(config, settings)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config != config {
                return Err(CliError::Config(format!(
                    "{}: checkpoint model settings differ from the config file",
                    path.display()
                )));
            }
            let adam = ck
                .adam
                .ok_or_else(|| CliError::Data(format!("{}: checkpoint has no optimizer state", path.display())))?;
            if adam.config != settings.optimizer {
                warn!("optimizer settings from the config replace those stored in the checkpoint");
            }
            let adam = vidcount_core::train::Adam::from_state(
                settings.optimizer,
                adam.steps(),
                adam.first_moments().clone(),
                adam.second_moments().clone(),
            );
            Trainer::resume(config, settings, ck.params, adam)?
        }
    };
    let start = trainer.step();
    let frames: usize = data.iter().map(AnnotatedSequence::len).sum();
    let total = cfg.total_steps(frames);
    info!("training steps {}..{} on {} sequences ({} frames)", start, total, data.len(), frames);
    run_steps(&mut trainer, &data, total, cfg.train.checkpoint_every, Some(out))?;

    let log_path = out.join(TRAIN_LOG_FILE);
    let rows = render_log_rows(&trainer.log.entries);
    if resume.is_some() && log_path.exists() {
        let mut text = std::fs::read_to_string(&log_path).map_err(|e| CliError::io(&log_path, e))?;
        text.push_str(&rows);
        write(&log_path, text)?;
    } else {
        write(&log_path, format!("{TRAIN_LOG_HEADER}\n{rows}"))?;
    }
    Ok(TrainOutcome { checkpoint: out.join(CHECKPOINT_FILE), log: trainer.log, params: trainer.params })
}

/// Evaluates a checkpoint on one split; writes `eval_<split>.csv` to `out`.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, split: &str, out: &Path) -> Result<(MetricsReport, String)> {
    let ck = Checkpoint::load(checkpoint)?;
    let sequences = load_split(&cfg.data.dataset, split)?;
    if sequences.is_empty() {
        return Err(CliError::Data(format!("split '{split}' has no sequences")));
    }
    let inference = cfg.inference(&ck.config);
    let (report, rows) = evaluate_split(&ck.params, &ck.config, &sequences, &inference)?;
    let csv = render_csv(&rows);
    write(&out.join(eval_csv_name(split)), &csv)?;
    Ok((report, csv))
}

/// Renders predictions for every frame of `sequence`: overlays with 3x3
/// crosses, predicted density exports, per-frame counts and the points as
/// an annotation file. Returns the per-frame counts.
pub fn predict(cfg: &RunConfig, checkpoint: &Path, sequence: &Path, out: &Path) -> Result<Vec<usize>> {
    let ck = Checkpoint::load(checkpoint)?;
    let (meta, seq) = read_frames(sequence)?;
    let config = &ck.config;
    let inference = cfg.inference(config);
    inference.validate(config)?;
    let grid = crop_patches(meta.height, meta.width, inference.patch_size)?;
    let size = inference.patch_size;
    let reference = config.reference();

    let mut counts = Vec::with_capacity(seq.len());
    let mut counts_text = String::from("frame_index count\n");
    let mut predicted = PointAnnotationSet::default();
    for (pos, frame) in seq.frames.frames.iter().enumerate() {
        let mut per_patch = Vec::with_capacity(grid.patches.len());
        let mut density = vec![0.0; meta.height * meta.width];
        for patch in &grid.patches {
            let clip = clip_inputs(&seq, pos, patch.x0, patch.y0, config)?;
            let (preds, maps) = model_predict(&ck.params, config, &clip)?;
            let map = maps[reference].data();
            for y in patch.owned.y0..patch.owned.y1 {
                for x in patch.owned.x0..patch.owned.x1 {
                    density[y * meta.width + x] = map[(y - patch.y0) * size + (x - patch.x0)];
                }
            }
            per_patch.push(PatchPredictions { x0: patch.x0, y0: patch.y0, preds: filter_by_threshold(&preds, inference.threshold) });
        }
        let points = stitch_patch_predictions(&per_patch, &grid)?;

        write(&out.join(frame_file_name(frame.index)), encode_ppm(&overlay(&frame.pixels, &points)))?;
        let (pgm, scale) = encode_density_pgm(&density, meta.height, meta.width)?;
        write(&out.join(format!("density_{:06}.pgm", frame.index)), pgm)?;
        write(&out.join(format!("density_{:06}.txt", frame.index)), density_sidecar(scale, density.iter().sum()))?;

        writeln!(counts_text, "{} {}", frame.index, points.len()).unwrap();
        counts.push(points.len());
        predicted
            .frames
            .push(FrameAnnotation { index: frame.index, points: points.iter().map(|p| Point::new(p.x, p.y)).collect() });
    }
    write(&out.join(COUNTS_FILE), counts_text)?;
    write(&out.join(PREDICTIONS_FILE), save_annotations(&meta, &predicted)?)?;
    Ok(counts)
}

pub const CROSS_COLOR: [f64; 3] = [1.0, 0.0, 0.0];

/// Copy of `img` with a cross on the pixel containing each point.
pub fn overlay(img: &Image, points: &[PointPrediction]) -> Image {
    let mut out = img.clone();
    for p in points {
        let x = (p.x.max(0.0).floor() as usize).min(img.width - 1);
        let y = (p.y.max(0.0).floor() as usize).min(img.height - 1);
        draw_cross(&mut out, x, y, CROSS_COLOR);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: QueryMode,
    pub frames: usize,
    pub report: MetricsReport,
    /// Training plus evaluation time.
    pub wall_seconds: f64,
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{:.3},{:.3},{:.3},{:.3}",
            r.mode.as_str(),
            r.frames,
            r.report.mae,
            r.report.mse,
            r.report.nae,
            r.wall_seconds
        )
        .unwrap();
    }
    s
}

/// Trains and evaluates every (query mode, T) in {add, concat} x {1, 5}
/// from the same seed and writes `ablation.csv` to `out`.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let data = load_train_split(cfg)?;
    let split = cfg.ablate.split.as_str();
    let eval_set = load_split(&cfg.data.dataset, split)?;
    if eval_set.is_empty() {
        return Err(CliError::Data(format!("ablation split '{split}' has no sequences")));
    }
    let frames: usize = data.iter().map(AnnotatedSequence::len).sum();
    let total = cfg.total_steps(frames);
    let mut rows = Vec::new();
    for mode in [QueryMode::Add, QueryMode::Concat] {
        for t in [1, 5] {
            let mut cell = cfg.clone();
            cell.model.query_mode = mode.as_str().into();
            cell.model.frames = t;
            cell.model.reference_frame = None;
            let config = cell.model_config()?;
            let inference = cell.inference(&config);
            let started = Instant::now();
            let mut trainer = Trainer::new(config.clone(), cell.train_settings()?)?;
            run_steps(&mut trainer, &data, total, 0, None)?;
            let (report, _) = evaluate_split(&trainer.params, &config, &eval_set, &inference)?;
            let wall_seconds = started.elapsed().as_secs_f64();
            info!("ablation {} T={t}: {report} in {wall_seconds:.2}s", mode.as_str());
            rows.push(AblationRow { mode, frames: t, report, wall_seconds });
        }
    }
    write(&out.join(ABLATION_FILE), render_ablation(&rows))?;
    Ok(rows)
}
