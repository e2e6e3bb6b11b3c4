//! Clip sampling, the per-clip training loss and the optimizer loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::autodiff::{finite_difference_check, GradientMap, Tape, Tensor, Var};
use crate::data::{generate_pseudo_density, AnnotatedSequence, Point};
use crate::matching::{
    build_cost_matrix, density_loss_tape, focal_loss_tape, hungarian, point_l1_loss_tape, total_loss, Assignment,
    LossBreakdown, LossWeights, MatchWeights,
};
use crate::model::{image_tensor, model_forward, BoundParams, ModelConfig, ModelParams, PointPredictionSet};
use crate::rng::ChaCha8Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { step_size: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer with bias correction. Moments are keyed by
/// parameter name so they can be checkpointed alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    steps: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, steps: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn from_state(
        config: AdamConfig,
        steps: u64,
        first: BTreeMap<String, Tensor>,
        second: BTreeMap<String, Tensor>,
    ) -> Self {
        Adam { config, steps, first, second }
    }

    /// Updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moments(&self) -> &BTreeMap<String, Tensor> {
        &self.first
    }

    pub fn second_moments(&self) -> &BTreeMap<String, Tensor> {
        &self.second
    }

    /// One update of every parameter; parameters without a gradient entry
    /// are treated as having zero gradient.
    pub fn update(&mut self, params: &mut ModelParams, grads: &GradientMap) -> Result<()> {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as f64;
        let fix1 = 1.0 - libm::pow(c.beta1, t);
        let fix2 = 1.0 - libm::pow(c.beta2, t);
        for name in params.names() {
            let p = params.get_mut(&name).expect("name from params");
            let g = grads.by_name(&name);
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                pd[i] -= c.step_size * (md[i] / fix1) / (libm::sqrt(vd[i] / fix2) + c.eps);
            }
        }
        Ok(())
    }
}

/// One training example: `T` crops sharing a window, the reference frame's
/// points (normalized to the crop) and every frame's density target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingClip {
    pub frames: Vec<Tensor>,
    pub points: Vec<Point>,
    pub densities: Vec<Tensor>,
}

/// Frame positions forming the temporal context around `center`, clamped
/// at the sequence ends by repeating the edge frame.
pub fn context_indices(len: usize, center: usize, config: &ModelConfig) -> Vec<usize> {
    let r = config.reference() as isize;
    (0..config.frames as isize)
        .map(|t| (center as isize + t - r).clamp(0, len as isize - 1) as usize)
        .collect()
}

/// Points inside the `size` window at `(x0, y0)`, shifted to window pixels.
pub fn window_points(points: &[Point], x0: usize, y0: usize, size: usize) -> Vec<Point> {
    let (fx, fy, s) = (x0 as f64, y0 as f64, size as f64);
    points
        .iter()
        .filter(|p| p.x >= fx && p.x < fx + s && p.y >= fy && p.y < fy + s)
        .map(|p| Point::new(p.x - fx, p.y - fy))
        .collect()
}

fn frame_points(seq: &AnnotatedSequence, pos: usize) -> &[Point] {
    let index = seq.frames.frames[pos].index;
    seq.annotations.frame(index).map_or(&[], |a| a.points.as_slice())
}

/// Network inputs for the window at `(x0, y0)` around frame position `center`.
pub fn clip_inputs(seq: &AnnotatedSequence, center: usize, x0: usize, y0: usize, config: &ModelConfig) -> Result<Vec<Tensor>> {
    context_indices(seq.len(), center, config)
        .into_iter()
        .map(|i| Ok(image_tensor(&seq.frames.frames[i].pixels.crop(x0, y0, config.crop_size)?)))
        .collect()
}

pub fn build_training_clip(
    seq: &AnnotatedSequence,
    center: usize,
    x0: usize,
    y0: usize,
    config: &ModelConfig,
) -> Result<TrainingClip> {
    let crop = config.crop_size;
    let frames = clip_inputs(seq, center, x0, y0, config)?;
    let mut densities = Vec::with_capacity(config.frames);
    for i in context_indices(seq.len(), center, config) {
        let local = window_points(frame_points(seq, i), x0, y0, crop);
        let map = generate_pseudo_density(&local, crop, crop, config.sigma)?;
        densities.push(Tensor::new(alloc::vec![1, crop, crop], map.grid)?);
    }
    let points = window_points(frame_points(seq, center), x0, y0, crop)
        .into_iter()
        .map(|p| Point::new(p.x / crop as f64, p.y / crop as f64))
        .collect();
    Ok(TrainingClip { frames, points, densities })
}

/// Uniformly random sequence, reference frame and crop window.
pub fn sample_training_clip<R: Rng + ?Sized>(
    data: &[AnnotatedSequence],
    config: &ModelConfig,
    rng: &mut R,
) -> Result<TrainingClip> {
    if data.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }
    let seq = &data[rng.gen_range(0..data.len())];
    let (h, w) = seq
        .frames
        .extent()
        .ok_or_else(|| Error::Data(format!("sequence {} has no frames", seq.frames.sequence_id)))?;
    if w < config.crop_size || h < config.crop_size {
        return Err(Error::Data(format!(
            "sequence {} is {w}x{h}, smaller than crop {}",
            seq.frames.sequence_id, config.crop_size
        )));
    }
    let center = rng.gen_range(0..seq.len());
    let x0 = rng.gen_range(0..=w - config.crop_size);
    let y0 = rng.gen_range(0..=h - config.crop_size);
    build_training_clip(seq, center, x0, y0, config)
}

/// Tape handles and values of one clip's loss.
#[derive(Clone, Debug)]
pub struct ClipLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub assignment: Assignment,
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v)?.item()
}

/// Forward pass, matching and the weighted loss for one clip. With
/// `fixed` the given assignment is used instead of re-matching, which keeps
/// the loss a smooth function of the parameters for gradient checks.
pub fn clip_loss(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    clip: &TrainingClip,
    weights: &LossWeights,
    matching: MatchWeights,
    fixed: Option<&Assignment>,
) -> Result<ClipLoss> {
    let out = model_forward(tape, params, config, &clip.frames)?;
    let assignment = match fixed {
        Some(a) => a.clone(),
        None => {
            let preds = PointPredictionSet::from_output(tape, &out)?;
            if clip.points.len() > preds.len() {
                log::warn!(
                    "{} ground-truth points but only {} queries; the extra points are unmatched",
                    clip.points.len(),
                    preds.len()
                );
            }
            hungarian(&build_cost_matrix(&preds, &clip.points, matching)?)?
        }
    };
    let mask = assignment.matched_mask(config.num_queries);
    let l_cls = focal_loss_tape(tape, out.logits, &mask, weights)?;
    let l_loc = point_l1_loss_tape(tape, out.coords, &clip.points, &assignment)?;
    let l_dm = density_loss_tape(tape, &out.densities, &clip.densities)?;
    let reg = tape.add(l_cls, l_loc)?;
    let reg = tape.scale(reg, weights.lambda_reg)?;
    let dm = tape.scale(l_dm, weights.lambda_dm)?;
    let total = tape.add(reg, dm)?;
    let breakdown = total_loss(scalar(tape, l_cls)?, scalar(tape, l_loc)?, scalar(tape, l_dm)?, weights)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(ClipLoss { total, breakdown, assignment })
}

/// Per-parameter maximum relative error between backpropagated and
/// central-difference gradients of the clip loss. The assignment is fixed at
/// its value for the unperturbed parameters.
pub fn loss_gradient_check(
    params: &ModelParams,
    config: &ModelConfig,
    clip: &TrainingClip,
    weights: &LossWeights,
    matching: MatchWeights,
    eps: f64,
) -> Result<Vec<(String, f64)>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let assignment = clip_loss(&mut tape, &bound, config, clip, weights, matching, None)?.assignment;
    let mut out = Vec::with_capacity(params.len());
    for (name, value) in params.iter() {
        let err = finite_difference_check(
            |tape, v| {
                let bound = params.bind_except(tape, Some((name, v)));
                Ok(clip_loss(tape, &bound, config, clip, weights, matching, Some(&assignment))?.total)
            },
            value,
            eps,
        )?;
        out.push((String::from(name), err));
    }
    Ok(out)
}

/// Runs `steps` optimizer updates on a single clip; returns the loss before
/// each update.
pub fn fit_clip(
    params: &mut ModelParams,
    adam: &mut Adam,
    config: &ModelConfig,
    clip: &TrainingClip,
    weights: &LossWeights,
    matching: MatchWeights,
    steps: usize,
) -> Result<Vec<LossBreakdown>> {
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let l = clip_loss(&mut tape, &bound, config, clip, weights, matching, None)?;
        let grads = tape.backward(l.total)?;
        adam.update(params, &grads)?;
        history.push(l.breakdown);
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogEntry {
    pub step: u64,
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_dm: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, entry: TrainLogEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.step <= last.step {
                return Err(Error::Data(format!("log step {} after step {}", entry.step, last.step)));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Mean total loss of the entries in `range` (by position).
    pub fn mean_total(&self, range: core::ops::Range<usize>) -> f64 {
        let slice = &self.entries[range];
        slice.iter().map(|e| e.total).sum::<f64>() / slice.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub optimizer: AdamConfig,
    pub loss: LossWeights,
    pub matching: MatchWeights,
    pub batch_clips: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            optimizer: AdamConfig::default(),
            loss: LossWeights::default(),
            matching: MatchWeights::default(),
            batch_clips: 1,
            seed: 0,
        }
    }
}

/// Model, optimizer state and loss history. The sampler for step `k` is a
/// function of `(seed, k)` only, so a run resumed from a checkpoint draws
/// exactly the clips the uninterrupted run would have.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: ModelConfig,
    pub settings: TrainSettings,
    pub params: ModelParams,
    pub adam: Adam,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(config: ModelConfig, settings: TrainSettings) -> Result<Self> {
        settings.loss.validate()?;
        if settings.batch_clips == 0 {
            return Err(Error::Config("batch_clips must be positive".into()));
        }
        let params = ModelParams::init(&config, settings.seed)?;
        let adam = Adam::new(settings.optimizer);
        Ok(Trainer { config, settings, params, adam, log: TrainLog::default() })
    }

    pub fn resume(config: ModelConfig, settings: TrainSettings, params: ModelParams, adam: Adam) -> Result<Self> {
        settings.loss.validate()?;
        Ok(Trainer { config, settings, params, adam, log: TrainLog::default() })
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.adam.steps()
    }

    fn sampler(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed);
        rng.set_stream(step + 1);
        rng
    }

    /// Samples `batch_clips` clips, averages their losses, backpropagates and
    /// applies one optimizer update.
    pub fn train_step(&mut self, data: &[AnnotatedSequence]) -> Result<TrainLogEntry> {
        let step = self.step();
        let mut rng = self.sampler(step);
        let clips = (0..self.settings.batch_clips)
            .map(|_| sample_training_clip(data, &self.config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut total: Option<Var> = None;
        let mut parts = [0.0; 3];
        for clip in &clips {
            let l = clip_loss(&mut tape, &bound, &self.config, clip, &self.settings.loss, self.settings.matching, None)?;
            parts[0] += l.breakdown.l_cls;
            parts[1] += l.breakdown.l_loc;
            parts[2] += l.breakdown.l_dm;
            total = Some(match total {
                None => l.total,
                Some(acc) => tape.add(acc, l.total)?,
            });
        }
        let n = clips.len() as f64;
        let loss = tape.scale(total.expect("batch is non-empty"), 1.0 / n)?;
        let grads = tape.backward(loss)?;
        self.adam.update(&mut self.params, &grads)?;
        let b = total_loss(parts[0] / n, parts[1] / n, parts[2] / n, &self.settings.loss)?;
        let entry = TrainLogEntry { step: step + 1, l_cls: b.l_cls, l_loc: b.l_loc, l_dm: b.l_dm, total: b.total };
        self.log.push(entry)?;
        Ok(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_annotated, SyntheticSceneConfig};
    use alloc::vec;

    fn tiny() -> ModelConfig {
        ModelConfig { crop_size: 16, frames: 3, ..ModelConfig::miniature() }
    }

    fn data() -> Vec<AnnotatedSequence> {
        (0..2)
            .map(|s| {
                let cfg = SyntheticSceneConfig {
                    height: 24,
                    width: 20,
                    num_frames: 4,
                    count_range: (1, 3),
                    seed: s,
                    ..Default::default()
                };
                synthesize_annotated(&cfg, &format!("s{s}")).unwrap()
            })
            .collect()
    }

    #[test]
    fn context_clamps_at_edges() {
        let c = ModelConfig { frames: 5, ..tiny() };
        assert_eq!(context_indices(10, 0, &c), vec![0, 0, 0, 1, 2]);
        assert_eq!(context_indices(10, 9, &c), vec![7, 8, 9, 9, 9]);
        assert_eq!(context_indices(1, 0, &c), vec![0; 5]);
        let single = ModelConfig { frames: 1, ..tiny() };
        assert_eq!(context_indices(4, 2, &single), vec![2]);
    }

    #[test]
    fn window_points_are_half_open() {
        let pts = [Point::new(4.0, 4.0), Point::new(20.0, 5.0), Point::new(19.99, 19.99), Point::new(3.9, 10.0)];
        let got = window_points(&pts, 4, 4, 16);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], Point::new(0.0, 0.0));
    }

    #[test]
    fn training_clip_targets_conserve_counts() {
        let d = data();
        let c = tiny();
        let clip = build_training_clip(&d[0], 1, 2, 3, &c).unwrap();
        assert_eq!(clip.frames.len(), 3);
        for (k, i) in context_indices(d[0].len(), 1, &c).into_iter().enumerate() {
            let n = window_points(frame_points(&d[0], i), 2, 3, 16).len() as f64;
            assert!((clip.densities[k].sum() - n).abs() < 1e-9);
        }
        assert!(clip.points.iter().all(|p| (0.0..1.0).contains(&p.x) && (0.0..1.0).contains(&p.y)));
    }

    #[test]
    fn adam_first_step_moves_by_step_size() {
        let c = tiny();
        let mut params = ModelParams::init(&c, 0).unwrap();
        let before = params.clone();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let w = bound.get("heads.cls.bias").unwrap();
        let s = tape.sum(w).unwrap();
        let loss = tape.scale(s, 3.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut adam = Adam::new(AdamConfig { step_size: 0.01, ..Default::default() });
        adam.update(&mut params, &grads).unwrap();
        // Bias-corrected first step is -lr * g / (|g| + eps).
        let moved = params.get("heads.cls.bias").unwrap().data()[0] - before.get("heads.cls.bias").unwrap().data()[0];
        assert!((moved + 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(params.get("heads.cls.weight"), before.get("heads.cls.weight"));
    }

    #[test]
    fn log_rejects_non_increasing_steps() {
        let mut log = TrainLog::default();
        let e = TrainLogEntry { step: 1, l_cls: 0.0, l_loc: 0.0, l_dm: 0.0, total: 0.0 };
        log.push(e).unwrap();
        assert!(log.push(e).is_err());
    }

    #[test]
    fn zero_density_weight_excludes_density_term() {
        let d = data();
        let settings = TrainSettings { loss: LossWeights { lambda_dm: 0.0, ..Default::default() }, ..Default::default() };
        let mut t = Trainer::new(tiny(), settings).unwrap();
        let e = t.train_step(&d).unwrap();
        assert!(e.l_dm > 0.0);
        assert_eq!(e.total, e.l_cls + e.l_loc);
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let d = data();
        let settings = TrainSettings { seed: 4, batch_clips: 2, ..Default::default() };
        let mut full = Trainer::new(tiny(), settings.clone()).unwrap();
        let mut first = Vec::new();
        for _ in 0..4 {
            first.push(full.train_step(&d).unwrap());
        }
        let mut part = Trainer::new(tiny(), settings.clone()).unwrap();
        for _ in 0..2 {
            part.train_step(&d).unwrap();
        }
        let mut resumed = Trainer::resume(tiny(), settings, part.params.clone(), part.adam.clone()).unwrap();
        let tail: Vec<_> = (0..2).map(|_| resumed.train_step(&d).unwrap()).collect();
        assert_eq!(&first[2..], tail.as_slice());
        assert_eq!(full.params, resumed.params);
    }
}
