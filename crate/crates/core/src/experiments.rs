//! Synthetic encode/decode experiments behind the `roundtrip` and
//! `tau-sweep` commands.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{decode, DecodedPose, NmsParams};
use crate::encoder::{encode_scene, normalization_factor, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::eval::{mean_ap, pckh_accuracy, DEFAULT_ALPHA};
use crate::loss::LossConfig;
use crate::model::{predict_poses, samples_from_scenes, train_toy, Architecture, Control, Decay, ToyRegressor, TrainConfig};
use crate::repr::{centroid_root, Pose, Scene};
use crate::skeleton::{toy6, SkeletonSpec};
use crate::synth::{generate_dataset, generate_scene, SynthConfig, SynthScene};

/// Largest planar distance over joints visible in both poses, and the number
/// of joints whose visibility differs.
fn joint_error(pred: &Pose, gt: &Pose) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        match (p.visible, g.visible) {
            (true, true) => worst = worst.max(((p.pos[0] - g.pos[0]).powi(2) + (p.pos[1] - g.pos[1]).powi(2)).sqrt()),
            (false, false) => {}
            _ => missing += 1,
        }
    }
    (worst, missing)
}

/// Pairs every ground-truth person with the nearest unused decoded root.
fn pair_by_root(preds: &[DecodedPose], gts: &[Pose]) -> Result<Vec<Option<usize>>> {
    let mut used = vec![false; preds.len()];
    gts.iter()
        .map(|gt| {
            let r = centroid_root(gt)?;
            let best = preds
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, p)| (i, (p.root[0] - r[0]).powi(2) + (p.root[1] - r[1]).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
            if let Some(i) = best {
                used[i] = true;
            }
            Ok(best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundtripConfig {
    pub seed: u64,
    pub scenes: usize,
    pub mode: Mode,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub max_persons: usize,
}

impl RoundtripConfig {
    pub fn new(seed: u64, scenes: usize, mode: Mode) -> Self {
        RoundtripConfig {
            seed,
            scenes,
            mode,
            stride: 1,
            height: 64,
            width: 64,
            max_persons: 3,
        }
    }

    fn synth(&self) -> SynthConfig {
        let mut cfg = SynthConfig::new(self.seed, self.height, self.width);
        cfg.n_persons = (1, self.max_persons.max(1));
        cfg.stride = self.stride;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundtripRow {
    pub index: usize,
    pub persons: usize,
    pub decoded: usize,
    /// Persons paired with a decoded pose that has every joint within one
    /// stride.
    pub matched: usize,
    /// Over joints visible in both a person and its paired pose.
    pub max_error_px: f64,
    /// Joints of paired persons whose visibility was not reproduced.
    pub missing_joints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundtripReport {
    pub config: RoundtripConfig,
    pub rows: Vec<RoundtripRow>,
    pub persons: usize,
    pub recovered: usize,
    /// Scenes whose decoded count equals the true count.
    pub exact_count_scenes: usize,
    pub max_error_px: f64,
}

impl RoundtripReport {
    pub fn recovered_fraction(&self) -> f64 {
        if self.persons == 0 {
            1.0
        } else {
            self.recovered as f64 / self.persons as f64
        }
    }
}

/// Generates, encodes and decodes `cfg.scenes` scenes. A person counts as
/// recovered when its paired decoded pose has every joint within one stride.
pub fn run_roundtrip(cfg: &RoundtripConfig, spec: &Arc<SkeletonSpec>) -> Result<RoundtripReport> {
    if cfg.scenes == 0 {
        return Err(Error::InvalidArgument("scene count must be positive".into()));
    }
    let synth = cfg.synth();
    let enc = EncoderConfig::for_image(cfg.height, cfg.width, cfg.stride);
    let nms = NmsParams::default();
    let tolerance = cfg.stride as f64;
    let rows = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&synth, spec, i as u64)?.scene;
            let e = encode_scene(&scene, spec, cfg.mode, &enc)?;
            let preds = decode(&e.confidence, &e.displacements, &enc, (cfg.height, cfg.width), spec, &nms)?;
            let pairs = pair_by_root(&preds, &scene.persons)?;
            let errs: Vec<(f64, usize)> = pairs
                .iter()
                .zip(&scene.persons)
                .filter_map(|(p, gt)| p.map(|i| joint_error(&preds[i].pose, gt)))
                .collect();
            Ok(RoundtripRow {
                index: i,
                persons: scene.persons.len(),
                decoded: preds.len(),
                matched: errs.iter().filter(|&&(e, m)| e <= tolerance && m == 0).count(),
                max_error_px: errs.iter().map(|e| e.0).fold(0.0, f64::max),
                missing_joints: errs.iter().map(|e| e.1).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundtripReport {
        config: cfg.clone(),
        persons: rows.iter().map(|r| r.persons).sum(),
        recovered: rows.iter().map(|r| r.matched).sum(),
        exact_count_scenes: rows.iter().filter(|r| r.decoded == r.persons).count(),
        max_error_px: rows.iter().map(|r| r.max_error_px).fold(0.0, f64::max),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSweepConfig {
    pub from: u32,
    pub to: u32,
    pub seed: u64,
    pub scenes: usize,
    pub mode: Mode,
    pub height: usize,
    pub width: usize,
    /// Persons per scene, inclusive.
    pub persons: (usize, usize),
    /// Passed to the scene sampler; larger values pack persons closer.
    pub overlap: f64,
}

impl Default for TauSweepConfig {
    fn default() -> Self {
        TauSweepConfig {
            from: 1,
            to: 20,
            seed: 11,
            scenes: 20,
            mode: Mode::Hierarchical,
            height: 64,
            width: 64,
            persons: (2, 4),
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauRow {
    pub tau: f64,
    /// Fraction of `(cell, joint)` entries averaged over two or more persons.
    pub overlap_fraction: f64,
    pub defined_fraction: f64,
    pub map: Option<f64>,
    /// Over joints visible in both a person and its paired decoded pose.
    pub max_error_px: f64,
    /// Joints of paired persons whose visibility was not reproduced.
    pub missing_joints: usize,
    /// Persons left without a decoded pose.
    pub unpaired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSweepReport {
    pub config: TauSweepConfig,
    pub rows: Vec<TauRow>,
}

impl TauSweepReport {
    pub fn overlap_non_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].overlap_fraction >= w[0].overlap_fraction)
    }
}

/// Encodes one fixed synthetic dataset at every integer `tau` in
/// `from..=to` and decodes it back.
pub fn run_tau_sweep(cfg: &TauSweepConfig, spec: &Arc<SkeletonSpec>) -> Result<TauSweepReport> {
    if cfg.from > cfg.to || cfg.scenes == 0 {
        return Err(Error::InvalidArgument("tau range and scene count must be non-empty".into()));
    }
    let mut synth = SynthConfig::new(cfg.seed, cfg.height, cfg.width);
    synth.n_persons = cfg.persons;
    synth.overlap = cfg.overlap;
    let scenes: Vec<Scene> = (0..cfg.scenes as u64)
        .map(|i| generate_scene(&synth, spec, i).map(|s| s.scene))
        .collect::<Result<_>>()?;
    let gts: Vec<Vec<Pose>> = scenes.iter().map(|s| s.persons.clone()).collect();
    let nms = NmsParams::default();
    let rows = (cfg.from..=cfg.to)
        .into_par_iter()
        .map(|tau| {
            let mut enc = EncoderConfig::for_image(cfg.height, cfg.width, 1);
            enc.tau = tau as f64;
            let (mut overlap, mut defined, mut entries) = (0usize, 0usize, 0usize);
            let mut preds = Vec::with_capacity(scenes.len());
            let mut max_err: f64 = 0.0;
            let (mut missing, mut unpaired) = (0, 0);
            for scene in &scenes {
                let e = encode_scene(scene, spec, cfg.mode, &enc)?;
                overlap += e.displacements.support.iter().filter(|&&s| s > 1).count();
                defined += e.displacements.support.iter().filter(|&&s| s > 0).count();
                entries += e.displacements.support.len();
                let p = decode(&e.confidence, &e.displacements, &enc, (cfg.height, cfg.width), spec, &nms)?;
                for (pair, gt) in pair_by_root(&p, &scene.persons)?.iter().zip(&scene.persons) {
                    match pair {
                        Some(i) => {
                            let (e, m) = joint_error(&p[*i].pose, gt);
                            max_err = max_err.max(e);
                            missing += m;
                        }
                        None => unpaired += 1,
                    }
                }
                preds.push(p);
            }
            let report = mean_ap(&preds, &gts, spec, DEFAULT_ALPHA)?;
            Ok(TauRow {
                tau: tau as f64,
                overlap_fraction: overlap as f64 / entries as f64,
                defined_fraction: defined as f64 / entries as f64,
                map: report.total_map,
                max_error_px: max_err,
                missing_joints: missing,
                unpaired,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TauSweepReport { config: cfg.clone(), rows })
}

/// Settings of the `train-toy` run: scenes, network, optimiser and loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    /// Seeds the scenes, the initial weights and the visit order.
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub max_persons: usize,
    pub epochs: usize,
    pub mode: Mode,
    pub stages: usize,
    pub dilations: [usize; 3],
    pub learning_rate: f64,
    pub decay: Decay,
    pub beta: f64,
    /// Smooth-l1 transition point in normalised units; `None` means one
    /// pixel, `1 / Z`.
    pub smooth_l1_delta: Option<f64>,
    /// Evaluate train-set PCKh every this many epochs; 0 only at the end.
    pub eval_every: usize,
    pub stop_at_perfect: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: DEFAULT_TOY_SEED,
            scenes: 5,
            size: 64,
            max_persons: 3,
            epochs: 500,
            mode: Mode::Vanilla,
            stages: 2,
            dilations: [1, 3, 9],
            learning_rate: 0.003,
            decay: Decay::Step { every: 100, gamma: 0.5 },
            beta: 0.01,
            smooth_l1_delta: None,
            eval_every: 10,
            stop_at_perfect: false,
        }
    }
}

/// Seed of the reference toy run.
pub const DEFAULT_TOY_SEED: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    /// Train-set PCKh@0.5 when evaluated at this epoch.
    pub pckh: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub model: ToyRegressor<f32>,
    pub history: Vec<ToyEpoch>,
    pub final_pckh: f64,
    /// First evaluated epoch (1-based) with PCKh of 1.
    pub perfect_at: Option<usize>,
    pub encoder: EncoderConfig,
    pub spec: Arc<SkeletonSpec>,
}

/// Train-set PCKh@0.5 of the model's decoded final-stage output.
pub fn toy_pckh(model: &ToyRegressor<f32>, scenes: &[SynthScene], spec: &SkeletonSpec, enc: &EncoderConfig) -> Result<f64> {
    let nms = NmsParams::default();
    let mut preds = Vec::with_capacity(scenes.len());
    for s in scenes {
        let image = s
            .image
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("toy scenes must be rendered".into()))?;
        preds.push(predict_poses(model, image, spec, enc, &nms)?);
    }
    let gts: Vec<Vec<Pose>> = scenes.iter().map(|s| s.scene.persons.clone()).collect();
    pckh_accuracy(&preds, &gts, spec, DEFAULT_ALPHA)
}

/// Renders the toy scenes, encodes them and trains the regressor on them.
pub fn run_toy(cfg: &ToyConfig, mut on_epoch: impl FnMut(&ToyEpoch)) -> Result<ToyRun> {
    if cfg.scenes == 0 {
        return Err(Error::InvalidArgument("scene count must be positive".into()));
    }
    let spec = Arc::new(toy6());
    let mut synth = SynthConfig::new(cfg.seed, cfg.size, cfg.size);
    synth.render = true;
    synth.n_persons = (1, cfg.max_persons.max(1));
    let scenes = generate_dataset(&synth, &spec, cfg.scenes)?;
    let enc = EncoderConfig::for_image(cfg.size, cfg.size, 1);
    let data = samples_from_scenes(&scenes, &spec, cfg.mode, &enc)?;
    let mut arch = Architecture::new(spec.k(), spec.dim, cfg.mode);
    arch.stages = cfg.stages;
    arch.dilations = cfg.dilations;
    let mut model = ToyRegressor::<f32>::new(arch, cfg.seed)?;
    let delta = match cfg.smooth_l1_delta {
        Some(d) => d,
        None => 1.0 / normalization_factor(cfg.size, cfg.size)?,
    };
    let train = TrainConfig {
        learning_rate: cfg.learning_rate,
        decay: cfg.decay,
        epochs: cfg.epochs,
        seed: cfg.seed,
        loss: LossConfig {
            beta: cfg.beta,
            smooth_l1_delta: delta,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut perfect_at = None;
    let mut failure = None;
    train_toy(&mut model, &data, &train, |r, m| {
        let due = cfg.eval_every > 0 && (r.epoch + 1) % cfg.eval_every == 0;
        let pckh = if due {
            match toy_pckh(m, &scenes, &spec, &enc) {
                Ok(v) => Some(v),
                Err(e) => {
                    failure = Some(e);
                    return Control::Stop;
                }
            }
        } else {
            None
        };
        if pckh == Some(1.0) && perfect_at.is_none() {
            perfect_at = Some(r.epoch + 1);
        }
        let row = ToyEpoch {
            epoch: r.epoch + 1,
            loss: r.loss,
            learning_rate: r.learning_rate,
            pckh,
        };
        on_epoch(&row);
        history.push(row);
        if cfg.stop_at_perfect && perfect_at.is_some() {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let final_pckh = toy_pckh(&model, &scenes, &spec, &enc)?;
    Ok(ToyRun {
        model,
        history,
        final_pckh,
        perfect_at,
        encoder: enc,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_mpii16, toy6};

    #[test]
    fn roundtrip_is_exact_at_stride_one() {
        let spec = Arc::new(default_mpii16());
        let r = run_roundtrip(&RoundtripConfig::new(7, 20, Mode::Vanilla), &spec).unwrap();
        assert_eq!(r.rows.len(), 20);
        assert_eq!(r.recovered, r.persons);
        assert_eq!(r.exact_count_scenes, 20);
        assert!(r.max_error_px <= 1e-9, "{}", r.max_error_px);
    }

    #[test]
    fn roundtrip_at_stride_four_stays_within_half_stride() {
        let spec = Arc::new(toy6());
        let mut cfg = RoundtripConfig::new(7, 20, Mode::Vanilla);
        cfg.stride = 4;
        (cfg.height, cfg.width) = (128, 128);
        let r = run_roundtrip(&cfg, &spec).unwrap();
        assert_eq!(r.recovered_fraction(), 1.0);
        assert!(r.max_error_px <= 2.0, "{}", r.max_error_px);
    }

    #[test]
    fn tau_sweep_overlap_is_monotone() {
        let spec = Arc::new(toy6());
        let cfg = TauSweepConfig {
            scenes: 5,
            ..TauSweepConfig::default()
        };
        let r = run_tau_sweep(&cfg, &spec).unwrap();
        assert_eq!(r.rows.len(), 20);
        assert!(r.overlap_non_decreasing());
        assert!(r.rows[19].overlap_fraction > r.rows[0].overlap_fraction);
        assert!(r.rows.windows(2).all(|w| w[1].defined_fraction >= w[0].defined_fraction));
    }

    #[test]
    fn short_toy_run_records_every_epoch() {
        let cfg = ToyConfig {
            scenes: 1,
            size: 32,
            max_persons: 1,
            epochs: 3,
            eval_every: 2,
            ..ToyConfig::default()
        };
        let mut seen = 0;
        let run = run_toy(&cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        assert_eq!(run.history.len(), 3);
        assert!(run.history[1].pckh.is_some() && run.history[0].pckh.is_none());
        assert!(run.history.iter().all(|r| r.loss.is_finite()));
        assert!((0.0..=1.0).contains(&run.final_pckh));
    }

    #[test]
    fn rejects_empty_ranges() {
        let spec = Arc::new(toy6());
        let cfg = TauSweepConfig {
            from: 5,
            to: 4,
            ..TauSweepConfig::default()
        };
        assert!(run_tau_sweep(&cfg, &spec).is_err());
        assert!(run_roundtrip(&RoundtripConfig::new(1, 0, Mode::Vanilla), &spec).is_err());
    }
}
