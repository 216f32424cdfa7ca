//! Training objective: l2 on the root confidence map, smooth-l1 on the
//! displacement fields, weighted and summed over all supervised stages.
//!
//! Both terms are means over supervised elements, so `beta` does not depend
//! on map resolution.

use serde::{Deserialize, Serialize};

use crate::encoder::{ConfidenceMap, DisplacementMapStack};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Supervise displacements only where the target is defined.
    #[default]
    Masked,
    /// Supervise every cell, pulling undefined cells toward zero.
    Unmasked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub smooth_l1_delta: f64,
    pub mask_mode: MaskMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.01,
            smooth_l1_delta: 1.0,
            mask_mode: MaskMode::Masked,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.smooth_l1_delta > 0.0) {
            return Err(Error::InvalidArgument("beta and smooth_l1_delta must be positive".into()));
        }
        Ok(())
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn l2_conf_loss(pred: &ConfidenceMap, target: &ConfidenceMap) -> Result<(f64, Vec<f64>)> {
    if (pred.height, pred.width) != (target.height, target.width) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.height, pred.width, target.height, target.width
        )));
    }
    let n = pred.values.len().max(1) as f64;
    let mut value = 0.0;
    let grad = pred
        .values
        .iter()
        .zip(&target.values)
        .map(|(p, t)| {
            let r = p - t;
            value += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((value / n, grad))
}

/// Huber-style smooth l1 of one residual and its derivative.
#[inline]
pub fn smooth_l1(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() < delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (r.abs() - 0.5 * delta, r.signum())
    }
}

/// Mean smooth-l1 over supervised components; the gradient is zero on every
/// component outside the mask. An empty mask yields zero loss.
pub fn smooth_l1_disp_loss(pred: &DisplacementMapStack, target: &DisplacementMapStack, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if (pred.height, pred.width, pred.k, pred.dim) != (target.height, target.width, target.k, target.dim) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{}x{}x{} vs target {}x{}x{}x{}",
            pred.height,
            pred.width,
            pred.k,
            pred.dim.len(),
            target.height,
            target.width,
            target.k,
            target.dim.len()
        )));
    }
    let d = pred.dim.len();
    let mut grad = vec![0.0; pred.values.len()];
    let mut value = 0.0;
    let mut count = 0usize;
    for (entry, &support) in target.support.iter().enumerate() {
        if cfg.mask_mode == MaskMode::Masked && support == 0 {
            continue;
        }
        let span = entry * d..(entry + 1) * d;
        for ((g, &p), &t) in grad[span.clone()]
            .iter_mut()
            .zip(&pred.values[span.clone()])
            .zip(&target.values[span])
        {
            let (l, dl) = smooth_l1(p - t, cfg.smooth_l1_delta);
            value += l;
            *g = dl;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, grad));
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((value / n, grad))
}

/// Gradients of the total loss with respect to one stage's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGrad {
    pub conf: Vec<f64>,
    pub disp: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub conf: f64,
    pub disp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub stages: Vec<StageLoss>,
    pub grads: Vec<StageGrad>,
}

/// Sum over stages of `l2 + beta * smooth_l1`, every stage against the same
/// targets.
pub fn total_loss(
    stage_preds: &[(ConfidenceMap, DisplacementMapStack)],
    target: (&ConfidenceMap, &DisplacementMapStack),
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    if stage_preds.is_empty() {
        return Err(Error::InvalidArgument("at least one stage is required".into()));
    }
    let mut out = TotalLoss {
        value: 0.0,
        stages: Vec::with_capacity(stage_preds.len()),
        grads: Vec::with_capacity(stage_preds.len()),
    };
    for (conf, disp) in stage_preds {
        let (lc, gc) = l2_conf_loss(conf, target.0)?;
        let (ld, mut gd) = smooth_l1_disp_loss(disp, target.1, cfg)?;
        gd.iter_mut().for_each(|g| *g *= cfg.beta);
        out.value += lc + cfg.beta * ld;
        out.stages.push(StageLoss { conf: lc, disp: ld });
        out.grads.push(StageGrad { conf: gc, disp: gd });
    }
    Ok(out)
}

/// Worst component-wise disagreement between an analytic gradient and
/// central finite differences of `value_at`.
///
/// Only the listed indices are probed. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`, the floor keeping exact zeros from
/// dividing by zero.
pub fn grad_check(
    mut value_at: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    floor: f64,
) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    if x.len() != analytic.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = GradCheck::default();
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = value_at(&probe);
        probe[i] = orig - step;
        let down = value_at(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst.checked += 1;
        if rel > worst.max_rel_error {
            worst.max_rel_error = rel;
            worst.worst_index = Some(i);
            worst.analytic = a;
            worst.numeric = numeric;
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Mode;
    use crate::skeleton::Dim;
    use approx::assert_abs_diff_eq;

    fn cmap(values: Vec<f64>, h: usize, w: usize) -> ConfidenceMap {
        ConfidenceMap {
            height: h,
            width: w,
            values,
        }
    }

    fn stack(values: Vec<f64>, support: Vec<u32>) -> DisplacementMapStack {
        let k = support.len();
        let mut s = DisplacementMapStack::dense(1, 1, Dim::Two, k, Mode::Vanilla, values).unwrap();
        s.support = support;
        s
    }

    #[test]
    fn l2_examples() {
        let t = cmap(vec![0.1, 0.5, 0.9, 0.0], 2, 2);
        let (v, g) = l2_conf_loss(&t, &t).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&g| g == 0.0));

        let (v, g) = l2_conf_loss(&cmap(vec![0.5], 1, 1), &cmap(vec![0.0], 1, 1)).unwrap();
        assert_eq!(v, 0.25);
        assert_eq!(g, vec![1.0]);

        let p = cmap(vec![0.3, 0.2, 0.4, 0.1], 2, 2);
        let p2 = cmap(p.values.iter().zip(&t.values).map(|(p, t)| t + 2.0 * (p - t)).collect(), 2, 2);
        let (a, _) = l2_conf_loss(&p, &t).unwrap();
        let (b, _) = l2_conf_loss(&p2, &t).unwrap();
        assert_abs_diff_eq!(b, 4.0 * a, epsilon = 1e-15);

        assert!(l2_conf_loss(&cmap(vec![0.0; 2], 1, 2), &cmap(vec![0.0; 2], 2, 1)).is_err());
    }

    #[test]
    fn smooth_l1_examples() {
        let cfg = LossConfig::default();
        let t = stack(vec![0.0, 0.0], vec![1]);
        let (v, _) = smooth_l1_disp_loss(&stack(vec![0.5, 0.5], vec![1]), &t, &cfg).unwrap();
        assert_eq!(v, 0.125);
        let (v, g) = smooth_l1_disp_loss(&stack(vec![2.0, -2.0], vec![1]), &t, &cfg).unwrap();
        assert_eq!(v, 1.5);
        assert_eq!(g, vec![0.5, -0.5]);
        let (v, g) = smooth_l1_disp_loss(&t, &t, &cfg).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn masked_components_have_zero_gradient() {
        let cfg = LossConfig::default();
        let target = stack(vec![0.0, 0.0, 0.0, 0.0], vec![1, 0]);
        let pred = stack(vec![0.2, 0.4, 3.0, -3.0], vec![1, 1]);
        let (v, g) = smooth_l1_disp_loss(&pred, &target, &cfg).unwrap();
        assert_abs_diff_eq!(v, (0.02 + 0.08) / 2.0, epsilon = 1e-15);
        assert_eq!(&g[2..], &[0.0, 0.0]);

        let unmasked = LossConfig {
            mask_mode: MaskMode::Unmasked,
            ..cfg
        };
        let (_, g) = smooth_l1_disp_loss(&pred, &target, &unmasked).unwrap();
        assert_eq!(&g[2..], &[0.25, -0.25]);

        let none = stack(vec![0.0; 4], vec![0, 0]);
        assert_eq!(smooth_l1_disp_loss(&pred, &none, &cfg).unwrap().0, 0.0);
    }

    #[test]
    fn kink_is_continuous() {
        for delta in [0.5, 1.0, 2.0] {
            for sign in [-1.0, 1.0] {
                let r = sign * delta;
                let (lin, gl) = smooth_l1(r, delta);
                let inside = r - sign * 1e-12;
                let (quad, gq) = smooth_l1(inside, delta);
                assert_abs_diff_eq!(lin, quad, epsilon = 1e-9);
                assert_eq!(gl, sign);
                assert_abs_diff_eq!(gq, sign, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn total_examples() {
        let cfg = LossConfig::default();
        // l2 = 1 (residual 1 everywhere), smooth-l1 = 100 (residual 100.5)
        let tc = cmap(vec![0.0], 1, 1);
        let pc = cmap(vec![1.0], 1, 1);
        let td = stack(vec![0.0, 0.0], vec![1]);
        let pd = stack(vec![100.5, -100.5], vec![1]);
        let one = total_loss(&[(pc.clone(), pd.clone())], (&tc, &td), &cfg).unwrap();
        assert_eq!(one.stages[0], StageLoss { conf: 1.0, disp: 100.0 });
        assert_abs_diff_eq!(one.value, 2.0, epsilon = 1e-12);

        let three = total_loss(&vec![(pc.clone(), pd.clone()); 3], (&tc, &td), &cfg).unwrap();
        assert_abs_diff_eq!(three.value, 3.0 * one.value, epsilon = 1e-12);

        let perfect = total_loss(&[(tc.clone(), td.clone()), (tc.clone(), td.clone())], (&tc, &td), &cfg).unwrap();
        assert_eq!(perfect.value, 0.0);

        assert!(total_loss(&[], (&tc, &td), &cfg).is_err());
    }

    #[test]
    fn total_is_linear_in_beta() {
        let tc = cmap(vec![0.2, 0.1], 1, 2);
        let pc = cmap(vec![0.4, 0.0], 1, 2);
        let td = DisplacementMapStack::dense(1, 2, Dim::Two, 1, Mode::Vanilla, vec![0.0; 4]).unwrap();
        let pd = DisplacementMapStack::dense(1, 2, Dim::Two, 1, Mode::Vanilla, vec![0.3, 1.7, -0.2, 0.0]).unwrap();
        let at = |beta: f64| {
            let cfg = LossConfig {
                beta,
                ..LossConfig::default()
            };
            total_loss(&[(pc.clone(), pd.clone())], (&tc, &td), &cfg).unwrap().value
        };
        let (a, b, c) = (at(0.01), at(0.02), at(0.03));
        assert_abs_diff_eq!(b - a, c - b, epsilon = 1e-15);
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        assert!(grad_check(|_| 0.0, &[0.0], &[0.0], &[0], 0.0, 1e-8).is_err());
    }
}
