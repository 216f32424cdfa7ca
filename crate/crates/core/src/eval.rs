//! Multi-person pose metrics.
//!
//! The protocol is fully specified here rather than borrowed from a benchmark
//! toolkit: persons are matched greedily in descending score order, each
//! joint's AP uses all-points interpolation, and every distance threshold is
//! inclusive. It is not meant to reproduce official MPII numbers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoder::DecodedPose;
use crate::error::{Error, Result};
use crate::repr::{centroid_root, Coord, Pose};
use crate::skeleton::{Dim, SkeletonSpec};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_PCK3D_RADIUS: f64 = 150.0;
/// Root distance beyond which a 3D prediction cannot claim a ground truth.
pub const ROOT_GATE_MM: f64 = 500.0;
/// Head size is this fraction of the head-top to upper-neck segment.
pub const HEAD_SEGMENT_FACTOR: f64 = 0.6;

fn planar_dist(a: &Coord, b: &Coord) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn dist3(a: &Coord, b: &Coord) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// True iff the planar distance is at most `alpha * head_size`.
pub fn pckh_correct(pred: &Coord, gt: &Coord, head_size: f64, alpha: f64) -> Result<bool> {
    if !(head_size > 0.0) {
        return Err(Error::InvalidArgument(format!("head size must be positive, got {head_size}")));
    }
    Ok(planar_dist(pred, gt) <= alpha * head_size)
}

/// Head-segment based reference length when the skeleton has `head_top` and
/// `upper_neck`, otherwise the pose's recorded reference length.
pub fn head_size(gt: &Pose, spec: &SkeletonSpec) -> Result<f64> {
    if let (Some(top), Some(neck)) = (spec.joint_index("head_top"), spec.joint_index("upper_neck")) {
        let (a, b) = (&gt.joints[top], &gt.joints[neck]);
        if !(a.visible && b.visible) {
            return Err(Error::InvalidData(
                "head_top and upper_neck must be visible to size the head".into(),
            ));
        }
        let size = HEAD_SEGMENT_FACTOR * planar_dist(&a.pos, &b.pos);
        if !(size > 0.0) {
            return Err(Error::InvalidData("head segment has zero length".into()));
        }
        return Ok(size);
    }
    match gt.ref_length {
        Some(r) if r > 0.0 => Ok(r),
        _ => Err(Error::InvalidData(format!(
            "skeleton `{}` has no head segment and the pose records no reference length",
            spec.name
        ))),
    }
}

/// Fraction of the ground truth's visible joints that `pred` hits.
pub fn correct_fraction(pred: &Pose, gt: &Pose, head_size: f64, alpha: f64) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        if !g.visible {
            continue;
        }
        total += 1;
        if p.visible && pckh_correct(&p.pos, &g.pos, head_size, alpha)? {
            hit += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// `scores[p][g]` = correct fraction of prediction `p` against ground truth `g`.
pub fn score_matrix(preds: &[DecodedPose], gts: &[Pose], head_sizes: &[f64], alpha: f64) -> Result<Vec<Vec<f64>>> {
    if head_sizes.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} head sizes for {} ground-truth persons",
            head_sizes.len(),
            gts.len()
        )));
    }
    preds
        .iter()
        .map(|p| {
            gts.iter()
                .zip(head_sizes)
                .map(|(g, &h)| {
                    if p.pose.k() != g.k() {
                        return Err(Error::DimensionMismatch(format!(
                            "prediction has {} joints, ground truth {}",
                            p.pose.k(),
                            g.k()
                        )));
                    }
                    correct_fraction(&p.pose, g, h, alpha)
                })
                .collect()
        })
        .collect()
}

/// Prediction indices by descending score; equal scores keep input order.
fn by_score(preds: &[DecodedPose]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy one-to-one matching. Each prediction, highest score first, takes
/// the free ground truth it hits best (lowest index on ties); a prediction
/// with no correct joint stays unmatched. Pairs are `(pred, gt)` in
/// assignment order.
pub fn match_persons(preds: &[DecodedPose], gts: &[Pose], head_sizes: &[f64], alpha: f64) -> Result<Vec<(usize, usize)>> {
    let scores = score_matrix(preds, gts, head_sizes, alpha)?;
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::new();
    for p in by_score(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, &s) in scores[p].iter().enumerate() {
            if !taken[g] && s > 0.0 && best.is_none_or(|(_, b)| s > b) {
                best = Some((g, s));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out.push((p, g));
        }
    }
    Ok(out)
}

/// Sum of correct fractions over matched pairs.
pub fn matching_value(scores: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(p, g)| scores[p][g]).sum()
}

/// Exhaustive search over all injective partial assignments; returns the
/// pairs maximising `matching_value` and that value. Exponential, for tests.
pub fn optimal_matching(scores: &[Vec<f64>], n_gt: usize) -> (Vec<(usize, usize)>, f64) {
    fn go(
        p: usize,
        scores: &[Vec<f64>],
        taken: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (Vec<(usize, usize)>, f64),
    ) {
        if p == scores.len() {
            if acc > best.1 {
                *best = (cur.clone(), acc);
            }
            return;
        }
        go(p + 1, scores, taken, cur, acc, best);
        for g in 0..taken.len() {
            if !taken[g] && scores[p][g] > 0.0 {
                taken[g] = true;
                cur.push((p, g));
                go(p + 1, scores, taken, cur, acc + scores[p][g], best);
                cur.pop();
                taken[g] = false;
            }
        }
    }
    let mut best = (Vec::new(), 0.0);
    go(0, scores, &mut vec![false; n_gt], &mut Vec::new(), 0.0, &mut best);
    best
}

/// All-points interpolated average precision of detections given as
/// `(score, is_true_positive)` against `n_positive` ground-truth instances.
/// `None` when there is nothing to recall.
pub fn average_precision(detections: &[(f64, bool)], n_positive: usize) -> Option<f64> {
    if n_positive == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0));
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if detections[i].1 {
            tp += 1;
        }
        recall.push(tp as f64 / n_positive as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` where no ground truth annotates the joint.
    pub per_joint_ap: Vec<Option<f64>>,
    /// Mean of the defined per-joint APs.
    pub total_map: Option<f64>,
    pub per_joint_pck: Vec<Option<f64>>,
    /// `(pred, gt)` pairs per image.
    pub matching: Vec<Vec<(usize, usize)>>,
}

fn mean_defined(xs: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn check_aligned<A, B>(preds: &[A], gts: &[B]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prediction images but {} ground-truth images",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Dataset-level PCKh-based mean AP.
///
/// A prediction's joint is a true positive when its person is matched and
/// the joint is PCKh-correct against the matched ground truth. Joints the
/// matched ground truth does not annotate are ignored; joints of unmatched
/// predictions are false positives.
pub fn mean_ap(preds: &[Vec<DecodedPose>], gts: &[Vec<Pose>], spec: &SkeletonSpec, alpha: f64) -> Result<MetricReport> {
    check_aligned(preds, gts)?;
    let k = spec.k();
    let mut detections: Vec<Vec<(f64, bool)>> = vec![Vec::new(); k];
    let mut positives = vec![0usize; k];
    let mut hits = vec![0usize; k];
    let mut matching = Vec::with_capacity(gts.len());
    for (img_preds, img_gts) in preds.iter().zip(gts) {
        for g in img_gts {
            if g.k() != k {
                return Err(Error::DimensionMismatch(format!("ground truth has {} joints, skeleton {k}", g.k())));
            }
        }
        let sizes = img_gts.iter().map(|g| head_size(g, spec)).collect::<Result<Vec<_>>>()?;
        let pairs = match_persons(img_preds, img_gts, &sizes, alpha)?;
        let mut gt_of = vec![None; img_preds.len()];
        for &(p, g) in &pairs {
            gt_of[p] = Some(g);
        }
        for g in img_gts {
            for (j, joint) in g.joints.iter().enumerate() {
                positives[j] += joint.visible as usize;
            }
        }
        for (p, pred) in img_preds.iter().enumerate() {
            for (j, pj) in pred.pose.joints.iter().enumerate() {
                if !pj.visible {
                    continue;
                }
                let tp = match gt_of[p] {
                    Some(g) => {
                        let gj = &img_gts[g].joints[j];
                        if !gj.visible {
                            continue;
                        }
                        pckh_correct(&pj.pos, &gj.pos, sizes[g], alpha)?
                    }
                    None => false,
                };
                hits[j] += tp as usize;
                detections[j].push((pred.score, tp));
            }
        }
        matching.push(pairs);
    }
    let per_joint_ap: Vec<Option<f64>> = (0..k).map(|j| average_precision(&detections[j], positives[j])).collect();
    let per_joint_pck = (0..k)
        .map(|j| (positives[j] > 0).then(|| hits[j] as f64 / positives[j] as f64))
        .collect();
    Ok(MetricReport {
        total_map: mean_defined(&per_joint_ap),
        per_joint_ap,
        per_joint_pck,
        matching,
    })
}

/// Fraction of visible ground-truth joints hit by the matched prediction,
/// the per-image building block of train-set PCKh.
pub fn pckh_accuracy(preds: &[Vec<DecodedPose>], gts: &[Vec<Pose>], spec: &SkeletonSpec, alpha: f64) -> Result<f64> {
    let report = mean_ap(preds, gts, spec, alpha)?;
    let total: usize = gts.iter().flatten().map(|g| g.visible_count()).sum();
    if total == 0 {
        return Err(Error::InvalidData("no annotated joints".into()));
    }
    let mut hit = 0usize;
    for ((img_preds, img_gts), pairs) in preds.iter().zip(gts).zip(&report.matching) {
        for &(p, g) in pairs {
            let size = head_size(&img_gts[g], spec)?;
            for (pj, gj) in img_preds[p].pose.joints.iter().zip(&img_gts[g].joints) {
                if gj.visible && pj.visible && pckh_correct(&pj.pos, &gj.pos, size, alpha)? {
                    hit += 1;
                }
            }
        }
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pck3dReport {
    /// Fractions in `[0, 1]`; `None` where no ground truth annotates the joint.
    pub per_joint: Vec<Option<f64>>,
    pub total: f64,
    pub matching: Vec<Vec<(usize, usize)>>,
}

impl Pck3dReport {
    pub fn total_percent(&self) -> f64 {
        100.0 * self.total
    }
}

/// Greedy root-proximity matching for 3D: by descending score, each
/// prediction claims the nearest free ground-truth root within `gate`.
pub fn match_by_root(preds: &[DecodedPose], gts: &[Pose], gate: f64) -> Result<Vec<(usize, usize)>> {
    let roots = gts.iter().map(centroid_root).collect::<Result<Vec<_>>>()?;
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::new();
    for p in by_score(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, r) in roots.iter().enumerate() {
            let d = dist3(&preds[p].root, r);
            if !taken[g] && d <= gate && best.is_none_or(|(_, b)| d < b) {
                best = Some((g, d));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out.push((p, g));
        }
    }
    Ok(out)
}

/// 3D-PCK: a visible ground-truth joint counts when the matched prediction
/// places it within `radius` (inclusive).
pub fn pck3d(preds: &[Vec<DecodedPose>], gts: &[Vec<Pose>], radius: f64) -> Result<Pck3dReport> {
    check_aligned(preds, gts)?;
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument("radius must be non-negative".into()));
    }
    let all_3d = gts.iter().flatten().all(|g| g.dim == Dim::Three) && preds.iter().flatten().all(|p| p.pose.dim == Dim::Three);
    if !all_3d {
        return Err(Error::DimensionMismatch("pck3d needs 3D poses".into()));
    }
    let k = gts.iter().flatten().map(|g| g.k()).next().unwrap_or(0);
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    let mut matching = Vec::with_capacity(gts.len());
    for (img_preds, img_gts) in preds.iter().zip(gts) {
        let pairs = match_by_root(img_preds, img_gts, ROOT_GATE_MM)?;
        let mut pred_of = vec![None; img_gts.len()];
        for &(p, g) in &pairs {
            pred_of[g] = Some(p);
        }
        for (g, gt) in img_gts.iter().enumerate() {
            if gt.k() != k {
                return Err(Error::DimensionMismatch("ground truths disagree on joint count".into()));
            }
            for (j, gj) in gt.joints.iter().enumerate().filter(|(_, j)| j.visible) {
                counts[j] += 1;
                if let Some(p) = pred_of[g] {
                    let pj = img_preds[p].pose.joints.get(j).ok_or(Error::JointOutOfRange {
                        index: j,
                        k: img_preds[p].pose.k(),
                    })?;
                    if pj.visible && dist3(&pj.pos, &gj.pos) <= radius {
                        hits[j] += 1;
                    }
                }
            }
        }
        matching.push(pairs);
    }
    let total_count: usize = counts.iter().sum();
    Ok(Pck3dReport {
        per_joint: (0..k).map(|j| (counts[j] > 0).then(|| hits[j] as f64 / counts[j] as f64)).collect(),
        total: if total_count == 0 {
            0.0
        } else {
            hits.iter().sum::<usize>() as f64 / total_count as f64
        },
        matching,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.4}", x))
}

impl MetricReport {
    /// Aligned plain-text table, one row per joint plus the mean.
    pub fn to_table(&self, spec: &SkeletonSpec) -> String {
        let width = spec.joint_names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "joint", "AP", "PCKh");
        for (j, name) in spec.joint_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8}  {:>8}",
                name,
                fmt_opt(self.per_joint_ap[j]),
                fmt_opt(self.per_joint_pck[j])
            );
        }
        let _ = writeln!(s, "{:<width$}  {:>8}", "mean", fmt_opt(self.total_map));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::Joint;
    use crate::skeleton::{default_mpii16, toy6};

    fn pose2(points: &[(f64, f64)], ref_length: f64) -> Pose {
        let mut p = Pose::new(Dim::Two, points.iter().map(|&(x, y)| Joint::visible([x, y, 0.0])).collect());
        p.ref_length = Some(ref_length);
        p
    }

    fn as_pred(p: &Pose, score: f64) -> DecodedPose {
        DecodedPose {
            root: centroid_root(p).unwrap(),
            pose: p.clone(),
            score,
            per_joint_scores: vec![score; p.k()],
        }
    }

    fn toy_person(x: f64, y: f64) -> Pose {
        pose2(
            &[
                (x, y - 5.0),
                (x, y + 5.0),
                (x - 6.0, y - 5.0),
                (x + 6.0, y - 5.0),
                (x - 3.0, y + 12.0),
                (x + 3.0, y + 12.0),
            ],
            6.0,
        )
    }

    #[test]
    fn pckh_boundary() {
        let o = [0.0; 3];
        assert!(pckh_correct(&o, &o, 10.0, 0.5).unwrap());
        assert!(pckh_correct(&[5.0, 0.0, 0.0], &o, 10.0, 0.5).unwrap());
        assert!(!pckh_correct(&[5.0001, 0.0, 0.0], &o, 10.0, 0.5).unwrap());
        assert!(pckh_correct(&o, &o, 0.0, 0.5).is_err());
        // depth is ignored
        assert!(pckh_correct(&[0.0, 0.0, 99.0], &o, 1.0, 0.5).unwrap());
    }

    #[test]
    fn head_size_conventions() {
        let spec = default_mpii16();
        let mut p = Pose::new(Dim::Two, vec![Joint::visible([0.0; 3]); 16]);
        let top = spec.joint_index("head_top").unwrap();
        let neck = spec.joint_index("upper_neck").unwrap();
        p.joints[top].pos = [3.0, 0.0, 0.0];
        p.joints[neck].pos = [3.0, 10.0, 0.0];
        assert!((head_size(&p, &spec).unwrap() - 6.0).abs() < 1e-12);
        let doubled = Pose::new(
            Dim::Two,
            p.joints
                .iter()
                .map(|j| Joint::visible([2.0 * j.pos[0], 2.0 * j.pos[1], 0.0]))
                .collect(),
        );
        assert!((head_size(&doubled, &spec).unwrap() - 12.0).abs() < 1e-12);
        p.joints[top].visible = false;
        assert!(head_size(&p, &spec).is_err());

        let toy = toy6();
        assert_eq!(head_size(&toy_person(10.0, 10.0), &toy).unwrap(), 6.0);
        let mut bare = toy_person(10.0, 10.0);
        bare.ref_length = None;
        assert!(head_size(&bare, &toy).is_err());
    }

    #[test]
    fn identity_and_swapped_matching() {
        let gts = vec![toy_person(20.0, 20.0), toy_person(60.0, 20.0)];
        let sizes = vec![6.0, 6.0];
        let preds: Vec<_> = gts.iter().map(|g| as_pred(g, 1.0)).collect();
        assert_eq!(match_persons(&preds, &gts, &sizes, 0.5).unwrap(), vec![(0, 0), (1, 1)]);
        let swapped = vec![preds[1].clone(), preds[0].clone()];
        let mut m = match_persons(&swapped, &gts, &sizes, 0.5).unwrap();
        m.sort();
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn three_preds_two_gts_matches_optimum() {
        let gts = vec![toy_person(20.0, 20.0), toy_person(32.0, 20.0)];
        let sizes = vec![6.0, 6.0];
        let near0 = gts[0].translated([1.0, 0.0, 0.0]);
        let between = gts[0].translated([6.0, 0.0, 0.0]);
        let near1 = gts[1].translated([0.0, -2.5, 0.0]);
        let preds = vec![as_pred(&near0, 0.9), as_pred(&between, 0.8), as_pred(&near1, 0.7)];
        let scores = score_matrix(&preds, &gts, &sizes, 0.5).unwrap();
        let greedy = match_persons(&preds, &gts, &sizes, 0.5).unwrap();
        let (_, best) = optimal_matching(&scores, gts.len());
        assert_eq!(greedy, vec![(0, 0), (2, 1)]);
        assert!((matching_value(&scores, &greedy) - best).abs() < 1e-12);
    }

    #[test]
    fn zero_overlap_prediction_is_unmatched() {
        let gts = vec![toy_person(20.0, 20.0)];
        let preds = vec![as_pred(&toy_person(80.0, 80.0), 1.0)];
        assert!(match_persons(&preds, &gts, &[6.0], 0.5).unwrap().is_empty());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[(0.9, true)], 2), Some(0.5));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[(0.5, true)], 0), None);
        // TP, FP, TP over 2 positives: 0.5*1 + 0.5*(2/3)
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn map_identity_half_and_empty() {
        let spec = toy6();
        let gts = vec![
            vec![toy_person(20.0, 20.0), toy_person(60.0, 20.0)],
            vec![toy_person(30.0, 40.0), toy_person(70.0, 50.0)],
        ];
        let preds: Vec<Vec<_>> = gts.iter().map(|img| img.iter().map(|g| as_pred(g, 0.3)).collect()).collect();
        let r = mean_ap(&preds, &gts, &spec, 0.5).unwrap();
        assert_eq!(r.total_map, Some(1.0));
        assert_eq!(pckh_accuracy(&preds, &gts, &spec, 0.5).unwrap(), 1.0);

        let half: Vec<Vec<_>> = preds.iter().map(|img| vec![img[0].clone()]).collect();
        let r = mean_ap(&half, &gts, &spec, 0.5).unwrap();
        assert!(r.per_joint_ap.iter().all(|&ap| ap == Some(0.5)));

        let empty = vec![Vec::new(), Vec::new()];
        assert_eq!(mean_ap(&empty, &gts, &spec, 0.5).unwrap().total_map, Some(0.0));
        assert_eq!(mean_ap(&empty, &[Vec::new(), Vec::new()], &spec, 0.5).unwrap().total_map, None);
        assert!(mean_ap(&empty, &gts[..1], &spec, 0.5).is_err());
        assert!(r.to_table(&spec).contains("l_hand"));
    }

    fn pose3(k: usize, offset: f64) -> Pose {
        Pose::new(
            Dim::Three,
            (0..k).map(|j| Joint::visible([j as f64 * 100.0 + offset, 50.0, 3000.0])).collect(),
        )
    }

    #[test]
    fn pck3d_examples() {
        let gt = pose3(14, 0.0);
        let exact = as_pred(&gt, 1.0);
        assert_eq!(pck3d(&[vec![exact.clone()]], &[vec![gt.clone()]], 150.0).unwrap().total, 1.0);

        let mut one_off = gt.clone();
        one_off.joints[3].pos[2] += 200.0;
        let r = pck3d(&[vec![as_pred(&one_off, 1.0)]], &[vec![gt.clone()]], 150.0).unwrap();
        assert!((r.total_percent() - 1300.0 / 14.0).abs() < 1e-9);
        assert!((r.total_percent() - 92.857).abs() < 1e-3);

        let mut shifted = gt.clone();
        shifted.joints.iter_mut().for_each(|j| j.pos[2] += 150.0);
        assert_eq!(
            pck3d(&[vec![as_pred(&shifted, 1.0)]], &[vec![gt.clone()]], 150.0).unwrap().total,
            1.0
        );
        shifted.joints.iter_mut().for_each(|j| j.pos[2] += 1e-9);
        assert_eq!(
            pck3d(&[vec![as_pred(&shifted, 1.0)]], &[vec![gt.clone()]], 150.0).unwrap().total,
            0.0
        );

        let flat = toy_person(1.0, 1.0);
        assert!(matches!(
            pck3d(&[vec![as_pred(&flat, 1.0)]], &[vec![flat.clone()]], 150.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pck3d_root_gate() {
        let gt = pose3(4, 0.0);
        let far = pose3(4, 600.0);
        let r = pck3d(&[vec![as_pred(&far, 1.0)]], &[vec![gt]], 150.0).unwrap();
        assert!(r.matching[0].is_empty());
        assert_eq!(r.total, 0.0);
    }
}
