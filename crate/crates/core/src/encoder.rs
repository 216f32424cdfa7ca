//! Regression targets: the root confidence map and dense displacement maps.
//!
//! Map cell `(col, row)` stands for the input-image point
//! `(col * stride, row * stride)`. Gaussian spread and neighbourhood size are
//! measured in map cells; displacement vectors are measured in input pixels
//! and divided by the image diagonal `Z = sqrt(H^2 + W^2)`.
//!
//! For 3D scenes the third component of every displacement is a depth
//! difference divided by `depth_norm`, and an extra single-channel map holds
//! `z_root / depth_norm` inside each root neighbourhood.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{self, centroid_root, Coord, HierStructuredPose, Scene, StructuredPose};
use crate::skeleton::{Dim, SkeletonSpec};

pub const DEFAULT_SIGMA: f64 = 7.0;
pub const DEFAULT_TAU: f64 = 7.0;
pub const DEFAULT_DEPTH_NORM: f64 = 10_000.0;

/// How `tau` bounds the displacement neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// `|cell - anchor|^2 <= tau`
    #[default]
    SquaredDistance,
    /// `|cell - anchor| <= tau`
    Radius,
}

/// Which displacement anchoring a map stack was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "hier")]
    Hierarchical,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Vanilla => "vanilla",
            Mode::Hierarchical => "hier",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "hier" | "hierarchical" => Ok(Mode::Hierarchical),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub sigma: f64,
    pub tau: f64,
    #[serde(default)]
    pub tau_mode: TauMode,
    pub stride: usize,
    pub map_height: usize,
    pub map_width: usize,
    pub depth_norm: f64,
}

impl EncoderConfig {
    /// Default parameters with map dims covering an `h x w` image.
    pub fn for_image(image_height: usize, image_width: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        EncoderConfig {
            sigma: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            tau_mode: TauMode::SquaredDistance,
            stride,
            map_height: image_height.div_ceil(stride).max(1),
            map_width: image_width.div_ceil(stride).max(1),
            depth_norm: DEFAULT_DEPTH_NORM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be non-negative");
        }
        if self.stride < 1 {
            return bad("stride must be at least 1");
        }
        if self.map_height < 1 || self.map_width < 1 {
            return bad("map dims must be at least 1");
        }
        if !(self.depth_norm > 0.0) {
            return bad("depth_norm must be positive");
        }
        Ok(())
    }

    /// Bound on the squared cell-to-anchor distance.
    pub fn neighbourhood_bound(&self) -> f64 {
        match self.tau_mode {
            TauMode::SquaredDistance => self.tau,
            TauMode::Radius => self.tau * self.tau,
        }
    }

    pub fn to_map(&self, px: f64) -> f64 {
        px / self.stride as f64
    }

    pub fn to_pixels(&self, cell: f64) -> f64 {
        cell * self.stride as f64
    }
}

/// Image diagonal used to normalise displacement vectors.
pub fn normalization_factor(image_height: usize, image_width: usize) -> Result<f64> {
    if image_height == 0 || image_width == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dims must be positive, got {image_height}x{image_width}"
        )));
    }
    let (h, w) = (image_height as f64, image_width as f64);
    Ok((h * h + w * w).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        ConfidenceMap {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Dense per-joint displacement fields.
///
/// `values` is laid out `[row][col][joint][component]` with `dim` components
/// per joint. `support` counts how many persons wrote each `(row, col, joint)`
/// entry; zero support means undefined and the stored vector is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementMapStack {
    pub height: usize,
    pub width: usize,
    pub dim: Dim,
    pub k: usize,
    pub mode: Mode,
    pub values: Vec<f64>,
    pub support: Vec<u32>,
    pub root_depth: Option<RootDepthMap>,
}

/// Averaged `z_root / depth_norm` inside root neighbourhoods (3D only).
#[derive(Debug, Clone, PartialEq)]
pub struct RootDepthMap {
    pub values: Vec<f64>,
    pub support: Vec<u32>,
}

impl DisplacementMapStack {
    /// A fully-defined stack, as produced by a regressor.
    pub fn dense(height: usize, width: usize, dim: Dim, k: usize, mode: Mode, values: Vec<f64>) -> Result<Self> {
        let expected = height * width * k * dim.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "displacement payload has {} values, expected {expected}",
                values.len()
            )));
        }
        Ok(DisplacementMapStack {
            height,
            width,
            dim,
            k,
            mode,
            values,
            support: vec![1; height * width * k],
            root_depth: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.k * self.dim.len()
    }

    #[inline]
    pub fn vector(&self, row: usize, col: usize, joint: usize) -> &[f64] {
        let d = self.dim.len();
        let start = (row * self.width + col) * self.channels() + joint * d;
        &self.values[start..start + d]
    }

    #[inline]
    pub fn support_at(&self, row: usize, col: usize, joint: usize) -> u32 {
        self.support[(row * self.width + col) * self.k + joint]
    }

    #[inline]
    pub fn is_defined(&self, row: usize, col: usize, joint: usize) -> bool {
        self.support_at(row, col, joint) > 0
    }

    /// Fraction of `(cell, joint)` entries that at least one person wrote.
    pub fn defined_fraction(&self) -> f64 {
        self.support.iter().filter(|&&s| s > 0).count() as f64 / self.support.len().max(1) as f64
    }

    /// Fraction of `(cell, joint)` entries averaged over more than one person.
    pub fn overlap_fraction(&self) -> f64 {
        self.support.iter().filter(|&&s| s > 1).count() as f64 / self.support.len().max(1) as f64
    }

    /// Drops a joint channel's support inside a disc, as if no target had
    /// been written there.
    pub fn clear_disc(&mut self, joint: usize, centre: (f64, f64), radius: f64) {
        let d = self.dim.len();
        let channels = self.channels();
        for row in 0..self.height {
            for col in 0..self.width {
                let (dx, dy) = (col as f64 - centre.0, row as f64 - centre.1);
                if dx * dx + dy * dy <= radius * radius {
                    let cell = row * self.width + col;
                    self.support[cell * self.k + joint] = 0;
                    let start = cell * channels + joint * d;
                    self.values[start..start + d].fill(0.0);
                }
            }
        }
    }
}

/// Confidence map plus displacement stack for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedScene {
    pub confidence: ConfidenceMap,
    pub displacements: DisplacementMapStack,
    pub roots: Vec<Coord>,
}

/// Per-person Gaussians around each root, combined by maximum.
pub fn encode_root_confidence(scene: &Scene, roots: &[Coord], cfg: &EncoderConfig) -> Result<ConfidenceMap> {
    cfg.validate()?;
    check_count(scene, roots.len())?;
    let mut map = ConfidenceMap::zeros(cfg.map_height, cfg.map_width);
    let inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);
    for root in roots {
        let (rx, ry) = (cfg.to_map(root[0]), cfg.to_map(root[1]));
        for row in 0..map.height {
            let dy = row as f64 - ry;
            let line = &mut map.values[row * map.width..(row + 1) * map.width];
            for (col, v) in line.iter_mut().enumerate() {
                let dx = col as f64 - rx;
                let g = (-(dx * dx + dy * dy) * inv_s2).exp();
                if g > *v {
                    *v = g;
                }
            }
        }
    }
    Ok(map)
}

fn check_count(scene: &Scene, n: usize) -> Result<()> {
    if scene.persons.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "scene has {} persons but {n} representations were given",
            scene.persons.len()
        )));
    }
    Ok(())
}

/// Running sums and contributor counts, averaged on `finish`.
struct FieldAccumulator<'a> {
    cfg: &'a EncoderConfig,
    z: f64,
    dim: usize,
    k: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl<'a> FieldAccumulator<'a> {
    fn new(cfg: &'a EncoderConfig, z: f64, dim: usize, k: usize) -> Self {
        let cells = cfg.map_height * cfg.map_width;
        FieldAccumulator {
            cfg,
            z,
            dim,
            k,
            sums: vec![0.0; cells * k * dim],
            counts: vec![0; cells * k],
        }
    }

    /// Writes `(target - cell) / Z` for every cell near `anchor`; the depth
    /// component, if any, is the constant `dz`.
    fn splat(&mut self, joint: usize, anchor: Coord, target: Coord, dz: f64) {
        let cfg = self.cfg;
        let bound = cfg.neighbourhood_bound();
        let (ax, ay) = (cfg.to_map(anchor[0]), cfg.to_map(anchor[1]));
        let reach = bound.sqrt() + 1.0;
        let Some((c0, c1)) = span(ax, reach, cfg.map_width) else { return };
        let Some((r0, r1)) = span(ay, reach, cfg.map_height) else { return };
        for row in r0..=r1 {
            let dy = row as f64 - ay;
            for col in c0..=c1 {
                let dx = col as f64 - ax;
                if dx * dx + dy * dy > bound {
                    continue;
                }
                let cell = row * cfg.map_width + col;
                let base = (cell * self.k + joint) * self.dim;
                self.sums[base] += (target[0] - cfg.to_pixels(col as f64)) / self.z;
                self.sums[base + 1] += (target[1] - cfg.to_pixels(row as f64)) / self.z;
                if self.dim == 3 {
                    self.sums[base + 2] += dz;
                }
                self.counts[cell * self.k + joint] += 1;
            }
        }
    }

    fn finish(mut self) -> (Vec<f64>, Vec<u32>) {
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 1 {
                let inv = 1.0 / c as f64;
                for v in &mut self.sums[i * self.dim..(i + 1) * self.dim] {
                    *v *= inv;
                }
            }
        }
        (self.sums, self.counts)
    }
}

/// Inclusive cell range within `reach` of `centre`, clipped to `[0, len)`.
fn span(centre: f64, reach: f64, len: usize) -> Option<(usize, usize)> {
    let lo = (centre - reach).floor().max(0.0);
    let hi = (centre + reach).ceil().min(len as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn person_k(scene: &Scene) -> usize {
    scene.persons.first().map_or(0, |p| p.k())
}

/// Root-anchored displacement fields averaged over contributing persons.
pub fn encode_displacements(scene: &Scene, structured: &[StructuredPose], k: usize, cfg: &EncoderConfig) -> Result<DisplacementMapStack> {
    cfg.validate()?;
    check_count(scene, structured.len())?;
    let z = normalization_factor(scene.image_height, scene.image_width)?;
    let d = scene.dim.len();
    let mut acc = FieldAccumulator::new(cfg, z, d, k);
    for sp in structured {
        check_k(sp.displacements.len(), k)?;
        for (j, disp) in sp.displacements.iter().enumerate() {
            if let Some(disp) = disp {
                let target = repr::add(sp.root, *disp);
                acc.splat(j, sp.root, target, disp[2] / cfg.depth_norm);
            }
        }
    }
    let (values, support) = acc.finish();
    Ok(DisplacementMapStack {
        height: cfg.map_height,
        width: cfg.map_width,
        dim: scene.dim,
        k,
        mode: Mode::Vanilla,
        values,
        support,
        root_depth: None,
    })
}

/// Same construction as [`encode_displacements`] but every joint channel is
/// anchored at that joint's parent instead of the root.
pub fn encode_hier_displacements(
    scene: &Scene,
    hier: &[HierStructuredPose],
    k: usize,
    cfg: &EncoderConfig,
) -> Result<DisplacementMapStack> {
    cfg.validate()?;
    check_count(scene, hier.len())?;
    let z = normalization_factor(scene.image_height, scene.image_width)?;
    let d = scene.dim.len();
    let mut acc = FieldAccumulator::new(cfg, z, d, k);
    for hp in hier {
        check_k(hp.hier_displacements.len(), k)?;
        let absolute = repr::decode_hier(hp)?;
        for (j, disp) in hp.hier_displacements.iter().enumerate() {
            let Some(disp) = disp else { continue };
            let anchor = match hp.skeleton.parent[j] {
                None => hp.root,
                Some(p) => absolute.joints[p].pos,
            };
            acc.splat(j, anchor, absolute.joints[j].pos, disp[2] / cfg.depth_norm);
        }
    }
    let (values, support) = acc.finish();
    Ok(DisplacementMapStack {
        height: cfg.map_height,
        width: cfg.map_width,
        dim: scene.dim,
        k,
        mode: Mode::Hierarchical,
        values,
        support,
        root_depth: None,
    })
}

fn check_k(found: usize, k: usize) -> Result<()> {
    if found != k {
        return Err(Error::DimensionMismatch(format!("representation has K = {found}, expected {k}")));
    }
    Ok(())
}

fn encode_root_depth(roots: &[Coord], cfg: &EncoderConfig) -> RootDepthMap {
    // One pseudo-joint whose "displacement" is the normalised root depth.
    let mut acc = FieldAccumulator::new(cfg, 1.0, 3, 1);
    for root in roots {
        acc.splat(0, *root, *root, root[2] / cfg.depth_norm);
    }
    let (sums, support) = acc.finish();
    RootDepthMap {
        values: sums.chunks(3).map(|c| c[2]).collect(),
        support,
    }
}

/// Centroid of each person's visible joints.
pub fn scene_roots(scene: &Scene) -> Result<Vec<Coord>> {
    scene.persons.iter().map(centroid_root).collect()
}

/// Builds both targets for a scene, using visible-joint centroids as roots.
pub fn encode_scene(scene: &Scene, spec: &Arc<SkeletonSpec>, mode: Mode, cfg: &EncoderConfig) -> Result<EncodedScene> {
    let roots = scene_roots(scene)?;
    encode_scene_with_roots(scene, &roots, spec, mode, cfg)
}

pub fn encode_scene_with_roots(
    scene: &Scene,
    roots: &[Coord],
    spec: &Arc<SkeletonSpec>,
    mode: Mode,
    cfg: &EncoderConfig,
) -> Result<EncodedScene> {
    scene.check_consistent()?;
    check_count(scene, roots.len())?;
    if spec.dim != scene.dim {
        return Err(Error::DimensionMismatch(format!(
            "skeleton {} is {}, scene is {}",
            spec.name, spec.dim, scene.dim
        )));
    }
    if let Some(p) = scene.persons.first() {
        check_k(p.k(), spec.k())?;
    }
    let k = spec.k().max(person_k(scene));
    let confidence = encode_root_confidence(scene, roots, cfg)?;
    let mut displacements = match mode {
        Mode::Vanilla => {
            let sps: Vec<StructuredPose> = scene.persons.iter().zip(roots).map(|(p, r)| repr::encode_spr(p, *r)).collect();
            encode_displacements(scene, &sps, k, cfg)?
        }
        Mode::Hierarchical => {
            let hps = scene
                .persons
                .iter()
                .zip(roots)
                .map(|(p, r)| repr::encode_hier(p, *r, spec.clone()))
                .collect::<Result<Vec<_>>>()?;
            encode_hier_displacements(scene, &hps, k, cfg)?
        }
    };
    if scene.dim == Dim::Three {
        displacements.root_depth = Some(encode_root_depth(roots, cfg));
    }
    Ok(EncodedScene {
        confidence,
        displacements,
        roots: roots.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{encode_spr, Joint, Pose};
    use crate::skeleton::toy6;
    use approx::assert_abs_diff_eq;

    fn scene(h: usize, w: usize, persons: Vec<Pose>) -> Scene {
        Scene {
            image_height: h,
            image_width: w,
            dim: Dim::Two,
            persons,
        }
    }

    fn cfg(h: usize, w: usize) -> EncoderConfig {
        EncoderConfig::for_image(h, w, 1)
    }

    #[test]
    fn normalization_examples() {
        // sqrt(2) * 384
        assert_abs_diff_eq!(normalization_factor(384, 384).unwrap(), 543.058008, epsilon = 1e-6);
        assert_eq!(normalization_factor(3, 4).unwrap(), 5.0);
        assert!(normalization_factor(1, 0).is_err());
    }

    #[test]
    fn confidence_examples() {
        let s = scene(32, 32, vec![Pose::new(Dim::Two, vec![]), Pose::new(Dim::Two, vec![])]);
        let c = cfg(32, 32);
        let m = encode_root_confidence(&s, &[[10.0, 10.0, 0.0], [14.0, 10.0, 0.0]], &c).unwrap();
        assert_eq!(m.get(10, 10), 1.0);
        // midway between the two roots: max, not the average
        assert_abs_diff_eq!(m.get(10, 12), 0.921610, epsilon = 1e-6);
        assert_abs_diff_eq!(m.get(10, 12), (-4.0f64 / 49.0).exp(), epsilon = 1e-15);

        let s1 = scene(32, 32, vec![Pose::new(Dim::Two, vec![])]);
        let m = encode_root_confidence(&s1, &[[10.0, 10.0, 0.0]], &c).unwrap();
        assert_abs_diff_eq!(m.get(10, 17), 0.367879, epsilon = 1e-6);

        let empty = scene(8, 8, vec![]);
        let m = encode_root_confidence(&empty, &[], &cfg(8, 8)).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn displacement_single_person() {
        let pose = Pose::new(Dim::Two, vec![Joint::visible([8.0, 9.0, 0.0]), Joint::visible([5.0, 5.0, 0.0])]);
        let s = scene(10, 10, vec![pose.clone()]);
        let sp = encode_spr(&pose, [5.0, 5.0, 0.0]);
        let stack = encode_displacements(&s, &[sp], 2, &cfg(10, 10)).unwrap();
        let v = stack.vector(5, 5, 0);
        assert_abs_diff_eq!(v[0], 0.21213, epsilon = 1e-5);
        assert_abs_diff_eq!(v[1], 0.28284, epsilon = 1e-5);
        // joint sitting on the cell: zero vector but defined
        assert_eq!(stack.vector(5, 5, 1), [0.0, 0.0]);
        assert!(stack.is_defined(5, 5, 1));
        assert!(!stack.is_defined(0, 0, 1));
    }

    #[test]
    fn displacement_overlap_is_averaged() {
        let a = Pose::new(Dim::Two, vec![Joint::visible([2.0, 2.0, 0.0])]);
        let b = Pose::new(Dim::Two, vec![Joint::visible([20.0, 3.0, 0.0])]);
        let s = scene(16, 24, vec![a.clone(), b.clone()]);
        let (ra, rb) = ([10.0, 8.0, 0.0], [12.0, 8.0, 0.0]);
        let stack = encode_displacements(&s, &[encode_spr(&a, ra), encode_spr(&b, rb)], 1, &cfg(16, 24)).unwrap();
        let z = (16.0f64 * 16.0 + 24.0 * 24.0).sqrt();
        let (col, row) = (11.0, 8.0);
        let v1 = [(2.0 - col) / z, (2.0 - row) / z];
        let v2 = [(20.0 - col) / z, (3.0 - row) / z];
        let v = stack.vector(8, 11, 0);
        assert_abs_diff_eq!(v[0], (v1[0] + v2[0]) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], (v1[1] + v2[1]) / 2.0, epsilon = 1e-15);
        assert_eq!(stack.support_at(8, 11, 0), 2);
        assert!(stack.overlap_fraction() > 0.0);
    }

    #[test]
    fn tau_zero_only_exact_root_cell() {
        let p = Pose::new(Dim::Two, vec![Joint::visible([3.0, 3.0, 0.0])]);
        let s = scene(12, 12, vec![p.clone()]);
        let mut c = cfg(12, 12);
        c.tau = 0.0;
        let stack = encode_displacements(&s, &[encode_spr(&p, [6.0, 6.0, 0.0])], 1, &c).unwrap();
        assert_eq!(stack.support.iter().filter(|&&n| n > 0).count(), 1);
        assert!(stack.is_defined(6, 6, 0));
        let off = encode_displacements(&s, &[encode_spr(&p, [6.5, 6.0, 0.0])], 1, &c).unwrap();
        assert_eq!(off.defined_fraction(), 0.0);
    }

    #[test]
    fn radius_mode_is_wider() {
        let p = Pose::new(Dim::Two, vec![Joint::visible([3.0, 3.0, 0.0])]);
        let s = scene(32, 32, vec![p.clone()]);
        let mut c = cfg(32, 32);
        let sq = encode_displacements(&s, &[encode_spr(&p, [16.0, 16.0, 0.0])], 1, &c).unwrap();
        c.tau_mode = TauMode::Radius;
        let rad = encode_displacements(&s, &[encode_spr(&p, [16.0, 16.0, 0.0])], 1, &c).unwrap();
        // squared mode: cells with dx^2 + dy^2 <= 7 -> 21 cells
        assert_eq!(sq.support.iter().filter(|&&n| n > 0).count(), 21);
        assert!(rad.defined_fraction() > sq.defined_fraction());
        assert!(rad.is_defined(16, 23, 0));
        assert!(!sq.is_defined(16, 19, 0));
    }

    #[test]
    fn hier_level2_channel_matches_vanilla() {
        let spec = Arc::new(toy6());
        let pose = Pose::new(
            Dim::Two,
            vec![
                Joint::visible([16.0, 10.0, 0.0]),
                Joint::visible([16.0, 22.0, 0.0]),
                Joint::visible([10.0, 14.0, 0.0]),
                Joint::visible([22.0, 14.0, 0.0]),
                Joint::visible([12.0, 28.0, 0.0]),
                Joint::visible([20.0, 28.0, 0.0]),
            ],
        );
        let s = scene(32, 32, vec![pose]);
        let c = cfg(32, 32);
        let v = encode_scene(&s, &spec, Mode::Vanilla, &c).unwrap();
        let h = encode_scene(&s, &spec, Mode::Hierarchical, &c).unwrap();
        for row in 0..32 {
            for col in 0..32 {
                for j in [0, 1] {
                    assert_eq!(v.displacements.vector(row, col, j), h.displacements.vector(row, col, j));
                    assert_eq!(v.displacements.is_defined(row, col, j), h.displacements.is_defined(row, col, j));
                }
            }
        }
        // l_hand channel is anchored at the neck (16, 10) and points at the hand
        let z = (2.0f64 * 32.0 * 32.0).sqrt();
        let at_neck = h.displacements.vector(10, 16, 2);
        assert_abs_diff_eq!(at_neck[0], (10.0 - 16.0) / z, epsilon = 1e-15);
        assert_abs_diff_eq!(at_neck[1], (14.0 - 10.0) / z, epsilon = 1e-15);
        assert!(!h.displacements.is_defined(h.roots[0][1] as usize, 3, 2));
    }

    #[test]
    fn invisible_parent_leaves_child_channel_undefined() {
        let spec = Arc::new(toy6());
        let mut joints = vec![Joint::visible([16.0, 16.0, 0.0]); 6];
        joints[0].visible = false;
        let s = scene(32, 32, vec![Pose::new(Dim::Two, joints)]);
        let h = encode_scene(&s, &spec, Mode::Hierarchical, &cfg(32, 32)).unwrap();
        let stack = &h.displacements;
        let undefined = |j: usize| (0..32).all(|r| (0..32).all(|c| !stack.is_defined(r, c, j)));
        assert!(undefined(0));
        assert!(undefined(2));
        assert!(undefined(3));
        assert!(!undefined(4));
    }

    #[test]
    fn empty_scene_all_zero() {
        let spec = Arc::new(toy6());
        let s = scene(16, 16, vec![]);
        let e = encode_scene(&s, &spec, Mode::Vanilla, &cfg(16, 16)).unwrap();
        assert!(e.confidence.values.iter().all(|&v| v == 0.0));
        assert!(e.displacements.values.iter().all(|&v| v == 0.0));
        assert_eq!(e.displacements.k, 6);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(4, 4);
        c.sigma = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg(4, 4);
        c.tau = -1.0;
        assert!(c.validate().is_err());
        assert_eq!(EncoderConfig::for_image(10, 9, 4).map_height, 3);
    }
}
