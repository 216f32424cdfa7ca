//! Deterministic synthetic multi-person scenes.
//!
//! Every scene is a pure function of `(config, index)`. The generator is
//! SplitMix64 (64-bit state, `state += 0x9E3779B97F4A7C15` followed by the
//! standard xor-shift-multiply finaliser), seeded with
//! `seed + index * 0x9E3779B97F4A7C15` (wrapping).
//!
//! Poses are grown outward from a sampled anchor: each joint sits at its
//! parent (or the anchor, for torso joints) plus a link of sampled direction
//! and length. Lengths are drawn per hierarchy level. The person root is the
//! centroid of the resulting joints.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{centroid_root, Coord, Joint, Pose, Scene};
use crate::skeleton::{Dim, SkeletonSpec};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn scene_rng(seed: u64, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed.wrapping_add(index.wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Inclusive range.
    pub n_persons: (usize, usize),
    pub image_height: usize,
    pub image_width: usize,
    /// Link length ranges in pixels for levels 2, 3 and 4.
    pub limb_length: [(f64, f64); 3],
    /// 0 keeps roots at least `2 * sigma` map cells apart, 1 allows any overlap.
    pub overlap: f64,
    pub sigma: f64,
    pub stride: usize,
    /// Joints stay at least this many pixels inside the image border.
    pub margin: f64,
    pub render: bool,
    /// Root depth range in millimetres (3D only).
    pub depth_range: (f64, f64),
    /// Largest per-link depth change in millimetres (3D only).
    pub depth_jitter: f64,
    pub max_attempts: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, image_height: usize, image_width: usize) -> Self {
        SynthConfig {
            seed,
            n_persons: (1, 3),
            image_height,
            image_width,
            limb_length: [(5.0, 8.0), (5.0, 8.0), (4.0, 7.0)],
            overlap: 0.0,
            sigma: crate::encoder::DEFAULT_SIGMA,
            stride: 1,
            margin: 1.0,
            render: false,
            depth_range: (2000.0, 5000.0),
            depth_jitter: 150.0,
            max_attempts: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_persons.0 > self.n_persons.1 {
            return bad("n_persons range is empty");
        }
        if self.image_height == 0 || self.image_width == 0 {
            return bad("image dims must be positive");
        }
        if self.limb_length.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi)) {
            return bad("limb length ranges must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]");
        }
        if self.depth_range.0 > self.depth_range.1 {
            return bad("depth range is empty");
        }
        if self.stride == 0 || self.max_attempts == 0 {
            return bad("stride and max_attempts must be positive");
        }
        Ok(())
    }

    /// Smallest allowed distance between two roots, in pixels.
    pub fn min_root_separation(&self) -> f64 {
        2.0 * self.sigma * (1.0 - self.overlap) * self.stride as f64
    }
}

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn blend(&mut self, row: usize, col: usize, color: [f32; 3], alpha: f32) {
        let i = (row * self.width + col) * 3;
        for (v, c) in self.data[i..i + 3].iter_mut().zip(color) {
            *v = *v * (1.0 - alpha) + c * alpha;
        }
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)
    }

    pub fn read_ppm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM field `{s}`")));
        if fields[0] != "P6" || parse(&fields[3])? != 255 {
            return Err(Error::Format("only 8-bit P6 PPM is supported".into()));
        }
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let payload = bytes
            .get(pos..pos + width * height * 3)
            .ok_or_else(|| Error::Format("truncated PPM payload".into()))?;
        Ok(Image {
            height,
            width,
            data: payload.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub image: Option<Image>,
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn inside(cfg: &SynthConfig, p: &Coord) -> bool {
    let m = cfg.margin;
    p[0] >= m && p[1] >= m && p[0] <= cfg.image_width as f64 - 1.0 - m && p[1] <= cfg.image_height as f64 - 1.0 - m
}

/// Half-width of the cone a child link may point into, around its parent's
/// outward direction.
const CHILD_CONE: f64 = std::f64::consts::FRAC_PI_4;
/// Random wobble added to every link direction.
const DIRECTION_JITTER: f64 = std::f64::consts::PI / 12.0;

/// Torso links fan out evenly around the anchor from a random start angle;
/// deeper links keep pointing outward, siblings spread across the cone of
/// their parent's direction. This keeps joints of one figure apart.
fn sample_person(cfg: &SynthConfig, spec: &SkeletonSpec, rng: &mut SplitMix64) -> Pose {
    use std::f64::consts::TAU;
    let anchor = [
        uniform(rng, 0.0, cfg.image_width as f64 - 1.0),
        uniform(rng, 0.0, cfg.image_height as f64 - 1.0),
        match spec.dim {
            Dim::Three => uniform(rng, cfg.depth_range.0, cfg.depth_range.1),
            Dim::Two => 0.0,
        },
    ];
    let start = uniform(rng, 0.0, TAU);
    let mut joints = vec![Joint::hidden(); spec.k()];
    let mut angle = vec![0.0; spec.k()];
    let mut total_len = 0.0;
    for j in spec.joints_by_level() {
        let siblings: Vec<usize> = (0..spec.k()).filter(|&s| spec.parent[s] == spec.parent[j]).collect();
        let (rank, n) = (siblings.iter().position(|&s| s == j).unwrap_or(0) as f64, siblings.len() as f64);
        let base = match spec.parent[j] {
            None => start + TAU * rank / n,
            Some(p) if n > 1.0 => angle[p] - CHILD_CONE + 2.0 * CHILD_CONE * rank / (n - 1.0),
            Some(p) => angle[p],
        };
        angle[j] = base + uniform(rng, -DIRECTION_JITTER, DIRECTION_JITTER);
        let from = spec.parent[j].map_or(anchor, |p| joints[p].pos);
        let (lo, hi) = cfg.limb_length[(spec.hierarchy_level[j] - 2) as usize];
        let len = uniform(rng, lo, hi);
        let dz = match spec.dim {
            Dim::Three => uniform(rng, -cfg.depth_jitter, cfg.depth_jitter),
            Dim::Two => 0.0,
        };
        total_len += len;
        joints[j] = Joint::visible([from[0] + len * angle[j].cos(), from[1] + len * angle[j].sin(), from[2] + dz]);
    }
    let mut pose = Pose::new(spec.dim, joints);
    pose.ref_length = Some(total_len / spec.k() as f64);
    pose
}

/// Builds scene `index` of the stream defined by `cfg`.
pub fn generate_scene(cfg: &SynthConfig, spec: &Arc<SkeletonSpec>, index: u64) -> Result<SynthScene> {
    cfg.validate()?;
    spec.ensure_valid()?;
    let mut rng = scene_rng(cfg.seed, index);
    let n = cfg.n_persons.0 + (rng.random::<u64>() % (cfg.n_persons.1 - cfg.n_persons.0 + 1) as u64) as usize;
    let min_sep = cfg.min_root_separation();
    let mut persons: Vec<Pose> = Vec::with_capacity(n);
    let mut roots: Vec<Coord> = Vec::with_capacity(n);
    let mut attempts = 0;
    while persons.len() < n {
        attempts += 1;
        if attempts > cfg.max_attempts {
            return Err(Error::InvalidArgument(format!(
                "could not place {n} persons {min_sep:.2} px apart in {}x{} after {} attempts",
                cfg.image_height, cfg.image_width, cfg.max_attempts
            )));
        }
        let pose = sample_person(cfg, spec, &mut rng);
        if !pose.joints.iter().all(|j| inside(cfg, &j.pos)) {
            continue;
        }
        let root = centroid_root(&pose)?;
        let far = roots.iter().all(|r| {
            let (dx, dy) = (r[0] - root[0], r[1] - root[1]);
            (dx * dx + dy * dy).sqrt() >= min_sep
        });
        if far {
            persons.push(pose);
            roots.push(root);
        }
    }
    let scene = Scene {
        image_height: cfg.image_height,
        image_width: cfg.image_width,
        dim: spec.dim,
        persons,
    };
    let image = cfg.render.then(|| render(&scene, spec, &roots, &mut rng));
    Ok(SynthScene { scene, image })
}

pub fn generate_dataset(cfg: &SynthConfig, spec: &Arc<SkeletonSpec>, count: usize) -> Result<Vec<SynthScene>> {
    (0..count as u64).map(|i| generate_scene(cfg, spec, i)).collect()
}

fn draw_segment(img: &mut Image, a: Coord, b: Coord, half_width: f64, color: [f32; 3]) {
    let reach = half_width + 1.0;
    let r0 = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
    let r1 = ((a[1].max(b[1]) + reach).ceil().max(0.0) as usize).min(img.height - 1);
    let c0 = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
    let c1 = ((a[0].max(b[0]) + reach).ceil().max(0.0) as usize).min(img.width - 1);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    for row in r0..=r1 {
        for col in c0..=c1 {
            let (px, py) = (col as f64 - a[0], row as f64 - a[1]);
            let t = if len2 > 0.0 {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - t * dx, py - t * dy);
            let dist = (ex * ex + ey * ey).sqrt();
            // one-pixel linear falloff at the edge
            let alpha = (half_width + 0.5 - dist).clamp(0.0, 1.0);
            if alpha > 0.0 {
                img.blend(row, col, color, alpha as f32);
            }
        }
    }
}

/// Fully saturated hue spaced evenly around the colour wheel.
fn joint_color(j: usize, k: usize) -> [f32; 3] {
    let h = 6.0 * j as f32 / k.max(1) as f32;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Limbs and joint dots over a noisy background, both coloured by a hue that
/// encodes the joint index (limbs dimmer, drawn first). Torso joints are
/// joined to the root, so the limb leaving a root already tells which joint
/// it leads to.
fn render(scene: &Scene, spec: &SkeletonSpec, roots: &[Coord], rng: &mut SplitMix64) -> Image {
    let mut img = Image::new(scene.image_height, scene.image_width);
    for v in img.data.iter_mut() {
        *v = 0.3 + 0.1 * rng.random::<f32>();
    }
    for (pose, root) in scene.persons.iter().zip(roots) {
        for (j, joint) in pose.joints.iter().enumerate() {
            if !joint.visible {
                continue;
            }
            let from = match spec.parent[j] {
                None => *root,
                Some(p) if pose.joints[p].visible => pose.joints[p].pos,
                Some(_) => continue,
            };
            draw_segment(&mut img, from, joint.pos, 0.75, joint_color(j, pose.k()).map(|c| 0.6 * c));
        }
        for (j, joint) in pose.joints.iter().enumerate().filter(|(_, j)| j.visible) {
            draw_segment(&mut img, joint.pos, joint.pos, 1.0, joint_color(j, pose.k()));
        }
    }
    img
}

/// Adds isotropic Gaussian noise with standard deviation `magnitude` to every
/// visible joint coordinate. Visibility flags are untouched.
pub fn perturb_poses(scene: &Scene, magnitude: f64, seed: u64) -> Result<Scene> {
    if !(magnitude >= 0.0) {
        return Err(Error::InvalidArgument("noise magnitude must be non-negative".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let d = scene.dim.len();
    let mut out = scene.clone();
    for pose in &mut out.persons {
        for joint in pose.joints.iter_mut().filter(|j| j.visible) {
            for c in 0..d {
                let n: f64 = rng.sample(StandardNormal);
                joint.pos[c] += magnitude * n;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_mpii16, panoptic15_3d, toy6};

    #[test]
    fn single_person_inside_image() {
        let spec = Arc::new(toy6());
        let mut cfg = SynthConfig::new(3, 48, 48);
        cfg.n_persons = (1, 1);
        for i in 0..20 {
            let s = generate_scene(&cfg, &spec, i).unwrap();
            assert_eq!(s.scene.persons.len(), 1);
            assert!(s.scene.persons[0].joints.iter().all(|j| j.visible && inside(&cfg, &j.pos)));
            assert!(s.image.is_none());
        }
    }

    #[test]
    fn deterministic() {
        let spec = Arc::new(default_mpii16());
        let mut cfg = SynthConfig::new(11, 96, 96);
        cfg.render = true;
        cfg.overlap = 0.5;
        let a = generate_scene(&cfg, &spec, 4).unwrap();
        let b = generate_scene(&cfg, &spec, 4).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&cfg, &spec, 5).unwrap();
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn zero_overlap_separates_roots() {
        let spec = Arc::new(toy6());
        let mut cfg = SynthConfig::new(5, 96, 96);
        cfg.n_persons = (2, 4);
        for i in 0..100 {
            let s = generate_scene(&cfg, &spec, i).unwrap().scene;
            let roots: Vec<Coord> = s.persons.iter().map(|p| centroid_root(p).unwrap()).collect();
            for a in 0..roots.len() {
                for b in a + 1..roots.len() {
                    let d = ((roots[a][0] - roots[b][0]).powi(2) + (roots[a][1] - roots[b][1]).powi(2)).sqrt();
                    assert!(d >= 2.0 * 7.0, "scene {i}: {d}");
                }
            }
        }
    }

    #[test]
    fn over_constrained_errors() {
        let spec = Arc::new(toy6());
        let mut cfg = SynthConfig::new(5, 40, 40);
        cfg.n_persons = (20, 20);
        cfg.max_attempts = 200;
        assert!(generate_scene(&cfg, &spec, 0).is_err());
    }

    #[test]
    fn three_d_scenes_have_depth() {
        let spec = Arc::new(panoptic15_3d());
        let cfg = SynthConfig::new(1, 64, 64);
        let s = generate_scene(&cfg, &spec, 0).unwrap().scene;
        assert_eq!(s.dim, Dim::Three);
        for p in &s.persons {
            let z = centroid_root(p).unwrap()[2];
            assert!(z > 1000.0 && z < 6000.0);
        }
    }

    #[test]
    fn generated_poses_follow_hierarchy() {
        let spec = Arc::new(default_mpii16());
        let cfg = SynthConfig::new(9, 96, 96);
        let s = generate_scene(&cfg, &spec, 0).unwrap().scene;
        for p in &s.persons {
            assert_eq!(p.k(), spec.k());
            for j in 0..spec.k() {
                if let Some(par) = spec.parent[j] {
                    let (dx, dy) = (p.joints[j].pos[0] - p.joints[par].pos[0], p.joints[j].pos[1] - p.joints[par].pos[1]);
                    let len = (dx * dx + dy * dy).sqrt();
                    let (lo, hi) = cfg.limb_length[(spec.hierarchy_level[j] - 2) as usize];
                    assert!(len >= lo - 1e-9 && len <= hi + 1e-9);
                }
            }
        }
    }

    #[test]
    fn perturb_identity_and_flags() {
        let spec = Arc::new(toy6());
        let cfg = SynthConfig::new(2, 64, 64);
        let mut s = generate_scene(&cfg, &spec, 0).unwrap().scene;
        s.persons[0].joints[1].visible = false;
        assert_eq!(perturb_poses(&s, 0.0, 1).unwrap(), s);
        let noisy = perturb_poses(&s, 3.0, 1).unwrap();
        for (a, b) in noisy.persons.iter().zip(&s.persons) {
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                assert_eq!(ja.visible, jb.visible);
            }
        }
        assert_eq!(noisy.persons[0].joints[1], s.persons[0].joints[1]);
        assert!(perturb_poses(&s, -1.0, 1).is_err());
    }

    #[test]
    fn perturb_mean_displacement_is_linear() {
        // 2D isotropic Gaussian: E|n| = magnitude * sqrt(pi / 2)
        let pose = Pose::new(Dim::Two, vec![Joint::visible([0.0; 3]); 100]);
        let scene = Scene {
            image_height: 10,
            image_width: 10,
            dim: Dim::Two,
            persons: vec![pose; 100],
        };
        let expected = (std::f64::consts::PI / 2.0).sqrt();
        for magnitude in [0.5, 1.0, 2.0, 4.0] {
            let noisy = perturb_poses(&scene, magnitude, 42).unwrap();
            let mean: f64 = noisy
                .persons
                .iter()
                .flat_map(|p| p.joints.iter())
                .map(|j| (j.pos[0] * j.pos[0] + j.pos[1] * j.pos[1]).sqrt())
                .sum::<f64>()
                / 10_000.0;
            assert!((mean / magnitude - expected).abs() < 0.02, "{magnitude}: {mean}");
        }
    }

    #[test]
    fn ppm_round_trip() {
        let spec = Arc::new(toy6());
        let mut cfg = SynthConfig::new(2, 40, 50);
        cfg.n_persons = (1, 1);
        cfg.render = true;
        let img = generate_scene(&cfg, &spec, 0).unwrap().image.unwrap();
        let mut bytes = Vec::new();
        img.write_ppm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P6\n50 40\n255\n"));
        let back = Image::read_ppm(&bytes).unwrap();
        let mut again = Vec::new();
        back.write_ppm(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert!(Image::read_ppm(b"P3\n1 1\n255\n").is_err());
    }
}
