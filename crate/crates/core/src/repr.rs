//! Conventional, structured and hierarchical pose representations.
//!
//! Coordinates are stored as `[f64; 3]` regardless of dimensionality; in 2D
//! the third component is ignored and kept at zero. Invisible joints carry no
//! coordinate meaning: they are skipped by every computation here and are
//! absent (`None`) in both displacement representations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Dim, SkeletonSpec};

pub type Coord = [f64; 3];

#[inline]
pub fn add(a: Coord, b: Coord) -> Coord {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Coord, b: Coord) -> Coord {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub pos: Coord,
    pub visible: bool,
}

impl Joint {
    pub fn visible(pos: Coord) -> Self {
        Joint { pos, visible: true }
    }

    pub fn hidden() -> Self {
        Joint {
            pos: [0.0; 3],
            visible: false,
        }
    }
}

/// Absolute joint coordinates of one person.
///
/// `ref_length` is the PCKh reference length recorded by the synthetic scene
/// generator for skeletons without a head segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub dim: Dim,
    pub joints: Vec<Joint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_length: Option<f64>,
}

impl Pose {
    pub fn new(dim: Dim, joints: Vec<Joint>) -> Self {
        Pose {
            dim,
            joints,
            ref_length: None,
        }
    }

    pub fn k(&self) -> usize {
        self.joints.len()
    }

    pub fn visible_count(&self) -> usize {
        self.joints.iter().filter(|j| j.visible).count()
    }

    /// Equality on visibility flags and visible coordinates only.
    pub fn same_visible(&self, other: &Pose) -> bool {
        self.dim == other.dim
            && self.k() == other.k()
            && self
                .joints
                .iter()
                .zip(&other.joints)
                .all(|(a, b)| a.visible == b.visible && (!a.visible || a.pos == b.pos))
    }

    pub fn translated(&self, t: Coord) -> Pose {
        let mut out = self.clone();
        for j in out.joints.iter_mut().filter(|j| j.visible) {
            j.pos = add(j.pos, t);
        }
        out
    }
}

/// Root position plus per-joint displacements relative to the root.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredPose {
    pub dim: Dim,
    pub root: Coord,
    pub displacements: Vec<Option<Coord>>,
}

/// Root position plus displacements relative to each joint's parent on the
/// level above.
#[derive(Debug, Clone, PartialEq)]
pub struct HierStructuredPose {
    pub dim: Dim,
    pub root: Coord,
    pub hier_displacements: Vec<Option<Coord>>,
    pub skeleton: Arc<SkeletonSpec>,
}

/// An image with all annotated persons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_height: usize,
    pub image_width: usize,
    pub dim: Dim,
    pub persons: Vec<Pose>,
}

impl Scene {
    pub fn check_consistent(&self) -> Result<()> {
        let k = self.persons.first().map(Pose::k);
        for (i, p) in self.persons.iter().enumerate() {
            if p.dim != self.dim || Some(p.k()) != k {
                return Err(Error::DimensionMismatch(format!(
                    "person {i} has dim {} and K = {}, scene expects dim {} and K = {}",
                    p.dim,
                    p.k(),
                    self.dim,
                    k.unwrap_or(0)
                )));
            }
        }
        Ok(())
    }
}

/// Mean of the visible joint coordinates.
pub fn centroid_root(pose: &Pose) -> Result<Coord> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for j in pose.joints.iter().filter(|j| j.visible) {
        sum = add(sum, j.pos);
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoVisibleJoints);
    }
    let n = n as f64;
    Ok([sum[0] / n, sum[1] / n, sum[2] / n])
}

pub fn encode_spr(pose: &Pose, root: Coord) -> StructuredPose {
    StructuredPose {
        dim: pose.dim,
        root,
        displacements: pose.joints.iter().map(|j| j.visible.then(|| sub(j.pos, root))).collect(),
    }
}

pub fn decode_spr(sp: &StructuredPose) -> Pose {
    Pose::new(
        sp.dim,
        sp.displacements
            .iter()
            .map(|d| match d {
                Some(d) => Joint::visible(add(sp.root, *d)),
                None => Joint::hidden(),
            })
            .collect(),
    )
}

fn check_k(spec: &SkeletonSpec, k: usize) -> Result<()> {
    if spec.k() != k {
        return Err(Error::DimensionMismatch(format!(
            "skeleton {} has K = {}, pose has K = {k}",
            spec.name,
            spec.k()
        )));
    }
    Ok(())
}

/// Displacements between adjacent hierarchy levels. An entry is present only
/// when the joint and every ancestor on its path are visible.
pub fn encode_hier(pose: &Pose, root: Coord, spec: Arc<SkeletonSpec>) -> Result<HierStructuredPose> {
    check_k(&spec, pose.k())?;
    let mut hier = vec![None; pose.k()];
    // Parents are visited before children, so a parent's entry is final here.
    for j in spec.joints_by_level() {
        if !pose.joints[j].visible {
            continue;
        }
        hier[j] = match spec.parent[j] {
            None => Some(sub(pose.joints[j].pos, root)),
            Some(p) if hier[p].is_some() => Some(sub(pose.joints[j].pos, pose.joints[p].pos)),
            Some(_) => None,
        };
    }
    Ok(HierStructuredPose {
        dim: pose.dim,
        root,
        hier_displacements: hier,
        skeleton: spec,
    })
}

/// Accumulates short displacements along each articulated path, parents
/// first, so each joint is its decoded parent plus its own displacement.
fn accumulate(spec: &SkeletonSpec, base: Coord, hier: &[Option<Coord>]) -> Result<Vec<Option<Coord>>> {
    check_k(spec, hier.len())?;
    let mut out: Vec<Option<Coord>> = vec![None; hier.len()];
    for j in spec.joints_by_level() {
        let Some(d) = hier[j] else { continue };
        let anchor = match spec.parent[j] {
            None => base,
            Some(p) => out[p].ok_or(Error::MissingPathEntry { joint: j, ancestor: p })?,
        };
        out[j] = Some(add(anchor, d));
    }
    Ok(out)
}

pub fn decode_hier(hp: &HierStructuredPose) -> Result<Pose> {
    let coords = accumulate(&hp.skeleton, hp.root, &hp.hier_displacements)?;
    Ok(Pose::new(
        hp.dim,
        coords.into_iter().map(|c| c.map_or_else(Joint::hidden, Joint::visible)).collect(),
    ))
}

pub fn spr_to_hier(sp: &StructuredPose, spec: Arc<SkeletonSpec>) -> Result<HierStructuredPose> {
    check_k(&spec, sp.displacements.len())?;
    let mut hier = vec![None; sp.displacements.len()];
    for j in spec.joints_by_level() {
        let Some(d) = sp.displacements[j] else { continue };
        hier[j] = match spec.parent[j] {
            None => Some(d),
            Some(p) => match (hier[p], sp.displacements[p]) {
                (Some(_), Some(dp)) => Some(sub(d, dp)),
                _ => None,
            },
        };
    }
    Ok(HierStructuredPose {
        dim: sp.dim,
        root: sp.root,
        hier_displacements: hier,
        skeleton: spec,
    })
}

pub fn hier_to_spr(hp: &HierStructuredPose) -> Result<StructuredPose> {
    let disp = accumulate(&hp.skeleton, [0.0; 3], &hp.hier_displacements)?;
    Ok(StructuredPose {
        dim: hp.dim,
        root: hp.root,
        displacements: disp,
    })
}
