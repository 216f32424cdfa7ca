//! Joint taxonomies, the four-level kinematic hierarchy and articulated paths.
//!
//! Level 1 is the person root (the centroid), which is not a joint of the
//! skeleton itself. Torso joints sit on level 2 and hang directly off the
//! root, limbs and head continue on levels 3 and 4. Every joint has exactly
//! one parent on the level above, so the path from the root to any joint is
//! at most three links long.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest chain of joints from the root to a leaf.
pub const MAX_PATH_LEN: usize = 3;

/// Spatial dimensionality of a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dim {
    Two,
    Three,
}

#[allow(clippy::len_without_is_empty)]
impl Dim {
    pub fn len(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }
}

impl TryFrom<u8> for Dim {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(format!("dim must be 2 or 3, got {other}")),
        }
    }
}

impl From<Dim> for u8 {
    fn from(d: Dim) -> u8 {
        d.len() as u8
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D", self.len())
    }
}

/// A joint taxonomy with its hierarchy levels and parent links.
///
/// `parent[j] == None` means the joint hangs off the person root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSpec {
    pub name: String,
    pub dim: Dim,
    pub joint_names: Vec<String>,
    pub hierarchy_level: Vec<u8>,
    pub parent: Vec<Option<usize>>,
}

/// One broken invariant found by [`SkeletonSpec::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    LengthMismatch {
        field: &'static str,
        len: usize,
        k: usize,
    },
    DuplicateName(String),
    ParentOutOfRange {
        joint: usize,
        parent: usize,
    },
    Cycle {
        joint: usize,
    },
    LevelOutOfRange {
        joint: usize,
        level: u8,
    },
    RootChildLevel {
        joint: usize,
        level: u8,
    },
    LevelGap {
        joint: usize,
        level: u8,
        parent: usize,
        parent_level: u8,
    },
    PathTooLong {
        joint: usize,
        len: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty: skeleton has no joints"),
            Violation::LengthMismatch { field, len, k } => {
                write!(f, "length mismatch: {field} has {len} entries, expected {k}")
            }
            Violation::DuplicateName(n) => write!(f, "duplicate name: {n}"),
            Violation::ParentOutOfRange { joint, parent } => {
                write!(f, "parent out of range: joint {joint} -> {parent}")
            }
            Violation::Cycle { joint } => write!(f, "cycle: parent chain of joint {joint} never reaches the root"),
            Violation::LevelOutOfRange { joint, level } => {
                write!(f, "level out of range: joint {joint} has level {level}, expected 2..=4")
            }
            Violation::RootChildLevel { joint, level } => {
                write!(f, "root child level: joint {joint} hangs off the root but has level {level}")
            }
            Violation::LevelGap {
                joint,
                level,
                parent,
                parent_level,
            } => write!(
                f,
                "level gap: joint {joint} (level {level}) has parent {parent} (level {parent_level})"
            ),
            Violation::PathTooLong { joint, len } => {
                write!(f, "path too long: joint {joint} is {len} links from the root")
            }
        }
    }
}

/// Ordered chain of joints from the first post-root joint to `joint_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArticulatedPath {
    pub joint_index: usize,
    pub ordered_joints: Vec<usize>,
}

impl SkeletonSpec {
    /// Builds a spec and rejects it if any invariant is broken.
    pub fn new(
        name: impl Into<String>,
        dim: Dim,
        joint_names: Vec<String>,
        hierarchy_level: Vec<u8>,
        parent: Vec<Option<usize>>,
    ) -> Result<Self> {
        let spec = SkeletonSpec {
            name: name.into(),
            dim,
            joint_names,
            hierarchy_level,
            parent,
        };
        spec.ensure_valid()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Lists every violated invariant; an empty list means the spec is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let k = self.k();
        let mut out = Vec::new();
        if k == 0 {
            out.push(Violation::Empty);
        }
        if self.hierarchy_level.len() != k {
            out.push(Violation::LengthMismatch {
                field: "hierarchy_level",
                len: self.hierarchy_level.len(),
                k,
            });
        }
        if self.parent.len() != k {
            out.push(Violation::LengthMismatch {
                field: "parent",
                len: self.parent.len(),
                k,
            });
        }
        if !out.is_empty() {
            return out;
        }

        let mut seen = HashSet::new();
        for n in &self.joint_names {
            if !seen.insert(n.as_str()) {
                out.push(Violation::DuplicateName(n.clone()));
            }
        }

        for j in 0..k {
            let level = self.hierarchy_level[j];
            if !(2..=4).contains(&level) {
                out.push(Violation::LevelOutOfRange { joint: j, level });
            }
            match self.parent[j] {
                None if level != 2 => out.push(Violation::RootChildLevel { joint: j, level }),
                None => {}
                Some(p) if p >= k => out.push(Violation::ParentOutOfRange { joint: j, parent: p }),
                Some(p) if p == j => out.push(Violation::Cycle { joint: j }),
                Some(p) => {
                    let parent_level = self.hierarchy_level[p];
                    if level != parent_level.wrapping_add(1) {
                        out.push(Violation::LevelGap {
                            joint: j,
                            level,
                            parent: p,
                            parent_level,
                        });
                    }
                }
            }
        }

        // Walk every chain; anything longer than k steps must loop.
        for j in 0..k {
            let mut cur = j;
            let mut steps = 1;
            let mut broken = false;
            while let Some(p) = self.parent[cur] {
                if p >= k || p == cur {
                    broken = true;
                    break;
                }
                cur = p;
                steps += 1;
                if steps > k {
                    out.push(Violation::Cycle { joint: j });
                    broken = true;
                    break;
                }
            }
            if !broken && steps > MAX_PATH_LEN {
                out.push(Violation::PathTooLong { joint: j, len: steps });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = report.iter().map(ToString::to_string).collect();
            Err(Error::InvalidSkeleton(format!("{}: {}", self.name, msgs.join("; "))))
        }
    }

    /// Joint chain from the first post-root joint down to `j`.
    pub fn articulated_path(&self, j: usize) -> Result<ArticulatedPath> {
        let k = self.k();
        if j >= k {
            return Err(Error::JointOutOfRange { index: j, k });
        }
        let mut chain = vec![j];
        let mut cur = j;
        while let Some(p) = self.parent[cur] {
            if chain.len() >= MAX_PATH_LEN || p >= k {
                return Err(Error::InvalidSkeleton(format!(
                    "{}: parent chain of joint {j} is malformed",
                    self.name
                )));
            }
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        Ok(ArticulatedPath {
            joint_index: j,
            ordered_joints: chain,
        })
    }

    /// Joint indices sorted by hierarchy level (stable within a level).
    /// Visiting joints in this order guarantees parents come first.
    pub fn joints_by_level(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by_key(|&j| self.hierarchy_level[j]);
        order
    }

    /// Looks up a built-in skeleton by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mpii16" => Ok(default_mpii16()),
            "coco17" => Ok(coco17()),
            "panoptic15-3d" => Ok(panoptic15_3d()),
            "toy6" => Ok(toy6()),
            other => Err(Error::InvalidArgument(format!(
                "unknown skeleton preset `{other}` (expected one of: {})",
                PRESETS.join(", ")
            ))),
        }
    }
}

pub const PRESETS: [&str; 4] = ["mpii16", "coco17", "panoptic15-3d", "toy6"];

fn build(name: &str, dim: Dim, joints: &[(&str, u8, Option<&str>)]) -> SkeletonSpec {
    let names: Vec<String> = joints.iter().map(|(n, _, _)| n.to_string()).collect();
    let levels = joints.iter().map(|(_, l, _)| *l).collect();
    let parents = joints
        .iter()
        .map(|(_, _, p)| p.map(|p| names.iter().position(|n| n == p).expect("preset parent name")))
        .collect();
    SkeletonSpec::new(name, dim, names, levels, parents).expect("preset skeleton is valid")
}

/// MPII 16-joint layout in the dataset's native joint order.
///
/// Thorax and pelvis sit with shoulders and hips on the torso level; upper
/// neck and head top hang off the thorax on level 3.
pub fn default_mpii16() -> SkeletonSpec {
    build(
        "mpii16",
        Dim::Two,
        &[
            ("r_ankle", 4, Some("r_knee")),
            ("r_knee", 3, Some("r_hip")),
            ("r_hip", 2, None),
            ("l_hip", 2, None),
            ("l_knee", 3, Some("l_hip")),
            ("l_ankle", 4, Some("l_knee")),
            ("pelvis", 2, None),
            ("thorax", 2, None),
            ("upper_neck", 3, Some("thorax")),
            ("head_top", 3, Some("thorax")),
            ("r_wrist", 4, Some("r_elbow")),
            ("r_elbow", 3, Some("r_shoulder")),
            ("r_shoulder", 2, None),
            ("l_shoulder", 2, None),
            ("l_elbow", 3, Some("l_shoulder")),
            ("l_wrist", 4, Some("l_elbow")),
        ],
    )
}

/// COCO 17-keypoint layout. There is no neck joint, so the nose takes the
/// torso-level slot for the face and the eyes and ears hang off it.
pub fn coco17() -> SkeletonSpec {
    build(
        "coco17",
        Dim::Two,
        &[
            ("nose", 2, None),
            ("l_eye", 3, Some("nose")),
            ("r_eye", 3, Some("nose")),
            ("l_ear", 3, Some("nose")),
            ("r_ear", 3, Some("nose")),
            ("l_shoulder", 2, None),
            ("r_shoulder", 2, None),
            ("l_elbow", 3, Some("l_shoulder")),
            ("r_elbow", 3, Some("r_shoulder")),
            ("l_wrist", 4, Some("l_elbow")),
            ("r_wrist", 4, Some("r_elbow")),
            ("l_hip", 2, None),
            ("r_hip", 2, None),
            ("l_knee", 3, Some("l_hip")),
            ("r_knee", 3, Some("r_hip")),
            ("l_ankle", 4, Some("l_knee")),
            ("r_ankle", 4, Some("r_knee")),
        ],
    )
}

/// CMU Panoptic 15-joint body layout, 3D.
pub fn panoptic15_3d() -> SkeletonSpec {
    build(
        "panoptic15-3d",
        Dim::Three,
        &[
            ("neck", 2, None),
            ("nose", 3, Some("neck")),
            ("body_center", 2, None),
            ("l_shoulder", 2, None),
            ("l_elbow", 3, Some("l_shoulder")),
            ("l_wrist", 4, Some("l_elbow")),
            ("l_hip", 2, None),
            ("l_knee", 3, Some("l_hip")),
            ("l_ankle", 4, Some("l_knee")),
            ("r_shoulder", 2, None),
            ("r_elbow", 3, Some("r_shoulder")),
            ("r_wrist", 4, Some("r_elbow")),
            ("r_hip", 2, None),
            ("r_knee", 3, Some("r_hip")),
            ("r_ankle", 4, Some("r_knee")),
        ],
    )
}

/// Six-joint stick figure used for the toy training runs.
pub fn toy6() -> SkeletonSpec {
    build(
        "toy6",
        Dim::Two,
        &[
            ("neck", 2, None),
            ("pelvis", 2, None),
            ("l_hand", 3, Some("neck")),
            ("r_hand", 3, Some("neck")),
            ("l_foot", 3, Some("pelvis")),
            ("r_foot", 3, Some("pelvis")),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(spec: &SkeletonSpec, path: &ArticulatedPath) -> Vec<String> {
        path.ordered_joints.iter().map(|&j| spec.joint_names[j].clone()).collect()
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let spec = SkeletonSpec::preset(name).unwrap();
            assert!(spec.validate().is_empty(), "{name}");
        }
        assert_eq!(default_mpii16().k(), 16);
        assert_eq!(coco17().k(), 17);
        assert_eq!(panoptic15_3d().dim, Dim::Three);
    }

    #[test]
    fn mpii_levels() {
        let s = default_mpii16();
        let lvl = |n: &str| s.hierarchy_level[s.joint_index(n).unwrap()];
        assert_eq!(lvl("r_ankle"), 4);
        assert_eq!(lvl("l_wrist"), 4);
        for n in ["thorax", "pelvis", "l_shoulder", "r_shoulder", "l_hip", "r_hip"] {
            assert_eq!(lvl(n), 2, "{n}");
        }
        for n in ["upper_neck", "head_top", "l_elbow", "r_elbow", "l_knee", "r_knee"] {
            assert_eq!(lvl(n), 3, "{n}");
        }
    }

    #[test]
    fn wrist_and_ankle_paths() {
        let s = default_mpii16();
        let p = s.articulated_path(s.joint_index("l_wrist").unwrap()).unwrap();
        assert_eq!(names(&s, &p), ["l_shoulder", "l_elbow", "l_wrist"]);
        let p = s.articulated_path(s.joint_index("l_ankle").unwrap()).unwrap();
        assert_eq!(names(&s, &p), ["l_hip", "l_knee", "l_ankle"]);
        let p = s.articulated_path(s.joint_index("thorax").unwrap()).unwrap();
        assert_eq!(names(&s, &p), ["thorax"]);
    }

    #[test]
    fn path_index_out_of_range() {
        let s = default_mpii16();
        assert!(matches!(s.articulated_path(16), Err(Error::JointOutOfRange { index: 16, k: 16 })));
    }

    #[test]
    fn paths_start_at_root_children_with_increasing_levels() {
        for name in PRESETS {
            let s = SkeletonSpec::preset(name).unwrap();
            for j in 0..s.k() {
                let p = s.articulated_path(j).unwrap();
                assert_eq!(*p.ordered_joints.last().unwrap(), j);
                assert_eq!(s.parent[p.ordered_joints[0]], None);
                let levels: Vec<u8> = p.ordered_joints.iter().map(|&i| s.hierarchy_level[i]).collect();
                let expected: Vec<u8> = (2..2 + levels.len() as u8).collect();
                assert_eq!(levels, expected);
            }
        }
    }

    #[test]
    fn wrist_parented_to_hip_is_a_level_gap() {
        let mut s = default_mpii16();
        let wrist = s.joint_index("l_wrist").unwrap();
        s.parent[wrist] = s.joint_index("l_hip");
        let report = s.validate();
        assert!(report
            .iter()
            .any(|v| matches!(v, Violation::LevelGap { joint, .. } if *joint == wrist)));
        assert!(report.iter().any(|v| v.to_string().starts_with("level gap")));
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let mut s = default_mpii16();
        let elbow = s.joint_index("l_elbow").unwrap();
        s.parent[elbow] = Some(elbow);
        let report = s.validate();
        assert!(report.iter().any(|v| v.to_string().starts_with("cycle")));
        assert!(SkeletonSpec::new(s.name.clone(), s.dim, s.joint_names, s.hierarchy_level, s.parent).is_err());
    }

    #[test]
    fn two_joint_cycle_detected() {
        let s = SkeletonSpec {
            name: "loop".into(),
            dim: Dim::Two,
            joint_names: vec!["a".into(), "b".into()],
            hierarchy_level: vec![3, 3],
            parent: vec![Some(1), Some(0)],
        };
        let report = s.validate();
        assert!(report.contains(&Violation::Cycle { joint: 0 }));
        assert!(report.contains(&Violation::Cycle { joint: 1 }));
    }

    #[test]
    fn other_violations() {
        let s = SkeletonSpec {
            name: "bad".into(),
            dim: Dim::Two,
            joint_names: vec!["a".into(), "a".into(), "c".into()],
            hierarchy_level: vec![3, 2, 5],
            parent: vec![None, None, Some(7)],
        };
        let report = s.validate();
        assert!(report.contains(&Violation::DuplicateName("a".into())));
        assert!(report.contains(&Violation::RootChildLevel { joint: 0, level: 3 }));
        assert!(report.contains(&Violation::LevelOutOfRange { joint: 2, level: 5 }));
        assert!(report.contains(&Violation::ParentOutOfRange { joint: 2, parent: 7 }));

        let empty = SkeletonSpec {
            name: "empty".into(),
            dim: Dim::Two,
            joint_names: vec![],
            hierarchy_level: vec![],
            parent: vec![],
        };
        assert_eq!(empty.validate(), vec![Violation::Empty]);
    }

    #[test]
    fn validate_is_idempotent() {
        let mut s = default_mpii16();
        s.parent[0] = Some(0);
        let before = s.clone();
        assert_eq!(s.validate(), s.validate());
        assert_eq!(s, before);
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let good = serde_json::to_string(&toy6()).unwrap();
        let back: SkeletonSpec = serde_json::from_str(&good).unwrap();
        assert_eq!(back, toy6());
        let bad = good.replacen("\"name\"", "\"nmae\"", 1);
        assert!(serde_json::from_str::<SkeletonSpec>(&bad).is_err());
        let bad_dim = good.replacen("\"dim\":2", "\"dim\":4", 1);
        assert!(serde_json::from_str::<SkeletonSpec>(&bad_dim).is_err());
    }
}
