//! Single-stage inference: peaks of the root confidence map become person
//! roots, and every joint is read back from the displacement fields.

use serde::{Deserialize, Serialize};

use crate::encoder::{normalization_factor, ConfidenceMap, DisplacementMapStack, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::repr::{Coord, Joint, Pose};
use crate::skeleton::{Dim, SkeletonSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsParams {
    pub window: usize,
    pub threshold: f64,
    pub max_peaks: usize,
    /// Shift peaks a quarter cell toward the larger neighbour on each axis.
    #[serde(default)]
    pub refine: bool,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            window: 3,
            threshold: 0.3,
            max_peaks: 30,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    /// Map-cell position, possibly sub-cell refined.
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPose {
    pub pose: Pose,
    /// Root position in input pixels.
    pub root: Coord,
    pub score: f64,
    pub per_joint_scores: Vec<f64>,
}

/// Local maxima of `cmap` at or above `threshold`, best first.
///
/// A cell survives if no cell in its `window x window` neighbourhood is
/// larger, and no earlier cell in row-major order is equal.
pub fn nms_peaks(cmap: &ConfidenceMap, window: usize, threshold: f64, max_peaks: usize) -> Result<Vec<Peak>> {
    nms_peaks_with(
        cmap,
        &NmsParams {
            window,
            threshold,
            max_peaks,
            refine: false,
        },
    )
}

pub fn nms_peaks_with(cmap: &ConfidenceMap, params: &NmsParams) -> Result<Vec<Peak>> {
    let window = params.window;
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("NMS window must be odd and positive, got {window}")));
    }
    let (h, w) = (cmap.height, cmap.width);
    let half = window / 2;
    let vals = &cmap.values;
    let mut peaks = Vec::new();
    for (idx, &v) in vals.iter().enumerate() {
        // also rejects NaN
        if !(v >= params.threshold) {
            continue;
        }
        let (row, col) = (idx / w, idx % w);
        let (r0, r1) = (row.saturating_sub(half), (row + half).min(h - 1));
        let (c0, c1) = (col.saturating_sub(half), (col + half).min(w - 1));
        let dominated = (r0..=r1).any(|r| {
            (c0..=c1).any(|c| {
                let n = r * w + c;
                let nv = vals[n];
                nv > v || (nv == v && n < idx)
            })
        });
        if dominated {
            continue;
        }
        let (mut x, mut y) = (col as f64, row as f64);
        if params.refine {
            x += quarter_shift(col, w, |c| vals[row * w + c]);
            y += quarter_shift(row, h, |r| vals[r * w + col]);
        }
        peaks.push(Peak { row, col, x, y, score: v });
    }
    // stable: equal scores stay in row-major order
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score));
    peaks.truncate(params.max_peaks);
    Ok(peaks)
}

fn quarter_shift(i: usize, len: usize, at: impl Fn(usize) -> f64) -> f64 {
    if i == 0 || i + 1 >= len {
        return 0.0;
    }
    let (lo, hi) = (at(i - 1), at(i + 1));
    if hi > lo {
        0.25
    } else if lo > hi {
        -0.25
    } else {
        0.0
    }
}

/// Geometry shared by both decoders.
struct Reader<'a> {
    dstack: &'a DisplacementMapStack,
    cfg: &'a EncoderConfig,
    z: f64,
}

impl Reader<'_> {
    fn cell_pixels(&self, row: usize, col: usize) -> (f64, f64) {
        (self.cfg.to_pixels(col as f64), self.cfg.to_pixels(row as f64))
    }

    /// Joint position from the vector stored at `(row, col)`, or `None` when
    /// the channel is undefined there.
    fn read(&self, row: usize, col: usize, joint: usize, anchor_z: f64) -> Option<Coord> {
        if !self.dstack.is_defined(row, col, joint) {
            return None;
        }
        let v = self.dstack.vector(row, col, joint);
        let (px, py) = self.cell_pixels(row, col);
        let z = match self.dstack.dim {
            Dim::Three => anchor_z + self.cfg.depth_norm * v[2],
            Dim::Two => 0.0,
        };
        Some([px + self.z * v[0], py + self.z * v[1], z])
    }

    fn root(&self, peak: &Peak) -> Coord {
        let z = match &self.dstack.root_depth {
            Some(depth) if self.dstack.dim == Dim::Three => {
                let cell = peak.row * self.dstack.width + peak.col;
                if depth.support[cell] > 0 {
                    self.cfg.depth_norm * depth.values[cell]
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        [self.cfg.to_pixels(peak.x), self.cfg.to_pixels(peak.y), z]
    }

    /// Map cell nearest to an input-pixel position, clamped to the grid.
    fn nearest_cell(&self, pos: Coord) -> (usize, usize) {
        let clamp = |v: f64, len: usize| v.round().clamp(0.0, (len - 1) as f64) as usize;
        (
            clamp(self.cfg.to_map(pos[1]), self.dstack.height),
            clamp(self.cfg.to_map(pos[0]), self.dstack.width),
        )
    }
}

fn check_inputs(
    cmap: &ConfidenceMap,
    dstack: &DisplacementMapStack,
    cfg: &EncoderConfig,
    spec: &SkeletonSpec,
    expected: Mode,
) -> Result<()> {
    if dstack.mode != expected {
        return Err(Error::ModeMismatch {
            expected: expected.to_string(),
            found: dstack.mode.to_string(),
        });
    }
    if (cmap.height, cmap.width) != (dstack.height, dstack.width) || (cfg.map_height, cfg.map_width) != (cmap.height, cmap.width) {
        return Err(Error::DimensionMismatch(format!(
            "confidence map {}x{}, displacement maps {}x{}, config {}x{}",
            cmap.height, cmap.width, dstack.height, dstack.width, cfg.map_height, cfg.map_width
        )));
    }
    if dstack.k != spec.k() || dstack.dim != spec.dim {
        return Err(Error::DimensionMismatch(format!(
            "displacement maps carry K = {} in {}, skeleton {} has K = {} in {}",
            dstack.k,
            dstack.dim,
            spec.name,
            spec.k(),
            spec.dim
        )));
    }
    Ok(())
}

fn assemble(dim: Dim, root: Coord, score: f64, coords: Vec<Option<Coord>>) -> DecodedPose {
    let per_joint_scores = coords.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }).collect();
    let joints = coords.into_iter().map(|c| c.map_or_else(Joint::hidden, Joint::visible)).collect();
    DecodedPose {
        pose: Pose::new(dim, joints),
        root,
        score,
        per_joint_scores,
    }
}

/// Every joint is read at the root peak cell.
pub fn decode_vanilla(
    cmap: &ConfidenceMap,
    dstack: &DisplacementMapStack,
    cfg: &EncoderConfig,
    image_dims: (usize, usize),
    spec: &SkeletonSpec,
    nms: &NmsParams,
) -> Result<Vec<DecodedPose>> {
    check_inputs(cmap, dstack, cfg, spec, Mode::Vanilla)?;
    let reader = Reader {
        dstack,
        cfg,
        z: normalization_factor(image_dims.0, image_dims.1)?,
    };
    let peaks = nms_peaks_with(cmap, nms)?;
    Ok(peaks
        .iter()
        .map(|peak| {
            let root = reader.root(peak);
            let coords = (0..dstack.k).map(|j| reader.read(peak.row, peak.col, j, root[2])).collect();
            assemble(dstack.dim, root, peak.score, coords)
        })
        .collect())
}

/// Torso joints are read at the root peak; every deeper joint is read at the
/// cell nearest its already-decoded parent, so positions accumulate down
/// each articulated path.
pub fn decode_hierarchical(
    cmap: &ConfidenceMap,
    dstack: &DisplacementMapStack,
    cfg: &EncoderConfig,
    image_dims: (usize, usize),
    spec: &SkeletonSpec,
    nms: &NmsParams,
) -> Result<Vec<DecodedPose>> {
    check_inputs(cmap, dstack, cfg, spec, Mode::Hierarchical)?;
    let reader = Reader {
        dstack,
        cfg,
        z: normalization_factor(image_dims.0, image_dims.1)?,
    };
    let order = spec.joints_by_level();
    let peaks = nms_peaks_with(cmap, nms)?;
    Ok(peaks
        .iter()
        .map(|peak| {
            let root = reader.root(peak);
            let mut coords: Vec<Option<Coord>> = vec![None; dstack.k];
            for &j in &order {
                coords[j] = match spec.parent[j] {
                    None => reader.read(peak.row, peak.col, j, root[2]),
                    Some(p) => coords[p].and_then(|parent| {
                        let (row, col) = reader.nearest_cell(parent);
                        reader.read(row, col, j, parent[2])
                    }),
                };
            }
            assemble(dstack.dim, root, peak.score, coords)
        })
        .collect())
}

/// Dispatches on the stack's own mode.
pub fn decode(
    cmap: &ConfidenceMap,
    dstack: &DisplacementMapStack,
    cfg: &EncoderConfig,
    image_dims: (usize, usize),
    spec: &SkeletonSpec,
    nms: &NmsParams,
) -> Result<Vec<DecodedPose>> {
    match dstack.mode {
        Mode::Vanilla => decode_vanilla(cmap, dstack, cfg, image_dims, spec, nms),
        Mode::Hierarchical => decode_hierarchical(cmap, dstack, cfg, image_dims, spec, nms),
    }
}
