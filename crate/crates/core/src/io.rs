//! On-disk formats: the binary map tensor container, the JSON pose dataset,
//! the map manifest and model checkpoints.
//!
//! Tensor layout (all integers little-endian):
//!
//! ```text
//! "SPMT" | u32 version = 1 | u32 rank | rank x u32 dims | u8 dtype (1 = f32)
//!        | payload, row-major | u32 CRC-32 of payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decoder::DecodedPose;
use crate::encoder::{ConfidenceMap, DisplacementMapStack, EncoderConfig, Mode, RootDepthMap};
use crate::error::{Error, Result};
use crate::model::{Architecture, Real, ToyRegressor};
use crate::repr::{centroid_root, Coord, Joint, Pose, Scene};
use crate::skeleton::{Dim, SkeletonSpec};

pub const TENSOR_MAGIC: [u8; 4] = *b"SPMT";
pub const TENSOR_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPMK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// An f32 tensor with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        let start = out.len();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses one tensor from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != TENSOR_MAGIC {
            return Err(Error::Format("bad magic, not a map tensor file".into()));
        }
        let version = cur.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let rank = cur.u32()? as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let dtype = cur.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype tag {dtype}")));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let payload = cur.take(n)?;
        let stored = cur.u32()?;
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum {
                origin: String::new(),
                stored,
                computed,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((Tensor { dims, data }, cur.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::read_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after tensor", bytes.len() - used)));
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?).map_err(|e| with_path(path, e))
    }
}

/// Prefixes format-level errors with the offending file.
fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Checksum { stored, computed, .. } => Error::Checksum {
            origin: format!("{}: ", path.display()),
            stored,
            computed,
        },
        other => other,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

// ---------------------------------------------------------------------------
// Pose dataset JSON

/// A skeleton given either by preset name or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SkeletonRef {
    Preset(String),
    Inline(SkeletonSpec),
}

impl SkeletonRef {
    pub fn resolve(&self) -> Result<SkeletonSpec> {
        match self {
            SkeletonRef::Preset(name) => SkeletonSpec::preset(name),
            SkeletonRef::Inline(spec) => {
                spec.ensure_valid()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonRecord {
    pub joints: Vec<JointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<Vec<f64>>,
    /// Detection confidence; present on predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Reference length for PCKh on skeletons without a head segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub persons: Vec<PersonRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDatasetFile {
    pub version: u32,
    pub skeleton: SkeletonRef,
    pub dim: Dim,
    pub images: Vec<ImageRecord>,
}

/// Image ids become file name stems, so keep them to a safe alphabet.
pub fn check_image_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidData(format!(
            "image id `{id}` must be non-empty [A-Za-z0-9_.-] and not start with '.'"
        )))
    }
}

fn joint_records(pose: &Pose, spec: &SkeletonSpec) -> Vec<JointRecord> {
    pose.joints
        .iter()
        .zip(&spec.joint_names)
        .map(|(j, name)| JointRecord {
            name: name.clone(),
            x: j.pos[0],
            y: j.pos[1],
            z: (pose.dim == Dim::Three).then_some(j.pos[2]),
            visible: j.visible,
        })
        .collect()
}

fn root_record(root: &Coord, dim: Dim) -> Vec<f64> {
    root[..dim.len()].to_vec()
}

impl PoseDatasetFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: PoseDatasetFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_string(),
            source,
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Pretty JSON with a trailing newline; the byte form is what golden
    /// files pin down.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// A bad skeleton inside a file is a data error, not a usage error.
    pub fn spec(&self) -> Result<SkeletonSpec> {
        self.skeleton.resolve().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidData(m),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DATASET_VERSION {
            return Err(Error::InvalidData(format!("unsupported dataset version {}", self.version)));
        }
        let spec = self.spec()?;
        if spec.dim != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "dataset declares dim {} but skeleton `{}` is {}D",
                self.dim, spec.name, spec.dim
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, img) in self.images.iter().enumerate() {
            let ctx = |m: String| Error::InvalidData(format!("images[{i}] (`{}`): {m}", img.id));
            check_image_id(&img.id)?;
            if !seen.insert(img.id.as_str()) {
                return Err(ctx("duplicate image id".into()));
            }
            if img.width == 0 || img.height == 0 {
                return Err(ctx("width and height must be positive".into()));
            }
            for (p, person) in img.persons.iter().enumerate() {
                if person.joints.len() != spec.k() {
                    return Err(ctx(format!(
                        "persons[{p}] has {} joints, skeleton has {}",
                        person.joints.len(),
                        spec.k()
                    )));
                }
                for (j, (rec, name)) in person.joints.iter().zip(&spec.joint_names).enumerate() {
                    if rec.name != *name {
                        return Err(ctx(format!("persons[{p}].joints[{j}] is `{}`, expected `{name}`", rec.name)));
                    }
                    if self.dim == Dim::Three && rec.visible && rec.z.is_none() {
                        return Err(ctx(format!("persons[{p}].joints[{j}] lacks z in a 3D dataset")));
                    }
                    if self.dim == Dim::Two && rec.z.is_some() {
                        return Err(ctx(format!("persons[{p}].joints[{j}] has z in a 2D dataset")));
                    }
                    if rec.visible && !(rec.x.is_finite() && rec.y.is_finite() && rec.z.is_none_or(f64::is_finite)) {
                        return Err(ctx(format!("persons[{p}].joints[{j}] has a non-finite coordinate")));
                    }
                }
                if let Some(root) = &person.root {
                    if root.len() != self.dim.len() {
                        return Err(ctx(format!(
                            "persons[{p}].root has {} components, expected {}",
                            root.len(),
                            self.dim.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn pose(&self, person: &PersonRecord) -> Pose {
        let joints = person
            .joints
            .iter()
            .map(|r| Joint {
                pos: [r.x, r.y, r.z.unwrap_or(0.0)],
                visible: r.visible,
            })
            .collect();
        let mut pose = Pose::new(self.dim, joints);
        pose.ref_length = person.ref_length;
        pose
    }

    /// Ground-truth view: one scene per image.
    pub fn to_scenes(&self) -> Vec<(String, Scene)> {
        self.images
            .iter()
            .map(|img| {
                let scene = Scene {
                    image_height: img.height,
                    image_width: img.width,
                    dim: self.dim,
                    persons: img.persons.iter().map(|p| self.pose(p)).collect(),
                };
                (img.id.clone(), scene)
            })
            .collect()
    }

    /// Prediction view. Missing scores default to 1, missing roots to the
    /// centroid of visible joints.
    pub fn to_predictions(&self) -> Result<Vec<(String, Vec<DecodedPose>)>> {
        self.images
            .iter()
            .map(|img| {
                let preds = img
                    .persons
                    .iter()
                    .map(|p| {
                        let pose = self.pose(p);
                        let root = match &p.root {
                            Some(r) => [r[0], r[1], r.get(2).copied().unwrap_or(0.0)],
                            None => centroid_root(&pose)?,
                        };
                        let score = p.score.unwrap_or(1.0);
                        Ok(DecodedPose {
                            per_joint_scores: vec![score; pose.k()],
                            pose,
                            root,
                            score,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((img.id.clone(), preds))
            })
            .collect()
    }

    pub fn from_scenes(skeleton: SkeletonRef, spec: &SkeletonSpec, scenes: &[(String, Scene)]) -> Result<Self> {
        let images = scenes
            .iter()
            .map(|(id, s)| {
                check_image_id(id)?;
                Ok(ImageRecord {
                    id: id.clone(),
                    width: s.image_width,
                    height: s.image_height,
                    persons: s
                        .persons
                        .iter()
                        .map(|p| PersonRecord {
                            joints: joint_records(p, spec),
                            root: None,
                            score: None,
                            ref_length: p.ref_length,
                        })
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        let file = PoseDatasetFile {
            version: DATASET_VERSION,
            skeleton,
            dim: spec.dim,
            images,
        };
        file.validate()?;
        Ok(file)
    }

    /// `images` holds `(id, height, width, predictions)`.
    pub fn from_predictions(
        skeleton: SkeletonRef,
        spec: &SkeletonSpec,
        images: &[(String, usize, usize, Vec<DecodedPose>)],
    ) -> Result<Self> {
        let images = images
            .iter()
            .map(|(id, h, w, preds)| {
                check_image_id(id)?;
                Ok(ImageRecord {
                    id: id.clone(),
                    width: *w,
                    height: *h,
                    persons: preds
                        .iter()
                        .map(|d| PersonRecord {
                            joints: joint_records(&d.pose, spec),
                            root: Some(root_record(&d.root, spec.dim)),
                            score: Some(d.score),
                            ref_length: None,
                        })
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        let file = PoseDatasetFile {
            version: DATASET_VERSION,
            skeleton,
            dim: spec.dim,
            images,
        };
        file.validate()?;
        Ok(file)
    }
}

// ---------------------------------------------------------------------------
// Map manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image_height: usize,
    pub image_width: usize,
    pub confidence: String,
    pub displacements: String,
    pub support: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_depth_support: Option<String>,
}

/// Everything `decode` needs to interpret a directory of maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub mode: Mode,
    pub skeleton: SkeletonRef,
    pub dim: Dim,
    pub k: usize,
    pub encoder: EncoderConfig,
    pub images: Vec<ManifestEntry>,
}

/// Maps of one image as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredMaps {
    pub confidence: ConfidenceMap,
    pub displacements: DisplacementMapStack,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::InvalidData(format!("unsupported manifest version {}", m.version)));
        }
        m.encoder.validate()?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        write_atomic(&dir.join(MANIFEST_NAME), s.as_bytes())
    }
}

/// Writes the tensors of one image and returns its manifest entry.
pub fn write_maps(
    dir: &Path,
    id: &str,
    image_dims: (usize, usize),
    conf: &ConfidenceMap,
    disp: &DisplacementMapStack,
) -> Result<ManifestEntry> {
    check_image_id(id)?;
    let (h, w) = (conf.height, conf.width);
    let d = disp.dim.len();
    let name = |suffix: &str| format!("{id}.{suffix}.spmt");
    let mut entry = ManifestEntry {
        id: id.to_string(),
        image_height: image_dims.0,
        image_width: image_dims.1,
        confidence: name("conf"),
        displacements: name("disp"),
        support: name("support"),
        root_depth: None,
        root_depth_support: None,
    };
    Tensor::from_f64(vec![h, w], &conf.values)?.write(&dir.join(&entry.confidence))?;
    Tensor::from_f64(vec![h, w, disp.k, d], &disp.values)?.write(&dir.join(&entry.displacements))?;
    let support: Vec<f32> = disp.support.iter().map(|&s| s as f32).collect();
    Tensor::new(vec![h, w, disp.k], support)?.write(&dir.join(&entry.support))?;
    if let Some(rd) = &disp.root_depth {
        let (a, b) = (name("rootdepth"), name("rootdepth_support"));
        Tensor::from_f64(vec![h, w], &rd.values)?.write(&dir.join(&a))?;
        let s: Vec<f32> = rd.support.iter().map(|&s| s as f32).collect();
        Tensor::new(vec![h, w], s)?.write(&dir.join(&b))?;
        entry.root_depth = Some(a);
        entry.root_depth_support = Some(b);
    }
    Ok(entry)
}

fn expect_dims(t: &Tensor, dims: &[usize], what: &str) -> Result<()> {
    if t.dims != dims {
        return Err(Error::DimensionMismatch(format!("{what} has dims {:?}, expected {dims:?}", t.dims)));
    }
    Ok(())
}

fn counts(t: &Tensor, what: &str) -> Result<Vec<u32>> {
    t.data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                Ok(v as u32)
            } else {
                Err(Error::InvalidData(format!("{what} holds non-count value {v}")))
            }
        })
        .collect()
}

pub fn read_maps(dir: &Path, manifest: &Manifest, entry: &ManifestEntry) -> Result<StoredMaps> {
    let (h, w) = (manifest.encoder.map_height, manifest.encoder.map_width);
    let d = manifest.dim.len();
    let conf = Tensor::read(&dir.join(&entry.confidence))?;
    expect_dims(&conf, &[h, w], &entry.confidence)?;
    let disp = Tensor::read(&dir.join(&entry.displacements))?;
    expect_dims(&disp, &[h, w, manifest.k, d], &entry.displacements)?;
    let support = Tensor::read(&dir.join(&entry.support))?;
    expect_dims(&support, &[h, w, manifest.k], &entry.support)?;
    let root_depth = match (&entry.root_depth, &entry.root_depth_support) {
        (Some(a), Some(b)) => {
            let v = Tensor::read(&dir.join(a))?;
            expect_dims(&v, &[h, w], a)?;
            let s = Tensor::read(&dir.join(b))?;
            expect_dims(&s, &[h, w], b)?;
            Some(RootDepthMap {
                values: v.to_f64(),
                support: counts(&s, b)?,
            })
        }
        (None, None) => None,
        _ => {
            return Err(Error::InvalidData(format!(
                "image `{}` lists only half of its root-depth maps",
                entry.id
            )))
        }
    };
    Ok(StoredMaps {
        confidence: ConfidenceMap {
            height: h,
            width: w,
            values: conf.to_f64(),
        },
        displacements: DisplacementMapStack {
            height: h,
            width: w,
            dim: manifest.dim,
            k: manifest.k,
            mode: manifest.mode,
            values: disp.to_f64(),
            support: counts(&support, &entry.support)?,
            root_depth,
        },
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub seed: u64,
    pub epoch: usize,
    /// Precision the model was trained in; tensors are stored as f32.
    pub trained_dtype: String,
    pub tensors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonRef>,
}

/// `"SPMK" | u32 version | u32 header length | header JSON | tensors`, the
/// tensors in header order, each a complete map tensor record.
pub fn checkpoint_bytes<T: Real>(model: &ToyRegressor<T>, header: &CheckpointHeader) -> Result<Vec<u8>> {
    let mut header = header.clone();
    header.architecture = model.arch.clone();
    header.trained_dtype = T::NAME.to_string();
    header.tensors = model.layout().iter().map(|s| s.name.clone()).collect();
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for spec in model.layout() {
        let data = model.tensor(&spec.name).expect("layout tensor exists");
        let t = Tensor::new(spec.shape.clone(), data.iter().map(|v| v.f64() as f32).collect())?;
        out.extend_from_slice(&t.to_bytes());
    }
    Ok(out)
}

pub fn parse_checkpoint<T: Real>(bytes: &[u8]) -> Result<(ToyRegressor<T>, CheckpointHeader)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = cur.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(cur.take(len)?).map_err(|source| Error::Json {
        path: "checkpoint header".into(),
        source,
    })?;
    let mut pos = cur.pos;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for name in &header.tensors {
        let (t, used) = Tensor::read_prefix(&bytes[pos..])?;
        pos += used;
        tensors.push((name.clone(), t.dims, t.data.iter().map(|&v| T::of(v as f64)).collect()));
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - pos)));
    }
    let model = ToyRegressor::from_tensors(header.architecture.clone(), &tensors)?;
    Ok((model, header))
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &ToyRegressor<T>, header: &CheckpointHeader) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model, header)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ToyRegressor<T>, CheckpointHeader)> {
    parse_checkpoint(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn shared_spec(r: &SkeletonRef) -> Result<Arc<SkeletonSpec>> {
    r.resolve().map(Arc::new)
}
