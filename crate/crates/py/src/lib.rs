//! Python bindings: synthesise datasets, encode them into confidence and
//! displacement maps, decode maps back into poses and score predictions.
//!
//! Datasets cross the boundary as pose-dataset JSON text, maps as flat
//! row-major lists.

use std::collections::HashMap;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spm_core::decoder::{decode as decode_maps, NmsParams};
use spm_core::encoder::{encode_scene, EncodedScene, EncoderConfig, Mode};
use spm_core::error::ErrorClass;
use spm_core::eval::{mean_ap, pck3d};
use spm_core::experiments::{run_roundtrip, RoundtripConfig};
use spm_core::io::{PoseDatasetFile, SkeletonRef};
use spm_core::skeleton::SkeletonSpec;
use spm_core::synth::{generate_scene, SynthConfig};
use spm_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.class() {
        ErrorClass::Io => PyOSError::new_err(e.to_string()),
        ErrorClass::Usage | ErrorClass::Data => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(py_err)
}

fn parse_dataset(text: &str, origin: &str) -> PyResult<PoseDatasetFile> {
    PoseDatasetFile::from_json(text, origin).map_err(py_err)
}

/// Dataset JSON with `n` synthetic scenes of a preset skeleton.
#[pyfunction]
#[pyo3(signature = (seed, n = 10, height = 64, width = 64, max_persons = 3, skeleton = "mpii16"))]
fn synth(seed: u64, n: usize, height: usize, width: usize, max_persons: usize, skeleton: &str) -> PyResult<String> {
    let spec = Arc::new(SkeletonSpec::preset(skeleton).map_err(py_err)?);
    let mut cfg = SynthConfig::new(seed, height, width);
    cfg.n_persons = (1, max_persons.max(1));
    let scenes = (0..n as u64)
        .map(|i| generate_scene(&cfg, &spec, i).map(|s| (format!("img{i:04}"), s.scene)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let file = PoseDatasetFile::from_scenes(SkeletonRef::Preset(skeleton.to_string()), &spec, &scenes).map_err(py_err)?;
    Ok(file.to_json())
}

/// Encoded targets of one image.
#[pyclass(frozen)]
struct Maps {
    encoded: EncodedScene,
    encoder: EncoderConfig,
    image_dims: (usize, usize),
    spec: Arc<SkeletonSpec>,
}

#[pymethods]
impl Maps {
    #[getter]
    fn height(&self) -> usize {
        self.encoder.map_height
    }

    #[getter]
    fn width(&self) -> usize {
        self.encoder.map_width
    }

    #[getter]
    fn k(&self) -> usize {
        self.encoded.displacements.k
    }

    #[getter]
    fn mode(&self) -> String {
        self.encoded.displacements.mode.to_string()
    }

    /// `height * width` values.
    #[getter]
    fn confidence(&self) -> Vec<f64> {
        self.encoded.confidence.values.clone()
    }

    /// `height * width * k * dim` values.
    #[getter]
    fn displacements(&self) -> Vec<f64> {
        self.encoded.displacements.values.clone()
    }

    /// Contributing persons per `(row, col, joint)`.
    #[getter]
    fn support(&self) -> Vec<u32> {
        self.encoded.displacements.support.clone()
    }

    /// Decoded persons as dicts with `score`, `root` and `joints`; hidden
    /// joints are `None`.
    #[pyo3(signature = (window = 3, threshold = 0.3, max_peaks = 30, refine = false))]
    fn decode<'py>(
        &self,
        py: Python<'py>,
        window: usize,
        threshold: f64,
        max_peaks: usize,
        refine: bool,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let nms = NmsParams {
            window,
            threshold,
            max_peaks,
            refine,
        };
        let poses = decode_maps(
            &self.encoded.confidence,
            &self.encoded.displacements,
            &self.encoder,
            self.image_dims,
            &self.spec,
            &nms,
        )
        .map_err(py_err)?;
        poses
            .iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("score", p.score)?;
                d.set_item("root", p.root)?;
                let joints: Vec<Option<[f64; 3]>> = p.pose.joints.iter().map(|j| j.visible.then_some(j.pos)).collect();
                d.set_item("joints", joints)?;
                Ok(d)
            })
            .collect()
    }
}

/// Encodes image `index` of a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, index = 0, mode = "vanilla", stride = 1, sigma = 7.0, tau = 7.0))]
fn encode(dataset: &str, index: usize, mode: &str, stride: usize, sigma: f64, tau: f64) -> PyResult<Maps> {
    let mode = parse_mode(mode)?;
    if stride == 0 {
        return Err(PyValueError::new_err("stride must be at least 1"));
    }
    let file = parse_dataset(dataset, "dataset")?;
    let spec = Arc::new(file.spec().map_err(py_err)?);
    let scenes = file.to_scenes();
    let (_, scene) = scenes
        .get(index)
        .ok_or_else(|| PyValueError::new_err(format!("image index {index} out of range for {} images", scenes.len())))?;
    let mut encoder = EncoderConfig::for_image(scene.image_height, scene.image_width, stride);
    encoder.sigma = sigma;
    encoder.tau = tau;
    let encoded = encode_scene(scene, &spec, mode, &encoder).map_err(py_err)?;
    Ok(Maps {
        encoded,
        encoder,
        image_dims: (scene.image_height, scene.image_width),
        spec,
    })
}

/// Total mAP (`metric="map"`) or 3D-PCK fraction (`metric="pck3d"`) of
/// predictions against ground truth, images aligned by id.
#[pyfunction]
#[pyo3(signature = (pred, gt, metric = "map", alpha = 0.5, radius = 150.0))]
fn evaluate(pred: &str, gt: &str, metric: &str, alpha: f64, radius: f64) -> PyResult<Option<f64>> {
    let pred = parse_dataset(pred, "pred")?;
    let gt = parse_dataset(gt, "gt")?;
    let spec = gt.spec().map_err(py_err)?;
    let mut by_id: HashMap<String, _> = pred.to_predictions().map_err(py_err)?.into_iter().collect();
    let (preds, gts): (Vec<_>, Vec<_>) = gt
        .to_scenes()
        .into_iter()
        .map(|(id, scene)| (by_id.remove(&id).unwrap_or_default(), scene.persons))
        .unzip();
    if let Some(id) = by_id.keys().min() {
        return Err(PyValueError::new_err(format!("prediction image `{id}` has no ground truth")));
    }
    match metric {
        "map" => Ok(mean_ap(&preds, &gts, &spec, alpha).map_err(py_err)?.total_map),
        "pck3d" => Ok(Some(pck3d(&preds, &gts, radius).map_err(py_err)?.total)),
        other => Err(PyValueError::new_err(format!(
            "unknown metric `{other}`, expected `map` or `pck3d`"
        ))),
    }
}

/// Encode/decode round trip over `n` synthetic scenes; returns the fraction
/// of persons recovered and the largest joint error in pixels.
#[pyfunction]
#[pyo3(signature = (seed = 7, n = 50, mode = "vanilla", stride = 1, skeleton = "mpii16"))]
fn roundtrip(seed: u64, n: usize, mode: &str, stride: usize, skeleton: &str) -> PyResult<(f64, f64)> {
    let spec = Arc::new(SkeletonSpec::preset(skeleton).map_err(py_err)?);
    let mut cfg = RoundtripConfig::new(seed, n, parse_mode(mode)?);
    cfg.stride = stride;
    let report = run_roundtrip(&cfg, &spec).map_err(py_err)?;
    Ok((report.recovered_fraction(), report.max_error_px))
}

#[pymodule]
fn spm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Maps>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(roundtrip, m)?)?;
    Ok(())
}
