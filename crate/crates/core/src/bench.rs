//! Decode latency measurements.
//!
//! Maps are built in memory before the clock starts, so timings cover the
//! decoder alone. Every latency carries a machine descriptor.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoder::{decode, DecodedPose, NmsParams};
use crate::encoder::{normalization_factor, ConfidenceMap, DisplacementMapStack, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::skeleton::{Dim, SkeletonSpec};

/// Decoder inputs for one synthetic frame.
#[derive(Debug, Clone)]
pub struct BenchInput {
    pub confidence: ConfidenceMap,
    pub displacements: DisplacementMapStack,
    pub encoder: EncoderConfig,
    pub spec: SkeletonSpec,
}

/// A flat skeleton of `k` joints hanging off the root.
fn flat_skeleton(k: usize) -> SkeletonSpec {
    SkeletonSpec {
        name: format!("bench{k}"),
        dim: Dim::Two,
        joint_names: (0..k).map(|j| format!("j{j}")).collect(),
        hierarchy_level: vec![2; k],
        parent: vec![None; k],
    }
}

/// Root positions on a regular lattice, one per cell of a
/// `ceil(sqrt(n))`-wide grid.
fn lattice(h: usize, w: usize, n: usize) -> Vec<(f64, f64)> {
    let side = (n as f64).sqrt().ceil().max(1.0) as usize;
    let (dx, dy) = (w as f64 / side as f64, h as f64 / side as f64);
    (0..n)
        .map(|i| ((i % side) as f64 * dx + dx / 2.0, (i / side) as f64 * dy + dy / 2.0))
        .map(|(x, y)| (x.floor(), y.floor()))
        .collect()
}

/// `n` separated Gaussian peaks and a dense displacement stack whose vectors
/// point a fixed offset away from each cell.
pub fn bench_input(height: usize, width: usize, k: usize, n: usize) -> Result<BenchInput> {
    if height == 0 || width == 0 || k == 0 {
        return Err(Error::InvalidArgument("height, width and k must be positive".into()));
    }
    let sigma = 2.0;
    let roots = lattice(height, width, n);
    let mut conf = ConfidenceMap::zeros(height, width);
    for row in 0..height {
        for col in 0..width {
            let v = roots
                .iter()
                .map(|&(x, y)| {
                    let d2 = (col as f64 - x).powi(2) + (row as f64 - y).powi(2);
                    (-d2 / (sigma * sigma)).exp()
                })
                .fold(0.0, f64::max);
            conf.values[row * width + col] = v;
        }
    }
    let z = normalization_factor(height, width)?;
    let mut values = vec![0.0; height * width * k * 2];
    for (i, v) in values.iter_mut().enumerate() {
        let j = (i / 2) % k;
        *v = if i % 2 == 0 { (j % 5) as f64 / z } else { (j / 5) as f64 / z };
    }
    let displacements = DisplacementMapStack::dense(height, width, Dim::Two, k, Mode::Vanilla, values)?;
    let mut encoder = EncoderConfig::for_image(height, width, 1);
    encoder.sigma = sigma;
    Ok(BenchInput {
        confidence: conf,
        displacements,
        encoder,
        spec: flat_skeleton(k),
    })
}

impl BenchInput {
    pub fn decode(&self, nms: &NmsParams) -> Result<Vec<DecodedPose>> {
        decode(
            &self.confidence,
            &self.displacements,
            &self.encoder,
            (self.encoder.map_height, self.encoder.map_width),
            &self.spec,
            nms,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyStats {
    pub reps: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    /// Standard deviation over mean.
    pub cv: f64,
}

impl LatencyStats {
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::InvalidArgument("no timing samples".into()));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Ok(LatencyStats {
            reps: n,
            min_ms: s[0],
            median_ms: median,
            mean_ms: mean,
            max_ms: s[n - 1],
            cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeBench {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub n: usize,
    pub detected: usize,
    pub stats: LatencyStats,
}

/// Times `reps` decodes of one pre-built frame after one untimed warm-up.
pub fn benchmark_decode(height: usize, width: usize, k: usize, n: usize, reps: usize) -> Result<(DecodeBench, Vec<DecodedPose>)> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let input = bench_input(height, width, k, n)?;
    let nms = NmsParams::default();
    let poses = input.decode(&nms)?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let out = input.decode(&nms)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let bench = DecodeBench {
        height,
        width,
        k,
        n,
        detected: poses.len(),
        stats: LatencyStats::from_samples(&samples)?,
    };
    Ok((bench, poses))
}

/// Decodes per second with `workers` threads decoding copies of one frame.
pub fn parallel_throughput(height: usize, width: usize, k: usize, n: usize, workers: usize, frames: usize) -> Result<f64> {
    use rayon::prelude::*;
    if workers == 0 || frames == 0 {
        return Err(Error::InvalidArgument("workers and frames must be positive".into()));
    }
    let input = bench_input(height, width, k, n)?;
    let nms = NmsParams::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let t = Instant::now();
    pool.install(|| (0..frames).into_par_iter().try_for_each(|_| input.decode(&nms).map(drop)))?;
    Ok(frames as f64 / t.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub cpu: String,
    pub logical_cpus: usize,
    pub workers: usize,
    pub profile: String,
}

impl Machine {
    pub fn detect(workers: usize) -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Machine {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpu,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            workers,
            profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingGrid {
    pub resolutions: Vec<(usize, usize)>,
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub reps: usize,
}

impl Default for ScalingGrid {
    fn default() -> Self {
        ScalingGrid {
            resolutions: vec![(64, 64), (96, 96)],
            ks: vec![8, 16],
            ns: vec![1, 2, 4, 8, 16],
            reps: 100,
        }
    }
}

impl ScalingGrid {
    /// N in {1, 2, 4, 8, 16} at two or more resolutions.
    pub fn covers_minimum(&self) -> bool {
        self.resolutions.len() >= 2 && [1, 2, 4, 8, 16].iter().all(|n| self.ns.contains(n))
    }
}

/// Least-squares line `latency = intercept + slope * n * k` at one
/// resolution and one K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearFit {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub slope_ms_per_nk: f64,
    pub intercept_ms: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("a fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, intercept, r2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub machine: Machine,
    pub grid: ScalingGrid,
    pub cells: Vec<DecodeBench>,
    pub fits: Vec<LinearFit>,
}

/// Target duration of one timed batch in the scaling study.
const BATCH_TARGET_MS: f64 = 0.2;

/// Decodes per timed batch so one batch lasts about `BATCH_TARGET_MS`.
fn calibrate(input: &BenchInput, nms: &NmsParams) -> Result<usize> {
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let t = Instant::now();
        std::hint::black_box(input.decode(nms)?);
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(((BATCH_TARGET_MS / best.max(1e-6)).ceil() as usize).clamp(1, 10_000))
}

/// Every cell is sampled `grid.reps` times, cells visited round-robin so slow
/// drifts in machine load spread evenly. One sample is the mean latency of a
/// batch of decodes.
pub fn run_scaling_study(grid: &ScalingGrid) -> Result<BenchReport> {
    if grid.resolutions.is_empty() || grid.ks.is_empty() || grid.ns.is_empty() {
        return Err(Error::InvalidArgument("scaling grid is empty".into()));
    }
    if grid.reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let nms = NmsParams::default();
    let mut cells = Vec::new();
    for &(h, w) in &grid.resolutions {
        for &k in &grid.ks {
            for &n in &grid.ns {
                let input = bench_input(h, w, k, n)?;
                let detected = input.decode(&nms)?.len();
                let batch = calibrate(&input, &nms)?;
                cells.push(((h, w, k, n, detected), input, batch, Vec::with_capacity(grid.reps)));
            }
        }
    }
    for _ in 0..grid.reps {
        for (_, input, batch, samples) in cells.iter_mut() {
            let t = Instant::now();
            for _ in 0..*batch {
                std::hint::black_box(input.decode(&nms)?);
            }
            samples.push(t.elapsed().as_secs_f64() * 1e3 / *batch as f64);
        }
    }
    let cells = cells
        .into_iter()
        .map(|((height, width, k, n, detected), _, _, samples)| {
            Ok(DecodeBench {
                height,
                width,
                k,
                n,
                detected,
                stats: LatencyStats::from_samples(&samples)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fits = Vec::new();
    for &(h, w) in &grid.resolutions {
        for &k in &grid.ks {
            let row: Vec<&DecodeBench> = cells.iter().filter(|c| (c.height, c.width, c.k) == (h, w, k)).collect();
            let xs: Vec<f64> = row.iter().map(|c| (c.detected * k) as f64).collect();
            let ys: Vec<f64> = row.iter().map(|c| c.stats.median_ms).collect();
            if let Ok((slope, intercept, r2)) = linear_fit(&xs, &ys) {
                fits.push(LinearFit {
                    height: h,
                    width: w,
                    k,
                    slope_ms_per_nk: slope,
                    intercept_ms: intercept,
                    r2,
                });
            }
        }
    }
    Ok(BenchReport {
        machine: Machine::detect(1),
        grid: grid.clone(),
        cells,
        fits,
    })
}

impl BenchReport {
    pub fn cell(&self, height: usize, width: usize, k: usize, n: usize) -> Option<&DecodeBench> {
        self.cells.iter().find(|c| (c.height, c.width, c.k, c.n) == (height, width, k, n))
    }

    pub fn fit(&self, height: usize, width: usize, k: usize) -> Option<&LinearFit> {
        self.fits.iter().find(|f| (f.height, f.width, f.k) == (height, width, k))
    }
}

impl BenchReport {
    /// Aligned plain-text table of the grid.
    pub fn summary(&self) -> String {
        use std::fmt::Write as _;
        let m = &self.machine;
        let mut s = format!(
            "machine: {} / {} / {} ({} logical cpus, {} worker, {} build)\n",
            m.os, m.arch, m.cpu, m.logical_cpus, m.workers, m.profile
        );
        let _ = writeln!(
            s,
            "{:>9} {:>4} {:>4} {:>5} {:>10} {:>10} {:>10} {:>7}",
            "res", "K", "N", "found", "min ms", "median ms", "mean ms", "cv"
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:>9} {:>4} {:>4} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>7.3}",
                format!("{}x{}", c.height, c.width),
                c.k,
                c.n,
                c.detected,
                c.stats.min_ms,
                c.stats.median_ms,
                c.stats.mean_ms,
                c.stats.cv
            );
        }
        for f in &self.fits {
            let _ = writeln!(
                s,
                "fit {}x{} K={}: {:.3e} ms per N*K, intercept {:.4} ms, R^2 {:.4}",
                f.height, f.width, f.k, f.slope_ms_per_nk, f.intercept_ms, f.r2
            );
        }
        s
    }
}
