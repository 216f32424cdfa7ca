//! Toy two-branch, multi-stage regressor with hand-written gradients.
//!
//! Each stage is three 3x3 "same" convolutions with ReLU, followed by a
//! 1x1 confidence head (sigmoid) and a 1x1 displacement head (linear,
//! `d * K` channels, joint-major then component). Stage `t > 1` sees the
//! previous stage's last feature map concatenated with its two outputs.
//!
//! This is a deliberately plain stride-1 stack, not an Hourglass backbone:
//! it exists to show the confidence and displacement heads train end to end.
//!
//! Tensors are channel-major (`C x H x W`). Convolutions go through im2col
//! and a single GEMM.

use std::fmt::Debug;
use std::sync::Arc;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::decoder::{decode, DecodedPose, NmsParams};
use crate::encoder::{encode_scene, ConfidenceMap, DisplacementMapStack, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossConfig, StageGrad};
use crate::skeleton::{Dim, SkeletonSpec};
use crate::synth::{Image, SynthScene};

/// Scalar type the regressor can run in.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    /// Tag stored in checkpoints.
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with explicit strides.
    ///
    /// # Safety
    ///
    /// Every index reachable through the dims and strides must lie inside
    /// the buffers behind `a`, `b` and `c`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

/// `c (m x n) = op(a) * op(b)`, optionally added onto `c`. Row-major storage;
/// a transposed operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, c: &mut [T], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, dil: usize, cols: &mut [T]) {
    let hw = h * w;
    let dil = dil as isize;
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = ci * 9 + (ky * 3 + kx) as usize;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (dy, dx) = ((ky - 1) * dil, (kx - 1) * dil);
                for y in 0..h as isize {
                    let sy = y + dy;
                    let out = &mut dst[y as usize * w..(y as usize + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize { T::zero() } else { line[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, dil: usize, dx_out: &mut [T]) {
    let hw = h * w;
    let dil = dil as isize;
    dx_out.fill(T::zero());
    for ci in 0..c {
        let dst = &mut dx_out[ci * hw..(ci + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = ci * 9 + (ky * 3 + kx) as usize;
                let src = &cols[row * hw..(row + 1) * hw];
                let (dy, ddx) = ((ky - 1) * dil, (kx - 1) * dil);
                for y in 0..h as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let line = &src[y as usize * w..(y as usize + 1) * w];
                    let target = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    for (x, &g) in line.iter().enumerate() {
                        let sx = x as isize + ddx;
                        if sx >= 0 && sx < w as isize {
                            target[sx as usize] = target[sx as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub stages: usize,
    pub widths: [usize; 3],
    /// Dilation of each 3x3 convolution; widens the receptive field without
    /// changing the parameter count.
    pub dilations: [usize; 3],
    pub in_channels: usize,
    pub k: usize,
    pub dim: Dim,
    pub mode: Mode,
}

impl Architecture {
    pub fn new(k: usize, dim: Dim, mode: Mode) -> Self {
        Architecture {
            stages: 2,
            widths: [16, 32, 32],
            dilations: [1, 2, 4],
            in_channels: 3,
            k,
            dim,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.k == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument("stages, k and in_channels must be positive".into()));
        }
        if self.widths.contains(&0) || self.dilations.contains(&0) {
            return Err(Error::InvalidArgument("widths and dilations must be positive".into()));
        }
        Ok(())
    }

    pub fn disp_channels(&self) -> usize {
        self.k * self.dim.len()
    }

    fn stage_inputs(&self, stage: usize) -> usize {
        if stage == 0 {
            self.in_channels
        } else {
            self.widths[2] + 1 + self.disp_channels()
        }
    }

    /// Spatial reach of one output cell, in cells, summed over stages.
    pub fn receptive_radius(&self) -> usize {
        self.stages * self.dilations.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct StageOffsets {
    conv_w: [usize; 3],
    conv_b: [usize; 3],
    conf_w: usize,
    conf_b: usize,
    disp_w: usize,
    disp_b: usize,
}

fn build_layout(arch: &Architecture) -> (Vec<ParamSpec>, Vec<StageOffsets>) {
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let len = shape.iter().product();
        specs.push(ParamSpec { name, shape, offset, len });
        offset += len;
        offset - len
    };
    let mut stages = Vec::new();
    for t in 0..arch.stages {
        let mut cin = arch.stage_inputs(t);
        let mut conv_w = [0; 3];
        let mut conv_b = [0; 3];
        for l in 0..3 {
            let cout = arch.widths[l];
            conv_w[l] = push(format!("stage{}.conv{}.weight", t + 1, l + 1), vec![cout, cin, 3, 3]);
            conv_b[l] = push(format!("stage{}.conv{}.bias", t + 1, l + 1), vec![cout]);
            cin = cout;
        }
        let conf_w = push(format!("stage{}.conf.weight", t + 1), vec![1, cin]);
        let conf_b = push(format!("stage{}.conf.bias", t + 1), vec![1]);
        let disp_w = push(format!("stage{}.disp.weight", t + 1), vec![arch.disp_channels(), cin]);
        let disp_b = push(format!("stage{}.disp.bias", t + 1), vec![arch.disp_channels()]);
        stages.push(StageOffsets {
            conv_w,
            conv_b,
            conf_w,
            conf_b,
            disp_w,
            disp_b,
        });
    }
    (specs, stages)
}

#[derive(Debug, Clone)]
pub struct ToyRegressor<T: Real> {
    pub arch: Architecture,
    pub params: Vec<T>,
    layout: Vec<ParamSpec>,
    offsets: Vec<StageOffsets>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
struct StageCache<T> {
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    conf: Vec<T>,
    disp: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub height: usize,
    pub width: usize,
    stages: Vec<StageCache<T>>,
}

impl<T: Real> ForwardPass<T> {
    pub fn stages(&self) -> usize {
        self.stages.len()
    }

    /// Raw confidence (`H*W`) and displacement (`dK x H*W`) of a stage.
    pub fn raw(&self, stage: usize) -> (&[T], &[T]) {
        (&self.stages[stage].conf, &self.stages[stage].disp)
    }
}

impl<T: Real> ToyRegressor<T> {
    /// Glorot-uniform kernels, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        for spec in &model.layout {
            if !spec.name.ends_with(".weight") {
                continue;
            }
            let rf: usize = spec.shape[2..].iter().product();
            let (fan_in, fan_out) = (spec.shape[1] * rf, spec.shape[0] * rf);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut model.params[spec.offset..spec.offset + spec.len] {
                *p = T::of(rng.random_range(-a..a));
            }
        }
        Ok(model)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (layout, offsets) = build_layout(&arch);
        let n = layout.last().map_or(0, |s| s.offset + s.len);
        Ok(ToyRegressor {
            arch,
            params: vec![T::zero(); n],
            layout,
            offsets,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.params[s.offset..s.offset + s.len])
    }

    /// Rebuilds a model from named tensors; every tensor of the layout must be
    /// present with the right shape.
    pub fn from_tensors(arch: Architecture, tensors: &[(String, Vec<usize>, Vec<T>)]) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        if tensors.len() != model.layout.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                tensors.len(),
                model.layout.len()
            )));
        }
        for spec in model.layout.clone() {
            let (_, shape, data) = tensors
                .iter()
                .find(|(n, _, _)| *n == spec.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{}`", spec.name)))?;
            if *shape != spec.shape || data.len() != spec.len {
                return Err(Error::Format(format!(
                    "tensor `{}` has shape {shape:?}, expected {:?}",
                    spec.name, spec.shape
                )));
            }
            model.params[spec.offset..spec.offset + spec.len].copy_from_slice(data);
        }
        Ok(model)
    }

    /// Runs every stage on a channel-major input of `in_channels x h x w`.
    pub fn forward_chw(&self, input: &[T], h: usize, w: usize) -> Result<ForwardPass<T>> {
        let a = &self.arch;
        if h == 0 || w == 0 || input.len() != a.in_channels * h * w {
            return Err(Error::DimensionMismatch(format!(
                "input has {} values, expected {} x {h} x {w}",
                input.len(),
                a.in_channels
            )));
        }
        let hw = h * w;
        let dk = a.disp_channels();
        let mut stages: Vec<StageCache<T>> = Vec::with_capacity(a.stages);
        for t in 0..a.stages {
            let off = self.offsets[t];
            let stage_input: Vec<T>;
            let mut x: &[T] = if t == 0 {
                input
            } else {
                let prev = &stages[t - 1];
                let mut v = Vec::with_capacity(a.stage_inputs(t) * hw);
                v.extend_from_slice(&prev.acts[2]);
                v.extend_from_slice(&prev.conf);
                v.extend_from_slice(&prev.disp);
                stage_input = v;
                &stage_input
            };
            let mut cin = a.stage_inputs(t);
            let mut cols: [Vec<T>; 3] = Default::default();
            let mut acts: [Vec<T>; 3] = Default::default();
            for l in 0..3 {
                let cout = a.widths[l];
                let mut c = vec![T::zero(); cin * 9 * hw];
                im2col(x, cin, h, w, a.dilations[l], &mut c);
                let mut z = vec![T::zero(); cout * hw];
                matmul(cout, cin * 9, hw, &self.params[off.conv_w[l]..], false, &c, false, &mut z, false);
                for (o, row) in z.chunks_mut(hw).enumerate() {
                    let b = self.params[off.conv_b[l] + o];
                    row.iter_mut().for_each(|v| *v = (*v + b).max(T::zero()));
                }
                cols[l] = c;
                acts[l] = z;
                x = &acts[l];
                cin = cout;
            }
            let mut conf = vec![T::zero(); hw];
            matmul(1, cin, hw, &self.params[off.conf_w..], false, x, false, &mut conf, false);
            let cb = self.params[off.conf_b];
            conf.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-(*v + cb)).exp()));
            let mut disp = vec![T::zero(); dk * hw];
            matmul(dk, cin, hw, &self.params[off.disp_w..], false, x, false, &mut disp, false);
            for (o, row) in disp.chunks_mut(hw).enumerate() {
                let b = self.params[off.disp_b + o];
                row.iter_mut().for_each(|v| *v = *v + b);
            }
            stages.push(StageCache { cols, acts, conf, disp });
        }
        Ok(ForwardPass {
            height: h,
            width: w,
            stages,
        })
    }

    pub fn forward(&self, image: &Image) -> Result<ForwardPass<T>> {
        if self.arch.in_channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} input channels, images have 3",
                self.arch.in_channels
            )));
        }
        self.forward_chw(&image_to_chw(image), image.height, image.width)
    }

    /// Per-stage predictions as map types.
    pub fn outputs(&self, pass: &ForwardPass<T>) -> Result<Vec<(ConfidenceMap, DisplacementMapStack)>> {
        let (h, w) = (pass.height, pass.width);
        let hw = h * w;
        let dk = self.arch.disp_channels();
        pass.stages
            .iter()
            .map(|s| {
                let conf = ConfidenceMap {
                    height: h,
                    width: w,
                    values: s.conf.iter().map(|v| v.f64()).collect(),
                };
                let mut values = vec![0.0; hw * dk];
                for ch in 0..dk {
                    for p in 0..hw {
                        values[p * dk + ch] = s.disp[ch * hw + p].f64();
                    }
                }
                let disp = DisplacementMapStack::dense(h, w, self.arch.dim, self.arch.k, self.arch.mode, values)?;
                Ok((conf, disp))
            })
            .collect()
    }

    pub fn predict(&self, image: &Image) -> Result<Vec<(ConfidenceMap, DisplacementMapStack)>> {
        let pass = self.forward(image)?;
        self.outputs(&pass)
    }

    /// Parameter gradients given loss gradients with respect to every
    /// stage's outputs (confidence values and displacement stack entries).
    pub fn backward(&self, pass: &ForwardPass<T>, grads: &[StageGrad]) -> Result<Vec<T>> {
        let a = &self.arch;
        let (h, w) = (pass.height, pass.width);
        let hw = h * w;
        let dk = a.disp_channels();
        if grads.len() != pass.stages.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} stage gradients for {} stages",
                grads.len(),
                pass.stages.len()
            )));
        }
        for g in grads {
            if g.conf.len() != hw || g.disp.len() != hw * dk {
                return Err(Error::DimensionMismatch("stage gradient does not match map size".into()));
            }
        }
        let mut out = vec![T::zero(); self.params.len()];
        // gradient flowing into stage t's outputs from stage t + 1's input
        let mut carry: Option<Vec<T>> = None;
        for t in (0..a.stages).rev() {
            let off = self.offsets[t];
            let s = &pass.stages[t];
            let feat = a.widths[2];
            let mut d_logit: Vec<T> = (0..hw)
                .map(|p| {
                    let y = s.conf[p];
                    let mut g = T::of(grads[t].conf[p]);
                    if let Some(c) = &carry {
                        g = g + c[feat * hw + p];
                    }
                    g * y * (T::one() - y)
                })
                .collect();
            let mut d_disp = vec![T::zero(); dk * hw];
            for ch in 0..dk {
                for p in 0..hw {
                    d_disp[ch * hw + p] = T::of(grads[t].disp[p * dk + ch]);
                }
            }
            if let Some(c) = &carry {
                let extra = &c[(feat + 1) * hw..];
                d_disp.iter_mut().zip(extra).for_each(|(d, e)| *d = *d + *e);
            }
            let x3 = &s.acts[2];
            matmul(
                1,
                hw,
                feat,
                &d_logit,
                false,
                x3,
                true,
                &mut out[off.conf_w..off.conf_w + feat],
                true,
            );
            out[off.conf_b] = out[off.conf_b] + sum(&d_logit);
            matmul(
                dk,
                hw,
                feat,
                &d_disp,
                false,
                x3,
                true,
                &mut out[off.disp_w..off.disp_w + dk * feat],
                true,
            );
            for (o, row) in d_disp.chunks(hw).enumerate() {
                out[off.disp_b + o] = out[off.disp_b + o] + sum(row);
            }
            let mut dx = vec![T::zero(); feat * hw];
            matmul(feat, 1, hw, &self.params[off.conf_w..], true, &d_logit, false, &mut dx, false);
            matmul(feat, dk, hw, &self.params[off.disp_w..], true, &d_disp, false, &mut dx, true);
            if let Some(c) = &carry {
                dx.iter_mut().zip(&c[..feat * hw]).for_each(|(d, e)| *d = *d + *e);
            }
            d_logit.clear();
            let mut next_carry = None;
            for l in (0..3).rev() {
                let cout = a.widths[l];
                let cin = if l == 0 { a.stage_inputs(t) } else { a.widths[l - 1] };
                for (d, act) in dx.iter_mut().zip(&s.acts[l]) {
                    if *act <= T::zero() {
                        *d = T::zero();
                    }
                }
                let wlen = cout * cin * 9;
                matmul(
                    cout,
                    hw,
                    cin * 9,
                    &dx,
                    false,
                    &s.cols[l],
                    true,
                    &mut out[off.conv_w[l]..off.conv_w[l] + wlen],
                    true,
                );
                for (o, row) in dx.chunks(hw).enumerate() {
                    out[off.conv_b[l] + o] = out[off.conv_b[l] + o] + sum(row);
                }
                if l == 0 && t == 0 {
                    break;
                }
                let mut dcols = vec![T::zero(); cin * 9 * hw];
                matmul(
                    cin * 9,
                    cout,
                    hw,
                    &self.params[off.conv_w[l]..],
                    true,
                    &dx,
                    false,
                    &mut dcols,
                    false,
                );
                let mut din = vec![T::zero(); cin * hw];
                col2im(&dcols, cin, h, w, a.dilations[l], &mut din);
                if l == 0 {
                    next_carry = Some(din);
                    break;
                }
                dx = din;
            }
            carry = next_carry;
        }
        Ok(out)
    }
}

fn sum<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, &v| acc + v)
}

pub fn image_to_chw<T: Real>(image: &Image) -> Vec<T> {
    let hw = image.height * image.width;
    let mut out = vec![T::zero(); 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            out[c * hw + p] = T::of(image.data[p * 3 + c] as f64);
        }
    }
    out
}

/// One training example: an image and its encoded targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub confidence: ConfidenceMap,
    pub displacements: DisplacementMapStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decay {
    Constant,
    /// `lr * gamma^epoch`
    Exponential {
        gamma: f64,
    },
    /// `lr * gamma^(epoch / every)`
    Step {
        every: usize,
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay: Decay,
    pub epochs: usize,
    pub seed: u64,
    /// Moving-average coefficient of the squared gradient.
    pub rho: f64,
    pub epsilon: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            decay: Decay::Constant,
            epochs: 500,
            seed: 0,
            rho: 0.99,
            epsilon: 1e-8,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("rho must lie in [0, 1) and epsilon be positive".into()));
        }
        match self.decay {
            Decay::Step { every: 0, .. } => return Err(Error::InvalidArgument("decay step must be positive".into())),
            Decay::Exponential { gamma } | Decay::Step { gamma, .. } if !(gamma > 0.0) => {
                return Err(Error::InvalidArgument("decay factor must be positive".into()))
            }
            _ => {}
        }
        self.loss.validate()
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.decay {
            Decay::Constant => self.learning_rate,
            Decay::Exponential { gamma } => self.learning_rate * gamma.powi(epoch as i32),
            Decay::Step { every, gamma } => self.learning_rate * gamma.powi((epoch / every) as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training loss over the epoch, measured before each update.
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<f64>,
    pub stopped_early: bool,
}

fn check_full_resolution(cfg: &EncoderConfig, h: usize, w: usize) -> Result<()> {
    if cfg.stride != 1 || cfg.map_height != h || cfg.map_width != w {
        return Err(Error::DimensionMismatch(format!(
            "the regressor predicts {h}x{w} maps at stride 1, encoder is configured for {}x{} at stride {}",
            cfg.map_height, cfg.map_width, cfg.stride
        )));
    }
    Ok(())
}

/// Encodes rendered scenes into training samples.
pub fn samples_from_scenes(scenes: &[SynthScene], spec: &Arc<SkeletonSpec>, mode: Mode, cfg: &EncoderConfig) -> Result<Vec<Sample>> {
    scenes
        .iter()
        .map(|s| {
            let image = s
                .image
                .clone()
                .ok_or_else(|| Error::InvalidArgument("training scenes must be rendered".into()))?;
            check_full_resolution(cfg, image.height, image.width)?;
            let enc = encode_scene(&s.scene, spec, mode, cfg)?;
            Ok(Sample {
                image,
                confidence: enc.confidence,
                displacements: enc.displacements,
            })
        })
        .collect()
}

/// Decodes the final stage's maps into poses.
pub fn predict_poses<T: Real>(
    model: &ToyRegressor<T>,
    image: &Image,
    spec: &SkeletonSpec,
    cfg: &EncoderConfig,
    nms: &NmsParams,
) -> Result<Vec<DecodedPose>> {
    check_full_resolution(cfg, image.height, image.width)?;
    let preds = model.predict(image)?;
    let (conf, disp) = preds.last().expect("at least one stage");
    decode(conf, disp, cfg, (image.height, image.width), spec, nms)
}

/// Loss and parameter gradient of one sample.
pub fn sample_gradient<T: Real>(model: &ToyRegressor<T>, sample: &Sample, loss: &LossConfig) -> Result<(f64, Vec<T>)> {
    let pass = model.forward(&sample.image)?;
    let preds = model.outputs(&pass)?;
    let total = total_loss(&preds, (&sample.confidence, &sample.displacements), loss)?;
    let grads = model.backward(&pass, &total.grads)?;
    Ok((total.value, grads))
}

/// RMSprop, one update per sample, samples visited in a seeded shuffled
/// order each epoch. `on_epoch` runs after every epoch and may stop training.
pub fn train_toy<T: Real>(
    model: &mut ToyRegressor<T>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &ToyRegressor<T>) -> Control,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(cfg.seed);
    let mut ms = vec![T::zero(); model.params.len()];
    let (rho, one_minus) = (T::of(cfg.rho), T::of(1.0 - cfg.rho));
    let eps = T::of(cfg.epsilon);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = vec![0.0; data.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = T::of(cfg.rate_at(epoch));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for &i in &order {
            let (value, grads) = sample_gradient(model, &data[i], &cfg.loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            losses[i] = value;
            for ((p, m), g) in model.params.iter_mut().zip(&mut ms).zip(&grads) {
                *m = rho * *m + one_minus * *g * *g;
                *p = *p - lr * *g / (m.sqrt() + eps);
            }
        }
        // summed in sample order so the value does not depend on the shuffle
        let mean = losses.iter().sum::<f64>() / data.len() as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.push(mean);
        let report = EpochReport {
            epoch,
            loss: mean,
            learning_rate: cfg.rate_at(epoch),
        };
        if on_epoch(&report, model) == Control::Stop {
            return Ok(TrainOutcome {
                history,
                stopped_early: true,
            });
        }
    }
    Ok(TrainOutcome {
        history,
        stopped_early: false,
    })
}
