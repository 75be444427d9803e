//! Small convolutional backbone with an affine head.
//!
//! Three 3x3 same-padding convolutions (ReLU, 2x2 max pool after the first
//! two, global average pool after the last) feed an affine map to the output
//! grid. For the critic head the grid is `n_c x n_e`, one cell per
//! class/environment pair. All parameters live in one flat vector so the
//! optimizer and gradient checks can treat them uniformly.

mod adam;
pub mod layers;
mod scalar;

pub use adam::{AdamState, DEFAULT_LR};
pub use scalar::Scalar;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par;

/// Samples per backward chunk. Chunks are summed in order, so gradients do
/// not depend on the thread count.
const BACKWARD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub widths: [usize; 3],
}

impl Architecture {
    /// 32x32x1 input, 16/32/64 channels.
    pub fn standard(in_h: usize, in_w: usize, in_c: usize) -> Self {
        Architecture {
            in_h,
            in_w,
            in_c,
            widths: [16, 32, 64],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.widths[2]
    }

    pub fn image_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    fn validate(&self) -> Result<()> {
        if !self.in_h.is_multiple_of(4) || !self.in_w.is_multiple_of(4) || self.in_h < 4 || self.in_w < 4 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} must be a positive multiple of 4 in each dimension",
                self.in_h, self.in_w
            )));
        }
        if self.in_c == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("zero channel count".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// `n_c x n_e` critic grid.
    Critic { n_c: usize, n_e: usize },
    /// Independent logits for the binary cross-entropy baseline.
    Bxent { outputs: usize },
}

impl HeadKind {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadKind::Critic { n_c, n_e } => n_c * n_e,
            HeadKind::Bxent { outputs } => outputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

fn layout(arch: &Architecture, head: &HeadKind) -> Vec<ParamBlock> {
    let [c1, c2, c3] = arch.widths;
    let shapes: [(&'static str, Vec<usize>); 8] = [
        ("conv1.weight", vec![c1, arch.in_c, 3, 3]),
        ("conv1.bias", vec![c1]),
        ("conv2.weight", vec![c2, c1, 3, 3]),
        ("conv2.bias", vec![c2]),
        ("conv3.weight", vec![c3, c2, 3, 3]),
        ("conv3.bias", vec![c3]),
        ("head.weight", vec![head.outputs(), c3]),
        ("head.bias", vec![head.outputs()]),
    ];
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let b = ParamBlock {
                name,
                shape,
                offset,
            };
            offset += b.len();
            b
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv1W = 0,
    Conv1B,
    Conv2W,
    Conv2B,
    Conv3W,
    Conv3B,
    HeadW,
    HeadB,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    arch: Architecture,
    head: HeadKind,
    blocks: Vec<ParamBlock>,
    params: Vec<T>,
    version: u64,
}

/// Gradient with the same flat layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub values: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(len: usize) -> Self {
        Gradients {
            values: vec![T::zero(); len],
        }
    }

    fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }
}

/// Head outputs for a batch, `n_b x outputs` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs<T> {
    pub n_b: usize,
    pub outputs: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Outputs<T> {
    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.outputs..(k + 1) * self.outputs]
    }
}

struct SampleCache<T> {
    col1: Vec<T>,
    z1: Vec<T>,
    arg1: Vec<u32>,
    col2: Vec<T>,
    z2: Vec<T>,
    arg2: Vec<u32>,
    col3: Vec<T>,
    z3: Vec<T>,
    feat: Vec<T>,
}

/// Activations recorded by [`Model::forward`] for the matching backward pass.
pub struct ForwardCache<T> {
    version: u64,
    samples: Vec<SampleCache<T>>,
}

impl<T> ForwardCache<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl<T: Scalar> Model<T> {
    /// Kaiming-uniform (fan-in) weights, zero biases.
    pub fn new(arch: Architecture, head: HeadKind, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(arch, head)?;
        for b in m.blocks.clone() {
            if b.shape.len() < 2 {
                continue;
            }
            let fan_in: usize = b.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut m.params[b.range()] {
                *p = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(m)
    }

    pub fn zeros(arch: Architecture, head: HeadKind) -> Result<Self> {
        arch.validate()?;
        if head.outputs() == 0 {
            return Err(Error::InvalidArgument("head with no outputs".into()));
        }
        let blocks = layout(&arch, &head);
        let n = blocks.iter().map(ParamBlock::len).sum();
        Ok(Model {
            arch,
            head,
            blocks,
            params: vec![T::zero(); n],
            version: 0,
        })
    }

    pub fn from_params(arch: Architecture, head: HeadKind, params: Vec<T>) -> Result<Self> {
        let mut m = Self::zeros(arch, head)?;
        if params.len() != m.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                m.params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn head(&self) -> &HeadKind {
        &self.head
    }

    pub fn outputs(&self) -> usize {
        self.head.outputs()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, layer: Layer) -> &ParamBlock {
        &self.blocks[layer as usize]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.version += 1;
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn slice(&self, layer: Layer) -> &[T] {
        &self.params[self.block(layer).range()]
    }

    /// Same weights at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            head: self.head,
            blocks: self.blocks.clone(),
            params: self.params.iter().map(|&p| U::of(p.as_f64())).collect(),
            version: 0,
        }
    }

    fn check_batch(&self, images: &[f32]) -> Result<usize> {
        let n = self.arch.image_len();
        if !images.len().is_multiple_of(n) {
            return Err(Error::Shape(format!(
                "batch of {} values is not a multiple of the {}x{}x{} input",
                images.len(),
                self.arch.in_c,
                self.arch.in_h,
                self.arch.in_w
            )));
        }
        Ok(images.len() / n)
    }

    /// Head outputs without recording activations.
    pub fn predict(&self, images: &[f32]) -> Result<Outputs<T>> {
        let n_b = self.check_batch(images)?;
        let n = self.arch.image_len();
        let rows = par::map_range(n_b, |k| {
            let feat = self.features_only(&images[k * n..(k + 1) * n]);
            self.head_forward(&feat)
        });
        Ok(Outputs {
            n_b,
            outputs: self.outputs(),
            data: rows.concat(),
        })
    }

    /// Backbone features (after global average pooling) for one image.
    pub fn features(&self, image: &[f32]) -> Result<Vec<T>> {
        if image.len() != self.arch.image_len() {
            return Err(Error::Shape("image size does not match the model input".into()));
        }
        Ok(self.features_only(image))
    }

    /// ReLU signs and pooling choices for every sample, in a fixed order.
    /// Two parameter settings with equal patterns lie on the same linear
    /// piece of the network.
    pub fn activation_pattern(&self, images: &[f32]) -> Result<Vec<u32>> {
        let n_b = self.check_batch(images)?;
        let n = self.arch.image_len();
        let per = par::map_range(n_b, |k| {
            let s = self.forward_sample(&images[k * n..(k + 1) * n]);
            let mut p = Vec::with_capacity(s.z1.len() + s.z2.len() + s.z3.len() + s.arg1.len() + s.arg2.len());
            for z in [&s.z1, &s.z2, &s.z3] {
                p.extend(z.iter().map(|&v| u32::from(v > T::zero())));
            }
            p.extend_from_slice(&s.arg1);
            p.extend_from_slice(&s.arg2);
            p
        });
        Ok(per.concat())
    }

    pub fn forward(&self, images: &[f32]) -> Result<(Outputs<T>, ForwardCache<T>)> {
        let n_b = self.check_batch(images)?;
        let n = self.arch.image_len();
        let samples = par::map_range(n_b, |k| self.forward_sample(&images[k * n..(k + 1) * n]));
        let mut data = Vec::with_capacity(n_b * self.outputs());
        for s in &samples {
            data.extend(self.head_forward(&s.feat));
        }
        let out = Outputs {
            n_b,
            outputs: self.outputs(),
            data,
        };
        if let Some(pos) = out.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "forward output of sample {}",
                pos / self.outputs()
            )));
        }
        Ok((
            out,
            ForwardCache {
                version: self.version,
                samples,
            },
        ))
    }

    /// Weight gradients given `d loss / d outputs` (`n_b x outputs`).
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        let n_b = cache.samples.len();
        if grad_out.len() != n_b * self.outputs() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, expected {} x {}",
                grad_out.len(),
                n_b,
                self.outputs()
            )));
        }
        let chunks = n_b.div_ceil(BACKWARD_CHUNK);
        let partial = par::map_range(chunks, |c| {
            let mut g = Gradients::zeros(self.params.len());
            let end = ((c + 1) * BACKWARD_CHUNK).min(n_b);
            for k in c * BACKWARD_CHUNK..end {
                let go = &grad_out[k * self.outputs()..(k + 1) * self.outputs()];
                self.backward_sample(&cache.samples[k], go, &mut g);
            }
            g
        });
        let mut total = Gradients::zeros(self.params.len());
        for g in &partial {
            total.add_assign(g);
        }
        Ok(total)
    }

    fn head_forward(&self, feat: &[T]) -> Vec<T> {
        let (w, b) = (self.slice(Layer::HeadW), self.slice(Layer::HeadB));
        let d = feat.len();
        b.iter()
            .enumerate()
            .map(|(o, &bias)| {
                let row = &w[o * d..(o + 1) * d];
                row.iter().zip(feat).fold(bias, |acc, (&a, &x)| acc + a * x)
            })
            .collect()
    }

    fn conv(&self, layer: Layer, input: &[T], c_in: usize, h: usize, w: usize) -> (Vec<T>, Vec<T>) {
        let c_out = self.block(layer).shape[0];
        let hw = h * w;
        let mut col = vec![T::zero(); c_in * 9 * hw];
        layers::im2col(input, c_in, h, w, &mut col);
        let weight = &self.params[self.block(layer).range()];
        let bias = &self.params[self.blocks[layer as usize + 1].range()];
        let mut z = vec![T::zero(); c_out * hw];
        T::gemm(c_out, c_in * 9, hw, T::one(), weight, false, &col, false, T::zero(), &mut z);
        for (co, plane) in z.chunks_mut(hw).enumerate() {
            let b = bias[co];
            plane.iter_mut().for_each(|v| *v += b);
        }
        (col, z)
    }

    fn forward_sample(&self, image: &[f32]) -> SampleCache<T> {
        let a = &self.arch;
        let [c1, c2, c3] = a.widths;
        let (h1, w1) = (a.in_h, a.in_w);
        let (h2, w2) = (h1 / 2, w1 / 2);
        let (h3, w3) = (h2 / 2, w2 / 2);
        let x: Vec<T> = image.iter().map(|&p| T::of(f64::from(p))).collect();

        let (col1, z1) = self.conv(Layer::Conv1W, &x, a.in_c, h1, w1);
        let a1: Vec<T> = z1.iter().map(|&v| v.max(T::zero())).collect();
        let mut p1 = vec![T::zero(); c1 * h2 * w2];
        let mut arg1 = vec![0u32; p1.len()];
        layers::maxpool2(&a1, c1, h1, w1, &mut p1, &mut arg1);

        let (col2, z2) = self.conv(Layer::Conv2W, &p1, c1, h2, w2);
        let a2: Vec<T> = z2.iter().map(|&v| v.max(T::zero())).collect();
        let mut p2 = vec![T::zero(); c2 * h3 * w3];
        let mut arg2 = vec![0u32; p2.len()];
        layers::maxpool2(&a2, c2, h2, w2, &mut p2, &mut arg2);

        let (col3, z3) = self.conv(Layer::Conv3W, &p2, c2, h3, w3);
        let hw3 = h3 * w3;
        let inv = T::of(1.0 / hw3 as f64);
        let feat: Vec<T> = (0..c3)
            .map(|c| {
                z3[c * hw3..(c + 1) * hw3]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v.max(T::zero()))
                    * inv
            })
            .collect();
        SampleCache {
            col1,
            z1,
            arg1,
            col2,
            z2,
            arg2,
            col3,
            z3,
            feat,
        }
    }

    fn features_only(&self, image: &[f32]) -> Vec<T> {
        self.forward_sample(image).feat
    }

    fn backward_sample(&self, s: &SampleCache<T>, grad_out: &[T], g: &mut Gradients<T>) {
        let a = &self.arch;
        let [c1, c2, c3] = a.widths;
        let (h1, w1) = (a.in_h, a.in_w);
        let (h2, w2) = (h1 / 2, w1 / 2);
        let (h3, w3) = (h2 / 2, w2 / 2);
        let d = c3;

        // head
        let hw_range = self.block(Layer::HeadW).range();
        let hb_range = self.block(Layer::HeadB).range();
        {
            let gw = &mut g.values[hw_range.clone()];
            for (o, &go) in grad_out.iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                for (gwv, &f) in gw[o * d..(o + 1) * d].iter_mut().zip(&s.feat) {
                    *gwv += go * f;
                }
            }
        }
        for (gb, &go) in g.values[hb_range].iter_mut().zip(grad_out) {
            *gb += go;
        }
        let head_w = &self.params[hw_range];
        let mut dfeat = vec![T::zero(); d];
        T::gemm(1, self.outputs(), d, T::one(), grad_out, false, head_w, false, T::zero(), &mut dfeat);

        // global average pool + relu of conv3
        let hw3 = h3 * w3;
        let inv = T::of(1.0 / hw3 as f64);
        let mut dz3 = vec![T::zero(); c3 * hw3];
        for c in 0..c3 {
            let v = dfeat[c] * inv;
            for p in 0..hw3 {
                if s.z3[c * hw3 + p] > T::zero() {
                    dz3[c * hw3 + p] = v;
                }
            }
        }
        let dp2 = self.conv_backward(Layer::Conv3W, &s.col3, &dz3, c2, h3, w3, true, g);
        let mut dz2 = vec![T::zero(); c2 * h2 * w2];
        layers::maxpool2_backward(&dp2.unwrap(), &s.arg2, &mut dz2);
        relu_mask(&mut dz2, &s.z2);
        let dp1 = self.conv_backward(Layer::Conv2W, &s.col2, &dz2, c1, h2, w2, true, g);
        let mut dz1 = vec![T::zero(); c1 * h1 * w1];
        layers::maxpool2_backward(&dp1.unwrap(), &s.arg1, &mut dz1);
        relu_mask(&mut dz1, &s.z1);
        self.conv_backward(Layer::Conv1W, &s.col1, &dz1, a.in_c, h1, w1, false, g);
    }

    /// Accumulates conv weight/bias gradients; returns the input gradient
    /// when `need_input`.
    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        layer: Layer,
        col: &[T],
        dz: &[T],
        c_in: usize,
        h: usize,
        w: usize,
        need_input: bool,
        g: &mut Gradients<T>,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        let c_out = self.block(layer).shape[0];
        let k = c_in * 9;
        let wr = self.block(layer).range();
        let br = self.blocks[layer as usize + 1].range();
        T::gemm(c_out, hw, k, T::one(), dz, false, col, true, T::one(), &mut g.values[wr.clone()]);
        for (gb, plane) in g.values[br].iter_mut().zip(dz.chunks(hw)) {
            *gb += plane.iter().fold(T::zero(), |acc, &v| acc + v);
        }
        if !need_input {
            return None;
        }
        let mut dcol = vec![T::zero(); k * hw];
        T::gemm(k, c_out, hw, T::one(), &self.params[wr], true, dz, false, T::zero(), &mut dcol);
        let mut dx = vec![T::zero(); c_in * hw];
        layers::col2im(&dcol, c_in, h, w, &mut dx);
        Some(dx)
    }

    /// One Adam update; see [`AdamState::step`].
    pub fn adam_step(&mut self, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
        if grads.values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.values.len(),
                self.params.len()
            )));
        }
        state.step(self.params_mut(), &grads.values)
    }
}

fn relu_mask<T: Scalar>(grad: &mut [T], z: &[T]) {
    for (g, &v) in grad.iter_mut().zip(z) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}
