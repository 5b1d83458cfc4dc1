//! Multilayer perceptron `14 → 512 → 256 → 256 → 128 → 1`.
//!
//! Each hidden layer is affine, then LayerNorm, then SiLU; the output is a
//! sigmoid. Parameters are stored as `f32` (the training precision); a
//! widened `f64` copy is kept for inference and input gradients.

use std::fmt::Debug;
use std::fs;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::RngStream;
use crate::error::{Error, Result};

use super::features::{FeatureFrame, FeatureVector, N_FEATURES};
use super::lhs::ParameterRanges;

pub const LAYER_SIZES: [usize; 6] = [N_FEATURES, 512, 256, 256, 128, 1];
pub const LN_EPS: f64 = 1e-5;
const MAGIC: &[u8; 8] = b"CSPZMLP\x00";
const VERSION: u32 = 1;

/// Scalar type of network parameters and activations (`f32` or `f64`).
pub trait Float:
    Copy
    + Default
    + PartialOrd
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    /// `C ← α·A·B + β·C` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
                if k > 0 {
                    assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
                }
                assert!(last(m, n, rsc, csc) < c.len());
                // SAFETY: every index touched lies inside the slices, checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

/// One affine layer. `w` is `n_out × n_in`, row-major. Hidden layers carry
/// LayerNorm gain and offset; the output layer leaves them empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<F>,
    pub b: Vec<F>,
    pub gain: Vec<F>,
    pub offset: Vec<F>,
}

impl<F: Float> LayerParams<F> {
    fn zeros(n_in: usize, n_out: usize, hidden: bool) -> Self {
        let h = if hidden { n_out } else { 0 };
        Self {
            n_in,
            n_out,
            w: vec![F::default(); n_in * n_out],
            b: vec![F::default(); n_out],
            gain: vec![F::from_f64(1.0); h],
            offset: vec![F::default(); h],
        }
    }

    pub(crate) fn tensors(&self) -> [&Vec<F>; 4] {
        [&self.w, &self.b, &self.gain, &self.offset]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<F>; 4] {
        [&mut self.w, &mut self.b, &mut self.gain, &mut self.offset]
    }

    fn widen(&self) -> LayerParams<f64> {
        let w = |v: &Vec<F>| v.iter().map(|x| x.to_f64()).collect();
        LayerParams {
            n_in: self.n_in,
            n_out: self.n_out,
            w: w(&self.w),
            b: w(&self.b),
            gain: w(&self.gain),
            offset: w(&self.offset),
        }
    }
}

/// Stored beside the weights: shapes, feature frame, input standardization
/// and the box the model was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub frame: FeatureFrame,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub ranges: ParameterRanges,
    #[serde(default)]
    pub val_mse: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    pub header: ModelHeader,
    layers: Vec<LayerParams<f32>>,
    wide: Vec<LayerParams<f64>>,
}

impl PartialEq for MlpModel {
    fn eq(&self, o: &Self) -> bool {
        self.header == o.header && self.layers == o.layers
    }
}

/// Cached intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct Activations<F> {
    pub batch: usize,
    /// Standardized inputs, `batch × 14`.
    pub input: Vec<F>,
    /// Per hidden layer: normalized pre-activation, `1/σ` per row, and the
    /// LayerNorm output fed to SiLU.
    pub xhat: Vec<Vec<F>>,
    pub inv_std: Vec<Vec<F>>,
    pub y: Vec<Vec<F>>,
    /// Per hidden layer: SiLU output.
    pub post: Vec<Vec<F>>,
    pub logit: Vec<F>,
    pub output: Vec<F>,
}

fn sigmoid<F: Float>(x: F) -> F {
    let one = F::from_f64(1.0);
    one / (one + (-x).exp())
}

/// `x·σ(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// LayerNorm of one row with biased variance and `LN_EPS`.
pub fn layer_norm(x: &[f64], gain: &[f64], offset: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / n;
    let s = 1.0 / (v + LN_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(offset))
        .map(|(t, (g, o))| g * (t - m) * s + o)
        .collect()
}

/// `out = x·Wᵀ + b` for a `batch × n_in` input.
fn affine<F: Float>(l: &LayerParams<F>, x: &[F], batch: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(batch * l.n_out);
    for _ in 0..batch {
        out.extend_from_slice(&l.b);
    }
    F::gemm(
        batch,
        l.n_in,
        l.n_out,
        x,
        (l.n_in, 1),
        &l.w,
        (1, l.n_in),
        F::from_f64(1.0),
        &mut out,
        (l.n_out, 1),
    );
    out
}

pub(crate) fn forward_batch<F: Float>(layers: &[LayerParams<F>], input: Vec<F>, batch: usize) -> Activations<F> {
    let n_hidden = layers.len() - 1;
    let mut acts = Activations {
        batch,
        input,
        xhat: Vec::with_capacity(n_hidden),
        inv_std: Vec::with_capacity(n_hidden),
        y: Vec::with_capacity(n_hidden),
        post: Vec::with_capacity(n_hidden),
        logit: Vec::new(),
        output: Vec::new(),
    };
    let eps = F::from_f64(LN_EPS);
    for (li, l) in layers[..n_hidden].iter().enumerate() {
        let x = if li == 0 { &acts.input } else { &acts.post[li - 1] };
        let mut pre = affine(l, x, batch);
        let n = l.n_out;
        let inv_n = F::from_f64(1.0 / n as f64);
        let mut inv = vec![F::default(); batch];
        let mut y = vec![F::default(); batch * n];
        let mut post = vec![F::default(); batch * n];
        for r in 0..batch {
            let row = &mut pre[r * n..(r + 1) * n];
            let mut m = F::default();
            for &v in row.iter() {
                m += v;
            }
            m = m * inv_n;
            let mut var = F::default();
            for &v in row.iter() {
                let d = v - m;
                var += d * d;
            }
            let s = F::from_f64(1.0) / (var * inv_n + eps).sqrt();
            inv[r] = s;
            for j in 0..n {
                let xh = (row[j] - m) * s;
                row[j] = xh;
                let yy = l.gain[j] * xh + l.offset[j];
                y[r * n + j] = yy;
                post[r * n + j] = yy * sigmoid(yy);
            }
        }
        acts.xhat.push(pre);
        acts.inv_std.push(inv);
        acts.y.push(y);
        acts.post.push(post);
    }
    let last = &layers[n_hidden];
    let x = if n_hidden == 0 { &acts.input } else { &acts.post[n_hidden - 1] };
    acts.logit = affine(last, x, batch);
    acts.output = acts.logit.iter().map(|&z| sigmoid(z)).collect();
    acts
}

/// Back-propagates `dL/d output` (one value per row). Accumulates parameter
/// gradients into `grads` when given and returns `dL/d standardized input`
/// when `want_input` is set.
pub(crate) fn backward_batch<F: Float>(
    layers: &[LayerParams<F>],
    acts: &Activations<F>,
    dout: &[F],
    grads: Option<&mut [LayerParams<F>]>,
    want_input: bool,
) -> Option<Vec<F>> {
    let one = F::from_f64(1.0);
    let dlogit: Vec<F> = dout
        .iter()
        .zip(&acts.output)
        .map(|(&d, &o)| d * o * (one - o))
        .collect();
    backward_from_logit(layers, acts, dlogit, grads, want_input)
}

/// As [`backward_batch`] but seeded with `dL/d logit`.
pub(crate) fn backward_from_logit<F: Float>(
    layers: &[LayerParams<F>],
    acts: &Activations<F>,
    dlogit: Vec<F>,
    mut grads: Option<&mut [LayerParams<F>]>,
    want_input: bool,
) -> Option<Vec<F>> {
    let batch = acts.batch;
    let n_hidden = layers.len() - 1;
    let one = F::from_f64(1.0);
    let mut delta = dlogit;
    for li in (0..=n_hidden).rev() {
        let l = &layers[li];
        let x = if li == 0 { &acts.input } else { &acts.post[li - 1] };
        if let Some(g) = grads.as_deref_mut() {
            let g = &mut g[li];
            // dW += δᵀ·x
            F::gemm(l.n_out, batch, l.n_in, &delta, (1, l.n_out), x, (l.n_in, 1), one, &mut g.w, (l.n_in, 1));
            for r in 0..batch {
                for j in 0..l.n_out {
                    g.b[j] += delta[r * l.n_out + j];
                }
            }
        }
        if li == 0 && !want_input {
            return None;
        }
        // dx = δ·W
        let mut dx = vec![F::default(); batch * l.n_in];
        F::gemm(batch, l.n_out, l.n_in, &delta, (l.n_out, 1), &l.w, (l.n_in, 1), F::default(), &mut dx, (l.n_in, 1));
        if li == 0 {
            return Some(dx);
        }
        // Through SiLU and LayerNorm of hidden layer li-1.
        let h = li - 1;
        let lh = &layers[h];
        let n = lh.n_out;
        let inv_n = F::from_f64(1.0 / n as f64);
        let (xhat, y, inv) = (&acts.xhat[h], &acts.y[h], &acts.inv_std[h]);
        let mut dpre = vec![F::default(); batch * n];
        for r in 0..batch {
            let mut sum_d = F::default();
            let mut sum_dx = F::default();
            let base = r * n;
            for j in 0..n {
                let yy = y[base + j];
                let s = sigmoid(yy);
                let dy = dx[base + j] * s * (one + yy * (one - s));
                if let Some(g) = grads.as_deref_mut() {
                    g[h].gain[j] += dy * xhat[base + j];
                    g[h].offset[j] += dy;
                }
                let dxh = dy * lh.gain[j];
                dpre[base + j] = dxh;
                sum_d += dxh;
                sum_dx += dxh * xhat[base + j];
            }
            let md = sum_d * inv_n;
            let mdx = sum_dx * inv_n;
            for j in 0..n {
                dpre[base + j] = inv[r] * (dpre[base + j] - md - xhat[base + j] * mdx);
            }
        }
        delta = dpre;
    }
    None
}

impl MlpModel {
    /// Lecun-normal weights, zero biases, unit gains.
    pub fn init(
        seed: u64,
        frame: FeatureFrame,
        feature_mean: [f64; N_FEATURES],
        feature_scale: [f64; N_FEATURES],
        ranges: ParameterRanges,
    ) -> Self {
        let mut rng = RngStream::new(seed);
        let n_layers = LAYER_SIZES.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (n_in, n_out) = (LAYER_SIZES[i], LAYER_SIZES[i + 1]);
                let mut l = LayerParams::<f32>::zeros(n_in, n_out, i + 1 < n_layers);
                let std = (1.0 / n_in as f64).sqrt();
                for w in l.w.iter_mut() {
                    *w = (std * rng.standard_normal()) as f32;
                }
                l
            })
            .collect();
        let header = ModelHeader {
            version: VERSION,
            layer_sizes: LAYER_SIZES.to_vec(),
            frame,
            feature_mean: feature_mean.to_vec(),
            feature_scale: feature_scale.to_vec(),
            ranges,
            val_mse: None,
            epochs: None,
            seed: Some(seed),
        };
        Self::from_parts(header, layers).expect("consistent shapes")
    }

    pub fn from_parts(header: ModelHeader, layers: Vec<LayerParams<f32>>) -> Result<Self> {
        let sizes = &header.layer_sizes;
        if sizes.len() < 2 || sizes[0] != N_FEATURES || *sizes.last().unwrap() != 1 {
            return Err(Error::Model(format!("unsupported layer sizes {sizes:?}")));
        }
        if layers.len() != sizes.len() - 1 {
            return Err(Error::Model("layer count does not match the header".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            let hidden = i + 1 < layers.len();
            let h = if hidden { sizes[i + 1] } else { 0 };
            if l.n_in != sizes[i]
                || l.n_out != sizes[i + 1]
                || l.w.len() != l.n_in * l.n_out
                || l.b.len() != l.n_out
                || l.gain.len() != h
                || l.offset.len() != h
            {
                return Err(Error::Model(format!("layer {i} has inconsistent shapes")));
            }
        }
        if header.feature_mean.len() != N_FEATURES || header.feature_scale.len() != N_FEATURES {
            return Err(Error::Model("standardization statistics must have 14 entries".into()));
        }
        if header.feature_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Model("feature scales must be positive".into()));
        }
        let all_finite = layers
            .iter()
            .flat_map(|l| l.tensors().into_iter().flatten().copied().collect::<Vec<_>>())
            .all(f32::is_finite);
        if !all_finite {
            return Err(Error::Model("non-finite weights".into()));
        }
        let wide = layers.iter().map(LayerParams::widen).collect();
        Ok(Self { header, layers, wide })
    }

    pub fn layers(&self) -> &[LayerParams<f32>] {
        &self.layers
    }

    pub fn into_parts(self) -> (ModelHeader, Vec<LayerParams<f32>>) {
        (self.header, self.layers)
    }

    pub fn frame(&self) -> FeatureFrame {
        self.header.frame
    }

    pub fn in_training_box(&self, f: &FeatureVector) -> bool {
        self.header.ranges.contains(f)
    }

    pub(crate) fn standardize<F: Float>(&self, rows: &[[f64; N_FEATURES]]) -> Vec<F> {
        let (m, s) = (&self.header.feature_mean, &self.header.feature_scale);
        rows.iter()
            .flat_map(|r| (0..N_FEATURES).map(move |j| F::from_f64((r[j] - m[j]) / s[j])))
            .collect()
    }

    fn check_rows(rows: &[[f64; N_FEATURES]]) -> Result<()> {
        if rows.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Model("non-finite network input".into()))
        }
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(&f.0))?[0])
    }

    pub fn predict_with_gradient(&self, f: &FeatureVector) -> Result<(f64, [f64; N_FEATURES])> {
        let (p, g) = self.predict_batch_with_gradient(std::slice::from_ref(&f.0))?;
        Ok((p[0], g[0]))
    }

    pub fn predict_batch(&self, rows: &[[f64; N_FEATURES]]) -> Result<Vec<f64>> {
        Self::check_rows(rows)?;
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        Ok(forward_batch(&self.wide, self.standardize(rows), rows.len()).output)
    }

    /// Outputs and their gradients with respect to the raw features.
    pub fn predict_batch_with_gradient(
        &self,
        rows: &[[f64; N_FEATURES]],
    ) -> Result<(Vec<f64>, Vec<[f64; N_FEATURES]>)> {
        Self::check_rows(rows)?;
        if rows.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let acts = forward_batch(&self.wide, self.standardize(rows), rows.len());
        let ones = vec![1.0; rows.len()];
        let dx = backward_batch(&self.wide, &acts, &ones, None, true).expect("input gradient requested");
        let s = &self.header.feature_scale;
        let grads = dx
            .chunks(N_FEATURES)
            .map(|c| std::array::from_fn(|j| c[j] / s[j]))
            .collect();
        Ok((acts.output, grads))
    }

    /// Pre-sigmoid outputs and their gradients with respect to the raw
    /// features. Unlike the probability, the logit does not saturate.
    pub fn logit_batch_with_gradient(
        &self,
        rows: &[[f64; N_FEATURES]],
    ) -> Result<(Vec<f64>, Vec<[f64; N_FEATURES]>)> {
        Self::check_rows(rows)?;
        if rows.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let acts = forward_batch(&self.wide, self.standardize(rows), rows.len());
        let dx = backward_from_logit(&self.wide, &acts, vec![1.0; rows.len()], None, true)
            .expect("input gradient requested");
        let s = &self.header.feature_scale;
        let grads = dx
            .chunks(N_FEATURES)
            .map(|c| std::array::from_fn(|j| c[j] / s[j]))
            .collect();
        Ok((acts.logit, grads))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for l in &self.layers {
            for t in l.tensors() {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Model(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Model(format!("unsupported model version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        let hbytes = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let header: ModelHeader =
            serde_json::from_slice(hbytes).map_err(|e| Error::Model(format!("bad model header: {e}")))?;
        let sizes = header.layer_sizes.clone();
        if sizes.len() < 2 {
            return Err(bad("bad layer sizes"));
        }
        let mut payload = body[hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if (body.len() - hlen) % 4 != 0 {
            return Err(bad("payload is not a whole number of floats"));
        }
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let mut l = LayerParams::<f32>::zeros(sizes[i], sizes[i + 1], i + 1 < n_layers);
            for t in l.tensors_mut() {
                for v in t.iter_mut() {
                    *v = payload.next().ok_or_else(|| bad("truncated payload"))?;
                }
            }
            layers.push(l);
        }
        if payload.next().is_some() {
            return Err(bad("trailing bytes after payload"));
        }
        Self::from_parts(header, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> MlpModel {
        let mut m = MlpModel::init(seed, FeatureFrame::PursuerAligned, [0.0; 14], [1.0; 14], ParameterRanges::default());
        // Randomize LayerNorm parameters and biases so every path is exercised.
        let (h, mut layers) = m.clone().into_parts();
        let mut rng = RngStream::new(seed + 100);
        for l in layers.iter_mut() {
            for v in l.b.iter_mut().chain(l.offset.iter_mut()) {
                *v = 0.1 * rng.standard_normal() as f32;
            }
            for v in l.gain.iter_mut() {
                *v = 1.0 + 0.2 * rng.standard_normal() as f32;
            }
        }
        m = MlpModel::from_parts(h, layers).unwrap();
        m
    }

    fn random_input(rng: &mut RngStream) -> [f64; 14] {
        std::array::from_fn(|_| rng.standard_normal())
    }

    #[test]
    fn zero_output_layer_gives_sigmoid_of_bias() {
        let m = model(1);
        let (h, mut layers) = m.into_parts();
        let last = layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = 0.0);
        last.b[0] = 0.7;
        let m = MlpModel::from_parts(h, layers).unwrap();
        let mut rng = RngStream::new(2);
        for _ in 0..5 {
            let p = m.predict(&FeatureVector(random_input(&mut rng))).unwrap();
            assert!((p - 1.0 / (1.0 + (-0.7f32 as f64).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_in_unit_interval() {
        let m = model(3);
        let mut rng = RngStream::new(4);
        let rows: Vec<_> = (0..64).map(|_| random_input(&mut rng).map(|v| 50.0 * v)).collect();
        assert!(m.predict_batch(&rows).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn batch_matches_single() {
        let m = model(5);
        let mut rng = RngStream::new(6);
        let rows: Vec<_> = (0..7).map(|_| random_input(&mut rng)).collect();
        let batch = m.predict_batch(&rows).unwrap();
        for (r, p) in rows.iter().zip(batch) {
            assert!((m.predict(&FeatureVector(*r)).unwrap() - p).abs() < 1e-14);
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let m = model(7);
        let mut rng = RngStream::new(8);
        for _ in 0..10 {
            let x = random_input(&mut rng);
            let (_, g) = m.predict_with_gradient(&FeatureVector(x)).unwrap();
            for j in 0..14 {
                let h = 1e-5 * x[j].abs().max(1.0);
                let mut xp = x;
                xp[j] += h;
                let mut xm = x;
                xm[j] -= h;
                let fd = (m.predict(&FeatureVector(xp)).unwrap() - m.predict(&FeatureVector(xm)).unwrap()) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "j={j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut rng = RngStream::new(9);
        let x: Vec<f64> = (0..256).map(|_| 3.0 + 2.0 * rng.standard_normal()).collect();
        let y = layer_norm(&x, &vec![1.0; 256], &vec![0.0; 256]);
        let m = y.iter().sum::<f64>() / 256.0;
        let v = y.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / 256.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-5);
    }

    #[test]
    fn silu_definition() {
        assert_eq!(silu(0.0), 0.0);
        for x in [-3.0, -0.5, 0.25, 4.0] {
            assert_eq!(silu(x), x * (1.0 / (1.0 + (-x as f64).exp())));
        }
    }

    #[test]
    fn forward_matches_reference_loop() {
        let m = model(10);
        let mut rng = RngStream::new(11);
        let x = random_input(&mut rng);
        let mut h: Vec<f64> = x.to_vec();
        let layers = &m.wide;
        for l in &layers[..layers.len() - 1] {
            let pre: Vec<f64> = (0..l.n_out)
                .map(|o| l.b[o] + (0..l.n_in).map(|i| l.w[o * l.n_in + i] * h[i]).sum::<f64>())
                .collect();
            h = layer_norm(&pre, &l.gain, &l.offset).into_iter().map(silu).collect();
        }
        let last = layers.last().unwrap();
        let logit = last.b[0] + (0..last.n_in).map(|i| last.w[i] * h[i]).sum::<f64>();
        let p = 1.0 / (1.0 + (-logit).exp());
        assert!((m.predict(&FeatureVector(x)).unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let m = model(12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        let back = MlpModel::load(&p).unwrap();
        assert_eq!(back, m);
        let mut rng = RngStream::new(13);
        let x = FeatureVector(random_input(&mut rng));
        assert_eq!(back.predict(&x).unwrap().to_bits(), m.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn malformed_files_rejected() {
        let m = model(14);
        let bytes = m.to_bytes().unwrap();
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(MlpModel::from_bytes(b"nonsense").is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(MlpModel::from_bytes(&extra).is_err());
        assert!(m.predict(&FeatureVector([f64::NAN; 14])).is_err());
    }
}
