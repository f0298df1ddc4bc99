//! 3D convolutional autoencoder over voxelized deviation maps.
//!
//! The encoder stacks same-size convolutions (tanh, then max pooling) and
//! dense layers down to a fixed-width embedding; the decoder mirrors the
//! dense stack back up to the full voxel volume. All parameters live in one
//! flat `Vec<f64>` with a layout table, so the analytic gradient can be
//! probed coordinate-by-coordinate with finite differences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub grid_dims: [usize; 3],
    /// Output channels of each convolution stage; the stage count is the
    /// length of this list.
    pub conv_filters: Vec<usize>,
    /// Cubic kernel edge; odd, so same-size padding is symmetric.
    pub kernel: usize,
    /// Max-pool window and stride after every convolution stage.
    pub pool_stride: usize,
    pub fc_sizes: Vec<usize>,
    pub embedding_dim: usize,
    /// Dropout on hidden dense layers, applied in training passes only.
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before training stops.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::desk()
    }
}

impl EncoderConfig {
    /// Small configuration that trains in seconds on a workstation CPU.
    pub fn desk() -> Self {
        EncoderConfig {
            grid_dims: [16, 16, 16],
            conv_filters: vec![4, 8, 16, 32],
            kernel: 3,
            pool_stride: 2,
            fc_sizes: vec![64, 32],
            embedding_dim: 16,
            dropout_rate: 0.3,
            learning_rate: 3e-3,
            max_epochs: 150,
            early_stop_patience: 20,
            seed: 0,
        }
    }

    /// Full-resolution configuration. Valid to describe and to size, but
    /// its dense decoder holds over 10^9 parameters, so it is meant for
    /// capacity planning rather than for instantiation here.
    pub fn reference() -> Self {
        EncoderConfig {
            grid_dims: [128, 128, 128],
            conv_filters: vec![32, 64, 128, 256],
            kernel: 3,
            pool_stride: 2,
            fc_sizes: vec![512, 256],
            embedding_dim: 128,
            dropout_rate: 0.3,
            learning_rate: 1e-3,
            max_epochs: 200,
            early_stop_patience: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.is_empty() {
            return Err(Error::Config("at least one convolution stage required".into()));
        }
        if self.conv_filters.iter().any(|&c| c == 0) || self.fc_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel edge {} must be odd", self.kernel)));
        }
        if self.pool_stride < 2 {
            return Err(Error::Config("pool stride must be at least 2".into()));
        }
        let down = self.pool_stride.pow(self.conv_filters.len() as u32);
        for (axis, &d) in self.grid_dims.iter().enumerate() {
            if d == 0 || d % down != 0 {
                return Err(Error::Config(format!(
                    "grid axis {axis} has {d} cells, not divisible by pool^stages = {down}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("epochs and patience must be at least 1".into()));
        }
        Ok(())
    }

    /// Total parameter count, computed without allocating anything.
    pub fn param_count(&self) -> usize {
        layout(self).0.last().map_or(0, |l| l.b.end)
    }
}

#[derive(Debug, Clone)]
enum LayerKind {
    /// Same-size convolution, tanh, then max pool. `d_in` is the spatial
    /// shape of the input, `d_out` after pooling.
    Conv { c_in: usize, c_out: usize, d_in: [usize; 3], d_out: [usize; 3] },
    Dense { n_in: usize, n_out: usize, tanh: bool, dropout: bool },
}

#[derive(Debug, Clone)]
struct Layer {
    kind: LayerKind,
    w: Range<usize>,
    b: Range<usize>,
}

fn layout(cfg: &EncoderConfig) -> (Vec<Layer>, usize) {
    let mut layers = Vec::new();
    let mut off = 0usize;
    let push = |layers: &mut Vec<Layer>, off: &mut usize, kind: LayerKind, nw: usize, nb: usize| {
        layers.push(Layer { kind, w: *off..*off + nw, b: *off + nw..*off + nw + nb });
        *off += nw + nb;
    };

    let k3 = cfg.kernel * cfg.kernel * cfg.kernel;
    let s = cfg.pool_stride;
    let mut d = cfg.grid_dims;
    let mut c_in = 1usize;
    for &c_out in &cfg.conv_filters {
        let d_out = [d[0] / s, d[1] / s, d[2] / s];
        push(&mut layers, &mut off, LayerKind::Conv { c_in, c_out, d_in: d, d_out }, c_out * c_in * k3, c_out);
        c_in = c_out;
        d = d_out;
    }
    let mut n_in = c_in * d[0] * d[1] * d[2];
    for &n in &cfg.fc_sizes {
        push(&mut layers, &mut off, LayerKind::Dense { n_in, n_out: n, tanh: true, dropout: true }, n * n_in, n);
        n_in = n;
    }
    push(
        &mut layers,
        &mut off,
        LayerKind::Dense { n_in, n_out: cfg.embedding_dim, tanh: false, dropout: false },
        cfg.embedding_dim * n_in,
        cfg.embedding_dim,
    );
    let encoder_len = layers.len();

    n_in = cfg.embedding_dim;
    for &n in cfg.fc_sizes.iter().rev() {
        push(&mut layers, &mut off, LayerKind::Dense { n_in, n_out: n, tanh: true, dropout: true }, n * n_in, n);
        n_in = n;
    }
    let volume = cfg.grid_dims.iter().product::<usize>();
    push(
        &mut layers,
        &mut off,
        LayerKind::Dense { n_in, n_out: volume, tanh: false, dropout: false },
        volume * n_in,
        volume,
    );
    (layers, encoder_len)
}

#[inline]
fn vidx(c: usize, x: usize, y: usize, z: usize, d: [usize; 3]) -> usize {
    ((c * d[0] + x) * d[1] + y) * d[2] + z
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ (a.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b.wrapping_add(1)).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

struct Cache {
    /// Pre-activation. Conv layers keep the full-resolution volume.
    z: Vec<f64>,
    /// Layer output (post pool for conv, post dropout for dense).
    a: Vec<f64>,
    /// Conv only: winning full-resolution index per pooled cell.
    argmax: Vec<usize>,
    /// Dense only: inverted-dropout multipliers; empty when inactive.
    mask: Vec<f64>,
}

/// Clipped loop bounds for one kernel offset: the output positions whose
/// shifted source index stays inside the axis.
#[inline]
fn offset_bounds(d: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = ((d as isize - off).min(d as isize)).max(0) as usize;
    (lo, hi)
}

/// Same-size convolution written as shifted-slab accumulation: for every
/// kernel offset the innermost loop is a contiguous `dst += w * src` run
/// that vectorizes. Accumulation order is fixed, so results are
/// reproducible run to run.
fn conv_forward(params: &[f64], layer: &Layer, a_in: &[f64], k: usize) -> Vec<f64> {
    let LayerKind::Conv { c_in, c_out, d_in, .. } = layer.kind else { unreachable!() };
    let pad = (k / 2) as isize;
    let w = &params[layer.w.clone()];
    let b = &params[layer.b.clone()];
    let (d0, d1, d2) = (d_in[0], d_in[1], d_in[2]);
    let plane = d1 * d2;
    let chan = d0 * plane;
    let mut z = vec![0.0; c_out * chan];
    for o in 0..c_out {
        z[o * chan..(o + 1) * chan].fill(b[o]);
        for i in 0..c_in {
            let ai = &a_in[i * chan..(i + 1) * chan];
            for dx in 0..k {
                let ox = dx as isize - pad;
                let (x_lo, x_hi) = offset_bounds(d0, ox);
                for dy in 0..k {
                    let oy = dy as isize - pad;
                    let (y_lo, y_hi) = offset_bounds(d1, oy);
                    for dz in 0..k {
                        let oz = dz as isize - pad;
                        let (z_lo, z_hi) = offset_bounds(d2, oz);
                        if z_lo >= z_hi {
                            continue;
                        }
                        let wv = w[(((o * c_in + i) * k + dx) * k + dy) * k + dz];
                        for x in x_lo..x_hi {
                            let sx = (x as isize + ox) as usize;
                            for y in y_lo..y_hi {
                                let sy = (y as isize + oy) as usize;
                                let dst_row = o * chan + x * plane + y * d2;
                                let src_row = sx * plane + sy * d2;
                                let src = &ai[src_row + (z_lo as isize + oz) as usize
                                    ..src_row + (z_hi as isize + oz) as usize];
                                let dst = &mut z[dst_row + z_lo..dst_row + z_hi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    z
}

/// Max pool of `tanh(z)` with window = stride; returns pooled values and
/// the full-resolution index each pooled cell came from.
fn pool_forward(t: &[f64], c: usize, d_in: [usize; 3], d_out: [usize; 3], s: usize) -> (Vec<f64>, Vec<usize>) {
    let mut a = vec![0.0; c * d_out[0] * d_out[1] * d_out[2]];
    let mut arg = vec![0usize; a.len()];
    for ch in 0..c {
        for px in 0..d_out[0] {
            for py in 0..d_out[1] {
                for pz in 0..d_out[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0usize;
                    for dx in 0..s {
                        for dy in 0..s {
                            for dz in 0..s {
                                let i = vidx(ch, px * s + dx, py * s + dy, pz * s + dz, d_in);
                                if t[i] > best {
                                    best = t[i];
                                    bi = i;
                                }
                            }
                        }
                    }
                    let j = vidx(ch, px, py, pz, d_out);
                    a[j] = best;
                    arg[j] = bi;
                }
            }
        }
    }
    (a, arg)
}

/// One forward pass through `layers[..upto]`. `drop_seed` enables
/// per-sample dropout masks; `None` is the deterministic inference path.
fn forward_sample(
    layers: &[Layer],
    params: &[f64],
    cfg: &EncoderConfig,
    input: &[f64],
    drop_seed: Option<u64>,
    upto: usize,
) -> Vec<Cache> {
    let mut caches: Vec<Cache> = Vec::with_capacity(upto);
    for (li, layer) in layers[..upto].iter().enumerate() {
        let a_in: &[f64] = if li == 0 { input } else { &caches[li - 1].a };
        let cache = match layer.kind {
            LayerKind::Conv { c_out, d_in, d_out, .. } => {
                let z = conv_forward(params, layer, a_in, cfg.kernel);
                let t: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
                let (a, argmax) = pool_forward(&t, c_out, d_in, d_out, cfg.pool_stride);
                Cache { z, a, argmax, mask: Vec::new() }
            }
            LayerKind::Dense { n_in, n_out, tanh, dropout } => {
                let w = &params[layer.w.clone()];
                let b = &params[layer.b.clone()];
                let z: Vec<f64> = (0..n_out)
                    .map(|o| {
                        b[o] + (0..n_in).map(|i| w[o * n_in + i] * a_in[i]).sum::<f64>()
                    })
                    .collect();
                let mut a: Vec<f64> = if tanh { z.iter().map(|v| v.tanh()).collect() } else { z.clone() };
                let mut mask = Vec::new();
                if dropout && cfg.dropout_rate > 0.0 {
                    if let Some(seed) = drop_seed {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, li as u64, STREAM_DROPOUT));
                        let keep = 1.0 - cfg.dropout_rate;
                        mask = (0..n_out)
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        for (av, mv) in a.iter_mut().zip(&mask) {
                            *av *= mv;
                        }
                    }
                }
                Cache { z, a, argmax: Vec::new(), mask }
            }
        };
        caches.push(cache);
    }
    caches
}

/// Inference-only forward pass; returns the activation of layer `upto - 1`.
fn forward_eval(layers: &[Layer], params: &[f64], cfg: &EncoderConfig, input: &[f64], upto: usize) -> Vec<f64> {
    let caches = forward_sample(layers, params, cfg, input, None, upto);
    caches.into_iter().last().map_or_else(|| input.to_vec(), |c| c.a)
}

/// Backpropagates the reconstruction loss of one sample into `grad`.
fn backward_sample(
    layers: &[Layer],
    params: &[f64],
    cfg: &EncoderConfig,
    input: &[f64],
    caches: &[Cache],
    grad: &mut [f64],
) {
    let out = &caches.last().unwrap().a;
    let v = out.len() as f64;
    let mut da: Vec<f64> = out.iter().zip(input).map(|(o, t)| 2.0 * (o - t) / v).collect();

    for li in (0..layers.len()).rev() {
        let a_in: &[f64] = if li == 0 { input } else { &caches[li - 1].a };
        let layer = &layers[li];
        let cache = &caches[li];
        match layer.kind {
            LayerKind::Dense { n_in, n_out, tanh, .. } => {
                let mut dz = da;
                if !cache.mask.is_empty() {
                    for (g, m) in dz.iter_mut().zip(&cache.mask) {
                        *g *= m;
                    }
                }
                if tanh {
                    for (g, z) in dz.iter_mut().zip(&cache.z) {
                        let t = z.tanh();
                        *g *= 1.0 - t * t;
                    }
                }
                let mut da_in = vec![0.0; n_in];
                let wb = layer.w.start;
                let bb = layer.b.start;
                for o in 0..n_out {
                    let g = dz[o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[bb + o] += g;
                    let row = wb + o * n_in;
                    for i in 0..n_in {
                        grad[row + i] += g * a_in[i];
                        da_in[i] += params[row + i] * g;
                    }
                }
                da = da_in;
            }
            LayerKind::Conv { c_in, c_out, d_in, .. } => {
                // Route pooled gradients back to the winning cells, then
                // through the tanh.
                let full = c_out * d_in[0] * d_in[1] * d_in[2];
                let mut dz = vec![0.0; full];
                for (j, &src) in cache.argmax.iter().enumerate() {
                    dz[src] += da[j];
                }
                for (g, z) in dz.iter_mut().zip(&cache.z) {
                    if *g != 0.0 {
                        let t = z.tanh();
                        *g *= 1.0 - t * t;
                    }
                }
                let k = cfg.kernel;
                let pad = (k / 2) as isize;
                let (d0, d1, d2) = (d_in[0], d_in[1], d_in[2]);
                let plane = d1 * d2;
                let chan = d0 * plane;
                let mut da_in = vec![0.0; c_in * chan];
                let wb = layer.w.start;
                let bb = layer.b.start;
                for o in 0..c_out {
                    let dzo = &dz[o * chan..(o + 1) * chan];
                    grad[bb + o] += dzo.iter().sum::<f64>();
                    for i in 0..c_in {
                        let a_ch = &a_in[i * chan..(i + 1) * chan];
                        for dx in 0..k {
                            let ox = dx as isize - pad;
                            let (x_lo, x_hi) = offset_bounds(d0, ox);
                            for dy in 0..k {
                                let oy = dy as isize - pad;
                                let (y_lo, y_hi) = offset_bounds(d1, oy);
                                for dz_ in 0..k {
                                    let oz = dz_ as isize - pad;
                                    let (z_lo, z_hi) = offset_bounds(d2, oz);
                                    if z_lo >= z_hi {
                                        continue;
                                    }
                                    let wi = (((o * c_in + i) * k + dx) * k + dy) * k + dz_;
                                    let wv = params[wb + wi];
                                    let mut acc = 0.0;
                                    for x in x_lo..x_hi {
                                        let sx = (x as isize + ox) as usize;
                                        for y in y_lo..y_hi {
                                            let sy = (y as isize + oy) as usize;
                                            let g_row = x * plane + y * d2;
                                            let s_row = sx * plane + sy * d2;
                                            let s_lo = (z_lo as isize + oz) as usize;
                                            let s_hi = (z_hi as isize + oz) as usize;
                                            let gs = &dzo[g_row + z_lo..g_row + z_hi];
                                            let asrc = &a_ch[s_row + s_lo..s_row + s_hi];
                                            let dsrc = &mut da_in
                                                [i * chan + s_row + s_lo..i * chan + s_row + s_hi];
                                            for ((g, a), d) in gs.iter().zip(asrc).zip(dsrc) {
                                                acc += g * a;
                                                *d += wv * g;
                                            }
                                        }
                                    }
                                    grad[wb + wi] += acc;
                                }
                            }
                        }
                    }
                }
                da = da_in;
            }
        }
    }
}

fn sample_mse(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len() as f64
}

/// Work-unit size for parallel gradient accumulation. Chunks are reduced
/// in index order, so results do not depend on thread scheduling.
const GRAD_CHUNK: usize = 8;

fn loss_and_grad(
    layers: &[Layer],
    params: &[f64],
    cfg: &EncoderConfig,
    samples: &[&[f64]],
    drop_epoch: Option<u64>,
) -> (f64, Vec<f64>) {
    let np = params.len();
    let chunks: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = vec![0.0; np];
            let mut loss = 0.0;
            for (k, s) in chunk.iter().enumerate() {
                let si = ci * GRAD_CHUNK + k;
                let drop_seed = drop_epoch.map(|e| mix(cfg.seed, e, si as u64));
                let caches = forward_sample(layers, params, cfg, s, drop_seed, layers.len());
                loss += sample_mse(&caches.last().unwrap().a, s);
                backward_sample(layers, params, cfg, s, &caches, &mut g);
            }
            (loss, g)
        })
        .collect();

    let n = samples.len() as f64;
    let mut grad = vec![0.0; np];
    let mut loss = 0.0;
    for (l, g) in &chunks {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for v in &mut grad {
        *v /= n;
    }
    (loss / n, grad)
}

fn eval_loss(layers: &[Layer], params: &[f64], cfg: &EncoderConfig, samples: &[&[f64]]) -> f64 {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| sample_mse(&forward_eval(layers, params, cfg, s, layers.len()), s))
        .collect();
    losses.iter().sum::<f64>() / samples.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: EncoderConfig,
    pub params: Vec<f64>,
    layers: Vec<Layer>,
    encoder_len: usize,
    volume: usize,
}

/// Persisted form: the layout table is rebuilt from the config on load.
#[derive(Serialize, Deserialize)]
struct AutoencoderRepr {
    config: EncoderConfig,
    params: Vec<f64>,
}

impl Serialize for Autoencoder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            config: &'a EncoderConfig,
            params: &'a [f64],
        }
        Repr { config: &self.config, params: &self.params }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Autoencoder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = AutoencoderRepr::deserialize(d)?;
        Autoencoder::from_params(repr.config, repr.params).map_err(serde::de::Error::custom)
    }
}

impl Autoencoder {
    /// Fresh model with Xavier-uniform weights and zero biases. Zero biases
    /// make an all-zero input reconstruct exactly to zero.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (layers, encoder_len) = layout(&config);
        let n = layers.last().map_or(0, |l| l.b.end);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0, STREAM_INIT));
        let k3 = config.kernel.pow(3);
        for layer in &layers {
            let (fan_in, fan_out) = match layer.kind {
                LayerKind::Conv { c_in, c_out, .. } => (c_in * k3, c_out * k3),
                LayerKind::Dense { n_in, n_out, .. } => (n_in, n_out),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for i in layer.w.clone() {
                params[i] = rng.gen_range(-limit..limit);
            }
        }
        let volume = config.grid_dims.iter().product();
        Ok(Autoencoder { config, params, layers, encoder_len, volume })
    }

    /// Rebuilds a model from persisted weights.
    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layers, encoder_len) = layout(&config);
        let expect = layers.last().map_or(0, |l| l.b.end);
        if params.len() != expect {
            return Err(Error::SchemaMismatch(format!(
                "encoder expects {expect} parameters, got {}",
                params.len()
            )));
        }
        let volume = config.grid_dims.iter().product();
        Ok(Autoencoder { config, params, layers, encoder_len, volume })
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    fn check_input(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.volume {
            return Err(Error::DimMismatch(format!(
                "expected {} voxels, got {}",
                self.volume,
                values.len()
            )));
        }
        Ok(())
    }

    /// Embedding of one voxel volume; deterministic (no dropout).
    pub fn encode(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_input(values)?;
        Ok(forward_eval(&self.layers, &self.params, &self.config, values, self.encoder_len))
    }

    /// Full round trip through encoder and decoder.
    pub fn reconstruct(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_input(values)?;
        Ok(forward_eval(&self.layers, &self.params, &self.config, values, self.layers.len()))
    }

    /// Mean reconstruction MSE over a batch, inference mode.
    pub fn reconstruction_loss(&self, maps: &[Vec<f64>]) -> Result<f64> {
        if maps.is_empty() {
            return Err(Error::Empty("reconstruction batch".into()));
        }
        for m in maps {
            self.check_input(m)?;
        }
        let refs: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
        Ok(eval_loss(&self.layers, &self.params, &self.config, &refs))
    }

    #[cfg(test)]
    fn conv_stage_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::Conv { .. })).count()
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Inference-mode training loss; entry 0 is before any update.
    pub train_curve: Vec<f64>,
    /// Inference-mode held-out loss, parallel to `train_curve`.
    pub val_curve: Vec<f64>,
    /// Epoch (1-based) whose weights the returned model carries.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Indices of the held-out samples within the input slice.
    pub val_indices: Vec<usize>,
}

/// Trains a fresh autoencoder on the given voxel volumes with full-batch
/// Adam. A tenth of the samples (at least one, when there are at least
/// five) is held out for early stopping; the best held-out weights are
/// restored at the end.
pub fn train_encoder(maps: &[Vec<f64>], cfg: &EncoderConfig) -> Result<(Autoencoder, TrainReport)> {
    let mut model = Autoencoder::new(cfg.clone())?;
    if maps.is_empty() {
        return Err(Error::Empty("encoder training set".into()));
    }
    for (i, m) in maps.iter().enumerate() {
        model.check_input(m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite voxel in map {i}")));
        }
    }

    let mut order: Vec<usize> = (0..maps.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0, STREAM_SPLIT));
    order.shuffle(&mut rng);
    let n_val = if maps.len() >= 5 { (maps.len() / 10).max(1) } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<&[f64]> = train_idx.iter().map(|&i| maps[i].as_slice()).collect();
    let val_set: Vec<&[f64]> = val_idx.iter().map(|&i| maps[i].as_slice()).collect();

    let layers = model.layers.clone();
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut report = TrainReport {
        train_curve: vec![eval_loss(&layers, &model.params, cfg, &train_set)],
        val_curve: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
        stopped_early: false,
        val_indices: val_idx.to_vec(),
    };
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    if !val_set.is_empty() {
        report.val_curve.push(eval_loss(&layers, &model.params, cfg, &val_set));
    }

    for epoch in 0..cfg.max_epochs {
        let (batch_loss, grad) = loss_and_grad(&layers, &model.params, cfg, &train_set, Some(epoch as u64));
        if !batch_loss.is_finite() {
            return Err(Error::NoConvergence {
                op: "autoencoder training",
                iterations: epoch,
                residual: batch_loss,
            });
        }
        adam.step(&mut model.params, &grad);
        report.epochs_run = epoch + 1;
        report.train_curve.push(eval_loss(&layers, &model.params, cfg, &train_set));

        if !val_set.is_empty() {
            let vl = eval_loss(&layers, &model.params, cfg, &val_set);
            report.val_curve.push(vl);
            let improved = best.as_ref().map_or(true, |(b, _, _)| vl < *b);
            if improved {
                best = Some((vl, epoch + 1, model.params.clone()));
            } else if epoch + 1 - best.as_ref().unwrap().1 >= cfg.early_stop_patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, epoch, params)) = best {
        report.best_epoch = epoch;
        model.params = params;
    } else {
        report.best_epoch = report.epochs_run;
    }
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: usize,
    pub kind: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub max_rel_err: f64,
}

/// Compares analytic gradients against central finite differences on
/// `per_layer` randomly chosen parameters of every layer. Runs in
/// inference mode so the loss is a smooth deterministic function.
pub fn gradient_check(
    model: &Autoencoder,
    maps: &[Vec<f64>],
    per_layer: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if maps.is_empty() {
        return Err(Error::Empty("gradient check batch".into()));
    }
    for m in maps {
        model.check_input(m)?;
    }
    let samples: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
    let layers = &model.layers;
    let cfg = &model.config;
    let (_, grad) = loss_and_grad(layers, &model.params, cfg, &samples, None);

    let mut params = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheckReport { layers: Vec::new(), max_rel_err: 0.0 };
    for (li, layer) in layers.iter().enumerate() {
        let span = layer.w.start..layer.b.end;
        let len = span.end - span.start;
        let take = per_layer.min(len);
        let picks = rand::seq::index::sample(&mut rng, len, take);
        let mut worst = 0.0f64;
        for p in picks.iter() {
            let i = span.start + p;
            let orig = params[i];
            params[i] = orig + h;
            let lp = eval_loss(layers, &params, cfg, &samples);
            params[i] = orig - h;
            let lm = eval_loss(layers, &params, cfg, &samples);
            params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        let kind = match layer.kind {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Dense { .. } => "dense",
        };
        out.max_rel_err = out.max_rel_err.max(worst);
        out.layers.push(LayerCheck { layer: li, kind, checked: take, max_rel_err: worst });
    }
    Ok(out)
}
