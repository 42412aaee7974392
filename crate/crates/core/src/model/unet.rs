//! Stereo U-Net magnitude masker with a hand-written backward pass.

use std::ops::Range;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, gemm, NormCache, Tensor, KERNEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    pub frames: usize,
    pub bins: usize,
    /// Dropout rate of the first `dropout_layers` decoder layers.
    pub dropout: f64,
    pub dropout_layers: usize,
    pub leaky_slope: f64,
    /// Weight of the newest batch in the running normalization statistics.
    pub norm_momentum: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 5,
            base_channels: 16,
            input_channels: 2,
            frames: 512,
            bins: 1024,
            dropout: 0.5,
            dropout_layers: 3,
            leaky_slope: 0.2,
            norm_momentum: 0.1,
        }
    }
}

impl UNetConfig {
    /// Small network for CPU experiments.
    pub fn desk() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 8,
            frames: 128,
            bins: 256,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.depth == 0 || self.base_channels == 0 || self.input_channels == 0 {
            return bad(format!("depth, base_channels and input_channels must be positive: {self:?}"));
        }
        let div = 1usize << self.depth;
        if self.frames == 0 || self.bins == 0 || self.frames % div != 0 || self.bins % div != 0 {
            return bad(format!(
                "input grid {}x{} is not divisible by 2^{}",
                self.frames, self.bins, self.depth
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.norm_momentum) {
            return bad(format!("norm_momentum must be in [0, 1], got {}", self.norm_momentum));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.frames, self.bins]
    }

    fn encoder_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    fn decoder_channels(&self, j: usize) -> usize {
        if j + 1 == self.depth {
            self.base_channels
        } else {
            self.base_channels << (self.depth - 2 - j)
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    cin: usize,
    cout: usize,
    weight: Range<usize>,
    gamma: Range<usize>,
    beta: Range<usize>,
    /// Offset of `[mean; cout]` then `[var; cout]` in the running statistics.
    stats: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<Layer>,
    dec: Vec<Layer>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    blocks: Vec<(String, Range<usize>)>,
    params: usize,
    stats: usize,
}

impl Layout {
    fn new(cfg: &UNetConfig) -> Self {
        let mut blocks = Vec::new();
        let mut next = 0;
        let mut alloc = |name: String, len: usize, blocks: &mut Vec<(String, Range<usize>)>| {
            let r = next..next + len;
            next += len;
            blocks.push((name, r.clone()));
            r
        };
        let mut stats = 0;
        let mut layer = |prefix: String, cin: usize, cout: usize, blocks: &mut Vec<_>| {
            let l = Layer {
                cin,
                cout,
                weight: alloc(format!("{prefix}.weight"), cin * cout * KERNEL * KERNEL, blocks),
                gamma: alloc(format!("{prefix}.gamma"), cout, blocks),
                beta: alloc(format!("{prefix}.beta"), cout, blocks),
                stats,
            };
            stats += 2 * cout;
            l
        };
        let d = cfg.depth;
        let mut enc = Vec::new();
        for i in 0..d {
            let cin = if i == 0 { cfg.input_channels } else { cfg.encoder_channels(i - 1) };
            enc.push(layer(format!("encoder{i}"), cin, cfg.encoder_channels(i), &mut blocks));
        }
        let mut dec = Vec::new();
        for j in 0..d {
            let cin = if j == 0 {
                cfg.encoder_channels(d - 1)
            } else {
                cfg.decoder_channels(j - 1) + cfg.encoder_channels(d - 1 - j)
            };
            dec.push(layer(format!("decoder{j}"), cin, cfg.decoder_channels(j), &mut blocks));
        }
        let head_w = alloc("head.weight".into(), cfg.input_channels * cfg.base_channels, &mut blocks);
        let head_b = alloc("head.bias".into(), cfg.input_channels, &mut blocks);
        Layout { enc, dec, head_w, head_b, blocks, params: next, stats }
    }
}

struct EncCache {
    cols: Vec<f64>,
    norm: NormCache,
    pre: Tensor,
    act: Tensor,
}

struct DecCache {
    input: Tensor,
    norm: NormCache,
    pre: Tensor,
    drop: Option<Vec<f64>>,
    out: Tensor,
}

pub(crate) struct Cache {
    input: Tensor,
    enc: Vec<EncCache>,
    dec: Vec<DecCache>,
    mask: Tensor,
}

impl Cache {
    /// Signs of every rectifier input, i.e. which side of each kink the
    /// forward pass landed on.
    pub(crate) fn kink_pattern(&self) -> Vec<bool> {
        let enc = self.enc.iter().flat_map(|e| e.pre.data.iter());
        let dec = self.dec.iter().flat_map(|d| d.pre.data.iter());
        enc.chain(dec).map(|&v| v > 0.0).collect()
    }
}

/// Mask and masked estimate for one mixture grid.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub mask: Array3<f64>,
    pub estimate: Array3<f64>,
}

/// Loss, parameter gradient and the normalization statistics of one example.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub batch_stats: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: UNetConfig,
    params: Vec<f64>,
    running: Vec<f64>,
}

fn check_finite(t: &[f64], layer: impl FnOnce() -> String) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer: layer() })
    }
}

impl UNet {
    /// Glorot-uniform weights, unit gains, zero offsets.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.params];
        let area = KERNEL * KERNEL;
        for l in layout.enc.iter().chain(&layout.dec) {
            let limit = (6.0 / ((l.cin + l.cout) * area) as f64).sqrt();
            for p in &mut params[l.weight.clone()] {
                *p = rng.random_range(-limit..limit);
            }
            params[l.gamma.clone()].fill(1.0);
        }
        let limit = (6.0 / (config.base_channels + config.input_channels) as f64).sqrt();
        for p in &mut params[layout.head_w.clone()] {
            *p = rng.random_range(-limit..limit);
        }
        let mut running = vec![0.0; layout.stats];
        for l in layout.enc.iter().chain(&layout.dec) {
            running[l.stats + l.cout..l.stats + 2 * l.cout].fill(1.0);
        }
        Ok(UNet { config, params, running })
    }

    /// Rebuilds a model from stored parameters and running statistics.
    pub fn from_parts(config: UNetConfig, params: Vec<f64>, running: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.params || running.len() != layout.stats {
            return Err(Error::shape(&[layout.params, layout.stats], &[params.len(), running.len()]));
        }
        check_finite(&params, || "parameters".into())?;
        Ok(UNet { config, params, running })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[f64] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Named parameter blocks in flat-vector order.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        Layout::new(&self.config).blocks
    }

    /// Blends per-example normalization statistics into the running ones.
    pub fn update_running_stats(&mut self, batch_stats: &[f64]) {
        let m = self.config.norm_momentum;
        for (r, b) in self.running.iter_mut().zip(batch_stats) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    fn input_tensor(&self, mixture: &Array3<f64>) -> Result<Tensor> {
        let want = self.config.input_shape();
        if mixture.shape() != want {
            return Err(Error::shape(&want, mixture.shape()));
        }
        if mixture.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("mixture magnitudes must be finite and nonnegative".into()));
        }
        Ok(Tensor {
            c: want[0],
            h: want[1],
            w: want[2],
            data: mixture.iter().copied().collect(),
        })
    }

    fn to_array(&self, t: &Tensor) -> Array3<f64> {
        Array3::from_shape_vec((t.c, t.h, t.w), t.data.clone()).expect("tensor shape")
    }

    /// Inference: dropout off, mask in `[0, 1]`, estimate = mask * mixture.
    pub fn forward(&self, mixture: &Array3<f64>) -> Result<ForwardOutput> {
        let x = self.input_tensor(mixture)?;
        let cache = self.forward_cached(&x, None)?;
        let mask = self.to_array(&cache.mask);
        let estimate = &mask * mixture;
        Ok(ForwardOutput { mask, estimate })
    }

    pub(crate) fn forward_cached(&self, x: &Tensor, mut dropout: Option<&mut ChaCha8Rng>) -> Result<Cache> {
        let layout = Layout::new(&self.config);
        let p = &self.params;
        let slope = self.config.leaky_slope;
        let mut enc: Vec<EncCache> = Vec::with_capacity(layout.enc.len());
        for (i, l) in layout.enc.iter().enumerate() {
            let h = if i == 0 { x } else { &enc[i - 1].act };
            let (u, cols) = ops::conv_forward(h, &p[l.weight.clone()], l.cout);
            check_finite(&u.data, || format!("encoder{i}.conv"))?;
            let (pre, norm) = ops::norm_forward(&u, &p[l.gamma.clone()], &p[l.beta.clone()]);
            check_finite(&pre.data, || format!("encoder{i}.norm"))?;
            let mut act = pre.clone();
            act.data.iter_mut().for_each(|v| {
                if *v <= 0.0 {
                    *v *= slope
                }
            });
            enc.push(EncCache { cols, norm, pre, act });
        }

        let d = layout.dec.len();
        let mut dec: Vec<DecCache> = Vec::with_capacity(d);
        let mut input = enc[d - 1].act.clone();
        for (j, l) in layout.dec.iter().enumerate() {
            let u = ops::deconv_forward(&input, &p[l.weight.clone()], l.cout);
            check_finite(&u.data, || format!("decoder{j}.deconv"))?;
            let (pre, norm) = ops::norm_forward(&u, &p[l.gamma.clone()], &p[l.beta.clone()]);
            check_finite(&pre.data, || format!("decoder{j}.norm"))?;
            let mut out = pre.clone();
            out.data.iter_mut().for_each(|v| *v = v.max(0.0));
            let rate = self.config.dropout;
            let drop = match dropout.as_deref_mut() {
                Some(rng) if j < self.config.dropout_layers && rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m: Vec<f64> = (0..out.data.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    out.data.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            let next = if j + 1 < d { out.concat(&enc[d - 2 - j].act) } else { Tensor::zeros(0, 0, 0) };
            dec.push(DecCache { input, norm, pre, drop, out });
            input = next;
        }

        let top = &dec[d - 1].out;
        let n = top.plane();
        let cout = self.config.input_channels;
        let mut mask = Tensor::zeros(cout, top.h, top.w);
        gemm(cout, top.c, n, &p[layout.head_w.clone()], false, &top.data, false, 0.0, &mut mask.data);
        for (c, b) in p[layout.head_b.clone()].iter().enumerate() {
            mask.data[c * n..(c + 1) * n].iter_mut().for_each(|z| *z = ops::sigmoid(*z + b));
        }
        check_finite(&mask.data, || "head".into())?;
        Ok(Cache { input: x.clone(), enc, dec, mask })
    }

    /// Gradient of the parameters given `dmask`, the loss gradient with
    /// respect to the mask.
    pub(crate) fn backward(&self, cache: &Cache, dmask: &[f64]) -> Result<Vec<f64>> {
        let layout = Layout::new(&self.config);
        let p = &self.params;
        let mut grad = vec![0.0; layout.params];
        let d = layout.dec.len();

        let top = &cache.dec[d - 1].out;
        let n = top.plane();
        let cout = self.config.input_channels;
        let dz: Vec<f64> = dmask
            .iter()
            .zip(&cache.mask.data)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        gemm(cout, n, top.c, &dz, false, &top.data, true, 1.0, &mut grad[layout.head_w.clone()]);
        for c in 0..cout {
            grad[layout.head_b.start + c] = dz[c * n..(c + 1) * n].iter().sum();
        }
        let mut dout = Tensor::zeros(top.c, top.h, top.w);
        gemm(top.c, cout, n, &p[layout.head_w.clone()], true, &dz, false, 0.0, &mut dout.data);

        let mut denc: Vec<Tensor> = cache
            .enc
            .iter()
            .map(|e| Tensor::zeros(e.act.c, e.act.h, e.act.w))
            .collect();
        for j in (0..d).rev() {
            let l = &layout.dec[j];
            let c = &cache.dec[j];
            if let Some(m) = &c.drop {
                dout.data.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
            }
            dout.data
                .iter_mut()
                .zip(&c.pre.data)
                .for_each(|(g, y)| if *y <= 0.0 { *g = 0.0 });
            let (dgamma, dbeta) = split_two(&mut grad, &l.gamma, &l.beta);
            let du = ops::norm_backward(&dout, &c.norm, &p[l.gamma.clone()], dgamma, dbeta);
            let dinput = ops::deconv_backward(&du, &c.input, &p[l.weight.clone()], &mut grad[l.weight.clone()]);
            check_finite(&dinput.data, || format!("decoder{j}.backward"))?;
            if j == 0 {
                add_into(&mut denc[d - 1].data, &dinput.data);
            } else {
                let prev = cache.dec[j - 1].out.c;
                let split = prev * dinput.plane();
                add_into(&mut denc[d - 1 - j].data, &dinput.data[split..]);
                dout = Tensor {
                    c: prev,
                    h: dinput.h,
                    w: dinput.w,
                    data: dinput.data[..split].to_vec(),
                };
            }
        }

        let slope = self.config.leaky_slope;
        for i in (0..layout.enc.len()).rev() {
            let l = &layout.enc[i];
            let c = &cache.enc[i];
            let mut dy = std::mem::replace(&mut denc[i], Tensor::zeros(0, 0, 0));
            dy.data
                .iter_mut()
                .zip(&c.pre.data)
                .for_each(|(g, y)| if *y <= 0.0 { *g *= slope });
            let (dgamma, dbeta) = split_two(&mut grad, &l.gamma, &l.beta);
            let du = ops::norm_backward(&dy, &c.norm, &p[l.gamma.clone()], dgamma, dbeta);
            let (h, w) = if i == 0 {
                (cache.input.h, cache.input.w)
            } else {
                (cache.enc[i - 1].act.h, cache.enc[i - 1].act.w)
            };
            let dx = ops::conv_backward(&du, &c.cols, &p[l.weight.clone()], l.cin, h, w, &mut grad[l.weight.clone()]);
            check_finite(&dx.data, || format!("encoder{i}.backward"))?;
            if i > 0 {
                add_into(&mut denc[i - 1].data, &dx.data);
            }
        }
        Ok(grad)
    }

    /// L1 loss of the masked estimate against `target` and its gradient.
    /// Pass a generator to enable dropout (training mode).
    pub fn gradient(&self, mixture: &Array3<f64>, target: &Array3<f64>, dropout: Option<&mut ChaCha8Rng>) -> Result<Gradient> {
        let x = self.input_tensor(mixture)?;
        if target.shape() != mixture.shape() {
            return Err(Error::shape(mixture.shape(), target.shape()));
        }
        let cache = self.forward_cached(&x, dropout)?;
        let (loss, dmask) = self.loss_terms(&cache, target);
        let grad = self.backward(&cache, &dmask)?;
        Ok(Gradient {
            loss,
            grad,
            batch_stats: self.batch_stats(&cache),
        })
    }

    pub(crate) fn loss_terms(&self, cache: &Cache, target: &Array3<f64>) -> (f64, Vec<f64>) {
        let n = cache.input.data.len() as f64;
        let mut loss = 0.0;
        let dmask = cache
            .input
            .data
            .iter()
            .zip(&cache.mask.data)
            .zip(target.iter())
            .map(|((x, m), t)| {
                let r = m * x - t;
                loss += r.abs();
                sign(r) * x / n
            })
            .collect();
        (loss / n, dmask)
    }

    pub(crate) fn residual_signs(&self, cache: &Cache, target: &Array3<f64>) -> Vec<f64> {
        cache
            .input
            .data
            .iter()
            .zip(&cache.mask.data)
            .zip(target.iter())
            .map(|((x, m), t)| sign(m * x - t))
            .collect()
    }

    pub(crate) fn tensor(&self, mixture: &Array3<f64>) -> Result<Tensor> {
        self.input_tensor(mixture)
    }

    fn batch_stats(&self, cache: &Cache) -> Vec<f64> {
        let mut out = vec![0.0; self.running.len()];
        let layout = Layout::new(&self.config);
        let caches = cache.enc.iter().map(|e| &e.norm).chain(cache.dec.iter().map(|d| &d.norm));
        for (l, nc) in layout.enc.iter().chain(&layout.dec).zip(caches) {
            out[l.stats..l.stats + l.cout].copy_from_slice(&nc.mean);
            out[l.stats + l.cout..l.stats + 2 * l.cout].copy_from_slice(&nc.var);
        }
        out
    }
}

/// Subgradient of `|r|`, zero at `r == 0`.
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Disjoint mutable views of two adjacent-or-ordered ranges (`a` before `b`).
fn split_two<'a>(v: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Mean absolute difference between two grids.
pub fn l1_masked_loss(estimate: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    if estimate.shape() != target.shape() {
        return Err(Error::shape(target.shape(), estimate.shape()));
    }
    if estimate.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    let sum: f64 = estimate.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / estimate.len() as f64)
}
