//! Dense kernels for the U-Net: strided 5x5 convolution and its adjoint via
//! im2col/col2im and GEMM, instance normalization, pointwise activations.
//!
//! Tensors are single examples stored channel-major as flat `[c][h][w]`.

use matrixmultiply::dgemm;

pub const KERNEL: usize = 5;
pub const STRIDE: usize = 2;
/// Top/left padding of a "same" stride-2 5x5 convolution on an even axis.
/// The bottom/right side is padded by 2, implied by the bounds check.
pub const PAD: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!((self.h, self.w), (other.h, other.w));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor { c: self.c + other.c, h: self.h, w: self.w, data }
    }
}

/// `c = a * b + beta * c` with optional transposes of row-major operands.
/// `a` is `m x k` after transposition, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the strided extents given above.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
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
        );
    }
}

/// For output index `o` and kernel tap `k`, the input index, if inside.
#[inline]
fn src_index(o: usize, k: usize, len: usize) -> Option<usize> {
    let i = (o * STRIDE + k).checked_sub(PAD)?;
    (i < len).then_some(i)
}

/// Unfolds `x` into a `[c*25, ho*wo]` patch matrix for a stride-2 conv.
pub fn im2col(x: &Tensor) -> Vec<f64> {
    let (ho, wo) = (x.h / STRIDE, x.w / STRIDE);
    let n = ho * wo;
    let mut cols = vec![0.0; x.c * KERNEL * KERNEL * n];
    for c in 0..x.c {
        let plane = x.channel(c);
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = &mut cols[((c * KERNEL + ki) * KERNEL + kj) * n..][..n];
                for oh in 0..ho {
                    let Some(ih) = src_index(oh, ki, x.h) else { continue };
                    let src = &plane[ih * x.w..(ih + 1) * x.w];
                    let dst = &mut row[oh * wo..(oh + 1) * wo];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        if let Some(iw) = src_index(ow, kj, x.w) {
                            *d = src[iw];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a `c x h x w` grid.
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    let n = ho * wo;
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let plane = &mut out.data[ch * h * w..(ch + 1) * h * w];
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = &cols[((ch * KERNEL + ki) * KERNEL + kj) * n..][..n];
                for oh in 0..ho {
                    let Some(ih) = src_index(oh, ki, h) else { continue };
                    let dst = &mut plane[ih * w..(ih + 1) * w];
                    for (ow, s) in row[oh * wo..(oh + 1) * wo].iter().enumerate() {
                        if let Some(iw) = src_index(ow, kj, w) {
                            dst[iw] += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Strided convolution without bias. `weight` is `[cout, cin*25]`.
/// Returns the output and the patch matrix for the backward pass.
pub fn conv_forward(x: &Tensor, weight: &[f64], cout: usize) -> (Tensor, Vec<f64>) {
    let cols = im2col(x);
    let (ho, wo) = (x.h / STRIDE, x.w / STRIDE);
    let mut y = Tensor::zeros(cout, ho, wo);
    gemm(cout, x.c * KERNEL * KERNEL, ho * wo, weight, false, &cols, false, 0.0, &mut y.data);
    (y, cols)
}

/// Returns `dx` and accumulates the weight gradient into `dw`.
pub fn conv_backward(dy: &Tensor, cols: &[f64], weight: &[f64], cin: usize, h: usize, w: usize, dw: &mut [f64]) -> Tensor {
    let k = cin * KERNEL * KERNEL;
    let n = dy.plane();
    gemm(dy.c, n, k, &dy.data, false, cols, true, 1.0, dw);
    let mut dcols = vec![0.0; k * n];
    gemm(k, dy.c, n, weight, true, &dy.data, false, 0.0, &mut dcols);
    col2im(&dcols, cin, h, w)
}

/// Transposed strided convolution (the adjoint of [`conv_forward`]), doubling
/// both spatial axes. `weight` is `[cin, cout*25]`.
pub fn deconv_forward(x: &Tensor, weight: &[f64], cout: usize) -> Tensor {
    let k = cout * KERNEL * KERNEL;
    let n = x.plane();
    let mut cols = vec![0.0; k * n];
    gemm(k, x.c, n, weight, true, &x.data, false, 0.0, &mut cols);
    col2im(&cols, cout, x.h * STRIDE, x.w * STRIDE)
}

/// Returns `dx` and accumulates the weight gradient into `dw`.
pub fn deconv_backward(dy: &Tensor, x: &Tensor, weight: &[f64], dw: &mut [f64]) -> Tensor {
    let dcols = im2col(dy);
    let k = dy.c * KERNEL * KERNEL;
    let n = x.plane();
    gemm(x.c, n, k, &x.data, false, &dcols, true, 1.0, dw);
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    gemm(x.c, k, n, weight, false, &dcols, false, 0.0, &mut dx.data);
    dx
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel normalization over the spatial plane followed by an affine map.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn norm_forward(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, NormCache) {
    let n = x.plane();
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    let mut cache = NormCache {
        xhat: vec![0.0; x.data.len()],
        inv_std: vec![0.0; x.c],
        mean: vec![0.0; x.c],
        var: vec![0.0; x.c],
    };
    for c in 0..x.c {
        let src = x.channel(c);
        let mean = src.iter().sum::<f64>() / n as f64;
        let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        let range = c * n..(c + 1) * n;
        for ((xh, out), v) in cache.xhat[range.clone()].iter_mut().zip(&mut y.data[range]).zip(src) {
            *xh = (v - mean) * inv;
            *out = gamma[c] * *xh + beta[c];
        }
        cache.inv_std[c] = inv;
        cache.mean[c] = mean;
        cache.var[c] = var;
    }
    (y, cache)
}

/// Returns `dx`, accumulating into `dgamma` and `dbeta`.
pub fn norm_backward(dy: &Tensor, cache: &NormCache, gamma: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) -> Tensor {
    let n = dy.plane();
    let nf = n as f64;
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for c in 0..dy.c {
        let range = c * n..(c + 1) * n;
        let g = &dy.data[range.clone()];
        let xhat = &cache.xhat[range.clone()];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xhat).map(|(a, b)| a * b).sum();
        dgamma[c] += sum_gx;
        dbeta[c] += sum_g;
        let scale = gamma[c] * cache.inv_std[c] / nf;
        for ((d, gi), xh) in dx.data[range].iter_mut().zip(g).zip(xhat) {
            *d = scale * (nf * gi - sum_g - xh * sum_gx);
        }
    }
    dx
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor { c, h, w, data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Direct evaluation of the padded strided convolution.
    fn naive_conv(x: &Tensor, weight: &[f64], cout: usize) -> Tensor {
        let (ho, wo) = (x.h / 2, x.w / 2);
        let mut y = Tensor::zeros(cout, ho, wo);
        for o in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..x.c {
                        for ki in 0..5 {
                            for kj in 0..5 {
                                let ih = (oh * 2 + ki) as isize - 1;
                                let iw = (ow * 2 + kj) as isize - 1;
                                if ih < 0 || iw < 0 || ih >= x.h as isize || iw >= x.w as isize {
                                    continue;
                                }
                                acc += weight[o * x.c * 25 + c * 25 + ki * 5 + kj]
                                    * x.data[(c * x.h + ih as usize) * x.w + iw as usize];
                            }
                        }
                    }
                    y.data[(o * ho + oh) * wo + ow] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(3, 8, 12, &mut rng);
        let w: Vec<f64> = (0..4 * 3 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = conv_forward(&x, &w, 4);
        let want = naive_conv(&x, &w, 4);
        for (a, b) in y.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv(y)> with the weight reinterpreted
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(3, 8, 8, &mut rng);
        let y = random(5, 4, 4, &mut rng);
        let w: Vec<f64> = (0..5 * 3 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (cx, _) = conv_forward(&x, &w, 5);
        let dy = deconv_forward(&y, &w, 3);
        assert_eq!((dy.c, dy.h, dy.w), (3, 8, 8));
        assert!((dot(&cx.data, &y.data) - dot(&x.data, &dy.data)).abs() < 1e-10);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(2, 6, 10, &mut rng);
        let cols = im2col(&x);
        let r: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = col2im(&r, 2, 6, 10);
        assert!((dot(&cols, &r) - dot(&x.data, &back.data)).abs() < 1e-10);
    }

    #[test]
    fn norm_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(2, 4, 4, &mut rng);
        let (y, _) = norm_forward(&x, &[1.0, 1.0], &[0.0, 0.0]);
        for c in 0..2 {
            let ch = y.channel(c);
            let mean = ch.iter().sum::<f64>() / 16.0;
            let var = ch.iter().map(|v| v * v).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
