//! Lag estimation by normalized cross-correlation over a bounded lag window.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};

/// Correlation `c[lag] = sum_n a[n] * b[n + lag]` for `lag` in
/// `-max_lag..=max_lag`, returned with index `lag + max_lag`.
///
/// Works block by block with FFTs of a fixed size, so memory stays bounded
/// by a few multiples of `max_lag` regardless of signal length.
pub fn cross_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Vec<f64> {
    let span = 2 * max_lag + 1;
    let mut out = vec![0.0; span];
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let size = (4 * max_lag).max(1024).next_power_of_two();
    let block = size - 2 * max_lag;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa = vec![Complex64::default(); size];
    let mut fb = vec![Complex64::default(); size];
    let mut scratch = vec![Complex64::default(); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
    let scale = 1.0 / size as f64;
    let mut start = 0;
    while start < a.len() {
        let len = block.min(a.len() - start);
        fa.iter_mut().for_each(|v| *v = Complex64::default());
        for (slot, &x) in fa.iter_mut().zip(&a[start..start + len]) {
            slot.re = x;
        }
        // b window begins max_lag samples before the block
        for (j, slot) in fb.iter_mut().enumerate() {
            let idx = (start + j) as isize - max_lag as isize;
            slot.re = if idx >= 0 && (idx as usize) < b.len() { b[idx as usize] } else { 0.0 };
            slot.im = 0.0;
        }
        fwd.process_with_scratch(&mut fa, &mut scratch);
        fwd.process_with_scratch(&mut fb, &mut scratch);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x = x.conj() * y;
        }
        inv.process_with_scratch(&mut fa, &mut scratch);
        for (o, v) in out.iter_mut().zip(&fa[..span]) {
            *o += v.re * scale;
        }
        start += len;
    }
    out
}

/// Result of aligning an instrumental against its mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// Samples by which the instrumental lags the mix (positive: it starts
    /// later). The instrumental matches the mix when read at `n + lag`.
    pub lag: i64,
    /// Peak of the correlation normalized by both signal norms.
    pub peak: f64,
}

impl Alignment {
    /// Shift to apply to the instrumental to line it up with the mix.
    pub fn shift(&self) -> i64 {
        -self.lag
    }

    /// Start indices into (mix, instrumental) and the common length.
    pub fn support(&self, mix_len: usize, inst_len: usize) -> (usize, usize, usize) {
        let mix_start = (-self.lag).max(0) as usize;
        let inst_start = self.lag.max(0) as usize;
        let len = mix_len.saturating_sub(mix_start).min(inst_len.saturating_sub(inst_start));
        (mix_start, inst_start, len)
    }
}

/// Finds the lag in `[-max_lag, max_lag]` maximizing the normalized
/// correlation of two mono signals. Ties go to the smallest absolute lag.
pub fn estimate_lag(mix: &[f64], inst: &[f64], max_lag: usize, min_peak: f64) -> Result<Alignment> {
    let norm = (mix.iter().map(|x| x * x).sum::<f64>() * inst.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if norm == 0.0 {
        return Err(Error::AlignmentFailed { peak: 0.0, threshold: min_peak });
    }
    let corr = cross_correlation(mix, inst, max_lag);
    let mut best = (f64::NEG_INFINITY, 0i64);
    for (i, &c) in corr.iter().enumerate() {
        let lag = i as i64 - max_lag as i64;
        let v = c / norm;
        if v > best.0 || (v == best.0 && lag.abs() < best.1.abs()) {
            best = (v, lag);
        }
    }
    if best.0 < min_peak {
        return Err(Error::AlignmentFailed { peak: best.0, threshold: min_peak });
    }
    Ok(Alignment { lag: best.1, peak: best.0 })
}
