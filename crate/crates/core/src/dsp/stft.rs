//! Centered short-time Fourier transform with reflect padding, and its
//! least-squares overlap-add inverse.
//!
//! Frame `t` is centered on sample `t * hop`, so a signal of `len` samples
//! yields `1 + len / hop` frames. Analysis and synthesis both use a periodic
//! Hann window; the inverse divides by the summed squared window, which makes
//! `istft(stft(x)) == x` up to rounding for any hop that leaves no gaps.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array3, ArrayViewMut2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Spectrogram, SpectrogramValues};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Samples below this summed squared window are left at zero on inversion.
const WINDOW_SUM_FLOOR: f64 = 1e-10;

pub fn hann_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos())
        .collect()
}

/// Index into `[0, len)` under whole-sample symmetric reflection (the sample
/// at the boundary is not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Reusable FFT plans and window for one `(window_size, hop)` pair.
#[derive(Clone)]
pub struct StftPlan {
    window_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("window_size", &self.window_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    pub fn new(window_size: usize, hop: usize) -> Result<Self> {
        if window_size < 2 || window_size % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "window size must be even and at least 2, got {window_size}"
            )));
        }
        if hop == 0 || hop > window_size {
            return Err(Error::InvalidInput(format!(
                "hop must be in 1..={window_size}, got {hop}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(StftPlan {
            window_size,
            hop,
            window: hann_window(window_size),
            forward: planner.plan_fft_forward(window_size),
            inverse: planner.plan_fft_inverse(window_size),
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Writes frames `range` of `signal` into `out` (shape `frames x bins`).
    pub fn analyze_frames(
        &self,
        signal: &[f64],
        range: Range<usize>,
        mut out: ArrayViewMut2<Complex64>,
    ) {
        let n = self.window_size;
        let half = (n / 2) as isize;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for (row, t) in range.enumerate() {
            let start = (t * self.hop) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let x = signal[reflect(start + j as isize, signal.len())];
                *slot = Complex64::new(x * self.window[j], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in out.row_mut(row).iter_mut().enumerate() {
                *v = buf[k];
            }
        }
    }

    pub fn stft(&self, clip: &AudioClip) -> Result<Spectrogram> {
        if clip.is_empty() {
            return Err(Error::InvalidInput("cannot transform an empty clip".into()));
        }
        let frames = self.frame_count(clip.len());
        let mut grid = Array3::zeros((clip.num_channels(), frames, self.bins()));
        for (c, samples) in clip.channels().iter().enumerate() {
            self.analyze_frames(
                samples,
                0..frames,
                grid.index_axis_mut(ndarray::Axis(0), c),
            );
        }
        Ok(Spectrogram {
            values: SpectrogramValues::Complex(grid),
            window_size: self.window_size,
            hop: self.hop,
            sample_rate: clip.sample_rate(),
        })
    }

    /// Inverts a complex spectrogram. A grid with `window_size / 2` bins is
    /// taken to have lost its top bin, which is restored as zeros. `length`
    /// defaults to `hop * (frames - 1)`.
    pub fn istft(&self, spec: &Spectrogram, length: Option<usize>) -> Result<AudioClip> {
        let grid = spec.as_complex()?;
        let [channels, frames, bins] = spec.shape();
        if bins != self.bins() && bins != self.bins() - 1 {
            return Err(Error::InvalidInput(format!(
                "{bins} bins do not match window size {}",
                self.window_size
            )));
        }
        let length = length.unwrap_or(self.hop * frames.saturating_sub(1));
        let mut ola = OverlapAdd::new(self, channels, length);
        for c in 0..channels {
            for t in 0..frames {
                let row = grid.slice(ndarray::s![c, t, ..]);
                ola.add_frame(c, t, row.as_slice().expect("standard layout"));
            }
        }
        AudioClip::new(ola.finish(), spec.sample_rate)
    }
}

/// Incremental overlap-add synthesis so long signals can be resynthesized
/// block by block without holding a whole complex grid.
pub struct OverlapAdd<'a> {
    plan: &'a StftPlan,
    length: usize,
    acc: Vec<Vec<f64>>,
    weight: Vec<f64>,
    weighted: Vec<bool>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl<'a> OverlapAdd<'a> {
    pub fn new(plan: &'a StftPlan, channels: usize, length: usize) -> Self {
        let padded = length + plan.window_size;
        OverlapAdd {
            plan,
            length,
            acc: vec![vec![0.0; padded]; channels],
            weight: vec![0.0; padded],
            weighted: Vec::new(),
            buf: vec![Complex64::new(0.0, 0.0); plan.window_size],
            scratch: vec![Complex64::new(0.0, 0.0); plan.inverse.get_inplace_scratch_len()],
        }
    }

    /// Adds frame `t` of `channel`. `spectrum` holds the nonnegative-frequency
    /// bins, optionally without the top one.
    pub fn add_frame(&mut self, channel: usize, t: usize, spectrum: &[Complex64]) {
        let n = self.plan.window_size;
        let start = t * self.plan.hop;
        if start >= self.acc[channel].len() {
            return;
        }
        for k in 0..=n / 2 {
            let v = spectrum.get(k).copied().unwrap_or_default();
            self.buf[k] = v;
            if k > 0 && k < n / 2 {
                self.buf[n - k] = v.conj();
            }
        }
        // The imaginary parts of the DC and Nyquist bins carry no real signal.
        self.buf[0].im = 0.0;
        self.buf[n / 2].im = 0.0;
        self.plan
            .inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / n as f64;
        let end = (start + n).min(self.acc[channel].len());
        for (j, idx) in (start..end).enumerate() {
            self.acc[channel][idx] += self.buf[j].re * scale * self.plan.window[j];
        }
        if self.weighted.len() <= t {
            self.weighted.resize(t + 1, false);
        }
        if !self.weighted[t] {
            self.weighted[t] = true;
            for (j, idx) in (start..end).enumerate() {
                self.weight[idx] += self.plan.window[j] * self.plan.window[j];
            }
        }
    }

    pub fn finish(self) -> Vec<Vec<f64>> {
        let half = self.plan.window_size / 2;
        let weight = self.weight;
        self.acc
            .into_iter()
            .map(|acc| {
                (0..self.length)
                    .map(|i| {
                        let w = weight[i + half];
                        if w > WINDOW_SUM_FLOOR {
                            acc[i + half] / w
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn stft(clip: &AudioClip, window_size: usize, hop: usize) -> Result<Spectrogram> {
    StftPlan::new(window_size, hop)?.stft(clip)
}

pub fn istft(spec: &Spectrogram, length: Option<usize>) -> Result<AudioClip> {
    StftPlan::new(spec.window_size, spec.hop)?.istft(spec, length)
}
