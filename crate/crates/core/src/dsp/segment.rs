use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::{Spectrogram, SpectrogramValues, StftPlan};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Geometry of the fixed-size spectrogram segments the model consumes.
///
/// A segment of `samples` audio samples at `sample_rate` becomes a
/// `(2, frames, bins)` magnitude grid once the highest bin is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop: usize,
    pub frames: usize,
    pub bins: usize,
    pub samples: usize,
}

impl SegmentSpec {
    /// 11.88 s at 22050 Hz, window 2048, hop 512: grids of `(2, 512, 1024)`.
    pub const STANDARD: SegmentSpec = SegmentSpec {
        sample_rate: 22050,
        window_size: 2048,
        hop: 512,
        frames: 512,
        bins: 1024,
        samples: 261_954,
    };

    pub fn new(
        sample_rate: u32,
        window_size: usize,
        hop: usize,
        frames: usize,
        bins: usize,
        samples: usize,
    ) -> Result<Self> {
        let spec = SegmentSpec {
            sample_rate,
            window_size,
            hop,
            frames,
            bins,
            samples,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A smaller geometry with the same window/hop ratio as the standard one,
    /// for desk-scale experiments: `window = 2 * bins`, `hop = window / 4`.
    pub fn scaled(sample_rate: u32, frames: usize, bins: usize) -> Result<Self> {
        let window_size = 2 * bins;
        let hop = window_size / 4;
        Self::new(sample_rate, window_size, hop, frames, bins, hop * (frames - 1).max(0))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        if !self.frames.is_power_of_two() || !self.bins.is_power_of_two() {
            return fail(format!(
                "frames ({}) and bins ({}) must be powers of two",
                self.frames, self.bins
            ));
        }
        if self.bins != self.window_size / 2 {
            return fail(format!(
                "bins ({}) must equal window_size / 2 ({})",
                self.bins,
                self.window_size / 2
            ));
        }
        if self.hop == 0 || self.hop > self.window_size || self.sample_rate == 0 {
            return fail("hop must be in 1..=window_size and the rate positive".into());
        }
        if 1 + self.samples / self.hop != self.frames {
            return fail(format!(
                "{} samples at hop {} give {} frames, not {}",
                self.samples,
                self.hop,
                1 + self.samples / self.hop,
                self.frames
            ));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples as f64 / self.sample_rate as f64
    }

    pub fn grid_shape(&self) -> [usize; 3] {
        [2, self.frames, self.bins]
    }

    pub fn plan(&self) -> Result<StftPlan> {
        StftPlan::new(self.window_size, self.hop)
    }

    pub fn offset_samples(&self, offset_s: f64) -> usize {
        (offset_s * self.sample_rate as f64).round().max(0.0) as usize
    }
}

fn stereo_excerpt(clip: &AudioClip, spec: &SegmentSpec, start: usize) -> Result<AudioClip> {
    if clip.sample_rate() != spec.sample_rate {
        return Err(Error::InvalidInput(format!(
            "segment expects {} Hz audio, got {} Hz",
            spec.sample_rate,
            clip.sample_rate()
        )));
    }
    if start + spec.samples > clip.len() {
        return Err(Error::SegmentOutOfRange {
            offset: start,
            needed: spec.samples,
            available: clip.len(),
        });
    }
    clip.to_stereo()
        .map(|stereo| stereo.slice_padded(start, spec.samples))
}

/// Full complex spectrogram (all `window_size / 2 + 1` bins) of the stereo
/// excerpt starting at sample `start`.
pub fn segment_complex(clip: &AudioClip, spec: &SegmentSpec, start: usize) -> Result<Spectrogram> {
    let excerpt = stereo_excerpt(clip, spec, start)?;
    spec.plan()?.stft(&excerpt)
}

/// Magnitude grid of shape `(2, frames, bins)` for the excerpt starting at
/// `offset_s`. Mono input is duplicated to both channels and the highest
/// frequency bin is dropped.
pub fn segment_to_standard(clip: &AudioClip, spec: &SegmentSpec, offset_s: f64) -> Result<Spectrogram> {
    let full = segment_complex(clip, spec, spec.offset_samples(offset_s))?;
    let grid = full.as_complex()?;
    debug_assert_eq!(grid.shape()[1], spec.frames);
    let magnitude: Array3<f64> = grid.slice(s![.., .., ..spec.bins]).mapv(|c| c.norm());
    Ok(Spectrogram {
        values: SpectrogramValues::Magnitude(magnitude),
        window_size: spec.window_size,
        hop: spec.hop,
        sample_rate: spec.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn standard_geometry_is_valid() {
        SegmentSpec::STANDARD.validate().unwrap();
        assert!((SegmentSpec::STANDARD.duration_s() - 11.88).abs() < 1e-4);
        assert_eq!(SegmentSpec::STANDARD.grid_shape(), [2, 512, 1024]);
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert!(SegmentSpec::new(22050, 2048, 512, 500, 1024, 255_488).is_err());
    }

    #[test]
    fn excerpt_shape_and_purity() {
        let spec = SegmentSpec::STANDARD;
        let len = 300_000;
        let x: Vec<f64> = (0..len).map(|i| ((i as u64 * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let clip = AudioClip::mono(x, 22050).unwrap();
        let a = segment_to_standard(&clip, &spec, 0.5).unwrap();
        assert_eq!(a.shape(), [2, 512, 1024]);
        assert!(a.as_magnitude().unwrap().iter().all(|&v| v >= 0.0));
        let b = segment_to_standard(&clip, &spec, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn silence_gives_zero_grid() {
        let spec = SegmentSpec::scaled(22050, 64, 128).unwrap();
        let clip = AudioClip::silence(2, spec.samples, 22050).unwrap();
        let g = segment_to_standard(&clip, &spec, 0.0).unwrap();
        assert!(g.as_magnitude().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_out_of_range() {
        let spec = SegmentSpec::scaled(22050, 64, 128).unwrap();
        let clip = AudioClip::silence(2, spec.samples + 10, 22050).unwrap();
        assert!(segment_to_standard(&clip, &spec, 0.0).is_ok());
        assert!(matches!(
            segment_to_standard(&clip, &spec, 0.01),
            Err(Error::SegmentOutOfRange { .. })
        ));
    }

    #[test]
    fn nyquist_tone_vanishes_with_top_bin() {
        let spec = SegmentSpec::scaled(22050, 64, 128).unwrap();
        let x: Vec<f64> = (0..spec.samples).map(|i| (PI * i as f64).cos()).collect();
        let clip = AudioClip::mono(x, 22050).unwrap();
        let full = segment_complex(&clip, &spec, 0).unwrap();
        let full_energy: f64 = full.as_complex().unwrap().iter().map(|c| c.norm_sqr()).sum();
        let kept = segment_to_standard(&clip, &spec, 0.0).unwrap();
        let kept_energy: f64 = kept.as_magnitude().unwrap().iter().map(|v| v * v).sum();
        // Only the Hann main-lobe neighbour of the Nyquist bin survives, which
        // carries 0.25^2 / (0.5^2 + 0.25^2) = 20% of the one-sided energy.
        let ratio = kept_energy / full_energy;
        assert!((ratio - 0.2).abs() < 1e-9, "{ratio}");
        let top_row_energy: f64 = full
            .as_complex()
            .unwrap()
            .slice(s![.., .., spec.bins])
            .iter()
            .map(|c| c.norm_sqr())
            .sum();
        assert!((top_row_energy / full_energy - 0.8).abs() < 1e-9);
    }
}
