//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Precomputed filter bank for one `source -> target` rate pair.
#[derive(Debug, Clone)]
pub struct Resampler {
    source_rate: u32,
    target_rate: u32,
    up: usize,
    down: usize,
    /// `up` phases of `TAPS` coefficients each.
    bank: Vec<f64>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 || target_rate == 0 {
            return Err(Error::InvalidInput("sample rates must be positive".into()));
        }
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = (target_rate as u64 / g) as usize;
        let down = (source_rate as u64 / g) as usize;
        let cutoff = (up as f64 / down as f64).min(1.0);
        let half = (TAPS / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut bank = Vec::with_capacity(up * TAPS);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let start = bank.len();
            for j in 0..TAPS {
                let d = j as f64 - (half - 1.0) - frac;
                let u = d / half;
                let window = if u.abs() <= 1.0 {
                    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta
                } else {
                    0.0
                };
                bank.push(cutoff * sinc(cutoff * d) * window);
            }
            let sum: f64 = bank[start..].iter().sum();
            bank[start..].iter_mut().for_each(|h| *h /= sum);
        }
        Ok(Resampler {
            source_rate,
            target_rate,
            up,
            down,
            bank,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return input.to_vec();
        }
        let offset = TAPS / 2 - 1;
        (0..self.output_len(input.len()))
            .map(|m| {
                let pos = m * self.down;
                let base = (pos / self.up) as isize;
                let phase = pos % self.up;
                let taps = &self.bank[phase * TAPS..(phase + 1) * TAPS];
                let first = base - offset as isize;
                taps.iter()
                    .enumerate()
                    .filter_map(|(j, h)| {
                        let i = first + j as isize;
                        (i >= 0 && (i as usize) < input.len()).then(|| h * input[i as usize])
                    })
                    .sum()
            })
            .collect()
    }

    pub fn process_clip(&self, clip: &AudioClip) -> Result<AudioClip> {
        if clip.sample_rate() != self.source_rate {
            return Err(Error::InvalidInput(format!(
                "resampler expects {} Hz input, got {} Hz",
                self.source_rate,
                clip.sample_rate()
            )));
        }
        let channels = clip.channels().iter().map(|c| self.process(c)).collect();
        AudioClip::new(channels, self.target_rate)
    }
}

/// Band-limited conversion to `target_rate`. Output length is
/// `round(len * target / source)`; equal rates return the clip unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    Resampler::new(clip.sample_rate(), target_rate)?.process_clip(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn halving_length() {
        let clip = AudioClip::new(vec![vec![0.0; 441_000]; 2], 44100).unwrap();
        let out = resample(&clip, 22050).unwrap();
        assert_eq!(out.len(), 220_500);
        assert_eq!(out.sample_rate(), 22050);
    }

    #[test]
    fn same_rate_is_identity() {
        let clip = AudioClip::mono(tone(300.0, 22050, 1000), 22050).unwrap();
        assert_eq!(resample(&clip, 22050).unwrap(), clip);
    }

    #[test]
    fn tone_survives_down_and_up() {
        let x = tone(1000.0, 44100, 44100);
        let clip = AudioClip::mono(x.clone(), 44100).unwrap();
        let down = resample(&clip, 22050).unwrap();
        let up = resample(&down, 44100).unwrap();
        assert_eq!(up.len(), x.len());
        let interior = 1000..x.len() - 1000;
        let c = correlation(&up.channel(0)[interior.clone()], &x[interior]);
        assert!(c > 0.999, "correlation {c}");
    }

    #[test]
    fn arbitrary_ratio_preserves_tone_frequency() {
        let x = tone(440.0, 44100, 44100);
        let clip = AudioClip::mono(x, 44100).unwrap();
        let out = resample(&clip, 48000).unwrap();
        assert_eq!(out.len(), 48000);
        let want = tone(440.0, 48000, 48000);
        let c = correlation(&out.channel(0)[500..47500], &want[500..47500]);
        assert!(c > 0.9999, "correlation {c}");
    }

    #[test]
    fn downsampling_rejects_content_above_new_nyquist() {
        // 15 kHz cannot be represented at 22050 Hz and must be filtered out.
        let clip = AudioClip::mono(tone(15_000.0, 44100, 44100), 44100).unwrap();
        let out = resample(&clip, 22050).unwrap();
        let rms = (out.channel(0)[200..22000].iter().map(|v| v * v).sum::<f64>() / 21800.0).sqrt();
        assert!(rms < 1e-3, "leaked rms {rms}");
    }

    #[test]
    fn dc_gain_is_unity() {
        let clip = AudioClip::mono(vec![1.0; 2000], 44100).unwrap();
        let out = resample(&clip, 16000).unwrap();
        for v in &out.channel(0)[100..600] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bessel_matches_reference_value() {
        // I0(8) = 427.564115721804...
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-9);
    }
}
