//! Synthetic songs with spectrally disjoint sources, for smoke tests and
//! desk-scale experiments.
//!
//! "Vocals" are sequences of short notes, each a sum of sinusoids in a high
//! band; "instruments" are low-passed noise with a slow amplitude envelope.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, WavFormat};
use crate::dataset::{TrackAudio, Manifest, Quality, TrackBundle};
use crate::error::Result;
use crate::sample::StemName;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub sample_rate: u32,
    /// Band of the vocal partials, Hz.
    pub vocal_band: (f64, f64),
    /// Cutoff of the instrument low-pass, Hz.
    pub instrument_cutoff: f64,
    pub partials: usize,
    /// Note lengths are uniform in this range, seconds.
    pub note_s: (f64, f64),
    /// Probability that a note slot is a rest.
    pub rest_probability: f64,
    /// RMS of each source before mixing.
    pub rms: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            sample_rate: 22050,
            vocal_band: (4000.0, 9000.0),
            instrument_cutoff: 2000.0,
            partials: 3,
            note_s: (0.04, 0.15),
            rest_probability: 0.2,
            rms: 0.1,
        }
    }
}

const LOWPASS_TAPS: usize = 129;

/// Windowed-sinc low-pass kernel (Blackman window), unit DC gain.
fn lowpass_kernel(cutoff: f64, rate: f64) -> Vec<f64> {
    let fc = cutoff / rate;
    let m = (LOWPASS_TAPS - 1) as f64;
    let mut h: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|i| {
            let x = i as f64 - m / 2.0;
            let sinc = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / m).cos() + 0.08 * (4.0 * PI * i as f64 / m).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

fn normalize(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

fn vocal_channel(len: usize, cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = cfg.sample_rate as f64;
    let mut out = vec![0.0; len];
    let mut t = 0;
    while t < len {
        let n = ((rng.random_range(cfg.note_s.0..=cfg.note_s.1) * rate) as usize).max(1);
        let end = (t + n).min(len);
        if !rng.random_bool(cfg.rest_probability) {
            let ramp = (0.005 * rate) as usize;
            for _ in 0..cfg.partials {
                let f = rng.random_range(cfg.vocal_band.0..cfg.vocal_band.1);
                let a = rng.random_range(0.3..1.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (k, v) in out[t..end].iter_mut().enumerate() {
                    let edge = k.min(n - 1 - k.min(n - 1));
                    let env = if edge < ramp { edge as f64 / ramp as f64 } else { 1.0 };
                    *v += env * a * (2.0 * PI * f * k as f64 / rate + phase).sin();
                }
            }
        }
        t = end;
    }
    out
}

fn instrument_channel(len: usize, cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = cfg.sample_rate as f64;
    let h = lowpass_kernel(cfg.instrument_cutoff, rate);
    let noise: Vec<f64> = (0..len + h.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lfo_hz = rng.random_range(0.5..4.0);
    let lfo_phase = rng.random_range(0.0..2.0 * PI);
    (0..len)
        .map(|i| {
            let y: f64 = h.iter().zip(&noise[i..]).map(|(a, b)| a * b).sum();
            let env = 0.6 + 0.4 * (2.0 * PI * lfo_hz * i as f64 / rate + lfo_phase).sin();
            env * y
        })
        .collect()
}

/// One stereo song of `len` samples with `vocals` and `instrumental` stems
/// whose sum is the mixture.
pub fn toy_song(id: &str, len: usize, cfg: &ToyConfig, seed: u64) -> Result<TrackAudio> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stem = |make: &dyn Fn(&mut ChaCha8Rng) -> Vec<f64>| -> Result<AudioClip> {
        let mut chans: Vec<Vec<f64>> = (0..2).map(|_| make(&mut rng)).collect();
        chans.iter_mut().for_each(|c| normalize(c, cfg.rms));
        AudioClip::new(chans, cfg.sample_rate)
    };
    let vocals = stem(&|r| vocal_channel(len, cfg, r))?;
    let instrumental = stem(&|r| instrument_channel(len, cfg, r))?;
    let mixture = AudioClip::sum([&vocals, &instrumental])?;
    Ok(TrackAudio {
        id: id.to_string(),
        mixture,
        stems: [(StemName::Vocals, vocals), (StemName::Instrumental, instrumental)].into(),
    })
}

/// `count` songs named `toy000`, `toy001`, ...; song `i` is seeded with
/// `derive(seed, "toy<i>")`.
pub fn toy_songs(count: usize, len: usize, cfg: &ToyConfig, seed: u64) -> Result<Vec<TrackAudio>> {
    (0..count)
        .map(|i| {
            let id = format!("toy{i:03}");
            toy_song(&id, len, cfg, seed::derive(seed, &id))
        })
        .collect()
}

/// Writes songs as float WAV files under `dir/<id>/` and returns a manifest
/// with one artist per song, all in genre "toy".
pub fn write_toy_dataset(dir: &Path, songs: &[TrackAudio]) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(songs.len());
    for song in songs {
        let song_dir = dir.join(&song.id);
        std::fs::create_dir_all(&song_dir).map_err(|e| crate::Error::io(&song_dir, e))?;
        let mixture = song_dir.join("mixture.wav");
        write_wav(&mixture, &song.mixture, WavFormat::Float32)?;
        let mut stems = BTreeMap::new();
        for (&name, clip) in &song.stems {
            let path = song_dir.join(format!("{name}.wav"));
            write_wav(&path, clip, WavFormat::Float32)?;
            stems.insert(name, path);
        }
        entries.push(TrackBundle {
            id: song.id.clone(),
            artist: format!("artist-{}", song.id),
            genre: "toy".into(),
            duration_s: song.mixture.duration_s(),
            mixture,
            stems,
            quality: Quality::SeparatedRecordings,
        });
    }
    Ok(Manifest::new(entries))
}
