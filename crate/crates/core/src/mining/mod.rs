//! Building (mix, instrumental, vocals) triplets from mix/instrumental pairs:
//! duration filtering, lag alignment, loudness matching and vocal estimation
//! by half-wave rectified spectrogram difference.

mod align;
mod batch;

use std::fmt;

use ndarray::{s, Array2, Array3, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use align::{cross_correlation, estimate_lag, Alignment};
pub use batch::{mine_candidates, write_rejections, CandidateManifest, CandidatePair, MiningSummary, CANDIDATE_VERSION};

use crate::audio::AudioClip;
use crate::dsp::{OverlapAdd, Spectrogram, SpectrogramValues, StftPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub max_duration_diff_s: f64,
    pub max_duration_s: f64,
    pub max_lag_s: f64,
    pub min_peak: f64,
    pub window_size: usize,
    pub hop: usize,
    /// Keep the vocal magnitude estimate in memory on each triplet.
    pub keep_spectrograms: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            max_duration_diff_s: 2.0,
            max_duration_s: 300.0,
            max_lag_s: 2.0,
            min_peak: 0.1,
            window_size: 2048,
            hop: 512,
            keep_spectrograms: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPair {
    pub id: String,
    pub artist: String,
    pub genre: String,
    pub mix: AudioClip,
    pub instrumental: AudioClip,
}

impl TrackPair {
    pub fn new(id: impl Into<String>, mix: AudioClip, instrumental: AudioClip) -> Result<Self> {
        if mix.sample_rate() != instrumental.sample_rate() {
            return Err(Error::InvalidInput(format!(
                "pair sample rates differ: {} vs {}",
                mix.sample_rate(),
                instrumental.sample_rate()
            )));
        }
        Ok(TrackPair {
            id: id.into(),
            artist: String::new(),
            genre: String::new(),
            mix,
            instrumental,
        })
    }

    pub fn with_metadata(mut self, artist: impl Into<String>, genre: impl Into<String>) -> Self {
        self.artist = artist.into();
        self.genre = genre.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Load,
    Filter,
    Align,
    Loudness,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    DurationMismatch,
    TooLong,
    AlignmentFailed,
    SilentTrack,
    Unreadable,
    Invalid,
}

fn kebab<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&kebab(self))
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&kebab(self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub pair_id: String,
    pub stage: Stage,
    pub reason: RejectReason,
    pub detail: String,
}

/// Duration rule: mismatch is checked before overall length.
pub fn filter_durations(mix_s: f64, inst_s: f64, cfg: &MiningConfig) -> Option<RejectReason> {
    if (mix_s - inst_s).abs() > cfg.max_duration_diff_s {
        Some(RejectReason::DurationMismatch)
    } else if mix_s > cfg.max_duration_s {
        Some(RejectReason::TooLong)
    } else {
        None
    }
}

pub fn filter_pair(pair: &TrackPair, cfg: &MiningConfig) -> Option<RejectReason> {
    filter_durations(pair.mix.duration_s(), pair.instrumental.duration_s(), cfg)
}

/// Aligns the instrumental to the mix and trims both to their common support.
pub fn align(pair: &TrackPair, cfg: &MiningConfig) -> Result<(TrackPair, Alignment)> {
    let rate = pair.mix.sample_rate();
    let max_lag = (cfg.max_lag_s * rate as f64).round() as usize;
    if pair.mix.len() < 2 * max_lag || pair.instrumental.len() < 2 * max_lag {
        return Err(Error::InvalidInput(format!(
            "pair {} is shorter than twice the {} s lag window",
            pair.id, cfg.max_lag_s
        )));
    }
    let alignment = estimate_lag(&pair.mix.downmix(), &pair.instrumental.downmix(), max_lag, cfg.min_peak)?;
    let (ms, is, len) = alignment.support(pair.mix.len(), pair.instrumental.len());
    let cut = |clip: &AudioClip, start: usize| {
        AudioClip::new(clip.channels().iter().map(|c| c[start..start + len].to_vec()).collect(), rate)
    };
    let aligned = TrackPair {
        mix: cut(&pair.mix, ms)?,
        instrumental: cut(&pair.instrumental, is)?,
        ..pair.clone()
    };
    Ok((aligned, alignment))
}

/// Scales the instrumental so its full-track RMS equals the mix RMS.
pub fn equalize_loudness(pair: &TrackPair) -> Result<(TrackPair, f64)> {
    const SILENT_RMS: f64 = 1e-12;
    let (rm, ri) = (pair.mix.rms(), pair.instrumental.rms());
    if rm < SILENT_RMS {
        return Err(Error::SilentTrack(format!("{} mix", pair.id)));
    }
    if ri < SILENT_RMS {
        return Err(Error::SilentTrack(format!("{} instrumental", pair.id)));
    }
    let gain = rm / ri;
    let out = TrackPair {
        instrumental: pair.instrumental.scaled(gain),
        ..pair.clone()
    };
    Ok((out, 20.0 * gain.log10()))
}

/// Half-wave rectified difference `max(|M| - |I|, 0)`.
pub fn estimate_vocals(mix: &Array3<f64>, inst: &Array3<f64>) -> Result<Array3<f64>> {
    if mix.shape() != inst.shape() {
        return Err(Error::shape(mix.shape(), inst.shape()));
    }
    Ok(Zip::from(mix).and(inst).map_collect(|&m, &i| (m - i).max(0.0)))
}

/// Per-triplet diagnostics of the vocal estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Energy of the vocal estimate relative to the mix spectrogram.
    pub estimate_energy_ratio: f64,
    /// Share of time-frequency bins where the instrumental exceeds the mix.
    pub rectified_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedTriplet {
    pub id: String,
    pub artist: String,
    pub genre: String,
    pub mix: AudioClip,
    pub instrumental: AudioClip,
    /// Vocals rendered from the estimate with the mix phase.
    pub vocals: AudioClip,
    pub vocals_estimate: Option<Spectrogram>,
    pub alignment: Alignment,
    pub gain_db: f64,
    pub residual: ResidualStats,
}

struct VocalRender {
    audio: AudioClip,
    estimate: Option<Array3<f64>>,
    residual: ResidualStats,
}

/// Estimates the vocal magnitudes of an aligned, equalized pair and renders
/// them with the mix phase. Frames are processed in blocks so long tracks
/// never need a full complex grid in memory.
fn render_vocals(pair: &TrackPair, cfg: &MiningConfig) -> Result<VocalRender> {
    const BLOCK: usize = 256;
    let plan = StftPlan::new(cfg.window_size, cfg.hop)?;
    let len = pair.mix.len();
    let frames = plan.frame_count(len);
    let bins = plan.bins();
    let channels = pair.mix.num_channels().max(pair.instrumental.num_channels());
    let mix = if pair.mix.num_channels() < channels { pair.mix.to_stereo()? } else { pair.mix.clone() };
    let inst = if pair.instrumental.num_channels() < channels {
        pair.instrumental.to_stereo()?
    } else {
        pair.instrumental.clone()
    };
    let mut keep = cfg.keep_spectrograms.then(|| Array3::zeros((channels, frames, bins)));
    let mut ola = OverlapAdd::new(&plan, channels, len);
    let mut mbuf = Array2::<Complex64>::zeros((BLOCK, bins));
    let mut ibuf = Array2::<Complex64>::zeros((BLOCK, bins));
    let (mut est_energy, mut mix_energy, mut rectified) = (0.0, 0.0, 0usize);
    for c in 0..channels {
        let mut t0 = 0;
        while t0 < frames {
            let n = BLOCK.min(frames - t0);
            plan.analyze_frames(mix.channel(c), t0..t0 + n, mbuf.slice_mut(s![..n, ..]));
            plan.analyze_frames(inst.channel(c), t0..t0 + n, ibuf.slice_mut(s![..n, ..]));
            let mag_m = mbuf.slice(s![..n, ..]).mapv(|z| z.norm());
            let mag_i = ibuf.slice(s![..n, ..]).mapv(|z| z.norm());
            for r in 0..n {
                let mut spectrum = vec![Complex64::default(); bins];
                for k in 0..bins {
                    let (m, i) = (mag_m[[r, k]], mag_i[[r, k]]);
                    let v = (m - i).max(0.0);
                    if i > m {
                        rectified += 1;
                    }
                    est_energy += v * v;
                    mix_energy += m * m;
                    if let Some(g) = keep.as_mut() {
                        g[[c, t0 + r, k]] = v;
                    }
                    spectrum[k] = if m > 0.0 { mbuf[[r, k]] * (v / m) } else { Complex64::default() };
                }
                ola.add_frame(c, t0 + r, &spectrum);
            }
            t0 += n;
        }
    }
    let audio = AudioClip::new(ola.finish(), pair.mix.sample_rate())?;
    let total_bins = (channels * frames * bins) as f64;
    Ok(VocalRender {
        audio,
        estimate: keep,
        residual: ResidualStats {
            estimate_energy_ratio: if mix_energy > 0.0 { est_energy / mix_energy } else { 0.0 },
            rectified_fraction: rectified as f64 / total_bins,
        },
    })
}

fn reject(pair: &TrackPair, stage: Stage, reason: RejectReason, detail: impl Into<String>) -> Rejection {
    Rejection {
        pair_id: pair.id.clone(),
        stage,
        reason,
        detail: detail.into(),
    }
}

fn reason_for(e: &Error) -> RejectReason {
    match e {
        Error::AlignmentFailed { .. } => RejectReason::AlignmentFailed,
        Error::SilentTrack(_) => RejectReason::SilentTrack,
        _ => RejectReason::Invalid,
    }
}

/// Runs filter, align, loudness and estimate on one pair.
pub fn mine_pair(pair: &TrackPair, cfg: &MiningConfig) -> std::result::Result<MinedTriplet, Rejection> {
    if let Some(reason) = filter_pair(pair, cfg) {
        let detail = format!(
            "mix {:.3} s, instrumental {:.3} s",
            pair.mix.duration_s(),
            pair.instrumental.duration_s()
        );
        return Err(reject(pair, Stage::Filter, reason, detail));
    }
    let (aligned, alignment) = align(pair, cfg).map_err(|e| reject(pair, Stage::Align, reason_for(&e), e.to_string()))?;
    let (equal, gain_db) =
        equalize_loudness(&aligned).map_err(|e| reject(pair, Stage::Loudness, reason_for(&e), e.to_string()))?;
    let render = render_vocals(&equal, cfg).map_err(|e| reject(pair, Stage::Estimate, reason_for(&e), e.to_string()))?;
    let vocals_estimate = render.estimate.map(|grid| Spectrogram {
        values: SpectrogramValues::Magnitude(grid),
        window_size: cfg.window_size,
        hop: cfg.hop,
        sample_rate: equal.mix.sample_rate(),
    });
    Ok(MinedTriplet {
        id: equal.id,
        artist: equal.artist,
        genre: equal.genre,
        mix: equal.mix,
        instrumental: equal.instrumental,
        vocals: render.audio,
        vocals_estimate,
        alignment,
        gain_db,
        residual: render.residual,
    })
}

#[derive(Debug, Clone, Default)]
pub struct MiningReport {
    pub triplets: Vec<MinedTriplet>,
    pub rejections: Vec<Rejection>,
}

/// Mines every pair in order. A failing pair is recorded and skipped.
pub fn mine_pipeline(pairs: impl IntoIterator<Item = TrackPair>, cfg: &MiningConfig) -> MiningReport {
    let mut report = MiningReport::default();
    for pair in pairs {
        match mine_pair(&pair, cfg) {
            Ok(t) => report.triplets.push(t),
            Err(r) => report.rejections.push(r),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RATE: u32 = 8000;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn delayed(x: &[f64], k: i64) -> Vec<f64> {
        (0..x.len() as i64)
            .map(|n| {
                let j = n - k;
                if j >= 0 && (j as usize) < x.len() { x[j as usize] } else { 0.0 }
            })
            .collect()
    }

    fn pair(mix: Vec<f64>, inst: Vec<f64>) -> TrackPair {
        TrackPair::new("p", AudioClip::mono(mix, RATE).unwrap(), AudioClip::mono(inst, RATE).unwrap()).unwrap()
    }

    #[test]
    fn duration_rules() {
        let cfg = MiningConfig::default();
        assert_eq!(filter_durations(180.0, 181.0, &cfg), None);
        assert_eq!(filter_durations(180.0, 183.0, &cfg), Some(RejectReason::DurationMismatch));
        assert_eq!(filter_durations(301.0, 301.0, &cfg), Some(RejectReason::TooLong));
        assert_eq!(filter_durations(180.0, 182.0, &cfg), None);
        assert_eq!(filter_durations(300.0, 300.0, &cfg), None);
        assert_eq!(filter_durations(310.0, 305.0, &cfg), Some(RejectReason::DurationMismatch));
    }

    #[test]
    fn align_recovers_shift_and_trims() {
        let x = noise(6 * RATE as usize, 1);
        let cfg = MiningConfig::default();
        for k in [-(2 * RATE as i64), -37, 0, 441, 2 * RATE as i64] {
            let p = pair(x.clone(), delayed(&x, k));
            let (aligned, a) = align(&p, &cfg).unwrap();
            assert_eq!(a.lag, k);
            assert_eq!(aligned.mix.len(), aligned.instrumental.len());
            assert_eq!(aligned.mix.len(), x.len() - k.unsigned_abs() as usize);
            assert_eq!(aligned.mix, aligned.instrumental);
        }
    }

    #[test]
    fn align_rejects_unrelated_noise() {
        let p = pair(noise(5 * RATE as usize, 2), noise(5 * RATE as usize, 3));
        assert!(matches!(align(&p, &MiningConfig::default()), Err(Error::AlignmentFailed { .. })));
    }

    #[test]
    fn loudness_cases() {
        let x = noise(4000, 4);
        let half: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let (eq, gain) = equalize_loudness(&pair(x.clone(), half)).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((gain - 6.0206).abs() < 1e-4);
        let (_, again) = equalize_loudness(&eq).unwrap();
        assert!(again.abs() < 1e-9);
        let (_, zero) = equalize_loudness(&pair(x.clone(), x.clone())).unwrap();
        assert_eq!(zero, 0.0);
        let y = noise(4000, 5);
        let (eq, _) = equalize_loudness(&pair(x.clone(), y)).unwrap();
        assert!((eq.instrumental.rms() / eq.mix.rms() - 1.0).abs() < 1e-9);
        assert!(matches!(equalize_loudness(&pair(x, vec![0.0; 4000])), Err(Error::SilentTrack(_))));
    }

    #[test]
    fn rectified_difference() {
        let m = Array3::from_elem((1, 1, 2), 5.0);
        let mut i = Array3::from_elem((1, 1, 2), 7.0);
        i[[0, 0, 1]] = 0.0;
        let v = estimate_vocals(&m, &i).unwrap();
        assert_eq!(v[[0, 0, 0]], 0.0);
        assert_eq!(v[[0, 0, 1]], 5.0);
        assert!(estimate_vocals(&m, &Array3::zeros((1, 2, 2))).is_err());
    }

    #[test]
    fn phase_aligned_sources_recover_vocals() {
        // Same waveform at two gains: the STFT magnitudes add exactly.
        let s: Vec<f64> = noise(8192, 6);
        let v: Vec<f64> = s.iter().map(|x| 0.3 * x).collect();
        let i: Vec<f64> = s.iter().map(|x| 0.7 * x).collect();
        let m: Vec<f64> = v.iter().zip(&i).map(|(a, b)| a + b).collect();
        let mag = |x: &[f64]| stft(&AudioClip::mono(x.to_vec(), RATE).unwrap(), 512, 128).unwrap().magnitude().into_magnitude().unwrap();
        let est = estimate_vocals(&mag(&m), &mag(&i)).unwrap();
        let want = mag(&v);
        for (a, b) in est.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pipeline_counts_and_reasons() {
        let cfg = MiningConfig { window_size: 512, hop: 128, ..Default::default() };
        let n = 5 * RATE as usize;
        let voice = noise(n, 7);
        let mut pairs = Vec::new();
        for k in 0..3 {
            let inst = noise(n, 10 + k);
            let mix: Vec<f64> = inst.iter().zip(&voice).map(|(a, b)| a + 0.5 * b).collect();
            pairs.push(TrackPair { id: format!("ok{k}"), ..pair(mix, delayed(&inst, 100 * k as i64)) });
        }
        pairs.push(TrackPair { id: "gap".into(), ..pair(noise(n, 20), noise(n + 3 * RATE as usize, 21)) });
        pairs.push(TrackPair { id: "noise".into(), ..pair(noise(n, 22), noise(n, 23)) });
        let report = mine_pipeline(pairs, &cfg);
        assert_eq!(report.triplets.len(), 3);
        assert_eq!(report.rejections.len(), 2);
        assert_eq!(report.rejections[0].reason, RejectReason::DurationMismatch);
        assert_eq!(report.rejections[1].reason, RejectReason::AlignmentFailed);
        assert_eq!(report.rejections[1].stage, Stage::Align);
        for (k, t) in report.triplets.iter().enumerate() {
            assert_eq!(t.alignment.lag, 100 * k as i64);
            assert_eq!(t.vocals.len(), t.mix.len());
            assert!(t.vocals_estimate.is_none());
            assert!(t.residual.estimate_energy_ratio > 0.0 && t.residual.estimate_energy_ratio < 1.0);
        }
    }

    #[test]
    fn kept_spectrogram_is_nonnegative() {
        let cfg = MiningConfig { window_size: 256, hop: 64, keep_spectrograms: true, ..Default::default() };
        let x = noise(5 * RATE as usize, 8);
        let t = mine_pair(&pair(x.clone(), x.iter().map(|v| v * 0.5).collect()), &cfg).unwrap();
        let est = t.vocals_estimate.unwrap();
        assert!(est.as_magnitude().unwrap().iter().all(|&v| v >= 0.0));
        // identical after loudness matching, so nothing is left for vocals
        assert!(t.vocals.energy() < 1e-20);
        assert!(t.residual.estimate_energy_ratio < 1e-20);
    }
}
