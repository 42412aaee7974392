//! Full-song separation by ratio masking of the mixture STFT.
//!
//! The song is cut into consecutive, non-overlapping segments of the model's
//! geometry. Each segment is masked with the ratio of the per-source
//! magnitude estimates, inverted with the mixture phase, and the segments are
//! concatenated.

use std::collections::BTreeMap;

use ndarray::{s, Array3, Zip};
use num_complex::Complex64;

use crate::audio::AudioClip;
use crate::dsp::{resample, SegmentSpec, Spectrogram, SpectrogramValues};
use crate::error::{Error, Result};
use crate::model::UNet;
use crate::sample::{SeparationMode, StemName};

/// Denominators below this value get equal masks for every source.
pub const MASK_FLOOR: f64 = 1e-8;

/// Anything that predicts a source magnitude grid from a mixture grid.
pub trait SourceEstimator {
    fn estimate(&self, mixture: &Array3<f64>) -> Result<Array3<f64>>;
}

impl SourceEstimator for UNet {
    fn estimate(&self, mixture: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.forward(mixture)?.estimate)
    }
}

/// Predicts a fixed fraction of the mixture. Useful as an oracle stand-in.
#[derive(Debug, Clone, Copy)]
pub struct ScaledMixture(pub f64);

impl SourceEstimator for ScaledMixture {
    fn estimate(&self, mixture: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(mixture.mapv(|v| v * self.0))
    }
}

fn shared_shape<'a>(grids: impl IntoIterator<Item = &'a Array3<f64>>) -> Result<Option<Vec<usize>>> {
    let mut shape: Option<Vec<usize>> = None;
    for g in grids {
        match &shape {
            None => shape = Some(g.shape().to_vec()),
            Some(s) if s.as_slice() != g.shape() => return Err(Error::shape(s, g.shape())),
            _ => {}
        }
    }
    Ok(shape)
}

/// `est[source] / sum(est)` where the sum reaches `floor`, else `1 / n`.
pub fn ratio_mask(estimates: &BTreeMap<StemName, Array3<f64>>, source: StemName, floor: f64) -> Result<Array3<f64>> {
    let own = estimates.get(&source).ok_or(Error::MissingSource(source))?;
    shared_shape(estimates.values())?;
    let mut total = Array3::<f64>::zeros(own.raw_dim());
    for g in estimates.values() {
        total += g;
    }
    let equal = 1.0 / estimates.len() as f64;
    let mut mask = Array3::zeros(own.raw_dim());
    Zip::from(&mut mask).and(own).and(&total).for_each(|m, &e, &t| {
        *m = if t >= floor { e / t } else { equal };
    });
    Ok(mask)
}

/// Masks for every source in `estimates`.
pub fn ratio_masks(estimates: &BTreeMap<StemName, Array3<f64>>, floor: f64) -> Result<BTreeMap<StemName, Array3<f64>>> {
    estimates
        .keys()
        .map(|&s| Ok((s, ratio_mask(estimates, s, floor)?)))
        .collect()
}

/// Elementwise sum of the drums, bass and other estimates.
pub fn combine_stems_to_instrumental(estimates: &BTreeMap<StemName, Array3<f64>>) -> Result<Array3<f64>> {
    let grids = StemName::ACCOMPANIMENT
        .iter()
        .map(|&stem| {
            estimates.get(&stem).ok_or_else(|| Error::MissingStem {
                track: "estimates".into(),
                stem,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    shared_shape(grids.iter().copied())?;
    let mut out = grids[0].clone();
    for g in &grids[1..] {
        out += *g;
    }
    Ok(out)
}

/// Magnitude estimates for one segment together with its complex mixture.
#[derive(Debug, Clone)]
pub struct SourceEstimateSet {
    /// Estimates over the model's bins (top bin excluded).
    pub estimates: BTreeMap<StemName, Array3<f64>>,
    /// Full-bin complex spectrogram of the mixture.
    pub mixture_complex: Array3<Complex64>,
}

impl SourceEstimateSet {
    /// Runs the estimators on one complex mixture grid. In four-stem mode the
    /// accompaniment stems are folded into an instrumental estimate.
    pub fn estimate(
        mixture_complex: Array3<Complex64>,
        models: &BTreeMap<StemName, &dyn SourceEstimator>,
        mode: SeparationMode,
        bins: usize,
    ) -> Result<Self> {
        let magnitude: Array3<f64> = mixture_complex.slice(s![.., .., ..bins]).mapv(|c| c.norm());
        let mut raw = BTreeMap::new();
        for &source in mode.model_sources() {
            let model = models.get(&source).ok_or(Error::MissingSource(source))?;
            let est = model.estimate(&magnitude)?;
            if est.shape() != magnitude.shape() {
                return Err(Error::shape(magnitude.shape(), est.shape()));
            }
            if est.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Numeric {
                    layer: format!("{source} estimate"),
                });
            }
            raw.insert(source, est);
        }
        let estimates = match mode {
            SeparationMode::TwoStem => raw,
            SeparationMode::FourStem => {
                let instrumental = combine_stems_to_instrumental(&raw)?;
                let vocals = raw.remove(&StemName::Vocals).ok_or(Error::MissingSource(StemName::Vocals))?;
                [(StemName::Vocals, vocals), (StemName::Instrumental, instrumental)].into()
            }
        };
        Ok(SourceEstimateSet { estimates, mixture_complex })
    }

    /// Masked complex grids over all bins. The top bin, which the models do
    /// not see, is split evenly between the sources.
    pub fn masked(&self, floor: f64) -> Result<BTreeMap<StemName, Array3<Complex64>>> {
        let masks = ratio_masks(&self.estimates, floor)?;
        let full_bins = self.mixture_complex.shape()[2];
        let equal = 1.0 / masks.len() as f64;
        let mut out = BTreeMap::new();
        for (source, mask) in masks {
            let bins = mask.shape()[2];
            let mut grid = self.mixture_complex.clone();
            Zip::from(grid.slice_mut(s![.., .., ..bins]))
                .and(&mask)
                .for_each(|c, &m| *c *= m);
            grid.slice_mut(s![.., .., bins..full_bins]).mapv_inplace(|c| c * equal);
            out.insert(source, grid);
        }
        Ok(out)
    }
}

/// Separates a clip already at the segment sample rate. Every output has the
/// input's length; the last segment is zero-padded and trimmed.
pub fn separate_at_rate(
    clip: &AudioClip,
    models: &BTreeMap<StemName, &dyn SourceEstimator>,
    mode: SeparationMode,
    spec: &SegmentSpec,
) -> Result<BTreeMap<StemName, AudioClip>> {
    spec.validate()?;
    if clip.sample_rate() != spec.sample_rate {
        return Err(Error::InvalidInput(format!(
            "separation runs at {} Hz, got {} Hz",
            spec.sample_rate,
            clip.sample_rate()
        )));
    }
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot separate an empty clip".into()));
    }
    let stereo = clip.to_stereo()?;
    let plan = spec.plan()?;
    let segments = clip.len().div_ceil(spec.samples);
    let mut outputs: BTreeMap<StemName, Vec<Vec<f64>>> = BTreeMap::new();
    for k in 0..segments {
        let excerpt = stereo.slice_padded(k * spec.samples, spec.samples);
        let complex = plan.stft(&excerpt)?;
        let grid = complex.as_complex()?.clone();
        let set = SourceEstimateSet::estimate(grid, models, mode, spec.bins)?;
        for (source, masked) in set.masked(MASK_FLOOR)? {
            let spectrogram = Spectrogram {
                values: SpectrogramValues::Complex(masked),
                window_size: spec.window_size,
                hop: spec.hop,
                sample_rate: spec.sample_rate,
            };
            let audio = plan.istft(&spectrogram, Some(spec.samples))?;
            let chans = outputs.entry(source).or_insert_with(|| vec![Vec::new(); 2]);
            for (dst, src) in chans.iter_mut().zip(audio.channels()) {
                dst.extend_from_slice(src);
            }
        }
    }
    outputs
        .into_iter()
        .map(|(source, chans)| {
            let clip_out = AudioClip::new(chans, spec.sample_rate)?.with_len(clip.len());
            Ok((source, clip_out))
        })
        .collect()
}

/// Separates a song at any input rate (typically 44100 Hz). Audio is
/// resampled to the segment rate for processing and the outputs are brought
/// back to the input rate and length.
pub fn separate_song(
    clip: &AudioClip,
    models: &BTreeMap<StemName, &dyn SourceEstimator>,
    mode: SeparationMode,
    spec: &SegmentSpec,
) -> Result<BTreeMap<StemName, AudioClip>> {
    let rate = clip.sample_rate();
    let inner = resample(clip, spec.sample_rate)?;
    let separated = separate_at_rate(&inner, models, mode, spec)?;
    separated
        .into_iter()
        .map(|(source, out)| Ok((source, resample(&out, rate)?.with_len(clip.len()))))
        .collect()
}

/// Borrows a map of owned estimators as trait objects.
pub fn as_estimators<M: SourceEstimator>(models: &BTreeMap<StemName, M>) -> BTreeMap<StemName, &dyn SourceEstimator> {
    models.iter().map(|(&s, m)| (s, m as &dyn SourceEstimator)).collect()
}
