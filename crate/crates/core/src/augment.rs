//! Label-consistent data augmentation on magnitude spectrograms.
//!
//! Every transform is applied with the same drawn parameters to the mixture
//! and to every target of a sample, so the supervision stays consistent.
//! Remixing is the exception: it rescales the targets and rebuilds the
//! mixture as their gain-weighted sum.

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::{Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{StemName, TrainingSample};

pub const STRETCH_RANGE: (f64, f64) = (0.7, 1.3);
pub const SHIFT_RANGE: (f64, f64) = (0.7, 1.3);
pub const REMIX_DB_RANGE: (f64, f64) = (-9.0, 9.0);
pub const FILTER_MU_RANGE_HZ: (f64, f64) = (0.0, 4410.0);
pub const FILTER_SIGMA_RANGE_HZ: (f64, f64) = (500.0, 1000.0);
pub const SCALE_DB_RANGE: (f64, f64) = (-10.0, 10.0);
pub const SWAP_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    None,
    Swap,
    Stretch,
    Shift,
    Remix,
    Filter,
    Scale,
    Combined,
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::InvalidSpec(format!("unknown augmentation kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub mu_hz: f64,
    pub sigma_hz: f64,
}

/// The realized random draws of one augmentation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawnParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swap: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remix_gains_db: Option<BTreeMap<StemName, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentKind,
    #[serde(default)]
    pub params: DrawnParams,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        AugmentationSpec {
            kind: AugmentKind::None,
            params: DrawnParams::default(),
        }
    }

    fn require<T: Copy>(&self, value: Option<T>, name: &str) -> Result<T> {
        value.ok_or_else(|| Error::InvalidSpec(format!("{:?} needs a {name} parameter", self.kind)))
    }

    fn factor(&self, value: Option<f64>, name: &str) -> Result<f64> {
        let v = self.require(value, name)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidSpec(format!("{name} factor must be positive, got {v}")));
        }
        Ok(v)
    }

    fn gains(&self) -> Result<&BTreeMap<StemName, f64>> {
        self.params
            .remix_gains_db
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec(format!("{:?} needs remix gains", self.kind)))
    }
}

/// Uniform draw in dB, returned in dB (convert with [`db_to_gain`]).
fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Draws the parameters for `kind`. Remix gains are drawn independently for
/// each of `sources`.
pub fn draw_spec<R: Rng + ?Sized>(kind: AugmentKind, sources: &[StemName], rng: &mut R) -> AugmentationSpec {
    let mut p = DrawnParams::default();
    let swap = |rng: &mut R| rng.random_bool(SWAP_PROBABILITY);
    let remix = |rng: &mut R| {
        sources
            .iter()
            .map(|&s| (s, uniform(rng, REMIX_DB_RANGE)))
            .collect::<BTreeMap<_, _>>()
    };
    match kind {
        AugmentKind::None => {}
        AugmentKind::Swap => p.swap = Some(swap(rng)),
        AugmentKind::Stretch => p.stretch = Some(uniform(rng, STRETCH_RANGE)),
        AugmentKind::Shift => p.shift = Some(uniform(rng, SHIFT_RANGE)),
        AugmentKind::Remix => p.remix_gains_db = Some(remix(rng)),
        AugmentKind::Filter => {
            p.filter = Some(FilterParams {
                mu_hz: uniform(rng, FILTER_MU_RANGE_HZ),
                sigma_hz: uniform(rng, FILTER_SIGMA_RANGE_HZ),
            })
        }
        AugmentKind::Scale => p.scale_db = Some(uniform(rng, SCALE_DB_RANGE)),
        AugmentKind::Combined => {
            p.swap = Some(swap(rng));
            p.shift = Some(uniform(rng, SHIFT_RANGE));
            p.stretch = Some(uniform(rng, STRETCH_RANGE));
            p.remix_gains_db = Some(remix(rng));
        }
    }
    AugmentationSpec { kind, params: p }
}

/// Reverses the channel axis.
pub fn swap_channels(grid: &Array3<f64>) -> Array3<f64> {
    let mut out = grid.clone();
    out.invert_axis(Axis(0));
    out.as_standard_layout().into_owned()
}

/// Fold a continuous position into `[0, n - 1]` by mirror reflection.
fn reflect_position(mut p: f64, n: usize) -> f64 {
    let last = (n - 1) as f64;
    if last == 0.0 {
        return 0.0;
    }
    let period = 2.0 * last;
    p = p.rem_euclid(period);
    if p > last {
        period - p
    } else {
        p
    }
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    if frac == 0.0 {
        a
    } else {
        a * (1.0 - frac) + b * frac
    }
}

/// Scales the time axis about the central frame: output frame `t` reads input
/// position `c + (t - c) * beta`, `c = frames / 2`, with linear interpolation
/// and mirror reflection past either end.
pub fn stretch_time(grid: &Array3<f64>, beta: f64) -> Array3<f64> {
    let (channels, frames, bins) = grid.dim();
    let c = (frames / 2) as f64;
    let mut out = Array3::zeros(grid.raw_dim());
    for t in 0..frames {
        let pos = reflect_position(c + (t as f64 - c) * beta, frames);
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let i1 = (i0 + 1).min(frames - 1);
        for ch in 0..channels {
            for k in 0..bins {
                out[[ch, t, k]] = lerp(grid[[ch, i0, k]], grid[[ch, i1, k]], frac);
            }
        }
    }
    out
}

/// Scales the frequency axis with bin 0 fixed: output bin `k` reads input
/// position `k / beta`. Positions past the last bin read zeros.
pub fn shift_frequency(grid: &Array3<f64>, beta: f64) -> Array3<f64> {
    let (_, _, bins) = grid.dim();
    let mut out = Array3::zeros(grid.raw_dim());
    let sources: Vec<(usize, f64)> = (0..bins)
        .map(|k| {
            let pos = k as f64 / beta;
            let i0 = pos.floor() as usize;
            (i0, pos - i0 as f64)
        })
        .collect();
    Zip::from(out.lanes_mut(Axis(2)))
        .and(grid.lanes(Axis(2)))
        .for_each(|mut dst, src| {
            for (k, &(i0, frac)) in sources.iter().enumerate() {
                if i0 >= bins {
                    continue;
                }
                let next = if i0 + 1 < bins { src[i0 + 1] } else { 0.0 };
                dst[k] = lerp(src[i0], next, frac);
            }
        });
    out
}

/// Inverse Gaussian response `1 - exp(-(f - mu)^2 / (2 sigma^2))`.
pub fn filter_response(freq_hz: f64, mu_hz: f64, sigma_hz: f64) -> f64 {
    1.0 - (-(freq_hz - mu_hz).powi(2) / (2.0 * sigma_hz * sigma_hz)).exp()
}

pub fn apply_filter(grid: &Array3<f64>, sample_rate: u32, window_size: usize, params: FilterParams) -> Array3<f64> {
    let gains: Vec<f64> = (0..grid.dim().2)
        .map(|k| {
            let f = k as f64 * sample_rate as f64 / window_size as f64;
            filter_response(f, params.mu_hz, params.sigma_hz)
        })
        .collect();
    let mut out = grid.clone();
    for mut lane in out.lanes_mut(Axis(2)) {
        lane.iter_mut().zip(&gains).for_each(|(v, g)| *v *= g);
    }
    out
}

pub fn scale(grid: &Array3<f64>, db: f64) -> Array3<f64> {
    let g = db_to_gain(db);
    grid.mapv(|v| v * g)
}

/// Scales each target by its gain and returns the rebuilt mixture
/// `sum_s 10^(g_s / 20) * target_s` with the scaled targets.
pub fn remix_mixture(
    targets: &BTreeMap<StemName, Array3<f64>>,
    gains_db: &BTreeMap<StemName, f64>,
) -> Result<(Array3<f64>, BTreeMap<StemName, Array3<f64>>)> {
    let first = targets
        .values()
        .next()
        .ok_or_else(|| Error::InvalidInput("remix needs at least one target".into()))?;
    let mut mixture = Array3::zeros(first.raw_dim());
    let mut scaled = BTreeMap::new();
    for (&source, grid) in targets {
        if grid.shape() != first.shape() {
            return Err(Error::shape(first.shape(), grid.shape()));
        }
        let db = *gains_db
            .get(&source)
            .ok_or_else(|| Error::InvalidSpec(format!("no remix gain for {source}")))?;
        let g = db_to_gain(db);
        let s = grid.mapv(|v| g * v);
        mixture += &s;
        scaled.insert(source, s);
    }
    Ok((mixture, scaled))
}

fn map_grids(sample: &TrainingSample, f: impl Fn(&Array3<f64>) -> Array3<f64>) -> TrainingSample {
    TrainingSample {
        mixture: f(&sample.mixture),
        targets: sample.targets.iter().map(|(&s, g)| (s, f(g))).collect(),
        ..sample.clone()
    }
}

/// Applies `spec` to the mixture and all targets. Deterministic in `spec`.
pub fn apply(sample: &TrainingSample, spec: &AugmentationSpec) -> Result<TrainingSample> {
    sample.validate()?;
    let p = &spec.params;
    let out = match spec.kind {
        AugmentKind::None => sample.clone(),
        AugmentKind::Swap => apply_swap(sample, spec.require(p.swap, "swap")?),
        AugmentKind::Stretch => {
            let beta = spec.factor(p.stretch, "stretch")?;
            map_grids(sample, |g| stretch_time(g, beta))
        }
        AugmentKind::Shift => {
            let beta = spec.factor(p.shift, "shift")?;
            map_grids(sample, |g| shift_frequency(g, beta))
        }
        AugmentKind::Remix => apply_remix(sample, spec.gains()?)?,
        AugmentKind::Filter => {
            let params = spec.require(p.filter, "filter")?;
            if !(params.sigma_hz > 0.0) || !params.mu_hz.is_finite() {
                return Err(Error::InvalidSpec(format!("bad filter parameters {params:?}")));
            }
            map_grids(sample, |g| apply_filter(g, sample.sample_rate, sample.window_size, params))
        }
        AugmentKind::Scale => {
            let db = spec.require(p.scale_db, "scale")?;
            if !db.is_finite() {
                return Err(Error::InvalidSpec(format!("scale must be finite, got {db}")));
            }
            map_grids(sample, |g| scale(g, db))
        }
        AugmentKind::Combined => {
            let swapped = apply_swap(sample, spec.require(p.swap, "swap")?);
            let beta_t = spec.factor(p.stretch, "stretch")?;
            let beta_f = spec.factor(p.shift, "shift")?;
            let moved = map_grids(&swapped, |g| shift_frequency(&stretch_time(g, beta_t), beta_f));
            apply_remix(&moved, spec.gains()?)?
        }
    };
    Ok(out)
}

fn apply_swap(sample: &TrainingSample, swap: bool) -> TrainingSample {
    if swap {
        map_grids(sample, swap_channels)
    } else {
        sample.clone()
    }
}

fn apply_remix(sample: &TrainingSample, gains: &BTreeMap<StemName, f64>) -> Result<TrainingSample> {
    let (mixture, targets) = remix_mixture(&sample.targets, gains)?;
    Ok(TrainingSample {
        mixture,
        targets,
        ..sample.clone()
    })
}

/// Randomly augments a share of training samples with one of a set of kinds.
#[derive(Debug, Clone)]
pub struct Augmenter {
    kinds: Vec<AugmentKind>,
    probability: f64,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub fn new(kinds: Vec<AugmentKind>, probability: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidInput(format!(
                "augmentation probability must be in [0, 1], got {probability}"
            )));
        }
        Ok(Augmenter {
            kinds,
            probability,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws a spec for `sample` (possibly [`AugmentKind::None`]).
    pub fn draw(&mut self, sources: &[StemName]) -> AugmentationSpec {
        if self.kinds.is_empty() || !self.rng.random_bool(self.probability) {
            return AugmentationSpec::none();
        }
        let kind = self.kinds[self.rng.random_range(0..self.kinds.len())];
        draw_spec(kind, sources, &mut self.rng)
    }

    pub fn augment(&mut self, sample: TrainingSample) -> Result<TrainingSample> {
        let sources: Vec<StemName> = sample.targets.keys().copied().collect();
        let spec = self.draw(&sources);
        if spec.kind == AugmentKind::None {
            return Ok(sample);
        }
        apply(&sample, &spec)
    }
}
