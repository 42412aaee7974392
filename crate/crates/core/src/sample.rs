//! Stem names and the training-sample unit shared by the dataset, augmentation
//! and model code.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemName {
    Vocals,
    Drums,
    Bass,
    Other,
    Instrumental,
}

impl StemName {
    pub const ALL: [StemName; 5] = [
        StemName::Vocals,
        StemName::Drums,
        StemName::Bass,
        StemName::Other,
        StemName::Instrumental,
    ];

    /// The stems that sum to the instrumental part.
    pub const ACCOMPANIMENT: [StemName; 3] = [StemName::Drums, StemName::Bass, StemName::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            StemName::Vocals => "vocals",
            StemName::Drums => "drums",
            StemName::Bass => "bass",
            StemName::Other => "other",
            StemName::Instrumental => "instrumental",
        }
    }
}

impl fmt::Display for StemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StemName::ALL
            .into_iter()
            .find(|stem| stem.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown stem {s:?}")))
    }
}

/// Which set of sources a model bank separates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparationMode {
    TwoStem,
    FourStem,
}

impl SeparationMode {
    /// Sources that need a trained model in this mode.
    pub fn model_sources(self) -> &'static [StemName] {
        match self {
            SeparationMode::TwoStem => &[StemName::Vocals, StemName::Instrumental],
            SeparationMode::FourStem => &[
                StemName::Vocals,
                StemName::Drums,
                StemName::Bass,
                StemName::Other,
            ],
        }
    }
}

impl FromStr for SeparationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-stem" | "two_stem" | "2" => Ok(SeparationMode::TwoStem),
            "four-stem" | "four_stem" | "4" => Ok(SeparationMode::FourStem),
            _ => Err(Error::InvalidInput(format!("unknown separation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub track_id: String,
    pub offset_s: f64,
}

/// Aligned mixture and per-source magnitude grids, all shaped
/// `(channels, frames, bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub mixture: Array3<f64>,
    pub targets: BTreeMap<StemName, Array3<f64>>,
    pub provenance: Provenance,
    /// Sample rate and analysis window the grids were computed with; the
    /// frequency of bin `k` is `k * sample_rate / window_size`.
    pub sample_rate: u32,
    pub window_size: usize,
}

impl TrainingSample {
    pub fn new(
        mixture: Array3<f64>,
        targets: BTreeMap<StemName, Array3<f64>>,
        provenance: Provenance,
        sample_rate: u32,
        window_size: usize,
    ) -> Result<Self> {
        let sample = TrainingSample {
            mixture,
            targets,
            provenance,
            sample_rate,
            window_size,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.mixture.shape();
        [s[0], s[1], s[2]]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.mixture.shape();
        for grid in self.targets.values() {
            if grid.shape() != shape {
                return Err(Error::shape(shape, grid.shape()));
            }
        }
        let negative = std::iter::once(&self.mixture)
            .chain(self.targets.values())
            .any(|g| g.iter().any(|&v| !(v >= 0.0)));
        if negative {
            return Err(Error::InvalidInput(
                "magnitude grids must be nonnegative and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn target(&self, stem: StemName) -> Result<&Array3<f64>> {
        self.targets.get(&stem).ok_or_else(|| Error::MissingStem {
            track: self.provenance.track_id.clone(),
            stem,
        })
    }
}

/// A source of training samples. Implementations own their randomness so the
/// order of samples is fixed by their seed.
pub trait SampleStream {
    fn next_sample(&mut self) -> Result<TrainingSample>;
}

/// Cycles through a fixed set of samples, reshuffling on every pass.
pub struct ShuffledSamples {
    samples: Vec<TrainingSample>,
    order: Vec<usize>,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl ShuffledSamples {
    pub fn new(samples: Vec<TrainingSample>, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        Ok(ShuffledSamples {
            samples,
            order: Vec::new(),
            cursor: 0,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl SampleStream for ShuffledSamples {
    fn next_sample(&mut self) -> Result<TrainingSample> {
        use rand::seq::SliceRandom;
        if self.cursor >= self.order.len() {
            self.order = (0..self.samples.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let sample = self.samples[self.order[self.cursor]].clone();
        self.cursor += 1;
        Ok(sample)
    }
}
