use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramKind {
    Complex,
    Magnitude,
}

impl SpectrogramKind {
    fn name(self) -> &'static str {
        match self {
            SpectrogramKind::Complex => "complex",
            SpectrogramKind::Magnitude => "magnitude",
        }
    }
}

/// Grid values indexed `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrogramValues {
    Complex(Array3<Complex64>),
    Magnitude(Array3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: SpectrogramValues,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn kind(&self) -> SpectrogramKind {
        match self.values {
            SpectrogramValues::Complex(_) => SpectrogramKind::Complex,
            SpectrogramValues::Magnitude(_) => SpectrogramKind::Magnitude,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = match &self.values {
            SpectrogramValues::Complex(a) => a.shape(),
            SpectrogramValues::Magnitude(a) => a.shape(),
        };
        [s[0], s[1], s[2]]
    }

    pub fn channels(&self) -> usize {
        self.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.shape()[2]
    }

    /// Frequency in Hz at the center of bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window_size as f64
    }

    pub fn as_complex(&self) -> Result<&Array3<Complex64>> {
        match &self.values {
            SpectrogramValues::Complex(a) => Ok(a),
            SpectrogramValues::Magnitude(_) => Err(self.mismatch(SpectrogramKind::Complex)),
        }
    }

    pub fn as_magnitude(&self) -> Result<&Array3<f64>> {
        match &self.values {
            SpectrogramValues::Magnitude(a) => Ok(a),
            SpectrogramValues::Complex(_) => Err(self.mismatch(SpectrogramKind::Magnitude)),
        }
    }

    pub fn into_magnitude(self) -> Result<Array3<f64>> {
        match self.values {
            SpectrogramValues::Magnitude(a) => Ok(a),
            SpectrogramValues::Complex(_) => Err(Error::KindMismatch {
                expected: "magnitude",
                actual: "complex",
            }),
        }
    }

    /// Elementwise absolute value; a magnitude spectrogram is returned as is.
    pub fn magnitude(&self) -> Spectrogram {
        let values = match &self.values {
            SpectrogramValues::Complex(a) => SpectrogramValues::Magnitude(a.mapv(|c| c.norm())),
            SpectrogramValues::Magnitude(a) => SpectrogramValues::Magnitude(a.clone()),
        };
        Spectrogram {
            values,
            window_size: self.window_size,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    fn mismatch(&self, expected: SpectrogramKind) -> Error {
        Error::KindMismatch {
            expected: expected.name(),
            actual: self.kind().name(),
        }
    }
}
