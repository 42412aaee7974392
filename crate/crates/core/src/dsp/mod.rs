//! Deterministic signal-processing primitives. All computation is in `f64`.

mod resample;
mod segment;
mod spectrogram;
mod stft;

pub use resample::{resample, Resampler};
pub use segment::{segment_complex, segment_to_standard, SegmentSpec};
pub use spectrogram::{Spectrogram, SpectrogramKind, SpectrogramValues};
pub use stft::{hann_window, istft, stft, OverlapAdd, StftPlan};
