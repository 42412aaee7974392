//! Supervised singing-voice separation toolkit.
//!
//! The crate covers the whole experimental pipeline: fixed-size spectrogram
//! segmentation, label-consistent data augmentation, a stereo U-Net masker
//! trained with ADAM, ratio-mask reconstruction of full songs, mining of
//! (mix, instrumental) pairs into training triplets, and BSS-eval metrics with
//! paired significance testing.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod mining;
pub mod model;
pub mod sample;
pub mod seed;
pub mod separation;
pub mod toy;

pub use audio::{read_wav, write_wav, AudioClip, WavFormat};
pub use dsp::{SegmentSpec, Spectrogram, SpectrogramKind};
pub use error::{Error, Result};
pub use sample::{Provenance, SampleStream, SeparationMode, ShuffledSamples, StemName, TrainingSample};
