//! Multichannel PCM clips and WAV file I/O.

use std::io::{Read, Seek, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Per-channel sample buffers at a fixed sample rate. All channels share one
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("clip needs at least one channel".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidInput("channels differ in length".into()));
        }
        Ok(AudioClip {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn silence(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Average of all channels.
    pub fn downmix(&self) -> Vec<f64> {
        let n = self.num_channels() as f64;
        (0..self.len())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f64>() / n)
            .collect()
    }

    /// Two-channel view: mono is duplicated, stereo is returned unchanged.
    pub fn to_stereo(&self) -> Result<AudioClip> {
        match self.num_channels() {
            1 => AudioClip::new(vec![self.channels[0].clone(); 2], self.sample_rate),
            2 => Ok(self.clone()),
            n => Err(Error::InvalidInput(format!("{n}-channel audio is not supported"))),
        }
    }

    /// Root mean square over every sample of every channel.
    pub fn rms(&self) -> f64 {
        let count = (self.len() * self.num_channels()) as f64;
        if count == 0.0 {
            return 0.0;
        }
        let energy: f64 = self.channels.iter().flatten().map(|x| x * x).sum();
        (energy / count).sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|x| x * x).sum()
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `[start, start + len)`, zero-filled past the end.
    pub fn slice_padded(&self, start: usize, len: usize) -> AudioClip {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = vec![0.0; len];
                if start < c.len() {
                    let end = (start + len).min(c.len());
                    out[..end - start].copy_from_slice(&c[start..end]);
                }
                out
            })
            .collect();
        AudioClip {
            channels,
            sample_rate: self.sample_rate,
        }
    }

    /// Truncates or zero-pads every channel to `len` samples.
    pub fn with_len(&self, len: usize) -> AudioClip {
        self.slice_padded(0, len)
    }

    /// Elementwise sum of clips with identical layout.
    pub fn sum<'a>(clips: impl IntoIterator<Item = &'a AudioClip>) -> Result<AudioClip> {
        let mut iter = clips.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidInput("nothing to sum".into()))?;
        let mut acc = first.clone();
        for clip in iter {
            if clip.sample_rate != acc.sample_rate
                || clip.num_channels() != acc.num_channels()
                || clip.len() != acc.len()
            {
                return Err(Error::InvalidInput(
                    "summed clips must share rate, channel count and length".into(),
                ));
            }
            for (a, b) in acc.channels.iter_mut().zip(&clip.channels) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
        path: path.into(),
        source,
    })?;
    decode(reader).map_err(|source| Error::Wav {
        path: path.into(),
        source,
    })
}

pub fn read_wav_from<R: Read>(reader: R) -> Result<AudioClip> {
    let reader = hound::WavReader::new(reader).map_err(|source| Error::Wav {
        path: "<stream>".into(),
        source,
    })?;
    decode(reader).map_err(|source| Error::Wav {
        path: "<stream>".into(),
        source,
    })
}

fn decode<R: Read>(mut reader: hound::WavReader<R>) -> std::result::Result<AudioClip, hound::Error> {
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if !(1..=2).contains(&n_channels) {
        return Err(hound::Error::Unsupported);
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        _ => return Err(hound::Error::Unsupported),
    };
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    Ok(AudioClip {
        channels,
        sample_rate: spec.sample_rate,
    })
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_wav_to(std::io::BufWriter::new(file), clip, format).map_err(|e| match e {
        Error::Wav { source, .. } => Error::Wav {
            path: path.into(),
            source,
        },
        other => other,
    })
}

pub fn write_wav_to<W: Write + Seek>(writer: W, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let wrap = |source| Error::Wav {
        path: "<stream>".into(),
        source,
    };
    if clip.num_channels() > 2 {
        return Err(wrap(hound::Error::Unsupported));
    }
    let spec = hound::WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(wrap)?;
    for i in 0..clip.len() {
        for ch in &clip.channels {
            match format {
                WavFormat::Pcm16 => {
                    let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v).map_err(wrap)?;
                }
                WavFormat::Float32 => w.write_sample(ch[i] as f32).map_err(wrap)?,
            }
        }
    }
    w.finalize().map_err(wrap)
}

/// Encodes a clip as an in-memory WAV file.
pub fn wav_bytes(clip: &AudioClip, format: WavFormat) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    write_wav_to(&mut cursor, clip, format)?;
    Ok(cursor.into_inner())
}
