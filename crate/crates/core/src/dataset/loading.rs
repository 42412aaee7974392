use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrackBundle;
use crate::audio::{read_wav, AudioClip};
use crate::augment::Augmenter;
use crate::dsp::{resample, segment_to_standard, SegmentSpec};
use crate::error::{Error, Result};
use crate::sample::{Provenance, SampleStream, StemName, TrainingSample};

/// Seconds skipped at the start of a song, where vocals are often missing.
pub const INTRO_S: f64 = 20.0;
/// Seconds skipped at the end of a song.
pub const OUTRO_S: f64 = 20.0;

/// Draws a segment start uniformly in `[INTRO_S, duration - OUTRO_S - segment]`.
///
/// Tracks too short for that window fall back to `[0, duration - segment]`,
/// and tracks shorter than one segment start at 0.
pub fn select_segment_offset<R: Rng + ?Sized>(duration_s: f64, segment_s: f64, rng: &mut R) -> f64 {
    let (lo, hi) = if duration_s >= INTRO_S + OUTRO_S + segment_s {
        (INTRO_S, duration_s - OUTRO_S - segment_s)
    } else {
        (0.0, (duration_s - segment_s).max(0.0))
    };
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Decoded audio of one track at the segment sample rate.
#[derive(Debug, Clone)]
pub struct TrackAudio {
    pub id: String,
    pub mixture: AudioClip,
    pub stems: BTreeMap<StemName, AudioClip>,
}

impl TrackAudio {
    /// Reads the mixture and every stored stem, resampling to `rate`.
    pub fn load(bundle: &TrackBundle, rate: u32) -> Result<Self> {
        let load = |path| read_wav(path).and_then(|clip| resample(&clip, rate));
        let mixture = load(&bundle.mixture)?;
        let stems = bundle
            .stems
            .iter()
            .map(|(&name, path)| load(path).map(|clip| (name, clip)))
            .collect::<Result<_>>()?;
        Ok(TrackAudio {
            id: bundle.id.clone(),
            mixture,
            stems,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.mixture.duration_s()
    }

    /// The stem itself, or for `instrumental` the time-domain sum of drums,
    /// bass and other when it is not stored.
    pub fn stem(&self, name: StemName) -> Result<AudioClip> {
        if let Some(clip) = self.stems.get(&name) {
            return Ok(clip.clone());
        }
        let missing = || Error::MissingStem {
            track: self.id.clone(),
            stem: name,
        };
        if name != StemName::Instrumental {
            return Err(missing());
        }
        let parts: Vec<&AudioClip> = StemName::ACCOMPANIMENT
            .iter()
            .map(|s| self.stems.get(s).ok_or_else(missing))
            .collect::<Result<_>>()?;
        AudioClip::sum(parts)
    }

    /// Mixture and target magnitude grids for the segment at `offset_s`.
    pub fn training_sample(&self, sources: &[StemName], offset_s: f64, spec: &SegmentSpec) -> Result<TrainingSample> {
        let mixture = segment_to_standard(&self.mixture, spec, offset_s)?.into_magnitude()?;
        let mut targets = BTreeMap::new();
        for &source in sources {
            let clip = self.stem(source)?;
            let grid = segment_to_standard(&clip, spec, offset_s)?.into_magnitude()?;
            targets.insert(source, grid);
        }
        TrainingSample::new(
            mixture,
            targets,
            Provenance {
                track_id: self.id.clone(),
                offset_s,
            },
            spec.sample_rate,
            spec.window_size,
        )
    }
}

pub fn load_training_sample(
    bundle: &TrackBundle,
    sources: &[StemName],
    offset_s: f64,
    spec: &SegmentSpec,
) -> Result<TrainingSample> {
    if let Some(&stem) = sources.iter().find(|&&s| !bundle.provides(s)) {
        return Err(Error::MissingStem {
            track: bundle.id.clone(),
            stem,
        });
    }
    TrackAudio::load(bundle, spec.sample_rate)?.training_sample(sources, offset_s, spec)
}

/// Endless training stream over in-memory songs: each pass visits every song
/// once in a seeded random order and cuts one random segment from it.
pub struct SongSampler {
    songs: Vec<TrackAudio>,
    sources: Vec<StemName>,
    spec: SegmentSpec,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    augmenter: Option<Augmenter>,
}

impl SongSampler {
    pub fn new(songs: Vec<TrackAudio>, sources: Vec<StemName>, spec: SegmentSpec, seed: u64) -> Result<Self> {
        if songs.is_empty() {
            return Err(Error::InvalidInput("no songs to sample from".into()));
        }
        Ok(SongSampler {
            songs,
            sources,
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            augmenter: None,
        })
    }

    pub fn with_augmenter(mut self, augmenter: Augmenter) -> Self {
        self.augmenter = Some(augmenter);
        self
    }

    /// One fixed segment per song, taken from the middle of the allowed
    /// window; used for validation and test sets.
    pub fn fixed_samples(&self) -> Result<Vec<TrainingSample>> {
        self.songs
            .iter()
            .map(|song| {
                let seg = self.spec.duration_s();
                let duration = song.duration_s();
                let offset = if duration >= INTRO_S + OUTRO_S + seg {
                    INTRO_S + (duration - INTRO_S - OUTRO_S - seg) / 2.0
                } else {
                    ((duration - seg) / 2.0).max(0.0)
                };
                song.training_sample(&self.sources, offset, &self.spec)
            })
            .collect()
    }
}

impl SampleStream for SongSampler {
    fn next_sample(&mut self) -> Result<TrainingSample> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.songs.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let song = &self.songs[self.order[self.cursor]];
        self.cursor += 1;
        let offset = select_segment_offset(song.duration_s(), self.spec.duration_s(), &mut self.rng);
        let sample = song.training_sample(&self.sources, offset, &self.spec)?;
        match &mut self.augmenter {
            Some(aug) => aug.augment(sample),
            None => Ok(sample),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, WavFormat};
    use crate::dataset::Quality;
    use std::path::Path;

    #[test]
    fn offsets_avoid_intro_and_outro() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let o = select_segment_offset(200.0, 11.88, &mut rng);
            assert!((20.0..=168.12 + 1e-9).contains(&o));
        }
    }

    #[test]
    fn degenerate_window_starts_at_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_segment_offset(51.88, 11.88, &mut rng), 20.0);
    }

    #[test]
    fn short_track_falls_back_to_whole_song() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lo: f64 = 100.0;
        let mut hi: f64 = 0.0;
        for _ in 0..2000 {
            let o = select_segment_offset(30.0, 11.88, &mut rng);
            assert!((0.0..=18.12 + 1e-9).contains(&o));
            lo = lo.min(o);
            hi = hi.max(o);
        }
        assert!(lo < 1.0 && hi > 17.0, "fallback should use the whole range: {lo}..{hi}");
    }

    fn tone(freq: f64, len: usize, rate: u32) -> AudioClip {
        let x: Vec<f64> = (0..len)
            .map(|i| 0.1 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioClip::new(vec![x.clone(), x], rate).unwrap()
    }

    fn write_bundle(dir: &Path, stems: &[(StemName, f64)]) -> TrackBundle {
        let rate = 44100;
        let len = 44100;
        let mut paths = BTreeMap::new();
        let mut clips = Vec::new();
        for (stem, freq) in stems {
            let clip = tone(*freq, len, rate);
            let path = dir.join(format!("{stem}.wav"));
            write_wav(&path, &clip, WavFormat::Float32).unwrap();
            paths.insert(*stem, path);
            clips.push(clip);
        }
        let mix = AudioClip::sum(&clips).unwrap();
        let mix_path = dir.join("mix.wav");
        write_wav(&mix_path, &mix, WavFormat::Float32).unwrap();
        TrackBundle {
            id: "song".into(),
            artist: "x".into(),
            genre: "pop".into(),
            duration_s: 1.0,
            mixture: mix_path,
            stems: paths,
            quality: Quality::SeparatedRecordings,
        }
    }

    #[test]
    fn two_and_four_stem_samples() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SegmentSpec::scaled(22050, 64, 128).unwrap();
        let four = write_bundle(
            dir.path(),
            &[
                (StemName::Vocals, 2000.0),
                (StemName::Drums, 100.0),
                (StemName::Bass, 60.0),
                (StemName::Other, 500.0),
            ],
        );
        let sample = load_training_sample(
            &four,
            &[StemName::Vocals, StemName::Drums, StemName::Bass, StemName::Other],
            0.2,
            &spec,
        )
        .unwrap();
        assert_eq!(sample.targets.len(), 4);
        for grid in sample.targets.values() {
            assert_eq!(grid.shape(), &[2, 64, 128]);
        }
        let two = load_training_sample(&four, &[StemName::Vocals, StemName::Instrumental], 0.2, &spec).unwrap();
        assert_eq!(two.targets.len(), 2);
        assert_eq!(two.mixture.shape(), two.targets[&StemName::Instrumental].shape());
    }

    #[test]
    fn missing_stem_reported() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SegmentSpec::scaled(22050, 64, 128).unwrap();
        let two = write_bundle(
            dir.path(),
            &[(StemName::Vocals, 2000.0), (StemName::Instrumental, 300.0)],
        );
        let err = load_training_sample(&two, &[StemName::Drums], 0.0, &spec).unwrap_err();
        assert!(matches!(err, Error::MissingStem { stem: StemName::Drums, .. }));
    }

    #[test]
    fn synthesized_instrumental_is_time_domain_sum() {
        let rate = 22050;
        let stems: BTreeMap<_, _> = [
            (StemName::Drums, tone(100.0, 5000, rate)),
            (StemName::Bass, tone(100.0, 5000, rate).scaled(-1.0)),
            (StemName::Other, tone(700.0, 5000, rate)),
        ]
        .into();
        let audio = TrackAudio {
            id: "t".into(),
            mixture: tone(700.0, 5000, rate),
            stems,
        };
        // drums and bass cancel in the time domain; a magnitude sum would not
        let inst = audio.stem(StemName::Instrumental).unwrap();
        for (a, b) in inst.channel(0).iter().zip(tone(700.0, 5000, rate).channel(0)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
