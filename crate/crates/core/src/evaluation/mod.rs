//! Source separation metrics, per-song aggregation and significance testing.

mod bss;
mod report;
mod stats;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::sample::StemName;

pub use bss::{bss_eval_frame, db_ratio, FrameMetrics, DAMPING, DEFAULT_FILTER_LEN, ZERO_ENERGY};
pub use report::{
    compare_methods, read_metric_rows, records_to_rows, significance_table, write_metric_rows,
    write_pvalue_csv, ComparisonResult, Metric, MetricRow, PValueMatrix, SignificanceTable, TableCell,
};
pub use stats::{median, paired_t_test, student_t_two_sided, TTest};

/// A frame is skipped for a source when its reference energy is below this
/// fraction of the song's mean frame energy for that source.
pub const SILENT_FRAME: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub frame_s: f64,
    pub filter_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            frame_s: 1.0,
            filter_len: DEFAULT_FILTER_LEN,
        }
    }
}

/// Song-level metrics for one source. `frames` holds the per-frame values,
/// `None` where the frame was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub song_id: String,
    pub source: StemName,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub frames: Vec<Option<FrameMetrics>>,
}

impl MetricRecord {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Sdr => self.sdr,
            Metric::Sir => self.sir,
            Metric::Sar => self.sar,
        }
    }
}

/// Frame boundaries: consecutive windows of `frame_len`, the trailing
/// partial frame dropped. A clip shorter than one frame is a single frame.
fn frame_ranges(len: usize, frame_len: usize) -> Vec<(usize, usize)> {
    if len < frame_len {
        return vec![(0, len)];
    }
    (0..len / frame_len).map(|i| (i * frame_len, frame_len)).collect()
}

fn aggregate(values: impl Iterator<Item = f64>, what: &str) -> Result<f64> {
    let v: Vec<f64> = values.collect();
    median(&v).ok_or_else(|| Error::UndefinedMetric(format!("{what}: every frame was skipped")))
}

/// Metrics of every estimated source on non-overlapping frames of
/// `cfg.frame_s` seconds, reduced to one value per song by the median.
pub fn evaluate_song(
    song_id: &str,
    estimates: &BTreeMap<StemName, AudioClip>,
    references: &BTreeMap<StemName, AudioClip>,
    cfg: &EvalConfig,
) -> Result<Vec<MetricRecord>> {
    bss::check_clips(estimates, references)?;
    if !(cfg.frame_s > 0.0) {
        return Err(Error::InvalidInput("frame length must be positive".into()));
    }
    let first = references.values().next().expect("checked non-empty");
    let rate = first.sample_rate();
    let frame_len = ((cfg.frame_s * rate as f64).round() as usize).max(1);
    let ranges = frame_ranges(first.len(), frame_len);

    let framed_refs: Vec<BTreeMap<StemName, AudioClip>> = ranges
        .iter()
        .map(|&(start, len)| references.iter().map(|(&s, c)| (s, c.slice_padded(start, len))).collect())
        .collect();

    let mut records = Vec::with_capacity(estimates.len());
    for (&source, estimate) in estimates {
        let energies: Vec<f64> = framed_refs.iter().map(|f| f[&source].energy()).collect();
        let mean = energies.iter().sum::<f64>() / energies.len() as f64;
        let mut frames = Vec::with_capacity(ranges.len());
        for ((&(start, len), refs), &e) in ranges.iter().zip(&framed_refs).zip(&energies) {
            if e == 0.0 || e < SILENT_FRAME * mean {
                frames.push(None);
                continue;
            }
            let est = estimate.slice_padded(start, len);
            match bss::source_metrics(&est, refs, source, cfg.filter_len) {
                Ok(m) => frames.push(Some(m)),
                Err(Error::UndefinedMetric(_)) => frames.push(None),
                Err(e) => return Err(e),
            }
        }
        let what = format!("{song_id}/{source}");
        let kept = || frames.iter().flatten();
        records.push(MetricRecord {
            song_id: song_id.to_string(),
            source,
            sdr: aggregate(kept().map(|m| m.sdr), &what)?,
            sir: aggregate(kept().map(|m| m.sir), &what)?,
            sar: aggregate(kept().map(|m| m.sar), &what)?,
            frames,
        });
    }
    Ok(records)
}

/// One song to score: its id, estimates and references.
pub struct SongEval<'a> {
    pub song_id: &'a str,
    pub estimates: &'a BTreeMap<StemName, AudioClip>,
    pub references: &'a BTreeMap<StemName, AudioClip>,
}

/// Evaluates songs on up to `jobs` threads. Results keep the input order;
/// the first error in that order is returned.
pub fn evaluate_songs(songs: &[SongEval<'_>], cfg: &EvalConfig, jobs: usize) -> Result<Vec<MetricRecord>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Vec<MetricRecord>>>>> = songs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, songs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(song) = songs.get(i) else { break };
                let r = evaluate_song(song.song_id, song.estimates, song.references, cfg);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut out = Vec::new();
    for slot in slots {
        out.extend(slot.into_inner().unwrap().expect("every song evaluated")?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RATE: u32 = 1000;

    fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn clip(x: Vec<f64>) -> AudioClip {
        AudioClip::mono(x, RATE).unwrap()
    }

    fn cfg(filter_len: usize) -> EvalConfig {
        EvalConfig { frame_s: 1.0, filter_len }
    }

    /// Ten one-second frames where the vocal estimate carries noise at a
    /// frame-dependent level.
    fn song(rng: &mut ChaCha8Rng) -> (BTreeMap<StemName, AudioClip>, BTreeMap<StemName, AudioClip>) {
        let n = 10 * RATE as usize;
        let v = noise(n, rng);
        let i = noise(n, rng);
        let e = noise(n, rng);
        let est: Vec<f64> = (0..n).map(|k| v[k] + 0.02 * (1 + k / RATE as usize) as f64 * e[k]).collect();
        let refs = [(StemName::Vocals, clip(v)), (StemName::Instrumental, clip(i.clone()))].into();
        let ests = [(StemName::Vocals, clip(est)), (StemName::Instrumental, clip(i))].into();
        (ests, refs)
    }

    #[test]
    fn matches_frame_by_frame_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ests, refs) = song(&mut rng);
        let records = evaluate_song("s", &ests, &refs, &cfg(4)).unwrap();
        let vocal = records.iter().find(|r| r.source == StemName::Vocals).unwrap();
        assert_eq!(vocal.frames.len(), 10);
        let mut oracle = Vec::new();
        for f in 0..10 {
            let cut = |m: &BTreeMap<StemName, AudioClip>| -> BTreeMap<StemName, AudioClip> {
                m.iter()
                    .map(|(&s, c)| (s, clip(c.channel(0)[f * 1000..(f + 1) * 1000].to_vec())))
                    .collect()
            };
            let m = bss_eval_frame(&cut(&ests), &cut(&refs), 4).unwrap();
            oracle.push(m[&StemName::Vocals].sdr);
            assert_eq!(vocal.frames[f].unwrap(), m[&StemName::Vocals]);
        }
        oracle.sort_by(f64::total_cmp);
        assert_eq!(vocal.sdr, 0.5 * (oracle[4] + oracle[5]));
        // Noise grows with the frame index, so SDR falls.
        let sdrs: Vec<f64> = vocal.frames.iter().map(|m| m.unwrap().sdr).collect();
        assert!(sdrs.windows(2).all(|w| w[0] > w[1]));
        let inst = records.iter().find(|r| r.source == StemName::Instrumental).unwrap();
        assert!(inst.sdr.is_infinite());
    }

    #[test]
    fn silent_frames_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3000;
        let mut v = noise(n, &mut rng);
        v[1000..2000].fill(0.0);
        let i = noise(n, &mut rng);
        let est: Vec<f64> = v.iter().zip(&i).map(|(a, b)| a + 0.1 * b).collect();
        let refs = [(StemName::Vocals, clip(v)), (StemName::Instrumental, clip(i))].into();
        let ests = [(StemName::Vocals, clip(est))].into();
        let r = evaluate_song("s", &ests, &refs, &cfg(1)).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].frames[1].is_none());
        assert!(r[0].frames[0].is_some() && r[0].frames[2].is_some());
    }

    #[test]
    fn all_silent_is_undefined() {
        let refs = [
            (StemName::Vocals, clip(vec![0.0; 2000])),
            (StemName::Instrumental, clip(vec![1.0; 2000])),
        ]
        .into();
        let ests = [(StemName::Vocals, clip(vec![0.5; 2000]))].into();
        assert!(matches!(
            evaluate_song("s", &ests, &refs, &cfg(1)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn trailing_partial_frame_dropped() {
        assert_eq!(frame_ranges(2500, 1000), vec![(0, 1000), (1000, 1000)]);
        assert_eq!(frame_ranges(700, 1000), vec![(0, 700)]);
    }

    #[test]
    fn parallel_matches_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let songs: Vec<_> = (0..4).map(|_| song(&mut rng)).collect();
        let ids = ["a", "b", "c", "d"];
        let evals: Vec<SongEval> = songs
            .iter()
            .zip(ids)
            .map(|((e, r), id)| SongEval { song_id: id, estimates: e, references: r })
            .collect();
        let serial = evaluate_songs(&evals, &cfg(2), 1).unwrap();
        let parallel = evaluate_songs(&evals, &cfg(2), 3).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.len(), 8);
    }
}
