//! File-based mining: candidate-pair manifests in, triplet WAVs, a dataset
//! manifest and a rejection report out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{mine_pair, MinedTriplet, MiningConfig, RejectReason, Rejection, Stage, TrackPair};
use crate::audio::{read_wav, write_wav, WavFormat};
use crate::dataset::{Manifest, Quality, TrackBundle};
use crate::error::{Error, Result};
use crate::sample::StemName;

pub const CANDIDATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub id: String,
    pub mix: PathBuf,
    pub instrumental: PathBuf,
    #[serde(default)]
    pub artist: String,
    #[serde(default)]
    pub genre: String,
}

/// JSON list of (mix, instrumental) file pairs. Relative paths are resolved
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateManifest {
    pub version: u32,
    pub pairs: Vec<CandidatePair>,
}

impl CandidateManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: CandidateManifest = serde_json::from_str(&text)?;
        if m.version != CANDIDATE_VERSION {
            return Err(Error::InvalidInput(format!("unsupported candidate manifest version {}", m.version)));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut m.pairs {
            p.mix = base.join(&p.mix);
            p.instrumental = base.join(&p.instrumental);
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningSummary {
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections counted per reason.
    pub reasons: BTreeMap<RejectReason, usize>,
    /// Per accepted pair: lag in samples, gain in dB, estimate energy ratio.
    pub triplets: BTreeMap<String, (i64, f64, f64)>,
}

fn load_pair(c: &CandidatePair) -> Result<TrackPair> {
    let pair = TrackPair::new(c.id.clone(), read_wav(&c.mix)?, read_wav(&c.instrumental)?)?;
    Ok(pair.with_metadata(c.artist.clone(), c.genre.clone().to_lowercase()))
}

fn write_triplet(t: &MinedTriplet, out_dir: &Path) -> Result<TrackBundle> {
    let dir = out_dir.join(&t.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let files = [("mix.wav", &t.mix), ("instrumental.wav", &t.instrumental), ("vocals.wav", &t.vocals)];
    for (name, clip) in files {
        write_wav(dir.join(name), clip, WavFormat::Float32)?;
    }
    Ok(TrackBundle {
        id: t.id.clone(),
        artist: t.artist.clone(),
        genre: t.genre.clone(),
        duration_s: t.mix.duration_s(),
        mixture: dir.join("mix.wav"),
        stems: [
            (StemName::Vocals, dir.join("vocals.wav")),
            (StemName::Instrumental, dir.join("instrumental.wav")),
        ]
        .into(),
        quality: Quality::Estimates,
    })
}

enum Outcome {
    Accepted(TrackBundle, (i64, f64, f64)),
    Rejected(Rejection),
}

fn process(c: &CandidatePair, cfg: &MiningConfig, out_dir: &Path) -> Result<Outcome> {
    let pair = match load_pair(c) {
        Ok(p) => p,
        Err(e) => {
            return Ok(Outcome::Rejected(Rejection {
                pair_id: c.id.clone(),
                stage: Stage::Load,
                reason: RejectReason::Unreadable,
                detail: e.to_string(),
            }))
        }
    };
    match mine_pair(&pair, cfg) {
        Ok(t) => {
            let bundle = write_triplet(&t, out_dir)?;
            Ok(Outcome::Accepted(bundle, (t.alignment.lag, t.gain_db, t.residual.estimate_energy_ratio)))
        }
        Err(r) => Ok(Outcome::Rejected(r)),
    }
}

/// Mines all candidates with up to `jobs` worker threads. Triplets are
/// written under `out_dir/<id>/`; the returned manifest and rejection list
/// follow input order regardless of scheduling.
pub fn mine_candidates(
    candidates: &CandidateManifest,
    cfg: &MiningConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<(Manifest, Vec<Rejection>, MiningSummary)> {
    let n = candidates.pairs.len();
    let slots: Vec<Mutex<Option<Result<Outcome>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = process(&candidates.pairs[i], cfg, out_dir);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut entries = Vec::new();
    let mut rejections = Vec::new();
    let mut summary = MiningSummary::default();
    for slot in slots {
        match slot.into_inner().expect("slot lock").expect("every pair processed")? {
            Outcome::Accepted(bundle, stats) => {
                summary.triplets.insert(bundle.id.clone(), stats);
                entries.push(bundle);
            }
            Outcome::Rejected(r) => {
                *summary.reasons.entry(r.reason).or_default() += 1;
                rejections.push(r);
            }
        }
    }
    summary.accepted = entries.len();
    summary.rejected = rejections.len();
    Ok((Manifest::new(entries), rejections, summary))
}

/// CSV with columns `pair_id,stage,reason,detail`.
pub fn write_rejections(path: &Path, rejections: &[Rejection]) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidInput(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["pair_id", "stage", "reason", "detail"]).map_err(io)?;
    for r in rejections {
        w.write_record([r.pair_id.as_str(), &r.stage.to_string(), &r.reason.to_string(), &r.detail])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mines_files_in_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let rate = 8000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pairs = Vec::new();
        for k in 0..4 {
            let len = if k == 2 { 5 * rate } else { 5 * rate };
            let inst: Vec<f64> = (0..len).map(|_| rng.random_range(-0.3..0.3)).collect();
            let voice: Vec<f64> = (0..len).map(|_| rng.random_range(-0.1..0.1)).collect();
            let mix: Vec<f64> = inst.iter().zip(&voice).map(|(a, b)| a + b).collect();
            let inst_len = if k == 1 { len + 3 * rate } else { len };
            let mut inst_padded = inst.clone();
            inst_padded.resize(inst_len, 0.0);
            write_wav(dir.path().join(format!("m{k}.wav")), &AudioClip::mono(mix, rate as u32).unwrap(), WavFormat::Float32).unwrap();
            write_wav(dir.path().join(format!("i{k}.wav")), &AudioClip::mono(inst_padded, rate as u32).unwrap(), WavFormat::Float32).unwrap();
            pairs.push(CandidatePair {
                id: format!("pair{k}"),
                mix: format!("m{k}.wav").into(),
                instrumental: format!("i{k}.wav").into(),
                artist: format!("artist{k}"),
                genre: "Rock".into(),
            });
        }
        pairs.push(CandidatePair {
            id: "missing".into(),
            mix: "nope.wav".into(),
            instrumental: "nope.wav".into(),
            artist: String::new(),
            genre: String::new(),
        });
        let cm = CandidateManifest { version: CANDIDATE_VERSION, pairs };
        cm.save(dir.path().join("pairs.json")).unwrap();
        let loaded = CandidateManifest::load(dir.path().join("pairs.json")).unwrap();
        let out = dir.path().join("out");
        let cfg = MiningConfig { window_size: 512, hop: 128, ..Default::default() };
        let (manifest, rejections, summary) = mine_candidates(&loaded, &cfg, &out, 3).unwrap();
        let ids: Vec<_> = manifest.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["pair0", "pair2", "pair3"]);
        assert!(manifest.entries.iter().all(|e| e.quality == Quality::Estimates && e.genre == "rock"));
        assert_eq!(rejections.len(), 2);
        assert_eq!(rejections[0].reason, RejectReason::DurationMismatch);
        assert_eq!(rejections[1].stage, Stage::Load);
        assert_eq!(summary.accepted + summary.rejected, 5);
        manifest.verify_files().unwrap();
        write_rejections(&out.join("rejections.csv"), &rejections).unwrap();
        let csv = fs::read_to_string(out.join("rejections.csv")).unwrap();
        assert!(csv.starts_with("pair_id,stage,reason,detail\npair1,filter,duration-mismatch,"));
    }
}
