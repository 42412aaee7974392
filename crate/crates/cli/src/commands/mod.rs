pub mod data;
pub mod eval;
pub mod model;

use std::collections::BTreeMap;
use std::path::Path;

use voxsep::dataset::{Manifest, SplitFractions, SplitPart, TrackBundle};
use voxsep::model::{best_checkpoint_path, load_checkpoint, UNet};
use voxsep::{SegmentSpec, SeparationMode, StemName};

use crate::failure::{usage, CmdResult, Failure, Stage};

pub fn jobs(requested: Option<usize>) -> CmdResult<usize> {
    match requested {
        Some(0) => usage("--jobs must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// The standard segment for 512 x 1024 grids, otherwise the scaled geometry
/// with the same window-to-hop ratio.
pub fn segment_spec(frames: usize, bins: usize) -> CmdResult<SegmentSpec> {
    let standard = SegmentSpec::STANDARD;
    if (frames, bins) == (standard.frames, standard.bins) {
        return Ok(standard);
    }
    SegmentSpec::scaled(standard.sample_rate, frames, bins).or_else(|e| usage(e.to_string()))
}

pub fn parse_fractions(text: &str) -> CmdResult<SplitFractions> {
    let parts: Vec<f64> = match text.split(',').map(|p| p.trim().parse::<f64>()).collect() {
        Ok(p) => p,
        Err(_) => return usage(format!("fractions must be three numbers, got {text:?}")),
    };
    match parts[..] {
        [train, val, test] => SplitFractions::new(train, val, test).or_else(|e| usage(e.to_string())),
        _ => usage(format!("fractions must be three numbers, got {text:?}")),
    }
}

pub fn parse_part(text: &str) -> CmdResult<SplitPart> {
    text.parse().or_else(|_| usage(format!("unknown split part {text:?}; expected train, val or test")))
}

pub fn load_manifest(path: &Path) -> CmdResult<Manifest> {
    Manifest::load(path).stage("load")
}

/// Tracks of `part`, sorted by id.
pub fn tracks_in(manifest: &Manifest, part: SplitPart) -> CmdResult<Vec<TrackBundle>> {
    let mut tracks: Vec<TrackBundle> = manifest.entries_in(part).cloned().collect();
    if tracks.is_empty() {
        return Err(Failure::Stage {
            stage: "load",
            error: anyhow::anyhow!("manifest has no tracks in the {part:?} part; run dataset-split first"),
        });
    }
    tracks.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(tracks)
}

/// The best checkpoint of every source the mode needs.
pub fn load_models(dir: &Path, mode: SeparationMode) -> CmdResult<BTreeMap<StemName, UNet>> {
    let mut models = BTreeMap::new();
    for &source in mode.model_sources() {
        let (model, _) = load_checkpoint(&best_checkpoint_path(dir, source)).stage("load")?;
        models.insert(source, model);
    }
    let mut shapes = models.values().map(|m| (m.config().frames, m.config().bins));
    let first = shapes.next().expect("every mode has sources");
    if shapes.any(|s| s != first) {
        return Err(Failure::Stage {
            stage: "load",
            error: anyhow::anyhow!("checkpoints in {} use different input geometries", dir.display()),
        });
    }
    Ok(models)
}

pub fn models_spec(models: &BTreeMap<StemName, UNet>) -> CmdResult<SegmentSpec> {
    let cfg = models.values().next().expect("non-empty model set").config();
    segment_spec(cfg.frames, cfg.bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_need_three_valid_numbers() {
        assert!(parse_fractions("0.8,0.1,0.1").is_ok());
        for bad in ["0.8,0.2", "a,b,c", "0.5,0.5,0.5"] {
            assert_eq!(parse_fractions(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn standard_grid_uses_standard_segment() {
        assert_eq!(segment_spec(512, 1024).unwrap(), SegmentSpec::STANDARD);
        let toy = segment_spec(64, 128).unwrap();
        assert_eq!((toy.frames, toy.bins), (64, 128));
        assert!(jobs(Some(0)).is_err());
    }
}
