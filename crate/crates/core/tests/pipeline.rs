use std::collections::{BTreeMap, BTreeSet};

use voxsep::dataset::{split_by_artist, Manifest, SplitFractions, SplitPart, TrackAudio};
use voxsep::evaluation::{evaluate_song, EvalConfig, Metric};
use voxsep::separation::{as_estimators, separate_song, ScaledMixture};
use voxsep::toy::{toy_songs, write_toy_dataset, ToyConfig};
use voxsep::{SeparationMode, StemName};

const SR: u32 = 22050;

fn max_abs_diff(a: &voxsep::AudioClip, b: &voxsep::AudioClip) -> f64 {
    a.channels()
        .iter()
        .flatten()
        .zip(b.channels().iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn toy_dataset_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ToyConfig::default();
    let songs = toy_songs(10, SR as usize, &cfg, 9).unwrap();
    let manifest = write_toy_dataset(&dir.path().join("audio"), &songs).unwrap();
    let split = split_by_artist(&manifest, SplitFractions::new(0.6, 0.2, 0.2).unwrap(), 4).unwrap();
    let path = dir.path().join("manifest.json");
    split.save(&path).unwrap();

    let loaded = Manifest::load(&path).unwrap();
    assert_eq!(loaded.entries.len(), 10);
    let ids: BTreeSet<_> = [SplitPart::Train, SplitPart::Val, SplitPart::Test]
        .into_iter()
        .flat_map(|p| loaded.entries_in(p).map(|e| e.id.clone()).collect::<Vec<_>>())
        .collect();
    assert_eq!(ids.len(), 10, "every track lands in exactly one part");

    for song in &songs {
        let bundle = loaded.entry(&song.id).unwrap();
        let audio = TrackAudio::load(bundle, SR).unwrap();
        // float32 on disk
        assert!(max_abs_diff(&audio.mixture, &song.mixture) < 1e-6);
        for stem in [StemName::Vocals, StemName::Instrumental] {
            assert!(max_abs_diff(&audio.stem(stem).unwrap(), &song.stems[&stem]) < 1e-6);
        }
    }
}

#[test]
fn equal_split_scores_as_the_half_mixture() {
    let cfg = ToyConfig::default();
    let song = &toy_songs(1, 3 * SR as usize, &cfg, 21).unwrap()[0];
    let spec = voxsep::SegmentSpec::scaled(SR, 64, 128).unwrap();
    let models: BTreeMap<StemName, ScaledMixture> =
        [(StemName::Vocals, ScaledMixture(1.0)), (StemName::Instrumental, ScaledMixture(1.0))].into();
    let out = separate_song(&song.mixture, &as_estimators(&models), SeparationMode::TwoStem, &spec).unwrap();

    let half = song.mixture.channels().iter().map(|c| c.iter().map(|v| 0.5 * v).collect()).collect();
    let half = voxsep::AudioClip::new(half, SR).unwrap();
    for clip in out.values() {
        assert!(max_abs_diff(clip, &half) < 1e-9);
    }

    let refs: BTreeMap<StemName, _> = song.stems.clone().into_iter().collect();
    let records = evaluate_song(&song.id, &out, &refs, &EvalConfig::default()).unwrap();
    let baseline = evaluate_song(
        &song.id,
        &refs.keys().map(|&s| (s, song.mixture.clone())).collect(),
        &refs,
        &EvalConfig::default(),
    )
    .unwrap();
    // SDR is scale invariant, so half the mixture scores as the mixture.
    for (r, b) in records.iter().zip(&baseline) {
        assert_eq!(r.source, b.source);
        assert!((r.value(Metric::Sdr) - b.value(Metric::Sdr)).abs() < 1e-6);
    }
}
