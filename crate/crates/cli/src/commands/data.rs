use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use voxsep::augment::{apply, draw_spec, AugmentKind, AugmentationSpec};
use voxsep::dataset::{rebalance_genres, select_segment_offset, split_by_artist, TrackAudio};
use voxsep::mining::{mine_candidates, write_rejections, CandidateManifest, MiningConfig};
use voxsep::seed::derive;
use voxsep::toy::{toy_songs, write_toy_dataset, ToyConfig};
use voxsep::StemName;

use super::{jobs, load_manifest, parse_fractions, parse_part, segment_spec, tracks_in};
use crate::config::parse_mode;
use crate::failure::{usage, CmdResult, Stage};
use crate::meta::{ensure_dir, write_json, write_run_meta};
use crate::{MineArgs, PreviewArgs, RebalanceArgs, SplitArgs, ToyArgs};

pub fn mine(args: MineArgs) -> CmdResult {
    let jobs = jobs(args.jobs)?;
    let cfg = MiningConfig {
        max_duration_diff_s: args.max_duration_diff_s,
        max_duration_s: args.max_duration_s,
        max_lag_s: args.max_lag_s,
        min_peak: args.min_peak,
        ..Default::default()
    };
    if !(cfg.max_lag_s > 0.0 && cfg.max_duration_s > 0.0 && cfg.max_duration_diff_s >= 0.0) {
        return usage("duration and lag limits must be positive");
    }
    let candidates = CandidateManifest::load(&args.candidates).stage("load")?;
    ensure_dir(&args.out)?;
    let (manifest, rejections, summary) = mine_candidates(&candidates, &cfg, &args.out, jobs).stage("mine")?;
    manifest.save(args.out.join("manifest.json")).stage("write")?;
    write_rejections(&args.out.join("rejections.csv"), &rejections).stage("write")?;
    write_json(&args.out.join("summary.json"), &summary)?;
    write_run_meta(
        &args.out,
        "mine",
        None,
        &serde_json::json!({ "candidates": args.candidates, "mining": cfg }),
    )?;
    println!("mined {} of {} pairs into {}", summary.accepted, candidates.pairs.len(), args.out.display());
    Ok(())
}

pub fn split(args: SplitArgs) -> CmdResult {
    let fractions = parse_fractions(&args.fractions)?;
    let manifest = load_manifest(&args.manifest)?;
    let out = split_by_artist(&manifest, fractions, args.seed).stage("split")?;
    ensure_dir(&args.out)?;
    out.save(args.out.join("manifest.json")).stage("write")?;
    write_run_meta(
        &args.out,
        "dataset-split",
        Some(args.seed),
        &serde_json::json!({ "manifest": args.manifest, "fractions": fractions }),
    )?;
    let counts: Vec<String> = voxsep::dataset::SplitPart::ALL
        .iter()
        .map(|&p| format!("{p:?}: {}", out.entries_in(p).count()))
        .collect();
    println!("{}", counts.join(", "));
    Ok(())
}

fn parse_target(text: &str) -> CmdResult<BTreeMap<String, f64>> {
    let path = std::path::Path::new(text);
    if path.extension().is_some_and(|e| e == "json") {
        let raw = std::fs::read_to_string(path).or_else(|e| usage(format!("cannot read {text}: {e}")))?;
        return serde_json::from_str(&raw).or_else(|e| usage(format!("invalid target {text}: {e}")));
    }
    text.split(',')
        .map(|pair| {
            let (genre, frac) = pair
                .split_once('=')
                .ok_or_else(|| crate::failure::Failure::Usage(format!("expected genre=fraction, got {pair:?}")))?;
            let frac = frac
                .trim()
                .parse::<f64>()
                .or_else(|_| usage(format!("bad fraction in {pair:?}")))?;
            Ok((genre.trim().to_lowercase(), frac))
        })
        .collect()
}

pub fn rebalance(args: RebalanceArgs) -> CmdResult {
    let target = parse_target(&args.target)?;
    let manifest = load_manifest(&args.manifest)?;
    let out = rebalance_genres(&manifest, &target, args.seed).stage("rebalance")?;
    ensure_dir(&args.out)?;
    out.save(args.out.join("manifest.json")).stage("write")?;
    write_run_meta(
        &args.out,
        "dataset-rebalance",
        Some(args.seed),
        &serde_json::json!({ "manifest": args.manifest, "target": target }),
    )?;
    println!("kept {} of {} tracks", out.entries.len(), manifest.entries.len());
    Ok(())
}

#[derive(Serialize)]
struct PreviewItem {
    track_id: String,
    offset_s: f64,
    spec: AugmentationSpec,
    /// Sum of squared magnitudes before and after, per grid.
    energy_before: BTreeMap<String, f64>,
    energy_after: BTreeMap<String, f64>,
}

fn energy<'a>(grid: impl IntoIterator<Item = &'a f64>) -> f64 {
    grid.into_iter().map(|v| v * v).sum()
}

fn energies(sample: &voxsep::TrainingSample) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = sample.targets.iter().map(|(s, g)| (s.to_string(), energy(g))).collect();
    out.insert("mixture".into(), energy(&sample.mixture));
    out
}

pub fn augment_preview(args: PreviewArgs) -> CmdResult {
    let kind: AugmentKind = args.kind.parse().or_else(|_| usage(format!("unknown augmentation kind {:?}", args.kind)))?;
    let mode = parse_mode(&args.mode)?;
    let part = parse_part(&args.part)?;
    let spec = segment_spec(args.frames, args.bins)?;
    let manifest = load_manifest(&args.manifest)?;
    let tracks = tracks_in(&manifest, part)?;
    let sources: Vec<StemName> = mode.model_sources().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive(args.seed, "augment-preview"));
    let mut items = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let bundle = &tracks[i % tracks.len()];
        let audio = TrackAudio::load(bundle, spec.sample_rate).stage("load")?;
        let offset = select_segment_offset(audio.duration_s(), spec.duration_s(), &mut rng);
        let sample = audio.training_sample(&sources, offset, &spec).stage("augment")?;
        let drawn = draw_spec(kind, &sources, &mut rng);
        let augmented = apply(&sample, &drawn).stage("augment")?;
        items.push(PreviewItem {
            track_id: bundle.id.clone(),
            offset_s: offset,
            energy_before: energies(&sample),
            energy_after: energies(&augmented),
            spec: drawn,
        });
    }
    ensure_dir(&args.out)?;
    write_json(&args.out.join("preview.json"), &items)?;
    write_run_meta(
        &args.out,
        "augment-preview",
        Some(args.seed),
        &serde_json::json!({ "manifest": args.manifest, "kind": kind, "count": args.count, "segment": spec }),
    )?;
    println!("wrote {} previews to {}", items.len(), args.out.join("preview.json").display());
    Ok(())
}

pub fn make_toy(args: ToyArgs) -> CmdResult {
    let fractions = parse_fractions(&args.fractions)?;
    if args.songs == 0 || !(args.seconds > 0.0) {
        return usage("--songs and --seconds must be positive");
    }
    let cfg = ToyConfig::default();
    let len = (args.seconds * cfg.sample_rate as f64).round() as usize;
    let songs = toy_songs(args.songs, len, &cfg, derive(args.seed, "toy")).stage("generate")?;
    ensure_dir(&args.out)?;
    let manifest = write_toy_dataset(&args.out, &songs).stage("write")?;
    let manifest = split_by_artist(&manifest, fractions, derive(args.seed, "split")).stage("split")?;
    manifest.save(args.out.join("manifest.json")).stage("write")?;
    write_run_meta(
        &args.out,
        "make-toy",
        Some(args.seed),
        &serde_json::json!({ "songs": args.songs, "seconds": args.seconds, "fractions": fractions, "toy": cfg }),
    )?;
    println!("wrote {} toy songs to {}", songs.len(), args.out.display());
    Ok(())
}
