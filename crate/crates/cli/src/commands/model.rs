use std::collections::BTreeMap;

use voxsep::augment::Augmenter;
use voxsep::dataset::{SongSampler, SplitPart, TrackAudio};
use voxsep::evaluation::EvalConfig;
use voxsep::model::{train_sources, TrainReport};
use voxsep::separation::{as_estimators, separate_song};
use voxsep::seed::derive;
use voxsep::{read_wav, write_wav, SampleStream, StemName, WavFormat};

use super::{load_manifest, load_models, models_spec, parse_part, segment_spec, tracks_in};
use crate::config::{default_model, default_train, parse_kinds, parse_mode, ExperimentConfig, FileConfig};
use crate::failure::{usage, CmdResult, Stage};
use crate::meta::{ensure_dir, write_json, write_run_meta};
use crate::{SeparateArgs, TrainArgs};

fn resolve(args: TrainArgs) -> CmdResult<ExperimentConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let Some(manifest) = args.manifest.or(file.manifest) else {
        return usage("no manifest given (use --manifest or set `manifest` in the config)");
    };
    let Some(out) = args.out.or(file.out) else {
        return usage("no output directory given (use --out or set `out` in the config)");
    };
    let mode = parse_mode(args.mode.as_deref().or(file.mode.as_deref()).unwrap_or("two-stem"))?;
    let kinds = match args.augment {
        Some(list) => parse_kinds(&list.split(',').map(|k| k.trim().to_string()).collect::<Vec<_>>())?,
        None => parse_kinds(&file.augment.kinds.unwrap_or_default())?,
    };
    let augment_probability = args.augment_probability.or(file.augment.probability).unwrap_or(0.5);
    if !(0.0..=1.0).contains(&augment_probability) {
        return usage(format!("augmentation probability {augment_probability} is outside [0, 1]"));
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let t = file.train;
    let mut train = default_train();
    train.learning_rate = args.learning_rate.or(t.learning_rate).unwrap_or(train.learning_rate);
    train.batch_size = args.batch_size.or(t.batch_size).unwrap_or(train.batch_size);
    train.epochs = args.epochs.or(t.epochs).unwrap_or(train.epochs);
    train.steps_per_epoch = args.steps_per_epoch.or(t.steps_per_epoch).unwrap_or(train.steps_per_epoch);
    train.patience = args.patience.or(t.patience).unwrap_or(train.patience);
    train.seed = derive(seed, "train");
    if let Err(e) = train.validate() {
        return usage(e.to_string());
    }

    let m = file.model;
    let mut model = default_model();
    model.depth = args.depth.or(m.depth).unwrap_or(model.depth);
    model.base_channels = args.base_channels.or(m.base_channels).unwrap_or(model.base_channels);
    model.frames = args.frames.or(m.frames).unwrap_or(model.frames);
    model.bins = args.bins.or(m.bins).unwrap_or(model.bins);
    model.dropout = m.dropout.unwrap_or(model.dropout);
    if let Err(e) = model.validate() {
        return usage(e.to_string());
    }
    segment_spec(model.frames, model.bins)?;

    let defaults = EvalConfig::default();
    let eval = EvalConfig {
        frame_s: file.eval.frame_s.unwrap_or(defaults.frame_s),
        filter_len: file.eval.filter_len.unwrap_or(defaults.filter_len),
    };
    Ok(ExperimentConfig {
        seed,
        manifest,
        mode,
        out,
        augment_kinds: kinds,
        augment_probability,
        train,
        model,
        eval,
    })
}

pub fn train(args: TrainArgs) -> CmdResult {
    let cfg = resolve(args)?;
    let spec = segment_spec(cfg.model.frames, cfg.model.bins)?;
    let manifest = load_manifest(&cfg.manifest)?;
    let sources: Vec<StemName> = cfg.mode.model_sources().to_vec();
    let load = |part| -> CmdResult<Vec<TrackAudio>> {
        tracks_in(&manifest, part)?
            .iter()
            .map(|b| TrackAudio::load(b, spec.sample_rate).stage("load"))
            .collect()
    };
    let train_songs = load(SplitPart::Train)?;
    let val_songs = load(SplitPart::Val)?;
    let val = SongSampler::new(val_songs, sources.clone(), spec, 0)
        .and_then(|s| s.fixed_samples())
        .stage("load")?;

    let checkpoints = cfg.out.join("checkpoints");
    ensure_dir(&checkpoints)?;
    let make_stream = |source: StemName| -> voxsep::Result<Box<dyn SampleStream>> {
        let mut sampler = SongSampler::new(
            train_songs.clone(),
            sources.clone(),
            spec,
            derive(cfg.seed, &format!("stream-{source}")),
        )?;
        if !cfg.augment_kinds.is_empty() {
            let seed = derive(cfg.seed, &format!("augment-{source}"));
            sampler = sampler.with_augmenter(Augmenter::new(cfg.augment_kinds.clone(), cfg.augment_probability, seed)?);
        }
        Ok(Box::new(sampler))
    };
    let trained = train_sources(cfg.mode.model_sources(), &cfg.model, &cfg.train, make_stream, &val, Some(&checkpoints))
        .stage("train")?;

    let reports: BTreeMap<StemName, &TrainReport> = trained.iter().map(|(&s, (_, r))| (s, r)).collect();
    write_json(&cfg.out.join("train_report.json"), &reports)?;
    write_run_meta(&cfg.out, "train", Some(cfg.seed), &cfg)?;
    for (source, report) in &reports {
        println!(
            "{source}: best epoch {} of {}, validation loss {:.6} (initial {:.6})",
            report.best_epoch,
            report.history.len() - 1,
            report.best_val_loss(),
            report.initial_val_loss()
        );
    }
    Ok(())
}

pub fn separate(args: SeparateArgs) -> CmdResult {
    let mode = parse_mode(&args.mode)?;
    let part = parse_part(&args.part)?;
    let models = load_models(&args.models, mode)?;
    let spec = models_spec(&models)?;
    let estimators = as_estimators(&models);
    let mut jobs: Vec<(std::path::PathBuf, std::path::PathBuf)> = Vec::new();
    if let Some(input) = &args.input {
        jobs.push((input.clone(), args.out.clone()));
    }
    if let Some(path) = &args.manifest {
        let manifest = load_manifest(path)?;
        for bundle in tracks_in(&manifest, part)? {
            jobs.push((bundle.mixture.clone(), args.out.join(&bundle.id)));
        }
    }
    ensure_dir(&args.out)?;
    for (input, dir) in &jobs {
        let clip = read_wav(input).stage("load")?;
        let stems = separate_song(&clip, &estimators, mode, &spec).stage("separate")?;
        ensure_dir(dir)?;
        for (stem, audio) in &stems {
            write_wav(dir.join(format!("{stem}.wav")), audio, WavFormat::Float32).stage("write")?;
        }
    }
    write_run_meta(
        &args.out,
        "separate",
        None,
        &serde_json::json!({
            "models": args.models,
            "mode": mode,
            "input": args.input,
            "manifest": args.manifest,
            "part": part,
            "segment": spec,
        }),
    )?;
    println!("separated {} song(s) into {}", jobs.len(), args.out.display());
    Ok(())
}
