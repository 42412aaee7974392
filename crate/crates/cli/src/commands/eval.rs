use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use voxsep::dataset::TrackAudio;
use voxsep::evaluation::{
    compare_methods, evaluate_songs, read_metric_rows, records_to_rows, significance_table, write_metric_rows,
    write_pvalue_csv, EvalConfig, MetricRow, SongEval,
};
use voxsep::separation::{as_estimators, separate_song};
use voxsep::{read_wav, AudioClip, StemName};

use super::{jobs, load_manifest, load_models, models_spec, parse_part, tracks_in};
use crate::config::parse_mode;
use crate::failure::{usage, CmdResult, Failure, Stage};
use crate::meta::{ensure_dir, write_run_meta};
use crate::{CompareArgs, EvaluateArgs, ReportArgs};

fn eval_failure(msg: String) -> Failure {
    Failure::Stage { stage: "evaluate", error: anyhow!(msg) }
}

fn song_dirs(dir: &Path) -> CmdResult<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).stage("load")? {
        let entry = entry.stage("load")?;
        if entry.path().is_dir() {
            ids.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(ids)
}

/// Estimates stored as `<dir>/<song>/<stem>.wav`.
fn read_estimates(dir: &Path) -> CmdResult<BTreeMap<StemName, AudioClip>> {
    let mut out = BTreeMap::new();
    for stem in StemName::ALL {
        let path = dir.join(format!("{stem}.wav"));
        if path.is_file() {
            out.insert(stem, read_wav(&path).stage("load")?);
        }
    }
    if out.is_empty() {
        return Err(eval_failure(format!("no stem files in {}", dir.display())));
    }
    Ok(out)
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let jobs = jobs(args.jobs)?;
    let part = parse_part(&args.part)?;
    let mode = parse_mode(&args.mode)?;
    let cfg = EvalConfig { frame_s: args.frame_s, filter_len: args.filter_len };
    if !(cfg.frame_s > 0.0) || cfg.filter_len == 0 {
        return usage("--frame-s and --filter-len must be positive");
    }
    let manifest = load_manifest(&args.manifest)?;
    let tracks = tracks_in(&manifest, part)?;

    if let Some(dir) = &args.estimates {
        let have = song_dirs(dir)?;
        let want: BTreeSet<String> = tracks.iter().map(|t| t.id.clone()).collect();
        let missing: Vec<&String> = want.difference(&have).collect();
        let extra: Vec<&String> = have.difference(&want).collect();
        if !missing.is_empty() || !extra.is_empty() {
            let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
            let mut msg = String::from("song sets differ");
            if !missing.is_empty() {
                msg += &format!("; no estimates for: {}", list(&missing));
            }
            if !extra.is_empty() {
                msg += &format!("; estimates without a reference in the {} part: {}", args.part, list(&extra));
            }
            return Err(eval_failure(msg));
        }
    }
    let models = match &args.models {
        Some(dir) => Some(load_models(dir, mode)?),
        None => None,
    };

    let mut estimates = Vec::with_capacity(tracks.len());
    let mut references = Vec::with_capacity(tracks.len());
    for bundle in &tracks {
        let est = match (&models, &args.estimates) {
            (Some(models), _) => {
                let mixture = read_wav(&bundle.mixture).stage("load")?;
                separate_song(&mixture, &as_estimators(models), mode, &models_spec(models)?).stage("separate")?
            }
            (None, Some(dir)) => read_estimates(&dir.join(&bundle.id))?,
            (None, None) => unreachable!("clap requires --estimates or --models"),
        };
        let rate = est.values().next().expect("non-empty").sample_rate();
        let audio = TrackAudio::load(bundle, rate).stage("load")?;
        let mut refs = BTreeMap::new();
        for &stem in est.keys() {
            let clip = audio.stem(stem).stage("load")?;
            refs.insert(stem, clip);
        }
        for (stem, clip) in &est {
            if clip.len() != refs[stem].len() || clip.num_channels() != refs[stem].num_channels() {
                return Err(eval_failure(format!(
                    "{}/{stem}: estimate has {} x {} samples, reference {} x {}",
                    bundle.id,
                    clip.num_channels(),
                    clip.len(),
                    refs[stem].num_channels(),
                    refs[stem].len()
                )));
            }
        }
        estimates.push(est);
        references.push(refs);
    }
    let songs: Vec<SongEval> = tracks
        .iter()
        .zip(estimates.iter().zip(&references))
        .map(|(t, (e, r))| SongEval { song_id: &t.id, estimates: e, references: r })
        .collect();
    let records = evaluate_songs(&songs, &cfg, jobs).stage("evaluate")?;
    let rows = records_to_rows(&args.method, &records);

    ensure_dir(&args.out)?;
    let file = File::create(args.out.join("metrics.csv")).stage("write")?;
    write_metric_rows(file, &rows).stage("write")?;
    write_run_meta(
        &args.out,
        "evaluate",
        None,
        &serde_json::json!({
            "manifest": args.manifest,
            "part": part,
            "estimates": args.estimates,
            "models": args.models,
            "method": args.method,
            "eval": cfg,
        }),
    )?;
    println!("evaluated {} song(s); metrics in {}", tracks.len(), args.out.join("metrics.csv").display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CompareSettings {
    results: Vec<PathBuf>,
    baseline: String,
    alpha: f64,
}

fn write_report(dir: &Path, rows: &[MetricRow], baseline: &str, alpha: f64) -> CmdResult {
    let table = significance_table(rows, baseline, alpha).stage("report")?;
    std::fs::write(dir.join("report.md"), table.to_markdown()).stage("write")?;
    let file = File::create(dir.join("pvalues.csv")).stage("write")?;
    write_pvalue_csv(file, &table).stage("write")?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn compare(args: CompareArgs) -> CmdResult {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return usage(format!("--alpha must be in (0, 1), got {}", args.alpha));
    }
    let mut rows = Vec::new();
    for path in &args.results {
        let file = File::open(path).map_err(|e| anyhow!("{}: {e}", path.display())).stage("load")?;
        rows.extend(read_metric_rows(file).map_err(|e| anyhow!("{}: {e}", path.display())).stage("load")?);
    }
    if !rows.iter().any(|r| r.method == args.baseline) {
        let methods: BTreeSet<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        return usage(format!(
            "baseline {:?} is not among the methods in the results: {}",
            args.baseline,
            methods.into_iter().collect::<Vec<_>>().join(", ")
        ));
    }
    rows.sort_by(|a, b| {
        (&a.method, &a.song_id, a.source, a.metric).cmp(&(&b.method, &b.song_id, b.source, b.metric))
    });
    ensure_dir(&args.out)?;
    let file = File::create(args.out.join("metrics.csv")).stage("write")?;
    write_metric_rows(file, &rows).stage("write")?;

    let (comparisons, _) = compare_methods(&rows).stage("compare")?;
    let mut w = csv_writer(&args.out.join("comparisons.csv"))?;
    for c in &comparisons {
        w.serialize(c).stage("write")?;
    }
    w.flush().stage("write")?;

    write_report(&args.out, &rows, &args.baseline, args.alpha)?;
    let settings = CompareSettings { results: args.results.clone(), baseline: args.baseline.clone(), alpha: args.alpha };
    write_run_meta(&args.out, "compare", None, &settings)?;
    println!("report in {}", args.out.join("report.md").display());
    Ok(())
}

fn csv_writer(path: &Path) -> CmdResult<csv::Writer<File>> {
    csv::Writer::from_path(path).stage("write")
}

#[derive(Deserialize)]
struct StoredRun {
    command: String,
    config: CompareSettings,
}

pub fn report(args: ReportArgs) -> CmdResult {
    let meta_path = args.from.join("run.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| anyhow!("{}: {e}", meta_path.display()))
        .stage("load")?;
    let run: StoredRun = serde_json::from_str(&text)
        .map_err(|e| anyhow!("{} is not the record of a compare run: {e}", meta_path.display()))
        .stage("load")?;
    if run.command != "compare" {
        return Err(Failure::Stage {
            stage: "load",
            error: anyhow!("{} records a {:?} run, not compare", meta_path.display(), run.command),
        });
    }
    let metrics = args.from.join("metrics.csv");
    let file = File::open(&metrics).map_err(|e| anyhow!("{}: {e}", metrics.display())).stage("load")?;
    let rows = read_metric_rows(file).stage("load")?;
    let out = args.out.unwrap_or_else(|| args.from.clone());
    ensure_dir(&out)?;
    write_report(&out, &rows, &run.config.baseline, run.config.alpha)?;
    println!("report in {}", out.join("report.md").display());
    Ok(())
}
