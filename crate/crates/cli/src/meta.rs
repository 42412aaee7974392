use std::path::Path;

use serde::Serialize;

use crate::failure::{CmdResult, Stage};

/// Contents of `run.json`. Holds no timestamps or host details so that
/// repeated runs write identical files.
#[derive(Serialize)]
struct RunMeta<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config: &'a C,
}

pub fn write_run_meta<C: Serialize>(out: &Path, command: &str, seed: Option<u64>, config: &C) -> CmdResult {
    let meta = RunMeta {
        tool: "voxsep",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
    };
    let text = serde_json::to_string_pretty(&meta).stage("write")? + "\n";
    std::fs::write(out.join("run.json"), text).stage("write")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).stage("write")? + "\n";
    std::fs::write(path, text).stage("write")
}

pub fn ensure_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).stage("write")
}
