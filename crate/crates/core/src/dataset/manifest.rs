use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::StemName;

pub const MANIFEST_VERSION: u32 = 1;

/// Whether the stems are separately recorded or estimated from the mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    SeparatedRecordings,
    Estimates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Val, SplitPart::Test];
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" | "validation" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            _ => Err(Error::InvalidInput(format!("unknown split part {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackBundle {
    pub id: String,
    pub artist: String,
    pub genre: String,
    pub duration_s: f64,
    pub mixture: PathBuf,
    pub stems: BTreeMap<StemName, PathBuf>,
    pub quality: Quality,
}

impl TrackBundle {
    /// True when `stem` is stored or can be synthesized from the other stems.
    pub fn provides(&self, stem: StemName) -> bool {
        self.stems.contains_key(&stem)
            || (stem == StemName::Instrumental
                && StemName::ACCOMPANIMENT.iter().all(|s| self.stems.contains_key(s)))
    }
}

/// A versioned JSON dataset description. Paths are held absolute in memory;
/// relative paths in the file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<TrackBundle>,
    #[serde(default)]
    pub split: BTreeMap<String, SplitPart>,
    #[serde(default)]
    pub genre_distribution: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(entries: Vec<TrackBundle>) -> Self {
        let mut manifest = Manifest {
            version: MANIFEST_VERSION,
            entries,
            split: BTreeMap::new(),
            genre_distribution: BTreeMap::new(),
        };
        manifest.normalize();
        manifest
    }

    /// Lowercases genres and recomputes the genre distribution.
    pub fn normalize(&mut self) {
        for entry in &mut self.entries {
            entry.genre = entry.genre.trim().to_lowercase();
        }
        self.genre_distribution = self.realized_genre_distribution();
    }

    pub fn genre_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for entry in &self.entries {
            *counts.entry(entry.genre.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn realized_genre_distribution(&self) -> BTreeMap<String, f64> {
        let n = self.entries.len() as f64;
        self.genre_counts()
            .into_iter()
            .map(|(g, c)| (g, c as f64 / n))
            .collect()
    }

    pub fn entries_in(&self, part: SplitPart) -> impl Iterator<Item = &TrackBundle> {
        self.entries
            .iter()
            .filter(move |e| self.split.get(&e.id) == Some(&part))
    }

    pub fn entry(&self, id: &str) -> Option<&TrackBundle> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut manifest: Manifest = serde_json::from_str(text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        for entry in &mut manifest.entries {
            if entry.stems.is_empty() {
                return Err(Error::InvalidInput(format!("track {:?} has no stems", entry.id)));
            }
            entry.mixture = base_dir.join(&entry.mixture);
            for path in entry.stems.values_mut() {
                *path = base_dir.join(&*path);
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = manifest.entries.iter().find(|e| !seen.insert(e.id.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate track id {:?}", dup.id)));
        }
        manifest.normalize();
        Ok(manifest)
    }

    /// Reads a manifest and checks that every referenced audio file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = Self::from_json(&text, base)?;
        manifest.verify_files()?;
        Ok(manifest)
    }

    pub fn verify_files(&self) -> Result<()> {
        for entry in &self.entries {
            for path in std::iter::once(&entry.mixture).chain(entry.stems.values()) {
                if !path.is_file() {
                    return Err(Error::io(
                        path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// JSON text with paths under `base_dir` written relative to it.
    pub fn to_json(&self, base_dir: &Path) -> Result<String> {
        let mut out = self.clone();
        let abs_base = std::path::absolute(base_dir).ok();
        let rel = |p: &mut PathBuf| {
            if let Ok(stripped) = p.strip_prefix(base_dir) {
                *p = stripped.to_path_buf();
            } else if let (Some(base), Ok(abs)) = (&abs_base, std::path::absolute(&*p)) {
                if let Ok(stripped) = abs.strip_prefix(base) {
                    *p = stripped.to_path_buf();
                }
            }
        };
        for entry in &mut out.entries {
            rel(&mut entry.mixture);
            entry.stems.values_mut().for_each(rel);
        }
        Ok(serde_json::to_string_pretty(&out)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let abs_base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        std::fs::write(path, self.to_json(&abs_base)?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "version": 1,
        "entries": [{
            "id": "t1", "artist": "A", "genre": " Pop ", "duration_s": 200.0,
            "mixture": "audio/t1.wav",
            "stems": {"vocals": "audio/t1.vocals.wav", "drums": "audio/t1.d.wav",
                      "bass": "audio/t1.b.wav", "other": "audio/t1.o.wav"},
            "quality": "separated-recordings"
        }],
        "split": {"t1": "train"}
    }"#;

    #[test]
    fn parses_and_resolves_relative_paths() {
        let m = Manifest::from_json(SAMPLE, Path::new("/data/set")).unwrap();
        let e = &m.entries[0];
        assert_eq!(e.genre, "pop");
        assert_eq!(e.mixture, PathBuf::from("/data/set/audio/t1.wav"));
        assert!(e.provides(StemName::Instrumental));
        assert!(!e.stems.contains_key(&StemName::Instrumental));
        assert_eq!(m.genre_distribution["pop"], 1.0);
        assert_eq!(m.entries_in(SplitPart::Train).count(), 1);
    }

    #[test]
    fn serializes_back_to_relative_paths() {
        let m = Manifest::from_json(SAMPLE, Path::new("/data/set")).unwrap();
        let text = m.to_json(Path::new("/data/set")).unwrap();
        assert!(text.contains("\"audio/t1.wav\""));
        let again = Manifest::from_json(&text, Path::new("/data/set")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn cwd_relative_paths_are_rebased() {
        let m = Manifest::from_json(SAMPLE, Path::new("some/dir")).unwrap();
        let text = m.to_json(&std::path::absolute("some/dir").unwrap()).unwrap();
        assert!(text.contains("\"audio/t1.wav\""));
    }

    #[test]
    fn missing_files_fail_verification() {
        let m = Manifest::from_json(SAMPLE, Path::new("/nonexistent")).unwrap();
        assert!(matches!(m.verify_files(), Err(Error::Io { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        let text = SAMPLE.replace("\"version\": 1", "\"version\": 9");
        assert!(Manifest::from_json(&text, Path::new(".")).is_err());
    }
}
