use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Manifest;
use crate::error::{Error, Result};

/// Subsamples (never duplicates) tracks so the genre distribution matches
/// `target`, keeping as many tracks as the rarest target genre allows.
///
/// Per-genre counts are apportioned by largest remainder, so each realized
/// fraction is within `1 / retained` of its target. Genres missing from
/// `target` are dropped.
pub fn rebalance_genres(manifest: &Manifest, target: &BTreeMap<String, f64>, seed: u64) -> Result<Manifest> {
    let target: BTreeMap<String, f64> = target
        .iter()
        .map(|(g, &f)| (g.trim().to_lowercase(), f))
        .collect();
    let sum: f64 = target.values().sum();
    if target.values().any(|&f| !(f >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "target fractions must be nonnegative and sum to 1, got sum {sum}"
        )));
    }
    let counts = manifest.genre_counts();
    for (genre, &fraction) in &target {
        if fraction > 0.0 && !counts.contains_key(genre) {
            return Err(Error::MissingGenre(genre.clone()));
        }
    }

    let capacity = target
        .iter()
        .filter(|(_, &f)| f > 0.0)
        .map(|(g, &f)| counts[g] as f64 / f)
        .fold(f64::INFINITY, f64::min);
    let retained = (capacity + 1e-9).floor() as usize;

    // Largest-remainder apportionment of `retained` among the target genres.
    let mut quota: BTreeMap<&str, usize> = BTreeMap::new();
    let mut remainders = Vec::new();
    for (genre, &fraction) in &target {
        let exact = fraction * retained as f64;
        let floor = (exact + 1e-9).floor();
        quota.insert(genre, floor as usize);
        remainders.push((exact - floor, genre.as_str()));
    }
    let mut missing = retained.saturating_sub(quota.values().sum::<usize>());
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    for (_, genre) in remainders {
        if missing == 0 {
            break;
        }
        if quota[genre] < counts.get(genre).copied().unwrap_or(0) {
            *quota.get_mut(genre).unwrap() += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = BTreeSet::new();
    for (genre, &n) in &quota {
        let mut ids: Vec<&str> = manifest
            .entries
            .iter()
            .filter(|e| e.genre == *genre)
            .map(|e| e.id.as_str())
            .collect();
        if n < ids.len() {
            ids.shuffle(&mut rng);
        }
        keep.extend(ids.into_iter().take(n));
    }

    let mut out = manifest.clone();
    out.entries.retain(|e| keep.contains(e.id.as_str()));
    out.split.retain(|id, _| keep.contains(id.as_str()));
    out.normalize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Quality, TrackBundle};
    use crate::sample::StemName;
    use proptest::prelude::*;

    fn manifest(genres: &[(&str, usize)]) -> Manifest {
        let mut entries = Vec::new();
        for (genre, n) in genres {
            for i in 0..*n {
                entries.push(TrackBundle {
                    id: format!("{genre}-{i}"),
                    artist: format!("artist{i}"),
                    genre: genre.to_string(),
                    duration_s: 100.0,
                    mixture: "m.wav".into(),
                    stems: [(StemName::Vocals, "v.wav".into())].into(),
                    quality: Quality::Estimates,
                });
            }
        }
        Manifest::new(entries)
    }

    fn target(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(g, f)| (g.to_string(), *f)).collect()
    }

    #[test]
    fn limiting_genre_sets_the_size() {
        let m = manifest(&[("a", 90), ("b", 10)]);
        let out = rebalance_genres(&m, &target(&[("a", 0.5), ("b", 0.5)]), 3).unwrap();
        assert_eq!(out.genre_counts()["a"], 10);
        assert_eq!(out.genre_counts()["b"], 10);
        assert_eq!(out.entries.len(), 20);
    }

    #[test]
    fn current_distribution_is_identity() {
        let m = manifest(&[("a", 7), ("b", 3), ("c", 11)]);
        let t = m.realized_genre_distribution();
        let out = rebalance_genres(&m, &t, 1).unwrap();
        assert_eq!(out.entries, m.entries);
    }

    #[test]
    fn absent_genre_is_an_error() {
        let m = manifest(&[("a", 5)]);
        let err = rebalance_genres(&m, &target(&[("a", 0.5), ("c", 0.5)]), 1).unwrap_err();
        assert!(matches!(err, Error::MissingGenre(g) if g == "c"));
    }

    proptest! {
        #[test]
        fn realized_within_one_track(
            counts in prop::collection::vec(1usize..60, 1..6),
            weights in prop::collection::vec(0.05f64..1.0, 6),
            seed in any::<u64>(),
        ) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let genres: Vec<(&str, usize)> = names.iter().copied().zip(counts.iter().copied()).collect();
            let m = manifest(&genres);
            let wsum: f64 = weights[..genres.len()].iter().sum();
            let t: BTreeMap<String, f64> = genres
                .iter()
                .zip(&weights)
                .map(|((g, _), w)| (g.to_string(), w / wsum))
                .collect();
            let out = rebalance_genres(&m, &t, seed).unwrap();
            let retained = out.entries.len();
            prop_assume!(retained > 0);
            let realized = out.realized_genre_distribution();
            for (g, f) in &t {
                let r = realized.get(g).copied().unwrap_or(0.0);
                prop_assert!((r - f).abs() <= 1.0 / retained as f64 + 1e-12);
            }
            for (g, c) in out.genre_counts() {
                prop_assert!(c <= m.genre_counts()[&g]);
            }
        }
    }
}
