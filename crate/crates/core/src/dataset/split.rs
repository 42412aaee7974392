use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Manifest, SplitPart};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, val, test };
        let parts = [train, val, test];
        if parts.iter().any(|&x| !(x >= 0.0)) || ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "split fractions must be nonnegative and sum to 1, got {parts:?}"
            )));
        }
        Ok(f)
    }

    pub fn get(&self, part: SplitPart) -> f64 {
        match part {
            SplitPart::Train => self.train,
            SplitPart::Val => self.val,
            SplitPart::Test => self.test,
        }
    }
}

/// Assigns whole artists to train/val/test so that no artist appears in two
/// parts. Every part with a nonzero fraction receives at least one artist;
/// the remaining artists go, largest first, to whichever part is furthest
/// below its target track count.
pub fn split_by_artist(manifest: &Manifest, fractions: SplitFractions, seed: u64) -> Result<Manifest> {
    let fractions = SplitFractions::new(fractions.train, fractions.val, fractions.test)?;
    let mut by_artist: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for entry in &manifest.entries {
        by_artist.entry(&entry.artist).or_default().push(&entry.id);
    }
    let parts: Vec<SplitPart> = SplitPart::ALL
        .into_iter()
        .filter(|&p| fractions.get(p) > 0.0)
        .collect();
    if by_artist.len() < parts.len() {
        return Err(Error::InfeasibleSplit {
            artists: by_artist.len(),
            parts: parts.len(),
        });
    }

    let mut artists: Vec<(&str, Vec<&str>)> = by_artist.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    artists.shuffle(&mut rng);
    // stable sort keeps the shuffled order among equally sized artists
    artists.sort_by(|a, b| b.1.len().cmp(&a.1.len()));

    let total = manifest.entries.len() as f64;
    let mut assigned = [0usize; 3];
    let index = |p: SplitPart| p as usize;
    let mut split = BTreeMap::new();
    let mut give = |part: SplitPart, tracks: &[&str], assigned: &mut [usize; 3]| {
        assigned[index(part)] += tracks.len();
        for id in tracks {
            split.insert(id.to_string(), part);
        }
    };

    // The part with the largest share is seeded with the largest artist, the
    // others with the smallest ones, so small parts do not overshoot.
    let mut seeding = parts.clone();
    seeding.sort_by(|&a, &b| fractions.get(b).total_cmp(&fractions.get(a)));
    let mut rest: Vec<&(&str, Vec<&str>)> = artists.iter().collect();
    give(seeding[0], &rest.remove(0).1, &mut assigned);
    for &part in &seeding[1..] {
        let (_, tracks) = rest.pop().expect("checked artist count");
        give(part, tracks, &mut assigned);
    }
    for (_, tracks) in rest {
        let deficit = |p: SplitPart| fractions.get(p) * total - assigned[index(p)] as f64;
        let mut best = parts[0];
        for &p in &parts[1..] {
            if deficit(p) > deficit(best) {
                best = p;
            }
        }
        give(best, tracks, &mut assigned);
    }

    let mut out = manifest.clone();
    out.split = split;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Quality, TrackBundle};
    use crate::sample::StemName;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn manifest(artist_sizes: &[usize]) -> Manifest {
        let mut entries = Vec::new();
        for (a, &n) in artist_sizes.iter().enumerate() {
            for t in 0..n {
                entries.push(TrackBundle {
                    id: format!("a{a}-t{t}"),
                    artist: format!("artist{a}"),
                    genre: "pop".into(),
                    duration_s: 180.0,
                    mixture: "m.wav".into(),
                    stems: [(StemName::Vocals, "v.wav".into())].into(),
                    quality: Quality::SeparatedRecordings,
                });
            }
        }
        Manifest::new(entries)
    }

    fn artists_in(m: &Manifest, part: SplitPart) -> BTreeSet<String> {
        m.entries_in(part).map(|e| e.artist.clone()).collect()
    }

    #[test]
    fn ten_by_ten() {
        let m = manifest(&[10; 10]);
        let out = split_by_artist(&m, SplitFractions::new(0.8, 0.1, 0.1).unwrap(), 7).unwrap();
        assert_eq!(artists_in(&out, SplitPart::Train).len(), 8);
        assert_eq!(artists_in(&out, SplitPart::Val).len(), 1);
        assert_eq!(artists_in(&out, SplitPart::Test).len(), 1);
        assert_eq!(out.split.len(), 100);
    }

    #[test]
    fn single_artist_all_train() {
        let m = manifest(&[5]);
        let out = split_by_artist(&m, SplitFractions::new(1.0, 0.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!(out.entries_in(SplitPart::Train).count(), 5);
    }

    #[test]
    fn too_few_artists() {
        let m = manifest(&[3, 3]);
        let err = split_by_artist(&m, SplitFractions::new(0.4, 0.3, 0.3).unwrap(), 1).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSplit { artists: 2, parts: 3 }));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(SplitFractions::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitFractions::new(1.2, -0.2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn artist_disjoint_and_near_target(
            sizes in prop::collection::vec(1usize..8, 3..40),
            train in 0.5f64..0.9,
            val_share in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let val = (1.0 - train) * val_share;
            let test = 1.0 - train - val;
            let m = manifest(&sizes);
            let f = SplitFractions::new(train, val, test).unwrap();
            let out = split_by_artist(&m, f, seed).unwrap();
            prop_assert_eq!(out.split.len(), m.entries.len());
            let sets: Vec<_> = SplitPart::ALL.iter().map(|&p| artists_in(&out, p)).collect();
            for i in 0..3 {
                for j in i + 1..3 {
                    prop_assert!(sets[i].is_disjoint(&sets[j]));
                }
            }
            let largest = *sizes.iter().max().unwrap() as f64;
            let n = m.entries.len() as f64;
            for p in SplitPart::ALL {
                let got = out.entries_in(p).count() as f64;
                if f.get(p) > 0.0 {
                    prop_assert!(got >= 1.0);
                }
                // with only a handful of artists, the one-artist-per-part
                // rule can force larger deviations
                prop_assert!(sizes.len() < 10 || (got - f.get(p) * n).abs() <= largest + 1e-9,
                    "part {:?}: {} vs target {}", p, got, f.get(p) * n);
            }
            let again = split_by_artist(&m, f, seed).unwrap();
            prop_assert_eq!(again.split, out.split);
        }
    }
}
