//! Track manifests, artist-disjoint splitting, genre rebalancing and the
//! segment selection policy used to turn songs into training samples.

mod loading;
mod manifest;
mod rebalance;
mod split;

pub use loading::{
    load_training_sample, select_segment_offset, SongSampler, TrackAudio, INTRO_S, OUTRO_S,
};
pub use manifest::{Manifest, Quality, SplitPart, TrackBundle, MANIFEST_VERSION};
pub use rebalance::rebalance_genres;
pub use split::{split_by_artist, SplitFractions};
