//! Attribution maps from a trained classifier.

mod gradcam;
mod iba;
mod map;

pub use gradcam::{gradcam, gradcam_batch};
pub use iba::{
    iba, iba_detailed, iba_fit_statistics, FeatureStats, IbaOutcome, IbaParams, DEFAULT_MIN_CALIBRATION, STD_FLOOR,
};
pub use map::{min_max, AttributionMap, Method};
