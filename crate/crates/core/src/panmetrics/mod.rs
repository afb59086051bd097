//! Segmentation and detection metrics: micro Dice, centroid detection F1,
//! panoptic quality and its pooled variant, plus the geometric primitives
//! they share.

mod components;
mod detection;
mod dice;
mod pq;
mod report;

pub use components::{centroids, connected_components, Components};
pub(crate) use components::neighbors8;
pub use detection::{
    detection_f1, detection_f1_with, match_detections, DetectionMatch, MatchedPair, Tally,
    DEFAULT_RADIUS,
};
pub use dice::{micro_dice, micro_dice_with};
pub use pq::{
    micro_pq, micro_pq_with, panoptic_quality, panoptic_quality_with, pq_image_stats, pq_matches,
    PqMatch, PqStats, DEFAULT_IOU_THRESHOLD,
};
pub use report::{
    format_percent, macro_mean, mean_track_score, round_half_up, ClassCounts, MetricReport,
};
