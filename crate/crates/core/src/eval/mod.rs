//! Full-image inference, confusion counts, metrics and comparison maps.

mod infer;
mod metrics;
mod render;
mod report;

pub use infer::{exact_margin, infer_full, infer_logits, infer_pair, padded_len, reflect_pad, ChangeMap, TileConfig};
pub use metrics::{accumulate, f1_score, ConfusionCounts, Metrics};
pub use render::{render_comparison, FALSE_NEGATIVE, FALSE_POSITIVE, TRUE_NEGATIVE, TRUE_POSITIVE};
pub use report::{evaluate_pairs, evaluate_split, percent_row, ImageReport, SplitReport};
