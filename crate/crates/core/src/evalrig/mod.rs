//! Three-camera evaluation rig, scoring and aggregation.

pub mod aggregate;
pub mod metrics;
pub mod record;
pub mod rig;

pub use aggregate::{mean_std, pool_distribution, summarize, table_csv, top_fifth, PoolRow, ScoreRow, StrengthRow, Summary, SupportRow};
pub use metrics::{camera_score, robustness_score, strength_class, ScoreMode, Strength, MATCH_IOU, SUCCESS_THRESHOLD};
pub use record::{
    append_records_csv, append_records_jsonl, read_records_csv, read_records_jsonl, records_to_csv, write_records_csv,
    EvalRecord, RECORD_SCHEMA_VERSION,
};
pub use rig::*;
