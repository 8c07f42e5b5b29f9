//! The expectation-over-transformation distribution: color filters,
//! 2D affine placement and the configuration power sets.

pub mod affine;
pub mod config;
pub mod filters;

pub use affine::{apply_affine, sample_affine, AffineKind, AffineParams, AffinePlacement, AffineRanges};
pub use config::{enumerate_configs, sample_chain, AffineOp, Method, TransformConfig};
pub use filters::{
    apply_chain, apply_filter, ChainTape, FilterKind, FilterRanges, FilterTape, SampledFilter,
};
