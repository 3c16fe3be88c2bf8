//! Selective state-space scans and the sequence layouts they run over.

pub mod layout;
pub mod recurrence;
pub mod selective;

pub use layout::{
    channel_scan, channel_unscan, cross_merge, cross_merge_2d, cross_scan, cross_scan_2d, reverse_sequence, ScanOrigin,
    ScanSequence,
};
pub use selective::{
    default_dt_rank, discretize, selective_scan, selective_scan_sequential, selective_scan_with, ssm_scan, ScanAlgo,
    SsmLayer, SsmLayerParams, SsmVars,
};
