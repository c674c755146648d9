//! Partition-map machinery for fast VVC inter block partitioning.

pub mod config;
pub mod error;
pub mod frame;
pub mod gating;
pub mod map;
pub mod metrics;
pub mod partition;
pub mod pmap_io;
pub mod post;
pub mod pwarp;
pub mod raster_io;
pub mod sample;
pub mod splitlog;

pub use error::{Error, Result};
pub use frame::{layer_accuracy, FramePartition, LayerAccuracy};
pub use gating::{
    classify_ctu, et_ratio, gate_node, simulate_frame, CtuClass, CtuPrediction, GateAction, GatingConfig, GatingReport,
};
pub use map::{
    derive_mtt_mask, map_to_tree_exact, prune_map, tree_to_map, validate_map, Grid, PartitionMap, ValidityReport,
};
pub use metrics::{
    bd_rate, delta_metrics, eta, ets, overhead_rho, robust_mean_time, t_quantile, tukey_filter, RdPoint, TimeBreakdown,
    TimingConfig, TimingResult,
};
pub use partition::{apply_split, legal_splits, CuGeometry, ModeSet, PartitionRules, SplitMode, SplitTree};
pub use post::{brute_force_best_tree, generate_map_tree, reconstruct, select_best_path, PostConfig};
pub use pwarp::{adaptive_flow, pool_flow, pwarp_residual, warp, DepthField, FlowField, LumaRaster, Plane, Residual};
