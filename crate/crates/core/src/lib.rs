//! Reconstruction of geodesic distances from noisy, partially observed
//! pairwise distances, with local chart refinement and oracle-based checks.

pub mod analysis;
pub mod chart_refine;
pub mod error;
pub mod metric_models;
pub mod net_estimators;
pub mod observation;
pub mod rng;

pub use chart_refine::{refine, CoarseNet, RefineConfig, RefinedPoint, Refinement, RefinementScales};
pub use error::{Error, Result};
pub use metric_models::{model_bounds, sample_points, DensitySpec, GeometryBounds, ManifoldModel, SampleSet};
pub use net_estimators::{
    derive_parameters, derive_parameters_with, run_pipeline, sample_sizes, CutoffFns, DappTable, EstimatorTable,
    GatePolicy, NetSplit, ParameterLedger, SizeConstants,
};
pub use observation::{beta_of, generate_observations, MaskProfile, MaskSpec, NoiseSpec, ObservedDistances};
