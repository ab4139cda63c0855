//! Quantization-dimension toolkit for dyadic measures: cube mass tables,
//! partition-function spectra at arbitrary real order (negative and zero
//! included), greedy and exhaustive optimal partitions, and codebook
//! optimization with error-law fits.

pub mod density;
pub mod dyadic;
pub mod exec;
pub mod numerics;
pub mod oracle;
pub mod partition;
pub mod quad;
pub mod quantize;
pub mod verify;
pub mod spectra;
pub mod types;

pub use density::{
    example_density, registry_names, Density1d, PiecewiseConst, RegisteredDensity, SnormOutcome,
};
pub use dyadic::{build_measure, dim_infty_estimate, DimInftyEstimate, DyadicMeasure, Level};
pub use exec::ExecMode;
pub use oracle::{cascade_beta, phi_zero_reference, uniform_midpoint_error};
pub use partition::{
    coarse_counts, exhaustive_gamma, greedy_partition, optimized_coarse_dimension,
    partition_entropy, CascadeCoarseTable, CascadeEnvelope, CoarseCounts,
    OptimizedCoarse, Partition, PartitionCube, PartitionEntropy,
};
pub use quantize::{
    distortion, error_curve, lebesgue_bound_check, lebesgue_constant, mixture_bounds_check,
    optimize_codebook, Distortion, ErrorCurve, ErrorPoint, LebesgueCheck, MixtureReport,
    OptimizeOpts, Quantizer, Strategy, Target,
};
pub use spectra::{
    beta_n, boundary_limit, critical_q, d_zero, j_value, pf_regularity_report, qr_bounds, renyi,
    tau_n, tau_n_from, BoundaryLimit, CriticalQ, MomentTable, PfRegularityReport, TauValue,
};
pub use types::{
    CubeIndex, MeasureKind, MeasureSpec, Norm, QdimError, RunConfig, ARTIFACT_VERSION, SLOPE_RULE,
    TAIL_RULE,
};
pub use verify::{criterion_ids, run_criterion, run_suite, CriterionReport};
