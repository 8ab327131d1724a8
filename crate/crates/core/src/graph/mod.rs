//! Skeleton graphs, the flexible propagation operator and its spectral
//! stability analysis.

mod propagation;
mod skeleton;
mod spectral;
mod stability;

pub use propagation::{
    init_modulation, symmetrize_modulation, symmetrize_modulation_on, BoundPropagation,
    PropagationOperator,
};
pub use skeleton::{
    normalize_adjacency, normalize_adjacency_matrix, SkeletonGraph, H36M_EDGES, H36M_JOINT_NAMES,
};
pub use spectral::{spectral_radius, PowerIteration, SpectralEstimate};
pub use stability::{
    stability_report, stability_report_for, write_stability_csv, StabilityRow, BOUND_SLACK,
};
