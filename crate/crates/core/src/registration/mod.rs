//! Scan filtering, normal estimation, structural complexity and ICP.

mod icp;
mod index;
mod mad;
mod scan;

pub use icp::{icp, procrustes, IcpMode, IcpParams, RegistrationResult};
pub(crate) use index::GridIndex;
pub use mad::{mad_covariance, median};
pub use scan::{
    estimate_normals, estimate_reliable_normals, normal_pca, structural_complexity, voxel_filter, NormalPca, Scan, ScanFrame,
};
