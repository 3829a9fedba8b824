//! Point-cloud upsampling with per-point anisotropic Gaussians.
//!
//! A sparse cloud is turned into one Gaussian per point (from local
//! neighbourhood statistics or by gradient descent against a dense
//! target), each Gaussian is sampled, the union is thinned with farthest
//! point sampling and then pulled back onto the local surface.

pub mod cloud;
pub mod config;
pub mod error;
pub mod fitting;
pub mod gaussian;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod neighbors;
pub mod pipeline;
pub mod refinement;
pub mod rng;
pub mod sampling;
pub mod shapes;

pub use cloud::{denormalize, normalize_to_unit_sphere, NormalizationTransform, Point3, PointCloud, Vec3};
pub use config::{AlignmentForm, Backend, NormalSource, UpsampleConfig};
pub use error::{Error, Result};
pub use fitting::{fit, fit_analytic, fit_optimized, FitResult};
pub use gaussian::{AnisotropicGaussian, ScaleTriple, UnitQuaternion};
pub use mesh::TriangleMesh;
pub use metrics::{chamfer, hausdorff, p2f, MetricReport};
pub use pipeline::{upsample, UpsampleOutput};
pub use refinement::{refine, RefineConfig};
pub use sampling::{sample_gaussians, CoarseCloud};
