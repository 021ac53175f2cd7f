//! Distance-map estimation geometry for fisheye cameras.
//!
//! The pipeline stages are:
//!
//! 1. **camera** — unified (Mei) omnidirectional projection/unprojection with
//!    iterative distortion and mirror inversion.
//! 2. **raytable** — per-pixel unit-ray cache so the iterative solvers run
//!    once per camera.
//! 3. **pose** — real-scale SE(3) transforms from odometry files.
//! 4. **warp** — distance + pose view synthesis and the photometric loss.
//! 5. **head** — multi-channel attention output head (forward math).
//! 6. **estimator** — direct photometric distance optimizer (hypothesis
//!    sweep + golden-section refinement).
//! 7. **synth** — analytic fisheye renderer producing exact ground truth.
//! 8. **metrics** — standard depth-evaluation metrics.
//! 9. **io** — dataset layout, rasters on disk, config, CLI plumbing.
//!
//! The geometry core is generic over the floating-point scalar through
//! [`scalar::Scalar`]; the concrete pipeline instantiates it at `f64` with
//! `f32` pixel buffers (see the aliases below).

pub mod camera;
pub mod cli;
pub mod estimator;
pub mod grid;
pub mod head;
pub mod io;
pub mod metrics;
pub mod pose;
pub mod raytable;
pub mod scalar;
pub mod synth;
pub mod warp;

pub use camera::{MeiIntrinsics, NormalizedPlanePoint, PixelCoord, UnitDirection};
pub use estimator::{EstimateConfig, EstimateOutput, HypothesisSet, SourceView};
pub use grid::{DistanceMap, Grid, ImageGrid, ValidityMask};
pub use head::{ConvWeights, FeatureMap, OutputScale};
pub use metrics::{ClampRange, MetricReport, MetricsConfig};
pub use pose::{RigidTransform, Trajectory};
pub use raytable::RayTable;
pub use scalar::Scalar;
pub use synth::SceneSpec;

/// Scalar used by the concrete pipeline math.
pub type Real = f64;
/// Scalar used by pixel buffers (images, stored distance maps).
pub type PixelScalar = f32;

/// Pipeline-precision intrinsics.
pub type Intrinsics = MeiIntrinsics<Real>;
/// Pipeline-precision rigid transform.
pub type Transform = RigidTransform<Real>;
/// Pipeline-precision trajectory.
pub type CameraTrajectory = Trajectory<Real>;
/// Stored distance map.
pub type StoredDistanceMap = DistanceMap<PixelScalar>;
