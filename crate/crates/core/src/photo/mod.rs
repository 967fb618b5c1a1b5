//! Two-view photometric depth + pose estimation: SE(3) motion, inverse-depth
//! geometry, warping, photometric residuals with structured Jacobians, and
//! synthetic scene generation.

pub mod camera;
pub mod pgm;
pub mod residual;
pub mod scene;
pub mod se3;
pub mod solve;

pub use camera::{bilinear_sample, project, CameraIntrinsics, Image, Sample, Warp, D_MIN, Z_MIN};
pub use residual::{
    photometric_jacobian, photometric_residuals, InverseDepthMap, NormalBlocks, StereoInstance,
    StereoProblem, StructuredJacobian,
};
pub use scene::{synth_scene, textureless_instance, SceneConfig, SceneKind};
pub use se3::{
    rotation_error, se3_exp, translation_direction_error, PosePointJacobian, Se3Pose, Transform,
};
pub use solve::{
    photometric_rmse, solve_stereo, time_classical_iteration, StereoMethod, StereoSolution,
};
