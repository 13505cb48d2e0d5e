//! Computational core for transformer-based hand mesh recovery.
//!
//! Every numeric type is generic over [`scalar::Real`] (`f32` or `f64`).
//! The aliases below fix the precision for callers that do not care.

pub mod camera;
pub mod dataio;
pub mod fitter;
pub mod hand_model;
pub mod keypoints;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod regressor;
pub mod rotation;
pub mod scalar;

pub type Asset64 = hand_model::HandModelAsset<f64>;
pub type Asset32 = hand_model::HandModelAsset<f32>;
pub type HandState64 = hand_model::HandState<f64>;
pub type HandState32 = hand_model::HandState<f32>;
pub type Camera64 = camera::CameraState<f64>;
pub type Camera32 = camera::CameraState<f32>;
pub type Intrinsics64 = camera::CameraIntrinsics<f64>;
pub type Intrinsics32 = camera::CameraIntrinsics<f32>;
pub type GroundTruth64 = losses::GroundTruthSample<f64>;
pub type GroundTruth32 = losses::GroundTruthSample<f32>;
pub type Bank64 = losses::DiscriminatorBank<f64>;
pub type Bank32 = losses::DiscriminatorBank<f32>;
pub type Regressor64 = regressor::Regressor<f64>;
pub type Regressor32 = regressor::Regressor<f32>;
