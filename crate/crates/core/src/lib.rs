//! Camera pose refinement by rendering a 3D Gaussian scene and comparing the
//! render against a query image.
//!
//! The pipeline is split into small modules:
//!
//! * [`pose`]: quaternion pose algebra, lattice neighbors, noise injection and error metrics.
//! * [`scene`]: Gaussian primitives, PLY and JSON loading, synthetic scene generation.
//! * [`render`]: a CPU splat rasterizer.
//! * [`metrics`]: SAD, PSNR and SSIM image comparison.
//! * [`search`]: multi-level best-first search over the pose lattice.
//! * [`harness`]: experiment configs, reports and comparison images.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod pose;
pub mod render;
pub mod scene;
pub mod search;

pub use error::{Error, Result};
pub use metrics::HeuristicKind;
pub use pose::{Pose, PoseError, StepLevel, StepSchedule};
pub use render::{render, render_with, Camera, ImageBuffer, OpacityMode, RenderOptions};
pub use scene::{GaussianPrimitive, Scene, SyntheticSpec};
pub use search::{refine, refine_with, RefinementResult, SearchOptions, Termination, Threshold};
