//! Differentiable Gaussian splatting for articulated, face-aware avatars.

pub mod articulation;
pub mod camera;
pub mod checkpoint;
pub mod deformer;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod math;
pub mod posmap;
pub mod raster;
pub mod sh;
pub mod trainer;

pub use camera::{CameraModel, Intrinsics, ProjectionMode};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use error::{Result, SplatError};
pub use gaussian::{build_covariance, eval_density, GaussianPrimitive, GaussianSet, PrimitiveGrad, SourceTag};
pub use image::Image;
pub use raster::{project_gaussian, rasterize, rasterize_backward, ProjectedGaussian, RenderOutput};
pub use sh::eval_color;
