//! Skeleton kinematics, Gaussian skinning, surface binding and template fitting.

pub mod bind;
pub mod fit;
pub mod puppet;
pub mod skeleton;
pub mod skinning;

pub use bind::{bind_points_to_surface, closest_point_on_triangle, SurfaceHit, TriangleGrid};
pub use fit::{fit_template, FitOptions, FitResult};
pub use puppet::{SkinnedTemplate, HEAD_JOINT, NECK_JOINT, SHAPE_DIM};
pub use skeleton::{forward_kinematics, skinning_transforms, Joint, Pose, RigidTransform, Skeleton};
pub use skinning::{
    blend_transforms, skin_backward, skin_gaussians, skin_points, skin_with_blends, BlendedTransform, SkinWeights,
};

use crate::gaussian::GaussianSet;

/// Skinning weights for every primitive of `set`, bound to the template's
/// canonical (β = 0) surface.
pub fn bind_gaussians_to_surface(set: &GaussianSet, template: &SkinnedTemplate) -> SkinWeights {
    let means: Vec<_> = set.primitives.iter().map(|g| g.mean).collect();
    bind_points_to_surface(&means, &template.vertices, &template.faces, &template.weights)
}
