use crate::articulation::{Pose, SkinnedTemplate, HEAD_JOINT, NECK_JOINT};
use crate::camera::{CameraModel, Intrinsics, NEAR_PLANE};
use crate::error::{Result, SplatError};

/// Face crop side length as a multiple of the projected head-to-neck distance.
pub const FACE_CROP_FACTOR: f64 = 2.5;

/// Crop-and-resize of an image plane: the source window with top-left corner
/// `(x, y)` is scaled by `scale` into a `width × height` output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

impl CropSpec {
    /// Source-pixel coordinates → output-pixel coordinates.
    pub fn map_point(&self, u: f64, v: f64) -> (f64, f64) {
        (self.scale * (u - self.x), self.scale * (v - self.y))
    }

    /// Source window extent `(width, height)` in source pixels.
    pub fn source_extent(&self) -> (f64, f64) {
        (self.width as f64 / self.scale, self.height as f64 / self.scale)
    }

    /// Applying `self` and then `inner` (given in the coordinates of `self`'s
    /// output) as one crop.
    pub fn then(&self, inner: &CropSpec) -> CropSpec {
        CropSpec {
            x: self.x + inner.x / self.scale,
            y: self.y + inner.y / self.scale,
            scale: self.scale * inner.scale,
            width: inner.width,
            height: inner.height,
        }
    }
}

/// Intrinsics after cropping: `(s·fx, s·fy, s·(cx − x_c), s·(cy − y_c))`.
pub fn crop_intrinsics(k: &Intrinsics, crop: &CropSpec) -> Intrinsics {
    let s = crop.scale;
    Intrinsics {
        fx: s * k.fx,
        fy: s * k.fy,
        cx: s * (k.cx - crop.x),
        cy: s * (k.cy - crop.y),
    }
}

/// Camera that renders the crop window directly.
pub fn crop_camera(camera: &CameraModel, crop: &CropSpec) -> CameraModel {
    camera.with_intrinsics(crop_intrinsics(&camera.intrinsics, crop), crop.width, crop.height)
}

/// Square crop centered on the projected head joint with side
/// [`FACE_CROP_FACTOR`] × the projected head-to-neck distance, shifted to lie
/// inside the image (and shrunk if it cannot fit).
pub fn compute_face_crop(
    template: &SkinnedTemplate,
    beta: &[f64],
    pose: &Pose,
    camera: &CameraModel,
    output_size: usize,
) -> Result<CropSpec> {
    if output_size == 0 {
        return Err(SplatError::Invalid("crop output size must be positive".into()));
    }
    let joints = template.posed_joints(beta, pose);
    let head_c = camera.to_camera(&joints[HEAD_JOINT]);
    if head_c.z <= NEAR_PLANE {
        return Err(SplatError::HeadBehindCamera(head_c.z));
    }
    let head = camera.project_camera_point(&head_c);
    let neck_c = camera.to_camera(&joints[NECK_JOINT]);
    // a neck behind the camera projects meaningfully only through its head-side ray
    let neck = if neck_c.z > NEAR_PLANE { camera.project_camera_point(&neck_c) } else { head };
    let (w, h) = (camera.width as f64, camera.height as f64);
    let side = (FACE_CROP_FACTOR * (head - neck).norm()).max(1.0).min(w.min(h));
    let x = (head.x - side / 2.0).clamp(0.0, w - side);
    let y = (head.y - side / 2.0).clamp(0.0, h - side);
    Ok(CropSpec {
        x,
        y,
        scale: output_size as f64 / side,
        width: output_size,
        height: output_size,
    })
}
