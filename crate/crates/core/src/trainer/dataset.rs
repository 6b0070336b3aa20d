//! Multi-view image sequences of an articulated subject.

use crate::articulation::Pose;
use crate::camera::CameraModel;
use crate::error::{Result, SplatError};
use crate::image::Image;
use crate::posmap::CropSpec;

/// Ground truth of one (frame, camera) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// RGB in [0, 1].
    pub image: Image,
    /// Foreground mask in [0, 1], one channel.
    pub mask: Image,
    /// Head crop of this frame in this camera.
    pub crop: CropSpec,
    /// Head region rendered at crop resolution through the crop camera.
    pub crop_image: Image,
    pub crop_mask: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Template shape of the subject.
    pub beta: Vec<f64>,
    pub poses: Vec<Pose>,
    pub cameras: Vec<CameraModel>,
    pub train_views: Vec<usize>,
    pub heldout_views: Vec<usize>,
    /// Frame-major: `frame * cameras.len() + camera`.
    pub samples: Vec<Sample>,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn sample(&self, frame: usize, view: usize) -> &Sample {
        &self.samples[frame * self.cameras.len() + view]
    }

    /// Checks every item and reports all problems at once.
    pub fn validate(&self, joints: usize, shape_dim: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.beta.len() != shape_dim {
            problems.push(format!("{} shape parameters, template has {shape_dim}", self.beta.len()));
        }
        if self.poses.is_empty() {
            problems.push("no frames".to_string());
        }
        if self.cameras.is_empty() {
            problems.push("no cameras".to_string());
        }
        for (f, p) in self.poses.iter().enumerate() {
            if p.rotations.len() != joints {
                problems.push(format!("frame {f}: pose has {} joints, template has {joints}", p.rotations.len()));
            }
            if !p.is_finite() {
                problems.push(format!("frame {f}: pose is not finite"));
            }
        }
        for (c, cam) in self.cameras.iter().enumerate() {
            if let Err(e) = cam.validate() {
                problems.push(format!("camera {c}: {e}"));
            }
        }
        if self.train_views.is_empty() {
            problems.push("no training views".to_string());
        }
        for &v in self.train_views.iter().chain(&self.heldout_views) {
            if v >= self.cameras.len() {
                problems.push(format!("view {v} does not exist ({} cameras)", self.cameras.len()));
            }
        }
        for v in &self.heldout_views {
            if self.train_views.contains(v) {
                problems.push(format!("view {v} is both a training and a held-out view"));
            }
        }
        let expected = self.poses.len() * self.cameras.len();
        if self.samples.len() != expected {
            problems.push(format!("{} samples for {expected} (frame, camera) pairs", self.samples.len()));
        } else {
            for (i, s) in self.samples.iter().enumerate() {
                let (f, c) = (i / self.cameras.len(), i % self.cameras.len());
                let cam = &self.cameras[c];
                let at = format!("frame {f} camera {c}");
                if (s.image.width, s.image.height, s.image.channels) != (cam.width, cam.height, 3) {
                    problems.push(format!(
                        "{at}: image is {}×{}×{}, camera is {}×{}",
                        s.image.width, s.image.height, s.image.channels, cam.width, cam.height
                    ));
                }
                if (s.mask.width, s.mask.height, s.mask.channels) != (cam.width, cam.height, 1) {
                    problems.push(format!("{at}: mask missing or does not match the image"));
                }
                if (s.crop_image.width, s.crop_image.height, s.crop_image.channels) != (s.crop.width, s.crop.height, 3)
                {
                    problems.push(format!("{at}: crop image does not match its crop"));
                }
                if (s.crop_mask.width, s.crop_mask.height, s.crop_mask.channels) != (s.crop.width, s.crop.height, 1) {
                    problems.push(format!("{at}: crop mask does not match its crop"));
                }
                let (ew, eh) = s.crop.source_extent();
                if !(s.crop.scale > 0.0)
                    || s.crop.x < 0.0
                    || s.crop.y < 0.0
                    || s.crop.x + ew > cam.width as f64 + 1e-9
                    || s.crop.y + eh > cam.height as f64 + 1e-9
                {
                    problems.push(format!("{at}: head crop lies outside the image"));
                }
                let in_range = |img: &Image| img.data.iter().all(|v| (0.0..=1.0).contains(v));
                if !in_range(&s.image) || !in_range(&s.mask) || !in_range(&s.crop_image) || !in_range(&s.crop_mask) {
                    problems.push(format!("{at}: values outside [0, 1]"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SplatError::Dataset(format!(
                "{} problem(s):\n  {}",
                problems.len(),
                problems.join("\n  ")
            )))
        }
    }
}
