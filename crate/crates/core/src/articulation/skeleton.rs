//! Joint hierarchy, poses and forward kinematics.

use crate::error::{Result, SplatError};
use crate::math::{self, Mat3, Vec3};

/// Rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest position relative to the parent joint (absolute for the root).
    /// Rest orientations are the identity.
    pub offset: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

impl Skeleton {
    /// Builds a skeleton from absolute rest positions.
    pub fn from_rest_positions(names: &[&str], parents: &[Option<usize>], positions: &[Vec3]) -> Result<Self> {
        if names.len() != parents.len() || names.len() != positions.len() {
            return Err(SplatError::Dimension("joint names, parents and positions differ in length".into()));
        }
        let joints = (0..names.len())
            .map(|j| Joint {
                name: names[j].to_string(),
                parent: parents[j],
                offset: match parents[j] {
                    Some(p) => positions[j] - positions[p],
                    None => positions[j],
                },
            })
            .collect();
        let s = Skeleton { joints };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(SplatError::Empty("skeleton has no joints".into()));
        }
        for (j, joint) in self.joints.iter().enumerate() {
            match (j, joint.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(SplatError::Invalid("joint 0 must be the root".into())),
                (_, None) => return Err(SplatError::Invalid(format!("joint {j} has no parent"))),
                (_, Some(p)) if p >= j => {
                    return Err(SplatError::Invalid(format!("joint {j} has parent {p}; parents must precede children")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Absolute rest positions.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.len());
        for joint in &self.joints {
            let p = match joint.parent {
                Some(p) => out[p] + joint.offset,
                None => joint.offset,
            };
            out.push(p);
        }
        out
    }

    /// True if `j` equals `ancestor` or lies in its subtree.
    pub fn is_descendant(&self, mut j: usize, ancestor: usize) -> bool {
        loop {
            if j == ancestor {
                return true;
            }
            match self.joints[j].parent {
                Some(p) => j = p,
                None => return false,
            }
        }
    }
}

/// Per-joint axis-angle rotations plus a root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotations: Vec<Vec3>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self {
            rotations: vec![Vec3::zeros(); joints],
            translation: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().chain(self.rotations.iter().flat_map(|r| r.iter())).all(|v| v.is_finite())
    }

    /// Wraps every rotation to magnitude at most π.
    pub fn wrapped(&self) -> Self {
        Self {
            rotations: self.rotations.iter().map(math::wrap_axis_angle).collect(),
            translation: self.translation,
        }
    }
}

/// World transform of every joint frame: `G_j = G_parent · [R(θ_j) | offset_j]`,
/// with the root offset additionally shifted by the pose translation.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Vec<RigidTransform> {
    assert_eq!(skeleton.len(), pose.rotations.len(), "pose and skeleton joint counts differ");
    let mut world: Vec<RigidTransform> = Vec::with_capacity(skeleton.len());
    for (j, joint) in skeleton.joints.iter().enumerate() {
        let local = RigidTransform {
            rotation: math::rodrigues(&pose.rotations[j]),
            translation: match joint.parent {
                Some(_) => joint.offset,
                None => joint.offset + pose.translation,
            },
        };
        let g = match joint.parent {
            Some(p) => world[p].compose(&local),
            None => local,
        };
        world.push(g);
    }
    world
}

/// Skinning transforms `A_j = G_j · (G_j^rest)⁻¹` mapping rest-pose points to
/// posed points for each joint.
pub fn skinning_transforms(skeleton: &Skeleton, pose: &Pose) -> Vec<RigidTransform> {
    let rest = skeleton.rest_positions();
    forward_kinematics(skeleton, pose)
        .iter()
        .zip(&rest)
        .map(|(g, r)| RigidTransform {
            rotation: g.rotation,
            translation: g.translation - g.rotation * r,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Skeleton {
        Skeleton::from_rest_positions(
            &["a", "b", "c"],
            &[None, Some(0), Some(1)],
            &[Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.5), Vec3::new(0.3, 0.0, 1.8)],
        )
        .unwrap()
    }

    #[test]
    fn identity_pose_gives_rest_frames() {
        let s = chain();
        let g = forward_kinematics(&s, &Pose::identity(3));
        for (t, r) in g.iter().zip(s.rest_positions()) {
            assert_eq!(t.rotation, Mat3::identity());
            assert_eq!(t.translation, r);
        }
        for a in skinning_transforms(&s, &Pose::identity(3)) {
            assert_eq!(a, RigidTransform::identity());
        }
    }

    #[test]
    fn parents_must_precede_children() {
        let bad = Skeleton {
            joints: vec![
                Joint {
                    name: "r".into(),
                    parent: None,
                    offset: Vec3::zeros(),
                },
                Joint {
                    name: "x".into(),
                    parent: Some(1),
                    offset: Vec3::zeros(),
                },
            ],
        };
        assert!(bad.validate().is_err());
    }
}
