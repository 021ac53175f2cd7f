//! Real-scale SE(3) rigid transforms and trajectory files.
//!
//! Poses come from upstream sensor-fusion odometry with metric translation;
//! nothing here estimates motion. Rotations are re-orthonormalized on load
//! because text files carry rounding error.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("frame {0} not present in trajectory")]
    MissingFrame(u64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame ids must be strictly increasing (saw {frame_id})")]
    NonIncreasingFrame { line: usize, frame_id: u64 },
    #[error("rotation is not orthonormal (deviation {deviation})")]
    NotOrthonormal { deviation: f64 },
    #[error("cannot read pose file: {0}")]
    Io(String),
}

/// Rigid transform: `p -> R p + t`, translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform<S> {
    pub rotation: Matrix3<S>,
    pub translation: Vector3<S>,
}

impl<S: Scalar> RigidTransform<S> {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<S>, translation: Vector3<S>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<S>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Applies the transform to a point.
    #[inline]
    pub fn apply(&self, point: &Vector3<S>) -> Vector3<S> {
        self.rotation * point + self.translation
    }

    /// Composition: `(a.compose(b))(p) = a(b(p))`.
    pub fn compose(&self, other: &RigidTransform<S>) -> RigidTransform<S> {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform<S> {
        let rotation = self.rotation.transpose();
        RigidTransform {
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    /// Max-norm deviation of `R^T R` from the identity.
    pub fn orthonormality_deviation(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { S::one() } else { S::zero() };
                dev = dev.max((gram[(i, j)] - target).abs().as_f64());
            }
        }
        dev = dev.max((self.rotation.determinant() - S::one()).abs().as_f64());
        dev
    }

    /// Replaces the rotation with its nearest orthonormal matrix (polar
    /// factor via SVD, determinant forced to +1).
    pub fn reorthonormalized(&self) -> Result<RigidTransform<S>, PoseError> {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("svd with u");
        let v_t = svd.v_t.expect("svd with v_t");
        let mut rotation = u * v_t;
        if rotation.determinant() < S::zero() {
            // Flip the singular direction with the smallest singular value.
            let mut flip = Matrix3::identity();
            flip[(2, 2)] = -S::one();
            rotation = u * flip * v_t;
        }
        let fixed = RigidTransform {
            rotation,
            translation: self.translation,
        };
        let deviation = fixed.orthonormality_deviation();
        if deviation > 1e-6 {
            return Err(PoseError::NotOrthonormal { deviation });
        }
        Ok(fixed)
    }
}

/// Ordered world-from-camera poses keyed by frame id.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    entries: Vec<(u64, RigidTransform<S>)>,
    by_frame: HashMap<u64, usize>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(entries: Vec<(u64, RigidTransform<S>)>) -> Result<Self, PoseError> {
        let mut by_frame = HashMap::with_capacity(entries.len());
        let mut last: Option<u64> = None;
        for (i, (frame_id, _)) in entries.iter().enumerate() {
            if let Some(prev) = last {
                if *frame_id <= prev {
                    return Err(PoseError::NonIncreasingFrame {
                        line: i + 1,
                        frame_id: *frame_id,
                    });
                }
            }
            last = Some(*frame_id);
            by_frame.insert(*frame_id, i);
        }
        Ok(Trajectory { entries, by_frame })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn world_from_camera(&self, frame_id: u64) -> Result<&RigidTransform<S>, PoseError> {
        self.by_frame
            .get(&frame_id)
            .map(|i| &self.entries[*i].1)
            .ok_or(PoseError::MissingFrame(frame_id))
    }

    /// Relative pose mapping camera-frame coordinates of `from` into the
    /// camera frame of `to`: `inverse(world_from_to) * world_from_from`.
    pub fn relative(&self, from: u64, to: u64) -> Result<RigidTransform<S>, PoseError> {
        let a = self.world_from_camera(from)?;
        let b = self.world_from_camera(to)?;
        Ok(b.inverse().compose(a))
    }

    /// Parses a trajectory file. Two line layouts are accepted:
    ///
    /// * 13 fields: `frame_id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz`
    ///   (row-major 3x4 world-from-camera matrix);
    /// * 8 fields: `frame_id tx ty tz qx qy qz qw` (unit quaternion,
    ///   normalized on load).
    ///
    /// Rotations are projected to the nearest orthonormal matrix. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, PoseError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let parse_err = |message: String| PoseError::Parse { line, message };
            let frame_id: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad frame id `{}`", fields[0])))?;
            let values: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(format!("bad number `{f}`")))
                })
                .collect::<Result<_, _>>()?;
            let transform = match values.len() {
                12 => {
                    let m = &values;
                    let rotation = Matrix3::new(
                        S::of(m[0]),
                        S::of(m[1]),
                        S::of(m[2]),
                        S::of(m[4]),
                        S::of(m[5]),
                        S::of(m[6]),
                        S::of(m[8]),
                        S::of(m[9]),
                        S::of(m[10]),
                    );
                    let translation = Vector3::new(S::of(m[3]), S::of(m[7]), S::of(m[11]));
                    RigidTransform::new(rotation, translation)
                }
                7 => {
                    let translation = Vector3::new(S::of(values[0]), S::of(values[1]), S::of(values[2]));
                    let quat = Quaternion::new(
                        S::of(values[6]), // w
                        S::of(values[3]),
                        S::of(values[4]),
                        S::of(values[5]),
                    );
                    let unit = UnitQuaternion::from_quaternion(quat);
                    RigidTransform::new(unit.to_rotation_matrix().into_inner(), translation)
                }
                n => {
                    return Err(parse_err(format!(
                        "expected 12 matrix values or 7 quaternion values after the frame id, got {n}"
                    )))
                }
            };
            if entries
                .last()
                .is_some_and(|(prev, _)| frame_id <= *prev)
            {
                return Err(PoseError::NonIncreasingFrame { line, frame_id });
            }
            entries.push((frame_id, transform.reorthonormalized()?));
        }
        Trajectory::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PoseError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Serializes a trajectory in the row-major 3x4 layout read by
/// [`Trajectory::parse`].
pub fn trajectory_to_string<S: Scalar>(entries: &[(u64, RigidTransform<S>)]) -> String {
    let mut out = String::new();
    for (frame_id, t) in entries {
        let r = &t.rotation;
        let tr = &t.translation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            frame_id,
            r[(0, 0)].as_f64(),
            r[(0, 1)].as_f64(),
            r[(0, 2)].as_f64(),
            tr[0].as_f64(),
            r[(1, 0)].as_f64(),
            r[(1, 1)].as_f64(),
            r[(1, 2)].as_f64(),
            tr[1].as_f64(),
            r[(2, 0)].as_f64(),
            r[(2, 1)].as_f64(),
            r[(2, 2)].as_f64(),
            tr[2].as_f64(),
        ));
    }
    out
}
