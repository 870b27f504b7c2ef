//! Per-frame pose features and their inverse.
//!
//! Each frame becomes a row `[r_z | v_x, v_y | yaw_rate | theta | j]`:
//! root height, body-local planar root velocity (m/s), yaw angular velocity
//! (rad/s), the 6D encodings of the canonical root residual plus all
//! non-root local rotations (6 per joint), and the canonicalized joint
//! positions (3 per joint). Width is `d = 4 + 9 J`.
//!
//! Canonicalization removes the yaw (ground-plane heading) of the root and
//! its xy position, so the representation is invariant under global
//! rotation about Z and planar translation; velocities are stored in the
//! body frame for the same reason. Decoding integrates the velocities back
//! into a world trajectory from a caller-supplied initial position and
//! heading.

use nalgebra::{Rotation3, Vector3};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::rot6d::{self, Rot6dError};
use super::{forward_kinematics, MotionError, MotionSequence, Skeleton};

/// Ground-plane projection threshold below which the heading is undefined.
pub const SINGULAR_HEADING_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("SINGULAR_HEADING: forward axis within {SINGULAR_HEADING_EPS:.0e} of vertical at frame {frame} with no previous yaw to substitute")]
    SingularHeading { frame: usize },
    #[error(transparent)]
    Rot6d(#[from] Rot6dError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("feature width {found} does not match skeleton (expected {expected})")]
    WrongWidth { expected: usize, found: usize },
}

/// Column layout of a pose feature row for a J-joint skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_joints: usize,
}

impl FeatureLayout {
    pub const ROOT_Z: usize = 0;
    pub const VEL_X: usize = 1;
    pub const VEL_Y: usize = 2;
    pub const YAW_RATE: usize = 3;

    pub fn new(num_joints: usize) -> Self {
        FeatureLayout { num_joints }
    }

    /// Total row width d = 4 + 9 J.
    pub fn width(&self) -> usize {
        4 + 9 * self.num_joints
    }

    /// 6D rotation block of `slot` (0 = canonical root residual, k = local
    /// rotation of joint k).
    pub fn theta(&self, slot: usize) -> std::ops::Range<usize> {
        debug_assert!(slot < self.num_joints);
        let start = 4 + 6 * slot;
        start..start + 6
    }

    /// Canonical position block of joint `joint`.
    pub fn joint_pos(&self, joint: usize) -> std::ops::Range<usize> {
        debug_assert!(joint < self.num_joints);
        let start = 4 + 6 * self.num_joints + 3 * joint;
        start..start + 3
    }
}

/// A motion clip in feature space: one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatureMatrix {
    pub fps: f64,
    pub layout: FeatureLayout,
    /// `T x d`.
    pub data: Array2<f64>,
}

impl PoseFeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut x = a % TAU;
    if x > PI {
        x -= TAU;
    } else if x <= -PI {
        x += TAU;
    }
    x
}

/// Extracts the heading: the angle of the root's forward axis (its +X
/// image) projected onto the ground plane. Fails when the projection is
/// negligibly short, i.e. the character points straight up or down.
pub fn extract_yaw(rot: &Rotation3<f64>) -> Option<f64> {
    let fwd = rot * Vector3::x();
    let norm = fwd.x.hypot(fwd.y);
    if norm < SINGULAR_HEADING_EPS {
        None
    } else {
        Some(fwd.y.atan2(fwd.x))
    }
}

/// Rotates a motion about the world Z axis and shifts it in the ground
/// plane: the transform the feature encoding is invariant to.
pub fn rotate_about_z(m: &MotionSequence, angle: f64, offset_xy: [f64; 2]) -> MotionSequence {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
    MotionSequence {
        fps: m.fps,
        root_pos: m
            .root_pos
            .iter()
            .map(|p| {
                let q = rz * Vector3::from(*p);
                [q.x + offset_xy[0], q.y + offset_xy[1], q.z]
            })
            .collect(),
        root_rot: m.root_rot.iter().map(|r| rz * r).collect(),
        joint_rot: m.joint_rot.clone(),
    }
}

/// Encodes a motion into per-frame pose features.
///
/// Velocities are forward differences scaled by fps, expressed in the body
/// frame of the earlier frame; the last frame copies the previous frame's
/// velocities. A frame whose heading is singular inherits the previous
/// frame's yaw; a singular first frame is an error.
pub fn encode_features(
    motion: &MotionSequence,
    skel: &Skeleton,
) -> Result<PoseFeatureMatrix, FeatureError> {
    motion.validate(skel)?;
    let t = motion.num_frames();
    let layout = FeatureLayout::new(skel.num_joints());
    let d = layout.width();

    let mut yaw = Vec::with_capacity(t);
    for i in 0..t {
        match extract_yaw(&motion.root_rot[i]) {
            Some(a) => yaw.push(a),
            None if i > 0 => yaw.push(yaw[i - 1]),
            None => return Err(FeatureError::SingularHeading { frame: i }),
        }
    }

    let mut data = Array2::zeros((t, d));
    for i in 0..t {
        let row_z = motion.root_pos[i][2];
        data[(i, FeatureLayout::ROOT_Z)] = row_z;

        if i + 1 < t {
            let dx = motion.root_pos[i + 1][0] - motion.root_pos[i][0];
            let dy = motion.root_pos[i + 1][1] - motion.root_pos[i][1];
            let (sin, cos) = yaw[i].sin_cos();
            // Body-local velocity: rotate the world delta by -yaw.
            data[(i, FeatureLayout::VEL_X)] = (cos * dx + sin * dy) * motion.fps;
            data[(i, FeatureLayout::VEL_Y)] = (-sin * dx + cos * dy) * motion.fps;
            data[(i, FeatureLayout::YAW_RATE)] = wrap_angle(yaw[i + 1] - yaw[i]) * motion.fps;
        } else {
            for col in [
                FeatureLayout::VEL_X,
                FeatureLayout::VEL_Y,
                FeatureLayout::YAW_RATE,
            ] {
                data[(i, col)] = data[(i - 1, col)];
            }
        }

        let residual =
            Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw[i]) * motion.root_rot[i];
        for (slot, rot) in std::iter::once(&residual)
            .chain(motion.joint_rot[i].iter())
            .enumerate()
        {
            let enc = rot6d::encode(rot);
            for (k, col) in layout.theta(slot).enumerate() {
                data[(i, col)] = enc[k];
            }
        }

        let canon = forward_kinematics(
            skel,
            Vector3::new(0.0, 0.0, row_z),
            &residual,
            &motion.joint_rot[i],
        );
        for (joint, p) in canon.iter().enumerate() {
            let cols = layout.joint_pos(joint);
            data[(i, cols.start)] = p.x;
            data[(i, cols.start + 1)] = p.y;
            data[(i, cols.start + 2)] = p.z;
        }
    }

    Ok(PoseFeatureMatrix {
        fps: motion.fps,
        layout,
        data,
    })
}

/// Decodes pose features back into a motion, integrating the planar
/// velocities and yaw rate from the given initial position and heading.
pub fn decode_features(
    feat: &PoseFeatureMatrix,
    skel: &Skeleton,
    initial_xy: [f64; 2],
    initial_yaw: f64,
) -> Result<MotionSequence, FeatureError> {
    let layout = FeatureLayout::new(skel.num_joints());
    if feat.data.ncols() != layout.width() {
        return Err(FeatureError::WrongWidth {
            expected: layout.width(),
            found: feat.data.ncols(),
        });
    }
    let t = feat.num_frames();
    if t < 2 {
        return Err(FeatureError::Motion(MotionError::TooShort(t)));
    }

    let mut root_pos = Vec::with_capacity(t);
    let mut root_rot = Vec::with_capacity(t);
    let mut joint_rot = Vec::with_capacity(t);
    let (mut x, mut y) = (initial_xy[0], initial_xy[1]);
    let mut yaw = initial_yaw;
    for i in 0..t {
        root_pos.push([x, y, feat.data[(i, FeatureLayout::ROOT_Z)]]);

        let mut theta = [0.0; 6];
        let read_theta = |theta: &mut [f64; 6], slot: usize| {
            for (k, col) in layout.theta(slot).enumerate() {
                theta[k] = feat.data[(i, col)];
            }
        };
        read_theta(&mut theta, 0);
        let residual = rot6d::decode(&theta)?;
        root_rot.push(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * residual);

        let mut locals = Vec::with_capacity(skel.num_joints() - 1);
        for slot in 1..skel.num_joints() {
            read_theta(&mut theta, slot);
            locals.push(rot6d::decode(&theta)?);
        }
        joint_rot.push(locals);

        // Advance the trajectory with this frame's body-local velocity.
        let (sin, cos) = yaw.sin_cos();
        let vx = feat.data[(i, FeatureLayout::VEL_X)];
        let vy = feat.data[(i, FeatureLayout::VEL_Y)];
        x += (cos * vx - sin * vy) / feat.fps;
        y += (sin * vx + cos * vy) / feat.fps;
        yaw += feat.data[(i, FeatureLayout::YAW_RATE)] / feat.fps;
    }

    Ok(MotionSequence {
        fps: feat.fps,
        root_pos,
        root_rot,
        joint_rot,
    })
}

/// Reads the canonicalized joint positions stored in the feature rows,
/// for diagnostics against freshly computed forward kinematics.
pub fn decoded_joint_positions(feat: &PoseFeatureMatrix) -> Vec<Vec<Vector3<f64>>> {
    let layout = feat.layout;
    (0..feat.num_frames())
        .map(|i| {
            (0..layout.num_joints)
                .map(|j| {
                    let cols = layout.joint_pos(j);
                    Vector3::new(
                        feat.data[(i, cols.start)],
                        feat.data[(i, cols.start + 1)],
                        feat.data[(i, cols.start + 2)],
                    )
                })
                .collect()
        })
        .collect()
}

/// Column-wise standardization statistics over a feature corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`FeatureNormalizer::STD_FLOOR`].
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub const STD_FLOOR: f64 = 1e-4;

    /// Fits per-column mean and floored standard deviation over all frames
    /// of the corpus. Panics on an empty corpus or fewer than 2 total
    /// frames, which has no meaningful statistics.
    pub fn fit(corpus: &[PoseFeatureMatrix]) -> FeatureNormalizer {
        let mats: Vec<&Array2<f64>> = corpus.iter().map(|m| &m.data).collect();
        Self::fit_rows(&mats)
    }

    /// Same statistics over bare matrices (e.g. segment crops).
    pub fn fit_rows(mats: &[&Array2<f64>]) -> FeatureNormalizer {
        let d = mats.first().expect("normalizer corpus is empty").ncols();
        let total: usize = mats.iter().map(|m| m.nrows()).sum();
        assert!(total >= 2, "normalizer needs at least 2 frames, got {total}");
        let mut mean = Array1::<f64>::zeros(d);
        for m in mats {
            assert_eq!(m.ncols(), d, "inconsistent feature widths");
            mean += &m.sum_axis(ndarray::Axis(0));
        }
        mean /= total as f64;
        let mut var = Array1::<f64>::zeros(d);
        for m in mats {
            for row in m.rows() {
                for (v, (x, mu)) in var.iter_mut().zip(row.iter().zip(mean.iter())) {
                    *v += (x - mu) * (x - mu);
                }
            }
        }
        var /= total as f64;
        FeatureNormalizer {
            mean: mean.to_vec(),
            std: var.iter().map(|v| v.sqrt().max(Self::STD_FLOOR)).collect(),
        }
    }

    /// `(x - mean) / std`, column-wise.
    pub fn apply(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, data: &mut Array2<f64>) {
        assert_eq!(data.ncols(), self.mean.len());
        for mut row in data.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / self.std[j];
            }
        }
    }

    /// `x * std + mean`, column-wise.
    pub fn invert(&self, data: &Array2<f64>) -> Array2<f64> {
        assert_eq!(data.ncols(), self.mean.len());
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = *x * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

impl MotionSequence {
    /// A random motion for fuzzing and round-trip checks: a smooth-ish
    /// random walk of the root with bounded pitch/roll (so the heading
    /// stays well-defined) and unconstrained random joint rotations.
    pub fn random(skel: &Skeleton, num_frames: usize, fps: f64, rng: &mut impl rand::Rng) -> Self {
        use std::f64::consts::PI;
        let mut root_pos = Vec::with_capacity(num_frames);
        let mut root_rot = Vec::with_capacity(num_frames);
        let mut joint_rot = Vec::with_capacity(num_frames);
        let (mut x, mut y): (f64, f64) =
            (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut yaw: f64 = rng.random_range(-PI..PI);
        for _ in 0..num_frames {
            x += rng.random_range(-0.03..0.03);
            y += rng.random_range(-0.03..0.03);
            yaw += rng.random_range(-0.1..0.1);
            let pitch = rng.random_range(-1.0..1.0);
            let roll = rng.random_range(-1.0..1.0);
            root_pos.push([x, y, rng.random_range(0.7..1.1)]);
            root_rot.push(
                Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
                    * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch)
                    * Rotation3::from_axis_angle(&Vector3::x_axis(), roll),
            );
            joint_rot.push(
                (0..skel.num_joints() - 1)
                    .map(|_| {
                        Rotation3::from_euler_angles(
                            rng.random_range(-PI..PI),
                            rng.random_range(-1.5..1.5),
                            rng.random_range(-PI..PI),
                        )
                    })
                    .collect(),
            );
        }
        MotionSequence {
            fps,
            root_pos,
            root_rot,
            joint_rot,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::TOY_REST_ROOT_Z;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn skel() -> Skeleton {
        Skeleton::toy()
    }

    #[test]
    fn width_is_4_plus_9j() {
        let layout = FeatureLayout::new(13);
        assert_eq!(layout.width(), 121);
        assert_eq!(layout.theta(0), 4..10);
        assert_eq!(layout.theta(12), 76..82);
        assert_eq!(layout.joint_pos(0), 82..85);
        assert_eq!(layout.joint_pos(12), 118..121);
    }

    #[test]
    fn static_pose_has_zero_velocities() {
        let skel = skel();
        let m = MotionSequence::rest(&skel, 6, 20.0, TOY_REST_ROOT_Z);
        let f = encode_features(&m, &skel).unwrap();
        for i in 0..6 {
            assert_eq!(f.data[(i, FeatureLayout::VEL_X)], 0.0);
            assert_eq!(f.data[(i, FeatureLayout::VEL_Y)], 0.0);
            assert_eq!(f.data[(i, FeatureLayout::YAW_RATE)], 0.0);
            assert_eq!(f.data[(i, FeatureLayout::ROOT_Z)], TOY_REST_ROOT_Z);
        }
    }

    #[test]
    fn constant_advance_gives_unit_velocity() {
        let skel = skel();
        let mut m = MotionSequence::rest(&skel, 10, 20.0, TOY_REST_ROOT_Z);
        for (i, p) in m.root_pos.iter_mut().enumerate() {
            p[0] = 0.05 * i as f64;
        }
        let f = encode_features(&m, &skel).unwrap();
        for i in 0..10 {
            assert!((f.data[(i, FeatureLayout::VEL_X)] - 1.0).abs() < 1e-12);
            assert!(f.data[(i, FeatureLayout::VEL_Y)].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_turn_gives_expected_yaw_rate() {
        let skel = skel();
        let mut m = MotionSequence::rest(&skel, 10, 20.0, TOY_REST_ROOT_Z);
        for (i, r) in m.root_rot.iter_mut().enumerate() {
            *r = Rotation3::from_axis_angle(&Vector3::z_axis(), PI / 40.0 * i as f64);
        }
        let f = encode_features(&m, &skel).unwrap();
        for i in 0..10 {
            assert!(
                (f.data[(i, FeatureLayout::YAW_RATE)] - PI / 2.0).abs() < 1e-12,
                "frame {i}: {}",
                f.data[(i, FeatureLayout::YAW_RATE)]
            );
        }
    }

    #[test]
    fn yaw_difference_wraps_across_pi() {
        let skel = skel();
        let mut m = MotionSequence::rest(&skel, 3, 20.0, TOY_REST_ROOT_Z);
        // Headings just below +pi and just above -pi: the physical turn is
        // small even though the raw difference is ~2 pi.
        m.root_rot[0] = Rotation3::from_axis_angle(&Vector3::z_axis(), PI - 0.05);
        m.root_rot[1] = Rotation3::from_axis_angle(&Vector3::z_axis(), -PI + 0.05);
        m.root_rot[2] = m.root_rot[1];
        let f = encode_features(&m, &skel).unwrap();
        assert!(
            (f.data[(0, FeatureLayout::YAW_RATE)] - 0.1 * 20.0).abs() < 1e-9,
            "{}",
            f.data[(0, FeatureLayout::YAW_RATE)]
        );
    }

    #[test]
    fn singular_heading_first_frame_errors_later_frames_substitute() {
        let skel = skel();
        let vertical = Rotation3::from_axis_angle(&Vector3::y_axis(), -PI / 2.0);

        let mut m = MotionSequence::rest(&skel, 3, 20.0, TOY_REST_ROOT_Z);
        m.root_rot[0] = vertical;
        assert!(matches!(
            encode_features(&m, &skel),
            Err(FeatureError::SingularHeading { frame: 0 })
        ));

        let mut m = MotionSequence::rest(&skel, 3, 20.0, TOY_REST_ROOT_Z);
        m.root_rot[0] = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4);
        m.root_rot[1] = vertical;
        m.root_rot[2] = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4);
        let f = encode_features(&m, &skel).unwrap();
        // Frame 1 inherits frame 0's yaw, so the yaw rate stays 0 on both.
        assert!(f.data[(0, FeatureLayout::YAW_RATE)].abs() < 1e-12);
        assert!(f.data[(1, FeatureLayout::YAW_RATE)].abs() < 1e-12);
    }

    #[test]
    fn decode_integrates_constant_velocity() {
        let skel = skel();
        let m = MotionSequence::rest(&skel, 20, 20.0, TOY_REST_ROOT_Z);
        let mut f = encode_features(&m, &skel).unwrap();
        for i in 0..20 {
            f.data[(i, FeatureLayout::VEL_X)] = 1.0;
        }
        let dec = decode_features(&f, &skel, [0.0, 0.0], 0.0).unwrap();
        // 19 integration steps of 1 m/s at 20 fps land at 0.95 m.
        assert!((dec.root_pos[19][0] - 0.95).abs() < 1e-12);
        assert!(dec.root_pos[19][1].abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_decode_is_stationary() {
        let skel = skel();
        let m = MotionSequence::rest(&skel, 8, 20.0, TOY_REST_ROOT_Z);
        let f = encode_features(&m, &skel).unwrap();
        let dec = decode_features(&f, &skel, [2.0, -1.0], 0.0).unwrap();
        for p in &dec.root_pos {
            assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_reconstructs_joint_positions() {
        let skel = skel();
        let mut rng = crate::seeds::rng(11, "feature-roundtrip");
        for _ in 0..5 {
            let m = MotionSequence::random(&skel, 40, 20.0, &mut rng);
            let f = encode_features(&m, &skel).unwrap();
            let initial_yaw = extract_yaw(&m.root_rot[0]).unwrap();
            let dec =
                decode_features(&f, &skel, [m.root_pos[0][0], m.root_pos[0][1]], initial_yaw)
                    .unwrap();
            for i in 0..m.num_frames() {
                let orig = forward_kinematics(
                    &skel,
                    Vector3::from(m.root_pos[i]),
                    &m.root_rot[i],
                    &m.joint_rot[i],
                );
                let back = forward_kinematics(
                    &skel,
                    Vector3::from(dec.root_pos[i]),
                    &dec.root_rot[i],
                    &dec.joint_rot[i],
                );
                for (o, b) in orig.iter().zip(&back) {
                    assert!((o - b).norm() < 1e-9, "frame {i}: {o} vs {b}");
                }
            }
        }
    }

    #[test]
    fn stored_joint_positions_match_fk_diagnostics() {
        let skel = skel();
        let mut rng = crate::seeds::rng(3, "diag");
        let m = MotionSequence::random(&skel, 10, 20.0, &mut rng);
        let f = encode_features(&m, &skel).unwrap();
        let stored = decoded_joint_positions(&f);
        assert_eq!(stored.len(), 10);
        assert_eq!(stored[0].len(), 13);
        // Root xy is canonicalized away; z matches the r_z column.
        for i in 0..10 {
            assert!(stored[i][0].x.abs() < 1e-12);
            assert!(stored[i][0].y.abs() < 1e-12);
            assert!((stored[i][0].z - f.data[(i, FeatureLayout::ROOT_Z)]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_statistics_and_round_trip() {
        let skel = skel();
        let mut rng = crate::seeds::rng(5, "norm");
        let m = MotionSequence::random(&skel, 50, 20.0, &mut rng);
        let f = encode_features(&m, &skel).unwrap();
        let norm = FeatureNormalizer::fit(std::slice::from_ref(&f));
        let applied = norm.apply(&f.data);
        for j in 0..f.data.ncols() {
            let col = applied.column(j);
            let mean: f64 = col.sum() / col.len() as f64;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            if norm.std[j] > FeatureNormalizer::STD_FLOOR {
                let var: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                    / col.len() as f64;
                assert!((var - 1.0).abs() < 1e-9, "column {j} var {var}");
            }
        }
        let back = norm.invert(&applied);
        let worst = (&back - &f.data).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(worst < 1e-6, "round-trip deviation {worst}");
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let skel = skel();
        let m = MotionSequence::rest(&skel, 5, 20.0, TOY_REST_ROOT_Z);
        let f = encode_features(&m, &skel).unwrap();
        let norm = FeatureNormalizer::fit(std::slice::from_ref(&f));
        // Every column of a rest pose is constant; the normalized values
        // are zero up to accumulation noise amplified by the 1e-4 floor.
        let applied = norm.apply(&f.data);
        assert!(applied.iter().all(|x| x.abs() < 1e-9));
        assert!(norm.std.iter().all(|s| *s == FeatureNormalizer::STD_FLOOR));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn encoding_is_invariant_to_planar_motion(
            seed in 0u64..1000,
            angle in -PI..PI,
            dx in -5.0f64..5.0,
            dy in -5.0f64..5.0,
        ) {
            let skel = skel();
            let mut rng = crate::seeds::rng(seed, "inv");
            let m = MotionSequence::random(&skel, 12, 20.0, &mut rng);
            let moved = rotate_about_z(&m, angle, [dx, dy]);
            let f0 = encode_features(&m, &skel).unwrap();
            let f1 = encode_features(&moved, &skel).unwrap();
            let worst = (&f0.data - &f1.data)
                .iter()
                .fold(0.0f64, |a, x| a.max(x.abs()));
            prop_assert!(worst < 1e-6, "max deviation {worst}");
        }
    }
}
