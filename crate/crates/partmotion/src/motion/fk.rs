//! Forward kinematics over the skeleton tree.

use nalgebra::{Rotation3, Vector3};

use super::Skeleton;

/// Computes global joint positions for one frame.
///
/// The root sits at `root_pos` with global orientation `root_rot`;
/// every other joint's position is its parent's position plus the parent's
/// global rotation applied to the joint offset, and its global rotation is
/// the parent's composed with its local rotation. `joint_local[k]` is the
/// local rotation of joint `k + 1`.
pub fn forward_kinematics(
    skel: &Skeleton,
    root_pos: Vector3<f64>,
    root_rot: &Rotation3<f64>,
    joint_local: &[Rotation3<f64>],
) -> Vec<Vector3<f64>> {
    let j = skel.num_joints();
    debug_assert_eq!(joint_local.len(), j - 1);
    let mut pos = Vec::with_capacity(j);
    let mut glob = Vec::with_capacity(j);
    pos.push(root_pos);
    glob.push(*root_rot);
    for joint in 1..j {
        let parent = skel.parent(joint).expect("non-root joints have parents");
        let offset = Vector3::from(skel.offset(joint));
        pos.push(pos[parent] + glob[parent] * offset);
        glob.push(glob[parent] * joint_local[joint - 1]);
    }
    pos
}
