//! Skeletons, motion sequences, forward kinematics, and the pose feature
//! codec.
//!
//! Conventions used throughout: Z is up, the character's forward axis in its
//! rest pose is +X, units are meters and seconds. Rotations are stored as
//! orthonormal matrices; on disk they use the 6D encoding of [`rot6d`].
//!
//! Motion file format (JSON):
//!
//! ```json
//! {"fps": 20.0,
//!  "root_pos":     [[x, y, z], ...],          // T rows, meters
//!  "root_rot_6d":  [[6 floats], ...],         // T rows, global root orientation
//!  "joint_rot_6d": [[[6 floats], ...], ...]}  // T rows x (J-1) non-root local rotations
//! ```
//!
//! `joint_rot_6d` row `i` holds the local rotations of joints `1..J` in
//! skeleton order (the root's orientation lives in `root_rot_6d`). Newline
//! -delimited dataset files wrap each motion as `{"id": ..., "motion": ...}`.
//!
//! Skeleton file format (JSON): `{"name": str, "parents": [int]` (root has
//! `-1`, parents precede children)`, "offsets": [[x,y,z]], "part_of": [str]}`
//! with part names from the annotation schema; no joint maps to
//! `trajectory`, which refers to root translation and heading.

pub mod features;
pub mod fk;
pub mod rot6d;

use std::path::Path;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::annotation::PartId;

pub use features::{
    decode_features, decoded_joint_positions, encode_features, extract_yaw, wrap_angle,
    FeatureError, FeatureLayout, FeatureNormalizer, PoseFeatureMatrix,
};
pub use fk::forward_kinematics;

/// A rooted kinematic tree with constant bone offsets and a body-part
/// assignment per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub name: String,
    /// `parents[0]` is `None` (the root); `parents[i] < i` for all others.
    parents: Vec<Option<usize>>,
    /// Offset of each joint from its parent, in the parent's frame (meters).
    offsets: Vec<[f64; 3]>,
    part_of: Vec<PartId>,
}

#[derive(Debug, thiserror::Error)]
pub enum SkeletonError {
    #[error("skeleton must have at least one joint")]
    Empty,
    #[error("joint 0 must be the root (parent -1), found parent {0}")]
    BadRoot(i64),
    #[error("joint {joint}: parent {parent} must be a smaller joint index")]
    BadParent { joint: usize, parent: i64 },
    #[error("joint {joint}: unknown part name {name:?}")]
    UnknownPart { joint: usize, name: String },
    #[error("joint {joint}: trajectory is not a joint-level part")]
    TrajectoryJoint { joint: usize },
    #[error("part {0} has no joints")]
    UncoveredPart(&'static str),
    #[error("field lengths disagree: {0} parents, {1} offsets, {2} part names")]
    LengthMismatch(usize, usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    name: String,
    parents: Vec<i64>,
    offsets: Vec<[f64; 3]>,
    part_of: Vec<String>,
}

impl Skeleton {
    /// Builds and validates a skeleton. Joints must be listed parents-first
    /// with the root at index 0; every body part except `trajectory` must
    /// own at least one joint.
    pub fn new(
        name: &str,
        parents: Vec<i64>,
        offsets: Vec<[f64; 3]>,
        part_of: Vec<PartId>,
    ) -> Result<Self, SkeletonError> {
        if parents.is_empty() {
            return Err(SkeletonError::Empty);
        }
        if parents.len() != offsets.len() || parents.len() != part_of.len() {
            return Err(SkeletonError::LengthMismatch(
                parents.len(),
                offsets.len(),
                part_of.len(),
            ));
        }
        if parents[0] != -1 {
            return Err(SkeletonError::BadRoot(parents[0]));
        }
        let mut resolved = vec![None];
        for (joint, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= joint {
                return Err(SkeletonError::BadParent { joint, parent: p });
            }
            resolved.push(Some(p as usize));
        }
        for (joint, part) in part_of.iter().enumerate() {
            if *part == PartId::Trajectory {
                return Err(SkeletonError::TrajectoryJoint { joint });
            }
        }
        for part in PartId::ALL {
            if part != PartId::Trajectory && !part_of.contains(&part) {
                return Err(SkeletonError::UncoveredPart(part.name()));
            }
        }
        Ok(Skeleton {
            name: name.to_string(),
            parents: resolved,
            offsets,
            part_of,
        })
    }

    /// Number of joints J.
    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn offset(&self, joint: usize) -> [f64; 3] {
        self.offsets[joint]
    }

    pub fn part_of(&self, joint: usize) -> PartId {
        self.part_of[joint]
    }

    pub fn joints_of(&self, part: PartId) -> Vec<usize> {
        (0..self.num_joints())
            .filter(|&j| self.part_of[j] == part)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, SkeletonError> {
        let file: SkeletonFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut parts = Vec::with_capacity(file.part_of.len());
        for (joint, name) in file.part_of.iter().enumerate() {
            parts.push(PartId::from_name(name).ok_or_else(|| SkeletonError::UnknownPart {
                joint,
                name: name.clone(),
            })?);
        }
        Skeleton::new(&file.name, file.parents, file.offsets, parts)
    }

    pub fn save(&self, path: &Path) -> Result<(), SkeletonError> {
        let file = SkeletonFile {
            name: self.name.clone(),
            parents: self
                .parents
                .iter()
                .map(|p| p.map_or(-1, |i| i as i64))
                .collect(),
            offsets: self.offsets.clone(),
            part_of: self.part_of.iter().map(|p| p.name().to_string()).collect(),
        };
        let mut json = serde_json::to_string_pretty(&file)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    /// The built-in 13-joint body: pelvis and spine carry the torso, three
    /// joints per arm, two per leg, one head. Rest pose stands at the
    /// origin facing +X with arms hanging down.
    pub fn toy() -> Skeleton {
        use PartId::*;
        let joints: [(&str, i64, [f64; 3], PartId); 13] = [
            ("pelvis", -1, [0.0, 0.0, 0.0], Spine),
            ("spine", 0, [0.0, 0.0, 0.25], Spine),
            ("head", 1, [0.0, 0.0, 0.30], Head),
            ("left_shoulder", 1, [0.0, 0.20, 0.20], LeftArm),
            ("left_elbow", 3, [0.0, 0.02, -0.28], LeftArm),
            ("left_wrist", 4, [0.0, 0.0, -0.26], LeftArm),
            ("right_shoulder", 1, [0.0, -0.20, 0.20], RightArm),
            ("right_elbow", 6, [0.0, -0.02, -0.28], RightArm),
            ("right_wrist", 7, [0.0, 0.0, -0.26], RightArm),
            ("left_hip", 0, [0.0, 0.10, -0.05], LeftLeg),
            ("left_knee", 9, [0.0, 0.0, -0.40], LeftLeg),
            ("right_hip", 0, [0.0, -0.10, -0.05], RightLeg),
            ("right_knee", 11, [0.0, 0.0, -0.40], RightLeg),
        ];
        Skeleton::new(
            "toy-13",
            joints.iter().map(|j| j.1).collect(),
            joints.iter().map(|j| j.2).collect(),
            joints.iter().map(|j| j.3).collect(),
        )
        .expect("built-in skeleton is valid")
    }

    /// Joint index lookup for the built-in skeleton's named joints.
    pub fn toy_joint(name: &str) -> Option<usize> {
        [
            "pelvis",
            "spine",
            "head",
            "left_shoulder",
            "left_elbow",
            "left_wrist",
            "right_shoulder",
            "right_elbow",
            "right_wrist",
            "left_hip",
            "left_knee",
            "right_hip",
            "right_knee",
        ]
        .iter()
        .position(|&n| n == name)
    }
}

/// Height of the built-in skeleton's pelvis in the rest pose.
pub const TOY_REST_ROOT_Z: f64 = 0.90;

/// A motion clip: per-frame root transform plus local rotations for every
/// non-root joint.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    /// T root positions, meters.
    pub root_pos: Vec<[f64; 3]>,
    /// T global root orientations.
    pub root_rot: Vec<Rotation3<f64>>,
    /// T x (J-1) local rotations of joints 1..J.
    pub joint_rot: Vec<Vec<Rotation3<f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MotionError {
    #[error("motion needs at least 2 frames, found {0}")]
    TooShort(usize),
    #[error("frame {frame}: expected {expected} joint rotations, found {found}")]
    JointCount {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("field lengths disagree across frames")]
    LengthMismatch,
    #[error("fps must be positive, found {0}")]
    BadFps(f64),
    #[error("frame {frame}, rotation {slot}: not orthonormal (deviation {dev:.3e})")]
    NotOrthonormal { frame: usize, slot: usize, dev: f64 },
    #[error(transparent)]
    Rot6d(#[from] rot6d::Rot6dError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct MotionFileJson {
    fps: f64,
    root_pos: Vec<[f64; 3]>,
    root_rot_6d: Vec<[f64; 6]>,
    joint_rot_6d: Vec<Vec<[f64; 6]>>,
}

impl MotionSequence {
    /// A T-frame rest pose: root at `(0, 0, root_z)`, all rotations identity.
    pub fn rest(skel: &Skeleton, num_frames: usize, fps: f64, root_z: f64) -> MotionSequence {
        MotionSequence {
            fps,
            root_pos: vec![[0.0, 0.0, root_z]; num_frames],
            root_rot: vec![Rotation3::identity(); num_frames],
            joint_rot: vec![vec![Rotation3::identity(); skel.num_joints() - 1]; num_frames],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.root_pos.len()
    }

    /// Checks frame-count and rotation-orthonormality invariants against a
    /// skeleton.
    pub fn validate(&self, skel: &Skeleton) -> Result<(), MotionError> {
        let t = self.num_frames();
        if t < 2 {
            return Err(MotionError::TooShort(t));
        }
        if self.fps <= 0.0 || !self.fps.is_finite() {
            return Err(MotionError::BadFps(self.fps));
        }
        if self.root_rot.len() != t || self.joint_rot.len() != t {
            return Err(MotionError::LengthMismatch);
        }
        let expected = skel.num_joints() - 1;
        for (frame, rots) in self.joint_rot.iter().enumerate() {
            if rots.len() != expected {
                return Err(MotionError::JointCount {
                    frame,
                    expected,
                    found: rots.len(),
                });
            }
            for (slot, r) in std::iter::once(&self.root_rot[frame])
                .chain(rots.iter())
                .enumerate()
            {
                let gram = r.matrix().transpose() * r.matrix();
                let dev = (gram - nalgebra::Matrix3::identity()).abs().max();
                if dev > 1e-6 {
                    return Err(MotionError::NotOrthonormal { frame, slot, dev });
                }
            }
        }
        Ok(())
    }

    fn to_file(&self) -> MotionFileJson {
        MotionFileJson {
            fps: self.fps,
            root_pos: self.root_pos.clone(),
            root_rot_6d: self.root_rot.iter().map(rot6d::encode).collect(),
            joint_rot_6d: self
                .joint_rot
                .iter()
                .map(|frame| frame.iter().map(rot6d::encode).collect())
                .collect(),
        }
    }

    fn from_file(file: MotionFileJson) -> Result<Self, MotionError> {
        let root_rot = file
            .root_rot_6d
            .iter()
            .map(rot6d::decode)
            .collect::<Result<Vec<_>, _>>()?;
        let joint_rot = file
            .joint_rot_6d
            .iter()
            .map(|frame| frame.iter().map(rot6d::decode).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        Ok(MotionSequence {
            fps: file.fps,
            root_pos: file.root_pos,
            root_rot,
            joint_rot,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MotionError> {
        let mut json = serde_json::to_string(&self.to_file())?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MotionError> {
        MotionSequence::from_file(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One line of a motion dataset file: a clip keyed by the id shared with its
/// annotation.
#[derive(Serialize, Deserialize)]
struct MotionRecord {
    id: String,
    motion: MotionFileJson,
}

/// Reads a newline-delimited motion dataset into (id, motion) pairs.
pub fn read_motions(path: &Path) -> Result<Vec<(String, MotionSequence)>, MotionError> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MotionRecord = serde_json::from_str(&line)?;
        out.push((rec.id, MotionSequence::from_file(rec.motion)?));
    }
    Ok(out)
}

/// Writes a newline-delimited motion dataset.
pub fn write_motions(path: &Path, motions: &[(String, MotionSequence)]) -> Result<(), MotionError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, m) in motions {
        let rec = MotionRecord {
            id: id.clone(),
            motion: m.to_file(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| MotionError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
