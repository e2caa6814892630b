use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_JOINTS: usize = 21;
/// Scalars per joint row: position 3, two rotation axes 6, velocity 3, root velocity 3.
pub const DOF: usize = 15;

/// One of the five body parts the skeleton is partitioned into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodyPart {
    LL,
    RL,
    SP,
    LA,
    RA,
}

impl BodyPart {
    pub const ALL: [BodyPart; 5] = [
        BodyPart::LL,
        BodyPart::RL,
        BodyPart::SP,
        BodyPart::LA,
        BodyPart::RA,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BodyPart> {
        Self::ALL.get(i).copied()
    }

    /// Left/right counterpart; the spine maps to itself.
    pub fn mirrored(self) -> BodyPart {
        match self {
            BodyPart::LL => BodyPart::RL,
            BodyPart::RL => BodyPart::LL,
            BodyPart::LA => BodyPart::RA,
            BodyPart::RA => BodyPart::LA,
            BodyPart::SP => BodyPart::SP,
        }
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BodyPart::LL => "LL",
            BodyPart::RL => "RL",
            BodyPart::SP => "SP",
            BodyPart::LA => "LA",
            BodyPart::RA => "RA",
        })
    }
}

impl FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LL" => Ok(BodyPart::LL),
            "RL" => Ok(BodyPart::RL),
            "SP" => Ok(BodyPart::SP),
            "LA" => Ok(BodyPart::LA),
            "RA" => Ok(BodyPart::RA),
            other => Err(Error::Contract(format!("unknown body part `{other}`"))),
        }
    }
}

/// Stock joint names; also the default retarget map from BVH joint names.
pub const DEFAULT_JOINT_NAMES: [&str; N_JOINTS] = [
    "Hips",
    "LeftUpLeg",
    "LeftLeg",
    "LeftFoot",
    "LeftToeBase",
    "RightUpLeg",
    "RightLeg",
    "RightFoot",
    "RightToeBase",
    "Spine",
    "Spine1",
    "Neck",
    "Head",
    "LeftShoulder",
    "LeftArm",
    "LeftForeArm",
    "LeftHand",
    "RightShoulder",
    "RightArm",
    "RightForeArm",
    "RightHand",
];

const DEFAULT_PARENTS: [i32; N_JOINTS] = [
    -1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 10, 13, 14, 15, 10, 17, 18, 19,
];

/// Part membership: legs 1-8, arms 13-20, spine 0 and 9-12.
pub fn default_part_of(joint: usize) -> BodyPart {
    match joint {
        1..=4 => BodyPart::LL,
        5..=8 => BodyPart::RL,
        13..=16 => BodyPart::LA,
        17..=20 => BodyPart::RA,
        _ => BodyPart::SP,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    /// Rest offset from the parent in meters.
    pub offset: Vector3<f64>,
}

/// The fixed 21-joint character skeleton with its five-part labelling.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    parts: [BodyPart; N_JOINTS],
    height: f64,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.len() != N_JOINTS {
            return Err(Error::Retarget(format!(
                "skeleton needs exactly {N_JOINTS} joints, got {}",
                joints.len()
            )));
        }
        if joints[0].parent.is_some() {
            return Err(Error::Retarget("joint 0 must be the root".into()));
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::Retarget(format!(
                        "joint {i} (`{}`) must have a parent with a smaller index",
                        j.name
                    )))
                }
            }
        }
        let parts = std::array::from_fn(default_part_of);
        let mut sk = Skeleton {
            joints,
            parts,
            height: 0.0,
        };
        let rest = sk.rest_positions();
        let (lo, hi) = rest
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.y), hi.max(p.y))
            });
        sk.height = hi - lo;
        Ok(sk)
    }

    /// Stock proportions in meters; Y up, the character faces +Z with its left side on +X.
    pub fn standard() -> Self {
        let offsets: [[f64; 3]; N_JOINTS] = [
            [0.0, 0.0, 0.0],
            [0.09, -0.06, 0.0],
            [0.0, -0.42, 0.0],
            [0.0, -0.41, 0.0],
            [0.0, -0.05, 0.13],
            [-0.09, -0.06, 0.0],
            [0.0, -0.42, 0.0],
            [0.0, -0.41, 0.0],
            [0.0, -0.05, 0.13],
            [0.0, 0.11, 0.0],
            [0.0, 0.22, 0.0],
            [0.0, 0.2, 0.0],
            [0.0, 0.12, 0.0],
            [0.04, 0.17, 0.0],
            [0.13, 0.0, 0.0],
            [0.27, 0.0, 0.0],
            [0.25, 0.0, 0.0],
            [-0.04, 0.17, 0.0],
            [-0.13, 0.0, 0.0],
            [-0.27, 0.0, 0.0],
            [-0.25, 0.0, 0.0],
        ];
        let joints = (0..N_JOINTS)
            .map(|i| Joint {
                name: DEFAULT_JOINT_NAMES[i].to_string(),
                parent: usize::try_from(DEFAULT_PARENTS[i]).ok(),
                offset: Vector3::from(offsets[i]),
            })
            .collect();
        Skeleton::new(joints).expect("stock skeleton is valid")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn offset(&self, j: usize) -> Vector3<f64> {
        self.joints[j].offset
    }

    pub fn part_of(&self, j: usize) -> BodyPart {
        self.parts[j]
    }

    /// Joints of `part` in index order (which follows the kinematic chain).
    pub fn joints_of(&self, part: BodyPart) -> Vec<usize> {
        (0..N_JOINTS).filter(|&j| self.parts[j] == part).collect()
    }

    /// Vertical extent of the rest pose in meters.
    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(N_JOINTS);
        for j in &self.joints {
            let p = match j.parent {
                Some(p) => out[p] + j.offset,
                None => j.offset,
            };
            out.push(p);
        }
        out
    }

    /// Joint index swapped with its left/right counterpart (chains matched in order).
    pub fn mirror_map(&self) -> [usize; N_JOINTS] {
        let mut map: [usize; N_JOINTS] = std::array::from_fn(|j| j);
        for (a, b) in [(BodyPart::LL, BodyPart::RL), (BodyPart::LA, BodyPart::RA)] {
            for (&x, &y) in self.joints_of(a).iter().zip(&self.joints_of(b)) {
                map[x] = y;
                map[y] = x;
            }
        }
        map
    }

    /// (hip, knee, ankle, toe) of the left and right leg chains.
    pub fn leg_chains(&self) -> [[usize; 4]; 2] {
        let chain = |p| {
            let j = self.joints_of(p);
            [j[0], j[1], j[2], j[3]]
        };
        [chain(BodyPart::LL), chain(BodyPart::RL)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_partition() {
        let sk = Skeleton::standard();
        assert_eq!(sk.joints_of(BodyPart::SP), vec![0, 9, 10, 11, 12]);
        assert_eq!(sk.joints_of(BodyPart::LL), vec![1, 2, 3, 4]);
        assert_eq!(sk.joints_of(BodyPart::RA), vec![17, 18, 19, 20]);
        let total: usize = BodyPart::ALL.iter().map(|&p| sk.joints_of(p).len()).sum();
        assert_eq!(total, N_JOINTS);
        assert!(sk.height() > 1.4 && sk.height() < 1.8);
    }

    #[test]
    fn mirror_map_is_involution() {
        let m = Skeleton::standard().mirror_map();
        for j in 0..N_JOINTS {
            assert_eq!(m[m[j]], j);
        }
        assert_eq!(m[1], 5);
        assert_eq!(m[16], 20);
        assert_eq!(m[10], 10);
    }

    #[test]
    fn rejects_bad_topology() {
        let mut joints = Skeleton::standard().joints().to_vec();
        joints[3].parent = Some(7);
        assert!(matches!(Skeleton::new(joints), Err(Error::Retarget(_))));
        let joints = Skeleton::standard().joints()[..20].to_vec();
        assert!(Skeleton::new(joints).is_err());
    }
}
