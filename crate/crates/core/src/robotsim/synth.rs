use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Link, MusclePath, RobotModel, ViaPoint};
use crate::error::{Error, Result};

/// Parameters of a synthetic limb-style robot.
///
/// `chains` serial chains radiate from the base in the horizontal plane, each
/// with `joints_per_chain` hinges whose axes alternate between two directions
/// perpendicular to the chain. Every joint carries
/// `antagonist_pairs_per_joint` antagonist muscle pairs; `polyarticular_count`
/// extra muscles each span two adjacent joints of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub chains: usize,
    pub joints_per_chain: usize,
    pub antagonist_pairs_per_joint: usize,
    pub polyarticular_count: usize,
    /// Link length in meters.
    pub link_length: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            chains: 4,
            joints_per_chain: 3,
            antagonist_pairs_per_joint: 1,
            polyarticular_count: 4,
            link_length: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn muscle_count(&self) -> usize {
        self.chains * self.joints_per_chain * 2 * self.antagonist_pairs_per_joint
            + self.polyarticular_count
    }

    pub fn joint_count(&self) -> usize {
        self.chains * self.joints_per_chain
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.joints_per_chain == 0 {
            return bad("joints_per_chain must be at least 1");
        }
        if self.antagonist_pairs_per_joint == 0 {
            return bad("antagonist_pairs_per_joint must be at least 1");
        }
        if self.polyarticular_count > 0 && self.joints_per_chain < 2 {
            return bad("polyarticular muscles need at least 2 joints per chain");
        }
        if !(self.link_length > 0.0 && self.link_length.is_finite()) {
            return bad("link_length must be positive");
        }
        Ok(())
    }
}

// Attachment geometry relative to the link length. With these ratios every
// monoarticular muscle stays strictly monotone in its joint angle over the
// whole joint range (|tan q| < 2sr / (s^2 - r^2) holds with margin).
const ATTACH_ALONG: f64 = 0.27;
const ATTACH_RADIAL: f64 = 0.17;
const AXIAL_STEP: f64 = 0.4;
const JITTER: f64 = 0.1;
const MAX_ANGLE: f64 = 0.6;

struct ChainFrame {
    dir: Vector3<f64>,
    axes: [Vector3<f64>; 2],
}

impl ChainFrame {
    fn new(c: usize, chains: usize) -> Self {
        let phi = std::f64::consts::TAU * c as f64 / chains as f64;
        let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
        let up = Vector3::z();
        let side = dir.cross(&up).normalize();
        Self { dir, axes: [up, side] }
    }

    fn axis(&self, k: usize) -> Vector3<f64> {
        self.axes[k % 2]
    }

    /// Direction in which the muscles of joint `k` are offset from the link.
    fn normal(&self, k: usize) -> Vector3<f64> {
        self.dir.cross(&self.axis(k)).normalize()
    }
}

/// Builds the synthetic robot described by `spec`.
///
/// Ground truth has one group per joint holding that joint's monoarticular
/// muscles; each polyarticular muscle is listed in the groups of both joints
/// it spans. Geometry is jittered by the spec seed, so the same spec always
/// yields the same robot.
pub fn build_synthetic_robot(spec: &SynthSpec) -> Result<RobotModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let len = spec.link_length;
    let jpc = spec.joints_per_chain;
    let mut jitter = || 1.0 + JITTER * (2.0 * rng.random::<f64>() - 1.0);

    let frames: Vec<ChainFrame> = (0..spec.chains)
        .map(|c| ChainFrame::new(c, spec.chains))
        .collect();
    let link_index = |c: usize, k: usize| c * jpc + k;

    let mut links = Vec::with_capacity(spec.joint_count());
    let mut joint_limits = Vec::with_capacity(spec.joint_count());
    for (c, frame) in frames.iter().enumerate() {
        for k in 0..jpc {
            let parent = (k > 0).then(|| link_index(c, k - 1));
            links.push(Link {
                parent,
                offset: (frame.dir * len).into(),
                axis: frame.axis(k).into(),
            });
            // Half-range between roughly 0.82 and 1.0 times MAX_ANGLE.
            let half = MAX_ANGLE * jitter() / (1.0 + JITTER);
            joint_limits.push([-half, half]);
        }
    }

    // A point just proximal to joint (c, k), expressed in the frame that
    // carries it: the base for k = 0, otherwise the previous link.
    let proximal = |c: usize, k: usize, local: Vector3<f64>| -> ViaPoint {
        let frame = &frames[c];
        if k == 0 {
            ViaPoint {
                link: None,
                local: (frame.dir * len + local).into(),
            }
        } else {
            ViaPoint {
                link: Some(link_index(c, k - 1)),
                local: (frame.dir * len + local).into(),
            }
        }
    };

    let mut muscles = Vec::with_capacity(spec.muscle_count());
    let mut truth_groups: Vec<Vec<usize>> = vec![Vec::new(); spec.joint_count()];
    for (c, frame) in frames.iter().enumerate() {
        for k in 0..jpc {
            let axis = frame.axis(k);
            let normal = frame.normal(k);
            for p in 0..spec.antagonist_pairs_per_joint {
                for side in [1.0, -1.0] {
                    let along = ATTACH_ALONG * len * jitter();
                    let radial = ATTACH_RADIAL * len * jitter() * side;
                    let axial = AXIAL_STEP * ATTACH_RADIAL * len * p as f64;
                    let id = muscles.len();
                    muscles.push(MusclePath {
                        id,
                        via_points: vec![
                            proximal(c, k, -frame.dir * along + normal * radial + axis * axial),
                            ViaPoint {
                                link: Some(link_index(c, k)),
                                local: (frame.dir * along + normal * radial - axis * axial)
                                    .into(),
                            },
                        ],
                    });
                    truth_groups[link_index(c, k)].push(id);
                }
            }
        }
    }

    let mut dual_memberships = BTreeMap::new();
    let slots = spec.chains * jpc.saturating_sub(1);
    for p in 0..spec.polyarticular_count {
        let c = p % spec.chains;
        let k = (p / spec.chains) % (jpc - 1);
        let side = if (p / slots) % 2 == 0 { 1.0 } else { -1.0 };
        let frame = &frames[c];
        let (n0, n1) = (frame.normal(k), frame.normal(k + 1));
        let radial = ATTACH_RADIAL * len * side;
        let along = ATTACH_ALONG * len;
        let relay = (n0 + n1).normalize();
        let id = muscles.len();
        muscles.push(MusclePath {
            id,
            via_points: vec![
                proximal(c, k, -frame.dir * along * jitter() + n0 * radial * jitter()),
                ViaPoint {
                    link: Some(link_index(c, k)),
                    local: (frame.dir * 0.5 * len + relay * radial * jitter()).into(),
                },
                ViaPoint {
                    link: Some(link_index(c, k + 1)),
                    local: (frame.dir * along * jitter() + n1 * radial * jitter()).into(),
                },
            ],
        });
        let groups = [link_index(c, k), link_index(c, k + 1)];
        truth_groups[groups[0]].push(id);
        truth_groups[groups[1]].push(id);
        dual_memberships.insert(id, groups);
    }

    let robot = RobotModel {
        links,
        joint_limits,
        muscles,
        truth_groups,
        dual_memberships,
    };
    robot.validate()?;
    Ok(robot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(chains: usize, jpc: usize, pairs: usize, poly: usize) -> SynthSpec {
        SynthSpec {
            chains,
            joints_per_chain: jpc,
            antagonist_pairs_per_joint: pairs,
            polyarticular_count: poly,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn minimal_antagonist_pair() {
        let r = build_synthetic_robot(&spec(1, 1, 1, 0)).unwrap();
        assert_eq!(r.muscle_count(), 2);
        assert_eq!(r.truth_groups, vec![vec![0, 1]]);
    }

    #[test]
    fn default_robot_counts() {
        let s = spec(4, 3, 1, 4);
        let r = build_synthetic_robot(&s).unwrap();
        assert_eq!(r.muscle_count(), 28);
        assert_eq!(s.muscle_count(), 28);
        assert_eq!(r.truth_groups.len(), 12);
        assert_eq!(r.dual_memberships.len(), 4);
        assert_eq!(r.joint_count(), 12);
    }

    #[test]
    fn two_pairs_per_joint_counts() {
        let r = build_synthetic_robot(&spec(2, 2, 2, 0)).unwrap();
        assert_eq!(r.muscle_count(), 16);
        assert_eq!(r.truth_groups.len(), 4);
        assert!(r.truth_groups.iter().all(|g| g.len() == 4));
    }

    #[test]
    fn zero_chains_or_joints_rejected() {
        assert!(matches!(
            build_synthetic_robot(&spec(0, 3, 1, 0)),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            build_synthetic_robot(&spec(2, 0, 1, 0)),
            Err(Error::InvalidSpec(_))
        ));
        assert!(build_synthetic_robot(&spec(2, 1, 1, 1)).is_err());
    }

    #[test]
    fn same_seed_same_robot() {
        let a = build_synthetic_robot(&SynthSpec::default()).unwrap();
        let b = build_synthetic_robot(&SynthSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = build_synthetic_robot(&SynthSpec {
            seed: 9,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn polyarticular_muscles_span_adjacent_joints() {
        let r = build_synthetic_robot(&SynthSpec::default()).unwrap();
        for (id, [a, b]) in &r.dual_memberships {
            assert_eq!(b - a, 1, "muscle {id}");
            assert!(r.truth_groups[*a].contains(id));
            assert!(r.truth_groups[*b].contains(id));
        }
    }
}
