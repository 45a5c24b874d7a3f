//! Synthetic tendon-driven robots.
//!
//! A robot is a forest of hinge-jointed rigid links hanging off a fixed base,
//! plus muscles routed as straight segments through via points attached to
//! those links. Muscle lengths under random postures are the observed channels
//! of the grouping pipeline; the joint structure itself stays hidden from it
//! and only survives as ground-truth groups for evaluation.

mod kinematics;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kinematics::{
    forward_kinematics, link_poses, muscle_lengths, path_center, sample_random_postures,
    spatial_distance_matrix, PathCenter,
};
pub use synth::{build_synthetic_robot, SynthSpec};

/// A rigid link attached to its parent (or to the fixed base) by a hinge.
///
/// `offset` locates the joint in the parent frame. The hinge axis is expressed
/// in the link's own frame, which coincides with the parent frame at zero
/// joint angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    pub axis: [f64; 3],
}

/// A point fixed on a link, or on the base when `link` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    pub link: Option<usize>,
    pub local: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusclePath {
    pub id: usize,
    pub via_points: Vec<ViaPoint>,
}

/// Joint angles in radians, one per link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub angles: Vec<f64>,
}

impl JointConfig {
    pub fn zeros(n: usize) -> Self {
        Self {
            angles: vec![0.0; n],
        }
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(angles: Vec<f64>) -> Self {
        Self { angles }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub links: Vec<Link>,
    /// `[min, max]` per joint, radians.
    pub joint_limits: Vec<[f64; 2]>,
    pub muscles: Vec<MusclePath>,
    /// Muscle ids per ground-truth group. Polyarticular muscles appear in two groups.
    pub truth_groups: Vec<Vec<usize>>,
    /// Polyarticular muscle id → the two truth groups it belongs to.
    pub dual_memberships: BTreeMap<usize, [usize; 2]>,
}

impl RobotModel {
    pub fn joint_count(&self) -> usize {
        self.links.len()
    }

    pub fn muscle_count(&self) -> usize {
        self.muscles.len()
    }

    pub fn muscle_ids(&self) -> Vec<usize> {
        self.muscles.iter().map(|m| m.id).collect()
    }

    /// The spread reference pose: every joint at the middle of its range.
    pub fn spread_pose(&self) -> JointConfig {
        JointConfig {
            angles: self
                .joint_limits
                .iter()
                .map(|[lo, hi]| 0.5 * (lo + hi))
                .collect(),
        }
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));

        if self.joint_limits.len() != self.links.len() {
            return bad(format!(
                "{} joint limits for {} links",
                self.joint_limits.len(),
                self.links.len()
            ));
        }
        for (i, link) in self.links.iter().enumerate() {
            // Parents must precede children, which rules out cycles.
            if let Some(p) = link.parent {
                if p >= i {
                    return bad(format!("link {i} has parent {p}; parents must precede children"));
                }
            }
            let norm = link.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return bad(format!("link {i} hinge axis is not a unit vector (norm {norm})"));
            }
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return bad(format!("joint {i} limits [{lo}, {hi}] are not increasing"));
            }
        }

        let mut ids = BTreeSet::new();
        for m in &self.muscles {
            if !ids.insert(m.id) {
                return bad(format!("duplicate muscle id {}", m.id));
            }
            if m.via_points.len() < 2 {
                return bad(format!("muscle {} has fewer than 2 via points", m.id));
            }
            let frames: BTreeSet<Option<usize>> = m.via_points.iter().map(|v| v.link).collect();
            if frames.len() < 2 {
                return bad(format!("muscle {} does not span two links", m.id));
            }
            if let Some(v) = m
                .via_points
                .iter()
                .find(|v| v.link.is_some_and(|l| l >= self.links.len()))
            {
                return bad(format!(
                    "muscle {} references missing link {:?}",
                    m.id, v.link
                ));
            }
        }

        let mut seen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (g, members) in self.truth_groups.iter().enumerate() {
            for &id in members {
                if !ids.contains(&id) {
                    return bad(format!("truth group {g} lists unknown muscle {id}"));
                }
                seen.entry(id).or_default().push(g);
            }
        }
        for &id in &ids {
            let groups = seen.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            match (groups.len(), self.dual_memberships.get(&id)) {
                (1, None) => {}
                (2, Some(pair)) => {
                    let mut expected = *pair;
                    expected.sort_unstable();
                    if groups != expected {
                        return bad(format!(
                            "muscle {id} is in groups {groups:?} but dual membership says {pair:?}"
                        ));
                    }
                }
                _ => {
                    return bad(format!(
                        "muscle {id} appears in {} truth groups",
                        groups.len()
                    ))
                }
            }
        }
        for id in self.dual_memberships.keys() {
            if !ids.contains(id) {
                return bad(format!("dual membership for unknown muscle {id}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: RobotModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_link() -> RobotModel {
        RobotModel {
            links: vec![Link {
                parent: None,
                offset: [0.0; 3],
                axis: [0.0, 0.0, 1.0],
            }],
            joint_limits: vec![[-1.0, 1.0]],
            muscles: vec![
                MusclePath {
                    id: 0,
                    via_points: vec![
                        ViaPoint { link: None, local: [-1.0, 0.1, 0.0] },
                        ViaPoint { link: Some(0), local: [1.0, 0.1, 0.0] },
                    ],
                },
                MusclePath {
                    id: 1,
                    via_points: vec![
                        ViaPoint { link: None, local: [-1.0, -0.1, 0.0] },
                        ViaPoint { link: Some(0), local: [1.0, -0.1, 0.0] },
                    ],
                },
            ],
            truth_groups: vec![vec![0, 1]],
            dual_memberships: BTreeMap::new(),
        }
    }

    #[test]
    fn valid_model_passes() {
        two_link().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_limits() {
        let mut r = two_link();
        r.joint_limits[0] = [0.5, 0.5];
        assert!(matches!(r.validate(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn rejects_forward_parent() {
        let mut r = two_link();
        r.links[0].parent = Some(0);
        assert!(r.validate().is_err());
    }

    #[test]
    fn rejects_single_link_muscle() {
        let mut r = two_link();
        r.muscles[0].via_points[0].link = Some(0);
        assert!(r.validate().is_err());
    }

    #[test]
    fn rejects_uncovered_muscle() {
        let mut r = two_link();
        r.truth_groups = vec![vec![0]];
        assert!(r.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = two_link();
        let back = RobotModel::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(r, back);
    }
}
