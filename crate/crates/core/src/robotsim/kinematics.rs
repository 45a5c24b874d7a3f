use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{JointConfig, RobotModel};
use crate::datastore::Dataset;
use crate::error::{Error, Result};

/// Which point along a muscle path stands in for its location.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathCenter {
    /// Point at half the arc length of the piecewise-linear path.
    #[default]
    ArcMidpoint,
    /// Mean of the via points.
    Centroid,
}

/// World pose of every link frame for configuration `q`.
pub fn link_poses(robot: &RobotModel, q: &JointConfig) -> Result<Vec<Isometry3<f64>>> {
    if q.angles.len() != robot.joint_count() {
        return Err(Error::DimensionMismatch {
            what: "joint configuration",
            expected: robot.joint_count(),
            got: q.angles.len(),
        });
    }
    let mut poses: Vec<Isometry3<f64>> = Vec::with_capacity(robot.links.len());
    for (link, &angle) in robot.links.iter().zip(&q.angles) {
        let parent = match link.parent {
            Some(p) => poses[p],
            None => Isometry3::identity(),
        };
        let axis = Unit::new_normalize(Vector3::from(link.axis));
        let joint = Isometry3::from_parts(
            Translation3::from(Vector3::from(link.offset)),
            UnitQuaternion::from_axis_angle(&axis, angle),
        );
        poses.push(parent * joint);
    }
    Ok(poses)
}

/// World positions of every via point, grouped per muscle.
pub fn forward_kinematics(robot: &RobotModel, q: &JointConfig) -> Result<Vec<Vec<Point3<f64>>>> {
    let poses = link_poses(robot, q)?;
    Ok(world_paths(robot, &poses))
}

fn world_paths(robot: &RobotModel, poses: &[Isometry3<f64>]) -> Vec<Vec<Point3<f64>>> {
    robot
        .muscles
        .iter()
        .map(|m| {
            m.via_points
                .iter()
                .map(|v| {
                    let p = Point3::from(v.local);
                    match v.link {
                        Some(l) => poses[l] * p,
                        None => p,
                    }
                })
                .collect()
        })
        .collect()
}

fn path_length(points: &[Point3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Muscle lengths in meters: the summed length of each via-point polyline.
pub fn muscle_lengths(robot: &RobotModel, q: &JointConfig) -> Result<Vec<f64>> {
    Ok(forward_kinematics(robot, q)?
        .iter()
        .map(|p| path_length(p))
        .collect())
}

/// Samples `n` postures uniformly inside the joint limits and records the raw
/// muscle lengths of each.
pub fn sample_random_postures(robot: &RobotModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = robot.muscle_count();
    let mut values = Array2::zeros((n, m));
    let mut q = JointConfig::zeros(robot.joint_count());
    for mut row in values.rows_mut() {
        for (a, [lo, hi]) in q.angles.iter_mut().zip(&robot.joint_limits) {
            *a = lo + (hi - lo) * rng.random::<f64>();
        }
        let poses = link_poses(robot, &q)?;
        for (dst, path) in row.iter_mut().zip(world_paths(robot, &poses)) {
            *dst = path_length(&path);
        }
    }
    let ids = robot.muscles.iter().map(|m| m.id.to_string()).collect();
    Dataset::new(values, ids)
}

/// The representative point of a polyline.
pub fn path_center(points: &[Point3<f64>], center: PathCenter) -> Point3<f64> {
    match center {
        PathCenter::Centroid => {
            let sum = points
                .iter()
                .fold(Vector3::zeros(), |acc, p| acc + p.coords);
            Point3::from(sum / points.len() as f64)
        }
        PathCenter::ArcMidpoint => {
            let half = 0.5 * path_length(points);
            let mut walked = 0.0;
            for w in points.windows(2) {
                let seg = (w[1] - w[0]).norm();
                if walked + seg >= half && seg > 0.0 {
                    let t = (half - walked) / seg;
                    return w[0] + (w[1] - w[0]) * t;
                }
                walked += seg;
            }
            points[points.len() - 1]
        }
    }
}

/// Pairwise distances (meters) between muscle-path centers at `reference`.
pub fn spatial_distance_matrix(
    robot: &RobotModel,
    reference: &JointConfig,
    center: PathCenter,
) -> Result<Array2<f64>> {
    let centers: Vec<Point3<f64>> = forward_kinematics(robot, reference)?
        .iter()
        .map(|p| path_center(p, center))
        .collect();
    let m = centers.len();
    let mut d = Array2::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let dist = (centers[i] - centers[j]).norm();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    Ok(d)
}
