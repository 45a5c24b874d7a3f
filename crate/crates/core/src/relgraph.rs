//! The relational graph: functional edges between latent units and channels,
//! and spatial edges among channels.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autoenc::FunctionalMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuildConfig {
    /// Standard deviation (meters) of Gaussian noise added to each distance.
    pub noise_std: f64,
    /// Use |W| for functional weights; raw signed values otherwise.
    pub abs_functional: bool,
    /// Fold decoder batch-norm scales into W before building edges.
    pub fold_batchnorm: bool,
    /// Seeds the distance noise.
    pub seed: u64,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            abs_functional: true,
            fold_batchnorm: false,
            seed: 0,
        }
    }
}

/// Edge between latent unit `z` and channel `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEdge {
    pub z: usize,
    pub x: usize,
    pub weight: f64,
}

/// Edge between channels `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalGraph {
    /// Channel (x-vertex) ids; x-vertex `i` is `x_ids[i]`.
    pub x_ids: Vec<String>,
    pub n_z: usize,
    pub functional: Vec<FunctionalEdge>,
    pub spatial: Vec<SpatialEdge>,
    /// Spatial scale used when the graph was built, if known.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Functional weights may be negative (raw, non-absolute mode).
    #[serde(default)]
    pub signed_functional: bool,
}

/// One functional edge per (latent, channel) pair.
pub fn build_functional_edges(w: &FunctionalMatrix, cfg: &GraphBuildConfig) -> Result<Vec<FunctionalEdge>> {
    if w.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("functional matrix has non-finite entries".into()));
    }
    Ok(w.w
        .indexed_iter()
        .map(|((z, x), &v)| FunctionalEdge {
            z,
            x,
            weight: if cfg.abs_functional { v.abs() } else { v },
        })
        .collect())
}

/// Scale that aligns the mean spatial weight with the mean functional weight:
/// `mean(functional) / mean(off-diagonal D)`.
pub fn compute_beta(functional: &[FunctionalEdge], distances: &Array2<f64>) -> Result<f64> {
    let n = distances.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += distances[[i, j]];
            }
        }
    }
    let pairs = n * n.saturating_sub(1);
    if pairs == 0 || !(sum > 0.0) {
        return Err(Error::InvalidArgument(
            "mean off-diagonal distance must be positive".into(),
        ));
    }
    let mean_d = sum / pairs as f64;
    let mean_w = if functional.is_empty() {
        0.0
    } else {
        functional.iter().map(|e| e.weight).sum::<f64>() / functional.len() as f64
    };
    Ok(mean_w / mean_d)
}

/// Complete spatial edges with weight `-β·max(0, d + ε)`, ε ~ N(0, noise_std²)
/// drawn once per unordered pair in row-major order.
pub fn build_spatial_edges(
    distances: &Array2<f64>,
    beta: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<SpatialEdge>> {
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(Error::InvalidArgument("distance matrix is not square".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be non-negative".into()));
    }
    let normal = Normal::new(0.0, noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            let noise = if noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let d = (distances[[a, b]] + noise).max(0.0);
            // `-0.0` would compare fine but prints oddly.
            let weight = if d == 0.0 { 0.0 } else { -beta * d };
            edges.push(SpatialEdge { a, b, weight });
        }
    }
    Ok(edges)
}

fn check_structure(
    functional: &[FunctionalEdge],
    spatial: &[SpatialEdge],
    n_x: usize,
    n_z: usize,
    signed: bool,
) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidGraph(m));
    let mut seen = HashSet::new();
    for e in functional {
        if e.z >= n_z || e.x >= n_x {
            return bad(format!("functional edge ({}, {}) references a missing vertex", e.z, e.x));
        }
        if !seen.insert((e.z, e.x)) {
            return bad(format!("duplicate functional edge ({}, {})", e.z, e.x));
        }
        if !e.weight.is_finite() || (!signed && e.weight < 0.0) {
            return bad(format!("functional edge ({}, {}) has weight {}", e.z, e.x, e.weight));
        }
    }
    let mut pairs = HashSet::new();
    for e in spatial {
        if e.a >= n_x || e.b >= n_x {
            return bad(format!("spatial edge ({}, {}) references a missing vertex", e.a, e.b));
        }
        if e.a == e.b {
            return bad(format!("spatial self-loop on {}", e.a));
        }
        if !pairs.insert((e.a.min(e.b), e.a.max(e.b))) {
            return bad(format!("duplicate spatial edge ({}, {})", e.a, e.b));
        }
        if !e.weight.is_finite() || e.weight > 0.0 {
            return bad(format!("spatial edge ({}, {}) has weight {}", e.a, e.b, e.weight));
        }
    }
    let expected = n_x * n_x.saturating_sub(1) / 2;
    if pairs.len() != expected {
        return bad(format!(
            "spatial edges cover {} of {expected} channel pairs",
            pairs.len()
        ));
    }
    Ok(())
}

fn normalize_spatial(mut spatial: Vec<SpatialEdge>) -> Vec<SpatialEdge> {
    for e in &mut spatial {
        if e.a > e.b {
            std::mem::swap(&mut e.a, &mut e.b);
        }
    }
    spatial
}

/// Checks and packages the two edge families. Functional weights must be
/// non-negative, spatial weights non-positive, and the spatial edges must
/// cover every channel pair exactly once.
pub fn assemble_graph(
    functional: Vec<FunctionalEdge>,
    spatial: Vec<SpatialEdge>,
    x_ids: Vec<String>,
    n_z: usize,
) -> Result<RelationalGraph> {
    check_structure(&functional, &spatial, x_ids.len(), n_z, false)?;
    Ok(RelationalGraph {
        x_ids,
        n_z,
        functional,
        spatial: normalize_spatial(spatial),
        beta: None,
        signed_functional: false,
    })
}

/// [`assemble_graph`] that accepts negative functional weights.
pub fn assemble_signed_graph(
    functional: Vec<FunctionalEdge>,
    spatial: Vec<SpatialEdge>,
    x_ids: Vec<String>,
    n_z: usize,
) -> Result<RelationalGraph> {
    check_structure(&functional, &spatial, x_ids.len(), n_z, true)?;
    Ok(RelationalGraph {
        x_ids,
        n_z,
        functional,
        spatial: normalize_spatial(spatial),
        beta: None,
        signed_functional: true,
    })
}

/// Functional edges from `w`, β from their mean, noisy spatial edges from
/// `distances`, assembled.
pub fn build_graph(
    w: &FunctionalMatrix,
    distances: &Array2<f64>,
    x_ids: Vec<String>,
    cfg: &GraphBuildConfig,
) -> Result<RelationalGraph> {
    if distances.nrows() != w.channel_count() {
        return Err(Error::DimensionMismatch {
            what: "distance matrix",
            expected: w.channel_count(),
            got: distances.nrows(),
        });
    }
    let functional = build_functional_edges(w, cfg)?;
    let beta = compute_beta(&functional, distances)?;
    let spatial = build_spatial_edges(distances, beta, cfg.noise_std, cfg.seed)?;
    let mut g = if cfg.abs_functional {
        assemble_graph(functional, spatial, x_ids, w.latent_count())?
    } else {
        assemble_signed_graph(functional, spatial, x_ids, w.latent_count())?
    };
    g.beta = Some(beta);
    Ok(g)
}

impl RelationalGraph {
    pub fn n_x(&self) -> usize {
        self.x_ids.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.n_x() + self.n_z
    }

    /// Re-runs the structural checks, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_structure(
            &self.functional,
            &self.spatial,
            self.n_x(),
            self.n_z,
            self.signed_functional,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: RelationalGraph = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
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

    /// Graphviz rendering. With `labels` (one per vertex, x-vertices first)
    /// vertices are filled with a per-group color. Edges whose |weight| falls
    /// below `min_abs_weight` are left out.
    pub fn to_dot(&self, labels: Option<&[usize]>, min_abs_weight: f64) -> String {
        let groups = labels.map(|l| l.iter().copied().max().map_or(0, |m| m + 1));
        let color = |v: usize| -> String {
            match (labels, groups) {
                (Some(l), Some(n)) if n > 0 => {
                    let hue = l[v] as f64 / n as f64;
                    format!(" style=filled fillcolor=\"{hue:.3} 0.55 0.95\"")
                }
                _ => String::new(),
            }
        };
        let mut out = String::from("graph relational {\n  node [fontname=\"Helvetica\"];\n");
        for (i, id) in self.x_ids.iter().enumerate() {
            let _ = writeln!(out, "  x{i} [label=\"{id}\" shape=ellipse{}];", color(i));
        }
        for z in 0..self.n_z {
            let _ = writeln!(out, "  z{z} [label=\"z{z}\" shape=box{}];", color(self.n_x() + z));
        }
        for e in &self.functional {
            if e.weight.abs() >= min_abs_weight {
                let _ = writeln!(
                    out,
                    "  z{} -- x{} [kind=functional weight={:.6} color=\"#3060c0\"];",
                    e.z, e.x, e.weight
                );
            }
        }
        for e in &self.spatial {
            if e.weight.abs() >= min_abs_weight {
                let _ = writeln!(
                    out,
                    "  x{} -- x{} [kind=spatial weight={:.6} color=\"#c06030\" style=dashed];",
                    e.a, e.b, e.weight
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn fm(w: Array2<f64>) -> FunctionalMatrix {
        FunctionalMatrix { w }
    }

    #[test]
    fn functional_edges_use_absolute_values() {
        let cfg = GraphBuildConfig::default();
        let e = build_functional_edges(&fm(array![[0.0]]), &cfg).unwrap();
        assert_eq!(e, vec![FunctionalEdge { z: 0, x: 0, weight: 0.0 }]);
        let e = build_functional_edges(&fm(array![[-0.3, 0.5]]), &cfg).unwrap();
        assert_eq!(e.iter().map(|e| e.weight).collect::<Vec<_>>(), vec![0.3, 0.5]);
        let raw = GraphBuildConfig {
            abs_functional: false,
            ..cfg
        };
        let e = build_functional_edges(&fm(array![[-0.3, 0.5]]), &raw).unwrap();
        assert_eq!(e[0].weight, -0.3);
    }

    #[test]
    fn beta_is_ratio_of_means() {
        let f: Vec<FunctionalEdge> = [0.1, 0.3]
            .iter()
            .map(|&weight| FunctionalEdge { z: 0, x: 0, weight })
            .collect();
        let d = array![[0.0, 0.5], [0.5, 0.0]];
        assert!((compute_beta(&f, &d).unwrap() - 0.4).abs() < 1e-15);
        let zeros = vec![FunctionalEdge { z: 0, x: 0, weight: 0.0 }];
        assert_eq!(compute_beta(&zeros, &d).unwrap(), 0.0);
        let unit = vec![FunctionalEdge { z: 0, x: 0, weight: 1.0 }];
        let d1 = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        assert_eq!(compute_beta(&unit, &d1).unwrap(), 1.0);
        assert!(compute_beta(&unit, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn noiseless_spatial_weight_is_minus_beta_d() {
        let d = array![[0.0, 0.5], [0.5, 0.0]];
        let e = build_spatial_edges(&d, 2.0, 0.0, 0).unwrap();
        assert_eq!(e, vec![SpatialEdge { a: 0, b: 1, weight: -1.0 }]);
    }

    #[test]
    fn noisy_spatial_edges_are_seeded_and_non_positive() {
        let n = 10;
        let d = Array2::from_shape_fn((n, n), |(i, j)| (i as f64 - j as f64).abs() * 0.05);
        let a = build_spatial_edges(&d, 1.0, 0.1, 5).unwrap();
        let b = build_spatial_edges(&d, 1.0, 0.1, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_spatial_edges(&d, 1.0, 0.1, 6).unwrap());
        assert_eq!(a.len(), n * (n - 1) / 2);
        assert!(a.iter().all(|e| e.weight <= 0.0));
    }

    #[test]
    fn assemble_rejects_structural_errors() {
        let f = vec![FunctionalEdge { z: 0, x: 1, weight: 0.2 }];
        let s = vec![SpatialEdge { a: 0, b: 1, weight: -0.1 }];
        assert!(assemble_graph(f.clone(), s.clone(), ids(2), 1).is_ok());

        let dup = vec![f[0], f[0]];
        assert!(assemble_graph(dup, s.clone(), ids(2), 1).is_err());

        // A functional edge can only name a latent unit on one end; pointing it
        // at a vertex beyond the latent range is a dangling reference.
        let dangling = vec![FunctionalEdge { z: 1, x: 1, weight: 0.2 }];
        assert!(matches!(
            assemble_graph(dangling, s.clone(), ids(2), 1),
            Err(Error::InvalidGraph(_))
        ));

        assert!(assemble_graph(f.clone(), vec![], ids(2), 1).is_err());
        let positive = vec![SpatialEdge { a: 0, b: 1, weight: 0.1 }];
        assert!(assemble_graph(f.clone(), positive, ids(2), 1).is_err());
        let negative = vec![FunctionalEdge { z: 0, x: 1, weight: -0.2 }];
        assert!(assemble_graph(negative.clone(), s.clone(), ids(2), 1).is_err());
        assert!(assemble_signed_graph(negative, s, ids(2), 1).is_ok());
    }

    #[test]
    fn dot_output_colors_groups() {
        let w = fm(array![[0.5, 0.1]]);
        let d = array![[0.0, 0.3], [0.3, 0.0]];
        let g = build_graph(&w, &d, ids(2), &GraphBuildConfig::default()).unwrap();
        let dot = g.to_dot(Some(&[0, 1, 0]), 0.0);
        assert!(dot.starts_with("graph relational {"));
        assert!(dot.contains("fillcolor"));
        assert!(dot.contains("z0 -- x0"));
        assert!(dot.contains("x0 -- x1"));
        assert!(!g.to_dot(None, 0.0).contains("fillcolor"));
    }

    #[test]
    fn json_round_trip() {
        let w = fm(array![[0.5, 0.1, 0.2]]);
        let d = array![[0.0, 0.3, 0.4], [0.3, 0.0, 0.5], [0.4, 0.5, 0.0]];
        let g = build_graph(&w, &d, ids(3), &GraphBuildConfig::default()).unwrap();
        assert_eq!(RelationalGraph::from_json(&g.to_json().unwrap()).unwrap(), g);
    }

    proptest! {
        #[test]
        fn beta_alignment_without_noise(
            nz in 1usize..4,
            nx in 2usize..7,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Array2::from_shape_simple_fn((nz, nx), || rng.random::<f64>() * 2.0 - 1.0);
            let pts: Vec<[f64; 2]> = (0..nx).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
            let d = Array2::from_shape_fn((nx, nx), |(i, j)| {
                ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()
            });
            let cfg = GraphBuildConfig { noise_std: 0.0, ..Default::default() };
            let g = build_graph(&fm(w), &d, ids(nx), &cfg).unwrap();
            prop_assert_eq!(g.functional.len(), nz * nx);
            prop_assert_eq!(g.spatial.len(), nx * (nx - 1) / 2);
            let beta = g.beta.unwrap();
            for e in &g.spatial {
                prop_assert!((e.weight + beta * d[[e.a, e.b]]).abs() < 1e-15);
            }
            let mean_f = g.functional.iter().map(|e| e.weight).sum::<f64>() / g.functional.len() as f64;
            let mean_s = g.spatial.iter().map(|e| e.weight.abs()).sum::<f64>() / g.spatial.len() as f64;
            prop_assert!((mean_f - mean_s).abs() < 1e-12);
        }
    }
}
