//! Grouping behavior checked against independent oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redungroup::grouping::{calc_eval, run, run_with, GroupingConfig, Mode};
use redungroup::relgraph::{assemble_graph, FunctionalEdge, RelationalGraph, SpatialEdge};

/// Two blocks, each of 4 channels and 2 latent units. Within-block edges
/// are strong (functional 1.0, spatial -0.001), cross-block edges weak
/// (functional 0.01, spatial -0.1).
fn planted() -> RelationalGraph {
    let mut functional = Vec::new();
    for z in 0..4 {
        for x in 0..8 {
            let weight = if z / 2 == x / 4 { 1.0 } else { 0.01 };
            functional.push(FunctionalEdge { z, x, weight });
        }
    }
    let mut spatial = Vec::new();
    for a in 0..8 {
        for b in a + 1..8 {
            let weight = if a / 4 == b / 4 { -0.001 } else { -0.1 };
            spatial.push(SpatialEdge { a, b, weight });
        }
    }
    assemble_graph(functional, spatial, (0..8).map(|i| format!("m{i}")).collect(), 4).unwrap()
}

fn block_of(v: usize) -> usize {
    if v < 8 {
        v / 4
    } else {
        (v - 8) / 2
    }
}

/// Score of group `g` for vertex `v`, straight from the edge lists.
fn oracle_score(graph: &RelationalGraph, labels: &[usize], v: usize, g: usize, alpha: f64) -> f64 {
    let n_x = graph.n_x();
    let mut func = Vec::new();
    let mut spac = 0.0;
    for e in &graph.functional {
        let (zv, xv) = (n_x + e.z, e.x);
        if zv == v && labels[xv] == g || xv == v && labels[zv] == g {
            func.push(e.weight);
        }
    }
    for e in &graph.spatial {
        if e.a == v && labels[e.b] == g || e.b == v && labels[e.a] == g {
            spac += e.weight;
        }
    }
    let mean = if func.is_empty() {
        0.0
    } else {
        func.iter().sum::<f64>() / func.len() as f64
    };
    mean + alpha * spac
}

#[test]
fn planted_partition_is_the_unique_stable_labeling() {
    let g = planted();
    let mut stable = Vec::new();
    for code in 0u32..(1 << 12) {
        let labels: Vec<usize> = (0..12).map(|v| ((code >> v) & 1) as usize).collect();
        let nx = |k| (0..8).filter(|&v| labels[v] == k).count();
        let nz = |k| (8..12).filter(|&v| labels[v] == k).count();
        if (0..2).any(|k| nx(k) < 2 || nz(k) < 1) {
            continue;
        }
        let every_vertex_best = (0..12).all(|v| {
            let own = oracle_score(&g, &labels, v, labels[v], 10.0);
            let other = oracle_score(&g, &labels, v, 1 - labels[v], 10.0);
            own > other
        });
        if every_vertex_best {
            stable.push(labels);
        }
    }
    assert_eq!(stable.len(), 2, "{stable:?}");
    for labels in stable {
        assert!((0..12).all(|v| (labels[v] == labels[0]) == (block_of(v) == 0)));
    }
}

#[test]
fn recovers_planted_blocks() {
    let g = planted();
    let hits = (0..10)
        .filter(|&seed| {
            let cfg = GroupingConfig {
                groups: 2,
                iterations: 5000,
                seed,
                ..GroupingConfig::default()
            };
            let r = run(&g, &cfg).unwrap();
            (0..12).all(|v| (r.labels[v] == r.labels[0]) == (block_of(v) == 0))
        })
        .count();
    assert!(hits >= 9, "recovered {hits}/10");
}

/// Random graph with uniform weights.
fn random_graph(n_x: usize, n_z: usize, seed: u64) -> RelationalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functional = (0..n_z)
        .flat_map(|z| (0..n_x).map(move |x| (z, x)))
        .map(|(z, x)| FunctionalEdge { z, x, weight: rng.random::<f64>() })
        .collect::<Vec<_>>();
    let spatial = (0..n_x)
        .flat_map(|a| (a + 1..n_x).map(move |b| (a, b)))
        .map(|(a, b)| SpatialEdge { a, b, weight: -0.1 * rng.random::<f64>() })
        .collect();
    assemble_graph(functional, spatial, (0..n_x).map(|i| format!("c{i}")).collect(), n_z).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn calc_eval_matches_direct_formula(
        func in proptest::collection::vec(0.0f64..2.0, 0..12),
        spac in proptest::collection::vec(-1.0f64..0.0, 0..12),
        alpha in 0.1f64..20.0,
    ) {
        let mut mean = 0.0;
        for w in &func {
            mean += w;
        }
        if !func.is_empty() {
            mean /= func.len() as f64;
        }
        let mut total = 0.0;
        for w in &spac {
            total += w;
        }
        let both = calc_eval(&func, &spac, alpha, Mode::Both);
        prop_assert!((both - (mean + alpha * total)).abs() <= 1e-12);
        let split = calc_eval(&func, &spac, alpha, Mode::Func) + calc_eval(&func, &spac, alpha, Mode::Spac);
        prop_assert_eq!(both, split);
    }

    #[test]
    fn minimum_counts_hold_after_every_step(
        seed in 0u64..1000,
        groups in 2usize..5,
        mode_index in 0usize..3,
        count_blocked in prop::bool::ANY,
    ) {
        let g = random_graph(14, 6, seed);
        let cfg = GroupingConfig {
            groups,
            iterations: 400,
            mode: Mode::ALL[mode_index],
            seed,
            count_blocked,
            ..GroupingConfig::default()
        };
        let mut ok = true;
        let r = run_with(&g, &cfg, |_, s| {
            ok &= s.nx.iter().all(|&n| n >= 2) && s.nz.iter().all(|&n| n >= 1);
        })
        .unwrap();
        prop_assert!(ok);
        prop_assert!(r.constraints.satisfied());
        prop_assert_eq!(r.labels.len(), 20);
        prop_assert_eq!(r.x_groups.iter().map(Vec::len).sum::<usize>(), 14);
        prop_assert_eq!(r.z_groups.iter().map(Vec::len).sum::<usize>(), 6);
    }
}
