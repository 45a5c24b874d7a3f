//! Exhaustive checks of the consistency metric on a six-muscle universe.

use std::collections::{BTreeMap, BTreeSet};

use redungroup::evalharness::{consistency, mismatch, GroundTruth};

const MUSCLES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// G = {a, b, c, d}, H = {d, e, f}; d belongs to both.
fn truth() -> GroundTruth {
    let g: BTreeSet<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let h: BTreeSet<String> = ["d", "e", "f"].iter().map(|s| s.to_string()).collect();
    let mut duals = BTreeMap::new();
    duals.insert("d".to_string(), [0, 1]);
    GroundTruth::new(vec![g, h], duals).unwrap()
}

fn subset(mask: u32) -> BTreeSet<String> {
    (0..6)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| MUSCLES[i].to_string())
        .collect()
}

/// Every set partition of the six muscles, as restricted growth strings.
fn partitions() -> Vec<Vec<BTreeSet<String>>> {
    fn grow(prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == 6 {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for b in 0..=next {
            prefix.push(b);
            grow(prefix, out);
            prefix.pop();
        }
    }
    let mut codes = Vec::new();
    grow(&mut Vec::new(), &mut codes);
    codes
        .into_iter()
        .map(|code| {
            let blocks = code.iter().max().unwrap() + 1;
            (0..blocks)
                .map(|b| {
                    (0..6)
                        .filter(|&i| code[i] == b)
                        .map(|i| MUSCLES[i].to_string())
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Mismatch counted element by element, without set algebra.
fn naive_mismatch(core: &[&str], wide: &[&str], proposed: &BTreeSet<String>) -> usize {
    let missing = core.iter().filter(|m| !proposed.contains(**m)).count();
    let foreign = proposed.iter().filter(|m| !wide.contains(&m.as_str())).count();
    missing + foreign
}

#[test]
fn partition_count_is_bell_six() {
    assert_eq!(partitions().len(), 203);
}

#[test]
fn mismatch_zero_iff_between_core_and_wide() {
    let t = truth();
    for g in 0..2 {
        let core = t.core(g);
        let wide = t.wide(g);
        for mask in 0..64 {
            let p = subset(mask);
            let between = core.is_subset(&p) && p.is_subset(&wide);
            assert_eq!(mismatch(&t, g, &p) == 0, between, "group {g}, proposed {p:?}");
        }
    }
}

#[test]
fn mismatch_matches_naive_count() {
    let t = truth();
    let cores = [vec!["a", "b", "c"], vec!["e", "f"]];
    let wides = [vec!["a", "b", "c", "d"], vec!["d", "e", "f"]];
    for g in 0..2 {
        for mask in 0..64 {
            let p = subset(mask);
            assert_eq!(mismatch(&t, g, &p), naive_mismatch(&cores[g], &wides[g], &p));
        }
    }
}

#[test]
fn scores_are_monotone_and_match_a_direct_count() {
    let t = truth();
    for proposed in partitions() {
        for bijective in [false, true] {
            let r = consistency(&proposed, &t, bijective).unwrap();
            assert!(r.a0 <= r.a1 && r.a1 <= r.a2, "{proposed:?}: {r:?}");
            for v in [r.a0, r.a1, r.a2] {
                assert!((0.0..=100.0).contains(&v));
            }
            if !bijective {
                for k in 0..3 {
                    let hits = (0..2)
                        .filter(|&g| proposed.iter().any(|p| mismatch(&t, g, p) <= k))
                        .count();
                    assert_eq!(r.a(k), 50.0 * hits as f64);
                }
            } else {
                // With two truth groups a one-to-one match exists iff a
                // distinct proposed group is within tolerance for each.
                for k in 0..3 {
                    let ok = |g: usize, i: usize| mismatch(&t, g, &proposed[i]) <= k;
                    let n = proposed.len();
                    let both = (0..n).any(|i| (0..n).any(|j| i != j && ok(0, i) && ok(1, j)));
                    let one = (0..n).any(|i| ok(0, i) || ok(1, i));
                    let expected = if both { 100.0 } else if one { 50.0 } else { 0.0 };
                    assert_eq!(r.a(k), expected, "{proposed:?} k={k}");
                }
            }
        }
    }
}

#[test]
fn scores_ignore_group_order() {
    let t = truth();
    let swapped = GroundTruth::new(
        vec![t.groups[1].clone(), t.groups[0].clone()],
        [("d".to_string(), [1, 0])].into_iter().collect(),
    )
    .unwrap();
    for proposed in partitions() {
        for bijective in [false, true] {
            let r = consistency(&proposed, &t, bijective).unwrap();
            let s = consistency(&proposed, &swapped, bijective).unwrap();
            assert_eq!((r.a0, r.a1, r.a2), (s.a0, s.a1, s.a2));
            for perm in permutations(proposed.len()) {
                let relabeled: Vec<BTreeSet<String>> = perm.iter().map(|&i| proposed[i].clone()).collect();
                let q = consistency(&relabeled, &t, bijective).unwrap();
                assert_eq!((r.a0, r.a1, r.a2), (q.a0, q.a1, q.a2));
            }
        }
    }
}
