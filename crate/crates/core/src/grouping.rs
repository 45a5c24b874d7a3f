//! Constrained randomized grouping of the relational graph, and the
//! Kruskal-merge baseline.
//!
//! Vertices are indexed with the x-vertices (channels) first, `0..n_x`,
//! followed by the z-vertices (latent units), `n_x..n_x + n_z`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relgraph::RelationalGraph;

/// Which edge families enter the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Func,
    Spac,
    Both,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Func, Mode::Spac, Mode::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Func => "func",
            Mode::Spac => "spac",
            Mode::Both => "both",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "func" => Ok(Mode::Func),
            "spac" => Ok(Mode::Spac),
            "both" => Ok(Mode::Both),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected func, spac or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    /// Number of groups.
    pub groups: usize,
    /// Minimum x-vertices per group.
    pub min_x: usize,
    /// Minimum z-vertices per group.
    pub min_z: usize,
    /// Number of counted iterations.
    pub iterations: usize,
    /// Weight of the spatial term.
    pub alpha: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Count constraint-blocked picks as iterations. Off by default, so the
    /// iteration budget counts moves only.
    pub count_blocked: bool,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            groups: 14,
            min_x: 2,
            min_z: 1,
            iterations: 30000,
            alpha: 10.0,
            mode: Mode::Both,
            seed: 0,
            count_blocked: false,
        }
    }
}

impl GroupingConfig {
    /// Per-group x quota used at initialization: the minimum, raised if
    /// needed so that every group starts with more x- than z-vertices.
    pub fn x_quota(&self) -> usize {
        self.min_x.max(self.min_z + 1)
    }

    /// Checks the configuration against a graph with `n_x` channels and
    /// `n_z` latent units.
    pub fn validate(&self, n_x: usize, n_z: usize) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::InvalidArgument("need at least 2 groups".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.groups * self.x_quota() > n_x {
            return Err(Error::Infeasible(format!(
                "{} groups x {} x-vertices exceeds {} x-vertices",
                self.groups,
                self.x_quota(),
                n_x
            )));
        }
        if self.groups * self.min_z > n_z {
            return Err(Error::Infeasible(format!(
                "{} groups x {} z-vertices exceeds {} z-vertices",
                self.groups, self.min_z, n_z
            )));
        }
        Ok(())
    }
}

/// Score of one group for one vertex, from the weights of the edges joining
/// them: mean functional weight (0 when there are none) plus `alpha` times
/// the summed spatial weight, with one term dropped in the single-family
/// modes.
pub fn calc_eval(functional: &[f64], spatial: &[f64], alpha: f64, mode: Mode) -> f64 {
    let f_sum: f64 = functional.iter().sum();
    let s_sum: f64 = spatial.iter().sum();
    combine(f_sum, functional.len(), s_sum, alpha, mode)
}

fn combine(f_sum: f64, f_count: usize, s_sum: f64, alpha: f64, mode: Mode) -> f64 {
    let func = if f_count == 0 { 0.0 } else { f_sum / f_count as f64 };
    let spac = alpha * s_sum;
    match mode {
        Mode::Func => func,
        Mode::Spac => spac,
        Mode::Both => func + spac,
    }
}

#[derive(Debug, Clone, Copy)]
enum EdgeKind {
    Functional,
    Spatial,
}

/// Per-vertex incidence lists of a relational graph.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    n_x: usize,
    n_z: usize,
    adjacent: Vec<Vec<(usize, f64, EdgeKind)>>,
}

impl EdgeIndex {
    pub fn new(graph: &RelationalGraph) -> Self {
        let n_x = graph.n_x();
        let mut adjacent = vec![Vec::new(); graph.vertex_count()];
        for e in &graph.functional {
            let z = n_x + e.z;
            adjacent[z].push((e.x, e.weight, EdgeKind::Functional));
            adjacent[e.x].push((z, e.weight, EdgeKind::Functional));
        }
        for e in &graph.spatial {
            adjacent[e.a].push((e.b, e.weight, EdgeKind::Spatial));
            adjacent[e.b].push((e.a, e.weight, EdgeKind::Spatial));
        }
        EdgeIndex {
            n_x,
            n_z: graph.n_z,
            adjacent,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn vertex_count(&self) -> usize {
        self.n_x + self.n_z
    }

    pub fn is_x(&self, v: usize) -> bool {
        v < self.n_x
    }

    /// Score of every group for vertex `v` under `labels`.
    pub fn scores(&self, v: usize, labels: &[usize], groups: usize, alpha: f64, mode: Mode) -> Vec<f64> {
        let mut f_sum = vec![0.0; groups];
        let mut f_count = vec![0usize; groups];
        let mut s_sum = vec![0.0; groups];
        for &(u, w, kind) in &self.adjacent[v] {
            let g = labels[u];
            match kind {
                EdgeKind::Functional => {
                    f_sum[g] += w;
                    f_count[g] += 1;
                }
                EdgeKind::Spatial => s_sum[g] += w,
            }
        }
        (0..groups)
            .map(|g| combine(f_sum[g], f_count[g], s_sum[g], alpha, mode))
            .collect()
    }
}

/// Index of the highest score, ties going to the lowest index.
pub fn top_group(scores: &[f64]) -> usize {
    let mut best = 0;
    for (g, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = g;
        }
    }
    best
}

/// Source of the random decisions made by [`step`].
pub trait Chooser {
    /// Uniform vertex index in `0..n`.
    fn vertex(&mut self, n: usize) -> usize;
    /// True with probability `p`.
    fn greedy(&mut self, p: f64) -> bool;
    /// Uniform group index in `0..n`.
    fn group(&mut self, n: usize) -> usize;
}

/// [`Chooser`] backed by a random number generator.
#[derive(Debug, Clone)]
pub struct RngChooser<R>(pub R);

impl<R: Rng> Chooser for RngChooser<R> {
    fn vertex(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    fn greedy(&mut self, p: f64) -> bool {
        self.0.random::<f64>() < p
    }

    fn group(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingState {
    /// Group of every vertex, x-vertices first.
    pub labels: Vec<usize>,
    /// x-vertex count per group.
    pub nx: Vec<usize>,
    /// z-vertex count per group.
    pub nz: Vec<usize>,
    pub n_iter: usize,
    n_x: usize,
}

impl GroupingState {
    /// State from explicit labels.
    pub fn from_labels(labels: Vec<usize>, n_x: usize, groups: usize) -> Result<Self> {
        if n_x > labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n_x,
                got: labels.len(),
            });
        }
        let mut nx = vec![0; groups];
        let mut nz = vec![0; groups];
        for (v, &g) in labels.iter().enumerate() {
            if g >= groups {
                return Err(Error::InvalidArgument(format!(
                    "label {g} of vertex {v} is not below {groups}"
                )));
            }
            if v < n_x {
                nx[g] += 1;
            } else {
                nz[g] += 1;
            }
        }
        Ok(GroupingState {
            labels,
            nx,
            nz,
            n_iter: 0,
            n_x,
        })
    }

    pub fn groups(&self) -> usize {
        self.nx.len()
    }

    /// Whether the constraints let vertex `v` leave its group.
    pub fn can_leave(&self, v: usize, cfg: &GroupingConfig) -> bool {
        let g = self.labels[v];
        if v < self.n_x {
            self.nx[g] > cfg.min_x && self.nx[g] > self.nz[g] + 1
        } else {
            self.nz[g] > cfg.min_z
        }
    }

    /// Whether any vertex at all may leave its group.
    pub fn any_movable(&self, cfg: &GroupingConfig) -> bool {
        (0..self.groups()).any(|g| {
            let x = self.nx[g] > 0 && self.nx[g] > cfg.min_x && self.nx[g] > self.nz[g] + 1;
            let z = self.nz[g] > 0 && self.nz[g] > cfg.min_z;
            x || z
        })
    }

    fn relabel(&mut self, v: usize, to: usize) {
        let from = self.labels[v];
        if v < self.n_x {
            self.nx[from] -= 1;
            self.nx[to] += 1;
        } else {
            self.nz[from] -= 1;
            self.nz[to] += 1;
        }
        self.labels[v] = to;
    }
}

/// Random initial labels meeting the per-group quotas: every group gets
/// [`GroupingConfig::x_quota`] x-vertices and `min_z` z-vertices from a seeded
/// shuffle. Remaining x-vertices go to uniformly random groups, then
/// remaining z-vertices go to uniformly random groups that keep more x- than
/// z-vertices. When no such group is left the z-vertex goes to a random group
/// with the largest x surplus.
pub fn initialize_groups(graph: &RelationalGraph, cfg: &GroupingConfig, seed: u64) -> Result<GroupingState> {
    let n_x = graph.n_x();
    let n_z = graph.n_z;
    cfg.validate(n_x, n_z)?;
    let groups = cfg.groups;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0; n_x + n_z];
    let mut nx = vec![0; groups];
    let mut nz = vec![0; groups];

    let mut xs: Vec<usize> = (0..n_x).collect();
    xs.shuffle(&mut rng);
    let quota = cfg.x_quota();
    for (i, &v) in xs.iter().enumerate() {
        let g = if i < groups * quota {
            i / quota
        } else {
            rng.random_range(0..groups)
        };
        labels[v] = g;
        nx[g] += 1;
    }

    let mut zs: Vec<usize> = (n_x..n_x + n_z).collect();
    zs.shuffle(&mut rng);
    let mut squeezed = 0;
    for (i, &v) in zs.iter().enumerate() {
        let g = if i < groups * cfg.min_z {
            i / cfg.min_z
        } else {
            let open: Vec<usize> = (0..groups).filter(|&g| nx[g] >= nz[g] + 2).collect();
            if open.is_empty() {
                squeezed += 1;
                let best = (0..groups).map(|g| nx[g] as i64 - nz[g] as i64).max().unwrap_or(0);
                let tied: Vec<usize> = (0..groups)
                    .filter(|&g| nx[g] as i64 - nz[g] as i64 == best)
                    .collect();
                tied[rng.random_range(0..tied.len())]
            } else {
                open[rng.random_range(0..open.len())]
            }
        };
        labels[v] = g;
        nz[g] += 1;
    }
    if squeezed > 0 {
        log::warn!(
            "{squeezed} z-vertices placed in groups without an x surplus ({n_x} x, {n_z} z, {groups} groups)"
        );
    }
    Ok(GroupingState {
        labels,
        nx,
        nz,
        n_iter: 0,
        n_x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// The picked vertex may not leave its group.
    Blocked { vertex: usize },
    Moved {
        vertex: usize,
        from: usize,
        to: usize,
        greedy: bool,
    },
}

/// One iteration: pick a vertex, and unless the constraints pin it, send it
/// to its top-scoring group with probability `n_iter / iterations` or to a
/// uniformly random group otherwise.
///
/// In [`Mode::Spac`] z-vertices have no scored edges, so their destination is
/// always uniformly random.
pub fn step(
    state: &mut GroupingState,
    index: &EdgeIndex,
    cfg: &GroupingConfig,
    chooser: &mut impl Chooser,
) -> StepOutcome {
    let v = chooser.vertex(index.vertex_count());
    if !state.can_leave(v, cfg) {
        if cfg.count_blocked {
            state.n_iter += 1;
        }
        return StepOutcome::Blocked { vertex: v };
    }
    let groups = state.groups();
    let from = state.labels[v];
    let (to, greedy) = if cfg.mode == Mode::Spac && !index.is_x(v) {
        (chooser.group(groups), false)
    } else {
        let p = state.n_iter as f64 / cfg.iterations as f64;
        if chooser.greedy(p) {
            let scores = index.scores(v, &state.labels, groups, cfg.alpha, cfg.mode);
            (top_group(&scores), true)
        } else {
            (chooser.group(groups), false)
        }
    };
    state.relabel(v, to);
    state.n_iter += 1;
    StepOutcome::Moved {
        vertex: v,
        from,
        to,
        greedy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub nx: usize,
    pub nz: usize,
    /// Whether the group has more x- than z-vertices.
    pub x_exceeds_z: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub min_x: usize,
    pub min_z: usize,
    /// Every group holds at least `min_x` x-vertices.
    pub min_x_satisfied: bool,
    /// Every group holds at least `min_z` z-vertices.
    pub min_z_satisfied: bool,
    pub groups: Vec<GroupCounts>,
    /// Moves that left their destination with no more x- than z-vertices.
    pub destination_violations: usize,
}

impl ConstraintReport {
    fn new(state: &GroupingState, min_x: usize, min_z: usize, destination_violations: usize) -> Self {
        let groups: Vec<GroupCounts> = state
            .nx
            .iter()
            .zip(&state.nz)
            .map(|(&nx, &nz)| GroupCounts {
                nx,
                nz,
                x_exceeds_z: nx > nz,
            })
            .collect();
        ConstraintReport {
            min_x,
            min_z,
            min_x_satisfied: groups.iter().all(|g| g.nx >= min_x),
            min_z_satisfied: groups.iter().all(|g| g.nz >= min_z),
            groups,
            destination_violations,
        }
    }

    pub fn satisfied(&self) -> bool {
        self.min_x_satisfied && self.min_z_satisfied
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Vertex picks, blocked or not.
    pub attempted: usize,
    /// Picks that went on to choose a destination.
    pub accepted: usize,
    /// Accepted picks whose destination differed from the source.
    pub changed: usize,
    /// Accepted picks that took the top-scoring group.
    pub greedy: usize,
    pub blocked: usize,
    /// The run stopped early because no vertex could move.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingResult {
    /// Producer of the grouping, e.g. `"both"` or `"kruskal"`.
    pub method: String,
    pub x_ids: Vec<String>,
    pub n_z: usize,
    /// Group of every vertex, x-vertices first.
    pub labels: Vec<usize>,
    /// x-vertex indices per group.
    pub x_groups: Vec<Vec<usize>>,
    /// z-vertex indices (0-based among latent units) per group.
    pub z_groups: Vec<Vec<usize>>,
    pub constraints: ConstraintReport,
    /// Share of movable vertices already in their top-scoring group; `None`
    /// when nothing can move.
    pub local_optimality: Option<f64>,
    pub trace: TraceSummary,
    pub config: Option<GroupingConfig>,
}

impl GroupingResult {
    fn assemble(
        graph: &RelationalGraph,
        state: &GroupingState,
        method: String,
        constraints: ConstraintReport,
        local_optimality: Option<f64>,
        trace: TraceSummary,
        config: Option<GroupingConfig>,
    ) -> Self {
        let n_x = graph.n_x();
        let mut x_groups = vec![Vec::new(); state.groups()];
        let mut z_groups = vec![Vec::new(); state.groups()];
        for (v, &g) in state.labels.iter().enumerate() {
            if v < n_x {
                x_groups[g].push(v);
            } else {
                z_groups[g].push(v - n_x);
            }
        }
        GroupingResult {
            method,
            x_ids: graph.x_ids.clone(),
            n_z: graph.n_z,
            labels: state.labels.clone(),
            x_groups,
            z_groups,
            constraints,
            local_optimality,
            trace,
            config,
        }
    }

    pub fn group_count(&self) -> usize {
        self.x_groups.len()
    }

    pub fn n_x(&self) -> usize {
        self.x_ids.len()
    }

    /// Channel ids per group.
    pub fn x_id_groups(&self) -> Vec<Vec<String>> {
        self.x_groups
            .iter()
            .map(|g| g.iter().map(|&v| self.x_ids[v].clone()).collect())
            .collect()
    }

    /// Largest group's share of the x-vertices.
    pub fn max_group_fraction(&self) -> f64 {
        let largest = self.x_groups.iter().map(Vec::len).max().unwrap_or(0);
        largest as f64 / self.n_x().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: GroupingResult = serde_json::from_str(text)?;
        let n = r.n_x() + r.n_z;
        if r.labels.len() != n {
            return Err(Error::DimensionMismatch {
                what: "grouping labels",
                expected: n,
                got: r.labels.len(),
            });
        }
        if r.labels.iter().any(|&g| g >= r.group_count()) {
            return Err(Error::InvalidArgument("grouping label out of range".into()));
        }
        Ok(r)
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

/// Share of movable vertices sitting in their top-scoring group.
pub fn local_optimality(state: &GroupingState, index: &EdgeIndex, cfg: &GroupingConfig) -> Option<f64> {
    let mut movable = 0usize;
    let mut optimal = 0usize;
    for v in 0..index.vertex_count() {
        if !state.can_leave(v, cfg) {
            continue;
        }
        movable += 1;
        let scores = index.scores(v, &state.labels, state.groups(), cfg.alpha, cfg.mode);
        if top_group(&scores) == state.labels[v] {
            optimal += 1;
        }
    }
    (movable > 0).then(|| optimal as f64 / movable as f64)
}

/// Runs the grouping with `cfg.seed`.
pub fn run(graph: &RelationalGraph, cfg: &GroupingConfig) -> Result<GroupingResult> {
    run_with(graph, cfg, |_, _| {})
}

/// [`run`] calling `observe` after every step with the outcome and the
/// updated state.
pub fn run_with(
    graph: &RelationalGraph,
    cfg: &GroupingConfig,
    mut observe: impl FnMut(&StepOutcome, &GroupingState),
) -> Result<GroupingResult> {
    // Initialization and moves draw from separate streams so that the
    // initial labels depend on the seed alone.
    let mut state = initialize_groups(graph, cfg, cfg.seed)?;
    let index = EdgeIndex::new(graph);
    let mut chooser = RngChooser(ChaCha8Rng::seed_from_u64(cfg.seed).fork_stream());
    let mut trace = TraceSummary::default();
    let mut violations = 0;
    while state.n_iter < cfg.iterations {
        if !state.any_movable(cfg) {
            trace.stalled = true;
            log::warn!("grouping stalled at iteration {}: no vertex can move", state.n_iter);
            break;
        }
        let outcome = step(&mut state, &index, cfg, &mut chooser);
        trace.attempted += 1;
        match outcome {
            StepOutcome::Blocked { .. } => trace.blocked += 1,
            StepOutcome::Moved { from, to, greedy, .. } => {
                trace.accepted += 1;
                if from != to {
                    trace.changed += 1;
                    if state.nx[to] <= state.nz[to] {
                        violations += 1;
                    }
                }
                if greedy {
                    trace.greedy += 1;
                }
            }
        }
        observe(&outcome, &state);
    }
    let constraints = ConstraintReport::new(&state, cfg.min_x, cfg.min_z, violations);
    let optimality = local_optimality(&state, &index, cfg);
    Ok(GroupingResult::assemble(
        graph,
        &state,
        cfg.mode.to_string(),
        constraints,
        optimality,
        trace,
        Some(cfg.clone()),
    ))
}

trait ForkStream {
    fn fork_stream(self) -> Self;
}

impl ForkStream for ChaCha8Rng {
    fn fork_stream(mut self) -> Self {
        self.set_stream(1);
        self
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Merges vertices along edges in order of decreasing weight, functional and
/// spatial edges alike, until `groups` components remain. No size
/// constraints apply.
pub fn baseline_kruskal_merge(graph: &RelationalGraph, groups: usize) -> Result<GroupingResult> {
    let n_x = graph.n_x();
    let n = graph.vertex_count();
    if groups == 0 || groups > n {
        return Err(Error::InvalidArgument(format!(
            "group count {groups} must be in 1..={n}"
        )));
    }
    let mut edges: Vec<(usize, usize, f64)> = graph
        .functional
        .iter()
        .map(|e| (n_x + e.z, e.x, e.weight))
        .chain(graph.spatial.iter().map(|e| (e.a, e.b, e.weight)))
        .collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2));

    let mut parent: Vec<usize> = (0..n).collect();
    let mut components = n;
    for &(a, b, _) in &edges {
        if components == groups {
            break;
        }
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
            components -= 1;
        }
    }
    if components != groups {
        return Err(Error::Disconnected {
            components,
            target: groups,
        });
    }

    // Number the components in order of their lowest vertex.
    let mut group_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = vec![0; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if group_of_root[r] == usize::MAX {
            group_of_root[r] = next;
            next += 1;
        }
        labels[v] = group_of_root[r];
    }
    let state = GroupingState::from_labels(labels, n_x, groups)?;
    let constraints = ConstraintReport::new(&state, 0, 0, 0);
    Ok(GroupingResult::assemble(
        graph,
        &state,
        "kruskal".into(),
        constraints,
        None,
        TraceSummary::default(),
        None,
    ))
}
