//! Scoring groupings against the geometric ground truth, repeated-trial
//! comparisons of the scoring modes, the latent-size sweep and the grouped
//! retraining experiment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoenc::{
    extract_functional_matrix, init_model, parameter_count, train, FunctionalMatrix, TrainConfig,
    TrainReport,
};
use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::grouping::{self, GroupingConfig, GroupingResult, Mode};
use crate::relgraph::{build_graph, GraphBuildConfig};
use crate::robotsim::RobotModel;

/// Offsets added to a trial seed for the graph-noise and grouping stages.
pub const NOISE_STAGE: u64 = 4;
pub const GROUPING_STAGE: u64 = 5;
/// Offset for autoencoder initialization and training.
pub const TRAIN_STAGE: u64 = 3;

/// Reference grouping of channel ids. Channels in `dual_memberships` belong
/// to two groups and may be matched with either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub groups: Vec<BTreeSet<String>>,
    pub dual_memberships: BTreeMap<String, [usize; 2]>,
}

impl GroundTruth {
    pub fn new(groups: Vec<BTreeSet<String>>, dual_memberships: BTreeMap<String, [usize; 2]>) -> Result<Self> {
        let t = GroundTruth {
            groups,
            dual_memberships,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_robot(robot: &RobotModel) -> Result<Self> {
        let groups = robot
            .truth_groups
            .iter()
            .map(|g| g.iter().map(|id| id.to_string()).collect())
            .collect();
        let duals = robot
            .dual_memberships
            .iter()
            .map(|(id, gs)| (id.to_string(), *gs))
            .collect();
        Self::new(groups, duals)
    }

    /// Every dual muscle sits in both of its groups and every other muscle in
    /// exactly one.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for g in &self.groups {
            for id in g {
                *seen.entry(id).or_default() += 1;
            }
        }
        for (id, gs) in &self.dual_memberships {
            if gs[0] == gs[1] || gs.iter().any(|&g| g >= self.groups.len() || !self.groups[g].contains(id)) {
                return Err(Error::InvalidArgument(format!(
                    "dual muscle {id} is not listed in groups {gs:?}"
                )));
            }
        }
        for (id, n) in seen {
            let expected = if self.dual_memberships.contains_key(id) { 2 } else { 1 };
            if n != expected {
                return Err(Error::InvalidArgument(format!(
                    "muscle {id} appears in {n} truth groups, expected {expected}"
                )));
            }
        }
        Ok(())
    }

    pub fn muscles(&self) -> BTreeSet<String> {
        self.groups.iter().flatten().cloned().collect()
    }

    /// Muscles belonging to group `g` only.
    pub fn core(&self, g: usize) -> BTreeSet<String> {
        self.groups[g]
            .iter()
            .filter(|id| !self.dual_memberships.contains_key(*id))
            .cloned()
            .collect()
    }

    /// The core of `g` plus the dual muscles listing `g`.
    pub fn wide(&self, g: usize) -> BTreeSet<String> {
        let mut w = self.core(g);
        for (id, gs) in &self.dual_memberships {
            if gs.contains(&g) {
                w.insert(id.clone());
            }
        }
        w
    }
}

/// Core muscles missing from `proposed` plus proposed muscles outside the
/// wide set of truth group `g`.
pub fn mismatch(truth: &GroundTruth, g: usize, proposed: &BTreeSet<String>) -> usize {
    let core = truth.core(g);
    let wide = truth.wide(g);
    core.difference(proposed).count() + proposed.difference(&wide).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMatch {
    /// Proposed group with the fewest mismatches (lowest index on ties).
    pub best_group: usize,
    pub mismatch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Percent of truth groups matched with at most 0, 1 and 2 mismatches.
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub matches: Vec<TruthMatch>,
    /// One-to-one matching was required.
    pub bijective: bool,
}

impl ConsistencyReport {
    pub fn a(&self, k: usize) -> f64 {
        match k {
            0 => self.a0,
            1 => self.a1,
            2 => self.a2,
            _ => panic!("tolerance {k} is not reported"),
        }
    }
}

/// Consistency of proposed channel groups with the truth. A truth group is
/// matched at tolerance k when some proposed group is within k mismatches;
/// with `bijective` each proposed group may match at most one truth group
/// (maximum bipartite matching per tolerance).
pub fn consistency(proposed: &[BTreeSet<String>], truth: &GroundTruth, bijective: bool) -> Result<ConsistencyReport> {
    let universe: BTreeSet<String> = proposed.iter().flatten().cloned().collect();
    let expected = truth.muscles();
    if universe != expected {
        let missing = expected.difference(&universe).count();
        let extra = universe.difference(&expected).count();
        return Err(Error::InvalidArgument(format!(
            "proposed grouping covers a different muscle set ({missing} missing, {extra} unknown)"
        )));
    }
    if truth.groups.is_empty() {
        return Err(Error::InvalidArgument("ground truth has no groups".into()));
    }
    let costs: Vec<Vec<usize>> = (0..truth.groups.len())
        .map(|g| proposed.iter().map(|p| mismatch(truth, g, p)).collect())
        .collect();
    let matches: Vec<TruthMatch> = costs
        .iter()
        .map(|row| {
            let best = (0..row.len()).min_by_key(|&i| (row[i], i)).unwrap_or(0);
            TruthMatch {
                best_group: best,
                mismatch: row.get(best).copied().unwrap_or(usize::MAX),
            }
        })
        .collect();
    let n = truth.groups.len() as f64;
    let score = |k: usize| {
        let matched = if bijective {
            max_matching(&costs, k)
        } else {
            matches.iter().filter(|m| m.mismatch <= k).count()
        };
        100.0 * matched as f64 / n
    };
    Ok(ConsistencyReport {
        a0: score(0),
        a1: score(1),
        a2: score(2),
        matches,
        bijective,
    })
}

/// [`consistency`] of the channel groups of a grouping result.
pub fn consistency_of(result: &GroupingResult, truth: &GroundTruth, bijective: bool) -> Result<ConsistencyReport> {
    let groups: Vec<BTreeSet<String>> = result
        .x_id_groups()
        .into_iter()
        .map(|g| g.into_iter().collect())
        .collect();
    consistency(&groups, truth, bijective)
}

/// Maximum matching between truth groups (rows) and proposed groups
/// (columns) over pairs with cost at most `k`, by augmenting paths.
fn max_matching(costs: &[Vec<usize>], k: usize) -> usize {
    let cols = costs.first().map_or(0, Vec::len);
    let mut owner: Vec<Option<usize>> = vec![None; cols];

    fn augment(r: usize, costs: &[Vec<usize>], k: usize, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for c in 0..seen.len() {
            if costs[r][c] <= k && !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(o, costs, k, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }

    (0..costs.len())
        .filter(|&r| augment(r, costs, k, &mut vec![false; cols], &mut owner))
        .count()
}

/// Mean and population variance of one metric over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub variance: f64,
    pub values: Vec<f64>,
}

impl MetricStats {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MetricStats { mean, variance, values }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub mode: Mode,
    pub trials: usize,
    pub a0: MetricStats,
    pub a1: MetricStats,
    pub a2: MetricStats,
}

impl TrialStats {
    pub fn from_reports(mode: Mode, reports: &[&ConsistencyReport]) -> Self {
        let pick = |k: usize| MetricStats::from_values(reports.iter().map(|r| r.a(k)).collect());
        TrialStats {
            mode,
            trials: reports.len(),
            a0: pick(0),
            a1: pick(1),
            a2: pick(2),
        }
    }
}

/// Everything a grouping trial needs besides its seed.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub w: FunctionalMatrix,
    pub distances: Array2<f64>,
    pub x_ids: Vec<String>,
    pub graph: GraphBuildConfig,
    pub grouping: GroupingConfig,
    pub modes: Vec<Mode>,
    pub bijective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub mode: Mode,
    pub noise_seed: u64,
    pub grouping_seed: u64,
    pub report: ConsistencyReport,
    pub result: GroupingResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsReport {
    pub stats: Vec<TrialStats>,
    pub records: Vec<TrialRecord>,
}

impl TrialsReport {
    pub fn stats_for(&self, mode: Mode) -> Option<&TrialStats> {
        self.stats.iter().find(|s| s.mode == mode)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (trial, mode).
    pub fn records_csv(&self) -> String {
        let mut out = String::from("trial,mode,noise_seed,grouping_seed,a0,a1,a2,max_group_fraction\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.trial,
                r.mode,
                r.noise_seed,
                r.grouping_seed,
                r.report.a0,
                r.report.a1,
                r.report.a2,
                r.result.max_group_fraction()
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.stats)
    }

    pub fn table(&self) -> String {
        render_table(&self.stats)
    }
}

pub fn summary_csv(stats: &[TrialStats]) -> String {
    let mut out = String::from("mode,trials,a0_mean,a0_var,a1_mean,a1_var,a2_mean,a2_var\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.mode, s.trials, s.a0.mean, s.a0.variance, s.a1.mean, s.a1.variance, s.a2.mean, s.a2.variance
        );
    }
    out
}

/// Plain-text table of mean ± standard deviation per mode.
pub fn render_table(stats: &[TrialStats]) -> String {
    let mut out = format!("{:<6} {:>6} {:>16} {:>16} {:>16}\n", "mode", "trials", "A0 (%)", "A1 (%)", "A2 (%)");
    for s in stats {
        let cell = |m: &MetricStats| format!("{:.1} ± {:.1}", m.mean, m.std());
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>16} {:>16} {:>16}",
            s.mode,
            s.trials,
            cell(&s.a0),
            cell(&s.a1),
            cell(&s.a2)
        );
    }
    out
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} worker threads: {e}")))
}

/// Repeats graph construction and grouping for trials `0..trials`. Trial `t`
/// uses seed `base_seed + t`, offset by [`NOISE_STAGE`] for the distance noise
/// and by [`GROUPING_STAGE`] for the grouping, so every mode of a trial sees
/// the same graph. Up to `jobs` trials run at once; the output does not
/// depend on `jobs`.
pub fn run_trials(
    setup: &TrialSetup,
    truth: &GroundTruth,
    trials: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<TrialsReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    if setup.modes.is_empty() {
        return Err(Error::InvalidArgument("need at least one mode".into()));
    }
    let run_one = |t: usize| -> Result<Vec<TrialRecord>> {
        let seed = base_seed.wrapping_add(t as u64);
        let noise_seed = seed.wrapping_add(NOISE_STAGE);
        let grouping_seed = seed.wrapping_add(GROUPING_STAGE);
        let gcfg = GraphBuildConfig {
            seed: noise_seed,
            ..setup.graph.clone()
        };
        let graph = build_graph(&setup.w, &setup.distances, setup.x_ids.clone(), &gcfg)?;
        setup
            .modes
            .iter()
            .map(|&mode| {
                let cfg = GroupingConfig {
                    mode,
                    seed: grouping_seed,
                    ..setup.grouping.clone()
                };
                let result = grouping::run(&graph, &cfg)?;
                let report = consistency_of(&result, truth, setup.bijective)?;
                Ok(TrialRecord {
                    trial: t,
                    mode,
                    noise_seed,
                    grouping_seed,
                    report,
                    result,
                })
            })
            .collect()
    };
    let per_trial: Vec<Vec<TrialRecord>> = if jobs <= 1 {
        (0..trials).map(run_one).collect::<Result<_>>()?
    } else {
        thread_pool(jobs)?.install(|| (0..trials).into_par_iter().map(run_one).collect::<Result<_>>())?
    };
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    let stats = setup
        .modes
        .iter()
        .map(|&mode| {
            let reports: Vec<&ConsistencyReport> =
                records.iter().filter(|r| r.mode == mode).map(|r| &r.report).collect();
            TrialStats::from_reports(mode, &reports)
        })
        .collect();
    Ok(TrialsReport { stats, records })
}

/// Settings for the latent-size sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub hidden: usize,
    pub train: TrainConfig,
    pub distances: Array2<f64>,
    pub graph: GraphBuildConfig,
    pub grouping: GroupingConfig,
    pub modes: Vec<Mode>,
    pub bijective: bool,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nz: usize,
    /// Group count used; capped so that every group can hold a latent unit.
    pub groups: usize,
    pub best_test_loss: f64,
    pub stats: Vec<TrialStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "nz,groups,best_test_loss,mode,trials,a0_mean,a0_var,a1_mean,a1_var,a2_mean,a2_var\n",
        );
        for r in &self.rows {
            for s in &r.stats {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.nz,
                    r.groups,
                    r.best_test_loss,
                    s.mode,
                    s.trials,
                    s.a0.mean,
                    s.a0.variance,
                    s.a1.mean,
                    s.a1.variance,
                    s.a2.mean,
                    s.a2.variance
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Trains one autoencoder per latent size on the same split and runs the
/// grouping trials on each. Up to `jobs` latent sizes are processed at once.
pub fn sweep_nz(
    train_set: &Dataset,
    test_set: &Dataset,
    truth: &GroundTruth,
    values: &[usize],
    setup: &SweepSetup,
    jobs: usize,
) -> Result<SweepReport> {
    let m = train_set.channels();
    if let Some(&bad) = values.iter().find(|&&v| v == 0 || v >= m) {
        return Err(Error::InvalidArgument(format!(
            "latent size {bad} must satisfy 1 <= N_z < M = {m}"
        )));
    }
    let run_one = |&nz: &usize| -> Result<SweepRow> {
        let init_seed = setup.seed.wrapping_add(TRAIN_STAGE);
        let model = init_model(m, nz, setup.hidden, init_seed)?;
        let tcfg = TrainConfig {
            seed: init_seed,
            ..setup.train.clone()
        };
        let (model, report) = train(model, train_set, test_set, &tcfg)?;
        let groups = setup.grouping.groups.min(nz / setup.grouping.min_z.max(1));
        let trial_setup = TrialSetup {
            w: extract_functional_matrix(&model, setup.graph.fold_batchnorm),
            distances: setup.distances.clone(),
            x_ids: train_set.ids().to_vec(),
            graph: setup.graph.clone(),
            grouping: GroupingConfig {
                groups,
                ..setup.grouping.clone()
            },
            modes: setup.modes.clone(),
            bijective: setup.bijective,
        };
        let trials = run_trials(&trial_setup, truth, setup.trials, setup.seed, 1)?;
        Ok(SweepRow {
            nz,
            groups,
            best_test_loss: report.best_test_loss(),
            stats: trials.stats,
        })
    };
    let rows = if jobs <= 1 {
        values.iter().map(run_one).collect::<Result<_>>()?
    } else {
        thread_pool(jobs)?.install(|| values.par_iter().map(run_one).collect::<Result<_>>())?
    };
    Ok(SweepReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    /// Rows drawn from the dataset.
    pub low_data_count: usize,
    pub train_fraction: f64,
    /// Hidden width of the full model.
    pub hidden: usize,
    pub train: TrainConfig,
    /// Largest allowed relative parameter-count difference.
    pub budget_tolerance: f64,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            low_data_count: 1000,
            train_fraction: 0.8,
            hidden: 300,
            train: TrainConfig::default(),
            budget_tolerance: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRetrain {
    pub channels: Vec<String>,
    pub latent: usize,
    pub hidden: usize,
    pub parameters: usize,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub full_parameters: usize,
    pub grouped_parameters: usize,
    /// |grouped − full| / full.
    pub budget_error: f64,
    pub full: TrainReport,
    pub groups: Vec<GroupRetrain>,
    /// Per-epoch losses of the grouped models, weighted by channel count.
    pub grouped_train_loss: Vec<f64>,
    pub grouped_test_loss: Vec<f64>,
    /// Losses of the full model at its best epoch.
    pub full_best_train: f64,
    pub full_best_test: f64,
    /// Weighted losses of the grouped models, each at its own best epoch.
    pub grouped_best_train: f64,
    pub grouped_best_test: f64,
}

impl RetrainReport {
    /// Test minus train loss at the best epoch, full model.
    pub fn full_gap(&self) -> f64 {
        self.full_best_test - self.full_best_train
    }

    /// Test minus train loss at the best epochs, grouped models.
    pub fn grouped_gap(&self) -> f64 {
        self.grouped_best_test - self.grouped_best_train
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-epoch curves of both variants.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,full_train,full_test,grouped_train,grouped_test\n");
        for e in 0..self.full.train_loss.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e + 1,
                self.full.train_loss[e],
                self.full.test_loss[e],
                self.grouped_train_loss[e],
                self.grouped_test_loss[e]
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }
}

/// Splits `total` into parts proportional to `weights` by largest remainder
/// (ties to the lower index), every part at least 1.
pub fn proportional_split(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let quotas: Vec<f64> = weights
        .iter()
        .map(|&w| total as f64 * w as f64 / sum.max(1) as f64)
        .collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    for p in &mut parts {
        *p = (*p).max(1);
    }
    parts
}

/// Hidden widths for per-group autoencoders `[m_g, h_g, z_g, h_g, m_g]`,
/// proportional to the channel counts, whose total parameter count is as
/// close as possible to `target`. Returns the widths and that total.
pub fn match_budget(channels: &[usize], latents: &[usize], target: usize) -> (Vec<usize>, usize) {
    let count = |hidden: &[usize]| -> usize {
        channels
            .iter()
            .zip(latents)
            .zip(hidden)
            .map(|((&m, &z), &h)| parameter_count(&[m, h, z, h, m]))
            .sum()
    };
    let mut best = (proportional_split(channels.len(), channels), usize::MAX);
    let mut best_diff = usize::MAX;
    let mut total = channels.len();
    loop {
        let hidden = proportional_split(total, channels);
        let params = count(&hidden);
        let diff = params.abs_diff(target);
        if diff < best_diff {
            best_diff = diff;
            best = (hidden, params);
        }
        if params > target {
            break;
        }
        total += 1;
    }
    best
}

/// Trains the full autoencoder and one smaller autoencoder per group on a
/// small subsample and compares their losses. Each group's model sees its
/// own channels and has as many latent units as the grouping gave it; hidden
/// widths are chosen so that the parameter totals match.
pub fn grouped_retrain(dataset: &Dataset, grouping: &GroupingResult, cfg: &RetrainConfig) -> Result<RetrainReport> {
    let m = dataset.channels();
    let n_z = grouping.n_z;
    if cfg.low_data_count < 4 || cfg.low_data_count > dataset.rows() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {} rows from a dataset of {}",
            cfg.low_data_count,
            dataset.rows()
        )));
    }
    let column: HashMap<&str, usize> = dataset.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut groups: Vec<(Vec<usize>, usize)> = Vec::new();
    for (g, (xs, zs)) in grouping.x_groups.iter().zip(&grouping.z_groups).enumerate() {
        let cols = xs
            .iter()
            .map(|&x| {
                let id = &grouping.x_ids[x];
                column.get(id.as_str()).copied().ok_or_else(|| {
                    Error::InvalidArgument(format!("grouping channel {id} is not in the dataset"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if cols.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "group {g} has {} channels, need at least 2",
                cols.len()
            )));
        }
        if zs.is_empty() || zs.len() >= cols.len() {
            return Err(Error::InvalidArgument(format!(
                "group {g} has {} latent units for {} channels, need between 1 and {}",
                zs.len(),
                cols.len(),
                cols.len() - 1
            )));
        }
        groups.push((cols, zs.len()));
    }
    if groups.iter().map(|g| g.0.len()).sum::<usize>() != m {
        return Err(Error::DimensionMismatch {
            what: "grouped channels",
            expected: m,
            got: groups.iter().map(|g| g.0.len()).sum(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut rows = sample(&mut rng, dataset.rows(), cfg.low_data_count).into_vec();
    rows.sort_unstable();
    let subset = dataset.select_rows(&rows);
    let subset = if subset.is_normalized() { subset } else { subset.normalize()?.0 };
    let (train_set, test_set) = subset.split_train_test(cfg.train_fraction, cfg.seed.wrapping_add(2))?;

    let train_seed = cfg.seed.wrapping_add(TRAIN_STAGE);
    let tcfg = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let full_model = init_model(m, n_z, cfg.hidden, train_seed)?;
    let full_parameters = full_model.parameter_count();
    let (_, full) = train(full_model, &train_set, &test_set, &tcfg)?;

    let channels: Vec<usize> = groups.iter().map(|g| g.0.len()).collect();
    let latents: Vec<usize> = groups.iter().map(|g| g.1).collect();
    let (hidden, grouped_parameters) = match_budget(&channels, &latents, full_parameters);
    let budget_error = grouped_parameters.abs_diff(full_parameters) as f64 / full_parameters as f64;
    if budget_error > cfg.budget_tolerance {
        return Err(Error::Infeasible(format!(
            "closest grouped parameter count {grouped_parameters} is {:.2}% off the full model's {full_parameters}",
            100.0 * budget_error
        )));
    }

    let mut group_reports = Vec::with_capacity(groups.len());
    for (g, ((cols, z), &h)) in groups.iter().zip(&hidden).enumerate() {
        let seed = train_seed.wrapping_add(1 + g as u64);
        let model = init_model(cols.len(), *z, h, seed)?;
        let parameters = model.parameter_count();
        let gcfg = TrainConfig { seed, ..cfg.train.clone() };
        let (_, report) = train(model, &train_set.select_channels(cols)?, &test_set.select_channels(cols)?, &gcfg)?;
        group_reports.push(GroupRetrain {
            channels: cols.iter().map(|&c| dataset.ids()[c].clone()).collect(),
            latent: *z,
            hidden: h,
            parameters,
            report,
        });
    }

    let weight = |r: &GroupRetrain| r.channels.len() as f64 / m as f64;
    let epochs = full.train_loss.len();
    let weighted = |f: &dyn Fn(&GroupRetrain) -> f64| group_reports.iter().map(|r| weight(r) * f(r)).sum::<f64>();
    let grouped_train_loss = (0..epochs).map(|e| weighted(&|r| r.report.train_loss[e])).collect();
    let grouped_test_loss = (0..epochs).map(|e| weighted(&|r| r.report.test_loss[e])).collect();
    Ok(RetrainReport {
        full_parameters,
        grouped_parameters,
        budget_error,
        full_best_train: full.best_train_loss(),
        full_best_test: full.best_test_loss(),
        grouped_best_train: weighted(&|r| r.report.best_train_loss()),
        grouped_best_test: weighted(&|r| r.report.best_test_loss()),
        full,
        groups: group_reports,
        grouped_train_loss,
        grouped_test_loss,
    })
}
