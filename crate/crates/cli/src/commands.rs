use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use redungroup::autoenc::{extract_functional_matrix, init_model, train, Checkpoint, TrainConfig, TrainingMetadata};
use redungroup::datastore::{import_distance_matrix, Dataset, NormalizationStats};
use redungroup::evalharness::{
    consistency_of, grouped_retrain, run_trials, sweep_nz, GroundTruth, RetrainConfig, SweepSetup, TrialSetup,
    GROUPING_STAGE, NOISE_STAGE, TRAIN_STAGE,
};
use redungroup::grouping::{self, baseline_kruskal_merge, GroupingConfig, GroupingResult};
use redungroup::pipeline::{self, PipelineConfig, SAMPLE_STAGE, SPLIT_STAGE, SYNTH_STAGE};
use redungroup::relgraph::{build_graph, GraphBuildConfig, RelationalGraph};
use redungroup::robotsim::{build_synthetic_robot, sample_random_postures, spatial_distance_matrix, RobotModel, SynthSpec};
use serde::de::DeserializeOwned;

use crate::manifest::RunManifest;
use crate::{Command, GroupingArgs, TrainArgs};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Loads a dataset CSV, taking it as normalized when `stats` is given.
fn load_dataset(data: &Path, stats: Option<&Path>) -> Result<Dataset> {
    let d = Dataset::import_csv(data)?;
    match stats {
        Some(s) => {
            let stats = NormalizationStats::load(s)?;
            Ok(Dataset::from_normalized(d.values().clone(), d.ids().to_vec(), stats)?)
        }
        None => Ok(d),
    }
}

fn normalized(d: Dataset) -> Result<Dataset> {
    Ok(if d.is_normalized() { d } else { d.normalize()?.0 })
}

fn apply_train(cfg: &mut TrainConfig, args: &TrainArgs) {
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
}

fn apply_grouping(cfg: &mut GroupingConfig, args: &GroupingArgs) {
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(n) = args.ngroups {
        cfg.groups = n;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(n) = args.min_x {
        cfg.min_x = n;
    }
    if let Some(n) = args.min_z {
        cfg.min_z = n;
    }
    if args.count_blocked {
        cfg.count_blocked = true;
    }
}

/// Channel ids of a checkpoint, falling back to the robot's muscle ids.
fn channel_ids(ck: &Checkpoint, robot: &RobotModel) -> Vec<String> {
    if ck.metadata.channel_ids.is_empty() {
        robot.muscle_ids().iter().map(|id| id.to_string()).collect()
    } else {
        ck.metadata.channel_ids.clone()
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, seed, out } => {
            let mut m = RunManifest::new("synth");
            let mut spec: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            let top = seed.seed.unwrap_or(spec.seed);
            spec.seed = top.wrapping_add(SYNTH_STAGE);
            let robot = build_synthetic_robot(&spec)?;
            robot.save(&out)?;
            println!(
                "{} joints, {} muscles, {} truth groups -> {}",
                robot.joint_count(),
                robot.muscle_count(),
                robot.truth_groups.len(),
                out.display()
            );
            m.config(&spec)?;
            m.seed("top", top);
            m.seed("robot", spec.seed);
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::Sample {
            robot,
            samples,
            seed,
            out,
        } => {
            let mut m = RunManifest::new("sample");
            let model = RobotModel::load(&robot)?;
            let top = seed.seed.unwrap_or(0);
            let data = sample_random_postures(&model, samples, top.wrapping_add(SAMPLE_STAGE))?;
            data.export_csv(&out)?;
            println!("{} rows x {} channels -> {}", data.rows(), data.channels(), out.display());
            m.config(&serde_json::json!({ "robot": robot, "samples": samples }))?;
            m.seed("top", top);
            m.seed("sample", top.wrapping_add(SAMPLE_STAGE));
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::Normalize { data, out, stats } => {
            let mut m = RunManifest::new("normalize");
            let raw = Dataset::import_csv(&data)?;
            let (norm, s) = raw.normalize()?;
            norm.export_csv(&out)?;
            s.save(&stats)?;
            m.config(&serde_json::json!({ "data": data }))?;
            m.output(&out);
            m.output(&stats);
            m.write_beside(&out)?;
        }
        Command::TrainAe {
            data,
            stats,
            config,
            latent,
            hidden,
            train_fraction,
            train: targs,
            seed,
            out,
            report,
        } => {
            let mut m = RunManifest::new("train-ae");
            let mut cfg: TrainConfig = match &config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            apply_train(&mut cfg, &targs);
            let top = seed.seed.unwrap_or(cfg.seed);
            cfg.seed = top.wrapping_add(TRAIN_STAGE);
            let d = normalized(load_dataset(&data, stats.as_deref())?)?;
            let (train_set, test_set) = d.split_train_test(train_fraction, top.wrapping_add(SPLIT_STAGE))?;
            let t = Instant::now();
            let model = init_model(d.channels(), latent, hidden, cfg.seed)?;
            let (model, rep) = train(model, &train_set, &test_set, &cfg)?;
            m.timing("train", t.elapsed().as_secs_f64());
            let ck = Checkpoint {
                model,
                metadata: TrainingMetadata {
                    init_seed: cfg.seed,
                    config: Some(cfg.clone()),
                    epochs_run: rep.train_loss.len(),
                    best_epoch: Some(rep.best_epoch),
                    best_test_loss: Some(rep.best_test_loss()),
                    channel_ids: d.ids().to_vec(),
                },
            };
            ck.save(&out)?;
            rep.save_csv(&report)?;
            println!(
                "best test loss {:.6} (train {:.6}) at epoch {}",
                rep.best_test_loss(),
                rep.best_train_loss(),
                rep.best_epoch + 1
            );
            m.config(&serde_json::json!({
                "train": cfg, "latent": latent, "hidden": hidden, "train_fraction": train_fraction,
            }))?;
            m.seed("top", top);
            m.seed("split", top.wrapping_add(SPLIT_STAGE));
            m.seed("train", cfg.seed);
            m.output(&out);
            m.output(&report);
            m.write_beside(&out)?;
        }
        Command::BuildGraph {
            model,
            robot,
            distances,
            center,
            noise_std,
            signed,
            fold_batchnorm,
            seed,
            out,
        } => {
            let mut m = RunManifest::new("build-graph");
            let ck = Checkpoint::load(&model)?;
            let m_channels = ck.model.input_size();
            let (d, ids) = match (&robot, &distances) {
                (Some(r), _) => {
                    let robot = RobotModel::load(r)?;
                    let ids = channel_ids(&ck, &robot);
                    (spatial_distance_matrix(&robot, &robot.spread_pose(), center)?, ids)
                }
                (None, Some(p)) => {
                    let imp = import_distance_matrix(p, m_channels)?;
                    let ids = if ck.metadata.channel_ids.is_empty() {
                        (0..m_channels).map(|i| i.to_string()).collect()
                    } else {
                        ck.metadata.channel_ids.clone()
                    };
                    (imp.matrix, ids)
                }
                (None, None) => bail!("either --robot or --distances is required"),
            };
            let top = seed.seed.unwrap_or(0);
            let cfg = GraphBuildConfig {
                noise_std,
                abs_functional: !signed,
                fold_batchnorm,
                seed: top.wrapping_add(NOISE_STAGE),
            };
            let w = extract_functional_matrix(&ck.model, fold_batchnorm);
            let graph = build_graph(&w, &d, ids, &cfg)?;
            graph.save(&out)?;
            println!(
                "{} channel and {} latent vertices, beta {:.6} -> {}",
                graph.n_x(),
                graph.n_z,
                graph.beta.unwrap_or(f64::NAN),
                out.display()
            );
            m.config(&cfg)?;
            m.seed("top", top);
            m.seed("noise", cfg.seed);
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::Group {
            graph,
            config,
            grouping: gargs,
            seed,
            out,
        } => {
            let mut m = RunManifest::new("group");
            let g = RelationalGraph::load(&graph)?;
            let mut cfg: GroupingConfig = match &config {
                Some(p) => read_json(p)?,
                None => GroupingConfig::default(),
            };
            apply_grouping(&mut cfg, &gargs);
            let top = seed.seed.unwrap_or(cfg.seed);
            cfg.seed = top.wrapping_add(GROUPING_STAGE);
            let result = grouping::run(&g, &cfg)?;
            result.save(&out)?;
            print_grouping(&result);
            m.config(&cfg)?;
            m.seed("top", top);
            m.seed("grouping", cfg.seed);
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::Eval {
            result,
            robot,
            bijective,
            out,
        } => {
            let mut m = RunManifest::new("eval");
            let r = GroupingResult::load(&result)?;
            let truth = GroundTruth::from_robot(&RobotModel::load(&robot)?)?;
            let report = consistency_of(&r, &truth, bijective)?;
            write_text(&out, &serde_json::to_string_pretty(&report)?)?;
            println!("A0 {:.1}%  A1 {:.1}%  A2 {:.1}%", report.a0, report.a1, report.a2);
            m.config(&serde_json::json!({ "bijective": bijective }))?;
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::Trials {
            model,
            robot,
            trials,
            modes,
            grouping: gargs,
            center,
            noise_std,
            bijective,
            jobs,
            seed,
            out_dir,
        } => {
            let mut m = RunManifest::new("trials");
            let ck = Checkpoint::load(&model)?;
            let robot = RobotModel::load(&robot)?;
            let truth = GroundTruth::from_robot(&robot)?;
            let mut gcfg = GroupingConfig {
                groups: 12,
                ..GroupingConfig::default()
            };
            apply_grouping(&mut gcfg, &gargs);
            let setup = TrialSetup {
                w: extract_functional_matrix(&ck.model, false),
                distances: spatial_distance_matrix(&robot, &robot.spread_pose(), center)?,
                x_ids: channel_ids(&ck, &robot),
                graph: GraphBuildConfig {
                    noise_std,
                    ..GraphBuildConfig::default()
                },
                grouping: gcfg,
                modes,
                bijective,
            };
            let top = seed.seed.unwrap_or(0);
            let t = Instant::now();
            let report = run_trials(&setup, &truth, trials, top, jobs)?;
            m.timing("trials", t.elapsed().as_secs_f64());
            ensure_dir(&out_dir)?;
            let files = [
                ("trials.json", report.to_json()?),
                ("trials.csv", report.records_csv()),
                ("summary.csv", report.summary_csv()),
            ];
            for (name, text) in files {
                let p = out_dir.join(name);
                write_text(&p, &text)?;
                m.output(&p);
            }
            print!("{}", report.table());
            m.config(&serde_json::json!({
                "grouping": setup.grouping, "graph": setup.graph, "trials": trials,
                "modes": setup.modes, "bijective": bijective, "jobs": jobs,
            }))?;
            m.seed("top", top);
            m.write_beside(&out_dir)?;
        }
        Command::SweepNz {
            data,
            stats,
            robot,
            values,
            trials,
            hidden,
            train_fraction,
            train: targs,
            grouping: gargs,
            noise_std,
            jobs,
            seed,
            out,
        } => {
            let mut m = RunManifest::new("sweep-nz");
            let robot = RobotModel::load(&robot)?;
            let truth = GroundTruth::from_robot(&robot)?;
            let d = normalized(load_dataset(&data, stats.as_deref())?)?;
            let top = seed.seed.unwrap_or(0);
            let (train_set, test_set) = d.split_train_test(train_fraction, top.wrapping_add(SPLIT_STAGE))?;
            let mut tcfg = TrainConfig::default();
            apply_train(&mut tcfg, &targs);
            let mut gcfg = GroupingConfig {
                groups: 12,
                ..GroupingConfig::default()
            };
            apply_grouping(&mut gcfg, &gargs);
            let setup = SweepSetup {
                hidden,
                train: tcfg,
                distances: spatial_distance_matrix(&robot, &robot.spread_pose(), Default::default())?,
                graph: GraphBuildConfig {
                    noise_std,
                    ..GraphBuildConfig::default()
                },
                grouping: gcfg,
                modes: grouping::Mode::ALL.to_vec(),
                bijective: false,
                trials,
                seed: top,
            };
            let t = Instant::now();
            let report = sweep_nz(&train_set, &test_set, &truth, &values, &setup, jobs)?;
            m.timing("sweep", t.elapsed().as_secs_f64());
            write_text(&out, &report.to_csv())?;
            let json = out.with_extension("json");
            write_text(&json, &report.to_json()?)?;
            for row in &report.rows {
                println!("N_z = {} ({} groups), best test loss {:.6}", row.nz, row.groups, row.best_test_loss);
                print!("{}", redungroup::evalharness::render_table(&row.stats));
            }
            m.config(&serde_json::json!({
                "values": values, "trials": trials, "hidden": hidden, "train": setup.train,
                "grouping": setup.grouping, "graph": setup.graph, "jobs": jobs,
            }))?;
            m.seed("top", top);
            m.output(&out);
            m.output(&json);
            m.write_beside(&out)?;
        }
        Command::RetrainSplit {
            data,
            stats,
            result,
            low_data,
            hidden,
            train: targs,
            seed,
            out,
            curves,
        } => {
            let mut m = RunManifest::new("retrain-split");
            let d = load_dataset(&data, stats.as_deref())?;
            let grouping = GroupingResult::load(&result)?;
            let mut cfg = RetrainConfig {
                low_data_count: low_data,
                hidden,
                ..RetrainConfig::default()
            };
            apply_train(&mut cfg.train, &targs);
            cfg.seed = seed.seed.unwrap_or(0);
            let t = Instant::now();
            let report = grouped_retrain(&d, &grouping, &cfg)?;
            m.timing("retrain", t.elapsed().as_secs_f64());
            report.save(&out)?;
            write_text(&curves, &report.curves_csv())?;
            println!(
                "parameters: full {} grouped {} ({:.2}% apart)",
                report.full_parameters,
                report.grouped_parameters,
                100.0 * report.budget_error
            );
            println!(
                "full:    train {:.6} test {:.6} gap {:.6}",
                report.full_best_train,
                report.full_best_test,
                report.full_gap()
            );
            println!(
                "grouped: train {:.6} test {:.6} gap {:.6}",
                report.grouped_best_train,
                report.grouped_best_test,
                report.grouped_gap()
            );
            m.config(&cfg)?;
            m.seed("top", cfg.seed);
            m.output(&out);
            m.output(&curves);
            m.write_beside(&out)?;
        }
        Command::BaselineMst { graph, ngroups, out } => {
            let mut m = RunManifest::new("baseline-mst");
            let g = RelationalGraph::load(&graph)?;
            let result = baseline_kruskal_merge(&g, ngroups)?;
            result.save(&out)?;
            print_grouping(&result);
            println!("largest group holds {:.1}% of channels", 100.0 * result.max_group_fraction());
            m.config(&serde_json::json!({ "ngroups": ngroups }))?;
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::ExportDot {
            graph,
            result,
            min_weight,
            out,
        } => {
            let mut m = RunManifest::new("export-dot");
            let g = RelationalGraph::load(&graph)?;
            let labels = match &result {
                Some(p) => {
                    let r = GroupingResult::load(p)?;
                    if r.labels.len() != g.vertex_count() {
                        bail!(
                            "{} labels {} vertices but the graph has {}",
                            p.display(),
                            r.labels.len(),
                            g.vertex_count()
                        );
                    }
                    Some(r.labels)
                }
                None => None,
            };
            write_text(&out, &g.to_dot(labels.as_deref(), min_weight))?;
            m.config(&serde_json::json!({ "min_weight": min_weight }))?;
            m.output(&out);
            m.write_beside(&out)?;
        }
        Command::Pipeline {
            config,
            trials,
            samples,
            epochs,
            jobs,
            save_data,
            seed,
            out_dir,
        } => run_pipeline(config, trials, samples, epochs, jobs, save_data, seed.seed, out_dir)?,
    }
    Ok(())
}

fn print_grouping(r: &GroupingResult) {
    for (g, ids) in r.x_id_groups().iter().enumerate() {
        println!("group {g:>2}: {} | latent {:?}", ids.join(" "), r.z_groups[g]);
    }
    if !r.constraints.satisfied() {
        println!("warning: some groups fall below the minimum counts");
    }
}

#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    config: Option<PathBuf>,
    trials: Option<usize>,
    samples: Option<usize>,
    epochs: Option<usize>,
    jobs: Option<usize>,
    save_data: bool,
    seed: Option<u64>,
    out_dir: PathBuf,
) -> Result<()> {
    let mut m = RunManifest::new("pipeline");
    let mut cfg: PipelineConfig = match &config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(n) = samples {
        cfg.samples = n;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    ensure_dir(&out_dir)?;
    let out = pipeline::run_pipeline(&cfg)?;
    m.timing("sample", out.timings.sample);
    m.timing("train", out.timings.train);
    m.timing("trials", out.timings.trials);

    let mut write = |name: &str, text: String| -> Result<()> {
        let p = out_dir.join(name);
        write_text(&p, &text)?;
        m.output(&p);
        Ok(())
    };
    write("config.json", serde_json::to_string_pretty(&cfg)?)?;
    write("robot.json", out.prepared.robot.to_json()?)?;
    write("model.json", out.checkpoint(&cfg).to_json()?)?;
    write("train_report.csv", out.train_report.to_csv())?;
    write("results.json", out.trials.to_json()?)?;
    write("trials.csv", out.trials.records_csv())?;
    write("summary.csv", out.trials.summary_csv())?;
    if save_data {
        let p = out_dir.join("dataset.csv");
        out.prepared.raw.export_csv(&p)?;
        m.output(&p);
    }
    println!(
        "autoencoder best test loss {:.6} at epoch {}",
        out.train_report.best_test_loss(),
        out.train_report.best_epoch + 1
    );
    print!("{}", out.trials.table());

    m.config(&cfg)?;
    for (name, stage) in [
        ("robot", SYNTH_STAGE),
        ("sample", SAMPLE_STAGE),
        ("split", SPLIT_STAGE),
        ("train", TRAIN_STAGE),
        ("noise_trial0", NOISE_STAGE),
        ("grouping_trial0", GROUPING_STAGE),
    ] {
        m.seed(name, cfg.stage_seed(stage));
    }
    m.write_beside(&out_dir)?;
    Ok(())
}
