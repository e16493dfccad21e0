use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{vehicles_per_meter, ExperimentKind, ExperimentSpec};
use super::emit::{write_csv, write_metrics, write_plot, write_text, PlotPoint};
use super::obstacle::{obstacle_env, obstacle_scenario, CornerLog, TRAILING_CAV};
use super::{MetricsRecord, MPH_PER_MPS};
use crate::action::Action;
use crate::error::{Error, Result};
use crate::marl::{
    act_decentralized, load_checkpoint, save_checkpoint, Env, EnvConfig, EpisodeSummary, ShieldMode, StepOutcome,
    Trainer,
};
use crate::safety::SafetyVerdict;
use crate::world::{init_world, ScenarioSpec, WorldState};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot_long.csv";
pub const CONFIG_ECHO: &str = "config.toml";

// Independent random streams derived from one experiment seed.
const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_NETS: u64 = 3;
const STREAM_RANDOM_POLICY: u64 = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for item `index` of stream `stream` under experiment seed `seed`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

/// Means and totals over a run of per-step records.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub steps: usize,
    pub v_bar_mps: f64,
    pub c_bar: f64,
    pub min_headway_m: f64,
    pub unsafe_actions: u64,
    pub es_count: u64,
    pub collisions: u64,
}

pub fn aggregate(records: &[MetricsRecord]) -> Aggregate {
    let n = records.len();
    let mut v = 0.0;
    let mut c = 0.0;
    let mut out = Aggregate {
        steps: n,
        v_bar_mps: f64::NAN,
        c_bar: f64::NAN,
        min_headway_m: f64::INFINITY,
        unsafe_actions: 0,
        es_count: 0,
        collisions: 0,
    };
    for r in records {
        v += r.v_bar_mps;
        c += r.c_bar;
        out.min_headway_m = out.min_headway_m.min(r.min_headway_m);
        out.unsafe_actions += r.unsafe_actions as u64;
        out.es_count += r.es_count as u64;
        out.collisions += r.collisions as u64;
    }
    if n > 0 {
        out.v_bar_mps = v / n as f64;
        out.c_bar = c / n as f64;
    }
    out
}

/// One line of `summary.csv`: evaluation metrics for one policy, seed and
/// sweep point, plus totals from the training that produced the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub policy: String,
    pub seed: u64,
    pub cav_ratio: f64,
    pub normalized_density: Option<f64>,
    /// Vehicles per meter of road.
    pub density_vpm: f64,
    /// `ok`, or `skipped` when the scenario could not be built.
    pub status: String,
    pub eval_steps: usize,
    pub v_bar_mps: f64,
    pub v_bar_mph: f64,
    pub c_bar: f64,
    /// `density_vpm * v_bar_mps`.
    pub flow_vps: f64,
    pub min_headway_m: f64,
    pub unsafe_actions: u64,
    pub es_count: u64,
    pub collisions: u64,
    pub mean_episode_reward: f64,
    pub train_episodes: usize,
    pub train_steps: usize,
    pub train_unsafe: u64,
    pub train_collisions: u64,
    /// Training episodes ended by a collision.
    pub train_early_stops: usize,
    pub train_mean_reward: f64,
}

pub const SUMMARY_HEADER: [&str; 23] = [
    "experiment",
    "policy",
    "seed",
    "cav_ratio",
    "normalized_density",
    "density_vpm",
    "status",
    "eval_steps",
    "v_bar_mps",
    "v_bar_mph",
    "c_bar",
    "flow_vps",
    "min_headway_m",
    "unsafe_actions",
    "es_count",
    "collisions",
    "mean_episode_reward",
    "train_episodes",
    "train_steps",
    "train_unsafe",
    "train_collisions",
    "train_early_stops",
    "train_mean_reward",
];

impl SummaryRow {
    fn new(experiment: &str, policy: &str, seed: u64, cav_ratio: f64, normalized_density: Option<f64>) -> Self {
        SummaryRow {
            experiment: experiment.to_string(),
            policy: policy.to_string(),
            seed,
            cav_ratio,
            normalized_density,
            density_vpm: f64::NAN,
            status: "ok".to_string(),
            eval_steps: 0,
            v_bar_mps: f64::NAN,
            v_bar_mph: f64::NAN,
            c_bar: f64::NAN,
            flow_vps: f64::NAN,
            min_headway_m: f64::NAN,
            unsafe_actions: 0,
            es_count: 0,
            collisions: 0,
            mean_episode_reward: f64::NAN,
            train_episodes: 0,
            train_steps: 0,
            train_unsafe: 0,
            train_collisions: 0,
            train_early_stops: 0,
            train_mean_reward: f64::NAN,
        }
    }

    fn with_eval(mut self, eval: &EvalRun) -> Self {
        let a = aggregate(&eval.records);
        self.density_vpm = eval.density;
        self.eval_steps = a.steps;
        self.v_bar_mps = a.v_bar_mps;
        self.v_bar_mph = a.v_bar_mps * MPH_PER_MPS;
        self.c_bar = a.c_bar;
        self.flow_vps = eval.density * a.v_bar_mps;
        self.min_headway_m = a.min_headway_m;
        self.unsafe_actions = a.unsafe_actions;
        self.es_count = a.es_count;
        self.collisions = a.collisions;
        self.mean_episode_reward = mean(&eval.episode_rewards);
        self
    }

    fn with_training(mut self, run: &TrainRun) -> Self {
        self.train_episodes = run.episodes.len();
        self.train_steps = run.episodes.iter().map(|e| e.steps).sum();
        self.train_unsafe = run.episodes.iter().map(|e| e.unsafe_actions).sum();
        self.train_collisions = run.episodes.iter().map(|e| e.collisions).sum();
        self.train_early_stops = run.episodes.iter().filter(|e| e.terminated_early).count();
        let totals: Vec<f64> = run.episodes.iter().map(|e| e.total_reward).collect();
        self.train_mean_reward = mean(&totals);
        self
    }

    fn skipped(mut self) -> Self {
        self.status = "skipped".to_string();
        self
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per-episode line of `episodes.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_v_bar: f64,
    pub mean_c_bar: f64,
    pub unsafe_actions: u64,
    pub collisions: u64,
    pub es_count: u64,
    pub min_headway: f64,
    pub terminated_early: bool,
    pub mean_critic_loss: f64,
}

pub const EPISODE_HEADER: [&str; 11] = [
    "episode",
    "steps",
    "total_reward",
    "mean_v_bar",
    "mean_c_bar",
    "unsafe_actions",
    "collisions",
    "es_count",
    "min_headway",
    "terminated_early",
    "mean_critic_loss",
];

impl From<&EpisodeSummary> for EpisodeRow {
    fn from(e: &EpisodeSummary) -> Self {
        EpisodeRow {
            episode: e.episode,
            steps: e.steps,
            total_reward: e.total_reward,
            mean_v_bar: e.mean_v_bar,
            mean_c_bar: e.mean_c_bar,
            unsafe_actions: e.unsafe_actions,
            collisions: e.collisions,
            es_count: e.es_count,
            min_headway: e.min_headway,
            terminated_early: e.terminated_early,
            mean_critic_loss: e.mean_critic_loss,
        }
    }
}

/// A finished training run. `trainer` is `None` when the scenario has no
/// CAVs and there was nothing to train.
pub struct TrainRun {
    pub trainer: Option<Trainer>,
    pub episodes: Vec<EpisodeSummary>,
    /// Every training step's record, tagged with its episode.
    pub records: Vec<(usize, MetricsRecord)>,
}

impl TrainRun {
    fn write(&self, dir: &Path) -> Result<()> {
        let records: Vec<MetricsRecord> = self.records.iter().map(|(_, r)| *r).collect();
        write_metrics(&dir.join("metrics.csv"), &records)?;
        let rows: Vec<EpisodeRow> = self.episodes.iter().map(EpisodeRow::from).collect();
        write_csv(&dir.join("episodes.csv"), &EPISODE_HEADER, &rows)
    }
}

/// Train on `spec.train` with episode `ep` run in `env_for(ep)`. With
/// `step_limit`, training stops after the first episode that reaches it.
pub fn train_policy(
    spec: &ExperimentSpec,
    seed: u64,
    mut env_for: impl FnMut(usize) -> EnvConfig,
    step_limit: Option<usize>,
) -> Result<TrainRun> {
    let first = Env::new(env_for(0))?;
    let agents = first.agents().len();
    if agents == 0 {
        return Ok(TrainRun {
            trainer: None,
            episodes: Vec::new(),
            records: Vec::new(),
        });
    }
    let row_width = first.config().perception.history_row_width();
    let mut trainer = Trainer::new(spec.train.clone(), agents, row_width, derive_seed(seed, STREAM_NETS, 0))?;
    let mut records = Vec::new();
    let episodes = trainer.train_while(
        |ep| Env::new(env_for(ep)),
        |ep, o| records.push((ep, o.record)),
        |done| step_limit.is_none_or(|limit| done.iter().map(|e| e.steps).sum::<usize>() < limit),
    )?;
    Ok(TrainRun {
        trainer: Some(trainer),
        episodes,
        records,
    })
}

/// How CAVs choose their proposals during evaluation.
pub enum Controller<'a> {
    /// Each actor's argmax on its own history.
    Greedy(&'a Trainer),
    /// Uniform over the policy actions at every decision.
    Random(ChaCha8Rng),
    /// Always keep the lane.
    KeepLane,
}

impl Controller<'_> {
    fn decision_interval(&self, spec: &ExperimentSpec) -> usize {
        match self {
            Controller::Greedy(t) => t.config().decision_interval,
            _ => spec.train.decision_interval,
        }
    }
}

/// Run one episode to its end. `hook` sees the world before each step, the
/// outcome, and the world after.
pub fn drive(
    env: &mut Env,
    controller: &mut Controller<'_>,
    interval: usize,
    mut hook: impl FnMut(&WorldState, &StepOutcome, &WorldState),
) -> Result<()> {
    let mut step = 0usize;
    while !env.is_done() {
        let before = env.world().clone();
        let outcome = if step.is_multiple_of(interval.max(1)) {
            env.observe();
            let windows = env.windows();
            let mut failure = None;
            let outcome = env.step(|k, _, shield| match controller {
                Controller::Greedy(t) => match act_decentralized(t.actor(k), &windows[k], shield) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        SafetyVerdict {
                            executed: Action::EmergencyStop,
                            proposed: Action::EmergencyStop,
                            overridden: false,
                            tried: Vec::new(),
                        }
                    }
                },
                Controller::Random(rng) => shield(*Action::POLICY.choose(rng).expect("non-empty")),
                Controller::KeepLane => shield(Action::KeepLane),
            });
            if let Some(e) = failure {
                return Err(e);
            }
            outcome
        } else {
            env.step(|_, _, shield| shield(Action::KeepLane))
        };
        hook(&before, &outcome, env.world());
        step += 1;
    }
    Ok(())
}

/// Evaluation records, concatenated over episodes.
pub struct EvalRun {
    pub records: Vec<MetricsRecord>,
    pub episode_rewards: Vec<f64>,
    pub density: f64,
}

/// Evaluate `controller` for `spec.experiment.eval_episodes` episodes, each in
/// `env_for(k)`.
pub fn evaluate(
    spec: &ExperimentSpec,
    mut env_for: impl FnMut(usize) -> EnvConfig,
    controller: &mut Controller<'_>,
) -> Result<EvalRun> {
    let interval = controller.decision_interval(spec);
    let mut run = EvalRun {
        records: Vec::new(),
        episode_rewards: Vec::new(),
        density: f64::NAN,
    };
    for k in 0..spec.experiment.eval_episodes {
        let mut env = Env::new(env_for(k))?;
        run.density = env.density();
        drive(&mut env, controller, interval, |_, o, _| run.records.push(o.record))?;
        run.episode_rewards.push(env.episode_reward());
    }
    Ok(run)
}

fn eval_scenario(spec: &ExperimentSpec, base: &ScenarioSpec, seed: u64, k: usize) -> ScenarioSpec {
    let mut s = base.clone();
    s.seed = derive_seed(seed, STREAM_EVAL, k as u64);
    if spec.experiment.eval_timesteps > 0 {
        s.max_timesteps = spec.experiment.eval_timesteps;
    }
    s
}

fn train_scenario(base: &ScenarioSpec, seed: u64, ep: usize) -> ScenarioSpec {
    let mut s = base.clone();
    s.seed = derive_seed(seed, STREAM_TRAIN, ep as u64);
    s
}

fn random_controller(seed: u64) -> Controller<'static> {
    Controller::Random(ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_RANDOM_POLICY, 0)))
}

fn policy_name(shield: ShieldMode) -> &'static str {
    match shield {
        ShieldMode::On => "safe_marl",
        ShieldMode::Off => "unsafe",
    }
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

/// Everything an experiment wrote, for the caller to report.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub plot: Vec<PlotPoint>,
    pub events: Vec<CornerEvent>,
    pub traces: Vec<TraceRow>,
}

/// Write `summary.csv`, `plot_long.csv` and the echoed configuration.
pub fn finish(spec: &ExperimentSpec, report: &Report) -> Result<()> {
    let root = &spec.experiment.output_dir;
    write_csv(&root.join(SUMMARY_FILE), &SUMMARY_HEADER, &report.rows)?;
    write_plot(&root.join(PLOT_FILE), &report.plot)?;
    write_text(&root.join(CONFIG_ECHO), &spec.to_toml()?)
}

/// Run the experiment `spec.experiment.kind` names and write its outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let report = match spec.experiment.kind {
        ExperimentKind::Train => run_train(spec)?,
        ExperimentKind::UnsafeAblation => {
            let mut s = spec.clone();
            s.experiment.shield = ShieldMode::Off;
            run_train(&s)?
        }
        ExperimentKind::Eval => run_eval(spec, None)?,
        ExperimentKind::IdmBaseline => run_idm_baseline(spec)?,
        ExperimentKind::RatioSweep => run_ratio_sweep(spec)?,
        ExperimentKind::DensitySweep => run_density_sweep(spec)?,
        ExperimentKind::HeadwayTrace => run_headway_trace(spec)?,
        ExperimentKind::ObstacleCorner => run_obstacle_corner(spec)?,
    };
    finish(spec, &report)?;
    Ok(report)
}

fn training_plot(report: &mut Report, figure: &str, series: &str, seed: u64, run: &TrainRun) {
    for e in &run.episodes {
        report.plot.push(PlotPoint::new(
            figure,
            series,
            seed,
            e.episode as f64,
            "episode_reward",
            e.total_reward,
        ));
    }
}

/// Train with the configured shield, save a checkpoint, then evaluate the
/// greedy policy and a uniformly random shielded baseline on the same seeds.
pub fn run_train(spec: &ExperimentSpec) -> Result<Report> {
    let x = &spec.experiment;
    let base = spec.resolved_scenario();
    let mut report = Report::default();
    for &seed in &x.seeds {
        let dir = seed_dir(&x.output_dir, seed);
        let env_for = |ep| spec.env_config(train_scenario(&base, seed, ep), x.shield);
        let run = train_policy(spec, seed, env_for, None)?;
        run.write(&dir.join("train"))?;
        let name = policy_name(x.shield);
        training_plot(&mut report, "episode_reward", name, seed, &run);

        let eval_env = |k| spec.env_config(eval_scenario(spec, &base, seed, k), x.shield);
        let (policy, mut controller) = match &run.trainer {
            Some(t) => {
                let mut extra = BTreeMap::new();
                extra.insert("seed".to_string(), seed.to_string());
                save_checkpoint(&dir.join("train").join("checkpoint"), t, &extra)?;
                (name, Controller::Greedy(t))
            }
            None => ("idm", Controller::KeepLane),
        };
        let eval = evaluate(spec, eval_env, &mut controller)?;
        write_metrics(&dir.join("eval").join("metrics.csv"), &eval.records)?;
        let row = SummaryRow::new("train", policy, seed, base.cav_ratio, x.normalized_density)
            .with_eval(&eval)
            .with_training(&run);
        report.rows.push(row);

        if run.trainer.is_some() {
            // the baseline is always shielded, also next to the unshielded ablation
            let random_env = |k| spec.env_config(eval_scenario(spec, &base, seed, k), ShieldMode::On);
            let random = evaluate(spec, random_env, &mut random_controller(seed))?;
            write_metrics(&dir.join("eval_random").join("metrics.csv"), &random.records)?;
            let row = SummaryRow::new("train", "random", seed, base.cav_ratio, x.normalized_density).with_eval(&random);
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// Evaluate the greedy policy in each seed's checkpoint, found under
/// `checkpoints` (default: the output directory, as written by `run_train`).
pub fn run_eval(spec: &ExperimentSpec, checkpoints: Option<&Path>) -> Result<Report> {
    let x = &spec.experiment;
    let base = spec.resolved_scenario();
    let root = checkpoints.unwrap_or(&x.output_dir);
    let mut report = Report::default();
    for &seed in &x.seeds {
        let ckpt = seed_dir(root, seed).join("train").join("checkpoint");
        let (trainer, _) = load_checkpoint(&ckpt)?;
        let eval_env = |k| spec.env_config(eval_scenario(spec, &base, seed, k), x.shield);
        let probe = Env::new(eval_env(0))?;
        if probe.agents().len() != trainer.agents() {
            return Err(Error::Dimension {
                expected: trainer.agents(),
                got: probe.agents().len(),
            });
        }
        let eval = evaluate(spec, eval_env, &mut Controller::Greedy(&trainer))?;
        write_metrics(
            &seed_dir(&x.output_dir, seed).join("eval").join("metrics.csv"),
            &eval.records,
        )?;
        let row = SummaryRow::new(
            "eval",
            policy_name(x.shield),
            seed,
            base.cav_ratio,
            x.normalized_density,
        )
        .with_eval(&eval);
        report.rows.push(row);
    }
    Ok(report)
}

/// All vehicles human-driven, on the evaluation seeds the other policies use.
pub fn run_idm_baseline(spec: &ExperimentSpec) -> Result<Report> {
    let x = &spec.experiment;
    let mut base = spec.resolved_scenario();
    base.cav_ratio = 0.0;
    let mut report = Report::default();
    for &seed in &x.seeds {
        let eval_env = |k| spec.env_config(eval_scenario(spec, &base, seed, k), ShieldMode::On);
        let eval = evaluate(spec, eval_env, &mut Controller::KeepLane)?;
        write_metrics(
            &seed_dir(&x.output_dir, seed).join("eval").join("metrics.csv"),
            &eval.records,
        )?;
        report
            .rows
            .push(SummaryRow::new("idm_baseline", "idm", seed, 0.0, x.normalized_density).with_eval(&eval));
    }
    Ok(report)
}

/// Train and evaluate at each CAV ratio. Ratio 0 has no CAVs and runs the
/// human drivers alone.
pub fn run_ratio_sweep(spec: &ExperimentSpec) -> Result<Report> {
    let x = &spec.experiment;
    let mut report = Report::default();
    for &ratio in &x.ratios {
        let mut base = spec.resolved_scenario();
        base.cav_ratio = ratio;
        for &seed in &x.seeds {
            let dir = seed_dir(&x.output_dir.join(format!("ratio_{ratio}")), seed);
            let run = train_policy(
                spec,
                seed,
                |ep| spec.env_config(train_scenario(&base, seed, ep), x.shield),
                None,
            )?;
            run.write(&dir.join("train"))?;
            let eval_env = |k| spec.env_config(eval_scenario(spec, &base, seed, k), x.shield);
            let (policy, mut controller) = match &run.trainer {
                Some(t) => (policy_name(x.shield), Controller::Greedy(t)),
                None => ("idm", Controller::KeepLane),
            };
            let eval = evaluate(spec, eval_env, &mut controller)?;
            write_metrics(&dir.join("eval").join("metrics.csv"), &eval.records)?;
            let row = SummaryRow::new("ratio_sweep", policy, seed, ratio, x.normalized_density)
                .with_eval(&eval)
                .with_training(&run);
            for (metric, value) in [("v_bar_mph", row.v_bar_mph), ("c_bar", row.c_bar)] {
                report
                    .plot
                    .push(PlotPoint::new("cav_ratio", "safe_marl", seed, ratio, metric, value));
            }
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// At each normalized density, with the CAV ratio fixed: the shielded
/// policy, all human drivers, and the unshielded ablation, on the same seeds.
/// Densities the road cannot hold are reported as skipped.
pub fn run_density_sweep(spec: &ExperimentSpec) -> Result<Report> {
    let x = &spec.experiment;
    let mut report = Report::default();
    for &rho in &x.densities {
        let mut base = spec.scenario.clone();
        base.density = vehicles_per_meter(rho, base.road.num_lanes, base.vehicle_length, spec.safety.d_s);
        base.cav_ratio = x.density_cav_ratio;
        let feasible = init_world(&base).is_ok();
        for &seed in &x.seeds {
            let point = x.output_dir.join(format!("density_{rho}"));
            for (policy, shield) in [
                ("safe_marl", ShieldMode::On),
                ("idm", ShieldMode::On),
                ("unsafe", ShieldMode::Off),
            ] {
                let ratio = if policy == "idm" { 0.0 } else { base.cav_ratio };
                let row = SummaryRow::new("density_sweep", policy, seed, ratio, Some(rho));
                if !feasible {
                    report.rows.push(row.skipped());
                    continue;
                }
                let dir = seed_dir(&point.join(policy), seed);
                let mut scenario = base.clone();
                scenario.cav_ratio = ratio;
                let eval_env = |k| spec.env_config(eval_scenario(spec, &scenario, seed, k), shield);
                let row = if policy == "idm" {
                    let eval = evaluate(spec, eval_env, &mut Controller::KeepLane)?;
                    write_metrics(&dir.join("eval").join("metrics.csv"), &eval.records)?;
                    row.with_eval(&eval)
                } else {
                    let run = train_policy(
                        spec,
                        seed,
                        |ep| spec.env_config(train_scenario(&scenario, seed, ep), shield),
                        None,
                    )?;
                    run.write(&dir.join("train"))?;
                    let mut controller = match &run.trainer {
                        Some(t) => Controller::Greedy(t),
                        None => Controller::KeepLane,
                    };
                    let eval = evaluate(spec, eval_env, &mut controller)?;
                    write_metrics(&dir.join("eval").join("metrics.csv"), &eval.records)?;
                    row.with_eval(&eval).with_training(&run)
                };
                for (metric, value) in [("flow_vps", row.flow_vps), ("c_bar", row.c_bar)] {
                    report
                        .plot
                        .push(PlotPoint::new("density", policy, seed, rho, metric, value));
                }
                report.plot.push(PlotPoint::new(
                    "unsafe_actions",
                    policy,
                    seed,
                    rho,
                    "train_unsafe",
                    row.train_unsafe as f64,
                ));
                report.rows.push(row);
            }
        }
    }
    Ok(report)
}

/// One line of `trace.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub seed: u64,
    /// Training step counted from the start of training.
    pub step: usize,
    pub episode: usize,
    pub timestep: u64,
    pub min_headway_m: f64,
}

pub const TRACE_HEADER: [&str; 5] = ["seed", "step", "episode", "timestep", "min_headway_m"];

/// Minimum headway over the first `trace_timesteps` steps of training, at
/// `trace_cav_ratio`.
pub fn run_headway_trace(spec: &ExperimentSpec) -> Result<Report> {
    let x = &spec.experiment;
    let mut base = spec.resolved_scenario();
    base.cav_ratio = x.trace_cav_ratio;
    let name = policy_name(x.shield);
    let mut report = Report::default();
    for &seed in &x.seeds {
        let dir = seed_dir(&x.output_dir, seed);
        let env_for = |ep| spec.env_config(train_scenario(&base, seed, ep), x.shield);
        let mut run = train_policy(spec, seed, env_for, Some(x.trace_timesteps))?;
        run.records.truncate(x.trace_timesteps);
        run.write(&dir.join("train"))?;
        let trace: Vec<TraceRow> = run
            .records
            .iter()
            .enumerate()
            .map(|(step, (episode, r))| TraceRow {
                seed,
                step,
                episode: *episode,
                timestep: r.timestep,
                min_headway_m: r.min_headway_m,
            })
            .collect();
        write_csv(&dir.join("trace.csv"), &TRACE_HEADER, &trace)?;
        for t in &trace {
            report.plot.push(PlotPoint::new(
                "headway",
                name,
                seed,
                t.step as f64,
                "min_headway_m",
                t.min_headway_m,
            ));
        }
        let records: Vec<MetricsRecord> = run.records.iter().map(|(_, r)| *r).collect();
        let eval = EvalRun {
            records,
            episode_rewards: Vec::new(),
            density: base.effective_density(),
        };
        report.rows.push(
            SummaryRow::new("headway_trace", name, seed, base.cav_ratio, x.normalized_density)
                .with_eval(&eval)
                .with_training(&run),
        );
        report.traces.extend(trace);
    }
    Ok(report)
}

/// One CAV's outcome in one obstacle-scene condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerEvent {
    pub seed: u64,
    pub condition: String,
    pub vehicle: usize,
    pub trailing: bool,
    /// Longitudinal position at its first lane change out of the obstacle
    /// lane; empty if it never left.
    pub trigger_pos: Option<f64>,
    pub jam: bool,
    pub max_stuck: usize,
    pub episode_reward: f64,
}

pub const EVENT_HEADER: [&str; 8] = [
    "seed",
    "condition",
    "vehicle",
    "trailing",
    "trigger_pos",
    "jam",
    "max_stuck",
    "episode_reward",
];

/// Train on randomized obstacle scenes, then run the evaluation scene with
/// V2V sharing on and off on the same seed.
pub fn run_obstacle_corner(spec: &ExperimentSpec) -> Result<Report> {
    let x = &spec.experiment;
    let sharing = spec.perception.sharing;
    let mut report = Report::default();
    for &seed in &x.seeds {
        let dir = seed_dir(&x.output_dir, seed);
        let env_for = |ep| {
            obstacle_env(
                spec,
                obstacle_scenario(spec, derive_seed(seed, STREAM_TRAIN, ep as u64), true),
                sharing,
            )
        };
        let run = train_policy(spec, seed, env_for, None)?;
        run.write(&dir.join("train"))?;
        training_plot(&mut report, "obstacle_training", "safe_marl", seed, &run);
        let trainer = run
            .trainer
            .as_ref()
            .ok_or_else(|| Error::Config("the obstacle scene has no CAVs".into()))?;

        let scene_seed = derive_seed(seed, STREAM_EVAL, 0);
        for (condition, on) in [("sharing_on", true), ("sharing_off", false)] {
            let scenario = obstacle_scenario(spec, scene_seed, false);
            let mut env = Env::new(obstacle_env(spec, scenario, on))?;
            let mut log = CornerLog::new(env.world(), &x.obstacle, spec.scenario.dt);
            let mut records = Vec::new();
            drive(
                &mut env,
                &mut Controller::Greedy(trainer),
                trainer.config().decision_interval,
                |before, o, after| {
                    log.observe(before, o, after);
                    records.push(o.record);
                },
            )?;
            write_metrics(&dir.join(condition).join("metrics.csv"), &records)?;
            for (&vehicle, &trigger_pos) in &log.triggers {
                report.events.push(CornerEvent {
                    seed,
                    condition: condition.to_string(),
                    vehicle,
                    trailing: vehicle == TRAILING_CAV,
                    trigger_pos,
                    jam: log.jam(),
                    max_stuck: log.max_stuck,
                    episode_reward: env.episode_reward(),
                });
            }
            let trailing = log.trigger(TRAILING_CAV).unwrap_or(f64::NAN);
            report.plot.push(PlotPoint::new(
                "obstacle",
                condition,
                seed,
                seed as f64,
                "trigger_pos",
                trailing,
            ));
            report.plot.push(PlotPoint::new(
                "obstacle",
                condition,
                seed,
                seed as f64,
                "jam",
                log.jam() as u8 as f64,
            ));
            let eval = EvalRun {
                density: env.density(),
                records,
                episode_rewards: vec![env.episode_reward()],
            };
            let ratio = env.agents().len() as f64
                / env
                    .world()
                    .vehicles
                    .iter()
                    .filter(|v| v.kind != crate::world::VehicleKind::Obstacle)
                    .count() as f64;
            report.rows.push(
                SummaryRow::new("obstacle_corner", condition, seed, ratio, None)
                    .with_eval(&eval)
                    .with_training(&run),
            );
        }
    }
    write_csv(&x.output_dir.join("events.csv"), &EVENT_HEADER, &report.events)?;
    Ok(report)
}
