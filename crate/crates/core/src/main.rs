use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cav_marl::harness::{self, load_config, ExperimentKind, ExperimentSpec, Report};
use cav_marl::marl::ShieldMode;

#[derive(Parser)]
#[command(
    name = "cav-marl",
    version,
    about = "Shielded multi-agent lane-change experiments on a traffic simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, checkpoint, and evaluate against a random shielded baseline.
    Train(Common),
    /// Evaluate the checkpoints a previous `train` wrote.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding seed_N/train/checkpoint (defaults to --out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate at each CAV ratio.
    SweepRatio(Common),
    /// Shielded policy, human drivers and the unshielded ablation per density.
    SweepDensity(Common),
    /// Minimum headway over the first timesteps of training.
    Headway(Common),
    /// Obstacle hidden behind a corner, with and without V2V sharing.
    Obstacle(Common),
    /// All human drivers on the evaluation seeds.
    Idm(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seeds (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Normalized density (1 = every lane packed at the safety distance).
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    cav_ratio: Option<f64>,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long)]
    timesteps: Option<usize>,
    /// Execute proposals unchecked (collisions end episodes with a penalty).
    #[arg(long)]
    no_shield: bool,
    /// Turn off V2V feature sharing.
    #[arg(long)]
    no_sharing: bool,
}

fn build_spec(kind: ExperimentKind, c: &Common) -> cav_marl::Result<ExperimentSpec> {
    let mut spec = match &c.config {
        Some(path) => load_config(path)?,
        None => ExperimentSpec::default(),
    };
    let x = &mut spec.experiment;
    x.kind = kind;
    if !c.seed.is_empty() {
        x.seeds = c.seed.clone();
    }
    if let Some(out) = &c.out {
        x.output_dir = out.clone();
    }
    if let Some(d) = c.density {
        match kind {
            ExperimentKind::DensitySweep => x.densities = vec![d],
            _ => x.normalized_density = Some(d),
        }
    }
    if let Some(r) = c.cav_ratio {
        match kind {
            ExperimentKind::RatioSweep => x.ratios = vec![r],
            ExperimentKind::DensitySweep => x.density_cav_ratio = r,
            ExperimentKind::HeadwayTrace => x.trace_cav_ratio = r,
            _ => spec.scenario.cav_ratio = r,
        }
    }
    if let Some(n) = c.episodes {
        spec.train.episodes = n;
    }
    if let Some(t) = c.timesteps {
        spec.scenario.max_timesteps = t;
        spec.experiment.obstacle.max_timesteps = t;
    }
    if c.no_shield {
        spec.experiment.shield = ShieldMode::Off;
    }
    if c.no_sharing {
        spec.perception.sharing = false;
    }
    spec.validate()?;
    Ok(spec)
}

fn print_report(spec: &ExperimentSpec, report: &Report) {
    println!(
        "{:<14} {:<12} {:>6} {:>6} {:>8} {:>9} {:>6} {:>9} {:>9} {:>7} {:>7}",
        "experiment", "policy", "seed", "ratio", "density", "v_mph", "c_bar", "flow", "min_gap", "unsafe", "coll"
    );
    for r in &report.rows {
        println!(
            "{:<14} {:<12} {:>6} {:>6.2} {:>8.4} {:>9.3} {:>6.3} {:>9.4} {:>9.2} {:>7} {:>7}",
            r.experiment,
            r.policy,
            r.seed,
            r.cav_ratio,
            r.density_vpm,
            r.v_bar_mph,
            r.c_bar,
            r.flow_vps,
            r.min_headway_m,
            r.unsafe_actions + r.train_unsafe,
            r.collisions + r.train_collisions,
        );
    }
    for e in &report.events {
        let pos = e.trigger_pos.map_or("never".to_string(), |p| format!("{p:.1}"));
        println!(
            "seed {} {:<12} vehicle {} trigger {} jam {}",
            e.seed, e.condition, e.vehicle, pos, e.jam
        );
    }
    println!(
        "wrote {}",
        spec.experiment.output_dir.join(harness::SUMMARY_FILE).display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let (spec, report) = match &cli.command {
            Command::Eval { common, checkpoint } => {
                let spec = build_spec(ExperimentKind::Eval, common)?;
                let report = harness::run_eval(&spec, checkpoint.as_deref())?;
                harness::finish(&spec, &report)?;
                (spec, report)
            }
            other => {
                let (kind, common) = match other {
                    Command::Train(c) if c.no_shield => (ExperimentKind::UnsafeAblation, c),
                    Command::Train(c) => (ExperimentKind::Train, c),
                    Command::SweepRatio(c) => (ExperimentKind::RatioSweep, c),
                    Command::SweepDensity(c) => (ExperimentKind::DensitySweep, c),
                    Command::Headway(c) => (ExperimentKind::HeadwayTrace, c),
                    Command::Obstacle(c) => (ExperimentKind::ObstacleCorner, c),
                    Command::Idm(c) => (ExperimentKind::IdmBaseline, c),
                    Command::Eval { .. } => unreachable!(),
                };
                let spec = build_spec(kind, common)?;
                let report = harness::run_experiment(&spec)?;
                (spec, report)
            }
        };
        print_report(&spec, &report);
        Ok::<_, cav_marl::Error>(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
