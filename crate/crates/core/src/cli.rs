//! Batch front-end: one JSON run config in, deterministic CSV and JSON
//! artifacts out. No interactivity and no timestamps; the same config,
//! seed, and output directory reproduce every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{sample_diffusive_record, sample_jump_record};
use crate::hmm::{check_embedding, sample_observations, EmbeddingCheck, HmmModel};
use crate::model::{pauli, Pauli, ScenarioConfig, ScenarioKind};
use crate::paststate::{expectation_series, guessing_game, smooth, GameConfig};
use crate::persist::{self, SiteRow};
use crate::qops::{past_distribution, DensityMatrix, MeasurementSpec, Operator, C64};

pub const DEFAULT_GAME_TRAJECTORIES: usize = 10_000;
/// Length of the symbol sequence drawn when no observation file is given.
pub const SAMPLED_OBSERVATIONS: usize = 20;
/// Largest classical-vs-embedded deviation hmm-check accepts.
pub const HMM_CHECK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Smooth,
    Game,
    HmmCheck,
}

/// What to take expectation values of in the smoothed series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    Sz,
    Sx,
    Sy,
    /// Site projector |b⟩⟨b| ⊗ I on the jumping atom.
    SiteB,
}

/// One run, fully described. Field relevance depends on the command;
/// unknown keys are rejected so typos fail loudly instead of silently
/// falling back to defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    /// HMM model file (hmm-check).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmm_model: Option<PathBuf>,
    /// Observation sequence file (hmm-check); absent means a sequence is
    /// sampled from the chain itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmm_observations: Option<PathBuf>,
    /// Input record for smooth; defaults to record.csv in the output
    /// directory, which is where simulate puts it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Observable>,
    /// Hidden-measurement time for the game; defaults to the grid midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    /// Overrides the scenario's seed when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Parser, Debug)]
#[command(name = "qsmooth", version, about = "Forward-backward estimation for monitored quantum systems")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config's trajectory count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Suppress the one-line progress summary.
    #[arg(long)]
    pub quiet: bool,
}

/// Parse the command line, run, and map errors onto the exit-code
/// contract: 0 ok, 2 config, 3 numerical, 4 io.
pub fn run_main() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            let (kind, code) = classify(&err);
            let payload =
                serde_json::json!({ "error": { "kind": kind, "message": err.to_string() } });
            eprintln!("{payload}");
            code
        }
    }
}

fn classify(err: &Error) -> (&'static str, i32) {
    match err {
        Error::Io { .. } => ("io", 4),
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::FingerprintMismatch { .. }
        | Error::DimensionMismatch { .. }
        | Error::NotSquare { .. }
        | Error::NonFiniteEntries
        | Error::NonFiniteIncrement { .. }
        | Error::ImpossibleObservation { .. }
        | Error::StepTooLarge { .. }
        | Error::TooLargeForEnumeration { .. } => ("config", 2),
        _ => ("numerical", 3),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut config: RunConfig = persist::from_json(&persist::read_text(&cli.config)?, "run config")?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(n) = cli.n {
        config.n_trajectories = Some(n);
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.display().to_string(),
        source: e,
    })?;
    match config.command {
        Command::Simulate => cmd_simulate(&config, &cli.out, cli.quiet),
        Command::Smooth => cmd_smooth(&config, &cli.out, cli.quiet),
        Command::Game => cmd_game(&config, &cli.out, cli.quiet),
        Command::HmmCheck => cmd_hmm_check(&config, &cli.out, cli.quiet),
    }
}

/// Seed precedence: --seed flag, then the config's top-level seed, then
/// whatever the scenario block carries.
fn resolved_scenario(config: &RunConfig) -> Result<ScenarioConfig> {
    let mut scenario = config
        .scenario
        .clone()
        .ok_or_else(|| Error::Config("this command needs a `scenario` block".into()))?;
    if let Some(seed) = config.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

/// Spin starts in |↑⟩; the atom starts in the dim site's internal ground
/// state, so the record has to reveal everything that follows.
fn initial_state(kind: ScenarioKind) -> DensityMatrix {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    match kind {
        ScenarioKind::RabiSpin => DensityMatrix::pure(&[one, zero]),
        ScenarioKind::JumpingAtom => DensityMatrix::pure(&[zero, one, zero, zero]),
    }
    .expect("basis kets are unit vectors")
}

fn default_observable(kind: ScenarioKind) -> Observable {
    match kind {
        ScenarioKind::RabiSpin => Observable::Sz,
        ScenarioKind::JumpingAtom => Observable::SiteB,
    }
}

fn site_b_projector() -> Operator {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    Operator::from_diag(&[zero, zero, one, one])
}

fn observable_operator(obs: Observable, dim: usize) -> Result<Operator> {
    let op = match obs {
        Observable::Sz => pauli(Pauli::Z),
        Observable::Sx => pauli(Pauli::X),
        Observable::Sy => pauli(Pauli::Y),
        Observable::SiteB => site_b_projector(),
    };
    if op.dim() != dim {
        return Err(Error::DimensionMismatch {
            left: op.dim(),
            right: dim,
            context: "requested observable",
        });
    }
    Ok(op)
}

fn site_spec() -> MeasurementSpec {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let pi_a = Operator::from_diag(&[one, one, zero, zero]);
    MeasurementSpec::projective(vec![pi_a, site_b_projector()], &["a", "b"])
        .expect("site projectors resolve the identity")
}

fn cmd_simulate(config: &RunConfig, out: &Path, quiet: bool) -> Result<()> {
    let scenario = resolved_scenario(config)?;
    let model = scenario.build()?;
    let rho0 = initial_state(scenario.kind);
    let (record, trajectory, truth) = match scenario.kind {
        ScenarioKind::RabiSpin => {
            let (record, traj) =
                sample_diffusive_record(&model, &rho0, scenario.t_end, scenario.dt, scenario.seed)?;
            (record, traj, None)
        }
        ScenarioKind::JumpingAtom => {
            let (record, traj, truth) =
                sample_jump_record(&model, &rho0, scenario.t_end, scenario.dt, scenario.seed)?;
            (record, traj, Some(truth))
        }
    };
    let record_path = out.join("record.csv");
    persist::write_record_csv(&record_path, &record)?;
    persist::write_record_meta(&persist::meta_path_for(&record_path), &record, &scenario)?;
    persist::write_state_trajectory_csv(&out.join("trajectory.csv"), &trajectory)?;
    if let Some(truth) = &truth {
        persist::write_truth_csv(&out.join("truth.csv"), &record.grid().times(), truth)?;
    }
    if !quiet {
        match scenario.kind {
            ScenarioKind::RabiSpin => {
                println!("simulate: {} steps -> {}", record.n_steps(), record_path.display());
            }
            ScenarioKind::JumpingAtom => {
                println!(
                    "simulate: {} steps, {} clicks -> {}",
                    record.n_steps(),
                    record.total_clicks(),
                    record_path.display()
                );
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SmoothSummary<'a> {
    command: Command,
    scenario: &'a ScenarioConfig,
    record: String,
    observable: Observable,
    n_steps: usize,
    /// Grid points whose weak value was dropped as degenerate.
    degenerate_points: usize,
}

fn cmd_smooth(config: &RunConfig, out: &Path, quiet: bool) -> Result<()> {
    let scenario = resolved_scenario(config)?;
    let model = scenario.build()?;
    let record_path = config
        .record
        .clone()
        .unwrap_or_else(|| out.join("record.csv"));
    let (record, _) = persist::read_record(&record_path, &persist::meta_path_for(&record_path))?;
    let rho0 = initial_state(scenario.kind);
    let traj = smooth(&record, &model, &rho0, &[])?;

    let observable = config
        .observable
        .unwrap_or_else(|| default_observable(scenario.kind));
    let a = observable_operator(observable, model.dim())?;
    let series = expectation_series(&traj, &a)?;
    persist::write_series_csv(&out.join("series.csv"), &series)?;
    let degenerate = series.iter().filter(|p| p.weak_value.is_none()).count();

    if scenario.kind == ScenarioKind::JumpingAtom {
        let spec = site_spec();
        let pb = site_b_projector();
        let mut rows = Vec::with_capacity(traj.len());
        for pair in traj.pairs() {
            let filtered = pair.rho.expectation(&pb).re;
            let smoothed = match past_distribution(pair, &spec) {
                Ok(p) => Some(p[1]),
                Err(Error::DegeneratePastState { .. }) => None,
                Err(e) => return Err(e),
            };
            rows.push(SiteRow {
                t: pair.time,
                filtered,
                smoothed,
            });
        }
        persist::write_site_series_csv(&out.join("sites.csv"), &rows)?;
    }

    let summary = SmoothSummary {
        command: Command::Smooth,
        scenario: &scenario,
        record: record_path.display().to_string(),
        observable,
        n_steps: record.n_steps(),
        degenerate_points: degenerate,
    };
    persist::write_text(&out.join("smooth.meta.json"), &persist::to_pretty_json(&summary)?)?;
    if !quiet {
        println!(
            "smooth: {} grid points -> {}",
            traj.len(),
            out.join("series.csv").display()
        );
    }
    Ok(())
}

fn cmd_game(config: &RunConfig, out: &Path, quiet: bool) -> Result<()> {
    let scenario = resolved_scenario(config)?;
    let n = config.n_trajectories.unwrap_or(DEFAULT_GAME_TRAJECTORIES);
    let base_seed = scenario.seed;
    let mut game = GameConfig::new(scenario, n, base_seed)?;
    if let Some(t0) = config.t0 {
        game.t0 = t0;
    }
    let report = guessing_game(&game)?;
    persist::write_text(&out.join("game_report.json"), &persist::to_pretty_json(&report)?)?;
    persist::write_histogram_csv(&out.join("forward_hist.csv"), &report.forward_prob_histogram)?;
    persist::write_histogram_csv(&out.join("past_hist.csv"), &report.past_prob_histogram)?;
    if !quiet {
        println!(
            "game: forward {:.4}, past {:.4} over {} trajectories",
            report.forward_accuracy,
            report.past_accuracy,
            report.n_trajectories - report.failures
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct HmmCheckSummary {
    command: Command,
    hmm_model: String,
    /// Present when the symbols came from a file rather than the sampler.
    #[serde(skip_serializing_if = "Option::is_none")]
    observations_file: Option<String>,
    /// Present when the symbols were sampled, with the seed used.
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_seed: Option<u64>,
    n_observations: usize,
    n_states: usize,
    n_symbols: usize,
    deviations: EmbeddingCheck,
    tolerance: f64,
    pass: bool,
}

fn cmd_hmm_check(config: &RunConfig, out: &Path, quiet: bool) -> Result<()> {
    let model_path = config
        .hmm_model
        .as_ref()
        .ok_or_else(|| Error::Config("hmm-check needs an `hmm_model` path".into()))?;
    let model: HmmModel = persist::from_json(&persist::read_text(model_path)?, "hmm model")?;
    let (observations, observations_file, sample_seed) = match &config.hmm_observations {
        Some(path) => {
            let obs: Vec<usize> = persist::from_json(&persist::read_text(path)?, "hmm observations")?;
            (obs, Some(path.display().to_string()), None)
        }
        None => {
            let seed = config.seed.unwrap_or(0);
            (
                sample_observations(&model, SAMPLED_OBSERVATIONS, seed),
                None,
                Some(seed),
            )
        }
    };
    let deviations = check_embedding(&model, &observations)?;
    let max = deviations.max_deviation();
    let pass = max <= HMM_CHECK_TOL;
    let summary = HmmCheckSummary {
        command: Command::HmmCheck,
        hmm_model: model_path.display().to_string(),
        observations_file,
        sample_seed,
        n_observations: observations.len(),
        n_states: model.n_states(),
        n_symbols: model.n_symbols(),
        deviations,
        tolerance: HMM_CHECK_TOL,
        pass,
    };
    persist::write_text(&out.join("hmm_check.json"), &persist::to_pretty_json(&summary)?)?;
    if !quiet {
        println!(
            "hmm-check: max deviation {max:.3e} ({})",
            if pass { "pass" } else { "fail" }
        );
    }
    if !pass {
        return Err(Error::ToleranceExceeded {
            what: "hmm embedding deviation",
            value: max,
            tol: HMM_CHECK_TOL,
        });
    }
    Ok(())
}
