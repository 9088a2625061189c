//! Two-sided estimation: the forward filter and the backward effect pass
//! zipped into Ξ(t) pairs, retrodicted expectation series, the analytic
//! step coefficients of both expectation differentials, and the
//! hidden-measurement guessing game.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effect::{normalize_effect, run_backward};
use crate::error::{Error, Result};
use crate::filter::{renormalize, run_forward, Interruption, Kernel, MeasurementRecord};
use crate::model::{Model, ScenarioConfig, ScenarioKind};
use crate::qops::{
    born_distribution, past_distribution, weak_value, DensityMatrix, EffectMatrix,
    MeasurementSpec, Operator, PastStatePair, C64, DEGENERACY_THRESHOLD,
};

/// Ξ(t) on the record's grid: at every grid point the forward state
/// conditioned on the data before t paired with the effect conditioned on
/// the data from t onward.
#[derive(Clone, Debug)]
pub struct PastTrajectory {
    pairs: Vec<PastStatePair>,
}

impl PastTrajectory {
    fn from_pairs(pairs: Vec<PastStatePair>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[PastStatePair] {
        &self.pairs
    }

    pub fn times(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.time).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Run both passes over the same record and zip them index by index.
///
/// At an interruption index the pair is (ρ(t0−), E(t0+)): the forward pass
/// stores the state before the unread measurement, the backward pass the
/// effect after it, so the pair retrodicts exactly that measurement.
pub fn smooth(
    record: &MeasurementRecord,
    model: &Model,
    rho0: &DensityMatrix,
    interruptions: &[Interruption],
) -> Result<PastTrajectory> {
    let forward = run_forward(record, model, rho0, interruptions)?;
    let backward = run_backward(record, model, interruptions)?;
    let pairs = forward
        .times()
        .iter()
        .zip(forward.states().iter().zip(backward.effects()))
        .map(|(&t, (rho, effect))| PastStatePair::new(rho.clone(), effect.clone(), t))
        .collect::<Result<Vec<_>>>()?;
    Ok(PastTrajectory::from_pairs(pairs))
}

/// One grid point of an expectation series. A missing weak value marks a
/// degenerate pair (Tr(ρE) below threshold); it is reported as a gap, never
/// interpolated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesPoint {
    pub time: f64,
    pub forward_mean: f64,
    pub weak_value: Option<C64>,
}

pub fn expectation_series(traj: &PastTrajectory, a: &Operator) -> Result<Vec<SeriesPoint>> {
    if let Some(first) = traj.pairs.first() {
        if a.dim() != first.rho.dim() {
            return Err(Error::DimensionMismatch {
                left: a.dim(),
                right: first.rho.dim(),
                context: "expectation_series",
            });
        }
    }
    traj.pairs
        .iter()
        .map(|pair| {
            let weak = match weak_value(pair, a) {
                Ok(w) => Some(w),
                Err(Error::DegeneratePastState { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(SeriesPoint {
                time: pair.time,
                forward_mean: pair.rho.expectation(a).re,
                weak_value: weak,
            })
        })
        .collect()
}

/// Analytic coefficients of the two expectation differentials over one grid
/// step, evaluated at the step's left endpoint.
///
/// The retrodicted mean obeys, exactly in discrete time,
///   Δ⟨A⟩_w = weak_dt·dt + weak_dy·dY,
/// because the forward and backward updates are mutual adjoints. The
/// conventional mean satisfies Δ⟨A⟩ = forward_dt·dt + forward_dw·dW only to
/// the usual Euler accuracy, with dW = dY − √η Tr((c+c†)ρ)dt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub time: f64,
    pub weak_dt: f64,
    pub weak_dy: f64,
    pub forward_dt: f64,
    pub forward_dw: f64,
}

pub fn increment_diagnostics(
    traj: &PastTrajectory,
    record: &MeasurementRecord,
    model: &Model,
    a: &Operator,
) -> Result<Vec<StepCoefficients>> {
    if record.model_fingerprint() != model.fingerprint() {
        return Err(Error::FingerprintMismatch {
            record: record.model_fingerprint().to_string(),
            model: model.fingerprint(),
        });
    }
    if !model.counting_channels().is_empty() {
        return Err(Error::InvalidParameter(
            "increment diagnostics are defined for diffusive records only".into(),
        ));
    }
    let (c, eta) = match model.diffusive_channel() {
        Some(pair) => pair,
        None => {
            return Err(Error::InvalidParameter(
                "increment diagnostics need a diffusive channel".into(),
            ))
        }
    };
    if a.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: model.dim(),
            context: "increment_diagnostics",
        });
    }
    let n = record.n_steps();
    if traj.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            left: traj.len(),
            right: n + 1,
            context: "increment_diagnostics grid",
        });
    }

    let sqrt_eta = eta.sqrt();
    let h = model.hamiltonian();
    let com_ah = a.commutator(h);
    let com_ac = a.commutator(c);
    let c_dag = c.adjoint();
    let cpc = c + &c_dag;
    let ac_ca = &a.matmul(c) + &c_dag.matmul(a);

    // Per-channel operators fixed along the trajectory: for each L the weak
    // drift needs [A,L] against ρL†E' and [A,L†L] against ρE', the forward
    // drift the sandwiches L†AL and AL†L + L†LA.
    struct ChannelTerms {
        l_dag: Operator,
        com_al: Operator,
        com_aldl: Operator,
        ldal: Operator,
        sym: Operator,
    }
    let terms: Vec<ChannelTerms> = model
        .channels()
        .iter()
        .map(|ch| {
            let l = ch.lindblad();
            let l_dag = l.adjoint();
            let ldl = l_dag.matmul(l);
            ChannelTerms {
                com_al: a.commutator(l),
                com_aldl: a.commutator(&ldl),
                ldal: l_dag.matmul(a).matmul(l),
                sym: &a.matmul(&ldl) + &ldl.matmul(a),
                l_dag,
            }
        })
        .collect();

    let minus_i = C64::new(0.0, -1.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let rho = &traj.pairs[i].rho;
        let e_here = &traj.pairs[i].effect;
        let e_next = &traj.pairs[i + 1].effect;

        let den = rho.operator().trace_product(e_here.operator());
        if den.norm() <= DEGENERACY_THRESHOLD {
            return Err(Error::DegeneratePastState {
                denominator: den.norm(),
            });
        }
        // The stored matrices are rescaled per point; the factor between the
        // unnormalized E at i+1 and at i restores the exact identity.
        let scale = (e_next.log_norm() - e_here.log_norm()).exp();

        let rho_e = rho.operator().matmul(e_next.operator());
        let mut weak_drift = minus_i * com_ah.trace_product(&rho_e);
        for t in &terms {
            let rho_ld_e = rho.operator().matmul(&t.l_dag).matmul(e_next.operator());
            weak_drift += t.com_al.trace_product(&rho_ld_e)
                - 0.5 * t.com_aldl.trace_product(&rho_e);
        }
        let weak_noise = sqrt_eta * com_ac.trace_product(&rho_e);

        let mean_a = rho.expectation(a).re;
        let mut forward_drift = (minus_i * rho.expectation(&com_ah)).re;
        for t in &terms {
            forward_drift += rho.expectation(&t.ldal).re - 0.5 * rho.expectation(&t.sym).re;
        }
        let signal = rho.expectation(&cpc).re;
        let forward_noise = sqrt_eta * (rho.expectation(&ac_ca).re - signal * mean_a);

        out.push(StepCoefficients {
            time: traj.pairs[i].time,
            weak_dt: (scale * weak_drift / den).re,
            weak_dy: (scale * weak_noise / den).re,
            forward_dt: forward_drift,
            forward_dw: forward_noise,
        });
    }
    Ok(out)
}

/// Setup for the hidden-measurement game: an unread projective σ_z
/// measurement at t0, guessed once from ρ(t0) and once from Ξ(t0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub scenario: ScenarioConfig,
    /// Hidden measurement time; must be a grid point strictly inside
    /// (0, t_end).
    pub t0: f64,
    pub n_trajectories: usize,
    pub base_seed: u64,
}

impl GameConfig {
    /// Place the hidden measurement at the grid midpoint (rounded down for
    /// odd step counts) so both sides condition on comparable data spans.
    pub fn new(scenario: ScenarioConfig, n_trajectories: usize, base_seed: u64) -> Result<Self> {
        let grid = scenario.grid()?;
        let t0 = (grid.n_steps() / 2) as f64 * grid.dt();
        Ok(Self {
            scenario,
            t0,
            n_trajectories,
            base_seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub scenario: ScenarioConfig,
    pub t0: f64,
    pub n_trajectories: usize,
    pub base_seed: u64,
    /// Fraction of trajectories whose guess from ρ(t0) matched the hidden
    /// outcome, and the same for Ξ(t0).
    pub forward_accuracy: f64,
    pub past_accuracy: f64,
    /// Counts of P(up) over 20 equal bins of [0,1], one entry per completed
    /// trajectory.
    pub forward_prob_histogram: Vec<u64>,
    pub past_prob_histogram: Vec<u64>,
    /// Mean ln of the probability each estimator assigned to the outcome
    /// that actually occurred, and the paired standard error of their gap.
    pub mean_log_score_forward: f64,
    pub mean_log_score_past: f64,
    pub log_score_gap_se: f64,
    pub ties_forward: usize,
    pub ties_past: usize,
    pub failures: usize,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Largest tolerated fraction of failed trajectories before the whole game
/// run is treated as broken.
const FAILURE_BUDGET: f64 = 1e-3;

struct Trial {
    hidden: usize,
    p_up_forward: f64,
    p_up_past: f64,
}

/// Argmax guess with ties broken toward spin-up; flags the tie.
fn guess_up(p_up: f64) -> (usize, bool) {
    if (p_up - 0.5).abs() < 1e-12 {
        (0, true)
    } else if p_up > 0.5 {
        (0, false)
    } else {
        (1, false)
    }
}

fn histogram_bin(p: f64) -> usize {
    ((p * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

fn run_trial(
    model: &Model,
    spec: &MeasurementSpec,
    dt: f64,
    n: usize,
    i0: usize,
    seed: u64,
) -> Result<Trial> {
    let dim = model.dim();
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    let sqrt_eta = kernel.sqrt_eta();
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);

    // Truth pass from |↑⟩: emit the record, and at i0 draw the unread
    // outcome by Born's rule and collapse the true state.
    let mut x = Array2::<C64>::zeros((dim, dim));
    x[[0, 0]] = one;
    let mut increments = vec![0.0f64; n];
    let mut hidden = 0usize;
    for (i, slot) in increments.iter_mut().enumerate() {
        if i == i0 {
            let p_up = x[[0, 0]].re;
            hidden = usize::from(rng.random::<f64>() >= p_up);
            x.fill(zero);
            x[[hidden, hidden]] = one;
        }
        let mean = sqrt_eta * kernel.signal_mean(&x) * dt;
        let dw: f64 = rng.sample::<f64, _>(StandardNormal);
        let dy = mean + dw * sqrt_dt;
        *slot = dy;
        kernel.forward_diffusive(&mut x, dy, dt);
        renormalize(&mut x, i)?;
    }

    // The estimator knows the record but not the interruption: filter up to
    // t0, propagate the effect back down to t0, and read both guesses off
    // the mixed pair (ρ(t0−), E(t0+)).
    let mut rf = Array2::<C64>::zeros((dim, dim));
    rf[[0, 0]] = one;
    for (i, &dy) in increments.iter().enumerate().take(i0) {
        kernel.forward_diffusive(&mut rf, dy, dt);
        renormalize(&mut rf, i)?;
    }
    let mut ef = Operator::identity(dim).into_array();
    for &dy in increments[i0..].iter().rev() {
        kernel.backward_diffusive(&mut ef, dy, dt);
        normalize_effect(&mut ef)?;
    }

    let rho = DensityMatrix::from_normalized_parts(Operator::new(rf)?, 0.0);
    let effect = EffectMatrix::from_parts(Operator::new(ef)?, 0.0);
    let pair = PastStatePair::new(rho.clone(), effect, i0 as f64 * dt)?;
    let p_forward = born_distribution(&rho, spec)?;
    let p_past = past_distribution(&pair, spec)?;
    Ok(Trial {
        hidden,
        p_up_forward: p_forward[0],
        p_up_past: p_past[0],
    })
}

/// Monte Carlo of the guessing game; trajectories are independent with
/// per-trajectory seed base_seed ⊕ index, so the report is reproducible and
/// independent of scheduling.
pub fn guessing_game(cfg: &GameConfig) -> Result<GameReport> {
    if cfg.scenario.kind != ScenarioKind::RabiSpin {
        return Err(Error::InvalidParameter(
            "the guessing game is defined for the rabi-spin scenario".into(),
        ));
    }
    if cfg.n_trajectories == 0 {
        return Err(Error::InvalidParameter(
            "n_trajectories must be positive".into(),
        ));
    }
    let model = cfg.scenario.build()?;
    let grid = cfg.scenario.grid()?;
    let i0 = grid.index_of(cfg.t0)?;
    if i0 == 0 || i0 >= grid.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "t0 = {} must lie strictly between 0 and t_end",
            cfg.t0
        )));
    }
    let dim = model.dim();
    let projectors: Vec<Operator> = (0..dim)
        .map(|m| {
            let mut diag = vec![C64::new(0.0, 0.0); dim];
            diag[m] = C64::new(1.0, 0.0);
            Operator::from_diag(&diag)
        })
        .collect();
    let spec = MeasurementSpec::projective(projectors, &["up", "down"])?;

    let dt = grid.dt();
    let n = grid.n_steps();
    let trials: Vec<Result<Trial>> = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|idx| run_trial(&model, &spec, dt, n, i0, cfg.base_seed ^ idx as u64))
        .collect();

    let mut forward_hits = 0usize;
    let mut past_hits = 0usize;
    let mut ties_forward = 0usize;
    let mut ties_past = 0usize;
    let mut failures = 0usize;
    let mut forward_hist = vec![0u64; HISTOGRAM_BINS];
    let mut past_hist = vec![0u64; HISTOGRAM_BINS];
    let mut sum_ls_forward = 0.0;
    let mut sum_ls_past = 0.0;
    let mut gaps = Vec::with_capacity(cfg.n_trajectories);
    let mut first_failure = None;

    for trial in trials {
        let trial = match trial {
            Ok(t) => t,
            Err(e) => {
                failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(e);
                }
                continue;
            }
        };
        let (guess_f, tie_f) = guess_up(trial.p_up_forward);
        let (guess_p, tie_p) = guess_up(trial.p_up_past);
        ties_forward += usize::from(tie_f);
        ties_past += usize::from(tie_p);
        forward_hits += usize::from(guess_f == trial.hidden);
        past_hits += usize::from(guess_p == trial.hidden);
        forward_hist[histogram_bin(trial.p_up_forward)] += 1;
        past_hist[histogram_bin(trial.p_up_past)] += 1;
        let assigned_f = if trial.hidden == 0 {
            trial.p_up_forward
        } else {
            1.0 - trial.p_up_forward
        };
        let assigned_p = if trial.hidden == 0 {
            trial.p_up_past
        } else {
            1.0 - trial.p_up_past
        };
        let ls_f = assigned_f.ln();
        let ls_p = assigned_p.ln();
        sum_ls_forward += ls_f;
        sum_ls_past += ls_p;
        gaps.push(ls_p - ls_f);
    }

    if failures as f64 > FAILURE_BUDGET * cfg.n_trajectories as f64 {
        // More than the budget went numerically bad: surface the first
        // underlying error rather than a report built on a biased sample.
        return Err(first_failure.expect("failures imply a stored error"));
    }
    let completed = cfg.n_trajectories - failures;
    if completed == 0 {
        return Err(Error::InvalidParameter(
            "every game trajectory failed".into(),
        ));
    }
    let m = completed as f64;
    let gap_mean = gaps.iter().sum::<f64>() / m;
    let gap_se = if completed > 1 {
        let var = gaps.iter().map(|g| (g - gap_mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };

    Ok(GameReport {
        scenario: cfg.scenario.clone(),
        t0: cfg.t0,
        n_trajectories: cfg.n_trajectories,
        base_seed: cfg.base_seed,
        forward_accuracy: forward_hits as f64 / m,
        past_accuracy: past_hits as f64 / m,
        forward_prob_histogram: forward_hist,
        past_prob_histogram: past_hist,
        mean_log_score_forward: sum_ls_forward / m,
        mean_log_score_past: sum_ls_past / m,
        log_score_gap_se: gap_se,
        ties_forward,
        ties_past,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::sample_diffusive_record;
    use crate::model::{build_rabi_spin, pauli, Pauli};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn up() -> DensityMatrix {
        DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap()
    }

    fn z_spec() -> MeasurementSpec {
        let pu = Operator::from_diag(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let pd = Operator::from_diag(&[c(0.0, 0.0), c(1.0, 0.0)]);
        MeasurementSpec::projective(vec![pu, pd], &["up", "down"]).unwrap()
    }

    #[test]
    fn smoothing_endpoints_carry_the_boundary_semantics() {
        let model = build_rabi_spin(c(0.0, 2.0), 0.6, 1.0).unwrap();
        let (record, forward) = sample_diffusive_record(&model, &up(), 0.05, 1e-3, 3).unwrap();
        let traj = smooth(&record, &model, &up(), &[]).unwrap();
        assert_eq!(traj.len(), 51);

        let first = &traj.pairs()[0];
        assert!(first.rho.operator().max_abs_diff(up().operator()) < 1e-15);

        let last = traj.pairs().last().unwrap();
        let id = Operator::identity(2);
        assert!(last.effect.operator().max_abs_diff(&id) < 1e-12);
        assert_eq!(last.effect.log_norm(), 0.0);

        // With E(T) = I the pair retrodicts nothing beyond Born's rule.
        let retro = past_distribution(last, &z_spec()).unwrap();
        let born = born_distribution(forward.states().last().unwrap(), &z_spec()).unwrap();
        for (a, b) in retro.iter().zip(&born) {
            assert!((a - b).abs() < 1e-12);
        }
        let series = expectation_series(&traj, &pauli(Pauli::Z)).unwrap();
        let end = series.last().unwrap();
        let w = end.weak_value.unwrap();
        assert!((w.re - end.forward_mean).abs() < 1e-12);
        assert!(w.im.abs() < 1e-12);
    }

    #[test]
    fn drift_only_smoothing_keeps_identity_effects() {
        let h = pauli(Pauli::X).scaled(c(0.4, 0.0));
        let model = Model::new(h, vec![]).unwrap();
        let record =
            MeasurementRecord::new(1e-3, 40, vec![], vec![], 0, model.fingerprint()).unwrap();
        let traj = smooth(&record, &model, &up(), &[]).unwrap();
        let id = Operator::identity(2);
        let series = expectation_series(&traj, &pauli(Pauli::Z)).unwrap();
        for (pair, point) in traj.pairs().iter().zip(&series) {
            assert!(pair.effect.operator().max_abs_diff(&id) < 1e-12);
            let w = point.weak_value.unwrap();
            assert!((w.re - point.forward_mean).abs() < 1e-12);
            assert!(w.im.abs() < 1e-12);
        }
        // Hamiltonian drift alone must still move the state.
        assert!((series[0].forward_mean - 1.0).abs() < 1e-12);
        assert!(series.last().unwrap().forward_mean < 1.0 - 1e-4);
    }

    #[test]
    fn degenerate_pairs_are_flagged_not_fabricated() {
        let rho = up();
        let dead = EffectMatrix::new(Operator::from_diag(&[c(0.0, 0.0), c(2.0, 0.0)])).unwrap();
        let fine = EffectMatrix::identity(2);
        let traj = PastTrajectory::from_pairs(vec![
            PastStatePair::new(rho.clone(), fine, 0.0).unwrap(),
            PastStatePair::new(rho, dead, 1.0).unwrap(),
        ]);
        let series = expectation_series(&traj, &pauli(Pauli::Z)).unwrap();
        assert!(series[0].weak_value.is_some());
        assert!(series[1].weak_value.is_none());
        assert_eq!(series[1].forward_mean, 1.0);
    }

    // The two passes are exact mutual adjoints, so the analytic step
    // coefficients must reproduce each discrete increment of the
    // retrodicted mean to rounding, not merely to O(dt).
    #[test]
    fn weak_coefficients_reproduce_the_discrete_increments() {
        let model = build_rabi_spin(c(0.0, 2.0), 0.7, 0.6).unwrap();
        let (record, _) = sample_diffusive_record(&model, &up(), 0.2, 1e-3, 11).unwrap();
        let traj = smooth(&record, &model, &up(), &[]).unwrap();
        let dt = record.dt();

        let sx = pauli(Pauli::X);
        let series = expectation_series(&traj, &sx).unwrap();
        let coeffs = increment_diagnostics(&traj, &record, &model, &sx).unwrap();
        assert_eq!(coeffs.len(), record.n_steps());
        let mut max_err: f64 = 0.0;
        for (i, step) in coeffs.iter().enumerate() {
            let lhs = series[i + 1].weak_value.unwrap().re - series[i].weak_value.unwrap().re;
            let rhs = step.weak_dt * dt + step.weak_dy * record.diffusive_increments()[i];
            max_err = max_err.max((lhs - rhs).abs());
        }
        assert!(max_err < 1e-9, "max_err = {max_err:.3e}");
    }

    #[test]
    fn monitored_axis_loses_its_noise_term() {
        let model = build_rabi_spin(c(0.0, 3.0), 1.0, 1.0).unwrap();
        let (record, _) = sample_diffusive_record(&model, &up(), 0.3, 1e-3, 21).unwrap();
        let traj = smooth(&record, &model, &up(), &[]).unwrap();
        let dt = record.dt();

        let sz = pauli(Pauli::Z);
        let series = expectation_series(&traj, &sz).unwrap();
        let coeffs = increment_diagnostics(&traj, &record, &model, &sz).unwrap();
        let mut saw_forward_noise = false;
        for (i, step) in coeffs.iter().enumerate() {
            // [σ_z, c] = 0: the retrodicted mean moves by drift alone.
            assert!(step.weak_dy.abs() <= 1e-12);
            let lhs = series[i + 1].weak_value.unwrap().re - series[i].weak_value.unwrap().re;
            assert!((lhs - step.weak_dt * dt).abs() < 1e-9);
            saw_forward_noise |= step.forward_dw.abs() > 1e-3;
        }
        // The conventional mean keeps its record-noise term.
        assert!(saw_forward_noise);
    }

    // χ = 2i gives H = −σ_y, for which the coefficients at a pinned state
    // reduce to textbook numbers: d⟨σ_x⟩ drift −2⟨σ_z⟩, d⟨σ_z⟩ drift
    // 2⟨σ_x⟩ with noise amplitude 2√(ηk)(1 − ⟨σ_z⟩²).
    #[test]
    fn forward_coefficients_match_closed_forms_at_known_states() {
        let eta = 0.49;
        let k = 0.49;
        let model = build_rabi_spin(c(0.0, 2.0), k, eta).unwrap();
        let record =
            MeasurementRecord::new(1e-3, 1, vec![0.02], vec![], 0, model.fingerprint()).unwrap();

        let traj = smooth(&record, &model, &up(), &[]).unwrap();
        let coeffs = increment_diagnostics(&traj, &record, &model, &pauli(Pauli::X)).unwrap();
        assert!((coeffs[0].forward_dt + 2.0).abs() < 1e-12);
        assert!(coeffs[0].forward_dw.abs() < 1e-12);

        let plus = DensityMatrix::pure(&[
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        ])
        .unwrap();
        let traj = smooth(&record, &model, &plus, &[]).unwrap();
        let coeffs = increment_diagnostics(&traj, &record, &model, &pauli(Pauli::Z)).unwrap();
        assert!((coeffs[0].forward_dt - 2.0).abs() < 1e-12);
        assert!((coeffs[0].forward_dw - 2.0 * (eta * k).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_reject_foreign_observables_and_records() {
        let model = build_rabi_spin(c(0.0, 2.0), 0.7, 1.0).unwrap();
        let (record, _) = sample_diffusive_record(&model, &up(), 0.02, 1e-3, 1).unwrap();
        let traj = smooth(&record, &model, &up(), &[]).unwrap();
        let wide = Operator::identity(3);
        assert!(increment_diagnostics(&traj, &record, &model, &wide).is_err());
        let other = build_rabi_spin(c(0.0, 2.0), 0.8, 1.0).unwrap();
        assert!(increment_diagnostics(&traj, &record, &other, &pauli(Pauli::X)).is_err());
    }

    #[test]
    fn guess_rule_breaks_ties_toward_up() {
        assert_eq!(guess_up(0.5), (0, true));
        assert_eq!(guess_up(0.5 + 2.0e-13), (0, true));
        assert_eq!(guess_up(0.5 - 2.0e-13), (0, true));
        assert_eq!(guess_up(0.7), (0, false));
        assert_eq!(guess_up(0.3), (1, false));
        assert_eq!(histogram_bin(0.0), 0);
        assert_eq!(histogram_bin(1.0), HISTOGRAM_BINS - 1);
        assert_eq!(histogram_bin(0.999), HISTOGRAM_BINS - 1);
    }

    #[test]
    fn pinned_initial_state_makes_the_game_trivial() {
        // No drive: |↑⟩ is a fixed point of the monitoring, the hidden
        // outcome is always up and both estimators say so with certainty.
        let mut scenario = ScenarioConfig::rabi_default();
        scenario.chi = c(0.0, 0.0);
        scenario.t_end = 0.5;
        let cfg = GameConfig::new(scenario, 200, 5).unwrap();
        assert!((cfg.t0 - 0.25).abs() < 1e-12);
        let report = guessing_game(&cfg).unwrap();
        assert_eq!(report.forward_accuracy, 1.0);
        assert_eq!(report.past_accuracy, 1.0);
        assert_eq!(report.failures, 0);
        assert_eq!(report.ties_forward, 0);
        assert_eq!(report.forward_prob_histogram[HISTOGRAM_BINS - 1], 200);
        assert_eq!(report.past_prob_histogram[HISTOGRAM_BINS - 1], 200);
        assert!(report.mean_log_score_forward.abs() < 1e-12);
        assert!(report.mean_log_score_past.abs() < 1e-12);
    }

    #[test]
    fn strong_monitoring_pins_both_guesses() {
        let mut scenario = ScenarioConfig::rabi_default();
        scenario.chi = c(0.0, 3.0);
        scenario.k = 25.0;
        scenario.t_end = 1.0;
        // Strong monitoring amplifies the record noise by 2√k per step, so
        // the grid must be finer than the default for the backward Euler
        // pass to stay positive.
        scenario.dt = 2e-4;
        let cfg = GameConfig::new(scenario, 150, 9).unwrap();
        let report = guessing_game(&cfg).unwrap();
        assert!(report.forward_accuracy > 0.9, "{}", report.forward_accuracy);
        assert!(report.past_accuracy > 0.9, "{}", report.past_accuracy);
        assert_eq!(report.failures, 0);
    }

    #[test]
    fn game_reports_are_reproducible() {
        let mut scenario = ScenarioConfig::rabi_default();
        scenario.chi = c(0.0, 3.0);
        scenario.t_end = 0.5;
        let cfg = GameConfig::new(scenario, 100, 77).unwrap();
        let a = guessing_game(&cfg).unwrap();
        let b = guessing_game(&cfg).unwrap();
        assert_eq!(a, b);
        let total: u64 = a.forward_prob_histogram.iter().sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn game_rejects_bad_configuration() {
        let jump = ScenarioConfig::jumping_default();
        let cfg = GameConfig::new(jump, 10, 0).unwrap();
        assert!(guessing_game(&cfg).is_err());

        let mut cfg = GameConfig::new(ScenarioConfig::rabi_default(), 10, 0).unwrap();
        cfg.t0 = 0.0;
        assert!(guessing_game(&cfg).is_err());
        cfg.t0 = ScenarioConfig::rabi_default().t_end;
        assert!(guessing_game(&cfg).is_err());
        cfg.t0 = 2.5;
        cfg.n_trajectories = 0;
        assert!(guessing_game(&cfg).is_err());
    }

    // A thousand-game run of the documented scenario: the two-sided
    // estimate must beat the filter both on argmax accuracy and, more
    // sharply, on the log score it assigns to the hidden outcome.
    #[test]
    fn past_estimate_beats_the_filter() {
        let cfg = GameConfig::new(ScenarioConfig::rabi_default(), 1000, 1).unwrap();
        let report = guessing_game(&cfg).unwrap();
        assert_eq!(report.failures, 0);
        assert!(report.past_accuracy > report.forward_accuracy);
        assert!(report.forward_accuracy > 0.5 && report.forward_accuracy < 1.0);
        assert!(report.past_accuracy < 1.0);
        let gap = report.mean_log_score_past - report.mean_log_score_forward;
        assert!(
            gap > 3.0 * report.log_score_gap_se,
            "gap = {gap:.4}, se = {:.4}",
            report.log_score_gap_se
        );
        let fwd_total: u64 = report.forward_prob_histogram.iter().sum();
        let past_total: u64 = report.past_prob_histogram.iter().sum();
        assert_eq!(fwd_total, 1000);
        assert_eq!(past_total, 1000);
    }
}
