//! Backward-in-time propagation of the effect matrix E(t) from E(T) = I
//! over a stored record.
//!
//! The backward step from t to t−dt consumes the same increment array
//! element as the forward step from t−dt to t. That alignment is the most
//! bug-prone convention in this whole problem and is pinned by tests.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::filter::{Interruption, Kernel, MeasurementRecord};
use crate::model::Model;
use crate::qops::{hermitize_in_place, EffectMatrix, Operator, C64};

/// Effect matrices on the same grid as the forward pass, each rescaled to
/// trace = dim with the discarded factor in its log_norm.
#[derive(Clone, Debug)]
pub struct EffectTrajectory {
    times: Vec<f64>,
    effects: Vec<EffectMatrix>,
}

impl EffectTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn effects(&self) -> &[EffectMatrix] {
        &self.effects
    }

    pub fn log_norms(&self) -> Vec<f64> {
        self.effects.iter().map(|e| e.log_norm()).collect()
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }
}

/// Rescale to trace = dim, Hermitizing first; returns the factor trace/dim.
pub(crate) fn normalize_effect(x: &mut Array2<C64>) -> Result<f64> {
    hermitize_in_place(x);
    let d = x.nrows();
    let mut tr = 0.0;
    for r in 0..d {
        tr += x[[r, r]].re;
    }
    if !tr.is_finite() {
        return Err(Error::NonFiniteIncrement { step: 0 });
    }
    let factor = tr / d as f64;
    if factor <= 1e-300 {
        return Err(Error::DegeneratePastState { denominator: factor });
    }
    let inv = C64::new(1.0 / factor, 0.0);
    for z in x.iter_mut() {
        *z *= inv;
    }
    Ok(factor)
}

/// One backward step of the diffusive equation: E_{t−dt} from E_t and the
/// increment dY of the interval [t−dt, t]. Models without a diffusive
/// channel are allowed; they contribute drift only.
pub fn diffusive_backstep(
    effect: &EffectMatrix,
    model: &Model,
    dy_prev: f64,
    dt: f64,
) -> Result<EffectMatrix> {
    if !dy_prev.is_finite() {
        return Err(Error::NonFiniteIncrement { step: 0 });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if effect.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: effect.dim(),
            right: model.dim(),
            context: "diffusive_backstep",
        });
    }
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    let mut x = effect.operator().as_array().clone();
    kernel.backward_diffusive(&mut x, dy_prev, dt);
    let factor = normalize_effect(&mut x)?;
    Ok(EffectMatrix::from_parts(
        Operator::new(x)?,
        effect.log_norm() + factor.ln(),
    ))
}

/// One backward step of the counting equation. A click applies the adjoint
/// jump E ← L†EL (times dt in the norm bookkeeping); no click applies the
/// adjoint drift, in which unobserved channels keep their full adjoint
/// dissipators and the monitored channel only its no-click back-action.
pub fn jump_backstep(
    effect: &EffectMatrix,
    model: &Model,
    dn_prev: &[u8],
    dt: f64,
) -> Result<EffectMatrix> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if effect.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: effect.dim(),
            right: model.dim(),
            context: "jump_backstep",
        });
    }
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    if dn_prev.len() != kernel.n_counting() {
        return Err(Error::InvalidParameter(format!(
            "{} click entries for {} counting channels",
            dn_prev.len(),
            kernel.n_counting()
        )));
    }
    if let Some(&bad) = dn_prev.iter().find(|&&d| d > 1) {
        return Err(Error::InvalidParameter(format!("dN must be 0 or 1, got {bad}")));
    }
    let mut x = effect.operator().as_array().clone();
    let mut log_norm = effect.log_norm();
    if dn_prev.iter().any(|&d| d == 1) {
        for (nth, &d) in dn_prev.iter().enumerate() {
            if d == 1 {
                kernel.apply_jump_adjoint(&mut x, kernel.counting_channel_index(nth));
                log_norm += dt.ln();
            }
        }
    } else {
        kernel.backward_noclick(&mut x, dt);
    }
    let factor = normalize_effect(&mut x)?;
    Ok(EffectMatrix::from_parts(
        Operator::new(x)?,
        log_norm + factor.ln(),
    ))
}

/// Consume a record in reverse from E(T) = I. Effects at an interruption
/// time hold the right limit E(t₀₊); the projective map is applied before
/// continuing to earlier times, mirroring the forward convention so that
/// pairing the two passes at the interruption index gives (ρ(t₀₋), E(t₀₊)).
pub fn run_backward(
    record: &MeasurementRecord,
    model: &Model,
    interruptions: &[Interruption],
) -> Result<EffectTrajectory> {
    if record.model_fingerprint() != model.fingerprint() {
        return Err(Error::FingerprintMismatch {
            record: record.model_fingerprint().to_string(),
            model: model.fingerprint(),
        });
    }
    let grid = record.grid();
    let dt = record.dt();
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;

    let diffusive = model.diffusive_channel().is_some();
    if diffusive && record.diffusive_increments().len() != record.n_steps() {
        return Err(Error::InvalidParameter(
            "record has no diffusive increments for a diffusive model".into(),
        ));
    }
    if !diffusive && record.counting_increments().len() != kernel.n_counting() {
        return Err(Error::InvalidParameter(format!(
            "record has {} counting series for {} counting channels",
            record.counting_increments().len(),
            kernel.n_counting()
        )));
    }

    let mut stops: Vec<(usize, &Interruption)> = interruptions
        .iter()
        .map(|it| grid.index_of(it.time).map(|i| (i, it)))
        .collect::<Result<_>>()?;
    stops.sort_by_key(|(i, _)| *i);

    let n = record.n_steps();
    let dim = model.dim();
    let mut effects: Vec<Option<EffectMatrix>> = vec![None; n + 1];
    let mut x = Operator::identity(dim).into_array();
    let mut log_norm = 0.0;
    let mut stop_cursor = stops.len();

    for i in (0..=n).rev() {
        effects[i] = Some(EffectMatrix::from_parts(
            Operator::new(x.clone())?,
            log_norm,
        ));
        // apply interruptions at this index after storing the right limit,
        // in reverse of the forward application order
        while stop_cursor > 0 && stops[stop_cursor - 1].0 == i {
            let mapped =
                crate::qops::projective_map(&Operator::new(x.clone())?, &stops[stop_cursor - 1].1.projectors)?;
            x.assign(mapped.as_array());
            stop_cursor -= 1;
        }
        if i == 0 {
            break;
        }
        if diffusive {
            kernel.backward_diffusive(&mut x, record.diffusive_increments()[i - 1], dt);
        } else {
            let any_click = record
                .counting_increments()
                .iter()
                .any(|series| series[i - 1] == 1);
            if any_click {
                for nth in 0..kernel.n_counting() {
                    if record.counting_increments()[nth][i - 1] == 1 {
                        kernel.apply_jump_adjoint(&mut x, kernel.counting_channel_index(nth));
                        log_norm += dt.ln();
                    }
                }
            } else {
                kernel.backward_noclick(&mut x, dt);
            }
        }
        log_norm += normalize_effect(&mut x)?.ln();
    }
    let effects: Vec<EffectMatrix> = effects.into_iter().map(|e| e.unwrap()).collect();
    Ok(EffectTrajectory {
        times: grid.times(),
        effects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{homodyne_kraus_pair, sample_diffusive_record, sample_jump_record};
    use crate::model::{build_rabi_spin, pauli, Channel, ChannelKind, Pauli, ScenarioConfig};
    use crate::qops::{kraus_adjoint_apply, DensityMatrix};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unnormalized(e: &EffectMatrix) -> Operator {
        e.operator().scaled(c(e.log_norm().exp(), 0.0))
    }

    #[test]
    fn trivial_backstep_is_identity() {
        let ch = Channel::new(
            Operator::zeros(2),
            ChannelKind::DiffusiveObserved { eta: 1.0 },
        )
        .unwrap();
        let model = Model::new(Operator::zeros(2), vec![ch]).unwrap();
        let e = EffectMatrix::identity(2);
        for dy in [-0.7, 0.0, 0.3] {
            let out = diffusive_backstep(&e, &model, dy, 1e-3).unwrap();
            assert!(out.operator().max_abs_diff(&Operator::identity(2)) < 1e-15);
            assert_eq!(out.log_norm(), 0.0);
        }
    }

    #[test]
    fn unobserved_dissipation_teaches_nothing_at_identity() {
        // adjoint dissipator of the identity vanishes exactly
        let l = pauli(Pauli::Minus).scaled(c(0.8, 0.0));
        let model = Model::new(
            Operator::zeros(2),
            vec![Channel::new(l, ChannelKind::Unobserved).unwrap()],
        )
        .unwrap();
        let out = diffusive_backstep(&EffectMatrix::identity(2), &model, 0.4, 1e-3).unwrap();
        assert!(out.operator().max_abs_diff(&Operator::identity(2)) == 0.0);
    }

    #[test]
    fn record_tilts_the_effect_along_the_measured_axis() {
        // E = I, c = √k σ_z: one backstep gives exactly I + 2√(ηk) dY σ_z
        let k = 0.49;
        let model = build_rabi_spin(c(0.0, 0.0), k, 1.0).unwrap();
        let dy = 0.013;
        let dt = 1e-3;
        let out = diffusive_backstep(&EffectMatrix::identity(2), &model, dy, dt).unwrap();
        let expected = &Operator::identity(2) + &pauli(Pauli::Z).scaled(c(2.0 * k.sqrt() * dy, 0.0));
        assert!(out.operator().max_abs_diff(&expected) < 1e-15);
        assert!(out.log_norm().abs() < 1e-15); // tilt is traceless
    }

    #[test]
    fn noclick_backstep_retrodicts_survival() {
        let gamma: f64 = 0.3;
        let l = pauli(Pauli::Minus).scaled(c(gamma.sqrt(), 0.0));
        let model = Model::new(
            Operator::zeros(2),
            vec![Channel::new(l, ChannelKind::CountingObserved).unwrap()],
        )
        .unwrap();
        let dt = 1e-3;
        let out = jump_backstep(&EffectMatrix::identity(2), &model, &[0], dt).unwrap();
        let expected = Operator::from_diag(&[c(1.0 - gamma * dt, 0.0), c(1.0, 0.0)]);
        assert!(unnormalized(&out).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn click_backstep_retrodicts_the_excited_state() {
        let gamma: f64 = 0.3;
        let l = pauli(Pauli::Minus).scaled(c(gamma.sqrt(), 0.0));
        let model = Model::new(
            Operator::zeros(2),
            vec![Channel::new(l, ChannelKind::CountingObserved).unwrap()],
        )
        .unwrap();
        let dt = 1e-3;
        let out = jump_backstep(&EffectMatrix::identity(2), &model, &[1], dt).unwrap();
        // stored form is trace-normalized: all weight on |↑⟩⟨↑|
        assert!(out
            .operator()
            .max_abs_diff(&Operator::from_diag(&[c(2.0, 0.0), c(0.0, 0.0)]))
            < 1e-15);
        // unnormalized form keeps the measurement weight γ dt
        let expected = Operator::from_diag(&[c(gamma * dt, 0.0), c(0.0, 0.0)]);
        assert!(unnormalized(&out).max_abs_diff(&expected) < 1e-17);
    }

    #[test]
    fn zero_rate_channel_leaves_effect_alone() {
        let model = Model::new(
            Operator::zeros(2),
            vec![Channel::new(Operator::zeros(2), ChannelKind::CountingObserved).unwrap()],
        )
        .unwrap();
        let out = jump_backstep(&EffectMatrix::identity(2), &model, &[0], 1e-3).unwrap();
        assert!(out.operator().max_abs_diff(&Operator::identity(2)) == 0.0);
    }

    #[test]
    fn empty_record_gives_identity_only() {
        let model = build_rabi_spin(c(0.0, 3.0), 1.0, 1.0).unwrap();
        let rec = MeasurementRecord::new(1e-3, 0, vec![], vec![], 0, model.fingerprint()).unwrap();
        let traj = run_backward(&rec, &model, &[]).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj.effects()[0]
            .operator()
            .max_abs_diff(&Operator::identity(2))
            == 0.0);
    }

    #[test]
    fn final_condition_is_identity_and_mismatch_rejected() {
        let model = build_rabi_spin(c(0.0, 3.0), 1.0, 1.0).unwrap();
        let rho0 = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let (rec, _) = sample_diffusive_record(&model, &rho0, 0.5, 1e-3, 2).unwrap();
        let traj = run_backward(&rec, &model, &[]).unwrap();
        assert!(traj.effects()[rec.n_steps()]
            .operator()
            .max_abs_diff(&Operator::identity(2))
            == 0.0);

        let other = build_rabi_spin(c(0.0, 3.0), 2.0, 1.0).unwrap();
        assert!(matches!(
            run_backward(&rec, &other, &[]),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn zero_increments_and_trivial_model_stay_identity() {
        let ch = Channel::new(
            Operator::zeros(2),
            ChannelKind::DiffusiveObserved { eta: 1.0 },
        )
        .unwrap();
        let model = Model::new(Operator::zeros(2), vec![ch]).unwrap();
        let rec =
            MeasurementRecord::new(1e-3, 50, vec![0.0; 50], vec![], 0, model.fingerprint()).unwrap();
        let traj = run_backward(&rec, &model, &[]).unwrap();
        for e in traj.effects() {
            assert!(e.operator().max_abs_diff(&Operator::identity(2)) < 1e-15);
        }
    }

    #[test]
    fn forward_backward_product_is_conserved_diffusive() {
        let model = build_rabi_spin(c(0.0, 3.0), 1.0, 1.0).unwrap();
        let rho0 = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let dt = 1e-3;
        let (rec, fwd) = sample_diffusive_record(&model, &rho0, 2.0, dt, 7).unwrap();
        let bwd = run_backward(&rec, &model, &[]).unwrap();
        let n = rec.n_steps();
        let reference = fwd.states()[n].log_norm(); // Tr(ρ̃(T)·I)
        for i in (0..=n).step_by(100) {
            let tr = fwd.states()[i]
                .operator()
                .trace_product(bwd.effects()[i].operator())
                .re;
            let log_product =
                tr.ln() + fwd.states()[i].log_norm() + bwd.effects()[i].log_norm();
            let drift = (log_product - reference).abs();
            // contract is 100·dt relative; the linear form actually holds it
            // to rounding
            assert!(drift < 1e-10, "drift {drift} at index {i}");
        }
    }

    #[test]
    fn forward_backward_product_is_conserved_counting() {
        let cfg = ScenarioConfig::jumping_default();
        let model = cfg.build().unwrap();
        let rho0 = DensityMatrix::maximally_mixed(4);
        let (rec, fwd, _) = sample_jump_record(&model, &rho0, 5.0, cfg.dt, 21).unwrap();
        assert!(rec.total_clicks() > 0);
        let bwd = run_backward(&rec, &model, &[]).unwrap();
        let n = rec.n_steps();
        let reference = fwd.states()[n].log_norm();
        for i in (0..=n).step_by(200) {
            let tr = fwd.states()[i]
                .operator()
                .trace_product(bwd.effects()[i].operator())
                .re;
            let log_product =
                tr.ln() + fwd.states()[i].log_norm() + bwd.effects()[i].log_norm();
            let drift = (log_product - reference).abs();
            assert!(drift < 1e-9, "drift {drift} at index {i}");
        }
    }

    #[test]
    fn effects_stay_hermitian_and_nonnegative() {
        let model = build_rabi_spin(c(0.0, 3.0), 1.0, 1.0).unwrap();
        let rho0 = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let (rec, _) = sample_diffusive_record(&model, &rho0, 1.0, 1e-3, 5).unwrap();
        let traj = run_backward(&rec, &model, &[]).unwrap();
        for e in traj.effects().iter().step_by(50) {
            assert!(e.operator().hermiticity_deviation() <= 1e-14);
            assert!(e.min_eigenvalue().unwrap() > -1e-8);
        }
    }

    #[test]
    fn backstep_agrees_with_the_kraus_pair_to_second_order() {
        // unread two-point Kraus channel vs the dY-averaged linear step:
        // difference is exactly B†EB dt²
        let model = build_rabi_spin(c(1.0, 2.0), 0.8, 1.0).unwrap();
        let g = {
            let th: f64 = 0.7;
            let psi = [c(th.cos(), 0.0), c(th.sin() * 0.6, th.sin() * 0.8)];
            Operator::outer(&psi, &psi)
        };
        let e0 = EffectMatrix::new(&Operator::identity(2).scaled(c(0.4, 0.0)) + &g).unwrap();
        let b = &model.hamiltonian().scaled(c(0.0, -1.0)) - &{
            let (cop, _) = model.diffusive_channel().unwrap();
            cop.adjoint().matmul(cop).scaled(c(0.5, 0.0))
        };
        let mut prev: Option<f64> = None;
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let pair = homodyne_kraus_pair(&model, dt).unwrap();
            let via_kraus = kraus_adjoint_apply(&e0, &pair).unwrap();
            let via_step = diffusive_backstep(&e0, &model, 0.0, dt).unwrap();
            let diff = unnormalized(&via_kraus).max_abs_diff(&unnormalized(&via_step));
            let predicted = b
                .adjoint()
                .matmul(e0.operator())
                .matmul(&b)
                .scaled(c(dt * dt, 0.0));
            assert!(
                (diff - predicted.max_abs()).abs() < 1e-12,
                "dt={dt}: diff {diff} vs predicted {}",
                predicted.max_abs()
            );
            if let Some(p) = prev {
                let ratio = p / diff;
                assert!((ratio - 4.0).abs() < 1e-6, "ratio {ratio}");
            }
            prev = Some(diff);
        }
    }

    #[test]
    fn backward_interruption_stores_the_right_limit() {
        let model = build_rabi_spin(c(0.0, 3.0), 1.0, 1.0).unwrap();
        let rho0 = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let (rec, _) = sample_diffusive_record(&model, &rho0, 1.0, 1e-3, 9).unwrap();
        let projs = vec![
            Operator::from_diag(&[c(1.0, 0.0), c(0.0, 0.0)]),
            Operator::from_diag(&[c(0.0, 0.0), c(1.0, 0.0)]),
        ];
        let t0 = 0.5;
        let plain = run_backward(&rec, &model, &[]).unwrap();
        let cut = run_backward(
            &rec,
            &model,
            &[Interruption {
                time: t0,
                projectors: projs.clone(),
            }],
        )
        .unwrap();
        let i0 = rec.grid().index_of(t0).unwrap();
        // at and above t0 the two runs coincide; below they differ
        for i in i0..=rec.n_steps() {
            assert!(cut.effects()[i]
                .operator()
                .max_abs_diff(plain.effects()[i].operator())
                < 1e-15);
        }
        assert!(
            cut.effects()[i0 - 1]
                .operator()
                .max_abs_diff(plain.effects()[i0 - 1].operator())
                > 1e-6
        );
        // the stored value at t0 still carries coherence; its projection does not
        let sx = pauli(Pauli::X);
        let projected = cut.effects()[i0].project(&projs).unwrap();
        assert_eq!(projected.operator().trace_product(&sx).re, 0.0);
    }
}
