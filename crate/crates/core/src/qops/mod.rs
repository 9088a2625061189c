//! Operator algebra and the measurement-theoretic core.
//!
//! Generalized measurements act on a density matrix by Kraus sets (several
//! operators per readout when the detector is lossy) and on an effect matrix
//! by the adjoint update. Combining a forward-filtered density matrix with a
//! backward-propagated effect matrix yields outcome probabilities for
//! measurements performed in the past, the past density matrix, and weak
//! values.

mod eigen;
mod operator;

pub use eigen::{hermitian_eigen, min_eigenvalue};
pub(crate) use eigen::positive_part_in_place;
pub(crate) use operator::hermitize_in_place;
pub use operator::{Operator, C64};

use crate::error::{Error, Result};

/// Below this, normalized denominators are treated as zero.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

const HERMITIAN_TOL: f64 = 1e-10;
const COMPLETENESS_TOL: f64 = 1e-10;

/// Conditional state of the system given the measurement record up to now.
///
/// The stored operator is kept normalized to unit trace; `log_norm`
/// accumulates the logarithms of discarded normalization factors so the
/// unnormalized state exp(log_norm)·op stays reconstructible without
/// overflow.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    op: Operator,
    log_norm: f64,
}

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        op.check_hermitian(HERMITIAN_TOL)?;
        let tr = op.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace must be positive, got {tr:e}"
            )));
        }
        let normalized = op.hermitized().scaled(C64::new(1.0 / tr, 0.0));
        Ok(Self {
            op: normalized,
            log_norm: tr.ln(),
        })
    }

    /// Pure state from ket coefficients (normalized internally).
    pub fn pure(ket: &[C64]) -> Result<Self> {
        let norm_sq: f64 = ket.iter().map(|z| z.norm_sqr()).sum();
        if !(norm_sq > 0.0) || !norm_sq.is_finite() {
            return Err(Error::InvalidParameter("ket must have positive norm".into()));
        }
        let mut op = Operator::outer(ket, ket);
        *op.raw_mut() /= C64::new(norm_sq, 0.0);
        Ok(Self { op, log_norm: 0.0 })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: Operator::identity(dim).scaled(C64::new(1.0 / dim as f64, 0.0)),
            log_norm: 0.0,
        }
    }

    pub(crate) fn from_normalized_parts(op: Operator, log_norm: f64) -> Self {
        debug_assert!((op.trace().re - 1.0).abs() < 1e-8);
        Self { op, log_norm }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Tr(A rho).
    pub fn expectation(&self, a: &Operator) -> C64 {
        a.trace_product(&self.op)
    }

    pub fn purity(&self) -> f64 {
        self.op.trace_product(&self.op).re
    }

    /// Most negative eigenvalue. Positivity is never silently repaired;
    /// callers decide what drift they tolerate.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        eigen::min_eigenvalue(&self.op)
    }

    /// Unread projective measurement: decoheres in the projector basis.
    pub fn project(&self, projectors: &[Operator]) -> Result<Self> {
        let op = projective_map(&self.op, projectors)?;
        // Trace is preserved exactly, so the state stays normalized.
        Ok(Self {
            op,
            log_norm: self.log_norm,
        })
    }
}

/// Likelihood operator for the remainder of a record.
///
/// Propagated backward from the identity at the final time. Unlike
/// `DensityMatrix` this type is allowed to hold an unnormalized operator;
/// `normalized` rescales so the identity is a fixed point (trace = dim) and
/// folds the factor into `log_norm`.
#[derive(Clone, Debug)]
pub struct EffectMatrix {
    op: Operator,
    log_norm: f64,
}

impl EffectMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            op: Operator::identity(dim),
            log_norm: 0.0,
        }
    }

    pub fn new(op: Operator) -> Result<Self> {
        op.check_hermitian(HERMITIAN_TOL)?;
        Ok(Self {
            op: op.hermitized(),
            log_norm: 0.0,
        })
    }

    pub(crate) fn from_parts(op: Operator, log_norm: f64) -> Self {
        Self { op, log_norm }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Rescale to trace = dim, accumulating ln(factor).
    pub fn normalized(self) -> Result<Self> {
        let d = self.op.dim() as f64;
        let factor = self.op.trace().re / d;
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::DegeneratePastState {
                denominator: factor,
            });
        }
        Ok(Self {
            op: self.op.scaled(C64::new(1.0 / factor, 0.0)),
            log_norm: self.log_norm + factor.ln(),
        })
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        eigen::min_eigenvalue(&self.op)
    }

    pub fn project(&self, projectors: &[Operator]) -> Result<Self> {
        let op = projective_map(&self.op, projectors)?;
        Ok(Self {
            op,
            log_norm: self.log_norm,
        })
    }
}

/// The operators Ω_{k|y} realizing one measurement outcome y; more than one
/// when a readout lumps together several microscopic effects.
#[derive(Clone, Debug)]
pub struct KrausSet {
    label: String,
    ops: Vec<Operator>,
}

impl KrausSet {
    pub fn new(label: impl Into<String>, ops: Vec<Operator>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidParameter("Kraus set must be nonempty".into()));
        }
        let dim = ops[0].dim();
        for op in &ops {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: op.dim(),
                    context: "Kraus set",
                });
            }
        }
        Ok(Self {
            label: label.into(),
            ops,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    /// Σ_k Ω†_k Ω_k.
    pub fn effect_sum(&self) -> Operator {
        let mut sum = Operator::zeros(self.dim());
        for op in &self.ops {
            sum = &sum + &op.adjoint().matmul(op);
        }
        sum
    }
}

/// Complete family of outcomes of one generalized measurement.
#[derive(Clone, Debug)]
pub struct MeasurementSpec {
    outcomes: Vec<KrausSet>,
}

impl MeasurementSpec {
    pub fn new(outcomes: Vec<KrausSet>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidParameter(
                "measurement needs at least one outcome".into(),
            ));
        }
        let dim = outcomes[0].dim();
        for ks in &outcomes {
            if ks.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: ks.dim(),
                    context: "measurement outcomes",
                });
            }
        }
        Ok(Self { outcomes })
    }

    /// Projective measurement in the given orthonormal-projector basis.
    pub fn projective(projectors: Vec<Operator>, labels: &[&str]) -> Result<Self> {
        check_projectors(&projectors)?;
        let outcomes = projectors
            .into_iter()
            .zip(labels.iter())
            .map(|(p, l)| KrausSet::new(*l, vec![p]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(outcomes)
    }

    pub fn outcomes(&self) -> &[KrausSet] {
        &self.outcomes
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn dim(&self) -> usize {
        self.outcomes[0].dim()
    }

    /// Max-entry distance of Σ_y Σ_k Ω†Ω from the identity.
    pub fn completeness_deviation(&self) -> f64 {
        let mut sum = Operator::zeros(self.dim());
        for ks in &self.outcomes {
            sum = &sum + &ks.effect_sum();
        }
        sum.max_abs_diff(&Operator::identity(self.dim()))
    }
}

/// Past quantum state: the pair Ξ(t) = (ρ(t), E(t)).
#[derive(Clone, Debug)]
pub struct PastStatePair {
    pub rho: DensityMatrix,
    pub effect: EffectMatrix,
    pub time: f64,
}

impl PastStatePair {
    pub fn new(rho: DensityMatrix, effect: EffectMatrix, time: f64) -> Result<Self> {
        if rho.dim() != effect.dim() {
            return Err(Error::DimensionMismatch {
                left: rho.dim(),
                right: effect.dim(),
                context: "past state pair",
            });
        }
        Ok(Self { rho, effect, time })
    }
}

/// rho -> Σ_k Ω_k rho Ω†_k / p with p = Tr(Σ_k Ω†_kΩ_k rho).
///
/// The returned state is normalized; ln p is added to its `log_norm` so the
/// unnormalized branch weight survives.
pub fn kraus_apply(rho: &DensityMatrix, ks: &KrausSet) -> Result<(DensityMatrix, f64)> {
    if rho.dim() != ks.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: ks.dim(),
            context: "kraus_apply",
        });
    }
    let mut out = Operator::zeros(rho.dim());
    for op in ks.ops() {
        let term = op.matmul(rho.operator()).matmul(&op.adjoint());
        out = &out + &term;
    }
    let p = out.trace().re;
    if p <= DEGENERACY_THRESHOLD {
        return Err(Error::ZeroProbabilityOutcome { prob: p });
    }
    let normalized = out.hermitized().scaled(C64::new(1.0 / p, 0.0));
    Ok((
        DensityMatrix::from_normalized_parts(normalized, rho.log_norm() + p.ln()),
        p,
    ))
}

/// E -> Σ_k Ω†_k E Ω_k, the adjoint (Heisenberg-picture) update. Output is
/// deliberately left unnormalized; see `EffectMatrix::normalized`.
pub fn kraus_adjoint_apply(effect: &EffectMatrix, ks: &KrausSet) -> Result<EffectMatrix> {
    if effect.dim() != ks.dim() {
        return Err(Error::DimensionMismatch {
            left: effect.dim(),
            right: ks.dim(),
            context: "kraus_adjoint_apply",
        });
    }
    let mut out = Operator::zeros(effect.dim());
    for op in ks.ops() {
        let term = op.adjoint().matmul(effect.operator()).matmul(op);
        out = &out + &term;
    }
    Ok(EffectMatrix::from_parts(out.hermitized(), effect.log_norm()))
}

pub fn check_completeness(spec: &MeasurementSpec) -> Result<()> {
    check_completeness_within(spec, COMPLETENESS_TOL)
}

/// Same check at a caller-chosen tolerance; truncated operator expansions
/// (weak meter) are complete only to their truncation order.
pub fn check_completeness_within(spec: &MeasurementSpec, tol: f64) -> Result<()> {
    let deviation = spec.completeness_deviation();
    if deviation > tol {
        return Err(Error::IncompleteMeasurement { deviation, tol });
    }
    Ok(())
}

/// Ordinary Born probabilities p(m) = Tr(Σ_k Ω_{k|m} rho Ω†_{k|m}).
pub fn born_distribution(rho: &DensityMatrix, spec: &MeasurementSpec) -> Result<Vec<f64>> {
    if rho.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: spec.dim(),
            context: "born_distribution",
        });
    }
    Ok(spec
        .outcomes()
        .iter()
        .map(|ks| ks.effect_sum().trace_product(rho.operator()).re)
        .collect())
}

/// Probabilities for the outcome of a measurement performed at the pair's
/// time, conditioned on the record both before (rho) and after (effect):
///
///   p_p(m) = Tr(Σ_k Ω_{k|m} ρ Ω†_{k|m} E) / Σ_{m'} (same)
pub fn past_distribution(pair: &PastStatePair, spec: &MeasurementSpec) -> Result<Vec<f64>> {
    if pair.rho.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            left: pair.rho.dim(),
            right: spec.dim(),
            context: "past_distribution",
        });
    }
    let e_scaled = scale_free_effect(&pair.effect)?;
    let mut weights = Vec::with_capacity(spec.n_outcomes());
    for ks in spec.outcomes() {
        let mut w = 0.0;
        for op in ks.ops() {
            let moved = op.matmul(pair.rho.operator()).matmul(&op.adjoint());
            w += moved.trace_product(&e_scaled).re;
        }
        // Each weight is exactly nonnegative for positive rho and E, but the
        // first-order propagation only keeps the pair positive to its
        // truncation order, so a weight whose exact value is near zero can
        // come out negative. Clamp rather than normalize garbage into the
        // other outcomes; honestly positive weights are untouched.
        weights.push(w.max(0.0));
    }
    let denominator: f64 = weights.iter().sum();
    if denominator <= DEGENERACY_THRESHOLD {
        return Err(Error::DegeneratePastState { denominator });
    }
    Ok(weights.iter().map(|w| w / denominator).collect())
}

/// ρ_p = ρE / Tr(ρE). Returned as a plain `Operator`: it is not Hermitian in
/// general and must not masquerade as a state.
pub fn past_density_matrix(pair: &PastStatePair) -> Result<Operator> {
    let e_scaled = scale_free_effect(&pair.effect)?;
    let product = pair.rho.operator().matmul(&e_scaled);
    let tr = product.trace();
    if tr.norm() <= DEGENERACY_THRESHOLD {
        return Err(Error::DegeneratePastState {
            denominator: tr.norm(),
        });
    }
    Ok(product.scaled(C64::new(1.0, 0.0) / tr))
}

/// ⟨A⟩_w = Tr(A ρE)/Tr(ρE); complex in general, and not confined to the
/// spectrum of A.
pub fn weak_value(pair: &PastStatePair, a: &Operator) -> Result<C64> {
    if a.dim() != pair.rho.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: pair.rho.dim(),
            context: "weak_value",
        });
    }
    let rho_p = past_density_matrix(pair)?;
    Ok(a.trace_product(&rho_p))
}

/// Decoherence map Σ_a Π_a X Π_a of an unread projective measurement.
pub fn projective_map(x: &Operator, projectors: &[Operator]) -> Result<Operator> {
    check_projectors(projectors)?;
    if projectors[0].dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            left: projectors[0].dim(),
            right: x.dim(),
            context: "projective_map",
        });
    }
    let mut out = Operator::zeros(x.dim());
    for p in projectors {
        out = &out + &p.matmul(x).matmul(p);
    }
    Ok(out)
}

fn check_projectors(projectors: &[Operator]) -> Result<()> {
    if projectors.is_empty() {
        return Err(Error::InvalidParameter("no projectors given".into()));
    }
    let dim = projectors[0].dim();
    let mut ortho_dev: f64 = 0.0;
    for (a, pa) in projectors.iter().enumerate() {
        if pa.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: pa.dim(),
                context: "projectors",
            });
        }
        pa.check_hermitian(HERMITIAN_TOL)?;
        for (b, pb) in projectors.iter().enumerate() {
            let prod = pa.matmul(pb);
            let expected = if a == b { pa.clone() } else { Operator::zeros(dim) };
            ortho_dev = ortho_dev.max(prod.max_abs_diff(&expected));
        }
    }
    if ortho_dev > COMPLETENESS_TOL {
        return Err(Error::NonOrthogonalProjectors {
            deviation: ortho_dev,
        });
    }
    let mut sum = Operator::zeros(dim);
    for p in projectors {
        sum = &sum + p;
    }
    let dev = sum.max_abs_diff(&Operator::identity(dim));
    if dev > COMPLETENESS_TOL {
        return Err(Error::IncompleteMeasurement {
            deviation: dev,
            tol: COMPLETENESS_TOL,
        });
    }
    Ok(())
}

/// Two-outcome Kraus pair of a weak meter coupled to A with strength eps:
/// no-flip Ω_↓ = I − (ε²/2)A†A, flip Ω_↑ = εA.
///
/// Completeness holds only up to a residual (ε⁴/4)(A†A)², which is kept as
/// is; correcting it would change the truncation order the pair is meant to
/// represent.
pub fn weak_meter_kraus(a: &Operator, eps: f64) -> Result<MeasurementSpec> {
    if !(eps > 0.0 && eps <= 0.3) {
        return Err(Error::InvalidParameter(format!(
            "weak meter strength must be in (0, 0.3], got {eps}"
        )));
    }
    let ada = a.adjoint().matmul(a);
    let down = &Operator::identity(a.dim()) - &ada.scaled(C64::new(eps * eps / 2.0, 0.0));
    let up = a.scaled(C64::new(eps, 0.0));
    MeasurementSpec::new(vec![
        KrausSet::new("down", vec![down])?,
        KrausSet::new("up", vec![up])?,
    ])
}

/// Conditional mean of the meter lowering operator σ̂ after the weak meter
/// interacted with the system and a further measurement produced the Kraus
/// set `downstream`:
///
///   E[σ̂|y] = Σ_k Tr(Ω_k M_↑ ρ M†_↓ Ω†_k) / Σ_k Σ_m Tr(Ω_k M_m ρ M†_m Ω†_k)
///
/// Dividing by eps and letting eps → 0 recovers the weak value.
pub fn conditional_meter_expectation(
    rho: &DensityMatrix,
    meter: &MeasurementSpec,
    downstream: &KrausSet,
) -> Result<C64> {
    if meter.n_outcomes() != 2 {
        return Err(Error::InvalidParameter(
            "meter spec must have the two outcomes (down, up)".into(),
        ));
    }
    if meter.outcomes().iter().any(|ks| ks.ops().len() != 1) {
        return Err(Error::InvalidParameter(
            "meter outcomes must hold a single operator each".into(),
        ));
    }
    if meter.dim() != rho.dim() || downstream.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            left: meter.dim(),
            right: rho.dim(),
            context: "conditional_meter_expectation",
        });
    }
    let m_down = &meter.outcomes()[0].ops()[0];
    let m_up = &meter.outcomes()[1].ops()[0];

    let cross = m_up.matmul(rho.operator()).matmul(&m_down.adjoint());
    let mut numerator = C64::new(0.0, 0.0);
    let mut denominator = 0.0;
    for omega in downstream.ops() {
        let od = omega.adjoint();
        numerator += omega.matmul(&cross).matmul(&od).trace();
        for m in [m_down, m_up] {
            let branch = m.matmul(rho.operator()).matmul(&m.adjoint());
            denominator += omega.matmul(&branch).matmul(&od).trace().re;
        }
    }
    if denominator <= DEGENERACY_THRESHOLD {
        return Err(Error::DegeneratePastState {
            denominator,
        });
    }
    Ok(numerator / denominator)
}

/// Effect operator rescaled to trace = dim so degeneracy thresholds are
/// scale-free.
fn scale_free_effect(effect: &EffectMatrix) -> Result<Operator> {
    let d = effect.dim() as f64;
    let tr = effect.operator().trace().re;
    if !(tr > DEGENERACY_THRESHOLD) {
        return Err(Error::DegeneratePastState { denominator: tr });
    }
    Ok(effect.operator().scaled(C64::new(d / tr, 0.0)))
}
