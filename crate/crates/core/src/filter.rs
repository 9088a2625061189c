//! Forward-in-time conditional evolution: homodyne (diffusive) and photon
//! counting (jump) filtering, record simulation, and record replay.
//!
//! All stepping uses the linear first-order update of the unnormalized
//! state, then Hermitizes and renormalizes, accumulating the log of the
//! discarded factor. The linear form is what makes the forward and backward
//! passes exact adjoints of each other step by step.

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ChannelKind, Grid, Model};
use crate::qops::{hermitize_in_place, DensityMatrix, Operator, C64};

/// Per-step guard: dt·max(‖H‖, ‖ΣL†L‖) must stay below this.
pub const STABILITY_LIMIT: f64 = 0.1;

/// Max tolerated per-step click probability when sampling jump records.
pub const CLICK_PROBABILITY_LIMIT: f64 = 0.1;

/// Stored measurement record: per-step increments, never cumulative sums,
/// because the backward pass consumes increments directly.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    dt: f64,
    n_steps: usize,
    diffusive_increments: Vec<f64>,
    counting_increments: Vec<Vec<u8>>,
    seed: u64,
    model_fingerprint: String,
}

impl MeasurementRecord {
    pub fn new(
        dt: f64,
        n_steps: usize,
        diffusive_increments: Vec<f64>,
        counting_increments: Vec<Vec<u8>>,
        seed: u64,
        model_fingerprint: String,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if !diffusive_increments.is_empty() && diffusive_increments.len() != n_steps {
            return Err(Error::InvalidParameter(format!(
                "diffusive series has {} entries for {} steps",
                diffusive_increments.len(),
                n_steps
            )));
        }
        for (i, dy) in diffusive_increments.iter().enumerate() {
            if !dy.is_finite() {
                return Err(Error::NonFiniteIncrement { step: i });
            }
        }
        for series in &counting_increments {
            if series.len() != n_steps {
                return Err(Error::InvalidParameter(format!(
                    "counting series has {} entries for {} steps",
                    series.len(),
                    n_steps
                )));
            }
            if let Some(i) = series.iter().position(|&dn| dn > 1) {
                return Err(Error::InvalidParameter(format!(
                    "dN must be 0 or 1, got {} at step {i}",
                    series[i]
                )));
            }
        }
        Ok(Self {
            dt,
            n_steps,
            diffusive_increments,
            counting_increments,
            seed,
            model_fingerprint,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn diffusive_increments(&self) -> &[f64] {
        &self.diffusive_increments
    }

    pub fn counting_increments(&self) -> &[Vec<u8>] {
        &self.counting_increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.n_steps as f64 * self.dt, self.dt)
            .expect("record dt and step count always form a grid")
    }

    pub fn total_clicks(&self) -> usize {
        self.counting_increments
            .iter()
            .map(|s| s.iter().map(|&d| d as usize).sum::<usize>())
            .sum()
    }
}

/// Normalized conditional states on the grid; log_norms recover the
/// unnormalized trajectory.
#[derive(Clone, Debug)]
pub struct StateTrajectory {
    times: Vec<f64>,
    states: Vec<DensityMatrix>,
}

impl StateTrajectory {
    pub(crate) fn new(times: Vec<f64>, states: Vec<DensityMatrix>) -> Self {
        debug_assert_eq!(times.len(), states.len());
        Self { times, states }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    pub fn log_norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.log_norm()).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulation-side ground truth. Never fed to the estimators; only the
/// evaluation harness may look.
#[derive(Clone, Debug, Default)]
pub struct HiddenTruth {
    /// Site index (0 = a, 1 = b) at every grid point; empty when the model
    /// has no site structure to track.
    pub sites: Vec<u8>,
    /// Outcome of the hidden projective measurement, when the harness
    /// inserted one.
    pub projective_outcome: Option<usize>,
}

/// Unread projective measurement inserted at a grid time during replay.
#[derive(Clone, Debug)]
pub struct Interruption {
    pub time: f64,
    pub projectors: Vec<Operator>,
}

/// Preassembled stepping workspace for one model: the drift generator
/// A = −iH − ½ΣL†L, the channel operators with their adjoints, and scratch
/// buffers so the per-step loop never allocates.
pub(crate) struct Kernel {
    dim: usize,
    a: Array2<C64>,
    a_dag: Array2<C64>,
    /// (L, L†) for every channel, in model order.
    pairs: Vec<(Array2<C64>, Array2<C64>)>,
    unobserved_idx: Vec<usize>,
    counting_idx: Vec<usize>,
    diffusive: Option<(usize, f64)>, // (channel index, √eta)
    guard_scale: f64,
    m1: Array2<C64>,
    acc: Array2<C64>,
}

impl Kernel {
    pub(crate) fn new(model: &Model) -> Self {
        let dim = model.dim();
        let zero = C64::new(0.0, 0.0);
        let mut ll_sum = Array2::<C64>::zeros((dim, dim));
        let mut pairs = Vec::new();
        let mut unobserved_idx = Vec::new();
        let mut counting_idx = Vec::new();
        let mut diffusive = None;
        for (i, ch) in model.channels().iter().enumerate() {
            let l = ch.lindblad().as_array().clone();
            let ldag = ch.lindblad().adjoint().into_array();
            general_mat_mul(C64::new(1.0, 0.0), &ldag, &l, C64::new(1.0, 0.0), &mut ll_sum);
            match ch.kind() {
                ChannelKind::DiffusiveObserved { eta } => diffusive = Some((i, eta.sqrt())),
                ChannelKind::CountingObserved => counting_idx.push(i),
                ChannelKind::Unobserved => unobserved_idx.push(i),
            }
            pairs.push((l, ldag));
        }
        let h = model.hamiltonian().as_array();
        let mut a = Array2::<C64>::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                a[[r, c]] = C64::new(0.0, -1.0) * h[[r, c]] - 0.5 * ll_sum[[r, c]];
            }
        }
        let a_dag = Array2::from_shape_fn((dim, dim), |(r, c)| a[[c, r]].conj());
        let guard_scale = model
            .hamiltonian()
            .max_abs()
            .max(ll_sum.iter().map(|z| z.norm()).fold(0.0, f64::max));
        Kernel {
            dim,
            a,
            a_dag,
            pairs,
            unobserved_idx,
            counting_idx,
            diffusive,
            guard_scale,
            m1: Array2::from_elem((dim, dim), zero),
            acc: Array2::from_elem((dim, dim), zero),
        }
    }

    pub(crate) fn sqrt_eta(&self) -> f64 {
        self.diffusive.map(|(_, s)| s).unwrap_or(0.0)
    }

    pub(crate) fn n_counting(&self) -> usize {
        self.counting_idx.len()
    }

    pub(crate) fn guard(&self, dt: f64) -> Result<()> {
        let value = dt * self.guard_scale;
        if value > STABILITY_LIMIT {
            return Err(Error::StepTooLarge {
                what: "dt times the largest generator entry",
                value,
                limit: STABILITY_LIMIT,
            });
        }
        Ok(())
    }

    /// Tr((c + c†)x), the homodyne signal mean without the √eta factor.
    pub(crate) fn signal_mean(&self, x: &Array2<C64>) -> f64 {
        let Some((ci, _)) = self.diffusive else {
            return 0.0;
        };
        let c = &self.pairs[ci].0;
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            for k in 0..self.dim {
                tr += c[[r, k]] * x[[k, r]];
            }
        }
        2.0 * tr.re
    }

    /// Tr(L†L x) for channel i.
    pub(crate) fn channel_rate(&self, i: usize, x: &Array2<C64>) -> f64 {
        let (l, _) = &self.pairs[i];
        // Tr(L†Lx) = Σ_{r,k} conj(L[r,k])·(Lx)[r,k]; cheaper as Σ |..| via two loops
        let mut total = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            for c in 0..self.dim {
                let mut lx = C64::new(0.0, 0.0);
                for k in 0..self.dim {
                    lx += l[[r, k]] * x[[k, c]];
                }
                total += l[[r, c]].conj() * lx;
            }
        }
        total.re
    }

    pub(crate) fn counting_rate(&self, nth: usize, x: &Array2<C64>) -> f64 {
        self.channel_rate(self.counting_idx[nth], x)
    }

    pub(crate) fn unobserved_rate(&self, nth: usize, x: &Array2<C64>) -> f64 {
        self.channel_rate(self.unobserved_idx[nth], x)
    }

    /// acc ← x + s·(m + m†) folded in; helper for the Hermitian pair terms.
    fn add_pair(acc: &mut Array2<C64>, m: &Array2<C64>, s: f64) {
        let d = acc.nrows();
        for r in 0..d {
            for c in 0..d {
                acc[[r, c]] += s * (m[[r, c]] + m[[c, r]].conj());
            }
        }
    }

    /// One linear forward step of the diffusive equation, in place,
    /// unnormalized:
    ///   x += dt(Ax + xA† + Σ_m L_m x L_m†) + √η dY (cx + xc†)
    pub(crate) fn forward_diffusive(&mut self, x: &mut Array2<C64>, dy: f64, dt: f64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        self.acc.assign(x);
        general_mat_mul(one, &self.a, x, zero, &mut self.m1);
        Self::add_pair(&mut self.acc, &self.m1, dt);
        for (l, ldag) in &self.pairs {
            general_mat_mul(one, l, x, zero, &mut self.m1);
            general_mat_mul(C64::new(dt, 0.0), &self.m1, ldag, one, &mut self.acc);
        }
        if let Some((ci, sqrt_eta)) = self.diffusive {
            let (c, _) = &self.pairs[ci];
            general_mat_mul(one, c, x, zero, &mut self.m1);
            Self::add_pair(&mut self.acc, &self.m1, sqrt_eta * dy);
        }
        std::mem::swap(x, &mut self.acc);
    }

    /// One linear backward step, in place, unnormalized:
    ///   x += dt(A†x + xA + Σ_m L_m† x L_m) + √η dY (c†x + xc)
    pub(crate) fn backward_diffusive(&mut self, x: &mut Array2<C64>, dy: f64, dt: f64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        self.acc.assign(x);
        general_mat_mul(one, &self.a_dag, x, zero, &mut self.m1);
        Self::add_pair(&mut self.acc, &self.m1, dt);
        for (l, ldag) in &self.pairs {
            general_mat_mul(one, ldag, x, zero, &mut self.m1);
            general_mat_mul(C64::new(dt, 0.0), &self.m1, l, one, &mut self.acc);
        }
        if let Some((ci, sqrt_eta)) = self.diffusive {
            let cdag = &self.pairs[ci].1;
            general_mat_mul(one, cdag, x, zero, &mut self.m1);
            Self::add_pair(&mut self.acc, &self.m1, sqrt_eta * dy);
        }
        std::mem::swap(x, &mut self.acc);
    }

    /// No-click forward step: unobserved channels keep their full
    /// dissipators, counting channels contribute only the no-click
    /// back-action already inside A.
    pub(crate) fn forward_noclick(&mut self, x: &mut Array2<C64>, dt: f64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        self.acc.assign(x);
        general_mat_mul(one, &self.a, x, zero, &mut self.m1);
        Self::add_pair(&mut self.acc, &self.m1, dt);
        for &i in &self.unobserved_idx {
            let (l, ldag) = &self.pairs[i];
            general_mat_mul(one, l, x, zero, &mut self.m1);
            general_mat_mul(C64::new(dt, 0.0), &self.m1, ldag, one, &mut self.acc);
        }
        std::mem::swap(x, &mut self.acc);
    }

    pub(crate) fn backward_noclick(&mut self, x: &mut Array2<C64>, dt: f64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        self.acc.assign(x);
        general_mat_mul(one, &self.a_dag, x, zero, &mut self.m1);
        Self::add_pair(&mut self.acc, &self.m1, dt);
        for &i in &self.unobserved_idx {
            let (l, ldag) = &self.pairs[i];
            general_mat_mul(one, ldag, x, zero, &mut self.m1);
            general_mat_mul(C64::new(dt, 0.0), &self.m1, l, one, &mut self.acc);
        }
        std::mem::swap(x, &mut self.acc);
    }

    /// Pure drift step with no jump terms at all: the no-jump evolution of a
    /// fully unraveled truth trajectory.
    pub(crate) fn forward_nojump(&mut self, x: &mut Array2<C64>, dt: f64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        self.acc.assign(x);
        general_mat_mul(one, &self.a, x, zero, &mut self.m1);
        Self::add_pair(&mut self.acc, &self.m1, dt);
        std::mem::swap(x, &mut self.acc);
    }

    /// x ← L x L† for the given channel (forward click / hidden jump),
    /// unnormalized.
    pub(crate) fn apply_jump(&mut self, x: &mut Array2<C64>, channel: usize) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let (l, ldag) = &self.pairs[channel];
        general_mat_mul(one, l, x, zero, &mut self.m1);
        general_mat_mul(one, &self.m1, ldag, zero, &mut self.acc);
        std::mem::swap(x, &mut self.acc);
    }

    /// x ← L† x L (backward click), unnormalized.
    pub(crate) fn apply_jump_adjoint(&mut self, x: &mut Array2<C64>, channel: usize) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let (l, ldag) = &self.pairs[channel];
        general_mat_mul(one, ldag, x, zero, &mut self.m1);
        general_mat_mul(one, &self.m1, l, zero, &mut self.acc);
        std::mem::swap(x, &mut self.acc);
    }

    pub(crate) fn counting_channel_index(&self, nth: usize) -> usize {
        self.counting_idx[nth]
    }

    pub(crate) fn unobserved_channel_index(&self, nth: usize) -> usize {
        self.unobserved_idx[nth]
    }

    pub(crate) fn n_unobserved(&self) -> usize {
        self.unobserved_idx.len()
    }
}

/// Single homodyne measurement operator for one step and readout value:
///   Ω_dY = (2π dt)^(−1/4) exp(−dY²/4dt) (I + (−iH − ½c†c)dt + c dY)
/// Only meaningful for efficient detection; the Gaussian weight makes
/// ∫ Ω†Ω dY = I + O(dt²).
pub fn homodyne_kraus(model: &Model, dy: f64, dt: f64) -> Result<Operator> {
    let Some((c, eta)) = model.diffusive_channel() else {
        return Err(Error::InvalidParameter(
            "homodyne Kraus operator needs a diffusive channel".into(),
        ));
    };
    if (eta - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "homodyne Kraus operator is defined for unit efficiency".into(),
        ));
    }
    if !(dt > 0.0) || !dy.is_finite() {
        return Err(Error::InvalidParameter("need dt > 0 and finite dY".into()));
    }
    let weight = (2.0 * std::f64::consts::PI * dt).powf(-0.25) * (-dy * dy / (4.0 * dt)).exp();
    Ok(first_order_op(model, c, dy, dt).scaled(C64::new(weight, 0.0)))
}

/// Two-operator Kraus set {Ω₊, Ω₋}/√2 at dY = ±√dt: the coarsest quadrature
/// of the homodyne readout that still matches mean and variance of the
/// Gaussian. Its unread channel equals the dY-averaged one-step map up to
/// exactly B†B dt² (B = −iH − ½c†c), which is what makes it the discrete
/// cross-check for the steppers.
pub fn homodyne_kraus_pair(model: &Model, dt: f64) -> Result<crate::qops::KrausSet> {
    let Some((c, eta)) = model.diffusive_channel() else {
        return Err(Error::InvalidParameter(
            "homodyne Kraus pair needs a diffusive channel".into(),
        ));
    };
    if (eta - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "homodyne Kraus pair is defined for unit efficiency".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let w = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let sq = dt.sqrt();
    crate::qops::KrausSet::new(
        "unread",
        vec![
            first_order_op(model, c, sq, dt).scaled(w),
            first_order_op(model, c, -sq, dt).scaled(w),
        ],
    )
}

/// I + (−iH − ½c†c)dt + c·dY, the operator core shared by the homodyne
/// Kraus factories.
fn first_order_op(model: &Model, c: &Operator, dy: f64, dt: f64) -> Operator {
    let b = &model.hamiltonian().scaled(C64::new(0.0, -dt))
        - &c.adjoint().matmul(c).scaled(C64::new(0.5 * dt, 0.0));
    &(&Operator::identity(model.dim()) + &b) + &c.scaled(C64::new(dy, 0.0))
}

/// Hermitize and rescale to unit trace; returns the discarded factor.
pub(crate) fn renormalize(x: &mut Array2<C64>, step: usize) -> Result<f64> {
    hermitize_in_place(x);
    let mut tr = trace_re(x);
    if !tr.is_finite() {
        return Err(Error::NonFiniteIncrement { step });
    }
    if tr <= 1e-300 {
        // A nonpositive trace means the linear map has carried the matrix
        // out of the physical cone, which a rare record can do because the
        // map is positive only to its truncation order. Keep the positive
        // part and move on; a genuinely vanishing outcome stays an error.
        positive_part_in_place(x)?;
        tr = trace_re(x);
        if tr <= 1e-300 {
            return Err(Error::ZeroProbabilityOutcome { prob: tr });
        }
    }
    let inv = C64::new(1.0 / tr, 0.0);
    for z in x.iter_mut() {
        *z *= inv;
    }
    Ok(tr)
}

/// One normalized forward step of the diffusive filtering equation.
pub fn diffusive_step(
    rho: &DensityMatrix,
    model: &Model,
    dy: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    if !dy.is_finite() {
        return Err(Error::NonFiniteIncrement { step: 0 });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: model.dim(),
            context: "diffusive_step",
        });
    }
    let mut x = rho.operator().as_array().clone();
    kernel.forward_diffusive(&mut x, dy, dt);
    let factor = renormalize(&mut x, 0)?;
    Ok(DensityMatrix::from_normalized_parts(
        Operator::new(x)?,
        rho.log_norm() + factor.ln(),
    ))
}

/// One normalized forward step of the counting filter; `dn` holds one 0/1
/// entry per counting channel. A click replaces the step by the jump map
/// L ρ L† (times dt in the norm bookkeeping); no click applies the smooth
/// no-click evolution.
pub fn jump_step(rho: &DensityMatrix, model: &Model, dn: &[u8], dt: f64) -> Result<DensityMatrix> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: model.dim(),
            context: "jump_step",
        });
    }
    if dn.len() != kernel.n_counting() {
        return Err(Error::InvalidParameter(format!(
            "{} click entries for {} counting channels",
            dn.len(),
            kernel.n_counting()
        )));
    }
    if let Some(&bad) = dn.iter().find(|&&d| d > 1) {
        return Err(Error::InvalidParameter(format!("dN must be 0 or 1, got {bad}")));
    }
    let mut x = rho.operator().as_array().clone();
    let mut log_norm = rho.log_norm();
    if dn.iter().any(|&d| d == 1) {
        for (nth, &d) in dn.iter().enumerate() {
            if d == 1 {
                let ch = kernel.counting_channel_index(nth);
                let p = kernel.channel_rate(ch, &x);
                if p <= 1e-14 {
                    return Err(Error::ZeroProbabilityOutcome { prob: p });
                }
                kernel.apply_jump(&mut x, ch);
                log_norm += dt.ln();
            }
        }
    } else {
        kernel.forward_noclick(&mut x, dt);
    }
    let factor = renormalize(&mut x, 0)?;
    Ok(DensityMatrix::from_normalized_parts(
        Operator::new(x)?,
        log_norm + factor.ln(),
    ))
}

/// Simulate a homodyne record: per step dY = √η Tr((c+c†)ρ)dt + dW with
/// dW ~ Normal(0, dt), advancing the filter on its own record.
/// Deterministic given the seed.
pub fn sample_diffusive_record(
    model: &Model,
    rho0: &DensityMatrix,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<(MeasurementRecord, StateTrajectory)> {
    if model.diffusive_channel().is_none() {
        return Err(Error::InvalidParameter(
            "model has no diffusive channel to sample".into(),
        ));
    }
    let grid = Grid::new(t_end, dt)?;
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    let sqrt_eta = kernel.sqrt_eta();
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let n = grid.n_steps();
    let mut increments = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n + 1);
    states.push(rho0.clone());
    let mut x = rho0.operator().as_array().clone();
    let mut log_norm = rho0.log_norm();
    for i in 0..n {
        let mean = sqrt_eta * kernel.signal_mean(&x) * dt;
        let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
        let dy = mean + dw;
        increments.push(dy);
        kernel.forward_diffusive(&mut x, dy, dt);
        log_norm += renormalize(&mut x, i)?.ln();
        states.push(DensityMatrix::from_normalized_parts(
            Operator::new(x.clone())?,
            log_norm,
        ));
    }
    let record = MeasurementRecord::new(dt, n, increments, vec![], seed, model.fingerprint())?;
    Ok((record, StateTrajectory::new(grid.times(), states)))
}

/// Simulate a counting record with a fully unraveled truth layer: the true
/// state jumps at clicks (recorded) and at unobserved-channel events
/// (hidden), while the returned trajectory is the filter conditioned on
/// clicks alone starting from `rho0`.
///
/// For the 4-dim site⊗internal layout the truth's initial site is drawn by
/// Born's rule and `HiddenTruth::sites` logs the occupied site per grid
/// point; for other shapes `sites` stays empty.
pub fn sample_jump_record(
    model: &Model,
    rho0: &DensityMatrix,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<(MeasurementRecord, StateTrajectory, HiddenTruth)> {
    if model.counting_channels().is_empty() {
        return Err(Error::InvalidParameter(
            "model has no counting channel to sample".into(),
        ));
    }
    let grid = Grid::new(t_end, dt)?;
    let mut kernel = Kernel::new(model);
    kernel.guard(dt)?;
    let n = grid.n_steps();
    let n_counting = kernel.n_counting();
    let n_unobserved = kernel.n_unobserved();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let track_sites = model.dim() == 4 && n_unobserved > 0;
    let mut truth = HiddenTruth::default();

    // truth state, site-collapsed when sites are tracked
    let mut xt = rho0.operator().as_array().clone();
    if track_sites {
        let pa = xt[[0, 0]].re + xt[[1, 1]].re;
        let site = if rng.random::<f64>() < pa { 0u8 } else { 1u8 };
        let keep = if site == 0 { [0, 1] } else { [2, 3] };
        let mut collapsed = Array2::<C64>::zeros((4, 4));
        for &r in &keep {
            for &c in &keep {
                collapsed[[r, c]] = xt[[r, c]];
            }
        }
        xt = collapsed;
        renormalize(&mut xt, 0)?;
        truth.sites.push(site);
    }

    let mut x = rho0.operator().as_array().clone();
    let mut log_norm = rho0.log_norm();
    let mut states = Vec::with_capacity(n + 1);
    states.push(rho0.clone());
    let mut clicks: Vec<Vec<u8>> = vec![Vec::with_capacity(n); n_counting];

    for i in 0..n {
        // event probabilities from the true state
        let mut p_total = 0.0;
        let mut probs = Vec::with_capacity(n_counting + n_unobserved);
        for nth in 0..n_counting {
            let p = kernel.counting_rate(nth, &xt) * dt;
            probs.push(p);
            p_total += p;
        }
        for nth in 0..n_unobserved {
            let p = kernel.unobserved_rate(nth, &xt) * dt;
            probs.push(p);
            p_total += p;
        }
        if p_total > CLICK_PROBABILITY_LIMIT {
            return Err(Error::StepTooLarge {
                what: "per-step jump probability",
                value: p_total,
                limit: CLICK_PROBABILITY_LIMIT,
            });
        }
        let u: f64 = rng.random();
        let mut event = None;
        let mut cum = 0.0;
        for (j, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                event = Some(j);
                break;
            }
        }

        let mut dn = vec![0u8; n_counting];
        match event {
            Some(j) if j < n_counting => {
                dn[j] = 1;
                kernel.apply_jump(&mut xt, kernel.counting_channel_index(j));
            }
            Some(j) => {
                kernel.apply_jump(&mut xt, kernel.unobserved_channel_index(j - n_counting));
            }
            None => kernel.forward_nojump(&mut xt, dt),
        }
        renormalize(&mut xt, i)?;

        // filter update from the click data only
        if dn.iter().any(|&d| d == 1) {
            for (nth, &d) in dn.iter().enumerate() {
                if d == 1 {
                    let ch = kernel.counting_channel_index(nth);
                    let p = kernel.channel_rate(ch, &x);
                    if p <= 1e-14 {
                        return Err(Error::ZeroProbabilityOutcome { prob: p });
                    }
                    kernel.apply_jump(&mut x, ch);
                    log_norm += dt.ln();
                }
            }
        } else {
            kernel.forward_noclick(&mut x, dt);
        }
        log_norm += renormalize(&mut x, i)?.ln();
        states.push(DensityMatrix::from_normalized_parts(
            Operator::new(x.clone())?,
            log_norm,
        ));
        for (nth, &d) in dn.iter().enumerate() {
            clicks[nth].push(d);
        }
        if track_sites {
            let pa = xt[[0, 0]].re + xt[[1, 1]].re;
            truth.sites.push(if pa >= 0.5 { 0 } else { 1 });
        }
    }

    let record = MeasurementRecord::new(dt, n, vec![], clicks, seed, model.fingerprint())?;
    Ok((record, StateTrajectory::new(grid.times(), states), truth))
}

/// Replay a stored record through the matching stepper. States at an
/// interruption time hold the left limit ρ(t₀₋); the projective map is
/// applied before stepping onward, so the right limit is
/// `states[i].project(...)`.
pub fn run_forward(
    record: &MeasurementRecord,
    model: &Model,
    rho0: &DensityMatrix,
    interruptions: &[Interruption],
) -> Result<StateTrajectory> {
    if record.model_fingerprint() != model.fingerprint() {
        return Err(Error::FingerprintMismatch {
            record: record.model_fingerprint().to_string(),
            model: model.fingerprint(),
        });
    }
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: rho0.dim(),
            right: model.dim(),
            context: "run_forward",
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
    let mut states = Vec::with_capacity(n + 1);
    states.push(rho0.clone());
    let mut x = rho0.operator().as_array().clone();
    let mut log_norm = rho0.log_norm();
    let mut stop_cursor = 0;

    for i in 0..=n {
        while stop_cursor < stops.len() && stops[stop_cursor].0 == i {
            let mapped = crate::qops::projective_map(
                &Operator::new(x.clone())?,
                &stops[stop_cursor].1.projectors,
            )?;
            x.assign(mapped.as_array());
            stop_cursor += 1;
        }
        if i == n {
            break;
        }
        if diffusive {
            kernel.forward_diffusive(&mut x, record.diffusive_increments()[i], dt);
        } else {
            let any_click = record
                .counting_increments()
                .iter()
                .any(|series| series[i] == 1);
            if any_click {
                for nth in 0..kernel.n_counting() {
                    if record.counting_increments()[nth][i] == 1 {
                        let ch = kernel.counting_channel_index(nth);
                        let p = kernel.channel_rate(ch, &x);
                        if p <= 1e-14 {
                            return Err(Error::ZeroProbabilityOutcome { prob: p });
                        }
                        kernel.apply_jump(&mut x, ch);
                        log_norm += dt.ln();
                    }
                }
            } else {
                kernel.forward_noclick(&mut x, dt);
            }
        }
        log_norm += renormalize(&mut x, i)?.ln();
        states.push(DensityMatrix::from_normalized_parts(
            Operator::new(x.clone())?,
            log_norm,
        ));
    }
    Ok(StateTrajectory::new(grid.times(), states))
}
