//! Discrete-time hidden Markov smoothing: the scaled forward-backward
//! recursions, a path-enumeration oracle, and the embedding of a chain into
//! the quantum machinery, where α shows up as the diagonal of ρ̃ and β as
//! the diagonal of E.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qops::{
    kraus_adjoint_apply, kraus_apply, past_distribution, DensityMatrix, EffectMatrix, KrausSet,
    MeasurementSpec, Operator, PastStatePair, C64,
};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Path-count cap for the brute-force oracle.
pub const ENUMERATION_CAP: f64 = 1e7;

/// Row-stochastic chain: transition[i][j] = P(X_{t+1}=j | X_t=i),
/// emission[i][y] = P(Y_t=y | X_t=i), observations are integer symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHmmModel")]
pub struct HmmModel {
    n_states: usize,
    n_symbols: usize,
    transition: Vec<Vec<f64>>,
    emission: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

/// File shape: just the three arrays; sizes and stochasticity are checked
/// on the way in.
#[derive(Deserialize)]
struct RawHmmModel {
    transition: Vec<Vec<f64>>,
    emission: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl TryFrom<RawHmmModel> for HmmModel {
    type Error = Error;

    fn try_from(raw: RawHmmModel) -> Result<Self> {
        HmmModel::new(raw.transition, raw.emission, raw.initial)
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{what} has entry {p}, outside [0,1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {sum}, not 1"
        )));
    }
    Ok(())
}

impl HmmModel {
    pub fn new(
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(Error::InvalidParameter("chain needs at least one state".into()));
        }
        if transition.len() != n || emission.len() != n {
            return Err(Error::InvalidParameter(format!(
                "matrix row counts ({}, {}) do not match {n} states",
                transition.len(),
                emission.len()
            )));
        }
        let n_symbols = emission[0].len();
        if n_symbols == 0 {
            return Err(Error::InvalidParameter("emission alphabet is empty".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "transition row {i} has {} entries for {n} states",
                    row.len()
                )));
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        for (i, row) in emission.iter().enumerate() {
            if row.len() != n_symbols {
                return Err(Error::InvalidParameter(format!(
                    "emission row {i} has {} entries for {n_symbols} symbols",
                    row.len()
                )));
            }
            check_distribution(row, &format!("emission row {i}"))?;
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Self {
            n_states: n,
            n_symbols,
            transition,
            emission,
            initial,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn emission(&self) -> &[Vec<f64>] {
        &self.emission
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    fn check_observations(&self, observations: &[usize]) -> Result<()> {
        for (t, &y) in observations.iter().enumerate() {
            if y >= self.n_symbols {
                return Err(Error::InvalidParameter(format!(
                    "observation {y} at step {t} is outside the {}-symbol alphabet",
                    self.n_symbols
                )));
            }
        }
        Ok(())
    }
}

/// Both recursions over one observation sequence. alpha and filtered are
/// normalized per time (they coincide under per-step scaling and are kept
/// as separate fields because they answer different questions); beta is
/// scaled to mean 1 with β_T literally all-ones.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmPosteriors {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub filtered: Vec<Vec<f64>>,
    pub smoothed: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// α recursion with per-step scaling. The first observation belongs to
/// t = 1; α_0 is the prior. Returns the normalized vectors and
/// ln P(Y_1..Y_T) accumulated from the scale factors.
pub fn hmm_forward(model: &HmmModel, observations: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    model.check_observations(observations)?;
    let n = model.n_states;
    let mut alpha = Vec::with_capacity(observations.len() + 1);
    alpha.push(model.initial.clone());
    let mut log_likelihood = 0.0;
    for (t, &y) in observations.iter().enumerate() {
        let prev = &alpha[t];
        let mut next = vec![0.0; n];
        for (i, slot) in next.iter_mut().enumerate() {
            let mut mass = 0.0;
            for j in 0..n {
                mass += model.transition[j][i] * prev[j];
            }
            *slot = model.emission[i][y] * mass;
        }
        let scale: f64 = next.iter().sum();
        if !(scale > 0.0) {
            return Err(Error::ImpossibleObservation { step: t });
        }
        for v in &mut next {
            *v /= scale;
        }
        log_likelihood += scale.ln();
        alpha.push(next);
    }
    Ok((alpha, log_likelihood))
}

/// β recursion, iterated from β_T = 1 toward t = 0, rescaled to mean 1 per
/// step so long sequences neither under- nor overflow.
pub fn hmm_backward(model: &HmmModel, observations: &[usize]) -> Result<Vec<Vec<f64>>> {
    model.check_observations(observations)?;
    let n = model.n_states;
    let t_end = observations.len();
    let mut beta = vec![vec![1.0; n]; t_end + 1];
    for t in (0..t_end).rev() {
        let y = observations[t];
        let (head, tail) = beta.split_at_mut(t + 1);
        let next = &tail[0];
        let here = &mut head[t];
        for (i, slot) in here.iter_mut().enumerate() {
            let mut mass = 0.0;
            for j in 0..n {
                mass += model.emission[j][y] * model.transition[i][j] * next[j];
            }
            *slot = mass;
        }
        let mean: f64 = here.iter().sum::<f64>() / n as f64;
        if !(mean > 0.0) {
            return Err(Error::ImpossibleObservation { step: t });
        }
        for v in here.iter_mut() {
            *v /= mean;
        }
    }
    Ok(beta)
}

/// Pointwise products α_t ⊙ β_t, renormalized; the per-step scale factors
/// of both passes drop out here.
pub fn hmm_smoothed(posteriors: &HmmPosteriors) -> Result<Vec<Vec<f64>>> {
    smoothed_from(&posteriors.alpha, &posteriors.beta)
}

fn smoothed_from(alpha: &[Vec<f64>], beta: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if alpha.len() != beta.len() {
        return Err(Error::DimensionMismatch {
            left: alpha.len(),
            right: beta.len(),
            context: "smoothed_from",
        });
    }
    alpha
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(t, (a, b))| {
            let mut row: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let norm: f64 = row.iter().sum();
            if !(norm > 0.0) {
                return Err(Error::ImpossibleObservation { step: t });
            }
            for v in &mut row {
                *v /= norm;
            }
            Ok(row)
        })
        .collect()
}

/// Run both passes and assemble every posterior in one call.
pub fn hmm_posteriors(model: &HmmModel, observations: &[usize]) -> Result<HmmPosteriors> {
    let (alpha, log_likelihood) = hmm_forward(model, observations)?;
    let beta = hmm_backward(model, observations)?;
    let smoothed = smoothed_from(&alpha, &beta)?;
    let filtered = alpha.clone();
    Ok(HmmPosteriors {
        alpha,
        beta,
        filtered,
        smoothed,
        log_likelihood,
    })
}

/// Posteriors computed by full path enumeration, with no scaling tricks.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedPosteriors {
    pub filtered: Vec<Vec<f64>>,
    pub smoothed: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// Brute-force reference: sum the joint P(X_0..X_T, Y_1..Y_T) over every
/// state path and marginalize. Exponential on purpose; guarded by
/// `ENUMERATION_CAP`.
pub fn hmm_joint_oracle(
    model: &HmmModel,
    observations: &[usize],
) -> Result<EnumeratedPosteriors> {
    model.check_observations(observations)?;
    let n = model.n_states;
    let t_end = observations.len();
    let paths = (n as f64).powi(t_end as i32 + 1);
    if paths > ENUMERATION_CAP {
        return Err(Error::TooLargeForEnumeration {
            states: n,
            steps: t_end,
            paths,
            cap: ENUMERATION_CAP,
        });
    }

    // Filtered at t only sees observations up to t, so it needs its own
    // prefix enumeration per time; the full-path sweep below would
    // smuggle in the future.
    let mut filtered = Vec::with_capacity(t_end + 1);
    for t in 0..=t_end {
        let mut marginal = vec![0.0; n];
        let prefix_paths = n.pow(t as u32 + 1);
        let mut path = vec![0usize; t + 1];
        for code in 0..prefix_paths {
            let mut rest = code;
            for slot in path.iter_mut() {
                *slot = rest % n;
                rest /= n;
            }
            let mut w = model.initial[path[0]];
            for s in 0..t {
                w *= model.transition[path[s]][path[s + 1]];
                w *= model.emission[path[s + 1]][observations[s]];
            }
            marginal[path[t]] += w;
        }
        let norm: f64 = marginal.iter().sum();
        if !(norm > 0.0) {
            return Err(Error::ImpossibleObservation { step: t });
        }
        for v in &mut marginal {
            *v /= norm;
        }
        filtered.push(marginal);
    }

    let full_paths = n.pow(t_end as u32 + 1);
    let mut smoothed = vec![vec![0.0; n]; t_end + 1];
    let mut total = 0.0;
    let mut path = vec![0usize; t_end + 1];
    for code in 0..full_paths {
        let mut rest = code;
        for slot in path.iter_mut() {
            *slot = rest % n;
            rest /= n;
        }
        let mut w = model.initial[path[0]];
        for s in 0..t_end {
            w *= model.transition[path[s]][path[s + 1]];
            w *= model.emission[path[s + 1]][observations[s]];
        }
        total += w;
        for (t, &x) in path.iter().enumerate() {
            smoothed[t][x] += w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::ImpossibleObservation { step: t_end });
    }
    for row in &mut smoothed {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(EnumeratedPosteriors {
        filtered,
        smoothed,
        log_likelihood: total.ln(),
    })
}

/// The chain as quantum maps on the site basis: ρ0 carries the prior on
/// its diagonal, one step of dynamics is the chain set followed by the
/// observed symbol's set.
#[derive(Clone, Debug)]
pub struct HmmEmbedding {
    pub rho0: DensityMatrix,
    pub chain: KrausSet,
    pub observation: MeasurementSpec,
}

pub fn embed_hmm(model: &HmmModel) -> Result<HmmEmbedding> {
    let n = model.n_states;
    let zero = C64::new(0.0, 0.0);
    let diag: Vec<C64> = model.initial.iter().map(|&p| C64::new(p, 0.0)).collect();
    let rho0 = DensityMatrix::new(Operator::from_diag(&diag))?;

    let mut basis = vec![vec![zero; n]; n];
    for (i, e) in basis.iter_mut().enumerate() {
        e[i] = C64::new(1.0, 0.0);
    }

    // √P(j|i) |j⟩⟨i| moves population i → j; the full set is the unread
    // chain step and sums to the identity.
    let mut chain_ops = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let amp: Vec<C64> = basis[j]
                .iter()
                .map(|&e| e * model.transition[i][j].sqrt())
                .collect();
            chain_ops.push(Operator::outer(&amp, &basis[i]));
        }
    }
    let chain = KrausSet::new("chain", chain_ops)?;

    // √P(y|i) |i⟩⟨i| per state: reading y both reweights and fully
    // dephases, which is what keeps the embedded matrices diagonal.
    let mut outcomes = Vec::with_capacity(model.n_symbols);
    for y in 0..model.n_symbols {
        let ops: Vec<Operator> = (0..n)
            .map(|i| {
                let amp: Vec<C64> = basis[i]
                    .iter()
                    .map(|&e| e * model.emission[i][y].sqrt())
                    .collect();
                Operator::outer(&amp, &basis[i])
            })
            .collect();
        outcomes.push(KrausSet::new(y.to_string(), ops)?);
    }
    let observation = MeasurementSpec::new(outcomes)?;

    Ok(HmmEmbedding {
        rho0,
        chain,
        observation,
    })
}

/// Draw a symbol sequence from the chain itself, deterministic in the seed.
/// The hidden path starts from the prior and the first symbol is emitted
/// after the first transition, matching where the recursions pick up.
pub fn sample_observations(model: &HmmModel, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = |weights: &[f64]| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    };
    let mut state = draw(&model.initial);
    let mut obs = Vec::with_capacity(len);
    for _ in 0..len {
        state = draw(&model.transition[state]);
        obs.push(draw(&model.emission[state]));
    }
    obs
}

/// Worst-case gaps between the embedded quantum passes and the classical
/// recursions; every field should sit at rounding level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheck {
    /// diag ρ̃_t against the filtered posterior.
    pub filtered_dev: f64,
    /// diag E_t against β_t.
    pub beta_dev: f64,
    /// Largest off-diagonal magnitude either pass grows.
    pub offdiag: f64,
    /// Retrodicted outcome probabilities against the smoothed posterior.
    pub smoothed_dev: f64,
    /// Relative gap between ln Tr ρ̃_T and the classical log-likelihood.
    pub log_likelihood_dev: f64,
}

impl EmbeddingCheck {
    pub fn max_deviation(&self) -> f64 {
        self.filtered_dev
            .max(self.beta_dev)
            .max(self.offdiag)
            .max(self.smoothed_dev)
            .max(self.log_likelihood_dev)
    }
}

/// Run a symbol sequence through both the classical recursions and the
/// embedded quantum passes and report how far they drift apart.
pub fn check_embedding(model: &HmmModel, observations: &[usize]) -> Result<EmbeddingCheck> {
    model.check_observations(observations)?;
    let post = hmm_posteriors(model, observations)?;
    let embedding = embed_hmm(model)?;
    let n = model.n_states;

    let mut states = vec![embedding.rho0.clone()];
    for &y in observations {
        let (after_chain, _) = kraus_apply(states.last().unwrap(), &embedding.chain)?;
        let (conditioned, _) = kraus_apply(&after_chain, &embedding.observation.outcomes()[y])?;
        states.push(conditioned);
    }
    let mut effects = vec![EffectMatrix::identity(n)];
    for &y in observations.iter().rev() {
        let through_obs =
            kraus_adjoint_apply(effects.last().unwrap(), &embedding.observation.outcomes()[y])?;
        let through_chain = kraus_adjoint_apply(&through_obs, &embedding.chain)?;
        effects.push(through_chain.normalized()?);
    }
    effects.reverse();

    let mut filtered_dev = 0.0f64;
    let mut beta_dev = 0.0f64;
    let mut offdiag = 0.0f64;
    for (t, (rho, effect)) in states.iter().zip(&effects).enumerate() {
        let r = rho.operator().as_array();
        let e = effect.operator().as_array();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    filtered_dev = filtered_dev.max((r[[i, i]].re - post.filtered[t][i]).abs());
                    beta_dev = beta_dev.max((e[[i, i]].re - post.beta[t][i]).abs());
                } else {
                    offdiag = offdiag.max(r[[i, j]].norm()).max(e[[i, j]].norm());
                }
            }
        }
    }

    let quantum_ll = states.last().expect("prior is always present").log_norm();
    let log_likelihood_dev =
        (quantum_ll - post.log_likelihood).abs() / post.log_likelihood.abs().max(1.0);

    let projectors: Vec<Operator> = (0..n)
        .map(|i| {
            let mut diag = vec![C64::new(0.0, 0.0); n];
            diag[i] = C64::new(1.0, 0.0);
            Operator::from_diag(&diag)
        })
        .collect();
    let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let sites = MeasurementSpec::projective(projectors, &label_refs)?;
    let mut smoothed_dev = 0.0f64;
    for (t, (rho, effect)) in states.iter().zip(&effects).enumerate() {
        let pair = PastStatePair::new(rho.clone(), effect.clone(), t as f64)?;
        let retro = past_distribution(&pair, &sites)?;
        for i in 0..n {
            smoothed_dev = smoothed_dev.max((retro[i] - post.smoothed[t][i]).abs());
        }
    }

    Ok(EmbeddingCheck {
        filtered_dev,
        beta_dev,
        offdiag,
        smoothed_dev,
        log_likelihood_dev,
    })
}
