//! Shared helpers for the integration suites: random operators, states
//! and measurements, a classical RK4 master-equation integrator, and
//! random hidden Markov chains.

use qsmooth::hmm::HmmModel;
use qsmooth::model::{Channel, ChannelKind, Model};
use qsmooth::qops::{
    hermitian_eigen, DensityMatrix, EffectMatrix, KrausSet, MeasurementSpec, Operator, C64,
};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn random_matrix(rng: &mut ChaCha12Rng, dim: usize) -> Operator {
    let m = ndarray::Array2::from_shape_fn((dim, dim), |_| {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    Operator::new(m).expect("finite entries")
}

pub fn random_hermitian(rng: &mut ChaCha12Rng, dim: usize) -> Operator {
    let m = random_matrix(rng, dim);
    (&m + &m.adjoint()).scaled(c(0.5, 0.0))
}

/// Full-rank random state G G† / Tr, log_norm zero.
pub fn random_density(rng: &mut ChaCha12Rng, dim: usize) -> DensityMatrix {
    let g = random_matrix(rng, dim);
    let mut rho = DensityMatrix::new(g.matmul(&g.adjoint())).expect("G G† is a valid state");
    // Rebuild from the normalized operator so log_norm starts at zero.
    rho = DensityMatrix::new(rho.operator().clone()).expect("normalized state");
    rho
}

/// Random positive-definite effect, log_norm zero.
pub fn random_effect(rng: &mut ChaCha12Rng, dim: usize) -> EffectMatrix {
    let g = random_matrix(rng, dim);
    EffectMatrix::new(g.matmul(&g.adjoint())).expect("G G† is a valid effect")
}

/// Complete POVM with `n_outcomes` outcomes, one or two Kraus operators
/// each: raw random operators are right-normalized by S^{-1/2}.
pub fn random_povm(rng: &mut ChaCha12Rng, dim: usize, n_outcomes: usize) -> MeasurementSpec {
    let raw: Vec<Vec<Operator>> = (0..n_outcomes)
        .map(|_| {
            (0..rng.random_range(1..=2))
                .map(|_| random_matrix(rng, dim))
                .collect()
        })
        .collect();
    let mut s = Operator::zeros(dim);
    for ops in &raw {
        for op in ops {
            s = &s + &op.adjoint().matmul(op);
        }
    }
    let (vals, vecs) = hermitian_eigen(&s).expect("sum of positives");
    let inv_sqrt: Vec<C64> = vals.iter().map(|&v| c(1.0 / v.sqrt(), 0.0)).collect();
    let s_inv_sqrt = vecs
        .matmul(&Operator::from_diag(&inv_sqrt))
        .matmul(&vecs.adjoint());
    let outcomes: Vec<KrausSet> = raw
        .into_iter()
        .enumerate()
        .map(|(y, ops)| {
            KrausSet::new(
                y.to_string(),
                ops.iter().map(|op| op.matmul(&s_inv_sqrt)).collect(),
            )
            .expect("normalized operators")
        })
        .collect();
    let spec = MeasurementSpec::new(outcomes).expect("non-empty");
    debug_assert!(spec.completeness_deviation() < 1e-12);
    spec
}

/// Rank-one projective measurement in a random orthonormal basis; returns
/// the spec together with its projectors.
pub fn random_projective(rng: &mut ChaCha12Rng, dim: usize) -> (MeasurementSpec, Vec<Operator>) {
    let (_, vecs) = hermitian_eigen(&random_hermitian(rng, dim)).expect("hermitian");
    let arr = vecs.as_array();
    let projectors: Vec<Operator> = (0..dim)
        .map(|i| {
            let col: Vec<C64> = (0..dim).map(|r| arr[[r, i]]).collect();
            Operator::outer(&col, &col)
        })
        .collect();
    let labels: Vec<String> = (0..dim).map(|i| i.to_string()).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let spec = MeasurementSpec::projective(projectors.clone(), &label_refs)
        .expect("eigenbasis projectors");
    (spec, projectors)
}

/// Random spin-type model with one perfectly observed homodyne channel.
pub fn random_diffusive_model(rng: &mut ChaCha12Rng, dim: usize) -> Model {
    let h = random_hermitian(rng, dim);
    let ch = Channel::new(
        random_matrix(rng, dim),
        ChannelKind::DiffusiveObserved { eta: 1.0 },
    )
    .expect("unit efficiency");
    Model::new(h, vec![ch]).expect("dimensions agree")
}

fn stochastic_rows(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let mut row: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = row.iter().sum();
            for v in &mut row {
                *v /= sum;
            }
            row
        })
        .collect()
}

pub fn random_hmm(rng: &mut ChaCha12Rng, n_states: usize, n_symbols: usize) -> HmmModel {
    HmmModel::new(
        stochastic_rows(rng, n_states, n_states),
        stochastic_rows(rng, n_states, n_symbols),
        stochastic_rows(rng, 1, n_states).pop().unwrap(),
    )
    .expect("rows normalized by construction")
}

fn lindblad_rhs(model: &Model, x: &Operator) -> Operator {
    let mut out = model.hamiltonian().commutator(x).scaled(c(0.0, -1.0));
    for ch in model.channels() {
        let l = ch.lindblad();
        let ldag = l.adjoint();
        let ldl = ldag.matmul(l);
        out = &out + &l.matmul(x).matmul(&ldag);
        out = &out - &(&ldl.matmul(x) + &x.matmul(&ldl)).scaled(c(0.5, 0.0));
    }
    out
}

/// Classical RK4 integration of the master equation on the same grid the
/// filters use; returns ρ at the requested step indices.
pub fn rk4_lindblad(
    model: &Model,
    rho0: &DensityMatrix,
    dt: f64,
    n_steps: usize,
    keep: &[usize],
) -> Vec<Operator> {
    let mut x = rho0.operator().clone();
    let mut out = Vec::with_capacity(keep.len());
    if keep.contains(&0) {
        out.push(x.clone());
    }
    let sixth = c(dt / 6.0, 0.0);
    let half = c(0.5 * dt, 0.0);
    let full = c(dt, 0.0);
    for i in 1..=n_steps {
        let k1 = lindblad_rhs(model, &x);
        let k2 = lindblad_rhs(model, &(&x + &k1.scaled(half)));
        let k3 = lindblad_rhs(model, &(&x + &k2.scaled(half)));
        let k4 = lindblad_rhs(model, &(&x + &k3.scaled(full)));
        let sum = &(&k1 + &k4) + &(&k2 + &k3).scaled(c(2.0, 0.0));
        x = &x + &sum.scaled(sixth);
        if keep.contains(&i) {
            out.push(x.clone());
        }
    }
    out
}

pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
