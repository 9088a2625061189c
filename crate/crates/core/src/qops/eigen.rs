//! Cyclic Jacobi eigensolver for Hermitian matrices.
//!
//! Dimensions here are small (validation of states, POVM normalization), so
//! the quadratically convergent Jacobi iteration is plenty and avoids pulling
//! in a LAPACK binding.

use ndarray::Array2;

use super::operator::{hermitize_in_place, Operator, C64};
use crate::error::Result;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and the unitary of eigenvector columns.
pub fn hermitian_eigen(op: &Operator) -> Result<(Vec<f64>, Operator)> {
    op.check_hermitian(1e-8 * op.max_abs().max(1.0))?;
    let d = op.dim();
    let mut a = op.as_array().clone();
    hermitize_in_place(&mut a);
    let mut v: Array2<C64> = Array2::eye(d);

    let scale = op.max_abs().max(f64::MIN_POSITIVE);
    let target = 1e-15 * scale;

    for _sweep in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a[[p, q]].norm());
            }
        }
        if off <= target {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                rotate(&mut a, &mut v, p, q, target);
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[[i, i]].re.partial_cmp(&a[[j, j]].re).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[[i, i]].re).collect();
    let mut vectors = Array2::zeros((d, d));
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..d {
            vectors[[row, new_col]] = v[[row, old_col]];
        }
    }
    Ok((values, Operator::new(vectors)?))
}

/// Smallest eigenvalue; the cheap positivity diagnostic.
pub fn min_eigenvalue(op: &Operator) -> Result<f64> {
    let (values, _) = hermitian_eigen(op)?;
    Ok(values[0])
}

/// Replace x by its positive semidefinite part, dropping every negative
/// eigenvalue. Last-resort projection back into the physical cone for a
/// matrix a linear recursion has corrupted badly enough that its trace
/// changed sign; never applied to healthy matrices.
pub(crate) fn positive_part_in_place(x: &mut Array2<C64>) -> Result<()> {
    let (vals, vecs) = hermitian_eigen(&Operator::new(x.clone())?)?;
    let floored: Vec<C64> = vals.iter().map(|&v| C64::new(v.max(0.0), 0.0)).collect();
    let rebuilt = vecs
        .matmul(&Operator::from_diag(&floored))
        .matmul(&vecs.adjoint());
    x.assign(rebuilt.as_array());
    Ok(())
}

/// Unitary similarity zeroing a[[p, q]].
///
/// The complex phase of a_pq is absorbed into the rotation so the core is the
/// classical real Jacobi step.
fn rotate(a: &mut Array2<C64>, v: &mut Array2<C64>, p: usize, q: usize, tiny: f64) {
    let apq = a[[p, q]];
    let r = apq.norm();
    if r <= tiny {
        a[[p, q]] = C64::new(0.0, 0.0);
        a[[q, p]] = C64::new(0.0, 0.0);
        return;
    }
    let phase = apq / r; // e^{i phi}
    let app = a[[p, p]].re;
    let aqq = a[[q, q]].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let d = a.nrows();
    // Row update: rows p and q of J^dag A.
    for k in 0..d {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * phase * aqk;
        a[[q, k]] = s * phase.conj() * apk + c * aqk;
    }
    // Column update: columns p and q of (J^dag A) J, plus eigenvector columns.
    for k in 0..d {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * phase.conj() * akq;
        a[[k, q]] = s * phase * akp + c * akq;

        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * phase.conj() * vkq;
        v[[k, q]] = s * phase * vkp + c * vkq;
    }
    a[[p, q]] = C64::new(0.0, 0.0);
    a[[q, p]] = C64::new(0.0, 0.0);
    a[[p, p]] = C64::new(a[[p, p]].re, 0.0);
    a[[q, q]] = C64::new(a[[q, q]].re, 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn pauli_x_spectrum() {
        let sx = Operator::new(array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]).unwrap();
        let (vals, vecs) = hermitian_eigen(&sx).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
        // columns stay orthonormal
        let gram = vecs.adjoint().matmul(&vecs);
        assert!(gram.max_abs_diff(&Operator::identity(2)) < 1e-14);
    }

    #[test]
    fn reconstructs_random_hermitian() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for d in [2usize, 3, 5, 8] {
            let mut m = Array2::<C64>::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    m[[i, j]] = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                }
            }
            let h = Operator::new(m).unwrap().hermitized();
            let (vals, vecs) = hermitian_eigen(&h).unwrap();
            // A V = V diag(vals)
            let av = h.matmul(&vecs);
            let vd = vecs.matmul(&Operator::from_diag(
                &vals.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>(),
            ));
            assert!(av.max_abs_diff(&vd) < 1e-12, "residual too large at d={d}");
            let gram = vecs.adjoint().matmul(&vecs);
            assert!(gram.max_abs_diff(&Operator::identity(d)) < 1e-12);
            for w in vals.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn min_eigenvalue_of_projector_mixture() {
        let m = Operator::from_diag(&[c(0.3, 0.0), c(0.0, 0.0), c(0.7, 0.0)]);
        assert!(min_eigenvalue(&m).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rejects_non_hermitian_input() {
        let m = Operator::new(array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]).unwrap();
        assert!(hermitian_eigen(&m).is_err());
    }
}
