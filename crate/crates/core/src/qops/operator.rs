use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense square complex matrix. Carrier for Hamiltonians, Lindblad and Kraus
/// operators, density and effect matrices alike.
///
/// Entries are checked finite at construction; everything downstream may
/// assume it.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: Array2<C64>,
}

impl Operator {
    pub fn new(mat: Array2<C64>) -> Result<Self> {
        let (rows, cols) = mat.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::InvalidParameter("zero-dimensional operator".into()));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFiniteEntries);
        }
        Ok(Self { mat })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: Array2::eye(dim),
        }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut mat = Array2::zeros((diag.len(), diag.len()));
        for (i, z) in diag.iter().enumerate() {
            mat[[i, i]] = *z;
        }
        Self { mat }
    }

    /// |u><v| for kets given as coefficient slices.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        let mut mat = Array2::zeros((u.len(), v.len()));
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                mat[[i, j]] = ui * vj.conj();
            }
        }
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_array(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_array(self) -> Array2<C64> {
        self.mat
    }

    pub(crate) fn raw_mut(&mut self) -> &mut Array2<C64> {
        &mut self.mat
    }

    pub fn adjoint(&self) -> Self {
        let mut mat = Array2::zeros(self.mat.raw_dim());
        for ((i, j), z) in self.mat.indexed_iter() {
            mat[[j, i]] = z.conj();
        }
        Self { mat }
    }

    /// (A + A^dag)/2, discarding the anti-Hermitian part.
    pub fn hermitized(&self) -> Self {
        let mut mat = self.mat.clone();
        hermitize_in_place(&mut mat);
        Self { mat }
    }

    pub fn trace(&self) -> C64 {
        self.mat.diag().sum()
    }

    /// Tr(self * other) without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let d = self.dim();
        debug_assert_eq!(d, other.dim());
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                acc += self.mat[[i, j]] * other.mat[[j, i]];
            }
        }
        acc
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self {
            mat: self.mat.dot(&other.mat),
        }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            mat: self.mat.mapv(|z| z * factor),
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self {
            mat: self.mat.dot(&other.mat) - other.mat.dot(&self.mat),
        }
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        Self {
            mat: self.mat.dot(&other.mat) + other.mat.dot(&self.mat),
        }
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (da, db) = (self.dim(), other.dim());
        let mut mat = Array2::zeros((da * db, da * db));
        for ((i, j), a) in self.mat.indexed_iter() {
            for ((k, l), b) in other.mat.indexed_iter() {
                mat[[i * db + k, j * db + l]] = a * b;
            }
        }
        Self { mat }
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.mat
            .iter()
            .zip(other.mat.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Largest |A_ij - conj(A_ji)|; zero for an exactly Hermitian matrix.
    pub fn hermiticity_deviation(&self) -> f64 {
        let d = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                dev = dev.max((self.mat[[i, j]] - self.mat[[j, i]].conj()).norm());
            }
        }
        dev
    }

    pub fn check_hermitian(&self, tol: f64) -> Result<()> {
        let asymmetry = self.hermiticity_deviation();
        if asymmetry > tol {
            return Err(Error::NotHermitian { asymmetry, tol });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.mat.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

pub(crate) fn hermitize_in_place(mat: &mut Array2<C64>) {
    let d = mat.nrows();
    for i in 0..d {
        mat[[i, i]] = C64::new(mat[[i, i]].re, 0.0);
        for j in (i + 1)..d {
            let avg = 0.5 * (mat[[i, j]] + mat[[j, i]].conj());
            mat[[i, j]] = avg;
            mat[[j, i]] = avg.conj();
        }
    }
}

pub(crate) fn trace_re(mat: &Array2<C64>) -> f64 {
    (0..mat.nrows()).map(|r| mat[[r, r]].re).sum()
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.matmul(rhs)
    }
}

impl std::ops::Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scaled(C64::new(rhs, 0.0))
    }
}
