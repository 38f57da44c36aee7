//! Dense complex matrices and elements of direct sums of matrix algebras.
//!
//! Everything in the crate is small (the largest factor in the experiments is
//! `M_5`), so matrices are stored densely in row-major order and no effort is
//! made to exploit sparsity.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Error;

pub type C64 = num_complex::Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  [")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, " {:+.4}{:+.4}i", z.re, z.im)?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CMat { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, Error> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &z) in d.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Entries with real and imaginary parts uniform in `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn try_mul(&self, other: &CMat) -> Result<CMat, Error> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_re(&self, s: f64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: C64, other: &CMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (d, o) in self.data.iter_mut().zip(&other.data) {
            *d += s * o;
        }
    }

    /// Commutator `ab - ba`.
    pub fn commutator(&self, other: &CMat) -> Result<CMat, Error> {
        if !self.is_square() || (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::ShapeMismatch(format!(
                "commutator of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(&(self * other) - &(other * self))
    }

    /// Hilbert-Schmidt inner product `tr(self · other†)`.
    pub fn hs_inner(&self, other: &CMat) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum()
    }

    /// `Re tr(self · other†)`, the real inner product on matrices seen as real vectors.
    pub fn re_inner(&self, other: &CMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    pub fn frob_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Copy of the rectangular block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |r, c| self[(r0 + r, c0 + c)])
    }

    /// Writes `b` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMat) {
        for r in 0..b.rows {
            for c in 0..b.cols {
                self[(r0 + r, c0 + c)] = b[(r, c)];
            }
        }
    }

    pub fn kron(&self, other: &CMat) -> CMat {
        CMat::from_fn(self.rows * other.rows, self.cols * other.cols, |r, c| {
            self[(r / other.rows, c / other.cols)] * other[(r % other.rows, c % other.cols)]
        })
    }

    pub fn is_hermitean(&self, tol: f64) -> bool {
        self.is_square() && (self - &self.adjoint()).max_abs() <= tol
    }

    pub fn is_anti_hermitean(&self, tol: f64) -> bool {
        self.is_square() && (self + &self.adjoint()).max_abs() <= tol
    }

    /// Distance of `self · self†` from the identity, in max-entry norm.
    pub fn unitarity_defect(&self) -> f64 {
        (&(self * &self.adjoint()) - &CMat::identity(self.rows)).max_abs()
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self[(r, c)])
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> CMat {
        CMat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        self.try_mul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &CMat {
    type Output = CMat;
    fn neg(self) -> CMat {
        self.scale_re(-1.0)
    }
}

impl AddAssign<&CMat> for CMat {
    fn add_assign(&mut self, rhs: &CMat) {
        self.axpy(ONE, rhs);
    }
}

impl SubAssign<&CMat> for CMat {
    fn sub_assign(&mut self, rhs: &CMat) {
        self.axpy(-ONE, rhs);
    }
}

/// Ascending eigenvalues and orthonormal eigenvectors (as columns) of a Hermitean matrix.
pub fn eigh(h: &CMat) -> Result<(Vec<f64>, CMat), Error> {
    if !h.is_square() {
        return Err(Error::ShapeMismatch(format!("eigh of {}x{}", h.rows, h.cols)));
    }
    let scale = h.max_abs().max(1.0);
    if !h.is_hermitean(1e-10 * scale) {
        return Err(Error::NotHermitean);
    }
    let sym = (&h.to_nalgebra() + h.to_nalgebra().adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..h.rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(h.rows, h.rows, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Ascending eigenvalues and orthonormal eigenvectors (columns) of a real symmetric matrix.
pub fn eigh_real(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Random unitary `exp(2iH)` for a random Hermitean `H`.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let a = CMat::random(n, n, rng);
    let h = (&a + &a.adjoint()).scale_re(0.5);
    let (vals, vecs) = eigh(&h).expect("random Hermitean matrix");
    let phases: Vec<C64> = vals.iter().map(|&t| C64::from_polar(1.0, 2.0 * t)).collect();
    &(&vecs * &CMat::diag(&phases)) * &vecs.adjoint()
}

/// Ordered list of factor sizes of `⊕ M_{n_i}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlgebraShape {
    dims: Vec<usize>,
}

impl AlgebraShape {
    pub fn new(dims: Vec<usize>) -> Result<Self, Error> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("an algebra needs at least one factor".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero-sized factor in {dims:?}")));
        }
        Ok(AlgebraShape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }
}

/// Element `a = ⊕ a_i` of a direct sum of matrix algebras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgElement {
    shape: AlgebraShape,
    blocks: Vec<CMat>,
}

impl AlgElement {
    pub fn new(shape: AlgebraShape, blocks: Vec<CMat>) -> Result<Self, Error> {
        if blocks.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks for {} factors",
                blocks.len(),
                shape.len()
            )));
        }
        for (b, &n) in blocks.iter().zip(shape.dims()) {
            if b.rows() != n || b.cols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "block {}x{} in factor of size {n}",
                    b.rows(),
                    b.cols()
                )));
            }
        }
        Ok(AlgElement { shape, blocks })
    }

    pub fn zero(shape: &AlgebraShape) -> Self {
        let blocks = shape.dims().iter().map(|&n| CMat::zeros(n, n)).collect();
        AlgElement { shape: shape.clone(), blocks }
    }

    pub fn unit(shape: &AlgebraShape) -> Self {
        let blocks = shape.dims().iter().map(|&n| CMat::identity(n)).collect();
        AlgElement { shape: shape.clone(), blocks }
    }

    pub fn random<R: Rng + ?Sized>(shape: &AlgebraShape, rng: &mut R) -> Self {
        let blocks = shape.dims().iter().map(|&n| CMat::random(n, n, rng)).collect();
        AlgElement { shape: shape.clone(), blocks }
    }

    pub fn random_unitary<R: Rng + ?Sized>(shape: &AlgebraShape, rng: &mut R) -> Self {
        let blocks = shape.dims().iter().map(|&n| random_unitary(n, rng)).collect();
        AlgElement { shape: shape.clone(), blocks }
    }

    pub fn shape(&self) -> &AlgebraShape {
        &self.shape
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &CMat {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<CMat> {
        self.blocks
    }

    fn check_same_shape(&self, other: &AlgElement) -> Result<(), Error> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &AlgElement,
        f: impl Fn(&CMat, &CMat) -> CMat,
    ) -> Result<AlgElement, Error> {
        self.check_same_shape(other)?;
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| f(a, b)).collect();
        Ok(AlgElement { shape: self.shape.clone(), blocks })
    }

    pub fn add(&self, other: &AlgElement) -> Result<AlgElement, Error> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &AlgElement) -> Result<AlgElement, Error> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> AlgElement {
        AlgElement { shape: self.shape.clone(), blocks: self.blocks.iter().map(|b| b.scale(s)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(CMat::max_abs).fold(0.0, f64::max)
    }
}

/// Blockwise product.
pub fn alg_mul(a: &AlgElement, b: &AlgElement) -> Result<AlgElement, Error> {
    a.zip_with(b, |x, y| x * y)
}

/// Blockwise conjugate transpose.
pub fn alg_adjoint(a: &AlgElement) -> AlgElement {
    AlgElement { shape: a.shape.clone(), blocks: a.blocks.iter().map(CMat::adjoint).collect() }
}

/// Sum of the blockwise traces.
pub fn alg_trace(a: &AlgElement) -> C64 {
    a.blocks.iter().map(CMat::trace).sum()
}

/// Blockwise commutator `ab - ba`.
pub fn commutator(a: &AlgElement, b: &AlgElement) -> Result<AlgElement, Error> {
    a.zip_with(b, |x, y| &(x * y) - &(y * x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kron_of_identities_is_identity() {
        let k = CMat::identity(2).kron(&CMat::identity(3));
        assert_eq!(k, CMat::identity(6));
    }

    #[test]
    fn eigh_sorts_ascending_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = CMat::random(4, 4, &mut rng);
        let h = &a + &a.adjoint();
        let (vals, vecs) = eigh(&h).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMat::diag(&vals.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());
        let back = &(&vecs * &d) * &vecs.adjoint();
        assert!((&back - &h).max_abs() < 1e-12);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_unitary(5, &mut rng);
        assert!(u.unitarity_defect() < 1e-12);
    }

    #[test]
    fn eigh_rejects_non_hermitean() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = ONE;
        assert!(matches!(eigh(&m), Err(Error::NotHermitean)));
    }
}
