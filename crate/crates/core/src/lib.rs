//! Derivation-based noncommutative gauge field theory on direct sums of
//! matrix algebras and on single steps of AF inductive sequences, together
//! with the finite real spectral triple (Krajewski diagram) calculus for such
//! steps.
//!
//! Modules, bottom-up:
//!
//! - [`matcore`]: dense complex matrices and algebra elements
//! - [`liebasis`]: `su(n)` generators, structure constants, form pairing
//! - [`afembed`]: Bratteli steps, the embedding `φ`, adapted bases
//! - [`ncgft`]: connections, curvature, Higgs potential, mass spectra
//! - [`vacuum`]: minimization, λ-path sweeps, discontinuity detection
//! - [`krajewski`]: finite spectral triples and `φ`-compatibility
//! - [`plotdata`] and [`scenario`]: file formats used by the command line tool

pub mod afembed;
pub mod krajewski;
pub mod liebasis;
pub mod matcore;
pub mod ncgft;
pub mod plotdata;
pub mod scenario;
pub mod vacuum;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid algebra shape: {0}")]
    InvalidShape(String),
    #[error("matrix is not Hermitean")]
    NotHermitean,
    #[error("structure constant C_{a}{b}^{c} has imaginary part {im:e}")]
    ComplexStructureConstant { a: usize, b: usize, c: usize, im: f64 },
    #[error("bracket [E_{a}, E_{b}] leaves the span (residual {residual:e})")]
    NotClosed { a: usize, b: usize, residual: f64 },
    #[error("form degrees differ: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("dimension mismatch in target factor {k}: m_k = {lhs} but n_0 + Σ α n_i = {rhs}")]
    DimensionMismatch { k: usize, lhs: usize, rhs: usize },
    #[error("adapted basis of factor {k} has {got} generators, expected {want}")]
    CountMismatch { k: usize, got: usize, want: usize },
    #[error("complement candidate is linearly dependent: {0}")]
    DependentCandidate(String),
    #[error("element is not unitary (defect {0:e})")]
    NotUnitary(f64),
    #[error("negative mass squared {0:e}")]
    NegativeMassSquared(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("krajewski: {0}")]
    Krajewski(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
