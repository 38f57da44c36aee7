//! Generator bases of `su(n)`, structure constants, the trace metric and the
//! pairing of forms.
//!
//! Generators are `E = iH` with `H` the generalized Gell-Mann matrices,
//! normalized so that `tr(E_a E_b†) = δ_ab`. The metric is taken positive,
//! `g_ab = tr(E_a E_b†)`, and the sign this introduces relative to
//! `g(a, b) = tr(ab)` is folded into the action formulas so that potentials and
//! masses come out non-negative.

use serde::{Deserialize, Serialize};

use crate::matcore::{AlgElement, AlgebraShape, CMat, C64, I, ZERO};
use crate::Error;

/// Hermitean generalized Gell-Mann matrices of size `n`, normalized to
/// `tr(H_a H_b) = δ_ab`: symmetric off-diagonal, antisymmetric off-diagonal,
/// then diagonal.
pub fn gell_mann(n: usize) -> Vec<CMat> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity((n * n).saturating_sub(1));
    for p in 0..n {
        for q in p + 1..n {
            let mut m = CMat::zeros(n, n);
            m[(p, q)] = C64::new(s, 0.0);
            m[(q, p)] = C64::new(s, 0.0);
            out.push(m);
        }
    }
    for p in 0..n {
        for q in p + 1..n {
            let mut m = CMat::zeros(n, n);
            m[(p, q)] = C64::new(0.0, -s);
            m[(q, p)] = C64::new(0.0, s);
            out.push(m);
        }
    }
    for l in 1..n {
        let norm = ((l * (l + 1)) as f64).sqrt();
        let mut m = CMat::zeros(n, n);
        for j in 0..l {
            m[(j, j)] = C64::new(1.0 / norm, 0.0);
        }
        m[(l, l)] = C64::new(-(l as f64) / norm, 0.0);
        out.push(m);
    }
    out
}

/// Anti-Hermitean traceless generators `E_κ = i H_κ` of `sl(n)`.
pub fn su_generators(n: usize) -> Vec<CMat> {
    gell_mann(n).iter().map(|h| h.scale(I)).collect()
}

/// Real structure constants `C_ab^c = tr([E_a, E_b] E_c†)` of an orthonormal
/// family of anti-Hermitean matrices closed under the bracket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConstants {
    dim: usize,
    dense: Vec<f64>,
    /// Nonzero entries `(a, b, c, C_ab^c)` with `a < b`.
    sparse: Vec<(usize, usize, usize, f64)>,
}

impl StructureConstants {
    /// Projects every bracket onto `gens`; fails if a constant has an imaginary
    /// part above `1e-12` or if the family is not closed.
    pub fn compute(gens: &[CMat]) -> Result<Self, Error> {
        let dim = gens.len();
        let mut dense = vec![0.0; dim * dim * dim];
        let mut sparse = Vec::new();
        for a in 0..dim {
            for b in a + 1..dim {
                let br = gens[a].commutator(&gens[b])?;
                let mut rest = br.clone();
                for (c, g) in gens.iter().enumerate() {
                    let z = br.hs_inner(g);
                    if z.im.abs() > 1e-12 {
                        return Err(Error::ComplexStructureConstant { a, b, c, im: z.im });
                    }
                    if z.re.abs() > 1e-14 {
                        dense[(a * dim + b) * dim + c] = z.re;
                        dense[(b * dim + a) * dim + c] = -z.re;
                        sparse.push((a, b, c, z.re));
                        rest.axpy(C64::new(-z.re, 0.0), g);
                    }
                }
                if rest.max_abs() > 1e-10 {
                    return Err(Error::NotClosed { a, b, residual: rest.max_abs() });
                }
            }
        }
        Ok(StructureConstants { dim, dense, sparse })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.dense[(a * self.dim + b) * self.dim + c]
    }

    pub fn sparse(&self) -> &[(usize, usize, usize, f64)] {
        &self.sparse
    }
}

/// Per-factor generators, metric and structure constants of `⊕ sl(n_i)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorBasis {
    shape: AlgebraShape,
    generators: Vec<Vec<CMat>>,
    structconst: Vec<StructureConstants>,
}

/// Builds the Gell-Mann generator basis of every factor of `shape`.
pub fn build_basis(shape: &AlgebraShape) -> GeneratorBasis {
    let generators: Vec<Vec<CMat>> = shape.dims().iter().map(|&n| su_generators(n)).collect();
    let structconst = generators
        .iter()
        .map(|g| StructureConstants::compute(g).expect("Gell-Mann basis is closed"))
        .collect();
    GeneratorBasis { shape: shape.clone(), generators, structconst }
}

impl GeneratorBasis {
    pub fn shape(&self) -> &AlgebraShape {
        &self.shape
    }

    pub fn generators(&self, i: usize) -> &[CMat] {
        &self.generators[i]
    }

    pub fn structconst(&self, i: usize) -> &StructureConstants {
        &self.structconst[i]
    }

    /// Number of generators of factor `i`, `n_i² - 1`.
    pub fn factor_dim(&self, i: usize) -> usize {
        self.generators[i].len()
    }

    /// Metric of factor `i` in this normalization: the identity.
    pub fn metric(&self, i: usize) -> Vec<Vec<f64>> {
        let d = self.factor_dim(i);
        (0..d).map(|a| (0..d).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect()
    }

    /// Generator `E^i_κ` as an element of the whole algebra.
    pub fn generator_element(&self, i: usize, kappa: usize) -> AlgElement {
        let mut blocks: Vec<CMat> = self.shape.dims().iter().map(|&n| CMat::zeros(n, n)).collect();
        blocks[i] = self.generators[i][kappa].clone();
        AlgElement::new(self.shape.clone(), blocks).expect("consistent shape")
    }
}

/// Killing form `K_{l1 l2} = Σ C_{l1 m}^κ C_{l2 m}^κ` of factor `i`, which
/// equals `2n δ` for `sl(n)` with the positive metric.
pub fn killing_check(basis: &GeneratorBasis, i: usize) -> Vec<Vec<f64>> {
    let c = basis.structconst(i);
    let d = c.dim();
    let mut k = vec![vec![0.0; d]; d];
    for l1 in 0..d {
        for l2 in 0..d {
            let mut s = 0.0;
            for m in 0..d {
                for kappa in 0..d {
                    s += c.get(l1, m, kappa) * c.get(l2, m, kappa);
                }
            }
            k[l1][l2] = s;
        }
    }
    k
}

/// Lexicographically ordered strictly increasing `p`-tuples of `0..n`.
pub fn ordered_tuples(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for k in start..n {
            cur.push(k);
            rec(k + 1, n, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if p <= n {
        rec(0, n, p, &mut Vec::new(), &mut out);
    }
    out
}

/// Components of a `p`-form: per factor, one matrix per increasing index
/// tuple (in [`ordered_tuples`] order). Antisymmetry is implied by storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormComponents {
    degree: usize,
    shape: AlgebraShape,
    components: Vec<Vec<CMat>>,
}

impl FormComponents {
    pub fn zero(basis: &GeneratorBasis, degree: usize) -> Self {
        let components = basis
            .shape()
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &n)| vec![CMat::zeros(n, n); ordered_tuples(basis.factor_dim(i), degree).len()])
            .collect();
        FormComponents { degree, shape: basis.shape().clone(), components }
    }

    pub fn new(
        basis: &GeneratorBasis,
        degree: usize,
        components: Vec<Vec<CMat>>,
    ) -> Result<Self, Error> {
        if components.len() != basis.shape().len() {
            return Err(Error::ShapeMismatch("one component list per factor expected".into()));
        }
        for (i, comps) in components.iter().enumerate() {
            let n = basis.shape().dims()[i];
            if comps.len() != ordered_tuples(basis.factor_dim(i), degree).len() {
                return Err(Error::ShapeMismatch(format!(
                    "factor {i}: {} components for degree {degree}",
                    comps.len()
                )));
            }
            if comps.iter().any(|c| c.rows() != n || c.cols() != n) {
                return Err(Error::ShapeMismatch(format!("factor {i}: component not {n}x{n}")));
            }
        }
        Ok(FormComponents { degree, shape: basis.shape().clone(), components })
    }

    /// The form `a θ^κ` on factor `i` (degree 1).
    pub fn one_form(basis: &GeneratorBasis, i: usize, kappa: usize, a: CMat) -> Self {
        let mut f = Self::zero(basis, 1);
        f.components[i][kappa] = a;
        f
    }

    /// Degree-0 form given by an algebra element.
    pub fn scalar(basis: &GeneratorBasis, a: &AlgElement) -> Self {
        FormComponents {
            degree: 0,
            shape: basis.shape().clone(),
            components: a.blocks().iter().map(|b| vec![b.clone()]).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn shape(&self) -> &AlgebraShape {
        &self.shape
    }

    pub fn components(&self, i: usize) -> &[CMat] {
        &self.components[i]
    }

    pub fn components_mut(&mut self, i: usize) -> &mut [CMat] {
        &mut self.components[i]
    }
}

/// `(ω, ω') = ∫ ω ∧ ⋆ω' = Σ_i (1/p!) Σ_κ tr(ω^i_κ ω'^{i,κ})`, indices raised
/// with the identity metric. Only increasing tuples are stored, which absorbs
/// the `1/p!`.
pub fn form_pairing(
    omega: &FormComponents,
    omega2: &FormComponents,
    basis: &GeneratorBasis,
) -> Result<C64, Error> {
    if omega.degree != omega2.degree {
        return Err(Error::DegreeMismatch(omega.degree, omega2.degree));
    }
    if omega.shape != *basis.shape() || omega2.shape != *basis.shape() {
        return Err(Error::ShapeMismatch("form does not live on this basis".into()));
    }
    let mut total = ZERO;
    for (a, b) in omega.components.iter().zip(&omega2.components) {
        for (x, y) in a.iter().zip(b) {
            total += (x * y).trace();
        }
    }
    Ok(total)
}

/// Frame matrix `U` of the inner automorphism `u`: `u⁻¹ E_a u = U_a^b E_b`,
/// returned per factor as a real orthogonal matrix (row `a`, column `b`).
pub fn frame_transport(basis: &GeneratorBasis, u: &AlgElement) -> Result<Vec<Vec<Vec<f64>>>, Error> {
    if u.shape() != basis.shape() {
        return Err(Error::ShapeMismatch("unitary over another algebra".into()));
    }
    let mut out = Vec::with_capacity(basis.shape().len());
    for i in 0..basis.shape().len() {
        let ui = u.block(i);
        let uinv = ui.adjoint();
        let gens = basis.generators(i);
        let mut m = vec![vec![0.0; gens.len()]; gens.len()];
        for (a, ea) in gens.iter().enumerate() {
            let t = &(&uinv * ea) * ui;
            for (b, eb) in gens.iter().enumerate() {
                m[a][b] = t.hs_inner(eb).re;
            }
        }
        out.push(m);
    }
    Ok(out)
}

fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut d = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap_or(c);
        if a[piv][c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap(piv, c);
            d = -d;
        }
        d *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    d
}

/// Transport of a form by the inner automorphism `u`:
/// `ω^u(∂_{a1},…) = u⁻¹ ω(Ψ(∂_{a1}),…) u` with `Ψ(∂_a) = U_a^b ∂_b`.
pub fn transport_form(
    omega: &FormComponents,
    basis: &GeneratorBasis,
    u: &AlgElement,
) -> Result<FormComponents, Error> {
    let frames = frame_transport(basis, u)?;
    let p = omega.degree;
    let mut out = FormComponents::zero(basis, p);
    for i in 0..basis.shape().len() {
        let tuples = ordered_tuples(basis.factor_dim(i), p);
        let ui = u.block(i);
        let uinv = ui.adjoint();
        let conj: Vec<CMat> = omega.components[i].iter().map(|w| &(&uinv * w) * ui).collect();
        for (kk, k) in tuples.iter().enumerate() {
            let mut acc = CMat::zeros(ui.rows(), ui.cols());
            for (ll, l) in tuples.iter().enumerate() {
                let minor: Vec<Vec<f64>> =
                    k.iter().map(|&a| l.iter().map(|&b| frames[i][a][b]).collect()).collect();
                let m = det(minor);
                if m.abs() > 1e-15 {
                    acc.axpy(C64::new(m, 0.0), &conj[ll]);
                }
            }
            out.components[i][kk] = acc;
        }
    }
    Ok(out)
}

/// Volume form of factor `i` with coefficient `a` (degree `n_i² - 1`); other
/// factors carry no component of that degree unless they have the same dimension.
pub fn volume_form(basis: &GeneratorBasis, i: usize, a: CMat) -> FormComponents {
    let p = basis.factor_dim(i);
    let mut f = FormComponents::zero(basis, p);
    f.components[i][0] = a;
    f
}

/// `∫ ω` of a top form on a single factor: the trace of its coefficient.
pub fn integrate_top(omega: &FormComponents, i: usize) -> C64 {
    omega.components[i].first().map(CMat::trace).unwrap_or(ZERO)
}

/// The unit form `1` of degree 0.
pub fn unit_scalar(basis: &GeneratorBasis) -> FormComponents {
    FormComponents::scalar(basis, &AlgElement::unit(basis.shape()))
}
