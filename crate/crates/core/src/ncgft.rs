//! Connections on the scalar sector, curvature, the Higgs potential, its
//! gradient, and gauge-boson mass spectra.
//!
//! A connection is `ω = (E_β - B_β) θ^β`; only the fields `B_β` are stored.
//! With the positive metric the potential is
//! `V = ½ Σ_{β,γ} ‖Ω_{βγ}‖²_F`, `Ω_{βγ} = -([B_β, B_γ] - C_{βγ}^δ B_δ)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::afembed::{class_bases, phi_apply, AdaptedBasis, BratteliStep, LineClass};
use crate::liebasis::{FormComponents, GeneratorBasis, StructureConstants};
use crate::matcore::{eigh_real, AlgElement, CMat, C64, I};
use crate::Error;

/// Generators, structure constants and labeling data of one target factor.
#[derive(Clone, Debug)]
pub struct FieldFactor {
    pub m: usize,
    pub gens: Vec<CMat>,
    pub sc: StructureConstants,
    /// The first `n_frozen` indices are inherited.
    pub n_frozen: usize,
    /// Real basis of `u(m)`: the generators followed by `i·1/√m`.
    pub real_basis: Vec<CMat>,
    /// Class projections: for each class, the coordinates of an orthonormal
    /// class basis in terms of `gens` (rows = class vectors).
    pub classes: Vec<(LineClass, DMatrix<f64>)>,
}

impl FieldFactor {
    fn new(m: usize, gens: Vec<CMat>, n_frozen: usize, classes: Vec<(LineClass, Vec<CMat>)>) -> Result<Self, Error> {
        let sc = StructureConstants::compute(&gens)?;
        let mut real_basis = gens.clone();
        real_basis.push(CMat::identity(m).scale(I * (1.0 / (m as f64).sqrt())));
        let classes = classes
            .into_iter()
            .map(|(cls, vs)| {
                let q = DMatrix::from_fn(vs.len(), gens.len(), |r, c| vs[r].hs_inner(&gens[c]).re);
                (cls, q)
            })
            .collect();
        Ok(FieldFactor { m, gens, sc, n_frozen, real_basis, classes })
    }

    pub fn dim(&self) -> usize {
        self.gens.len()
    }

    pub fn n_free(&self) -> usize {
        self.gens.len() - self.n_frozen
    }

    /// Number of real parameters of the free fields.
    pub fn n_params(&self) -> usize {
        self.n_free() * self.m * self.m
    }

    /// `Σ_λ x_λ R_λ` over the real basis of `u(m)`.
    pub fn field_from_coeffs(&self, x: &[f64]) -> CMat {
        let mut b = CMat::zeros(self.m, self.m);
        for (c, r) in x.iter().zip(&self.real_basis) {
            if *c != 0.0 {
                b.axpy(C64::new(*c, 0.0), r);
            }
        }
        b
    }

    /// Coordinates of an anti-Hermitean matrix in the real basis of `u(m)`.
    pub fn coeffs_from_field(&self, b: &CMat) -> Vec<f64> {
        self.real_basis.iter().map(|r| b.re_inner(r)).collect()
    }
}

/// Target bases of all factors, with the frozen/free split.
#[derive(Clone, Debug)]
pub struct FieldBasis {
    pub factors: Vec<FieldFactor>,
}

impl FieldBasis {
    /// Plain basis of `⊕ M_{n_i}`: nothing frozen, every direction labeled `a^i`.
    pub fn from_generators(basis: &GeneratorBasis) -> Result<Self, Error> {
        let factors = (0..basis.shape().len())
            .map(|i| {
                let gens = basis.generators(i).to_vec();
                let classes = vec![(LineClass::A(i), gens.clone())];
                FieldFactor::new(basis.shape().dims()[i], gens, 0, classes)
            })
            .collect::<Result<_, _>>()?;
        Ok(FieldBasis { factors })
    }

    /// Adapted basis of a step: inherited indices frozen.
    pub fn from_adapted(step: &BratteliStep, adapted: &AdaptedBasis) -> Result<Self, Error> {
        let factors = adapted
            .factors
            .iter()
            .enumerate()
            .map(|(k, f)| FieldFactor::new(f.m, f.generators(), f.inherited.len(), class_bases(step, k)))
            .collect::<Result<_, _>>()?;
        Ok(FieldBasis { factors })
    }

    pub fn n_params(&self) -> usize {
        self.factors.iter().map(FieldFactor::n_params).sum()
    }
}

/// Fields `B_β` for every factor and index, with inherited ones frozen.
#[derive(Clone, Debug)]
pub struct ConnectionConfig {
    pub basis: Arc<FieldBasis>,
    pub fields: Vec<Vec<CMat>>,
}

impl ConnectionConfig {
    pub fn null(basis: Arc<FieldBasis>) -> Self {
        let fields = basis.factors.iter().map(|f| vec![CMat::zeros(f.m, f.m); f.dim()]).collect();
        ConnectionConfig { basis, fields }
    }

    /// `B_β = E_β` for every index.
    pub fn basis_config(basis: Arc<FieldBasis>) -> Self {
        let fields = basis.factors.iter().map(|f| f.gens.clone()).collect();
        ConnectionConfig { basis, fields }
    }

    /// `B_β = λ E_β` on a plain (single-factor family) basis.
    pub fn scaled_basis(basis: Arc<FieldBasis>, lambda: f64) -> Self {
        let fields = basis.factors.iter().map(|f| f.gens.iter().map(|e| e.scale_re(lambda)).collect()).collect();
        ConnectionConfig { basis, fields }
    }

    /// Maximum of `‖B + B*‖` over all fields.
    pub fn hermiticity_defect(&self) -> f64 {
        self.fields
            .iter()
            .flatten()
            .map(|b| (b + &b.adjoint()).max_abs())
            .fold(0.0, f64::max)
    }

    /// Free-field coefficients, factor by factor.
    pub fn free_coeffs(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.basis.n_params());
        for (f, fs) in self.basis.factors.iter().zip(&self.fields) {
            for b in &fs[f.n_frozen..] {
                x.extend(f.coeffs_from_field(b));
            }
        }
        x
    }

    /// Replaces the free fields from a coefficient vector.
    pub fn set_free_coeffs(&mut self, x: &[f64]) {
        let mut off = 0;
        for (f, fs) in self.basis.factors.iter().zip(self.fields.iter_mut()) {
            let w = f.m * f.m;
            for b in fs[f.n_frozen..].iter_mut() {
                *b = f.field_from_coeffs(&x[off..off + w]);
                off += w;
            }
        }
    }
}

/// Curvature components `Ω_{βγ}` for `β < γ` (degree-2 form per factor).
pub fn curvature(config: &ConnectionConfig) -> Vec<Vec<CMat>> {
    config
        .basis
        .factors
        .iter()
        .zip(&config.fields)
        .map(|(f, b)| {
            let x = bracket_defects(f, b);
            x.into_iter().map(|m| m.scale_re(-1.0)).collect()
        })
        .collect()
}

/// Curvature as a [`FormComponents`] over a plain generator basis.
pub fn curvature_form(config: &ConnectionConfig, basis: &GeneratorBasis) -> Result<FormComponents, Error> {
    FormComponents::new(basis, 2, curvature(config))
}

/// `X_{βγ} = [B_β, B_γ] - C_{βγ}^δ B_δ` for `β < γ`, in increasing pair order.
fn bracket_defects(f: &FieldFactor, b: &[CMat]) -> Vec<CMat> {
    let n = f.dim();
    let mut x = Vec::with_capacity(n * (n - 1) / 2);
    for p in 0..n {
        for q in p + 1..n {
            x.push(&(&b[p] * &b[q]) - &(&b[q] * &b[p]));
        }
    }
    for &(p, q, d, c) in f.sc.sparse() {
        x[pair_index(n, p, q)].axpy(C64::new(-c, 0.0), &b[d]);
    }
    x
}

#[inline]
fn pair_index(n: usize, p: usize, q: usize) -> usize {
    debug_assert!(p < q);
    p * (2 * n - p - 1) / 2 + (q - p - 1)
}

/// Potential split by index type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Potential {
    pub total: f64,
    pub inherited: f64,
    pub mixed: f64,
    pub new: f64,
}

/// `V = -½ Σ tr(Ω_{βγ} Ω^{βγ})`, split over frozen×frozen, frozen×free and
/// free×free index pairs.
pub fn higgs_potential(config: &ConnectionConfig) -> Potential {
    let mut v = Potential::default();
    for (f, b) in config.basis.factors.iter().zip(&config.fields) {
        let n = f.dim();
        let x = bracket_defects(f, b);
        let mut idx = 0;
        for p in 0..n {
            for q in p + 1..n {
                let s = x[idx].frob_norm_sqr();
                idx += 1;
                match (p < f.n_frozen, q < f.n_frozen) {
                    (true, true) => v.inherited += s,
                    (false, false) => v.new += s,
                    _ => v.mixed += s,
                }
            }
        }
    }
    v.total = v.inherited + v.mixed + v.new;
    v
}

/// `∂V/∂B_β` for every index (zero on frozen ones), as anti-Hermitean matrices
/// `G` with `dV = Re tr(G† dB)`.
pub fn higgs_gradient(config: &ConnectionConfig) -> Vec<Vec<CMat>> {
    config
        .basis
        .factors
        .iter()
        .zip(&config.fields)
        .map(|(f, b)| {
            let mut g = vec![CMat::zeros(f.m, f.m); f.dim()];
            let x = bracket_defects(f, b);
            accumulate_gradient(f, b, &x, &mut g);
            g
        })
        .collect()
}

fn accumulate_gradient(f: &FieldFactor, b: &[CMat], x: &[CMat], g: &mut [CMat]) {
    let n = f.dim();
    for rho in f.n_frozen..n {
        let mut acc = CMat::zeros(f.m, f.m);
        for gam in 0..n {
            if gam == rho {
                continue;
            }
            // X_{ργ} = -X_{γρ}
            let (xi, sign) = if rho < gam { (pair_index(n, rho, gam), 1.0) } else { (pair_index(n, gam, rho), -1.0) };
            let c = &(&b[gam] * &x[xi]) - &(&x[xi] * &b[gam]);
            acc.axpy(C64::new(2.0 * sign, 0.0), &c);
        }
        g[rho] = acc;
    }
    for &(p, q, d, c) in f.sc.sparse() {
        if d >= f.n_frozen {
            g[d].axpy(C64::new(-2.0 * c, 0.0), &x[pair_index(n, p, q)]);
        }
    }
}

/// Value and coefficient gradient of the potential as a function of the free
/// coefficients, for the optimizer. Frozen-frozen pairs enter as a constant.
pub struct PotentialFn<'a> {
    base: &'a ConnectionConfig,
    frozen_part: f64,
}

impl<'a> PotentialFn<'a> {
    pub fn new(base: &'a ConnectionConfig) -> Self {
        let mut frozen_part = 0.0;
        for (f, b) in base.basis.factors.iter().zip(&base.fields) {
            let k = f.n_frozen;
            for p in 0..k {
                for q in p + 1..k {
                    let mut x = &(&b[p] * &b[q]) - &(&b[q] * &b[p]);
                    for d in 0..f.dim() {
                        let c = f.sc.get(p, q, d);
                        if c != 0.0 {
                            x.axpy(C64::new(-c, 0.0), &b[d]);
                        }
                    }
                    frozen_part += x.frob_norm_sqr();
                }
            }
        }
        PotentialFn { base, frozen_part }
    }

    pub fn n_params(&self) -> usize {
        self.base.basis.n_params()
    }

    /// Returns `V(x)` and writes `∇V(x)` into `grad`.
    pub fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut v = self.frozen_part;
        let mut off = 0;
        for (f, b0) in self.base.basis.factors.iter().zip(&self.base.fields) {
            let n = f.dim();
            let w = f.m * f.m;
            let mut b: Vec<CMat> = b0[..f.n_frozen].to_vec();
            for j in 0..f.n_free() {
                b.push(f.field_from_coeffs(&x[off + j * w..off + (j + 1) * w]));
            }
            let xs = bracket_defects(f, &b);
            let mut idx = 0;
            for p in 0..n {
                for q in p + 1..n {
                    if q >= f.n_frozen {
                        v += xs[idx].frob_norm_sqr();
                    }
                    idx += 1;
                }
            }
            let mut g = vec![CMat::zeros(f.m, f.m); n];
            accumulate_gradient(f, &b, &xs, &mut g);
            for j in 0..f.n_free() {
                let gj = &g[f.n_frozen + j];
                for (l, r) in f.real_basis.iter().enumerate() {
                    grad[off + j * w + l] = gj.re_inner(r);
                }
            }
            off += f.n_free() * w;
        }
        v
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.eval(x, &mut g)
    }
}

/// Mass matrix of factor `k` over its generators (trace direction omitted,
/// it is identically massless): `M²_{l1 l2} = Σ_β Re tr([E_l1, B_β][E_l2, B_β]†)`.
pub fn mass_matrix_factor(config: &ConnectionConfig, k: usize) -> DMatrix<f64> {
    let f = &config.basis.factors[k];
    let b = &config.fields[k];
    let n = f.dim();
    let comms: Vec<Vec<CMat>> = f
        .gens
        .iter()
        .map(|e| b.iter().map(|bb| &(e * bb) - &(bb * e)).collect())
        .collect();
    let mut m2 = DMatrix::zeros(n, n);
    for l1 in 0..n {
        for l2 in l1..n {
            let s: f64 = comms[l1].iter().zip(&comms[l2]).map(|(x, y)| x.re_inner(y)).sum();
            m2[(l1, l2)] = s;
            m2[(l2, l1)] = s;
        }
    }
    m2
}

/// Block-diagonal mass matrix over all factors, each block followed by its
/// trace direction (a zero row and column).
pub fn mass_matrix(config: &ConnectionConfig) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = (0..config.basis.factors.len()).map(|k| mass_matrix_factor(config, k)).collect();
    let total: usize = blocks.iter().map(|b| b.nrows() + 1).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut off = 0;
    for b in &blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows() + 1;
    }
    out
}

/// A set of degenerate mass eigenvalues sharing one line label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassGroup {
    pub factor: usize,
    pub label: String,
    pub mass: f64,
    pub degeneracy: usize,
}

/// Labeled mass spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct MassSpectrum {
    /// All masses `√(eigenvalue)`, ascending, trace directions excluded.
    pub masses: Vec<f64>,
    pub groups: Vec<MassGroup>,
    /// One massless trace direction per factor.
    pub trace_directions: usize,
    /// Frobenius norm of the off-diagonal part of `M²` in the adapted basis.
    pub offdiag_residual: f64,
}

impl MassSpectrum {
    pub fn degeneracies(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.degeneracy).collect()
    }
}

pub const DEGENERACY_RTOL: f64 = 1e-6;
pub const LABEL_WEIGHT: f64 = 0.9;

/// Diagonalizes the mass matrix, groups degenerate eigenvalues and labels each
/// group by the line class carrying its eigenvector weight.
pub fn mass_spectrum(config: &ConnectionConfig) -> Result<MassSpectrum, Error> {
    let nfactors = config.basis.factors.len();
    let mut masses = Vec::new();
    let mut groups = Vec::new();
    let mut offdiag = 0.0;
    for k in 0..nfactors {
        let f = &config.basis.factors[k];
        let m2 = mass_matrix_factor(config, k);
        for r in 0..m2.nrows() {
            for c in 0..m2.ncols() {
                if r != c {
                    offdiag += m2[(r, c)] * m2[(r, c)];
                }
            }
        }
        let (vals, vecs) = eigh_real(&m2);
        let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for &v in &vals {
            if v < -1e-9 * scale {
                return Err(Error::NegativeMassSquared(v));
            }
        }
        let vals: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
        masses.extend(vals.iter().map(|v| v.sqrt()));

        let prefix = if nfactors > 1 { format!("{}:", k + 1) } else { String::new() };
        let mut start = 0;
        while start < vals.len() {
            let mut end = start + 1;
            while end < vals.len() && (vals[end] - vals[end - 1]).abs() <= DEGENERACY_RTOL * scale {
                end += 1;
            }
            let cluster = vecs.columns(start, end - start);
            let mean = vals[start..end].iter().sum::<f64>() / (end - start) as f64;
            let mass = mean.sqrt();
            for (label, deg) in label_cluster(f, &cluster.into_owned()) {
                groups.push(MassGroup { factor: k, label: format!("{prefix}{label}"), mass, degeneracy: deg });
            }
            start = end;
        }
    }
    masses.sort_by(f64::total_cmp);
    Ok(MassSpectrum { masses, groups, trace_directions: nfactors, offdiag_residual: offdiag.sqrt() })
}

/// Splits an eigenspace into per-class pieces when its class weights are
/// near-integers; otherwise labels eigenvectors one by one, falling back to
/// `mixed` below the weight threshold.
fn label_cluster(f: &FieldFactor, cluster: &DMatrix<f64>) -> Vec<(String, usize)> {
    let dim = cluster.ncols();
    let weights: Vec<f64> = f.classes.iter().map(|(_, q)| (q * cluster).norm_squared()).collect();
    let clean = weights.iter().all(|w| (w - w.round()).abs() <= 1.0 - LABEL_WEIGHT)
        && weights.iter().map(|w| w.round() as usize).sum::<usize>() == dim;
    let mut out: Vec<(String, usize)> = Vec::new();
    if clean {
        for ((cls, _), w) in f.classes.iter().zip(&weights) {
            let d = w.round() as usize;
            if d > 0 {
                out.push((cls.label(), d));
            }
        }
        return out;
    }
    for c in 0..dim {
        let v = cluster.column(c);
        let best = f
            .classes
            .iter()
            .map(|(cls, q)| (cls, (q * v).norm_squared()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let label = match best {
            Some((cls, w)) if w >= LABEL_WEIGHT => cls.label(),
            _ => "mixed".to_string(),
        };
        match out.iter_mut().find(|(l, _)| *l == label) {
            Some((_, d)) => *d += 1,
            None => out.push((label, 1)),
        }
    }
    out
}

/// Gauge transformation `B_β ↦ u⁻¹ B_β u` on every index.
pub fn gauge_transform(config: &ConnectionConfig, u: &AlgElement) -> Result<ConnectionConfig, Error> {
    check_unitary(config, u)?;
    let fields = config
        .fields
        .iter()
        .enumerate()
        .map(|(k, fs)| {
            let uk = u.block(k);
            let uinv = uk.adjoint();
            fs.iter().map(|b| &(&uinv * b) * uk).collect()
        })
        .collect();
    Ok(ConnectionConfig { basis: config.basis.clone(), fields })
}

fn check_unitary(config: &ConnectionConfig, u: &AlgElement) -> Result<(), Error> {
    if u.blocks().len() != config.fields.len()
        || u.blocks().iter().zip(&config.basis.factors).any(|(b, f)| b.rows() != f.m)
    {
        return Err(Error::ShapeMismatch("unitary does not match the target algebra".into()));
    }
    let defect = u.blocks().iter().map(CMat::unitarity_defect).fold(0.0, f64::max);
    if defect > 1e-10 {
        return Err(Error::NotUnitary(defect));
    }
    Ok(())
}

/// Frame matrices `U` with `u⁻¹ E_a u = U_a^b E_b`, one per factor.
pub fn frame_matrices(basis: &FieldBasis, u: &AlgElement) -> Vec<DMatrix<f64>> {
    basis
        .factors
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let uk = u.block(k);
            let uinv = uk.adjoint();
            DMatrix::from_fn(f.dim(), f.dim(), |a, b| (&(&uinv * &f.gens[a]) * uk).hs_inner(&f.gens[b]).re)
        })
        .collect()
}

/// Transport of structures by the inner automorphism of `u`:
/// `B^u_a = U_a^b u B_b u⁻¹`.
pub fn transport(config: &ConnectionConfig, u: &AlgElement) -> Result<ConnectionConfig, Error> {
    check_unitary(config, u)?;
    let frames = frame_matrices(&config.basis, u);
    let fields = config
        .fields
        .iter()
        .enumerate()
        .map(|(k, fs)| {
            let uk = u.block(k);
            let uinv = uk.adjoint();
            let conj: Vec<CMat> = fs.iter().map(|b| &(uk * b) * &uinv).collect();
            (0..fs.len())
                .map(|a| {
                    let mut acc = CMat::zeros(uk.rows(), uk.cols());
                    for (bi, cb) in conj.iter().enumerate() {
                        let w = frames[k][(a, bi)];
                        if w.abs() > 1e-15 {
                            acc.axpy(C64::new(w, 0.0), cb);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(ConnectionConfig { basis: config.basis.clone(), fields })
}

/// Connection on `𝒜` given by its fields `B^i_κ` over a plain generator basis.
pub fn config_from_algebra_fields(basis: Arc<FieldBasis>, fields: Vec<Vec<CMat>>) -> Result<ConnectionConfig, Error> {
    if fields.len() != basis.factors.len()
        || fields.iter().zip(&basis.factors).any(|(fs, f)| fs.len() != f.dim())
    {
        return Err(Error::ShapeMismatch("field count does not match the basis".into()));
    }
    Ok(ConnectionConfig { basis, fields })
}

/// Lifts an `𝒜`-configuration to `ℬ`: `B_{(i,α,κ)} = φ^i_{k,α}(B^i_κ)` frozen,
/// complement fields free and zero.
pub fn make_phi_compatible(
    step: &BratteliStep,
    adapted: &AdaptedBasis,
    target: Arc<FieldBasis>,
    config_a: &ConnectionConfig,
) -> Result<ConnectionConfig, Error> {
    if config_a.fields.len() != step.shape_a().len() {
        return Err(Error::ShapeMismatch("configuration is not over the source algebra".into()));
    }
    let mut fields = Vec::new();
    for (k, fac) in adapted.factors.iter().enumerate() {
        let mut fs = Vec::with_capacity(fac.m * fac.m - 1);
        for (idx, _) in &fac.inherited {
            fs.push(step.phi_component(k, idx.i, idx.alpha, &config_a.fields[idx.i][idx.kappa]));
        }
        for _ in &fac.complement {
            fs.push(CMat::zeros(fac.m, fac.m));
        }
        fields.push(fs);
    }
    Ok(ConnectionConfig { basis: target, fields })
}

/// Checks that the frozen fields of `config_b` are the lift of `config_a`.
pub fn is_phi_compatible(step: &BratteliStep, adapted: &AdaptedBasis, config_a: &ConnectionConfig, config_b: &ConnectionConfig, tol: f64) -> bool {
    adapted.factors.iter().enumerate().all(|(k, fac)| {
        fac.inherited.iter().enumerate().all(|(j, (idx, _))| {
            let lift = step.phi_component(k, idx.i, idx.alpha, &config_a.fields[idx.i][idx.kappa]);
            (&lift - &config_b.fields[k][j]).max_abs() <= tol
        })
    })
}

/// `φ̃(u)`: the unital lift of a unitary of `𝒜`.
pub fn lift_unitary(step: &BratteliStep, u: &AlgElement) -> Result<AlgElement, Error> {
    phi_apply(step, u, true)
}
