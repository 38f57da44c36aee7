//! One step `φ : ⊕ M_{n_i} → ⊕ M_{m_k}` of an AF inductive sequence.
//!
//! Copies of `M_{n_i}` sit on the diagonal of `M_{m_k}` in standard form:
//! by increasing `i`, then copy index `α`, with the slack block of size
//! `n_{0,k}` last.

use serde::{Deserialize, Serialize};

use crate::liebasis::{su_generators, GeneratorBasis};
use crate::matcore::{AlgElement, AlgebraShape, CMat, C64, I, ONE};
use crate::Error;

/// Position of one copy of `M_{n_i}` inside `M_{m_k}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCopy {
    pub i: usize,
    pub alpha: usize,
    pub offset: usize,
    pub size: usize,
}

/// Multiplicity data and standard-form offsets of an embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct BratteliStep {
    shape_a: AlgebraShape,
    shape_b: AlgebraShape,
    mult: Vec<Vec<usize>>,
    slack: Vec<usize>,
    copies: Vec<Vec<BlockCopy>>,
}

/// On-disk form of a step. `mult` may be nested rows or a flat row-major list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepFile {
    #[serde(rename = "shapeA")]
    pub shape_a: Vec<usize>,
    #[serde(rename = "shapeB")]
    pub shape_b: Vec<usize>,
    pub mult: MultEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MultEntry {
    Rows(Vec<Vec<usize>>),
    Flat(Vec<usize>),
}

impl BratteliStep {
    /// Builds and validates a step. When `slack` is `None` it is derived from
    /// the dimension identity.
    pub fn new(
        shape_a: AlgebraShape,
        shape_b: AlgebraShape,
        mult: Vec<Vec<usize>>,
        slack: Option<Vec<usize>>,
    ) -> Result<Self, Error> {
        let (s, r) = (shape_b.len(), shape_a.len());
        if mult.len() != s || mult.iter().any(|row| row.len() != r) {
            return Err(Error::ShapeMismatch(format!("multiplicity matrix must be {s}x{r}")));
        }
        let slack = match slack {
            Some(v) => {
                if v.len() != s {
                    return Err(Error::ShapeMismatch(format!("{} slack entries for {s} factors", v.len())));
                }
                v
            }
            None => (0..s)
                .map(|k| {
                    let used: usize = (0..r).map(|i| mult[k][i] * shape_a.dims()[i]).sum();
                    shape_b.dims()[k].saturating_sub(used)
                })
                .collect(),
        };
        let copies = (0..s)
            .map(|k| {
                let mut off = 0;
                let mut v = Vec::new();
                for i in 0..r {
                    for alpha in 0..mult[k][i] {
                        let size = shape_a.dims()[i];
                        v.push(BlockCopy { i, alpha, offset: off, size });
                        off += size;
                    }
                }
                v
            })
            .collect();
        let step = BratteliStep { shape_a, shape_b, mult, slack, copies };
        validate_step(&step)?;
        Ok(step)
    }

    pub fn from_file(f: &StepFile) -> Result<Self, Error> {
        let shape_a = AlgebraShape::new(f.shape_a.clone())?;
        let shape_b = AlgebraShape::new(f.shape_b.clone())?;
        let (s, r) = (shape_b.len(), shape_a.len());
        let mult = match &f.mult {
            MultEntry::Rows(rows) => rows.clone(),
            MultEntry::Flat(flat) => {
                if flat.len() != s * r {
                    return Err(Error::ShapeMismatch(format!(
                        "flat multiplicity list of length {} for a {s}x{r} matrix",
                        flat.len()
                    )));
                }
                flat.chunks(r).map(<[usize]>::to_vec).collect()
            }
        };
        Self::new(shape_a, shape_b, mult, f.slack.clone())
    }

    pub fn to_file(&self) -> StepFile {
        StepFile {
            shape_a: self.shape_a.dims().to_vec(),
            shape_b: self.shape_b.dims().to_vec(),
            mult: MultEntry::Rows(self.mult.clone()),
            slack: Some(self.slack.clone()),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, Error> {
        let f: StepFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(&f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("step serializes")
    }

    /// Single-factor step `⊕ M_{n_i} → M_m` with multiplicities `mult`.
    pub fn simple(dims_a: &[usize], mult: &[usize], m: usize) -> Result<Self, Error> {
        Self::new(
            AlgebraShape::new(dims_a.to_vec())?,
            AlgebraShape::new(vec![m])?,
            vec![mult.to_vec()],
            None,
        )
    }

    pub fn shape_a(&self) -> &AlgebraShape {
        &self.shape_a
    }

    pub fn shape_b(&self) -> &AlgebraShape {
        &self.shape_b
    }

    pub fn mult(&self) -> &[Vec<usize>] {
        &self.mult
    }

    pub fn slack(&self, k: usize) -> usize {
        self.slack[k]
    }

    pub fn copies(&self, k: usize) -> &[BlockCopy] {
        &self.copies[k]
    }

    /// Size of the enveloping square in `M_{m_k}` (everything but the slack).
    pub fn enveloping_dim(&self, k: usize) -> usize {
        self.shape_b.dims()[k] - self.slack[k]
    }

    /// `φ^i_{k,α}(x)`: `x` placed on copy `α` of factor `i` in `M_{m_k}`.
    pub fn phi_component(&self, k: usize, i: usize, alpha: usize, x: &CMat) -> CMat {
        let m = self.shape_b.dims()[k];
        let c = self.copies[k]
            .iter()
            .find(|c| c.i == i && c.alpha == alpha)
            .expect("copy exists");
        let mut out = CMat::zeros(m, m);
        out.set_block(c.offset, c.offset, x);
        out
    }

    /// Projector `p_{n0,k} = 1 - φ_k(1)` onto the slack block.
    pub fn slack_projector(&self, k: usize) -> CMat {
        let m = self.shape_b.dims()[k];
        let e = self.enveloping_dim(k);
        CMat::from_fn(m, m, |r, c| if r == c && r >= e { ONE } else { C64::new(0.0, 0.0) })
    }

    /// Row ranges in `M_{m_k}` of the enveloping block of each factor present
    /// in that target factor, followed by the slack (region index `None`).
    fn regions(&self, k: usize) -> Vec<(Option<usize>, usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for i in 0..self.shape_a.len() {
            let len = self.mult[k][i] * self.shape_a.dims()[i];
            if len > 0 {
                out.push((Some(i), off, len));
            }
            off += len;
        }
        if self.slack[k] > 0 {
            out.push((None, off, self.slack[k]));
        }
        out
    }

    /// For each row of `M_{m_k}`, the copy it belongs to (or `None` for slack).
    pub fn row_owner(&self, k: usize) -> Vec<Option<BlockCopy>> {
        let m = self.shape_b.dims()[k];
        let mut own = vec![None; m];
        for c in &self.copies[k] {
            for r in c.offset..c.offset + c.size {
                own[r] = Some(*c);
            }
        }
        own
    }
}

/// Checks `m_k = n_{0,k} + Σ_i α_{ki} n_i` for every `k`.
pub fn validate_step(step: &BratteliStep) -> Result<(), Error> {
    for k in 0..step.shape_b.len() {
        let rhs: usize = step.slack[k]
            + (0..step.shape_a.len())
                .map(|i| step.mult[k][i] * step.shape_a.dims()[i])
                .sum::<usize>();
        let lhs = step.shape_b.dims()[k];
        if lhs != rhs {
            return Err(Error::DimensionMismatch { k, lhs, rhs });
        }
    }
    Ok(())
}

/// `φ(a)` in standard form. With `unital_lift` the slack block is set to the
/// identity, which maps unitaries of `𝒜` to unitaries of `ℬ`.
pub fn phi_apply(step: &BratteliStep, a: &AlgElement, unital_lift: bool) -> Result<AlgElement, Error> {
    if a.shape() != &step.shape_a {
        return Err(Error::ShapeMismatch(format!(
            "element of {:?} applied to a step from {:?}",
            a.shape().dims(),
            step.shape_a.dims()
        )));
    }
    let blocks = (0..step.shape_b.len())
        .map(|k| {
            let m = step.shape_b.dims()[k];
            let mut out = CMat::zeros(m, m);
            for c in &step.copies[k] {
                out.set_block(c.offset, c.offset, a.block(c.i));
            }
            if unital_lift {
                for r in step.enveloping_dim(k)..m {
                    out[(r, r)] = ONE;
                }
            }
            out
        })
        .collect();
    AlgElement::new(step.shape_b.clone(), blocks)
}

/// `K_0` pushforward: multiplication by the multiplicity matrix.
pub fn k0_push(step: &BratteliStep, v: &[i64]) -> Result<Vec<i64>, Error> {
    if v.len() != step.shape_a.len() {
        return Err(Error::ShapeMismatch(format!(
            "K0 vector of length {} for {} factors",
            v.len(),
            step.shape_a.len()
        )));
    }
    Ok(step
        .mult
        .iter()
        .map(|row| row.iter().zip(v).map(|(&a, &x)| a as i64 * x).sum())
        .collect())
}

/// The composite step `𝒜 → 𝒞` of `first: 𝒜 → ℬ` and `second: ℬ → 𝒞`.
pub fn compose(first: &BratteliStep, second: &BratteliStep) -> Result<BratteliStep, Error> {
    if first.shape_b != second.shape_a {
        return Err(Error::ShapeMismatch("steps do not chain".into()));
    }
    let (s, t, r) = (second.shape_b.len(), second.shape_a.len(), first.shape_a.len());
    let mult = (0..s)
        .map(|k| (0..r).map(|i| (0..t).map(|j| second.mult[k][j] * first.mult[j][i]).sum()).collect())
        .collect();
    BratteliStep::new(first.shape_a.clone(), second.shape_b.clone(), mult, None)
}

/// Which of the five complementary families a complement generator came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// `sl(n_0)` inside the slack block.
    Slack,
    /// Entries outside every enveloping block.
    OutsideEnveloping,
    /// Entries between distinct copies inside one enveloping block.
    BetweenCopies,
    /// `E_i^α - E_i^{α+1}`.
    CopyDifference,
    /// `n_{i+1} E_i^1 - n_i E_{i+1}^1`.
    CrossDiagonal,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Slack,
        Family::OutsideEnveloping,
        Family::BetweenCopies,
        Family::CopyDifference,
        Family::CrossDiagonal,
    ];
}

/// Index `β = (i, α, κ)` of an inherited generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InheritedIndex {
    pub i: usize,
    pub alpha: usize,
    pub kappa: usize,
}

/// Adapted basis of `sl(m_k)` for one target factor.
#[derive(Clone, Debug)]
pub struct AdaptedFactor {
    pub m: usize,
    pub inherited: Vec<(InheritedIndex, CMat)>,
    pub complement: Vec<(Family, CMat)>,
}

impl AdaptedFactor {
    /// Inherited generators followed by the complement.
    pub fn generators(&self) -> Vec<CMat> {
        self.inherited
            .iter()
            .map(|(_, e)| e.clone())
            .chain(self.complement.iter().map(|(_, e)| e.clone()))
            .collect()
    }

    pub fn family_sizes(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for (f, _) in &self.complement {
            out[Family::ALL.iter().position(|g| g == f).expect("known family")] += 1;
        }
        out
    }
}

/// Inherited/complement split of `Der(ℬ)` for every target factor.
#[derive(Clone, Debug)]
pub struct AdaptedBasis {
    pub factors: Vec<AdaptedFactor>,
}

fn offdiag_pair(m: usize, p: usize, q: usize) -> [CMat; 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut sym = CMat::zeros(m, m);
    sym[(p, q)] = C64::new(0.0, s);
    sym[(q, p)] = C64::new(0.0, s);
    let mut anti = CMat::zeros(m, m);
    anti[(p, q)] = C64::new(s, 0.0);
    anti[(q, p)] = C64::new(-s, 0.0);
    [sym, anti]
}

/// Builds the adapted basis: lifted generators `φ^i_{k,α}(E^i_κ)`, then the
/// five complementary families in order, Gram-Schmidt orthonormalized.
pub fn adapted_basis(step: &BratteliStep, basis_a: &GeneratorBasis) -> Result<AdaptedBasis, Error> {
    if basis_a.shape() != step.shape_a() {
        return Err(Error::ShapeMismatch("generator basis is not over the source algebra".into()));
    }
    let mut factors = Vec::new();
    for k in 0..step.shape_b().len() {
        let m = step.shape_b().dims()[k];
        let n0 = step.slack(k);
        let env = step.enveloping_dim(k);
        let owner = step.row_owner(k);

        let mut inherited = Vec::new();
        for c in step.copies(k) {
            for (kappa, e) in basis_a.generators(c.i).iter().enumerate() {
                inherited.push((
                    InheritedIndex { i: c.i, alpha: c.alpha, kappa },
                    step.phi_component(k, c.i, c.alpha, e),
                ));
            }
        }

        let mut candidates: Vec<(Family, CMat)> = Vec::new();
        for e in su_generators(n0) {
            let mut big = CMat::zeros(m, m);
            big.set_block(env, env, &e);
            candidates.push((Family::Slack, big));
        }
        let regions = step.regions(k);
        let region_of = |p: usize| regions.iter().position(|&(_, o, l)| p >= o && p < o + l);
        for p in 0..m {
            for q in p + 1..m {
                if region_of(p) != region_of(q) {
                    for e in offdiag_pair(m, p, q) {
                        candidates.push((Family::OutsideEnveloping, e));
                    }
                }
            }
        }
        for p in 0..env {
            for q in p + 1..env {
                let (a, b) = (owner[p].expect("enveloping row"), owner[q].expect("enveloping row"));
                if a.i == b.i && a.alpha != b.alpha {
                    for e in offdiag_pair(m, p, q) {
                        candidates.push((Family::BetweenCopies, e));
                    }
                }
            }
        }
        let projector = |offset: usize, size: usize| {
            CMat::from_fn(m, m, |r, c| {
                if r == c && r >= offset && r < offset + size {
                    ONE
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        };
        for i in 0..step.shape_a().len() {
            let cs: Vec<&BlockCopy> = step.copies(k).iter().filter(|c| c.i == i).collect();
            for w in cs.windows(2) {
                let d = &projector(w[0].offset, w[0].size) - &projector(w[1].offset, w[1].size);
                candidates.push((Family::CopyDifference, d.scale(I)));
            }
        }
        // Chain factors 1..r present in this target factor, slack last, so
        // that after orthogonalization the slack link is the single
        // enveloping-vs-slack diagonal.
        let mut chain: Vec<(usize, CMat)> = Vec::new();
        for i in 0..step.shape_a().len() {
            if let Some(c) = step.copies(k).iter().find(|c| c.i == i) {
                chain.push((c.size, projector(c.offset, c.size)));
            }
        }
        if n0 > 0 {
            chain.push((n0, projector(env, n0)));
        }
        for w in chain.windows(2) {
            let (ni, ref ei) = w[0];
            let (nj, ref ej) = w[1];
            let d = &ei.scale_re(nj as f64) - &ej.scale_re(ni as f64);
            candidates.push((Family::CrossDiagonal, d.scale(I)));
        }

        let mut accepted: Vec<CMat> = inherited.iter().map(|(_, e)| e.clone()).collect();
        let mut complement = Vec::new();
        for (fam, c) in candidates {
            let mut v = c;
            if fam != Family::Slack {
                for b in &accepted {
                    let z = v.hs_inner(b);
                    v.axpy(-z, b);
                }
            }
            let nrm = v.frob_norm();
            if nrm < 1e-10 {
                return Err(Error::DependentCandidate(format!("{fam:?} in factor {k}")));
            }
            let v = v.scale_re(1.0 / nrm);
            accepted.push(v.clone());
            complement.push((fam, v));
        }
        if accepted.len() != m * m - 1 {
            return Err(Error::CountMismatch { k, got: accepted.len(), want: m * m - 1 });
        }
        factors.push(AdaptedFactor { m, inherited, complement });
    }
    Ok(AdaptedBasis { factors })
}

/// Closed-form family sizes `(F1, …, F5)` for target factor `k`.
pub fn family_count_formula(step: &BratteliStep, k: usize) -> [usize; 5] {
    let n0 = step.slack(k);
    let m = step.shape_b().dims()[k];
    let dims = step.shape_a().dims();
    let mult = &step.mult()[k];
    let f1 = if n0 > 0 { n0 * n0 - 1 } else { 0 };
    let env_sq: usize = (0..dims.len()).map(|i| (mult[i] * dims[i]).pow(2)).sum();
    let f2 = m * m - env_sq - n0 * n0;
    let f3: usize = (0..dims.len()).map(|i| mult[i] * mult[i].saturating_sub(1) * dims[i] * dims[i]).sum();
    let f4: usize = mult.iter().map(|&a| a.saturating_sub(1)).sum();
    let present = mult.iter().filter(|&&a| a > 0).count() + usize::from(n0 > 0);
    let f5 = present.saturating_sub(1);
    [f1, f2, f3, f4, f5]
}

/// Gauge-line classes used to label mass eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineClass {
    /// Inside a copy of `M_{n_i}`.
    A(usize),
    /// Off-diagonal inside the enveloping square, between distinct copies.
    B,
    /// Between the slack rows and the rows of copies of `M_{n_i}`.
    C(usize),
    /// Diagonal, constant on each copy, zero on the slack, traceless.
    D,
    /// Constant on the enveloping square plus everything inside the slack block.
    E,
}

impl LineClass {
    pub fn label(&self) -> String {
        match self {
            LineClass::A(i) => format!("a{}", i + 1),
            LineClass::B => "b".into(),
            LineClass::C(i) => format!("c{}", i + 1),
            LineClass::D => "d".into(),
            LineClass::E => "e".into(),
        }
    }
}

/// Orthonormal bases of `sl(m_k)` split by [`LineClass`]; the classes are
/// mutually orthogonal and together span `sl(m_k)`.
pub fn class_bases(step: &BratteliStep, k: usize) -> Vec<(LineClass, Vec<CMat>)> {
    let m = step.shape_b().dims()[k];
    let env = step.enveloping_dim(k);
    let n0 = step.slack(k);
    let owner = step.row_owner(k);
    let mut out: Vec<(LineClass, Vec<CMat>)> = Vec::new();
    let mut push = |cls: LineClass, e: CMat| match out.iter_mut().find(|(c, _)| *c == cls) {
        Some((_, v)) => v.push(e),
        None => out.push((cls, vec![e])),
    };

    for c in step.copies(k) {
        for e in su_generators(c.size) {
            let mut big = CMat::zeros(m, m);
            big.set_block(c.offset, c.offset, &e);
            push(LineClass::A(c.i), big);
        }
    }
    for p in 0..m {
        for q in p + 1..m {
            let cls = match (owner[p], owner[q]) {
                (Some(a), Some(b)) if a == b => continue,
                (Some(_), Some(_)) => LineClass::B,
                (Some(a), None) => LineClass::C(a.i),
                (None, Some(b)) => LineClass::C(b.i),
                (None, None) => LineClass::E,
            };
            for e in offdiag_pair(m, p, q) {
                push(cls, e);
            }
        }
    }
    // Diagonal directions constant on each copy: orthonormalize copy projectors
    // against the enveloping identity.
    let copies = step.copies(k);
    if copies.len() > 1 {
        let proj = |c: &BlockCopy| {
            CMat::from_fn(m, m, |r, s| {
                if r == s && r >= c.offset && r < c.offset + c.size {
                    I
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        };
        let env_id = CMat::from_fn(m, m, |r, s| if r == s && r < env { I } else { C64::new(0.0, 0.0) });
        let mut acc = vec![env_id.scale_re(1.0 / (env as f64).sqrt())];
        for c in copies.iter().take(copies.len() - 1) {
            let mut v = proj(c);
            for b in &acc {
                let z = v.hs_inner(b);
                v.axpy(-z, b);
            }
            let v = v.scale_re(1.0 / v.frob_norm());
            acc.push(v.clone());
            push(LineClass::D, v);
        }
    }
    if n0 > 0 {
        let w = C64::new(0.0, 1.0 / ((m * env * n0) as f64).sqrt());
        let d: Vec<C64> = (0..m).map(|r| if r < env { w * n0 as f64 } else { -w * env as f64 }).collect();
        if env > 0 {
            push(LineClass::E, CMat::diag(&d));
        }
        let gens = su_generators(n0);
        let diag_start = n0 * (n0 - 1);
        for e in gens.into_iter().skip(diag_start) {
            let mut big = CMat::zeros(m, m);
            big.set_block(env, env, &e);
            push(LineClass::E, big);
        }
    }
    out
}
