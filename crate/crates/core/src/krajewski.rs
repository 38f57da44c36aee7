//! Finite real spectral triples encoded as Krajewski diagrams, and the lift
//! `φ_H` of a Bratteli step to a map between their Hilbert spaces.
//!
//! A vector of `H_v = C^{n_i} ⊗ C^{n_j°}` is stored as an `n_i × n_j` matrix
//! `ψ`, vectorized row-major, so `ξ ⊗ η°` is `ξ ηᵀ`. The algebra acts on the
//! left (`a ψ`), the opposite algebra on the right (`ψ b`), `J_0` is entrywise
//! conjugation and the flip `ψ_v ↦ ψ_vᵀ` maps `H_v` to `H_{𝔍(v)}`. With these
//! conventions `J ψ_v = ε(v,d) ψ_v^†` placed in the slot of `𝔍(v)`.
//!
//! Antilinear operators are represented as `K ∘ conj` and only `K` is stored.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::afembed::{BratteliStep, StepFile};
use crate::matcore::{eigh, eigh_real, AlgElement, AlgebraShape, CMat, C64, ONE, ZERO};
use crate::Error;

/// Residual below which compatibility relations are considered to hold.
pub const COMPAT_TOL: f64 = 1e-10;

/// Blocks with Frobenius norm below this are treated as absent.
const ZERO_BLOCK: f64 = 1e-12;

/// Signs `(ε, ε′, ε″)` of `J² = ε`, `JD = ε′DJ`, `Jγ = ε″γJ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct KoSigns {
    pub eps: i8,
    pub eps_prime: i8,
    /// Absent in odd KO-dimension.
    pub eps_second: Option<i8>,
}

pub fn ko_signs(d: u8) -> Result<KoSigns, Error> {
    let (eps, eps_prime, eps_second) = match d {
        0 => (1, 1, Some(1)),
        1 => (1, -1, None),
        2 => (-1, 1, Some(-1)),
        3 => (-1, 1, None),
        4 => (-1, 1, Some(1)),
        5 => (-1, -1, None),
        6 => (1, 1, Some(-1)),
        7 => (1, 1, None),
        _ => return Err(Error::Krajewski(format!("KO-dimension {d} is not in 0..=7"))),
    };
    Ok(KoSigns { eps, eps_prime, eps_second })
}

fn is_even(d: u8) -> bool {
    d.is_multiple_of(2)
}

/// KO-dimensions in which diagonal vertices carry the parity `χ`.
fn has_parity(d: u8) -> bool {
    (2..=6).contains(&d)
}

/// A vertex `(i, p, j)`: copy `p` of the irrep `C^{n_i} ⊗ C^{n_j°}`. All
/// indices are 0-based; `jv` is the index of `𝔍(v)` in the vertex list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub i: usize,
    pub j: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<u8>,
    pub jv: usize,
}

impl Vertex {
    pub fn is_diagonal(&self) -> bool {
        self.i == self.j
    }
}

/// Decorated edge `e = (from, to)` with `D_e : H_from → H_to`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub d: CMat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrajewskiDiagram {
    pub shape: AlgebraShape,
    pub ko_dim: u8,
    pub vertices: Vec<Vertex>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Site {
    Diagram,
    Vertex(usize),
    Edge(usize),
}

/// One broken rule of the decorated-graph definition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub site: Site,
    pub rule: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(site: Site, rule: &'static str, detail: impl Into<String>) -> Self {
        Violation { site, rule, detail: detail.into() }
    }
}

/// Permutation matrix of `ψ ↦ ψᵀ` for `rows × cols` matrices.
pub fn flip_matrix(rows: usize, cols: usize) -> CMat {
    let mut f = CMat::zeros(rows * cols, rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            f[(c * rows + r, r * cols + c)] = ONE;
        }
    }
    f
}

impl KrajewskiDiagram {
    pub fn from_json(s: &str) -> Result<Self, Error> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagram serializes")
    }

    pub fn signs(&self) -> Result<KoSigns, Error> {
        ko_signs(self.ko_dim)
    }

    /// `(n_{i(v)}, n_{j(v)})`.
    pub fn vertex_dims(&self, v: usize) -> (usize, usize) {
        let x = &self.vertices[v];
        (self.shape.dims()[x.i], self.shape.dims()[x.j])
    }

    pub fn vertex_dim(&self, v: usize) -> usize {
        let (a, b) = self.vertex_dims(v);
        a * b
    }

    /// Start of each `H_v` in `H = ⊕_v H_v`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.vertices.len());
        let mut acc = 0;
        for v in 0..self.vertices.len() {
            off.push(acc);
            acc += self.vertex_dim(v);
        }
        off
    }

    pub fn hilbert_dim(&self) -> usize {
        (0..self.vertices.len()).map(|v| self.vertex_dim(v)).sum()
    }

    /// Vertices over `(n_i, n_j)`, in list order.
    pub fn fiber(&self, i: usize, j: usize) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.vertices[v].i == i && self.vertices[v].j == j).collect()
    }

    /// `ε(v, d)`. Needs a valid parity on diagonal vertices in KO-dims 2..=6.
    pub fn epsilon(&self, v: usize) -> f64 {
        let eps = f64::from(ko_signs(self.ko_dim).expect("valid KO-dimension").eps);
        let x = &self.vertices[v];
        if x.i < x.j {
            1.0
        } else if x.i > x.j {
            eps
        } else if has_parity(self.ko_dim) {
            if x.chi == Some(1) {
                eps
            } else {
                1.0
            }
        } else {
            1.0
        }
    }

    /// `π(a)`: `a_{i(v)} ⊗ 1` on each `H_v`.
    pub fn pi(&self, a: &AlgElement) -> CMat {
        let off = self.offsets();
        let mut out = CMat::zeros(self.hilbert_dim(), self.hilbert_dim());
        for (v, x) in self.vertices.iter().enumerate() {
            let (_, nj) = self.vertex_dims(v);
            out.set_block(off[v], off[v], &a.block(x.i).kron(&CMat::identity(nj)));
        }
        out
    }

    /// Right action `ψ_v ↦ ψ_v b_{j(v)}`, i.e. `1 ⊗ b_{j(v)}ᵀ`.
    pub fn pi_opposite(&self, b: &AlgElement) -> CMat {
        let off = self.offsets();
        let mut out = CMat::zeros(self.hilbert_dim(), self.hilbert_dim());
        for (v, x) in self.vertices.iter().enumerate() {
            let (ni, _) = self.vertex_dims(v);
            out.set_block(off[v], off[v], &CMat::identity(ni).kron(&b.block(x.j).transpose()));
        }
        out
    }

    /// Grading `γ = ⊕ s(v)`, present in even KO-dimension.
    pub fn gamma(&self) -> Option<CMat> {
        if !is_even(self.ko_dim) {
            return None;
        }
        let off = self.offsets();
        let mut out = CMat::zeros(self.hilbert_dim(), self.hilbert_dim());
        for (v, x) in self.vertices.iter().enumerate() {
            let s = f64::from(x.s.unwrap_or(1));
            for r in 0..self.vertex_dim(v) {
                out[(off[v] + r, off[v] + r)] = C64::new(s, 0.0);
            }
        }
        Some(out)
    }

    /// Linear part `K` of the real structure, `J = K ∘ conj`.
    pub fn real_structure(&self) -> CMat {
        let off = self.offsets();
        let mut k = CMat::zeros(self.hilbert_dim(), self.hilbert_dim());
        for (v, x) in self.vertices.iter().enumerate() {
            let (ni, nj) = self.vertex_dims(v);
            k.set_block(off[x.jv], off[v], &flip_matrix(ni, nj).scale_re(self.epsilon(v)));
        }
        k
    }

    /// Dirac operator assembled from the edge decorations.
    pub fn dirac(&self) -> CMat {
        let off = self.offsets();
        let mut d = CMat::zeros(self.hilbert_dim(), self.hilbert_dim());
        for e in &self.edges {
            d.set_block(off[e.to], off[e.from], &e.d);
        }
        d
    }

    /// Expected `D_{𝔍(e)}` given `D_e`.
    fn jim_decoration(&self, from: usize, to: usize, d: &CMat) -> CMat {
        let sg = ko_signs(self.ko_dim).expect("valid KO-dimension");
        let (i1, j1) = self.vertex_dims(from);
        let (i2, j2) = self.vertex_dims(to);
        let factor = f64::from(sg.eps_prime) * self.epsilon(from) * self.epsilon(to);
        let lhs = flip_matrix(i2, j2);
        let rhs = flip_matrix(j1, i1);
        (&(&lhs * &d.conj()) * &rhs).scale_re(factor)
    }

    /// Checks every rule of the decorated-graph definition.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let d = self.ko_dim;
        let Ok(sg) = ko_signs(d) else {
            return Err(vec![Violation::new(Site::Diagram, "ko-dimension", format!("{d} is not in 0..=7"))]);
        };
        let r = self.shape.len();
        let nv = self.vertices.len();
        for (v, x) in self.vertices.iter().enumerate() {
            if x.i >= r || x.j >= r || x.jv >= nv {
                out.push(Violation::new(Site::Vertex(v), "vertex-index", "factor or 𝔍 index out of range"));
            }
        }
        if !out.is_empty() {
            return Err(out);
        }

        let mut labels = HashMap::new();
        for (v, x) in self.vertices.iter().enumerate() {
            if let Some(w) = labels.insert((x.i, x.p, x.j), v) {
                out.push(Violation::new(Site::Vertex(v), "vertex-label", format!("same (i,p,j) as vertex {w}")));
            }
            let y = &self.vertices[x.jv];
            if y.jv != v {
                out.push(Violation::new(Site::Vertex(v), "involution", "𝔍(𝔍(v)) ≠ v"));
            }
            if y.i != x.j || y.j != x.i {
                out.push(Violation::new(Site::Vertex(v), "involution", "λ(𝔍(v)) ≠ ρ(v)"));
            }
            if x.is_diagonal() && matches!(d, 0 | 1 | 7) && x.jv != v {
                out.push(Violation::new(Site::Vertex(v), "self-pairing", "diagonal vertex must be fixed by 𝔍"));
            }
            match (sg.eps_second, x.s) {
                (Some(e2), Some(s)) if s == 1 || s == -1 => {
                    if y.s != Some(e2 * s) {
                        out.push(Violation::new(Site::Vertex(v), "grading", "s(𝔍(v)) ≠ ε″ s(v)"));
                    }
                }
                (Some(_), _) => out.push(Violation::new(Site::Vertex(v), "grading", "even case needs s = ±1")),
                (None, Some(_)) => out.push(Violation::new(Site::Vertex(v), "grading", "no grading in odd case")),
                (None, None) => {}
            }
            if has_parity(d) && x.is_diagonal() {
                match x.chi {
                    Some(c) if c <= 1 => {
                        if y.chi != Some(1 - c) {
                            out.push(Violation::new(Site::Vertex(v), "parity", "χ(𝔍(v)) ≠ 1 − χ(v)"));
                        }
                    }
                    _ => out.push(Violation::new(Site::Vertex(v), "parity", "diagonal vertex needs χ ∈ {0,1}")),
                }
            } else if x.chi.is_some() {
                out.push(Violation::new(Site::Vertex(v), "parity", "χ only decorates diagonal vertices in KO-dims 2..6"));
            }
        }
        if has_parity(d) {
            for i in 0..r {
                let mu = self.fiber(i, i).len();
                if !mu.is_multiple_of(2) {
                    out.push(Violation::new(Site::Diagram, "multiplicity", format!("μ_{i}{i} = {mu} is odd")));
                }
            }
        }
        if !out.is_empty() {
            return Err(out);
        }

        let mut by_pair = HashMap::new();
        for (n, e) in self.edges.iter().enumerate() {
            if e.from >= nv || e.to >= nv {
                out.push(Violation::new(Site::Edge(n), "edge-index", "endpoint out of range"));
            } else if by_pair.insert((e.from, e.to), n).is_some() {
                out.push(Violation::new(Site::Edge(n), "edge-index", "duplicate edge"));
            }
        }
        if !out.is_empty() {
            return Err(out);
        }
        for (n, e) in self.edges.iter().enumerate() {
            let (x1, x2) = (&self.vertices[e.from], &self.vertices[e.to]);
            if x1.i != x2.i && x1.j != x2.j {
                out.push(Violation::new(Site::Edge(n), "edge-adjacency", "λ and ρ both differ"));
            }
            if sg.eps_second.is_some() && x1.s == x2.s {
                out.push(Violation::new(Site::Edge(n), "edge-grading", "s(v2) ≠ −s(v1)"));
            }
            let (rows, cols) = (self.vertex_dim(e.to), self.vertex_dim(e.from));
            if e.d.rows() != rows || e.d.cols() != cols {
                out.push(Violation::new(
                    Site::Edge(n),
                    "edge-shape",
                    format!("D_e is {}x{}, expected {rows}x{cols}", e.d.rows(), e.d.cols()),
                ));
                continue;
            }
            let scale = e.d.frob_norm();
            if scale < ZERO_BLOCK {
                out.push(Violation::new(Site::Edge(n), "edge-zero", "D_e vanishes"));
                continue;
            }
            let tol = COMPAT_TOL * scale.max(1.0);
            match by_pair.get(&(e.to, e.from)) {
                Some(&m) if (&self.edges[m].d - &e.d.adjoint()).frob_norm() <= tol => {}
                Some(_) => out.push(Violation::new(Site::Edge(n), "edge-adjoint", "D_ē ≠ D_e†")),
                None => out.push(Violation::new(Site::Edge(n), "edge-adjoint", "reverse edge missing")),
            }
            let want = self.jim_decoration(e.from, e.to, &e.d);
            match by_pair.get(&(x1.jv, x2.jv)) {
                Some(&m) if self.edges[m].d.rows() == want.rows() && (&self.edges[m].d - &want).frob_norm() <= tol => {}
                Some(_) => out.push(Violation::new(Site::Edge(n), "edge-real-structure", "D_𝔍(e) ≠ ε′ε(v1)ε(v2) J_0-conjugate of D_e")),
                None => out.push(Violation::new(Site::Edge(n), "edge-real-structure", "edge 𝔍(e) missing")),
            }
            let (ni1, nj1) = self.vertex_dims(e.from);
            let (ni2, nj2) = self.vertex_dims(e.to);
            if x1.i == x2.i && x1.j != x2.j {
                let dr = e.d.block(0, 0, nj2, nj1);
                if (&CMat::identity(ni1).kron(&dr) - &e.d).frob_norm() > tol {
                    out.push(Violation::new(Site::Edge(n), "first-order", "λ equal: D_e must be 1 ⊗ D_R"));
                }
            } else if x1.j == x2.j && x1.i != x2.i {
                let dl = CMat::from_fn(ni2, ni1, |a, b| e.d[(a * nj1, b * nj1)]);
                if (&dl.kron(&CMat::identity(nj1)) - &e.d).frob_norm() > tol {
                    out.push(Violation::new(Site::Edge(n), "first-order", "ρ equal: D_e must be D_L ⊗ 1"));
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Replaces the edges by the non-zero blocks of `d`.
    pub fn set_dirac(&mut self, d: &CMat) {
        let off = self.offsets();
        let nv = self.vertices.len();
        self.edges.clear();
        for v1 in 0..nv {
            for v2 in 0..nv {
                let blk = d.block(off[v2], off[v1], self.vertex_dim(v2), self.vertex_dim(v1));
                if blk.frob_norm() > ZERO_BLOCK {
                    self.edges.push(Edge { from: v1, to: v2, d: blk });
                }
            }
        }
    }

    /// Whether an edge `v1 → v2` is allowed by the adjacency and grading rules.
    fn edge_allowed(&self, v1: usize, v2: usize) -> bool {
        let (x1, x2) = (&self.vertices[v1], &self.vertices[v2]);
        let adjacent = x1.i == x2.i || x1.j == x2.j;
        let graded = !is_even(self.ko_dim) || x1.s != x2.s;
        adjacent && graded
    }
}

/// Random decoration for `v1 → v2` with the first-order structure.
fn random_decoration<R: Rng + ?Sized>(k: &KrajewskiDiagram, v1: usize, v2: usize, rng: &mut R) -> CMat {
    let (x1, x2) = (&k.vertices[v1], &k.vertices[v2]);
    let (ni1, nj1) = k.vertex_dims(v1);
    let (ni2, nj2) = k.vertex_dims(v2);
    if x1.i == x2.i && x1.j != x2.j {
        CMat::identity(ni1).kron(&CMat::random(nj2, nj1, rng))
    } else if x1.j == x2.j && x1.i != x2.i {
        CMat::random(ni2, ni1, rng).kron(&CMat::identity(nj1))
    } else {
        // Same irrep type: the first-order condition leaves `L ⊗ 1 + 1 ⊗ R`.
        let l = CMat::random(ni2, ni1, rng).kron(&CMat::identity(nj1));
        let r = CMat::identity(ni1).kron(&CMat::random(nj2, nj1, rng));
        &l + &r
    }
}

/// Fills `k` with a random Dirac operator: allowed blocks are drawn with
/// probability `density`, then projected onto `D = D†`, `JD = ε′DJ`.
pub fn randomize_dirac<R: Rng + ?Sized>(k: &mut KrajewskiDiagram, density: f64, rng: &mut R) {
    let off = k.offsets();
    let n = k.hilbert_dim();
    let nv = k.vertices.len();
    let mut d = CMat::zeros(n, n);
    for v1 in 0..nv {
        for v2 in 0..nv {
            if k.edge_allowed(v1, v2) && rng.random::<f64>() < density {
                d.set_block(off[v2], off[v1], &random_decoration(k, v1, v2, rng));
            }
        }
    }
    let d = (&d + &d.adjoint()).scale_re(0.5);
    let kj = k.real_structure();
    let eps_prime = f64::from(k.signs().expect("valid KO-dimension").eps_prime);
    let jd = (&(&kj * &d.conj()) * &kj.adjoint()).scale_re(eps_prime);
    let d = (&d + &jd).scale_re(0.5);
    k.set_dirac(&d);
}

/// Appends an orbit of `𝔍` over `(i, j)` and returns `(v, 𝔍(v))`.
fn push_orbit<R: Rng + ?Sized>(k: &mut KrajewskiDiagram, i: usize, j: usize, chi: Option<u8>, rng: &mut R) -> (usize, usize) {
    let d = k.ko_dim;
    let sg = ko_signs(d).expect("valid KO-dimension");
    let s = sg.eps_second.map(|_| if rng.random::<bool>() { 1 } else { -1 });
    let s_partner = s.map(|s| s * sg.eps_second.expect("even case"));
    let next_p = |k: &KrajewskiDiagram, a: usize, b: usize| k.fiber(a, b).len();
    let v = k.vertices.len();
    if i == j && !has_parity(d) {
        let p = next_p(k, i, i);
        k.vertices.push(Vertex { i, j, p, s, chi: None, jv: v });
        return (v, v);
    }
    let (c0, c1) = if i == j {
        let c = chi.unwrap_or(0);
        (Some(c), Some(1 - c))
    } else {
        (None, None)
    };
    let p = next_p(k, i, j);
    k.vertices.push(Vertex { i, j, p, s, chi: c0, jv: v + 1 });
    let p = next_p(k, j, i);
    k.vertices.push(Vertex { i: j, j: i, p, s: s_partner, chi: c1, jv: v });
    (v, v + 1)
}

/// A random valid diagram over `shape` with up to `max_orbits` `𝔍`-orbits per
/// pair `i ≤ j` and Dirac blocks drawn with probability `density`.
pub fn random_diagram<R: Rng + ?Sized>(
    shape: &AlgebraShape,
    d: u8,
    max_orbits: usize,
    density: f64,
    rng: &mut R,
) -> Result<KrajewskiDiagram, Error> {
    ko_signs(d)?;
    let mut k = KrajewskiDiagram { shape: shape.clone(), ko_dim: d, vertices: Vec::new(), edges: Vec::new() };
    let r = shape.len();
    for i in 0..r {
        for j in i..r {
            for _ in 0..rng.random_range(0..=max_orbits) {
                push_orbit(&mut k, i, j, None, rng);
            }
        }
    }
    if k.vertices.is_empty() {
        let i = rng.random_range(0..r);
        push_orbit(&mut k, i, i, None, rng);
    }
    randomize_dirac(&mut k, density, rng);
    Ok(k)
}

/// The matrices `u(v,w)` lifting a Bratteli step between two diagrams;
/// pairs absent from `u` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftData {
    pub step: BratteliStep,
    pub u: BTreeMap<(usize, usize), CMat>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftEntry {
    pub v: usize,
    pub w: usize,
    pub m: CMat,
}

/// On-disk bundle: a step, both diagrams and the lift matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftFile {
    pub step: StepFile,
    pub diagram_a: KrajewskiDiagram,
    pub diagram_b: KrajewskiDiagram,
    pub u: Vec<LiftEntry>,
}

impl LiftFile {
    pub fn new(lift: &LiftData, ka: &KrajewskiDiagram, kb: &KrajewskiDiagram) -> Self {
        LiftFile {
            step: lift.step.to_file(),
            diagram_a: ka.clone(),
            diagram_b: kb.clone(),
            u: lift.u.iter().map(|(&(v, w), m)| LiftEntry { v, w, m: m.clone() }).collect(),
        }
    }

    pub fn into_parts(self) -> Result<(LiftData, KrajewskiDiagram, KrajewskiDiagram), Error> {
        let step = BratteliStep::from_file(&self.step)?;
        let u = self.u.into_iter().map(|e| ((e.v, e.w), e.m)).collect();
        Ok((LiftData { step, u }, self.diagram_a, self.diagram_b))
    }
}

impl LiftData {
    fn get(&self, v: usize, w: usize) -> Option<&CMat> {
        self.u.get(&(v, w))
    }

    /// Row offset of copy `alpha` of `M_{n_i}` in `M_{m_k}`.
    fn copy_offset(&self, k: usize, i: usize, alpha: usize) -> usize {
        self.step
            .copies(k)
            .iter()
            .find(|c| c.i == i && c.alpha == alpha)
            .map(|c| c.offset)
            .expect("copy exists")
    }

    /// Checks shapes of the `u(v,w)` against the step and both diagrams.
    pub fn check(&self, ka: &KrajewskiDiagram, kb: &KrajewskiDiagram) -> Result<(), Error> {
        if &ka.shape != self.step.shape_a() || &kb.shape != self.step.shape_b() {
            return Err(Error::Krajewski("diagram shapes do not match the step".into()));
        }
        let mult = self.step.mult();
        for (&(v, w), m) in &self.u {
            if v >= ka.vertices.len() || w >= kb.vertices.len() {
                return Err(Error::Krajewski(format!("u({v},{w}) refers to a missing vertex")));
            }
            let (x, y) = (&ka.vertices[v], &kb.vertices[w]);
            let (rows, cols) = (mult[y.i][x.i], mult[y.j][x.j]);
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Krajewski(format!(
                    "u({v},{w}) is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            if x.s != y.s && m.frob_norm() > ZERO_BLOCK {
                return Err(Error::Krajewski(format!("u({v},{w}) is non-zero across gradings")));
            }
        }
        Ok(())
    }

    /// The unnormalized `φ_H` as a `dim H_ℬ × dim H_𝒜` matrix.
    pub fn matrix(&self, ka: &KrajewskiDiagram, kb: &KrajewskiDiagram) -> Result<CMat, Error> {
        self.check(ka, kb)?;
        let (off_a, off_b) = (ka.offsets(), kb.offsets());
        let mut phi = CMat::zeros(kb.hilbert_dim(), ka.hilbert_dim());
        for (&(v, w), m) in &self.u {
            let (x, y) = (&ka.vertices[v], &kb.vertices[w]);
            let (ni, nj) = ka.vertex_dims(v);
            let (_, ml) = kb.vertex_dims(w);
            for alpha in 0..m.rows() {
                for beta in 0..m.cols() {
                    let c = m[(alpha, beta)];
                    if c == ZERO {
                        continue;
                    }
                    let r0 = self.copy_offset(y.i, x.i, alpha);
                    let c0 = self.copy_offset(y.j, x.j, beta);
                    for a in 0..ni {
                        for b in 0..nj {
                            let row = off_b[w] + (r0 + a) * ml + (c0 + b);
                            phi[(row, off_a[v] + a * nj + b)] += c;
                        }
                    }
                }
            }
        }
        Ok(phi)
    }

    /// `σ^{v1,v2} = Σ_w tr(u(v1,w)* u(v2,w))` over the vertices `vs` of one fiber.
    pub fn sigma(&self, vs: &[usize], n_b: usize) -> CMat {
        CMat::from_fn(vs.len(), vs.len(), |a, b| {
            (0..n_b)
                .filter_map(|w| match (self.get(vs[a], w), self.get(vs[b], w)) {
                    (Some(x), Some(y)) => Some(x.hs_inner(y)),
                    _ => None,
                })
                .sum()
        })
    }
}

/// `φ_H` after re-basing the multiplicity spaces so that `σ` is diagonal and
/// rescaling each vertex by `𝔰_v^{-1/2}`.
#[derive(Clone, Debug)]
pub struct NormalizedPhiH {
    /// Lift matrices in the re-based, normalized vertex basis.
    pub lift: LiftData,
    /// `𝔰_v`, the diagonal of `σ` after re-basing.
    pub norms: Vec<f64>,
    /// Columns are the re-based basis of `H_𝒜` in the original coordinates.
    pub basis_change: CMat,
    /// Isometry `H_𝒜 → H_ℬ` in the original coordinates of `H_𝒜`.
    pub matrix: CMat,
}

fn max_offdiag(m: &CMat) -> f64 {
    let mut out: f64 = 0.0;
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if r != c {
                out = out.max(m[(r, c)].norm());
            }
        }
    }
    out
}

/// Applies `ϖ′_{p′} = Σ_p U[p′,p] ϖ_p` to the vertices `vs`.
fn rebase(u_old: &LiftData, u_new: &mut LiftData, t: &mut CMat, ka: &KrajewskiDiagram, vs: &[usize], um: &CMat, n_b: usize) {
    let off = ka.offsets();
    for (pp, &vp) in vs.iter().enumerate() {
        for w in 0..n_b {
            let mut acc: Option<CMat> = None;
            for (p, &v) in vs.iter().enumerate() {
                if let Some(m) = u_old.get(v, w) {
                    let term = m.scale(um[(pp, p)]);
                    acc = Some(match acc {
                        Some(a) => &a + &term,
                        None => term,
                    });
                }
            }
            match acc {
                Some(a) => {
                    u_new.u.insert((vp, w), a);
                }
                None => {
                    u_new.u.remove(&(vp, w));
                }
            }
        }
        let dim = ka.vertex_dim(vp);
        for (p, &v) in vs.iter().enumerate() {
            t.set_block(off[v], off[vp], &CMat::identity(dim).scale(um[(pp, p)]));
        }
    }
}

/// `U` with `conj(U) σ Uᵀ` diagonal.
fn diagonalizer(sigma: &CMat, real: bool) -> Result<CMat, Error> {
    if real {
        let re = nalgebra::DMatrix::from_fn(sigma.rows(), sigma.cols(), |r, c| sigma[(r, c)].re);
        let (_, v) = eigh_real(&re);
        Ok(CMat::from_fn(v.ncols(), v.nrows(), |r, c| C64::new(v[(c, r)], 0.0)))
    } else {
        let (_, v) = eigh(sigma)?;
        Ok(v.transpose())
    }
}

/// Splits `vs` by grading value, keeping order.
fn by_grading(ka: &KrajewskiDiagram, vs: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<Option<i8>, Vec<usize>> = BTreeMap::new();
    for &v in vs {
        groups.entry(ka.vertices[v].s).or_default().push(v);
    }
    groups.into_values().collect()
}

/// Builds the normalized `φ_H`. When `σ` is not diagonal, the multiplicity
/// bases are changed fiber by fiber compatibly with `𝔍`, `s` and `χ`; this
/// is only available in KO-dimensions 0, 1, 2, 6 and 7.
pub fn build_phi_h(lift: &LiftData, ka: &KrajewskiDiagram, kb: &KrajewskiDiagram) -> Result<NormalizedPhiH, Error> {
    lift.check(ka, kb)?;
    let d = ka.ko_dim;
    let r = ka.shape.len();
    let n_b = kb.vertices.len();
    let mut rebased = lift.clone();
    let mut t = CMat::identity(ka.hilbert_dim());
    let scale = lift.u.values().map(|m| m.frob_norm_sqr()).fold(1.0, f64::max);
    let tol = 1e-12 * scale;

    for i in 0..r {
        for j in i..r {
            let fiber = ka.fiber(i, j);
            let partner = ka.fiber(j, i);
            let diag_now = max_offdiag(&lift.sigma(&fiber, n_b)) <= tol && max_offdiag(&lift.sigma(&partner, n_b)) <= tol;
            if fiber.is_empty() || diag_now {
                continue;
            }
            match d {
                _ if i < j => {
                    for g in by_grading(ka, &fiber) {
                        let um = diagonalizer(&lift.sigma(&g, n_b), false)?;
                        let gp: Vec<usize> = g.iter().map(|&v| ka.vertices[v].jv).collect();
                        rebase(lift, &mut rebased, &mut t, ka, &g, &um, n_b);
                        rebase(lift, &mut rebased, &mut t, ka, &gp, &um.conj(), n_b);
                    }
                }
                0 | 1 | 7 => {
                    for g in by_grading(ka, &fiber) {
                        let sg = lift.sigma(&g, n_b);
                        let im = sg.as_slice().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                        if im > COMPAT_TOL * scale {
                            return Err(Error::Krajewski(format!(
                                "σ on fiber ({i},{i}) is not real (imaginary part {im:e}); the lift is not J-compatible"
                            )));
                        }
                        let um = diagonalizer(&sg, true)?;
                        rebase(lift, &mut rebased, &mut t, ka, &g, &um, n_b);
                    }
                }
                2 | 6 => {
                    let even: Vec<usize> = fiber.iter().copied().filter(|&v| ka.vertices[v].chi == Some(0)).collect();
                    for g in by_grading(ka, &even) {
                        let um = diagonalizer(&lift.sigma(&g, n_b), false)?;
                        let gp: Vec<usize> = g.iter().map(|&v| ka.vertices[v].jv).collect();
                        rebase(lift, &mut rebased, &mut t, ka, &g, &um, n_b);
                        rebase(lift, &mut rebased, &mut t, ka, &gp, &um.conj(), n_b);
                    }
                }
                _ => {
                    return Err(Error::Krajewski(format!(
                        "σ on fiber ({i},{i}) is not diagonal and KO-dimension {d} has no constructive diagonalization"
                    )))
                }
            }
        }
    }

    let mut norms = vec![0.0; ka.vertices.len()];
    for i in 0..r {
        for j in 0..r {
            let fiber = ka.fiber(i, j);
            let sg = rebased.sigma(&fiber, n_b);
            if max_offdiag(&sg) > COMPAT_TOL * scale {
                return Err(Error::Krajewski(format!(
                    "σ on fiber ({i},{j}) stays off-diagonal ({:e}) after re-basing",
                    max_offdiag(&sg)
                )));
            }
            for (a, &v) in fiber.iter().enumerate() {
                norms[v] = sg[(a, a)].re;
            }
        }
    }
    if let Some(v) = norms.iter().position(|&s| s <= tol) {
        return Err(Error::Krajewski(format!("φ_H is not one-to-one: Σ_w ‖u({v},w)‖² = 0")));
    }
    for (&(v, _), m) in rebased.u.iter_mut() {
        *m = m.scale_re(1.0 / norms[v].sqrt());
    }
    let matrix = &rebased.matrix(ka, kb)? * &t.adjoint();
    Ok(NormalizedPhiH { lift: rebased, norms, basis_change: t, matrix })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompatMode {
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CompatReport {
    /// `max_ψ ‖φ_H(Aψ) − B_φ^φ φ_H(ψ)‖` over basis vectors `ψ`.
    pub weak_residual: f64,
    /// `max_ψ ‖φ_H(Aψ) − B φ_H(ψ)‖`.
    pub strong_residual: f64,
    /// Size of the block `B_⊥^φ`.
    pub perp_phi: f64,
    pub ok: bool,
}

fn max_col_norm(m: &CMat) -> f64 {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m[(r, c)].norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Checks `φ_H A = B_φ^φ φ_H` (weak) or `φ_H A = B φ_H` (strong).
pub fn check_compat(a: &CMat, b: &CMat, phi: &CMat, mode: CompatMode) -> Result<CompatReport, Error> {
    if a.rows() != phi.cols() || a.cols() != phi.cols() || b.rows() != phi.rows() || b.cols() != phi.rows() {
        return Err(Error::ShapeMismatch("operators do not act on the spaces of φ_H".into()));
    }
    let proj = &(phi * &phi.adjoint());
    let lhs = phi.try_mul(a)?;
    let b_phi = b * phi;
    let inherited = proj * &b_phi;
    let weak_residual = max_col_norm(&(&lhs - &inherited));
    let strong_residual = max_col_norm(&(&lhs - &b_phi));
    let perp_phi = max_col_norm(&(&b_phi - &inherited));
    let ok = match mode {
        CompatMode::Weak => weak_residual < COMPAT_TOL,
        CompatMode::Strong => strong_residual < COMPAT_TOL && perp_phi < COMPAT_TOL,
    };
    Ok(CompatReport { weak_residual, strong_residual, perp_phi, ok })
}

/// A pair `(v, w)` where `u(𝔍v, 𝔍w) = ε_𝒜(v)/ε_ℬ(w) u(v,w)*` fails.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JViolation {
    pub v: usize,
    pub w: usize,
    pub residual: f64,
}

/// Checks the relation on `u` that makes `J_ℬ` strong `φ`-compatible with `J_𝒜`.
pub fn check_j_compat(lift: &LiftData, ka: &KrajewskiDiagram, kb: &KrajewskiDiagram) -> Result<Vec<JViolation>, Error> {
    if ka.ko_dim != kb.ko_dim {
        return Err(Error::Krajewski(format!(
            "KO-dimensions differ: {} on 𝒜, {} on ℬ",
            ka.ko_dim, kb.ko_dim
        )));
    }
    lift.check(ka, kb)?;
    let mult = lift.step.mult();
    let mut out = Vec::new();
    for v in 0..ka.vertices.len() {
        for w in 0..kb.vertices.len() {
            let (x, y) = (&ka.vertices[v], &kb.vertices[w]);
            let zero = || CMat::zeros(mult[y.i][x.i], mult[y.j][x.j]);
            let zero_t = || CMat::zeros(mult[y.j][x.j], mult[y.i][x.i]);
            let u = lift.get(v, w).cloned().unwrap_or_else(zero);
            let uj = lift.get(x.jv, y.jv).cloned().unwrap_or_else(zero_t);
            let want = u.adjoint().scale_re(ka.epsilon(v) * kb.epsilon(w));
            let residual = (&uj - &want).frob_norm();
            if residual > COMPAT_TOL * u.frob_norm().max(1.0) {
                out.push(JViolation { v, w, residual });
            }
        }
    }
    Ok(out)
}

/// Projects `u` onto the solutions of the `J`-compatibility relation.
pub fn symmetrize_lift(lift: &mut LiftData, ka: &KrajewskiDiagram, kb: &KrajewskiDiagram) {
    let keys: Vec<(usize, usize)> = lift
        .u
        .keys()
        .flat_map(|&(v, w)| [(v, w), (ka.vertices[v].jv, kb.vertices[w].jv)])
        .collect();
    let mut out = BTreeMap::new();
    for (v, w) in keys {
        if out.contains_key(&(v, w)) {
            continue;
        }
        let (vj, wj) = (ka.vertices[v].jv, kb.vertices[w].jv);
        let mirrored = lift.get(vj, wj).map(|m| m.adjoint().scale_re(ka.epsilon(vj) * kb.epsilon(wj)));
        let sym = match (lift.get(v, w), mirrored) {
            (Some(a), Some(b)) => (a + &b).scale_re(0.5),
            (Some(a), None) => a.scale_re(0.5),
            (None, Some(b)) => b.scale_re(0.5),
            (None, None) => continue,
        };
        out.insert((v, w), sym);
    }
    lift.u = out;
}

/// A random lift of `step` between random diagrams of KO-dimension `d`.
/// Every vertex of `𝒜` receives a partner orbit in `ℬ`, so `φ_H` is
/// one-to-one; `extra_orbits` unrelated orbits are added to `ℬ`.
pub fn random_lift<R: Rng + ?Sized>(
    step: &BratteliStep,
    d: u8,
    extra_orbits: usize,
    j_compatible: bool,
    rng: &mut R,
) -> Result<(LiftData, KrajewskiDiagram, KrajewskiDiagram), Error> {
    let ka = random_diagram(step.shape_a(), d, 1, 0.5, rng)?;
    let mut kb = KrajewskiDiagram { shape: step.shape_b().clone(), ko_dim: d, vertices: Vec::new(), edges: Vec::new() };
    let mult = step.mult();
    let targets = |i: usize| -> Vec<usize> { (0..mult.len()).filter(|&k| mult[k][i] > 0).collect() };

    let mut designated = Vec::new();
    let mut done = vec![false; ka.vertices.len()];
    for v in 0..ka.vertices.len() {
        if done[v] {
            continue;
        }
        let x = ka.vertices[v];
        done[v] = true;
        done[x.jv] = true;
        let (tk, tl) = (targets(x.i), targets(x.j));
        if tk.is_empty() || tl.is_empty() {
            return Err(Error::Krajewski(format!("factor {} or {} is not embedded", x.i, x.j)));
        }
        let k = tk[rng.random_range(0..tk.len())];
        let l = if x.i == x.j { k } else { tl[rng.random_range(0..tl.len())] };
        let start = kb.vertices.len();
        let (w, _) = push_orbit(&mut kb, k, l, x.chi, rng);
        kb.vertices[start].s = x.s;
        let wj = kb.vertices[start].jv;
        if wj != start {
            let e2 = ko_signs(d)?.eps_second;
            kb.vertices[wj].s = x.s.map(|s| s * e2.expect("even case"));
        }
        designated.push((v, w));
    }
    let r_b = step.shape_b().len();
    for _ in 0..extra_orbits {
        let k = rng.random_range(0..r_b);
        let l = rng.random_range(0..r_b);
        push_orbit(&mut kb, k.min(l), k.max(l), None, rng);
    }
    randomize_dirac(&mut kb, 0.5, rng);

    let mut u = BTreeMap::new();
    for v in 0..ka.vertices.len() {
        for w in 0..kb.vertices.len() {
            let (x, y) = (&ka.vertices[v], &kb.vertices[w]);
            let (rows, cols) = (mult[y.i][x.i], mult[y.j][x.j]);
            if rows == 0 || cols == 0 || x.s != y.s {
                continue;
            }
            if designated.contains(&(v, w)) || rng.random::<f64>() < 0.3 {
                u.insert((v, w), CMat::random(rows, cols, rng));
            }
        }
    }
    let mut lift = LiftData { step: step.clone(), u };
    if j_compatible {
        symmetrize_lift(&mut lift, &ka, &kb);
    }
    Ok((lift, ka, kb))
}

/// Orthonormal basis (columns) of the orthogonal complement of the range of
/// the isometry `phi`.
pub fn complement(phi: &CMat) -> Result<CMat, Error> {
    let n = phi.rows();
    let p = phi * &phi.adjoint();
    let q = &CMat::identity(n) - &p;
    let (_, vecs) = eigh(&q)?;
    let rank = phi.cols();
    Ok(vecs.block(0, rank, n, n - rank))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceComparison {
    pub tr_a: C64,
    pub tr_b: C64,
    /// Sum of the terms of `Tr(B_1⋯B_n)` with a non-inherited block.
    pub tnic: C64,
}

/// `Tr(A_1⋯A_n)`, `Tr(B_1⋯B_n)` and the explicit non-inherited remainder,
/// computed by expanding each `B_t` along `H_ℬ = φ_H(H_𝒜) ⊕ φ_H(H_𝒜)^⊥`.
pub fn trace_compare(pairs: &[(CMat, CMat)], phi: &CMat) -> Result<TraceComparison, Error> {
    if pairs.is_empty() {
        return Err(Error::Invalid("trace_compare needs at least one pair".into()));
    }
    for (t, (a, b)) in pairs.iter().enumerate() {
        let rep = check_compat(a, b, phi, CompatMode::Weak)?;
        if !rep.ok {
            return Err(Error::Krajewski(format!(
                "pair {t} is not φ-compatible (residual {:e})",
                rep.weak_residual
            )));
        }
    }
    let n_a = phi.cols();
    let n_b = phi.rows();
    let q = complement(phi)?;
    let mut w = CMat::zeros(n_b, n_b);
    w.set_block(0, 0, phi);
    w.set_block(0, n_a, &q);
    let sizes = [n_a, n_b - n_a];
    let starts = [0, n_a];
    let blocks: Vec<[[CMat; 2]; 2]> = pairs
        .iter()
        .map(|(_, b)| {
            let bt = &(&w.adjoint() * b) * &w;
            let blk = |x: usize, y: usize| bt.block(starts[x], starts[y], sizes[x], sizes[y]);
            [[blk(0, 0), blk(0, 1)], [blk(1, 0), blk(1, 1)]]
        })
        .collect();

    let n = pairs.len();
    let mut tnic = ZERO;
    for path in 1..(1usize << n) {
        let side = |t: usize| (path >> (t % n)) & 1;
        let mut prod = blocks[0][side(0)][side(1)].clone();
        for t in 1..n {
            prod = &prod * &blocks[t][side(t)][side(t + 1)];
        }
        tnic += prod.trace();
    }
    let product = |pick: fn(&(CMat, CMat)) -> &CMat| {
        let mut it = pairs.iter().map(pick);
        let first = it.next().expect("non-empty").clone();
        it.fold(first, |acc, m| &acc * m)
    };
    let tr_a = product(|p| &p.0).trace();
    let tr_b = product(|p| &p.1).trace();
    Ok(TraceComparison { tr_a, tr_b, tnic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flip_is_transpose() {
        let m = CMat::from_fn(2, 3, |r, c| C64::new((3 * r + c) as f64, 0.0));
        let v = CMat::from_row_major(6, 1, m.as_slice().to_vec()).unwrap();
        let fv = &flip_matrix(2, 3) * &v;
        assert_eq!(fv.as_slice(), m.transpose().as_slice());
    }

    #[test]
    fn j_squares_to_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = AlgebraShape::new(vec![1, 2]).unwrap();
        for d in 0..8 {
            let k = random_diagram(&shape, d, 2, 0.5, &mut rng).unwrap();
            let kj = k.real_structure();
            let eps = f64::from(ko_signs(d).unwrap().eps);
            let j2 = &kj * &kj.conj();
            assert!((&j2 - &CMat::identity(k.hilbert_dim()).scale_re(eps)).max_abs() < 1e-14);
        }
    }
}
