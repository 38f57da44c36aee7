//! Minimization of the Higgs potential over the free fields, λ-path sweeps
//! and detection of discontinuities in the mass spectrum.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afembed::{adapted_basis, AdaptedBasis, BratteliStep};
use crate::liebasis::build_basis;
use crate::ncgft::{make_phi_compatible, mass_spectrum, ConnectionConfig, FieldBasis, MassSpectrum, PotentialFn};
use crate::Error;

/// Optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizerConfig {
    pub restarts: usize,
    pub init_scale: f64,
    pub max_iter: usize,
    pub gtol: f64,
    pub warm_start: bool,
    /// With warm start on, random restarts run on every `restart_stride`-th
    /// path point (and always at refinement points).
    pub restart_stride: usize,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        MinimizerConfig {
            restarts: 32,
            init_scale: 1.0,
            max_iter: 2000,
            gtol: 1e-9,
            warm_start: true,
            restart_stride: 20,
        }
    }
}

impl MinimizerConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.init_scale <= 0.0 || self.max_iter == 0 || self.gtol <= 0.0 || self.restart_stride == 0 {
            return Err(Error::Invalid("minimizer settings must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one local descent.
#[derive(Clone, Debug)]
pub struct LocalMin {
    pub value: f64,
    pub x: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with an inverse-Hessian update and backtracking (Armijo) line search.
/// Near the floating-point floor of `f` a step is also accepted when it
/// reduces the gradient norm without raising `f` beyond rounding.
pub fn bfgs(f: &PotentialFn<'_>, x0: &[f64], max_iter: usize, gtol: f64) -> LocalMin {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f.eval(&x, &mut g);
    if n == 0 {
        return LocalMin { value: fx, x, grad_norm: 0.0, iterations: 0, converged: true };
    }
    let mut h = identity(n);
    let mut first = true;
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut iterations = 0;
    let mut gnorm = inf_norm(&g);
    while iterations < max_iter && gnorm > gtol {
        iterations += 1;
        matvec_neg(&h, &g, &mut d);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            h = identity(n);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
        }
        let noise = 1e-13 * fx.abs().max(1e-300);
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut fnew = fx;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = x[i] + alpha * d[i];
            }
            fnew = f.eval(&xn, &mut gn);
            if fnew <= fx + 1e-4 * alpha * slope
                || (fnew <= fx + noise && inf_norm(&gn) < gnorm)
            {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if first {
                break;
            }
            h = identity(n);
            first = true;
            continue;
        }
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            first = false;
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        fx = fnew;
        gnorm = inf_norm(&g);
    }
    LocalMin { value: fx, x, grad_norm: gnorm, iterations, converged: gnorm <= gtol }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn matvec_neg(h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        out[i] = -dot(&h[i * n..(i + 1) * n], g);
    }
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`, `ρ = 1/(sᵀy)`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        let row = &mut h[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Where a descent was started from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    Zero,
    Basis,
    Warm,
    Random,
}

/// Best local minimum over a set of starts.
#[derive(Clone, Debug)]
pub struct VacuumResult {
    pub v_min: f64,
    pub x: Vec<f64>,
    pub config: ConnectionConfig,
    pub grad_norm: f64,
    pub converged: bool,
    pub start: StartKind,
}

/// A step with its adapted basis, ready for minimization at any λ.
pub struct StepProblem {
    pub step: BratteliStep,
    pub adapted: AdaptedBasis,
    pub target: Arc<FieldBasis>,
    pub source: Arc<FieldBasis>,
}

impl StepProblem {
    pub fn new(step: BratteliStep) -> Result<Self, Error> {
        let basis_a = build_basis(step.shape_a());
        let adapted = adapted_basis(&step, &basis_a)?;
        let target = Arc::new(FieldBasis::from_adapted(&step, &adapted)?);
        let source = Arc::new(FieldBasis::from_generators(&basis_a)?);
        Ok(StepProblem { step, adapted, target, source })
    }

    /// `𝒜`-configuration `B^i_κ = λ_i E^i_κ`.
    pub fn source_config(&self, lambda: &[f64]) -> Result<ConnectionConfig, Error> {
        if lambda.len() != self.source.factors.len() {
            return Err(Error::Invalid(format!(
                "λ has {} entries for {} source factors",
                lambda.len(),
                self.source.factors.len()
            )));
        }
        let fields = self
            .source
            .factors
            .iter()
            .zip(lambda)
            .map(|(f, &l)| f.gens.iter().map(|e| e.scale_re(l)).collect())
            .collect();
        Ok(ConnectionConfig { basis: self.source.clone(), fields })
    }

    /// `ℬ`-configuration with lifted frozen fields and zero free fields.
    pub fn base_config(&self, lambda: &[f64]) -> Result<ConnectionConfig, Error> {
        let a = self.source_config(lambda)?;
        make_phi_compatible(&self.step, &self.adapted, self.target.clone(), &a)
    }

    pub fn n_params(&self) -> usize {
        self.target.n_params()
    }

    /// Free coefficients of the basis configuration `B_β = E_β`.
    pub fn basis_start(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_params());
        for f in &self.target.factors {
            let w = f.m * f.m;
            for j in 0..f.n_free() {
                let mut c = vec![0.0; w];
                c[f.n_frozen + j] = 1.0;
                x.extend(c);
            }
        }
        x
    }
}

/// Deterministic per-(point, restart) random stream.
fn restart_rng(seed: u64, point: u64, restart: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ restart);
    rng
}

fn random_start(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Minimizes over the free fields at one λ-point from the given warm starts,
/// the zero and basis starts, and `restarts` random starts.
pub fn minimize_at(
    problem: &StepProblem,
    lambda: &[f64],
    mcfg: &MinimizerConfig,
    warm: &[Vec<f64>],
    restarts: usize,
    seed: u64,
    point: u64,
) -> Result<VacuumResult, Error> {
    let base = problem.base_config(lambda)?;
    let f = PotentialFn::new(&base);
    let n = f.n_params();
    let mut starts: Vec<(StartKind, Vec<f64>)> = warm.iter().map(|w| (StartKind::Warm, w.clone())).collect();
    starts.push((StartKind::Zero, vec![0.0; n]));
    starts.push((StartKind::Basis, problem.basis_start()));
    for r in 0..restarts {
        let mut rng = restart_rng(seed, point, r as u64);
        starts.push((StartKind::Random, random_start(n, mcfg.init_scale, &mut rng)));
    }
    let results: Vec<(StartKind, LocalMin)> = starts
        .into_par_iter()
        .map(|(kind, x0)| (kind, bfgs(&f, &x0, mcfg.max_iter, mcfg.gtol)))
        .collect();
    let (start, best) = pick_best(results);
    let mut config = base.clone();
    config.set_free_coeffs(&best.x);
    Ok(VacuumResult {
        v_min: best.value,
        x: best.x,
        config,
        grad_norm: best.grad_norm,
        converged: best.converged,
        start,
    })
}

/// Lowest value; ties within `1e-12` relative go to the earliest start so the
/// choice does not depend on scheduling.
fn pick_best(results: Vec<(StartKind, LocalMin)>) -> (StartKind, LocalMin) {
    let mut best: Option<(StartKind, LocalMin)> = None;
    for (k, r) in results {
        let better = match &best {
            None => true,
            Some((_, b)) => r.value < b.value - 1e-12 * b.value.abs().max(1e-12),
        };
        if better {
            best = Some((k, r));
        }
    }
    best.expect("at least one start")
}

/// Cold minimization with the configured number of restarts.
pub fn minimize(problem: &StepProblem, lambda: &[f64], mcfg: &MinimizerConfig, seed: u64) -> Result<VacuumResult, Error> {
    minimize_at(problem, lambda, mcfg, &[], mcfg.restarts, seed, 0)
}

/// Parameterized family of λ-points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PathSpec {
    /// `λ_i = t` for every source factor.
    Diagonal { from: f64, to: f64, samples: usize },
    /// `(λ_1, λ_2) = (t, c - t)`.
    Antidiagonal { c: f64, from: f64, to: f64, samples: usize },
    /// Square grid over `(λ_1, λ_2)`, row-major in `λ_1`.
    Grid { from: f64, to: f64, samples: usize },
}

pub const DEFAULT_PATH_STEP: f64 = 0.005;

impl PathSpec {
    /// Diagonal segment at the default resolution.
    pub fn diagonal(from: f64, to: f64) -> Self {
        let samples = ((to - from) / DEFAULT_PATH_STEP).round() as usize + 1;
        PathSpec::Diagonal { from, to, samples }
    }

    fn check(&self, r: usize) -> Result<(), Error> {
        let (from, to, samples) = match *self {
            PathSpec::Diagonal { from, to, samples } => (from, to, samples),
            PathSpec::Antidiagonal { c, from, to, samples } => {
                if !c.is_finite() {
                    return Err(Error::Invalid("anti-diagonal offset must be finite".into()));
                }
                (from, to, samples)
            }
            PathSpec::Grid { from, to, samples } => (from, to, samples),
        };
        if !from.is_finite() || !to.is_finite() {
            return Err(Error::Invalid("path range must be finite".into()));
        }
        if samples < 2 {
            return Err(Error::Invalid("a path needs at least 2 samples".into()));
        }
        if !matches!(self, PathSpec::Diagonal { .. }) && r != 2 {
            return Err(Error::Invalid("anti-diagonal and grid paths need two source factors".into()));
        }
        Ok(())
    }

    fn lin(from: f64, to: f64, samples: usize, j: usize) -> f64 {
        from + (to - from) * j as f64 / (samples - 1) as f64
    }

    /// λ-vectors along the path (length `r` each).
    pub fn points(&self, r: usize) -> Result<Vec<Vec<f64>>, Error> {
        self.check(r)?;
        Ok(match *self {
            PathSpec::Diagonal { from, to, samples } => {
                (0..samples).map(|j| vec![Self::lin(from, to, samples, j); r]).collect()
            }
            PathSpec::Antidiagonal { c, from, to, samples } => (0..samples)
                .map(|j| {
                    let t = Self::lin(from, to, samples, j);
                    vec![t, c - t]
                })
                .collect(),
            PathSpec::Grid { from, to, samples } => {
                let mut pts = Vec::with_capacity(samples * samples);
                for a in 0..samples {
                    for b in 0..samples {
                        pts.push(vec![Self::lin(from, to, samples, a), Self::lin(from, to, samples, b)]);
                    }
                }
                pts
            }
        })
    }

    pub fn is_one_dimensional(&self) -> bool {
        !matches!(self, PathSpec::Grid { .. })
    }

    /// Index of the point a warm start should come from.
    fn predecessor(&self, j: usize) -> Option<usize> {
        match *self {
            PathSpec::Grid { samples, .. } => {
                if j % samples != 0 {
                    Some(j - 1)
                } else if j >= samples {
                    Some(j - samples)
                } else {
                    None
                }
            }
            _ => j.checked_sub(1),
        }
    }
}

/// One sweep record.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub lambda: Vec<f64>,
    pub v_min: f64,
    pub x: Vec<f64>,
    pub spectrum: MassSpectrum,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }
}

fn record(lambda: &[f64], r: VacuumResult) -> Result<SweepPoint, Error> {
    let spectrum = mass_spectrum(&r.config)?;
    Ok(SweepPoint {
        lambda: lambda.to_vec(),
        v_min: r.v_min,
        x: r.x,
        spectrum,
        converged: r.converged,
        grad_norm: r.grad_norm,
    })
}

/// Runs the path. With warm start, points are visited in order (reusing the
/// previous minimizer), then revisited in reverse order so that branches
/// entered from either end are both followed; random restarts are added every
/// `restart_stride` points. Without warm start, points are independent and
/// run in parallel with full restarts.
pub fn sweep(problem: &StepProblem, path: &PathSpec, mcfg: &MinimizerConfig, seed: u64) -> Result<SweepResult, Error> {
    mcfg.validate()?;
    let r = problem.source.factors.len();
    let pts = path.points(r)?;
    if !mcfg.warm_start {
        let results: Vec<Result<SweepPoint, Error>> = pts
            .par_iter()
            .enumerate()
            .map(|(j, l)| {
                let res = minimize_at(problem, l, mcfg, &[], mcfg.restarts, seed, j as u64)?;
                record(l, res)
            })
            .collect();
        return Ok(SweepResult { points: results.into_iter().collect::<Result<_, _>>()? });
    }
    let mut best: Vec<Option<VacuumResult>> = vec![None; pts.len()];
    for j in 0..pts.len() {
        let warm: Vec<Vec<f64>> = path
            .predecessor(j)
            .and_then(|p| best[p].as_ref().map(|b| b.x.clone()))
            .into_iter()
            .collect();
        let restarts = if j % mcfg.restart_stride == 0 { mcfg.restarts } else { 0 };
        best[j] = Some(minimize_at(problem, &pts[j], mcfg, &warm, restarts, seed, j as u64)?);
    }
    if path.is_one_dimensional() {
        let mut carry: Option<Vec<f64>> = None;
        for j in (0..pts.len()).rev() {
            let cur = best[j].as_ref().expect("forward pass filled");
            let start = match &carry {
                Some(c) => c.clone(),
                None => cur.x.clone(),
            };
            let back = minimize_at(problem, &pts[j], mcfg, &[start], 0, seed, j as u64)?;
            if back.v_min < cur.v_min - 1e-10 * cur.v_min.abs().max(1.0) {
                best[j] = Some(back);
            }
            carry = best[j].as_ref().map(|b| b.x.clone());
        }
    }
    let points = pts
        .iter()
        .zip(best)
        .map(|(l, b)| record(l, b.expect("filled")))
        .collect::<Result<_, _>>()?;
    Ok(SweepResult { points })
}

/// Jump threshold on labeled masses between adjacent samples.
pub const JUMP_THRESHOLD: f64 = 0.05;
/// Final bracket width of a refined discontinuity.
pub const REFINE_WIDTH: f64 = 1e-3;

/// Largest change between two spectra: over the full sorted mass list and,
/// for labels carrying the same multiplicity on both sides, over that label.
pub fn spectrum_jump(a: &MassSpectrum, b: &MassSpectrum) -> f64 {
    let overall = a
        .masses
        .iter()
        .zip(&b.masses)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let per_label = |s: &MassSpectrum, label: &str| {
        let mut v: Vec<f64> = s
            .groups
            .iter()
            .filter(|g| g.label == label)
            .flat_map(|g| std::iter::repeat_n(g.mass, g.degeneracy))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let mut labels: Vec<&str> = a.groups.iter().map(|g| g.label.as_str()).collect();
    labels.sort();
    labels.dedup();
    let mut worst = overall;
    for l in labels {
        let (va, vb) = (per_label(a, l), per_label(b, l));
        if va.len() == vb.len() {
            for (x, y) in va.iter().zip(&vb) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// A refined discontinuity along a 1D path.
#[derive(Clone, Debug, Serialize)]
pub struct Discontinuity {
    /// Midpoint of the final bracket, in the path parameter `t`.
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
    pub jump: f64,
}

/// Path parameter `t` of a point on a diagonal or anti-diagonal path.
fn path_param(lambda: &[f64]) -> f64 {
    lambda[0]
}

fn point_on(path: &PathSpec, t: f64, r: usize) -> Vec<f64> {
    match *path {
        PathSpec::Antidiagonal { c, .. } => vec![t, c - t],
        _ => vec![t; r],
    }
}

/// Finds samples where some labeled mass group jumps by more than
/// [`JUMP_THRESHOLD`], confirms each with cold minimizations at both ends and
/// refines it by bisection to [`REFINE_WIDTH`]. Jumps that shrink below the
/// threshold once refined are dropped, and overlapping brackets are merged.
pub fn detect_discontinuities(
    problem: &StepProblem,
    path: &PathSpec,
    result: &SweepResult,
    mcfg: &MinimizerConfig,
    seed: u64,
) -> Result<Vec<Discontinuity>, Error> {
    if !path.is_one_dimensional() {
        return Err(Error::Invalid("discontinuity detection needs a 1D path".into()));
    }
    let r = problem.source.factors.len();
    let mut out: Vec<Discontinuity> = Vec::new();
    let pts = &result.points;
    for j in 0..pts.len().saturating_sub(1) {
        let (a, b) = (&pts[j], &pts[j + 1]);
        if spectrum_jump(&a.spectrum, &b.spectrum) <= JUMP_THRESHOLD {
            continue;
        }
        let mut lo = path_param(&a.lambda);
        let mut hi = path_param(&b.lambda);
        let warm = vec![a.x.clone(), b.x.clone()];
        let cold = |t: f64, salt: u64| -> Result<(VacuumResult, MassSpectrum), Error> {
            let lam = point_on(path, t, r);
            let res = minimize_at(problem, &lam, mcfg, &warm, mcfg.restarts, seed ^ 0x5EED, salt)?;
            let s = mass_spectrum(&res.config)?;
            Ok((res, s))
        };
        let base_salt = 1_000_000 + 64 * j as u64;
        let (_, mut s_lo) = cold(lo, base_salt)?;
        let (_, mut s_hi) = cold(hi, base_salt + 1)?;
        let jump = spectrum_jump(&s_lo, &s_hi);
        if jump <= JUMP_THRESHOLD {
            continue;
        }
        let mut salt = base_salt + 2;
        while hi - lo > REFINE_WIDTH {
            let mid = 0.5 * (lo + hi);
            let (_, s_mid) = cold(mid, salt)?;
            salt += 1;
            if spectrum_jump(&s_mid, &s_lo) <= spectrum_jump(&s_mid, &s_hi) {
                lo = mid;
                s_lo = s_mid;
            } else {
                hi = mid;
                s_hi = s_mid;
            }
        }
        let jump = spectrum_jump(&s_lo, &s_hi);
        if jump <= JUMP_THRESHOLD {
            // steep but continuous
            continue;
        }
        let d = Discontinuity { t: 0.5 * (lo + hi), lo, hi, jump };
        match out.last_mut() {
            Some(prev) if d.lo - prev.hi < 2.0 * REFINE_WIDTH => {
                if d.jump > prev.jump {
                    *prev = d;
                }
            }
            _ => out.push(d),
        }
    }
    Ok(out)
}
