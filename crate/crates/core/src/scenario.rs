//! Scenario files: a JSON description of one batch job and its runner.
//!
//! ```json
//! {
//!   "kind": "sweep",
//!   "step": "steps/m2_m3.json",
//!   "path": { "kind": "diagonal", "from": -1.0, "to": 3.0, "samples": 801 },
//!   "minimizer": { "restarts": 16 },
//!   "seed": 7,
//!   "out": "out/m2_m3"
//! }
//! ```
//!
//! Relative file names are resolved against the directory of the scenario
//! file. Output is written as CSV and JSON through [`crate::plotdata`].

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::afembed::{family_count_formula, k0_push, phi_apply, BratteliStep, StepFile};
use crate::krajewski::{
    build_phi_h, check_compat, check_j_compat, ko_signs, random_lift, trace_compare, CompatMode, KoSigns,
    KrajewskiDiagram, LiftData, LiftFile, Violation, COMPAT_TOL,
};
use crate::liebasis::build_basis;
use crate::matcore::{AlgElement, AlgebraShape, CMat};
use crate::ncgft::{mass_spectrum, ConnectionConfig, FieldBasis, MassGroup};
use crate::plotdata::{self, SweepPlot, TableRow};
use crate::vacuum::{detect_discontinuities, sweep, Discontinuity, MinimizerConfig, PathSpec, StepProblem};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Masses of the basis configuration of a matrix algebra.
    Basis,
    /// Adapted-basis bookkeeping of one step.
    Embed,
    /// Vacuum sweep along a λ-path.
    Sweep,
    /// Discontinuity table over several steps.
    Table,
    /// Consistency checks of a lift between finite spectral triples.
    KrajewskiCheck,
}

/// Partial [`MinimizerConfig`]; unset fields keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizerOverrides {
    pub restarts: Option<usize>,
    pub init_scale: Option<f64>,
    pub max_iter: Option<usize>,
    pub gtol: Option<f64>,
    pub warm_start: Option<bool>,
    pub restart_stride: Option<usize>,
}

impl MinimizerOverrides {
    pub fn apply(&self, mut c: MinimizerConfig) -> MinimizerConfig {
        if let Some(v) = self.restarts {
            c.restarts = v;
        }
        if let Some(v) = self.init_scale {
            c.init_scale = v;
        }
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        if let Some(v) = self.gtol {
            c.gtol = v;
        }
        if let Some(v) = self.warm_start {
            c.warm_start = v;
        }
        if let Some(v) = self.restart_stride {
            c.restart_stride = v;
        }
        c
    }
}

/// One entry of a `table` scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableCase {
    pub name: String,
    pub step: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Step file (`embed`, `sweep`, `krajewski-check`).
    #[serde(default)]
    pub step: Option<PathBuf>,
    /// Algebra shape for `basis`.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    #[serde(default)]
    pub path: Option<PathSpec>,
    #[serde(default)]
    pub minimizer: MinimizerOverrides,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Run discontinuity detection after a 1D sweep.
    #[serde(default)]
    pub detect: bool,
    /// Steps for `table`; the four built-in cases when empty.
    #[serde(default)]
    pub cases: Vec<TableCase>,
    /// Lift bundle for `krajewski-check`; random lifts of `step` otherwise.
    #[serde(default)]
    pub lift: Option<PathBuf>,
    #[serde(default)]
    pub ko_dim: Option<u8>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_trials() -> usize {
    20
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, Error> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a scenario and makes its file names absolute.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)?;
        let mut s = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        s.resolve(base);
        Ok(s)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.step.as_mut() {
            fix(p);
        }
        if let Some(p) = self.lift.as_mut() {
            fix(p);
        }
        for c in &mut self.cases {
            fix(&mut c.step);
        }
        fix(&mut self.out);
    }

    pub fn minimizer_config(&self) -> MinimizerConfig {
        self.minimizer.apply(MinimizerConfig::default())
    }

    /// Checks the fields required by `kind` and that referenced files exist.
    pub fn validate(&self) -> Result<(), Error> {
        let need_step = matches!(self.kind, ScenarioKind::Embed | ScenarioKind::Sweep)
            || (self.kind == ScenarioKind::KrajewskiCheck && self.lift.is_none());
        if need_step && self.step.is_none() {
            return Err(Error::Invalid(format!("{:?} scenario needs a step file", self.kind)));
        }
        if self.kind == ScenarioKind::Basis && self.shape.is_none() {
            return Err(Error::Invalid("basis scenario needs a shape".into()));
        }
        if self.kind == ScenarioKind::Sweep && self.path.is_none() {
            return Err(Error::Invalid("sweep scenario needs a path".into()));
        }
        if self.kind == ScenarioKind::KrajewskiCheck && self.lift.is_none() {
            match self.ko_dim {
                Some(d) if d < 8 => {}
                _ => return Err(Error::Invalid("random lift checks need ko_dim in 0..8".into())),
            }
        }
        let files = self.step.iter().chain(self.lift.iter()).chain(self.cases.iter().map(|c| &c.step));
        for f in files {
            if !f.is_file() {
                return Err(Error::Invalid(format!("missing file {}", f.display())));
            }
        }
        self.minimizer_config().validate()
    }
}

/// How a run ended once its outputs were written.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// Some minimization stopped before reaching the gradient tolerance.
    NotConverged,
    /// A consistency check reported violations.
    CheckFailed,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub files: Vec<PathBuf>,
}

/// The four steps of the discontinuity table, in their fixed order.
pub fn table_cases() -> Vec<(String, BratteliStep)> {
    let mk = |dims: &[usize], mult: &[usize], m| BratteliStep::simple(dims, mult, m).expect("valid built-in step");
    vec![
        ("M2->M3".into(), mk(&[2], &[1], 3)),
        ("M2+M2->M4".into(), mk(&[2, 2], &[1, 1], 4)),
        ("M2+M2->M5".into(), mk(&[2, 2], &[1, 1], 5)),
        ("M2+M3->M5".into(), mk(&[2, 3], &[1, 1], 5)),
    ]
}

pub fn load_step(path: &Path) -> Result<BratteliStep, Error> {
    BratteliStep::from_json(&fs::read_to_string(path)?)
}

/// Runs a validated scenario. `Err` means nothing useful was written.
pub fn run(s: &Scenario) -> Result<RunOutcome, Error> {
    s.validate()?;
    match s.kind {
        ScenarioKind::Basis => run_basis(s),
        ScenarioKind::Embed => run_embed(s),
        ScenarioKind::Sweep => run_sweep(s),
        ScenarioKind::Table => run_table(s),
        ScenarioKind::KrajewskiCheck => run_krajewski(s),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BasisReport {
    pub shape: Vec<usize>,
    pub v_min: f64,
    pub groups: Vec<MassGroup>,
}

fn run_basis(s: &Scenario) -> Result<RunOutcome, Error> {
    let shape = AlgebraShape::new(s.shape.clone().unwrap_or_default())?;
    let fb = std::sync::Arc::new(FieldBasis::from_generators(&build_basis(&shape))?);
    let config = ConnectionConfig::basis_config(fb);
    let spectrum = mass_spectrum(&config)?;
    let report = BasisReport {
        shape: shape.dims().to_vec(),
        v_min: crate::ncgft::higgs_potential(&config).total,
        groups: spectrum.groups,
    };
    let f = plotdata::write_report(&s.out, "basis.json", &report)?;
    Ok(RunOutcome { status: RunStatus::Ok, files: vec![f] })
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbedFactorReport {
    pub m: usize,
    pub slack: usize,
    pub inherited: usize,
    pub complement: usize,
    pub family_sizes: [usize; 5],
    pub family_formula: [usize; 5],
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbedReport {
    pub step: StepFile,
    pub n_idof: usize,
    pub n_ndof: usize,
    pub r_dof: f64,
    pub k0_unit: Vec<i64>,
    pub factors: Vec<EmbedFactorReport>,
}

/// Degree-of-freedom counts `(n_ndof, n_idof)` of a prepared step.
pub fn dof_counts(problem: &StepProblem) -> (usize, usize) {
    let nd = problem.adapted.factors.iter().map(|f| f.complement.len()).sum();
    let ni = problem.adapted.factors.iter().map(|f| f.inherited.len()).sum();
    (nd, ni)
}

fn embed_report(step: &BratteliStep, problem: &StepProblem) -> Result<EmbedReport, Error> {
    let (n_ndof, n_idof) = dof_counts(problem);
    let unit: Vec<i64> = step.shape_a().dims().iter().map(|&n| n as i64).collect();
    let factors = problem
        .adapted
        .factors
        .iter()
        .enumerate()
        .map(|(k, f)| EmbedFactorReport {
            m: f.m,
            slack: step.slack(k),
            inherited: f.inherited.len(),
            complement: f.complement.len(),
            family_sizes: f.family_sizes(),
            family_formula: family_count_formula(step, k),
        })
        .collect();
    Ok(EmbedReport {
        step: step.to_file(),
        n_idof,
        n_ndof,
        r_dof: n_ndof as f64 / n_idof as f64,
        k0_unit: k0_push(step, &unit)?,
        factors,
    })
}

fn run_embed(s: &Scenario) -> Result<RunOutcome, Error> {
    let step = load_step(s.step.as_deref().expect("validated"))?;
    let problem = StepProblem::new(step.clone())?;
    let report = embed_report(&step, &problem)?;
    let f = plotdata::write_report(&s.out, "embed.json", &report)?;
    Ok(RunOutcome { status: RunStatus::Ok, files: vec![f] })
}

fn run_sweep(s: &Scenario) -> Result<RunOutcome, Error> {
    let step = load_step(s.step.as_deref().expect("validated"))?;
    let path = s.path.clone().expect("validated");
    let mcfg = s.minimizer_config();
    let problem = StepProblem::new(step)?;
    let result = sweep(&problem, &path, &mcfg, s.seed)?;
    let jumps = if s.detect && path.is_one_dimensional() {
        detect_discontinuities(&problem, &path, &result, &mcfg, s.seed)?
    } else {
        Vec::new()
    };
    let files = plotdata::write_sweep(&s.out, &SweepPlot::from_sweep(&result, &jumps))?;
    let status = if result.all_converged() { RunStatus::Ok } else { RunStatus::NotConverged };
    Ok(RunOutcome { status, files })
}

/// `(λ_first, λ_second)`: the first discontinuity strictly between the null
/// and basis configurations, and the first one beyond the basis configuration.
pub fn first_and_second(jumps: &[Discontinuity]) -> (Option<f64>, Option<f64>) {
    let first = jumps.iter().map(|d| d.t).find(|&t| t > 0.0 && t < 1.0);
    let second = jumps.iter().map(|d| d.t).find(|&t| t > 1.0);
    (first, second)
}

/// One table row: sweep the diagonal and pick out the two discontinuities.
pub fn table_row(
    name: &str,
    step: BratteliStep,
    path: &PathSpec,
    mcfg: &MinimizerConfig,
    seed: u64,
) -> Result<(TableRow, bool), Error> {
    let problem = StepProblem::new(step)?;
    let (n_ndof, n_idof) = dof_counts(&problem);
    let result = sweep(&problem, path, mcfg, seed)?;
    let jumps = detect_discontinuities(&problem, path, &result, mcfg, seed)?;
    let (lambda_first, lambda_second) = first_and_second(&jumps);
    let row = TableRow {
        case: name.to_string(),
        n_ndof,
        n_idof,
        r_dof: n_ndof as f64 / n_idof as f64,
        lambda_first,
        lambda_second,
    };
    Ok((row, result.all_converged()))
}

fn run_table(s: &Scenario) -> Result<RunOutcome, Error> {
    let path = s.path.clone().unwrap_or_else(|| PathSpec::diagonal(-1.0, 3.0));
    if !matches!(path, PathSpec::Diagonal { .. }) {
        return Err(Error::Invalid("table scenarios sweep a diagonal path".into()));
    }
    let cases = if s.cases.is_empty() {
        table_cases()
    } else {
        s.cases.iter().map(|c| Ok((c.name.clone(), load_step(&c.step)?))).collect::<Result<_, Error>>()?
    };
    let mcfg = s.minimizer_config();
    let mut rows = Vec::new();
    let mut converged = true;
    for (name, step) in cases {
        let (row, ok) = table_row(&name, step, &path, &mcfg, s.seed)?;
        converged &= ok;
        rows.push(row);
    }
    let files = plotdata::write_table(&s.out, &rows)?;
    let status = if converged { RunStatus::Ok } else { RunStatus::NotConverged };
    Ok(RunOutcome { status, files })
}

/// Checks of one lift.
#[derive(Clone, Debug, Serialize)]
pub struct LiftCheck {
    pub violations_a: Vec<Violation>,
    pub violations_b: Vec<Violation>,
    pub norms: Vec<f64>,
    /// `max |Φ†Φ − 1|` of the normalized lift.
    pub isometry_defect: f64,
    pub j_violations: usize,
    /// Worst strong residual of `(π_𝒜(a), π_ℬ(φ(a)))` and of the opposite actions.
    pub action_residual: f64,
    /// `|Tr(B_1B_2B_3) − Tr(A_1A_2A_3) − tnic|` on algebra actions.
    pub trace_residual: f64,
    pub ok: bool,
    /// Set when the lift could not be normalized.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct KrajewskiReport {
    pub ko_dim: u8,
    pub signs: KoSigns,
    pub checks: Vec<LiftCheck>,
    pub ok: bool,
}

/// Runs every check on one lift, using `rng` for the random algebra elements.
pub fn check_lift<R: rand::Rng + ?Sized>(
    lift: &LiftData,
    ka: &KrajewskiDiagram,
    kb: &KrajewskiDiagram,
    rng: &mut R,
) -> LiftCheck {
    let violations_a = ka.validate().err().unwrap_or_default();
    let violations_b = kb.validate().err().unwrap_or_default();
    let mut out = LiftCheck {
        violations_a,
        violations_b,
        norms: Vec::new(),
        isometry_defect: f64::NAN,
        j_violations: 0,
        action_residual: f64::NAN,
        trace_residual: f64::NAN,
        ok: false,
        error: None,
    };
    let result = (|| -> Result<(), Error> {
        out.j_violations = check_j_compat(lift, ka, kb)?.len();
        let phi = build_phi_h(lift, ka, kb)?;
        out.norms = phi.norms.clone();
        let gram = &phi.matrix.adjoint() * &phi.matrix;
        out.isometry_defect = (&gram - &CMat::identity(gram.rows())).max_abs();
        let step = &lift.step;
        let mut worst: f64 = 0.0;
        let mut pairs = Vec::new();
        for _ in 0..3 {
            let a = AlgElement::random(step.shape_a(), rng);
            let fa = phi_apply(step, &a, false)?;
            let (pa, pb) = (ka.pi(&a), kb.pi(&fa));
            worst = worst.max(check_compat(&pa, &pb, &phi.matrix, CompatMode::Strong)?.strong_residual);
            let (oa, ob) = (ka.pi_opposite(&a), kb.pi_opposite(&fa));
            worst = worst.max(check_compat(&oa, &ob, &phi.matrix, CompatMode::Strong)?.strong_residual);
            pairs.push((pa, pb));
        }
        out.action_residual = worst;
        let t = trace_compare(&pairs, &phi.matrix)?;
        out.trace_residual = (t.tr_b - t.tr_a - t.tnic).norm();
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    out.ok = out.error.is_none()
        && out.violations_a.is_empty()
        && out.violations_b.is_empty()
        && out.j_violations == 0
        && out.isometry_defect < 1e-12
        && out.action_residual < COMPAT_TOL
        && out.trace_residual < COMPAT_TOL;
    out
}

fn run_krajewski(s: &Scenario) -> Result<RunOutcome, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (ko_dim, checks) = if let Some(p) = &s.lift {
        let file: LiftFile =
            serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Parse(e.to_string()))?;
        let (lift, ka, kb) = file.into_parts()?;
        (ka.ko_dim, vec![check_lift(&lift, &ka, &kb, &mut rng)])
    } else {
        let step = load_step(s.step.as_deref().expect("validated"))?;
        let d = s.ko_dim.expect("validated");
        let mut checks = Vec::with_capacity(s.trials);
        for _ in 0..s.trials {
            let (lift, ka, kb) = random_lift(&step, d, 1, true, &mut rng)?;
            checks.push(check_lift(&lift, &ka, &kb, &mut rng));
        }
        (d, checks)
    };
    let ok = checks.iter().all(|c| c.ok);
    let report = KrajewskiReport { ko_dim, signs: ko_signs(ko_dim)?, checks, ok };
    let f = plotdata::write_report(&s.out, "krajewski.json", &report)?;
    let status = if ok { RunStatus::Ok } else { RunStatus::CheckFailed };
    Ok(RunOutcome { status, files: vec![f] })
}
