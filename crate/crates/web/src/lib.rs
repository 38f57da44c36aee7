//! Browser bindings: basis-configuration masses, adapted-basis counts of a
//! step, and the potential along the scaled basis configuration.
//!
//! The plain functions return JSON strings and are what the tests call; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use std::sync::Arc;

use afgauge::afembed::{adapted_basis, family_count_formula, BratteliStep};
use afgauge::liebasis::build_basis;
use afgauge::matcore::AlgebraShape;
use afgauge::ncgft::{higgs_potential, mass_spectrum, ConnectionConfig, FieldBasis};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_N: usize = 8;

fn plain_basis(dims: Vec<usize>) -> Result<Arc<FieldBasis>, String> {
    let shape = AlgebraShape::new(dims).map_err(|e| e.to_string())?;
    FieldBasis::from_generators(&build_basis(&shape)).map(Arc::new).map_err(|e| e.to_string())
}

fn check_n(n: usize) -> Result<(), String> {
    if (2..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(format!("n must be between 2 and {MAX_N}"))
    }
}

/// Labeled gauge masses of the basis configuration on `M_n`.
pub fn basis_masses_json(n: usize) -> Result<String, String> {
    check_n(n)?;
    let s = mass_spectrum(&ConnectionConfig::basis_config(plain_basis(vec![n])?)).map_err(|e| e.to_string())?;
    let groups: Vec<_> = s.groups.iter().map(|g| json!({ "label": g.label, "mass": g.mass, "degeneracy": g.degeneracy })).collect();
    Ok(json!({ "n": n, "groups": groups, "trace_directions": s.trace_directions }).to_string())
}

/// Inherited/complement counts and family sizes for a step file.
pub fn embed_counts_json(step_json: &str) -> Result<String, String> {
    let step = BratteliStep::from_json(step_json).map_err(|e| e.to_string())?;
    if step.shape_b().dims().iter().any(|&m| m > 12) {
        return Err("target blocks larger than 12 are not supported here".into());
    }
    let ab = adapted_basis(&step, &build_basis(step.shape_a())).map_err(|e| e.to_string())?;
    let factors: Vec<_> = ab
        .factors
        .iter()
        .enumerate()
        .map(|(k, f)| {
            json!({
                "m": f.m,
                "slack": step.slack(k),
                "inherited": f.inherited.len(),
                "complement": f.complement.len(),
                "family_sizes": f.family_sizes(),
                "family_formula": family_count_formula(&step, k),
            })
        })
        .collect();
    let n_idof: usize = ab.factors.iter().map(|f| f.inherited.len()).sum();
    let n_ndof: usize = ab.factors.iter().map(|f| f.complement.len()).sum();
    Ok(json!({ "n_idof": n_idof, "n_ndof": n_ndof, "factors": factors }).to_string())
}

/// `V` at `B = λE` on `M_n`, next to `n(n²−1)λ²(λ−1)²`.
pub fn scaled_potential_json(n: usize, lambda: f64) -> Result<String, String> {
    check_n(n)?;
    if !lambda.is_finite() {
        return Err("λ must be finite".into());
    }
    let v = higgs_potential(&ConnectionConfig::scaled_basis(plain_basis(vec![n])?, lambda));
    let closed = (n * (n * n - 1)) as f64 * lambda * lambda * (lambda - 1.0) * (lambda - 1.0);
    Ok(json!({ "n": n, "lambda": lambda, "v": v.total, "closed_form": closed }).to_string())
}

#[wasm_bindgen]
pub fn basis_masses(n: usize) -> Result<String, JsError> {
    basis_masses_json(n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn embed_counts(step_json: &str) -> Result<String, JsError> {
    embed_counts_json(step_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scaled_potential(n: usize, lambda: f64) -> Result<String, JsError> {
    scaled_potential_json(n, lambda).map_err(|e| JsError::new(&e))
}
