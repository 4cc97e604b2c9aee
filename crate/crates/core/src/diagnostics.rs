//! Gradient-subspace measurements: how much gradient energy the basis keeps,
//! and the singular spectrum of the estimation-error gradient.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::subspace::{Result, SubspaceState};

/// Number of singular values kept per spectrum record by default.
pub const DEFAULT_SPECTRUM_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub param_id: String,
    pub ratio: f64,
    /// Set when the gradient was exactly zero and `ratio` is the convention 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub step: usize,
    pub param_id: String,
    pub top_singular_values: Vec<f64>,
}

/// `‖Sᵀ G‖_F / ‖G‖_F`, or 1 for a zero gradient.
pub fn energy_fraction(state: &SubspaceState, g: &Matrix) -> Result<f64> {
    let total = linalg::frobenius_norm(g);
    let kept = linalg::frobenius_norm(&state.project(g)?);
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok((kept / total).min(1.0))
}

pub fn energy_record(
    state: &SubspaceState,
    g: &Matrix,
    step: usize,
    param_id: &str,
) -> Result<EnergyRecord> {
    Ok(EnergyRecord {
        step,
        param_id: param_id.to_string(),
        ratio: energy_fraction(state, g)?,
        zero_gradient: linalg::frobenius_norm(g) == 0.0,
    })
}

/// Top `min(k, r)` singular values of the estimation-error gradient.
pub fn error_gradient_spectrum(
    state: &SubspaceState,
    g: &Matrix,
    k: usize,
    step: usize,
    param_id: &str,
) -> Result<SpectrumRecord> {
    let d = state.estimation_error_gradient(g)?;
    let mut s = linalg::thin_svd(&d)?.s;
    s.truncate(k.min(state.rank()));
    Ok(SpectrumRecord {
        step,
        param_id: param_id.to_string(),
        top_singular_values: s,
    })
}

/// Entrywise maximum of the spectra whose `param_id` starts with `prefix`.
/// Shorter records count as zero past their end. No match gives an empty
/// vector.
pub fn aggregate_max_per_index<'a, I>(records: I, prefix: &str) -> Vec<f64>
where
    I: IntoIterator<Item = &'a SpectrumRecord>,
{
    let mut out: Vec<f64> = Vec::new();
    for rec in records
        .into_iter()
        .filter(|r| r.param_id.starts_with(prefix))
    {
        if out.len() < rec.top_singular_values.len() {
            out.resize(rec.top_singular_values.len(), 0.0);
        }
        for (o, &s) in out.iter_mut().zip(&rec.top_singular_values) {
            *o = o.max(s);
        }
    }
    out
}
