//! Recovery scaling of the discarded residual and the final weight update.
//!
//! The part of the gradient outside the subspace, `Δ = G − S Sᵀ G`, is put back
//! into the update after a columnwise rescale by how much the optimizer
//! stretched each projected column:
//!
//! ```text
//! φ_i = ‖G̃ᴼ[:, i]‖ / (‖G̃[:, i]‖ + eps_col),   Λ[:, i] = φ_i Δ[:, i]
//! ```
//!
//! A growth limiter caps `‖Λ_t‖_F ≤ ζ ‖Λ_{t−1}‖_F` by uniform rescaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::subspace::{SubspaceError, SubspaceState};

pub const DEFAULT_ZETA: f64 = 1.01;
pub const DEFAULT_EPS_COL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecoveryError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error("{what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite scale factor in column {column}")]
    NonFiniteScale { column: usize },
    #[error("weight update produced non-finite values")]
    NonFiniteUpdate,
    #[error("invalid recovery setting: {0}")]
    InvalidSetting(String),
}

pub type Result<T> = std::result::Result<T, RecoveryError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryState {
    zeta: f64,
    eps_col: f64,
    prev_norm: Option<f64>,
}

impl Default for RecoveryState {
    fn default() -> Self {
        Self {
            zeta: DEFAULT_ZETA,
            eps_col: DEFAULT_EPS_COL,
            prev_norm: None,
        }
    }
}

impl RecoveryState {
    pub fn new(zeta: f64, eps_col: f64) -> Result<Self> {
        if !(zeta.is_finite() && zeta > 1.0) {
            return Err(RecoveryError::InvalidSetting(format!(
                "zeta must be finite and > 1, got {zeta}"
            )));
        }
        if !(eps_col.is_finite() && eps_col > 0.0) {
            return Err(RecoveryError::InvalidSetting(format!(
                "eps_col must be positive, got {eps_col}"
            )));
        }
        Ok(Self {
            zeta,
            eps_col,
            prev_norm: None,
        })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn eps_col(&self) -> f64 {
        self.eps_col
    }

    pub fn prev_norm(&self) -> Option<f64> {
        self.prev_norm
    }

    /// Per-column ratios `φ_i`.
    pub fn column_scales(&self, g_low: &Matrix, g_low_out: &Matrix) -> Result<Vec<f64>> {
        if g_low.shape() != g_low_out.shape() {
            return Err(RecoveryError::ShapeMismatch {
                what: "optimizer output",
                expected: g_low.shape(),
                got: g_low_out.shape(),
            });
        }
        let inputs = g_low.column_norms();
        let outputs = g_low_out.column_norms();
        inputs
            .iter()
            .zip(&outputs)
            .enumerate()
            .map(|(column, (&i, &o))| {
                let phi = o / (i + self.eps_col);
                if phi.is_finite() {
                    Ok(phi)
                } else {
                    Err(RecoveryError::NonFiniteScale { column })
                }
            })
            .collect()
    }

    /// Scaled residual `Λ` after the growth limiter. Records `‖Λ‖_F` for the
    /// next call.
    ///
    /// The limiter is skipped on the first call. If the previous norm is zero
    /// and the new one is not, the new norm reseeds the limiter instead of
    /// forcing `Λ` to zero forever.
    pub fn scale(&mut self, g_low: &Matrix, g_low_out: &Matrix, delta: &Matrix) -> Result<Matrix> {
        if delta.cols() != g_low.cols() {
            return Err(RecoveryError::ShapeMismatch {
                what: "residual",
                expected: (delta.rows(), g_low.cols()),
                got: delta.shape(),
            });
        }
        let phi = self.column_scales(g_low, g_low_out)?;
        let mut lambda = delta.scale_columns(&phi);
        let mut norm = linalg::frobenius_norm(&lambda);
        if let Some(prev) = self.prev_norm {
            let cap = self.zeta * prev;
            if prev > 0.0 && norm > cap {
                lambda = lambda.scale(cap / norm);
                norm = linalg::frobenius_norm(&lambda);
            }
        }
        self.prev_norm = Some(norm);
        Ok(lambda)
    }
}

/// `Δ = G − S Sᵀ G` in the working frame.
pub fn residual(g: &Matrix, state: &SubspaceState) -> Result<Matrix> {
    Ok(state.residual(g)?)
}

/// `W − α Ĝ − α Λ`.
pub fn apply_update(w: &Matrix, alpha: f64, g_hat: &Matrix, lambda: &Matrix) -> Result<Matrix> {
    for (what, x) in [("lifted direction", g_hat), ("recovery term", lambda)] {
        if x.shape() != w.shape() {
            return Err(RecoveryError::ShapeMismatch {
                what,
                expected: w.shape(),
                got: x.shape(),
            });
        }
    }
    let mut out = w.clone();
    apply_update_in_place(&mut out, alpha, g_hat, Some(lambda))?;
    Ok(out)
}

/// In-place form of [`apply_update`]; `lambda = None` means `Λ = 0`.
pub fn apply_update_in_place(
    w: &mut Matrix,
    alpha: f64,
    g_hat: &Matrix,
    lambda: Option<&Matrix>,
) -> Result<()> {
    w.add_scaled(-alpha, g_hat)?;
    if let Some(l) = lambda {
        w.add_scaled(-alpha, l)?;
    }
    if !w.is_finite() {
        return Err(RecoveryError::NonFiniteUpdate);
    }
    Ok(())
}
