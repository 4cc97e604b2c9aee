//! Adam in the projected coordinates, with moment rotation at basis changes.
//!
//! Between basis changes the low-rank moments follow ordinary Adam. When the
//! basis moves from `S_prev` to `S_new`, the moments are carried over with
//! `R = S_newᵀ S_prev`: the first moment is rotated (`R M`) and the second is
//! propagated as a variance,
//!
//! ```text
//! V ← β₂ (1 − β₂^{t−1}) | (R∘R)(V − M∘M) + (R M)∘(R M) | + (1 − β₂) G̃∘G̃
//! ```
//!
//! where `∘` is the entrywise product and `t` the index of the step being taken.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("non-finite gradient at step {step}")]
    NonFinite { step: u64 },
    #[error("{what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub bias_correction: bool,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bias_correction: true,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OptimizerError::InvalidHyper(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        Ok(())
    }

    /// `M̂ / (√V̂ + ε)` after `t` steps.
    fn direction(&self, m: &Matrix, v: &Matrix, t: u64) -> Matrix {
        let (c1, c2) = if self.bias_correction {
            let t = t as f64;
            (1.0 - self.beta1.powf(t), 1.0 - self.beta2.powf(t))
        } else {
            (1.0, 1.0)
        };
        m.zip_with("adam direction", v, |mi, vi| {
            (mi / c1) / ((vi / c2).sqrt() + self.eps)
        })
        .expect("moment shapes agree")
    }

    fn regular_update(&self, m: &mut Matrix, v: &mut Matrix, g: &Matrix) {
        let (b1, b2) = (self.beta1, self.beta2);
        for ((mi, vi), &gi) in m
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice().iter_mut())
            .zip(g.as_slice())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
    }
}

/// Element counts of optimizer state for one `m × n` parameter (`m ≤ n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    /// Basis plus two `r × n` moments: `m·r + 2·n·r`.
    pub low_rank: usize,
    /// Two full moments: `2·m·n`.
    pub full: usize,
}

pub fn state_memory_elements(m: usize, n: usize, r: usize) -> MemoryFootprint {
    MemoryFootprint {
        low_rank: m * r + 2 * n * r,
        full: 2 * m * n,
    }
}

/// Adam moments in projected coordinates.
///
/// `prev_basis` shares its allocation with the owning [`SubspaceState`], so
/// the state adds no basis-sized storage of its own.
///
/// [`SubspaceState`]: crate::subspace::SubspaceState
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdamState {
    m_moment: Matrix,
    v_moment: Matrix,
    step: u64,
    prev_basis: Arc<Matrix>,
}

impl LowRankAdamState {
    pub fn new(basis: Arc<Matrix>, n: usize) -> Self {
        let r = basis.cols();
        Self {
            m_moment: Matrix::zeros(r, n),
            v_moment: Matrix::zeros(r, n),
            step: 0,
            prev_basis: basis,
        }
    }

    /// Builds a state from explicit moments; `v` is clamped at zero.
    pub fn from_parts(m: Matrix, v: Matrix, step: u64, prev_basis: Arc<Matrix>) -> Result<Self> {
        let expected = (prev_basis.cols(), m.cols());
        for (what, x) in [("m_moment", &m), ("v_moment", &v)] {
            if x.shape() != expected {
                return Err(OptimizerError::ShapeMismatch {
                    what,
                    expected,
                    got: x.shape(),
                });
            }
        }
        Ok(Self {
            m_moment: m,
            v_moment: v.map(|x| x.max(0.0)),
            step,
            prev_basis,
        })
    }

    pub fn m_moment(&self) -> &Matrix {
        &self.m_moment
    }

    pub fn v_moment(&self) -> &Matrix {
        &self.v_moment
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn prev_basis(&self) -> &Arc<Matrix> {
        &self.prev_basis
    }

    /// Scalars held by the moments.
    pub fn element_count(&self) -> usize {
        self.m_moment.len() + self.v_moment.len()
    }

    fn check_gradient(&self, g_low: &Matrix) -> Result<()> {
        if g_low.shape() != self.m_moment.shape() {
            return Err(OptimizerError::ShapeMismatch {
                what: "low-rank gradient",
                expected: self.m_moment.shape(),
                got: g_low.shape(),
            });
        }
        if !g_low.is_finite() {
            return Err(OptimizerError::NonFinite {
                step: self.step + 1,
            });
        }
        Ok(())
    }

    /// Plain Adam step in the current coordinates; returns the direction.
    pub fn step_regular(&mut self, hyper: &AdamHyper, g_low: &Matrix) -> Result<Matrix> {
        self.check_gradient(g_low)?;
        hyper.regular_update(&mut self.m_moment, &mut self.v_moment, g_low);
        self.step += 1;
        Ok(hyper.direction(&self.m_moment, &self.v_moment, self.step))
    }

    /// Adam step that first carries the moments from `prev_basis` to
    /// `new_basis`; `g_low` must already be projected onto `new_basis`.
    pub fn step_adaptive(
        &mut self,
        hyper: &AdamHyper,
        g_low: &Matrix,
        new_basis: Arc<Matrix>,
    ) -> Result<Matrix> {
        let rot = self.rotation_to(&new_basis)?;
        self.check_gradient(g_low)?;
        let (b1, b2) = (hyper.beta1, hyper.beta2);
        // t − 1 equals the number of steps already taken.
        let history = b2 * (1.0 - b2.powf(self.step as f64));

        let rm = rot.matmul(&self.m_moment)?;
        let centered = self
            .v_moment
            .zip_with("centered", &self.m_moment, |v, m| v - m * m)?;
        let spread = rot.map(|x| x * x).matmul(&centered)?;
        let second = spread.zip_with("second", &rm, |s, x| (s + x * x).abs())?;

        self.m_moment = rm.zip_with("m update", g_low, |x, g| b1 * x + (1.0 - b1) * g)?;
        self.v_moment = second.zip_with("v update", g_low, |s, g| {
            (history * s + (1.0 - b2) * g * g).max(0.0)
        })?;
        self.prev_basis = new_basis;
        self.step += 1;
        Ok(hyper.direction(&self.m_moment, &self.v_moment, self.step))
    }

    /// Adopts `new_basis` leaving the moments in their old coordinates.
    pub fn rebase_stale(&mut self, new_basis: Arc<Matrix>) -> Result<()> {
        self.rotation_to(&new_basis)?;
        self.prev_basis = new_basis;
        Ok(())
    }

    /// Adopts `new_basis` with a naive linear carry-over:
    /// `M ← R M`, `V ← (R∘R) V`.
    pub fn rebase_projected(&mut self, new_basis: Arc<Matrix>) -> Result<()> {
        let rot = self.rotation_to(&new_basis)?;
        self.m_moment = rot.matmul(&self.m_moment)?;
        self.v_moment = rot
            .map(|x| x * x)
            .matmul(&self.v_moment)?
            .map(|x| x.max(0.0));
        self.prev_basis = new_basis;
        Ok(())
    }

    /// `R = new_basisᵀ · prev_basis`.
    fn rotation_to(&self, new_basis: &Matrix) -> Result<Matrix> {
        if new_basis.shape() != self.prev_basis.shape() {
            return Err(OptimizerError::ShapeMismatch {
                what: "new basis",
                expected: self.prev_basis.shape(),
                got: new_basis.shape(),
            });
        }
        // An unchanged orthonormal basis is an exact identity change of
        // coordinates; skip the product so rounding cannot leak in.
        if *new_basis == *self.prev_basis {
            return Ok(Matrix::identity(new_basis.cols()));
        }
        Ok(new_basis.t_matmul(&self.prev_basis)?)
    }
}

/// Ordinary Adam over a whole parameter; used for vector parameters and as
/// the full-rank reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FullAdamState {
    m_moment: Matrix,
    v_moment: Matrix,
    step: u64,
}

impl FullAdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m_moment: Matrix::zeros(rows, cols),
            v_moment: Matrix::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn element_count(&self) -> usize {
        self.m_moment.len() + self.v_moment.len()
    }

    pub fn step(&mut self, hyper: &AdamHyper, g: &Matrix) -> Result<Matrix> {
        if g.shape() != self.m_moment.shape() {
            return Err(OptimizerError::ShapeMismatch {
                what: "gradient",
                expected: self.m_moment.shape(),
                got: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(OptimizerError::NonFinite {
                step: self.step + 1,
            });
        }
        hyper.regular_update(&mut self.m_moment, &mut self.v_moment, g);
        self.step += 1;
        Ok(hyper.direction(&self.m_moment, &self.v_moment, self.step))
    }
}
