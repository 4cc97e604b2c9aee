//! Rank-r projection bases and the strategies that move them.
//!
//! A [`SubspaceState`] holds an orthonormal `m × r` basis in the *working
//! frame*, where the gradient has at most as many rows as columns. Parameters
//! with more rows than columns are transposed on the way in
//! ([`SubspaceState::to_working`]) and back on the way out
//! ([`SubspaceState::to_parameter`]). Every other method expects and returns
//! working-frame matrices.

use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::rng::SplitMix64;

/// Basis drift above which a GrassWalk step is re-orthonormalized.
pub const ORTHONORMALITY_GUARD: f64 = 1e-10;

/// Tangent directions whose largest singular value is below this are treated
/// as degenerate and resampled.
pub const DEGENERATE_TANGENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubspaceError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("rank {rank} must be between 1 and {max}")]
    InvalidRank { rank: usize, max: usize },
    #[error("{op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("grasswalk step size must be finite and non-negative, got {0}")]
    InvalidStepSize(f64),
    #[error("tangent direction degenerate after {attempts} samples")]
    DegenerateTangent { attempts: usize },
    #[error("random basis rank deficient after {attempts} samples")]
    RandomBasisFailed { attempts: usize },
    #[error("basis is not orthonormal (max |SᵀS − I| = {0:e})")]
    NotOrthonormal(f64),
}

pub type Result<T> = std::result::Result<T, SubspaceError>;

/// How the basis moves at interval boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SubspaceStrategy {
    /// Top-r left singular vectors of the current gradient.
    SvdUpdate,
    /// Geodesic step of size `eta` along a random horizontal direction.
    GrassWalk { eta: f64 },
    /// Fresh random orthonormal basis.
    GrassJump,
    /// Never moves.
    Frozen,
}

impl SubspaceStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SubspaceStrategy::SvdUpdate => "svd",
            SubspaceStrategy::GrassWalk { .. } => "grass_walk",
            SubspaceStrategy::GrassJump => "grass_jump",
            SubspaceStrategy::Frozen => "frozen",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SubspaceStrategy::GrassWalk { eta } if !(eta.is_finite() && eta > 0.0) => {
                Err(SubspaceError::InvalidStepSize(eta))
            }
            _ => Ok(()),
        }
    }
}

/// `max(4, min(m, n) / 8)`, capped at `min(m, n)`.
pub fn default_rank(m: usize, n: usize) -> usize {
    let small = m.min(n);
    (small / 8).max(4).min(small)
}

/// First `r` left singular vectors of `g`. When `g` has fewer than `r`
/// columns, the rest is filled with canonical vectors orthogonalized against
/// what is already there.
fn leading_left_vectors(g: &Matrix, r: usize) -> Result<Matrix> {
    let u = linalg::thin_svd(g)?.u;
    if u.cols() >= r {
        return Ok(u.columns(0, r));
    }
    let m = u.rows();
    let mut cols: Vec<Vec<f64>> = (0..u.cols()).map(|j| u.column(j)).collect();
    for i in 0..m {
        if cols.len() == r {
            break;
        }
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        // Two passes keep the result orthogonal to working precision.
        for _ in 0..2 {
            for c in &cols {
                let d = linalg::dot(c, &e);
                e.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = linalg::dot(&e, &e).sqrt();
        if norm > 0.5 {
            cols.push(e.into_iter().map(|x| x / norm).collect());
        }
    }
    Ok(Matrix::from_columns(m, &cols))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceState {
    basis: Arc<Matrix>,
    update_interval: usize,
    steps_since_update: usize,
    transposed: bool,
    degenerate: bool,
}

impl SubspaceState {
    /// Basis from the leading `r` left singular vectors of `g0` (parameter
    /// frame). A zero gradient falls back to the first `r` canonical vectors
    /// and sets [`SubspaceState::is_degenerate`].
    pub fn from_gradient(g0: &Matrix, r: usize, update_interval: usize) -> Result<Self> {
        let transposed = g0.rows() > g0.cols();
        let g = if transposed {
            Cow::Owned(g0.transpose())
        } else {
            Cow::Borrowed(g0)
        };
        let m = g.rows();
        if r == 0 || r > m {
            return Err(SubspaceError::InvalidRank { rank: r, max: m });
        }
        g.ensure_finite("init_from_gradient")?;
        let (basis, degenerate) = if linalg::frobenius_norm(&g) == 0.0 {
            (Matrix::eye(m, r), true)
        } else {
            (leading_left_vectors(&g, r)?, false)
        };
        Ok(Self {
            basis: Arc::new(basis),
            update_interval: update_interval.max(1),
            steps_since_update: 0,
            transposed,
            degenerate,
        })
    }

    /// Wraps an explicit working-frame basis, which must be orthonormal.
    pub fn from_basis(basis: Matrix, update_interval: usize, transposed: bool) -> Result<Self> {
        if basis.cols() == 0 || basis.cols() > basis.rows() {
            return Err(SubspaceError::InvalidRank {
                rank: basis.cols(),
                max: basis.rows(),
            });
        }
        let err = basis.orthonormality_error();
        if err > 1e-8 {
            return Err(SubspaceError::NotOrthonormal(err));
        }
        Ok(Self {
            basis: Arc::new(basis),
            update_interval: update_interval.max(1),
            steps_since_update: 0,
            transposed,
            degenerate: false,
        })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Shared handle to the basis; the optimizer keeps one to rotate moments
    /// without copying the matrix.
    pub fn basis_handle(&self) -> Arc<Matrix> {
        Arc::clone(&self.basis)
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    /// Working-frame row count (the smaller parameter dimension).
    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn update_interval(&self) -> usize {
        self.update_interval
    }

    pub fn steps_since_update(&self) -> usize {
        self.steps_since_update
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    /// True when the last initialization or SVD update saw a zero gradient.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Counts one optimizer step; returns true when an update is due.
    pub fn tick(&mut self) -> bool {
        self.steps_since_update += 1;
        self.steps_since_update >= self.update_interval
    }

    pub fn to_working<'a>(&self, g: &'a Matrix) -> Cow<'a, Matrix> {
        if self.transposed {
            Cow::Owned(g.transpose())
        } else {
            Cow::Borrowed(g)
        }
    }

    pub fn to_parameter(&self, x: Matrix) -> Matrix {
        if self.transposed {
            x.transpose()
        } else {
            x
        }
    }

    fn check_rows(&self, op: &'static str, g: &Matrix) -> Result<()> {
        if g.rows() != self.dim() {
            return Err(SubspaceError::ShapeMismatch {
                op,
                expected: (self.dim(), g.cols()),
                got: g.shape(),
            });
        }
        Ok(())
    }

    /// `Sᵀ G` (r × n).
    pub fn project(&self, g: &Matrix) -> Result<Matrix> {
        self.check_rows("project", g)?;
        Ok(self.basis.t_matmul(g)?)
    }

    /// `S · g_low` (m × n).
    pub fn lift(&self, g_low: &Matrix) -> Result<Matrix> {
        if g_low.rows() != self.rank() {
            return Err(SubspaceError::ShapeMismatch {
                op: "lift",
                expected: (self.rank(), g_low.cols()),
                got: g_low.shape(),
            });
        }
        Ok(self.basis.matmul(g_low)?)
    }

    /// `G − S Sᵀ G`.
    pub fn residual(&self, g: &Matrix) -> Result<Matrix> {
        let inside = self.lift(&self.project(g)?)?;
        Ok(g.sub(&inside)?)
    }

    fn with_basis(&self, basis: Matrix, degenerate: bool) -> Self {
        Self {
            basis: Arc::new(basis),
            update_interval: self.update_interval,
            steps_since_update: 0,
            transposed: self.transposed,
            degenerate,
        }
    }

    /// Dispatches one boundary update. `g` is the working-frame gradient.
    pub fn update(
        &self,
        strategy: SubspaceStrategy,
        g: &Matrix,
        raw_tangent: bool,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        match strategy {
            SubspaceStrategy::SvdUpdate => self.update_svd(g),
            SubspaceStrategy::GrassWalk { eta } => self.update_grasswalk(eta, raw_tangent, rng),
            SubspaceStrategy::GrassJump => self.update_grassjump(rng),
            SubspaceStrategy::Frozen => {
                let mut next = self.clone();
                next.steps_since_update = 0;
                Ok(next)
            }
        }
    }

    /// Random `m × r` Gaussian direction, projected onto the horizontal space
    /// `(I − S Sᵀ) X` unless `raw` is set.
    pub fn sample_tangent(&self, raw: bool, rng: &mut SplitMix64) -> Result<Matrix> {
        let x = linalg::gaussian_matrix(self.dim(), self.rank(), rng)?;
        if raw {
            return Ok(x);
        }
        let vertical = self.basis.matmul(&self.basis.t_matmul(&x)?)?;
        Ok(x.sub(&vertical)?)
    }

    /// Moves along the geodesic with initial direction `x` for time `eta`.
    ///
    /// With `X ≈ Û Σ̂ V̂ᵀ` (randomized SVD), the new basis is
    /// `S V̂ cos(Σ̂η) V̂ᵀ + Û sin(Σ̂η) V̂ᵀ + S (I − V̂ V̂ᵀ)`, evaluated as
    /// `S + S V̂ (cos(Σ̂η) − I) V̂ᵀ + Û sin(Σ̂η) V̂ᵀ` so that `eta = 0` returns
    /// `S` bit for bit. Returns the new state and `Σ̂`.
    pub fn geodesic_step(
        &self,
        x: &Matrix,
        eta: f64,
        rng: &mut SplitMix64,
    ) -> Result<(Self, Vec<f64>)> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(SubspaceError::InvalidStepSize(eta));
        }
        if x.shape() != self.basis.shape() {
            return Err(SubspaceError::ShapeMismatch {
                op: "geodesic_step",
                expected: self.basis.shape(),
                got: x.shape(),
            });
        }
        let r = self.rank();
        let svd = linalg::randomized_svd(x, r, 0, 1, rng)?;
        let half_angles: Vec<f64> = svd.s.iter().map(|s| 0.5 * s * eta).collect();
        let cos_minus_one: Vec<f64> = half_angles.iter().map(|h| -2.0 * h.sin().powi(2)).collect();
        let sin: Vec<f64> = svd.s.iter().map(|s| (s * eta).sin()).collect();

        let s_v = self.basis.matmul(&svd.v)?;
        let along = s_v.scale_columns(&cos_minus_one).matmul_t(&svd.v)?;
        let across = svd.u.scale_columns(&sin).matmul_t(&svd.v)?;
        let mut next = (*self.basis).clone();
        next.add_scaled(1.0, &along)?;
        next.add_scaled(1.0, &across)?;
        next.ensure_finite("grasswalk")?;
        if next.orthonormality_error() > ORTHONORMALITY_GUARD {
            next = linalg::orthonormalize_qr(&next)?;
        }
        Ok((self.with_basis(next, false), svd.s))
    }

    /// GrassWalk: fresh random direction, then one geodesic step of size `eta`.
    /// A degenerate direction is resampled once before failing.
    pub fn update_grasswalk(
        &self,
        eta: f64,
        raw_tangent: bool,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(SubspaceError::InvalidStepSize(eta));
        }
        if self.rank() == self.dim() {
            // Gr(m, m) is a single point.
            return Ok(self.with_basis((*self.basis).clone(), false));
        }
        const ATTEMPTS: usize = 2;
        for _ in 0..ATTEMPTS {
            let x = self.sample_tangent(raw_tangent, rng)?;
            if linalg::frobenius_norm(&x) < DEGENERATE_TANGENT {
                continue;
            }
            let (next, sigma) = self.geodesic_step(&x, eta, rng)?;
            if sigma.first().copied().unwrap_or(0.0) < DEGENERATE_TANGENT {
                continue;
            }
            return Ok(next);
        }
        Err(SubspaceError::DegenerateTangent { attempts: ATTEMPTS })
    }

    /// GrassJump: QR of a fresh Gaussian matrix, independent of the old basis.
    pub fn update_grassjump(&self, rng: &mut SplitMix64) -> Result<Self> {
        const ATTEMPTS: usize = 3;
        for _ in 0..ATTEMPTS {
            let x = linalg::gaussian_matrix(self.dim(), self.rank(), rng)?;
            match linalg::orthonormalize_qr(&x) {
                Ok(q) => return Ok(self.with_basis(q, false)),
                Err(LinalgError::RankDeficient { .. }) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(SubspaceError::RandomBasisFailed { attempts: ATTEMPTS })
    }

    /// Top-r left singular vectors of `g`. A zero gradient keeps the current
    /// basis and marks the state degenerate.
    pub fn update_svd(&self, g: &Matrix) -> Result<Self> {
        self.check_rows("update_svd", g)?;
        if linalg::frobenius_norm(g) == 0.0 {
            return Ok(self.with_basis((*self.basis).clone(), true));
        }
        Ok(self.with_basis(leading_left_vectors(g, self.rank())?, false))
    }

    /// Riemannian gradient of `f(S) = ‖G − S Sᵀ G‖_F²` on the Grassmannian:
    /// `−2 (I − S Sᵀ) G Gᵀ S`.
    pub fn estimation_error_gradient(&self, g: &Matrix) -> Result<Matrix> {
        self.check_rows("estimation_error_gradient", g)?;
        let gts = g.t_matmul(&self.basis)?;
        let ggts = g.matmul(&gts)?;
        let vertical = self.basis.matmul(&self.basis.t_matmul(&ggts)?)?;
        Ok(ggts.sub(&vertical)?.scale(-2.0))
    }
}
