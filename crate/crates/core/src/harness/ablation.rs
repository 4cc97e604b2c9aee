//! Strategy × AO × RS ablation grid.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{RunConfig, StrategyName};
use super::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Arm {
    pub strategy: StrategyName,
    pub use_ao: bool,
    pub use_rs: bool,
}

impl Arm {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.subspace.strategy = self.strategy;
        c.optimizer.use_ao = self.use_ao;
        c.recovery.use_rs = self.use_rs;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub arm: Arm,
    /// `None` when the arm failed; see `status`.
    pub final_eval_loss: Option<f64>,
    pub elements: usize,
    pub wall_ms: f64,
    /// `"ok"` or the error message.
    pub status: String,
}

/// All 14 arms: every strategy with AO and RS on/off, except AO for the
/// frozen basis.
pub fn grid() -> Vec<Arm> {
    let mut arms = Vec::new();
    for strategy in StrategyName::ALL {
        for use_ao in [false, true] {
            if use_ao && strategy == StrategyName::Frozen {
                continue;
            }
            for use_rs in [false, true] {
                arms.push(Arm {
                    strategy,
                    use_ao,
                    use_rs,
                });
            }
        }
    }
    arms
}

fn run_arm(base: &RunConfig, arm: Arm) -> AblationRow {
    let started = Instant::now();
    let result = train(&arm.apply(base));
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(out) => AblationRow {
            arm,
            final_eval_loss: Some(out.final_eval_loss),
            elements: out.state_elements,
            wall_ms,
            status: "ok".into(),
        },
        Err(e) => AblationRow {
            arm,
            final_eval_loss: None,
            elements: 0,
            wall_ms,
            status: e.to_string(),
        },
    }
}

/// Runs every arm of [`grid`] on `base` with up to `jobs` threads. Rows come
/// back in grid order whatever the parallelism; a failing arm does not stop
/// the others.
pub fn run_ablation_grid(base: &RunConfig, jobs: usize) -> Vec<AblationRow> {
    let arms = grid();
    if jobs <= 1 {
        return arms.into_iter().map(|a| run_arm(base, a)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| arms.into_par_iter().map(|a| run_arm(base, a)).collect()),
        Err(_) => arms.into_iter().map(|a| run_arm(base, a)).collect(),
    }
}
