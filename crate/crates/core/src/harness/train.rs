//! The training loop: low-rank Adam with subspace updates every `interval`
//! steps, optional moment rotation and residual recovery.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, EnergyRecord, SpectrumRecord};
use crate::linalg::Matrix;
use crate::optimizer::{AdamHyper, FullAdamState, LowRankAdamState, OptimizerError};
use crate::recovery::{self, RecoveryError, RecoveryState};
use crate::rng::SplitMix64;
use crate::subspace::{default_rank, SubspaceError, SubspaceState, SubspaceStrategy};

use super::config::{AoOff, BasisInit, Cadence, RunConfig, RunSection};
use super::task::{Model, Param, Task};

/// Training loss above this counts as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("diverged at step {step} (loss {loss}); config: {config}")]
    Divergence {
        step: usize,
        loss: f64,
        config: String,
    },
    #[error("{param} at step {step}: {source}")]
    Subspace {
        param: String,
        step: usize,
        #[source]
        source: SubspaceError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub energy: Vec<EnergyRecord>,
    pub spectrum: Vec<SpectrumRecord>,
    /// Milliseconds since the start of training; only with
    /// `run.record_wall_time`.
    pub wall_ms: Option<f64>,
    pub state_elements: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub series: Vec<MetricsRecord>,
    pub final_eval_loss: f64,
    pub final_train_loss: Option<f64>,
    pub state_elements: usize,
    /// Basis each low-rank parameter started from (working frame).
    pub initial_bases: Vec<(String, Matrix)>,
    pub weights: Vec<Param>,
}

enum Slot {
    LowRank {
        sub: SubspaceState,
        adam: LowRankAdamState,
        rec: RecoveryState,
        rng: SplitMix64,
    },
    Full(FullAdamState),
}

impl Slot {
    fn elements(&self) -> usize {
        match self {
            Slot::LowRank { sub, adam, .. } => sub.basis().len() + adam.element_count(),
            Slot::Full(f) => f.element_count(),
        }
    }
}

fn echo(config: &RunConfig) -> String {
    serde_json::to_string(config).unwrap_or_default()
}

fn warmup_factor(step: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}

/// Runs the low-rank optimizer described by `config`.
pub fn train(config: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    run(config, false)
}

/// Full-rank Adam on `config.task` with the same data, init, warmup and
/// logging as [`train`]; subspace and recovery settings are ignored.
pub fn oracle_for(config: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    config.task.validate().map_err(HarnessError::Config)?;
    config
        .optimizer
        .hyper()
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    run(config, true)
}

/// Full-rank Adam baseline with default warmup and logging.
pub fn full_adam_oracle(
    task: &Task,
    hyper: &AdamHyper,
    steps: usize,
    seed: u64,
) -> Result<TrainOutcome, HarnessError> {
    let mut config = RunConfig {
        task: task.clone(),
        run: RunSection {
            steps,
            seed: Some(seed),
            ..RunSection::default()
        },
        ..RunConfig::default()
    };
    config.optimizer.lr = hyper.lr;
    config.optimizer.beta1 = hyper.beta1;
    config.optimizer.beta2 = hyper.beta2;
    config.optimizer.eps = hyper.eps;
    config.optimizer.bias_correction = hyper.bias_correction;
    oracle_for(&config)
}

fn run(config: &RunConfig, full: bool) -> Result<TrainOutcome, HarnessError> {
    let seed = config.resolved_seed().map_err(HarnessError::Config)?;
    let hyper = config.optimizer.hyper();
    let strategy = config.strategy();
    let steps = config.run.steps;
    let start = Instant::now();
    let mut model = config.task.build(seed);

    let diverged = |step: usize, loss: f64| HarnessError::Divergence {
        step,
        loss,
        config: echo(config),
    };
    let sub_err = |param: &str, step: usize, source: SubspaceError| HarnessError::Subspace {
        param: param.to_string(),
        step,
        source,
    };

    let first = if steps > 0 {
        Some(model.loss_and_grads(0))
    } else {
        None
    };
    let g0: Vec<Matrix> = match &first {
        Some((_, g)) => g.clone(),
        None => model.loss_and_grads(0).1,
    };

    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut slots = Vec::with_capacity(names.len());
    let mut initial_bases = Vec::new();
    for (p, g) in model.params().iter().zip(&g0) {
        let (rows, cols) = p.value.shape();
        if full || !p.is_matrix() {
            slots.push(Slot::Full(FullAdamState::new(rows, cols)));
            continue;
        }
        let small = rows.min(cols);
        let r = config
            .subspace
            .rank
            .unwrap_or_else(|| default_rank(rows, cols))
            .min(small);
        let interval = config.subspace.interval;
        let sub = match config.subspace.init {
            BasisInit::Svd => SubspaceState::from_gradient(g, r, interval),
            BasisInit::Identity => {
                let transposed = rows > cols;
                SubspaceState::from_basis(Matrix::eye(small, r), interval, transposed)
            }
        }
        .map_err(|e| sub_err(&p.name, 0, e))?;
        let n = if sub.is_transposed() { rows } else { cols };
        initial_bases.push((p.name.clone(), sub.basis().clone()));
        slots.push(Slot::LowRank {
            adam: LowRankAdamState::new(sub.basis_handle(), n),
            sub,
            rec: RecoveryState::new(config.recovery.zeta, config.recovery.eps_col)
                .map_err(|e| HarnessError::Config(e.to_string()))?,
            rng: SplitMix64::derive(seed, &format!("subspace/{}", p.name)),
        });
    }

    let mut series = Vec::new();
    let mut last_train = None;
    let mut pending = first;
    for step in 0..steps {
        let (loss, grads) = pending.take().unwrap_or_else(|| model.loss_and_grads(step));
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(diverged(step, loss));
        }
        last_train = Some(loss);
        let lr = hyper.lr * warmup_factor(step, config.run.warmup);
        let diag_now = match config.run.diagnostics {
            Cadence::Off => false,
            Cadence::EveryStep => true,
            Cadence::Boundaries => step % config.subspace.interval == 0,
        };
        let mut energy = Vec::new();
        let mut spectrum = Vec::new();

        for ((slot, param), (g, name)) in slots
            .iter_mut()
            .zip(model.params_mut().iter_mut())
            .zip(grads.iter().zip(&names))
        {
            match slot {
                Slot::Full(adam) => {
                    let dir = adam
                        .step(&hyper, g)
                        .map_err(|e| opt_fail(e, step, loss, config))?;
                    recovery::apply_update_in_place(&mut param.value, lr, &dir, None)
                        .map_err(|_| diverged(step, loss))?;
                }
                Slot::LowRank {
                    sub,
                    adam,
                    rec,
                    rng,
                } => {
                    let gw = sub.to_working(g).into_owned();
                    let boundary = step > 0 && sub.tick();
                    if diag_now {
                        spectrum.push(
                            diagnostics::error_gradient_spectrum(
                                sub,
                                &gw,
                                config.run.spectrum_k,
                                step,
                                name,
                            )
                            .map_err(|e| sub_err(name, step, e))?,
                        );
                    }
                    let dir_low = if boundary {
                        let next = sub
                            .update(strategy, &gw, config.subspace.raw_tangent, rng)
                            .map_err(|e| sub_err(name, step, e))?;
                        let g_low = next.project(&gw).map_err(|e| sub_err(name, step, e))?;
                        let handle: Arc<Matrix> = next.basis_handle();
                        let dir =
                            if config.optimizer.use_ao && strategy != SubspaceStrategy::Frozen {
                                adam.step_adaptive(&hyper, &g_low, handle)
                            } else {
                                match config.optimizer.ao_off {
                                    AoOff::Stale => adam.rebase_stale(handle),
                                    AoOff::Projected => adam.rebase_projected(handle),
                                }
                                .and_then(|_| adam.step_regular(&hyper, &g_low))
                            }
                            .map_err(|e| opt_fail(e, step, loss, config))?;
                        *sub = next;
                        (g_low, dir)
                    } else {
                        let g_low = sub.project(&gw).map_err(|e| sub_err(name, step, e))?;
                        let dir = adam
                            .step_regular(&hyper, &g_low)
                            .map_err(|e| opt_fail(e, step, loss, config))?;
                        (g_low, dir)
                    };
                    if diag_now {
                        energy.push(
                            diagnostics::energy_record(sub, &gw, step, name)
                                .map_err(|e| sub_err(name, step, e))?,
                        );
                    }
                    let (g_low, dir) = dir_low;
                    let mut update = sub.lift(&dir).map_err(|e| sub_err(name, step, e))?;
                    if config.recovery.use_rs {
                        let delta = sub.residual(&gw).map_err(|e| sub_err(name, step, e))?;
                        let lambda = rec.scale(&g_low, &dir, &delta).map_err(|e| match e {
                            RecoveryError::Subspace(s) => sub_err(name, step, s),
                            _ => diverged(step, loss),
                        })?;
                        update.add_scaled(1.0, &lambda).expect("same shape");
                    }
                    let update = sub.to_parameter(update);
                    recovery::apply_update_in_place(&mut param.value, lr, &update, None)
                        .map_err(|_| diverged(step, loss))?;
                }
            }
        }

        let log_now = step % config.run.log_every == 0 || step + 1 == steps || diag_now;
        if log_now {
            let eval_loss = model.eval_loss();
            if !eval_loss.is_finite() {
                return Err(diverged(step, eval_loss));
            }
            series.push(MetricsRecord {
                step,
                train_loss: loss,
                eval_loss,
                energy,
                spectrum,
                wall_ms: config
                    .run
                    .record_wall_time
                    .then(|| start.elapsed().as_secs_f64() * 1e3),
                state_elements: slots.iter().map(Slot::elements).sum(),
            });
        }
    }

    let final_eval_loss = match series.last() {
        Some(r) if r.step + 1 == steps => r.eval_loss,
        _ => model.eval_loss(),
    };
    Ok(TrainOutcome {
        series,
        final_eval_loss,
        final_train_loss: last_train,
        state_elements: slots.iter().map(Slot::elements).sum(),
        initial_bases,
        weights: model.params().to_vec(),
    })
}

fn opt_fail(e: OptimizerError, step: usize, loss: f64, config: &RunConfig) -> HarnessError {
    match e {
        OptimizerError::NonFinite { .. } => HarnessError::Divergence {
            step,
            loss,
            config: echo(config),
        },
        other => HarnessError::Config(other.to_string()),
    }
}

/// Weights of a freshly built model.
pub fn initial_weights(config: &RunConfig) -> Result<Vec<Param>, HarnessError> {
    let seed = config.resolved_seed().map_err(HarnessError::Config)?;
    let model: Box<dyn Model> = config.task.build(seed);
    Ok(model.params().to_vec())
}
