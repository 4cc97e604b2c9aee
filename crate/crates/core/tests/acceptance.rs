//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use grassopt::cli::cmd_train;
use grassopt::diagnostics::energy_fraction;
use grassopt::harness::{oracle_for, train, Arm, Cadence, RunConfig, StrategyName};
use grassopt::linalg::{gaussian_matrix, orthonormalize_qr, principal_angles, Matrix};
use grassopt::optimizer::state_memory_elements;
use grassopt::{
    AdamHyper, FullAdamState, LowRankAdamState, RecoveryState, SplitMix64, SubspaceState,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn orthonormal(m: usize, r: usize, rng: &mut SplitMix64) -> Matrix {
    orthonormalize_qr(&gaussian_matrix(m, r, rng).unwrap()).unwrap()
}

fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| lo + (hi - lo) * rng.next_f64())
}

fn manifold_integrity() -> Outcome {
    let mut rng = SplitMix64::new(101);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for m in [16, 64, 128] {
        for r in [2, 8] {
            for eta in [1e-3, 1e-1, 1.0] {
                let mut s =
                    SubspaceState::from_basis(orthonormal(m, r, &mut rng), 1, false).unwrap();
                for _ in 0..200 {
                    s = s.update_grasswalk(eta, false, &mut rng).unwrap();
                    worst = worst.max(s.basis().orthonormality_error());
                }
                let same = s.update_grasswalk(0.0, false, &mut rng).unwrap();
                exact &= same.basis().as_slice() == s.basis().as_slice();
            }
        }
    }
    outcome(
        worst <= 1e-8 && exact,
        format!("max |SᵀS − I| = {worst:.2e} (≤ 1e-8), η = 0 bit-exact: {exact}"),
    )
}

fn geodesic_linearity() -> Outcome {
    let mut rng = SplitMix64::new(202);
    let mut worst: f64 = 0.0;
    for (m, r) in [(16, 2), (64, 8), (128, 4)] {
        for _ in 0..5 {
            let s = SubspaceState::from_basis(orthonormal(m, r, &mut rng), 1, false).unwrap();
            let x = s.sample_tangent(false, &mut rng).unwrap();
            let angles = |eta: f64, rng: &mut SplitMix64| {
                let (next, _) = s.geodesic_step(&x, eta, rng).unwrap();
                principal_angles(s.basis(), next.basis()).unwrap()
            };
            let (e1, e2) = (5e-4, 1e-3);
            let a1 = angles(e1, &mut rng);
            let a2 = angles(e2, &mut rng);
            for eta in [1e-5, 1e-4, 2.5e-4, 1e-3] {
                let a = angles(eta, &mut rng);
                for i in 0..r {
                    let slope = (a2[i] - a1[i]) / (e2 - e1);
                    worst = worst.max((a[i] / eta - slope).abs() / slope);
                }
            }
        }
    }
    outcome(
        worst <= 1e-3,
        format!("max relative deviation from slope = {worst:.2e} (≤ 1e-3)"),
    )
}

fn ao_reduction() -> Outcome {
    let mut rng = SplitMix64::new(303);
    let hyper = AdamHyper::default();
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let (mut worst_id, mut worst_cold): (f64, f64) = (0.0, 0.0);
    let mut m_exact = true;
    for _ in 0..1000 {
        let r = 1 + rng.next_below(8) as usize;
        let n = 1 + rng.next_below(16) as usize;
        let mdim = 2 * r + rng.next_below(8) as usize;
        let step = rng.next_below(500);
        let m0 = gaussian_matrix(r, n, &mut rng).unwrap();
        let v0 = uniform_matrix(r, n, 0.0, 3.0, &mut rng);
        let g = gaussian_matrix(r, n, &mut rng).unwrap();
        let basis = Arc::new(orthonormal(mdim, r, &mut rng));

        let mut ao =
            LowRankAdamState::from_parts(m0.clone(), v0.clone(), step, basis.clone()).unwrap();
        ao.step_adaptive(&hyper, &g, basis.clone()).unwrap();
        let mut reg =
            LowRankAdamState::from_parts(m0.clone(), v0.clone(), step, basis.clone()).unwrap();
        reg.step_regular(&hyper, &g).unwrap();
        m_exact &= ao.m_moment() == reg.m_moment();
        let hist = b2 * (1.0 - b2.powf(step as f64));
        for i in 0..r {
            for j in 0..n {
                let want = hist * v0.get(i, j) + (1.0 - b2) * g.get(i, j).powi(2);
                worst_id = worst_id.max((ao.v_moment().get(i, j) - want).abs());
            }
        }

        // Orthogonal bases make R = 0.
        let prev = Arc::new(Matrix::from_fn(mdim, r, |i, j| (i == j) as u8 as f64));
        let next = Arc::new(Matrix::from_fn(mdim, r, |i, j| (i == j + r) as u8 as f64));
        let mut cold = LowRankAdamState::from_parts(m0, v0, step, prev).unwrap();
        cold.step_adaptive(&hyper, &g, next).unwrap();
        for i in 0..r {
            for j in 0..n {
                let gij = g.get(i, j);
                worst_cold = worst_cold
                    .max((cold.m_moment().get(i, j) - (1.0 - b1) * gij).abs())
                    .max((cold.v_moment().get(i, j) - (1.0 - b2) * gij * gij).abs());
            }
        }
    }
    outcome(
        worst_id <= 1e-12 && worst_cold <= 1e-12 && m_exact,
        format!("R = I: max V err {worst_id:.2e}, M bit-equal {m_exact}; R = 0: max err {worst_cold:.2e} (≤ 1e-12)"),
    )
}

fn moment_rotation_oracle() -> Outcome {
    let mut rng = SplitMix64::new(404);
    let hyper = AdamHyper::default();
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r = 1 + rng.next_below(8) as usize;
        let n = 1 + rng.next_below(16) as usize;
        let mdim = r + 1 + rng.next_below(12) as usize;
        let step = rng.next_below(300);
        let m0 = gaussian_matrix(r, n, &mut rng).unwrap();
        let v0 = uniform_matrix(r, n, 0.0, 2.0, &mut rng);
        let g = gaussian_matrix(r, n, &mut rng).unwrap();
        let prev = Arc::new(orthonormal(mdim, r, &mut rng));
        let next = Arc::new(orthonormal(mdim, r, &mut rng));

        // Scalar transcription.
        let mut rot = vec![vec![0.0; r]; r];
        for (i, row) in rot.iter_mut().enumerate() {
            for (k, x) in row.iter_mut().enumerate() {
                for a in 0..mdim {
                    *x += next.get(a, i) * prev.get(a, k);
                }
            }
        }
        let hist = b2 * (1.0 - b2.powf(step as f64));
        let mut want_m = vec![vec![0.0; n]; r];
        let mut want_v = vec![vec![0.0; n]; r];
        for i in 0..r {
            for j in 0..n {
                let mut rm = 0.0;
                let mut spread = 0.0;
                for k in 0..r {
                    rm += rot[i][k] * m0.get(k, j);
                    spread += rot[i][k] * rot[i][k] * (v0.get(k, j) - m0.get(k, j) * m0.get(k, j));
                }
                let gij = g.get(i, j);
                want_m[i][j] = b1 * rm + (1.0 - b1) * gij;
                want_v[i][j] = (hist * (spread + rm * rm).abs() + (1.0 - b2) * gij * gij).max(0.0);
            }
        }

        let mut st = LowRankAdamState::from_parts(m0, v0, step, prev).unwrap();
        st.step_adaptive(&hyper, &g, next).unwrap();
        for i in 0..r {
            for j in 0..n {
                worst = worst
                    .max((st.m_moment().get(i, j) - want_m[i][j]).abs())
                    .max((st.v_moment().get(i, j) - want_v[i][j]).abs());
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max |production − scalar loop| = {worst:.2e} (≤ 1e-12)"),
    )
}

fn recovery_path() -> Outcome {
    let mut rng = SplitMix64::new(505);
    let hyper = AdamHyper::default();
    let (mut worst_orth, mut worst_growth): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for _ in 0..200 {
        let m = 3 + rng.next_below(30) as usize;
        let n = 1 + rng.next_below(20) as usize;
        let r = 1 + rng.next_below((m - 1) as u64) as usize;
        let zeta = 1.0 + 0.5 * rng.next_f64();
        let s = SubspaceState::from_basis(orthonormal(m, r, &mut rng), 1, false).unwrap();
        let mut rec = RecoveryState::new(zeta, 1e-12).unwrap();
        let mut adam = LowRankAdamState::new(s.basis_handle(), n);
        let mut prev: Option<f64> = None;
        for t in 0..20 {
            let scale = (0.3 * t as f64).exp() * (0.5 + rng.next_f64());
            let g = gaussian_matrix(m, n, &mut rng).unwrap().scale(scale);
            let g_low = s.project(&g).unwrap();
            let dir = adam.step_regular(&hyper, &g_low).unwrap();
            let lambda = rec.scale(&g_low, &dir, &s.residual(&g).unwrap()).unwrap();
            worst_orth = worst_orth.max(s.basis().t_matmul(&lambda).unwrap().max_abs());
            let norm = lambda.frobenius_norm();
            if let Some(p) = prev {
                worst_growth = worst_growth.max(norm - (zeta * p + 1e-12));
            }
            prev = Some(norm);
        }
    }

    // φ = (2, 0.5): ‖G̃ᴼ‖ = (2, 1) over ‖G̃‖ = (1, 2).
    let eps = 1e-12;
    let mut rec = RecoveryState::new(1e6, eps).unwrap();
    let g_low = Matrix::from_rows(&[&[1.0, 2.0]]);
    let g_out = Matrix::from_rows(&[&[2.0, 1.0]]);
    let delta = Matrix::from_rows(&[&[3.0, -4.0], &[1.0, 2.0]]);
    let want_phi = [2.0 / (1.0 + eps), 1.0 / (2.0 + eps)];
    let phi = rec.column_scales(&g_low, &g_out).unwrap();
    let lambda = rec.scale(&g_low, &g_out, &delta).unwrap();
    let want = Matrix::from_fn(2, 2, |i, j| want_phi[j] * delta.get(i, j));
    let hand_err = (phi[0] - want_phi[0])
        .abs()
        .max((phi[1] - want_phi[1]).abs())
        .max(lambda.max_abs_diff(&want));

    outcome(
        worst_orth <= 1e-8 && worst_growth <= 0.0 && hand_err <= 1e-12,
        format!(
            "max |SᵀΛ| = {worst_orth:.2e}, worst limiter excess = {worst_growth:.2e} (≤ 0), hand case err = {hand_err:.2e}"
        ),
    )
}

fn energy_fraction_checks() -> Outcome {
    let mut rng = SplitMix64::new(606);
    let (mut in_range, mut monotone) = (true, true);
    let (mut worst_full, mut worst_identity): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let m = 2 + rng.next_below(20) as usize;
        let n = 1 + rng.next_below(20) as usize;
        let g = gaussian_matrix(m, n, &mut rng).unwrap();
        let q = orthonormal(m, m, &mut rng);
        let mut last = 0.0;
        for r in 1..=m {
            let s = SubspaceState::from_basis(q.columns(0, r), 1, false).unwrap();
            let e = energy_fraction(&s, &g).unwrap();
            in_range &= (0.0..=1.0).contains(&e);
            monotone &= e >= last - 1e-12;
            last = e;
            let d = s.residual(&g).unwrap();
            let cross = (1.0 - (d.frobenius_norm() / g.frobenius_norm()).powi(2))
                .max(0.0)
                .sqrt();
            worst_identity = worst_identity.max((e - cross).abs());
            if r == m {
                worst_full = worst_full.max((e - 1.0).abs());
            }
        }
    }
    outcome(
        in_range && monotone && worst_full <= 1e-12 && worst_identity <= 1e-8,
        format!(
            "in [0,1]: {in_range}, nested monotone: {monotone}, |R − 1| at r = m: {worst_full:.2e}, cross-identity err: {worst_identity:.2e}"
        ),
    )
}

fn error_gradient_fd() -> Outcome {
    let mut rng = SplitMix64::new(707);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = 4 + rng.next_below(20) as usize;
        let n = 1 + rng.next_below(20) as usize;
        let r = 1 + rng.next_below((m - 2) as u64) as usize;
        let s = SubspaceState::from_basis(orthonormal(m, r, &mut rng), 1, false).unwrap();
        let g = gaussian_matrix(m, n, &mut rng).unwrap();
        let grad = s.estimation_error_gradient(&g).unwrap();
        let f = |basis: &Matrix| {
            let inside = basis.matmul(&basis.t_matmul(&g).unwrap()).unwrap();
            g.sub(&inside).unwrap().frobenius_norm().powi(2)
        };
        for _ in 0..5 {
            let x = s.sample_tangent(false, &mut rng).unwrap();
            let x = x.scale(1.0 / x.frobenius_norm());
            let h = 1e-5;
            let mut up = s.basis().clone();
            up.add_scaled(h, &x).unwrap();
            let mut down = s.basis().clone();
            down.add_scaled(-h, &x).unwrap();
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let an: f64 = grad
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| a * b)
                .sum();
            worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
        }
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error = {worst:.2e} (≤ 1e-4)"),
    )
}

fn memory_accounting() -> Outcome {
    let mut rng = SplitMix64::new(808);
    let mut ok = true;
    let mut shown = Vec::new();
    for _ in 0..10 {
        let a = 2 + rng.next_below(100) as usize;
        let b = 2 + rng.next_below(100) as usize;
        let g = gaussian_matrix(a, b, &mut rng).unwrap();
        let (m, n) = (a.min(b), a.max(b));
        let r = 1 + rng.next_below(m as u64) as usize;
        let s = SubspaceState::from_gradient(&g, r, 1).unwrap();
        let adam = LowRankAdamState::new(s.basis_handle(), n);
        let low = s.basis().len() + adam.element_count();
        let full = FullAdamState::new(a, b).element_count();
        let want = state_memory_elements(m, n, r);
        ok &= low == m * r + 2 * n * r
            && low == want.low_rank
            && full == 2 * m * n
            && want.full == full;
        shown.push(format!("{a}×{b}/r{r}:{low}"));
    }
    // And through the training loop.
    let mut c = RunConfig::default();
    c.subspace.rank = Some(8);
    c.run.steps = 2;
    c.run.seed = Some(0);
    let lr = train(&c).unwrap().state_elements;
    let full = oracle_for(&c).unwrap().state_elements;
    ok &= lr == 64 * 8 + 2 * 64 * 8 && full == 2 * 64 * 64;
    outcome(
        ok,
        format!(
            "{} ; harness 64×64/r8: {lr}, oracle: {full}",
            shown.join(" ")
        ),
    )
}

fn desk_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.subspace.interval = 25;
    c.subspace.rank = Some(8);
    c.run.steps = 2000;
    c.run.seed = Some(seed);
    c.run.diagnostics = Cadence::Off;
    c.run.log_every = 2000;
    c
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn arm_losses(strategy: StrategyName, use_ao: bool, use_rs: bool) -> Vec<f64> {
    (0..3)
        .map(|seed| {
            let arm = Arm {
                strategy,
                use_ao,
                use_rs,
            };
            train(&arm.apply(&desk_config(seed)))
                .map(|o| o.final_eval_loss)
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn end_to_end() -> Outcome {
    let oracle: Vec<f64> = (0..3)
        .map(|seed| oracle_for(&desk_config(seed)).unwrap().final_eval_loss)
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [StrategyName::GrassJump, StrategyName::GrassWalk] {
        let losses = arm_losses(s, true, true);
        let ratios: Vec<f64> = losses.iter().zip(&oracle).map(|(l, o)| l / o).collect();
        let med = median(ratios.clone());
        pass &= med <= 1.10;
        parts.push(format!(
            "{}+AO+RS median ratio {med:.4} (per seed {:.4}/{:.4}/{:.4})",
            s.as_str(),
            ratios[0],
            ratios[1],
            ratios[2]
        ));
    }
    outcome(
        pass,
        format!(
            "{}; oracle median {:.3e}; threshold 1.10",
            parts.join(", "),
            median(oracle)
        ),
    )
}

fn ablation_direction() -> Outcome {
    let mut held = 0;
    let mut lines = Vec::new();
    let mut check = |label: String, better: f64, worse: f64| {
        let ok = better <= worse;
        held += ok as usize;
        lines.push(format!(
            "{label}: {better:.4e} ≤ {worse:.4e} {}",
            if ok { "ok" } else { "VIOLATED" }
        ));
    };
    for s in [
        StrategyName::Svd,
        StrategyName::GrassWalk,
        StrategyName::GrassJump,
    ] {
        let both = median(arm_losses(s, true, true));
        let bare = median(arm_losses(s, false, false));
        check(format!("{} AO+RS vs bare", s.as_str()), both, bare);
    }
    let rs = median(arm_losses(StrategyName::GrassJump, false, true));
    let bare = median(arm_losses(StrategyName::GrassJump, false, false));
    check("grass_jump RS vs bare".into(), rs, bare);
    let frac = held as f64 / 4.0;
    outcome(
        frac >= 0.8,
        format!("{held}/4 pairs hold (need ≥ 80%): {}", lines.join("; ")),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.toml");
    std::fs::write(&cfg, RunConfig::default().to_toml()).unwrap();
    let first = dir.path().join("first");
    cmd_train(Some(&cfg), None, &["run.seed=3".into()], &first).unwrap();
    let manifest = first.join("run_manifest.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_train(None, Some(&manifest), &[], &a).unwrap();
    cmd_train(None, Some(&manifest), &[], &b).unwrap();
    let ma = std::fs::read(a.join("metrics.jsonl")).unwrap();
    let mb = std::fs::read(b.join("metrics.jsonl")).unwrap();
    let m0 = std::fs::read(first.join("metrics.jsonl")).unwrap();
    outcome(
        ma == mb && ma == m0 && !ma.is_empty(),
        format!(
            "metrics.jsonl {} bytes, identical across runs: {}",
            ma.len(),
            ma == mb && ma == m0
        ),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let checks: [(u32, &str, Check, Duration); 11] = [
        (
            1,
            "manifold integrity",
            manifold_integrity,
            Duration::from_secs(10),
        ),
        (
            2,
            "geodesic linearity",
            geodesic_linearity,
            Duration::from_secs(10),
        ),
        (3, "AO reduction", ao_reduction, Duration::from_secs(5)),
        (
            4,
            "moment rotation oracle",
            moment_rotation_oracle,
            Duration::MAX,
        ),
        (5, "recovery path", recovery_path, Duration::MAX),
        (6, "energy fraction", energy_fraction_checks, Duration::MAX),
        (
            7,
            "error-gradient finite differences",
            error_gradient_fd,
            Duration::MAX,
        ),
        (8, "memory accounting", memory_accounting, Duration::MAX),
        (
            9,
            "end-to-end convergence",
            end_to_end,
            Duration::from_secs(120),
        ),
        (
            10,
            "ablation direction (soft)",
            ablation_direction,
            Duration::MAX,
        ),
        (11, "determinism", determinism, Duration::MAX),
    ];
    let mut failed = Vec::new();
    for (id, name, check, budget) in checks {
        let started = Instant::now();
        let out = check();
        let took = started.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        let limit = if budget == Duration::MAX {
            String::new()
        } else {
            format!(" / limit {}s", budget.as_secs())
        };
        println!(
            "criterion {id:>2} {}: {name} — {} [{:.2}s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria pass");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
