//! Synthetic training tasks with hand-written gradients.

use serde::{Deserialize, Serialize};

use crate::linalg::{gaussian_matrix, Matrix};
use crate::rng::SplitMix64;

/// A named trainable tensor. Both vectors and matrices are stored as
/// [`Matrix`]; vectors are `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

impl Param {
    fn new(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }

    /// Matrix-shaped parameters take the low-rank path.
    pub fn is_matrix(&self) -> bool {
        self.value.rows() > 1 && self.value.cols() > 1
    }
}

pub trait Model: Send {
    fn params(&self) -> &[Param];
    fn params_mut(&mut self) -> &mut [Param];
    /// Training loss at the current weights and its gradient for every
    /// parameter, for the batch assigned to `step`.
    fn loss_and_grads(&self, step: usize) -> (f64, Vec<Matrix>);
    fn eval_loss(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Multi-output least squares with a rank-`true_rank` teacher
    /// `y = W* x + noise`; `w` is `m × n`.
    LowRankRegression {
        m: usize,
        n: usize,
        true_rank: usize,
        noise_std: f64,
        #[serde(default = "default_train_samples")]
        train_samples: usize,
        #[serde(default = "default_eval_samples")]
        eval_samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
    },
    /// Gaussian-cluster classification with a tanh MLP; 80% of `samples`
    /// train, the rest evaluate.
    MlpClassification {
        input_dim: usize,
        hidden_dims: Vec<usize>,
        classes: usize,
        samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
    },
    /// Causal character-level transformer on a synthetic Markov-chain stream.
    TinyTransformerLm {
        vocab: usize,
        d_model: usize,
        layers: usize,
        heads: usize,
        seq_len: usize,
        #[serde(default = "default_batch")]
        batch: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
    },
}

fn default_train_samples() -> usize {
    256
}

fn default_eval_samples() -> usize {
    256
}

fn default_batch() -> usize {
    8
}

impl Default for Task {
    fn default() -> Self {
        Task::LowRankRegression {
            m: 64,
            n: 64,
            true_rank: 4,
            noise_std: 0.01,
            train_samples: default_train_samples(),
            eval_samples: default_eval_samples(),
            data_seed: None,
        }
    }
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::LowRankRegression { .. } => "low_rank_regression",
            Task::MlpClassification { .. } => "mlp_classification",
            Task::TinyTransformerLm { .. } => "tiny_transformer_lm",
        }
    }

    pub fn data_seed(&self) -> Option<u64> {
        match *self {
            Task::LowRankRegression { data_seed, .. }
            | Task::MlpClassification { data_seed, .. }
            | Task::TinyTransformerLm { data_seed, .. } => data_seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Task::LowRankRegression {
                m,
                n,
                true_rank,
                noise_std,
                train_samples,
                eval_samples,
                ..
            } => {
                if *m == 0
                    || *n == 0
                    || *true_rank == 0
                    || *train_samples == 0
                    || *eval_samples == 0
                {
                    return Err("regression dimensions must be positive".into());
                }
                if *true_rank > (*m).min(*n) {
                    return Err(format!("true_rank {true_rank} exceeds min(m, n)"));
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    return Err(format!(
                        "noise_std must be finite and >= 0, got {noise_std}"
                    ));
                }
            }
            Task::MlpClassification {
                input_dim,
                hidden_dims,
                classes,
                samples,
                ..
            } => {
                if *input_dim == 0 || *classes < 2 || *samples < 5 || hidden_dims.contains(&0) {
                    return Err("mlp needs positive dims, >= 2 classes and >= 5 samples".into());
                }
            }
            Task::TinyTransformerLm {
                vocab,
                d_model,
                layers,
                heads,
                seq_len,
                batch,
                ..
            } => {
                if *vocab < 2
                    || *d_model == 0
                    || *layers == 0
                    || *heads == 0
                    || *seq_len == 0
                    || *batch == 0
                {
                    return Err("transformer dimensions must be positive (vocab >= 2)".into());
                }
                if d_model % heads != 0 {
                    return Err(format!("d_model {d_model} not divisible by heads {heads}"));
                }
            }
        }
        Ok(())
    }

    /// Builds data and initial weights; `seed` is used when the task has no
    /// `data_seed` of its own.
    pub fn build(&self, seed: u64) -> Box<dyn Model> {
        let seed = self.data_seed().unwrap_or(seed);
        match self {
            Task::LowRankRegression {
                m,
                n,
                true_rank,
                noise_std,
                train_samples,
                eval_samples,
                ..
            } => Box::new(Regression::new(
                *m,
                *n,
                *true_rank,
                *noise_std,
                *train_samples,
                *eval_samples,
                seed,
            )),
            Task::MlpClassification {
                input_dim,
                hidden_dims,
                classes,
                samples,
                ..
            } => Box::new(Mlp::new(*input_dim, hidden_dims, *classes, *samples, seed)),
            Task::TinyTransformerLm {
                vocab,
                d_model,
                layers,
                heads,
                seq_len,
                batch,
                ..
            } => Box::new(Transformer::new(
                *vocab, *d_model, *layers, *heads, *seq_len, *batch, seed,
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Low-rank regression

/// Sufficient statistics of a sample set: `XXᵀ/N`, `YXᵀ/N`, `‖Y‖²/N`.
struct Moments {
    sigma: Matrix,
    cross: Matrix,
    yy: f64,
}

impl Moments {
    fn sample(teacher: &Matrix, noise_std: f64, samples: usize, rng: &mut SplitMix64) -> Self {
        let (m, n) = teacher.shape();
        let x = gaussian_matrix(n, samples, rng).expect("positive dims");
        let mut y = teacher.matmul(&x).expect("shapes");
        let noise = gaussian_matrix(m, samples, rng).expect("positive dims");
        y.add_scaled(noise_std, &noise).expect("shapes");
        let inv = 1.0 / samples as f64;
        Self {
            sigma: x.matmul_t(&x).expect("shapes").scale(inv),
            cross: y.matmul_t(&x).expect("shapes").scale(inv),
            yy: y.as_slice().iter().map(|v| v * v).sum::<f64>() * inv,
        }
    }

    /// `‖WX − Y‖² / (2 N m)` and its gradient `(WΣ − C) / m`.
    fn loss_and_grad(&self, w: &Matrix) -> (f64, Matrix) {
        let m = w.rows() as f64;
        let ws = w.matmul(&self.sigma).expect("shapes");
        let quad: f64 = ws
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let lin: f64 = self
            .cross
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let loss = (quad - 2.0 * lin + self.yy) / (2.0 * m);
        let grad = ws.sub(&self.cross).expect("shapes").scale(1.0 / m);
        (loss.max(0.0), grad)
    }
}

pub struct Regression {
    params: Vec<Param>,
    train: Moments,
    eval: Moments,
    teacher: Matrix,
}

impl Regression {
    pub fn new(
        m: usize,
        n: usize,
        true_rank: usize,
        noise_std: f64,
        train_samples: usize,
        eval_samples: usize,
        seed: u64,
    ) -> Self {
        let mut rng = SplitMix64::derive(seed, "regression/teacher");
        let a = gaussian_matrix(m, true_rank, &mut rng).expect("positive dims");
        let b = gaussian_matrix(n, true_rank, &mut rng).expect("positive dims");
        let teacher = a
            .matmul_t(&b)
            .expect("shapes")
            .scale(1.0 / ((true_rank * n) as f64).sqrt());
        let train = Moments::sample(
            &teacher,
            noise_std,
            train_samples,
            &mut SplitMix64::derive(seed, "regression/train"),
        );
        let eval = Moments::sample(
            &teacher,
            noise_std,
            eval_samples,
            &mut SplitMix64::derive(seed, "regression/eval"),
        );
        Self {
            params: vec![Param::new("w", Matrix::zeros(m, n))],
            train,
            eval,
            teacher,
        }
    }

    pub fn teacher(&self) -> &Matrix {
        &self.teacher
    }
}

impl Model for Regression {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn loss_and_grads(&self, _step: usize) -> (f64, Vec<Matrix>) {
        let (loss, grad) = self.train.loss_and_grad(&self.params[0].value);
        (loss, vec![grad])
    }

    fn eval_loss(&self) -> f64 {
        self.eval.loss_and_grad(&self.params[0].value).0
    }
}

// ---------------------------------------------------------------------------
// MLP classification

pub struct Mlp {
    params: Vec<Param>,
    train_x: Matrix,
    train_y: Vec<usize>,
    eval_x: Matrix,
    eval_y: Vec<usize>,
}

impl Mlp {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        samples: usize,
        seed: u64,
    ) -> Self {
        let mut data_rng = SplitMix64::derive(seed, "mlp/data");
        let centers = gaussian_matrix(classes, input_dim, &mut data_rng)
            .expect("positive dims")
            .scale(1.5 / (input_dim as f64).sqrt() * (input_dim as f64).sqrt().min(3.0));
        let mut xs = Vec::with_capacity(samples * input_dim);
        let mut ys = Vec::with_capacity(samples);
        for _ in 0..samples {
            let c = data_rng.next_below(classes as u64) as usize;
            for j in 0..input_dim {
                xs.push(centers.get(c, j) + data_rng.next_gaussian());
            }
            ys.push(c);
        }
        let n_train = (samples * 4) / 5;
        let train_x =
            Matrix::new(n_train, input_dim, xs[..n_train * input_dim].to_vec()).expect("len");
        let eval_x = Matrix::new(
            samples - n_train,
            input_dim,
            xs[n_train * input_dim..].to_vec(),
        )
        .expect("len");

        let mut init = SplitMix64::derive(seed, "mlp/init");
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let mut params = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = gaussian_matrix(fan_out, fan_in, &mut init)
                .expect("positive dims")
                .scale(1.0 / (fan_in as f64).sqrt());
            params.push(Param::new(format!("l{l}.weight"), weight));
            params.push(Param::new(format!("l{l}.bias"), Matrix::zeros(1, fan_out)));
        }
        Self {
            params,
            train_x,
            train_y: ys[..n_train].to_vec(),
            eval_x,
            eval_y: ys[n_train..].to_vec(),
        }
    }

    fn layers(&self) -> usize {
        self.params.len() / 2
    }

    /// Pre-activations for every layer plus the hidden activations.
    fn forward(&self, x: &Matrix) -> (Vec<Matrix>, Vec<Matrix>) {
        let mut acts = vec![x.clone()];
        let mut pre = Vec::new();
        for l in 0..self.layers() {
            let w = &self.params[2 * l].value;
            let b = &self.params[2 * l + 1].value;
            let mut z = acts[l].matmul_t(w).expect("shapes");
            add_row(&mut z, b);
            if l + 1 < self.layers() {
                acts.push(z.map(f64::tanh));
            }
            pre.push(z);
        }
        (pre, acts)
    }

    fn loss_on(&self, x: &Matrix, y: &[usize]) -> f64 {
        let (pre, _) = self.forward(x);
        softmax_xent(pre.last().expect("layers"), y).0
    }
}

impl Model for Mlp {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn loss_and_grads(&self, _step: usize) -> (f64, Vec<Matrix>) {
        let (pre, acts) = self.forward(&self.train_x);
        let (loss, mut delta) = softmax_xent(pre.last().expect("layers"), &self.train_y);
        let mut grads = vec![Matrix::zeros(0, 0); self.params.len()];
        for l in (0..self.layers()).rev() {
            grads[2 * l] = delta.t_matmul(&acts[l]).expect("shapes");
            grads[2 * l + 1] = column_sums(&delta);
            if l > 0 {
                let back = delta.matmul(&self.params[2 * l].value).expect("shapes");
                delta = back
                    .zip_with("tanh'", &acts[l], |d, a| d * (1.0 - a * a))
                    .expect("shapes");
            }
        }
        (loss, grads)
    }

    fn eval_loss(&self) -> f64 {
        self.loss_on(&self.eval_x, &self.eval_y)
    }
}

fn add_row(z: &mut Matrix, b: &Matrix) {
    let cols = z.cols();
    for (i, x) in z.as_mut_slice().iter_mut().enumerate() {
        *x += b.as_slice()[i % cols];
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
    out
}

/// Mean cross-entropy over rows and its gradient with respect to `logits`.
fn softmax_xent(logits: &Matrix, targets: &[usize]) -> (f64, Matrix) {
    let (n, k) = logits.shape();
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        loss += max + sum.ln() - row[t];
        for (j, z) in row.iter().enumerate() {
            let p = (z - max).exp() / sum;
            grad.set(i, j, (p - if j == t { 1.0 } else { 0.0 }) / n as f64);
        }
    }
    (loss / n as f64, grad)
}

// ---------------------------------------------------------------------------
// Tiny transformer

const TRAIN_TOKENS: usize = 20_000;
const EVAL_SEQUENCES: usize = 16;

pub struct Transformer {
    params: Vec<Param>,
    d_model: usize,
    layers: usize,
    heads: usize,
    seq_len: usize,
    batch: usize,
    seed: u64,
    train_stream: Vec<usize>,
    eval_stream: Vec<usize>,
}

/// Per-layer activations kept for the backward pass.
struct LayerCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Vec<Matrix>,
    o: Matrix,
    x1: Matrix,
    u: Matrix,
    h: Matrix,
}

const TOK: usize = 0;
const POS: usize = 1;
const PER_LAYER: usize = 6;

impl Transformer {
    pub fn new(
        vocab: usize,
        d_model: usize,
        layers: usize,
        heads: usize,
        seq_len: usize,
        batch: usize,
        seed: u64,
    ) -> Self {
        let (train_stream, eval_stream) = markov_streams(vocab, seed);
        let mut init = SplitMix64::derive(seed, "transformer/init");
        let d = d_model;
        let ff = 4 * d;
        let mut g = |r: usize, c: usize, std: f64| {
            gaussian_matrix(r, c, &mut init)
                .expect("positive dims")
                .scale(std)
        };
        let proj_std = 1.0 / (d as f64).sqrt();
        let resid_std = proj_std / ((2 * layers) as f64).sqrt();
        let mut params = vec![
            Param::new("tok_emb", g(vocab, d, 0.5)),
            Param::new("pos_emb", g(seq_len, d, 0.1)),
        ];
        for l in 0..layers {
            params.push(Param::new(format!("l{l}.attn.wq"), g(d, d, proj_std)));
            params.push(Param::new(format!("l{l}.attn.wk"), g(d, d, proj_std)));
            params.push(Param::new(format!("l{l}.attn.wv"), g(d, d, proj_std)));
            params.push(Param::new(format!("l{l}.attn.wo"), g(d, d, resid_std)));
            params.push(Param::new(format!("l{l}.mlp.w1"), g(d, ff, proj_std)));
            params.push(Param::new(
                format!("l{l}.mlp.w2"),
                g(ff, d, resid_std * (d as f64 / ff as f64).sqrt()),
            ));
        }
        params.push(Param::new("head", g(d, vocab, proj_std)));
        Self {
            params,
            d_model,
            layers,
            heads,
            seq_len,
            batch,
            seed,
            train_stream,
            eval_stream,
        }
    }

    fn layer_param(&self, l: usize, which: usize) -> &Matrix {
        &self.params[2 + l * PER_LAYER + which].value
    }

    fn head_index(&self) -> usize {
        2 + self.layers * PER_LAYER
    }

    fn batch_starts(&self, step: usize) -> Vec<usize> {
        let mut rng = SplitMix64::derive(
            self.seed ^ (step as u64).wrapping_mul(0x9E37_79B9),
            "transformer/batch",
        );
        let span = (self.train_stream.len() - self.seq_len - 1) as u64;
        (0..self.batch)
            .map(|_| rng.next_below(span) as usize)
            .collect()
    }

    /// Loss and (optionally) accumulated gradients for one sequence.
    fn sequence(&self, tokens: &[usize], grads: Option<&mut [Matrix]>, scale: f64) -> f64 {
        let t_len = self.seq_len;
        let d = self.d_model;
        let dh = d / self.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let tok = &self.params[TOK].value;
        let pos = &self.params[POS].value;

        let mut x = Matrix::from_fn(t_len, d, |i, j| tok.get(tokens[i], j) + pos.get(i, j));
        let mut caches = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let q = x.matmul(self.layer_param(l, 0)).expect("shapes");
            let k = x.matmul(self.layer_param(l, 1)).expect("shapes");
            let v = x.matmul(self.layer_param(l, 2)).expect("shapes");
            let mut o = Matrix::zeros(t_len, d);
            let mut attn = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let c0 = h * dh;
                let mut a = Matrix::zeros(t_len, t_len);
                for i in 0..t_len {
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        let s = inv_sqrt
                            * (0..dh)
                                .map(|c| q.get(i, c0 + c) * k.get(j, c0 + c))
                                .sum::<f64>();
                        a.set(i, j, s);
                        max = max.max(s);
                    }
                    let mut sum = 0.0;
                    for j in 0..=i {
                        let e = (a.get(i, j) - max).exp();
                        a.set(i, j, e);
                        sum += e;
                    }
                    for j in 0..=i {
                        a.set(i, j, a.get(i, j) / sum);
                    }
                    for c in 0..dh {
                        let val: f64 = (0..=i).map(|j| a.get(i, j) * v.get(j, c0 + c)).sum();
                        o.set(i, c0 + c, val);
                    }
                }
                attn.push(a);
            }
            let mut x1 = x.clone();
            x1.add_scaled(1.0, &o.matmul(self.layer_param(l, 3)).expect("shapes"))
                .expect("shapes");
            let u = x1.matmul(self.layer_param(l, 4)).expect("shapes");
            let hact = u.map(|z| z.max(0.0));
            let mut x2 = x1.clone();
            x2.add_scaled(1.0, &hact.matmul(self.layer_param(l, 5)).expect("shapes"))
                .expect("shapes");
            caches.push(LayerCache {
                x,
                q,
                k,
                v,
                attn,
                o,
                x1,
                u,
                h: hact,
            });
            x = x2;
        }
        let head = &self.params[self.head_index()].value;
        let logits = x.matmul(head).expect("shapes");
        let (loss, dlogits) = softmax_xent(&logits, &tokens[1..=t_len]);

        let Some(grads) = grads else {
            return loss;
        };
        let dlogits = dlogits.scale(scale);
        let hi = self.head_index();
        grads[hi]
            .add_scaled(1.0, &x.t_matmul(&dlogits).expect("shapes"))
            .expect("shapes");
        let mut dx = dlogits.matmul_t(head).expect("shapes");
        for l in (0..self.layers).rev() {
            let c = &caches[l];
            let base = 2 + l * PER_LAYER;
            // MLP block.
            grads[base + 5]
                .add_scaled(1.0, &c.h.t_matmul(&dx).expect("shapes"))
                .expect("shapes");
            let dh_act = dx.matmul_t(self.layer_param(l, 5)).expect("shapes");
            let du = dh_act
                .zip_with("relu'", &c.u, |g, z| if z > 0.0 { g } else { 0.0 })
                .expect("shapes");
            grads[base + 4]
                .add_scaled(1.0, &c.x1.t_matmul(&du).expect("shapes"))
                .expect("shapes");
            let mut dx1 = dx;
            dx1.add_scaled(1.0, &du.matmul_t(self.layer_param(l, 4)).expect("shapes"))
                .expect("shapes");
            // Attention block.
            grads[base + 3]
                .add_scaled(1.0, &c.o.t_matmul(&dx1).expect("shapes"))
                .expect("shapes");
            let d_o = dx1.matmul_t(self.layer_param(l, 3)).expect("shapes");
            let mut dq = Matrix::zeros(t_len, d);
            let mut dk = Matrix::zeros(t_len, d);
            let mut dv = Matrix::zeros(t_len, d);
            for (h, a) in c.attn.iter().enumerate() {
                let c0 = h * dh;
                for i in 0..t_len {
                    let mut da = vec![0.0; i + 1];
                    for (j, daj) in da.iter_mut().enumerate() {
                        *daj = (0..dh)
                            .map(|cc| d_o.get(i, c0 + cc) * c.v.get(j, c0 + cc))
                            .sum();
                        let aij = a.get(i, j);
                        for cc in 0..dh {
                            let cur = dv.get(j, c0 + cc);
                            dv.set(j, c0 + cc, cur + aij * d_o.get(i, c0 + cc));
                        }
                    }
                    let dot: f64 = (0..=i).map(|j| a.get(i, j) * da[j]).sum();
                    for j in 0..=i {
                        let ds = a.get(i, j) * (da[j] - dot) * inv_sqrt;
                        if ds == 0.0 {
                            continue;
                        }
                        for cc in 0..dh {
                            let qv = dq.get(i, c0 + cc);
                            dq.set(i, c0 + cc, qv + ds * c.k.get(j, c0 + cc));
                            let kv = dk.get(j, c0 + cc);
                            dk.set(j, c0 + cc, kv + ds * c.q.get(i, c0 + cc));
                        }
                    }
                }
            }
            for (slot, dm) in [(0, &dq), (1, &dk), (2, &dv)] {
                grads[base + slot]
                    .add_scaled(1.0, &c.x.t_matmul(dm).expect("shapes"))
                    .expect("shapes");
                dx1.add_scaled(
                    1.0,
                    &dm.matmul_t(self.layer_param(l, slot)).expect("shapes"),
                )
                .expect("shapes");
            }
            dx = dx1;
        }
        for i in 0..t_len {
            for j in 0..d {
                let g = dx.get(i, j);
                let cur = grads[TOK].get(tokens[i], j);
                grads[TOK].set(tokens[i], j, cur + g);
                let cur = grads[POS].get(i, j);
                grads[POS].set(i, j, cur + g);
            }
        }
        loss
    }
}

impl Model for Transformer {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn loss_and_grads(&self, step: usize) -> (f64, Vec<Matrix>) {
        let mut grads: Vec<Matrix> = self
            .params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let scale = 1.0 / self.batch as f64;
        let mut loss = 0.0;
        for start in self.batch_starts(step) {
            let seq = &self.train_stream[start..start + self.seq_len + 1];
            loss += self.sequence(seq, Some(&mut grads), scale);
        }
        (loss * scale, grads)
    }

    fn eval_loss(&self) -> f64 {
        let stride = (self.eval_stream.len() - self.seq_len - 1) / EVAL_SEQUENCES;
        let total: f64 = (0..EVAL_SEQUENCES)
            .map(|i| {
                let s = i * stride;
                self.sequence(&self.eval_stream[s..s + self.seq_len + 1], None, 1.0)
            })
            .sum();
        total / EVAL_SEQUENCES as f64
    }
}

/// Train and eval token streams from a sparse random Markov chain: each
/// symbol has three preferred successors (probabilities 0.6, 0.25, 0.1) and
/// the remaining 5% is spread uniformly.
fn markov_streams(vocab: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = SplitMix64::derive(seed, "transformer/chain");
    let successors: Vec<[usize; 3]> = (0..vocab)
        .map(|_| {
            [
                rng.next_below(vocab as u64) as usize,
                rng.next_below(vocab as u64) as usize,
                rng.next_below(vocab as u64) as usize,
            ]
        })
        .collect();
    let gen = |len: usize, label: &str| {
        let mut r = SplitMix64::derive(seed, label);
        let mut cur = r.next_below(vocab as u64) as usize;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(cur);
            let u = r.next_f64();
            cur = if u <= 0.6 {
                successors[cur][0]
            } else if u <= 0.85 {
                successors[cur][1]
            } else if u <= 0.95 {
                successors[cur][2]
            } else {
                r.next_below(vocab as u64) as usize
            };
        }
        out
    };
    let train = gen(TRAIN_TOKENS, "transformer/train");
    let eval = gen(TRAIN_TOKENS / 10, "transformer/eval");
    (train, eval)
}
