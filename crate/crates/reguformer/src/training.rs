//! Well-linking training: Siamese (BCE over an FC head or a
//! distance-derived probability) and Triplet objectives, Adam optimization,
//! and inference-mode pair scoring.

use crate::data::{PairBatch, TripletBatch, WellInterval};
use crate::encoder::{check_interval, forward_on_tape, EncodeMode, EncoderModel};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Tensor, Var};

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` so the binary
/// cross entropy stays finite.
pub const BCE_EPS: f64 = 1e-7;

/// Margin of the triplet objective.
pub const DEFAULT_MARGIN: f64 = 1.75;

/// Which self-supervised objective trains the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Siamese,
    Triplet,
}

/// How a pair of embeddings turns into a similarity probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Three fully connected layers on `|e_a - e_b|`, sigmoid output.
    Fc,
    /// `exp(-|e_a - e_b|_2)`.
    Euclidean,
    /// `(1 + cos(e_a, e_b)) / 2`.
    Cosine,
}

/// Scoring-head description. The FC stack is
/// `FC(in,hidden) + ReLU + Dropout + FC(hidden,hidden) + ReLU + Dropout +
/// FC(hidden,1) + Sigmoid` applied to the absolute embedding difference.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub hidden_size: usize,
    pub dropout: f64,
}

impl HeadSpec {
    pub fn fc() -> Self {
        HeadSpec {
            kind: HeadKind::Fc,
            hidden_size: 64,
            dropout: 0.25,
        }
    }

    pub fn euclidean() -> Self {
        HeadSpec {
            kind: HeadKind::Euclidean,
            hidden_size: 64,
            dropout: 0.25,
        }
    }

    pub fn cosine() -> Self {
        HeadSpec {
            kind: HeadKind::Cosine,
            hidden_size: 64,
            dropout: 0.25,
        }
    }
}

/// FC-head parameters (present only for [`HeadKind::Fc`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

/// A scoring head: spec plus learned state where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHead {
    pub spec: HeadSpec,
    pub fc: Option<FcParams>,
}

impl PairHead {
    pub fn init(spec: HeadSpec, embedding_dim: usize, rng: &mut Rng) -> Self {
        let fc = match spec.kind {
            HeadKind::Fc => {
                let h = spec.hidden_size;
                let xavier = |fan_in: usize, fan_out: usize, rng: &mut Rng| -> Tensor {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::new(
                        vec![fan_in, fan_out],
                        (0..fan_in * fan_out)
                            .map(|_| rng.uniform(-bound, bound))
                            .collect(),
                    )
                    .unwrap()
                    .with_grad()
                };
                Some(FcParams {
                    w1: xavier(embedding_dim, h, rng),
                    b1: Tensor::zeros(vec![h]).with_grad(),
                    w2: xavier(h, h, rng),
                    b2: Tensor::zeros(vec![h]).with_grad(),
                    w3: xavier(h, 1, rng),
                    b3: Tensor::zeros(vec![1]).with_grad(),
                })
            }
            _ => None,
        };
        PairHead { spec, fc }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match &self.fc {
            Some(p) => vec![&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3],
            None => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.fc {
            Some(p) => vec![
                &mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2, &mut p.w3, &mut p.b3,
            ],
            None => Vec::new(),
        }
    }
}

/// Tape handles for the head parameters.
pub struct HeadVars {
    pub fc: Option<[Var; 6]>,
}

pub fn register_head(tape: &mut Tape, head: &PairHead, trainable: bool) -> HeadVars {
    let fc = head.fc.as_ref().map(|p| {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        [
            reg(&p.w1),
            reg(&p.b1),
            reg(&p.w2),
            reg(&p.b2),
            reg(&p.w3),
            reg(&p.b3),
        ]
    });
    HeadVars { fc }
}

// ── Losses and distances ────────────────────────────────────────────────

/// Mean binary cross entropy over clamped probabilities.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "bce_loss: {} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Contract("bce_loss of empty batch".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-total / probs.len() as f64)
}

/// Mean triplet hinge `max(|a-p| - |a-n| + margin, 0)` over a batch of
/// embedding triples (Euclidean distances).
pub fn triplet_loss(
    anchors: &[Tensor],
    positives: &[Tensor],
    negatives: &[Tensor],
    margin: f64,
) -> Result<f64> {
    if anchors.len() != positives.len() || anchors.len() != negatives.len() {
        return Err(Error::Contract("triplet_loss: ragged batch".into()));
    }
    if anchors.is_empty() {
        return Err(Error::Contract("triplet_loss of empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..anchors.len() {
        let dap = euclidean_distance(&anchors[i], &positives[i])?;
        let dan = euclidean_distance(&anchors[i], &negatives[i])?;
        total += (dap - dan + margin).max(0.0);
    }
    Ok(total / anchors.len() as f64)
}

pub fn euclidean_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op: "euclidean_distance",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Cosine similarity; a zero-norm side yields 0 with a logged warning.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op: "cosine_similarity",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let dot: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine_similarity: zero-norm embedding, defining cos = 0");
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// Inference-mode pair probability from two embeddings.
pub fn pair_score(ea: &Tensor, eb: &Tensor, head: &PairHead) -> Result<f64> {
    match head.spec.kind {
        HeadKind::Euclidean => Ok((-euclidean_distance(ea, eb)?).exp()),
        HeadKind::Cosine => Ok((1.0 + cosine_similarity(ea, eb)?) / 2.0),
        HeadKind::Fc => {
            let mut tape = Tape::new();
            let a = tape.constant(ea.clone());
            let b = tape.constant(eb.clone());
            let vars = register_head(&mut tape, head, false);
            let p = fc_score_on_tape(&mut tape, a, b, head, &vars, &mut None)?;
            Ok(tape.data(p)[0])
        }
    }
}

/// Pair probability as a tape node (scalar `[1]`), differentiable through
/// both embeddings and, for the FC head, the head parameters.
pub fn score_on_tape(
    tape: &mut Tape,
    ea: Var,
    eb: Var,
    head: &PairHead,
    vars: &HeadVars,
    train_rng: &mut Option<&mut Rng>,
) -> Result<Var> {
    match head.spec.kind {
        HeadKind::Fc => fc_score_on_tape(tape, ea, eb, head, vars, train_rng),
        HeadKind::Euclidean => {
            let dist = distance_on_tape(tape, ea, eb)?;
            let neg = tape.neg(dist);
            Ok(tape.exp(neg))
        }
        HeadKind::Cosine => {
            let prod = tape.mul(ea, eb)?;
            let dot = tape.sum(prod);
            let sqa = tape.mul(ea, ea)?;
            let na2 = tape.sum(sqa);
            let na = tape.sqrt(na2)?;
            let sqb = tape.mul(eb, eb)?;
            let nb2 = tape.sum(sqb);
            let nb = tape.sqrt(nb2)?;
            if tape.data(na)[0] == 0.0 || tape.data(nb)[0] == 0.0 {
                log::warn!("cosine head: zero-norm embedding, defining cos = 0");
            }
            let denom = tape.mul(na, nb)?;
            // the tiny floor keeps the zero-norm case finite (cos -> 0)
            let denom = tape.add_const(denom, 1e-30);
            let cos = tape.div(dot, denom)?;
            let half = tape.scale(cos, 0.5);
            Ok(tape.add_const(half, 0.5))
        }
    }
}

fn fc_score_on_tape(
    tape: &mut Tape,
    ea: Var,
    eb: Var,
    head: &PairHead,
    vars: &HeadVars,
    train_rng: &mut Option<&mut Rng>,
) -> Result<Var> {
    let [w1, b1, w2, b2, w3, b3] = vars
        .fc
        .ok_or_else(|| Error::Contract("fc head without parameters".into()))?;
    let p = head.spec.dropout;
    let e = tape.value(ea).numel();
    let diff = tape.sub(ea, eb)?;
    let x = tape.abs(diff);
    let x = tape.reshape(x, vec![1, e])?;

    let apply_dropout = |tape: &mut Tape, v: Var, rng: &mut Option<&mut Rng>| match rng {
        Some(r) => tape.dropout(v, p, r, true),
        None => Ok(v),
    };

    let h1 = tape.matmul(x, w1)?;
    let h1 = tape.add_bias(h1, b1)?;
    let h1 = tape.relu(h1);
    let h1 = apply_dropout(tape, h1, train_rng)?;
    let h2 = tape.matmul(h1, w2)?;
    let h2 = tape.add_bias(h2, b2)?;
    let h2 = tape.relu(h2);
    let h2 = apply_dropout(tape, h2, train_rng)?;
    let out = tape.matmul(h2, w3)?;
    let out = tape.add_bias(out, b3)?;
    let out = tape.sigmoid(out);
    tape.reshape(out, vec![1])
}

/// The BCE contribution of one pair (scalar node).
fn bce_term_on_tape(tape: &mut Tape, prob: Var, label: f64) -> Result<Var> {
    let p = if label >= 0.5 {
        prob
    } else {
        let negp = tape.neg(prob);
        tape.add_const(negp, 1.0)
    };
    let clamped = tape.clamp(p, BCE_EPS, 1.0 - BCE_EPS);
    let lp = tape.ln(clamped)?;
    Ok(tape.neg(lp))
}

fn distance_on_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    tape.sqrt(total)
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update from the gradients stored on the parameters. Parameters
    /// without a gradient are left alone.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad.as_ref() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

// ── Training loops ──────────────────────────────────────────────────────

/// Optimization settings. Defaults: 20 epochs, batch 64, Adam(1e-3,
/// 0.9/0.999, 1e-8), margin 1.75.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub margin: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(loss: LossKind, seed: u64) -> Self {
        TrainOptions {
            loss,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            margin: DEFAULT_MARGIN,
            seed,
        }
    }
}

/// One history record; `loss`/`prauc` are blank where not measured.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub prauc: Option<f64>,
}

/// Per-epoch training record with a monotone step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub steps: u64,
}

impl TrainHistory {
    /// CSV with the fixed header `epoch,split,loss,prauc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,prauc\n");
        for r in &self.rows {
            let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                r.split,
                fmt(&r.loss),
                fmt(&r.prauc)
            ));
        }
        out
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == "train")
            .filter_map(|r| r.loss)
            .collect()
    }
}

fn validate_intervals(intervals: &[WellInterval], model: &EncoderModel) -> Result<()> {
    for iv in intervals {
        check_interval(&iv.values, &model.config)?;
    }
    Ok(())
}

/// All trainable vars of one sample tape, in optimizer order.
fn sample_vars(enc: &crate::encoder::EncoderVars, head_vars: &HeadVars) -> Vec<Var> {
    let mut vars = enc.ordered();
    if let Some(fc) = head_vars.fc {
        vars.extend(fc);
    }
    vars
}

fn add_tape_grads(tape: &Tape, vars: &[Var], acc: &mut [Vec<f64>]) {
    for (slot, var) in vars.iter().enumerate() {
        if let Some(g) = tape.grad(*var) {
            for (a, gv) in acc[slot].iter_mut().zip(g) {
                *a += gv;
            }
        }
    }
}

fn apply_step(
    model: &mut EncoderModel,
    head: &mut PairHead,
    adam: &mut Adam,
    grads: &mut [Vec<f64>],
) {
    let mut params: Vec<&mut Tensor> = model.parameters_mut();
    params.extend(head.parameters_mut());
    for (p, g) in params.iter_mut().zip(grads.iter_mut()) {
        p.grad = Some(std::mem::take(g));
    }
    adam.step(&mut params);
    for p in params.iter_mut() {
        p.grad = None;
    }
}

/// Train a Siamese model. Gradients are accumulated per pair with upstream
/// weight `1/batch`, which reproduces the batch-mean BCE exactly while the
/// tape holds only one pair at a time.
pub fn train_siamese(
    model: &mut EncoderModel,
    head: &mut PairHead,
    intervals: &[WellInterval],
    pairs: &PairBatch,
    val: Option<&PairBatch>,
    opts: &TrainOptions,
) -> Result<TrainHistory> {
    pairs.validate(intervals.len())?;
    validate_intervals(intervals, model)?;
    let mut rng = Rng::new(opts.seed);
    let sizes: Vec<usize> = model
        .parameters()
        .iter()
        .chain(head.parameters().iter())
        .map(|t| t.numel())
        .collect();
    let mut adam = Adam::new(opts.lr, opts.beta1, opts.beta2, opts.eps_adam, &sizes);
    let mut history = TrainHistory::default();

    let n = pairs.len();
    for epoch in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        let mut batch_start = 0;
        let mut batch_idx = 0usize;
        while batch_start < n {
            let batch_end = (batch_start + opts.batch_size).min(n);
            let batch_len = batch_end - batch_start;
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();

            for i in batch_start..batch_end {
                let mut tape = Tape::new();
                let enc_vars = model.register(&mut tape, true);
                let head_vars = register_head(&mut tape, head, true);
                let xa = tape.constant(intervals[pairs.a[i]].values.clone());
                let xb = tape.constant(intervals[pairs.b[i]].values.clone());
                let selection_seed = rng.next_u64();
                let mut mode = EncodeMode::Train {
                    rng: &mut rng,
                    selection_seed,
                };
                let ea = forward_on_tape(&mut tape, &enc_vars, &model.config, xa, &mut mode)?;
                let eb = forward_on_tape(&mut tape, &enc_vars, &model.config, xb, &mut mode)?;
                let EncodeMode::Train { rng: r, .. } = &mut mode else { unreachable!() };
                let mut head_rng = Some(&mut **r);
                let prob = score_on_tape(&mut tape, ea, eb, head, &head_vars, &mut head_rng)?;
                let term = bce_term_on_tape(&mut tape, prob, pairs.labels[i])?;
                let term_value = tape.data(term)[0];
                if !term_value.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in batch {batch_idx} (epoch {epoch})"
                    )));
                }
                epoch_loss += term_value;
                tape.backward_scaled(term, 1.0 / batch_len as f64)?;
                add_tape_grads(&tape, &sample_vars(&enc_vars, &head_vars), &mut grads);
            }
            apply_step(model, head, &mut adam, &mut grads);
            history.steps += 1;
            batch_start = batch_end;
            batch_idx += 1;
        }

        history.rows.push(HistoryRow {
            epoch,
            split: "train".into(),
            loss: Some(epoch_loss / n as f64),
            prauc: None,
        });
        if let Some(val_pairs) = val {
            let scores = score_dataset(model, head, intervals, val_pairs, opts.seed)?;
            let loss = bce_loss(&scores, &val_pairs.labels)?;
            let prauc = crate::eval::metrics::pr_auc(&scores, &val_pairs.labels)?;
            history.rows.push(HistoryRow {
                epoch,
                split: "val".into(),
                loss: Some(loss),
                prauc: Some(prauc),
            });
        }
    }
    Ok(history)
}

/// Train with the triplet objective. The returned history's `val` rows
/// score anchor-positive vs anchor-negative pairs with the Euclidean head.
pub fn train_triplet(
    model: &mut EncoderModel,
    intervals: &[WellInterval],
    triplets: &TripletBatch,
    val: Option<&TripletBatch>,
    opts: &TrainOptions,
) -> Result<TrainHistory> {
    triplets.validate(intervals.len())?;
    validate_intervals(intervals, model)?;
    let mut rng = Rng::new(opts.seed);
    let sizes: Vec<usize> = model.parameters().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(opts.lr, opts.beta1, opts.beta2, opts.eps_adam, &sizes);
    let mut history = TrainHistory::default();
    let mut dummy_head = PairHead {
        spec: HeadSpec::euclidean(),
        fc: None,
    };

    let n = triplets.len();
    for epoch in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        let mut batch_start = 0;
        let mut batch_idx = 0usize;
        while batch_start < n {
            let batch_end = (batch_start + opts.batch_size).min(n);
            let batch_len = batch_end - batch_start;
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();

            for i in batch_start..batch_end {
                let mut tape = Tape::new();
                let enc_vars = model.register(&mut tape, true);
                let xa = tape.constant(intervals[triplets.anchor[i]].values.clone());
                let xp = tape.constant(intervals[triplets.positive[i]].values.clone());
                let xn = tape.constant(intervals[triplets.negative[i]].values.clone());
                let selection_seed = rng.next_u64();
                let mut mode = EncodeMode::Train {
                    rng: &mut rng,
                    selection_seed,
                };
                let ea = forward_on_tape(&mut tape, &enc_vars, &model.config, xa, &mut mode)?;
                let ep = forward_on_tape(&mut tape, &enc_vars, &model.config, xp, &mut mode)?;
                let en = forward_on_tape(&mut tape, &enc_vars, &model.config, xn, &mut mode)?;
                let dap = distance_on_tape(&mut tape, ea, ep)?;
                let dan = distance_on_tape(&mut tape, ea, en)?;
                let gap = tape.sub(dap, dan)?;
                let shifted = tape.add_const(gap, opts.margin);
                let term = tape.relu(shifted);
                let term_value = tape.data(term)[0];
                if !term_value.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in batch {batch_idx} (epoch {epoch})"
                    )));
                }
                epoch_loss += term_value;
                tape.backward_scaled(term, 1.0 / batch_len as f64)?;
                add_tape_grads(&tape, &enc_vars.ordered(), &mut grads);
            }
            apply_step(model, &mut dummy_head, &mut adam, &mut grads);
            history.steps += 1;
            batch_start = batch_end;
            batch_idx += 1;
        }

        history.rows.push(HistoryRow {
            epoch,
            split: "train".into(),
            loss: Some(epoch_loss / n as f64),
            prauc: None,
        });
        if let Some(v) = val {
            let (loss, prauc) = triplet_val_metrics(model, intervals, v, opts)?;
            history.rows.push(HistoryRow {
                epoch,
                split: "val".into(),
                loss: Some(loss),
                prauc: Some(prauc),
            });
        }
    }
    Ok(history)
}

fn triplet_val_metrics(
    model: &EncoderModel,
    intervals: &[WellInterval],
    triplets: &TripletBatch,
    opts: &TrainOptions,
) -> Result<(f64, f64)> {
    let head = PairHead {
        spec: HeadSpec::euclidean(),
        fc: None,
    };
    let mut cache = EmbeddingCache::new(model, intervals, opts.seed);
    let uses_draws = model.config.attention.uses_draws();
    let mut anchors = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..triplets.len() {
        let embed = |cache: &mut EmbeddingCache, idx: usize| -> Result<Tensor> {
            if uses_draws {
                let mut mode = EncodeMode::Infer {
                    selection_seed: inference_selection_seed(opts.seed, i as u64),
                };
                crate::encoder::encode(cache.model, &cache.intervals[idx].values, &mut mode)
            } else {
                cache.get(idx).cloned()
            }
        };
        let ea = embed(&mut cache, triplets.anchor[i])?;
        let ep = embed(&mut cache, triplets.positive[i])?;
        let en = embed(&mut cache, triplets.negative[i])?;
        scores.push(pair_score(&ea, &ep, &head)?);
        labels.push(1.0);
        scores.push(pair_score(&ea, &en, &head)?);
        labels.push(0.0);
        anchors.push(ea);
        positives.push(ep);
        negatives.push(en);
    }
    let loss = triplet_loss(&anchors, &positives, &negatives, opts.margin)?;
    let prauc = crate::eval::metrics::pr_auc(&scores, &labels)?;
    Ok((loss, prauc))
}

/// Lazily embeds intervals in inference mode, memoizing by index.
pub struct EmbeddingCache<'a> {
    model: &'a EncoderModel,
    intervals: &'a [WellInterval],
    seed: u64,
    slots: Vec<Option<Tensor>>,
}

impl<'a> EmbeddingCache<'a> {
    pub fn new(model: &'a EncoderModel, intervals: &'a [WellInterval], seed: u64) -> Self {
        EmbeddingCache {
            model,
            intervals,
            seed,
            slots: vec![None; intervals.len()],
        }
    }

    pub fn get(&mut self, idx: usize) -> Result<&Tensor> {
        if self.slots[idx].is_none() {
            let mut mode = EncodeMode::Infer {
                selection_seed: self.seed,
            };
            let emb = crate::encoder::encode(self.model, &self.intervals[idx].values, &mut mode)?;
            self.slots[idx] = Some(emb);
        }
        Ok(self.slots[idx].as_ref().unwrap())
    }
}

/// Deterministic per-item selection seed: `item` plays the role of the
/// batch counter, so inference draws vary across items but never depend
/// on how items are grouped.
pub fn inference_selection_seed(seed: u64, item: u64) -> u64 {
    Rng::from_seed_and_stream(seed, item).next_u64()
}

// ── Head files ──────────────────────────────────────────────────────────

const HEAD_MAGIC: &[u8; 4] = b"RGHD";
const HEAD_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct HeadHeader {
    spec: HeadSpec,
    embedding_dim: usize,
}

/// Write a scoring head: magic, version, JSON header, then FC parameter
/// blobs (if any) as little-endian 64-bit floats.
pub fn save_head(head: &PairHead, embedding_dim: usize, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    let header = HeadHeader {
        spec: head.spec.clone(),
        embedding_dim,
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("head serialization failed: {e}")))?;
    file.write_all(HEAD_MAGIC)?;
    file.write_all(&HEAD_VERSION.to_le_bytes())?;
    file.write_all(&(json.len() as u64).to_le_bytes())?;
    file.write_all(json.as_bytes())?;
    for p in head.parameters() {
        for v in &p.data {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_head(path: &std::path::Path) -> Result<PairHead> {
    use std::io::Read;
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != HEAD_MAGIC {
        return Err(Error::Format("not a head file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != HEAD_VERSION {
        return Err(Error::Format("unsupported head format version".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let mut json = vec![0u8; u64::from_le_bytes(len_bytes) as usize];
    file.read_exact(&mut json)?;
    let header: HeadHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("bad head header: {e}")))?;
    let mut head = PairHead::init(header.spec, header.embedding_dim, &mut Rng::new(0));
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    let expected: usize = head.parameters().iter().map(|t| t.numel()).sum::<usize>() * 8;
    if rest.len() != expected {
        return Err(Error::Format(format!(
            "head blob is {} bytes, header implies {expected}",
            rest.len()
        )));
    }
    let mut offset = 0;
    for p in head.parameters_mut() {
        for v in p.data.iter_mut() {
            *v = f64::from_le_bytes(rest[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
        p.grad = None;
    }
    Ok(head)
}

/// Inference-mode probabilities for a pair set, order-preserving and
/// independent of any batching.
///
/// When the model draws selections, both sides of pair `i` share the
/// seed derived from `(seed, i)`; a selection-free model is scored from
/// a per-interval embedding cache instead.
pub fn score_dataset(
    model: &EncoderModel,
    head: &PairHead,
    intervals: &[WellInterval],
    pairs: &PairBatch,
    seed: u64,
) -> Result<Vec<f64>> {
    pairs.validate(intervals.len())?;
    let mut scores = Vec::with_capacity(pairs.len());
    if model.config.attention.uses_draws() {
        for i in 0..pairs.len() {
            let pair_seed = inference_selection_seed(seed, i as u64);
            let mut mode = EncodeMode::Infer {
                selection_seed: pair_seed,
            };
            let ea = crate::encoder::encode(model, &intervals[pairs.a[i]].values, &mut mode)?;
            let mut mode = EncodeMode::Infer {
                selection_seed: pair_seed,
            };
            let eb = crate::encoder::encode(model, &intervals[pairs.b[i]].values, &mut mode)?;
            scores.push(pair_score(&ea, &eb, head)?);
        }
    } else {
        let mut cache = EmbeddingCache::new(model, intervals, seed);
        for i in 0..pairs.len() {
            let ea = cache.get(pairs.a[i])?.clone();
            let eb = cache.get(pairs.b[i])?.clone();
            scores.push(pair_score(&ea, &eb, head)?);
        }
    }
    Ok(scores)
}

/// Embed every interval in inference mode; a drawing model derives one
/// selection seed per interval index.
pub fn embed_intervals(
    model: &EncoderModel,
    intervals: &[WellInterval],
    seed: u64,
) -> Result<Vec<Tensor>> {
    if model.config.attention.uses_draws() {
        intervals
            .iter()
            .enumerate()
            .map(|(i, iv)| {
                let mut mode = EncodeMode::Infer {
                    selection_seed: inference_selection_seed(seed, i as u64),
                };
                crate::encoder::encode(model, &iv.values, &mut mode)
            })
            .collect()
    } else {
        let mut cache = EmbeddingCache::new(model, intervals, seed);
        (0..intervals.len())
            .map(|i| cache.get(i).cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_hand_values() {
        // y=1, p=0.5
        let v = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((v - 2.0f64.ln()).abs() < 1e-12);
        // perfect predictions under clamping
        let v = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(v <= 1e-6, "{v}");
        // y=[1,0], p=[0.9,0.1]
        let v = bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((expected - 0.10536).abs() < 1e-5);
    }

    #[test]
    fn bce_rejects_length_mismatch() {
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn triplet_hand_values() {
        let e = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).unwrap();
        // anchor == positive, |a-n| = 3 -> 0
        let v = triplet_loss(
            &[e(&[0.0, 0.0])],
            &[e(&[0.0, 0.0])],
            &[e(&[3.0, 0.0])],
            1.75,
        )
        .unwrap();
        assert_eq!(v, 0.0);
        // all equal -> margin
        let v = triplet_loss(&[e(&[1.0])], &[e(&[1.0])], &[e(&[1.0])], 1.75).unwrap();
        assert!((v - 1.75).abs() < 1e-12);
        // |a-p|=1, |a-n|=0 -> 2.75
        let v = triplet_loss(&[e(&[0.0])], &[e(&[1.0])], &[e(&[0.0])], 1.75).unwrap();
        assert!((v - 2.75).abs() < 1e-12);
    }

    #[test]
    fn pair_score_hand_values() {
        let e = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).unwrap();
        let eucl = PairHead {
            spec: HeadSpec::euclidean(),
            fc: None,
        };
        let cosine = PairHead {
            spec: HeadSpec::cosine(),
            fc: None,
        };
        // identical embeddings
        let a = e(&[0.3, -0.2]);
        assert!((pair_score(&a, &a, &eucl).unwrap() - 1.0).abs() < 1e-12);
        assert!((pair_score(&a, &a, &cosine).unwrap() - 1.0).abs() < 1e-12);
        // orthogonal unit embeddings -> cosine 0.5
        let x = e(&[1.0, 0.0]);
        let y = e(&[0.0, 1.0]);
        assert!((pair_score(&x, &y, &cosine).unwrap() - 0.5).abs() < 1e-12);
        // distance ln 2 -> euclidean score 0.5
        let z = e(&[2.0f64.ln(), 0.0]);
        let o = e(&[0.0, 0.0]);
        assert!((pair_score(&z, &o, &eucl).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_defined_as_zero() {
        let a = Tensor::zeros(vec![3]);
        let b = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let cosine = PairHead {
            spec: HeadSpec::cosine(),
            fc: None,
        };
        assert!((pair_score(&a, &b, &cosine).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn head_scores_are_symmetric() {
        let mut rng = Rng::new(8);
        let e = |rng: &mut Rng| {
            Tensor::new(vec![6], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
        };
        let a = e(&mut rng);
        let b = e(&mut rng);
        for spec in [HeadSpec::euclidean(), HeadSpec::cosine(), HeadSpec::fc()] {
            let head = PairHead::init(spec, 6, &mut rng);
            let ab = pair_score(&a, &b, &head).unwrap();
            let ba = pair_score(&b, &a, &head).unwrap();
            assert_eq!(ab, ba, "{:?}", head.spec.kind);
        }
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        // f(x) = |x - c|^2 / 2, grad = x - c
        let c = [3.0, -2.0, 0.5];
        let mut x = Tensor::new(vec![3], vec![0.0; 3]).unwrap().with_grad();
        let mut adam = Adam::new(0.05, 0.9, 0.999, 1e-8, &[3]);
        let loss = |x: &Tensor| -> f64 {
            x.data
                .iter()
                .zip(&c)
                .map(|(&v, &t)| (v - t) * (v - t))
                .sum::<f64>()
                / 2.0
        };
        let initial = loss(&x);
        let mut previous = initial;
        for step in 0..200 {
            x.grad = Some(x.data.iter().zip(&c).map(|(&v, &t)| v - t).collect());
            let mut params = [&mut x];
            adam.step(&mut params);
            let now = loss(&x);
            if step == 0 {
                assert!(now < initial, "first step must descend");
            }
            previous = now;
        }
        assert!(previous < initial * 0.01, "final {previous}");
    }
}
