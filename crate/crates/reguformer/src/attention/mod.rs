//! Attention variants behind one interface: dense softmax attention, the
//! eight sparse-selection combinations of query/key rows (top-scored or
//! random, including the top-queries special case), FAVOR+ random-feature
//! attention, and the position-wise feed-forward block.

pub mod performer;
pub mod sparsity;

pub use sparsity::{
    select_random, select_top, sparsity_score, sparsity_scores, Selection, SelectionMethod,
    SelectionSource, SparsityMeasure,
};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Var};

/// Row-selection strategy for one side of the attention product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Full,
    Top,
    Random,
}

/// Attention family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    Reguformer,
    Performer,
}

/// Declarative description of one attention variant.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionSpec {
    pub variant: AttentionVariant,
    pub strategy_q: SelectionStrategy,
    pub strategy_k: SelectionStrategy,
    /// Sparsity factor: kept count is `max(1, min(L, ceil(factor * ln L)))`.
    pub factor: usize,
    pub num_heads: usize,
    pub dim_model: usize,
    /// Random feature count (FAVOR+ only).
    pub num_rand_features: usize,
    pub sparsity_measure: SparsityMeasure,
}

impl AttentionSpec {
    /// Dense softmax attention: `(full, full)` selection.
    pub fn dense(num_heads: usize, dim_model: usize) -> Self {
        AttentionSpec {
            variant: AttentionVariant::Reguformer,
            strategy_q: SelectionStrategy::Full,
            strategy_k: SelectionStrategy::Full,
            factor: 5,
            num_heads,
            dim_model,
            num_rand_features: 3,
            sparsity_measure: SparsityMeasure::ScaledLogits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.dim_model == 0 {
            return Err(Error::Config(
                "num_heads and dim_model must be positive".into(),
            ));
        }
        if self.dim_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "dim_model {} not divisible by num_heads {}",
                self.dim_model, self.num_heads
            )));
        }
        if self.factor == 0 {
            return Err(Error::Config("factor must be positive".into()));
        }
        if self.variant == AttentionVariant::Performer && self.num_rand_features == 0 {
            return Err(Error::Config("num_rand_features must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim_model / self.num_heads
    }

    /// Rows kept on a selected side of a length-`len` sequence.
    pub fn kept_count(&self, len: usize) -> usize {
        let u = (self.factor as f64 * (len as f64).ln()).ceil() as usize;
        u.clamp(1, len)
    }

    /// Whether forward passes consume random draws (row selection or
    /// feature matrices), making outputs depend on the selection seed.
    pub fn uses_draws(&self) -> bool {
        self.variant == AttentionVariant::Performer
            || self.strategy_q == SelectionStrategy::Random
            || self.strategy_k == SelectionStrategy::Random
    }

    /// Parse a regularization token: `transformer`/`full`, `performer`,
    /// `topQ`, `randQ`, `topK`, `randK`, or a `Q`-part and `K`-part joined
    /// by `_` (e.g. `randQ_topK`).
    pub fn strategies_from_token(
        token: &str,
    ) -> Result<(AttentionVariant, SelectionStrategy, SelectionStrategy)> {
        use AttentionVariant::*;
        use SelectionStrategy::*;
        let pair = match token {
            "transformer" | "full" => (Reguformer, Full, Full),
            "performer" => (Performer, Full, Full),
            "topQ" => (Reguformer, Top, Full),
            "randQ" => (Reguformer, Random, Full),
            "topK" => (Reguformer, Full, Top),
            "randK" => (Reguformer, Full, Random),
            "topQ_topK" => (Reguformer, Top, Top),
            "topQ_randK" => (Reguformer, Top, Random),
            "randQ_topK" => (Reguformer, Random, Top),
            "randQ_randK" => (Reguformer, Random, Random),
            other => {
                return Err(Error::Config(format!(
                    "unknown regularization token \"{other}\""
                )))
            }
        };
        Ok(pair)
    }

    /// Inverse of [`strategies_from_token`], for reports and file names.
    pub fn regularization_token(&self) -> String {
        use SelectionStrategy::*;
        if self.variant == AttentionVariant::Performer {
            return "performer".into();
        }
        match (self.strategy_q, self.strategy_k) {
            (Full, Full) => "transformer".into(),
            (Top, Full) => "topQ".into(),
            (Random, Full) => "randQ".into(),
            (Full, Top) => "topK".into(),
            (Full, Random) => "randK".into(),
            (Top, Top) => "topQ_topK".into(),
            (Top, Random) => "topQ_randK".into(),
            (Random, Top) => "randQ_topK".into(),
            (Random, Random) => "randQ_randK".into(),
        }
    }
}

/// One layer's projection weights, already on the tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Where random selections (and FAVOR+ feature draws) come from.
///
/// Training resamples from the shared run RNG on every forward pass.
/// Inference derives a fixed per-(layer, head, role) stream from the seed,
/// so outputs are a pure function of the input and the model.
pub enum SelectionMode<'a> {
    Training(&'a mut Rng),
    Inference { seed: u64 },
}

/// Per-layer context handed to the attention blocks.
pub struct AttnCtx<'a> {
    pub mode: SelectionMode<'a>,
    pub layer: usize,
}

impl<'a> AttnCtx<'a> {
    pub fn training(rng: &'a mut Rng, layer: usize) -> Self {
        AttnCtx {
            mode: SelectionMode::Training(rng),
            layer,
        }
    }

    pub fn inference(seed: u64, layer: usize) -> Self {
        AttnCtx {
            mode: SelectionMode::Inference { seed },
            layer,
        }
    }

    /// RNG for one (layer, head, role) draw site. Roles: 0 = query
    /// selection, 1 = key selection, 2 = feature matrix.
    fn draw_site(&mut self, head: usize, role: u64) -> RngSite<'_> {
        match &mut self.mode {
            SelectionMode::Training(rng) => RngSite::Shared(rng),
            SelectionMode::Inference { seed } => {
                let stream = ((self.layer as u64) << 20) | ((head as u64) << 2) | role;
                RngSite::Owned(Rng::from_seed_and_stream(*seed, stream))
            }
        }
    }
}

enum RngSite<'a> {
    Shared(&'a mut Rng),
    Owned(Rng),
}

impl RngSite<'_> {
    fn rng(&mut self) -> &mut Rng {
        match self {
            RngSite::Shared(r) => r,
            RngSite::Owned(r) => r,
        }
    }
}

/// `softmax(Q K^T / sqrt(d)) V` for `Q: [Lq,d]`, `K,V: [Lk,d]`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let d = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let probs = tape.softmax_rows(scaled)?;
    tape.matmul(probs, v)
}

/// Select rows for one side. `None` means the side is kept in full.
#[allow(clippy::too_many_arguments)]
fn side_selection(
    strategy: SelectionStrategy,
    own: &[f64],
    other: &[f64],
    len: usize,
    d: usize,
    u: usize,
    measure: SparsityMeasure,
    source: SelectionSource,
    rng: &mut Rng,
) -> Result<Option<Selection>> {
    match strategy {
        SelectionStrategy::Full => Ok(None),
        SelectionStrategy::Top => {
            let scores = sparsity_scores(own, other, len, len, d, measure);
            Ok(Some(select_top(&scores, u, source)?))
        }
        SelectionStrategy::Random => Ok(Some(select_random(len, u, rng, source)?)),
    }
}

/// Multi-head attention with per-side row selection.
///
/// Per head: `Q = X W^Q`, `K = X W^K`, `V = X W^V`; the kept query rows
/// attend over the kept key rows (values keep the same rows as the keys);
/// output rows at unselected query positions are the column mean of the
/// kept value rows. Heads are concatenated and mixed by `W^O`.
pub fn reguformer_attention(
    tape: &mut Tape,
    x: Var,
    spec: &AttentionSpec,
    params: &AttentionParams,
    ctx: &mut AttnCtx<'_>,
) -> Result<Var> {
    spec.validate()?;
    let l = tape.shape(x)[0];
    let d = spec.head_dim();
    let u = spec.kept_count(l);

    let q_full = tape.matmul(x, params.wq)?;
    let k_full = tape.matmul(x, params.wk)?;
    let v_full = tape.matmul(x, params.wv)?;

    let mut heads = Vec::with_capacity(spec.num_heads);
    for h in 0..spec.num_heads {
        let q = tape.slice_cols(q_full, h * d, d)?;
        let k = tape.slice_cols(k_full, h * d, d)?;
        let v = tape.slice_cols(v_full, h * d, d)?;

        let sel_q = {
            let mut site = ctx.draw_site(h, 0);
            side_selection(
                spec.strategy_q,
                tape.data(q),
                tape.data(k),
                l,
                d,
                u,
                spec.sparsity_measure,
                SelectionSource::Query,
                site.rng(),
            )?
        };
        let sel_k = {
            let mut site = ctx.draw_site(h, 1);
            side_selection(
                spec.strategy_k,
                tape.data(k),
                tape.data(q),
                l,
                d,
                u,
                spec.sparsity_measure,
                SelectionSource::Key,
                site.rng(),
            )?
        };

        let (k_bar, v_bar) = match &sel_k {
            None => (k, v),
            Some(sel) => (
                tape.gather_rows(k, &sel.indices)?,
                tape.gather_rows(v, &sel.indices)?,
            ),
        };
        let head = match &sel_q {
            None => scaled_dot_attention(tape, q, k_bar, v_bar)?,
            Some(sel) => {
                let q_bar = tape.gather_rows(q, &sel.indices)?;
                let rows = scaled_dot_attention(tape, q_bar, k_bar, v_bar)?;
                if sel.indices.len() == l {
                    rows
                } else {
                    let fill = tape.col_mean(v_bar)?;
                    tape.scatter_rows_fill(rows, fill, &sel.indices, l)?
                }
            }
        };
        heads.push(head);
    }
    let concat = tape.concat_cols(&heads)?;
    tape.matmul(concat, params.wo)
}

/// Position-wise feed-forward block `max(0, x W1 + b1) W2 + b2`.
pub fn ffn(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, w2)?;
    tape.add_bias(out, b2)
}

/// Attention block entry point dispatching on the variant.
pub fn attention_block(
    tape: &mut Tape,
    x: Var,
    spec: &AttentionSpec,
    params: &AttentionParams,
    ctx: &mut AttnCtx<'_>,
) -> Result<Var> {
    match spec.variant {
        AttentionVariant::Reguformer => reguformer_attention(tape, x, spec, params, ctx),
        AttentionVariant::Performer => performer::performer_attention(tape, x, spec, params, ctx),
    }
}

// ── Value-path forward (no tape), used by the latency benchmark ─────────

/// One layer's projection weights as plain buffers, each `[dim, dim]`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttentionWeights {
    pub fn random(dim_model: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (2.0 * dim_model as f64)).sqrt();
        let mut mat = || -> Vec<f64> {
            (0..dim_model * dim_model)
                .map(|_| rng.uniform(-bound, bound))
                .collect()
        };
        AttentionWeights {
            wq: mat(),
            wk: mat(),
            wv: mat(),
            wo: mat(),
        }
    }
}

/// Tape-free forward pass of the attention block, built from the same value
/// kernels as the tape path. Selection draws use the inference scheme with
/// `seed` (layer index 0).
pub fn attention_forward_values(
    spec: &AttentionSpec,
    weights: &AttentionWeights,
    x: &[f64],
    l: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use crate::tensor::kernels as kn;
    spec.validate()?;
    let dm = spec.dim_model;
    let d = spec.head_dim();
    let u = spec.kept_count(l);

    if spec.variant == AttentionVariant::Performer {
        return performer::performer_forward_values(spec, weights, x, l, seed);
    }

    let q_full = kn::matmul(x, &weights.wq, l, dm, dm);
    let k_full = kn::matmul(x, &weights.wk, l, dm, dm);
    let v_full = kn::matmul(x, &weights.wv, l, dm, dm);

    let slice_head = |m: &[f64], h: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(l * d);
        for r in 0..l {
            out.extend_from_slice(&m[r * dm + h * d..r * dm + h * d + d]);
        }
        out
    };

    let mut concat = vec![0.0; l * dm];
    for h in 0..spec.num_heads {
        let q = slice_head(&q_full, h);
        let k = slice_head(&k_full, h);
        let v = slice_head(&v_full, h);

        let sel_q = side_selection(
            spec.strategy_q,
            &q,
            &k,
            l,
            d,
            u,
            spec.sparsity_measure,
            SelectionSource::Query,
            &mut Rng::from_seed_and_stream(seed, (h as u64) << 2),
        )?;
        let sel_k = side_selection(
            spec.strategy_k,
            &k,
            &q,
            l,
            d,
            u,
            spec.sparsity_measure,
            SelectionSource::Key,
            &mut Rng::from_seed_and_stream(seed, ((h as u64) << 2) | 1),
        )?;

        let (k_bar, v_bar, lk) = match &sel_k {
            None => (k, v, l),
            Some(sel) => (
                kn::gather_rows(&k, d, &sel.indices),
                kn::gather_rows(&v, d, &sel.indices),
                sel.indices.len(),
            ),
        };
        let attend = |qm: &[f64], lq: usize| -> Vec<f64> {
            let kt = kn::transpose(&k_bar, lk, d);
            let mut logits = kn::matmul(qm, &kt, lq, d, lk);
            let s = 1.0 / (d as f64).sqrt();
            logits.iter_mut().for_each(|v| *v *= s);
            let probs = kn::softmax_rows(&logits, lq, lk);
            kn::matmul(&probs, &v_bar, lq, lk, d)
        };
        let head = match &sel_q {
            None => attend(&q, l),
            Some(sel) => {
                let q_bar = kn::gather_rows(&q, d, &sel.indices);
                let rows = attend(&q_bar, sel.indices.len());
                if sel.indices.len() == l {
                    rows
                } else {
                    let fill = kn::col_mean(&v_bar, lk, d);
                    let mut out = Vec::with_capacity(l * d);
                    let mut next = 0usize;
                    for i in 0..l {
                        if next < sel.indices.len() && sel.indices[next] == i {
                            out.extend_from_slice(&rows[next * d..(next + 1) * d]);
                            next += 1;
                        } else {
                            out.extend_from_slice(&fill);
                        }
                    }
                    out
                }
            }
        };
        for r in 0..l {
            concat[r * dm + h * d..r * dm + h * d + d].copy_from_slice(&head[r * d..(r + 1) * d]);
        }
    }
    Ok(kn::matmul(&concat, &weights.wo, l, dm, dm))
}
