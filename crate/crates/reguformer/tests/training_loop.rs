//! Training-loop contracts: full-model finite differences, determinism,
//! optimizer behavior on real data, and scoring invariances.

use reguformer::attention::{AttentionSpec, SelectionStrategy};
use reguformer::data::{make_pairs, make_triplets, sample_intervals, synthesize, SyntheticSpec};
use reguformer::data::{PairBatch, WellInterval};
use reguformer::encoder::{forward_on_tape, EncodeMode, EncoderConfig, EncoderModel};
use reguformer::tensor::{Rng, Tape, Tensor};
use reguformer::training::{
    bce_loss, register_head, score_dataset, score_on_tape, train_siamese, train_triplet,
    HeadSpec, LossKind, PairHead, TrainOptions,
};

fn toy_config(seq_len: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        dim_feedforward: 12,
        dropout_prob: 0.0,
        attention: AttentionSpec::dense(2, 8),
        input_features: 4,
        seq_len,
        embedding_dim: 8,
        positional_encoding: true,
    }
}

fn rand_interval(well: &str, config: &EncoderConfig, rng: &mut Rng) -> WellInterval {
    let n = config.seq_len * config.input_features;
    WellInterval {
        well_id: well.into(),
        start_index: 0,
        values: Tensor::new(
            vec![config.seq_len, config.input_features],
            (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap(),
    }
}

/// Desk-scale separable dataset: two synthetic wells with strong texture.
fn separable_dataset(seq_len: usize) -> (Vec<WellInterval>, PairBatch) {
    assert_eq!(seq_len, 100, "synthetic intervals are 100 rows");
    let spec = SyntheticSpec {
        num_wells: 2,
        rows_per_well: 400,
        ar_coeff_min: 0.05,
        ar_coeff_max: 0.9,
        seed: 31,
        ..SyntheticSpec::default()
    };
    let logs = reguformer::data::preprocess(&synthesize(&spec).unwrap()).unwrap();
    let intervals = sample_intervals(&logs, 25).unwrap();
    let mut rng = Rng::new(32);
    let pairs = make_pairs(&intervals, 256, &mut rng).unwrap();
    (intervals, pairs)
}

// ── full-model finite differences ───────────────────────────────────────

/// Evaluate the Siamese BCE of one pair as a pure function of the model
/// parameters (deterministic: dropout 0, inference-mode selection).
fn siamese_loss_and_grads(
    model: &EncoderModel,
    head: &PairHead,
    a: &Tensor,
    b: &Tensor,
    label: f64,
    with_grads: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let enc_vars = model.register(&mut tape, with_grads);
    let head_vars = register_head(&mut tape, head, with_grads);
    let xa = tape.constant(a.clone());
    let xb = tape.constant(b.clone());
    let mut mode = EncodeMode::Infer { selection_seed: 17 };
    let ea = forward_on_tape(&mut tape, &enc_vars, &model.config, xa, &mut mode).unwrap();
    let eb = forward_on_tape(&mut tape, &enc_vars, &model.config, xb, &mut mode).unwrap();
    let prob = score_on_tape(&mut tape, ea, eb, head, &head_vars, &mut None).unwrap();
    // -[y ln p + (1-y) ln(1-p)] assembled on the tape
    let term = if label >= 0.5 {
        let c = tape.clamp(prob, 1e-7, 1.0 - 1e-7);
        let lp = tape.ln(c).unwrap();
        tape.neg(lp)
    } else {
        let np = tape.neg(prob);
        let q = tape.add_const(np, 1.0);
        let c = tape.clamp(q, 1e-7, 1.0 - 1e-7);
        let lp = tape.ln(c).unwrap();
        tape.neg(lp)
    };
    let loss = tape.data(term)[0];
    let grads = if with_grads {
        tape.backward(term).unwrap();
        let mut vars = enc_vars.ordered();
        if let Some(fc) = head_vars.fc {
            vars.extend(fc);
        }
        vars.iter()
            .map(|v| tape.grad(*v).map(|g| g.to_vec()).unwrap_or_default())
            .collect()
    } else {
        Vec::new()
    };
    (loss, grads)
}

fn full_model_gradcheck(mut config: EncoderConfig, head_kind: HeadSpec) {
    config.dropout_prob = 0.0;
    let mut rng = Rng::new(41);
    let model = EncoderModel::init(&config, &mut rng).unwrap();
    let mut head_spec = head_kind;
    head_spec.dropout = 0.0;
    let head = PairHead::init(head_spec, config.embedding_dim, &mut rng);
    let a = rand_interval("w0", &config, &mut rng).values;
    let b = rand_interval("w1", &config, &mut rng).values;

    let (_, analytic) = siamese_loss_and_grads(&model, &head, &a, &b, 1.0, true);

    let h = 1e-6;
    let n_params = model.parameters().len() + head.parameters().len();
    for pi in 0..n_params {
        let numel = if pi < model.parameters().len() {
            model.parameters()[pi].numel()
        } else {
            head.parameters()[pi - model.parameters().len()].numel()
        };
        // probe a spread of elements of each parameter
        for ei in (0..numel).step_by(numel.max(7) / 7) {
            let perturbed = |delta: f64| -> f64 {
                let mut m = model.clone();
                let mut hd = head.clone();
                {
                    let mut params = m.parameters_mut();
                    params.extend(hd.parameters_mut());
                    params[pi].data[ei] += delta;
                }
                siamese_loss_and_grads(&m, &hd, &a, &b, 1.0, false).0
            };
            let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let ana = analytic[pi][ei];
            let denom = ana.abs().max(numeric.abs()).max(1.0);
            assert!(
                (ana - numeric).abs() / denom < 1e-3,
                "param {pi} elem {ei}: analytic {ana} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn full_siamese_fc_model_matches_finite_differences() {
    full_model_gradcheck(toy_config(10), HeadSpec::fc());
}

#[test]
fn full_siamese_distance_heads_match_finite_differences() {
    full_model_gradcheck(toy_config(10), HeadSpec::euclidean());
    full_model_gradcheck(toy_config(10), HeadSpec::cosine());
}

#[test]
fn sparse_selection_model_matches_finite_differences() {
    let mut config = toy_config(10);
    config.attention.strategy_q = SelectionStrategy::Random;
    config.attention.strategy_k = SelectionStrategy::Random;
    config.attention.factor = 2; // u = ceil(2 ln 10) = 5 of 10 rows
    full_model_gradcheck(config, HeadSpec::euclidean());
}

// ── training behavior ───────────────────────────────────────────────────

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let config = toy_config(100);
    let mut model = EncoderModel::init(&config, &mut Rng::new(1)).unwrap();
    let before = model.clone();
    let mut head = PairHead::init(HeadSpec::fc(), config.embedding_dim, &mut Rng::new(2));
    let (intervals, pairs) = separable_dataset(100);
    let mut opts = TrainOptions::new(LossKind::Siamese, 5);
    opts.epochs = 1;
    opts.lr = 0.0;
    train_siamese(&mut model, &mut head, &intervals, &pairs, None, &opts).unwrap();
    for (a, b) in model.parameters().iter().zip(before.parameters()) {
        assert_eq!(a.data, b.data);
    }
}

#[test]
fn separable_wells_halve_the_bce_within_five_epochs() {
    let config = toy_config(100);
    let mut model = EncoderModel::init(&config, &mut Rng::new(3)).unwrap();
    let mut head = PairHead::init(HeadSpec::fc(), config.embedding_dim, &mut Rng::new(4));
    let (intervals, pairs) = separable_dataset(100);
    let mut opts = TrainOptions::new(LossKind::Siamese, 6);
    opts.epochs = 5;
    opts.batch_size = 32;
    let history = train_siamese(&mut model, &mut head, &intervals, &pairs, None, &opts).unwrap();
    let losses = history.train_losses();
    let first = losses[0];
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(
        best <= 0.5 * first,
        "first-epoch loss {first}, best {best}"
    );
}

#[test]
fn fixed_seed_reproduces_the_loss_history() {
    let run = || {
        let config = toy_config(100);
        let mut model = EncoderModel::init(&config, &mut Rng::new(7)).unwrap();
        let mut head = PairHead::init(HeadSpec::fc(), config.embedding_dim, &mut Rng::new(8));
        let (intervals, pairs) = separable_dataset(100);
        let mut opts = TrainOptions::new(LossKind::Siamese, 9);
        opts.epochs = 2;
        train_siamese(&mut model, &mut head, &intervals, &pairs, None, &opts).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn triplet_training_runs_and_descends() {
    let config = toy_config(100);
    let mut model = EncoderModel::init(&config, &mut Rng::new(11)).unwrap();
    let spec = SyntheticSpec {
        num_wells: 2,
        rows_per_well: 400,
        seed: 33,
        ..SyntheticSpec::default()
    };
    let logs = reguformer::data::preprocess(&synthesize(&spec).unwrap()).unwrap();
    let intervals = sample_intervals(&logs, 25).unwrap();
    let triplets = make_triplets(&intervals, 48, &mut Rng::new(34)).unwrap();
    let mut opts = TrainOptions::new(LossKind::Triplet, 12);
    opts.epochs = 4;
    let history =
        train_triplet(&mut model, &intervals, &triplets, Some(&triplets), &opts).unwrap();
    let losses = history.train_losses();
    assert!(losses.last().unwrap() < &losses[0]);
    // prauc recorded on the validation rows
    assert!(history.rows.iter().any(|r| r.split == "val" && r.prauc.is_some()));
}

// ── scoring ─────────────────────────────────────────────────────────────

#[test]
fn scores_preserve_order_and_ignore_grouping() {
    let config = toy_config(100);
    let model = EncoderModel::init(&config, &mut Rng::new(13)).unwrap();
    let head = PairHead {
        spec: HeadSpec::euclidean(),
        fc: None,
    };
    let (intervals, pairs) = separable_dataset(100);
    let full = score_dataset(&model, &head, &intervals, &pairs, 5).unwrap();

    // chunked evaluation concatenates to the same scores
    let mid = pairs.len() / 2;
    let first = PairBatch {
        a: pairs.a[..mid].to_vec(),
        b: pairs.b[..mid].to_vec(),
        labels: pairs.labels[..mid].to_vec(),
    };
    let second = PairBatch {
        a: pairs.a[mid..].to_vec(),
        b: pairs.b[mid..].to_vec(),
        labels: pairs.labels[mid..].to_vec(),
    };
    let mut chunked = score_dataset(&model, &head, &intervals, &first, 5).unwrap();
    chunked.extend(score_dataset(&model, &head, &intervals, &second, 5).unwrap());
    assert_eq!(full, chunked);
}

#[test]
fn identical_interval_pairs_score_one_under_distance_heads() {
    let config = toy_config(100);
    let model = EncoderModel::init(&config, &mut Rng::new(15)).unwrap();
    let (intervals, _) = separable_dataset(100);
    let pairs = PairBatch {
        a: vec![0, 1],
        b: vec![0, 1],
        labels: vec![1.0, 1.0],
    };
    for head in [
        PairHead {
            spec: HeadSpec::euclidean(),
            fc: None,
        },
        PairHead {
            spec: HeadSpec::cosine(),
            fc: None,
        },
    ] {
        let scores = score_dataset(&model, &head, &intervals, &pairs, 1).unwrap();
        for s in scores {
            assert!((s - 1.0).abs() < 1e-12, "{:?}", head.spec.kind);
        }
    }
}

#[test]
fn training_rejects_non_finite_interval() {
    let config = toy_config(100);
    let mut model = EncoderModel::init(&config, &mut Rng::new(17)).unwrap();
    let mut head = PairHead::init(HeadSpec::fc(), config.embedding_dim, &mut Rng::new(18));
    let (mut intervals, pairs) = separable_dataset(100);
    intervals[0].values.data[5] = f64::INFINITY;
    let opts = TrainOptions::new(LossKind::Siamese, 19);
    let err = train_siamese(&mut model, &mut head, &intervals, &pairs, None, &opts)
        .unwrap_err()
        .to_string();
    assert!(err.contains("row 1"), "{err}");
}

#[test]
fn bce_validation_row_matches_direct_computation() {
    let config = toy_config(100);
    let mut model = EncoderModel::init(&config, &mut Rng::new(23)).unwrap();
    let mut head = PairHead::init(HeadSpec::fc(), config.embedding_dim, &mut Rng::new(24));
    let (intervals, pairs) = separable_dataset(100);
    let mut opts = TrainOptions::new(LossKind::Siamese, 25);
    opts.epochs = 1;
    let history =
        train_siamese(&mut model, &mut head, &intervals, &pairs, Some(&pairs), &opts).unwrap();
    let val_row = history
        .rows
        .iter()
        .find(|r| r.split == "val")
        .expect("val row present");
    let scores = score_dataset(&model, &head, &intervals, &pairs, opts.seed).unwrap();
    let expected = bce_loss(&scores, &pairs.labels).unwrap();
    assert!((val_row.loss.unwrap() - expected).abs() < 1e-12);
}
