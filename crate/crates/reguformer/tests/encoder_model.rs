//! Encoder contracts: deterministic inference, a step-by-step compositional
//! oracle, sparse/dense consistency, gradient flow, and the model file
//! format.

use reguformer::attention::{
    scaled_dot_attention, AttentionSpec, SelectionStrategy, SparsityMeasure,
};
use reguformer::encoder::{
    encode, forward_on_tape, load, positional_table, save, EncodeMode, EncoderConfig,
    EncoderModel,
};
use reguformer::tensor::{Rng, Tape, Tensor};

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        num_layers: 1,
        dim_feedforward: 6,
        dropout_prob: 0.2,
        attention: AttentionSpec::dense(2, 4),
        input_features: 3,
        seq_len: 5,
        embedding_dim: 4,
        positional_encoding: true,
    }
}

fn rand_interval(config: &EncoderConfig, rng: &mut Rng) -> Tensor {
    let n = config.seq_len * config.input_features;
    Tensor::new(
        vec![config.seq_len, config.input_features],
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn inference_is_deterministic_and_shaped() {
    let config = tiny_config();
    let model = EncoderModel::init(&config, &mut Rng::new(1)).unwrap();
    let x = rand_interval(&config, &mut Rng::new(2));
    let mut mode = EncodeMode::Infer { selection_seed: 3 };
    let a = encode(&model, &x, &mut mode).unwrap();
    let mut mode = EncodeMode::Infer { selection_seed: 3 };
    let b = encode(&model, &x, &mut mode).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape, vec![config.embedding_dim]);
}

#[test]
fn non_finite_input_names_the_row() {
    let config = tiny_config();
    let model = EncoderModel::init(&config, &mut Rng::new(1)).unwrap();
    let mut x = rand_interval(&config, &mut Rng::new(2));
    x.data[2 * config.input_features + 1] = f64::NAN;
    let mut mode = EncodeMode::Infer { selection_seed: 0 };
    let err = encode(&model, &x, &mut mode).unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");
}

#[test]
fn one_layer_encode_matches_primitive_composition() {
    let config = tiny_config();
    let model = EncoderModel::init(&config, &mut Rng::new(7)).unwrap();
    let x = rand_interval(&config, &mut Rng::new(8));
    let mut mode = EncodeMode::Infer { selection_seed: 0 };
    let got = encode(&model, &x, &mut mode).unwrap();

    // oracle: compose the primitives step by step
    let mut tape = Tape::new();
    let l = config.seq_len;
    let dm = config.dim_model();
    let d = config.attention.head_dim();
    let layer = &model.layers[0];
    let xv = tape.leaf(x.clone());
    let proj = tape.leaf(model.proj_w.clone());
    let mut h = tape.matmul(xv, proj).unwrap();
    let pe = tape.leaf(positional_table(l, dm));
    h = tape.add(h, pe).unwrap();

    let wq = tape.leaf(layer.wq.clone());
    let wk = tape.leaf(layer.wk.clone());
    let wv = tape.leaf(layer.wv.clone());
    let wo = tape.leaf(layer.wo.clone());
    let qf = tape.matmul(h, wq).unwrap();
    let kf = tape.matmul(h, wk).unwrap();
    let vf = tape.matmul(h, wv).unwrap();
    let mut heads = Vec::new();
    for hd in 0..config.num_heads() {
        let q = tape.slice_cols(qf, hd * d, d).unwrap();
        let k = tape.slice_cols(kf, hd * d, d).unwrap();
        let v = tape.slice_cols(vf, hd * d, d).unwrap();
        heads.push(scaled_dot_attention(&mut tape, q, k, v).unwrap());
    }
    let concat = tape.concat_cols(&heads).unwrap();
    let attn = tape.matmul(concat, wo).unwrap();
    let res = tape.add(h, attn).unwrap();
    let g1 = tape.leaf(layer.ln1_gain.clone());
    let b1n = tape.leaf(layer.ln1_bias.clone());
    h = tape.layer_norm(res, g1, b1n).unwrap();

    let w1 = tape.leaf(layer.w1.clone());
    let b1 = tape.leaf(layer.b1.clone());
    let w2 = tape.leaf(layer.w2.clone());
    let b2 = tape.leaf(layer.b2.clone());
    let f = reguformer::attention::ffn(&mut tape, h, w1, b1, w2, b2).unwrap();
    let res = tape.add(h, f).unwrap();
    let g2 = tape.leaf(layer.ln2_gain.clone());
    let b2n = tape.leaf(layer.ln2_bias.clone());
    h = tape.layer_norm(res, g2, b2n).unwrap();

    let flat = tape.reshape(h, vec![1, l * dm]).unwrap();
    let head_w = tape.leaf(model.head_w.clone());
    let emb = tape.matmul(flat, head_w).unwrap();

    for (a, b) in got.data.iter().zip(tape.data(emb)) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn sparse_with_full_u_matches_dense_encoder() {
    let mut config = tiny_config();
    config.num_layers = 2;
    let model = EncoderModel::init(&config, &mut Rng::new(11)).unwrap();
    let x = rand_interval(&config, &mut Rng::new(12));
    let mut mode = EncodeMode::Infer { selection_seed: 1 };
    let dense = encode(&model, &x, &mut mode).unwrap();

    use SelectionStrategy::*;
    for (sq, sk) in [
        (Top, Full), (Random, Full), (Full, Top), (Full, Random),
        (Top, Top), (Top, Random), (Random, Top), (Random, Random),
    ] {
        let mut sparse_model = model.clone();
        sparse_model.config.attention.strategy_q = sq;
        sparse_model.config.attention.strategy_k = sk;
        sparse_model.config.attention.factor = 1000;
        assert_eq!(sparse_model.config.attention.kept_count(config.seq_len), config.seq_len);
        let mut mode = EncodeMode::Infer { selection_seed: 1 };
        let sparse = encode(&sparse_model, &x, &mut mode).unwrap();
        for (a, b) in sparse.data.iter().zip(&dense.data) {
            assert!((a - b).abs() < 1e-10, "{sq:?}/{sk:?}");
        }
    }
}

#[test]
fn positional_encoding_flag_changes_output() {
    let config = tiny_config();
    let model = EncoderModel::init(&config, &mut Rng::new(3)).unwrap();
    let x = rand_interval(&config, &mut Rng::new(4));
    let mut off_model = model.clone();
    off_model.config.positional_encoding = false;
    let mut mode = EncodeMode::Infer { selection_seed: 0 };
    let with_pe = encode(&model, &x, &mut mode).unwrap();
    let mut mode = EncodeMode::Infer { selection_seed: 0 };
    let without = encode(&off_model, &x, &mut mode).unwrap();
    assert_ne!(with_pe.data, without.data);
}

#[test]
fn every_parameter_receives_a_gradient() {
    let config = tiny_config();
    let model = EncoderModel::init(&config, &mut Rng::new(5)).unwrap();
    let x = rand_interval(&config, &mut Rng::new(6));

    let mut tape = Tape::new();
    let vars = model.register(&mut tape, true);
    let xv = tape.constant(x);
    let mut rng = Rng::new(9);
    let mut mode = EncodeMode::Train { rng: &mut rng, selection_seed: 4 };
    let emb = forward_on_tape(&mut tape, &vars, &model.config, xv, &mut mode).unwrap();
    let sq = tape.mul(emb, emb).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    for (i, v) in vars.ordered().iter().enumerate() {
        assert!(tape.grad(*v).is_some(), "parameter {i} detached");
    }
}

#[test]
fn model_file_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let config = tiny_config();
    let model = EncoderModel::init(&config, &mut Rng::new(21)).unwrap();
    save(&model, &path).unwrap();
    let loaded = load(&path).unwrap();
    assert_eq!(loaded.config, model.config);
    for (a, b) in loaded.parameters().iter().zip(model.parameters()) {
        assert_eq!(a.shape, b.shape);
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    // saving the loaded model again is byte-identical
    let path2 = dir.path().join("model2.bin");
    save(&loaded, &path2).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );
}

#[test]
fn truncated_model_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let model = EncoderModel::init(&tiny_config(), &mut Rng::new(22)).unwrap();
    save(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
    let err = load(&path).unwrap_err().to_string();
    assert!(err.contains("format") || err.contains("blob"), "{err}");
}

#[test]
fn foreign_file_rejected_by_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("not_a_model.bin");
    std::fs::write(&path, b"definitely not a model").unwrap();
    assert!(load(&path).is_err());
}
