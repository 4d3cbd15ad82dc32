//! Downstream classifiers over frozen embeddings: multinomial logistic
//! regression (one linear layer) and a three-linear-layer ReLU network
//! with hidden widths 64 and 128. Both train with softmax cross entropy
//! on the tape and report macro one-vs-rest ROC AUC, PR AUC, and F1 on a
//! stratified 80/20 split.

use std::collections::BTreeMap;

use super::metrics;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::training::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamClassifier {
    Logistic,
    Mlp,
}

/// Layer shapes of the MLP head for a given input/class count.
pub fn mlp_dims(embedding_dim: usize, num_classes: usize) -> [(usize, usize); 3] {
    [(embedding_dim, 64), (64, 128), (128, num_classes)]
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
    kept_classes: Vec<usize>,
}

/// Stratified 80/20 split; classes with fewer than 2 samples are excluded
/// with a warning.
fn stratified_split(labels: &[usize], rng: &mut Rng) -> Result<Split> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
        kept_classes: Vec::new(),
    };
    for (c, mut members) in by_class {
        if members.len() < 2 {
            log::warn!("class {c}: fewer than 2 samples, excluded");
            continue;
        }
        rng.shuffle(&mut members);
        let test_count = (members.len() as f64 * 0.2).ceil() as usize;
        let test_count = test_count.clamp(1, members.len() - 1);
        split.test.extend(&members[..test_count]);
        split.train.extend(&members[test_count..]);
        split.kept_classes.push(c);
    }
    if split.kept_classes.len() < 2 {
        return Err(Error::Metric(
            "downstream classification needs at least 2 usable classes".into(),
        ));
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

struct Net {
    /// Interleaved `[w0, b0, w1, b1, ...]`.
    params: Vec<Tensor>,
    layers: usize,
}

impl Net {
    fn init(dims: &[(usize, usize)], rng: &mut Rng) -> Self {
        let mut params = Vec::new();
        for &(fan_in, fan_out) in dims {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.push(
                Tensor::new(
                    vec![fan_in, fan_out],
                    (0..fan_in * fan_out)
                        .map(|_| rng.uniform(-bound, bound))
                        .collect(),
                )
                .unwrap()
                .with_grad(),
            );
            params.push(Tensor::zeros(vec![fan_out]).with_grad());
        }
        Net {
            params,
            layers: dims.len(),
        }
    }

    fn sizes(&self) -> Vec<usize> {
        self.params.iter().map(|t| t.numel()).collect()
    }

    /// Forward to logits; returns the parameter Vars in `params` order.
    fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut h = x;
        for layer in 0..self.layers {
            let w = &self.params[2 * layer];
            let b = &self.params[2 * layer + 1];
            let (wv, bv) = if trainable {
                (tape.leaf(w.clone()), tape.leaf(b.clone()))
            } else {
                (tape.constant(w.clone()), tape.constant(b.clone()))
            };
            vars.push(wv);
            vars.push(bv);
            h = tape.matmul(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if layer + 1 < self.layers {
                h = tape.relu(h);
            }
        }
        Ok((h, vars))
    }

    fn predict(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let (logits, _) = self.forward(&mut tape, x, false)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(tape.data(probs).to_vec())
    }
}

/// Train the requested classifier and evaluate on the held-out split.
/// Returns `roc_auc`, `pr_auc`, `f1` (all macro one-vs-rest).
pub fn downstream_classify(
    embeddings: &[Tensor],
    well_labels: &[usize],
    classifier: DownstreamClassifier,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    if embeddings.len() != well_labels.len() {
        return Err(Error::Contract(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            well_labels.len()
        )));
    }
    if embeddings.is_empty() {
        return Err(Error::Metric("no embeddings to classify".into()));
    }
    let dim = embeddings[0].numel();
    let mut rng = Rng::new(seed);
    let split = stratified_split(well_labels, &mut rng)?;

    let class_of: BTreeMap<usize, usize> = split
        .kept_classes
        .iter()
        .enumerate()
        .map(|(dense, &orig)| (orig, dense))
        .collect();
    let num_classes = split.kept_classes.len();

    let dims: Vec<(usize, usize)> = match classifier {
        DownstreamClassifier::Logistic => vec![(dim, num_classes)],
        DownstreamClassifier::Mlp => mlp_dims(dim, num_classes).to_vec(),
    };
    let mut net = Net::init(&dims, &mut rng);

    let stack = |indices: &[usize]| -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&embeddings[i].data);
        }
        Tensor::new(vec![indices.len(), dim], data).unwrap()
    };
    let train_x = stack(&split.train);
    let train_y: Vec<usize> = split
        .train
        .iter()
        .map(|&i| class_of[&well_labels[i]])
        .collect();
    let test_x = stack(&split.test);
    let test_y: Vec<usize> = split
        .test
        .iter()
        .map(|&i| class_of[&well_labels[i]])
        .collect();

    // one-hot mask picks the label probabilities out of the softmax
    let mut onehot = vec![0.0; split.train.len() * num_classes];
    for (r, &c) in train_y.iter().enumerate() {
        onehot[r * num_classes + c] = 1.0;
    }
    let onehot = Tensor::new(vec![split.train.len(), num_classes], onehot).unwrap();

    let sizes = net.sizes();
    let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8, &sizes);
    for _ in 0..300 {
        let mut tape = Tape::new();
        let x = tape.constant(train_x.clone());
        let (logits, param_vars) = net.forward(&mut tape, x, true)?;
        let probs = tape.softmax_rows(logits)?;
        let clamped = tape.clamp(probs, 1e-12, 1.0);
        let lp = tape.ln(clamped)?;
        let mask = tape.constant(onehot.clone());
        let picked = tape.mul(lp, mask)?;
        let total = tape.sum(picked);
        let loss = tape.scale(total, -1.0 / split.train.len() as f64);
        tape.backward(loss)?;

        for (var, param) in param_vars.iter().zip(net.params.iter_mut()) {
            param.grad = tape.grad(*var).map(|g| g.to_vec());
        }
        let mut refs: Vec<&mut Tensor> = net.params.iter_mut().collect();
        adam.step(&mut refs);
        for p in refs {
            p.grad = None;
        }
    }

    // macro one-vs-rest metrics on the held-out split
    let probs = net.predict(&test_x)?;
    let mut roc_sum = 0.0;
    let mut pr_sum = 0.0;
    let mut counted = 0usize;
    for c in 0..num_classes {
        let scores: Vec<f64> = (0..test_y.len())
            .map(|r| probs[r * num_classes + c])
            .collect();
        let labels: Vec<f64> = test_y.iter().map(|&t| (t == c) as u8 as f64).collect();
        if labels.iter().all(|&y| y == 0.0) || labels.iter().all(|&y| y == 1.0) {
            log::warn!("class {c} absent from the test split, skipped in macro AUCs");
            continue;
        }
        roc_sum += metrics::roc_auc(&scores, &labels)?;
        pr_sum += metrics::pr_auc(&scores, &labels)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Metric("no class measurable on the test split".into()));
    }
    let predicted: Vec<usize> = (0..test_y.len())
        .map(|r| {
            (0..num_classes)
                .max_by(|&a, &b| {
                    probs[r * num_classes + a]
                        .partial_cmp(&probs[r * num_classes + b])
                        .unwrap()
                })
                .unwrap()
        })
        .collect();
    let f1 = metrics::macro_f1(&predicted, &test_y, num_classes)?;

    let mut out = BTreeMap::new();
    out.insert("roc_auc".into(), roc_sum / counted as f64);
    out.insert("pr_auc".into(), pr_sum / counted as f64);
    out.insert("f1".into(), f1);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(centers: &[&[f64]], per_class: usize, spread: f64, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                points.push(
                    Tensor::new(
                        vec![center.len()],
                        center.iter().map(|&v| v + spread * rng.normal()).collect(),
                    )
                    .unwrap(),
                );
                labels.push(c);
            }
        }
        (points, labels)
    }

    #[test]
    fn separable_blobs_reach_high_f1() {
        let (points, labels) = blobs(&[&[0.0, 0.0], &[10.0, 10.0]], 40, 0.5, 1);
        for classifier in [DownstreamClassifier::Logistic, DownstreamClassifier::Mlp] {
            let metrics = downstream_classify(&points, &labels, classifier, 7).unwrap();
            assert!(metrics["f1"] >= 0.99, "{classifier:?}: {metrics:?}");
        }
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        let (points, mut labels) = blobs(&[&[0.0, 0.0], &[8.0, 8.0]], 400, 0.5, 2);
        let mut rng = Rng::new(3);
        rng.shuffle(&mut labels);
        let metrics =
            downstream_classify(&points, &labels, DownstreamClassifier::Logistic, 7).unwrap();
        assert!(
            (metrics["roc_auc"] - 0.5).abs() <= 0.1,
            "roc {metrics:?}"
        );
    }

    #[test]
    fn mlp_layer_dims_contract() {
        assert_eq!(mlp_dims(32, 8), [(32, 64), (64, 128), (128, 8)]);
    }

    #[test]
    fn tiny_class_excluded() {
        let (mut points, mut labels) = blobs(&[&[0.0], &[5.0]], 20, 0.3, 4);
        points.push(Tensor::new(vec![1], vec![99.0]).unwrap());
        labels.push(2);
        let metrics =
            downstream_classify(&points, &labels, DownstreamClassifier::Logistic, 7).unwrap();
        assert!(metrics["f1"] > 0.9);
    }
}
