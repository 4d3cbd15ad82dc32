//! The seven subcommands. Each one resolves the configuration, creates a
//! timestamped run directory under the output root, echoes the resolved
//! config verbatim, and writes its artifacts there.

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use reguformer::data::{self, PairBatch, WellInterval};
use reguformer::encoder::{load as load_model, save as save_model, EncoderModel};
use reguformer::error::{Error, Result};
use reguformer::eval::{
    self,
    interpret::{MaskCriterion, MaskFill},
    report::{config_hash, masking_csv, robustness_csv, timing_csv, MetricSummary},
    robustness::CorruptionMode,
    EvalReport,
};
use reguformer::tensor::Rng;
use reguformer::training::{
    load_head, save_head, score_dataset, train_siamese, train_triplet, HeadKind, LossKind,
    PairHead,
};

use crate::config::{Overrides, RunConfig};

// RNG stream labels, one per independent draw site.
const STREAM_MODEL_INIT: u64 = 1;
const STREAM_HEAD_INIT: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_TRAIN_PAIRS: u64 = 4;
const STREAM_TEST_PAIRS: u64 = 5;

/// Create `<output_root>/<name or timestamp_command>/` and echo the config.
fn create_run_dir(config: &RunConfig, command: &str, run_name: Option<&str>) -> Result<PathBuf> {
    let name = match run_name {
        Some(n) => n.to_string(),
        None => {
            let stamp = SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            format!("{stamp}_{command}")
        }
    };
    let dir = Path::new(&config.output_dir).join(name);
    std::fs::create_dir_all(dir.join("curves"))?;
    std::fs::write(dir.join("config.resolved"), config.resolved_toml()?)?;
    Ok(dir)
}

/// Materialize the interval pool from the configured source.
fn build_intervals(config: &RunConfig) -> Result<Vec<WellInterval>> {
    match config.data.source.as_str() {
        "synthetic" => {
            let logs = data::synthesize(&config.data.synthetic)?;
            let logs = data::preprocess(&logs)?;
            data::sample_intervals(&logs, config.data.stride)
        }
        "csv" => {
            let path = config.data.csv_path.as_ref().expect("validated");
            let logs = data::ingest_csv(Path::new(path))?;
            let logs = data::preprocess(&logs)?;
            data::sample_intervals(&logs, config.data.stride)
        }
        "intervals" => {
            let path = config.data.intervals_path.as_ref().expect("validated");
            data::load_intervals(Path::new(path))
        }
        other => Err(Error::Config(format!("unknown data source \"{other}\""))),
    }
}

/// Well-grouped split: fold 0 is the held-out test side. With a single
/// fold everything lands in both pools (no holdout), with a warning.
fn split_pools(config: &RunConfig, intervals: &[WellInterval]) -> Result<(Vec<usize>, Vec<usize>)> {
    let folds = config.evaluation.folds;
    if folds == 1 {
        log::warn!("evaluation.folds = 1: train and test pools share all wells");
        let all: Vec<usize> = (0..intervals.len()).collect();
        return Ok((all.clone(), all));
    }
    let mut rng = Rng::from_seed_and_stream(config.seed, STREAM_SPLIT);
    let assignment = data::group_split(intervals, folds, &mut rng)?;
    let train: Vec<usize> = (0..intervals.len()).filter(|&i| assignment[i] != 0).collect();
    let test: Vec<usize> = (0..intervals.len()).filter(|&i| assignment[i] == 0).collect();
    Ok((train, test))
}

fn test_pairs(config: &RunConfig, intervals: &[WellInterval], test_pool: &[usize]) -> Result<PairBatch> {
    let mut rng = Rng::from_seed_and_stream(config.seed, STREAM_TEST_PAIRS);
    data::make_pairs_from(intervals, test_pool, config.training.n_test_pairs, &mut rng)
}

fn binary_metrics(scores: &[f64], labels: &[f64]) -> Result<Vec<(&'static str, f64)>> {
    Ok(vec![
        ("pr_auc", eval::pr_auc(scores, labels)?),
        ("roc_auc", eval::roc_auc(scores, labels)?),
        ("f1", eval::f1(scores, labels, 0.5)?),
    ])
}

fn base_report(config: &RunConfig) -> Result<EvalReport> {
    let mut report = EvalReport {
        model_tag: config.model_tag(),
        config_hash: config_hash(&config.resolved_toml()?),
        ..Default::default()
    };
    report.seeds.insert("run".into(), config.seed);
    report
        .seeds
        .insert("synthetic".into(), config.data.synthetic.seed);
    Ok(report)
}

pub fn cmd_synthesize(overrides: &Overrides) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "synthesize", overrides.run_name.as_deref())?;
    let logs = data::synthesize(&config.data.synthetic)?;
    data::write_csv(&logs, &dir.join("data.csv"))?;
    println!("{}", dir.display());
    Ok(dir)
}

pub fn cmd_preprocess(overrides: &Overrides) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "preprocess", overrides.run_name.as_deref())?;
    let logs = match config.data.source.as_str() {
        "csv" => data::ingest_csv(Path::new(config.data.csv_path.as_ref().ok_or_else(
            || Error::Config("preprocess needs data.source = csv with a path".into()),
        )?))?,
        "synthetic" => data::synthesize(&config.data.synthetic)?,
        other => {
            return Err(Error::Config(format!(
                "preprocess expects csv or synthetic source, got \"{other}\""
            )))
        }
    };
    let logs = data::preprocess(&logs)?;
    let intervals = data::sample_intervals(&logs, config.data.stride)?;
    data::save_intervals(&intervals, &dir.join("intervals.bin"))?;
    println!("{}", dir.display());
    Ok(dir)
}

/// Train one model on the grouped split and write every artifact.
pub fn cmd_train(overrides: &Overrides) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "train", overrides.run_name.as_deref())?;
    let intervals = build_intervals(&config)?;
    let (train_pool, test_pool) = split_pools(&config, &intervals)?;

    let enc_config = config.encoder_config()?;
    let mut model = EncoderModel::init(
        &enc_config,
        &mut Rng::from_seed_and_stream(config.seed, STREAM_MODEL_INIT),
    )?;
    let head_spec = config.head_spec()?;
    let loss = config.loss_kind()?;
    if loss == LossKind::Triplet && head_spec.kind == HeadKind::Fc {
        return Err(Error::Config(
            "the fc head is trained by the siamese loss; use euclidean or cosine with triplet"
                .into(),
        ));
    }
    let mut head = PairHead::init(
        head_spec,
        enc_config.embedding_dim,
        &mut Rng::from_seed_and_stream(config.seed, STREAM_HEAD_INIT),
    );
    let opts = config.train_options()?;
    let mut pair_rng = Rng::from_seed_and_stream(config.seed, STREAM_TRAIN_PAIRS);
    let held_out = test_pairs(&config, &intervals, &test_pool)?;

    let history = match loss {
        LossKind::Siamese => {
            let pairs = data::make_pairs_from(
                &intervals,
                &train_pool,
                config.training.n_train_pairs,
                &mut pair_rng,
            )?;
            train_siamese(&mut model, &mut head, &intervals, &pairs, Some(&held_out), &opts)?
        }
        LossKind::Triplet => {
            let triplets = data::make_triplets_from(
                &intervals,
                &train_pool,
                config.training.n_train_pairs,
                &mut pair_rng,
            )?;
            train_triplet(&mut model, &intervals, &triplets, None, &opts)?
        }
    };

    save_model(&model, &dir.join("model.bin"))?;
    save_head(&head, enc_config.embedding_dim, &dir.join("head.bin"))?;
    std::fs::write(dir.join("history.csv"), history.to_csv())?;

    let scores = score_dataset(&model, &head, &intervals, &held_out, config.seed)?;
    let mut report = base_report(&config)?;
    for (name, value) in binary_metrics(&scores, &held_out.labels)? {
        report
            .metrics
            .insert(name.into(), MetricSummary::from_folds(&[value]));
    }
    report.write(&dir.join("report.json"))?;
    println!("{}", dir.display());
    Ok(dir)
}

fn load_run_model(run_dir: &Path, reg_override: Option<&str>) -> Result<(EncoderModel, PairHead)> {
    let mut model = load_model(&run_dir.join("model.bin"))?;
    if let Some(token) = reg_override {
        let (variant, sq, sk) = reguformer::attention::AttentionSpec::strategies_from_token(token)?;
        model.config.attention.variant = variant;
        model.config.attention.strategy_q = sq;
        model.config.attention.strategy_k = sk;
    }
    let head = load_head(&run_dir.join("head.bin"))?;
    Ok((model, head))
}

/// Evaluate an existing model on the held-out pool, or run full grouped
/// cross-validation when no model is given.
pub fn cmd_evaluate(overrides: &Overrides, model_dir: Option<&Path>) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "evaluate", overrides.run_name.as_deref())?;
    let intervals = build_intervals(&config)?;
    let mut report = base_report(&config)?;

    match model_dir {
        Some(md) => {
            let (model, head) = load_run_model(md, overrides.reg.as_deref())?;
            let (_, test_pool) = split_pools(&config, &intervals)?;
            let held_out = test_pairs(&config, &intervals, &test_pool)?;
            let scores = score_dataset(&model, &head, &intervals, &held_out, config.seed)?;
            for (name, value) in binary_metrics(&scores, &held_out.labels)? {
                report
                    .metrics
                    .insert(name.into(), MetricSummary::from_folds(&[value]));
            }
        }
        None => {
            let folds = config.evaluation.folds;
            let mut rng = Rng::from_seed_and_stream(config.seed, STREAM_SPLIT);
            let assignment = data::group_split(&intervals, folds, &mut rng)?;
            let mut fold_values: Vec<Vec<f64>> = vec![Vec::new(); 3];
            for fold in 0..folds {
                let train_pool: Vec<usize> =
                    (0..intervals.len()).filter(|&i| assignment[i] != fold).collect();
                let test_pool: Vec<usize> =
                    (0..intervals.len()).filter(|&i| assignment[i] == fold).collect();
                let fold_seed = config.seed.wrapping_add(fold as u64);
                let enc_config = config.encoder_config()?;
                let mut model = EncoderModel::init(
                    &enc_config,
                    &mut Rng::from_seed_and_stream(fold_seed, STREAM_MODEL_INIT),
                )?;
                let mut head = PairHead::init(
                    config.head_spec()?,
                    enc_config.embedding_dim,
                    &mut Rng::from_seed_and_stream(fold_seed, STREAM_HEAD_INIT),
                );
                let mut opts = config.train_options()?;
                opts.seed = fold_seed;
                let mut pair_rng = Rng::from_seed_and_stream(fold_seed, STREAM_TRAIN_PAIRS);
                let mut test_rng = Rng::from_seed_and_stream(fold_seed, STREAM_TEST_PAIRS);
                let held_out = data::make_pairs_from(
                    &intervals,
                    &test_pool,
                    config.training.n_test_pairs,
                    &mut test_rng,
                )?;
                match config.loss_kind()? {
                    LossKind::Siamese => {
                        let pairs = data::make_pairs_from(
                            &intervals,
                            &train_pool,
                            config.training.n_train_pairs,
                            &mut pair_rng,
                        )?;
                        train_siamese(&mut model, &mut head, &intervals, &pairs, None, &opts)?;
                    }
                    LossKind::Triplet => {
                        let triplets = data::make_triplets_from(
                            &intervals,
                            &train_pool,
                            config.training.n_train_pairs,
                            &mut pair_rng,
                        )?;
                        train_triplet(&mut model, &intervals, &triplets, None, &opts)?;
                    }
                }
                let scores = score_dataset(&model, &head, &intervals, &held_out, fold_seed)?;
                for (slot, (_, value)) in binary_metrics(&scores, &held_out.labels)?
                    .into_iter()
                    .enumerate()
                {
                    fold_values[slot].push(value);
                }
            }
            for (slot, name) in ["pr_auc", "roc_auc", "f1"].into_iter().enumerate() {
                report
                    .metrics
                    .insert(name.into(), MetricSummary::from_folds(&fold_values[slot]));
            }
        }
    }
    report.write(&dir.join("report.json"))?;
    println!("{}", dir.display());
    Ok(dir)
}

pub fn cmd_robustness(overrides: &Overrides, model_dir: &Path) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "robustness", overrides.run_name.as_deref())?;
    let intervals = build_intervals(&config)?;
    let (model, head) = load_run_model(model_dir, overrides.reg.as_deref())?;
    let (_, test_pool) = split_pools(&config, &intervals)?;
    let held_out = test_pairs(&config, &intervals, &test_pool)?;

    let modes: Vec<CorruptionMode> = config
        .evaluation
        .modes
        .iter()
        .map(|m| CorruptionMode::parse(m))
        .collect::<Result<_>>()?;
    let curves = eval::robustness_sweep(
        &model,
        &head,
        &intervals,
        &held_out,
        &config.evaluation.fractions,
        &modes,
        config.seed,
    )?;
    std::fs::write(dir.join("curves/robustness.csv"), robustness_csv(&curves))?;

    let mut report = base_report(&config)?;
    let baseline = curves
        .iter()
        .find(|p| p.fraction == 0.0)
        .map(|p| p.pr_auc);
    if let Some(b) = baseline {
        report
            .metrics
            .insert("pr_auc_baseline".into(), MetricSummary::from_folds(&[b]));
    }
    report.robustness = curves;
    report.write(&dir.join("report.json"))?;
    println!("{}", dir.display());
    Ok(dir)
}

pub fn cmd_analyze_attention(overrides: &Overrides, model_dir: &Path) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "analyze_attention", overrides.run_name.as_deref())?;
    let intervals = build_intervals(&config)?;
    let (model, head) = load_run_model(model_dir, overrides.reg.as_deref())?;
    let (_, test_pool) = split_pools(&config, &intervals)?;
    let mut pair_rng = Rng::from_seed_and_stream(config.seed, STREAM_TEST_PAIRS);
    let pairs = data::make_pairs_from(
        &intervals,
        &test_pool,
        config.evaluation.n_analysis_pairs,
        &mut pair_rng,
    )?;

    let (mean, std, kept) =
        eval::attention_gradient_correlation(&model, &head, &intervals, &pairs, config.seed)?;
    let fill = MaskFill::parse(&config.evaluation.mask_fill)?;
    let mut masking = Vec::new();
    for criterion_name in &config.evaluation.mask_criteria {
        let criterion = MaskCriterion::parse(criterion_name)?;
        masking.extend(eval::masking_sweep(
            &model,
            &head,
            &intervals,
            &pairs,
            criterion,
            fill,
            &config.evaluation.fractions,
            config.seed,
        )?);
    }
    std::fs::write(dir.join("curves/masking.csv"), masking_csv(&masking))?;

    let mut report = base_report(&config)?;
    report.attention_gradient_correlation = Some(eval::report::CorrelationSummary {
        mean,
        std,
        pairs: kept,
    });
    report.masking = masking;
    report.write(&dir.join("report.json"))?;
    println!("{}", dir.display());
    Ok(dir)
}

pub fn cmd_benchmark(overrides: &Overrides) -> Result<PathBuf> {
    let config = RunConfig::load(overrides)?;
    let dir = create_run_dir(&config, "benchmark", overrides.run_name.as_deref())?;
    let mut variants = Vec::new();
    for token in &config.benchmark.variants {
        let (variant, sq, sk) = reguformer::attention::AttentionSpec::strategies_from_token(token)?;
        let mut spec = config.attention_spec()?;
        spec.variant = variant;
        spec.strategy_q = sq;
        spec.strategy_k = sk;
        variants.push(spec);
    }
    let rows = eval::inference_benchmark(
        &variants,
        &config.benchmark.seq_lens,
        config.benchmark.batch,
        config.benchmark.reps,
        config.seed,
    )?;
    std::fs::write(dir.join("curves/timing.csv"), timing_csv(&rows))?;
    println!("{}", dir.display());
    Ok(dir)
}
