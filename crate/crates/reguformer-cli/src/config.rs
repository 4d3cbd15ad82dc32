//! Run configuration: a TOML file merged with command-line overrides
//! (flags win), resolvable to a canonical `config.resolved` echo that
//! reproduces the run byte-for-byte.

use std::path::PathBuf;

use reguformer::attention::{AttentionSpec, SparsityMeasure};
use reguformer::data::SyntheticSpec;
use reguformer::encoder::EncoderConfig;
use reguformer::error::Error;
use reguformer::training::{HeadKind, HeadSpec, LossKind, TrainOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub data: DataConfig,
    pub encoder: EncoderSection,
    pub attention: AttentionSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub benchmark: BenchmarkSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: "runs".into(),
            data: DataConfig::default(),
            encoder: EncoderSection::default(),
            attention: AttentionSection::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
            benchmark: BenchmarkSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `synthetic`, `csv`, or `intervals`.
    pub source: String,
    pub csv_path: Option<String>,
    pub intervals_path: Option<String>,
    pub stride: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            csv_path: None,
            intervals_path: None,
            stride: 50,
            synthetic: SyntheticSpec::desk_bundle(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub dim_model: usize,
    pub dim_feedforward: usize,
    pub dropout_prob: f64,
    pub embedding_dim: usize,
    pub seq_len: usize,
    pub positional_encoding: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        // Siamese transformer defaults scaled to two layers for desk runs
        EncoderSection {
            num_layers: 2,
            num_heads: 8,
            dim_model: 32,
            dim_feedforward: 128,
            dropout_prob: 0.156,
            embedding_dim: 32,
            seq_len: 100,
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    /// Regularization token: `transformer`, `performer`, `topQ`, `randQ`,
    /// `topK`, `randK`, or combinations like `randQ_randK`.
    pub regularization: String,
    pub factor: usize,
    pub num_rand_features: usize,
    /// `scaled_logits` (default) or `literal_kernel`.
    pub sparsity_measure: String,
}

impl Default for AttentionSection {
    fn default() -> Self {
        AttentionSection {
            regularization: "randQ_randK".into(),
            factor: 5,
            num_rand_features: 3,
            sparsity_measure: "scaled_logits".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub loss: String,
    pub head: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub margin: f64,
    pub n_train_pairs: usize,
    pub n_test_pairs: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            loss: "siamese".into(),
            head: "fc".into(),
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            margin: 1.75,
            n_train_pairs: 25_000,
            n_test_pairs: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub folds: usize,
    pub fractions: Vec<f64>,
    pub modes: Vec<String>,
    pub mask_criteria: Vec<String>,
    pub mask_fill: String,
    pub n_analysis_pairs: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            folds: 4,
            fractions: vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
            modes: vec!["zeros".into(), "gaussian_noise".into()],
            mask_criteria: vec![
                "low_attention".into(),
                "high_gradient".into(),
                "random".into(),
            ],
            mask_fill: "gaussian".into(),
            n_analysis_pairs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub variants: Vec<String>,
    pub seq_lens: Vec<usize>,
    pub batch: usize,
    pub reps: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            variants: vec!["transformer".into(), "randQ_randK".into()],
            seq_lens: vec![256, 1024, 4096],
            batch: 8,
            reps: 5,
        }
    }
}

/// Command-line overrides; every set flag wins over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Path to the TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root for run directories.
    #[arg(long)]
    pub output_dir: Option<String>,
    /// Regularization token (e.g. transformer, randQ_randK, performer).
    #[arg(long)]
    pub reg: Option<String>,
    /// Loss kind: siamese or triplet.
    #[arg(long)]
    pub loss: Option<String>,
    /// Scoring head: fc, euclidean, or cosine.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Input CSV (switches the data source to csv).
    #[arg(long)]
    pub csv: Option<String>,
    /// Preprocessed interval container (switches the source to intervals).
    #[arg(long)]
    pub intervals: Option<String>,
    #[arg(long)]
    pub n_train_pairs: Option<usize>,
    #[arg(long)]
    pub n_test_pairs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fixed run-directory name instead of a timestamped one.
    #[arg(long)]
    pub run_name: Option<String>,
}

impl RunConfig {
    pub fn load(overrides: &Overrides) -> Result<Self, Error> {
        let mut config = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = overrides.seed {
            config.seed = v;
        }
        if let Some(v) = &overrides.output_dir {
            config.output_dir = v.clone();
        } else if let Ok(v) = std::env::var("REGUFORMER_OUT") {
            config.output_dir = v;
        }
        if let Some(v) = &overrides.reg {
            config.attention.regularization = v.clone();
        }
        if let Some(v) = &overrides.loss {
            config.training.loss = v.clone();
        }
        if let Some(v) = &overrides.head {
            config.training.head = v.clone();
        }
        if let Some(v) = overrides.epochs {
            config.training.epochs = v;
        }
        if let Some(v) = overrides.lr {
            config.training.lr = v;
        }
        if let Some(v) = overrides.batch_size {
            config.training.batch_size = v;
        }
        if let Some(v) = &overrides.csv {
            config.data.source = "csv".into();
            config.data.csv_path = Some(v.clone());
        }
        if let Some(v) = &overrides.intervals {
            config.data.source = "intervals".into();
            config.data.intervals_path = Some(v.clone());
        }
        if let Some(v) = overrides.n_train_pairs {
            config.training.n_train_pairs = v;
        }
        if let Some(v) = overrides.n_test_pairs {
            config.training.n_test_pairs = v;
        }
        if let Some(v) = overrides.folds {
            config.evaluation.folds = v;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.encoder_config()?.validate()?;
        self.loss_kind()?;
        self.head_spec()?;
        if !["synthetic", "csv", "intervals"].contains(&self.data.source.as_str()) {
            return Err(Error::Config(format!(
                "unknown data source \"{}\"",
                self.data.source
            )));
        }
        if self.data.source == "csv" && self.data.csv_path.is_none() {
            return Err(Error::Config("data.source = csv needs data.csv_path".into()));
        }
        if self.data.source == "intervals" && self.data.intervals_path.is_none() {
            return Err(Error::Config(
                "data.source = intervals needs data.intervals_path".into(),
            ));
        }
        self.data.synthetic.validate()?;
        if self.evaluation.folds == 0 {
            return Err(Error::Config("evaluation.folds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn attention_spec(&self) -> Result<AttentionSpec, Error> {
        let (variant, strategy_q, strategy_k) =
            AttentionSpec::strategies_from_token(&self.attention.regularization)?;
        let sparsity_measure = match self.attention.sparsity_measure.as_str() {
            "scaled_logits" => SparsityMeasure::ScaledLogits,
            "literal_kernel" => SparsityMeasure::LiteralKernel,
            other => {
                return Err(Error::Config(format!(
                    "unknown sparsity measure \"{other}\""
                )))
            }
        };
        Ok(AttentionSpec {
            variant,
            strategy_q,
            strategy_k,
            factor: self.attention.factor,
            num_heads: self.encoder.num_heads,
            dim_model: self.encoder.dim_model,
            num_rand_features: self.attention.num_rand_features,
            sparsity_measure,
        })
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig, Error> {
        Ok(EncoderConfig {
            num_layers: self.encoder.num_layers,
            dim_feedforward: self.encoder.dim_feedforward,
            dropout_prob: self.encoder.dropout_prob,
            attention: self.attention_spec()?,
            input_features: reguformer::data::MODEL_FEATURES.len(),
            seq_len: self.encoder.seq_len,
            embedding_dim: self.encoder.embedding_dim,
            positional_encoding: self.encoder.positional_encoding,
        })
    }

    pub fn loss_kind(&self) -> Result<LossKind, Error> {
        match self.training.loss.as_str() {
            "siamese" => Ok(LossKind::Siamese),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(Error::Config(format!("unknown loss \"{other}\""))),
        }
    }

    pub fn head_spec(&self) -> Result<HeadSpec, Error> {
        let kind = match self.training.head.as_str() {
            "fc" => HeadKind::Fc,
            "euclidean" => HeadKind::Euclidean,
            "cosine" => HeadKind::Cosine,
            other => return Err(Error::Config(format!("unknown head \"{other}\""))),
        };
        Ok(HeadSpec {
            kind,
            hidden_size: 64,
            dropout: 0.25,
        })
    }

    pub fn train_options(&self) -> Result<TrainOptions, Error> {
        let mut opts = TrainOptions::new(self.loss_kind()?, self.seed);
        opts.epochs = self.training.epochs;
        opts.batch_size = self.training.batch_size;
        opts.lr = self.training.lr;
        opts.margin = self.training.margin;
        Ok(opts)
    }

    /// Canonical TOML echo; loading it back reproduces this config.
    pub fn resolved_toml(&self) -> Result<String, Error> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }

    pub fn model_tag(&self) -> String {
        format!("{}_{}", self.attention.regularization, self.training.loss)
    }
}
