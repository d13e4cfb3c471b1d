//! Run configuration. A config file must spell out every key; command-line
//! flags are applied on top and the result is echoed next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epag_core::classifier::ClassifierConfig;
use epag_core::encoder::EncoderConfig;
use epag_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub tokenizer: TokenizerSection,
    pub encoder: EncoderSection,
    pub classifier: ClassifierSection,
    pub training: TrainingSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// CoNLL-U parses aligned with `train`, needed when splitting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_parses: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_parses: Option<PathBuf>,
    /// Train and evaluate on split fragments instead of whole sentences.
    pub use_split_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    pub rounds: usize,
    /// Existing vocabulary; when absent one is trained on the train set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub k_rel: usize,
    pub mem_len: usize,
    pub max_seq_len: usize,
    pub rel_pos_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden: usize,
    pub attention_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// The small random model used by `gradcheck`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub k_rel: usize,
    pub mem_len: usize,
    pub max_seq_len: usize,
    pub hidden: usize,
    pub records: usize,
    pub max_len: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::new(0);
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("epag-out"),
            data: DataSection {
                train: None,
                test: None,
                train_parses: None,
                test_parses: None,
                use_split_data: false,
            },
            tokenizer: TokenizerSection {
                vocab_size: 4000,
                rounds: 4,
                vocab: None,
            },
            encoder: EncoderSection {
                d_model: enc.d_model,
                n_heads: enc.n_heads,
                n_layers: enc.n_layers,
                d_ff: enc.d_ff,
                k_rel: enc.k_rel,
                mem_len: enc.mem_len,
                max_seq_len: enc.max_seq_len,
                rel_pos_enabled: enc.rel_pos_enabled,
            },
            classifier: ClassifierSection {
                hidden: 64,
                attention_dim: 128,
            },
            training: TrainingSection {
                learning_rate: train.learning_rate,
                batch_size: train.batch_size,
                epochs: train.epochs,
                grad_clip_norm: train.grad_clip_norm,
                beta1: train.beta1,
                beta2: train.beta2,
                epsilon: train.epsilon,
            },
            gradcheck: GradcheckSection {
                vocab_size: 20,
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                d_ff: 32,
                k_rel: 3,
                mem_len: 8,
                max_seq_len: 5,
                hidden: 8,
                records: 3,
                max_len: 9,
                step: 1e-5,
                tolerance: 1e-4,
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            vocab_size,
            d_model: e.d_model,
            n_heads: e.n_heads,
            n_layers: e.n_layers,
            d_ff: e.d_ff,
            k_rel: e.k_rel,
            mem_len: e.mem_len,
            max_seq_len: e.max_seq_len,
            rel_pos_enabled: e.rel_pos_enabled,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            input_dim: self.encoder.d_model,
            hidden: self.classifier.hidden,
            attention_dim: self.classifier.attention_dim,
        }
    }

    pub fn train_config(&self, threads: usize) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            grad_clip_norm: t.grad_clip_norm,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            threads,
        }
    }

    /// Input files a training run reads, checked before any work starts.
    pub fn validate_train_inputs(&self) -> Result<()> {
        let Some(train) = &self.data.train else {
            bail!("data.train is not set (use --train or the config file)");
        };
        let d = &self.data;
        let inputs = [
            ("data.train", Some(train)),
            ("data.test", d.test.as_ref()),
            ("data.train_parses", d.train_parses.as_ref()),
            ("data.test_parses", d.test_parses.as_ref()),
            ("tokenizer.vocab", self.tokenizer.vocab.as_ref()),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                if !path.is_file() {
                    bail!("{key}: {} does not exist", path.display());
                }
            }
        }
        if d.use_split_data {
            if d.train_parses.is_none() {
                bail!("data.train_parses is required when data.use_split_data is true");
            }
            if d.test.is_some() && d.test_parses.is_none() {
                bail!("data.test_parses is required to split data.test");
            }
        }
        self.encoder_config(RESERVED_FLOOR).validate()?;
        self.classifier_config().validate()?;
        self.train_config(1).validate()?;
        Ok(())
    }
}

/// Smallest vocabulary any trained tokenizer produces; lets the encoder
/// settings be checked before the vocabulary exists.
const RESERVED_FLOOR: usize = epag_core::tokenizer::RESERVED_PIECES.len() + 1;

/// `EPAG_THREADS`, defaulting to 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("EPAG_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("EPAG_THREADS must be a positive integer, got {s:?}"),
        },
    }
}
