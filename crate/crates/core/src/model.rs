//! Full model: encoder, BiGRU, attention pooling and the 5-way output layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::{
    attention_pool_on_tape, bigru_on_tape, logits_on_tape, ClassifierConfig, ClassifierParams,
    ClassifierVars,
};
use crate::corpus::{LabeledRecord, MoveLabel};
use crate::encoder::{
    encode_segment_on_tape, EncoderConfig, EncoderParams, EncoderVars, MemoryState,
};
use crate::tensor::{softmax, Matrix, Tape, Var};
use crate::tokenizer::SubwordVocab;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// A tokenized, labeled sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub ids: Vec<usize>,
    pub label: MoveLabel,
}

impl Example {
    pub fn new(id: impl Into<String>, ids: Vec<usize>, label: MoveLabel) -> Self {
        Example {
            id: id.into(),
            ids,
            label,
        }
    }

    pub fn from_record(vocab: &SubwordVocab, record: &LabeledRecord) -> Self {
        Example::new(record.id.clone(), vocab.encode(&record.text).ids, record.label)
    }
}

/// Tokenizes every record, skipping ones that encode to no pieces.
pub fn examples_from_records(vocab: &SubwordVocab, records: &[LabeledRecord]) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example::from_record(vocab, r))
        .filter(|e| {
            if e.ids.is_empty() {
                log::warn!("record {} has no tokens; skipped", e.id);
            }
            !e.ids.is_empty()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder_config: EncoderConfig,
    pub classifier_config: ClassifierConfig,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

pub(crate) struct ModelVars {
    encoder: EncoderVars,
    classifier: ClassifierVars,
}

/// Values produced by one forward pass on a tape.
pub(crate) struct Forward {
    pub logits: Var,
    pub pool_weights: Var,
}

impl Model {
    /// Seeded initialization; the classifier input width follows `d_model`.
    pub fn init(encoder_config: EncoderConfig, hidden: usize, seed: u64) -> Result<Self, ModelError> {
        let classifier_config = ClassifierConfig::new(encoder_config.d_model, hidden);
        Model::with_configs(encoder_config, classifier_config, seed)
    }

    pub fn with_configs(
        encoder_config: EncoderConfig,
        classifier_config: ClassifierConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        check_configs(&encoder_config, &classifier_config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&encoder_config, &mut rng);
        let classifier = ClassifierParams::init(&classifier_config, &mut rng);
        Ok(Model {
            encoder_config,
            classifier_config,
            encoder,
            classifier,
        })
    }

    /// Every tensor zero, layer-norm gains included.
    pub fn zeroed(
        encoder_config: EncoderConfig,
        classifier_config: ClassifierConfig,
    ) -> Result<Self, ModelError> {
        check_configs(&encoder_config, &classifier_config)?;
        let mut model = Model::with_configs(encoder_config, classifier_config, 0)?;
        for t in model.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(model)
    }

    /// Tensors in a fixed order shared with [`Model::tensors_mut`].
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.classifier.named_tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.classifier.tensors_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub(crate) fn register<'p>(&'p self, tape: &mut Tape<'p>) -> ModelVars {
        ModelVars {
            encoder: self.encoder.register(tape),
            classifier: self.classifier.register(tape),
        }
    }

    /// Leaf variables in [`Model::named_tensors`] order. Registration
    /// creates them first, so they are the tape's first entries.
    pub(crate) fn param_vars(&self) -> Vec<Var> {
        (0..self.named_tensors().len()).map(Var::from_index).collect()
    }

    /// Splits `ids` into `max_seq_len` segments, encodes them in order with
    /// the recurrence memory, and classifies the concatenated outputs.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape<'_>,
        vars: &ModelVars,
        ids: &[usize],
    ) -> Result<Forward, ModelError> {
        self.forward_inner(tape, vars, ids, None)
    }

    /// Same as [`Model::forward_on_tape`], but segment `k` attends over
    /// `memories[k]` instead of the memory this model would produce.
    pub(crate) fn forward_with_memories(
        &self,
        tape: &mut Tape<'_>,
        vars: &ModelVars,
        ids: &[usize],
        memories: &[MemoryState],
    ) -> Result<Forward, ModelError> {
        self.forward_inner(tape, vars, ids, Some(memories))
    }

    fn forward_inner(
        &self,
        tape: &mut Tape<'_>,
        vars: &ModelVars,
        ids: &[usize],
        memories: Option<&[MemoryState]>,
    ) -> Result<Forward, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let mut mem = MemoryState::empty(&self.encoder_config);
        let mut outputs = Vec::new();
        for (k, segment) in ids.chunks(self.encoder_config.max_seq_len).enumerate() {
            let current = match memories {
                Some(given) => given.get(k).ok_or_else(|| {
                    ModelError::Shape(format!("no memory supplied for segment {k}"))
                })?,
                None => &mem,
            };
            let (out, next) =
                encode_segment_on_tape(tape, &self.encoder_config, &vars.encoder, segment, current)?;
            outputs.push(out);
            mem = next;
        }
        let encoded = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat_rows(&outputs)
        };
        let states = bigru_on_tape(tape, &vars.classifier, encoded);
        let pooled = attention_pool_on_tape(tape, &vars.classifier, states);
        let logits = logits_on_tape(tape, &vars.classifier, pooled.sentence);
        Ok(Forward {
            logits,
            pool_weights: pooled.weights,
        })
    }

    /// The memory each segment of `ids` attends over during a normal forward
    /// pass, starting with the empty memory of the first segment.
    pub fn segment_memories(&self, ids: &[usize]) -> Result<Vec<MemoryState>, ModelError> {
        let mut mem = MemoryState::empty(&self.encoder_config);
        let mut out = Vec::new();
        for segment in ids.chunks(self.encoder_config.max_seq_len) {
            let mut tape = Tape::new();
            let vars = self.encoder.register(&mut tape);
            let (_, next) =
                encode_segment_on_tape(&mut tape, &self.encoder_config, &vars, segment, &mem)?;
            out.push(std::mem::replace(&mut mem, next));
        }
        Ok(out)
    }

    /// Class probabilities with every segment's memory supplied externally.
    pub fn predict_with_memories(
        &self,
        ids: &[usize],
        memories: &[MemoryState],
    ) -> Result<[f64; MoveLabel::COUNT], ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let fwd = self.forward_with_memories(&mut tape, &vars, ids, memories)?;
        let mut out = [0.0; MoveLabel::COUNT];
        out.copy_from_slice(&softmax(tape.value(fwd.logits).data()));
        Ok(out)
    }

    /// Class probabilities for one token sequence.
    pub fn predict(&self, ids: &[usize]) -> Result<[f64; MoveLabel::COUNT], ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let fwd = self.forward_on_tape(&mut tape, &vars, ids)?;
        let probs = softmax(tape.value(fwd.logits).data());
        let mut out = [0.0; MoveLabel::COUNT];
        out.copy_from_slice(&probs);
        Ok(out)
    }

    /// Probabilities together with the pooling weights over tokens.
    pub fn predict_with_attention(
        &self,
        ids: &[usize],
    ) -> Result<([f64; MoveLabel::COUNT], Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let fwd = self.forward_on_tape(&mut tape, &vars, ids)?;
        let mut out = [0.0; MoveLabel::COUNT];
        out.copy_from_slice(&softmax(tape.value(fwd.logits).data()));
        Ok((out, tape.value(fwd.pool_weights).data().to_vec()))
    }
}

fn check_configs(encoder: &EncoderConfig, classifier: &ClassifierConfig) -> Result<(), ModelError> {
    encoder.validate()?;
    classifier.validate()?;
    if classifier.input_dim != encoder.d_model {
        return Err(ModelError::InvalidConfig(format!(
            "classifier input_dim {} differs from d_model {}",
            classifier.input_dim, encoder.d_model
        )));
    }
    Ok(())
}
