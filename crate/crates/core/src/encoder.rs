//! Transformer encoder with relative-position self-attention and
//! segment-level recurrence memory.
//!
//! There are no absolute position embeddings. Order enters only through the
//! learned key/value tables indexed by the clipped offset `j - i`, which are
//! shared by all heads of a layer. Each layer can also attend over cached
//! rows from earlier segments. Those rows enter the graph as constants, so
//! gradients never flow into them.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::tensor::{Matrix, Tape, Var};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Relative offsets are clipped to `[-k_rel, k_rel]`.
    pub k_rel: usize,
    /// Cached rows per layer; 0 disables the memory.
    pub mem_len: usize,
    pub max_seq_len: usize,
    pub rel_pos_enabled: bool,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            k_rel: 8,
            mem_len: 32,
            max_seq_len: 128,
            rel_pos_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("vocab_size, d_model, n_heads and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive".into());
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_buckets(&self) -> usize {
        2 * self.k_rel + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_norm_gain: Matrix,
    pub attn_norm_bias: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
    /// Relative key table, `(2k+1) × d_head`.
    pub rel_key: Matrix,
    /// Relative value table, `(2k+1) × d_head`.
    pub rel_value: Matrix,
    pub ff_norm_gain: Matrix,
    pub ff_norm_bias: Matrix,
    pub ff_in: Matrix,
    pub ff_in_bias: Matrix,
    pub ff_out: Matrix,
    pub ff_out_bias: Matrix,
}

const LAYER_TENSORS: [&str; 14] = [
    "attn_norm_gain",
    "attn_norm_bias",
    "query",
    "key",
    "value",
    "output",
    "rel_key",
    "rel_value",
    "ff_norm_gain",
    "ff_norm_bias",
    "ff_in",
    "ff_in_bias",
    "ff_out",
    "ff_out_bias",
];

impl LayerParams {
    fn init<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = |rows, cols| Matrix::uniform(rows, cols, bound, rng);
        LayerParams {
            attn_norm_gain: Matrix::filled(1, d, 1.0),
            attn_norm_bias: Matrix::zeros(1, d),
            query: w(d, d),
            key: w(d, d),
            value: w(d, d),
            output: w(d, d),
            rel_key: w(config.n_buckets(), config.d_head()),
            rel_value: w(config.n_buckets(), config.d_head()),
            ff_norm_gain: Matrix::filled(1, d, 1.0),
            ff_norm_bias: Matrix::zeros(1, d),
            ff_in: w(d, config.d_ff),
            ff_in_bias: Matrix::zeros(1, config.d_ff),
            ff_out: w(config.d_ff, d),
            ff_out_bias: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Matrix; 14] {
        [
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.query,
            &self.key,
            &self.value,
            &self.output,
            &self.rel_key,
            &self.rel_value,
            &self.ff_norm_gain,
            &self.ff_norm_bias,
            &self.ff_in,
            &self.ff_in_bias,
            &self.ff_out,
            &self.ff_out_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 14] {
        [
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
            &mut self.rel_key,
            &mut self.rel_value,
            &mut self.ff_norm_gain,
            &mut self.ff_norm_bias,
            &mut self.ff_in,
            &mut self.ff_in_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Uniform `±1/√d_model` weights, unit norm gains, zero biases.
    pub fn init<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Self {
        let bound = 1.0 / (config.d_model as f64).sqrt();
        let embedding = Matrix::uniform(config.vocab_size, config.d_model, bound, rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams::init(config, rng))
            .collect();
        EncoderParams { embedding, layers }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("encoder.embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.tensors()) {
                out.push((format!("encoder.layer{l}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out
    }

    pub(crate) fn register<'p>(&'p self, tape: &mut Tape<'p>) -> EncoderVars {
        let embedding = tape.param(&self.embedding);
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let [ang, anb, q, k, v, o, rk, rv, fng, fnb, fi, fib, fo, fob] =
                    layer.tensors().map(|t| tape.param(t));
                LayerVars {
                    attn_norm_gain: ang,
                    attn_norm_bias: anb,
                    attention: AttentionVars {
                        query: q,
                        key: k,
                        value: v,
                        output: o,
                        rel_key: rk,
                        rel_value: rv,
                    },
                    ff_norm_gain: fng,
                    ff_norm_bias: fnb,
                    ff_in: fi,
                    ff_in_bias: fib,
                    ff_out: fo,
                    ff_out_bias: fob,
                }
            })
            .collect();
        EncoderVars { embedding, layers }
    }
}

struct AttentionVars {
    query: Var,
    key: Var,
    value: Var,
    output: Var,
    rel_key: Var,
    rel_value: Var,
}

pub(crate) struct LayerVars {
    attn_norm_gain: Var,
    attn_norm_bias: Var,
    attention: AttentionVars,
    ff_norm_gain: Var,
    ff_norm_bias: Var,
    ff_in: Var,
    ff_in_bias: Var,
    ff_out: Var,
    ff_out_bias: Var,
}

pub(crate) struct EncoderVars {
    embedding: Var,
    layers: Vec<LayerVars>,
}

/// Per-layer rows cached from previously encoded segments of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    layers: Vec<Matrix>,
}

impl MemoryState {
    pub fn empty(config: &EncoderConfig) -> Self {
        MemoryState {
            layers: vec![Matrix::zeros(0, config.d_model); config.n_layers],
        }
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    /// Cached rows (identical across layers).
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Clipped relative offset of key position `key` seen from query `query`,
/// shifted into `0..=2k`.
pub fn rel_bucket(query: i64, key: i64, k_rel: usize) -> usize {
    let k = k_rel as i64;
    ((key - query).clamp(-k, k) + k) as usize
}

/// Bucket table for `n_queries` queries at positions `0..` attending over
/// `n_mem` memory keys (positions `-n_mem..0`) followed by the queries.
fn bucket_table(n_queries: usize, n_mem: usize, k_rel: usize) -> Rc<[usize]> {
    let n_keys = n_mem + n_queries;
    let mut table = Vec::with_capacity(n_queries * n_keys);
    for i in 0..n_queries {
        for j in 0..n_keys {
            table.push(rel_bucket(i as i64, j as i64 - n_mem as i64, k_rel));
        }
    }
    table.into()
}

pub(crate) struct AttentionOut {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Multi-head attention of `queries` (`L × d`) over `keys_values`
/// (`(M + L) × d`, memory rows first).
fn attention_on_tape(
    tape: &mut Tape<'_>,
    config: &EncoderConfig,
    layer: &AttentionVars,
    queries: Var,
    keys_values: Var,
    n_mem: usize,
) -> AttentionOut {
    let n_queries = tape.value(queries).rows();
    let n_keys = tape.value(keys_values).rows();
    let d_head = config.d_head();
    let buckets = bucket_table(n_queries, n_mem, config.k_rel);
    let scale = 1.0 / (d_head as f64).sqrt();

    let q = tape.matmul(queries, layer.query);
    let k = tape.matmul(keys_values, layer.key);
    let v = tape.matmul(keys_values, layer.value);

    let mut heads = Vec::with_capacity(config.n_heads);
    let mut weights = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let qh = tape.slice_cols(q, h * d_head, d_head);
        let kh = tape.slice_cols(k, h * d_head, d_head);
        let vh = tape.slice_cols(v, h * d_head, d_head);

        // e_ij = q_i · (k_j + a^K_ij) / √d_head
        let mut scores = tape.matmul_t(qh, kh);
        if config.rel_pos_enabled {
            let per_bucket = tape.matmul_t(qh, layer.rel_key);
            let rel = tape.bucket_gather(per_bucket, buckets.clone(), n_keys);
            scores = tape.add(scores, rel);
        }
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);

        // z_i = Σ_j a_ij (v_j + a^V_ij)
        let mut z = tape.matmul(attn, vh);
        if config.rel_pos_enabled {
            let mass = tape.bucket_scatter(attn, buckets.clone(), config.n_buckets());
            let rel = tape.matmul(mass, layer.rel_value);
            z = tape.add(z, rel);
        }
        heads.push(z);
        weights.push(attn);
    }
    let concat = tape.concat_cols(&heads);
    AttentionOut {
        output: tape.matmul(concat, layer.output),
        weights,
    }
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<(), ModelError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what))
    }
}

fn check_width(m: &Matrix, config: &EncoderConfig, what: &str) -> Result<(), ModelError> {
    if m.cols() == config.d_model {
        Ok(())
    } else {
        Err(ModelError::Shape(format!(
            "{what} has {} columns, expected d_model = {}",
            m.cols(),
            config.d_model
        )))
    }
}

/// Attention sublayer alone: queries from `x`, keys and values from
/// `[mem; x]`. No normalization or residual.
pub fn rel_attention(
    x: &Matrix,
    mem: Option<&Matrix>,
    layer: &LayerParams,
    config: &EncoderConfig,
) -> Result<Matrix, ModelError> {
    rel_attention_with_weights(x, mem, layer, config).map(|(z, _)| z)
}

/// Like [`rel_attention`], also returning each head's `L × (M + L)`
/// attention weights.
pub fn rel_attention_with_weights(
    x: &Matrix,
    mem: Option<&Matrix>,
    layer: &LayerParams,
    config: &EncoderConfig,
) -> Result<(Matrix, Vec<Matrix>), ModelError> {
    config.validate()?;
    check_width(x, config, "input")?;
    check_finite(x, "attention input")?;
    if let Some(m) = mem {
        check_width(m, config, "memory")?;
        check_finite(m, "attention memory")?;
    }
    let mut tape = Tape::new();
    let vars = AttentionVars {
        query: tape.param(&layer.query),
        key: tape.param(&layer.key),
        value: tape.param(&layer.value),
        output: tape.param(&layer.output),
        rel_key: tape.param(&layer.rel_key),
        rel_value: tape.param(&layer.rel_value),
    };
    let xv = tape.param(x);
    let (kv, n_mem) = match mem {
        Some(m) if m.rows() > 0 => {
            let mv = tape.param(m);
            (tape.concat_rows(&[mv, xv]), m.rows())
        }
        _ => (xv, 0),
    };
    let out = attention_on_tape(&mut tape, config, &vars, xv, kv, n_mem);
    let weights = out.weights.iter().map(|&w| tape.value(w).clone()).collect();
    Ok((tape.value(out.output).clone(), weights))
}

/// Embedding rows scaled by `√d_model`.
pub fn embed(
    params: &EncoderParams,
    config: &EncoderConfig,
    ids: &[usize],
) -> Result<Matrix, ModelError> {
    check_ids(ids, config)?;
    let mut tape = Tape::new();
    let table = tape.param(&params.embedding);
    let out = tape.gather_rows(table, ids, (config.d_model as f64).sqrt());
    Ok(tape.value(out).clone())
}

fn check_ids(ids: &[usize], config: &EncoderConfig) -> Result<(), ModelError> {
    match ids.iter().find(|&&id| id >= config.vocab_size) {
        Some(&id) => Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: config.vocab_size,
        }),
        None => Ok(()),
    }
}

/// Encodes one segment on the tape. Returns the `L × d_model` output and the
/// memory for the next segment of the same stream.
pub(crate) fn encode_segment_on_tape(
    tape: &mut Tape<'_>,
    config: &EncoderConfig,
    vars: &EncoderVars,
    ids: &[usize],
    mem: &MemoryState,
) -> Result<(Var, MemoryState), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if ids.len() > config.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: ids.len(),
            max: config.max_seq_len,
        });
    }
    check_ids(ids, config)?;

    let mut hidden = tape.gather_rows(vars.embedding, ids, (config.d_model as f64).sqrt());
    let mut next = Vec::with_capacity(config.n_layers);
    for (l, layer) in vars.layers.iter().enumerate() {
        let cached = if config.mem_len > 0 {
            mem.layers.get(l).filter(|m| m.rows() > 0)
        } else {
            None
        };
        let n_mem = cached.map_or(0, Matrix::rows);
        let (kv_input, new_mem) = match cached {
            Some(m) => {
                let constant = tape.constant(m.clone());
                let joined = tape.concat_rows(&[constant, hidden]);
                (joined, tape.value(joined).clone())
            }
            None => (hidden, tape.value(hidden).clone()),
        };
        if config.mem_len > 0 {
            let keep = config.mem_len.min(new_mem.rows());
            next.push(new_mem.slice_rows(new_mem.rows() - keep, keep));
        } else {
            next.push(Matrix::zeros(0, config.d_model));
        }

        let normed_kv = tape.layer_norm(kv_input, layer.attn_norm_gain, layer.attn_norm_bias);
        let normed_q = if n_mem > 0 {
            tape.slice_rows(normed_kv, n_mem, ids.len())
        } else {
            normed_kv
        };
        let attn = attention_on_tape(tape, config, &layer.attention, normed_q, normed_kv, n_mem);
        let residual = tape.add(hidden, attn.output);

        let normed = tape.layer_norm(residual, layer.ff_norm_gain, layer.ff_norm_bias);
        let inner = tape.matmul(normed, layer.ff_in);
        let inner = tape.add_row(inner, layer.ff_in_bias);
        let inner = tape.gelu(inner);
        let ff = tape.matmul(inner, layer.ff_out);
        let ff = tape.add_row(ff, layer.ff_out_bias);
        hidden = tape.add(residual, ff);
    }
    Ok((hidden, MemoryState { layers: next }))
}

/// Encodes one segment outside of training.
pub fn encode_segment(
    params: &EncoderParams,
    config: &EncoderConfig,
    seq: &TokenSequence,
    mem: &MemoryState,
) -> Result<(Matrix, MemoryState), ModelError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let (out, next) = encode_segment_on_tape(&mut tape, config, &vars, &seq.ids, mem)?;
    Ok((tape.value(out).clone(), next))
}
