//! Loss, gradients, optimizer, training loop and finite-difference checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::argmax_label;
use crate::encoder::MemoryState;
use crate::corpus::MoveLabel;
use crate::model::{Example, Model, ModelError};
use crate::tensor::{softmax, Matrix, Tape, PROB_CLAMP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss for record {id}")]
    NonFiniteLoss { id: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid step {0}")]
    InvalidStep(f64),
    #[error("gradient layout does not match the model")]
    GradientLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Worker threads for per-record gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            grad_clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::InvalidConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("grad_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        Ok(())
    }
}

/// `−ln probs[gold]`, clamped at `−ln 1e-12`.
pub fn cross_entropy(probs: &[f64], gold: MoveLabel) -> f64 {
    let p = probs[gold.index()];
    if p.is_nan() {
        return f64::NAN;
    }
    if p < PROB_CLAMP {
        log::warn!("probability {p:e} for gold class clamped to {PROB_CLAMP:e}");
    }
    -p.max(PROB_CLAMP).ln()
}

/// One gradient tensor per model tensor, in `Model::named_tensors` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        let (names, tensors) = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, Matrix::zeros(t.rows(), t.cols())))
            .unzip();
        ModelGrads { names, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.scale_assign(factor);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Loss and gradient of a single example.
fn example_gradient(model: &Model, example: &Example) -> Result<(f64, ModelGrads), TrainError> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let fwd = model.forward_on_tape(&mut tape, &vars, &example.ids)?;
    let probs = softmax(tape.value(fwd.logits).data());
    let loss = cross_entropy(&probs, example.label);
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            id: example.id.clone(),
        });
    }
    let loss_var = tape.cross_entropy(fwd.logits, example.label.index());
    let grads = tape.backward(loss_var);
    let mut out = ModelGrads::zeros_like(model);
    for (slot, var) in out.tensors.iter_mut().zip(model.param_vars()) {
        if let Some(g) = grads.get(var) {
            slot.add_assign(g);
        }
    }
    Ok((loss, out))
}

/// Runs `f` over `items` on up to `threads` scoped workers and returns the
/// results in input order.
pub(crate) fn map_ordered<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    })
}

/// Mean loss over `batch` and its gradient for every model tensor.
pub fn backward(model: &Model, batch: &[Example]) -> Result<(f64, ModelGrads), TrainError> {
    backward_threaded(model, batch, 1)
}

/// Like [`backward`], computing per-record gradients on several threads.
/// The reduction runs in record order, so the result is thread-count
/// independent.
pub fn backward_threaded(
    model: &Model,
    batch: &[Example],
    threads: usize,
) -> Result<(f64, ModelGrads), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let parts = map_ordered(batch, threads, |e| example_gradient(model, e));
    let mut total = ModelGrads::zeros_like(model);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss(model: &Model, batch: &[Example]) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = 0.0;
    for e in batch {
        let loss = cross_entropy(&model.predict(&e.ids)?, e.label);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { id: e.id.clone() });
        }
        total += loss;
    }
    Ok(total / batch.len() as f64)
}

/// First- and second-moment adaptive optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = model
            .named_tensors()
            .iter()
            .map(|(_, t)| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, model: &mut Model, grads: &ModelGrads) -> Result<(), TrainError> {
        if grads.tensors.len() != self.first.len() {
            return Err(TrainError::GradientLayout);
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let tensors = model.tensors_mut();
        for (((param, g), m), v) in tensors
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if param.shape() != g.shape() {
                return Err(TrainError::GradientLayout);
            }
            let iter = param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in iter {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

/// Fraction of examples whose argmax matches the gold label.
pub fn accuracy(model: &Model, data: &[Example], threads: usize) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let preds = map_ordered(data, threads, |e| model.predict(&e.ids));
    let mut correct = 0usize;
    for (e, p) in data.iter().zip(preds) {
        if argmax_label(&p?) == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn train(model: &mut Model, data: &[Example], cfg: &TrainConfig) -> Result<History, TrainError> {
    train_with_callback(model, data, cfg, |_| {})
}

/// Seeded per-epoch shuffling, mini-batch updates with global-norm clipping.
/// `on_epoch` sees each epoch's statistics as soon as they are known.
pub fn train_with_callback(
    model: &mut Model,
    data: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<History, TrainError> {
    cfg.validate()?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(model, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grads) = backward_threaded(model, &batch, cfg.threads)?;
            loss_sum += loss * batch.len() as f64;
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            optimizer.update(model, &grads)?;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: accuracy(model, data, cfg.threads)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} train accuracy {:.4}",
            stats.mean_loss,
            stats.train_accuracy
        );
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}

/// Gradients whose magnitudes both fall below this are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a| + |n|, GRAD_CHECK_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| !t.passed)
            .map(|t| t.name.as_str())
            .collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_relative_error)
            .fold(0.0, f64::max)
    }
}

/// Compares analytic gradients of the mean loss against central differences
/// with step `eps` for every tensor entry.
pub fn grad_check(
    model: &Model,
    data: &[Example],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, TrainError> {
    check_step(eps)?;
    let (_, analytic) = backward(model, data)?;
    compare_gradients(model, data, &analytic, eps, tol)
}

fn check_step(eps: f64) -> Result<(), TrainError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(TrainError::InvalidStep(eps))
    }
}

/// Mean loss with each example's segment memories held at `memories`.
fn frozen_memory_loss(
    model: &Model,
    data: &[Example],
    memories: &[Vec<MemoryState>],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (e, mem) in data.iter().zip(memories) {
        let loss = cross_entropy(&model.predict_with_memories(&e.ids, mem)?, e.label);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { id: e.id.clone() });
        }
        total += loss;
    }
    Ok(total / data.len() as f64)
}

/// Checks a supplied set of gradients against central differences.
/// Cached memory rows are constants of the analytic gradient, so the
/// perturbed losses reuse the memories of the unperturbed model.
pub fn compare_gradients(
    model: &Model,
    data: &[Example],
    analytic: &ModelGrads,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, TrainError> {
    check_step(eps)?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    if analytic.names != names {
        return Err(TrainError::GradientLayout);
    }
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let memories = data
        .iter()
        .map(|e| model.segment_memories(&e.ids))
        .collect::<Result<Vec<_>, _>>()?;
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let len = analytic.tensors[t].len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let original = probe.tensors_mut()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = original + eps;
            let plus = frozen_memory_loss(&probe, data, &memories)?;
            probe.tensors_mut()[t].data_mut()[i] = original - eps;
            let minus = frozen_memory_loss(&probe, data, &memories)?;
            probe.tensors_mut()[t].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.tensors[t].data()[i], numeric));
        }
        tensors.push(TensorCheck {
            name,
            entries: len,
            max_relative_error: worst,
            passed: worst < tol,
        });
    }
    Ok(GradCheckReport {
        step: eps,
        tolerance: tol,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierConfig;
    use crate::encoder::EncoderConfig;
    use proptest::prelude::*;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            k_rel: 2,
            mem_len: 3,
            max_seq_len: 4,
            rel_pos_enabled: true,
        }
    }

    fn tiny_model(seed: u64) -> Model {
        Model::init(tiny_config(), 4, seed).unwrap()
    }

    fn examples() -> Vec<Example> {
        vec![
            Example::new("a", vec![4, 5, 6, 7, 8, 9], MoveLabel::Method),
            Example::new("b", vec![10, 11, 4], MoveLabel::Result),
        ]
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.2; 5], MoveLabel::Purpose) - 5f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0, 0.0, 0.0], MoveLabel::Background), 0.0);
        let half = [0.5, 0.5, 0.0, 0.0, 0.0];
        assert!((cross_entropy(&half, MoveLabel::Purpose) - 2f64.ln()).abs() < 1e-15);
        let zero = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((cross_entropy(&zero, MoveLabel::Result) - (-(1e-12f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_model_bias_gradient_is_uniform_minus_onehot() {
        let model = Model::zeroed(tiny_config(), ClassifierConfig::new(8, 4)).unwrap();
        let batch = vec![
            Example::new("a", vec![4, 5], MoveLabel::Background),
            Example::new("b", vec![6], MoveLabel::Conclusion),
        ];
        let (loss, grads) = backward(&model, &batch).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        let bias = grads.get("classifier.out_bias").unwrap();
        let expected = [0.2 - 0.5, 0.2, 0.2, 0.2, 0.2 - 0.5];
        for (g, e) in bias.data().iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicating_records_keeps_the_mean_gradient() {
        let model = tiny_model(1);
        let batch = examples();
        let doubled: Vec<Example> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = backward(&model, &batch).unwrap();
        let (l2, g2) = backward(&model, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn threads_do_not_change_gradients() {
        let model = tiny_model(2);
        let batch: Vec<Example> = examples().into_iter().cycle().take(7).collect();
        let (l1, g1) = backward_threaded(&model, &batch, 1).unwrap();
        let (l3, g3) = backward_threaded(&model, &batch, 3).unwrap();
        assert_eq!(l1, l3);
        assert_eq!(g1, g3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let report = grad_check(&tiny_model(3), &examples(), 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{:?}", report.failures());
        assert!(report.tensors.iter().any(|t| t.name == "encoder.layer0.rel_key"));
    }

    #[test]
    fn corrupted_rel_value_gradient_is_flagged() {
        let model = tiny_model(4);
        let data = examples();
        let (_, mut grads) = backward(&model, &data).unwrap();
        let g = grads.get_mut("encoder.layer0.rel_value").unwrap();
        let v = g.get(2, 1);
        g.set(2, 1, v + 0.05);
        let report = compare_gradients(&model, &data, &grads, 1e-5, 1e-4).unwrap();
        assert_eq!(report.failures(), vec!["encoder.layer0.rel_value"]);
    }

    #[test]
    fn zero_step_is_rejected() {
        let err = grad_check(&tiny_model(5), &examples(), 0.0, 1e-4).unwrap_err();
        assert!(err.to_string().starts_with("invalid step"));
    }

    #[test]
    fn memory_rows_carry_no_gradient() {
        // The embedding feeds both the tokens and the cached rows of the
        // next segment. Holding the cache at its unperturbed value reproduces
        // the analytic gradient; letting it follow the parameters does not.
        let model = tiny_model(6);
        let example = Example::new("m", vec![4, 5, 6, 7, 8, 9, 10], MoveLabel::Purpose);
        let data = std::slice::from_ref(&example);
        let (_, grads) = backward(&model, data).unwrap();
        let memories = vec![model.segment_memories(&example.ids).unwrap()];
        let eps = 1e-5;
        let mut frozen_max = 0.0f64;
        let mut live_gap = 0.0f64;
        // Rows of ids 4..=7: the first segment, the only one cached.
        for i in 4 * 8..8 * 8 {
            let mut plus = model.clone();
            plus.encoder.embedding.data_mut()[i] += eps;
            let mut minus = model.clone();
            minus.encoder.embedding.data_mut()[i] -= eps;
            let frozen = (frozen_memory_loss(&plus, data, &memories).unwrap()
                - frozen_memory_loss(&minus, data, &memories).unwrap())
                / (2.0 * eps);
            let live = (batch_loss(&plus, data).unwrap() - batch_loss(&minus, data).unwrap())
                / (2.0 * eps);
            let analytic = grads.get("encoder.embedding").unwrap().data()[i];
            frozen_max = frozen_max.max(relative_error(analytic, frozen));
            live_gap = live_gap.max(relative_error(analytic, live));
        }
        assert!(frozen_max < 1e-4, "{frozen_max}");
        assert!(live_gap > 1e-2, "{live_gap}");
    }

    #[test]
    fn small_step_decreases_single_record_loss() {
        for seed in 0..5 {
            let mut model = tiny_model(seed);
            let batch = vec![examples()[0].clone()];
            let before = batch_loss(&model, &batch).unwrap();
            let cfg = TrainConfig {
                learning_rate: 1e-4,
                batch_size: 1,
                epochs: 1,
                ..TrainConfig::default()
            };
            train(&mut model, &batch, &cfg).unwrap();
            assert!(batch_loss(&model, &batch).unwrap() < before);
        }
    }

    #[test]
    fn zero_epochs_leave_the_model_alone() {
        let mut model = tiny_model(7);
        let original = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &examples(), &cfg).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(model, original);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 1,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = |threads| {
            let mut model = tiny_model(8);
            let cfg = TrainConfig { threads, ..cfg.clone() };
            let history = train(&mut model, &examples(), &cfg).unwrap();
            (model, history)
        };
        let (m1, h1) = run(1);
        let (m2, h2) = run(1);
        let (m3, h3) = run(2);
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1, h3);
        assert_eq!(m1, m3);
        assert_eq!(h1.epochs.len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn non_finite_model_reports_the_record() {
        let mut model = tiny_model(9);
        model.classifier.out_bias.set(0, 0, f64::NAN);
        let err = backward(&model, &examples()).unwrap_err();
        assert_eq!(err, TrainError::NonFiniteLoss { id: "a".into() });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn clipping_bounds_the_norm(
            values in proptest::collection::vec(-50.0f64..50.0, 1..40),
            max_norm in 0.01f64..5.0,
        ) {
            let mut grads = ModelGrads {
                names: vec!["x".into()],
                tensors: vec![Matrix::row_vector(values.clone())],
            };
            let before = clip_global_norm(&mut grads, max_norm);
            prop_assert!(grads.global_norm() <= max_norm + 1e-9);
            if before <= max_norm {
                prop_assert_eq!(grads.tensors[0].data(), values.as_slice());
            }
        }
    }
}
