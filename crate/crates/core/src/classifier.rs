//! Attention-pooled bidirectional GRU head over encoder outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::MoveLabel;
use crate::model::ModelError;
use crate::tensor::{softmax, Matrix, Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Width of the encoder rows fed to the GRUs.
    pub input_dim: usize,
    /// Hidden width per direction.
    pub hidden: usize,
    /// Width of the pooling projection.
    pub attention_dim: usize,
}

impl ClassifierConfig {
    /// Pooling width defaults to the concatenated BiGRU width.
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        ClassifierConfig {
            input_dim,
            hidden,
            attention_dim: 2 * hidden,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden == 0 || self.attention_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "classifier widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Update (`z`), reset (`r`) and candidate (`h`) weights of one GRU cell.
/// Inputs and states are row vectors: `x · W + h · U + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_update: Matrix,
    pub hidden_update: Matrix,
    pub bias_update: Matrix,
    pub input_reset: Matrix,
    pub hidden_reset: Matrix,
    pub bias_reset: Matrix,
    pub input_candidate: Matrix,
    pub hidden_candidate: Matrix,
    pub bias_candidate: Matrix,
}

const CELL_TENSORS: [&str; 9] = [
    "input_update",
    "hidden_update",
    "bias_update",
    "input_reset",
    "hidden_reset",
    "bias_reset",
    "input_candidate",
    "hidden_candidate",
    "bias_candidate",
];

impl GruCell {
    fn init<R: Rng>(input: usize, hidden: usize, bound: f64, rng: &mut R) -> Self {
        let mut w = |rows, cols| Matrix::uniform(rows, cols, bound, rng);
        GruCell {
            input_update: w(input, hidden),
            hidden_update: w(hidden, hidden),
            bias_update: Matrix::zeros(1, hidden),
            input_reset: w(input, hidden),
            hidden_reset: w(hidden, hidden),
            bias_reset: Matrix::zeros(1, hidden),
            input_candidate: w(input, hidden),
            hidden_candidate: w(hidden, hidden),
            bias_candidate: Matrix::zeros(1, hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            input_update: Matrix::zeros(input, hidden),
            hidden_update: Matrix::zeros(hidden, hidden),
            bias_update: Matrix::zeros(1, hidden),
            input_reset: Matrix::zeros(input, hidden),
            hidden_reset: Matrix::zeros(hidden, hidden),
            bias_reset: Matrix::zeros(1, hidden),
            input_candidate: Matrix::zeros(input, hidden),
            hidden_candidate: Matrix::zeros(hidden, hidden),
            bias_candidate: Matrix::zeros(1, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden_update.rows()
    }

    fn tensors(&self) -> [&Matrix; 9] {
        [
            &self.input_update,
            &self.hidden_update,
            &self.bias_update,
            &self.input_reset,
            &self.hidden_reset,
            &self.bias_reset,
            &self.input_candidate,
            &self.hidden_candidate,
            &self.bias_candidate,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.input_update,
            &mut self.hidden_update,
            &mut self.bias_update,
            &mut self.input_reset,
            &mut self.hidden_reset,
            &mut self.bias_reset,
            &mut self.input_candidate,
            &mut self.hidden_candidate,
            &mut self.bias_candidate,
        ]
    }

    fn register<'p>(&'p self, tape: &mut Tape<'p>) -> CellVars {
        let [wz, uz, bz, wr, ur, br, wh, uh, bh] = self.tensors().map(|t| tape.param(t));
        CellVars {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
        }
    }
}

struct CellVars {
    wz: Var,
    uz: Var,
    bz: Var,
    wr: Var,
    ur: Var,
    br: Var,
    wh: Var,
    uh: Var,
    bh: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub forward: GruCell,
    pub backward: GruCell,
    /// `W_s`: `2h × d_a`
    pub attn_proj: Matrix,
    /// `b_s`: `1 × d_a`
    pub attn_bias: Matrix,
    /// `u_s`: `d_a × 1`
    pub context: Matrix,
    /// `W_c`: `2h × 5`
    pub out_weight: Matrix,
    /// `b_c`: `1 × 5`
    pub out_bias: Matrix,
}

impl ClassifierParams {
    /// Every weight, the context vector included, is uniform in
    /// `±1/√input_dim`; biases start at zero.
    pub fn init<R: Rng>(config: &ClassifierConfig, rng: &mut R) -> Self {
        let bound = 1.0 / (config.input_dim as f64).sqrt();
        let h = config.hidden;
        let forward = GruCell::init(config.input_dim, h, bound, rng);
        let backward = GruCell::init(config.input_dim, h, bound, rng);
        ClassifierParams {
            forward,
            backward,
            attn_proj: Matrix::uniform(2 * h, config.attention_dim, bound, rng),
            attn_bias: Matrix::zeros(1, config.attention_dim),
            context: Matrix::uniform(config.attention_dim, 1, bound, rng),
            out_weight: Matrix::uniform(2 * h, MoveLabel::COUNT, bound, rng),
            out_bias: Matrix::zeros(1, MoveLabel::COUNT),
        }
    }

    pub fn zeros(config: &ClassifierConfig) -> Self {
        let h = config.hidden;
        ClassifierParams {
            forward: GruCell::zeros(config.input_dim, h),
            backward: GruCell::zeros(config.input_dim, h),
            attn_proj: Matrix::zeros(2 * h, config.attention_dim),
            attn_bias: Matrix::zeros(1, config.attention_dim),
            context: Matrix::zeros(config.attention_dim, 1),
            out_weight: Matrix::zeros(2 * h, MoveLabel::COUNT),
            out_bias: Matrix::zeros(1, MoveLabel::COUNT),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (dir, cell) in [("forward", &self.forward), ("backward", &self.backward)] {
            for (name, t) in CELL_TENSORS.iter().zip(cell.tensors()) {
                out.push((format!("classifier.{dir}.{name}"), t));
            }
        }
        out.push(("classifier.attn_proj".into(), &self.attn_proj));
        out.push(("classifier.attn_bias".into(), &self.attn_bias));
        out.push(("classifier.context".into(), &self.context));
        out.push(("classifier.out_weight".into(), &self.out_weight));
        out.push(("classifier.out_bias".into(), &self.out_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.forward.tensors_mut());
        out.extend(self.backward.tensors_mut());
        out.push(&mut self.attn_proj);
        out.push(&mut self.attn_bias);
        out.push(&mut self.context);
        out.push(&mut self.out_weight);
        out.push(&mut self.out_bias);
        out
    }

    pub(crate) fn register<'p>(&'p self, tape: &mut Tape<'p>) -> ClassifierVars {
        ClassifierVars {
            forward: self.forward.register(tape),
            backward: self.backward.register(tape),
            attn_proj: tape.param(&self.attn_proj),
            attn_bias: tape.param(&self.attn_bias),
            context: tape.param(&self.context),
            out_weight: tape.param(&self.out_weight),
            out_bias: tape.param(&self.out_bias),
        }
    }
}

pub(crate) struct ClassifierVars {
    forward: CellVars,
    backward: CellVars,
    attn_proj: Var,
    attn_bias: Var,
    context: Var,
    out_weight: Var,
    out_bias: Var,
}

/// Per-step input projections `x_t · W + b` for all steps at once.
struct Projected {
    update: Var,
    reset: Var,
    candidate: Var,
}

fn project(tape: &mut Tape<'_>, cell: &CellVars, inputs: Var) -> Projected {
    let mut proj = |w, b| {
        let xw = tape.matmul(inputs, w);
        tape.add_row(xw, b)
    };
    Projected {
        update: proj(cell.wz, cell.bz),
        reset: proj(cell.wr, cell.br),
        candidate: proj(cell.wh, cell.bh),
    }
}

fn gru_step(tape: &mut Tape<'_>, cell: &CellVars, proj: &Projected, t: usize, prev: Var) -> Var {
    let xz = tape.slice_rows(proj.update, t, 1);
    let xr = tape.slice_rows(proj.reset, t, 1);
    let xh = tape.slice_rows(proj.candidate, t, 1);

    let hz = tape.matmul(prev, cell.uz);
    let z = tape.add(xz, hz);
    let z = tape.sigmoid(z);

    let hr = tape.matmul(prev, cell.ur);
    let r = tape.add(xr, hr);
    let r = tape.sigmoid(r);

    let gated = tape.mul(r, prev);
    let hh = tape.matmul(gated, cell.uh);
    let candidate = tape.add(xh, hh);
    let candidate = tape.tanh(candidate);

    // (1 - z) ⊙ h_prev + z ⊙ h̃
    tape.lerp(prev, candidate, z)
}

fn run_direction(tape: &mut Tape<'_>, cell: &CellVars, inputs: Var, reverse: bool) -> Vec<Var> {
    let steps = tape.value(inputs).rows();
    let hidden = tape.value(cell.uz).rows();
    let proj = project(tape, cell, inputs);
    let mut state = tape.constant(Matrix::zeros(1, hidden));
    let mut outputs = vec![state; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        state = gru_step(tape, cell, &proj, t, state);
        outputs[t] = state;
    }
    outputs
}

pub(crate) fn bigru_on_tape(tape: &mut Tape<'_>, vars: &ClassifierVars, inputs: Var) -> Var {
    let fwd = run_direction(tape, &vars.forward, inputs, false);
    let bwd = run_direction(tape, &vars.backward, inputs, true);
    let fwd = tape.concat_rows(&fwd);
    let bwd = tape.concat_rows(&bwd);
    tape.concat_cols(&[fwd, bwd])
}

pub(crate) struct Pooled {
    pub sentence: Var,
    pub weights: Var,
}

pub(crate) fn attention_pool_on_tape(
    tape: &mut Tape<'_>,
    vars: &ClassifierVars,
    states: Var,
) -> Pooled {
    // u_i = tanh(W_s h_i + b_s)
    let u = tape.matmul(states, vars.attn_proj);
    let u = tape.add_row(u, vars.attn_bias);
    let u = tape.tanh(u);
    // a = softmax_i(u_i · u_s)
    let scores = tape.matmul(u, vars.context);
    let scores = tape.transpose(scores);
    let weights = tape.softmax_rows(scores);
    // sen = Σ_i a_i h_i
    let sentence = tape.matmul(weights, states);
    Pooled { sentence, weights }
}

pub(crate) fn logits_on_tape(tape: &mut Tape<'_>, vars: &ClassifierVars, sentence: Var) -> Var {
    let logits = tape.matmul(sentence, vars.out_weight);
    tape.add_row(logits, vars.out_bias)
}

/// One GRU update on plain vectors.
pub fn gru_cell(cell: &GruCell, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let x = Matrix::row_vector(x.to_vec());
    let h = Matrix::row_vector(h_prev.to_vec());
    let mut tape = Tape::new();
    let vars = cell.register(&mut tape);
    let xv = tape.param(&x);
    let hv = tape.param(&h);
    let proj = project(&mut tape, &vars, xv);
    let out = gru_step(&mut tape, &vars, &proj, 0, hv);
    tape.value(out).data().to_vec()
}

/// `L × 2h` rows `[→h_i, ←h_i]`, both directions starting from zero.
pub fn bigru(params: &ClassifierParams, inputs: &Matrix) -> Result<Matrix, ModelError> {
    if inputs.rows() == 0 {
        return Err(ModelError::EmptySequence);
    }
    if inputs.cols() != params.forward.input_update.rows() {
        return Err(ModelError::Shape(format!(
            "bigru input has {} columns, expected {}",
            inputs.cols(),
            params.forward.input_update.rows()
        )));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.param(inputs);
    let out = bigru_on_tape(&mut tape, &vars, x);
    Ok(tape.value(out).clone())
}

/// Pooled sentence vector and the per-row weights.
pub fn attention_pool(params: &ClassifierParams, states: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let s = tape.param(states);
    let pooled = attention_pool_on_tape(&mut tape, &vars, s);
    (
        tape.value(pooled.sentence).data().to_vec(),
        tape.value(pooled.weights).data().to_vec(),
    )
}

/// Class probabilities for a pooled sentence vector.
pub fn classify(params: &ClassifierParams, sentence: &[f64]) -> [f64; MoveLabel::COUNT] {
    let logits = Matrix::row_vector(sentence.to_vec()).matmul(&params.out_weight);
    let logits: Vec<f64> = logits
        .data()
        .iter()
        .zip(params.out_bias.data())
        .map(|(l, b)| l + b)
        .collect();
    let mut out = [0.0; MoveLabel::COUNT];
    out.copy_from_slice(&softmax(&logits));
    out
}

/// Most probable label; ties go to the lower label id.
pub fn argmax_label(probs: &[f64]) -> MoveLabel {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    MoveLabel::from_index(best).expect("five class probabilities")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, sigmoid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> ClassifierConfig {
        ClassifierConfig::new(3, 4)
    }

    fn params(seed: u64) -> ClassifierParams {
        ClassifierParams::init(&config(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn column(m: &Matrix, j: usize) -> Vec<f64> {
        (0..m.rows()).map(|i| m.get(i, j)).collect()
    }

    /// Scalar evaluation of the four cell equations.
    fn oracle_cell(cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let n = cell.hidden();
        (0..n)
            .map(|k| {
                let z = sigmoid(
                    dot(x, &column(&cell.input_update, k))
                        + dot(h, &column(&cell.hidden_update, k))
                        + cell.bias_update.get(0, k),
                );
                let r: Vec<f64> = (0..n)
                    .map(|m| {
                        sigmoid(
                            dot(x, &column(&cell.input_reset, m))
                                + dot(h, &column(&cell.hidden_reset, m))
                                + cell.bias_reset.get(0, m),
                        )
                    })
                    .collect();
                let gated: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
                let candidate = (dot(x, &column(&cell.input_candidate, k))
                    + dot(&gated, &column(&cell.hidden_candidate, k))
                    + cell.bias_candidate.get(0, k))
                .tanh();
                (1.0 - z) * h[k] + z * candidate
            })
            .collect()
    }

    #[test]
    fn zero_cell_halves_the_state() {
        let cell = GruCell::zeros(3, 4);
        let h = [0.4, -0.8, 1.0, 0.0];
        let out = gru_cell(&cell, &[1.0, 2.0, 3.0], &h);
        for (o, v) in out.iter().zip(h) {
            assert_eq!(*o, 0.5 * v);
        }
        assert_eq!(gru_cell(&cell, &[1.0, 2.0, 3.0], &[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let p = params(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = gru_cell(&p.forward, &x, &h);
            let expected = oracle_cell(&p.forward, &x, &h);
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bigru_matches_unrolled_oracle() {
        let p = params(3);
        let x = Matrix::uniform(3, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let out = bigru(&p, &x).unwrap();
        assert_eq!(out.shape(), (3, 8));
        let mut fwd = vec![vec![0.0; 4]];
        for t in 0..3 {
            let next = oracle_cell(&p.forward, x.row(t), fwd.last().unwrap());
            fwd.push(next);
        }
        let mut bwd = vec![vec![0.0; 4]; 4];
        for t in (0..3).rev() {
            bwd[t] = oracle_cell(&p.backward, x.row(t), &bwd[t + 1]);
        }
        for t in 0..3 {
            for k in 0..4 {
                assert!((out.get(t, k) - fwd[t + 1][k]).abs() < 1e-14);
                assert!((out.get(t, 4 + k) - bwd[t][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bigru_single_row_and_errors() {
        let p = params(5);
        let x = Matrix::uniform(1, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let out = bigru(&p, &x).unwrap();
        assert_eq!(out.shape(), (1, 8));
        let zero = [0.0; 4];
        assert_eq!(&out.row(0)[..4], gru_cell(&p.forward, x.row(0), &zero).as_slice());
        assert_eq!(&out.row(0)[4..], gru_cell(&p.backward, x.row(0), &zero).as_slice());
        assert!(matches!(bigru(&p, &Matrix::zeros(0, 3)), Err(ModelError::EmptySequence)));
        assert!(matches!(bigru(&p, &Matrix::zeros(2, 5)), Err(ModelError::Shape(_))));
    }

    #[test]
    fn reversal_swaps_directions() {
        let p = params(7);
        let swapped = ClassifierParams {
            forward: p.backward.clone(),
            backward: p.forward.clone(),
            ..p.clone()
        };
        let x = Matrix::uniform(4, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let rows: Vec<Vec<f64>> = (0..4).rev().map(|i| x.row(i).to_vec()).collect();
        let reversed = Matrix::from_rows(&rows);
        let a = bigru(&p, &x).unwrap();
        let b = bigru(&swapped, &reversed).unwrap();
        for i in 0..4 {
            assert_eq!(&a.row(i)[4..], &b.row(3 - i)[..4]);
        }
    }

    #[test]
    fn uniform_pool_when_projection_is_zero() {
        let mut p = params(9);
        p.attn_proj = Matrix::zeros(8, 8);
        let states = Matrix::uniform(3, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(10));
        let (sen, weights) = attention_pool(&p, &states);
        for w in &weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        for j in 0..8 {
            let mean = (0..3).map(|i| states.get(i, j)).sum::<f64>() / 3.0;
            assert!((sen[j] - mean).abs() < 1e-15);
        }
        let single = Matrix::uniform(1, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(11));
        let (sen, weights) = attention_pool(&params(12), &single);
        assert_eq!(weights, vec![1.0]);
        assert_eq!(sen, single.row(0));
    }

    #[test]
    fn pool_matches_direct_formula() {
        let p = params(13);
        let states = Matrix::uniform(4, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(14));
        let scores: Vec<f64> = (0..4)
            .map(|i| {
                let u: Vec<f64> = (0..8)
                    .map(|k| (dot(states.row(i), &column(&p.attn_proj, k)) + p.attn_bias.get(0, k)).tanh())
                    .collect();
                dot(&u, &column(&p.context, 0))
            })
            .collect();
        let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let total: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let (sen, weights) = attention_pool(&p, &states);
        for (w, e) in weights.iter().zip(&expected) {
            assert!((w - e).abs() < 1e-14);
        }
        for j in 0..8 {
            let s: f64 = (0..4).map(|i| expected[i] * states.get(i, j)).sum();
            assert!((sen[j] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn shifting_scores_keeps_weights() {
        // A constant added to every u_i · u_s comes from b_s when W_s = 0.
        let mut p = params(15);
        let states = Matrix::uniform(5, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(16));
        let (_, before) = attention_pool(&p, &states);
        p.attn_proj = Matrix::zeros(8, 8);
        let (_, flat) = attention_pool(&p, &states);
        p.attn_bias = Matrix::filled(1, 8, 0.3);
        let (_, shifted) = attention_pool(&p, &states);
        assert_eq!(flat, shifted);
        assert!((before.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classify_examples() {
        let mut p = ClassifierParams::zeros(&config());
        let probs = classify(&p, &[0.3; 8]);
        assert_eq!(probs, [0.2; 5]);
        assert_eq!(argmax_label(&probs), MoveLabel::Background);
        p.out_bias = Matrix::row_vector(vec![10.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(argmax_label(&classify(&p, &[0.0; 8])), MoveLabel::Background);
        p.out_bias = Matrix::row_vector(vec![0.0, 0.0, 0.0, 3.0, 3.0]);
        assert_eq!(argmax_label(&classify(&p, &[0.0; 8])), MoveLabel::Result);
    }

    proptest! {
        #[test]
        fn probabilities_are_a_distribution(sen in proptest::collection::vec(-5.0f64..5.0, 8), seed in 0u64..50) {
            let probs = classify(&params(seed), &sen);
            prop_assert!(probs.iter().all(|&p| p > 0.0));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pooled_vector_is_a_convex_combination(seed in 0u64..200, rows in 1usize..7) {
            let p = params(seed);
            let states = Matrix::uniform(rows, 8, 3.0, &mut ChaCha8Rng::seed_from_u64(seed + 1));
            let (sen, weights) = attention_pool(&p, &states);
            prop_assert!(weights.iter().all(|&w| w >= 0.0));
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..8 {
                let col = column(&states, j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(sen[j] >= lo - 1e-12 && sen[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn cell_output_stays_bounded(
            seed in 0u64..200,
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            h in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let out = gru_cell(&params(seed).forward, &x, &h);
            let bound = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(out.iter().all(|v| v.abs() <= bound + 1e-15));
            if h.iter().all(|v| v.abs() < 1.0) {
                prop_assert!(out.iter().all(|v| v.abs() < 1.0));
            }
        }
    }
}
