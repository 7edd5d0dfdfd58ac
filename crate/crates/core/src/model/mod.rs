//! The joint captioning and anomaly-classification network.
//!
//! An image feature vector is projected once into the word-embedding space
//! and fed to an LSTM as its first input. The decoder then reads one word
//! embedding per step and predicts a distribution over the vocabulary for the
//! next word. A separate multi-layer perceptron reads the raw feature vector
//! and outputs the probability that the image shows an anomaly. The two heads
//! share no parameters, so the classifier loss weight only mixes losses.

mod check;
mod checkpoint;
mod decode;
mod train;

pub use check::{check_gradients, run_gradcheck, GradCheckDims, GradCheckOptions};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use decode::{beam_decode, greedy_decode, BeamResult};
pub use train::{evaluate_losses, train, EpochReport, Example, Heads, TrainOptions};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::numerics::{
    axpy, cross_entropy_from_logits, dropout_mask, log_softmax, matvec_acc, outer_acc,
    sigmoid_scalar, softmax, vecmat_acc, Parameter, Rng, Tensor,
};
use crate::text::TokenSequence;

pub const DEFAULT_FEATURE_DIM: usize = 2048;
pub const DEFAULT_EMBED_DIM: usize = 512;
pub const DEFAULT_HIDDEN_DIM: usize = 512;

const INIT_SCALE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_caption_len: usize,
    pub dropout_rate: f64,
    pub classifier_hidden: (usize, usize),
    /// Weight of the classifier loss in the joint objective.
    pub loss_weight_lambda: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            feature_dim: DEFAULT_FEATURE_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            vocab_size,
            max_caption_len: crate::text::DEFAULT_MAX_LEN,
            dropout_rate: 0.5,
            classifier_hidden: (256, 64),
            loss_weight_lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_caption_len", self.max_caption_len),
            ("classifier_hidden.0", self.classifier_hidden.0),
            ("classifier_hidden.1", self.classifier_hidden.1),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size <= crate::text::UNK {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {} does not cover the reserved tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.loss_weight_lambda >= 0.0 && self.loss_weight_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss weight {} must be finite and non-negative",
                self.loss_weight_lambda
            )));
        }
        Ok(())
    }
}

/// Input, forget, cell-candidate and output gate, in that order.
pub const GATE_NAMES: [&str; 4] = ["input", "forget", "cell", "output"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const CELL: usize = 2;
const OUTPUT: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    /// Input weights, embed_dim × hidden_dim.
    pub w: Parameter,
    /// Recurrent weights, hidden_dim × hidden_dim.
    pub u: Parameter,
    pub b: Parameter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NicParams {
    config: ModelConfig,
    /// Image embedding, feature_dim × embed_dim.
    pub image_embed: Parameter,
    /// Word embedding shared by every step, vocab_size × embed_dim.
    pub word_embed: Parameter,
    pub gates: [Gate; 4],
    /// Vocabulary projection, hidden_dim × vocab_size.
    pub out_w: Parameter,
    pub out_b: Parameter,
    pub mlp_w1: Parameter,
    pub mlp_b1: Parameter,
    pub mlp_w2: Parameter,
    pub mlp_b2: Parameter,
    pub mlp_w3: Parameter,
    pub mlp_b3: Parameter,
}

/// Hidden and cell state of the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Negative log-likelihood of a caption and the predicted next-word
/// distribution at every teacher-forced step.
#[derive(Clone, Debug)]
pub struct CaptionLoss {
    pub nll: f64,
    pub distributions: Vec<Vec<f64>>,
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
    state: LstmState,
}

struct WordStep {
    lstm: StepCache,
    token: usize,
    mask: Option<Vec<f64>>,
    /// softmax(logits) - onehot(target)
    dlogits: Vec<f64>,
    probs: Vec<f64>,
}

struct CaptionTrace {
    image_step: StepCache,
    words: Vec<WordStep>,
    nll: f64,
}

struct ClassifierTrace {
    z1: Vec<f64>,
    a1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    logit: f64,
}

fn uniform_param(name: &str, shape: &[usize], rng: &mut Rng) -> Parameter {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-INIT_SCALE, INIT_SCALE)).collect();
    Parameter::new(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
}

fn filled_param(name: &str, shape: &[usize], value: f64) -> Parameter {
    Parameter::new(name, Tensor::filled(shape, value))
}

fn sigmoid_vec(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = sigmoid_scalar(*x));
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl NicParams {
    /// Weights uniform in ±0.08, biases zero except the forget gate (1.0).
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            feature_dim: f,
            embed_dim: d,
            hidden_dim: h,
            vocab_size: v,
            classifier_hidden: (h1, h2),
            ..
        } = *config;
        let image_embed = uniform_param("image_embed", &[f, d], rng);
        let word_embed = uniform_param("word_embed", &[v, d], rng);
        let gates = GATE_NAMES.map(|g| Gate {
            w: uniform_param(&format!("lstm.{g}.w"), &[d, h], rng),
            u: uniform_param(&format!("lstm.{g}.u"), &[h, h], rng),
            b: filled_param(
                &format!("lstm.{g}.b"),
                &[h],
                if g == "forget" { FORGET_BIAS } else { 0.0 },
            ),
        });
        let out_w = uniform_param("out.w", &[h, v], rng);
        let out_b = filled_param("out.b", &[v], 0.0);
        let mlp_w1 = uniform_param("mlp.w1", &[f, h1], rng);
        let mlp_b1 = filled_param("mlp.b1", &[h1], 0.0);
        let mlp_w2 = uniform_param("mlp.w2", &[h1, h2], rng);
        let mlp_b2 = filled_param("mlp.b2", &[h2], 0.0);
        let mlp_w3 = uniform_param("mlp.w3", &[h2, 1], rng);
        let mlp_b3 = filled_param("mlp.b3", &[1], 0.0);
        Ok(NicParams {
            config: config.clone(),
            image_embed,
            word_embed,
            gates,
            out_w,
            out_b,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            mlp_w3,
            mlp_b3,
        })
    }

    /// Every tensor zero except the forget-gate bias.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut params = Self::init(config, &mut Rng::new(0))?;
        for p in params.parameters_mut() {
            p.value.fill(0.0);
        }
        for g in &mut params.gates[FORGET..=FORGET] {
            g.b.value.fill(FORGET_BIAS);
        }
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the classifier loss weight; shapes are unaffected.
    pub fn set_loss_weight(&mut self, lambda: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.loss_weight_lambda = lambda;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.dropout_rate = rate;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Captioning parameters in a fixed order.
    pub fn caption_parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.image_embed, &self.word_embed];
        for g in &self.gates {
            out.extend([&g.w, &g.u, &g.b]);
        }
        out.extend([&self.out_w, &self.out_b]);
        out
    }

    pub fn classifier_parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.mlp_w3,
            &self.mlp_b3,
        ]
    }

    /// All parameters, captioning first, in a fixed order.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = self.caption_parameters();
        out.extend(self.classifier_parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let [g0, g1, g2, g3] = &mut self.gates;
        let mut out = vec![&mut self.image_embed, &mut self.word_embed];
        for g in [g0, g1, g2, g3] {
            out.extend([&mut g.w, &mut g.u, &mut g.b]);
        }
        out.extend([
            &mut self.out_w,
            &mut self.out_b,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.mlp_w3,
            &mut self.mlp_b3,
        ]);
        out
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters().into_iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        crate::numerics::zero_grads(self.parameters_mut());
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.value.is_finite())
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "feature has {} dimensions, model expects {}",
                feature.len(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    fn lstm_forward(&self, state: &LstmState, x: Vec<f64>) -> StepCache {
        let gates: [Vec<f64>; 4] = std::array::from_fn(|k| {
            let gate = &self.gates[k];
            let mut a = gate.b.value.data().to_vec();
            vecmat_acc(&x, &gate.w.value, &mut a);
            vecmat_acc(&state.h, &gate.u.value, &mut a);
            if k == CELL {
                a.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                sigmoid_vec(&mut a);
            }
            a
        });
        let c: Vec<f64> = (0..self.config.hidden_dim)
            .map(|j| gates[FORGET][j] * state.c[j] + gates[INPUT][j] * gates[CELL][j])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = tanh_c
            .iter()
            .zip(&gates[OUTPUT])
            .map(|(t, o)| t * o)
            .collect();
        StepCache {
            x,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            tanh_c,
            state: LstmState { h, c },
        }
    }

    /// Accumulates gate gradients and returns `(dx, dh_prev, dc_prev)`.
    fn lstm_backward(
        &mut self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.config.hidden_dim;
        let [i, f, g, o] = &cache.gates;
        let mut pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let t = cache.tanh_c[j];
            let d_o = dh[j] * t;
            let dc_total = dc[j] + dh[j] * o[j] * (1.0 - t * t);
            pre[INPUT][j] = dc_total * g[j] * i[j] * (1.0 - i[j]);
            pre[FORGET][j] = dc_total * cache.c_prev[j] * f[j] * (1.0 - f[j]);
            pre[CELL][j] = dc_total * i[j] * (1.0 - g[j] * g[j]);
            pre[OUTPUT][j] = d_o * o[j] * (1.0 - o[j]);
            dc_prev[j] = dc_total * f[j];
        }
        let mut dx = vec![0.0; cache.x.len()];
        let mut dh_prev = vec![0.0; h];
        for (gate, da) in self.gates.iter_mut().zip(&pre) {
            outer_acc(&cache.x, da, &mut gate.w.grad);
            outer_acc(&cache.h_prev, da, &mut gate.u.grad);
            axpy(1.0, da, gate.b.grad.data_mut());
            matvec_acc(&gate.w.value, da, &mut dx);
            matvec_acc(&gate.u.value, da, &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }

    /// One LSTM step without peepholes.
    pub fn lstm_step(&self, state: &LstmState, x: &[f64]) -> Result<LstmState> {
        if x.len() != self.config.embed_dim
            || state.h.len() != self.config.hidden_dim
            || state.c.len() != self.config.hidden_dim
        {
            return Err(Error::Shape(format!(
                "lstm step with x {} / h {} / c {}, expected {} / {}",
                x.len(),
                state.h.len(),
                state.c.len(),
                self.config.embed_dim,
                self.config.hidden_dim
            )));
        }
        Ok(self.lstm_forward(state, x.to_vec()).state)
    }

    fn embed_image(&self, feature: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.config.embed_dim];
        vecmat_acc(feature, &self.image_embed.value, &mut x);
        x
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut logits = self.out_b.value.data().to_vec();
        vecmat_acc(h, &self.out_w.value, &mut logits);
        logits
    }

    /// Decoder state after the image step, ready to read BOS.
    pub fn image_state(&self, feature: &[f64]) -> Result<LstmState> {
        self.check_feature(feature)?;
        let x = self.embed_image(feature);
        Ok(self
            .lstm_forward(&LstmState::zeros(self.config.hidden_dim), x)
            .state)
    }

    /// Feeds `token` and returns the new state with the log-distribution over
    /// the next word.
    pub fn next_word_log_probs(&self, state: &LstmState, token: usize) -> (LstmState, Vec<f64>) {
        let x = self.word_embed.value.row(token).to_vec();
        let next = self.lstm_forward(state, x).state;
        let log_probs = log_softmax(&self.logits(&next.h));
        (next, log_probs)
    }

    fn caption_forward(
        &self,
        feature: &[f64],
        target: &TokenSequence,
        mut dropout: Option<&mut Rng>,
    ) -> Result<CaptionTrace> {
        self.check_feature(feature)?;
        let seq = target.unpadded();
        if let Some(&bad) = seq.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let image_step = self.lstm_forward(
            &LstmState::zeros(self.config.hidden_dim),
            self.embed_image(feature),
        );
        let mut state = image_step.state.clone();
        let mut words = Vec::with_capacity(seq.len() - 1);
        let mut nll = 0.0;
        for t in 0..seq.len() - 1 {
            let token = seq[t];
            let lstm = self.lstm_forward(&state, self.word_embed.value.row(token).to_vec());
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.config.dropout_rate > 0.0 => Some(
                    dropout_mask(&[self.config.hidden_dim], self.config.dropout_rate, rng)?
                        .data()
                        .to_vec(),
                ),
                _ => None,
            };
            let logits = match &mask {
                Some(m) => {
                    let dropped: Vec<f64> =
                        lstm.state.h.iter().zip(m).map(|(h, m)| h * m).collect();
                    self.logits(&dropped)
                }
                None => self.logits(&lstm.state.h),
            };
            let (loss, dlogits) = cross_entropy_from_logits(&logits, seq[t + 1])?;
            nll += loss;
            state = lstm.state.clone();
            words.push(WordStep {
                lstm,
                token,
                mask,
                probs: softmax(&logits),
                dlogits,
            });
        }
        Ok(CaptionTrace {
            image_step,
            words,
            nll,
        })
    }

    fn caption_backward(&mut self, feature: &[f64], trace: &CaptionTrace, scale: f64) {
        let h = self.config.hidden_dim;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for step in trace.words.iter().rev() {
            let dlogits: Vec<f64> = step.dlogits.iter().map(|g| g * scale).collect();
            let h_out: Vec<f64> = match &step.mask {
                Some(m) => step.lstm.state.h.iter().zip(m).map(|(h, m)| h * m).collect(),
                None => step.lstm.state.h.clone(),
            };
            outer_acc(&h_out, &dlogits, &mut self.out_w.grad);
            axpy(1.0, &dlogits, self.out_b.grad.data_mut());
            let mut dh = vec![0.0; h];
            matvec_acc(&self.out_w.value, &dlogits, &mut dh);
            if let Some(m) = &step.mask {
                dh.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
            }
            axpy(1.0, &dh_next, &mut dh);
            let (dx, dh_prev, dc_prev) = self.lstm_backward(&step.lstm, &dh, &dc_next);
            axpy(1.0, &dx, self.word_embed.grad.row_mut(step.token));
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        let (dx, _, _) = self.lstm_backward(&trace.image_step, &dh_next, &dc_next);
        outer_acc(feature, &dx, &mut self.image_embed.grad);
    }

    /// Teacher-forced negative log-likelihood of `target` given the image.
    ///
    /// The image embedding is the first LSTM input and produces no loss
    /// term. Dropout on the LSTM output is drawn from `rng` only when
    /// `train_mode` is set.
    pub fn caption_loss(
        &self,
        feature: &[f64],
        target: &TokenSequence,
        rng: &mut Rng,
        train_mode: bool,
    ) -> Result<CaptionLoss> {
        let trace = self.caption_forward(feature, target, train_mode.then_some(rng))?;
        Ok(CaptionLoss {
            nll: trace.nll,
            distributions: trace.words.into_iter().map(|w| w.probs).collect(),
        })
    }

    /// Adds `scale * ∇nll` to the captioning gradients and returns the nll.
    pub fn accumulate_caption_grad(
        &mut self,
        feature: &[f64],
        target: &TokenSequence,
        rng: &mut Rng,
        train_mode: bool,
        scale: f64,
    ) -> Result<f64> {
        let trace = self.caption_forward(feature, target, train_mode.then_some(rng))?;
        self.caption_backward(feature, &trace, scale);
        Ok(trace.nll)
    }

    fn classifier_forward(
        &self,
        feature: &[f64],
        mut dropout: Option<&mut Rng>,
    ) -> Result<ClassifierTrace> {
        self.check_feature(feature)?;
        let rate = self.config.dropout_rate;
        let mut layer = |input: &[f64],
                         w: &Parameter,
                         b: &Parameter|
         -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
            let mut z = b.value.data().to_vec();
            vecmat_acc(input, &w.value, &mut z);
            let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let mask = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let m = dropout_mask(&[a.len()], rate, rng)?.data().to_vec();
                    a.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
                    Some(m)
                }
                _ => None,
            };
            Ok((z, a, mask))
        };
        let (z1, a1, mask1) = layer(feature, &self.mlp_w1, &self.mlp_b1)?;
        let (z2, a2, mask2) = layer(&a1, &self.mlp_w2, &self.mlp_b2)?;
        let mut out = self.mlp_b3.value.data().to_vec();
        vecmat_acc(&a2, &self.mlp_w3.value, &mut out);
        Ok(ClassifierTrace {
            z1,
            a1,
            mask1,
            z2,
            a2,
            mask2,
            logit: out[0],
        })
    }

    fn classifier_backward(&mut self, feature: &[f64], trace: &ClassifierTrace, dlogit: f64) {
        outer_acc(&trace.a2, &[dlogit], &mut self.mlp_w3.grad);
        self.mlp_b3.grad.data_mut()[0] += dlogit;
        let mut da2 = vec![0.0; trace.a2.len()];
        matvec_acc(&self.mlp_w3.value, &[dlogit], &mut da2);
        let dz2 = relu_dropout_grad(&trace.z2, trace.mask2.as_deref(), &da2);
        outer_acc(&trace.a1, &dz2, &mut self.mlp_w2.grad);
        axpy(1.0, &dz2, self.mlp_b2.grad.data_mut());
        let mut da1 = vec![0.0; trace.a1.len()];
        matvec_acc(&self.mlp_w2.value, &dz2, &mut da1);
        let dz1 = relu_dropout_grad(&trace.z1, trace.mask1.as_deref(), &da1);
        outer_acc(feature, &dz1, &mut self.mlp_w1.grad);
        axpy(1.0, &dz1, self.mlp_b1.grad.data_mut());
    }

    /// Probability that the image shows an anomaly.
    pub fn classify(&self, feature: &[f64], rng: &mut Rng, train_mode: bool) -> Result<f64> {
        let trace = self.classifier_forward(feature, train_mode.then_some(rng))?;
        Ok(sigmoid_scalar(trace.logit))
    }

    /// Binary cross-entropy of the classifier against `label`.
    pub fn classifier_loss(
        &self,
        feature: &[f64],
        label: Label,
        rng: &mut Rng,
        train_mode: bool,
    ) -> Result<f64> {
        let trace = self.classifier_forward(feature, train_mode.then_some(rng))?;
        Ok(bce_from_logit(trace.logit, label))
    }

    /// Adds `scale * ∇bce` to the classifier gradients and returns the bce.
    pub fn accumulate_classifier_grad(
        &mut self,
        feature: &[f64],
        label: Label,
        rng: &mut Rng,
        train_mode: bool,
        scale: f64,
    ) -> Result<f64> {
        let trace = self.classifier_forward(feature, train_mode.then_some(rng))?;
        let y = label.target();
        let dlogit = (sigmoid_scalar(trace.logit) - y) * scale;
        self.classifier_backward(feature, &trace, dlogit);
        Ok(bce_from_logit(trace.logit, label))
    }

    /// `caption nll + λ · bce`.
    pub fn joint_loss(
        &self,
        feature: &[f64],
        target: &TokenSequence,
        label: Label,
        rng: &mut Rng,
        train_mode: bool,
    ) -> Result<f64> {
        let nll = self.caption_loss(feature, target, rng, train_mode)?.nll;
        let bce = self.classifier_loss(feature, label, rng, train_mode)?;
        Ok(nll + self.config.loss_weight_lambda * bce)
    }

    /// Adds `scale * ∇joint_loss` to all gradients and returns the loss.
    pub fn accumulate_joint_grad(
        &mut self,
        feature: &[f64],
        target: &TokenSequence,
        label: Label,
        rng: &mut Rng,
        train_mode: bool,
        scale: f64,
    ) -> Result<f64> {
        let lambda = self.config.loss_weight_lambda;
        let nll = self.accumulate_caption_grad(feature, target, rng, train_mode, scale)?;
        let bce = self.accumulate_classifier_grad(feature, label, rng, train_mode, scale * lambda)?;
        Ok(nll + lambda * bce)
    }
}

fn relu_dropout_grad(z: &[f64], mask: Option<&[f64]>, da: &[f64]) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(j, &z)| {
            if z > 0.0 {
                da[j] * mask.map_or(1.0, |m| m[j])
            } else {
                0.0
            }
        })
        .collect()
}

fn bce_from_logit(logit: f64, label: Label) -> f64 {
    softplus(logit) - label.target() * logit
}
