use super::{ModelConfig, NicParams};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::numerics::{gradcheck, GradCheck, Parameter, Rng};
use crate::text::{TokenSequence, EOS, UNK};

/// Sizes of the randomly drawn model and example used by a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Words in the target caption, EOS excluded.
    pub caption_len: usize,
    pub feature_dim: usize,
    pub classifier_hidden: (usize, usize),
}

impl Default for GradCheckDims {
    fn default() -> Self {
        GradCheckDims {
            vocab_size: 11,
            embed_dim: 8,
            hidden_dim: 8,
            caption_len: 4,
            feature_dim: 16,
            classifier_hidden: (8, 6),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per parameter tensor.
    pub samples: usize,
    pub dropout_rate: f64,
    pub loss_weight_lambda: f64,
    pub seed: u64,
    /// Weight matrices are drawn uniformly from ±`init_scale`. Values larger
    /// than the training initialization keep gradients well above the
    /// round-off floor of the central differences.
    pub init_scale: f64,
    /// Doubles the analytic gradient of the vocabulary projection, as a
    /// negative control that must fail.
    pub inject_bug: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples: 200,
            dropout_rate: 0.0,
            loss_weight_lambda: 0.7,
            seed: 0,
            init_scale: 0.5,
            inject_bug: false,
        }
    }
}

impl NicParams {
    /// Overwrites every tensor with the values of `source`, given in
    /// [`NicParams::parameters`] order.
    pub fn copy_values_from(&mut self, source: &[Parameter]) -> Result<()> {
        let mut targets = self.parameters_mut();
        if targets.len() != source.len() {
            return Err(Error::Shape(format!(
                "{} tensors given, model has {}",
                source.len(),
                targets.len()
            )));
        }
        for (t, s) in targets.iter_mut().zip(source) {
            if t.name != s.name || t.value.shape() != s.value.shape() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not fit slot {} {:?}",
                    s.name,
                    s.value.shape(),
                    t.name,
                    t.value.shape()
                )));
            }
            t.value = s.value.clone();
        }
        Ok(())
    }
}

/// Compares backpropagated joint-loss gradients with central differences.
/// Dropout masks are replayed from a fixed stream so every loss evaluation
/// sees the same network.
pub fn check_gradients(
    params: &NicParams,
    feature: &[f64],
    target: &TokenSequence,
    label: Label,
    options: &GradCheckOptions,
) -> Result<GradCheck> {
    let mask_seed = options.seed ^ 0x5eed;
    let mut work = params.clone();
    work.zero_grads();
    work.accumulate_joint_grad(feature, target, label, &mut Rng::new(mask_seed), true, 1.0)?;
    if options.inject_bug {
        work.out_w.grad = work.out_w.grad.map(|g| 2.0 * g);
    }
    let mut flat: Vec<Parameter> = work.parameters().into_iter().cloned().collect();
    let mut scratch = params.clone();
    let mut failure = None;
    let result = gradcheck(
        |values| {
            let loss = scratch.copy_values_from(values).and_then(|_| {
                scratch.joint_loss(feature, target, label, &mut Rng::new(mask_seed), true)
            });
            loss.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &mut flat,
        options.epsilon,
        options.samples,
        &mut Rng::new(options.seed),
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

/// Draws a model and a single example of the given sizes and checks its
/// gradients.
pub fn run_gradcheck(dims: &GradCheckDims, options: &GradCheckOptions) -> Result<GradCheck> {
    if dims.vocab_size <= UNK + 1 {
        return Err(Error::InvalidArgument(format!(
            "vocab size {} leaves no ordinary words",
            dims.vocab_size
        )));
    }
    if options.samples == 0 || !(options.epsilon > 0.0) || !(options.init_scale > 0.0) {
        return Err(Error::InvalidArgument(
            "gradcheck needs a positive epsilon and init scale and at least one sample".into(),
        ));
    }
    let config = ModelConfig {
        feature_dim: dims.feature_dim,
        embed_dim: dims.embed_dim,
        hidden_dim: dims.hidden_dim,
        vocab_size: dims.vocab_size,
        max_caption_len: dims.caption_len.max(1),
        dropout_rate: options.dropout_rate,
        classifier_hidden: dims.classifier_hidden,
        loss_weight_lambda: options.loss_weight_lambda,
    };
    let mut rng = Rng::new(options.seed);
    let mut params = NicParams::init(&config, &mut rng)?;
    // Biases are drawn too, so no ReLU input sits exactly on its kink.
    let scale = options.init_scale;
    for p in params.parameters_mut() {
        let offset = if p.name == "lstm.forget.b" { 1.0 } else { 0.0 };
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = offset + rng.uniform(-scale, scale));
    }
    let feature: Vec<f64> = (0..dims.feature_dim).map(|_| rng.normal()).collect();
    let mut indices = vec![crate::text::BOS];
    indices.extend((0..dims.caption_len).map(|_| UNK + 1 + rng.below(dims.vocab_size - UNK - 1)));
    indices.push(EOS);
    let target = TokenSequence::from_indices(indices, dims.vocab_size)?;
    let label = if rng.below(2) == 0 { Label::Anomaly } else { Label::Normal };
    check_gradients(&params, &feature, &target, label, options)
}
