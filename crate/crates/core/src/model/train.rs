use super::NicParams;
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, sgd_step, Rng};
use crate::text::TokenSequence;

/// One (image, caption, label) training triple. Records with several
/// captions contribute one example per caption.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub feature: Vec<f64>,
    pub target: TokenSequence,
    pub label: Label,
}

/// Which losses drive the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    /// Caption nll plus λ times the classifier loss.
    Joint,
    CaptionOnly,
    ClassifierOnly,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub heads: Heads,
    pub seed: u64,
    /// Index of the first epoch to run. Each epoch draws its shuffle and
    /// dropout from its own stream, so resuming at epoch `k` continues the
    /// exact run that stopped after `k` epochs.
    pub start_epoch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 1,
            clip_norm: Some(5.0),
            heads: Heads::Joint,
            seed: 0,
            start_epoch: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    /// Caption nll divided by the number of predicted tokens.
    pub caption_nll_per_token: f64,
    /// Mean classifier cross-entropy per example.
    pub classifier_bce: f64,
}

/// Plain SGD with optional gradient clipping over shuffled mini-batches.
///
/// `on_epoch` runs after every epoch, e.g. to write a checkpoint. A
/// non-finite loss aborts training with the offending example named.
pub fn train<F>(
    params: &mut NicParams,
    examples: &[Example],
    options: &TrainOptions,
    mut on_epoch: F,
) -> Result<Vec<EpochReport>>
where
    F: FnMut(&EpochReport, &NicParams) -> Result<()>,
{
    if examples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    options.validate()?;
    let lambda = params.config().loss_weight_lambda;
    let (use_caption, use_classifier) = match options.heads {
        Heads::Joint => (true, lambda > 0.0),
        Heads::CaptionOnly => (true, false),
        Heads::ClassifierOnly => (false, true),
    };
    let classifier_scale = if options.heads == Heads::Joint { lambda } else { 1.0 };

    let mut history = Vec::with_capacity(options.epochs);
    for epoch in options.start_epoch..options.start_epoch + options.epochs {
        let mut rng = Rng::with_stream(options.seed, epoch as u64);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        rng.shuffle(&mut order);

        let mut nll_total = 0.0;
        let mut token_total = 0usize;
        let mut bce_total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(options.batch_size) {
            params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                if use_caption {
                    let nll =
                        params.accumulate_caption_grad(&ex.feature, &ex.target, &mut rng, true, scale)?;
                    if !nll.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "caption loss {nll} at epoch {epoch} on example {}",
                            ex.id
                        )));
                    }
                    nll_total += nll;
                    token_total += ex.target.prediction_steps();
                }
                if use_classifier {
                    let bce = params.accumulate_classifier_grad(
                        &ex.feature,
                        ex.label,
                        &mut rng,
                        true,
                        scale * classifier_scale,
                    )?;
                    if !bce.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "classifier loss {bce} at epoch {epoch} on example {}",
                            ex.id
                        )));
                    }
                    bce_total += bce;
                }
            }
            let mut trainable: Vec<_> = params.parameters_mut();
            if let Some(max_norm) = options.clip_norm {
                clip_grad_norm(&mut trainable, max_norm);
            }
            sgd_step(trainable, options.learning_rate);
            steps += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters diverged during epoch {epoch}"
            )));
        }
        let report = EpochReport {
            epoch,
            steps,
            caption_nll_per_token: if token_total > 0 {
                nll_total / token_total as f64
            } else {
                0.0
            },
            classifier_bce: if use_classifier {
                bce_total / examples.len() as f64
            } else {
                0.0
            },
        };
        on_epoch(&report, params)?;
        history.push(report);
    }
    Ok(history)
}

/// Inference-mode losses over a held-out set: caption nll per predicted
/// token and mean classifier cross-entropy.
pub fn evaluate_losses(params: &NicParams, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut rng = Rng::new(0);
    let (mut nll, mut tokens, mut bce) = (0.0, 0usize, 0.0);
    for ex in examples {
        nll += params.caption_loss(&ex.feature, &ex.target, &mut rng, false)?.nll;
        tokens += ex.target.prediction_steps();
        bce += params.classifier_loss(&ex.feature, ex.label, &mut rng, false)?;
    }
    Ok((nll / tokens as f64, bce / examples.len() as f64))
}
