//! Classification metrics and corpus METEOR over decoded captions.

use std::fmt::Write as _;

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::parallel::map_ordered;
use crate::meteor::{score_multi_ref, CorpusScore, SynonymLexicon};
use crate::model::{beam_decode, greedy_decode, NicParams};
use crate::numerics::Rng;
use crate::text::{caption_tokens, decode, Vocabulary};

/// Counts with normal images as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Rows are true labels (normal, anomaly), columns predictions
    /// (normal, anomaly), each row divided by its total. Empty rows are 0.
    pub fn row_ratios(&self) -> [[f64; 2]; 2] {
        let row = |a: usize, b: usize| {
            let n = (a + b) as f64;
            if n == 0.0 {
                [0.0, 0.0]
            } else {
                [a as f64 / n, b as f64 / n]
            }
        };
        [row(self.tp, self.fn_), row(self.fp, self.tn)]
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, l) in predictions.iter().zip(labels) {
        match (l, p) {
            (Label::Normal, Label::Normal) => cm.tp += 1,
            (Label::Normal, Label::Anomaly) => cm.fn_ += 1,
            (Label::Anomaly, Label::Normal) => cm.fp += 1,
            (Label::Anomaly, Label::Anomaly) => cm.tn += 1,
        }
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::InvalidArgument("confusion matrix is empty".into())),
        n => Ok((cm.tp + cm.tn) as f64 / n as f64),
    }
}

/// Classifier predictions in evaluation mode.
pub fn predict_labels(params: &NicParams, features: &[Vec<f64>]) -> Result<Vec<Label>> {
    let mut rng = Rng::new(0);
    features
        .iter()
        .map(|f| params.classify(f, &mut rng, false).map(Label::from_probability))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// One test image: its feature and raw reference captions.
#[derive(Clone, Debug)]
pub struct CaptionCase {
    pub id: String,
    pub feature: Vec<f64>,
    pub references: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CaptionEvaluation {
    /// Record ids in ascending order; hypotheses and scores follow it.
    pub ids: Vec<String>,
    pub hypotheses: Vec<String>,
    pub corpus: CorpusScore,
}

fn evaluate_case(
    params: &NicParams,
    vocab: &Vocabulary,
    case: &CaptionCase,
    lexicon: &SynonymLexicon,
    mode: DecodeMode,
    max_len: usize,
) -> Result<(String, crate::meteor::MeteorStats)> {
    let indices = match mode {
        DecodeMode::Greedy => greedy_decode(params, &case.feature, max_len)?,
        DecodeMode::Beam(width) => beam_decode(params, &case.feature, width, max_len)?.tokens,
    };
    let hypothesis = decode(&indices, vocab)?.join(" ");
    // The hypothesis goes through the same normalizer as the references.
    let hyp_tokens = caption_tokens(&hypothesis);
    let refs: Vec<Vec<String>> = case.references.iter().map(|r| caption_tokens(r)).collect();
    let stats = score_multi_ref(&hyp_tokens, &refs, lexicon)
        .map_err(|e| Error::InvalidArgument(format!("record {}: {e}", case.id)))?;
    Ok((hypothesis, stats))
}

/// Decodes and scores every case, using up to `jobs` threads. Output order
/// is by record id whatever the job count.
pub fn evaluate_captions(
    params: &NicParams,
    vocab: &Vocabulary,
    cases: &[CaptionCase],
    lexicon: &SynonymLexicon,
    mode: DecodeMode,
    max_len: usize,
    jobs: usize,
) -> Result<CaptionEvaluation> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no records to evaluate".into()));
    }
    let mut order: Vec<&CaptionCase> = cases.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let results = map_ordered(&order, jobs, |c| evaluate_case(params, vocab, c, lexicon, mode, max_len))?;

    let mut hypotheses = Vec::with_capacity(order.len());
    let mut sentences = Vec::with_capacity(order.len());
    for r in results {
        let (h, s) = r?;
        hypotheses.push(h);
        sentences.push(s);
    }
    Ok(CaptionEvaluation {
        ids: order.iter().map(|c| c.id.clone()).collect(),
        hypotheses,
        corpus: CorpusScore::from_sentences(sentences)?,
    })
}

/// METEOR report, a `METEOR_X100` line with pooled and mean scores, and a
/// `TP FP FN TN ACCURACY` block when a confusion matrix is given.
pub fn evaluation_report(
    evaluation: &CaptionEvaluation,
    confusion: Option<&ConfusionMatrix>,
) -> Result<String> {
    let mut out = evaluation.corpus.report(&evaluation.ids)?;
    let _ = writeln!(
        out,
        "METEOR_X100\t{:.2}\t{:.2}",
        100.0 * evaluation.corpus.pooled.score,
        100.0 * evaluation.corpus.mean
    );
    if let Some(cm) = confusion {
        let _ = writeln!(out, "TP\tFP\tFN\tTN\tACCURACY");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}",
            cm.tp,
            cm.fp,
            cm.fn_,
            cm.tn,
            accuracy(cm)?
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;
    use Label::{Anomaly, Normal};

    #[test]
    fn confusion_polarity() {
        let labels: Vec<Label> = [Normal; 4].into_iter().chain([Anomaly; 6]).collect();
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 4, fp: 0, fn_: 0, tn: 6 });
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert_eq!(cm.row_ratios(), [[1.0, 0.0], [0.0, 1.0]]);

        let inverted: Vec<Label> = labels
            .iter()
            .map(|l| if *l == Normal { Anomaly } else { Normal })
            .collect();
        let cm = confusion(&inverted, &labels).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (0, 0, 6, 4));
        assert_eq!(accuracy(&cm).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_arithmetic_and_errors() {
        let cm = ConfusionMatrix { tp: 5, fp: 1, fn_: 0, tn: 4 };
        assert!((accuracy(&cm).unwrap() - 0.9).abs() < 1e-15);
        assert!(accuracy(&ConfusionMatrix::default()).is_err());
        assert!(confusion(&[Normal], &[]).is_err());
    }

    proptest! {
        #[test]
        fn confusion_is_order_invariant(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40), seed in any::<u64>()) {
            let to = |b: bool| if b { Anomaly } else { Normal };
            let preds: Vec<Label> = pairs.iter().map(|p| to(p.0)).collect();
            let labels: Vec<Label> = pairs.iter().map(|p| to(p.1)).collect();
            let cm = confusion(&preds, &labels).unwrap();
            prop_assert_eq!(cm.total(), pairs.len());
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            Rng::new(seed).shuffle(&mut order);
            let p2: Vec<Label> = order.iter().map(|&i| preds[i]).collect();
            let l2: Vec<Label> = order.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(confusion(&p2, &l2).unwrap(), cm);
            let acc = accuracy(&cm).unwrap();
            prop_assert_eq!(acc, (cm.tp + cm.tn) as f64 / cm.total() as f64);
        }
    }
}
