//! Browser bindings: a METEOR alignment view, a caption normalizer and
//! linter, and a small memorization run of the captioning model. Every
//! export returns JSON text.

use nic_core::dataset::{generate_fixture, lint_caption, FixtureOptions, Severity};
use nic_core::meteor::{align, MeteorStats, SynonymLexicon};
use nic_core::model::{greedy_decode, train, Example, Heads, ModelConfig, NicParams, TrainOptions};
use nic_core::numerics::Rng;
use nic_core::pipeline::{build_vocabulary_from_records, load_features, training_examples, FilterOrder};
use nic_core::text::{caption_tokens, decode, normalize_caption, tokenize, Vocabulary};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize, Debug, PartialEq)]
pub struct AlignedPair {
    pub hyp: usize,
    pub reference: usize,
    pub stage: &'static str,
}

#[derive(Serialize, Debug, PartialEq)]
pub struct AlignmentView {
    pub hyp: Vec<String>,
    pub reference: Vec<String>,
    pub pairs: Vec<AlignedPair>,
    pub m: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub penalty: f64,
    pub score: f64,
}

pub fn alignment_view(hyp: &str, reference: &str, lexicon: &str) -> Result<AlignmentView, String> {
    let lexicon = SynonymLexicon::parse(lexicon).map_err(|e| e.to_string())?;
    let hyp = caption_tokens(hyp);
    let reference = caption_tokens(reference);
    let alignment = align(&hyp, &reference, &lexicon);
    let stats = MeteorStats::from_counts(alignment.matches(), alignment.chunks(), hyp.len(), reference.len());
    Ok(AlignmentView {
        pairs: alignment
            .pairs
            .iter()
            .map(|p| AlignedPair {
                hyp: p.hyp,
                reference: p.reference,
                stage: p.stage.name(),
            })
            .collect(),
        hyp,
        reference,
        m: stats.m,
        chunks: stats.chunks,
        precision: stats.precision,
        recall: stats.recall,
        f_score: stats.f_score,
        penalty: stats.penalty,
        score: stats.score,
    })
}

#[derive(Serialize, Debug, PartialEq)]
pub struct Finding {
    pub code: &'static str,
    pub hard: bool,
}

#[derive(Serialize, Debug, PartialEq)]
pub struct CaptionCheck {
    pub normalized: String,
    pub tokens: Vec<String>,
    pub findings: Vec<Finding>,
    /// Whether the caption survives the default length filter.
    pub fits: bool,
}

pub fn caption_check(raw: &str) -> CaptionCheck {
    let normalized = normalize_caption(raw);
    let tokens = tokenize(&normalized);
    CaptionCheck {
        fits: tokens.len() <= nic_core::text::DEFAULT_MAX_LEN,
        findings: lint_caption(raw)
            .into_iter()
            .map(|v| Finding {
                code: v.code(),
                hard: v.severity() == Severity::Hard,
            })
            .collect(),
        normalized,
        tokens,
    }
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct CaptionPair {
    pub reference: String,
    pub generated: String,
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub nll_per_token: f64,
    pub exact: usize,
    pub captions: Vec<CaptionPair>,
}

/// A tiny captioner learning a handful of synthetic captions by heart.
#[wasm_bindgen]
pub struct OverfitDemo {
    params: NicParams,
    vocab: Vocabulary,
    examples: Vec<Example>,
    seed: u64,
    epoch: usize,
}

const DEMO_RECORDS: usize = 6;
const DEMO_FEATURE_DIM: usize = 32;
const DEMO_MAX_LEN: usize = 14;

impl OverfitDemo {
    pub fn create(seed: u64) -> Result<Self, String> {
        let build = || -> nic_core::Result<Self> {
            let fixture = generate_fixture(&FixtureOptions {
                records: DEMO_RECORDS,
                feature_dim: DEMO_FEATURE_DIM,
                vocab_words: 6,
                seed,
            })?;
            let records = fixture.inline_records();
            let (vocab, _) = build_vocabulary_from_records(&records, 1, DEMO_MAX_LEN, FilterOrder::LengthFirst)?;
            let features = load_features(&records, std::path::Path::new(""), Some(DEMO_FEATURE_DIM))?;
            let examples = training_examples(&records, &features, &vocab, DEMO_MAX_LEN)?;
            let config = ModelConfig {
                feature_dim: DEMO_FEATURE_DIM,
                embed_dim: 16,
                hidden_dim: 16,
                vocab_size: vocab.len(),
                max_caption_len: DEMO_MAX_LEN,
                dropout_rate: 0.0,
                classifier_hidden: (4, 4),
                loss_weight_lambda: 0.0,
            };
            let params = NicParams::init(&config, &mut Rng::new(seed))?;
            Ok(OverfitDemo {
                params,
                vocab,
                examples,
                seed,
                epoch: 0,
            })
        };
        build().map_err(|e| e.to_string())
    }

    pub fn advance(&mut self, epochs: usize) -> Result<Progress, String> {
        let options = TrainOptions {
            epochs,
            learning_rate: 0.15,
            heads: Heads::CaptionOnly,
            seed: self.seed,
            start_epoch: self.epoch,
            ..TrainOptions::default()
        };
        let history = train(&mut self.params, &self.examples, &options, |_, _| Ok(())).map_err(|e| e.to_string())?;
        self.epoch += epochs;
        let mut captions = Vec::with_capacity(self.examples.len());
        let mut exact = 0;
        for ex in &self.examples {
            let indices = greedy_decode(&self.params, &ex.feature, DEMO_MAX_LEN).map_err(|e| e.to_string())?;
            exact += usize::from(indices == ex.target.words());
            let words = |ix: &[usize]| decode(ix, &self.vocab).map(|w| w.join(" ")).map_err(|e| e.to_string());
            captions.push(CaptionPair {
                reference: words(ex.target.words())?,
                generated: words(&indices)?,
            });
        }
        Ok(Progress {
            epoch: self.epoch,
            nll_per_token: history.last().map_or(f64::NAN, |r| r.caption_nll_per_token),
            exact,
            captions,
        })
    }
}

fn to_json<T: Serialize>(value: &Result<T, String>) -> String {
    let wrapped = match value {
        Ok(v) => serde_json::json!({ "ok": v }),
        Err(e) => serde_json::json!({ "error": e }),
    };
    wrapped.to_string()
}

#[wasm_bindgen]
impl OverfitDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<OverfitDemo, JsError> {
        OverfitDemo::create(u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    /// Trains for `epochs` more epochs and reports the loss and captions.
    pub fn step(&mut self, epochs: u32) -> String {
        to_json(&self.advance(epochs as usize))
    }
}

#[wasm_bindgen]
pub fn meteor_alignment(hyp: &str, reference: &str, lexicon: &str) -> String {
    to_json(&alignment_view(hyp, reference, lexicon))
}

#[wasm_bindgen]
pub fn check_caption(raw: &str) -> String {
    to_json(&Ok(caption_check(raw)))
}
