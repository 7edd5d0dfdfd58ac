//! Glue between manifests and the model: vocabulary building over record
//! captions and conversion of records into training and evaluation inputs.

use std::path::Path;

use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::eval::CaptionCase;
use crate::model::Example;
use crate::text::{caption_tokens, encode, filter_by_length, Vocabulary};

/// Whether over-long captions are dropped before or after vocabulary
/// counting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FilterOrder {
    #[default]
    LengthFirst,
    VocabularyFirst,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreprocessStats {
    pub captions: usize,
    pub kept: usize,
    pub discarded: usize,
    pub vocab_size: usize,
}

pub fn build_vocabulary_from_records(
    records: &[DatasetRecord],
    min_freq: usize,
    max_len: usize,
    order: FilterOrder,
) -> Result<(Vocabulary, PreprocessStats)> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let all: Vec<Vec<String>> = records
        .iter()
        .flat_map(|r| r.captions.iter().map(|c| caption_tokens(c)))
        .collect();
    let captions = all.len();
    let kept = filter_by_length(all.clone(), max_len);
    let vocab = match order {
        FilterOrder::LengthFirst => Vocabulary::build(&kept, min_freq)?,
        FilterOrder::VocabularyFirst => Vocabulary::build(&all, min_freq)?,
    };
    let stats = PreprocessStats {
        captions,
        kept: kept.len(),
        discarded: captions - kept.len(),
        vocab_size: vocab.len(),
    };
    Ok((vocab, stats))
}

/// Loads the feature of every record, resolving paths against `base_dir`.
/// Errors name the offending record.
pub fn load_features(
    records: &[DatasetRecord],
    base_dir: &Path,
    feature_dim: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            r.load_feature(base_dir, feature_dim)
                .map(|f| f.to_f64())
                .map_err(|e| match e {
                    Error::Io { path, source } => Error::Format(format!(
                        "record {}: cannot read feature {}: {source}",
                        r.id,
                        path.display()
                    )),
                    Error::Shape(m) => Error::Shape(format!("record {}: {m}", r.id)),
                    Error::Format(m) => Error::Format(format!("record {}: {m}", r.id)),
                    other => other,
                })
        })
        .collect()
}

/// One training example per caption that fits in `max_len` words.
pub fn training_examples(
    records: &[DatasetRecord],
    features: &[Vec<f64>],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<Example>> {
    if records.len() != features.len() {
        return Err(Error::InvalidArgument(format!(
            "{} records but {} features",
            records.len(),
            features.len()
        )));
    }
    let mut examples = Vec::new();
    for (record, feature) in records.iter().zip(features) {
        for caption in &record.captions {
            let tokens = caption_tokens(caption);
            if tokens.len() > max_len {
                continue;
            }
            examples.push(Example {
                id: record.id.clone(),
                feature: feature.clone(),
                target: encode(&tokens, vocab, max_len)?,
                label: record.label,
            });
        }
    }
    Ok(examples)
}

pub fn caption_cases(records: &[DatasetRecord], features: &[Vec<f64>]) -> Result<Vec<CaptionCase>> {
    if records.len() != features.len() {
        return Err(Error::InvalidArgument(format!(
            "{} records but {} features",
            records.len(),
            features.len()
        )));
    }
    Ok(records
        .iter()
        .zip(features)
        .map(|(r, f)| CaptionCase {
            id: r.id.clone(),
            feature: f.clone(),
            references: r.captions.clone(),
        })
        .collect())
}
