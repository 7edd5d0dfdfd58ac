//! Unigram METEOR: staged alignment, recall-weighted F-score and
//! fragmentation penalty.

mod align;
mod lexicon;
mod stem;

use std::fmt::Write as _;

use crate::parallel::map_ordered;

pub use align::{align, Alignment, Match, Stage};
pub use lexicon::SynonymLexicon;
pub use stem::porter_stem;

use crate::error::{Error, Result};

/// Number of runs of matches adjacent in both sentences.
pub fn count_chunks(alignment: &Alignment) -> usize {
    alignment.chunks()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeteorStats {
    pub m: usize,
    pub chunks: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub penalty: f64,
    pub score: f64,
}

impl MeteorStats {
    /// Applies the F-score, penalty and score equations to raw counts.
    pub fn from_counts(m: usize, chunks: usize, hyp_len: usize, ref_len: usize) -> Self {
        let mut stats = Self {
            m,
            chunks,
            hyp_len,
            ref_len,
            ..Self::default()
        };
        if m == 0 {
            return stats;
        }
        let p = m as f64 / hyp_len as f64;
        let r = m as f64 / ref_len as f64;
        let f = 10.0 * p * r / (r + 9.0 * p);
        let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
        stats.precision = p;
        stats.recall = r;
        stats.f_score = f;
        stats.penalty = penalty;
        stats.score = f * (1.0 - penalty);
        stats
    }
}

pub fn score_pair<S: AsRef<str>>(hyp: &[S], reference: &[S], lexicon: &SynonymLexicon) -> MeteorStats {
    let alignment = align(hyp, reference, lexicon);
    MeteorStats::from_counts(
        alignment.matches(),
        alignment.chunks(),
        hyp.len(),
        reference.len(),
    )
}

/// Stats against the best-scoring reference; the first wins ties.
pub fn score_multi_ref<S: AsRef<str>>(
    hyp: &[S],
    references: &[Vec<S>],
    lexicon: &SynonymLexicon,
) -> Result<MeteorStats> {
    let mut best: Option<MeteorStats> = None;
    for reference in references {
        let stats = score_pair(hyp, reference, lexicon);
        if best.is_none_or(|b| stats.score > b.score) {
            best = Some(stats);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("at least one reference is required".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusScore {
    pub sentences: Vec<MeteorStats>,
    /// Equations applied once to the summed counts.
    pub pooled: MeteorStats,
    /// Arithmetic mean of sentence scores.
    pub mean: f64,
}

impl CorpusScore {
    pub fn from_sentences(sentences: Vec<MeteorStats>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("corpus is empty".into()));
        }
        let sum = |f: fn(&MeteorStats) -> usize| sentences.iter().map(f).sum::<usize>();
        let pooled = MeteorStats::from_counts(
            sum(|s| s.m),
            sum(|s| s.chunks),
            sum(|s| s.hyp_len),
            sum(|s| s.ref_len),
        );
        let mean = sentences.iter().map(|s| s.score).sum::<f64>() / sentences.len() as f64;
        Ok(Self {
            sentences,
            pooled,
            mean,
        })
    }

    /// Tab-separated report: one line per sentence, then `POOLED` and
    /// `MEAN` lines. The `MEAN` line holds column means.
    pub fn report<S: AsRef<str>>(&self, ids: &[S]) -> Result<String> {
        if ids.len() != self.sentences.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} sentences",
                ids.len(),
                self.sentences.len()
            )));
        }
        let mut out = String::new();
        for (id, s) in ids.iter().zip(&self.sentences) {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                id.as_ref(),
                s.m,
                s.chunks,
                ratios(s)
            );
        }
        let p = &self.pooled;
        let _ = writeln!(out, "POOLED\t{}\t{}\t{}", p.m, p.chunks, ratios(p));
        let n = self.sentences.len() as f64;
        let mean = |f: fn(&MeteorStats) -> f64| self.sentences.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "MEAN\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            mean(|s| s.m as f64),
            mean(|s| s.chunks as f64),
            mean(|s| s.precision),
            mean(|s| s.recall),
            mean(|s| s.f_score),
            mean(|s| s.penalty),
            self.mean,
        );
        Ok(out)
    }

    /// Pooled and mean scores scaled by 100.
    pub fn headline(&self) -> String {
        format!(
            "METEOR x100: pooled {:.2}, mean {:.2}",
            100.0 * self.pooled.score,
            100.0 * self.mean
        )
    }
}

fn ratios(s: &MeteorStats) -> String {
    format!(
        "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        s.precision, s.recall, s.f_score, s.penalty, s.score
    )
}

/// Scores each hypothesis against its references and aggregates.
pub fn corpus_score<S: AsRef<str>>(
    pairs: &[(Vec<S>, Vec<Vec<S>>)],
    lexicon: &SynonymLexicon,
) -> Result<CorpusScore> {
    let sentences = pairs
        .iter()
        .map(|(hyp, refs)| score_multi_ref(hyp, refs, lexicon))
        .collect::<Result<Vec<_>>>()?;
    CorpusScore::from_sentences(sentences)
}

/// [`corpus_score`] spread over up to `jobs` threads; the result is
/// identical for every job count.
pub fn corpus_score_parallel<S: AsRef<str> + Sync>(
    pairs: &[(Vec<S>, Vec<Vec<S>>)],
    lexicon: &SynonymLexicon,
    jobs: usize,
) -> Result<CorpusScore> {
    let sentences = map_ordered(pairs, jobs, |(hyp, refs)| score_multi_ref(hyp, refs, lexicon))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    CorpusScore::from_sentences(sentences)
}
