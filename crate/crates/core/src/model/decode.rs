use std::cmp::Ordering;

use super::{LstmState, NicParams};
use crate::error::{Error, Result};
use crate::text::{BOS, EOS, PAD};

/// PAD and BOS are never emitted; everything else, including UNK, is.
fn emittable(token: usize) -> bool {
    token != PAD && token != BOS
}

/// Rolls the decoder out from the image, always taking the most probable
/// word (lowest index on ties). At most `max_len` words are produced; after
/// that the caption is closed with EOS.
pub fn greedy_decode(params: &NicParams, feature: &[f64], max_len: usize) -> Result<Vec<usize>> {
    let mut state = params.image_state(feature)?;
    let mut token = BOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (next, log_probs) = params.next_word_log_probs(&state, token);
        let mut best = EOS;
        for (w, &lp) in log_probs.iter().enumerate() {
            if emittable(w) && lp > log_probs[best] {
                best = w;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        token = best;
        state = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    /// Word indices without BOS/EOS.
    pub tokens: Vec<usize>,
    /// Sum of the log-probabilities of every word and the closing EOS.
    pub log_prob: f64,
}

struct Hypothesis {
    tokens: Vec<usize>,
    score: f64,
    state: LstmState,
}

struct Candidate {
    parent: usize,
    token: usize,
    score: f64,
}

/// Higher score first, then fewer words, then the lexicographically smaller
/// index sequence (EOS included). Sequences are only built on exact ties.
fn rank(
    (a_score, a_words): (f64, usize),
    (b_score, b_words): (f64, usize),
    sequences: impl FnOnce() -> (Vec<usize>, Vec<usize>),
) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a_words.cmp(&b_words))
        .then_with(|| {
            let (a, b) = sequences();
            a.cmp(&b)
        })
}

/// Length-bounded beam search over summed log-probabilities.
///
/// Hypotheses that emit EOS are retired to a finished pool; the search stops
/// when no live hypothesis can still beat the best finished one. At
/// `max_len` words EOS is the only allowed continuation, so every returned
/// caption is closed.
pub fn beam_decode(
    params: &NicParams,
    feature: &[f64],
    beam_width: usize,
    max_len: usize,
) -> Result<BeamResult> {
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: params.image_state(feature)?,
    }];
    let mut finished: Vec<BeamResult> = Vec::new();

    let seq_of = |hyps: &[Hypothesis], c: &Candidate| -> Vec<usize> {
        let mut s = hyps[c.parent].tokens.clone();
        s.push(c.token);
        s
    };
    let words_of = |hyps: &[Hypothesis], c: &Candidate| -> usize {
        hyps[c.parent].tokens.len() + usize::from(c.token != EOS)
    };

    while !live.is_empty() {
        let mut next_states = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (p, hyp) in live.iter().enumerate() {
            let last = hyp.tokens.last().copied().unwrap_or(BOS);
            let (state, log_probs) = params.next_word_log_probs(&hyp.state, last);
            if hyp.tokens.len() >= max_len {
                candidates.push(Candidate {
                    parent: p,
                    token: EOS,
                    score: hyp.score + log_probs[EOS],
                });
            } else {
                candidates.extend(log_probs.iter().enumerate().filter(|(w, _)| emittable(*w)).map(
                    |(w, lp)| Candidate {
                        parent: p,
                        token: w,
                        score: hyp.score + lp,
                    },
                ));
            }
            next_states.push(state);
        }
        candidates.sort_by(|a, b| {
            rank(
                (a.score, words_of(&live, a)),
                (b.score, words_of(&live, b)),
                || (seq_of(&live, a), seq_of(&live, b)),
            )
        });
        candidates.truncate(beam_width);

        let mut next_live = Vec::with_capacity(beam_width);
        for c in &candidates {
            if c.token == EOS {
                finished.push(BeamResult {
                    tokens: live[c.parent].tokens.clone(),
                    log_prob: c.score,
                });
            } else {
                next_live.push(Hypothesis {
                    tokens: seq_of(&live, c),
                    score: c.score,
                    state: next_states[c.parent].clone(),
                });
            }
        }
        live = next_live;

        let best_finished = finished
            .iter()
            .map(|f| f.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_live = live
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_finished >= best_live {
            break;
        }
    }

    finished
        .into_iter()
        .min_by(|a, b| {
            rank(
                (a.log_prob, a.tokens.len()),
                (b.log_prob, b.tokens.len()),
                || {
                    let closed = |t: &[usize]| t.iter().copied().chain([EOS]).collect();
                    (closed(&a.tokens), closed(&b.tokens))
                },
            )
        })
        .ok_or_else(|| Error::NonFinite("beam search finished without a hypothesis".into()))
}
