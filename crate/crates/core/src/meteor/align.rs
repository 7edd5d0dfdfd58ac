use super::lexicon::SynonymLexicon;
use super::stem::porter_stem;

/// Matching module that produced a pair, in the order the modules run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Exact,
    Stem,
    Synonym,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Exact, Stage::Stem, Stage::Synonym];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Exact => "exact",
            Stage::Stem => "stem",
            Stage::Synonym => "synonym",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    pub hyp: usize,
    pub reference: usize,
    pub stage: Stage,
}

/// Injective mapping between hypothesis and reference positions, sorted by
/// hypothesis position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<Match>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }

    /// Number of pairs whose connecting lines intersect.
    pub fn crossings(&self) -> usize {
        count_crossings(self.pairs.iter().map(|p| (p.hyp, p.reference)))
    }

    /// Maximal runs of pairs adjacent in both sentences.
    pub fn chunks(&self) -> usize {
        let mut chunks = 0;
        let mut prev: Option<&Match> = None;
        for p in &self.pairs {
            let continues =
                prev.is_some_and(|q| p.hyp == q.hyp + 1 && p.reference == q.reference + 1);
            if !continues {
                chunks += 1;
            }
            prev = Some(p);
        }
        chunks
    }
}

pub(crate) fn count_crossings(pairs: impl Iterator<Item = (usize, usize)> + Clone) -> usize {
    let v: Vec<(usize, usize)> = pairs.collect();
    let mut n = 0;
    for a in 0..v.len() {
        for b in a + 1..v.len() {
            let (i, j) = v[a];
            let (k, l) = v[b];
            if (i < k) != (j < l) {
                n += 1;
            }
        }
    }
    n
}

struct StageSearch<'a> {
    /// Free hypothesis positions in ascending order.
    rows: Vec<usize>,
    /// Compatible free reference positions per row, ascending.
    candidates: Vec<Vec<usize>>,
    compatible: &'a dyn Fn(usize, usize) -> bool,
    /// `reachable[r]` = rows at index ≥ r with at least one candidate.
    reachable: Vec<usize>,
    target: usize,
    chosen: Vec<(usize, usize)>,
    used: Vec<bool>,
    best: Option<(usize, Vec<(usize, usize)>)>,
}

impl StageSearch<'_> {
    fn run(&mut self, row: usize, crosses: usize) {
        if self.chosen.len() + self.reachable[row] < self.target {
            return;
        }
        if let Some((best, _)) = &self.best {
            // Equal counts found later are lexicographically larger.
            if crosses >= *best {
                return;
            }
        }
        if row == self.rows.len() {
            self.best = Some((crosses, self.chosen.clone()));
            return;
        }
        let i = self.rows[row];
        for c in 0..self.candidates[row].len() {
            let j = self.candidates[row][c];
            if self.used[j] {
                continue;
            }
            // A crossing between two pairs whose endpoints are mutually
            // compatible can be uncrossed without creating new crossings, so
            // no optimal alignment contains one.
            if self
                .chosen
                .iter()
                .any(|&(pi, pj)| pj > j && (self.compatible)(i, pj) && (self.compatible)(pi, j))
            {
                continue;
            }
            let added = self.chosen.iter().filter(|&&(_, pj)| pj > j).count();
            self.used[j] = true;
            self.chosen.push((i, j));
            self.run(row + 1, crosses + added);
            self.chosen.pop();
            self.used[j] = false;
        }
        self.run(row + 1, crosses);
    }
}

/// Size of a maximum bipartite matching (augmenting paths).
fn max_matching(candidates: &[Vec<usize>], n_ref: usize) -> usize {
    fn augment(
        row: usize,
        candidates: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &j in &candidates[row] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|r| augment(r, candidates, seen, owner)) {
                owner[j] = Some(row);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_ref];
    (0..candidates.len())
        .filter(|&row| augment(row, candidates, &mut vec![false; n_ref], &mut owner))
        .count()
}

/// Among all injective mappings of maximum size between the still-free
/// positions, the one with fewest crossings, ties broken by the
/// lexicographically smallest pair list.
fn align_stage(
    hyp_free: &[bool],
    ref_free: &[bool],
    compatible: &dyn Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    let rows: Vec<usize> = (0..hyp_free.len()).filter(|&i| hyp_free[i]).collect();
    let candidates: Vec<Vec<usize>> = rows
        .iter()
        .map(|&i| {
            (0..ref_free.len())
                .filter(|&j| ref_free[j] && compatible(i, j))
                .collect()
        })
        .collect();
    let target = max_matching(&candidates, ref_free.len());
    if target == 0 {
        return Vec::new();
    }
    let mut reachable = vec![0; rows.len() + 1];
    for r in (0..rows.len()).rev() {
        reachable[r] = reachable[r + 1] + usize::from(!candidates[r].is_empty());
    }
    let mut search = StageSearch {
        rows,
        candidates,
        compatible,
        reachable,
        target,
        chosen: Vec::with_capacity(target),
        used: vec![false; ref_free.len()],
        best: None,
    };
    search.run(0, 0);
    search.best.map(|(_, pairs)| pairs).unwrap_or_default()
}

/// Runs the exact, stem and synonym modules in turn, each on the words left
/// unmatched by the earlier ones.
pub fn align<S: AsRef<str>>(hyp: &[S], reference: &[S], lexicon: &SynonymLexicon) -> Alignment {
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let hyp_stems: Vec<String> = hyp.iter().map(|w| porter_stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| porter_stem(w)).collect();

    let mut hyp_free = vec![true; hyp.len()];
    let mut ref_free = vec![true; reference.len()];
    let mut pairs = Vec::new();
    for stage in Stage::ALL {
        if stage == Stage::Synonym && lexicon.is_empty() {
            continue;
        }
        let compatible = |i: usize, j: usize| match stage {
            Stage::Exact => hyp[i] == reference[j],
            Stage::Stem => hyp_stems[i] == ref_stems[j],
            Stage::Synonym => lexicon.are_synonyms(hyp[i], reference[j]),
        };
        for (i, j) in align_stage(&hyp_free, &ref_free, &compatible) {
            hyp_free[i] = false;
            ref_free[j] = false;
            pairs.push(Match {
                hyp: i,
                reference: j,
                stage,
            });
        }
    }
    pairs.sort();
    Alignment { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn pairs(a: &Alignment) -> Vec<(usize, usize)> {
        a.pairs.iter().map(|p| (p.hyp, p.reference)).collect()
    }

    #[test]
    fn identity_alignment() {
        let s = tokenize("a man is holding a gun");
        let a = align(&s, &s, &SynonymLexicon::empty());
        assert_eq!(a.matches(), 6);
        assert_eq!(a.crossings(), 0);
        assert_eq!(a.chunks(), 1);
        assert!(a.pairs.iter().all(|p| p.stage == Stage::Exact && p.hyp == p.reference));
    }

    #[test]
    fn swapped_words_force_one_crossing() {
        let a = align(&tokenize("b a"), &tokenize("a b"), &SynonymLexicon::empty());
        assert_eq!(pairs(&a), [(0, 1), (1, 0)]);
        assert_eq!(a.crossings(), 1);
        assert_eq!(a.chunks(), 2);
    }

    #[test]
    fn duplicate_words_prefer_uncrossed_positions() {
        let a = align(&tokenize("the cat sat"), &tokenize("the cat is sitting on the mat"), &SynonymLexicon::empty());
        assert_eq!(pairs(&a), [(0, 0), (1, 1)]);
        assert_eq!(a.chunks(), 1);

        let a = align(&tokenize("a a a"), &tokenize("a a a a a"), &SynonymLexicon::empty());
        assert_eq!(pairs(&a), [(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn stages_run_in_order() {
        let lex = SynonymLexicon::from_groups([["automobile", "car"]]);
        let a = align(
            &tokenize("the car is burning"),
            &tokenize("an automobile burns"),
            &lex,
        );
        let stages: Vec<_> = a.pairs.iter().map(|p| (p.hyp, p.reference, p.stage)).collect();
        assert_eq!(stages, [(1, 1, Stage::Synonym), (3, 2, Stage::Stem)]);
        // An exact match is never displaced by a later stage.
        let a = align(&tokenize("burn burning"), &tokenize("burning"), &SynonymLexicon::empty());
        assert_eq!(pairs(&a), [(1, 0)]);
        assert_eq!(a.pairs[0].stage, Stage::Exact);
    }

    #[test]
    fn empty_inputs() {
        let empty: Vec<String> = Vec::new();
        let a = align(&empty, &tokenize("a b"), &SynonymLexicon::empty());
        assert_eq!(a.matches(), 0);
        assert_eq!(a.chunks(), 0);
    }

    #[test]
    fn long_repetitive_sentences_stay_fast() {
        let hyp = vec!["a"; 14];
        let reference = vec!["a"; 20];
        let a = align(&hyp, &reference, &SynonymLexicon::empty());
        assert_eq!(a.matches(), 14);
        assert_eq!(a.crossings(), 0);
        assert_eq!(pairs(&a), (0..14).map(|i| (i, i)).collect::<Vec<_>>());
    }
}
