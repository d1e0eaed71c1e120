//! Relative word-timing latency between two models' timestamped hypotheses.
//!
//! Hypotheses are aligned by word text alone. The metric averages the start
//! and end differences over matched words; negative means the compared
//! model emits earlier.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedHypothesis {
    pub utterance_id: String,
    /// Ordered by start, then end.
    pub words: Vec<TimedWord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchedPairSet {
    /// `(baseline, compared)` pairs, grouped per utterance.
    pub pairs: Vec<Vec<(TimedWord, TimedWord)>>,
}

impl MatchedPairSet {
    pub fn total(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub relative_latency_ms: f64,
    pub matched_words: usize,
    pub utterances: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Match,
    Sub,
    Del,
    Ins,
}

/// Levenshtein alignment over word texts. Among minimum-edit alignments the
/// one with the most matches wins; remaining ties are broken while tracing
/// back from the end, preferring match, then substitution, deletion and
/// insertion. Returns matched `(base index, comp index)` pairs in order.
pub fn align_texts<S: AsRef<str>>(base: &[S], comp: &[S]) -> Vec<(usize, usize)> {
    let (n, m) = (base.len(), comp.len());
    // Cost (edits, -matches) packed so lexicographic order is plain tuple order.
    let mut cost = vec![(0usize, 0isize); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best: Option<(usize, isize)> = None;
            let mut consider = |c: (usize, isize)| {
                if best.is_none_or(|b| c < b) {
                    best = Some(c);
                }
            };
            if i > 0 && j > 0 {
                let (e, k) = cost[at(i - 1, j - 1)];
                if base[i - 1].as_ref() == comp[j - 1].as_ref() {
                    consider((e, k - 1));
                } else {
                    consider((e + 1, k));
                }
            }
            if i > 0 {
                let (e, k) = cost[at(i - 1, j)];
                consider((e + 1, k));
            }
            if j > 0 {
                let (e, k) = cost[at(i, j - 1)];
                consider((e + 1, k));
            }
            cost[at(i, j)] = best.expect("at least one predecessor");
        }
    }

    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[at(i, j)];
        let mut chosen = None;
        for step in [Step::Match, Step::Sub, Step::Del, Step::Ins] {
            let ok = match step {
                Step::Match => {
                    i > 0 && j > 0 && base[i - 1].as_ref() == comp[j - 1].as_ref() && {
                        let (e, k) = cost[at(i - 1, j - 1)];
                        (e, k - 1) == here
                    }
                }
                Step::Sub => {
                    i > 0 && j > 0 && base[i - 1].as_ref() != comp[j - 1].as_ref() && {
                        let (e, k) = cost[at(i - 1, j - 1)];
                        (e + 1, k) == here
                    }
                }
                Step::Del => i > 0 && {
                    let (e, k) = cost[at(i - 1, j)];
                    (e + 1, k) == here
                },
                Step::Ins => j > 0 && {
                    let (e, k) = cost[at(i, j - 1)];
                    (e + 1, k) == here
                },
            };
            if ok {
                chosen = Some(step);
                break;
            }
        }
        match chosen.expect("a predecessor reproduces the cell cost") {
            Step::Match => {
                out.push((i - 1, j - 1));
                i -= 1;
                j -= 1;
            }
            Step::Sub => {
                i -= 1;
                j -= 1;
            }
            Step::Del => i -= 1,
            Step::Ins => j -= 1,
        }
    }
    out.reverse();
    out
}

/// Matched word pairs of one utterance.
pub fn align_words(base: &TimedHypothesis, comp: &TimedHypothesis) -> Result<Vec<(TimedWord, TimedWord)>> {
    if base.utterance_id != comp.utterance_id {
        return Err(Error::InvalidInput(format!(
            "cannot align utterance {:?} with {:?}",
            base.utterance_id, comp.utterance_id
        )));
    }
    let bt: Vec<&str> = base.words.iter().map(|w| w.text.as_str()).collect();
    let ct: Vec<&str> = comp.words.iter().map(|w| w.text.as_str()).collect();
    Ok(align_texts(&bt, &ct)
        .into_iter()
        .map(|(i, j)| (base.words[i].clone(), comp.words[j].clone()))
        .collect())
}

/// Mean of `(start' - start + end' - end) / 2` over all matched words.
pub fn relative_latency(matched: &MatchedPairSet) -> Result<f64> {
    let n = matched.total();
    if n == 0 {
        return Err(Error::UndefinedMetric("relative latency with no matched words".into()));
    }
    let sum: f64 = matched
        .pairs
        .iter()
        .flatten()
        .map(|(b, c)| (c.start_ms - b.start_ms) + (c.end_ms - b.end_ms))
        .sum();
    Ok(sum / (2 * n) as f64)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WordLine {
    w: String,
    s: f64,
    e: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HypothesisLine {
    id: String,
    words: Vec<WordLine>,
}

/// Parses JSON lines `{"id": .., "words": [{"w": .., "s": .., "e": ..}]}`.
/// Blank lines are skipped; out-of-order words are sorted with a warning.
pub fn parse_hypotheses_from(reader: impl BufRead, path: &Path) -> Result<BTreeMap<String, TimedHypothesis>> {
    let mut out = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let parsed: HypothesisLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let mut words = Vec::with_capacity(parsed.words.len());
        for w in parsed.words {
            if !w.s.is_finite() || !w.e.is_finite() {
                return Err(malformed(format!("non-finite timestamp on word {:?}", w.w)));
            }
            if w.e < w.s {
                return Err(Error::InvalidTiming {
                    utterance: parsed.id.clone(),
                    word: w.w,
                    start: w.s,
                    end: w.e,
                });
            }
            words.push(TimedWord {
                text: w.w,
                start_ms: w.s,
                end_ms: w.e,
            });
        }
        let key = |w: &TimedWord| (w.start_ms, w.end_ms);
        if words.windows(2).any(|p| key(&p[0]) > key(&p[1])) {
            log::warn!("{}:{}: words of {:?} out of time order; sorting", path.display(), n + 1, parsed.id);
            words.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms).then(a.end_ms.total_cmp(&b.end_ms)));
        }
        if out.contains_key(&parsed.id) {
            return Err(Error::DuplicateId(parsed.id));
        }
        out.insert(
            parsed.id.clone(),
            TimedHypothesis {
                utterance_id: parsed.id,
                words,
            },
        );
    }
    Ok(out)
}

pub fn parse_hypotheses(path: impl AsRef<Path>) -> Result<BTreeMap<String, TimedHypothesis>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_hypotheses_from(std::io::BufReader::new(file), path)
}

/// Aligns every utterance present in both sets (in id order) and reports
/// the relative latency of `comp` against `base`.
pub fn compare_hypotheses(
    base: &BTreeMap<String, TimedHypothesis>,
    comp: &BTreeMap<String, TimedHypothesis>,
) -> Result<LatencyReport> {
    let mut matched = MatchedPairSet::default();
    for (id, b) in base {
        match comp.get(id) {
            Some(c) => matched.pairs.push(align_words(b, c)?),
            None => log::warn!("utterance {id:?} missing from compared hypotheses; skipped"),
        }
    }
    for id in comp.keys().filter(|id| !base.contains_key(*id)) {
        log::warn!("utterance {id:?} missing from baseline hypotheses; skipped");
    }
    Ok(LatencyReport {
        relative_latency_ms: relative_latency(&matched)?,
        matched_words: matched.total(),
        utterances: matched.pairs.len(),
    })
}
