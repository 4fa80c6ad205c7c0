//! Reference strategies: seeded random sampling and per-utterance contrastive
//! log-likelihood ranking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    count_budget, prepare, seconds_budget, sorted_universal, Budget, SelectionConfig, SelectionResult, Strategy,
    Trace,
};
use crate::corpus::LabelCorpus;
use crate::error::{Error, Result};
use crate::ngram::{gram_keys, Distribution, NGramStats};

/// Seeded uniform sample without replacement.
///
/// The draw order is a Fisher-Yates shuffle of the length-sorted corpus, so a
/// given seed and corpus always yield the same ids regardless of input order.
/// With a query the trace is measured against the interpolated target;
/// without one, against `P_U`.
pub fn select_random(
    universal: &LabelCorpus,
    query: Option<&LabelCorpus>,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let prep = prepare(universal, query, config)?;
    let sorted = sorted_universal(universal);
    let seqs = sorted.sequences();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut trace = Trace::new(&prep.target, config)?;
    match config.budget {
        Budget::Count(c) => {
            for &i in &order[..count_budget(c, seqs.len())?] {
                trace.push(&seqs[i])?;
            }
        }
        Budget::Seconds(s) => {
            let s = seconds_budget(s, universal)?;
            for &i in &order {
                if trace.duration() >= s {
                    break;
                }
                trace.push(&seqs[i])?;
            }
        }
    }
    trace.finish(Strategy::Random, config)
}

/// Average per-gram `ln P_Q(g) - ln P_U(g)` of each utterance of `corpus`, in
/// corpus order. Utterances without a single gram score `-inf`.
///
/// Both distributions come from the given (possibly pruned) statistics with
/// their own smoothing; a gram with zero probability under `universal` is an
/// error because the ratio is unbounded.
pub fn contrastive_scores(corpus: &LabelCorpus, query: &NGramStats, universal: &NGramStats) -> Result<Vec<f64>> {
    if !query.same_space(universal) || universal.alphabet_size() != corpus.alphabet_size() {
        return Err(Error::Mismatch("contrastive statistics live in different gram spaces".into()));
    }
    let pq = Distribution::from_stats(query)?;
    let pu = Distribution::from_stats(universal)?;
    let (order, k) = (universal.order(), universal.alphabet_size());
    corpus
        .sequences()
        .iter()
        .map(|seq| {
            let mut keys: Vec<_> = gram_keys(&seq.labels, order, k).collect();
            if keys.is_empty() {
                return Ok(f64::NEG_INFINITY);
            }
            // Sum over sorted distinct grams so equal count profiles give
            // bit-identical scores.
            keys.sort_unstable();
            let n = keys.len() as f64;
            let mut sum = 0.0;
            for run in keys.chunk_by(|a, b| a == b) {
                let key = run[0];
                let (q, u) = (pq.probability_of(key), pu.probability_of(key));
                if u == 0.0 {
                    return Err(Error::DivergenceUndefined {
                        gram: key.decode(order, k),
                        p: q,
                    });
                }
                if q == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                sum += run.len() as f64 * (q.ln() - u.ln());
            }
            Ok(sum / n)
        })
        .collect()
}

/// Highest contrastive scores first; ties keep length-sorted order.
pub fn select_contrastive(
    universal: &LabelCorpus,
    query: &LabelCorpus,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let prep = prepare(universal, Some(query), config)?;
    let sorted = sorted_universal(universal);
    let seqs = sorted.sequences();
    let query_stats = prep.query.as_ref().expect("query was supplied");
    let scores = contrastive_scores(&sorted, query_stats, &prep.universal)?;

    let mut ranked: Vec<usize> = (0..seqs.len()).filter(|&i| scores[i].is_finite()).collect();
    let dropped = seqs.len() - ranked.len();
    if dropped > 0 {
        log::warn!("{dropped} utterances have no usable grams and are never picked by contrastive");
    }
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut trace = Trace::new(&prep.target, config)?;
    match config.budget {
        Budget::Count(c) => {
            count_budget(c, seqs.len())?;
            if ranked.len() < c {
                return Err(Error::InvalidArgument(format!(
                    "only {} utterances have finite contrastive scores, budget is {c}",
                    ranked.len()
                )));
            }
            for &i in &ranked[..c] {
                trace.push(&seqs[i])?;
            }
        }
        Budget::Seconds(s) => {
            let s = seconds_budget(s, universal)?;
            for &i in &ranked {
                if trace.duration() >= s {
                    break;
                }
                trace.push(&seqs[i])?;
            }
        }
    }
    trace.finish(Strategy::Contrastive, config)
}
