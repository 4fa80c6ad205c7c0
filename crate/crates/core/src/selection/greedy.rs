//! Bucketed greedy search.
//!
//! The universal corpus is sorted by length and cut into contiguous buckets;
//! each bucket contributes the one utterance whose addition brings the
//! selected set closest to the target. Each utterance is scored exactly once.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{
    count_budget, duration_buckets, improves, partition_buckets, prepare, seconds_budget,
    sorted_universal, Budget, SelectionConfig, SelectionResult, Strategy, Trace,
};
use crate::corpus::{LabelCorpus, LabelSequence};
use crate::error::{Error, Result};
use crate::ngram::{gram_keys, Distribution, GramKey};

/// Gram spaces up to this size get a dense key-to-slot table.
const DENSE_INDEX_LIMIT: u128 = 1 << 22;
const ABSENT: u32 = u32::MAX;

enum GramIndex {
    Dense(Vec<u32>),
    Sparse(HashMap<GramKey, u32>),
}

impl GramIndex {
    fn get(&self, key: GramKey) -> Option<u32> {
        match self {
            GramIndex::Dense(v) => v.get(key.0 as usize).copied().filter(|&i| i != ABSENT),
            GramIndex::Sparse(m) => m.get(&key).copied(),
        }
    }
}

/// Divergence from a fixed target to a growing candidate set, updated by
/// deltas.
///
/// With `p(l) = (c(l) + alpha) / D` and `D = total + alpha * K^N`,
///
/// ```text
/// KL(target || p) = sum q ln q - sum q ln(c + alpha) + ln(D) * sum q
/// ```
///
/// Only the middle term depends on individual counts, so scoring a candidate
/// touches just the grams it contains. Every gram a candidate may contain must
/// be registered up front (the union of the target's support and `extra_keys`).
pub struct DeltaScorer {
    order: usize,
    alphabet_size: u32,
    alpha: f64,
    support: f64,
    keys: Vec<GramKey>,
    lookup: GramIndex,
    q: Vec<f64>,
    q_floor: f64,
    implicit_n: f64,
    neg_entropy: f64,
    q_mass: f64,
    counts: Vec<u64>,
    total: u64,
    // sum over slots with q > 0 and c + alpha > 0 of q ln(c + alpha)
    cross: f64,
    // slots with q > 0 and c + alpha == 0 (only possible at alpha = 0)
    holes: usize,
}

impl DeltaScorer {
    pub fn new(
        target: &Distribution,
        alpha: f64,
        extra_keys: impl IntoIterator<Item = GramKey>,
    ) -> Result<Self> {
        let mut keys = target.explicit_keys();
        keys.extend(extra_keys);
        keys.sort_unstable();
        keys.dedup();

        let support_size = target.support_size();
        let lookup = if support_size <= DENSE_INDEX_LIMIT {
            let mut v = vec![ABSENT; support_size as usize];
            for (i, k) in keys.iter().enumerate() {
                v[k.0 as usize] = i as u32;
            }
            GramIndex::Dense(v)
        } else {
            GramIndex::Sparse(keys.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect())
        };

        let q: Vec<f64> = keys.iter().map(|&k| target.probability_of(k)).collect();
        let q_floor = target.floor_probability();
        let implicit_n = (support_size - keys.len() as u128) as f64;
        let mut neg_entropy: f64 = q.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum();
        let mut q_mass: f64 = q.iter().sum();
        if implicit_n > 0.0 && q_floor > 0.0 {
            neg_entropy += implicit_n * q_floor * q_floor.ln();
            q_mass += implicit_n * q_floor;
        }

        let mut scorer = Self {
            order: target.order(),
            alphabet_size: target.alphabet_size(),
            alpha,
            support: support_size as f64,
            counts: vec![0; keys.len()],
            keys,
            lookup,
            q,
            q_floor,
            implicit_n,
            neg_entropy,
            q_mass,
            total: 0,
            cross: 0.0,
            holes: 0,
        };
        scorer.recompute_cross();
        Ok(scorer)
    }

    fn recompute_cross(&mut self) {
        let (mut cross, mut holes) = (0.0, 0);
        for (&q, &c) in self.q.iter().zip(&self.counts) {
            if q > 0.0 {
                let v = c as f64 + self.alpha;
                if v > 0.0 {
                    cross += q * v.ln();
                } else {
                    holes += 1;
                }
            }
        }
        self.cross = cross;
        self.holes = holes;
    }

    /// `(slot, count)` pairs of the sequence's grams, sorted by slot.
    fn slot_counts(&self, seq: &LabelSequence) -> Result<Vec<(u32, u64)>> {
        if let Some(&label) = seq.labels.iter().find(|&&l| l >= self.alphabet_size) {
            return Err(Error::LabelOutOfRange {
                id: seq.id.clone(),
                label,
                alphabet_size: self.alphabet_size,
            });
        }
        let mut slots = gram_keys(&seq.labels, self.order, self.alphabet_size)
            .map(|k| {
                self.lookup.get(k).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "utterance {:?} contains gram {:?} unknown to the scorer",
                        seq.id,
                        k.decode(self.order, self.alphabet_size)
                    ))
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        slots.sort_unstable();
        let mut out: Vec<(u32, u64)> = Vec::new();
        for s in slots {
            match out.last_mut() {
                Some((last, c)) if *last == s => *c += 1,
                _ => out.push((s, 1)),
            }
        }
        Ok(out)
    }

    fn undefined(&self, slot: usize) -> Error {
        Error::DivergenceUndefined {
            gram: self.keys[slot].decode(self.order, self.alphabet_size),
            p: self.q[slot],
        }
    }

    /// Divergence after adding `seq`, without changing the state.
    pub fn evaluate(&self, seq: &LabelSequence) -> Result<f64> {
        let slots = self.slot_counts(seq)?;
        let mut cross = self.cross;
        let mut holes = self.holes;
        let mut added = 0u64;
        for &(slot, m) in &slots {
            added += m;
            let q = self.q[slot as usize];
            if q == 0.0 {
                continue;
            }
            let base = self.counts[slot as usize] as f64 + self.alpha;
            if base > 0.0 {
                cross += q * (m as f64 / base).ln_1p();
            } else {
                holes -= 1;
                cross += q * (m as f64).ln();
            }
        }
        if holes > 0 {
            let filled: Vec<u32> = slots.iter().map(|s| s.0).collect();
            let hole = (0..self.q.len())
                .find(|&i| self.q[i] > 0.0 && self.counts[i] == 0 && filled.binary_search(&(i as u32)).is_err())
                .expect("hole count is positive");
            return Err(self.undefined(hole));
        }
        let implicit_cross = if self.implicit_n > 0.0 && self.q_floor > 0.0 {
            if self.alpha == 0.0 {
                return Err(Error::DivergenceUndefined {
                    gram: first_unregistered(&self.keys).decode(self.order, self.alphabet_size),
                    p: self.q_floor,
                });
            }
            self.implicit_n * self.q_floor * self.alpha.ln()
        } else {
            0.0
        };
        let denom = (self.total + added) as f64 + self.alpha * self.support;
        Ok(self.neg_entropy - cross - implicit_cross + denom.ln() * self.q_mass)
    }

    /// Add `seq` to the candidate set.
    pub fn commit(&mut self, seq: &LabelSequence) -> Result<()> {
        for (slot, m) in self.slot_counts(seq)? {
            self.counts[slot as usize] += m;
            self.total += m;
        }
        // from scratch, so rounding does not accumulate across picks
        self.recompute_cross();
        Ok(())
    }
}

fn first_unregistered(keys: &[GramKey]) -> GramKey {
    let mut expect = 0u128;
    for k in keys {
        if k.0 != expect {
            break;
        }
        expect += 1;
    }
    GramKey(expect)
}

/// Index of the best value; ties (within [`TIE_TOLERANCE`](super::TIE_TOLERANCE))
/// go to the earliest.
fn argmin_earliest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if improves(v, values[best]) {
            best = i;
        }
    }
    best
}

pub fn select_greedy_scd(
    universal: &LabelCorpus,
    query: &LabelCorpus,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let prep = prepare(universal, Some(query), config)?;
    let sorted = sorted_universal(universal);
    let seqs = sorted.sequences();
    let n = seqs.len();

    let empties = seqs.iter().filter(|s| s.is_empty()).count();
    if empties > 0 {
        log::warn!("universal corpus has {empties} zero-length utterances");
    }

    let (buckets, seconds) = match config.budget {
        Budget::Count(c) => (partition_buckets(n, count_budget(c, n)?), None),
        Budget::Seconds(s) => {
            let s = seconds_budget(s, universal)?;
            let mean = universal.total_duration() / n as f64;
            let approx_count = ((s / mean).round() as usize).clamp(1, n);
            let durations: Vec<f64> = seqs.iter().map(LabelSequence::duration).collect();
            (duration_buckets(&durations, approx_count), Some(s))
        }
    };

    let mut scorer = DeltaScorer::new(
        &prep.target,
        config.alpha,
        prep.universal_raw.counts().keys().copied(),
    )?;
    let mut trace = Trace::new(&prep.target, config)?;
    for bucket in buckets {
        if seconds.is_some_and(|s| trace.duration() >= s) {
            break;
        }
        let values = seqs[bucket.clone()]
            .par_iter()
            .map(|s| scorer.evaluate(s))
            .collect::<Result<Vec<f64>>>()?;
        let pick = &seqs[bucket.start + argmin_earliest(&values)];
        scorer.commit(pick)?;
        trace.push(pick)?;
    }
    if let Some(s) = seconds {
        if trace.duration() < s {
            log::warn!(
                "buckets exhausted at {:.3}s of a {s}s duration budget",
                trace.duration()
            );
        }
    }
    trace.finish(Strategy::GreedyScd, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{scd, scd_incremental, CandidateStats};
    use crate::ngram::{count_ngrams, Distribution};
    use crate::selection::rescore;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Just};
    use proptest::strategy::Strategy as _;

    fn seq(id: &str, labels: &[u32]) -> LabelSequence {
        LabelSequence::new(id, Some(labels.len() as f64 * 0.02), labels.to_vec())
    }

    fn corpus(k: u32, seqs: Vec<LabelSequence>) -> LabelCorpus {
        LabelCorpus::new(k, seqs, "").unwrap()
    }

    fn four_utterance_instance() -> (LabelCorpus, LabelCorpus, SelectionConfig) {
        let u = corpus(
            2,
            vec![seq("u4", &[1, 0]), seq("u2", &[1, 1]), seq("u3", &[0, 1]), seq("u1", &[0, 0])],
        );
        let q = corpus(2, vec![seq("q1", &[0, 0])]);
        let cfg = SelectionConfig {
            lambda: 1.0,
            alpha: 0.5,
            ..SelectionConfig::with_count(2)
        };
        (u, q, cfg)
    }

    #[test]
    fn hand_evaluated_instance() {
        // Target: counts {0:2}, alpha 0.5, K=2 -> (5/6, 1/6).
        // Bucket {u1,u2}: u1 reproduces the target exactly (0 nats),
        // u2 gives (1/6, 5/6): (5/6 - 1/6) ln 5 = 1.0729586082894.
        // Bucket {u3,u4}: both give counts {0:3,1:1} -> (0.7, 0.3):
        // 5/6 ln(25/21) + 1/6 ln(5/9) = 0.047330045136961624.
        let (u, q, cfg) = four_utterance_instance();
        let target = crate::selection::target_distribution(&u, &q, &cfg).unwrap();
        let scorer = DeltaScorer::new(&target, 0.5, [GramKey(0), GramKey(1)]).unwrap();
        let s = |l: &[u32]| scorer.evaluate(&seq("x", l)).unwrap();
        assert!(s(&[0, 0]).abs() < 1e-15);
        assert!((s(&[1, 1]) - 1.0729586082894).abs() < 1e-12);

        let r = select_greedy_scd(&u, &q, &cfg).unwrap();
        assert_eq!(r.selected_ids, vec!["u1", "u3"]);
        assert_eq!(r.scd_trace.len(), 2);
        assert!(r.scd_trace[0].abs() < 1e-15);
        assert!((r.final_scd.nats - 0.047330045136961624).abs() < 1e-12);
        assert_eq!(*r.scd_trace.last().unwrap(), r.final_scd.nats);
    }

    #[test]
    fn budget_equal_to_corpus_takes_everything_in_sorted_order() {
        let u = corpus(3, vec![seq("c", &[0, 1, 2]), seq("a", &[2]), seq("b", &[1, 1])]);
        let q = corpus(3, vec![seq("q", &[2, 2])]);
        let r = select_greedy_scd(&u, &q, &SelectionConfig::with_count(3)).unwrap();
        assert_eq!(r.selected_ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn errors() {
        let u = corpus(2, vec![seq("a", &[0])]);
        let q = corpus(2, vec![seq("q", &[0])]);
        let empty = corpus(2, vec![]);
        let cfg = SelectionConfig::with_count(1);
        assert!(select_greedy_scd(&empty, &q, &cfg).is_err());
        assert!(select_greedy_scd(&u, &empty, &cfg).is_err());
        assert!(select_greedy_scd(&u, &q, &SelectionConfig::with_count(2)).is_err());
        let no_dur = corpus(2, vec![LabelSequence::new("a", None, vec![0])]);
        let secs = SelectionConfig {
            budget: Budget::Seconds(0.01),
            ..cfg.clone()
        };
        assert!(select_greedy_scd(&no_dur, &q, &secs).is_err());
        let q3 = corpus(3, vec![seq("q", &[0])]);
        assert!(matches!(select_greedy_scd(&u, &q3, &cfg), Err(Error::Mismatch(_))));
    }

    #[test]
    fn unsmoothed_uncovered_target_is_an_error() {
        let u = corpus(2, vec![seq("a", &[0]), seq("b", &[1])]);
        let q = corpus(2, vec![seq("q", &[0, 1])]);
        let cfg = SelectionConfig {
            alpha: 0.0,
            lambda: 1.0,
            ..SelectionConfig::with_count(2)
        };
        assert!(matches!(
            select_greedy_scd(&u, &q, &cfg),
            Err(Error::DivergenceUndefined { .. })
        ));
    }

    #[test]
    fn duration_budget_stops_once_reached() {
        let seqs: Vec<_> = (0..20).map(|i| seq(&format!("u{i:02}"), &vec![(i % 3) as u32; 10 + i])).collect();
        let u = corpus(3, seqs);
        let q = corpus(3, vec![seq("q", &[0, 0, 1])]);
        let cfg = SelectionConfig {
            budget: Budget::Seconds(1.0),
            ..SelectionConfig::default()
        };
        let r = select_greedy_scd(&u, &q, &cfg).unwrap();
        let picked: f64 = r.selected_ids.iter().map(|id| u.get(id).unwrap().duration()).sum();
        assert!(picked >= 1.0);
        let zero = SelectionConfig {
            budget: Budget::Seconds(0.0),
            ..cfg
        };
        assert!(select_greedy_scd(&u, &q, &zero).unwrap().selected_ids.is_empty());
    }

    type Instance = (u32, usize, f64, f64, Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<u32>);

    fn arb_instance() -> impl proptest::strategy::Strategy<Value = Instance> {
        (1u32..=4, 1usize..=2).prop_flat_map(|(k, n)| {
            (
                Just(k),
                Just(n),
                prop::sample::select(vec![0.01, 0.5, 2.0]),
                0.0f64..=1.0,
                prop::collection::vec(prop::collection::vec(0..k, 0..7), 1..6),
                prop::collection::vec(prop::collection::vec(0..k, 1..7), 1..4),
                prop::collection::vec(0..k, 0..7),
            )
        })
    }

    proptest! {
        #[test]
        fn delta_scorer_matches_incremental_scd((k, n, alpha, lambda, s, qs, add) in arb_instance()) {
            let mk = |v: &Vec<Vec<u32>>, p: &str| corpus(k, v.iter().enumerate().map(|(i, l)| seq(&format!("{p}{i}"), l)).collect());
            let (sc, qc) = (mk(&s, "s"), mk(&qs, "q"));
            let mut all = s.clone();
            all.push(add.clone());
            let uc = mk(&all, "u");
            let cfg = SelectionConfig { order: n, alpha, lambda, ..SelectionConfig::default() };
            let prep = prepare(&uc, Some(&qc), &cfg).unwrap();
            let mut scorer = DeltaScorer::new(&prep.target, alpha, prep.universal_raw.counts().keys().copied()).unwrap();
            let mut base = CandidateStats::new(n, k, alpha).unwrap();
            for q in sc.sequences() {
                scorer.commit(q).unwrap();
                base.add(q).unwrap();
            }
            let addition = seq("add", &add);
            let fast = scorer.evaluate(&addition).unwrap();
            let slow = scd_incremental(&mut base, &addition, &prep.target).unwrap();
            prop_assert!((fast - slow.nats).abs() <= 1e-12 * slow.nats.abs().max(1.0), "{} vs {}", fast, slow.nats);
        }

        #[test]
        fn greedy_invariants((k, n, alpha, lambda, s, qs, _add) in arb_instance(), c in 1usize..6) {
            let mk = |v: &Vec<Vec<u32>>, p: &str| corpus(k, v.iter().enumerate().map(|(i, l)| seq(&format!("{p}{i}"), l)).collect());
            let (uc, qc) = (mk(&s, "u"), mk(&qs, "q"));
            let c = c.min(uc.len());
            let cfg = SelectionConfig { order: n, alpha, lambda, ..SelectionConfig::with_count(c) };
            let r = select_greedy_scd(&uc, &qc, &cfg).unwrap();
            prop_assert_eq!(r.selected_ids.len(), c);
            prop_assert_eq!(r.scd_trace.len(), c);
            let mut ids = r.selected_ids.clone();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), c);
            let again = select_greedy_scd(&uc, &qc, &cfg).unwrap();
            prop_assert_eq!(&again, &r);
            let scratch = rescore(&uc, &qc, &cfg, &r.selected_ids).unwrap();
            prop_assert!((scratch.nats - r.final_scd.nats).abs() <= 1e-9);
            // bucket i contributes exactly its own pick
            let sorted = sorted_universal(&uc);
            for (b, id) in partition_buckets(uc.len(), c).into_iter().zip(&r.selected_ids) {
                prop_assert!(sorted.sequences()[b].iter().any(|q| &q.id == id));
            }
        }
    }

    #[test]
    fn lambda_endpoints_select_target() {
        let u = corpus(3, vec![seq("a", &[0, 1, 2, 2]), seq("b", &[1, 1])]);
        let q = corpus(3, vec![seq("q", &[0, 0, 2])]);
        let pu = Distribution::from_stats(&count_ngrams(&u, 1, 0.5).unwrap()).unwrap();
        let pq = Distribution::from_stats(&count_ngrams(&q, 1, 0.5).unwrap()).unwrap();
        let mut cfg = SelectionConfig::with_count(1);
        cfg.lambda = 0.0;
        let t0 = crate::selection::target_distribution(&u, &q, &cfg).unwrap();
        cfg.lambda = 1.0;
        let t1 = crate::selection::target_distribution(&u, &q, &cfg).unwrap();
        assert!(scd(&t0, &pu).unwrap().nats.abs() < 1e-15);
        assert!(scd(&t1, &pq).unwrap().nats.abs() < 1e-15);
    }
}
