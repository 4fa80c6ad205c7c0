//! KL divergence between gram distributions.
//!
//! `scd(p, q) = sum_l p(l) ln(p(l) / q(l))` over all `K^N` grams. Grams that
//! carry an explicit count on either side are summed one by one; every other
//! gram has the same floor probability on each side, so the remainder
//! collapses into a single `(K^N - |union|) * p_f * ln(p_f / q_f)` term.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelSequence;
use crate::error::{Error, Result};
use crate::ngram::{gram_keys, gram_space_size, Distribution, GramKey, NGramStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScdValue {
    /// Divergence in nats.
    pub nats: f64,
    /// Number of explicitly summed grams.
    pub support_terms: usize,
    /// Aggregated contribution of the grams unseen on both sides.
    pub implicit_mass: f64,
}

/// Smallest key in `[0, support)` missing from the sorted `keys`.
fn first_gap(keys: &[GramKey]) -> GramKey {
    let mut expect = 0u128;
    for k in keys {
        if k.0 != expect {
            break;
        }
        expect += 1;
    }
    GramKey(expect)
}

pub fn scd(p: &Distribution, q: &Distribution) -> Result<ScdValue> {
    if !p.same_space(q) {
        return Err(Error::Mismatch(format!(
            "order {} / K {} vs order {} / K {}",
            p.order(),
            p.alphabet_size(),
            q.order(),
            q.alphabet_size()
        )));
    }
    let (order, k) = (p.order(), p.alphabet_size());

    let mut keys = p.explicit_keys();
    keys.extend(q.explicit_keys());
    keys.sort_unstable();
    keys.dedup();

    let mut nats = 0.0;
    for &key in &keys {
        let pp = p.probability_of(key);
        if pp == 0.0 {
            continue;
        }
        let qq = q.probability_of(key);
        if qq == 0.0 {
            return Err(Error::DivergenceUndefined {
                gram: key.decode(order, k),
                p: pp,
            });
        }
        nats += pp * (pp / qq).ln();
    }

    let unseen = p.support_size() - keys.len() as u128;
    let (pf, qf) = (p.floor_probability(), q.floor_probability());
    let implicit_mass = if unseen > 0 && pf > 0.0 {
        if qf == 0.0 {
            return Err(Error::DivergenceUndefined {
                gram: first_gap(&keys).decode(order, k),
                p: pf,
            });
        }
        unseen as f64 * pf * (pf / qf).ln()
    } else {
        0.0
    };

    Ok(ScdValue {
        nats: nats + implicit_mass,
        support_terms: keys.len(),
        implicit_mass,
    })
}

/// Mutable gram counts for a growing candidate subset.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateStats {
    order: usize,
    alphabet_size: u32,
    alpha: f64,
    counts: BTreeMap<GramKey, u64>,
    total: u64,
}

impl CandidateStats {
    pub fn new(order: usize, alphabet_size: u32, alpha: f64) -> Result<Self> {
        // validates order, alpha and the gram space
        NGramStats::from_counts(order, alphabet_size, alpha, [])?;
        Ok(Self {
            order,
            alphabet_size,
            alpha,
            counts: BTreeMap::new(),
            total: 0,
        })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn check(&self, seq: &LabelSequence) -> Result<()> {
        match seq.labels.iter().find(|&&l| l >= self.alphabet_size) {
            Some(&label) => Err(Error::LabelOutOfRange {
                id: seq.id.clone(),
                label,
                alphabet_size: self.alphabet_size,
            }),
            None => Ok(()),
        }
    }

    pub fn add(&mut self, seq: &LabelSequence) -> Result<()> {
        self.check(seq)?;
        for key in gram_keys(&seq.labels, self.order, self.alphabet_size) {
            *self.counts.entry(key).or_insert(0) += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// Undo a previous [`add`](Self::add) of the same sequence.
    pub fn remove(&mut self, seq: &LabelSequence) -> Result<()> {
        self.check(seq)?;
        let mut removed = CandidateStats::new(self.order, self.alphabet_size, self.alpha)?;
        removed.add(seq)?;
        for (key, c) in &removed.counts {
            match self.counts.get_mut(key) {
                Some(have) if *have >= *c => {
                    *have -= c;
                    if *have == 0 {
                        self.counts.remove(key);
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "cannot remove {:?}: its grams were never added",
                        seq.id
                    )))
                }
            }
        }
        self.total -= removed.total;
        Ok(())
    }

    pub fn to_stats(&self) -> NGramStats {
        NGramStats::from_counts(
            self.order,
            self.alphabet_size,
            self.alpha,
            self.counts.iter().map(|(&k, &c)| (k, c)),
        )
        .expect("candidate stats were validated on construction")
    }

    pub fn distribution(&self) -> Result<Distribution> {
        Distribution::from_stats(&self.to_stats())
    }

    pub fn support_size(&self) -> u128 {
        gram_space_size(self.alphabet_size, self.order).expect("validated on construction")
    }
}

/// `scd(query, P(S ∪ {addition}))`, leaving `base` unchanged.
pub fn scd_incremental(
    base: &mut CandidateStats,
    addition: &LabelSequence,
    query: &Distribution,
) -> Result<ScdValue> {
    if query.order() != base.order || query.alphabet_size() != base.alphabet_size {
        return Err(Error::Mismatch(format!(
            "query order {} / K {} vs candidate order {} / K {}",
            query.order(),
            query.alphabet_size(),
            base.order,
            base.alphabet_size
        )));
    }
    base.add(addition)?;
    let value = base.distribution().and_then(|d| scd(query, &d));
    base.remove(addition)?;
    value
}
