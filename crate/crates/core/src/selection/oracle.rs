//! Exhaustive search over all subsets of the budget size. Only feasible for
//! tiny corpora; used to bound how far greedy is from optimal.

use rayon::prelude::*;

use super::{count_budget, improves, prepare, sorted_universal, Budget, SelectionConfig, SelectionResult, Strategy, Trace};
use crate::corpus::LabelCorpus;
use crate::divergence::{scd, CandidateStats};
use crate::error::{Error, Result};

/// Lexicographic successor of a `c`-combination of `0..n`, in place.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let c = idx.len();
    let mut i = c;
    while i > 0 {
        i -= 1;
        if idx[i] < n - c + i {
            idx[i] += 1;
            for j in i + 1..c {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// The `c`-subset of the universal corpus with the smallest divergence to the
/// target. Count budgets only, bounded by `oracle_max_universe` and
/// `oracle_max_budget`.
///
/// Ties go to the subset whose sorted id list is lexicographically smallest.
/// The ids are reported in length-sorted corpus order.
pub fn select_oracle(
    universal: &LabelCorpus,
    query: &LabelCorpus,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let Budget::Count(c) = config.budget else {
        return Err(Error::OracleLimit("oracle supports count budgets only".into()));
    };
    let n = universal.len();
    if n > config.oracle_max_universe {
        return Err(Error::OracleLimit(format!(
            "universal corpus has {n} utterances, limit is {}",
            config.oracle_max_universe
        )));
    }
    if c > config.oracle_max_budget {
        return Err(Error::OracleLimit(format!(
            "budget {c} exceeds oracle limit {}",
            config.oracle_max_budget
        )));
    }
    let prep = prepare(universal, Some(query), config)?;
    let c = count_budget(c, n)?;
    let sorted = sorted_universal(universal);
    let seqs = sorted.sequences();

    let mut subsets = Vec::with_capacity(binomial(n, c) as usize);
    let mut idx: Vec<usize> = (0..c).collect();
    loop {
        subsets.push(idx.clone());
        if !next_combination(&mut idx, n) {
            break;
        }
    }

    let values = subsets
        .par_iter()
        .map(|subset| {
            let mut stats = CandidateStats::new(config.order, universal.alphabet_size(), config.alpha)?;
            for &i in subset {
                stats.add(&seqs[i])?;
            }
            Ok(scd(&prep.target, &stats.distribution()?)?.nats)
        })
        .collect::<Result<Vec<f64>>>()?;

    let sorted_ids = |s: &[usize]| {
        let mut ids: Vec<&str> = s.iter().map(|&i| seqs[i].id.as_str()).collect();
        ids.sort_unstable();
        ids
    };
    let mut best = 0;
    for i in 1..subsets.len() {
        let (v, b) = (values[i], values[best]);
        let tied = !improves(v, b) && !improves(b, v);
        if improves(v, b) || (tied && sorted_ids(&subsets[i]) < sorted_ids(&subsets[best])) {
            best = i;
        }
    }

    let mut trace = Trace::new(&prep.target, config)?;
    for &i in &subsets[best] {
        trace.push(&seqs[i])?;
    }
    trace.finish(Strategy::Oracle, config)
}
