//! Subset selection strategies.
//!
//! Every strategy reports the divergence of its picks against the same target
//! `lambda * P_Q + (1 - lambda) * P_U`, so results are comparable across
//! strategies. Candidates are always considered in length-sorted order (see
//! [`sort_by_length`]), and "earliest position" tie-breaks refer to that
//! order.

mod baselines;
mod greedy;
mod oracle;
mod report;
mod synthetic;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{sort_by_length, LabelCorpus, LabelSequence};
use crate::divergence::{scd, CandidateStats, ScdValue};
use crate::error::{Error, Result};
use crate::ngram::{count_ngrams, gram_keys, interpolate, Distribution, NGramStats};

pub use baselines::{contrastive_scores, select_contrastive, select_random};
pub use greedy::{select_greedy_scd, DeltaScorer};
pub use oracle::select_oracle;
pub use report::{format_report, parse_report, ParsedReport};
pub use synthetic::{generate_synthetic, MarkovSource, Origin, SyntheticCorpus, SyntheticSpec, SYNTHETIC_FRAME_RATE_HZ};

/// Relative tolerance under which two candidate divergences count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// True when `candidate` beats `best` by more than the tie tolerance.
pub fn improves(candidate: f64, best: f64) -> bool {
    if !best.is_finite() {
        return candidate < best;
    }
    candidate < best - TIE_TOLERANCE * best.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    /// Number of utterances.
    Count(usize),
    /// Total seconds of audio (experimental).
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget: Budget,
    pub order: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub prune_min_count: u64,
    /// Only used by the random baseline.
    pub seed: u64,
    pub oracle_max_universe: usize,
    pub oracle_max_budget: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            budget: Budget::Count(1),
            order: 1,
            lambda: 0.5,
            alpha: 0.5,
            prune_min_count: 0,
            seed: 0,
            oracle_max_universe: 20,
            oracle_max_budget: 6,
        }
    }
}

impl SelectionConfig {
    pub fn with_count(count: usize) -> Self {
        Self {
            budget: Budget::Count(count),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha {} must be finite and >= 0", self.alpha));
        }
        if self.order < 1 {
            return bad("order must be >= 1".into());
        }
        match self.budget {
            Budget::Count(0) => bad("budget count must be positive".into()),
            Budget::Seconds(s) if !(s.is_finite() && s >= 0.0) => {
                bad(format!("duration budget {s} must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    GreedyScd,
    Random,
    Contrastive,
    Oracle,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::GreedyScd => "greedy-scd",
            Strategy::Random => "random",
            Strategy::Contrastive => "contrastive",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy-scd" => Ok(Strategy::GreedyScd),
            "random" => Ok(Strategy::Random),
            "contrastive" => Ok(Strategy::Contrastive),
            "oracle" => Ok(Strategy::Oracle),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen ids in selection order.
    pub selected_ids: Vec<String>,
    /// Divergence to the target after each pick.
    pub scd_trace: Vec<f64>,
    pub final_scd: ScdValue,
    pub strategy: Strategy,
    pub config: SelectionConfig,
}

/// Run the given strategy. `query` may be omitted only for [`Strategy::Random`].
pub fn select(
    strategy: Strategy,
    universal: &LabelCorpus,
    query: Option<&LabelCorpus>,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let need_query = || {
        query.ok_or_else(|| Error::InvalidArgument(format!("strategy {strategy} needs a query corpus")))
    };
    match strategy {
        Strategy::GreedyScd => select_greedy_scd(universal, need_query()?, config),
        Strategy::Random => select_random(universal, query, config),
        Strategy::Contrastive => select_contrastive(universal, need_query()?, config),
        Strategy::Oracle => select_oracle(universal, need_query()?, config),
    }
}

/// Universal and query statistics shared by the strategies.
#[derive(Debug, Clone)]
pub struct PreparedStats {
    /// Unpruned counts of the universal corpus.
    pub universal_raw: NGramStats,
    pub universal: NGramStats,
    /// `None` when running without a query (random baseline).
    pub query: Option<NGramStats>,
    /// Interpolated target, or `P_U` without a query.
    pub target: Distribution,
}

pub fn prepare(
    universal: &LabelCorpus,
    query: Option<&LabelCorpus>,
    config: &SelectionConfig,
) -> Result<PreparedStats> {
    config.validate()?;
    if universal.is_empty() {
        return Err(Error::InvalidArgument("universal corpus is empty".into()));
    }
    let universal_raw = count_ngrams(universal, config.order, config.alpha)?;
    let pruned_u = universal_raw.prune(config.prune_min_count);
    let (query_stats, target) = match query {
        Some(q) => {
            if q.is_empty() {
                return Err(Error::InvalidArgument("query corpus is empty".into()));
            }
            if q.alphabet_size() != universal.alphabet_size() {
                return Err(Error::Mismatch(format!(
                    "query alphabet {} vs universal alphabet {}",
                    q.alphabet_size(),
                    universal.alphabet_size()
                )));
            }
            let qs = count_ngrams(q, config.order, config.alpha)?.prune(config.prune_min_count);
            let target = interpolate(&qs, &pruned_u, config.lambda)?;
            (Some(qs), target)
        }
        None => (None, Distribution::from_stats(&pruned_u)?),
    };
    Ok(PreparedStats {
        universal_raw,
        universal: pruned_u,
        query: query_stats,
        target,
    })
}

/// The target distribution a selection is scored against.
pub fn target_distribution(
    universal: &LabelCorpus,
    query: &LabelCorpus,
    config: &SelectionConfig,
) -> Result<Distribution> {
    Ok(prepare(universal, Some(query), config)?.target)
}

/// Contiguous buckets over `n` items: sizes differ by at most one and the
/// first `n % c` buckets get the extra item.
pub fn partition_buckets(n: usize, c: usize) -> Vec<Range<usize>> {
    assert!(c >= 1 && c <= n, "need 1 <= c <= n");
    let (base, rem) = (n / c, n % c);
    let mut start = 0;
    (0..c)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Contiguous buckets spanning roughly `total / c` seconds each; empty
/// buckets are dropped.
pub fn duration_buckets(durations: &[f64], c: usize) -> Vec<Range<usize>> {
    let total: f64 = durations.iter().sum();
    if durations.is_empty() || c == 0 {
        return Vec::new();
    }
    if total <= 0.0 {
        return partition_buckets(durations.len(), c.min(durations.len()));
    }
    let width = total / c as f64;
    let mut buckets: Vec<Range<usize>> = Vec::new();
    let mut cum = 0.0;
    let mut current = usize::MAX;
    for (j, d) in durations.iter().enumerate() {
        let b = ((cum / width).floor() as usize).min(c - 1);
        if b != current {
            buckets.push(j..j + 1);
            current = b;
        } else {
            buckets.last_mut().unwrap().end = j + 1;
        }
        cum += d;
    }
    buckets
}

/// Per-pick divergence bookkeeping against a fixed target.
pub(crate) struct Trace<'a> {
    target: &'a Distribution,
    stats: CandidateStats,
    ids: Vec<String>,
    values: Vec<f64>,
    duration: f64,
}

impl<'a> Trace<'a> {
    pub(crate) fn new(target: &'a Distribution, config: &SelectionConfig) -> Result<Self> {
        Ok(Self {
            target,
            stats: CandidateStats::new(config.order, target.alphabet_size(), config.alpha)?,
            ids: Vec::new(),
            values: Vec::new(),
            duration: 0.0,
        })
    }

    pub(crate) fn push(&mut self, seq: &LabelSequence) -> Result<()> {
        if seq.is_empty() {
            log::info!("selected zero-length utterance {:?}", seq.id);
        }
        self.stats.add(seq)?;
        let v = scd(self.target, &self.stats.distribution()?)?;
        self.ids.push(seq.id.clone());
        self.values.push(v.nats);
        self.duration += seq.duration();
        Ok(())
    }

    pub(crate) fn duration(&self) -> f64 {
        self.duration
    }

    pub(crate) fn finish(self, strategy: Strategy, config: &SelectionConfig) -> Result<SelectionResult> {
        let final_scd = scd(self.target, &self.stats.distribution()?)?;
        Ok(SelectionResult {
            selected_ids: self.ids,
            scd_trace: self.values,
            final_scd,
            strategy,
            config: config.clone(),
        })
    }
}

/// Count budget checked against the corpus size.
pub(crate) fn count_budget(budget: usize, n: usize) -> Result<usize> {
    if budget > n {
        return Err(Error::InvalidArgument(format!(
            "budget of {budget} utterances exceeds corpus size {n}"
        )));
    }
    Ok(budget)
}

/// Duration budget checked against the corpus.
pub(crate) fn seconds_budget(seconds: f64, corpus: &LabelCorpus) -> Result<f64> {
    if !corpus.has_durations() {
        return Err(Error::InvalidArgument(
            "duration budget needs a duration for every utterance".into(),
        ));
    }
    let total = corpus.total_duration();
    if seconds > total {
        return Err(Error::InvalidArgument(format!(
            "duration budget {seconds}s exceeds corpus total {total}s"
        )));
    }
    Ok(seconds)
}

pub(crate) fn sorted_universal(universal: &LabelCorpus) -> LabelCorpus {
    sort_by_length(universal)
}

/// Number of distinct order-`order` grams covered by the given utterances.
pub fn distinct_gram_coverage(corpus: &LabelCorpus, ids: &[String], order: usize) -> Result<usize> {
    let sub = corpus.subset(ids.iter().map(String::as_str))?;
    let mut keys: Vec<_> = sub
        .sequences()
        .iter()
        .flat_map(|s| gram_keys(&s.labels, order, corpus.alphabet_size()).collect::<Vec<_>>())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    Ok(keys.len())
}

/// From-scratch divergence of a selection against the target.
pub fn rescore(
    universal: &LabelCorpus,
    query: &LabelCorpus,
    config: &SelectionConfig,
    ids: &[String],
) -> Result<ScdValue> {
    let target = target_distribution(universal, query, config)?;
    let sub = universal.subset(ids.iter().map(String::as_str))?;
    let stats = count_ngrams(&sub, config.order, config.alpha)?;
    scd(&target, &Distribution::from_stats(&stats)?)
}
