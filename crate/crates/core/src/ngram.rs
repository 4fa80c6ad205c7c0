//! Order-N gram statistics over label corpora.
//!
//! Grams are packed into a [`GramKey`] by mixed-radix encoding, so numeric
//! key order equals lexicographic tuple order. Counts are stored sparsely;
//! the full space size `K^N` only ever enters the smoothing denominator.
//!
//! With additive smoothing the probability of gram `l` is
//! `(cnt(l) + alpha) / (total + alpha * K^N)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::LabelCorpus;
use crate::error::{Error, Result};

/// Below this gram-space size counting uses a dense array.
const DENSE_COUNT_LIMIT: u128 = 1 << 20;

/// Mixed-radix packed gram: `sum_j l_j * K^(N-1-j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GramKey(pub u128);

impl GramKey {
    pub fn encode(gram: &[u32], alphabet_size: u32) -> Result<Self> {
        let k = alphabet_size as u128;
        let mut key: u128 = 0;
        for &l in gram {
            if l >= alphabet_size {
                return Err(Error::InvalidArgument(format!(
                    "gram {gram:?} has label {l} >= alphabet size {alphabet_size}"
                )));
            }
            key = key
                .checked_mul(k)
                .and_then(|v| v.checked_add(l as u128))
                .ok_or(Error::GramSpaceTooLarge {
                    alphabet_size,
                    order: gram.len(),
                })?;
        }
        Ok(GramKey(key))
    }

    pub fn decode(self, order: usize, alphabet_size: u32) -> Vec<u32> {
        let k = alphabet_size as u128;
        let mut out = vec![0u32; order];
        let mut v = self.0;
        for slot in out.iter_mut().rev() {
            *slot = (v % k) as u32;
            v /= k;
        }
        out
    }
}

/// `K^N`, or an error if it does not fit in 128 bits.
pub fn gram_space_size(alphabet_size: u32, order: usize) -> Result<u128> {
    let exp = u32::try_from(order).map_err(|_| Error::GramSpaceTooLarge {
        alphabet_size,
        order,
    })?;
    (alphabet_size as u128)
        .checked_pow(exp)
        .ok_or(Error::GramSpaceTooLarge {
            alphabet_size,
            order,
        })
}

/// Sliding-window gram keys of one utterance. Sequences shorter than `order`
/// yield nothing.
pub fn gram_keys(labels: &[u32], order: usize, alphabet_size: u32) -> impl Iterator<Item = GramKey> + '_ {
    let k = alphabet_size as u128;
    // K^(N-1); callers have validated that K^N fits.
    let high = (k).pow(order.saturating_sub(1) as u32);
    let mut key: u128 = 0;
    labels.iter().enumerate().filter_map(move |(i, &l)| {
        key = (key % high) * k + l as u128;
        (i + 1 >= order).then_some(GramKey(key))
    })
}

fn check_order_alpha(order: usize, alpha: f64) -> Result<()> {
    if order < 1 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing alpha {alpha} must be finite and >= 0")));
    }
    Ok(())
}

/// Gram counts of a corpus together with its smoothing constant.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramStats {
    order: usize,
    alphabet_size: u32,
    counts: BTreeMap<GramKey, u64>,
    total: u64,
    alpha: f64,
    support_size: u128,
}

impl NGramStats {
    /// Stats from explicit counts. Zero counts are dropped.
    pub fn from_counts(
        order: usize,
        alphabet_size: u32,
        alpha: f64,
        counts: impl IntoIterator<Item = (GramKey, u64)>,
    ) -> Result<Self> {
        check_order_alpha(order, alpha)?;
        let support_size = gram_space_size(alphabet_size, order)?;
        let mut map = BTreeMap::new();
        for (key, c) in counts {
            if key.0 >= support_size {
                return Err(Error::InvalidArgument(format!(
                    "gram key {} outside K^N = {support_size}",
                    key.0
                )));
            }
            if c > 0 {
                *map.entry(key).or_insert(0) += c;
            }
        }
        let total = map.values().sum();
        Ok(Self {
            order,
            alphabet_size,
            counts: map,
            total,
            alpha,
            support_size,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet_size(&self) -> u32 {
        self.alphabet_size
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn support_size(&self) -> u128 {
        self.support_size
    }

    pub fn counts(&self) -> &BTreeMap<GramKey, u64> {
        &self.counts
    }

    pub fn count(&self, key: GramKey) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn count_of(&self, gram: &[u32]) -> Result<u64> {
        self.check_gram(gram)?;
        Ok(self.count(GramKey::encode(gram, self.alphabet_size)?))
    }

    /// `total + alpha * K^N`, the smoothed normalizer.
    pub fn mass(&self) -> f64 {
        self.total as f64 + self.alpha * self.support_size as f64
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_order_alpha(self.order, alpha)?;
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    /// Drop grams with count below `min_count`; the total is recomputed over
    /// the survivors.
    pub fn prune(&self, min_count: u64) -> NGramStats {
        let counts: BTreeMap<_, _> = self
            .counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(&k, &c)| (k, c))
            .collect();
        let total = counts.values().sum();
        NGramStats {
            counts,
            total,
            ..self.clone()
        }
    }

    pub fn same_space(&self, other: &NGramStats) -> bool {
        self.order == other.order && self.alphabet_size == other.alphabet_size
    }

    fn check_gram(&self, gram: &[u32]) -> Result<()> {
        if gram.len() != self.order {
            return Err(Error::InvalidArgument(format!(
                "gram {gram:?} has length {} but order is {}",
                gram.len(),
                self.order
            )));
        }
        Ok(())
    }
}

/// Count order-`order` grams with per-utterance sliding windows.
pub fn count_ngrams(corpus: &LabelCorpus, order: usize, alpha: f64) -> Result<NGramStats> {
    check_order_alpha(order, alpha)?;
    let alphabet_size = corpus.alphabet_size();
    let support_size = gram_space_size(alphabet_size, order)?;
    let seqs = corpus.sequences();

    let counts: BTreeMap<GramKey, u64> = if support_size <= DENSE_COUNT_LIMIT {
        let n = support_size as usize;
        let dense = seqs
            .par_iter()
            .fold(
                || vec![0u64; n],
                |mut acc, s| {
                    for key in gram_keys(&s.labels, order, alphabet_size) {
                        acc[key.0 as usize] += 1;
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u64; n],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        dense
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .map(|(i, c)| (GramKey(i as u128), c))
            .collect()
    } else {
        let sparse = seqs
            .par_iter()
            .fold(HashMap::new, |mut acc: HashMap<GramKey, u64>, s| {
                for key in gram_keys(&s.labels, order, alphabet_size) {
                    *acc.entry(key).or_insert(0) += 1;
                }
                acc
            })
            .reduce(HashMap::new, |mut a, b| {
                for (k, c) in b {
                    *a.entry(k).or_insert(0) += c;
                }
                a
            });
        sparse.into_iter().collect()
    };

    let total = counts.values().sum();
    Ok(NGramStats {
        order,
        alphabet_size,
        counts,
        total,
        alpha,
        support_size,
    })
}

/// Probability view of one or more weighted [`NGramStats`].
///
/// A plain corpus distribution has one component of weight 1; an interpolated
/// target has two. Zero-weight components are dropped on construction.
#[derive(Debug, Clone)]
pub struct Distribution {
    order: usize,
    alphabet_size: u32,
    support_size: u128,
    parts: Vec<(f64, Arc<NGramStats>)>,
}

impl Distribution {
    pub fn from_stats(stats: &NGramStats) -> Result<Self> {
        Self::from_parts(vec![(1.0, Arc::new(stats.clone()))])
    }

    fn from_parts(parts: Vec<(f64, Arc<NGramStats>)>) -> Result<Self> {
        let first = &parts[0].1;
        let (order, alphabet_size, support_size) =
            (first.order, first.alphabet_size, first.support_size);
        let parts: Vec<_> = parts.into_iter().filter(|(w, _)| *w > 0.0).collect();
        for (_, s) in &parts {
            if s.mass() <= 0.0 {
                return Err(Error::ZeroMass);
            }
        }
        Ok(Self {
            order,
            alphabet_size,
            support_size,
            parts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet_size(&self) -> u32 {
        self.alphabet_size
    }

    pub fn support_size(&self) -> u128 {
        self.support_size
    }

    pub fn components(&self) -> impl Iterator<Item = (f64, &NGramStats)> {
        self.parts.iter().map(|(w, s)| (*w, s.as_ref()))
    }

    pub fn same_space(&self, other: &Distribution) -> bool {
        self.order == other.order && self.alphabet_size == other.alphabet_size
    }

    pub fn probability(&self, gram: &[u32]) -> Result<f64> {
        if gram.len() != self.order {
            return Err(Error::InvalidArgument(format!(
                "gram {gram:?} has length {} but order is {}",
                gram.len(),
                self.order
            )));
        }
        Ok(self.probability_of(GramKey::encode(gram, self.alphabet_size)?))
    }

    /// Probability of a packed gram. The key must lie in `[0, K^N)`.
    pub fn probability_of(&self, key: GramKey) -> f64 {
        self.parts
            .iter()
            .map(|(w, s)| w * ((s.count(key) as f64 + s.alpha) / s.mass()))
            .sum()
    }

    /// Probability of any gram that has zero count in every component.
    pub fn floor_probability(&self) -> f64 {
        self.parts.iter().map(|(w, s)| w * (s.alpha / s.mass())).sum()
    }

    /// Sorted union of grams with non-zero count in some component.
    pub fn explicit_keys(&self) -> Vec<GramKey> {
        let mut keys: Vec<GramKey> = self
            .parts
            .iter()
            .flat_map(|(_, s)| s.counts.keys().copied())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }
}

/// `lambda * P_q + (1 - lambda) * P_u`, pointwise.
pub fn interpolate(q: &NGramStats, u: &NGramStats, lambda: f64) -> Result<Distribution> {
    if !q.same_space(u) {
        return Err(Error::Mismatch(format!(
            "order {} / K {} vs order {} / K {}",
            q.order, q.alphabet_size, u.order, u.alphabet_size
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    Distribution::from_parts(vec![
        (lambda, Arc::new(q.clone())),
        (1.0 - lambda, Arc::new(u.clone())),
    ])
}

/// Text dump: a `#order=<N> K=<K> total=<T> alpha=<a>` header, then one
/// `<gram ints>\t<count>` line per gram in key order. `extra_header` lines are
/// written after the first line and must start with `#`.
pub fn format_stats_dump(stats: &NGramStats, extra_header: &[String]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "#order={} K={} total={} alpha={}",
        stats.order, stats.alphabet_size, stats.total, stats.alpha
    )
    .unwrap();
    for line in extra_header {
        debug_assert!(line.starts_with('#'));
        writeln!(out, "{line}").unwrap();
    }
    for (key, c) in &stats.counts {
        let gram = key.decode(stats.order, stats.alphabet_size);
        let gram: Vec<String> = gram.iter().map(u32::to_string).collect();
        writeln!(out, "{}\t{c}", gram.join(" ")).unwrap();
    }
    out
}

pub fn parse_stats_dump(text: &str, path: &Path) -> Result<NGramStats> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty stats dump".into()))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for tok in header.strip_prefix('#').unwrap_or("").split(' ') {
        if let Some((k, v)) = tok.split_once('=') {
            fields.insert(k, v);
        }
    }
    let get = |name: &str| {
        fields
            .get(name)
            .copied()
            .ok_or_else(|| perr(1, format!("header lacks `{name}=`")))
    };
    let order: usize = get("order")?.parse().map_err(|_| perr(1, "bad order".into()))?;
    let k: u32 = get("K")?.parse().map_err(|_| perr(1, "bad K".into()))?;
    let total: u64 = get("total")?.parse().map_err(|_| perr(1, "bad total".into()))?;
    let alpha: f64 = get("alpha")?.parse().map_err(|_| perr(1, "bad alpha".into()))?;

    let mut counts = Vec::new();
    for (i, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let (gram, c) = line
            .split_once('\t')
            .ok_or_else(|| perr(i + 1, "expected `<gram>\\t<count>`".into()))?;
        let gram = gram
            .split(' ')
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| perr(i + 1, format!("bad gram {gram:?}")))?;
        if gram.len() != order {
            return Err(perr(i + 1, format!("gram length {} != order {order}", gram.len())));
        }
        let c: u64 = c.parse().map_err(|_| perr(i + 1, format!("bad count {c:?}")))?;
        counts.push((GramKey::encode(&gram, k)?, c));
    }
    let stats = NGramStats::from_counts(order, k, alpha, counts)?;
    if stats.total != total {
        return Err(perr(1, format!("header total {total} != summed counts {}", stats.total)));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSequence;
    use proptest::prelude::*;

    fn corpus(k: u32, seqs: &[&[u32]]) -> LabelCorpus {
        let seqs = seqs
            .iter()
            .enumerate()
            .map(|(i, l)| LabelSequence::new(format!("u{i}"), None, l.to_vec()))
            .collect();
        LabelCorpus::new(k, seqs, "").unwrap()
    }

    fn all_grams(k: u32, n: usize) -> Vec<Vec<u32>> {
        (0..gram_space_size(k, n).unwrap())
            .map(|i| GramKey(i).decode(n, k))
            .collect()
    }

    #[test]
    fn key_encoding_is_lexicographic() {
        let a = GramKey::encode(&[0, 9], 10).unwrap();
        let b = GramKey::encode(&[1, 0], 10).unwrap();
        assert!(a < b);
        assert_eq!(b.0, 10);
        assert_eq!(b.decode(2, 10), vec![1, 0]);
        assert!(GramKey::encode(&[10], 10).is_err());
        assert!(matches!(gram_space_size(500, 15), Err(Error::GramSpaceTooLarge { .. })));
        assert_eq!(gram_space_size(500, 14).unwrap(), 500u128.pow(14));
    }

    #[test]
    fn unigram_probabilities() {
        let s = count_ngrams(&corpus(2, &[&[0, 0, 1]]), 1, 0.0).unwrap();
        let d = Distribution::from_stats(&s).unwrap();
        assert_eq!(d.probability(&[0]).unwrap(), 2.0 / 3.0);
        assert_eq!(d.probability(&[1]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn bigram_sliding_window() {
        let s = count_ngrams(&corpus(2, &[&[0, 1, 0]]), 2, 0.0).unwrap();
        assert_eq!(s.count_of(&[0, 1]).unwrap(), 1);
        assert_eq!(s.count_of(&[1, 0]).unwrap(), 1);
        assert_eq!(s.total(), 2);
    }

    #[test]
    fn grams_never_cross_utterances() {
        let s = count_ngrams(&corpus(2, &[&[0], &[1]]), 2, 0.0).unwrap();
        assert_eq!(s.total(), 0);
        assert!(s.counts().is_empty());
    }

    #[test]
    fn empty_corpus_and_zero_alpha_has_no_distribution() {
        let s = count_ngrams(&corpus(3, &[]), 1, 0.0).unwrap();
        assert_eq!(s.total(), 0);
        assert!(matches!(Distribution::from_stats(&s), Err(Error::ZeroMass)));
        let s = s.with_alpha(1.0).unwrap();
        let d = Distribution::from_stats(&s).unwrap();
        assert!((d.probability(&[2]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn order_zero_rejected() {
        assert!(count_ngrams(&corpus(2, &[&[0]]), 0, 0.5).is_err());
        assert!(count_ngrams(&corpus(2, &[&[0]]), 1, -0.5).is_err());
    }

    #[test]
    fn smoothed_unseen_gram() {
        // 8 tokens of label 0, K=2, alpha=1: unseen label 1 gets (0+1)/(8+2).
        let s = count_ngrams(&corpus(2, &[&[0; 8]]), 1, 1.0).unwrap();
        let d = Distribution::from_stats(&s).unwrap();
        assert_eq!(d.probability(&[1]).unwrap(), 0.1);
        assert_eq!(d.floor_probability(), 0.1);
    }

    #[test]
    fn probability_rejects_bad_grams() {
        let s = count_ngrams(&corpus(2, &[&[0, 1]]), 2, 0.5).unwrap();
        let d = Distribution::from_stats(&s).unwrap();
        assert!(d.probability(&[0, 2]).is_err());
        assert!(d.probability(&[0]).is_err());
    }

    #[test]
    fn prune_cases() {
        let s = NGramStats::from_counts(1, 3, 0.0, [(GramKey(0), 5), (GramKey(1), 1)]).unwrap();
        assert_eq!(s.prune(0), s);
        let p = s.prune(2);
        assert_eq!(p.total(), 5);
        assert_eq!(p.counts().len(), 1);
        let p = s.prune(100);
        assert_eq!(p.total(), 0);
        assert!(p.counts().is_empty());
        assert_eq!((p.order(), p.alphabet_size()), (1, 3));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let q = NGramStats::from_counts(1, 2, 0.0, [(GramKey(0), 4)]).unwrap();
        let u = NGramStats::from_counts(1, 2, 0.0, [(GramKey(0), 3), (GramKey(1), 3)]).unwrap();
        let dq = Distribution::from_stats(&q).unwrap();
        let du = Distribution::from_stats(&u).unwrap();
        let mid = interpolate(&q, &u, 0.5).unwrap();
        assert_eq!(mid.probability(&[0]).unwrap(), 0.75);
        assert_eq!(mid.probability(&[1]).unwrap(), 0.25);
        for g in all_grams(2, 1) {
            let p0 = interpolate(&q, &u, 0.0).unwrap().probability(&g).unwrap();
            let p1 = interpolate(&q, &u, 1.0).unwrap().probability(&g).unwrap();
            assert_eq!(p0, du.probability(&g).unwrap());
            assert_eq!(p1, dq.probability(&g).unwrap());
        }
        assert!(interpolate(&q, &u, 1.5).is_err());
        assert!(interpolate(&q, &u, -0.1).is_err());
        let other = NGramStats::from_counts(1, 3, 0.0, [(GramKey(0), 4)]).unwrap();
        assert!(matches!(interpolate(&q, &other, 0.5), Err(Error::Mismatch(_))));
    }

    #[test]
    fn stats_dump_round_trip() {
        let s = count_ngrams(&corpus(5, &[&[0, 4, 4, 2], &[3, 3]]), 2, 0.25).unwrap();
        let text = format_stats_dump(&s, &["#config={}".into()]);
        assert!(text.starts_with("#order=2 K=5 total=4 alpha=0.25\n#config={}\n0 4\t1\n"));
        assert_eq!(parse_stats_dump(&text, Path::new("mem")).unwrap(), s);
    }

    fn arb_case() -> impl Strategy<Value = (u32, usize, f64, Vec<Vec<u32>>)> {
        (1u32..5, 1usize..4, prop::sample::select(vec![0.0, 0.1, 0.5, 1.0])).prop_flat_map(
            |(k, n, a)| {
                (
                    Just(k),
                    Just(n),
                    Just(a),
                    prop::collection::vec(prop::collection::vec(0..k, 0..10), 1..8),
                )
            },
        )
    }

    proptest! {
        #[test]
        fn total_matches_independent_recount((k, n, a, seqs) in arb_case()) {
            let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
            let s = count_ngrams(&corpus(k, &refs), n, a).unwrap();
            let expected: u64 = seqs.iter().map(|q| q.len().saturating_sub(n - 1) as u64).sum();
            prop_assert_eq!(s.total(), expected);
            prop_assert_eq!(s.counts().values().sum::<u64>(), s.total());
            // brute-force per-gram recount
            for g in all_grams(k, n) {
                let c: u64 = seqs.iter().map(|q| q.windows(n).filter(|w| *w == g.as_slice()).count() as u64).sum();
                prop_assert_eq!(s.count_of(&g).unwrap(), c);
            }
        }

        #[test]
        fn normalizes_over_full_space((k, n, a, seqs) in arb_case()) {
            let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
            let s = count_ngrams(&corpus(k, &refs), n, a).unwrap();
            if s.mass() > 0.0 {
                let d = Distribution::from_stats(&s).unwrap();
                let sum: f64 = all_grams(k, n).iter().map(|g| d.probability(g).unwrap()).sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                if a > 0.0 {
                    for g in all_grams(k, n) {
                        prop_assert!(d.probability(&g).unwrap() > 0.0);
                    }
                }
            }
        }

        #[test]
        fn reorder_and_duplicate_invariance((k, n, _a, seqs) in arb_case()) {
            let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
            let s = count_ngrams(&corpus(k, &refs), n, 0.0).unwrap();
            prop_assume!(s.total() > 0);
            let mut rev = refs.clone();
            rev.reverse();
            let mut dup = refs.clone();
            dup.extend(refs.iter().copied());
            let sr = count_ngrams(&corpus(k, &rev), n, 0.0).unwrap();
            let sd = count_ngrams(&corpus(k, &dup), n, 0.0).unwrap();
            prop_assert_eq!(&sr, &s);
            prop_assert_eq!(sd.total(), 2 * s.total());
            let (d, dd) = (Distribution::from_stats(&s).unwrap(), Distribution::from_stats(&sd).unwrap());
            for g in all_grams(k, n) {
                prop_assert!((d.probability(&g).unwrap() - dd.probability(&g).unwrap()).abs() < 1e-15);
            }
        }

        #[test]
        fn interpolation_is_pointwise_between_inputs(
            (k, n, a, seqs) in arb_case(),
            split in 0usize..8,
            lambda in 0.0f64..=1.0,
        ) {
            let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
            let split = split.min(refs.len());
            let q = count_ngrams(&corpus(k, &refs[..split]), n, a.max(0.1)).unwrap();
            let u = count_ngrams(&corpus(k, &refs), n, a.max(0.1)).unwrap();
            let m = interpolate(&q, &u, lambda).unwrap();
            let (dq, du) = (Distribution::from_stats(&q).unwrap(), Distribution::from_stats(&u).unwrap());
            for g in all_grams(k, n) {
                let (pq, pu, pm) = (dq.probability(&g).unwrap(), du.probability(&g).unwrap(), m.probability(&g).unwrap());
                prop_assert!(pm >= pq.min(pu) - 1e-15 && pm <= pq.max(pu) + 1e-15);
            }
        }
    }
}
