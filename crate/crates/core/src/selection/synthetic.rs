//! Synthetic label corpora drawn from first-order Markov sources, for
//! experiments where the true origin of every utterance is known.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution as _, Gamma};

use crate::corpus::{LabelCorpus, LabelSequence};
use crate::error::{Error, Result};

/// Frames per second assumed when deriving synthetic durations.
pub const SYNTHETIC_FRAME_RATE_HZ: f64 = 50.0;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} is not a probability vector")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MarkovSource {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    initial_alias: WeightedAliasIndex<f64>,
    row_alias: Vec<WeightedAliasIndex<f64>>,
}

impl MarkovSource {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let k = initial.len();
        if k == 0 || transition.len() != k {
            return Err(Error::InvalidArgument(format!(
                "need a non-empty initial vector and a square transition matrix, got {k} and {} rows",
                transition.len()
            )));
        }
        check_simplex(&initial, "initial distribution")?;
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidArgument(format!("transition row {i} has {} entries", row.len())));
            }
            check_simplex(row, &format!("transition row {i}"))?;
        }
        let alias = |w: &[f64]| {
            WeightedAliasIndex::new(w.to_vec()).map_err(|e| Error::InvalidArgument(e.to_string()))
        };
        Ok(Self {
            initial_alias: alias(&initial)?,
            row_alias: transition.iter().map(|r| alias(r)).collect::<Result<_>>()?,
            initial,
            transition,
        })
    }

    /// Source with every row drawn from a symmetric Dirichlet.
    ///
    /// Small `concentration` gives peaky, easily told apart sources.
    pub fn random(k: usize, concentration: f64, seed: u64) -> Result<Self> {
        if k == 0 || !(concentration.is_finite() && concentration > 0.0) {
            return Err(Error::InvalidArgument("need k >= 1 and a positive concentration".into()));
        }
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
            let sum: f64 = v.iter().sum();
            if sum > 0.0 {
                v.iter_mut().for_each(|x| *x /= sum);
            } else {
                v.fill(1.0 / k as f64);
            }
            v
        };
        let initial = draw();
        let transition = (0..k).map(|_| draw()).collect();
        Self::new(initial, transition)
    }

    pub fn alphabet_size(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut state = self.initial_alias.sample(rng);
        out.push(state as u32);
        for _ in 1..len {
            state = self.row_alias[state].sample(rng);
            out.push(state as u32);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_utts: usize,
    /// Probability that an utterance comes from source B.
    pub mix_b: f64,
    /// Inclusive length range in frames.
    pub len_range: (usize, usize),
    pub seed: u64,
    pub id_prefix: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: LabelCorpus,
    /// Source of each utterance, aligned with `corpus.sequences()`.
    pub origins: Vec<Origin>,
}

impl SyntheticCorpus {
    pub fn origin_of(&self, id: &str) -> Option<Origin> {
        self.corpus
            .sequences()
            .iter()
            .position(|s| s.id == id)
            .map(|i| self.origins[i])
    }
}

pub fn generate_synthetic(a: &MarkovSource, b: &MarkovSource, spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if a.alphabet_size() != b.alphabet_size() {
        return Err(Error::Mismatch(format!(
            "sources have alphabets {} and {}",
            a.alphabet_size(),
            b.alphabet_size()
        )));
    }
    if !(0.0..=1.0).contains(&spec.mix_b) {
        return Err(Error::InvalidArgument(format!("mix_b {} outside [0, 1]", spec.mix_b)));
    }
    let (lo, hi) = spec.len_range;
    if lo > hi {
        return Err(Error::InvalidArgument(format!("empty length range {lo}..={hi}")));
    }
    let width = spec.n_utts.saturating_sub(1).to_string().len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sequences = Vec::with_capacity(spec.n_utts);
    let mut origins = Vec::with_capacity(spec.n_utts);
    for i in 0..spec.n_utts {
        let origin = if rng.random::<f64>() < spec.mix_b { Origin::B } else { Origin::A };
        let len = rng.random_range(lo..=hi);
        let source = if origin == Origin::A { a } else { b };
        let labels = source.sample(len, &mut rng);
        sequences.push(LabelSequence::new(
            format!("{}{i:0width$}", spec.id_prefix),
            Some(len as f64 / SYNTHETIC_FRAME_RATE_HZ),
            labels,
        ));
        origins.push(origin);
    }
    let corpus = LabelCorpus::new(a.alphabet_size() as u32, sequences, "synthetic")?;
    Ok(SyntheticCorpus { corpus, origins })
}
