use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Features, MfccConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Lloyd iterations actually run.
    pub iterations: usize,
    /// Inertia of every assignment pass, the last one against the final centroids.
    pub inertia_history: Vec<f64>,
    pub final_inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    k: usize,
    feature_dim: usize,
    /// Row-major `k x feature_dim`.
    centroids: Vec<f64>,
    pub training: TrainingInfo,
    /// Front-end the features came from, when trained through the pipeline.
    pub mfcc: Option<MfccConfig>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn assign(features: &Features, centroids: &[f64]) -> (Vec<u32>, f64) {
    let dim = features.dim();
    let (labels, dists): (Vec<u32>, Vec<f64>) = (0..features.rows())
        .into_par_iter()
        .map(|i| nearest(features.row(i), centroids, dim))
        .unzip();
    // sequential sum keeps the inertia independent of the thread count
    (labels, dists.iter().sum())
}

fn kmeans_plus_plus(features: &Features, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.rows();
    let dim = features.dim();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(features.row(first));
    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(features.row(i), features.row(first)))
        .collect();

    for _ in 1..k {
        let sum: f64 = d2.iter().sum();
        let pick = if sum > 0.0 {
            let threshold = rng.random::<f64>() * sum;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > threshold {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave threshold just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every point coincides with a centroid already
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = features.row(pick).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(sq_dist(features.row(i), &c));
        });
        centroids.extend(c);
    }
    centroids
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Stops after `max_iters` updates or once no centroid moves by `tol` or more.
/// Empty clusters keep their previous centroid.
pub fn train_kmeans(
    features: &Features,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if features.rows() < k {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows are fewer than k = {k}",
            features.rows()
        )));
    }
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features contain NaN or infinity".into()));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be finite and >= 0")));
    }
    let dim = features.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(features, k, &mut rng);

    let mut history = Vec::new();
    let mut iterations = 0;
    let final_inertia = loop {
        let (labels, inertia) = assign(features, &centroids);
        history.push(inertia);
        if iterations >= max_iters {
            break inertia;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            let c = c as usize;
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        let mut max_shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c * dim..(c + 1) * dim]
                .iter()
                .map(|s| s / counts[c] as f64)
                .collect();
            let old = &mut centroids[c * dim..(c + 1) * dim];
            max_shift = max_shift.max(sq_dist(old, &new).sqrt());
            old.copy_from_slice(&new);
        }
        iterations += 1;
        if max_shift < tol {
            let (_, inertia) = assign(features, &centroids);
            history.push(inertia);
            break inertia;
        }
    };

    Ok(KMeansModel {
        k,
        feature_dim: dim,
        centroids,
        training: TrainingInfo {
            seed,
            max_iters,
            tol,
            iterations,
            inertia_history: history,
            final_inertia,
        },
        mfcc: None,
    })
}

/// Nearest-centroid label per frame; ties go to the lowest index.
pub fn apply_kmeans(model: &KMeansModel, features: &Features) -> Result<Vec<u32>> {
    if features.rows() == 0 {
        return Ok(Vec::new());
    }
    if features.dim() != model.feature_dim {
        return Err(Error::Mismatch(format!(
            "features have dim {} but model expects {}",
            features.dim(),
            model.feature_dim
        )));
    }
    Ok(assign(features, &model.centroids).0)
}

impl KMeansModel {
    pub fn from_centroids(k: usize, feature_dim: usize, centroids: Vec<f64>) -> Result<Self> {
        let model = Self {
            k,
            feature_dim,
            centroids,
            training: TrainingInfo {
                seed: 0,
                max_iters: 0,
                tol: 0.0,
                iterations: 0,
                inertia_history: Vec::new(),
                final_inertia: f64::NAN,
            },
            mfcc: None,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument("model needs k >= 1 and dim >= 1".into()));
        }
        if self.centroids.len() != self.k * self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} centroid values, found {}",
                self.k * self.feature_dim,
                self.centroids.len()
            )));
        }
        if self.centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("centroids contain NaN or infinity".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.feature_dim..(c + 1) * self.feature_dim]
    }

    pub fn to_json(&self) -> Result<String> {
        // NaN inertia (hand-built models) is not representable in JSON
        let mut m = self.clone();
        if !m.training.final_inertia.is_finite() {
            m.training.final_inertia = -1.0;
        }
        Ok(serde_json::to_string_pretty(&m)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: KMeansModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution as _, Normal};

    fn clouds(seed: u64) -> Features {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        for i in 0..200 {
            let centre = if i % 2 == 0 { [0.0, 0.0] } else { [10.0, -5.0] };
            rows.push(vec![centre[0] + noise.sample(&mut rng), centre[1] + noise.sample(&mut rng)]);
        }
        Features::from_rows(2, rows).unwrap()
    }

    fn mean_of(f: &Features, parity: usize) -> Vec<f64> {
        let rows: Vec<&[f64]> = (0..f.rows()).filter(|i| i % 2 == parity).map(|i| f.row(i)).collect();
        (0..2)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect()
    }

    #[test]
    fn separable_clouds_recover_means() {
        let f = clouds(1);
        let m = train_kmeans(&f, 2, 7, 100, 1e-9).unwrap();
        let (a, b) = (mean_of(&f, 0), mean_of(&f, 1));
        let (c0, c1) = (m.centroid(0).to_vec(), m.centroid(1).to_vec());
        let matches = |c: &[f64], t: &[f64]| sq_dist(c, t) < 1e-18;
        assert!(
            (matches(&c0, &a) && matches(&c1, &b)) || (matches(&c0, &b) && matches(&c1, &a)),
            "{c0:?} {c1:?} vs {a:?} {b:?}"
        );
    }

    #[test]
    fn k_equals_rows_gives_zero_inertia() {
        let f = Features::from_rows(2, vec![vec![0.0, 1.0], vec![3.0, 1.0], vec![-2.0, 5.0]]).unwrap();
        let m = train_kmeans(&f, 3, 0, 10, 1e-6).unwrap();
        assert_eq!(m.training.final_inertia, 0.0);
        let mut labels = apply_kmeans(&m, &f).unwrap();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_points_with_k_equal_rows() {
        let f = Features::from_rows(1, vec![vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let m = train_kmeans(&f, 3, 0, 10, 1e-6).unwrap();
        assert_eq!(m.training.final_inertia, 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = clouds(3);
        let a = train_kmeans(&f, 5, 42, 50, 1e-6).unwrap();
        let b = train_kmeans(&f, 5, 42, 50, 1e-6).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn training_errors() {
        let f = Features::from_rows(1, vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(train_kmeans(&f, 3, 0, 10, 1e-6).is_err());
        assert!(train_kmeans(&f, 0, 0, 10, 1e-6).is_err());
        let f = Features::from_rows(1, vec![vec![f64::NAN], vec![2.0]]).unwrap();
        assert!(train_kmeans(&f, 1, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn apply_exact_and_tie_rules() {
        let m = KMeansModel::from_centroids(
            5,
            1,
            vec![100.0, -1.0, 50.0, 7.0, 1.0],
        )
        .unwrap();
        let f = Features::from_rows(1, vec![vec![7.0], vec![0.0]]).unwrap();
        // 0.0 is equidistant from centroids 1 (-1) and 4 (+1)
        assert_eq!(apply_kmeans(&m, &f).unwrap(), vec![3, 1]);
        assert!(apply_kmeans(&m, &Features::empty(1)).unwrap().is_empty());
        let wrong = Features::from_rows(2, vec![vec![0.0, 0.0]]).unwrap();
        assert!(apply_kmeans(&m, &wrong).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = train_kmeans(&clouds(5), 3, 9, 20, 1e-8).unwrap();
        let back = KMeansModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(KMeansModel::from_json(r#"{"k":2,"feature_dim":1,"centroids":[1.0],"training":{"seed":0,"max_iters":0,"tol":0,"iterations":0,"inertia_history":[],"final_inertia":0},"mfcc":null}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn inertia_monotone_and_consistent(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 8..60),
            k in 1usize..6,
            seed in 0u64..1000,
        ) {
            let f = Features::from_rows(3, pts).unwrap();
            let m = train_kmeans(&f, k, seed, 30, 1e-12).unwrap();
            let h = &m.training.inertia_history;
            for w in h.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
            }
            // brute-force nearest-centroid assignment
            let mut inertia = 0.0;
            let labels = apply_kmeans(&m, &f).unwrap();
            for (i, &label) in labels.iter().enumerate() {
                let d: Vec<f64> = (0..k).map(|c| sq_dist(f.row(i), m.centroid(c))).collect();
                let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
                let first = d.iter().position(|&x| x == best).unwrap();
                prop_assert_eq!(label as usize, first);
                inertia += best;
            }
            prop_assert!((inertia - m.training.final_inertia).abs() <= 1e-6 * inertia.max(1e-12));
        }
    }
}
