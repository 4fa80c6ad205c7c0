//! Built-in hidden-unit discovery: MFCC frames clustered by K-means.
//!
//! Labels from an external self-supervised model do not go through here; they
//! enter the pipeline as label-corpus files.

mod kmeans;
mod mfcc;

use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::corpus::{AudioManifest, LabelCorpus, LabelSequence, ManifestEntry};
use crate::error::{Error, Result};

pub use kmeans::{apply_kmeans, train_kmeans, KMeansModel, TrainingInfo};
pub use mfcc::{compute_mfcc, MfccConfig, LOG_FLOOR};

/// Row-major `rows x dim` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::InvalidArgument(format!("row of length {} in dim {dim} matrix", r.len())));
            }
            data.extend(r);
        }
        Self::new(dim, data)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn append(&mut self, other: &Features) -> Result<()> {
        if other.rows() > 0 && other.dim != self.dim {
            return Err(Error::Mismatch(format!("dim {} vs {}", self.dim, other.dim)));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Keep only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Features {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Features { dim: self.dim, data }
    }
}

/// Mono 16-bit PCM samples scaled to `[-1, 1)`, and the sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let path = path.as_ref();
    let audio_err = |message: String| Error::Audio {
        id: path.display().to_string(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(format!("expected mono audio, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err("expected 16-bit integer PCM".into()));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| audio_err(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[i16], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| Error::Audio {
        id: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        w.write_sample(s).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}

/// MFCC features of one manifest entry plus its sample count.
pub fn entry_features(entry: &ManifestEntry, config: &MfccConfig) -> Result<(Features, usize)> {
    let with_id = |e: Error| match e {
        Error::Audio { message, .. } | Error::InvalidArgument(message) => Error::Audio {
            id: entry.id.clone(),
            message,
        },
        other => other,
    };
    let (samples, sr) = read_wav(&entry.audio_path).map_err(with_id)?;
    let feats = compute_mfcc(&samples, sr, config).map_err(with_id)?;
    Ok((feats, samples.len()))
}

/// One label sequence per manifest entry, in manifest order.
///
/// With `skip_bad`, entries whose audio cannot be read or is shorter than a
/// frame are logged and left out; otherwise the first failure (in manifest
/// order) aborts the run.
pub fn discretize_manifest(
    manifest: &AudioManifest,
    model: &KMeansModel,
    config: &MfccConfig,
    skip_bad: bool,
) -> Result<LabelCorpus> {
    config.validate()?;
    if config.feature_dim() != model.feature_dim() {
        return Err(Error::Mismatch(format!(
            "mfcc config yields dim {} but model expects {}",
            config.feature_dim(),
            model.feature_dim()
        )));
    }
    // AudioManifest guarantees unique ids, so duplicates fail before any read.
    let results: Vec<Result<LabelSequence>> = manifest
        .entries()
        .par_iter()
        .map(|entry| {
            let (feats, n) = entry_features(entry, config)?;
            let labels = apply_kmeans(model, &feats)?;
            let duration = n as f64 / config.sample_rate_hz as f64;
            Ok(LabelSequence::new(entry.id.clone(), Some(duration), labels))
        })
        .collect();

    let mut sequences = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(seq) => sequences.push(seq),
            Err(e @ Error::Audio { .. }) if skip_bad => warn!("skipping: {e}"),
            Err(e) => return Err(e),
        }
    }
    LabelCorpus::new(model.k() as u32, sequences, "mfcc-kmeans")
}
