//! Discrete-label corpora and audio manifests.
//!
//! Label-corpus file format (UTF-8, LF):
//!
//! ```text
//! #K=500
//! utt0001\t3.52\t12 12 7 499 0
//! utt0002\t\t
//! ```
//!
//! Each record is `<id>\t<duration_s>\t<space-separated labels>`. The duration
//! field may be empty (unknown), and so may the label field. Labels are
//! 0-based and must be `< K`. An optional `#source=<tag>` line directly after
//! the header carries the corpus provenance tag.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SOURCE_PREFIX: &str = "#source=";

/// One utterance as a sequence of cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub id: String,
    /// Length in seconds; `None` when the source carried no duration.
    pub duration_s: Option<f64>,
    pub labels: Vec<u32>,
}

impl LabelSequence {
    pub fn new(id: impl Into<String>, duration_s: Option<f64>, labels: Vec<u32>) -> Self {
        Self {
            id: id.into(),
            duration_s,
            labels,
        }
    }

    /// Duration in seconds, with a missing duration read as 0.
    pub fn duration(&self) -> f64 {
        self.duration_s.unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A set of utterances sharing one label alphabet `[0, alphabet_size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCorpus {
    alphabet_size: u32,
    sequences: Vec<LabelSequence>,
    source_tag: String,
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::InvalidArgument("empty utterance id".into()));
    }
    if id.starts_with('#') || id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!(
            "utterance id {id:?} must not start with '#' or contain tabs/newlines"
        )));
    }
    Ok(())
}

impl LabelCorpus {
    pub fn new(
        alphabet_size: u32,
        sequences: Vec<LabelSequence>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if alphabet_size == 0 {
            return Err(Error::InvalidArgument("alphabet size must be positive".into()));
        }
        let source_tag = source_tag.into();
        if source_tag.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument("source tag must be a single line".into()));
        }
        let mut seen = HashSet::with_capacity(sequences.len());
        for seq in &sequences {
            validate_id(&seq.id)?;
            if !seen.insert(seq.id.as_str()) {
                return Err(Error::DuplicateId(seq.id.clone()));
            }
            if let Some(d) = seq.duration_s {
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "utterance {:?}: duration {d} must be finite and non-negative",
                        seq.id
                    )));
                }
            }
            if let Some(&label) = seq.labels.iter().find(|&&l| l >= alphabet_size) {
                return Err(Error::LabelOutOfRange {
                    id: seq.id.clone(),
                    label,
                    alphabet_size,
                });
            }
        }
        Ok(Self {
            alphabet_size,
            sequences,
            source_tag,
        })
    }

    pub fn alphabet_size(&self) -> u32 {
        self.alphabet_size
    }

    pub fn sequences(&self) -> &[LabelSequence] {
        &self.sequences
    }

    pub fn into_sequences(self) -> Vec<LabelSequence> {
        self.sequences
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(LabelSequence::len).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.sequences.iter().map(LabelSequence::duration).sum()
    }

    /// True when every utterance carries a duration.
    pub fn has_durations(&self) -> bool {
        self.sequences.iter().all(|s| s.duration_s.is_some())
    }

    pub fn get(&self, id: &str) -> Option<&LabelSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Sub-corpus of the given utterances, in the order given.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<LabelCorpus> {
        let mut out = Vec::new();
        for id in ids {
            let seq = self
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown utterance id {id:?}")))?;
            out.push(seq.clone());
        }
        LabelCorpus::new(self.alphabet_size, out, self.source_tag.clone())
    }
}

/// Ascending label count, ties by ascending id.
pub fn sort_by_length(corpus: &LabelCorpus) -> LabelCorpus {
    let mut sequences = corpus.sequences.clone();
    sequences.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.id.cmp(&b.id)));
    LabelCorpus {
        alphabet_size: corpus.alphabet_size,
        sequences,
        source_tag: corpus.source_tag.clone(),
    }
}

pub fn parse_label_corpus(text: &str, path: &Path) -> Result<LabelCorpus> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n').enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines
        .next()
        .filter(|(_, l)| !l.is_empty())
        .ok_or_else(|| perr(1, "missing `#K=<int>` header".into()))?;
    let alphabet_size: u32 = header
        .strip_prefix("#K=")
        .and_then(|v| v.parse().ok())
        .filter(|&k| k > 0)
        .ok_or_else(|| perr(1, format!("bad header {header:?}, expected `#K=<positive int>`")))?;

    let mut source_tag = String::new();
    let mut sequences = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        if lineno == 2 {
            if let Some(tag) = line.strip_prefix(SOURCE_PREFIX) {
                source_tag = tag.to_string();
                continue;
            }
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(dur), Some(labels), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(perr(lineno, "expected 3 tab-separated fields".into()));
        };
        validate_id(id).map_err(|e| perr(lineno, e.to_string()))?;
        let duration_s = if dur.is_empty() {
            None
        } else {
            let d: f64 = dur
                .parse()
                .map_err(|_| perr(lineno, format!("bad duration {dur:?}")))?;
            if !(d.is_finite() && d >= 0.0) {
                return Err(perr(lineno, format!("duration {dur:?} must be finite and >= 0")));
            }
            Some(d)
        };
        let labels = if labels.is_empty() {
            Vec::new()
        } else {
            labels
                .split(' ')
                .map(|tok| {
                    tok.parse::<u32>()
                        .map_err(|_| perr(lineno, format!("bad label {tok:?}")))
                })
                .collect::<Result<Vec<u32>>>()?
        };
        if let Some(&label) = labels.iter().find(|&&l| l >= alphabet_size) {
            return Err(Error::LabelOutOfRange {
                id: id.to_string(),
                label,
                alphabet_size,
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        sequences.push(LabelSequence::new(id, duration_s, labels));
    }
    LabelCorpus::new(alphabet_size, sequences, source_tag)
}

pub fn format_label_corpus(corpus: &LabelCorpus) -> String {
    let mut out = String::with_capacity(corpus.total_frames() * 4 + 64);
    writeln!(out, "#K={}", corpus.alphabet_size).unwrap();
    if !corpus.source_tag.is_empty() {
        writeln!(out, "{SOURCE_PREFIX}{}", corpus.source_tag).unwrap();
    }
    for seq in &corpus.sequences {
        out.push_str(&seq.id);
        out.push('\t');
        if let Some(d) = seq.duration_s {
            write!(out, "{d}").unwrap();
        }
        out.push('\t');
        for (i, l) in seq.labels.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{l}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn load_label_corpus(path: impl AsRef<Path>) -> Result<LabelCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_corpus(&text, path)
}

pub fn save_label_corpus(corpus: &LabelCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_label_corpus(corpus)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: PathBuf,
    pub duration_s: Option<f64>,
}

/// List of audio files to discretize, one `<id>\t<path>[\t<duration_s>]` per line.
///
/// Relative paths are resolved against the manifest's directory on load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AudioManifest {
    entries: Vec<ManifestEntry>,
}

impl AudioManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            validate_id(&e.id)?;
            if e.audio_path.as_os_str().is_empty() {
                return Err(Error::InvalidArgument(format!("entry {:?} has an empty path", e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(perr("expected `<id>\\t<path>[\\t<duration_s>]`".into()));
            }
            let audio = PathBuf::from(fields[1]);
            let audio_path = if audio.is_relative() && !fields[1].is_empty() {
                base.join(audio)
            } else {
                audio
            };
            let duration_s = match fields.get(2) {
                Some(d) if !d.is_empty() => {
                    Some(d.parse().map_err(|_| perr(format!("bad duration {d:?}")))?)
                }
                _ => None,
            };
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                audio_path,
                duration_s,
            });
        }
        Self::new(entries)
    }
}
