//! The `scd` command-line tool.
//!
//! One subcommand per pipeline stage, so label files from an external model
//! can stand in for `discretize`. Every output carries a JSON echo of the
//! [`RunConfig`] that produced it: inline as a `#config=` header where the
//! format has header lines, otherwise in a `<output>.run.json` sidecar.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_label_corpus, save_label_corpus, AudioManifest};
use crate::discretizer::{discretize_manifest, entry_features, train_kmeans, Features, KMeansModel, MfccConfig};
use crate::divergence::scd;
use crate::error::{Error, Result};
use crate::ngram::{count_ngrams, format_stats_dump, Distribution};
use crate::selection::{format_report, select, Budget, SelectionConfig, Strategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Header prefix of the config echo in text outputs.
pub const CONFIG_PREFIX: &str = "#config=";

/// Everything needed to reproduce a run.
///
/// The worker count is deliberately absent: results do not depend on it, and
/// leaving it out keeps outputs byte-identical across `--threads` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandConfig,
    pub verbosity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandConfig {
    TrainKmeans {
        manifest: PathBuf,
        k: usize,
        seed: u64,
        max_iters: usize,
        tol: f64,
        max_frames: Option<usize>,
        skip_bad: bool,
        mfcc: MfccConfig,
        output: PathBuf,
    },
    Discretize {
        manifest: PathBuf,
        model: PathBuf,
        skip_bad: bool,
        output: PathBuf,
    },
    NgramStats {
        labels: PathBuf,
        order: usize,
        alpha: f64,
        prune_min_count: u64,
        output: Option<PathBuf>,
    },
    Scd {
        x: PathBuf,
        y: PathBuf,
        order: usize,
        alpha: f64,
        prune_min_count: u64,
        output: Option<PathBuf>,
    },
    Select {
        universal: PathBuf,
        query: Option<PathBuf>,
        strategy: Strategy,
        selection: SelectionConfig,
        output: PathBuf,
    },
}

impl RunConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn header_line(&self) -> Result<String> {
        Ok(format!("{CONFIG_PREFIX}{}", self.to_json()?))
    }

    /// Recover the echo from an output file: either a sidecar holding bare
    /// JSON or a text format with a `#config=` header line.
    pub fn from_output(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        let line = text
            .lines()
            .find_map(|l| l.strip_prefix(CONFIG_PREFIX))
            .ok_or_else(|| Error::InvalidArgument("no config echo found".into()))?;
        Ok(serde_json::from_str(line)?)
    }
}

/// Path of the config sidecar written next to `output`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// Path of the id worklist written next to a selection report.
pub fn ids_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

#[derive(Debug, Parser)]
#[command(name = "scd", version, about = "Corpus-divergence driven speech data selection")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a K-means codebook on MFCC frames pooled over a manifest.
    TrainKmeans(TrainKmeansArgs),
    /// Turn audio into a label corpus with a trained codebook.
    Discretize(DiscretizeArgs),
    /// Dump N-gram counts of a label corpus.
    NgramStats(NgramStatsArgs),
    /// Divergence KL(P_X || P_Y) between two label corpora, in nats.
    Scd(ScdArgs),
    /// Select a subset of the universal corpus.
    Select(SelectArgs),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and >= 0"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SmoothingArgs {
    /// N-gram order.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub order: u64,
    /// Additive smoothing constant.
    #[arg(long, default_value_t = 0.5, value_parser = non_negative)]
    pub alpha: f64,
    /// Drop grams seen fewer times than this.
    #[arg(long, default_value_t = 0)]
    pub prune_min_count: u64,
}

#[derive(Debug, Args)]
pub struct TrainKmeansArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Stop once no centroid moves further than this.
    #[arg(long, default_value_t = 1e-4, value_parser = non_negative)]
    pub tol: f64,
    /// Train on a seeded uniform sample of at most this many frames.
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Warn about unreadable audio instead of failing.
    #[arg(long)]
    pub skip_bad: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiscretizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub skip_bad: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct NgramStatsArgs {
    pub labels: PathBuf,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Write here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScdArgs {
    /// Reference corpus (first KL argument).
    pub x: PathBuf,
    /// Candidate corpus (second KL argument).
    pub y: PathBuf,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Also write the result, with config echo, to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub universal: PathBuf,
    /// Required by every strategy except random.
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long, default_value = "greedy-scd", value_parser = ["greedy-scd", "random", "contrastive", "oracle"])]
    pub strategy: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), conflicts_with = "budget_seconds", required_unless_present = "budget_seconds")]
    pub budget_count: Option<u64>,
    /// Duration budget in seconds (experimental).
    #[arg(long, value_parser = non_negative)]
    pub budget_seconds: Option<f64>,
    /// Interpolation weight of the query distribution.
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    pub lambda: f64,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub oracle_max_universe: usize,
    #[arg(long, default_value_t = 6)]
    pub oracle_max_budget: usize,
    #[arg(long)]
    pub output: PathBuf,
}

impl Cli {
    pub fn run_config(&self) -> RunConfig {
        let command = match &self.command {
            Command::TrainKmeans(a) => CommandConfig::TrainKmeans {
                manifest: a.manifest.clone(),
                k: a.k as usize,
                seed: a.seed,
                max_iters: a.max_iters,
                tol: a.tol,
                max_frames: a.max_frames,
                skip_bad: a.skip_bad,
                mfcc: MfccConfig::default(),
                output: a.output.clone(),
            },
            Command::Discretize(a) => CommandConfig::Discretize {
                manifest: a.manifest.clone(),
                model: a.model.clone(),
                skip_bad: a.skip_bad,
                output: a.output.clone(),
            },
            Command::NgramStats(a) => CommandConfig::NgramStats {
                labels: a.labels.clone(),
                order: a.smoothing.order as usize,
                alpha: a.smoothing.alpha,
                prune_min_count: a.smoothing.prune_min_count,
                output: a.output.clone(),
            },
            Command::Scd(a) => CommandConfig::Scd {
                x: a.x.clone(),
                y: a.y.clone(),
                order: a.smoothing.order as usize,
                alpha: a.smoothing.alpha,
                prune_min_count: a.smoothing.prune_min_count,
                output: a.output.clone(),
            },
            Command::Select(a) => CommandConfig::Select {
                universal: a.universal.clone(),
                query: a.query.clone(),
                strategy: a.strategy.parse().expect("clap restricts strategy names"),
                selection: SelectionConfig {
                    budget: match (a.budget_count, a.budget_seconds) {
                        (Some(c), _) => Budget::Count(c as usize),
                        (None, Some(s)) => Budget::Seconds(s),
                        (None, None) => unreachable!("clap requires one budget"),
                    },
                    order: a.smoothing.order as usize,
                    lambda: a.lambda,
                    alpha: a.smoothing.alpha,
                    prune_min_count: a.smoothing.prune_min_count,
                    seed: a.seed,
                    oracle_max_universe: a.oracle_max_universe,
                    oracle_max_budget: a.oracle_max_budget,
                },
                output: a.output.clone(),
            },
        };
        RunConfig {
            command,
            verbosity: self.verbose,
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_sidecar(output: &Path, config: &RunConfig) -> Result<()> {
    write(&sidecar_path(output), serde_json::to_string_pretty(config)? + "\n")
}

/// Execute a parsed configuration. Text meant for the terminal is returned
/// rather than printed.
pub fn execute(config: &RunConfig) -> Result<String> {
    match &config.command {
        CommandConfig::TrainKmeans {
            manifest,
            k,
            seed,
            max_iters,
            tol,
            max_frames,
            skip_bad,
            mfcc,
            output,
        } => {
            if *max_frames == Some(0) {
                return Err(Error::InvalidArgument("--max-frames must be positive".into()));
            }
            let manifest = AudioManifest::load(manifest)?;
            let per_entry: Vec<Result<Features>> = manifest
                .entries()
                .par_iter()
                .map(|e| entry_features(e, mfcc).map(|(f, _)| f))
                .collect();
            let mut pooled = Features::empty(mfcc.feature_dim());
            for r in per_entry {
                match r {
                    Ok(f) => pooled.append(&f)?,
                    Err(e @ Error::Audio { .. }) if *skip_bad => log::warn!("skipping: {e}"),
                    Err(e) => return Err(e),
                }
            }
            if let Some(m) = *max_frames {
                if m < pooled.rows() {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    // separate stream from the one k-means++ uses
                    rng.set_stream(1);
                    let mut rows = rand::seq::index::sample(&mut rng, pooled.rows(), m).into_vec();
                    rows.sort_unstable();
                    pooled = pooled.select_rows(&rows);
                }
            }
            log::info!("training k={k} on {} frames", pooled.rows());
            let mut model = train_kmeans(&pooled, *k, *seed, *max_iters, *tol)?;
            model.mfcc = Some(*mfcc);
            model.save(output)?;
            write_sidecar(output, config)?;
            Ok(format!(
                "trained {k} centroids on {} frames in {} iterations, inertia {}\n",
                pooled.rows(),
                model.training.iterations,
                model.training.final_inertia
            ))
        }
        CommandConfig::Discretize {
            manifest,
            model,
            skip_bad,
            output,
        } => {
            let manifest = AudioManifest::load(manifest)?;
            let model = KMeansModel::load(model)?;
            let mfcc = model.mfcc.unwrap_or_default();
            let corpus = discretize_manifest(&manifest, &model, &mfcc, *skip_bad)?;
            save_label_corpus(&corpus, output)?;
            write_sidecar(output, config)?;
            Ok(format!("wrote {} utterances\n", corpus.len()))
        }
        CommandConfig::NgramStats {
            labels,
            order,
            alpha,
            prune_min_count,
            output,
        } => {
            let corpus = load_label_corpus(labels)?;
            let stats = count_ngrams(&corpus, *order, *alpha)?.prune(*prune_min_count);
            let dump = format_stats_dump(&stats, &[config.header_line()?]);
            match output {
                Some(path) => {
                    write(path, dump)?;
                    Ok(format!(
                        "{} distinct grams, {} total\n",
                        stats.counts().len(),
                        stats.total()
                    ))
                }
                None => Ok(dump),
            }
        }
        CommandConfig::Scd {
            x,
            y,
            order,
            alpha,
            prune_min_count,
            output,
        } => {
            let (cx, cy) = (load_label_corpus(x)?, load_label_corpus(y)?);
            if cx.alphabet_size() != cy.alphabet_size() {
                return Err(Error::Mismatch(format!(
                    "{} has alphabet {} but {} has {}",
                    x.display(),
                    cx.alphabet_size(),
                    y.display(),
                    cy.alphabet_size()
                )));
            }
            let dist = |c| -> Result<Distribution> {
                Distribution::from_stats(&count_ngrams(c, *order, *alpha)?.prune(*prune_min_count))
            };
            let value = scd(&dist(&cx)?, &dist(&cy)?)?;
            let text = format!("{:.6}\nscd_nats={}\n", value.nats, value.nats);
            if let Some(path) = output {
                write(path, format!("{}\n{text}", config.header_line()?))?;
            }
            Ok(text)
        }
        CommandConfig::Select {
            universal,
            query,
            strategy,
            selection,
            output,
        } => {
            let u = load_label_corpus(universal)?;
            let q = query.as_ref().map(load_label_corpus).transpose()?;
            let result = select(*strategy, &u, q.as_ref(), selection)?;
            let report = format_report(&result, &[config.header_line()?])?;
            write(output, report)?;
            let ids: String = result.selected_ids.iter().map(|id| format!("{id}\n")).collect();
            write(&ids_path(output), ids)?;
            Ok(format!(
                "selected {} utterances, final scd {} nats\n",
                result.selected_ids.len(),
                result.final_scd.nats
            ))
        }
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let config = cli.run_config();
    let outcome = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
            .and_then(|pool| pool.install(|| execute(&config))),
        None => execute(&config),
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("scd").chain(args.iter().copied()))
    }

    #[test]
    fn defaults() {
        let cli = parse(&["select", "--universal", "u", "--query", "q", "--budget-count", "3", "--output", "o"]).unwrap();
        let RunConfig {
            command: CommandConfig::Select { strategy, selection, .. },
            ..
        } = cli.run_config()
        else {
            panic!()
        };
        assert_eq!(strategy, Strategy::GreedyScd);
        assert_eq!(selection, SelectionConfig::with_count(3));
        let cli = parse(&["train-kmeans", "--manifest", "m", "--output", "o"]).unwrap();
        let RunConfig {
            command: CommandConfig::TrainKmeans { k, .. },
            ..
        } = cli.run_config()
        else {
            panic!()
        };
        assert_eq!(k, 500);
    }

    #[test]
    fn usage_errors() {
        let base = ["select", "--universal", "u", "--query", "q", "--output", "o"];
        let with = |extra: &[&str]| {
            let mut v = base.to_vec();
            v.extend_from_slice(extra);
            parse(&v)
        };
        assert!(with(&["--budget-count", "2", "--lambda", "1.5"]).is_err());
        assert!(with(&[]).is_err());
        assert!(with(&["--budget-count", "2", "--budget-seconds", "3"]).is_err());
        assert!(with(&["--budget-count", "0"]).is_err());
        assert!(with(&["--budget-count", "2", "--strategy", "best"]).is_err());
        assert!(with(&["--budget-count", "2", "--alpha", "-1"]).is_err());
        assert!(with(&["--budget-count", "2", "--threads", "0"]).is_err());
        assert!(with(&["--budget-seconds", "2.5", "--lambda", "1"]).is_ok());
    }

    #[test]
    fn config_echo_round_trips() {
        let cli = parse(&[
            "-v", "select", "--universal", "u.txt", "--budget-seconds", "0.1", "--lambda", "0.3", "--alpha",
            "0.1", "--order", "2", "--strategy", "random", "--seed", "18446744073709551615", "--output", "o",
        ])
        .unwrap();
        let cfg = cli.run_config();
        assert_eq!(RunConfig::from_output(&cfg.header_line().unwrap()).unwrap(), cfg);
        assert_eq!(
            RunConfig::from_output(&serde_json::to_string_pretty(&cfg).unwrap()).unwrap(),
            cfg
        );
        assert!(RunConfig::from_output("#K=3\n").is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("a/b.txt")), PathBuf::from("a/b.txt.run.json"));
        assert_eq!(ids_path(Path::new("r.tsv")), PathBuf::from("r.tsv.ids"));
    }
}
