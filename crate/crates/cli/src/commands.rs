//! `cim` subcommands. Machine output goes to stdout (or `--out`) as JSON;
//! diagnostics go to stderr.

use std::fs;
use std::io::{self, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cim_core::correlation::read_samples_jsonl;
use cim_core::vecfile;
use cim_core::{
    ingest_corpus, normalize, run_correlation, score_group, top_k, CimError, Metric, RewardParams,
    UnitVector, CORPUS_FORMAT_VERSION, DEFAULT_BIN_SIZE,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::fixtures::{write_fixture, FixtureSpec};
use crate::samples::score_corpus;
use crate::service::{router, AppState};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (corpus format v1)");

#[derive(Debug, Parser)]
#[command(name = "cim", version = VERSION, about = "Retrieval-grounded caption reward engine")]
pub struct Cli {
    /// Seed for fixture generation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Suppress diagnostics on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and print its count, dims, and checksum.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Validate only (ingest never writes anything).
        #[arg(long)]
        check: bool,
    },
    /// Print the top-K support set for a caption embedding.
    Retrieve {
        #[arg(long)]
        corpus: PathBuf,
        /// `.vec` file; row 0 is the query.
        #[arg(long)]
        query_vec: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        exclude_id: Option<String>,
    },
    /// Score a group of candidate caption embeddings for one source image.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        /// `.vec` file; row 0 is the source image embedding.
        #[arg(long)]
        source_vec: PathBuf,
        /// `.vec` file with one caption embedding per row (G >= 2).
        #[arg(long)]
        caption_vecs: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        source_id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every labeled corpus record against the corpus and write
    /// scored samples as JSONL.
    ScoreCorpus {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Binned correlation between a metric and logit accuracy.
    Correlate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "reward", value_parser = parse_metric)]
        metric: Metric,
        #[arg(long, default_value_t = DEFAULT_BIN_SIZE)]
        bin_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the scoring API over HTTP.
    Serve {
        #[arg(long, env = "CIM_CORPUS")]
        corpus: PathBuf,
        #[arg(long, env = "CIM_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Generate a seeded synthetic corpus plus its scored samples.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        d_img: usize,
        #[arg(long, default_value_t = 48)]
        d_txt: usize,
        #[arg(long, default_value_t = 5)]
        quality_levels: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long)]
    pub exclude_self: bool,
}

impl ParamArgs {
    pub fn params(&self) -> RewardParams {
        RewardParams {
            k: self.k,
            beta: self.beta,
            decay_base: self.decay,
            exclude_self: self.exclude_self,
        }
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: CimError| e.to_string())
}

/// Process exit status for an error.
pub fn exit_code(e: &CimError) -> i32 {
    match e {
        CimError::Format(_)
        | CimError::DuplicateId(_)
        | CimError::CountMismatch { .. }
        | CimError::ZeroVector { .. }
        | CimError::Io { .. }
        | CimError::Json(_) => 3,
        _ => 4,
    }
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub count: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub checksum: String,
    pub format_version: u32,
}

#[derive(Debug, Serialize)]
pub struct ScoreOutput {
    pub corpus_checksum: String,
    #[serde(flatten)]
    pub result: cim_core::GroupScore,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CimError> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    match out {
        Some(path) => fs::write(path, json).map_err(|e| io_err(path, e)),
        None => io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn io_err(path: &Path, source: io::Error) -> CimError {
    CimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_row(path: &Path, row: usize) -> Result<UnitVector, CimError> {
    let file = vecfile::read(path)?;
    let values = file.row(row).ok_or_else(|| {
        CimError::Format(format!(
            "{}: has {} rows, need row {row}",
            path.display(),
            file.count
        ))
    })?;
    normalize(values).map_err(|e| with_row(e, row))
}

fn with_row(e: CimError, row: usize) -> CimError {
    match e {
        CimError::ZeroVector { .. } => CimError::ZeroVector { row: Some(row) },
        other => other,
    }
}

pub fn run(cli: Cli) -> Result<(), CimError> {
    let note = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match cli.command {
        Command::Ingest { corpus, check: _ } => {
            let index = ingest_corpus(&corpus)?;
            note(format!(
                "ingested {} records from {}",
                index.len(),
                corpus.display()
            ));
            emit(
                &IngestSummary {
                    count: index.len(),
                    image_dim: index.image_dim(),
                    text_dim: index.text_dim(),
                    checksum: index.checksum().to_owned(),
                    format_version: CORPUS_FORMAT_VERSION,
                },
                None,
            )
        }
        Command::Retrieve {
            corpus,
            query_vec,
            k,
            exclude_id,
        } => {
            let index = ingest_corpus(&corpus)?;
            let query = read_row(&query_vec, 0)?;
            let set = top_k(&query, &index, k, exclude_id.as_deref())?;
            if set.truncated {
                note(format!("only {} eligible rows for k={k}", set.len()));
            }
            emit(&set, None)
        }
        Command::Score {
            corpus,
            source_vec,
            caption_vecs,
            params,
            source_id,
            out,
        } => {
            let index = ingest_corpus(&corpus)?;
            let source = read_row(&source_vec, 0)?;
            let captions = vecfile::read(&caption_vecs)?;
            let captions = captions
                .rows()
                .enumerate()
                .map(|(i, r)| normalize(r).map_err(|e| with_row(e, i)))
                .collect::<Result<Vec<_>, _>>()?;
            let result = score_group(
                &source,
                &captions,
                &index,
                &params.params(),
                source_id.as_deref(),
            )?;
            emit(
                &ScoreOutput {
                    corpus_checksum: index.checksum().to_owned(),
                    result,
                },
                out.as_deref(),
            )
        }
        Command::ScoreCorpus {
            corpus,
            params,
            out,
        } => {
            let index = ingest_corpus(&corpus)?;
            let samples = score_corpus(&index, &params.params())?;
            note(format!("scored {} labeled records", samples.len()));
            let mut buf = Vec::new();
            cim_core::write_samples_jsonl(&mut buf, &samples)?;
            match out {
                Some(path) => fs::write(&path, buf).map_err(|e| io_err(&path, e)),
                None => io::stdout()
                    .write_all(&buf)
                    .map_err(|e| io_err(Path::new("<stdout>"), e)),
            }
        }
        Command::Correlate {
            samples,
            metric,
            bin_size,
            out,
            csv,
        } => {
            let file = fs::File::open(&samples).map_err(|e| io_err(&samples, e))?;
            let rows = read_samples_jsonl(BufReader::new(file))?;
            let report = run_correlation(&rows, metric, bin_size)?;
            note(format!(
                "{} bins of {bin_size}, {} dropped, r = {:.6}",
                report.bins.len(),
                report.dropped_samples,
                report.pearson_r
            ));
            if let Some(path) = csv {
                fs::write(&path, report.to_csv()).map_err(|e| io_err(&path, e))?;
            }
            emit(&report, out.as_deref())
        }
        Command::Serve {
            corpus,
            bind,
            params,
        } => {
            let defaults = params.params();
            defaults.validate()?;
            serve(corpus, bind, defaults, cli.quiet)
        }
        Command::GenFixtures {
            out,
            n,
            d_img,
            d_txt,
            quality_levels,
        } => {
            let spec = FixtureSpec {
                seed: cli.seed,
                n,
                image_dim: d_img,
                text_dim: d_txt,
                quality_levels,
            };
            let summary = write_fixture(&spec, &out, &RewardParams::default())?;
            note(format!(
                "wrote {} records to {}",
                summary.count,
                out.display()
            ));
            emit(&summary, None)
        }
    }
}

fn serve(
    corpus: PathBuf,
    bind: SocketAddr,
    defaults: RewardParams,
    quiet: bool,
) -> Result<(), CimError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| io_err(Path::new("<runtime>"), e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| io_err(Path::new(&bind.to_string()), e))?;
        let local = listener
            .local_addr()
            .map_err(|e| io_err(Path::new(&bind.to_string()), e))?;
        let state = Arc::new(AppState::empty(defaults));
        let app = router(state.clone());
        if !quiet {
            eprintln!("listening on {local}");
        }
        let server = tokio::spawn(async move { axum::serve(listener, app).await });

        // The listener is up first so health checks see 503 while loading.
        let loaded = tokio::task::spawn_blocking(move || ingest_corpus(&corpus))
            .await
            .map_err(|e| CimError::Format(format!("corpus loader panicked: {e}")))??;
        if !quiet {
            eprintln!(
                "corpus loaded: {} records, checksum {}",
                loaded.len(),
                loaded.checksum()
            );
        }
        state.install(loaded);

        tokio::select! {
            res = server => match res {
                Ok(Ok(())) => Ok(()),
                Ok(Err(e)) => Err(io_err(Path::new("<server>"), e)),
                Err(e) => Err(CimError::Format(format!("server task failed: {e}"))),
            },
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}
