//! The `structret` command line.
//!
//! Every subcommand writes a JSON run manifest (command, resolved flags,
//! seed, SHA-256 of every input file, toolkit version) before doing any
//! work. Exit codes: 0 success, 2 input or usage errors, 3 non-finite loss,
//! 4 model/index mismatch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{build_training_file, make_synthetic_corpus, read_corpus, read_queries, read_training_file};
use crate::encoder::{EncoderConfig, EncoderModel, DEFAULT_DIM, DEFAULT_RESERVED, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, DEFAULT_CUTOFFS};
use crate::objectives::{format_loss_curve, train, Strategy, TrainConfig};
use crate::pipeline::{ablate_mask_ratio, format_ablation_tsv};
use crate::retrieval::{build_index, export_embeddings, search_all, search_all_chunked, VectorIndex, DEFAULT_CHUNK_LEN, DEFAULT_K};
use crate::structml::Variant;
use crate::trec::{read_qrels, write_run};

#[derive(Debug, Parser)]
#[command(name = "structret", version, about = "Structure-aware dense retrieval over HTML documents")]
pub struct Cli {
    /// Cap on worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the corpus and write training examples with sampled negatives
    BuildDataset(BuildDatasetArgs),
    /// Train an encoder
    Train(TrainArgs),
    /// Embed every document and write a vector index
    Index(IndexArgs),
    /// Search an index (or the chunked baseline) and write a TREC run
    Search(SearchArgs),
    /// Score a TREC run against qrels
    Evaluate(EvaluateArgs),
    /// Dump query and document vectors as TSV
    ExportEmbeddings(ExportArgs),
    /// Train and score one model per mask ratio
    AblateMaskRatio(AblateArgs),
    /// Write a synthetic corpus, queries and qrels
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BuildDatasetArgs {
    /// Corpus JSON lines ({"doc_id", "html"})
    #[arg(long)]
    pub corpus: PathBuf,
    /// Queries JSON lines ({"query_id", "text"})
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Negatives sampled per query
    #[arg(long, default_value_t = 8)]
    pub negatives: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Training JSON lines to write
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: <out>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training JSON lines from build-dataset
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Loss curve TSV (default: <out-model>.loss.tsv)
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    /// Manifest path (default: <out-model>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainOpts {
    /// joint | sal-eal | eal-sal | plain
    #[arg(long, default_value_t = Strategy::EalThenSal)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 2)]
    pub epochs_per_stage: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Fraction of elements whose tags are removed
    #[arg(long, default_value_t = 0.10)]
    pub mask_ratio: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Negatives used per example
    #[arg(long, default_value_t = 8)]
    pub negatives: usize,
    /// Use other batch examples' documents as extra negatives
    #[arg(long)]
    pub shared_negatives: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
    /// Vocabulary size including reserved tag ids
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f32,
    /// Skip L2 normalization of pooled vectors
    #[arg(long)]
    pub no_normalize: bool,
}

impl TrainOpts {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            vocab_size: self.vocab,
            n_reserved: DEFAULT_RESERVED,
            temperature: self.temperature,
            normalize: !self.no_normalize,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            strategy: self.strategy,
            epochs_per_stage: self.epochs_per_stage,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            mask_ratio: self.mask_ratio,
            negatives: self.negatives,
            shared_negatives: self.shared_negatives,
            seed: self.seed,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// tagged | untagged
    #[arg(long, default_value_t = Variant::Tagged)]
    pub variant: Variant,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long, required_unless_present = "chunked")]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Max-over-chunks baseline on untagged text; needs --corpus
    #[arg(long, requires = "corpus")]
    pub chunked: bool,
    #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
    pub chunk_len: usize,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "structret")]
    pub run_tag: String,
    /// TREC run to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS)]
    pub cutoffs: Vec<usize>,
    /// Also write the metrics as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest.json, else <run>.eval.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Queries to embed alongside the documents
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.3, 0.5])]
    pub ratios: Vec<f64>,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Ablation TSV to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SyntheticArgs {
    #[arg(long = "n-queries", default_value_t = 50)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 9)]
    pub distractors: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory for corpus.jsonl, queries.jsonl and qrels.txt
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub inputs: Vec<InputHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest<C: Serialize>(
    path: &Path,
    command: &str,
    seed: Option<u64>,
    config: &C,
    inputs: &[&Path],
) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        inputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_path(explicit: &Option<PathBuf>, primary: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| sibling(primary, ".manifest.json"))
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss(_) => 3,
        Error::ModelMismatch { .. } => 4,
        _ => 2,
    }
}

fn build_dataset(a: &BuildDatasetArgs) -> Result<()> {
    write_manifest(
        &manifest_path(&a.manifest, &a.out),
        "build-dataset",
        Some(a.seed),
        a,
        &[&a.corpus, &a.queries, &a.qrels],
    )?;
    let n = build_training_file(&a.corpus, &a.queries, &a.qrels, a.negatives, a.seed, &a.out)?;
    println!("wrote {n} training examples to {}", a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    write_manifest(
        &manifest_path(&a.manifest, &a.out_model),
        "train",
        Some(a.opts.seed),
        a,
        &[&a.train, &a.corpus],
    )?;
    let dataset = read_training_file(&a.train)?;
    let corpus = read_corpus(&a.corpus)?;
    let init = EncoderModel::random(&a.opts.encoder_config(), a.opts.seed)?;
    let outcome = train(&dataset, &corpus, init, &a.opts.train_config())?;
    outcome.model.save(&a.out_model)?;
    let curve_path = a.loss_curve.clone().unwrap_or_else(|| sibling(&a.out_model, ".loss.tsv"));
    fs::write(&curve_path, format_loss_curve(&outcome.curve)).map_err(|e| Error::io(&curve_path, e))?;
    for e in &outcome.curve {
        println!("epoch {}\t{}\tloss {:.6}", e.epoch, e.stage, e.mean_loss);
    }
    println!("wrote model to {}", a.out_model.display());
    Ok(())
}

fn index_cmd(a: &IndexArgs) -> Result<()> {
    write_manifest(&manifest_path(&a.manifest, &a.out), "index", None, a, &[&a.corpus, &a.model])?;
    let corpus = read_corpus(&a.corpus)?;
    let model = EncoderModel::load(&a.model)?;
    let index = build_index(&corpus, &model, a.variant)?;
    index.save(&a.out)?;
    println!("indexed {} documents ({}) into {}", index.len(), a.variant, a.out.display());
    Ok(())
}

fn search_cmd(a: &SearchArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.model, &a.queries];
    inputs.extend(a.index.as_deref());
    inputs.extend(a.corpus.as_deref());
    write_manifest(&manifest_path(&a.manifest, &a.out), "search", None, a, &inputs)?;
    let model = EncoderModel::load(&a.model)?;
    let queries = read_queries(&a.queries)?;
    let run = match (&a.index, &a.corpus) {
        (_, Some(corpus)) if a.chunked => {
            let corpus = read_corpus(corpus)?;
            search_all_chunked(&queries, &corpus, &model, a.chunk_len, a.k)?
        }
        (Some(index), _) => search_all(&queries, &VectorIndex::load(index)?, &model, a.k)?,
        _ => return Err(Error::InvalidConfig("search needs --index or --chunked --corpus".into())),
    };
    write_run(&a.out, &run, &a.run_tag)?;
    println!("searched {} queries, wrote {}", run.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let manifest = match (&a.manifest, &a.out) {
        (Some(m), _) => m.clone(),
        (None, Some(out)) => sibling(out, ".manifest.json"),
        (None, None) => sibling(&a.run, ".eval.manifest.json"),
    };
    write_manifest(&manifest, "evaluate", None, a, &[&a.run, &a.qrels])?;
    let report = evaluate(&a.run, &a.qrels, &a.cutoffs)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        fs::write(out, report.to_json() + "\n").map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn export_cmd(a: &ExportArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.index, &a.model];
    inputs.extend(a.queries.as_deref());
    write_manifest(&manifest_path(&a.manifest, &a.out), "export-embeddings", None, a, &inputs)?;
    let model = EncoderModel::load(&a.model)?;
    let index = VectorIndex::load(&a.index)?;
    let queries = match &a.queries {
        Some(p) => read_queries(p)?,
        None => Vec::new(),
    };
    let rows = export_embeddings(&index, &queries, &model, &a.out)?;
    println!("wrote {rows} vectors to {}", a.out.display());
    Ok(())
}

fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    write_manifest(
        &manifest_path(&a.manifest, &a.out),
        "ablate-mask-ratio",
        Some(a.opts.seed),
        a,
        &[&a.train, &a.corpus, &a.queries, &a.qrels],
    )?;
    let dataset = read_training_file(&a.train)?;
    let corpus = read_corpus(&a.corpus)?;
    let queries = read_queries(&a.queries)?;
    let qrels = read_qrels(&a.qrels)?;
    let results = ablate_mask_ratio(
        &dataset,
        &corpus,
        &queries,
        &qrels,
        &a.ratios,
        &a.opts.encoder_config(),
        &a.opts.train_config(),
    );
    let mut rows = Vec::new();
    let mut first_error = None;
    for (ratio, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("ratio {ratio}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    let table = format_ablation_tsv(&rows);
    fs::write(&a.out, &table).map_err(|e| Error::io(&a.out, e))?;
    print!("{table}");
    first_error.map_or(Ok(()), Err)
}

fn synthetic_cmd(a: &SyntheticArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let manifest = a.manifest.clone().unwrap_or_else(|| a.out_dir.join("manifest.json"));
    write_manifest(&manifest, "make-synthetic", Some(a.seed), a, &[])?;
    let synthetic = make_synthetic_corpus(a.n_queries, a.distractors, a.seed)?;
    synthetic.write_to(&a.out_dir)?;
    println!(
        "wrote {} documents and {} queries to {}",
        synthetic.documents.len(),
        synthetic.queries.len(),
        a.out_dir.display()
    );
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::BuildDataset(a) => build_dataset(a),
        Command::Train(a) => train_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ExportEmbeddings(a) => export_cmd(a),
        Command::AblateMaskRatio(a) => ablate_cmd(a),
        Command::MakeSynthetic(a) => synthetic_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (program name first) and runs. Usage errors exit 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_documented_values() {
        let cli = Cli::try_parse_from([
            "structret", "train", "--train", "t", "--corpus", "c", "--out-model", "m",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.opts.strategy, Strategy::EalThenSal);
        assert_eq!(a.opts.mask_ratio, 0.10);
        assert_eq!(a.opts.epochs_per_stage, 2);
        assert_eq!(a.opts.batch_size, 8);
        assert_eq!(a.opts.seed, 42);

        let cli = Cli::try_parse_from([
            "structret", "search", "--model", "m", "--queries", "q", "--chunked", "--corpus", "c", "--out", "o",
        ])
        .unwrap();
        let Command::Search(a) = cli.command else { panic!() };
        assert_eq!((a.k, a.chunk_len), (10, 512));
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert_eq!(main_with_args(["structret", "index", "--bogus"]), 2);
        assert_eq!(main_with_args(["structret", "frobnicate"]), 2);
    }
}
