use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use capforge::dataset::read_enhanced;
use capforge::orchestrator::{RunReport, REPORT_FILE};
use capforge::shear::TokenizerSpec;
use capforge::stats::{
    export_embeddings, export_wordcloud_counts, length_stats_partitioned, similarity_distribution,
    word_frequency_partitioned, EmbeddingProvider, Pairing, StatsReport, WordFilter, DEFAULT_STOPWORDS,
};
use clap::{Args, ValueEnum};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderKind {
    /// Seeded token hashing; offline and deterministic.
    Hasher,
    /// An embedding service reached over HTTP.
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairingArg {
    RawOnly,
    AllGenerated,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Enhanced dataset (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for stats.json and CSV tables.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lengths: bool,
    #[arg(long)]
    wordfreq: bool,
    #[arg(long, default_value_t = 50)]
    top: usize,
    /// One stopword per line; replaces the built-in list.
    #[arg(long, conflicts_with = "no_stopwords")]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    no_stopwords: bool,
    /// Count only words listed in this file (one per line).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    similarity: bool,
    #[arg(long, value_enum, default_value_t = ProviderKind::Hasher)]
    provider: ProviderKind,
    #[arg(long)]
    provider_url: Option<String>,
    #[arg(long, default_value_t = 64)]
    dimension: usize,
    #[arg(long, default_value_t = 0)]
    hasher_seed: u64,
    #[arg(long, value_enum, default_value_t = PairingArg::AllGenerated)]
    pairing: PairingArg,
    /// Base for relative image paths; defaults to the one recorded by
    /// `enhance`, else the dataset's directory.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Also write every image and caption vector to embeddings.jsonl.
    #[arg(long)]
    export_embeddings: bool,
    /// Parallel partitions for the counting passes.
    #[arg(long, default_value_t = 4)]
    partitions: usize,
}

fn read_word_list(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// The image root recorded by `enhance` in the report next to the dataset,
/// else the dataset's own directory.
fn default_image_root(dataset: &Path) -> PathBuf {
    let dir = dataset.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::read_to_string(dir.join(REPORT_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<RunReport>(&t).ok())
        .and_then(|r| r.image_root)
        .unwrap_or(dir)
}

pub fn cmd_stats(args: StatsArgs) -> CliResult {
    if !(args.lengths || args.wordfreq || args.similarity) {
        return Err(CliError::usage("choose at least one of --lengths, --wordfreq, --similarity"));
    }
    if !args.dataset.is_file() {
        return Err(CliError::Usage(format!("dataset not found: {}", args.dataset.display())));
    }
    let provider = match (args.provider, &args.provider_url) {
        (ProviderKind::Hasher, _) => EmbeddingProvider::hasher(args.dimension, args.hasher_seed),
        (ProviderKind::Http, Some(url)) => EmbeddingProvider::http(url.clone(), args.dimension),
        (ProviderKind::Http, None) => return Err(CliError::usage("--provider http needs --provider-url")),
    };
    let stopwords: Vec<String> = match (&args.stopwords, args.no_stopwords) {
        (Some(p), _) => read_word_list(p)?,
        (None, true) => Vec::new(),
        (None, false) => DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
    };
    let lexicon = match &args.lexicon {
        Some(p) => Some(read_word_list(p)?.into_iter().collect::<HashSet<_>>()),
        None => None,
    };
    let filter = WordFilter::new(stopwords, lexicon);

    let entries = read_enhanced(&args.dataset).map_err(CliError::runtime)?;
    fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let mut report = StatsReport::default();

    if args.lengths {
        let lengths = length_stats_partitioned(&entries, TokenizerSpec::default(), args.partitions)
            .map_err(CliError::runtime)?;
        let mut w = csv::Writer::from_path(args.out.join("lengths.csv")).map_err(CliError::runtime)?;
        w.write_record(["source", "bucket_start", "bucket_end", "count"])
            .map_err(CliError::runtime)?;
        for s in &lengths.sources {
            for (i, c) in s.histogram.iter().enumerate() {
                let start = i * lengths.bucket_width;
                w.write_record([
                    s.source.clone(),
                    start.to_string(),
                    (start + lengths.bucket_width).to_string(),
                    c.to_string(),
                ])
                .map_err(CliError::runtime)?;
            }
            crate::say!("{}: mean {:.2} tokens over {} captions", s.source, s.mean_tokens, s.count);
        }
        w.flush().map_err(CliError::runtime)?;
        report.lengths = Some(lengths);
    }

    if args.wordfreq {
        let table = word_frequency_partitioned(&entries, args.top, &filter, args.partitions);
        export_wordcloud_counts(&table, &args.out).map_err(CliError::runtime)?;
        report.word_frequency = Some(table);
    }

    if args.similarity {
        let root = match &args.image_root {
            Some(r) => r.clone(),
            None => default_image_root(&args.dataset),
        };
        let pairing = match args.pairing {
            PairingArg::RawOnly => Pairing::RawOnly,
            PairingArg::AllGenerated => Pairing::AllGenerated,
        };
        let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
        let run = rt
            .block_on(similarity_distribution(&entries, &root, &provider, pairing))
            .map_err(CliError::runtime)?;
        let d = &run.distribution;
        let mut w = csv::Writer::from_path(args.out.join("similarity.csv")).map_err(CliError::runtime)?;
        w.write_record(["bucket_start", "count"]).map_err(CliError::runtime)?;
        for (i, c) in d.histogram.iter().enumerate() {
            let start = -1.0 + i as f64 * d.bucket_width;
            w.write_record([format!("{start:.2}"), c.to_string()])
                .map_err(CliError::runtime)?;
        }
        w.flush().map_err(CliError::runtime)?;
        if args.export_embeddings {
            export_embeddings(&run.embeddings, &args.out.join("embeddings.jsonl")).map_err(CliError::runtime)?;
        }
        crate::say!("similarity: mean {:.4}, median {:.4} over {} pairs", d.mean, d.median, d.count);
        report.similarity = Some(run.distribution);
    }

    let path = args.out.join("stats.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(CliError::runtime)?;
    crate::say!("wrote {}", path.display());
    Ok(())
}
