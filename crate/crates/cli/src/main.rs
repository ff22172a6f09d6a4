//! Command-line pipeline for the embedding search and identity evaluation
//! toolkit.
//!
//! Every stage reads and writes only the documented file formats (EMB1
//! embeddings, JSONL manifests, JSON threshold tables, JSONL result sets),
//! so each stage is independently replayable. All randomness is seeded
//! explicitly, and flags can be overridden via `FACESEARCH_*` environment
//! variables.
//!
//! Exit codes: 0 success, 1 validation/data error, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use facesearch_core::calibrate::{calibrate, ThresholdTable, DEFAULT_PERCENTILE};
use facesearch_core::eval::{evaluate_accuracy, EvalConfig};
use facesearch_core::ingest::{
    load_dataset, manifest_from_csv, read_manifest, write_manifest, LoadOptions,
};
use facesearch_core::report::{emit_report, Report, ReportFormat};
use facesearch_core::robustness::{
    append_result_sets, collect_result_sets, evaluate_robustness, read_result_sets,
    write_result_sets, QueryResultSet,
};
use facesearch_core::synth::{generate_synthetic, PerturbationLevel, SynthSpec};
use facesearch_core::{FlatIndex, SearchHit, Variant};
use facesearch_service::{
    run_blocking, KnnClient, KnnRequest, ServedIndex, ServiceConfig, DEFAULT_DEDUP_EPSILON,
    DEFAULT_OVERFETCH_FACTOR,
};

#[derive(Parser)]
#[command(
    name = "facesearch",
    version,
    about = "Exact embedding search, identity retrieval evaluation, and robustness reporting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic identity dataset with perturbed variants
    Synth(SynthArgs),
    /// Convert a CSV manifest to JSONL and/or validate manifests
    Ingest(IngestArgs),
    /// Load a dataset, build the flat index, and report its shape
    BuildIndex(BuildIndexArgs),
    /// Top-1 / top-5 identification accuracy over a dataset
    EvalAccuracy(EvalAccuracyArgs),
    /// Per-image max-distance thresholds from same-identity distances
    Calibrate(CalibrateArgs),
    /// Query the local index: one query, or batch result-set recording
    Search(SearchArgs),
    /// Valid-result robustness report across perturbed variants
    EvalRobustness(EvalRobustnessArgs),
    /// Serve the KNN HTTP endpoint over a dataset
    Serve(ServeArgs),
    /// Query a remote KNN service endpoint
    QueryRemote(QueryRemoteArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> ReportFormat {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Report format
    #[arg(long, value_enum, default_value = "json", env = "FACESEARCH_FORMAT")]
    format: Format,
    /// Write the report here instead of stdout
    #[arg(long, env = "FACESEARCH_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for embedding files and the manifest
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42, env = "FACESEARCH_SEED")]
    seed: u64,
    #[arg(long, default_value_t = 50, env = "FACESEARCH_IDENTITIES")]
    identities: usize,
    #[arg(long, default_value_t = 10, env = "FACESEARCH_IMAGES_PER_IDENTITY")]
    images_per_identity: usize,
    #[arg(long, default_value_t = 32, env = "FACESEARCH_DIM")]
    dim: usize,
    /// Per-coordinate noise scale within an identity
    #[arg(long, default_value_t = 0.1, env = "FACESEARCH_INTRA_SPREAD")]
    intra_spread: f64,
    /// Centroid scale across identities
    #[arg(long, default_value_t = 10.0, env = "FACESEARCH_INTER_SPREAD")]
    inter_spread: f64,
    /// Perturbed variant to generate, as variant=noise_scale
    /// (e.g. --noise fawkes=0.2 --noise lowkey=0.4); repeatable
    #[arg(long = "noise", value_parser = parse_noise)]
    noise: Vec<(Variant, f64)>,
}

fn parse_noise(s: &str) -> Result<(Variant, f64), String> {
    let (name, scale) = s
        .split_once('=')
        .ok_or_else(|| format!("expected variant=scale, got {s:?}"))?;
    let variant = Variant::parse(name)
        .ok_or_else(|| format!("unknown variant {name:?} (fawkes, lowkey, other)"))?;
    if variant == Variant::Original {
        return Err("perturbation variant cannot be \"original\"".to_string());
    }
    let scale: f64 = scale
        .parse()
        .map_err(|e| format!("bad noise scale {scale:?}: {e}"))?;
    Ok((variant, scale))
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").args(["csv", "manifest"]).required(true))]
struct IngestArgs {
    /// CSV manifest to convert (header image_id,identity_id,variant,file,row)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Where to write the converted JSONL manifest (with --csv)
    #[arg(long, requires = "csv")]
    out: Option<PathBuf>,
    /// Existing JSONL manifest to validate
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    /// JSONL manifest describing the dataset
    #[arg(long)]
    manifest: PathBuf,
    /// L2-normalize all embeddings at load time
    #[arg(long)]
    normalize: bool,
}

impl DatasetArgs {
    fn load(&self) -> anyhow::Result<facesearch_core::ingest::Dataset> {
        load_dataset(
            &self.manifest,
            LoadOptions {
                normalize: self.normalize,
            },
        )
        .with_context(|| format!("loading dataset {}", self.manifest.display()))
    }
}

#[derive(Args)]
struct BuildIndexArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
}

#[derive(Args)]
struct EvalAccuracyArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Hits retrieved per query (the query itself included)
    #[arg(long, default_value_t = 6, env = "FACESEARCH_K")]
    k: usize,
    /// Exclude identities with fewer images than this from the query set
    #[arg(long, default_value_t = 1)]
    min_identity_size: usize,
    /// Run label carried into the report
    #[arg(long, default_value = "eval")]
    label: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, default_value_t = DEFAULT_PERCENTILE, env = "FACESEARCH_PERCENTILE")]
    percentile: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("mode").args(["query_id", "batch"]).required(true))]
struct SearchArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Single-query mode: image id to query with
    #[arg(long)]
    query_id: Option<String>,
    /// Variant of the query embedding
    #[arg(long, default_value = "original", value_parser = parse_variant)]
    variant: Variant,
    /// Exclude the query's own item id from the results
    #[arg(long)]
    exclude_self: bool,
    /// Hits per query in single-query mode
    #[arg(long, default_value_t = 6, env = "FACESEARCH_K")]
    k: usize,
    /// Batch mode: record result sets for every (image, variant) query
    #[arg(long)]
    batch: bool,
    /// Hits per query in batch mode
    #[arg(long, default_value_t = 50, env = "FACESEARCH_NUM_IMAGES")]
    num_images: usize,
    /// Output path (stdout for single queries if omitted; required for batch)
    #[arg(long, env = "FACESEARCH_OUT")]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").args(["manifest", "results"]).required(true))]
struct EvalRobustnessArgs {
    /// Local mode: manifest to query the flat index with
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// L2-normalize all embeddings at load time (local mode)
    #[arg(long)]
    normalize: bool,
    /// Replay mode: recorded JSONL result sets
    #[arg(long)]
    results: Option<PathBuf>,
    /// Threshold table JSON produced by `calibrate`
    #[arg(long)]
    thresholds: PathBuf,
    /// Hits per query in local mode
    #[arg(long, default_value_t = 50, env = "FACESEARCH_NUM_IMAGES")]
    num_images: usize,
    /// Valid results required for an image to qualify
    #[arg(long, default_value_t = 3, env = "FACESEARCH_MIN_VALID")]
    min_valid: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, default_value = "127.0.0.1:8080", env = "FACESEARCH_LISTEN")]
    listen: std::net::SocketAddr,
    /// Name the served index answers to
    #[arg(long, default_value = "local")]
    indice_name: String,
    /// Squared-distance dedup radius
    #[arg(long, default_value_t = DEFAULT_DEDUP_EPSILON)]
    epsilon: f64,
    /// Over-fetch factor applied before deduplication
    #[arg(long, default_value_t = DEFAULT_OVERFETCH_FACTOR)]
    overfetch: usize,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("query_source").args(["manifest", "embeddings"]).required(true))]
struct QueryRemoteArgs {
    /// Full URL of the knn-service endpoint
    #[arg(long, env = "FACESEARCH_ENDPOINT")]
    endpoint: String,
    /// Dataset holding the query embedding
    #[arg(long, requires = "query_id")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    query_id: Option<String>,
    #[arg(long, default_value = "original", value_parser = parse_variant)]
    variant: Variant,
    /// Alternative query source: an EMB1 file plus a row number
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long, default_value = "local")]
    indice_name: String,
    #[arg(long, default_value_t = 50, env = "FACESEARCH_NUM_IMAGES")]
    num_images: usize,
    #[arg(long)]
    deduplicate: bool,
    #[arg(long)]
    use_mclip: bool,
    #[arg(long)]
    use_safety_model: bool,
    #[arg(long)]
    use_violence_detector: bool,
    #[arg(long, default_value_t = 0)]
    aesthetic_score: i64,
    #[arg(long, default_value_t = 0.0)]
    aesthetic_weight: f64,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    /// Append the response as a result-set JSONL line for later replay
    #[arg(long)]
    record: Option<PathBuf>,
    /// Write the raw response here instead of stdout
    #[arg(long, env = "FACESEARCH_OUT")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::EvalAccuracy(args) => cmd_eval_accuracy(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Search(args) => cmd_search(args),
        Command::EvalRobustness(args) => cmd_eval_robustness(args),
        Command::Serve(args) => cmd_serve(args),
        Command::QueryRemote(args) => cmd_query_remote(args),
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn build_original_index(
    dataset: &facesearch_core::ingest::Dataset,
) -> anyhow::Result<FlatIndex> {
    FlatIndex::build(dataset.original_entries()).context("building flat index")
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        seed: args.seed,
        n_identities: args.identities,
        images_per_identity: args.images_per_identity,
        dim: args.dim,
        intra_spread: args.intra_spread,
        inter_spread: args.inter_spread,
        perturbation_levels: args
            .noise
            .iter()
            .map(|(variant, noise_scale)| PerturbationLevel {
                variant: *variant,
                noise_scale: *noise_scale,
            })
            .collect(),
    };
    let output = generate_synthetic(&spec, &args.out)?;
    let summary = serde_json::json!({
        "manifest": output.manifest_path,
        "files": output.files.iter().map(|(v, p)| {
            serde_json::json!({"variant": v.as_str(), "path": p})
        }).collect::<Vec<_>>(),
        "n_images": output.n_images,
        "dim": output.dim,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> anyhow::Result<()> {
    let manifest_path = match (&args.csv, &args.manifest) {
        (Some(csv), _) => {
            let out = args
                .out
                .as_ref()
                .ok_or_else(|| anyhow!("--csv requires --out for the JSONL manifest"))?;
            let manifest = manifest_from_csv(csv)?;
            write_manifest(out, &manifest)?;
            out.clone()
        }
        (None, Some(manifest)) => manifest.clone(),
        (None, None) => bail!("pass --csv (with --out) or --manifest"),
    };
    // Full validation, including (file, row) resolution.
    let manifest = read_manifest(&manifest_path)?;
    let groups = manifest.identity_groups();
    let variants: Vec<String> = manifest
        .perturbed_variants()
        .iter()
        .map(|v| v.as_str().to_string())
        .collect();
    let summary = serde_json::json!({
        "manifest": manifest_path,
        "records": manifest.len(),
        "original_images": manifest.original_ids().len(),
        "identities": groups.len(),
        "perturbed_variants": variants,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> anyhow::Result<()> {
    let dataset = args.dataset.load()?;
    let index = build_original_index(&dataset)?;
    let summary = serde_json::json!({
        "n_entries": index.len(),
        "dim": index.dim(),
        "n_identities": dataset.manifest().identity_groups().len(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval_accuracy(args: EvalAccuracyArgs) -> anyhow::Result<()> {
    let dataset = args.dataset.load()?;
    let index = build_original_index(&dataset)?;
    let config = EvalConfig {
        retrieve_k: args.k,
        min_identity_size: args.min_identity_size,
    };
    let report = evaluate_accuracy(&index, dataset.manifest(), &args.label, &config)?;
    let bytes = emit_report(&Report::Accuracy(report), args.output.format.into())?;
    write_output(args.output.out.as_deref(), &bytes)
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let dataset = args.dataset.load()?;
    let vectors = dataset.original_vectors();
    let items: Vec<String> = dataset
        .manifest()
        .original_ids()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let calibration = calibrate(dataset.manifest(), &vectors, &items, args.percentile)?;
    if !calibration.skipped.is_empty() {
        eprintln!(
            "skipped {} item(s) whose identity has fewer than 2 images",
            calibration.skipped.len()
        );
    }
    let bytes = emit_report(
        &Report::Thresholds(calibration.table),
        args.output.format.into(),
    )?;
    write_output(args.output.out.as_deref(), &bytes)
}

fn hits_to_json(hits: &[SearchHit]) -> serde_json::Value {
    serde_json::json!(hits
        .iter()
        .map(|h| serde_json::json!({
            "item_id": h.item_id,
            "rank": h.rank,
            "squared_distance": h.squared_distance,
        }))
        .collect::<Vec<_>>())
}

fn cmd_search(args: SearchArgs) -> anyhow::Result<()> {
    let dataset = args.dataset.load()?;
    let index = build_original_index(&dataset)?;

    if args.batch {
        let out = args
            .out
            .as_ref()
            .ok_or_else(|| anyhow!("--batch requires --out for the JSONL result sets"))?;
        let sets = collect_result_sets(&index, &dataset, args.num_images)?;
        write_result_sets(out, &sets)?;
        eprintln!("recorded {} result sets to {}", sets.len(), out.display());
        return Ok(());
    }

    let query_id = args
        .query_id
        .as_ref()
        .ok_or_else(|| anyhow!("pass --query-id, or --batch for batch recording"))?;
    let embedding = dataset
        .embedding(query_id, args.variant)
        .ok_or_else(|| anyhow!("no embedding for ({query_id:?}, {})", args.variant))?;
    let hits = if args.exclude_self {
        index.search_excluding(embedding, args.k, query_id)?
    } else {
        index.search(embedding, args.k)?
    };
    let mut bytes = serde_json::to_vec_pretty(&hits_to_json(&hits))?;
    bytes.push(b'\n');
    write_output(args.out.as_deref(), &bytes)
}

fn load_thresholds(path: &Path) -> anyhow::Result<ThresholdTable> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(ThresholdTable::from_json(value)?)
}

fn cmd_eval_robustness(args: EvalRobustnessArgs) -> anyhow::Result<()> {
    let thresholds = load_thresholds(&args.thresholds)?;
    let result_sets: Vec<QueryResultSet> = match (&args.manifest, &args.results) {
        (Some(manifest), None) => {
            let dataset = load_dataset(
                manifest,
                LoadOptions {
                    normalize: args.normalize,
                },
            )?;
            let index = build_original_index(&dataset)?;
            collect_result_sets(&index, &dataset, args.num_images)?
        }
        (None, Some(results)) => read_result_sets(results)?,
        _ => bail!("pass exactly one of --manifest (local mode) or --results (replay mode)"),
    };
    let evaluation = evaluate_robustness(&result_sets, &thresholds, args.min_valid)?;
    if !evaluation.skipped_no_threshold.is_empty() {
        eprintln!(
            "skipped {} item(s) with no calibrated threshold",
            evaluation.skipped_no_threshold.len()
        );
    }
    let bytes = emit_report(
        &Report::Robustness(evaluation.report),
        args.output.format.into(),
    )?;
    write_output(args.output.out.as_deref(), &bytes)
}

fn cmd_serve(args: ServeArgs) -> anyhow::Result<()> {
    let dataset = args.dataset.load()?;
    let index = build_original_index(&dataset)?;
    eprintln!(
        "serving index {:?}: {} entries, dim {}",
        args.indice_name,
        index.len(),
        index.dim()
    );
    let served = ServedIndex {
        index: Arc::new(index),
        dedup_epsilon: args.epsilon,
        overfetch_factor: args.overfetch,
    };
    let config = ServiceConfig::new().with_index(args.indice_name, served);
    run_blocking(args.listen, config)?;
    Ok(())
}

fn cmd_query_remote(args: QueryRemoteArgs) -> anyhow::Result<()> {
    let (query_embedding, record_id) = match (&args.manifest, &args.embeddings) {
        (Some(manifest), None) => {
            let query_id = args.query_id.as_ref().expect("clap enforces requires");
            let dataset = load_dataset(manifest, LoadOptions::default())?;
            let embedding = dataset
                .embedding(query_id, args.variant)
                .ok_or_else(|| anyhow!("no embedding for ({query_id:?}, {})", args.variant))?;
            (embedding.values().to_vec(), query_id.clone())
        }
        (None, Some(file)) => {
            let parsed = facesearch_core::ingest::read_embeddings(file)?;
            let embedding = parsed
                .vectors
                .get(args.row)
                .ok_or_else(|| anyhow!("row {} out of range (count {})", args.row, parsed.count()))?;
            (embedding.values().to_vec(), format!("row{}", args.row))
        }
        _ => bail!("pass either --manifest with --query-id, or --embeddings [--row]"),
    };

    let request = KnnRequest {
        indice_name: args.indice_name.clone(),
        use_mclip: args.use_mclip,
        aesthetic_score: args.aesthetic_score,
        aesthetic_weight: args.aesthetic_weight,
        modality: facesearch_service::Modality::Image,
        num_images: args.num_images,
        deduplicate: args.deduplicate,
        use_safety_model: args.use_safety_model,
        use_violence_detector: args.use_violence_detector,
        query_embedding,
    };
    let client = KnnClient::with_timeout(
        &args.endpoint,
        std::time::Duration::from_secs(args.timeout_secs),
    )?;
    let response = client.query(&request)?;

    if let Some(record) = &args.record {
        let hits: Vec<SearchHit> = response
            .results
            .iter()
            .enumerate()
            .map(|(rank, r)| SearchHit {
                item_id: r.item_id.clone(),
                rank,
                squared_distance: r.squared_distance,
            })
            .collect();
        let set = QueryResultSet {
            item_id: record_id,
            variant: args.variant,
            hits,
        };
        append_result_sets(record, &[set])?;
        eprintln!("recorded result set to {}", record.display());
    }

    let mut bytes = serde_json::to_vec_pretty(&response)?;
    bytes.push(b'\n');
    write_output(args.out.as_deref(), &bytes)
}
