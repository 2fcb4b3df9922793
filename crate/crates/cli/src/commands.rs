use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ragforge::clients::{EmbedSide, HttpClient, HttpConfig, ModelClient, StubClient};
use ragforge::corpus::{self, CorpusError, Document, Library};
use ragforge::evaluation::{self, read_eval_set};
use ragforge::mining::{self, MiningOptions};
use ragforge::pipeline::{self, PipelineConfig};
use ragforge::segmentation::{Tokenizer, WhitespaceTokenizer, WordPunctTokenizer};
use ragforge::segmentation::{segment, Chunk, NspScorer, SegmentConfig};
use ragforge::synthesis::{self, DpoItem, FewShotLibrary, SourceChunk, SynthConfig};
use ragforge::training::{self, two_cluster, EncodedExample, EncoderConfig, LossSpec, ToyEncoder, TrainConfig};
use ragforge::vectorstore::{Collection, Metric, PartitionKey, Payload, VectorRecord};

use crate::cli::{Cli, Command, SynthAction, SynthArgs, TrainArgs};
use crate::config::{AppConfig, Overrides, ENV_PREFIX};

const EMBED_BATCH: usize = 64;

struct Scorer<'a>(&'a dyn ModelClient);

impl NspScorer for Scorer<'_> {
    fn nsp_logits(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ragforge::ClientError> {
        self.0.nsp(pairs)
    }
}

/// One line of the chunk file written by `segment` and read by `index`
/// and `synth`. Only `chunk_id`, `doc_id` and `text` are required on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub doc_id: String,
    #[serde(default = "public")]
    pub partition: String,
    pub text: String,
    #[serde(default)]
    pub token_count: usize,
    #[serde(default)]
    pub ordinal: usize,
    #[serde(default)]
    pub sentence_range: Range<usize>,
    #[serde(default)]
    pub oversized: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn public() -> String {
    ragforge::vectorstore::PUBLIC_PARTITION.to_string()
}

impl ChunkRecord {
    fn new(chunk: Chunk, doc: &Document) -> Self {
        let mut metadata = doc.metadata.clone();
        if let Some(title) = &doc.title {
            metadata.entry("title".into()).or_insert_with(|| title.clone());
        }
        Self {
            chunk_id: chunk.chunk_id,
            doc_id: chunk.doc_id,
            partition: doc.library.partition_value().to_string(),
            text: chunk.text,
            token_count: chunk.token_count,
            ordinal: chunk.ordinal,
            sentence_range: chunk.sentence_range,
            oversized: chunk.oversized,
            metadata,
        }
    }
}

/// What a command hands back for printing.
struct Outcome {
    result: Value,
    text: String,
}

impl Outcome {
    fn new(result: Value, text: impl Into<String>) -> Self {
        Self {
            result,
            text: text.into(),
        }
    }
}

struct RunContext {
    config: AppConfig,
    seed_generated: bool,
}

impl RunContext {
    fn echo(&self) -> Value {
        json!({ "settings": self.config, "seed_generated": self.seed_generated })
    }

    fn seed(&self) -> u64 {
        self.config.run.seed.unwrap_or(0)
    }

    fn client(&self) -> Arc<dyn ModelClient> {
        let c = &self.config.client;
        if c.endpoint == "stub" {
            Arc::new(StubClient::new(c.dim))
        } else {
            let mut http = HttpConfig::new(c.endpoint.clone(), c.model_tag.clone());
            http.timeout = std::time::Duration::from_secs(c.timeout_secs);
            Arc::new(HttpClient::new(http))
        }
    }

    fn tokenizer(&self) -> Box<dyn Tokenizer> {
        match self.config.segment.tokenizer.as_str() {
            "whitespace" => Box::new(WhitespaceTokenizer),
            _ => Box::new(WordPunctTokenizer),
        }
    }

    fn load_store(&self) -> Result<Collection> {
        let path = &self.config.store.path;
        Collection::load(path).with_context(|| format!("cannot load store {}", path.display()))
    }

    fn pipeline_config(&self, partitions: &[String]) -> Result<PipelineConfig> {
        let p = &self.config.pipeline;
        Ok(PipelineConfig {
            retrieve_n: p.retrieve_n,
            top_k: p.top_k,
            score_threshold: p.threshold,
            scope: scope(partitions)?,
            ..PipelineConfig::default()
        })
    }
}

fn uses_randomness(command: &Command) -> bool {
    matches!(command, Command::Mine { .. } | Command::Synth(_) | Command::TrainToy(_))
}

pub fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::Reference) {
        print!("{}", crate::reference::render());
        return Ok(());
    }
    let file = cli
        .global
        .config
        .clone()
        .or_else(|| std::env::var_os(format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
    let env = Overrides::from_env(|k| std::env::var(k).ok())?;
    let mut config = AppConfig::resolve(file.as_deref(), &env, &cli.overrides())?;

    let mut seed_generated = false;
    if config.run.seed.is_none() && uses_randomness(&cli.command) {
        config.run.seed = Some(rand::random());
        seed_generated = true;
    }
    if let Some(jobs) = config.run.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    let ctx = RunContext { config, seed_generated };
    let name = cli.name();
    let json_out = cli.global.json;

    let outcome = match cli.command {
        Command::Ingest { input, out, user } => ingest(&ctx, &input, &out, user.as_deref(), name)?,
        Command::Segment { input, out, .. } => segment_cmd(&ctx, &input, &out, name)?,
        Command::Index { chunks } => index(&ctx, &chunks, name)?,
        Command::Search {
            query,
            partition,
            top_n,
            threshold,
        } => search(&ctx, &query, &partition, top_n, threshold)?,
        Command::Chat {
            query,
            partition,
            trace,
            ..
        } => chat(&ctx, &query, &partition, trace)?,
        Command::Mine {
            pairs,
            out,
            task_type,
            min_negatives,
            sigma,
            pool_size,
        } => {
            let sigma = match sigma.as_str() {
                "auto" => None,
                s => Some(s.parse::<f64>().map_err(|_| anyhow!("--sigma must be \"auto\" or a number, got {s:?}"))?),
            };
            let options = MiningOptions {
                min_negatives,
                sigma,
                candidate_pool_size: pool_size,
                seed: ctx.seed(),
            };
            mine(&ctx, &pairs, &out, task_type, &options, name)?
        }
        Command::Synth(SynthArgs {
            action: Some(SynthAction::Dpo { items, threshold, out }),
            ..
        }) => dpo(&ctx, &items, threshold, &out, name)?,
        Command::Synth(args) => synth(&ctx, &args, name)?,
        Command::TrainToy(args) => train(&ctx, &args, name)?,
        Command::Eval {
            set,
            ks,
            report,
            partition,
        } => eval(&ctx, &set, &ks, &report, &partition)?,
        Command::Reference => unreachable!("handled above"),
    };

    if json_out {
        let doc = json!({ "command": name, "config": ctx.echo(), "result": outcome.result });
        println!("{}", serde_json::to_string(&doc)?);
    } else {
        eprintln!("config: {}", serde_json::to_string(&ctx.echo())?);
        print!("{}", outcome.text);
    }
    Ok(())
}

fn scope(partitions: &[String]) -> Result<Vec<PartitionKey>> {
    if partitions.is_empty() {
        return Ok(vec![PartitionKey::public()]);
    }
    partitions
        .iter()
        .map(|p| PartitionKey::parse(p).map_err(|e| anyhow!("--partition {p:?}: {e}")))
        .collect()
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<usize> {
    let mut w = writer(path)?;
    let mut n = 0;
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

/// Writes `<out>.run.json` next to a file output: command, effective
/// config and result summary.
fn run_record(ctx: &RunContext, out: &Path, command: &str, result: &Value) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    let doc = json!({ "command": command, "config": ctx.echo(), "result": result });
    fs::write(PathBuf::from(name), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn read_documents(path: &Path, library: Library) -> Result<(Vec<Document>, Vec<String>)> {
    let mut docs = Vec::new();
    let mut bad = Vec::new();
    for rec in corpus::load_corpus(path, library)? {
        match rec {
            Ok(d) => docs.push(d),
            Err(e @ CorpusError::Record { .. }) => bad.push(e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok((docs, bad))
}

fn ingest(ctx: &RunContext, input: &Path, out: &Path, user: Option<&str>, name: &str) -> Result<Outcome> {
    let library = match user {
        Some(id) => {
            PartitionKey::user(id).map_err(|e| anyhow!("--user {id:?}: {e}"))?;
            Library::User(id.to_string())
        }
        None => Library::Public,
    };
    let (docs, bad) = read_documents(input, library)?;
    let (kept, reports) = corpus::clean_corpus(&docs);
    write_jsonl(out, kept.iter().map(|d| serde_json::from_str::<Value>(&d.to_record_line()).expect("valid json")))?;
    let removed: usize = reports.iter().map(|r| r.removed_segments).sum();
    let result = json!({
        "read": docs.len(),
        "malformed": bad,
        "kept": kept.len(),
        "dropped_near_empty": docs.len() - kept.len(),
        "removed_segments": removed,
        "output": out,
    });
    run_record(ctx, out, name, &result)?;
    let text = format!(
        "read {} documents, kept {}, dropped {} near-empty, skipped {} malformed lines\nwrote {}\n",
        docs.len(),
        kept.len(),
        docs.len() - kept.len(),
        bad.len(),
        out.display()
    );
    Ok(Outcome::new(result, text))
}

fn segment_cmd(ctx: &RunContext, input: &Path, out: &Path, name: &str) -> Result<Outcome> {
    let (docs, bad) = read_documents(input, Library::Public)?;
    if let Some(first) = bad.first() {
        bail!("{}: {first}", input.display());
    }
    let client = ctx.client();
    let tokenizer = ctx.tokenizer();
    let config = SegmentConfig {
        max_tokens: ctx.config.segment.max_tokens,
    };
    let per_doc: Vec<Vec<ChunkRecord>> = docs
        .par_iter()
        .map(|doc| {
            let chunks = segment(&doc.doc_id, &doc.body, config, &Scorer(client.as_ref()), tokenizer.as_ref())
                .with_context(|| format!("document {}", doc.doc_id))?;
            Ok(chunks.into_iter().map(|c| ChunkRecord::new(c, doc)).collect())
        })
        .collect::<Result<_>>()?;
    let chunks: Vec<ChunkRecord> = per_doc.into_iter().flatten().collect();
    let oversized = chunks.iter().filter(|c| c.oversized).count();
    write_jsonl(out, &chunks)?;
    let result = json!({
        "documents": docs.len(),
        "chunks": chunks.len(),
        "oversized": oversized,
        "output": out,
    });
    run_record(ctx, out, name, &result)?;
    let text = format!(
        "segmented {} documents into {} chunks ({} oversized)\nwrote {}\n",
        docs.len(),
        chunks.len(),
        oversized,
        out.display()
    );
    Ok(Outcome::new(result, text))
}

fn index(ctx: &RunContext, chunks_path: &Path, name: &str) -> Result<Outcome> {
    let chunks: Vec<ChunkRecord> = read_jsonl(chunks_path)?;
    let client = ctx.client();
    let path = &ctx.config.store.path;
    let mut store = if path.exists() {
        let s = ctx.load_store()?;
        if s.model_tag() != client.model_tag() {
            bail!(
                "store {} holds vectors from {:?}, endpoint produces {:?}",
                path.display(),
                s.model_tag(),
                client.model_tag()
            );
        }
        Some(s)
    } else {
        None
    };

    let mut by_partition: BTreeMap<String, Vec<VectorRecord>> = BTreeMap::new();
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        let vectors = client.embed(&texts, &EmbedSide::Document)?;
        for (c, v) in batch.iter().zip(vectors) {
            by_partition.entry(c.partition.clone()).or_default().push(VectorRecord {
                chunk_id: c.chunk_id.clone(),
                vector: v.values,
                model: v.model,
                payload: Payload {
                    doc_id: c.doc_id.clone(),
                    text: c.text.clone(),
                    metadata: c.metadata.clone(),
                },
            });
        }
    }
    let store = match store.take() {
        Some(s) => s,
        None => {
            let dim = by_partition
                .values()
                .flatten()
                .next()
                .map(|r| r.vector.len())
                .unwrap_or(ctx.config.client.dim);
            Collection::new(&ctx.config.store.collection, dim, Metric::Cosine, client.model_tag())
        }
    };
    let mut store = store;
    let mut inserted = 0;
    for (partition, records) in by_partition {
        let key = PartitionKey::parse(&partition).map_err(|e| anyhow!("partition {partition:?}: {e}"))?;
        inserted += store.insert(&key, records)?;
    }
    store.persist(path).with_context(|| format!("cannot write store {}", path.display()))?;
    let partitions: BTreeMap<&str, usize> = store.partitions().map(|p| (p.as_str(), store.partition_len(p))).collect();
    let result = json!({
        "indexed": inserted,
        "total": store.len(),
        "partitions": partitions,
        "store": path,
    });
    run_record(ctx, path, name, &result)?;
    let text = format!(
        "indexed {inserted} chunks; store {} now holds {} vectors in {} partitions\n",
        path.display(),
        store.len(),
        partitions.len()
    );
    Ok(Outcome::new(result, text))
}

fn search(ctx: &RunContext, query: &str, partitions: &[String], top_n: usize, threshold: Option<f64>) -> Result<Outcome> {
    let store = ctx.load_store()?;
    let client = ctx.client();
    let qv = pipeline::embed_query(client.as_ref(), ragforge::clients::instructions::RETRIEVAL, query)?;
    let threshold = threshold.unwrap_or(ctx.config.pipeline.threshold);
    let hits = store.search(&qv, top_n, threshold, &scope(partitions)?)?;
    let mut text = String::new();
    for (i, h) in hits.iter().enumerate() {
        text.push_str(&format!(
            "{:>3}. {:.4}  {}  [{}]  {}\n",
            i + 1,
            h.similarity,
            h.chunk_id,
            h.partition.as_str(),
            preview(&h.payload.text)
        ));
    }
    if hits.is_empty() {
        text.push_str("no results\n");
    }
    Ok(Outcome::new(json!({ "results": hits }), text))
}

fn preview(text: &str) -> String {
    let mut s: String = text.chars().take(80).collect();
    if text.chars().count() > 80 {
        s.push_str("...");
    }
    s
}

fn chat(ctx: &RunContext, query: &str, partitions: &[String], trace: bool) -> Result<Outcome> {
    let store = ctx.load_store()?;
    let client = ctx.client();
    let config = ctx.pipeline_config(partitions)?;
    let (answer, events) = pipeline::answer_query(query, &config, &store, client.as_ref())?;
    if trace {
        let stderr = std::io::stderr();
        let mut lock = stderr.lock();
        for e in &events {
            serde_json::to_writer(&mut lock, e)?;
            lock.write_all(b"\n")?;
        }
    }
    let mut text = format!("{}\n", answer.text);
    if !answer.citations.is_empty() {
        text.push_str(&format!("sources: {}\n", answer.citations.join(", ")));
    }
    Ok(Outcome::new(serde_json::to_value(&answer)?, text))
}

fn mine(
    ctx: &RunContext,
    pairs_path: &Path,
    out: &Path,
    task_type: Option<mining::TaskType>,
    options: &MiningOptions,
    name: &str,
) -> Result<Outcome> {
    let mut pairs = mining::read_pairs(open(pairs_path)?)?;
    if let Some(t) = task_type {
        for p in &mut pairs {
            p.task_type = t;
        }
    }
    let store = ctx.load_store()?;
    let client = ctx.client();
    let mined = mining::mine_for_dataset(&pairs, &store, client.as_ref(), options)?;
    write_jsonl(out, &mined)?;
    let added: usize = mined
        .iter()
        .zip(&pairs)
        .map(|(m, p)| m.negatives.len() - p.negatives.len())
        .sum();
    let result = json!({ "pairs": mined.len(), "mined_negatives": added, "output": out });
    run_record(ctx, out, name, &result)?;
    let text = format!("mined {added} negatives for {} pairs\nwrote {}\n", mined.len(), out.display());
    Ok(Outcome::new(result, text))
}

fn synth(ctx: &RunContext, args: &SynthArgs, name: &str) -> Result<Outcome> {
    let required = |v: &Option<PathBuf>, flag: &str| v.clone().ok_or_else(|| anyhow!("{flag} is required"));
    let docs = required(&args.docs, "--docs")?;
    let lib_path = required(&args.few_shot_lib, "--few-shot-lib")?;
    let out = required(&args.out, "--out")?;

    let chunks: Vec<ChunkRecord> = read_jsonl(&docs)?;
    let sources: Vec<SourceChunk> = chunks
        .into_iter()
        .map(|c| SourceChunk {
            chunk_id: c.chunk_id,
            doc_id: c.doc_id,
            text: c.text,
        })
        .collect();
    let library = FewShotLibrary::from_jsonl(open(&lib_path)?)?;
    let store = ctx.load_store()?;
    let client = ctx.client();
    let config = SynthConfig {
        distractors: args.distractors,
        ratio: args.ratio,
        seed: ctx.seed(),
    };
    let outcome = synthesis::synthesize(&sources, &library, &store, client.as_ref(), &config)?;
    write_jsonl(&out, &outcome.kept)?;
    if let Some(path) = &args.dropped {
        write_jsonl(path, &outcome.dropped)?;
    }
    let unanswerable = outcome.kept.iter().filter(|e| !e.answerable).count();
    let parked: Vec<Value> = outcome
        .parked
        .iter()
        .map(|(e, reason)| json!({ "id": e.id, "reason": reason }))
        .collect();
    let result = json!({
        "sources": sources.len(),
        "kept": outcome.kept.len(),
        "kept_unanswerable": unanswerable,
        "dropped": outcome.dropped.len(),
        "parked": parked,
        "output": out,
    });
    run_record(ctx, &out, name, &result)?;
    let text = format!(
        "generated from {} chunks: kept {} ({} unanswerable), dropped {}, parked {}\nwrote {}\n",
        sources.len(),
        outcome.kept.len(),
        unanswerable,
        outcome.dropped.len(),
        parked.len(),
        out.display()
    );
    Ok(Outcome::new(result, text))
}

fn dpo(ctx: &RunContext, items_path: &Path, threshold: f64, out: &Path, name: &str) -> Result<Outcome> {
    let items: Vec<DpoItem> = read_jsonl(items_path)?;
    let client = ctx.client();
    let pairs = synthesis::build_dpo_pairs(&items, client.as_ref(), threshold)?;
    write_jsonl(out, &pairs)?;
    let result = json!({ "items": items.len(), "pairs": pairs.len(), "threshold": threshold, "output": out });
    run_record(ctx, out, name, &result)?;
    let text = format!("built {} DPO pairs from {} items\nwrote {}\n", pairs.len(), items.len(), out.display());
    Ok(Outcome::new(result, text))
}

fn train(ctx: &RunContext, args: &TrainArgs, name: &str) -> Result<Outcome> {
    let seed = ctx.seed();
    let encoder_config = EncoderConfig {
        dim: args.encoder_dim,
        features: args.features,
    };
    let (pairs, held_out) = match &args.pairs {
        Some(path) => (mining::read_pairs(open(path)?)?, None),
        None => {
            let corpus = two_cluster::generate(args.per_cluster, seed);
            (corpus.train, Some((corpus.queries, corpus.docs)))
        }
    };
    let config = TrainConfig {
        loss: LossSpec {
            kind: args.loss,
            tau: args.tau,
            dims: args.dims.clone(),
        },
        encoder: encoder_config,
        steps: args.steps,
        lr: args.lr,
        batch_size: args.batch_size,
        in_batch_negatives: args.in_batch_negatives.unwrap_or(held_out.is_none()),
        seed,
    };
    let init = ToyEncoder::new(encoder_config, seed);
    let examples: Vec<EncodedExample> = pairs.iter().map(|p| EncodedExample::from_pair(&init, p)).collect();
    let outcome = training::train_toy(&examples, &config)?;

    let mut w = writer(&args.curve)?;
    w.write_all(outcome.loss_curve_csv().as_bytes())?;
    w.flush()?;
    if let Some(path) = &args.out {
        let mut w = writer(path)?;
        serde_json::to_writer(&mut w, &outcome.encoder)?;
        w.flush()?;
    }

    let first = outcome.losses.first().copied();
    let last = outcome.losses.last().copied();
    let mut result = json!({
        "examples": examples.len(),
        "steps": outcome.losses.len(),
        "initial_loss": first,
        "final_loss": last,
        "curve": args.curve,
        "train": config,
    });
    let mut text = format!(
        "trained {} steps on {} examples; loss {} -> {}\n",
        outcome.losses.len(),
        examples.len(),
        first.map_or("n/a".into(), |v| format!("{v:.4}")),
        last.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    if let Some((queries, docs)) = &held_out {
        let before = two_cluster::recall_at_1(&init, queries, docs);
        let after = two_cluster::recall_at_1(&outcome.encoder, queries, docs);
        result["recall_at_1"] = json!({ "before": before, "after": after });
        text.push_str(&format!("held-out cluster recall@1: {before:.3} -> {after:.3}\n"));
    }
    text.push_str(&format!("wrote {}\n", args.curve.display()));
    run_record(ctx, &args.curve, name, &result)?;
    Ok(Outcome::new(result, text))
}

fn eval(ctx: &RunContext, set: &Path, ks: &[usize], dir: &Path, partitions: &[String]) -> Result<Outcome> {
    let items = read_eval_set(open(set)?)?;
    let store = ctx.load_store()?;
    let client = ctx.client();
    let config = ctx.pipeline_config(partitions)?;
    let mut report = evaluation::evaluate(&items, &store, client.as_ref(), &config, ks)?;
    report.config = json!({ "pipeline": report.config, "run": ctx.echo(), "ks": ks });
    report.check()?;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let written = evaluation::emit_report(&report, dir)?;
    let mut text = String::new();
    for p in &report.recall.points {
        text.push_str(&format!("recall@{:<3} {:.3}\n", p.k, p.rate));
    }
    text.push_str(&format!("answer recall {:.3}\n", report.answer_recall));
    for path in &written {
        text.push_str(&format!("wrote {}\n", path.display()));
    }
    let result = json!({
        "items": report.items,
        "recall": report.recall,
        "answer_recall": report.answer_recall,
        "files": written,
    });
    Ok(Outcome::new(result, text))
}
