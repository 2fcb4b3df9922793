use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ragforge::mining::TaskType;
use ragforge::training::LossKind;

use crate::config::Overrides;

/// Build, query and evaluate a retrieval-augmented generation stack.
#[derive(Debug, Parser)]
#[command(name = "ragforge", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file [env: RAGFORGE_CONFIG]
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Vector store file
    #[arg(long, global = true, value_name = "FILE")]
    pub store: Option<PathBuf>,
    /// Collection name recorded in a new store
    #[arg(long, global = true)]
    pub collection: Option<String>,
    /// Model endpoint URL, or "stub" for the built-in deterministic models
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model tag reported by a remote endpoint
    #[arg(long, global = true)]
    pub model_tag: Option<String>,
    /// Stub embedding dimension
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Tokenizer: wordpunct or whitespace
    #[arg(long, global = true)]
    pub tokenizer: Option<String>,
    /// Seed for every random choice; a generated seed is recorded when absent
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical CPUs)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print one JSON object on stdout instead of text
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and clean a JSON Lines corpus
    Ingest {
        /// Corpus file, one document per line
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Cleaned corpus output
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Put documents without a user_id in this user's library instead of the public one
        #[arg(long)]
        user: Option<String>,
    },
    /// Split cleaned documents into chunks
    Segment {
        /// Cleaned corpus file
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Chunk output, one chunk per line
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Token budget per chunk
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Embed chunks and add them to the store
    Index {
        /// Chunk file produced by `segment`
        #[arg(long, value_name = "FILE")]
        chunks: PathBuf,
    },
    /// Nearest chunks for a query, without rerank or generation
    Search {
        /// Query text
        #[arg(long)]
        query: String,
        /// Partition to search; repeat for several (default: public)
        #[arg(long)]
        partition: Vec<String>,
        /// Number of results
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        /// Minimum similarity (default: pipeline threshold)
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Answer a question from the store
    Chat {
        /// Question to answer
        #[arg(long)]
        query: String,
        /// Partition in scope; repeat for several (default: public)
        #[arg(long)]
        partition: Vec<String>,
        /// Chunks kept after rerank
        #[arg(long)]
        top_k: Option<usize>,
        /// Similarity threshold applied before rerank
        #[arg(long)]
        threshold: Option<f64>,
        /// Vector candidates passed to rerank
        #[arg(long)]
        retrieve_n: Option<usize>,
        /// Print per-stage trace events as JSON lines on stderr
        #[arg(long)]
        trace: bool,
    },
    /// Top up training pairs with SimANS hard negatives from the store
    Mine {
        /// Training-pair file
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Mined pair output
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Override every pair's task type: qa, rerank or sts
        #[arg(long)]
        task_type: Option<TaskType>,
        /// Negatives per pair after mining
        #[arg(long, default_value_t = ragforge::mining::DEFAULT_MIN_NEGATIVES)]
        min_negatives: usize,
        /// Sampling sharpness, or "auto" for the task default
        #[arg(long, default_value = "auto")]
        sigma: String,
        /// Store candidates considered per query
        #[arg(long, default_value_t = ragforge::mining::DEFAULT_POOL_SIZE)]
        pool_size: usize,
    },
    /// Generate synthetic QA examples, or DPO pairs with `synth dpo`
    Synth(SynthArgs),
    /// Train the toy encoder and write its loss curve
    TrainToy(TrainArgs),
    /// Score the pipeline on an evaluation set
    Eval {
        /// Evaluation set, one item per line
        #[arg(long, value_name = "FILE")]
        set: PathBuf,
        /// Cutoffs for recall@k
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,8,32,64")]
        ks: Vec<usize>,
        /// Report directory
        #[arg(long, value_name = "DIR")]
        report: PathBuf,
        /// Partition in scope; repeat for several (default: public)
        #[arg(long)]
        partition: Vec<String>,
    },
    /// Print the command-line reference as Markdown
    Reference,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub action: Option<SynthAction>,
    /// Chunk file to generate from
    #[arg(long, value_name = "FILE", required = true)]
    pub docs: Option<PathBuf>,
    /// Few-shot library, one example per line
    #[arg(long, value_name = "FILE", required = true)]
    pub few_shot_lib: Option<PathBuf>,
    /// Answerable examples per unanswerable one
    #[arg(long, default_value_t = ragforge::synthesis::DEFAULT_RATIO)]
    pub ratio: usize,
    /// Distractor chunks per example
    #[arg(long, default_value_t = ragforge::synthesis::DEFAULT_DISTRACTORS)]
    pub distractors: usize,
    /// Kept examples output
    #[arg(long, value_name = "FILE", required = true)]
    pub out: Option<PathBuf>,
    /// Also write examples rejected by the quality filter here
    #[arg(long, value_name = "FILE")]
    pub dropped: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthAction {
    /// Build chosen/rejected context pairs from judged candidates
    Dpo {
        /// Items with a question and candidate contexts, one per line
        #[arg(long, value_name = "FILE")]
        items: PathBuf,
        /// Chosen contexts must score above this
        #[arg(long, default_value_t = ragforge::synthesis::DPO_THRESHOLD)]
        threshold: f64,
        /// DPO pair output
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training-pair file (default: the built-in two-cluster corpus)
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    /// Loss: infonce, mnr or matryoshka
    #[arg(long, default_value = "infonce")]
    pub loss: LossKind,
    /// Temperature for infonce and matryoshka
    #[arg(long, default_value_t = ragforge::training::DEFAULT_TAU)]
    pub tau: f64,
    /// Matryoshka prefix dimensions, increasing
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Optimizer steps
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Pairs per batch
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Encoder output dimension
    #[arg(long, default_value_t = 32)]
    pub encoder_dim: usize,
    /// Hashed input features
    #[arg(long, default_value_t = 256)]
    pub features: usize,
    /// Use other examples' positives as negatives (default: on for --pairs, off for the built-in corpus)
    #[arg(long)]
    pub in_batch_negatives: Option<bool>,
    /// Training pairs per cluster for the built-in corpus
    #[arg(long, default_value_t = 64)]
    pub per_cluster: usize,
    /// Loss curve CSV output
    #[arg(long, value_name = "FILE", default_value = "loss.csv")]
    pub curve: PathBuf,
    /// Trained encoder weights as JSON
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

impl Cli {
    /// Flag layer of the configuration.
    pub fn overrides(&self) -> Overrides {
        let g = &self.global;
        let mut o = Overrides {
            store: g.store.clone(),
            collection: g.collection.clone(),
            endpoint: g.endpoint.clone(),
            model_tag: g.model_tag.clone(),
            dim: g.dim,
            tokenizer: g.tokenizer.clone(),
            seed: g.seed,
            jobs: g.jobs,
            ..Overrides::default()
        };
        match &self.command {
            Command::Segment { max_tokens, .. } => o.max_tokens = *max_tokens,
            Command::Chat {
                top_k,
                threshold,
                retrieve_n,
                ..
            } => {
                o.top_k = *top_k;
                o.threshold = *threshold;
                o.retrieve_n = *retrieve_n;
            }
            _ => {}
        }
        o
    }

    pub fn name(&self) -> &'static str {
        match &self.command {
            Command::Ingest { .. } => "ingest",
            Command::Segment { .. } => "segment",
            Command::Index { .. } => "index",
            Command::Search { .. } => "search",
            Command::Chat { .. } => "chat",
            Command::Mine { .. } => "mine",
            Command::Synth(SynthArgs { action: Some(_), .. }) => "synth dpo",
            Command::Synth(_) => "synth",
            Command::TrainToy(_) => "train-toy",
            Command::Eval { .. } => "eval",
            Command::Reference => "reference",
        }
    }
}
