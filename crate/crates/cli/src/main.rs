//! `hetero-rlhf`: simulate or ingest preference data, learn worker
//! embeddings, cluster workers, and compare clustered against pooled reward
//! models. Every subcommand writes its artifacts under `--out`.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artifacts::Artifacts;
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit code 2).
    Config(String),
    /// A pipeline stage failed (exit code 1, or 2 when the cause is an
    /// invalid setting such as K > N).
    Stage {
        stage: &'static str,
        source: hetero_rlhf::Error,
    },
    Io(String),
}

impl CliError {
    pub fn stage(stage: &'static str, source: hetero_rlhf::Error) -> Self {
        Self::Stage { stage, source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Stage {
                source: hetero_rlhf::Error::InvalidConfig(_),
                ..
            } => 2,
            Self::Stage { .. } | Self::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Stage { stage, source } => write!(f, "stage `{stage}` failed: {source}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hetero-rlhf", version, about = "Clustered reward models from heterogeneous preference data")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration; omitted blocks use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of clusters.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its ground truth.
    Simulate,
    /// Read JSONL preferences; with --test, keep only workers in both files.
    Ingest {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Per-worker stratified train/test split.
    Split {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Learn the shared backbone and one embedding per worker.
    TrainJoint {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Cosine similarity and PCA projections of worker embeddings.
    Similarity {
        #[arg(long)]
        model: PathBuf,
    },
    /// Spherical k-means on worker embeddings.
    Cluster {
        #[arg(long)]
        model: PathBuf,
    },
    /// Alternate per-cluster fits and worker reassignment.
    TrainClusters {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Starting assignment instead of the configured initialization.
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// One pooled reward model for all workers.
    TrainNaive {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// KL-regularized policies per cluster over candidate sets.
    Policy {
        #[arg(long)]
        model: PathBuf,
    },
    /// Win-rates of the pooled and per-cluster models on test data.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        naive: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
    },
    /// Every stage end to end, plus a manifest of artifact hashes.
    Pipeline,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let cfg = RunConfig::load(g.config.as_deref())?.resolve(g.seed, g.out, g.k)?;
    let req = |p: PathBuf, flag: &str| commands::require(Some(p), flag);
    let mut art = Artifacts::new(&cfg.out_dir())?;
    match cli.command {
        Command::Simulate => commands::stage_simulate(&cfg, &mut art).map(|_| ()),
        Command::Ingest { train, test } => commands::cmd_ingest(&cfg, train, test, &mut art),
        Command::Split { corpus } => commands::cmd_split(&cfg, &req(corpus, "--corpus")?, &mut art),
        Command::TrainJoint { corpus } => commands::cmd_train_joint(&cfg, &req(corpus, "--corpus")?, &mut art),
        Command::Similarity { model } => commands::cmd_similarity(&req(model, "--model")?, &mut art),
        Command::Cluster { model } => commands::cmd_cluster(&cfg, &req(model, "--model")?, &mut art),
        Command::TrainClusters {
            corpus,
            model,
            assignment,
        } => {
            let assignment = assignment.map(|a| req(a, "--assignment")).transpose()?;
            commands::cmd_train_clusters(
                &cfg,
                &req(corpus, "--corpus")?,
                &req(model, "--model")?,
                assignment.as_deref(),
                &mut art,
            )
        }
        Command::TrainNaive { corpus } => commands::cmd_train_naive(&cfg, &req(corpus, "--corpus")?, &mut art),
        Command::Policy { model } => commands::cmd_policy(&cfg, &req(model, "--model")?, &mut art),
        Command::Evaluate {
            corpus,
            model,
            naive,
            assignment,
        } => {
            let table = commands::cmd_evaluate(
                &cfg,
                &req(corpus, "--corpus")?,
                &req(model, "--model")?,
                &req(naive, "--naive")?,
                &req(assignment, "--assignment")?,
                &mut art,
            )?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Pipeline => {
            let table = commands::pipeline(&cfg, &mut art)?;
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.global.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::Io(format!("thread pool: {e}"))),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
