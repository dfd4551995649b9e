//! Command-line front end: corpus generation, pretraining, domain-embedding
//! inspection, in-context inference, evaluation, ablations, and self tests.
//!
//! Exit codes: 0 success, 1 input/validation error, 2 numeric/training
//! failure.

pub mod commands;
pub mod config;
pub mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "gia", version, about = "Few-shot in-context classification on graphs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain corpus from a spec file.
    GenSynth {
        /// Corpus spec file (`key = value`, see README).
        spec: PathBuf,
        #[arg(long, default_value = "gia-out")]
        out: PathBuf,
    },
    /// Two-stage episodic pretraining over a corpus directory.
    Pretrain {
        /// Directory holding `.gia` graph files.
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "gia-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Print the fully resolved configuration and exit.
        #[arg(long)]
        show_config: bool,
    },
    /// Compute the in-context domain embedding of a support set.
    Embed {
        bundle: PathBuf,
        graph: PathBuf,
        /// Support file: one `node_id class_id` pair per line.
        support: PathBuf,
        #[arg(long, default_value = "gia-out")]
        out: PathBuf,
    },
    /// Parameter-update-free prediction on a graph given a support file.
    Infer {
        bundle: PathBuf,
        graph: PathBuf,
        support: PathBuf,
        /// Query node ids, one per line; defaults to all non-support nodes.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value = "dpaa-only")]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "gia-out")]
        out: PathBuf,
        /// Also dump the full score matrix in binary form.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Episodic few-shot evaluation; writes metrics.csv.
    Eval {
        bundle: PathBuf,
        graph: PathBuf,
        #[arg(long, default_value_t = 5)]
        way: usize,
        /// Comma-separated shot settings, e.g. `1,3,5`.
        #[arg(long, default_value = "1,5", value_delimiter = ',')]
        shots: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        queries: usize,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `dpaa-only`, `+prototypes`, `+adaptive`, `+refine`, or `all`.
        #[arg(long, default_value = "dpaa-only")]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "gia-out")]
        out: PathBuf,
    },
    /// Compare all inference modes (and bundles, when several are given).
    Ablate {
        /// One or more model bundles.
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 5)]
        way: usize,
        #[arg(long, default_value = "1,5", value_delimiter = ',')]
        shots: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        queries: usize,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "gia-out")]
        out: PathBuf,
    },
    /// Run the gradient-check and oracle suites.
    Selftest,
}

/// Parse arguments, dispatch, and map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::GenSynth { spec, out } => commands::cmd_gen_synth(&spec, &out),
        Command::Pretrain { corpus, config, out, seed, episodes, show_config } => {
            commands::cmd_pretrain(&corpus, config.as_deref(), &out, seed, episodes, show_config)
        }
        Command::Embed { bundle, graph, support, out } => {
            commands::cmd_embed(&bundle, &graph, &support, &out)
        }
        Command::Infer { bundle, graph, support, queries, mode, config, out, scores_out } => {
            commands::cmd_infer(
                &bundle,
                &graph,
                &support,
                queries.as_deref(),
                &mode,
                config.as_deref(),
                &out,
                scores_out.as_deref(),
            )
        }
        Command::Eval { bundle, graph, way, shots, queries, episodes, seed, mode, config, jobs, out } => {
            commands::cmd_eval(
                &bundle,
                &graph,
                way,
                &shots,
                queries,
                episodes,
                seed,
                &mode,
                config.as_deref(),
                jobs,
                &out,
            )
        }
        Command::Ablate { bundles, graph, way, shots, queries, episodes, seed, jobs, out } => {
            commands::cmd_ablate(&bundles, &graph, way, &shots, queries, episodes, seed, jobs, &out)
        }
        Command::Selftest => commands::cmd_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
