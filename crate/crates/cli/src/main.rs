use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use astmem::config::{Ablation, Config};
use astmem::eval::{aggregate, load_tasks, load_transcripts, Bench, Task};
use astmem::gateway::{
    CompletionBackend, EmbeddingBackend, Gateway, HashingEmbedder, HttpCompletion, HttpEmbedding,
    ScriptedCompletion,
};
use astmem::index::{index_repository, BlockIndex};
use astmem::orchestrator::{run_round, run_session_with_index, SessionState, Transcript};
use astmem::runner::CommandRunner;
use astmem::store::{load_store, resume, save_store, to_canonical_json};

#[derive(Parser)]
#[command(name = "astmem", version, about = "Repository memory for iterative code generation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Disable a memory component; repeatable.
    #[arg(long = "ablate", value_name = "ctxmem|ctxast|sessast", global = true)]
    ablations: Vec<Ablation>,
    /// JSON script of completions; replaces the HTTP backends and uses the
    /// hashing embedder.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Overrides the instruction-similarity threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Overrides the number of retrieved blocks per query.
    #[arg(long, global = true)]
    top_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Index a repository and print one JSON line per block.
    Index { root: PathBuf },
    /// Replay a benchmark file and write transcripts plus a metrics report.
    Replay(ReplayArgs),
    /// Interactive session over a repository.
    Chat(ChatArgs),
    /// Recompute metrics from a directory of transcripts.
    Eval {
        #[arg(long)]
        transcripts: PathBuf,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print the contents of a memory store.
    Inspect {
        #[arg(long)]
        store: PathBuf,
        /// Print the canonical JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    bench: Bench,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory holding the task repositories; defaults to the directory of
    /// the data file.
    #[arg(long)]
    repos: Option<PathBuf>,
    /// Test command template; `{test}` is replaced with the test id.
    #[arg(long)]
    runner_cmd: Option<String>,
    /// Tasks run in parallel; forced to 1 with a mock script.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    repo: PathBuf,
    /// Namespace of the function being developed.
    #[arg(long)]
    target: String,
    /// Store file; resumed when it exists and saved after every round.
    #[arg(long)]
    store: Option<PathBuf>,
}

/// Backends shared by every session of one invocation. Each session gets its
/// own `Gateway` so token counts stay per task.
struct Backends {
    completion: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    scripted: bool,
}

impl Backends {
    fn from_config(config: &Config, mock_script: Option<&Path>) -> Result<Self> {
        if let Some(path) = mock_script {
            return Ok(Self {
                completion: Arc::new(ScriptedCompletion::from_file(path)?),
                embedder: Arc::new(HashingEmbedder::default()),
                scripted: true,
            });
        }
        let g = &config.gateway;
        let timeout = Duration::from_secs(g.timeout_secs);
        let embedding_url = g.embedding_base_url.as_deref().unwrap_or(&g.base_url);
        Ok(Self {
            completion: Arc::new(HttpCompletion::new(&g.base_url, &g.model, &g.api_key_env, timeout)?),
            embedder: Arc::new(HttpEmbedding::new(embedding_url, &g.embedding_model, &g.api_key_env, timeout)?),
            scripted: false,
        })
    }

    fn gateway(&self) -> Gateway {
        Gateway::new(self.completion.clone(), self.embedder.clone())
    }
}

fn load_config(global: &GlobalArgs) -> Result<Config> {
    let mut config = match &global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.ablations.extend(global.ablations.iter().copied());
    if let Some(tau) = global.tau {
        config.tau = tau;
    }
    if let Some(k) = global.top_k {
        config.top_k = k;
    }
    config.validate()?;
    Ok(config)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { root } => {
            let config = load_config(&cli.global)?;
            let index = index_repository(&root, &config.include)?;
            let mut out = io::stdout().lock();
            for line in index.manifest_lines() {
                writeln!(out, "{line}")?;
            }
            for d in &index.diagnostics {
                log::warn!("{}: {}", d.file_path, d.message);
            }
            Ok(())
        }
        Command::Replay(args) => replay(&cli.global, args),
        Command::Chat(args) => chat(&cli.global, args),
        Command::Eval { transcripts, json } => {
            let report = aggregate(&load_transcripts(&transcripts)?);
            print!("{}", if json { report.to_json() } else { report.to_table() });
            Ok(())
        }
        Command::Inspect { store, json } => inspect(&store, json),
    }
}

fn replay(global: &GlobalArgs, args: ReplayArgs) -> Result<()> {
    let config = load_config(global)?;
    let backends = Backends::from_config(&config, global.mock_script.as_deref())?;
    let tasks = load_tasks(args.bench, &args.data)?;
    let repos = match args.repos {
        Some(dir) => dir,
        None => args.data.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let command = args.runner_cmd.unwrap_or_else(|| config.runner.command.clone());
    let runner = CommandRunner::new(command, config.runner.timeout());
    let transcript_dir = args.out.join("transcripts");
    std::fs::create_dir_all(&transcript_dir)
        .with_context(|| format!("cannot create {}", transcript_dir.display()))?;

    let indexes: Mutex<HashMap<PathBuf, Arc<BlockIndex>>> = Mutex::default();
    let index_for = |task: &Task| -> Result<Arc<BlockIndex>> {
        let root = repos.join(&task.repo);
        if let Some(index) = indexes.lock().unwrap().get(&root) {
            return Ok(index.clone());
        }
        let index = Arc::new(
            index_repository(&root, &config.include).with_context(|| format!("indexing {}", root.display()))?,
        );
        indexes.lock().unwrap().insert(root, index.clone());
        Ok(index)
    };
    let run_task = |task: &Task| -> Result<Transcript> {
        let transcript = run_session_with_index(&config, index_for(task)?, task, &runner, &backends.gateway())
            .with_context(|| format!("task {}", task.id))?;
        let file = transcript_dir.join(format!("{}.json", sanitize(&task.id)));
        std::fs::write(&file, to_canonical_json(&transcript))
            .with_context(|| format!("cannot write {}", file.display()))?;
        log::info!("task {} done in {} rounds", task.id, transcript.rounds.len());
        Ok(transcript)
    };

    // A script is consumed in call order, so scripted replays stay sequential.
    let jobs = if backends.scripted { 1 } else { args.jobs.max(1) };
    let results: Vec<Result<Transcript>> = if jobs == 1 {
        tasks.iter().map(run_task).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()?
            .install(|| tasks.par_iter().map(run_task).collect())
    };
    let mut transcripts = Vec::new();
    let mut failures = 0;
    for result in results {
        match result {
            Ok(t) => transcripts.push(t),
            Err(e) => {
                failures += 1;
                eprintln!("error: {e:#}");
            }
        }
    }
    let report = aggregate(&transcripts);
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, report.to_json())
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    print!("{}", report.to_table());
    if failures > 0 {
        bail!("{failures} of {} tasks failed", tasks.len());
    }
    Ok(())
}

/// Task ids may contain path separators.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

fn chat(global: &GlobalArgs, args: ChatArgs) -> Result<()> {
    let config = load_config(global)?;
    let gateway = Backends::from_config(&config, global.mock_script.as_deref())?.gateway();
    let index = Arc::new(index_repository(&args.repo, &config.include)?);
    let mut state = match &args.store {
        Some(path) if path.exists() => {
            let state = resume(path, index, config)?;
            if state.target != args.target {
                bail!("store {} is for {}, not {}", path.display(), state.target, args.target);
            }
            eprintln!("resumed {} at round {}", path.display(), state.round);
            state
        }
        _ => SessionState::new(index, config, &args.target),
    };

    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    writeln!(out, "astmem chat on {}; empty line or :quit to exit", args.target)?;
    for line in stdin.lock().lines() {
        let instruction = line?;
        let instruction = instruction.trim();
        if instruction.is_empty() || instruction == ":quit" || instruction == ":q" {
            break;
        }
        let record = match run_round(&mut state, instruction, &gateway) {
            Ok(record) => record,
            Err(e) => {
                writeln!(out, "round failed: {e}")?;
                continue;
            }
        };
        writeln!(out, "--- round {} ---", record.round)?;
        writeln!(out, "{}", record.final_code.trim_end())?;
        if !record.conflicts.is_empty() {
            writeln!(
                out,
                "conflicts (regenerated {} time(s)):\n{}",
                record.regenerations,
                record.conflicts.render()
            )?;
        }
        writeln!(out, "retained: {}", record.retained.join(", "))?;
        for d in &record.diagnostics {
            writeln!(out, "note: {d}")?;
        }
        if let Some(path) = &args.store {
            save_store(&state, path)?;
        }
    }
    Ok(())
}

fn inspect(path: &Path, json: bool) -> Result<()> {
    let snapshot = load_store(path)?;
    let mut out = io::stdout().lock();
    if json {
        write!(out, "{}", snapshot.to_canonical_json())?;
        return Ok(());
    }
    writeln!(out, "target: {}", snapshot.target)?;
    writeln!(out, "round: {}", snapshot.round)?;
    writeln!(out, "config hash: {}", snapshot.config_hash)?;
    writeln!(out, "context memory ({} blocks):", snapshot.context_memory.len())?;
    for entry in &snapshot.context_memory {
        writeln!(out, "  [round {}] {} ({})", entry.round_added, entry.namespace, entry.file_path)?;
        for line in entry.memory_key.render().lines() {
            writeln!(out, "      {line}")?;
        }
    }
    for seq in snapshot.session_memory.sequences() {
        writeln!(out, "session memory for {} ({} blocks):", seq.namespace, seq.len())?;
        for block in &seq.blocks {
            writeln!(out, "  #{} {}", block.id, block.instruction)?;
            if !block.note.is_empty() {
                writeln!(out, "      note: {}", block.note)?;
            }
            for node in &block.diff.added {
                writeln!(out, "      + {}: {}", node.node_type, node.canonical_text)?;
            }
            for node in &block.diff.removed {
                writeln!(out, "      - {}: {}", node.node_type, node.canonical_text)?;
            }
            if !block.links.is_empty() {
                let links: Vec<_> = block.links.iter().map(u32::to_string).collect();
                writeln!(out, "      links: {}", links.join(", "))?;
            }
        }
    }
    Ok(())
}
