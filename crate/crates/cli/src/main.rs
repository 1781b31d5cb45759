//! `storyloom`: command-line front end over a project directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use storyloom_core::batch_format::serialize_batch;
use storyloom_core::bsv::{to_dot, to_json, BsvGraph, ViewKind};
use storyloom_core::dimensions::{ExtractionMode, ExtractionRequest, DEFAULT_INDUCED_DIMENSIONS};
use storyloom_core::oracle::{ChatCompletionsBackend, Gateway, LiveConfig, MockBackend};
use storyloom_core::player_sim::{ProfileRegistry, DEFAULT_PLAYTHROUGHS, DEFAULT_ROUNDS};
use storyloom_core::{BatchId, DimensionId, Rule, Storyworld};
use storyloom_service::store::{load_project, save_project, write_atomic, ProjectHandle};
use storyloom_service::{AppState, Project, ProjectStore};

const CACHE_FILE: &str = "cache.json";

#[derive(Parser)]
#[command(name = "storyloom", version, about = "Simulate playthroughs, induce narrative dimensions and build branching storyline graphs")]
struct Cli {
    /// Project directory.
    #[arg(long, global = true, env = "STORYLOOM_PROJECT", default_value = ".")]
    project: PathBuf,
    /// Answer model calls from a directory of mock fixtures instead of the network.
    #[arg(long, global = true, env = "STORYLOOM_MOCK_FIXTURES")]
    mock_fixtures: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project from a storyworld file and optional rules file.
    Init {
        #[arg(long)]
        storyworld: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Simulate a batch of playthroughs with player models.
    Simulate {
        #[arg(long, default_value_t = DEFAULT_PLAYTHROUGHS)]
        count: usize,
        #[arg(long, default_value_t = DEFAULT_ROUNDS)]
        rounds: u32,
        /// Comma-separated player profiles, assigned round-robin.
        #[arg(long, value_delimiter = ',')]
        profiles: Vec<String>,
    },
    /// Append a batch file of playthroughs.
    Upload { file: PathBuf },
    #[command(subcommand)]
    Dimensions(DimensionsCommand),
    /// Re-classify a batch under one dimension.
    Classify {
        #[arg(long)]
        dim: String,
        #[arg(long)]
        batch: Option<u64>,
    },
    /// Build a storyline graph.
    Bsv {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        batch: Option<u64>,
        /// Attach the previous batch as an overlay.
        #[arg(long)]
        compare: bool,
    },
    /// Graph of batch `--to` with batch `--from` as the overlay.
    DiffBatches {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
    },
    /// Serve the REST API over every project under a root directory.
    Serve {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "STORYLOOM_TOKEN")]
        token: Option<String>,
    },
}

#[derive(Args)]
struct GraphArgs {
    /// One or two comma-separated dimensions.
    #[arg(long, alias = "dim", value_delimiter = ',', required = true)]
    dims: Vec<String>,
    #[arg(long)]
    view: Option<ViewKind>,
    #[arg(long, default_value = "json")]
    out: OutFormat,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OutFormat {
    Json,
    Dot,
}

#[derive(Subcommand)]
enum DimensionsCommand {
    /// Propose dimensions from the data.
    Induce {
        #[arg(short, long, default_value_t = DEFAULT_INDUCED_DIMENSIONS)]
        k: usize,
        #[arg(long)]
        batch: Option<u64>,
    },
    /// Define a dimension by hand.
    Define {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Suggest dimension names from the data.
    Suggest {
        #[arg(short, long, default_value_t = DEFAULT_INDUCED_DIMENSIONS)]
        k: usize,
        #[arg(long)]
        batch: Option<u64>,
    },
    /// Name a dimension and let the data supply its values.
    InduceValues {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long)]
        batch: Option<u64>,
    },
    List,
    /// Replace a dimension's values and re-classify.
    Edit {
        #[arg(long)]
        dim: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn gateway(cli: &Cli) -> Result<Gateway> {
    let gw = match &cli.mock_fixtures {
        Some(dir) => Gateway::new(Arc::new(
            MockBackend::load_dir(dir).map_err(anyhow::Error::msg).context("loading mock fixtures")?,
        )),
        None => {
            let config = LiveConfig::from_env()?;
            let max = config.max_in_flight;
            Gateway::new(Arc::new(ChatCompletionsBackend::new(config))).with_max_in_flight(max)
        }
    };
    Ok(gw)
}

fn load_cache(dir: &Path, gw: &Gateway) -> Result<()> {
    let path = dir.join(CACHE_FILE);
    if path.exists() {
        let entries: Vec<(String, String)> = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .with_context(|| format!("{}: unreadable cache", path.display()))?;
        gw.load_cache(entries);
    }
    Ok(())
}

fn save_cache(dir: &Path, gw: &Gateway) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&gw.cache_snapshot())?;
    text.push('\n');
    write_atomic(&dir.join(CACHE_FILE), text.as_bytes())?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn dim_ids(names: &[String]) -> Vec<DimensionId> {
    names.iter().map(DimensionId::new).collect()
}

fn default_view(g: &GraphArgs) -> ViewKind {
    g.view
        .unwrap_or(if g.dims.len() == 2 { ViewKind::Grid2d } else { ViewKind::Timeline1d })
}

fn render(g: &BsvGraph, out: OutFormat) -> String {
    match out {
        OutFormat::Json => to_json(g),
        OutFormat::Dot => to_dot(g),
    }
}

fn extraction(mode: ExtractionMode, batch: Option<u64>) -> ExtractionRequest {
    ExtractionRequest {
        batch_id: batch.map(BatchId),
        mode,
        name: None,
        description: None,
        values: None,
        k: DEFAULT_INDUCED_DIMENSIONS,
    }
}

fn init(cli: &Cli, storyworld: &Path, rules: Option<&Path>) -> Result<String> {
    if cli.project.join(storyloom_service::store::PROJECT_FILE).exists() {
        bail!("{} already holds a project", cli.project.display());
    }
    let id = std::fs::canonicalize(&cli.project)
        .unwrap_or_else(|_| cli.project.clone())
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("project")
        .to_string();
    let mut p = Project::new(id);
    p.set_storyworld(read_json::<Storyworld>(storyworld)?)?;
    if let Some(r) = rules {
        for rule in read_json::<Vec<Rule>>(r)? {
            p.add_rule(rule)?;
        }
    }
    save_project(&cli.project, &p)?;
    Ok(format!("initialized {}\n", cli.project.display()))
}

fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Init { storyworld, rules } => return init(cli, storyworld, rules.as_deref()),
        Command::Serve { root, port, token } => return serve(cli, root, *port, token.clone()),
        _ => {}
    }
    let project = load_project(&cli.project)
        .with_context(|| format!("no project at {} (run `storyloom init`)", cli.project.display()))?;
    let h = ProjectHandle::new(cli.project.clone(), project);
    let gw = gateway(cli)?;
    load_cache(&cli.project, &gw)?;
    let out = command(cli, &h, &gw);
    save_cache(&cli.project, &gw)?;
    out
}

fn command(cli: &Cli, h: &ProjectHandle, gw: &Gateway) -> Result<String> {
    match &cli.command {
        Command::Init { .. } | Command::Serve { .. } => unreachable!(),
        Command::Simulate { count, rounds, profiles } => {
            let registry = ProfileRegistry::default();
            let out = h.write(|p| {
                let mut spec = p.simulation_spec()?;
                spec.playthroughs_per_request = *count;
                spec.rounds_per_playthrough = *rounds;
                spec.seed = cli.seed;
                if !profiles.is_empty() {
                    spec.profiles = profiles.clone();
                }
                p.simulate(&spec, &registry, gw)
            })?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            Ok(serialize_batch(h.snapshot().batch(out.batch_id)?))
        }
        Command::Upload { file } => {
            let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
            pretty(&h.write(|p| p.upload_batch(&bytes, gw))?)
        }
        Command::Dimensions(d) => dimensions(d, h, gw),
        Command::Classify { dim, batch } => {
            let (asg, warnings) = h.write(|p| p.reclassify(dim, batch.map(BatchId), gw))?;
            pretty(&json!({ "assignment": asg, "warnings": warnings }))
        }
        Command::Bsv { graph, batch, compare } => {
            let g = h.snapshot().graph(&dim_ids(&graph.dims), batch.map(BatchId), default_view(graph), *compare)?;
            Ok(render(&g, graph.out))
        }
        Command::DiffBatches { graph, from, to } => {
            let g = h
                .snapshot()
                .diff_batches(&dim_ids(&graph.dims), BatchId(*from), BatchId(*to), default_view(graph))?;
            Ok(render(&g, graph.out))
        }
    }
}

fn dimensions(d: &DimensionsCommand, h: &ProjectHandle, gw: &Gateway) -> Result<String> {
    let req = match d {
        DimensionsCommand::List => return pretty(&h.snapshot().dimensions),
        DimensionsCommand::Edit { dim, values } => {
            return pretty(&h.write(|p| p.edit_value_schema(dim, values.clone(), gw))?);
        }
        DimensionsCommand::Induce { k, batch } => ExtractionRequest {
            k: *k,
            ..extraction(ExtractionMode::DataDerived, *batch)
        },
        DimensionsCommand::Suggest { k, batch } => ExtractionRequest {
            k: *k,
            ..extraction(ExtractionMode::MixedNamesFromData, *batch)
        },
        DimensionsCommand::Define {
            name,
            description,
            values,
        } => ExtractionRequest {
            name: Some(name.clone()),
            description: Some(description.clone()),
            values: Some(values.clone()),
            ..extraction(ExtractionMode::Author, None)
        },
        DimensionsCommand::InduceValues {
            name,
            description,
            batch,
        } => ExtractionRequest {
            name: Some(name.clone()),
            description: Some(description.clone()),
            ..extraction(ExtractionMode::MixedValuesFromData, *batch)
        },
    };
    pretty(&h.write(|p| p.extract_dimensions(&req, gw))?)
}

fn serve(cli: &Cli, root: &Path, port: u16, token: Option<String>) -> Result<String> {
    let state = AppState::new(ProjectStore::new(root), gateway(cli)?).with_token(token);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        storyloom_service::serve(listener, state).await
    })?;
    Ok(String::new())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn graph_args_pick_the_view_from_the_arity() {
        let cli = Cli::parse_from(["storyloom", "bsv", "--dims", "a,b"]);
        let Command::Bsv { graph, .. } = &cli.command else { panic!() };
        assert_eq!(graph.dims, ["a", "b"]);
        assert_eq!(default_view(graph), ViewKind::Grid2d);
        let cli = Cli::parse_from(["storyloom", "bsv", "--dims", "a", "--view", "compact"]);
        let Command::Bsv { graph, .. } = &cli.command else { panic!() };
        assert_eq!(default_view(graph), ViewKind::Compact1d);
    }

    #[test]
    fn simulate_defaults() {
        let cli = Cli::parse_from(["storyloom", "--seed", "7", "simulate"]);
        assert_eq!(cli.seed, 7);
        let Command::Simulate { count, rounds, profiles } = cli.command else { panic!() };
        assert_eq!((count, rounds), (DEFAULT_PLAYTHROUGHS, DEFAULT_ROUNDS));
        assert!(profiles.is_empty());
    }
}
