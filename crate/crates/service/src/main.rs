use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use uifeedback_service::server::{self, AppState};
use uifeedback_service::{open, run_job, Config, JobKind, JobSpec, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "uifeedback", version, about = "Designer-feedback preference pipeline")]
struct Cli {
    /// TOML config file; `UIFEEDBACK_*` variables override it.
    #[arg(long, short, env = "UIFEEDBACK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    store_dir: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct JobArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `key=value`; the value is read as JSON when it parses, else as a string.
    #[arg(short = 'p', long = "param", value_parser = parse_param)]
    params: Vec<(String, Value)>,
    /// A JSON object of parameters, merged before `--param`.
    #[arg(long)]
    params_json: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve,
    GenDescriptions(JobArgs),
    GenCandidates(JobArgs),
    Render(JobArgs),
    Filter(JobArgs),
    TransformFeedback(JobArgs),
    TrainReward(JobArgs),
    Score(JobArgs),
    BuildPairs(JobArgs),
    ExportOrpo(JobArgs),
    Ratings(JobArgs),
}

fn parse_param(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}

impl JobArgs {
    fn spec(self, kind: JobKind) -> Result<JobSpec, ServiceError> {
        let mut parameters = match self.params_json {
            Some(text) => match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                _ => return Err(ServiceError::Config("--params-json must be a JSON object".into())),
            },
            None => Map::new(),
        };
        parameters.extend(self.params);
        Ok(JobSpec {
            kind,
            parameters,
            seed: self.seed,
        })
    }
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(dir) = cli.store_dir {
        config.store_dir = dir;
    }
    if let Some(bind) = cli.bind {
        config.bind = bind;
    }
    let (store, backends) = open(&config)?;
    let (kind, args) = match cli.command {
        Command::Serve => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Startup(e.to_string()))?;
            let app = AppState::new(store, backends, config.seed);
            return runtime.block_on(server::serve(app, &config.bind));
        }
        Command::GenDescriptions(a) => (JobKind::GenDescriptions, a),
        Command::GenCandidates(a) => (JobKind::GenCandidates, a),
        Command::Render(a) => (JobKind::Render, a),
        Command::Filter(a) => (JobKind::Filter, a),
        Command::TransformFeedback(a) => (JobKind::TransformFeedback, a),
        Command::TrainReward(a) => (JobKind::TrainReward, a),
        Command::Score(a) => (JobKind::Score, a),
        Command::BuildPairs(a) => (JobKind::BuildPairs, a),
        Command::ExportOrpo(a) => (JobKind::ExportOrpo, a),
        Command::Ratings(a) => (JobKind::Ratings, a),
    };
    let report = run_job(&store, &backends, &args.spec(kind)?)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
