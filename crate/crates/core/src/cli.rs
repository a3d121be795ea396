//! Command-line front end: `solve`, `evaluate` and `oracle`.
//!
//! Settings merge in order file < environment < flags. The config file is
//! TOML with the pipeline settings at top level and a `[backend]` table.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{backend_for_case, compute_metrics, load_suite, render_report, run_suite, AblationCell, SuiteOptions};
use crate::gateway::{build_backend, BackendConfig, BackendKind, GatewayError, RecordingBackend};
use crate::instance::ProblemInstance;
use crate::oracle::{OracleError, OracleMethod};
use crate::pipeline::{
    solve_request, Pathway, PathwayOverride, PipelineConfig, PipelineError, PipelineStatus, VerificationMode,
};
use crate::spf::CaseLibrary;
use crate::svg::render_svg;
use crate::verifier::{CandidateSolution, DepotPolicy};

pub const CONFIG_ENV: &str = "ROUTEFORGE_CONFIG";
pub const BACKEND_ENV: &str = "ROUTEFORGE_BACKEND";
pub const MODEL_ENV: &str = "ROUTEFORGE_MODEL";
pub const ENDPOINT_ENV: &str = "ROUTEFORGE_ENDPOINT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_FORMULATION_FAILED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("config file {path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::File { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Parser)]
#[command(name = "routeforge", version, about = "Plan constrained routes with a chat model, checked by a verifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one request and write solution.json and trace.json.
    Solve(SolveArgs),
    /// Run a suite and write records.jsonl, metrics.json and report.txt.
    Evaluate(EvaluateArgs),
    /// Compute a reference solution with an exact or heuristic solver.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Http,
    Scripted,
    Replay,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Http => BackendKind::HttpChat,
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Replay => BackendKind::Replay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerificationArg {
    External,
    #[value(name = "self")]
    SelfCheck,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathwayArg {
    A,
    B,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file (default: $ROUTEFORGE_CONFIG).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Cassette to replay; implies `--backend replay` unless a backend is given.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// JSON array of canned responses; implies `--backend scripted`.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Case library JSON (default: the built-in library).
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub max_refine: Option<usize>,
    #[arg(long, value_enum)]
    pub verification: Option<VerificationArg>,
    #[arg(long, value_enum)]
    pub pathway: Option<PathwayArg>,
    /// Let routes pass through other days' depots.
    #[arg(long)]
    pub permissive_depots: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Instance JSON file.
    #[arg(long)]
    pub instance: PathBuf,
    /// Request text, or a path to a file holding it (default: the instance's request_text).
    #[arg(long)]
    pub request: Option<String>,
    /// Also write route.svg.
    #[arg(long)]
    pub svg: bool,
    /// Skip the refinement loop.
    #[arg(long)]
    pub no_iterate: bool,
    /// Save every exchange of this run as a cassette.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Suite JSON file.
    #[arg(long)]
    pub suite: PathBuf,
    /// Only run with verification switched off.
    #[arg(long)]
    pub no_verify: bool,
    /// Only run without refinement.
    #[arg(long)]
    pub no_iterate: bool,
    /// Run all four verification/refinement combinations.
    #[arg(long, conflicts_with_all = ["no_verify", "no_iterate"])]
    pub ablations: bool,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Discard records from a previous run instead of resuming.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Brute,
    Heldkarp,
    Heuristic,
}

impl From<MethodArg> for OracleMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Brute => OracleMethod::Brute,
            MethodArg::Heldkarp => OracleMethod::HeldKarp,
            MethodArg::Heuristic => OracleMethod::Heuristic,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value = "brute")]
    pub method: MethodArg,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

/// Optional backend settings, used for every configuration layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendOverrides {
    pub backend_kind: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub script: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
}

impl BackendOverrides {
    fn apply(self, c: &mut BackendConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(backend_kind, model_name, api_key_env, temperature, timeout_secs, max_retries);
        if self.endpoint.is_some() {
            c.endpoint = self.endpoint;
        }
        if self.script.is_some() {
            c.script = self.script;
        }
        if self.cassette.is_some() {
            c.cassette = self.cassette;
        }
    }
}

/// Config file contents; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub output_dir: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub max_feasibility_iters: Option<usize>,
    pub max_refine_rounds: Option<usize>,
    pub pathway_override: Option<PathwayOverride>,
    pub verification_mode: Option<VerificationMode>,
    pub refine_enabled: Option<bool>,
    pub depot_policy: Option<DepotPolicy>,
    #[serde(default)]
    pub backend: BackendOverrides,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.display().to_string(), message: e.to_string() })
    }
}

/// The merged configuration of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    pub output_dir: PathBuf,
    pub library: Option<PathBuf>,
}

fn env_overrides(env: &dyn Fn(&str) -> Option<String>) -> Result<BackendOverrides, CliError> {
    let backend_kind = match env(BACKEND_ENV) {
        Some(v) => Some(match v.trim().to_ascii_lowercase().as_str() {
            "http" | "http_chat" => BackendKind::HttpChat,
            "scripted" => BackendKind::Scripted,
            "replay" => BackendKind::Replay,
            other => return Err(CliError::Usage(format!("{BACKEND_ENV}={other} is not one of http, scripted, replay"))),
        }),
        None => None,
    };
    Ok(BackendOverrides { backend_kind, model_name: env(MODEL_ENV), endpoint: env(ENDPOINT_ENV), ..Default::default() })
}

/// Merges file, environment and flags, in rising precedence.
pub fn resolve_config(common: &CommonArgs, env: &dyn Fn(&str) -> Option<String>) -> Result<CliConfig, CliError> {
    let config_path = common.config.clone().or_else(|| env(CONFIG_ENV).map(PathBuf::from));
    let file = match &config_path {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut pipeline = PipelineConfig::default();
    macro_rules! set {
        ($src:expr, $($f:ident),*) => { $(if let Some(v) = $src.$f { pipeline.$f = v; })* };
    }
    set!(file, max_feasibility_iters, max_refine_rounds, verification_mode, refine_enabled, depot_policy);
    if file.pathway_override.is_some() {
        pipeline.pathway_override = file.pathway_override;
    }
    file.backend.apply(&mut pipeline.backend);
    env_overrides(env)?.apply(&mut pipeline.backend);

    let flag_kind = common.backend.map(BackendKind::from).or_else(|| {
        if common.cassette.is_some() {
            Some(BackendKind::Replay)
        } else if common.script.is_some() {
            Some(BackendKind::Scripted)
        } else {
            None
        }
    });
    BackendOverrides {
        backend_kind: flag_kind,
        endpoint: common.endpoint.clone(),
        model_name: common.model.clone(),
        api_key_env: common.api_key_env.clone(),
        temperature: common.temperature,
        script: common.script.clone(),
        cassette: common.cassette.clone(),
        ..Default::default()
    }
    .apply(&mut pipeline.backend);
    if let Some(v) = common.max_iters {
        pipeline.max_feasibility_iters = v;
    }
    if let Some(v) = common.max_refine {
        pipeline.max_refine_rounds = v;
    }
    if let Some(v) = common.verification {
        pipeline.verification_mode = match v {
            VerificationArg::External => VerificationMode::External,
            VerificationArg::SelfCheck => VerificationMode::SelfCheck,
            VerificationArg::None => VerificationMode::Unverified,
        };
    }
    if let Some(p) = common.pathway {
        pipeline.pathway_override = Some(match p {
            PathwayArg::A => PathwayOverride::ForceA,
            PathwayArg::B => PathwayOverride::ForceB,
        });
    }
    if common.permissive_depots {
        pipeline.depot_policy = DepotPolicy::Permissive;
    }
    pipeline.validate()?;
    Ok(CliConfig {
        pipeline,
        output_dir: common.out.clone().or(file.output_dir).unwrap_or_else(|| PathBuf::from("routeforge-out")),
        library: common.library.clone().or(file.library),
    })
}

fn load_library(path: Option<&Path>) -> Result<CaseLibrary, CliError> {
    match path {
        Some(p) => CaseLibrary::load(p).map_err(|e| file_err(p, e)),
        None => Ok(CaseLibrary::builtin()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| file_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serialization is infallible") + "\n"
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))
}

/// Contents of `solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub status: PipelineStatus,
    pub pathway: Pathway,
    pub solution: Option<CandidateSolution>,
    pub cost: Option<f64>,
    pub first_feasible_cost: Option<f64>,
    pub refinement_success: bool,
}

fn read_request(arg: Option<&str>, instance: &ProblemInstance) -> Result<String, CliError> {
    match arg {
        Some(a) if Path::new(a).is_file() => std::fs::read_to_string(a).map_err(|e| file_err(Path::new(a), e)),
        Some(a) => Ok(a.to_string()),
        None if !instance.request_text.trim().is_empty() => Ok(instance.request_text.clone()),
        None => Err(CliError::Usage("no --request given and the instance has no request_text".into())),
    }
}

pub fn cmd_solve(args: &SolveArgs, env: &dyn Fn(&str) -> Option<String>, out: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let mut config = resolve_config(&args.common, env)?;
    if args.no_iterate {
        config.pipeline.refine_enabled = false;
    }
    let instance = ProblemInstance::load(&args.instance).map_err(|e| file_err(&args.instance, e))?;
    let request = read_request(args.request.as_deref(), &instance)?;
    let library = load_library(config.library.as_deref())?;
    let backend = build_backend(&config.pipeline.backend, None)?;
    let outcome = match &args.record {
        Some(path) => {
            let recorder = RecordingBackend::new(backend);
            let outcome = solve_request(&request, &instance, &library, &config.pipeline, &recorder);
            recorder.cassette().save(path)?;
            outcome
        }
        None => solve_request(&request, &instance, &library, &config.pipeline, backend.as_ref()),
    };
    prepare_dir(&config.output_dir)?;
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            if let Some(trace) = e.trace() {
                write_file(&config.output_dir.join("trace.json"), &to_json(trace))?;
            }
            return Err(e.into());
        }
    };
    let file = SolutionFile {
        status: result.status,
        pathway: result.trace.pathway,
        solution: result.solution.clone(),
        cost: result.cost,
        first_feasible_cost: result.trace.first_feasible_cost,
        refinement_success: result.trace.refinement_success,
    };
    write_file(&config.output_dir.join("solution.json"), &to_json(&file))?;
    write_file(&config.output_dir.join("trace.json"), &to_json(&result.trace))?;
    let _ = writeln!(out, "Status: {}", serde_json::to_value(result.status).unwrap().as_str().unwrap_or_default());
    if let Some(solution) = &result.solution {
        let _ = write!(out, "{}", solution.to_route_lines(result.cost));
        if args.svg {
            write_file(&config.output_dir.join("route.svg"), &render_svg(solution, &instance))?;
        }
    }
    Ok(match result.status {
        PipelineStatus::Solved => EXIT_OK,
        PipelineStatus::InfeasibleAfterBudget => EXIT_INFEASIBLE,
        PipelineStatus::FormulationFailed => EXIT_FORMULATION_FAILED,
    })
}

pub fn cmd_evaluate(
    args: &EvaluateArgs,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn std::io::Write,
) -> Result<i32, CliError> {
    let config = resolve_config(&args.common, env)?;
    let library = load_library(config.library.as_deref())?;
    let cases = load_suite(&args.suite)?;
    let cells = if args.ablations {
        AblationCell::grid(None, None)
    } else {
        AblationCell::grid(Some(!args.no_verify), if args.no_iterate { Some(false) } else { None })
    };
    prepare_dir(&config.output_dir)?;
    let sink = config.output_dir.join("records.jsonl");
    if args.fresh && sink.exists() {
        std::fs::remove_file(&sink).map_err(|e| file_err(&sink, e))?;
    }
    let options =
        SuiteOptions { cells, trials: args.trials, parallel: args.parallel, sink: Some(sink), keep_results: true };
    let backend = config.pipeline.backend.clone();
    let records = run_suite(&cases, &library, &config.pipeline, &options, |case| backend_for_case(case, &backend, None))?;
    let table = compute_metrics(&records)?;
    let report = render_report(&table);
    write_file(&config.output_dir.join("metrics.json"), &report.json)?;
    write_file(&config.output_dir.join("report.txt"), &report.text)?;
    let _ = write!(out, "{}", report.text);
    Ok(EXIT_OK)
}

pub fn cmd_oracle(args: &OracleArgs, out: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let instance = ProblemInstance::load(&args.instance).map_err(|e| file_err(&args.instance, e))?;
    let method = OracleMethod::from(args.method);
    match method.run(&instance) {
        Ok(bound) => {
            let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("routeforge-out"));
            prepare_dir(&dir)?;
            #[derive(Serialize)]
            struct OracleFile<'a> {
                method: OracleMethod,
                #[serde(flatten)]
                bound: &'a crate::oracle::CostBound,
            }
            write_file(&dir.join("oracle.json"), &to_json(&OracleFile { method, bound: &bound }))?;
            let _ = write!(out, "{}", bound.solution.to_route_lines(Some(bound.cost)));
            Ok(EXIT_OK)
        }
        Err(e @ OracleError::InstanceTooLarge { .. }) => {
            eprintln!("error: {e}");
            Ok(EXIT_INFEASIBLE)
        }
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
    let mut stdout = std::io::stdout().lock();
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a, &env, &mut stdout),
        Command::Evaluate(a) => cmd_evaluate(a, &env, &mut stdout),
        Command::Oracle(a) => cmd_oracle(a, &mut stdout),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn common(args: &[&str]) -> CommonArgs {
        let mut argv = vec!["routeforge", "oracle-less", "--instance", "x"];
        argv.extend_from_slice(args);
        #[derive(Parser)]
        struct Wrap {
            #[command(subcommand)]
            cmd: Sub,
        }
        #[derive(Subcommand)]
        enum Sub {
            OracleLess(SolveArgs),
        }
        let Sub::OracleLess(s) = Wrap::try_parse_from(argv).unwrap().cmd;
        s.common
    }

    fn env(vars: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = vars.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn precedence_flags_env_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.toml");
        std::fs::write(
            &path,
            "max_feasibility_iters = 7\nverification_mode = \"SELF\"\n[backend]\nmodel_name = \"file-model\"\nendpoint = \"https://file.example/v1\"\ntemperature = 0.2\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();

        let c = resolve_config(&common(&[]), &env(&[(CONFIG_ENV, p)])).unwrap();
        assert_eq!(c.pipeline.max_feasibility_iters, 7);
        assert_eq!(c.pipeline.verification_mode, VerificationMode::SelfCheck);
        assert_eq!(c.pipeline.backend.model_name, "file-model");
        assert_eq!(c.pipeline.backend.temperature, 0.2);

        let c = resolve_config(&common(&[]), &env(&[(CONFIG_ENV, p), (MODEL_ENV, "env-model")])).unwrap();
        assert_eq!(c.pipeline.backend.model_name, "env-model");
        assert_eq!(c.pipeline.backend.endpoint.as_deref(), Some("https://file.example/v1"));

        let c = resolve_config(
            &common(&["--config", p, "--model", "flag-model", "--max-iters", "2", "--verification", "none"]),
            &env(&[(MODEL_ENV, "env-model")]),
        )
        .unwrap();
        assert_eq!(c.pipeline.backend.model_name, "flag-model");
        assert_eq!(c.pipeline.max_feasibility_iters, 2);
        assert_eq!(c.pipeline.verification_mode, VerificationMode::Unverified);
    }

    #[test]
    fn cassette_flag_implies_replay() {
        let c = resolve_config(&common(&["--cassette", "c.json"]), &env(&[])).unwrap();
        assert_eq!(c.pipeline.backend.backend_kind, BackendKind::Replay);
        let c = resolve_config(&common(&["--script", "s.json"]), &env(&[(BACKEND_ENV, "replay")])).unwrap();
        assert_eq!(c.pipeline.backend.backend_kind, BackendKind::Scripted);
    }

    #[test]
    fn bad_config_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.toml");
        std::fs::write(&path, "api_key = \"secret\"\n").unwrap();
        let err = resolve_config(&common(&["--config", path.to_str().unwrap()]), &env(&[])).unwrap_err();
        assert!(matches!(err, CliError::Config { .. }));
        assert!(resolve_config(&common(&[]), &env(&[(BACKEND_ENV, "carrier-pigeon")])).is_err());
        assert!(resolve_config(&common(&["--max-iters", "0"]), &env(&[])).is_err());
    }
}
