//! `haystack`: plan, run, score and report lifelong in-context learning
//! evaluations.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O or configuration
//! error, 3 endpoint failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use haystack_core::config::ConfigError;
use haystack_core::lm::mock_serve;
use haystack_core::pipeline::{run_experiment, score_and_report, score_store, write_scores, PipelineError, RunOptions};
use haystack_core::plan::{make_plan, PlanError};
use haystack_core::report::{read_manifest, ReportError, RunSummary, MANIFEST_FILE};
use haystack_core::task::{load_task_bundle, registry_task_names, validate_task, TaskError};
use haystack_core::tokenizer;
use haystack_core::{
    EndpointConfig, HarnessConfig, LmClient, LmError, MockModel, MockScript, Mode, ResponseCache, ResultsStore, RunManifest,
    ScoreOptions,
};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_ENDPOINT: u8 = 3;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Invalid(_) => EXIT_VALIDATION,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        Failure::new(EXIT_VALIDATION, e.to_string())
    }
}

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        let code = match e {
            TaskError::PlaceholderMismatch(_) | TaskError::InsufficientExamples { .. } => EXIT_VALIDATION,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        let code = match e {
            ReportError::ManifestMismatch { .. } | ReportError::InvalidRecord(_) => EXIT_VALIDATION,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<LmError> for Failure {
    fn from(e: LmError) -> Self {
        let code = match e {
            LmError::InvalidScript(_) => EXIT_VALIDATION,
            LmError::Cache(_) | LmError::PortInUse(_) => EXIT_IO,
            _ => EXIT_ENDPOINT,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Task(e) => e.into(),
            PipelineError::Report(e) => e.into(),
            PipelineError::Lm(e) => e.into(),
            PipelineError::Io { .. } | PipelineError::Tokenizer(_) => Failure::new(EXIT_IO, e.to_string()),
            other => Failure::new(EXIT_VALIDATION, other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "haystack", version, about = "Lifelong in-context learning evaluation harness")]
struct Cli {
    /// Harness configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every task bundle in the registry.
    Validate {
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Write the run manifest without running anything.
    Plan {
        #[command(flatten)]
        plan: PlanArgs,
        /// Manifest destination (default: <output_dir>/<run_id>/manifest.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) an experiment.
    Run {
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        endpoint: EndpointArgs,
        /// Run an existing manifest instead of planning from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Stop after this many new units.
        #[arg(long)]
        max_units: Option<usize>,
    },
    /// Compute verdicts and summaries for a run directory.
    Score {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Score and write every report file for a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Needle-in-a-haystack sweep: plan, run, score and plot.
    Niah {
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        endpoint: EndpointArgs,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Serve the scripted mock model over HTTP until interrupted.
    MockServe {
        /// Mock script (TOML or JSON); default answers everything correctly.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        port: u16,
    },
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EndpointArgs {
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<HarnessConfig, Failure> {
    let config = match path {
        Some(p) => HarnessConfig::from_file(p)?,
        None => HarnessConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn apply_plan_args(config: &mut HarnessConfig, args: &PlanArgs) {
    if let Some(r) = &args.registry {
        config.registry = Some(r.clone());
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.output_dir {
        config.output_dir = Some(o.clone());
    }
}

fn apply_endpoint_args(config: &mut HarnessConfig, args: &EndpointArgs) {
    if let Some(u) = &args.base_url {
        config.endpoint.base_url = u.clone();
    }
    if let Some(m) = &args.model {
        config.endpoint.model_name = m.clone();
    }
    if let Some(n) = args.max_parallel {
        config.endpoint.max_parallel = n;
    }
    if let Some(c) = &args.cache_dir {
        config.cache_dir = Some(c.clone());
    }
}

fn plan_from_config(config: &HarnessConfig) -> Result<RunManifest, Failure> {
    let plan = config.plan_config()?;
    let available = match plan.mode {
        Mode::Niah => Vec::new(),
        _ => registry_task_names(config.registry()?)?,
    };
    Ok(make_plan(&plan, &available)?)
}

fn output_dir(config: &HarnessConfig) -> PathBuf {
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn cmd_validate(config: &HarnessConfig, registry: Option<PathBuf>) -> Result<(), Failure> {
    let registry = match registry {
        Some(r) => r,
        None => config.registry()?.to_path_buf(),
    };
    let tokenizer = tokenizer::resolve(&config.tokenizer).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let names = if config.tasks.is_empty() {
        registry_task_names(&registry)?
    } else {
        config.tasks.clone()
    };
    let mut dirty = 0;
    for name in &names {
        let bundle = load_task_bundle(&registry.join(name))?;
        let report = validate_task(&bundle.spec, tokenizer.as_ref());
        if report.is_clean() {
            println!("ok    {name}");
        } else {
            dirty += 1;
            for v in &report.violations {
                println!("FAIL  {name}: {v}");
            }
        }
    }
    println!("{} tasks, {} with violations", names.len(), dirty);
    if dirty > 0 {
        return Err(Failure::new(EXIT_VALIDATION, format!("{dirty} task(s) failed validation")));
    }
    Ok(())
}

fn cmd_plan(config: &HarnessConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let manifest = plan_from_config(config)?;
    let path = out.unwrap_or_else(|| output_dir(config).join(&manifest.run_id).join(MANIFEST_FILE));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(&path, manifest.to_json() + "\n")
        .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
    println!(
        "{}: {} units -> {}",
        manifest.run_id,
        haystack_core::plan::expected_unit_count(&manifest),
        path.display()
    );
    Ok(())
}

fn client(config: &HarnessConfig) -> Result<LmClient, Failure> {
    let cache = match &config.cache_dir {
        Some(dir) => ResponseCache::open(dir)?,
        None => ResponseCache::disabled(),
    };
    Ok(LmClient::http(config.endpoint.clone(), cache)?)
}

fn execute(
    config: &HarnessConfig,
    manifest: RunManifest,
    run_dir: Option<PathBuf>,
    max_units: Option<usize>,
) -> Result<ResultsStore, Failure> {
    let run_dir = run_dir.unwrap_or_else(|| output_dir(config).join(&manifest.run_id));
    let registry = config
        .registry
        .clone()
        .unwrap_or_else(|| PathBuf::from(&manifest.registry));
    let mut store = ResultsStore::open(&run_dir, &manifest)?;
    let client = client(config)?;
    let options = RunOptions {
        max_units,
        ..RunOptions::default()
    };
    let report = run_experiment(&mut store, &client, &registry, &options)?;
    println!(
        "{}: {} of {} units done ({} new, {} requests, {} cache hits) in {}",
        manifest.run_id,
        report.already_done + report.completed,
        report.total,
        report.completed,
        report.network_requests,
        report.cache_hits,
        run_dir.display()
    );
    if !report.failed.is_empty() {
        for f in report.failed.iter().take(10) {
            eprintln!("failed {}: {}", f.unit, f.error);
        }
        return Err(Failure::new(
            EXIT_ENDPOINT,
            format!(
                "{} unit(s) failed; see {}",
                report.failed.len(),
                run_dir.join(haystack_core::report::FAILURES_FILE).display()
            ),
        ));
    }
    Ok(store)
}

fn cmd_run(
    mut config: HarnessConfig,
    plan: &PlanArgs,
    endpoint: &EndpointArgs,
    manifest: Option<PathBuf>,
    run_dir: Option<PathBuf>,
    max_units: Option<usize>,
) -> Result<(), Failure> {
    apply_plan_args(&mut config, plan);
    apply_endpoint_args(&mut config, endpoint);
    let manifest = match manifest {
        Some(path) => {
            read_manifest(&path)?
        }
        None => plan_from_config(&config)?,
    };
    config.endpoint = endpoint_for(&config, &manifest);
    execute(&config, manifest, run_dir, max_units).map(|_| ())
}

/// The manifest fixes the model identity; transport settings come from the
/// config and flags.
fn endpoint_for(config: &HarnessConfig, manifest: &RunManifest) -> EndpointConfig {
    EndpointConfig {
        model_name: manifest.model.model_name.clone(),
        logprob_top_k: manifest.model.logprob_top_k,
        chat: manifest.model.chat,
        ..config.endpoint.clone()
    }
}

fn score_options(config: &HarnessConfig, alpha: Option<f64>) -> Result<ScoreOptions, Failure> {
    let mut options = config.score_options();
    if let Some(a) = alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(Failure::new(EXIT_VALIDATION, format!("alpha {a} outside (0, 1)")));
        }
        options.alpha = a;
    }
    Ok(options)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

fn print_summary(summary: &RunSummary) {
    println!("run {} ({}), alpha {}", summary.run_id, summary.mode, summary.alpha);
    if !summary.columns.is_empty() {
        println!("{:<22} {:>8} {:>7} {:>7} {:>7}", "column", "tokens", "s-acc", "l-acc", "pass%");
        for c in &summary.columns {
            let label = if c.label == "lifelong" {
                format!("{} tasks x {}-shot", c.n_task, c.n_shot)
            } else {
                c.label.clone()
            };
            println!(
                "{:<22} {:>8.0} {:>7} {:>7} {:>7}",
                label,
                c.mean_context_tokens,
                fmt_pct(c.s_acc.map(|x| x * 100.0)),
                fmt_pct(c.l_acc.map(|x| x * 100.0)),
                fmt_pct(c.pass)
            );
        }
    }
    if let Some(split) = &summary.effectiveness {
        println!("ICL-effective: {}", split.effective.join(", "));
        println!("ICL-ineffective: {}", split.ineffective.join(", "));
    }
    if let Some(niah) = &summary.niah {
        println!("NIAH: {} cells, mean recall {:.3}", niah.cells.len(), niah.mean_recall);
    }
}

fn cmd_score(config: &HarnessConfig, run_dir: &Path, alpha: Option<f64>) -> Result<(), Failure> {
    let store = ResultsStore::open_existing(run_dir)?;
    let scored = score_store(&store, &score_options(config, alpha)?)?;
    for path in write_scores(&store, &scored)? {
        info!("wrote {}", path.display());
    }
    print_summary(&scored.summary);
    Ok(())
}

fn cmd_report(config: &HarnessConfig, run_dir: &Path, alpha: Option<f64>) -> Result<(), Failure> {
    let store = ResultsStore::open_existing(run_dir)?;
    let (scored, written) = score_and_report(&store, &score_options(config, alpha)?)?;
    print_summary(&scored.summary);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_niah(
    mut config: HarnessConfig,
    plan: &PlanArgs,
    endpoint: &EndpointArgs,
    run_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    apply_plan_args(&mut config, plan);
    apply_endpoint_args(&mut config, endpoint);
    config.mode = Some(Mode::Niah);
    let manifest = plan_from_config(&config)?;
    let store = execute(&config, manifest, run_dir, None)?;
    let (scored, written) = score_and_report(&store, &config.score_options())?;
    print_summary(&scored.summary);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_mock_serve(
    config: &HarnessConfig,
    script: Option<PathBuf>,
    registry: Option<PathBuf>,
    port: u16,
) -> Result<(), Failure> {
    let script = match script {
        Some(path) => MockScript::from_file(&path)?,
        None => MockScript::default(),
    };
    let model = match registry.or_else(|| config.registry.clone()) {
        Some(root) => MockModel::from_registry(script, &root)?,
        None => MockModel::new(script, &[])?,
    };
    let handle = mock_serve(model, port)?;
    println!("mock endpoint listening on {}", handle.base_url());
    handle.join();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Validate { registry } => cmd_validate(&config, registry),
        Command::Plan { plan, out } => {
            let mut config = config;
            apply_plan_args(&mut config, &plan);
            cmd_plan(&config, out)
        }
        Command::Run {
            plan,
            endpoint,
            manifest,
            run_dir,
            max_units,
        } => cmd_run(config, &plan, &endpoint, manifest, run_dir, max_units),
        Command::Score { run_dir, alpha } => cmd_score(&config, &run_dir, alpha),
        Command::Report { run_dir, alpha } => cmd_report(&config, &run_dir, alpha),
        Command::Niah {
            plan,
            endpoint,
            run_dir,
        } => cmd_niah(config, &plan, &endpoint, run_dir),
        Command::MockServe {
            script,
            registry,
            port,
        } => cmd_mock_serve(&config, script, registry, port),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
