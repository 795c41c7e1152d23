//! Subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use punner_core::corpus::{default_grammars, load_conll, load_jsonl, synth_generate, synthetic_registry, write_jsonl, ConllOptions};
use punner_core::evalkit::EvalReport;
use punner_core::prompting::StrategyKind;
use punner_core::schema::{load_registry, Registry};
use punner_harness::experiments::{load_report, run_adapt_step_ablation, run_joint_vs_single, run_pilot, run_prompt_ablation, Context, ExperimentReport, Output};
use punner_harness::finetune::final_reports;
use punner_harness::ner::{save_model, LoadedModel};
use punner_model::{ModelCheckpoint, Trainer};

use crate::config::AppConfig;
use crate::error::{CliError, Result};
use crate::service::{answer, router, ApiError, AppState, DecodeSpec, NerRequest};

#[derive(Debug, Parser)]
#[command(name = "punner", version, about = "Prompt-prefixed sequence-to-sequence NER")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an annotated CoNLL or JSONL file to validated JSONL.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus as JSONL.
    Synth(SynthArgs),
    /// Prefix language-model adaptation on the configured corpora.
    Adapt(AdaptArgs),
    /// Joint fine-tuning on the configured corpora.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the configured corpora.
    Eval(EvalArgs),
    /// Run or re-tabulate an ablation study.
    Ablate(AblateArgs),
    /// Scratch versus adapt-then-fine-tune.
    Pilot(PilotArgs),
    /// Recognise entities of the given types in one text.
    Predict(PredictArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set model.d_model=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<AppConfig> {
        let mut cfg = AppConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.plan.seeds = vec![s];
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Conll,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: InputFormat,
    /// Dataset id in the registry.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub output: PathBuf,
    /// Registry file; the bundled registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// String placed between CoNLL tokens.
    #[arg(long, default_value = "")]
    pub joiner: String,
    /// Fail on malformed tag sequences instead of repairing them.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// One of synth_news, synth_shop, synth_film.
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Adaptation steps; overrides `adapt.steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from this checkpoint (for example an adapted model).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Beam width; the configured test beam when omitted.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Score the dev split instead of the test split.
    #[arg(long)]
    pub dev: bool,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationKind {
    /// Prompt strategies.
    Prompts,
    /// Joint against single-dataset training.
    Joint,
    /// Adaptation checkpoints.
    AdaptSteps,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    pub kind: AblationKind,
    /// Strategy keys for `prompts`.
    #[arg(long, value_delimiter = ',', default_value = "random,random_exact,dataset")]
    pub strategies: Vec<String>,
    /// Candidate adaptation steps for `adapt-steps`.
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<u64>,
    /// Rebuild the tables from stored results without training.
    #[arg(long)]
    pub regenerate: bool,
}

#[derive(Debug, Args)]
pub struct PilotArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub regenerate: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Comma-separated entity type ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub types: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// Reject generations that do not follow the target grammar exactly.
    #[arg(long)]
    pub strict: bool,
    /// Print the full response as JSON instead of the generated target.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Adapt(a) => adapt(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Pilot(a) => pilot(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
    }
}

fn registry_from(path: Option<&Path>) -> Result<Registry> {
    Ok(match path {
        Some(p) => load_registry(p)?,
        None => Registry::bundled(),
    })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let registry = registry_from(a.registry.as_deref())?;
    if registry.dataset(&a.dataset).is_err() {
        return Err(CliError::Usage(format!("unknown dataset `{}`", a.dataset)));
    }
    let sentences = match a.format {
        InputFormat::Conll => load_conll(&a.input, &a.dataset, &registry, &ConllOptions { joiner: a.joiner, strict: a.strict })?,
        InputFormat::Jsonl => load_jsonl(&a.input, &a.dataset, &registry, a.strict)?,
    };
    write_jsonl(&a.output, &sentences)?;
    let mentions: usize = sentences.iter().map(|s| s.mentions.len()).sum();
    println!("{} sentences, {mentions} mentions -> {}", sentences.len(), a.output.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let registry = synthetic_registry();
    let grammar = default_grammars()
        .into_iter()
        .find(|g| g.dataset_id == a.dataset)
        .ok_or_else(|| CliError::Usage(format!("no grammar for `{}`", a.dataset)))?;
    let sentences = synth_generate(&grammar, &registry, a.n, a.seed)?;
    write_jsonl(&a.output, &sentences)?;
    println!("{} sentences -> {}", sentences.len(), a.output.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn adapt(a: AdaptArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.steps {
        cfg.plan.adapt.steps = s;
    }
    if cfg.plan.adapt.steps == 0 {
        return Err(CliError::Usage("adaptation steps must be positive (`--steps` or `adapt.steps`)".into()));
    }
    let seed = cfg.plan.seeds[0];
    let ctx = Context::new(&cfg.plan)?;
    let run = ctx.adapt(ctx.init_model(seed)?, seed, cfg.plan.adapt.steps, Vec::new())?;
    let model = run.snapshot(run.selected_step)?.clone();
    let trainer = Trainer::from_model(model, ctx.vocab.clone(), cfg.plan.optimizer_for(1, None), seed)?;
    save_model(&a.out, &ModelCheckpoint::from_trainer(&trainer, false), &ctx.codec)?;
    fs::write(sibling(&a.out, ".adapt-trace.csv"), run.trace.to_csv())?;
    println!("selected adaptation step {} -> {}", run.selected_step, a.out.display());
    Ok(())
}

fn print_reports(datasets: &[String], reports: &[EvalReport]) {
    for (d, r) in datasets.iter().zip(reports) {
        println!("{d}\n{}", r.to_table());
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let args = ConfigArgs { config: Some(a.config.clone()), overrides: a.overrides.clone(), seed: a.seed };
    let cfg = args.load()?;
    let seed = cfg.plan.seeds[0];
    let mut ctx = Context::new(&cfg.plan)?;
    let init = match &a.init {
        Some(p) => {
            let ckpt = ModelCheckpoint::load(p)?;
            ctx.vocab = ckpt.vocab;
            ckpt.model
        }
        None => ctx.init_model(seed)?,
    };
    let all: Vec<usize> = (0..ctx.corpora.len()).collect();
    let (trainer, run, reports) = ctx.fine_tune(init, &all, cfg.plan.strategy, seed)?;
    save_model(&a.out, &ModelCheckpoint::from_trainer(&trainer, false), &ctx.codec)?;
    fs::write(sibling(&a.out, ".trace.csv"), run.trace.to_csv())?;
    fs::write(sibling(&a.out, ".losses.json"), serde_json::to_string(&run.losses)?)?;
    println!("selected step {} of {} -> {}", run.selected_step, run.losses.len(), a.out.display());
    let ids: Vec<String> = ctx.corpora.iter().map(|c| c.dataset_id.clone()).collect();
    print_reports(&ids, &reports);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let beam = a.beam.unwrap_or(cfg.plan.test_beam);
    if beam == 0 {
        return Err(CliError::Usage("beam width must be at least 1".into()));
    }
    let loaded = LoadedModel::load(&a.model)?;
    let ctx = Context::new(&cfg.plan)?;
    let reports = final_reports(&loaded.recognizer(), &ctx.corpora, beam, cfg.plan.eval.match_mode, a.dev)?;
    let ids: Vec<String> = ctx.corpora.iter().map(|c| c.dataset_id.clone()).collect();
    print_reports(&ids, &reports);
    if let Some(out) = &a.out {
        let map: BTreeMap<&String, &EvalReport> = ids.iter().zip(&reports).collect();
        fs::write(out, serde_json::to_string_pretty(&map)?)?;
    }
    Ok(())
}

fn print_report(report: &ExperimentReport) -> Result<()> {
    print!("{}", report.render()?);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let out = Output::to(&cfg.out_dir);
    if a.regenerate {
        let report = load_report(&cfg.out_dir, &cfg.plan.id)?;
        fs::write(cfg.out_dir.join(&cfg.plan.id).join("tables.txt"), report.render()?)?;
        return print_report(&report);
    }
    let ctx = Context::new(&cfg.plan)?;
    let report = match a.kind {
        AblationKind::Prompts => {
            let kinds = a
                .strategies
                .iter()
                .map(|s| s.parse::<StrategyKind>().map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            run_prompt_ablation(&ctx, &out, &kinds)?
        }
        AblationKind::Joint => run_joint_vs_single(&ctx, &out)?,
        AblationKind::AdaptSteps => run_adapt_step_ablation(&ctx, &out, &a.steps)?,
    };
    print_report(&report)
}

fn pilot(a: PilotArgs) -> Result<()> {
    let cfg = a.config.load()?;
    if a.regenerate {
        return print_report(&load_report(&cfg.out_dir, &cfg.plan.id)?);
    }
    let ctx = Context::new(&cfg.plan)?;
    print_report(&run_pilot(&ctx, &Output::to(&cfg.out_dir))?)
}

fn api_error(e: ApiError) -> CliError {
    match e {
        ApiError::BadRequest(m) => CliError::Usage(m),
        ApiError::Unparseable(r) => CliError::Runtime(format!("generation could not be parsed: {}", r.raw_target)),
        ApiError::Unavailable => CliError::Runtime("model unavailable".into()),
        ApiError::Internal(m) => CliError::Runtime(m),
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let loaded = LoadedModel::load(&a.model)?;
    let req = NerRequest { text: a.text, entity_types: a.types, decode: DecodeSpec::from_width(a.beam) };
    let resp = answer(&loaded, &req, a.strict).map_err(api_error)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&resp)?);
    } else {
        println!("{}", resp.raw_target);
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let host = a.host.unwrap_or(cfg.service.host.clone());
    let port = a.port.unwrap_or(cfg.service.port);
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    let state = AppState::from_checkpoint(a.model.clone())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        spawn_reload_on_hangup(state.clone());
        axum::serve(listener, router(state, &cfg.service.allow_origin)).await?;
        Ok(())
    })
}

#[cfg(unix)]
fn spawn_reload_on_hangup(state: Arc<AppState>) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let Ok(mut hup) = signal(SignalKind::hangup()) else { return };
        while hup.recv().await.is_some() {
            match state.reload().await {
                Ok(()) => log::info!("checkpoint reloaded"),
                Err(e) => log::error!("reload failed: {e}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reload_on_hangup(_state: Arc<AppState>) {}
