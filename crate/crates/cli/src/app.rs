//! Command-line entry points.

use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hmt_core::{
    aggregate_report, builtin_catalog, fill_answers_with, generate_output_with, generate_questions_with, load_tasks,
    parse_annotations, render_json, render_table, Clock, CompletionBackend, FileStore, HttpBackend, HttpBackendConfig,
    KaRegime, NaHandling, QuestionLoopLimits, Regime, ScriptedBackend, Session, SessionFilter, Stage, StepClock,
    SystemClock, TaskCatalog, TaskSpec, Voice, API_KEY_ENV,
};
use uuid::Uuid;

use crate::service::{self, AppState};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "text-davinci-002";

/// Bad invocation: unknown task, bad flag combination. Exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VoiceArg {
    First,
    Second,
}

impl From<VoiceArg> for Voice {
    fn from(v: VoiceArg) -> Self {
        match v {
            VoiceArg::First => Voice::FirstPerson,
            VoiceArg::Second => Voice::SecondPerson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Tolerant,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NaArg {
    Exclude,
    AsNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "hmt",
    version,
    about = "Ask, answer, generate: customized outputs from model-asked questions"
)]
pub struct Cli {
    #[arg(long, global = true, value_enum, default_value = "http")]
    pub backend: BackendChoice,
    /// Reply fixture for the scripted backend.
    #[arg(long, global = true)]
    pub fixture: Option<PathBuf>,
    /// Session store directory.
    #[arg(long, global = true, default_value = ".hmt")]
    pub store: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "first")]
    pub voice: VoiceArg,
    /// QA pairs per Stage-3 prompt; defaults to the task's own size.
    #[arg(long, global = true)]
    pub batch_size: Option<NonZeroUsize>,
    #[arg(long, global = true, default_value_t = 32)]
    pub max_questions: usize,
    #[arg(long, global = true, default_value_t = 0.8)]
    pub similarity_threshold: f64,
    /// Request timeout in seconds.
    #[arg(long, global = true, default_value_t = 60)]
    pub timeout: u64,
    #[arg(long, global = true, env = "HMT_ENDPOINT", default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    #[arg(long, global = true, env = "HMT_MODEL", default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Task catalog to use instead of the bundled one.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Browse the task catalog.
    Tasks {
        #[command(subcommand)]
        action: TasksAction,
    },
    /// Ask, answer interactively, and print the output.
    Run { task: String },
    /// Generate questions for a task and save a new session.
    Questions { task: String },
    /// Answer a saved session's questions, from stdin or one at a time.
    Answer {
        id: Uuid,
        #[arg(long, requires = "text")]
        index: Option<usize>,
        #[arg(long, requires = "index")]
        text: Option<String>,
    },
    /// Generate the output for a fully answered session.
    Output { id: Uuid },
    /// List saved sessions, newest first.
    Sessions {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Print a saved session.
    Show { id: Uuid },
    /// Score an annotation file.
    Eval {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "tolerant")]
        regime: RegimeArg,
        #[arg(long, value_enum, default_value = "exclude")]
        na: NaArg,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        /// Also write the report as JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Directory of static files served for non-API paths.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TasksAction {
    List {
        /// Only the six tasks the metric tables cover.
        #[arg(long)]
        core: bool,
    },
    Show {
        name: String,
    },
}

/// Everything a command needs besides its own arguments.
pub struct Context {
    pub catalog: Arc<TaskCatalog>,
    store_path: PathBuf,
    pub clock: Arc<dyn Clock>,
    pub limits: QuestionLoopLimits,
    pub voice: Voice,
    pub batch_size: Option<NonZeroUsize>,
    cli_backend: BackendChoice,
    fixture: Option<PathBuf>,
    endpoint: String,
    model: String,
    timeout: Duration,
    backend: OnceLock<Arc<dyn CompletionBackend>>,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let catalog = match &cli.catalog {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                load_tasks(&text)?
            }
            None => builtin_catalog(),
        };
        if cli.backend == BackendChoice::Scripted && cli.fixture.is_none() {
            return Err(UsageError("--backend scripted needs --fixture".into()).into());
        }
        let clock: Arc<dyn Clock> = match cli.backend {
            BackendChoice::Scripted => Arc::new(StepClock::default()),
            BackendChoice::Http => Arc::new(SystemClock),
        };
        let limits = QuestionLoopLimits {
            max_questions: cli.max_questions,
            similarity_threshold: cli.similarity_threshold,
            ..Default::default()
        };
        Ok(Self {
            catalog: Arc::new(catalog),
            store_path: cli.store.clone(),
            clock,
            limits,
            voice: cli.voice.into(),
            batch_size: cli.batch_size,
            cli_backend: cli.backend,
            fixture: cli.fixture.clone(),
            endpoint: cli.endpoint.clone(),
            model: cli.model.clone(),
            timeout: Duration::from_secs(cli.timeout),
            backend: OnceLock::new(),
        })
    }

    /// The configured backend, built on first use and shared by every stage
    /// of the command. Blocking HTTP clients must be created and dropped
    /// outside any async runtime.
    pub fn backend(&self) -> Result<Arc<dyn CompletionBackend>> {
        if let Some(backend) = self.backend.get() {
            return Ok(backend.clone());
        }
        let backend: Arc<dyn CompletionBackend> = match self.cli_backend {
            BackendChoice::Scripted => {
                let path = self.fixture.as_ref().expect("checked in from_cli");
                Arc::new(ScriptedBackend::from_file(path)?)
            }
            BackendChoice::Http => {
                let mut config = HttpBackendConfig::new(&self.endpoint, std::env::var(API_KEY_ENV).ok(), &self.model);
                config.timeout = self.timeout;
                Arc::new(HttpBackend::new(config)?)
            }
        };
        Ok(self.backend.get_or_init(|| backend).clone())
    }

    /// Opens the session store, creating its directory on first use.
    pub fn store(&self) -> Result<FileStore> {
        Ok(FileStore::open(&self.store_path)?)
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        self.catalog.resolve(name).map_err(|e| UsageError(e.to_string()).into())
    }

    fn batch_size_for(&self, task: &TaskSpec) -> NonZeroUsize {
        self.batch_size.unwrap_or(task.default_batch_size)
    }

    fn load(&self, id: Uuid) -> Result<(Session, &TaskSpec)> {
        let session = self.store()?.load(id)?.session;
        let task = self.catalog.get_task(&session.task_name)?;
        Ok((session, task))
    }
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_with<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli, input, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", one_line(&e));
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

pub fn dispatch(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let ctx = Context::from_cli(&cli)?;
    match cli.command {
        Command::Tasks { action } => tasks(&ctx, action, out),
        Command::Run { task } => run(&ctx, &task, input, out),
        Command::Questions { task } => questions(&ctx, &task, out),
        Command::Answer { id, index, text } => answer(&ctx, id, index.zip(text), input, out),
        Command::Output { id } => output(&ctx, id, out),
        Command::Sessions { task, stage } => sessions(&ctx, SessionFilter { task, stage }, out),
        Command::Show { id } => {
            let record = ctx.store()?.load(id)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&record)?)?;
            Ok(())
        }
        Command::Eval {
            file,
            regime,
            na,
            format,
            out: out_path,
        } => eval(&ctx, &file, regime, na, format, out_path, out),
        Command::Serve { listen, static_dir } => serve(&ctx, listen, static_dir),
    }
}

fn tasks(ctx: &Context, action: TasksAction, out: &mut dyn Write) -> Result<()> {
    match action {
        TasksAction::List { core } => {
            for task in ctx.catalog.iter().filter(|t| t.core || !core) {
                writeln!(out, "{}", task.name)?;
            }
        }
        TasksAction::Show { name } => {
            let task = ctx.task(&name)?;
            writeln!(out, "{}", serde_json::to_string_pretty(task)?)?;
        }
    }
    Ok(())
}

fn check_voice(task: &TaskSpec, voice: Voice) -> Result<()> {
    if task.stage1_prompt(voice).is_none() {
        return Err(UsageError(format!("task `{}` has no second-person prompt", task.name)).into());
    }
    Ok(())
}

fn ask(ctx: &Context, task: &TaskSpec) -> Result<Session> {
    check_voice(task, ctx.voice)?;
    let backend = ctx.backend()?;
    let session = generate_questions_with(&*backend, task, &ctx.limits, ctx.voice, &*ctx.clock)?;
    ctx.store()?.save(&session)?;
    Ok(session)
}

/// Reads one non-blank line, re-prompting on blank ones. `None` at end of input.
fn read_answer(input: &mut dyn BufRead, out: &mut dyn Write) -> Result<Option<String>> {
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(None);
        }
        let line = line.trim();
        if !line.is_empty() {
            return Ok(Some(line.to_string()));
        }
        writeln!(out, "(an answer is required)")?;
    }
}

/// Prompts for each unanswered question in turn, saving after every answer.
fn collect_answers(
    ctx: &Context,
    mut session: Session,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<Session> {
    let total = session.questions.len();
    for index in 0..total {
        if session.answers[index].is_some() {
            continue;
        }
        writeln!(out, "[{}/{}] {}", index + 1, total, session.questions[index])?;
        let Some(text) = read_answer(input, out)? else {
            bail!(
                "input ended with {} of {} questions answered; session {} saved",
                session.answers.iter().filter(|a| a.is_some()).count(),
                total,
                session.id
            );
        };
        session = fill_answers_with(&session, &[(index, text)], &*ctx.clock)?;
        ctx.store()?.save(&session)?;
    }
    Ok(session)
}

fn finish(ctx: &Context, session: &Session, task: &TaskSpec, out: &mut dyn Write) -> Result<()> {
    let backend = ctx.backend()?;
    let done = generate_output_with(&*backend, session, task, ctx.batch_size_for(task), &*ctx.clock)?;
    ctx.store()?.save(&done)?;
    writeln!(out, "{}", done.final_output.as_deref().unwrap_or_default())?;
    Ok(())
}

fn run(ctx: &Context, name: &str, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let task = ctx.task(name)?;
    let session = ask(ctx, task)?;
    writeln!(out, "session {}", session.id)?;
    let session = collect_answers(ctx, session, input, out)?;
    writeln!(out)?;
    finish(ctx, &session, task, out)
}

fn questions(ctx: &Context, name: &str, out: &mut dyn Write) -> Result<()> {
    let task = ctx.task(name)?;
    let session = ask(ctx, task)?;
    writeln!(out, "{}", session.id)?;
    for (i, q) in session.questions.iter().enumerate() {
        writeln!(out, "{:>3}. {q}", i + 1)?;
    }
    Ok(())
}

fn answer(
    ctx: &Context,
    id: Uuid,
    single: Option<(usize, String)>,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let (session, _) = ctx.load(id)?;
    let session = match single {
        Some(pair) => {
            let next = fill_answers_with(&session, &[pair], &*ctx.clock)?;
            ctx.store()?.save(&next)?;
            next
        }
        None => collect_answers(ctx, session, input, out)?,
    };
    writeln!(out, "{}", session.stage)?;
    Ok(())
}

fn output(ctx: &Context, id: Uuid, out: &mut dyn Write) -> Result<()> {
    let (session, task) = ctx.load(id)?;
    finish(ctx, &session, task, out)
}

fn sessions(ctx: &Context, filter: SessionFilter, out: &mut dyn Write) -> Result<()> {
    for s in ctx.store()?.list_sessions(&filter)? {
        writeln!(
            out,
            "{}  {:<20} {}  {}",
            s.id,
            s.stage.as_str(),
            s.updated_at.format("%Y-%m-%d %H:%M:%S"),
            s.task_name
        )?;
    }
    Ok(())
}

fn eval(
    ctx: &Context,
    file: &PathBuf,
    regime: RegimeArg,
    na: NaArg,
    format: ReportFormat,
    out_path: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<()> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let records = parse_annotations(&text)?;
    let regime = Regime::new(
        match regime {
            RegimeArg::Tolerant => KaRegime::Tolerant,
            RegimeArg::Strict => KaRegime::Strict,
        },
        match na {
            NaArg::Exclude => NaHandling::NaExcluded,
            NaArg::AsNo => NaHandling::NaAsNo,
        },
    );
    let report = aggregate_report(&records, &ctx.catalog, regime)?;
    let json = render_json(&report);
    if let Some(path) = out_path {
        fs::write(&path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    match format {
        ReportFormat::Table => write!(out, "{}", render_table(&report))?,
        ReportFormat::Json => writeln!(out, "{json}")?,
    }
    Ok(())
}

fn serve(ctx: &Context, listen: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    // Held here so the last reference is dropped outside the runtime.
    let backend = ctx.backend()?;
    let state = AppState::new(
        ctx.catalog.clone(),
        ctx.store()?,
        backend.clone(),
        ctx.clock.clone(),
        ctx.limits.clone(),
    );
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        tracing::info!("listening on {}", listener.local_addr()?);
        let app = service::router(state, static_dir);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(backend);
    io::stdout().flush()?;
    Ok(())
}
