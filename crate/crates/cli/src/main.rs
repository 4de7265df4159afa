//! `gridarena` — create, run and monitor tournament experiments, either
//! against a running service (`GRIDARENA_URL`) or embedded with `--local`.

mod remote;
mod render;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridarena_core::game::workload_for;
use gridarena_core::gridsim::{Backend, Cluster, FailurePolicy, GridTopology, JobState};
use gridarena_core::orchestrator::{
    ExperimentReport, ExperimentState, Orchestrator, OrchestratorConfig, OrchestratorError,
    StatusMap, DEFAULT_BACKOFF,
};
use gridarena_core::seed::derive_seed;
use gridarena_core::tournament::{
    experiment_totals, generate_experiment, is_safe_id, ExperimentManifest, TournamentError,
    Workspace,
};
use gridarena_core::{AgentCharacter, TdParams};
use gridarena_service::{ApiError, Service, ServiceConfig};
use remote::Client;

#[derive(Parser)]
#[command(
    name = "gridarena",
    version,
    about = "Round-robin agent tournaments on a simulated grid"
)]
struct Cli {
    /// Run an embedded orchestrator; experiments are named by workspace directory.
    #[arg(long, global = true)]
    local: bool,
    /// Print the XML documents the service serves instead of tables.
    #[arg(long, global = true)]
    xml: bool,
    #[arg(
        long,
        global = true,
        env = "GRIDARENA_URL",
        default_value = "http://127.0.0.1:8080"
    )]
    url: String,
    #[arg(long, global = true, env = "GRIDARENA_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a new manifest with no agents yet.
    New {
        id: String,
        #[arg(long, default_value = "rsp")]
        game: String,
        #[arg(long, default_value_t = 100)]
        games: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gridarena_core::tournament::DEFAULT_MAX_ATTEMPTS)]
        max_attempts: u32,
        #[arg(short, long, default_value = "manifest.xml")]
        manifest: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Append an agent and its character to a manifest.
    AddAgent {
        id: String,
        #[arg(short, long, default_value = "manifest.xml")]
        manifest: PathBuf,
        #[arg(long)]
        name: Option<String>,
        /// Seed of the agent's initial network; derived from the manifest seed by default.
        #[arg(long)]
        network_seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Generate the experiment workspace from a manifest.
    Export {
        #[arg(short, long, default_value = "manifest.xml")]
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Launch an experiment and follow it to the end, then print the report.
    /// SOURCE is a manifest file, or an experiment (id, or workspace with --local).
    Run {
        source: String,
        /// Where --local exports a manifest; defaults to ./<experiment id>.
        #[arg(long)]
        workspace: Option<PathBuf>,
        #[arg(short, long)]
        quiet: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Show the status map once.
    Status { experiment: String },
    /// Refresh the status map until the experiment finishes.
    Watch {
        experiment: String,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
    },
    /// List experiments known to the service.
    List,
    /// Pause a running experiment.
    Pause { experiment: String },
    /// List an experiment's jobs, optionally only those in one state.
    Jobs {
        experiment: String,
        #[arg(long)]
        state: Option<String>,
    },
    /// Resubmit a failed job.
    Resubmit {
        job: String,
        /// Workspace holding the job (with --local).
        #[arg(long)]
        workspace: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Print the final report.
    Report { experiment: String },
    /// Grid usage of every served experiment.
    Usage,
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "experiments")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 20)]
        poll_ms: u64,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Discrete-event simulation, jobs executed in submission order.
    Sim,
    /// Simulation timing, match payloads executed on a thread pool.
    Parallel,
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    /// Worker nodes per cluster.
    #[arg(long, default_value_t = 8)]
    wns: u32,
    /// Central storage bandwidth in bytes/s (unlimited by default).
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, value_enum, default_value_t = BackendKind::Sim)]
    backend: BackendKind,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Probability that a job attempt fails.
    #[arg(long, default_value_t = 0.0)]
    failure_rate: f64,
    #[arg(long, default_value_t = 0)]
    failure_seed: u64,
    /// Virtual seconds between a failure and its automatic resubmission.
    #[arg(long, default_value_t = DEFAULT_BACKOFF)]
    backoff: f64,
}

impl GridArgs {
    fn config(&self) -> Result<OrchestratorConfig, ApiError> {
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(ApiError::bad_request(
                "--failure-rate must be within [0, 1]",
            ));
        }
        let mut topo = GridTopology::new(
            (0..self.clusters)
                .map(|k| Cluster::new(format!("cluster-{k:02}"), self.wns))
                .collect(),
        );
        if let Some(b) = self.bandwidth {
            topo.central_se_bandwidth = b;
            topo.clusters
                .iter_mut()
                .for_each(|c| c.local_se_bandwidth = b);
        }
        let violations = topo.violations();
        if !violations.is_empty() {
            return Err(ApiError {
                detail: violations,
                ..ApiError::bad_request("invalid grid topology")
            });
        }
        let mut c = OrchestratorConfig::new(topo);
        c.backend = match self.backend {
            BackendKind::Sim => Backend::Simulation,
            BackendKind::Parallel => Backend::LocalParallel {
                threads: self.threads,
            },
        };
        c.failures = FailurePolicy::random(self.failure_rate, None, self.failure_seed);
        c.backoff = self.backoff;
        Ok(c)
    }
}

type Result<T, E = ApiError> = std::result::Result<T, E>;

fn io_error(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::bad_request(format!("{}: {e}", path.display()))
}

fn tournament_error(e: TournamentError) -> ApiError {
    match e {
        TournamentError::Invalid(v) => ApiError::validation(v),
        other => ApiError::internal(other.to_string()),
    }
}

fn orch_error(e: OrchestratorError) -> ApiError {
    ApiError::from(e)
}

fn read_manifest(path: &Path) -> Result<ExperimentManifest> {
    let doc = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    ExperimentManifest::from_xml(&doc)
        .map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

fn write_manifest(path: &Path, m: &ExperimentManifest) -> Result<()> {
    fs::write(path, m.to_xml()).map_err(|e| io_error(path, e))
}

fn print_report(r: &ExperimentReport, xml: bool) {
    if xml {
        print!("{}", r.to_xml());
    } else {
        print!("{}", r.to_text());
    }
}

fn print_status(s: &StatusMap, xml: bool) {
    if xml {
        print!("{}", s.to_xml());
    } else {
        print!("{}", render::status_table(s));
    }
}

fn needs_service(what: &str) -> ApiError {
    ApiError::bad_request(format!("`{what}` talks to the service; drop --local"))
}

fn local_status(dir: &Path) -> Result<StatusMap> {
    let path = Workspace::at(dir).status_path();
    let doc = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    StatusMap::from_xml(&doc).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}

fn exit_for(state: ExperimentState) -> ExitCode {
    match state {
        ExperimentState::Completed => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let client = || Client::new(&cli.url, cli.token.clone());
    match cli.command {
        Command::New {
            id,
            game,
            games,
            seed,
            max_attempts,
            manifest,
            force,
        } => {
            if manifest.exists() && !force {
                return Err(ApiError::conflict(format!(
                    "{} exists; pass --force to overwrite",
                    manifest.display()
                )));
            }
            if !is_safe_id(&id) {
                return Err(ApiError::validation(vec![format!(
                    "experiment id `{id}` is not a safe identifier"
                )]));
            }
            workload_for(&game).map_err(|e| ApiError::validation(vec![e.to_string()]))?;
            let mut m = ExperimentManifest::new(id, game);
            m.games_per_match = games;
            m.seed = seed;
            m.max_attempts = max_attempts;
            write_manifest(&manifest, &m)?;
            println!(
                "wrote {} (add at least two agents next)",
                manifest.display()
            );
        }
        Command::AddAgent {
            id,
            manifest,
            name,
            network_seed,
            alpha,
            gamma,
            lambda,
            epsilon,
        } => {
            let mut m = read_manifest(&manifest)?;
            if m.agent(&id).is_some() {
                return Err(ApiError::conflict(format!(
                    "agent `{id}` is already in the manifest"
                )));
            }
            let d = TdParams::default();
            let td = TdParams {
                alpha: alpha.unwrap_or(d.alpha),
                gamma: gamma.unwrap_or(d.gamma),
                lambda: lambda.unwrap_or(d.lambda),
                epsilon: epsilon.unwrap_or(d.epsilon),
            };
            td.validate().map_err(|e| ApiError::validation(vec![e]))?;
            let seed =
                network_seed.unwrap_or_else(|| derive_seed(m.seed, &[m.agents.len() as u64]));
            let mut agent = AgentCharacter::new(id.clone(), seed);
            agent.td_params = td;
            if let Some(n) = name {
                agent.display_name = n;
            }
            m.agents.push(agent);
            let bad: Vec<String> = m
                .violations()
                .into_iter()
                .filter(|v| !v.contains(">= 2 agents"))
                .collect();
            if !bad.is_empty() {
                return Err(ApiError::validation(bad));
            }
            write_manifest(&manifest, &m)?;
            println!("added {id} ({} agents)", m.agents.len());
        }
        Command::Export { manifest, out } => {
            let m = read_manifest(&manifest)?;
            generate_experiment(&m, &out).map_err(tournament_error)?;
            let t = experiment_totals(&m);
            println!(
                "exported {} to {}: {} agents, {} matches, {} games per agent",
                m.experiment_id,
                out.display(),
                t.agents,
                t.total_matches,
                t.per_agent_games
            );
        }
        Command::Run {
            source,
            workspace,
            quiet,
            grid,
        } => {
            let src = PathBuf::from(&source);
            if cli.local {
                let dir = if src.is_dir() {
                    src
                } else {
                    let m = read_manifest(&src)?;
                    let dir = workspace.unwrap_or_else(|| PathBuf::from(&m.experiment_id));
                    if !dir.join("manifest.xml").exists() {
                        generate_experiment(&m, &dir).map_err(tournament_error)?;
                    }
                    dir
                };
                let mut o = Orchestrator::open(&dir, grid.config()?).map_err(orch_error)?;
                if matches!(
                    o.state(),
                    ExperimentState::Created | ExperimentState::Paused
                ) {
                    o.start().map_err(orch_error)?;
                }
                let stdout = std::io::stdout();
                if !quiet {
                    for e in o.events() {
                        let _ = writeln!(stdout.lock(), "{}", e.to_line());
                    }
                }
                while o.state() == ExperimentState::Running {
                    let evs = o.poll().map_err(orch_error)?;
                    if !quiet {
                        let mut out = stdout.lock();
                        for e in evs {
                            let _ = writeln!(out, "{}", e.to_line());
                        }
                    }
                }
                if o.state() == ExperimentState::Paused {
                    return Err(ApiError::conflict("experiment paused"));
                }
                let report = o.finalize().map_err(orch_error)?;
                print_report(&report, cli.xml);
                return Ok(exit_for(report.state));
            }
            let c = client();
            let id = if src.is_file() {
                let m = read_manifest(&src)?;
                c.post("/experiments", &m.to_xml())?;
                m.experiment_id
            } else {
                source
            };
            let s = c.status(&id)?;
            if matches!(s.state, ExperimentState::Created | ExperimentState::Paused) {
                c.post(&format!("/experiments/{id}/start"), "")?;
            }
            c.follow(|_, e| {
                if e.experiment_id != id {
                    return true;
                }
                if !quiet {
                    println!("{}", e.to_line());
                }
                !(e.job_id().is_none() && matches!(e.new_state.as_str(), "COMPLETED" | "FAILED"))
            })?;
            let doc = c.get(&format!("/experiments/{id}/report"))?;
            let report =
                ExperimentReport::from_xml(&doc).map_err(|e| ApiError::internal(e.to_string()))?;
            print_report(&report, cli.xml);
            return Ok(exit_for(report.state));
        }
        Command::Status { experiment } => {
            let s = if cli.local {
                local_status(Path::new(&experiment))?
            } else {
                client().status(&experiment)?
            };
            print_status(&s, cli.xml);
        }
        Command::Watch {
            experiment,
            interval_ms,
        } => {
            let mut last = None;
            loop {
                let s = if cli.local {
                    local_status(Path::new(&experiment))?
                } else {
                    client().status(&experiment)?
                };
                if last.as_ref() != Some(&s) {
                    print_status(&s, cli.xml);
                    println!();
                }
                if s.state.is_finished() {
                    break;
                }
                last = Some(s);
                thread::sleep(Duration::from_millis(interval_ms));
            }
        }
        Command::List => {
            if cli.local {
                return Err(needs_service("list"));
            }
            print!("{}", client().get("/experiments")?);
        }
        Command::Pause { experiment } => {
            if cli.local {
                return Err(needs_service("pause"));
            }
            let doc = client().post(&format!("/experiments/{experiment}/pause"), "")?;
            let s = StatusMap::from_xml(&doc).map_err(|e| ApiError::internal(e.to_string()))?;
            println!("{} {}", s.experiment_id, s.state);
        }
        Command::Jobs { experiment, state } => {
            let filter = state
                .as_deref()
                .map(|s| s.parse::<JobState>())
                .transpose()
                .map_err(ApiError::bad_request)?;
            let s = if cli.local {
                local_status(Path::new(&experiment))?
            } else {
                let q = state.map(|s| format!("?state={s}")).unwrap_or_default();
                let doc = client().get(&format!("/experiments/{experiment}/jobs{q}"))?;
                if cli.xml {
                    print!("{doc}");
                    return Ok(ExitCode::SUCCESS);
                }
                client().status(&experiment)?
            };
            if cli.xml {
                print!("{}", s.jobs_to_xml(filter));
            } else {
                let mut only = s.clone();
                for r in &mut only.rounds {
                    r.jobs.retain(|j| filter.is_none_or(|f| j.state == f));
                }
                print!("{}", render::status_table(&only));
            }
        }
        Command::Resubmit {
            job,
            workspace,
            grid,
        } => {
            if cli.local {
                let dir = workspace
                    .ok_or_else(|| ApiError::bad_request("--local resubmit needs --workspace"))?;
                let mut o = Orchestrator::open(&dir, grid.config()?).map_err(orch_error)?;
                let new_id = o.resubmit_job(&job).map_err(orch_error)?;
                println!("resubmitted {job} as {new_id}; `gridarena --local run {}` continues the experiment", dir.display());
            } else {
                let doc = client().post(&format!("/jobs/{job}/resubmit"), "")?;
                if cli.xml {
                    print!("{doc}");
                } else {
                    println!("resubmitted {job}");
                }
            }
        }
        Command::Report { experiment } => {
            let report = if cli.local {
                let path = Workspace::at(&experiment).report_xml_path();
                let doc = fs::read_to_string(&path).map_err(|_| {
                    ApiError::conflict(format!(
                        "{experiment} has no report yet (experiment not finished)"
                    ))
                })?;
                ExperimentReport::from_xml(&doc)
            } else {
                ExperimentReport::from_xml(
                    &client().get(&format!("/experiments/{experiment}/report"))?,
                )
            }
            .map_err(|e| ApiError::internal(e.to_string()))?;
            print_report(&report, cli.xml);
        }
        Command::Usage => {
            if cli.local {
                return Err(needs_service("usage"));
            }
            print!("{}", client().get("/grid/usage")?);
        }
        Command::Serve {
            data_dir,
            addr,
            poll_ms,
            grid,
        } => {
            let mut config = ServiceConfig::new(data_dir);
            config.token = cli.token.clone();
            config.orchestrator = grid.config()?;
            config.poll_interval = Duration::from_millis(poll_ms);
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| ApiError::internal(e.to_string()))?;
            rt.block_on(async {
                let service =
                    Service::open(config).map_err(|e| ApiError::internal(e.to_string()))?;
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .map_err(|e| ApiError::bad_request(format!("{addr}: {e}")))?;
                let bound = listener
                    .local_addr()
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                eprintln!("listening on http://{bound}");
                gridarena_service::serve(listener, service)
                    .await
                    .map_err(|e| ApiError::internal(e.to_string()))
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let xml = cli.xml;
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if xml {
                eprint!("{}", e.to_xml());
            } else {
                eprintln!("error[{}]: {}", e.code, e.message);
                for d in &e.detail {
                    eprintln!("  - {d}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
