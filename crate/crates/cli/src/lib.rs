//! The `treasure` command.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use treasure_bridge::{BridgeClient, RobotSim};
use treasure_core::config::load_config;
use treasure_core::experiment::{run_experiment, ExperimentSpec, TeacherSpec};
use treasure_core::export::{learning_curve_csv, QExport};
use treasure_core::hitl::StepPhase;
use treasure_core::oracle::{bellman_residual, greedy_trace, value_iteration};
use treasure_core::session::Control;
use treasure_core::{Hyperparams, MazeConfig, Session, SessionInput, VisitCounts};
use treasure_server::{AppState, ServerSettings, SessionHandle};

pub mod inspect;

#[derive(Debug, Parser)]
#[command(
    name = "treasure",
    version,
    about = "Treasure-hunt Q-learning with a human in the loop"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train headless and write a session snapshot plus a learning curve.
    Train(TrainArgs),
    /// Solve the maze by value iteration and write the optimal Q-table.
    Oracle(OracleArgs),
    /// Compare autonomous and oracle-advised learning over many seeds.
    Experiment(ExperimentArgs),
    /// Print a snapshot or Q-table file in readable form.
    Inspect(InspectArgs),
    /// Run the session server, with a simulated robot unless one is given.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MazeArgs {
    /// Maze config file; the built-in 3x3 layout when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl MazeArgs {
    fn load(&self) -> Result<(MazeConfig, Option<Hyperparams>)> {
        match &self.config {
            Some(path) => {
                let loaded = load_config(path).with_context(|| format!("loading {}", path.display()))?;
                Ok((loaded.maze, loaded.hyperparams))
            }
            None => Ok((MazeConfig::default(), None)),
        }
    }
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

impl HyperArgs {
    /// Flags win over the config file, which wins over the defaults.
    fn resolve(&self, from_file: Option<Hyperparams>) -> Result<Hyperparams> {
        let base = from_file.unwrap_or_default();
        Ok(Hyperparams::new(
            self.alpha.unwrap_or(base.alpha()),
            self.gamma.unwrap_or(base.gamma()),
            self.epsilon.unwrap_or(base.epsilon()),
        )?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub maze: MazeArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub episodes: u64,
    /// Output directory for snapshot.json and learning_curve.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Mirror every move on the robot bridge at this URL.
    #[arg(long)]
    pub bridge: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub maze: MazeArgs,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Q-table file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub maze: MazeArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// First seed; runs use `seed .. seed + seeds`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
    /// Episode budget per run.
    #[arg(long, default_value_t = 5000)]
    pub episodes: u64,
    /// Episodes during which the oracle teacher may advise.
    #[arg(long, default_value_t = 10)]
    pub advice_episodes: u64,
    /// Chance that the teacher advises on a step; 0 runs two identical arms.
    #[arg(long, default_value_t = 1.0)]
    pub advice_probability: f64,
    /// Output directory for experiment.csv and summary.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-episode scores to curves.csv.
    #[arg(long)]
    pub curves: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A session snapshot or a Q-table file.
    pub file: PathBuf,
    /// Maze the Q-table file was made for; only needed for Q-table files
    /// of a non-default maze.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rows of the episode table to show.
    #[arg(long, default_value_t = 20)]
    pub last: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub maze: MazeArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Server settings file; environment variables override it.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Use the robot bridge at this URL instead of starting a simulator.
    #[arg(long)]
    pub bridge: Option<String>,
    /// Seed of the simulated robot's drift.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::Oracle(args) => oracle(&args),
        Command::Experiment(args) => experiment(&args),
        Command::Inspect(args) => inspect::run(&args),
        Command::Serve(args) => serve(args),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trains for `episodes` complete episodes without a robot.
pub fn train_session(config: MazeConfig, hp: Hyperparams, seed: u64, episodes: u64) -> Result<Session> {
    let mut session = Session::new(config, hp, seed).with_step_interval(0);
    while (session.training().completed_episodes().len() as u64) < episodes {
        session.apply(SessionInput::Control(Control::Step))?;
    }
    Ok(session)
}

async fn train_bridged(session: Session, episodes: u64, client: BridgeClient) -> Result<Session> {
    let handle = SessionHandle::spawn(session, Some(client));
    loop {
        let done = handle.read(|s| s.training().completed_episodes().len() as u64).await?;
        if done >= episodes {
            break;
        }
        let status = handle.input(SessionInput::Control(Control::Step)).await?;
        if status.status.phase != StepPhase::ObserveState {
            bail!(
                "robot bridge stopped answering during episode {}",
                status.status.episode
            );
        }
    }
    Ok(handle.read(Session::clone).await?)
}

fn train(args: &TrainArgs) -> Result<()> {
    let (config, file_hp) = args.maze.load()?;
    let hp = args.hyper.resolve(file_hp)?;
    let session = match &args.bridge {
        None => train_session(config, hp, args.seed, args.episodes)?,
        Some(url) => {
            let client = BridgeClient::new(url, Duration::from_secs(2));
            let session = Session::new(config, hp, args.seed).with_step_interval(0);
            tokio::runtime::Runtime::new()?.block_on(train_bridged(session, args.episodes, client))?
        }
    };
    create_dir(&args.out)?;
    let snapshot = args.out.join("snapshot.json");
    session.save(&snapshot)?;
    let episodes = session.training().completed_episodes();
    write(&args.out.join("learning_curve.csv"), &learning_curve_csv(episodes))?;
    let last = episodes.last();
    println!(
        "trained {} episodes (seed {}); last score {}; wrote {}",
        episodes.len(),
        args.seed,
        last.map_or("n/a".to_string(), |e| e.score.to_string()),
        snapshot.display()
    );
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let (config, _) = args.maze.load()?;
    let solution = value_iteration(&config, args.gamma, args.tol)?;
    let residual = bellman_residual(&solution.q, &config, args.gamma);
    let hp = Hyperparams::new(Hyperparams::default().alpha(), args.gamma, 0.0)?;
    let export = QExport::new(&config, &solution.q, &VisitCounts::for_maze(&config), hp, None);
    export.save(&args.out)?;
    let path: Vec<char> = greedy_trace(&solution.q, &config)
        .iter()
        .map(|t| t.action.arrow())
        .collect();
    println!(
        "value iteration: {} sweeps, residual {residual:.3e}; greedy path {}; wrote {}",
        solution.sweeps,
        path.iter().collect::<String>(),
        args.out.display()
    );
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let (config, file_hp) = args.maze.load()?;
    if !(0.0..=1.0).contains(&args.advice_probability) {
        bail!("advice probability {} outside [0, 1]", args.advice_probability);
    }
    let spec = ExperimentSpec {
        config,
        hyperparams: args.hyper.resolve(file_hp)?,
        seeds: (args.seed..args.seed + args.seeds).collect(),
        episodes: args.episodes,
        teacher: TeacherSpec::OracleAdvice {
            first_k_episodes: args.advice_episodes,
            advice_probability: args.advice_probability,
        },
    };
    let report = run_experiment(&spec)?;
    create_dir(&args.out)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write(&args.out.join("experiment.csv"), std::str::from_utf8(&csv)?)?;
    if args.curves {
        let mut curves = Vec::new();
        report.write_curves(&mut curves)?;
        write(&args.out.join("curves.csv"), std::str::from_utf8(&curves)?)?;
    }
    let summary = report.summary_text();
    write(&args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let (config, file_hp) = args.maze.load()?;
    let hp = args.hyper.resolve(file_hp)?;
    let settings = match &args.settings {
        Some(path) => ServerSettings::load(path)?,
        None => ServerSettings::default(),
    };
    let mut settings = settings.from_env()?;
    if let Some(port) = args.port {
        settings.bind.set_port(port);
    }
    if args.bridge.is_some() {
        settings.bridge_url = args.bridge.clone();
    }
    tracing_subscriber::fmt().with_target(false).init();
    tokio::runtime::Runtime::new()?.block_on(async move {
        if settings.bridge_url.is_none() {
            let robot = RobotSim::for_maze(&config, args.seed);
            let addr = SocketAddr::new(settings.bind.ip(), 0);
            let (bridge_addr, bridge) =
                treasure_bridge::http::bind(addr, robot, Duration::from_millis(settings.step_interval_ms / 2)).await?;
            tokio::spawn(bridge);
            tracing::info!(%bridge_addr, "simulated robot listening");
            settings.bridge_url = Some(format!("http://{bridge_addr}"));
        }
        let (addr, server) = treasure_server::bind(AppState::new(settings, config, hp)).await?;
        tracing::info!(%addr, "session server listening");
        tokio::select! {
            r = server => r?,
            _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        }
        Ok(())
    })
}
