use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use soatt::config::ConfigFile;
use soatt::metrics::MetricsReport;
use soatt::plot::render_svg;
use soatt::safety::CaStrategy;
use soatt::simulator::run;
use soatt::trace_io::{load_trace, metrics_csv, save_trace, METRICS_FILE};
use soatt::tracking::DeadlockStrategy;
use soatt::SoattError;

const PLOT_FILE: &str = "trajectories.svg";

#[derive(Parser)]
#[command(
    name = "soatt",
    version,
    about = "Multi-robot trajectory tracking with collision avoidance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, or a sweep over robot counts and strategies.
    Run(RunArgs),
    /// Render a saved trace as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = PLOT_FILE)]
        out: PathBuf,
    },
    /// Print a scenario file with every default filled in.
    Config {
        /// Start from this file instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Trace,
    Metrics,
    Plot,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML); defaults to a ten-robot circle.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Robot counts to sweep, e.g. 20,25,30.
    #[arg(long, value_delimiter = ',')]
    sweep_n: Vec<usize>,
    /// Collision-avoidance strategies to sweep.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<CaStrategy>,
    /// Deadlock strategies to sweep.
    #[arg(long, value_delimiter = ',')]
    deadlock: Vec<DeadlockStrategy>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Outputs to write; all of them when omitted.
    #[arg(long, value_enum)]
    emit: Vec<Emit>,
}

struct Job {
    label: String,
    file: ConfigFile,
    dir: PathBuf,
}

fn exit_code(err: &SoattError) -> u8 {
    match err {
        SoattError::Io { .. } => 4,
        e if e.is_solver_failure() => 3,
        SoattError::Step { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn write_file(path: &Path, contents: &str) -> soatt::Result<()> {
    std::fs::write(path, contents).map_err(|source| SoattError::Io {
        path: path.to_owned(),
        source,
    })
}

fn create_dir(path: &Path) -> soatt::Result<()> {
    std::fs::create_dir_all(path).map_err(|source| SoattError::Io {
        path: path.to_owned(),
        source,
    })
}

fn run_job(job: &Job, emit: &[Emit]) -> soatt::Result<MetricsReport> {
    let config = job.file.build()?;
    info!("{}: {} robots", job.label, config.robots.len());
    let trace = run(&config)?;
    let report = MetricsReport::from_trace(&trace)?;
    create_dir(&job.dir)?;
    if emit.contains(&Emit::Trace) {
        save_trace(&trace, &job.dir)?;
    }
    if emit.contains(&Emit::Metrics) {
        write_file(&job.dir.join(METRICS_FILE), &metrics_csv(&report))?;
    }
    if emit.contains(&Emit::Plot) {
        write_file(&job.dir.join(PLOT_FILE), &render_svg(&trace)?)?;
    }
    Ok(report)
}

fn plan(args: &RunArgs) -> soatt::Result<Vec<Job>> {
    let base = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let counts = if args.sweep_n.is_empty() {
        vec![None]
    } else {
        args.sweep_n.iter().map(|&n| Some(n)).collect()
    };
    let strategies = if args.strategy.is_empty() {
        vec![None]
    } else {
        args.strategy.iter().map(|&s| Some(s)).collect()
    };
    let deadlocks = if args.deadlock.is_empty() {
        vec![None]
    } else {
        args.deadlock.iter().map(|&d| Some(d)).collect()
    };
    let single = counts.len() * strategies.len() * deadlocks.len() == 1;

    let mut jobs = Vec::new();
    for &n in &counts {
        for &strategy in &strategies {
            for &deadlock in &deadlocks {
                let mut file = base.clone();
                if let Some(n) = n {
                    file.robots.count = n;
                }
                if let Some(s) = strategy {
                    file.strategy.collision = s;
                }
                if let Some(d) = deadlock {
                    file.strategy.deadlock = d;
                }
                let label = format!(
                    "{}_n{}_{}_{}",
                    file.name.as_deref().unwrap_or(match file.robots.preset {
                        soatt::config::Preset::Circle => "circle",
                        soatt::config::Preset::Swap => "swap",
                        soatt::config::Preset::Custom => "custom",
                    }),
                    if file.robots.custom.is_empty() {
                        file.robots.count
                    } else {
                        file.robots.custom.len()
                    },
                    file.strategy.collision.name(),
                    file.strategy.deadlock.name(),
                );
                let dir = if single {
                    args.out.clone()
                } else {
                    args.out.join(&label)
                };
                jobs.push(Job { label, file, dir });
            }
        }
    }
    Ok(jobs)
}

fn cmd_run(args: RunArgs) -> Result<(), SoattError> {
    let emit = if args.emit.is_empty() {
        vec![Emit::Trace, Emit::Metrics, Emit::Plot]
    } else {
        args.emit.clone()
    };
    let jobs = plan(&args)?;
    // Validate every configuration before spending time on any simulation.
    for job in &jobs {
        job.file.build()?;
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<soatt::Result<MetricsReport>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let result = run_job(job, &emit);
                results
                    .lock()
                    .expect("no worker panics while holding the lock")[k] = Some(result);
            });
        }
    });

    println!(
        "{:<44} {:>10} {:>6} {:>10} {:>10} {:>10} {:>8}",
        "run", "min_dist", "viol", "rmse", "mae", "interv_s", "goal"
    );
    let mut first_error = None;
    for (job, result) in jobs
        .iter()
        .zip(results.into_inner().expect("workers joined"))
    {
        match result.expect("every job ran") {
            Ok(r) => println!(
                "{:<44} {:>10.4} {:>6} {:>10.4} {:>10.4} {:>10.3} {:>8.2}",
                job.label,
                r.safety.min_distance,
                r.safety.violations,
                r.tracking.rmse,
                r.tracking.mae,
                r.intervention.mean,
                r.goal_fraction(0.05),
            ),
            Err(e) => {
                error!("{}: {e}", job.label);
                println!("{:<44} failed: {e}", job.label);
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn cmd_plot(trace: &Path, out: &Path) -> Result<(), SoattError> {
    let trace = load_trace(trace)?;
    let svg = render_svg(&trace)?;
    write_file(out, &svg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Plot { trace, out } => cmd_plot(&trace, &out),
        Command::Config { config } => {
            let file = match config {
                Some(path) => ConfigFile::load(&path),
                None => Ok(ConfigFile::default()),
            };
            file.map(|f| print!("{}", f.to_toml()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
