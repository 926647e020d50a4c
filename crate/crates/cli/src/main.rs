//! `distid`: generate random MISO FIR systems, run the central and
//! distributed estimators on them, monitor the Lyapunov function and compare
//! error trajectories.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distid::{
    first_crossing, random_system, run_with_system, CentralRule, CsvTable, Error, ExperimentConfig64,
    ExperimentOutcome, MisoSystem64, RunMode,
};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "distid", version, about = "Distributed recursive identification of MISO FIR systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random system and write it as JSON.
    GenSystem(GenSystemArgs),
    /// Run the estimators on a system and write trajectory CSVs.
    Run(RunArgs),
    /// Run with the Lyapunov monitor and summarize its findings.
    Monitor(MonitorArgs),
    /// Compare when two trajectories first cross a fraction of their start.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenSystemArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    modules: usize,
    #[arg(long, default_value_t = 1)]
    min_order: usize,
    #[arg(long, default_value_t = 10)]
    max_order: usize,
    #[arg(long, default_value_t = 1.0)]
    param_std: f64,
    /// Output noise level stored in the file.
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Central,
    Distributed,
    Both,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Central => RunMode::Central,
            ModeArg::Distributed => RunMode::Distributed,
            ModeArg::Both => RunMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CentralArg {
    Gamma,
    Sigma,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3500)]
    samples: usize,
    /// Output noise level; defaults to the one in the system file.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
    #[arg(long, default_value_t = 100.0)]
    init_c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Information weighting of the central estimator.
    #[arg(long, value_enum, default_value = "gamma")]
    central_update: CentralArg,
    /// Noise level assumed inside the estimator gains; defaults to --sigma.
    #[arg(long)]
    estimator_sigma: Option<f64>,
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Append Lyapunov monitor columns.
    #[arg(long)]
    monitor: bool,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "err_norm_sq")]
    metric: String,
    #[arg(long, default_value_t = 0.01)]
    threshold_frac: f64,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::GenSystem(args) => gen_system(args),
        Command::Run(args) => run(args),
        Command::Monitor(args) => monitor(args),
        Command::Compare(args) => compare(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        EXIT_IO
    } else if e.step().is_none() && matches!(e, Error::Parameter(_)) {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

fn gen_system(args: GenSystemArgs) -> Result<(), Failure> {
    let config = ExperimentConfig64 {
        seed: args.seed,
        m: args.modules,
        order_range: (args.min_order, args.max_order),
        param_std: args.param_std,
        noise_std: args.noise_std,
        ..Default::default()
    };
    let system = random_system(&config)?;
    system.save(&args.out)?;
    println!("info: wrote {}", args.out.display());
    println!("result: n={}", system.parameter_count());
    let orders: Vec<String> = system.orders().iter().map(usize::to_string).collect();
    println!("result: orders={}", orders.join(","));
    Ok(())
}

fn simulate(sim: &SimArgs, monitor: bool) -> Result<ExperimentOutcome<f64>, Failure> {
    let system = MisoSystem64::load(&sim.system)?;
    let mut config = ExperimentConfig64::for_system(&system);
    config.seed = sim.seed;
    config.mode = sim.mode.into();
    config.samples = sim.samples;
    config.noise_std = sim.sigma.unwrap_or(system.noise_std());
    config.gamma = sim.gamma;
    config.init_c = sim.init_c;
    config.monitor = monitor;
    config.central_update = match sim.central_update {
        CentralArg::Gamma => CentralRule::Gamma,
        CentralArg::Sigma => CentralRule::Sigma,
    };
    config.estimator_noise_std = sim.estimator_sigma;
    println!(
        "info: m={} n={} samples={} sigma={} gamma={} init_c={} seed={}",
        system.inputs(),
        system.parameter_count(),
        config.samples,
        config.noise_std,
        config.gamma,
        config.init_c,
        config.seed
    );
    Ok(run_with_system(&config, system)?)
}

fn report_finals(outcome: &ExperimentOutcome<f64>) {
    for traj in outcome.central.iter().chain(&outcome.distributed) {
        match traj.final_err_norm_sq() {
            Some(e) => println!("result: {} final_err_norm_sq={}", traj.kind.label(), distid::fmt_real(e)),
            None => println!("result: {} final_err_norm_sq=none", traj.kind.label()),
        }
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let outcome = simulate(&args.sim, args.monitor)?;
    for path in outcome.write_csvs(&args.sim.out_prefix)? {
        println!("info: wrote {}", path.display());
    }
    report_finals(&outcome);
    Ok(())
}

fn monitor(args: MonitorArgs) -> Result<(), Failure> {
    let outcome = simulate(&args.sim, true)?;
    for path in outcome.write_monitor_csvs(&args.sim.out_prefix)? {
        println!("info: wrote {}", path.display());
    }
    for traj in outcome.central.iter().chain(&outcome.distributed) {
        let Some(report) = &traj.monitor else { continue };
        let label = traj.kind.label();
        println!("result: {label} steps={}", report.records.len());
        println!("result: {label} violations={}", report.violations().len());
        println!(
            "result: {label} nonorthogonal_violations={}",
            report.nonorthogonal_violations().len()
        );
        println!("result: {label} orthogonal_steps={}", report.orthogonal_steps().len());
        println!("result: {label} lower_bound_holds={}", report.lower_bound_holds());
        if traj.kind == distid::EstimatorKind::Distributed {
            println!("result: {label} certified_steps={}", report.certified_steps().len());
            println!("result: {label} bound_failures={}", report.bound_failures().len());
            println!("result: {label} contradictions={}", report.contradictions().len());
        }
    }
    report_finals(&outcome);
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let column = |path: &PathBuf| -> Result<Vec<f64>, Failure> {
        let table = CsvTable::read(path)?;
        table
            .column(&args.metric)
            .ok_or_else(|| Failure::Usage(format!("{}: no column {:?}", path.display(), args.metric)))
    };
    let (a, b) = (column(&args.a)?, column(&args.b)?);
    let ka = first_crossing(&a, args.threshold_frac);
    let kb = first_crossing(&b, args.threshold_frac);
    let show = |k: Option<usize>| k.map_or_else(|| "none".to_string(), |k| k.to_string());
    println!("info: metric={} threshold_frac={}", args.metric, args.threshold_frac);
    println!("result: a_crossing={}", show(ka));
    println!("result: b_crossing={}", show(kb));
    match (ka, kb) {
        (Some(x), Some(y)) => println!("result: difference={}", y as i64 - x as i64),
        _ => println!("result: difference=none"),
    }
    Ok(())
}
