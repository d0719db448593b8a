use clap::{Args, Parser, Subcommand};
use geonmpc::simulation::{
    compare_preconditioning, emit_plot_data, initialize_for, run_simulation, SimConfig, SimFailure,
};
use geonmpc::Error;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;

/// Closed-loop NMPC on the unit hemisphere.
#[derive(Debug, Parser)]
#[command(name = "geonmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    opts: Options,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write CSV plot data (default).
    Simulate(Options),
    /// Run with and without the LU preconditioner and compare GMRES iterations.
    ComparePrecond(Options),
    /// Solve the initial horizon problem and print the decision vector.
    InitOnly(Options),
}

#[derive(Debug, Clone, Default, Args)]
struct Options {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Disable the periodic LU preconditioner.
    #[arg(long, global = true)]
    no_precond: bool,
    /// Output directory for the CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    max_samples: Option<usize>,
    /// Same as the `compare-precond` subcommand.
    #[arg(long, global = true)]
    compare_precond: bool,
}

type Runner = fn(&SimConfig) -> Result<(), Failure>;

enum Failure {
    Config(Error),
    Solver(String),
}

impl From<SimFailure> for Failure {
    fn from(f: SimFailure) -> Self {
        if f.is_config_error() {
            return Failure::Config(f.source);
        }
        let mut msg = f.to_string();
        if let Some(r) = f.last_good() {
            msg.push_str(&format!(
                "\nlast good sample: t = {}, (x, y) = ({}, {}), u = {}, p = {}, |F| = {:e}",
                r.t, r.x, r.y, r.u, r.p, r.norm_f
            ));
        }
        Failure::Solver(msg)
    }
}

fn load_config(opts: &Options) -> Result<SimConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => SimConfig::from_file(path).map_err(Failure::Config)?,
        None => SimConfig::default(),
    };
    if opts.no_precond {
        cfg.solver.precondition = false;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    if let Some(k) = opts.max_samples {
        cfg.max_samples = k;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn simulate(cfg: &SimConfig) -> Result<(), Failure> {
    let outcome = run_simulation(cfg)?;
    let paths = emit_plot_data(&outcome.records, &cfg.output_dir)
        .map_err(|e| Failure::Solver(e.to_string()))?;
    let last = outcome.records.last();
    println!(
        "initial p = {:.8} (|F| = {:.3e} after {} Newton iterations)",
        cfg_param(&outcome.init.decision),
        outcome.init.residual_norm,
        outcome.init.iterations
    );
    println!(
        "samples = {}, stop = {:?}",
        outcome.records.len(),
        outcome.stop
    );
    if let Some(r) = last {
        println!(
            "final t = {:.5}, p = {:.5}, |F| = {:.3e}",
            r.t, r.p, r.norm_f
        );
    }
    println!(
        "final state = ({:.6}, {:.6})",
        outcome.final_state[0], outcome.final_state[1]
    );
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cfg_param(decision: &[f64]) -> f64 {
    decision.last().copied().unwrap_or(f64::NAN)
}

fn compare(cfg: &SimConfig) -> Result<(), Failure> {
    let cmp = compare_preconditioning(cfg)?;
    let table = cmp.summary_table();
    std::fs::create_dir_all(&cfg.output_dir)
        .and_then(|_| std::fs::write(cfg.output_dir.join("precond_comparison.csv"), &table))
        .map_err(|e| Failure::Solver(format!("{}: {e}", cfg.output_dir.display())))?;
    println!(
        "mean GMRES iterations: preconditioned {:.4}, unpreconditioned {:.4}",
        cmp.mean_on, cmp.mean_off
    );
    println!("post-refresh iterations: {:?}", cmp.post_refresh_on);
    println!("max chart-state gap: {:.3e}", cmp.max_state_gap);
    if cmp.preconditioning_helps() {
        Ok(())
    } else {
        Err(Failure::Solver(
            "preconditioned mean is not below the unpreconditioned mean".into(),
        ))
    }
}

fn init_only(cfg: &SimConfig) -> Result<(), Failure> {
    let (_, _, report) = initialize_for(cfg).map_err(|e| match e {
        Error::InvalidArgument(_) | Error::Config { .. } => Failure::Config(e),
        other => Failure::Solver(other.to_string()),
    })?;
    for v in &report.decision {
        println!("{v:.16e}");
    }
    println!("|F| = {:.3e}", report.residual_norm);
    println!("p = {:.8}", cfg_param(&report.decision));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, run): (Options, Runner) = match cli.command {
        Some(Command::Simulate(o)) => (merge(cli.opts, o), simulate),
        Some(Command::ComparePrecond(o)) => (merge(cli.opts, o), compare),
        Some(Command::InitOnly(o)) => (merge(cli.opts, o), init_only),
        None => (cli.opts, simulate),
    };
    let run = if opts.compare_precond { compare } else { run };
    let result = load_config(&opts).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn merge(outer: Options, inner: Options) -> Options {
    Options {
        config: inner.config.or(outer.config),
        no_precond: inner.no_precond || outer.no_precond,
        out: inner.out.or(outer.out),
        max_samples: inner.max_samples.or(outer.max_samples),
        compare_precond: inner.compare_precond || outer.compare_precond,
    }
}
