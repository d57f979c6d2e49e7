//! Command-line front end: argument parsing, orchestration and exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, RunConfig, RunModel};
use crate::diagnostics::{self, CaginalpParams};
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::io::{self, OutputLock};
use crate::littlewood_paley::{self, build_partition};
use crate::model_a2;
use crate::picard::{self, PicardOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable capping the worker threads of the FFT kernels.
pub const THREADS_ENV: &str = "THERMOCH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "thermoch", version, about = "Temperature-dependent Cahn-Hilliard simulator and verification harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Seed for random initial data; overrides `init.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time-march the configured model and write snapshots and diagnostics.csv.
    Simulate(RunArgs),
    /// Evaluate the smallness condition on the configured initial data.
    CheckSmallness(RunArgs),
    /// Run the Picard iteration of the fixed-point scheme and report contraction.
    PicardVerify(RunArgs),
    /// Print the per-block B^s_{2,1} table of a field file.
    BesovNorm {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Show that the Caginalp system does not conserve its total energy.
    DemoCaginalp {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::ShapeMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Reads `THERMOCH_THREADS`, if set, as a positive thread count.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = config::load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    let out = args.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

/// Runs one subcommand and returns its exit code; errors carry their own.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::CheckSmallness(a) => check_smallness(&a),
        Command::PicardVerify(a) => picard_verify(&a),
        Command::BesovNorm { field, s, output } => besov(&field, s, output.as_deref()),
        Command::DemoCaginalp { config, output, seed } => caginalp(config.as_deref(), output.as_deref(), seed),
    }
}

fn simulate(args: &RunArgs) -> Result<i32> {
    let (cfg, out) = load(args)?;
    let sim = cfg.sim_config()?;
    let init = config::generate_initial(&cfg)?;
    let _lock = OutputLock::acquire(&out)?;
    io::write_text(&out.join("config.toml"), &cfg.to_canonical()?)?;

    let traj = model_a2::simulate(&sim, init)?;
    io::write_text(&out.join("diagnostics.csv"), &diagnostics::rows_to_csv(&traj.diagnostics))?;
    for (k, (state, step)) in traj.states.iter().zip(&traj.steps).enumerate() {
        io::write_field(&out.join(format!("phi_{step:08}.bin")), &state.phi)?;
        io::write_field(&out.join(format!("theta_{step:08}.bin")), &state.theta)?;
        if k == 0 || k + 1 == traj.states.len() {
            io::write_snapshot(&out, &format!("phi_{step:08}"), &state.phi)?;
            io::write_snapshot(&out, &format!("theta_{step:08}"), &state.theta)?;
        }
    }
    if cfg.model == RunModel::Isothermal {
        let mut text = String::from("# step gl_energy\n");
        for (n, e) in traj.gl_energy.iter().enumerate() {
            text.push_str(&format!("{n} {e:e}\n"));
        }
        io::write_text(&out.join("gl_energy.dat"), &text)?;
        let rep = diagnostics::decay_report(&traj.gl_energy);
        println!(
            "isothermal energy non-increasing: {} (max increase {:e} over {} steps)",
            rep.non_increasing, rep.max_increase, rep.steps_checked
        );
        if let Some((step, inc)) = rep.first_violation {
            println!("first violation at step {step}: increase {inc:e}");
        }
    }
    let last = traj.diagnostics.last().expect("initial row");
    println!(
        "simulated {} steps to t = {:e}; E_drift_rel = {:e}, min_theta = {:e}",
        last.step, last.t, last.e_drift_rel, last.min_theta
    );
    if let Some((e, _)) = &traj.failure {
        eprintln!("error: {e}");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

fn check_smallness(args: &RunArgs) -> Result<i32> {
    let (cfg, out) = load(args)?;
    let part = build_partition(cfg.grid_spec()?);
    let phi0 = config::initial_phi(&cfg)?;
    let theta0 = config::initial_theta(&cfg)?;
    let rep = littlewood_paley::check_smallness(&phi0, &theta0, &cfg.model_params(), cfg.eps0, &part)?;
    let _lock = OutputLock::acquire(&out)?;
    let text = format!("{}\n{}", rep.summary(), rep.to_csv());
    io::write_text(&out.join("smallness_report.txt"), &text)?;
    print!("{}", rep.summary());
    println!("satisfied={}", rep.all_satisfied());
    Ok(EXIT_OK)
}

fn picard_verify(args: &RunArgs) -> Result<i32> {
    let (cfg, out) = load(args)?;
    let pc = cfg.picard.unwrap_or_default();
    let part = build_partition(cfg.grid_spec()?);
    let phi0 = config::initial_phi(&cfg)?;
    let theta0 = config::initial_theta(&cfg)?;
    let p = cfg.model_params();
    let small = littlewood_paley::check_smallness(&phi0, &theta0, &p, cfg.eps0, &part)?;
    let _lock = OutputLock::acquire(&out)?;
    let rep = picard::picard_iterate(&phi0, &theta0, &p, &pc, &part)?;
    io::write_text(&out.join("picard_report.csv"), &rep.to_csv(Some(&small)))?;
    io::write_text(&out.join("smallness_report.txt"), &small.summary())?;
    io::write_snapshot(&out, "picard_phi_final", &rep.phi_final)?;
    io::write_snapshot(&out, "picard_theta_final", &rep.theta_final)?;
    print!("{}", rep.to_csv(Some(&small)));
    println!("outcome={:?} in_ball={}", rep.outcome, rep.all_in_ball());
    Ok(if rep.outcome == PicardOutcome::Diverged {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    })
}

fn besov(field: &Path, s: f64, output: Option<&Path>) -> Result<i32> {
    if !s.is_finite() {
        return Err(Error::InvalidArgument(format!("--s must be finite, got {s}")));
    }
    let f = io::read_field(field)?;
    let part = build_partition(*f.grid());
    let rep = littlewood_paley::besov_norm(&f, s, &part)?;
    print!("{}", rep.summary());
    if let Some(dir) = output {
        let _lock = OutputLock::acquire(dir)?;
        io::write_text(&dir.join("besov_report.csv"), &rep.to_csv())?;
    }
    Ok(EXIT_OK)
}

/// Default demo data: a perturbed phase with a warm stripe.
fn caginalp_default(g: GridSpec) -> (Field, Field) {
    let phi = Field::from_fn(g, |x| 0.5 * x[0].cos() + 0.2 * (x[0] + x[1]).sin());
    let theta = Field::from_fn(g, |x| 0.1 * x[1].sin());
    (phi, theta)
}

fn caginalp(config_path: Option<&Path>, output: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let (grid, phi0, theta0, dt, steps) = match config_path {
        Some(path) => {
            let mut cfg = config::load_config(path)?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let sim = cfg.sim_config()?;
            let phi = config::initial_phi(&cfg)?;
            let theta = config::initial_theta(&cfg)?.map(|v| v - cfg.params.theta_bar);
            (sim.grid, phi, theta, sim.dt, sim.steps())
        }
        None => {
            let g = GridSpec::new(2, 64, std::f64::consts::TAU)?;
            let (phi, theta) = caginalp_default(g);
            (g, phi, theta, 1e-3, 2000)
        }
    };
    let every = (steps / 20).max(1);
    let history = diagnostics::caginalp_energy_history(grid, &phi0, &theta0, &CaginalpParams::default(), dt, steps, every)?;
    let text = diagnostics::caginalp_demo_report(&history);
    print!("{text}");
    if let Some(dir) = output {
        let _lock = OutputLock::acquire(dir)?;
        io::write_text(&dir.join("caginalp_energy.dat"), &text)?;
    }
    Ok(EXIT_OK)
}
