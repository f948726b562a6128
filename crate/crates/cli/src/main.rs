//! `chaintomo`: simulate, synthesize and fit edge-spin trajectories of a
//! three-spin chain.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chaintomo::dynamics::simulate_ensemble;
use chaintomo::estimator::{
    estimate, info_propagation_time, parse_components, window_study, FitProblem, RefineOptions,
    SimOptions,
};
use chaintomo::workbench::{calibrate, synthesize_data};
use chaintomo::{
    ChainConfig, CouplingPair, Error, FitWindow, GridSpec, NoiseSpec, QuadratureSpec, Scenario,
    ScenarioKind, Trajectory,
};

#[derive(Parser)]
#[command(name = "chaintomo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Model {
    /// Chain config (TOML or JSON); 13C-alanine values when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gauss-Hermite nodes over the field distribution.
    #[arg(long, default_value_t = QuadratureSpec::default().n_nodes)]
    nodes: usize,
}

impl Model {
    fn config(&self) -> chaintomo::Result<ChainConfig> {
        match &self.config {
            Some(path) => with_path(path, ChainConfig::load(path)),
            None => Ok(ChainConfig::default()),
        }
    }

    fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec {
            n_nodes: self.nodes,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Noiseless ensemble trajectory of a scenario.
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[arg(long)]
        scenario: ScenarioKind,
        #[command(flatten)]
        model: Model,
        /// Overrides the configured J12 (Hz).
        #[arg(long)]
        j12: Option<f64>,
        /// Overrides the configured J23 (Hz).
        #[arg(long)]
        j23: Option<f64>,
        /// No relaxation, no field inhomogeneity.
        #[arg(long)]
        ideal: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the field-inhomogeneity width to calibration data.
    Calibrate {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        data: PathBuf,
    },
    /// Synthetic data: ensemble trajectory plus seeded Gaussian noise.
    #[command(allow_negative_numbers = true)]
    Synth {
        #[arg(long)]
        scenario: ScenarioKind,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        j12: f64,
        #[arg(long)]
        j23: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid estimate of (J12, J23) from a trajectory.
    #[command(allow_negative_numbers = true)]
    Fit {
        #[arg(long)]
        scenario: ScenarioKind,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        data: PathBuf,
        /// Components entering the distance, e.g. `y` or `x,y`.
        #[arg(long)]
        component: String,
        /// Fitting window (s).
        #[arg(long)]
        tw: f64,
        /// `j12min:j12max:step,j23min:j23max:step` in Hz.
        #[arg(long)]
        grid: Option<GridSpec>,
        /// Polish the grid minimum with a local simplex search.
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out_surface: PathBuf,
        #[arg(long)]
        out_result: PathBuf,
    },
    /// Estimates for several fitting windows, in table form.
    #[command(allow_negative_numbers = true)]
    WindowStudy {
        #[arg(long)]
        scenario: ScenarioKind,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        data: PathBuf,
        /// Component sets separated by `;`, e.g. `y;z`.
        #[arg(long)]
        component: String,
        /// Comma-separated windows (s).
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
        windows: Vec<f64>,
        #[arg(long)]
        grid: Option<GridSpec>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimum time for J23 to act back on spin 1: 1/J12 + 1/J23.
    #[command(allow_negative_numbers = true)]
    T0 {
        #[arg(long)]
        j12: f64,
        #[arg(long)]
        j23: f64,
    },
}

fn prepared(
    scenario: ScenarioKind,
    model: &Model,
) -> chaintomo::Result<chaintomo::workbench::Prepared> {
    Scenario::new(scenario).prepare(&model.config()?)
}

fn with_path<T>(path: &Path, r: chaintomo::Result<T>) -> chaintomo::Result<T> {
    r.map_err(|e| match e {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Toml(_) => {
            Error::InvalidInput(format!("{}: {e}", path.display()))
        }
        other => other,
    })
}

fn load_data(path: &Path) -> chaintomo::Result<Trajectory> {
    with_path(path, Trajectory::load_csv(path))
}

fn run(command: Command) -> chaintomo::Result<()> {
    match command {
        Command::Simulate {
            scenario,
            model,
            j12,
            j23,
            ideal,
            out,
        } => {
            let s = Scenario::new(scenario);
            let mut p = prepared(scenario, &model)?;
            if ideal {
                p.config = p.config.idealized();
            }
            let couplings = CouplingPair::new(
                j12.unwrap_or(p.config.couplings.j12),
                j23.unwrap_or(p.config.couplings.j23),
            );
            let traj = simulate_ensemble(
                &p.config,
                couplings,
                &p.rho0,
                &s.times()?,
                model.quadrature(),
            )?;
            with_path(&out, traj.save_csv(&out))
        }
        Command::Calibrate { model, data } => {
            let c = calibrate(&load_data(&data)?, &model.config()?, model.quadrature())?;
            println!("{:.6}", c.sigma_rel);
            Ok(())
        }
        Command::Synth {
            scenario,
            model,
            j12,
            j23,
            noise,
            seed,
            out,
        } => {
            let traj = synthesize_data(
                &Scenario::new(scenario),
                CouplingPair::new(j12, j23),
                NoiseSpec::new(noise, seed)?,
                &model.config()?,
                model.quadrature(),
            )?;
            with_path(&out, traj.save_csv(&out))
        }
        Command::Fit {
            scenario,
            model,
            data,
            component,
            tw,
            grid,
            refine,
            out_surface,
            out_result,
        } => {
            let p = prepared(scenario, &model)?;
            let data = load_data(&data)?;
            let options = SimOptions {
                quadrature: model.quadrature(),
                ..SimOptions::default()
            };
            let problem = FitProblem::new(
                &data,
                &p.config,
                &p.rho0,
                &parse_components(&component)?,
                FitWindow::new(tw)?,
                options,
            )?;
            let (surface, result) = estimate(
                &problem,
                &grid.unwrap_or_default(),
                refine.then(RefineOptions::default),
            )?;
            with_path(&out_surface, surface.save_csv(&out_surface))?;
            with_path(&out_result, result.save_json(&out_result))?;
            let best = result
                .refined
                .as_ref()
                .map_or(result.argmin, |r| r.couplings);
            println!("{} {}", best.j12, best.j23);
            Ok(())
        }
        Command::WindowStudy {
            scenario,
            model,
            data,
            component,
            windows,
            grid,
            out,
        } => {
            let p = prepared(scenario, &model)?;
            let sets = component
                .split(';')
                .map(parse_components)
                .collect::<chaintomo::Result<Vec<_>>>()?;
            let windows = windows
                .into_iter()
                .map(FitWindow::new)
                .collect::<chaintomo::Result<Vec<_>>>()?;
            let options = SimOptions {
                quadrature: model.quadrature(),
                ..SimOptions::default()
            };
            let study = window_study(
                scenario.as_str(),
                &load_data(&data)?,
                &p.config,
                &p.rho0,
                &sets,
                &grid.unwrap_or_default(),
                &windows,
                options,
            )?;
            with_path(&out, study.save_json(&out))?;
            print!("{}", study.to_table());
            Ok(())
        }
        Command::T0 { j12, j23 } => {
            println!("{:.5}", info_propagation_time(j12, j23)?);
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {}", msg.lines().next().unwrap_or_default());
            ExitCode::from(exit_code(&e))
        }
    }
}
