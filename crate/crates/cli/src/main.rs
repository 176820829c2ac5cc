use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cogwlan::config::ConfigFile;
use cogwlan::experiment::{self, ExperimentPlan, Mode, Report, Sweep};
use cogwlan::qn1::analyze;
use cogwlan::simulator::{self, simulate};
use cogwlan::txtime::table_for;

/// Saturation throughput of a cognitive 802.11 WLAN over a TDD primary.
///
/// Every flag can also be set through the environment with the `COGWLAN_`
/// prefix, e.g. `COGWLAN_SEED=7`.
#[derive(Debug, Parser)]
#[command(name = "cogwlan", version)]
struct Cli {
    /// Scenario file (TOML); built-in defaults when absent.
    #[arg(long, global = true, env = "COGWLAN_CONFIG")]
    config: Option<PathBuf>,
    /// Output CSV path; standard output when absent.
    #[arg(long, global = true, env = "COGWLAN_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for grid points (0 = all cores).
    #[arg(long, global = true, env = "COGWLAN_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Grid {
    /// Parameter sweep `name=values`, e.g. `lambda_p=5:40:5` or `n_s=10,20`.
    /// Repeatable; a single value just overrides the scenario.
    #[arg(long = "sweep", value_name = "NAME=VALUES")]
    sweeps: Vec<Sweep>,
    /// Largest grid accepted.
    #[arg(long, env = "COGWLAN_MAX_GRID")]
    max_grid: Option<usize>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, env = "COGWLAN_SEED")]
    seed: Option<u64>,
    /// Simulated frames per point (warmup is a tenth unless configured).
    #[arg(long, env = "COGWLAN_FRAMES")]
    frames: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytical saturation throughput for every grid point.
    Analytic {
        #[command(flatten)]
        grid: Grid,
        /// Also write the start-phase pmf of a single-point run here.
        #[arg(long)]
        start_pmf: Option<PathBuf>,
    },
    /// Discrete-event simulation for every grid point.
    Simulate {
        #[command(flatten)]
        grid: Grid,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Grid run in the given mode, with the sweep CSV columns.
    Sweep {
        #[arg(long, default_value = "analytic")]
        mode: Mode,
        #[command(flatten)]
        grid: Grid,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, env = "COGWLAN_GATE")]
        gate: Option<f64>,
    },
    /// Analytic and simulated throughput per point; fails if any relative
    /// mismatch exceeds the gate.
    Validate {
        #[command(flatten)]
        grid: Grid,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, env = "COGWLAN_GATE")]
        gate: Option<f64>,
    },
    /// Mean data transmission time against start phase.
    GammaProfile {
        #[command(flatten)]
        grid: Grid,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

struct Runner {
    file: ConfigFile,
    out: Option<PathBuf>,
    jobs: Option<usize>,
}

impl Runner {
    fn plan(&self, mode: Mode, grid: Grid, sim: Option<SimArgs>, gate: Option<f64>) -> Result<ExperimentPlan> {
        let mut plan = ExperimentPlan::from_file(&self.file, mode)?;
        for s in grid.sweeps {
            plan.set_sweep(s);
        }
        if let Some(cap) = grid.max_grid {
            plan.max_grid = cap;
        }
        if let Some(sim) = sim {
            plan.seed = sim.seed.unwrap_or(plan.seed);
            plan.frames = sim.frames.unwrap_or(plan.frames);
        }
        if let Some(g) = gate {
            if !(g.is_finite() && g >= 0.0) {
                bail!("gate must be a non-negative number");
            }
            plan.gate = g;
        }
        if let Some(j) = self.jobs {
            plan.jobs = j;
        }
        if mode != Mode::Analytic && plan.frames < 2 {
            bail!("--frames must be at least 2");
        }
        Ok(plan)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()?)
    }

    fn grid_run(&self, plan: &ExperimentPlan) -> Result<Report> {
        log::info!("{} grid points", plan.grid_size());
        let report = experiment::run(plan)?;
        report.write_csv(output(&self.out)?)?;
        for row in report.failures() {
            eprintln!("error at {row}: {}", row.error.as_deref().unwrap_or(""));
        }
        Ok(report)
    }

    fn simulate(&self, plan: &ExperimentPlan) -> Result<bool> {
        let points = plan.points()?;
        let warmup = plan.warmup_frames.unwrap_or(plan.frames / 10);
        let runs: Vec<_> = self.pool()?.install(|| {
            points
                .into_par_iter()
                .map(|(label, built)| {
                    let res = built.and_then(|cfg| simulate(&cfg, plan.seed, plan.frames, warmup).map(|r| (cfg, r)));
                    (label, res)
                })
                .collect()
        });
        let mut ok = Vec::new();
        let mut clean = true;
        for (label, res) in &runs {
            match res {
                Ok((cfg, r)) => ok.push((cfg, r)),
                Err(e) => {
                    clean = false;
                    eprintln!(
                        "error at lambda_p={} n_s={} R={} {}: {e}",
                        label.lambda_p, label.n_s, label.ratio_r, label.striping
                    );
                }
            }
        }
        simulator::write_csv(&ok, output(&self.out)?)?;
        Ok(clean)
    }

    fn gamma_profile(&self, plan: &ExperimentPlan) -> Result<bool> {
        let points = plan.points()?;
        let tables: Vec<_> = self.pool()?.install(|| {
            points
                .into_par_iter()
                .map(|(label, built)| (label, built.and_then(|cfg| table_for(&cfg))))
                .collect()
        });
        let mut w = csv::Writer::from_writer(output(&self.out)?);
        w.write_record(["lambda_p", "n_s", "ratio_r", "policy", "phase", "start_ms", "gamma_ms"])?;
        let mut clean = true;
        for (cfg, res) in &tables {
            let table = match res {
                Ok((_, t)) => t,
                Err(e) => {
                    clean = false;
                    eprintln!("error at lambda_p={} R={} {}: {e}", cfg.lambda_p, cfg.ratio_r, cfg.striping);
                    continue;
                }
            };
            for x in 1..=table.len() {
                w.write_record([
                    cfg.lambda_p.to_string(),
                    cfg.n_s.to_string(),
                    cfg.ratio_r.to_string(),
                    cfg.striping.to_string(),
                    x.to_string(),
                    format!("{:.6}", table.grid.start_time(x) * 1e3),
                    format!("{:.9}", table.gamma(x) * 1e3),
                ])?;
            }
        }
        w.flush()?;
        Ok(clean)
    }
}

/// Exit codes: 0 success, 1 a validation gate was exceeded, 2 bad command
/// line (from clap), 3 some grid point failed, 4 the run could not start.
fn run(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(p) => ConfigFile::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => ConfigFile::default(),
    };
    let runner = Runner {
        file,
        out: cli.out,
        jobs: cli.jobs,
    };
    let failed = |ok: bool| if ok { 0 } else { 3 };
    match cli.command {
        Command::Analytic { grid, start_pmf } => {
            let plan = runner.plan(Mode::Analytic, grid, None, None)?;
            if let Some(path) = start_pmf {
                if plan.grid_size() != 1 {
                    bail!("--start-pmf needs a single-point grid");
                }
                let cfg = plan.points()?.remove(0).1?;
                let (_, sol) = analyze(&cfg)?;
                sol.write_start_pmf_csv(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?)?;
            }
            let report = runner.grid_run(&plan)?;
            Ok(failed(report.all_ran()))
        }
        Command::Simulate { grid, sim } => {
            let plan = runner.plan(Mode::Simulate, grid, Some(sim), None)?;
            Ok(failed(runner.simulate(&plan)?))
        }
        Command::Sweep { mode, grid, sim, gate } => {
            let plan = runner.plan(mode, grid, Some(sim), gate)?;
            let report = runner.grid_run(&plan)?;
            if mode == Mode::Validate && !report.within_gate() {
                return Ok(1);
            }
            Ok(failed(report.all_ran()))
        }
        Command::Validate { grid, sim, gate } => {
            let plan = runner.plan(Mode::Validate, grid, Some(sim), gate)?;
            let report = runner.grid_run(&plan)?;
            for row in report.over_gate() {
                eprintln!(
                    "gate exceeded at {row}: mismatch {:.4} > {}",
                    row.mismatch_rel.unwrap_or(f64::NAN),
                    report.gate
                );
            }
            if !report.within_gate() {
                return Ok(1);
            }
            Ok(failed(report.all_ran()))
        }
        Command::GammaProfile { grid } => {
            let plan = runner.plan(Mode::Analytic, grid, None, None)?;
            Ok(failed(runner.gamma_profile(&plan)?))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("COGWLAN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(4)
        }
    }
}
