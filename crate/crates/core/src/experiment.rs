//! Parameter sweeps over the analytical model and the simulator.
//!
//! A plan is a base scenario plus a cartesian grid over `lambda_p`, `n_s`,
//! `ratio_r` and `striping`. Rows come out in grid order whatever order the
//! worker pool finishes them in. A point that fails is reported and leaves
//! its numeric cells empty; the rest of the grid still runs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::{ConfigFile, Ratio, ScenarioConfig, Striping};
use crate::error::{Error, Result};
use crate::qn1::analyze;
use crate::simulator::simulate;

/// Stable column order of the sweep CSV.
pub const HEADER: [&str; 8] = [
    "lambda_p",
    "n_s",
    "ratio_r",
    "policy",
    "lambda_sat_pkts_per_s",
    "big_lambda_sat",
    "sim_throughput",
    "mismatch_rel",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Analytic,
    Simulate,
    Validate,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "analytic" => Ok(Mode::Analytic),
            "simulate" => Ok(Mode::Simulate),
            "validate" => Ok(Mode::Validate),
            other => Err(Error::config(format!("unknown mode `{other}`"))),
        }
    }
}

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    LambdaP(Vec<f64>),
    NS(Vec<usize>),
    RatioR(Vec<Ratio>),
    Striping(Vec<Striping>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::LambdaP(_) => "lambda_p",
            Sweep::NS(_) => "n_s",
            Sweep::RatioR(_) => "ratio_r",
            Sweep::Striping(_) => "striping",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::LambdaP(v) => v.len(),
            Sweep::NS(v) => v.len(),
            Sweep::RatioR(v) => v.len(),
            Sweep::Striping(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply(&self, idx: usize, cfg: &mut ScenarioConfig) -> Result<()> {
        match self {
            Sweep::LambdaP(v) => cfg.lambda_p = v[idx],
            Sweep::NS(v) => cfg.n_s = v[idx],
            Sweep::RatioR(v) => *cfg = cfg.with_ratio(v[idx])?,
            Sweep::Striping(v) => cfg.striping = v[idx],
        }
        Ok(())
    }
}

/// Numeric list: `a,b,c` or an inclusive range `start:stop:step`.
fn numbers(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::config(format!("cannot parse value list `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

impl FromStr for Sweep {
    type Err = Error;

    /// `name=values`, e.g. `lambda_p=5:40:5`, `n_s=10,20`, `ratio_r=13/12`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("sweep `{s}` is not `name=values`")))?;
        let values = values.trim();
        let sweep = match name.trim() {
            "lambda_p" => Sweep::LambdaP(numbers(values)?),
            "n_s" => Sweep::NS(
                numbers(values)?
                    .into_iter()
                    .map(|v| {
                        if v >= 1.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::config(format!("n_s value {v} is not a positive integer")))
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
            "ratio_r" => Sweep::RatioR(values.split(',').map(str::parse).collect::<Result<_>>()?),
            "striping" => Sweep::Striping(values.split(',').map(str::parse).collect::<Result<_>>()?),
            other => {
                return Err(Error::config(format!(
                    "cannot sweep `{other}` (use lambda_p, n_s, ratio_r or striping)"
                )))
            }
        };
        if sweep.is_empty() {
            return Err(Error::config(format!("sweep `{s}` has no values")));
        }
        Ok(sweep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: ScenarioConfig,
    pub sweep: Vec<Sweep>,
    pub mode: Mode,
    pub seed: u64,
    pub frames: u64,
    /// Defaults to a tenth of `frames`.
    pub warmup_frames: Option<u64>,
    pub gate: f64,
    pub max_grid: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl ExperimentPlan {
    pub fn new(base: ScenarioConfig, mode: Mode) -> ExperimentPlan {
        ExperimentPlan {
            base,
            sweep: Vec::new(),
            mode,
            seed: 1,
            frames: 200_000,
            warmup_frames: None,
            gate: 0.03,
            max_grid: 10_000,
            jobs: 0,
        }
    }

    /// Plan described by the `[experiment]` section of a config file.
    pub fn from_file(file: &ConfigFile, mode: Mode) -> Result<ExperimentPlan> {
        let e = &file.experiment;
        let mut plan = ExperimentPlan::new(file.scenario()?, mode);
        if !e.lambda_p.is_empty() {
            plan.sweep.push(Sweep::LambdaP(e.lambda_p.clone()));
        }
        if !e.n_s.is_empty() {
            plan.sweep.push(Sweep::NS(e.n_s.clone()));
        }
        if !e.ratio_r.is_empty() {
            plan.sweep.push(Sweep::RatioR(e.ratio_r.clone()));
        }
        if !e.striping.is_empty() {
            plan.sweep.push(Sweep::Striping(e.striping.clone()));
        }
        plan.seed = e.seed;
        plan.frames = e.frames;
        plan.warmup_frames = e.warmup_frames;
        plan.gate = e.gate;
        plan.max_grid = e.max_grid;
        Ok(plan)
    }

    /// Adds a sweep, replacing any earlier one over the same parameter.
    pub fn set_sweep(&mut self, sweep: Sweep) {
        self.sweep.retain(|s| s.name() != sweep.name());
        self.sweep.push(sweep);
    }

    pub fn grid_size(&self) -> usize {
        self.sweep.iter().map(Sweep::len).product()
    }

    /// Every grid point, last sweep varying fastest. Each point carries a
    /// scenario holding its coordinates (for reporting) and the result of
    /// building the full scenario.
    pub fn points(&self) -> Result<Vec<(ScenarioConfig, Result<ScenarioConfig>)>> {
        let size = self.grid_size();
        if size > self.max_grid {
            return Err(Error::config(format!(
                "grid has {size} points, above the cap of {}",
                self.max_grid
            )));
        }
        Ok((0..size).map(|flat| self.point(flat)).collect())
    }

    fn point(&self, mut flat: usize) -> (ScenarioConfig, Result<ScenarioConfig>) {
        let mut idx = vec![0; self.sweep.len()];
        for (d, s) in self.sweep.iter().enumerate().rev() {
            idx[d] = flat % s.len();
            flat /= s.len();
        }
        let mut label = self.base.clone();
        for (s, &i) in self.sweep.iter().zip(&idx) {
            match s {
                Sweep::RatioR(v) => label.ratio_r = v[i],
                other => other.apply(i, &mut label).expect("plain field"),
            }
        }
        let built = (|| {
            let mut cfg = self.base.clone();
            // Ratio first: it rebuilds the frame split.
            let mut order: Vec<usize> = (0..self.sweep.len()).collect();
            order.sort_by_key(|&d| !matches!(self.sweep[d], Sweep::RatioR(_)));
            for d in order {
                self.sweep[d].apply(idx[d], &mut cfg)?;
            }
            cfg.validate()?;
            Ok(cfg)
        })();
        (label, built)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub cfg: ScenarioConfig,
    pub lambda_sat: Option<f64>,
    pub big_lambda_sat: Option<f64>,
    pub sim_throughput: Option<f64>,
    /// `|analytic - sim| / sim`.
    pub mismatch_rel: Option<f64>,
    pub error: Option<String>,
}

impl Row {
    fn record(&self) -> [String; 8] {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            self.cfg.lambda_p.to_string(),
            self.cfg.n_s.to_string(),
            self.cfg.ratio_r.to_string(),
            self.cfg.striping.to_string(),
            num(self.lambda_sat),
            num(self.big_lambda_sat),
            num(self.sim_throughput),
            num(self.mismatch_rel),
        ]
    }
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lambda_p={} n_s={} R={} {}",
            self.cfg.lambda_p, self.cfg.n_s, self.cfg.ratio_r, self.cfg.striping
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<Row>,
    pub gate: f64,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// Rows whose mismatch exceeds the gate.
    pub fn over_gate(&self) -> impl Iterator<Item = &Row> {
        self.rows
            .iter()
            .filter(move |r| r.mismatch_rel.is_some_and(|m| m > self.gate))
    }

    pub fn all_ran(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn within_gate(&self) -> bool {
        self.over_gate().next().is_none()
    }

    /// True when every point ran and none exceeded the gate.
    pub fn passed(&self) -> bool {
        self.all_ran() && self.within_gate()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for row in &self.rows {
            w.write_record(row.record())?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_point(plan: &ExperimentPlan, cfg: ScenarioConfig) -> Row {
    let mut row = Row {
        cfg,
        lambda_sat: None,
        big_lambda_sat: None,
        sim_throughput: None,
        mismatch_rel: None,
        error: None,
    };
    if plan.mode != Mode::Simulate {
        match analyze(&row.cfg) {
            Ok((_, sol)) => {
                row.lambda_sat = Some(sol.lambda_sat);
                row.big_lambda_sat = Some(sol.big_lambda_sat);
            }
            Err(e) => {
                row.error = Some(e.to_string());
                return row;
            }
        }
    }
    if plan.mode != Mode::Analytic {
        let warmup = plan.warmup_frames.unwrap_or(plan.frames / 10);
        match simulate(&row.cfg, plan.seed, plan.frames, warmup) {
            Ok(sim) => row.sim_throughput = Some(sim.per_su_throughput),
            Err(e) => {
                row.error = Some(e.to_string());
                return row;
            }
        }
    }
    if let (Some(a), Some(s)) = (row.lambda_sat, row.sim_throughput) {
        row.mismatch_rel = Some((a - s).abs() / s);
    }
    row
}

/// Runs every grid point. Only plan-level problems (grid too large, no
/// thread pool) are errors; point failures are recorded in their rows.
pub fn run(plan: &ExperimentPlan) -> Result<Report> {
    let points = plan.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        points
            .into_par_iter()
            .map(|(label, built)| match built {
                Ok(cfg) => run_point(plan, cfg),
                Err(e) => Row {
                    cfg: label,
                    lambda_sat: None,
                    big_lambda_sat: None,
                    sim_throughput: None,
                    mismatch_rel: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    Ok(Report { rows, gate: plan.gate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sweeps() {
        let s: Sweep = "lambda_p=5:40:5".parse().unwrap();
        assert_eq!(s, Sweep::LambdaP(vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]));
        let s: Sweep = "n_s=10,20".parse().unwrap();
        assert_eq!(s, Sweep::NS(vec![10, 20]));
        let s: Sweep = "ratio_r=13/12,3/2".parse().unwrap();
        assert_eq!(s.len(), 2);
        let s: Sweep = "striping=horizontal,vertical".parse().unwrap();
        assert_eq!(s, Sweep::Striping(vec![Striping::Horizontal, Striping::Vertical]));
        assert!("c_b=5".parse::<Sweep>().is_err());
        assert!("n_s=2.5".parse::<Sweep>().is_err());
        assert!("lambda_p".parse::<Sweep>().is_err());
    }

    #[test]
    fn grid_is_ordered_and_capped() {
        let mut plan = ExperimentPlan::new(ScenarioConfig::default(), Mode::Analytic);
        assert_eq!(plan.grid_size(), 1);
        plan.set_sweep("n_s=10,20".parse().unwrap());
        plan.set_sweep("lambda_p=5,10,15".parse().unwrap());
        let pts: Vec<_> = plan.points().unwrap().into_iter().map(|p| p.1.unwrap()).collect();
        let coords: Vec<_> = pts.iter().map(|c| (c.n_s, c.lambda_p)).collect();
        assert_eq!(coords, vec![(10, 5.0), (10, 10.0), (10, 15.0), (20, 5.0), (20, 10.0), (20, 15.0)]);
        plan.max_grid = 5;
        assert!(plan.points().is_err());
    }

    #[test]
    fn ratio_moves_the_boundary() {
        let mut plan = ExperimentPlan::new(ScenarioConfig::default(), Mode::Analytic);
        plan.set_sweep("ratio_r=3/2,1".parse().unwrap());
        let pts = plan.points().unwrap();
        assert_eq!(pts[0].1.as_ref().unwrap().k_sym_dl, 30);
        // 25 downlink symbols cannot hold 2-symbol slots.
        assert!(pts[1].1.is_err());
        assert_eq!(pts[1].0.ratio_r.to_string(), "1/1");
    }

    #[test]
    fn failed_points_do_not_stop_the_run() {
        let mut plan = ExperimentPlan::new(ScenarioConfig::default(), Mode::Analytic);
        plan.set_sweep("ratio_r=13/12,1".parse().unwrap());
        plan.jobs = 2;
        let report = run(&plan).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[0].lambda_sat.is_some());
        assert!(report.rows[1].error.is_some());
        assert!(!report.passed());
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEADER.join(","));
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("25,10,1/1,horizontal,,"));
    }
}
