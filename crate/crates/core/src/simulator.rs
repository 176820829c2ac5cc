//! Discrete-event simulation of the primary base station and the saturated
//! secondary nodes.
//!
//! The primary buffer evolves frame by frame with Poisson arrivals; each
//! frame's downlink grid is laid out cell by cell from the scheduled slots.
//! Secondary nodes run slotted DCF: every virtual slot (idle, collision or a
//! full successful exchange) decrements the counter of each node that did not
//! transmit in it. The winner of an exchange sends its data through the empty
//! cells of successive downlink subframes, column by column.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{FrameGeometry, ScenarioConfig, Striping, SNAP};
use crate::error::{Error, Result};

pub const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SimAudit {
    /// Frames that started in each primary state.
    pub state_histogram: Vec<u64>,
    /// Cells used by secondary data that the primary had scheduled.
    pub slot_conflicts: u64,
    /// Data transmissions that ended outside a downlink subframe.
    pub uplink_ends: u64,
    /// Data transmissions that overlapped another one.
    pub overlaps: u64,
    pub collisions: u64,
    pub successes: u64,
}

impl SimAudit {
    /// Empirical distribution of the primary state at frame starts.
    pub fn state_distribution(&self) -> Vec<f64> {
        let total: u64 = self.state_histogram.iter().sum();
        self.state_histogram
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Packets per second per node.
    pub per_su_throughput: f64,
    pub network_throughput: f64,
    /// Half-width of the 95% batch-means interval for `per_su_throughput`.
    pub ci95_halfwidth: f64,
    pub frames_simulated: u64,
    /// Packets completed after warmup.
    pub packets: u64,
    pub seed: u64,
    pub audit: SimAudit,
}

/// Column order of the simulator CSV.
pub const CSV_HEADER: [&str; 7] = ["seed", "lambda_p", "n_s", "ratio_r", "policy", "per_su_throughput", "ci95"];

impl SimResult {
    pub fn record(&self, cfg: &ScenarioConfig) -> [String; 7] {
        [
            self.seed.to_string(),
            cfg.lambda_p.to_string(),
            cfg.n_s.to_string(),
            cfg.ratio_r.to_string(),
            cfg.striping.to_string(),
            format!("{:.6}", self.per_su_throughput),
            format!("{:.6}", self.ci95_halfwidth),
        ]
    }

    /// Header plus this run's row.
    pub fn write_csv<W: Write>(&self, cfg: &ScenarioConfig, out: W) -> Result<()> {
        write_csv(&[(cfg, self)], out)
    }
}

pub fn write_csv<W: Write>(runs: &[(&ScenarioConfig, &SimResult)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (cfg, r) in runs {
        w.write_record(r.record(cfg))?;
    }
    w.flush()?;
    Ok(())
}

/// Primary base station: buffer process and per-frame slot layout.
struct Primary {
    g: FrameGeometry,
    striping: Striping,
    s_p: usize,
    arrivals: Option<Poisson<f64>>,
    rng: ChaCha8Rng,
    frame: u64,
    state: usize,
    /// `occupied[row * cols + col]` for the current frame.
    occupied: Vec<bool>,
    /// Empty cells per downlink column of the current frame.
    empty_cols: Vec<usize>,
    histogram: Vec<u64>,
}

impl Primary {
    fn new(cfg: &ScenarioConfig, g: FrameGeometry, rng: ChaCha8Rng) -> Result<Primary> {
        let arrivals = if cfg.lambda_p > 0.0 {
            Some(Poisson::new(cfg.lambda_p).map_err(|e| Error::config(format!("lambda_p: {e}")))?)
        } else {
            None
        };
        let mut p = Primary {
            g,
            striping: cfg.striping,
            s_p: cfg.s_p,
            arrivals,
            rng,
            frame: 0,
            state: 0,
            occupied: vec![false; g.rows * g.cols_dl],
            empty_cols: vec![0; g.cols_dl],
            histogram: vec![0; g.n_states + 1],
        };
        p.layout();
        Ok(p)
    }

    fn layout(&mut self) {
        let (rows, cols) = (self.g.rows, self.g.cols_dl);
        let used = self.state.min(self.g.m_slots);
        self.occupied.iter_mut().for_each(|c| *c = false);
        for s in 0..used {
            let (r, c) = match self.striping {
                // Row-major from the top row.
                Striping::Horizontal | Striping::Rectangular => (s / cols, s % cols),
                // Column-major from the left column.
                Striping::Vertical => (s % rows, s / rows),
            };
            self.occupied[r * cols + c] = true;
        }
        for c in 0..cols {
            self.empty_cols[c] = (0..rows).filter(|&r| !self.occupied[r * cols + c]).count();
        }
        self.histogram[self.state] += 1;
    }

    /// Moves to frame `f` (never backwards).
    fn goto(&mut self, f: u64) {
        while self.frame < f {
            let base = self.state.saturating_sub(self.g.m_slots);
            let k = match &self.arrivals {
                Some(d) => d.sample(&mut self.rng) as usize,
                None => 0,
            };
            self.state = (base + k * self.s_p).min(self.g.n_states);
            self.frame += 1;
            self.layout();
        }
    }

    fn empty_total(&self) -> usize {
        self.g.m_slots.saturating_sub(self.state)
    }
}

struct Node {
    stage: usize,
    counter: usize,
    rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Frame index and offset (in symbols) of an absolute time, with instants
/// within `SNAP` of a symbol boundary moved onto it.
fn locate(t: f64, g: &FrameGeometry) -> (u64, f64) {
    let sym = t / g.t_sym;
    let near = sym.round();
    let sym = if (sym - near).abs() < SNAP { near } else { sym };
    let k = g.k_sym as f64;
    let frame = (sym / k).floor();
    (frame as u64, sym - frame * k)
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    g: FrameGeometry,
    primary: Primary,
    audit_conflicts: u64,
    uplink_ends: u64,
}

impl Sim<'_> {
    /// Sends `S_S` slots starting at absolute time `t0`; returns the end time.
    fn transmit(&mut self, t0: f64) -> f64 {
        let g = self.g;
        let (mut frame, mut offset) = locate(t0, &g);
        let mut left = self.cfg.s_s as f64;
        loop {
            self.primary.goto(frame);
            let frame_start = frame as f64 * g.t_frame;
            if offset < g.k_sym_dl as f64 {
                if let Some(end_sym) = self.striping_step(offset, &mut left) {
                    if end_sym > g.k_sym_dl as f64 + SNAP {
                        self.uplink_ends += 1;
                    }
                    return frame_start + end_sym * g.t_sym;
                }
            }
            frame += 1;
            offset = 0.0;
        }
    }

    /// Uses the current frame from `offset`; returns the completion offset
    /// or `None` after consuming every usable slot.
    fn striping_step(&mut self, offset: f64, left: &mut f64) -> Option<f64> {
        let g = self.g;
        let p = &self.primary;
        if p.striping == Striping::Rectangular {
            let e = p.empty_total() as f64;
            let usable = e * (g.k_sym_dl as f64 - offset) / g.k_sym_dl as f64;
            if e > 0.0 && usable >= *left - SNAP {
                return Some(offset + *left / e * g.k_sym_dl as f64);
            }
            *left -= usable;
            return None;
        }
        // Columns strictly after the one in progress.
        let first = (offset / g.nu as f64).ceil() as usize;
        for c in first..g.cols_dl {
            let here = p.empty_cols[c];
            let take = (here as f64).min(*left);
            // Every cell the transmission touches must be free.
            let used = take.ceil() as usize;
            let mut seen = 0;
            for r in 0..g.rows {
                if seen == used {
                    break;
                }
                if !p.occupied[r * g.cols_dl + c] {
                    seen += 1;
                }
            }
            if seen < used {
                self.audit_conflicts += 1;
            }
            if here as f64 >= *left - SNAP && here > 0 {
                let frac = (*left / here as f64).min(1.0);
                return Some(g.nu as f64 * (c as f64 + frac));
            }
            *left -= here as f64;
        }
        None
    }
}

/// Runs one replication for `horizon_frames` frames, discarding the first
/// `warmup_frames`.
pub fn simulate(cfg: &ScenarioConfig, seed: u64, horizon_frames: u64, warmup_frames: u64) -> Result<SimResult> {
    cfg.validate()?;
    if horizon_frames <= warmup_frames {
        return Err(Error::config(format!(
            "horizon ({horizon_frames} frames) must exceed warmup ({warmup_frames} frames)"
        )));
    }
    let g = cfg.geometry()?;
    let t_warm = warmup_frames as f64 * g.t_frame;
    let t_end = horizon_frames as f64 * g.t_frame;
    let batch_len = (t_end - t_warm) / BATCHES as f64;

    let primary = Primary::new(cfg, g, stream(seed, 0))?;
    let mut sim = Sim {
        cfg,
        g,
        primary,
        audit_conflicts: 0,
        uplink_ends: 0,
    };
    let window = |stage: usize| cfg.w0 << (stage - 1);
    let mut nodes: Vec<Node> = (0..cfg.n_s)
        .map(|k| {
            let mut rng = stream(seed, k as u64 + 1);
            let counter = rng.random_range(0..window(1));
            Node { stage: 1, counter, rng }
        })
        .collect();

    let mut t = 0.0f64;
    let mut last_data_end = 0.0f64;
    let mut overlaps = 0u64;
    let mut collisions = 0u64;
    let mut successes = 0u64;
    let mut batches = [0u64; BATCHES];
    let mut winners: Vec<usize> = Vec::with_capacity(cfg.n_s);

    while t < t_end {
        let min = nodes.iter().map(|n| n.counter).min().expect("at least one node");
        if min > 0 {
            // Run of idle slots.
            t += min as f64 * cfg.t_idle;
            nodes.iter_mut().for_each(|n| n.counter -= min);
            continue;
        }
        winners.clear();
        winners.extend(nodes.iter().enumerate().filter(|(_, n)| n.counter == 0).map(|(k, _)| k));
        if winners.len() > 1 {
            collisions += 1;
            t += cfg.t_coll;
            for (k, n) in nodes.iter_mut().enumerate() {
                if winners.contains(&k) {
                    n.stage = (n.stage + 1).min(cfg.m_stages);
                    n.counter = n.rng.random_range(0..window(n.stage));
                } else {
                    n.counter -= 1;
                }
            }
            continue;
        }
        let w = winners[0];
        let data_start = t + cfg.t_rts + cfg.t_cts;
        if data_start < last_data_end - SNAP * g.t_sym {
            overlaps += 1;
        }
        let data_end = sim.transmit(data_start);
        last_data_end = data_end;
        t = data_end + cfg.t_ack;
        successes += 1;
        if t >= t_warm && t < t_end {
            let b = (((t - t_warm) / batch_len) as usize).min(BATCHES - 1);
            batches[b] += 1;
        }
        for (k, n) in nodes.iter_mut().enumerate() {
            if k == w {
                n.stage = 1;
                n.counter = n.rng.random_range(0..window(1));
            } else {
                n.counter -= 1;
            }
        }
    }
    // Frames that started before the horizon.
    sim.primary.goto(horizon_frames - 1);

    let per_node = |count: f64, span: f64| count / span / cfg.n_s as f64;
    let packets: u64 = batches.iter().sum();
    let per_su = per_node(packets as f64, t_end - t_warm);
    let means: Vec<f64> = batches.iter().map(|&c| per_node(c as f64, batch_len)).collect();
    let mean = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    let t_crit = StudentsT::new(0.0, 1.0, (BATCHES - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    let ci95 = t_crit * (var / BATCHES as f64).sqrt();

    Ok(SimResult {
        per_su_throughput: per_su,
        network_throughput: per_su * cfg.n_s as f64,
        ci95_halfwidth: ci95,
        frames_simulated: horizon_frames,
        packets,
        seed,
        audit: SimAudit {
            state_histogram: sim.primary.histogram,
            slot_conflicts: sim.audit_conflicts,
            uplink_ends: sim.uplink_ends,
            overlaps,
            collisions,
            successes,
        },
    })
}
