//! Coupling between consecutive data transmissions on the shared channel.
//!
//! Between the end of one data transmission and the start of the next the
//! channel carries an ACK, a run of idle and collision slots ending in a
//! successful RTS, and the CTS. The phase advance over that gap does not
//! depend on the primary state, so the joint law of (phase, primary state)
//! at successive data starts is a Markov chain: the data kernel followed by
//! the gap. Its stationary law, conditioned on the phase, gives the primary
//! state a transmission sees when it starts.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::mac::MacSlotModel;
use crate::phase::PhaseGrid;
use crate::txtime::Qn2Solver;

const TAIL: f64 = 1e-15;
const MAX_SWEEPS: usize = 20_000;
const TOL: f64 = 1e-12;

/// Phase advance over one gap, as a pmf over ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct GapModel {
    pub advance: Vec<f64>,
}

impl GapModel {
    pub fn new(cfg: &ScenarioConfig, grid: &PhaseGrid) -> GapModel {
        let mac = MacSlotModel::new(cfg);
        let n = cfg.n_s.max(1) as i32;
        let tau = mac.tau_mac;
        let p_idle = (1.0 - tau).powi(n);
        let p_succ = n as f64 * tau * (1.0 - tau).powi(n - 1);
        GapModel::from_slots(
            grid,
            p_idle,
            p_succ,
            mac.t_idle,
            mac.t_coll,
            cfg.t_ack + cfg.t_rts + cfg.t_cts,
        )
    }

    /// Gap of `fixed` seconds plus slots that are idle, collided or
    /// successful with the given probabilities, up to the first success.
    pub fn from_slots(
        grid: &PhaseGrid,
        p_idle: f64,
        p_succ: f64,
        t_idle: f64,
        t_coll: f64,
        fixed: f64,
    ) -> GapModel {
        let mut advance: Vec<f64> = Vec::new();
        let mut add = |t: f64, p: f64| {
            for (d, q) in grid.shift(t).outcomes() {
                if d >= advance.len() {
                    advance.resize(d + 1, 0.0);
                }
                advance[d] += p * q;
            }
        };
        if p_succ <= 0.0 {
            // Nobody ever wins; only the fixed part is left.
            add(fixed, 1.0);
            return GapModel { advance };
        }
        let p_coll = (1.0 - p_idle - p_succ).max(0.0);
        // ways[c]: probability of the busy slots so far, `c` of them collisions.
        let mut ways = vec![1.0];
        while ways.iter().sum::<f64>() > TAIL {
            let busy = ways.len() - 1;
            for (c, &w) in ways.iter().enumerate() {
                if w > 0.0 {
                    let t = fixed + (busy - c) as f64 * t_idle + c as f64 * t_coll;
                    add(t, p_succ * w);
                }
            }
            let mut next = vec![0.0; ways.len() + 1];
            for (c, &w) in ways.iter().enumerate() {
                next[c] += p_idle * w;
                next[c + 1] += p_coll * w;
            }
            ways = next;
        }
        let total: f64 = advance.iter().sum();
        advance.iter_mut().for_each(|p| *p /= total);
        GapModel { advance }
    }

    pub fn mean_ticks(&self) -> f64 {
        self.advance.iter().enumerate().map(|(d, p)| d as f64 * p).sum()
    }
}

/// Applies a state-independent phase advance to a joint vector indexed
/// `(phase - 1) * live + node`, moving the primary chain once per frame
/// boundary crossed.
fn advance_joint(mu: &[f64], gap: &GapModel, grid: &PhaseGrid, trans: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let nl = trans.len();
    let len = grid.len;
    // by_cross[c][x'][k]: mass at new phase x' before c primary steps.
    let mut by_cross: Vec<Vec<f64>> = Vec::new();
    for x in 1..=len {
        let row = &mu[(x - 1) * nl..x * nl];
        if row.iter().all(|&m| m == 0.0) {
            continue;
        }
        for (d, &p) in gap.advance.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let c = (x - 1 + d) / len;
            let x2 = grid.advance(x, d);
            if c >= by_cross.len() {
                by_cross.resize_with(c + 1, || vec![0.0; len * nl]);
            }
            let dst = &mut by_cross[c][(x2 - 1) * nl..x2 * nl];
            for (k, &m) in row.iter().enumerate() {
                dst[k] += p * m;
            }
        }
    }
    // Horner: out = (((b_C) P + b_{C-1}) P + ...) + b_0.
    let mut out = vec![0.0; len * nl];
    for layer in by_cross.iter().rev() {
        let mut stepped = vec![0.0; len * nl];
        for x in 0..len {
            let src = &out[x * nl..(x + 1) * nl];
            let dst = &mut stepped[x * nl..(x + 1) * nl];
            for (k, &m) in src.iter().enumerate() {
                if m != 0.0 {
                    for &(v, p) in &trans[k] {
                        dst[v] += m * p;
                    }
                }
            }
        }
        for (o, (s, b)) in out.iter_mut().zip(stepped.iter().zip(layer)) {
            *o = s + b;
        }
    }
    out
}

/// Stationary joint law of (start phase, live primary node) at data starts.
pub fn stationary_starts(solver: &Qn2Solver<'_>, gap: &GapModel) -> Result<Vec<f64>> {
    let grid = solver.grid();
    let trans = solver.live_transition();
    let nl = trans.len();
    let kernel = solver.joint_kernel();
    let pi = solver.stationary_live();
    let mut mu = vec![0.0; grid.len * nl];
    for x in 1..=grid.len {
        for k in 0..nl {
            mu[(x - 1) * nl + k] = pi[k] / grid.len as f64;
        }
    }
    for _ in 0..MAX_SWEEPS {
        let ended = kernel.apply(&mu);
        let next = advance_joint(&ended, gap, &grid, &trans);
        let total: f64 = next.iter().sum();
        // Half-lazy step so a periodic chain still settles.
        let next: Vec<f64> = mu.iter().zip(&next).map(|(a, b)| 0.5 * (a + b / total)).collect();
        let diff: f64 = mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if diff < TOL {
            return Ok(mu);
        }
    }
    Err(Error::NoConvergence("joint start law", MAX_SWEEPS))
}

/// Entry distribution over live nodes for every start phase `1..=len`.
/// Phases that data never starts at fall back to the stationary law.
pub fn data_start_entries(solver: &Qn2Solver<'_>, gap: &GapModel) -> Result<Vec<Vec<f64>>> {
    let mu = stationary_starts(solver, gap)?;
    let pi = solver.stationary_live();
    let nl = pi.len();
    Ok(mu
        .chunks(nl)
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 1e-300 {
                row.iter().map(|m| m / total).collect()
            } else {
                pi.clone()
            }
        })
        .collect())
}
