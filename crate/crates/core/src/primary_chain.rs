//! Buffer occupancy of the primary base station at frame boundaries.
//!
//! State `u` is the number of slots needed to drain the buffer at the start
//! of a frame. Each frame drains up to `M` slots and Poisson arrivals add
//! `S_P` slots per packet; the buffer saturates at `N = C_B * S_P`.

use std::io::Write;

use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::gamma_lr;

use crate::config::{FrameGeometry, ScenarioConfig};
use crate::error::{Error, Result};
use crate::markov::{stationary_from, SparseMatrix};

/// Tail mass below which the arrival pmf is cut off.
const PMF_TAIL: f64 = 1e-15;

pub fn poisson_pmf(lambda_p: f64, k: u64) -> Result<f64> {
    if !(lambda_p >= 0.0) || !lambda_p.is_finite() {
        return Err(Error::OutOfRange {
            what: "lambda_p",
            value: lambda_p.to_string(),
            allowed: "[0, inf)".into(),
        });
    }
    if lambda_p == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    let kf = k as f64;
    Ok((-lambda_p + kf * lambda_p.ln() - ln_factorial(k)).exp())
}

/// `P(X >= k)` for `X ~ Poisson(lambda_p)`.
pub fn poisson_tail(lambda_p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if lambda_p == 0.0 {
        return 0.0;
    }
    // P(X >= k) is the regularized lower incomplete gamma P(k, lambda).
    gamma_lr(k as f64, lambda_p)
}

/// Arrival pmf `P_0, P_1, ...` up to the point where the remaining tail
/// drops below `1e-15`.
pub fn arrival_pmf(lambda_p: f64) -> Result<Vec<f64>> {
    let mut pmf = Vec::new();
    let mut k = 0u64;
    loop {
        pmf.push(poisson_pmf(lambda_p, k)?);
        k += 1;
        if k as f64 > lambda_p && poisson_tail(lambda_p, k) < PMF_TAIL {
            break;
        }
    }
    Ok(pmf)
}

#[derive(Debug, Clone)]
pub struct PrimaryChain {
    pub transition: SparseMatrix,
    pub steady_state: Vec<f64>,
    pub arrival_pmf: Vec<f64>,
    pub m_slots: usize,
    pub n_states: usize,
    pub s_p: usize,
}

/// One-frame transition matrix over states `0..=N`.
pub fn build_transition_matrix(cfg: &ScenarioConfig) -> Result<SparseMatrix> {
    let g = cfg.geometry()?;
    let pmf = arrival_pmf(cfg.lambda_p)?;
    Ok(transition_from(&g, cfg.s_p, cfg.lambda_p, &pmf))
}

fn transition_from(g: &FrameGeometry, s_p: usize, lambda_p: f64, pmf: &[f64]) -> SparseMatrix {
    let (m, n) = (g.m_slots, g.n_states);
    let rows = (0..=n)
        .map(|i| {
            let base = i.saturating_sub(m);
            // Smallest batch that reaches the buffer limit.
            let k_full = (n - base).div_ceil(s_p);
            // Batches past the truncated pmf fold into the overflow term.
            let k_cut = k_full.min(pmf.len());
            let mut row: Vec<(usize, f64)> = (0..k_cut)
                .map(|k| (base + k * s_p, pmf[k]))
                .filter(|&(_, p)| p > 0.0)
                .collect();
            let tail = poisson_tail(lambda_p, k_cut as u64);
            if tail > 0.0 {
                row.push((n, tail));
            }
            row
        })
        .collect();
    SparseMatrix::from_rows(rows)
}

/// Stationary distribution of the closed class containing state 0.
pub fn steady_state(transition: &SparseMatrix) -> Result<Vec<f64>> {
    stationary_from(transition, 0)
}

impl PrimaryChain {
    pub fn new(cfg: &ScenarioConfig) -> Result<PrimaryChain> {
        let g = cfg.geometry()?;
        let arrival_pmf = arrival_pmf(cfg.lambda_p)?;
        let transition = transition_from(&g, cfg.s_p, cfg.lambda_p, &arrival_pmf);
        let steady_state = steady_state(&transition)?;
        Ok(PrimaryChain {
            transition,
            steady_state,
            arrival_pmf,
            m_slots: g.m_slots,
            n_states: g.n_states,
            s_p: cfg.s_p,
        })
    }

    /// Mean number of empty downlink slots per frame.
    pub fn mean_empty_slots(&self) -> f64 {
        self.steady_state
            .iter()
            .enumerate()
            .map(|(u, p)| p * self.m_slots.saturating_sub(u) as f64)
            .sum()
    }

    /// Mean number of slots the base station transmits per frame.
    pub fn mean_served_slots(&self) -> f64 {
        self.steady_state
            .iter()
            .enumerate()
            .map(|(u, p)| p * u.min(self.m_slots) as f64)
            .sum()
    }

    /// Largest `|pi P - pi|` entry.
    pub fn balance_residual(&self) -> f64 {
        let next = self.transition.left_mul(&self.steady_state);
        next.iter()
            .zip(&self.steady_state)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `state,probability` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "probability"])?;
        for (u, p) in self.steady_state.iter().enumerate() {
            w.write_record([u.to_string(), format!("{p:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}
