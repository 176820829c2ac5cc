//! Frame-phase classes used by both queueing networks.
//!
//! A phase index `x` in `1..=len` names one tick of the frame, where a tick is
//! `1 / ticks_per_symbol` of an OFDM symbol. Index 0 is reserved for "exactly
//! at the frame start" (transmissions resumed after an uplink interruption).
//! How an index maps back to a position inside the frame, and how a duration
//! moves an index forward, is set by [`PhaseRule`].

use serde::{Deserialize, Serialize};

use crate::config::{FrameGeometry, ScenarioConfig, SNAP};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseRule {
    /// Index `x` is the instant `x` ticks into the frame; durations are
    /// rounded up to whole ticks.
    EndOfTick,
    /// Index `x` is a position uniformly distributed inside tick `x`;
    /// a duration of `q + f` ticks advances by `q + 1` with probability `f`
    /// and by `q` otherwise.
    Uniform,
}

/// Random phase advance: `base` ticks, plus one more with probability `p_up`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shift {
    pub base: usize,
    pub p_up: f64,
}

impl Shift {
    pub const ZERO: Shift = Shift { base: 0, p_up: 0.0 };

    /// `(delta, probability)` pairs with non-zero probability.
    pub fn outcomes(&self) -> impl Iterator<Item = (usize, f64)> {
        let lo = (self.base, 1.0 - self.p_up);
        let hi = (self.base + 1, self.p_up);
        [lo, hi].into_iter().filter(|&(_, p)| p > 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.base as f64 + self.p_up
    }
}

/// Distribution of the sum of two independent shifts, as `(delta, prob)`.
pub fn compose(a: Shift, b: Shift) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(3);
    for (da, pa) in a.outcomes() {
        for (db, pb) in b.outcomes() {
            let d = da + db;
            match out.iter_mut().find(|(x, _)| *x == d) {
                Some(slot) => slot.1 += pa * pb,
                None => out.push((d, pa * pb)),
            }
        }
    }
    out.sort_by_key(|&(d, _)| d);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGrid {
    pub ticks_per_symbol: usize,
    pub rule: PhaseRule,
    /// Ticks per frame.
    pub len: usize,
    /// Last downlink tick.
    pub dl_len: usize,
    pub t_tick: f64,
    pub t_sym: f64,
    pub t_frame: f64,
}

impl PhaseGrid {
    pub fn new(geometry: &FrameGeometry, ticks_per_symbol: usize, rule: PhaseRule) -> PhaseGrid {
        let r = ticks_per_symbol.max(1);
        PhaseGrid {
            ticks_per_symbol: r,
            rule,
            len: geometry.k_sym * r,
            dl_len: geometry.k_sym_dl * r,
            t_tick: geometry.t_sym / r as f64,
            t_sym: geometry.t_sym,
            t_frame: geometry.t_frame,
        }
    }

    pub fn for_config(cfg: &ScenarioConfig) -> Result<PhaseGrid> {
        let g = cfg.geometry()?;
        Ok(PhaseGrid::new(
            &g,
            cfg.analysis.ticks_per_symbol,
            cfg.analysis.phase_rule,
        ))
    }

    /// Phase advance caused by a deterministic duration.
    pub fn shift(&self, duration: f64) -> Shift {
        if duration <= 0.0 {
            return Shift::ZERO;
        }
        let ticks = duration / self.t_tick;
        let nearest = ticks.round();
        let ticks = if (ticks - nearest).abs() < SNAP { nearest } else { ticks };
        match self.rule {
            PhaseRule::EndOfTick => Shift {
                base: ticks.ceil() as usize,
                p_up: 0.0,
            },
            PhaseRule::Uniform => {
                let base = ticks.floor();
                Shift {
                    base: base as usize,
                    p_up: ticks - base,
                }
            }
        }
    }

    /// Position of phase index `x` inside the frame, in symbols.
    pub fn offset_symbols(&self, x: usize) -> f64 {
        let r = self.ticks_per_symbol as f64;
        match (x, self.rule) {
            (0, _) => 0.0,
            (x, PhaseRule::EndOfTick) => x as f64 / r,
            (x, PhaseRule::Uniform) => (x as f64 - 0.5) / r,
        }
    }

    /// Phase index of the tick containing an instant `offset` symbols into
    /// the frame. Instants on a tick boundary belong to the earlier tick.
    pub fn tick_of(&self, offset: f64) -> usize {
        let t = offset * self.ticks_per_symbol as f64;
        let nearest = t.round();
        let t = if (t - nearest).abs() < SNAP { nearest } else { t };
        (t.ceil() as usize).clamp(1, self.len)
    }

    /// Wrapping advance on `1..=len`. Index 0 advances like index `len`.
    pub fn advance(&self, x: usize, delta: usize) -> usize {
        let base = if x == 0 { self.len } else { x };
        (base - 1 + delta) % self.len + 1
    }

    pub fn is_uplink(&self, x: usize) -> bool {
        x > self.dl_len
    }

    /// Start time (s, within the frame) that phase index `x` represents.
    pub fn start_time(&self, x: usize) -> f64 {
        self.offset_symbols(x) * self.t_sym
    }
}
