//! Downlink slot-grid occupancy and the time a secondary transmission spends
//! in one frame.
//!
//! The grid has `rows` subchannels and `cols_dl` slot columns (one column is
//! `nu` symbols). Buffer state `u` occupies `min(u, M)` slots. A secondary
//! transmission consumes empty slots column by column in time order, using
//! every empty slot of a column in parallel, and may only start at a column
//! boundary.

use crate::config::{FrameGeometry, Striping, SNAP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotProfile {
    pub node: usize,
    /// Empty slots per column, `f[0]` is the first column. Empty for
    /// rectangular allocation, where capacity is spread uniformly instead.
    pub f: Vec<usize>,
    pub e_total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VisitResult {
    /// The last slot finishes `end_offset` symbols into the frame, inside
    /// symbol `end_symbol`.
    Completed { end_offset: f64, end_symbol: usize },
    /// The frame ran out; `remaining` slots continue at the next frame start.
    Carryover { remaining: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitOutcome {
    pub service_time: f64,
    pub result: VisitResult,
}

impl VisitOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self.result, VisitResult::Completed { .. })
    }
}

fn check_state(u: usize, g: &FrameGeometry) -> Result<()> {
    if u > g.n_states {
        return Err(Error::OutOfRange {
            what: "buffer state",
            value: u.to_string(),
            allowed: format!("0..={}", g.n_states),
        });
    }
    Ok(())
}

pub fn profile(u: usize, policy: Striping, g: &FrameGeometry) -> Result<SlotProfile> {
    check_state(u, g)?;
    let occupied = u.min(g.m_slots);
    let (rows, cols) = (g.rows, g.cols_dl);
    let f = match policy {
        Striping::Horizontal => {
            // Whole rows from the top, then a partial row from the left.
            let full_rows = occupied / cols;
            let partial = occupied % cols;
            (1..=cols)
                .map(|i| rows - full_rows - usize::from(i <= partial))
                .collect()
        }
        Striping::Vertical => {
            let full_cols = occupied / rows;
            let partial = occupied % rows;
            (1..=cols)
                .map(|i| match i.cmp(&(full_cols + 1)) {
                    std::cmp::Ordering::Less => 0,
                    std::cmp::Ordering::Equal => rows - partial,
                    std::cmp::Ordering::Greater => rows,
                })
                .collect()
        }
        Striping::Rectangular => Vec::new(),
    };
    Ok(SlotProfile {
        node: u,
        f,
        e_total: g.m_slots - occupied,
    })
}

/// First usable column (1-based) for a transmission ready at `offset` symbols.
fn first_column(offset: f64, nu: usize) -> usize {
    let c = offset / nu as f64;
    let nearest = c.round();
    let c = if (c - nearest).abs() < SNAP { nearest } else { c };
    c.ceil().max(0.0) as usize + 1
}

/// Precomputed profiles for every buffer state.
#[derive(Debug, Clone)]
pub struct ProfileTable {
    policy: Striping,
    geometry: FrameGeometry,
    // Indexed by min(u, M).
    profiles: Vec<SlotProfile>,
}

impl ProfileTable {
    pub fn new(policy: Striping, geometry: &FrameGeometry) -> ProfileTable {
        let profiles = (0..=geometry.m_slots)
            .map(|u| profile(u, policy, geometry).expect("u <= M <= N"))
            .collect();
        ProfileTable {
            policy,
            geometry: *geometry,
            profiles,
        }
    }

    pub fn policy(&self) -> Striping {
        self.policy
    }

    pub fn geometry(&self) -> &FrameGeometry {
        &self.geometry
    }

    /// Profile of state `u`, reported for `min(u, M)`.
    pub fn get(&self, u: usize) -> &SlotProfile {
        &self.profiles[u.min(self.geometry.m_slots)]
    }

    pub fn empty_slots(&self, u: usize) -> usize {
        self.get(u).e_total
    }

    /// Empty slots still usable by a transmission ready at `offset` symbols.
    pub fn residual_at(&self, u: usize, offset: f64) -> f64 {
        let g = &self.geometry;
        if offset >= g.k_sym_dl as f64 {
            return 0.0;
        }
        let p = self.get(u);
        match self.policy {
            Striping::Rectangular => {
                p.e_total as f64 * (g.k_sym_dl as f64 - offset).max(0.0) / g.k_sym_dl as f64
            }
            _ => {
                let c0 = first_column(offset, g.nu);
                p.f.iter().skip(c0 - 1).sum::<usize>() as f64
            }
        }
    }

    /// One visit of a transmission needing `s` slots, ready `offset` symbols
    /// into a frame of state `u`.
    pub fn visit_at(&self, u: usize, offset: f64, s: f64) -> VisitOutcome {
        debug_assert!(s > 0.0);
        let g = &self.geometry;
        let p = self.get(u);
        let carry = |remaining: f64| VisitOutcome {
            service_time: (g.k_sym as f64 - offset).max(0.0) * g.t_sym,
            result: VisitResult::Carryover { remaining },
        };
        let completed = |end_offset: f64| VisitOutcome {
            service_time: (end_offset - offset) * g.t_sym,
            result: VisitResult::Completed {
                end_offset,
                end_symbol: symbol_containing(end_offset).clamp(1, g.k_sym_dl),
            },
        };
        match self.policy {
            Striping::Rectangular => {
                let e = p.e_total as f64;
                let residual = self.residual_at(u, offset);
                if e > 0.0 && residual >= s - SNAP {
                    completed(offset + s / e * g.k_sym_dl as f64)
                } else {
                    carry(s - residual)
                }
            }
            _ => {
                let c0 = first_column(offset, g.nu);
                let mut before = 0usize;
                for col in c0..=g.cols_dl {
                    let here = p.f[col - 1];
                    if (before + here) as f64 >= s - SNAP {
                        let frac = ((s - before as f64) / here as f64).min(1.0);
                        return completed(g.nu as f64 * ((col - 1) as f64 + frac));
                    }
                    before += here;
                }
                carry(s - before as f64)
            }
        }
    }

    /// [`visit_at`](Self::visit_at) with the transmission ready at the end
    /// of symbol `x` (`x = 0` is the frame start).
    pub fn visit(&self, u: usize, x: usize, s: usize) -> Result<VisitOutcome> {
        let g = &self.geometry;
        check_state(u, g)?;
        if s == 0 {
            return Err(Error::OutOfRange {
                what: "remaining slots",
                value: "0".into(),
                allowed: "1..".into(),
            });
        }
        if x > g.k_sym {
            return Err(Error::OutOfRange {
                what: "symbol index",
                value: x.to_string(),
                allowed: format!("0..={}", g.k_sym),
            });
        }
        Ok(self.visit_at(u, x as f64, s as f64))
    }
}

fn symbol_containing(offset: f64) -> usize {
    let nearest = offset.round();
    let o = if (offset - nearest).abs() < SNAP { nearest } else { offset };
    o.ceil().max(1.0) as usize
}

/// Empty slots after symbol `x` in a frame of state `u`.
pub fn residual_slots(u: usize, x: usize, policy: Striping, g: &FrameGeometry) -> Result<f64> {
    check_state(u, g)?;
    Ok(ProfileTable::new(policy, g).residual_at(u, x as f64))
}

pub fn visit(u: usize, x: usize, s: usize, policy: Striping, g: &FrameGeometry) -> Result<VisitOutcome> {
    ProfileTable::new(policy, g).visit(u, x, s)
}
