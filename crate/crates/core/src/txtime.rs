//! Mean duration and end-phase distribution of a secondary data
//! transmission, as a function of the phase at which it starts.
//!
//! Nodes are primary buffer states `0..=N`. A customer of class `(x, s)` at
//! node `u` is a transmission that still needs `s` slots and is ready at
//! phase `x` of a frame in state `u`. It either finishes in that frame and
//! leaves, or consumes the frame's residual slots and moves to the next
//! frame's state (drawn from the primary transition matrix) as class
//! `(0, s - residual)`. With a unit injection, the mean residence time is the
//! sum of arrival rate times service time over all node-classes.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, SNAP};
use crate::coupling::{data_start_entries, GapModel};
use crate::error::{Error, Result};
use crate::markov::{limit_distribution, reachable_from, SparseMatrix};
use crate::phase::PhaseGrid;
use crate::primary_chain::PrimaryChain;
use crate::striping::{ProfileTable, VisitResult};

#[derive(Debug, Clone)]
pub struct TxTimeTable {
    pub grid: PhaseGrid,
    /// `gamma[x - 1]`: mean transmission time (s) when started at phase `x`.
    pub gamma: Vec<f64>,
    /// `beta[x - 1][e - 1]`: probability a transmission started at `x` ends
    /// in phase `e`.
    pub beta: Vec<Vec<f64>>,
    /// `entry_dist[x - 1][u]`: probability a transmission started at `x`
    /// begins in a frame of state `u`.
    pub entry_dist: Vec<Vec<f64>>,
}

impl TxTimeTable {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self, x: usize) -> f64 {
        self.gamma[x - 1]
    }

    pub fn beta_row(&self, x: usize) -> &[f64] {
        &self.beta[x - 1]
    }

    /// `phase,start_ms,gamma_ms` rows.
    pub fn write_gamma_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "start_ms", "gamma_ms"])?;
        for (k, g) in self.gamma.iter().enumerate() {
            let x = k + 1;
            w.write_record([
                x.to_string(),
                format!("{:.6}", self.grid.start_time(x) * 1e3),
                format!("{:.9}", g * 1e3),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solution of the network for one start phase.
#[derive(Debug, Clone)]
pub struct StartSolution {
    pub gamma: f64,
    pub beta: Vec<f64>,
    pub entry: Vec<f64>,
}

/// All class arrival rates for one start phase and a given entry
/// distribution, for inspection.
#[derive(Debug, Clone)]
pub struct Qn2Flows {
    /// Arrival rate of the injected class `(x, S_S)` at each node.
    pub injected: Vec<f64>,
    /// `levels[s][u]`: arrival rate of class `(0, s)` at node `u`
    /// (`levels[0]` is unused).
    pub levels: Vec<Vec<f64>>,
    /// Departure rate out of the network from each node.
    pub completed: Vec<f64>,
    pub gamma: f64,
    pub beta: Vec<f64>,
}

/// Which primary state a transmission is assumed to start in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryRule {
    /// The state in which the previous transmission completed, closed as a
    /// fixed point over transmissions started at the same phase.
    Completion,
    /// The stationary primary distribution.
    Stationary,
    /// The stationary joint law of phase and primary state at the start of
    /// successive data transmissions on the shared channel, conditioned on
    /// the phase.
    Channel,
}

impl EntryRule {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryRule::Completion => "completion",
            EntryRule::Stationary => "stationary",
            EntryRule::Channel => "channel",
        }
    }
}

/// Remaining time, completion node and end phase of a transmission from
/// some point on. `node` is indexed like [`Qn2Solver::live_nodes`].
#[derive(Debug, Clone)]
struct Outcome {
    time: f64,
    node: Vec<f64>,
    end: Vec<f64>,
}

impl Outcome {
    fn zero(nodes: usize, ticks: usize) -> Outcome {
        Outcome {
            time: 0.0,
            node: vec![0.0; nodes],
            end: vec![0.0; ticks],
        }
    }

    fn add_scaled(&mut self, w: f64, other: &Outcome) {
        self.time += w * other.time;
        self.node.iter_mut().zip(&other.node).for_each(|(a, b)| *a += w * b);
        self.end.iter_mut().zip(&other.end).for_each(|(a, b)| *a += w * b);
    }
}

/// Row of the joint kernel: a transmission that finishes in its first
/// visit lands on one cell; a carried one shares a law with every start
/// that leaves the same node with the same slots left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointRow {
    Direct(usize),
    Carried(usize),
}

#[derive(Debug, Clone)]
pub struct JointKernel {
    pub rows: Vec<JointRow>,
    pub carried: Vec<Vec<(usize, f64)>>,
}

impl JointKernel {
    /// `mu * K`.
    pub fn apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        let mut pooled = vec![0.0; self.carried.len()];
        for (row, &m) in self.rows.iter().zip(mu) {
            if m == 0.0 {
                continue;
            }
            match *row {
                JointRow::Direct(j) => out[j] += m,
                JointRow::Carried(c) => pooled[c] += m,
            }
        }
        for (c, &m) in pooled.iter().enumerate() {
            if m != 0.0 {
                for &(j, p) in &self.carried[c] {
                    out[j] += m * p;
                }
            }
        }
        out
    }
}

/// Precomputed structure shared by every start phase.
pub struct Qn2Solver<'a> {
    chain: &'a PrimaryChain,
    profiles: &'a ProfileTable,
    grid: PhaseGrid,
    s_s: usize,
    /// Empty slots per node.
    empty: Vec<usize>,
    /// States reachable from an empty buffer; flow started from the
    /// stationary vector never leaves them.
    live: Vec<usize>,
    live_index: Vec<Option<usize>>,
    /// Live nodes with no empty slot, and their position in `zero_inv`.
    zero_nodes: Vec<usize>,
    zero_index: Vec<Option<usize>>,
    /// `(I - P_ZZ)^-1` over the zero-capacity nodes.
    zero_inv: DMatrix<f64>,
    /// `levels[s][k]`: outcome of class `(0, s)` arriving at live node `k`.
    levels: Vec<Vec<Outcome>>,
    /// `start_tick[s][k]`: end phase of class `(0, s)` finishing at live
    /// node `k` (0 when it cannot finish there).
    start_tick: Vec<Vec<usize>>,
}

impl<'a> Qn2Solver<'a> {
    pub fn new(chain: &'a PrimaryChain, profiles: &'a ProfileTable, grid: PhaseGrid, s_s: usize) -> Result<Self> {
        let n = chain.n_states;
        if s_s == 0 {
            return Err(Error::config("s_s must be at least 1"));
        }
        let empty: Vec<usize> = (0..=n).map(|u| profiles.empty_slots(u)).collect();
        let reachable = reachable_from(&chain.transition, 0);
        let live: Vec<usize> = (0..=n).filter(|&u| reachable[u]).collect();
        let mut live_index = vec![None; n + 1];
        for (k, &u) in live.iter().enumerate() {
            live_index[u] = Some(k);
        }
        let zero_nodes: Vec<usize> = live.iter().copied().filter(|&u| empty[u] == 0).collect();
        let mut zero_index = vec![None; n + 1];
        for (k, &u) in zero_nodes.iter().enumerate() {
            zero_index[u] = Some(k);
        }
        let nz = zero_nodes.len();
        let mut a = DMatrix::<f64>::identity(nz, nz);
        for (k, &u) in zero_nodes.iter().enumerate() {
            for &(v, p) in chain.transition.row(u) {
                if let Some(l) = zero_index[v] {
                    a[(k, l)] -= p;
                }
            }
        }
        let zero_inv = if nz == 0 {
            a
        } else {
            a.try_inverse().ok_or_else(|| {
                Error::Degenerate("primary chain never leaves the fully loaded states".into())
            })?
        };
        let mut solver = Qn2Solver {
            chain,
            profiles,
            grid,
            s_s,
            empty,
            live,
            live_index,
            zero_nodes,
            zero_index,
            zero_inv,
            levels: Vec::new(),
            start_tick: Vec::new(),
        };
        solver.start_tick = (0..=s_s)
            .map(|lvl| {
                solver
                    .live
                    .iter()
                    .map(|&u| {
                        if lvl == 0 || solver.empty[u] < lvl {
                            return 0;
                        }
                        match profiles.visit_at(u, 0.0, lvl as f64).result {
                            VisitResult::Completed { end_offset, .. } => grid.tick_of(end_offset),
                            VisitResult::Carryover { .. } => 0,
                        }
                    })
                    .collect()
            })
            .collect();
        solver.levels = solver.solve_levels();
        Ok(solver)
    }

    /// Buffer states the solver tracks, in the order used by node vectors.
    pub fn live_nodes(&self) -> &[usize] {
        &self.live
    }

    fn blank(&self) -> Outcome {
        Outcome::zero(self.live.len(), self.grid.len)
    }

    fn completion(&self, k: usize, service: f64, end_offset: f64) -> Outcome {
        let mut o = self.blank();
        o.time = service;
        o.node[k] = 1.0;
        o.end[self.grid.tick_of(end_offset) - 1] = 1.0;
        o
    }

    /// Outcome of moving to the next frame from node `u` with `s` slots left,
    /// given outcomes for every level below `s` (and `s` itself for
    /// zero-capacity targets handled by the caller).
    fn next_frame(&self, u: usize, level: &[Outcome], base_time: f64) -> Outcome {
        let mut o = self.blank();
        o.time = base_time;
        for &(v, p) in self.chain.transition.row(u) {
            let k = self.live_index[v].expect("transition leaves the reachable set");
            o.add_scaled(p, &level[k]);
        }
        o
    }

    fn solve_levels(&self) -> Vec<Vec<Outcome>> {
        let t_frame = self.grid.t_frame;
        let nl = self.live.len();
        let mut levels: Vec<Vec<Outcome>> = vec![Vec::new()];
        for s in 1..=self.s_s {
            let mut cur: Vec<Outcome> = vec![self.blank(); nl];
            // Nodes with capacity finish here or drop to a lower level.
            for (k, &u) in self.live.iter().enumerate() {
                let e = self.empty[u];
                if e == 0 {
                    continue;
                }
                cur[k] = if e >= s {
                    let out = self.profiles.visit_at(u, 0.0, s as f64);
                    match out.result {
                        VisitResult::Completed { end_offset, .. } => self.completion(k, out.service_time, end_offset),
                        VisitResult::Carryover { .. } => unreachable!("capacity covers the demand"),
                    }
                } else {
                    self.next_frame(u, &levels[s - e], t_frame)
                };
            }
            // Zero-capacity nodes stay at level s:
            // V_Z = (I - P_ZZ)^-1 (T_frame + P_{Z,rest} V_rest).
            let rhs: Vec<Outcome> = self
                .zero_nodes
                .iter()
                .map(|&u| {
                    let mut o = self.blank();
                    o.time = t_frame;
                    for &(v, p) in self.chain.transition.row(u) {
                        if self.zero_index[v].is_none() {
                            o.add_scaled(p, &cur[self.live_index[v].unwrap()]);
                        }
                    }
                    o
                })
                .collect();
            for (kz, &u) in self.zero_nodes.iter().enumerate() {
                let mut o = self.blank();
                for (l, r) in rhs.iter().enumerate() {
                    let w = self.zero_inv[(kz, l)];
                    if w != 0.0 {
                        o.add_scaled(w, r);
                    }
                }
                cur[self.live_index[u].unwrap()] = o;
            }
            levels.push(cur);
        }
        levels
    }

    /// Outcome of the injected class `(x, S_S)` at live node `k`.
    fn first_visit(&self, x: usize, k: usize) -> Outcome {
        let u = self.live[k];
        let offset = self.grid.offset_symbols(x);
        let out = self.profiles.visit_at(u, offset, self.s_s as f64);
        match out.result {
            VisitResult::Completed { end_offset, .. } => self.completion(k, out.service_time, end_offset),
            VisitResult::Carryover { remaining } => {
                let s = level_of(remaining);
                self.next_frame(u, &self.levels[s], out.service_time)
            }
        }
    }

    fn check_phase(&self, x: usize) -> Result<()> {
        if x == 0 || x > self.grid.len {
            return Err(Error::OutOfRange {
                what: "start phase",
                value: x.to_string(),
                allowed: format!("1..={}", self.grid.len),
            });
        }
        Ok(())
    }

    /// Solves start phase `x` under a rule that needs no other phase.
    pub fn solve_for_start(&self, x: usize, rule: EntryRule) -> Result<StartSolution> {
        self.check_phase(x)?;
        let firsts = self.firsts(x);
        let pi = self.stationary_live();
        let entry_live = match rule {
            EntryRule::Stationary => pi,
            EntryRule::Completion => {
                // Start node -> completion node; the entry distribution is its
                // long-run limit from the stationary vector.
                let g = SparseMatrix::from_rows(
                    firsts
                        .iter()
                        .map(|o| {
                            o.node
                                .iter()
                                .enumerate()
                                .filter(|(_, &p)| p > 0.0)
                                .map(|(j, &p)| (j, p))
                                .collect()
                        })
                        .collect(),
                );
                limit_distribution(&g, &pi)?
            }
            EntryRule::Channel => {
                return Err(Error::config(
                    "the channel entry rule couples all phases; use build_table",
                ))
            }
        };
        Ok(self.combine(&firsts, &entry_live))
    }

    /// Solves start phase `x` with a given entry distribution over the live
    /// nodes.
    pub fn solve_with_entry(&self, x: usize, entry_live: &[f64]) -> Result<StartSolution> {
        self.check_phase(x)?;
        if entry_live.len() != self.live.len() {
            return Err(Error::config("entry distribution has the wrong length"));
        }
        Ok(self.combine(&self.firsts(x), entry_live))
    }

    fn firsts(&self, x: usize) -> Vec<Outcome> {
        (0..self.live.len()).map(|k| self.first_visit(x, k)).collect()
    }

    fn combine(&self, firsts: &[Outcome], entry_live: &[f64]) -> StartSolution {
        let mut total = self.blank();
        for (k, o) in firsts.iter().enumerate() {
            if entry_live[k] != 0.0 {
                total.add_scaled(entry_live[k], o);
            }
        }
        let mut entry = vec![0.0; self.chain.n_states + 1];
        for (k, &u) in self.live.iter().enumerate() {
            entry[u] = entry_live[k];
        }
        StartSolution {
            gamma: total.time,
            beta: total.end,
            entry,
        }
    }

    pub fn grid(&self) -> PhaseGrid {
        self.grid
    }

    /// Stationary primary distribution over the live nodes.
    pub fn stationary_live(&self) -> Vec<f64> {
        self.live.iter().map(|&u| self.chain.steady_state[u]).collect()
    }

    /// Primary transition rows in live-node indices.
    pub fn live_transition(&self) -> Vec<Vec<(usize, f64)>> {
        self.live
            .iter()
            .map(|&u| {
                self.chain
                    .transition
                    .row(u)
                    .iter()
                    .map(|&(v, p)| (self.live_index[v].expect("closed set"), p))
                    .collect()
            })
            .collect()
    }

    /// Joint law of (end phase, completion node) for a transmission started
    /// at phase `x` in live node `k`, for every pair. Row and column index
    /// `(phase - 1) * live + node`.
    pub fn joint_kernel(&self) -> JointKernel {
        let nl = self.live.len();
        let len = self.grid.len;
        let trans = self.live_transition();
        // Carried transmissions only depend on the node and slots left.
        let mut first: Vec<(usize, usize, Option<usize>)> = Vec::with_capacity(len * nl);
        let mut sources: Vec<(usize, usize)> = Vec::new();
        for x in 1..=len {
            let offset = self.grid.offset_symbols(x);
            for (k, &u) in self.live.iter().enumerate() {
                match self.profiles.visit_at(u, offset, self.s_s as f64).result {
                    VisitResult::Completed { end_offset, .. } => {
                        first.push((k, self.grid.tick_of(end_offset), None));
                    }
                    VisitResult::Carryover { remaining } => {
                        let lvl = level_of(remaining);
                        first.push((k, 0, Some(lvl)));
                        sources.push((k, lvl));
                    }
                }
            }
        }
        sources.sort_unstable();
        sources.dedup();
        let index: HashMap<(usize, usize), usize> =
            sources.iter().enumerate().map(|(i, &key)| (key, i)).collect();
        let carried = sources
            .par_iter()
            .map(|&(k, lvl)| self.carry_joint(&trans, k, lvl))
            .collect();
        let rows = first
            .into_iter()
            .map(|(k, tick, lvl)| match lvl {
                None => JointRow::Direct((tick - 1) * nl + k),
                Some(lvl) => JointRow::Carried(index[&(k, lvl)]),
            })
            .collect();
        JointKernel { rows, carried }
    }

    /// Joint completion law after leaving live node `k` with `lvl` slots
    /// still to send.
    fn carry_joint(&self, trans: &[Vec<(usize, f64)>], k: usize, lvl: usize) -> Vec<(usize, f64)> {
        let nl = self.live.len();
        let zero_live: Vec<usize> = self.zero_nodes.iter().map(|&u| self.live_index[u].unwrap()).collect();
        let mut levels = vec![vec![0.0; nl]; lvl + 1];
        for &(v, p) in &trans[k] {
            levels[lvl][v] += p;
        }
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        let mut zero_in = vec![0.0; zero_live.len()];
        for s in (1..=lvl).rev() {
            let mut arr = std::mem::take(&mut levels[s]);
            for (l, &v) in zero_live.iter().enumerate() {
                zero_in[l] = arr[v];
            }
            if zero_in.iter().any(|&z| z != 0.0) {
                for (kz, &v) in zero_live.iter().enumerate() {
                    arr[v] = zero_in
                        .iter()
                        .enumerate()
                        .map(|(l, &z)| z * self.zero_inv[(l, kz)])
                        .sum();
                }
                for &v in &zero_live {
                    let a = arr[v];
                    for &(w, p) in &trans[v] {
                        if self.empty[self.live[w]] > 0 {
                            arr[w] += a * p;
                        }
                    }
                }
            }
            for v in 0..nl {
                let a = arr[v];
                let e = self.empty[self.live[v]];
                if a == 0.0 || e == 0 {
                    continue;
                }
                if e >= s {
                    let tick = self.start_tick[s][v];
                    *out.entry((tick - 1) * nl + v).or_default() += a;
                } else {
                    for &(w, p) in &trans[v] {
                        levels[s - e][w] += a * p;
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Class arrival rates for start phase `x` when a unit flow enters the
    /// nodes according to `entry`, found by propagating the traffic
    /// equations level by level.
    pub fn flows(&self, x: usize, entry: &[f64]) -> Result<Qn2Flows> {
        self.check_phase(x)?;
        let nodes = self.chain.n_states + 1;
        let t_frame = self.grid.t_frame;
        let mut gamma = 0.0;
        let mut beta = vec![0.0; self.grid.len];
        let mut completed = vec![0.0; nodes];
        let mut levels = vec![vec![0.0; nodes]; self.s_s + 1];

        let offset = self.grid.offset_symbols(x);
        for (u, &r) in entry.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            if self.live_index[u].is_none() {
                return Err(Error::Degenerate(format!("entry mass on unreachable state {u}")));
            }
            let out = self.profiles.visit_at(u, offset, self.s_s as f64);
            gamma += r * out.service_time;
            match out.result {
                VisitResult::Completed { end_offset, .. } => {
                    beta[self.grid.tick_of(end_offset) - 1] += r;
                    completed[u] += r;
                }
                VisitResult::Carryover { remaining } => {
                    let s = level_of(remaining);
                    for &(v, p) in self.chain.transition.row(u) {
                        levels[s][v] += r * p;
                    }
                }
            }
        }

        let mut zero_in = vec![0.0; self.zero_nodes.len()];
        for s in (1..=self.s_s).rev() {
            let mut arrivals = std::mem::take(&mut levels[s]);
            // Zero-capacity nodes keep the class unchanged and recirculate.
            for (k, &u) in self.zero_nodes.iter().enumerate() {
                zero_in[k] = arrivals[u];
            }
            if zero_in.iter().any(|&z| z != 0.0) {
                for (k, &u) in self.zero_nodes.iter().enumerate() {
                    arrivals[u] = zero_in
                        .iter()
                        .enumerate()
                        .map(|(l, &z)| z * self.zero_inv[(l, k)])
                        .sum();
                }
                for &u in &self.zero_nodes {
                    let a = arrivals[u];
                    gamma += a * t_frame;
                    for &(v, p) in self.chain.transition.row(u) {
                        if self.zero_index[v].is_none() {
                            arrivals[v] += a * p;
                        }
                    }
                }
            }
            for u in 0..nodes {
                let a = arrivals[u];
                if a == 0.0 || self.zero_index[u].is_some() {
                    continue;
                }
                let e = self.empty[u];
                if e >= s {
                    let out = self.profiles.visit_at(u, 0.0, s as f64);
                    if let VisitResult::Completed { end_offset, .. } = out.result {
                        gamma += a * out.service_time;
                        beta[self.grid.tick_of(end_offset) - 1] += a;
                        completed[u] += a;
                    }
                } else {
                    gamma += a * t_frame;
                    for &(v, p) in self.chain.transition.row(u) {
                        levels[s - e][v] += a * p;
                    }
                }
            }
            levels[s] = arrivals;
        }

        Ok(Qn2Flows {
            injected: entry.to_vec(),
            levels,
            completed,
            gamma,
            beta,
        })
    }
}

fn level_of(remaining: f64) -> usize {
    ((remaining - SNAP).ceil().max(1.0)) as usize
}

pub fn solve_qn2_for_start(
    x: usize,
    chain: &PrimaryChain,
    profiles: &ProfileTable,
    grid: PhaseGrid,
    s_s: usize,
    rule: EntryRule,
) -> Result<StartSolution> {
    Qn2Solver::new(chain, profiles, grid, s_s)?.solve_for_start(x, rule)
}

/// Builds the table for every start phase. The channel rule needs the
/// inter-transmission gap model.
pub fn build_table(
    chain: &PrimaryChain,
    profiles: &ProfileTable,
    grid: PhaseGrid,
    s_s: usize,
    rule: EntryRule,
    gap: Option<&GapModel>,
) -> Result<TxTimeTable> {
    let solver = Qn2Solver::new(chain, profiles, grid, s_s)?;
    let rows: Vec<StartSolution> = match rule {
        EntryRule::Channel => {
            let gap = gap.ok_or_else(|| Error::config("the channel entry rule needs a gap model"))?;
            let entries = data_start_entries(&solver, gap)?;
            (1..=grid.len)
                .into_par_iter()
                .map(|x| solver.solve_with_entry(x, &entries[x - 1]))
                .collect::<Result<_>>()?
        }
        _ => (1..=grid.len)
            .into_par_iter()
            .map(|x| solver.solve_for_start(x, rule))
            .collect::<Result<_>>()?,
    };
    let mut gamma = Vec::with_capacity(rows.len());
    let mut beta = Vec::with_capacity(rows.len());
    let mut entry_dist = Vec::with_capacity(rows.len());
    for r in rows {
        gamma.push(r.gamma);
        beta.push(r.beta);
        entry_dist.push(r.entry);
    }
    Ok(TxTimeTable {
        grid,
        gamma,
        beta,
        entry_dist,
    })
}

/// Builds chain, profiles and table for a scenario.
pub fn table_for(cfg: &ScenarioConfig) -> Result<(PrimaryChain, TxTimeTable)> {
    let g = cfg.geometry()?;
    let chain = PrimaryChain::new(cfg)?;
    let profiles = ProfileTable::new(cfg.striping, &g);
    let grid = PhaseGrid::for_config(cfg)?;
    let gap = GapModel::new(cfg, &grid);
    let table = build_table(&chain, &profiles, grid, cfg.s_s, cfg.analysis.entry_rule, Some(&gap))?;
    Ok((chain, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Striping, ScenarioConfig};
    use crate::phase::PhaseRule;

    fn setup(lambda_p: f64, striping: Striping) -> (ScenarioConfig, PrimaryChain, ProfileTable, PhaseGrid) {
        let cfg = ScenarioConfig {
            lambda_p,
            striping,
            ..ScenarioConfig::default()
        };
        let g = cfg.geometry().unwrap();
        let chain = PrimaryChain::new(&cfg).unwrap();
        let profiles = ProfileTable::new(striping, &g);
        let grid = PhaseGrid::for_config(&cfg).unwrap();
        (cfg, chain, profiles, grid)
    }

    /// Empty grid, 30 slots per 2-symbol column, 60-slot packet.
    fn idle_duration_symbols(offset: f64) -> f64 {
        let c0 = (offset / 2.0).ceil() as usize + 1;
        if c0 + 1 <= 13 {
            2.0 * (c0 + 1) as f64 - offset
        } else if c0 == 13 {
            50.0 - offset + 2.0
        } else {
            50.0 - offset + 4.0
        }
    }

    #[test]
    fn idle_primary_matches_hand_chase() {
        let (_, chain, profiles, grid) = setup(0.0, Striping::Horizontal);
        let table = build_table(&chain, &profiles, grid, 60, EntryRule::Completion, None).unwrap();
        for x in 1..=50 {
            let want = idle_duration_symbols(grid.offset_symbols(x)) * grid.t_sym;
            assert!((table.gamma(x) - want).abs() < 1e-15, "x={x}");
            assert_eq!(table.entry_dist[x - 1][0], 1.0);
        }
        // Later starts wait out the uplink.
        assert!(table.gamma(30) > table.gamma(1));
    }

    #[test]
    fn uplink_start_waits_for_next_frame() {
        let (_, chain, profiles, grid) = setup(25.0, Striping::Horizontal);
        let solver = Qn2Solver::new(&chain, &profiles, grid, 60).unwrap();
        let fresh = idle_duration_symbols(0.0) * grid.t_sym;
        for x in 27..=50 {
            let sol = solver.solve_for_start(x, EntryRule::Completion).unwrap();
            let wait = grid.t_frame - grid.start_time(x);
            assert!(sol.gamma >= wait + fresh - 1e-12, "x={x}");
        }
    }

    #[test]
    fn beta_rows_are_distributions_on_downlink() {
        for striping in [Striping::Horizontal, Striping::Vertical, Striping::Rectangular] {
            let (_, chain, profiles, grid) = setup(30.0, striping);
            let table = build_table(&chain, &profiles, grid, 60, EntryRule::Completion, None).unwrap();
            assert_eq!(table.len(), 50);
            for x in 1..=50 {
                let row = table.beta_row(x);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row[26..].iter().all(|&b| b == 0.0), "{striping} x={x}");
                let entry: f64 = table.entry_dist[x - 1].iter().sum();
                assert!((entry - 1.0).abs() < 1e-9);
                assert!(table.gamma(x).is_finite() && table.gamma(x) > 0.0);
            }
        }
    }

    /// Recomputes every class arrival rate from the routing rules and the
    /// rates the solver reports.
    #[test]
    fn flows_balance_at_every_node() {
        let (_, chain, profiles, grid) = setup(35.0, Striping::Horizontal);
        let solver = Qn2Solver::new(&chain, &profiles, grid, 60).unwrap();
        for x in [1, 9, 20, 26, 40] {
            let sol = solver.solve_for_start(x, EntryRule::Completion).unwrap();
            let flows = solver.flows(x, &sol.entry).unwrap();
            assert!((flows.gamma - sol.gamma).abs() < 1e-12 * sol.gamma);
            for (a, b) in flows.beta.iter().zip(&sol.beta) {
                assert!((a - b).abs() < 1e-12);
            }
            let nodes = chain.n_states + 1;
            let mut want = vec![vec![0.0; nodes]; 61];
            let push = |u: usize, rate: f64, level: usize, want: &mut Vec<Vec<f64>>| {
                for &(v, p) in chain.transition.row(u) {
                    want[level][v] += rate * p;
                }
            };
            let offset = grid.offset_symbols(x);
            let mut exits = 0.0;
            for u in 0..nodes {
                let r = flows.injected[u];
                if r == 0.0 {
                    continue;
                }
                match profiles.visit_at(u, offset, 60.0).result {
                    VisitResult::Completed { .. } => exits += r,
                    VisitResult::Carryover { remaining } => push(u, r, remaining.round() as usize, &mut want),
                }
            }
            for s in (1..=60).rev() {
                for u in 0..nodes {
                    let a = flows.levels[s][u];
                    if a == 0.0 {
                        continue;
                    }
                    match profiles.visit_at(u, 0.0, s as f64).result {
                        VisitResult::Completed { .. } => exits += a,
                        VisitResult::Carryover { remaining } => {
                            push(u, a, remaining.round() as usize, &mut want)
                        }
                    }
                }
            }
            for s in 1..=60 {
                for u in 0..nodes {
                    assert!((want[s][u] - flows.levels[s][u]).abs() < 1e-12, "x={x} s={s} u={u}");
                }
            }
            assert!((exits - 1.0).abs() < 1e-12);
            let completed: f64 = flows.completed.iter().sum();
            assert!((completed - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn completion_entry_is_a_fixed_point() {
        let (_, chain, profiles, grid) = setup(25.0, Striping::Horizontal);
        let solver = Qn2Solver::new(&chain, &profiles, grid, 60).unwrap();
        for x in [3, 12, 19, 24, 33] {
            let sol = solver.solve_for_start(x, EntryRule::Completion).unwrap();
            let flows = solver.flows(x, &sol.entry).unwrap();
            let gap = flows
                .completed
                .iter()
                .zip(&sol.entry)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < 1e-10, "x={x}: {gap}");
        }
    }

    #[test]
    fn stationary_entry_uses_pi() {
        let (_, chain, profiles, grid) = setup(25.0, Striping::Horizontal);
        let solver = Qn2Solver::new(&chain, &profiles, grid, 60).unwrap();
        let sol = solver.solve_for_start(7, EntryRule::Stationary).unwrap();
        assert_eq!(sol.entry, chain.steady_state);
        let flows = solver.flows(7, &chain.steady_state).unwrap();
        assert!((flows.gamma - sol.gamma).abs() < 1e-12 * sol.gamma);
        assert!(solver.solve_for_start(0, EntryRule::Stationary).is_err());
        assert!(solver.solve_for_start(51, EntryRule::Stationary).is_err());
    }

    #[test]
    fn vertical_is_slower_early_in_the_downlink() {
        let (_, ch, pr, gr) = setup(25.0, Striping::Horizontal);
        let h = build_table(&ch, &pr, gr, 60, EntryRule::Completion, None).unwrap();
        let (_, ch, pr, gr) = setup(25.0, Striping::Vertical);
        let v = build_table(&ch, &pr, gr, 60, EntryRule::Completion, None).unwrap();
        for x in 1..=4 {
            assert!(v.gamma(x) > h.gamma(x), "x={x}: {} vs {}", v.gamma(x), h.gamma(x));
        }
    }

    #[test]
    fn finer_phase_grid_is_supported() {
        let (mut cfg, chain, profiles, _) = setup(25.0, Striping::Horizontal);
        cfg.analysis.ticks_per_symbol = 10;
        cfg.analysis.phase_rule = PhaseRule::EndOfTick;
        let grid = PhaseGrid::for_config(&cfg).unwrap();
        let table = build_table(&chain, &profiles, grid, 60, EntryRule::Completion, None).unwrap();
        assert_eq!(table.len(), 500);
        assert!(table.beta.iter().all(|r| r[260..].iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn gamma_csv() {
        let (_, chain, profiles, grid) = setup(10.0, Striping::Horizontal);
        let table = build_table(&chain, &profiles, grid, 60, EntryRule::Completion, None).unwrap();
        let mut buf = Vec::new();
        table.write_gamma_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("phase,start_ms,gamma_ms\n1,0.050000,"));
        assert_eq!(text.lines().count(), 51);
    }
}
