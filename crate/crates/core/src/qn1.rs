//! Packet-level network of one saturated secondary node and its saturation
//! throughput.
//!
//! A packet moves through backoff nodes `VS_n`, the handshake nodes `RTS_n`
//! and `CTS_n` of stage `n`, the data node `TR` and `ACK`, then leaves; a new
//! packet enters `VS_1` at the exit phase. Every class carries the frame
//! phase `i` at which it arrives. A `VS_n` customer of class `(i, j, k)`
//! spends one virtual slot of type `j` with `k` slots still to count down.
//!
//! Routing and service times do not depend on the packet rate, so the
//! network is solved once at unit departure rate: the occupancy `rho` is then
//! the mean cycle time and the saturation rate is `1 / rho`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::mac::MacSlotModel;
use crate::markov::{limit_distribution, SparseMatrix};
use crate::phase::{compose, PhaseGrid, Shift};
use crate::txtime::TxTimeTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotType {
    Idle,
    Collision,
    Success,
}

impl SlotType {
    pub const ALL: [SlotType; 3] = [SlotType::Idle, SlotType::Collision, SlotType::Success];
}

/// Stages are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Qn1Node {
    Vs(usize),
    Rts(usize),
    Cts(usize),
    Tr,
    Ack,
}

impl fmt::Display for Qn1Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Qn1Node::Vs(n) => write!(f, "VS{n}"),
            Qn1Node::Rts(n) => write!(f, "RTS{n}"),
            Qn1Node::Cts(n) => write!(f, "CTS{n}"),
            Qn1Node::Tr => f.write_str("TR"),
            Qn1Node::Ack => f.write_str("ACK"),
        }
    }
}

/// `j` and `k` are only meaningful at `VS` nodes (`None` / 0 elsewhere).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Qn1Class {
    pub node: Qn1Node,
    pub i: usize,
    pub j: Option<SlotType>,
    pub k: usize,
}

impl Qn1Class {
    pub fn at(node: Qn1Node, i: usize) -> Qn1Class {
        Qn1Class { node, i, j: None, k: 0 }
    }

    pub fn vs(n: usize, i: usize, j: SlotType, k: usize) -> Qn1Class {
        Qn1Class {
            node: Qn1Node::Vs(n),
            i,
            j: Some(j),
            k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Route {
    To(Qn1Class),
    /// Leaves the network at this phase.
    Exit(usize),
}

/// Routing rules and service times of the network for one scenario.
#[derive(Debug, Clone)]
pub struct Qn1Model {
    pub grid: PhaseGrid,
    pub mac: MacSlotModel,
    /// Window of stage `n` at index `n - 1`.
    pub windows: Vec<usize>,
    pub n_s: usize,
    pub t_rts: f64,
    pub t_cts: f64,
    pub t_ack: f64,
    idle: Shift,
    coll: Shift,
    rts: Shift,
    cts: Shift,
    ack: Shift,
    /// Handshake before data: RTS then CTS.
    handshake: Vec<(usize, f64)>,
    gamma: Vec<f64>,
    beta: Vec<Vec<(usize, f64)>>,
}

impl Qn1Model {
    pub fn new(cfg: &ScenarioConfig, mac: MacSlotModel, table: &TxTimeTable) -> Result<Qn1Model> {
        let grid = table.grid;
        if cfg.m_stages == 0 || cfg.w0 < 2 {
            return Err(Error::config("backoff needs w0 >= 2 and m_stages >= 1"));
        }
        let windows = (0..cfg.m_stages).map(|n| cfg.w0 << n).collect();
        let rts = grid.shift(cfg.t_rts);
        let cts = grid.shift(cfg.t_cts);
        let beta = table
            .beta
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(e, &p)| (e + 1, p))
                    .collect()
            })
            .collect();
        Ok(Qn1Model {
            grid,
            mac,
            windows,
            n_s: cfg.n_s,
            t_rts: cfg.t_rts,
            t_cts: cfg.t_cts,
            t_ack: cfg.t_ack,
            idle: grid.shift(mac.t_idle),
            coll: grid.shift(mac.t_coll),
            rts,
            cts,
            ack: grid.shift(cfg.t_ack),
            handshake: compose(rts, cts),
            gamma: table.gamma.clone(),
            beta,
        })
    }

    pub fn stages(&self) -> usize {
        self.windows.len()
    }

    fn slot_prob(&self, j: SlotType) -> f64 {
        match j {
            SlotType::Idle => self.mac.p_idle,
            SlotType::Collision => self.mac.p_coll,
            SlotType::Success => self.mac.p_succ,
        }
    }

    fn shifted(&self, i: usize, s: Shift) -> impl Iterator<Item = (usize, f64)> + '_ {
        s.outcomes().map(move |(d, p)| (self.grid.advance(i, d), p))
    }

    /// Phase after someone else's successful exchange that starts at `i`.
    fn success_end(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        for &(d, ph) in &self.handshake {
            let start = self.grid.advance(i, d);
            for &(e, pb) in &self.beta[start - 1] {
                for (end, pa) in self.shifted(e, self.ack) {
                    *out.entry(end).or_default() += ph * pb * pa;
                }
            }
        }
        out.into_iter().collect()
    }

    /// Mean duration of a successful exchange starting at `i`.
    fn success_time(&self, i: usize) -> f64 {
        let data: f64 = self
            .handshake
            .iter()
            .map(|&(d, p)| p * self.gamma[self.grid.advance(i, d) - 1])
            .sum();
        self.t_rts + self.t_cts + data + self.t_ack
    }

    /// Classes entering `VS_n` at phase `i`, with their probabilities.
    fn enter_stage(&self, n: usize, i: usize) -> Vec<(Qn1Class, f64)> {
        let w = self.windows[n - 1];
        let mut out = Vec::new();
        for j in SlotType::ALL {
            let pj = self.slot_prob(j);
            if pj == 0.0 {
                continue;
            }
            for k in 0..w {
                out.push((Qn1Class::vs(n, i, j, k), pj / w as f64));
            }
        }
        out
    }

    /// Arrivals caused by a packet leaving at phase `i`: the next packet
    /// starts backoff immediately.
    pub fn entry(&self, i: usize) -> Vec<(Qn1Class, f64)> {
        self.enter_stage(1, i)
    }

    /// Every destination with non-zero probability.
    pub fn routes(&self, c: Qn1Class) -> Vec<(Route, f64)> {
        let mut out = Vec::new();
        match c.node {
            Qn1Node::Vs(n) => {
                if c.k == 0 {
                    out.push((Route::To(Qn1Class::at(Qn1Node::Rts(n), c.i)), 1.0));
                    return out;
                }
                let next: Vec<(usize, f64)> = match c.j.expect("VS class without slot type") {
                    SlotType::Idle => self.shifted(c.i, self.idle).collect(),
                    SlotType::Collision => self.shifted(c.i, self.coll).collect(),
                    SlotType::Success => self.success_end(c.i),
                };
                for (i2, p) in next {
                    for j in SlotType::ALL {
                        let pj = self.slot_prob(j);
                        if pj > 0.0 {
                            out.push((Route::To(Qn1Class::vs(n, i2, j, c.k - 1)), p * pj));
                        }
                    }
                }
            }
            Qn1Node::Rts(n) => {
                let p = self.mac.p_col;
                if p > 0.0 {
                    let n2 = (n + 1).min(self.stages());
                    for (i2, ps) in self.shifted(c.i, self.coll) {
                        for (cls, pe) in self.enter_stage(n2, i2) {
                            out.push((Route::To(cls), p * ps * pe));
                        }
                    }
                }
                if p < 1.0 {
                    for (i2, ps) in self.shifted(c.i, self.rts) {
                        out.push((Route::To(Qn1Class::at(Qn1Node::Cts(n), i2)), (1.0 - p) * ps));
                    }
                }
            }
            Qn1Node::Cts(_) => {
                for (i2, p) in self.shifted(c.i, self.cts) {
                    out.push((Route::To(Qn1Class::at(Qn1Node::Tr, i2)), p));
                }
            }
            Qn1Node::Tr => {
                for &(e, p) in &self.beta[c.i - 1] {
                    out.push((Route::To(Qn1Class::at(Qn1Node::Ack, e)), p));
                }
            }
            Qn1Node::Ack => {
                for (i2, p) in self.shifted(c.i, self.ack) {
                    out.push((Route::Exit(i2), p));
                }
            }
        }
        out
    }

    /// Mean service time of a class.
    pub fn service_time(&self, c: Qn1Class) -> f64 {
        match c.node {
            Qn1Node::Vs(_) if c.k == 0 => 0.0,
            Qn1Node::Vs(_) => match c.j.expect("VS class without slot type") {
                SlotType::Idle => self.mac.t_idle,
                SlotType::Collision => self.mac.t_coll,
                SlotType::Success => self.success_time(c.i),
            },
            // A collided RTS holds the channel for the whole collision.
            Qn1Node::Rts(_) => self.mac.p_col * self.mac.t_coll + (1.0 - self.mac.p_col) * self.t_rts,
            Qn1Node::Cts(_) => self.t_cts,
            Qn1Node::Tr => self.gamma[c.i - 1],
            Qn1Node::Ack => self.t_ack,
        }
    }

    /// Every class of the network.
    pub fn classes(&self) -> Vec<Qn1Class> {
        let len = self.grid.len;
        let mut out = Vec::new();
        for (n0, &w) in self.windows.iter().enumerate() {
            let n = n0 + 1;
            for i in 1..=len {
                for j in SlotType::ALL {
                    for k in 0..w {
                        out.push(Qn1Class::vs(n, i, j, k));
                    }
                }
            }
            for i in 1..=len {
                out.push(Qn1Class::at(Qn1Node::Rts(n), i));
                out.push(Qn1Class::at(Qn1Node::Cts(n), i));
            }
        }
        for i in 1..=len {
            out.push(Qn1Class::at(Qn1Node::Tr, i));
            out.push(Qn1Class::at(Qn1Node::Ack, i));
        }
        out
    }

    fn shift_matrix(&self, s: Shift) -> DMatrix<f64> {
        let len = self.grid.len;
        let mut m = DMatrix::zeros(len, len);
        for i in 1..=len {
            for (i2, p) in self.shifted(i, s) {
                m[(i - 1, i2 - 1)] += p;
            }
        }
        m
    }

    /// Solves the network at unit packet departure rate.
    pub fn solve(&self) -> Result<Qn1Solution> {
        let len = self.grid.len;
        let mac = &self.mac;
        let p = mac.p_col;
        let m = self.stages();

        let sh_idle = self.shift_matrix(self.idle);
        let sh_coll = self.shift_matrix(self.coll);
        let sh_rts = self.shift_matrix(self.rts);
        let sh_cts = self.shift_matrix(self.cts);
        let sh_ack = self.shift_matrix(self.ack);
        let mut beta = DMatrix::zeros(len, len);
        for (i, row) in self.beta.iter().enumerate() {
            for &(e, pb) in row {
                beta[(i, e - 1)] = pb;
            }
        }
        let gamma = DVector::from_column_slice(&self.gamma);

        // Successful exchange kernel and its mean duration.
        let handshake = &sh_rts * &sh_cts;
        let exchange = &handshake * &beta * &sh_ack;
        let exchange_time = (&handshake * &gamma).add_scalar(self.t_rts + self.t_cts + self.t_ack);
        // One observed virtual slot.
        let slot = &sh_idle * mac.p_idle + &sh_coll * mac.p_coll + &exchange * mac.p_succ;
        let slot_time =
            (&exchange_time * mac.p_succ).add_scalar(mac.p_idle * mac.t_idle + mac.p_coll * mac.t_coll);
        let attempt_time = &exchange_time * (1.0 - p) + DVector::from_element(len, p * mac.t_coll);
        let collide = &sh_coll * p;
        let succeed = &exchange * (1.0 - p);

        let eye = DMatrix::<f64>::identity(len, len);
        // Per stage: phase at the attempt and mean countdown time.
        let mut to_attempt = Vec::with_capacity(m);
        let mut countdown = Vec::with_capacity(m);
        for &w in &self.windows {
            let mut acc = eye.clone();
            let mut z = DVector::zeros(len);
            let mut zsum = DVector::zeros(len);
            for _ in 1..w {
                acc = &eye + &slot * &acc;
                z = &slot_time + &slot * &z;
                zsum += &z;
            }
            to_attempt.push(acc / w as f64);
            countdown.push(zsum / w as f64);
        }

        // Cycle kernel from exit phase to next exit phase, and cycle time.
        let mut reach = eye.clone();
        let mut kernel = DMatrix::zeros(len, len);
        let mut cycle = DVector::zeros(len);
        for n in 0..m {
            let b = &to_attempt[n];
            let stage_time = &countdown[n] + b * &attempt_time;
            if n + 1 < m {
                kernel += &reach * b * &succeed;
                cycle += &reach * stage_time;
                reach = &reach * b * &collide;
            } else {
                let stay = &eye - b * &collide;
                let lu = stay.lu();
                let out = lu
                    .solve(&(b * &succeed))
                    .ok_or_else(|| Error::Degenerate("last backoff stage never succeeds".into()))?;
                let time = lu.solve(&stage_time).expect("same factorisation");
                kernel += &reach * out;
                cycle += &reach * time;
            }
        }

        // Stochastic up to the roundoff of the last-stage solve.
        let mut rows = Vec::with_capacity(len);
        for i in 0..len {
            let row: Vec<f64> = kernel.row(i).iter().copied().collect();
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::NotStochastic { row: i, sum });
            }
            rows.push(row.into_iter().map(|p| p / sum).collect::<Vec<f64>>());
        }
        let k_sparse = SparseMatrix::from_dense(&rows);
        let uniform = vec![1.0 / len as f64; len];
        let exit_pmf = limit_distribution(&k_sparse, &uniform)?;

        // Class arrival rates from the exit distribution.
        let q = DVector::from_column_slice(&exit_pmf);
        let mut vs = Vec::with_capacity(m);
        let mut rts_in = Vec::with_capacity(m);
        let mut cts_in = Vec::with_capacity(m);
        let mut tr_in = DVector::zeros(len);
        let mut stage_in = q.clone();
        for n in 0..m {
            let w = self.windows[n];
            if n + 1 == m {
                // Last stage feeds itself: e = x + e B C.
                let b = &to_attempt[n];
                let stay = &eye - b * &collide;
                stage_in = stay
                    .transpose()
                    .lu()
                    .solve(&stage_in)
                    .ok_or_else(|| Error::Degenerate("last backoff stage never succeeds".into()))?;
            }
            let mut counters: Vec<DVector<f64>> = vec![DVector::zeros(len); w];
            let mut v = DVector::zeros(len);
            for k in (0..w).rev() {
                v = &stage_in / w as f64 + slot.tr_mul(&v);
                counters[k] = v.clone();
            }
            let r = counters[0].clone();
            let c = sh_rts.tr_mul(&r) * (1.0 - p);
            tr_in += sh_cts.tr_mul(&c);
            stage_in = collide.tr_mul(&r);
            vs.push(counters);
            rts_in.push(r);
            cts_in.push(c);
        }
        let ack_in = beta.tr_mul(&tr_in);

        let mut rho_per_node = BTreeMap::new();
        let rts_time = p * mac.t_coll + (1.0 - p) * self.t_rts;
        for n in 0..m {
            let busy: f64 = vs[n].iter().skip(1).map(|v| v.dot(&slot_time)).sum();
            rho_per_node.insert(Qn1Node::Vs(n + 1), busy);
            rho_per_node.insert(Qn1Node::Rts(n + 1), rts_in[n].sum() * rts_time);
            rho_per_node.insert(Qn1Node::Cts(n + 1), cts_in[n].sum() * self.t_cts);
        }
        rho_per_node.insert(Qn1Node::Tr, tr_in.dot(&gamma));
        rho_per_node.insert(Qn1Node::Ack, ack_in.sum() * self.t_ack);
        let rho_total: f64 = rho_per_node.values().sum();
        if !(rho_total > 0.0) || !rho_total.is_finite() {
            return Err(Error::Degenerate(format!("network occupancy {rho_total}")));
        }
        let cycle_time = q.dot(&cycle);
        let tr_total = tr_in.sum();
        let start_pmf = tr_in.iter().map(|a| a / tr_total).collect();
        let lambda_sat = 1.0 / rho_total;

        Ok(Qn1Solution {
            alpha: Alpha {
                p_idle: mac.p_idle,
                p_coll: mac.p_coll,
                p_succ: mac.p_succ,
                vs: vs
                    .into_iter()
                    .map(|c| c.into_iter().map(|v| v.iter().copied().collect()).collect())
                    .collect(),
                rts: rts_in.iter().map(|v| v.iter().copied().collect()).collect(),
                cts: cts_in.iter().map(|v| v.iter().copied().collect()).collect(),
                tr: tr_in.iter().copied().collect(),
                ack: ack_in.iter().copied().collect(),
            },
            rho_per_node,
            rho_total,
            cycle_time,
            lambda_sat,
            big_lambda_sat: self.n_s as f64 * lambda_sat,
            start_pmf,
            exit_pmf,
        })
    }
}

/// Class arrival rates at unit departure rate.
#[derive(Debug, Clone)]
pub struct Alpha {
    p_idle: f64,
    p_coll: f64,
    p_succ: f64,
    /// `vs[n - 1][k][i - 1]`: rate into `VS_n` with counter `k` at phase
    /// `i`, summed over slot types.
    pub vs: Vec<Vec<Vec<f64>>>,
    pub rts: Vec<Vec<f64>>,
    pub cts: Vec<Vec<f64>>,
    pub tr: Vec<f64>,
    pub ack: Vec<f64>,
}

impl Alpha {
    pub fn get(&self, c: Qn1Class) -> f64 {
        let i = c.i - 1;
        match c.node {
            Qn1Node::Vs(n) => {
                let pj = match c.j {
                    Some(SlotType::Idle) => self.p_idle,
                    Some(SlotType::Collision) => self.p_coll,
                    Some(SlotType::Success) => self.p_succ,
                    None => return 0.0,
                };
                self.vs
                    .get(n - 1)
                    .and_then(|stage| stage.get(c.k))
                    .map_or(0.0, |v| pj * v[i])
            }
            Qn1Node::Rts(n) => self.rts[n - 1][i],
            Qn1Node::Cts(n) => self.cts[n - 1][i],
            Qn1Node::Tr => self.tr[i],
            Qn1Node::Ack => self.ack[i],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Qn1Solution {
    pub alpha: Alpha,
    pub rho_per_node: BTreeMap<Qn1Node, f64>,
    /// Sum of node occupancies at unit departure rate.
    pub rho_total: f64,
    /// Mean cycle time from the cycle kernel; equals `rho_total`.
    pub cycle_time: f64,
    /// Packets per second per node.
    pub lambda_sat: f64,
    /// Packets per second over all nodes.
    pub big_lambda_sat: f64,
    /// Distribution of the phase at which data transmission starts.
    pub start_pmf: Vec<f64>,
    /// Distribution of the phase at which a packet leaves.
    pub exit_pmf: Vec<f64>,
}

impl Qn1Solution {
    /// Occupancy when each node offers `rate` packets per second.
    pub fn rho_at(&self, rate: f64) -> f64 {
        self.rho_total * rate
    }

    /// `phase,probability` rows of the transmission start distribution.
    pub fn write_start_pmf_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "probability"])?;
        for (k, p) in self.start_pmf.iter().enumerate() {
            w.write_record([(k + 1).to_string(), format!("{p:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Class rates from iterating the traffic equations over every class, with
/// departures fed back as new packets and the departure rate held at 1.
#[derive(Debug, Clone)]
pub struct TrafficSolution {
    pub rates: HashMap<Qn1Class, f64>,
    pub exits: Vec<f64>,
    pub iterations: usize,
}

pub fn solve_traffic(model: &Qn1Model, tol: f64, max_iter: usize) -> Result<TrafficSolution> {
    let classes = model.classes();
    let index: HashMap<Qn1Class, usize> = classes.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let len = model.grid.len;
    let routes: Vec<Vec<(Route, f64)>> = classes.iter().map(|&c| model.routes(c)).collect();
    let entries: Vec<Vec<(usize, f64)>> = (1..=len)
        .map(|i| model.entry(i).into_iter().map(|(c, p)| (index[&c], p)).collect())
        .collect();

    let mut rate = vec![0.0; classes.len()];
    for &(k, p) in &entries[0] {
        rate[k] = p;
    }
    let mut exits = vec![0.0; len];
    for it in 1..=max_iter {
        let mut next = vec![0.0; classes.len()];
        exits.iter_mut().for_each(|e| *e = 0.0);
        for (k, r) in rate.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for &(route, p) in &routes[k] {
                match route {
                    Route::To(c) => next[index[&c]] += r * p,
                    Route::Exit(i) => exits[i - 1] += r * p,
                }
            }
        }
        let total_exit: f64 = exits.iter().sum();
        for (i, &e) in exits.iter().enumerate() {
            for &(k, p) in &entries[i] {
                next[k] += e * p;
            }
        }
        // Lazy step so periodic routing still settles.
        let mut delta = 0.0f64;
        for (a, b) in rate.iter_mut().zip(&next) {
            let v = 0.5 * (*a + b);
            delta = delta.max((v - *a).abs());
            *a = v;
        }
        if total_exit > 0.0 && delta < tol * total_exit {
            let scale = 1.0 / total_exit;
            exits.iter_mut().for_each(|e| *e *= scale);
            let rates = classes
                .iter()
                .zip(&rate)
                .filter(|(_, &r)| r > 0.0)
                .map(|(&c, &r)| (c, r * scale))
                .collect();
            return Ok(TrafficSolution {
                rates,
                exits,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence("packet network traffic equations", max_iter))
}

/// Full analytic pipeline for one scenario.
pub fn analyze(cfg: &ScenarioConfig) -> Result<(TxTimeTable, Qn1Solution)> {
    let (_, table) = crate::txtime::table_for(cfg)?;
    let mac = MacSlotModel::new(cfg);
    let sol = Qn1Model::new(cfg, mac, &table)?.solve()?;
    Ok((table, sol))
}
