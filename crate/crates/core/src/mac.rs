//! Saturated 802.11 DCF contention: attempt and collision probabilities and
//! the slot-type mix a backing-off node observes.
//!
//! Backoff stage `n = 1..=m` uses window `W0 * 2^(n-1)`; a collision at
//! stage `m` stays at stage `m`.

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacSlotModel {
    pub tau_mac: f64,
    pub p_col: f64,
    pub p_idle: f64,
    pub p_coll: f64,
    pub p_succ: f64,
    pub t_idle: f64,
    pub t_coll: f64,
}

/// Attempt probability per slot of a saturated node whose attempts collide
/// independently with probability `p`: attempts per packet over slots per
/// packet, summed over the stages actually visited.
pub fn attempt_probability(p: f64, w0: usize, m_stages: usize) -> f64 {
    let w0 = w0 as f64;
    let last = m_stages - 1;
    // Mean slots per packet, counting the attempt slot of every stage.
    let mut slots = 0.0;
    let mut reach = 1.0;
    for n in 0..last {
        slots += reach * (w0 * 2f64.powi(n as i32) + 1.0) / 2.0;
        reach *= p;
    }
    slots += reach / (1.0 - p) * (w0 * 2f64.powi(last as i32) + 1.0) / 2.0;
    let attempts = 1.0 / (1.0 - p);
    attempts / slots
}

/// Solves `tau = tau(p)` and `p = 1 - (1 - tau)^(n_s - 1)` by bisection.
pub fn solve_contention(w0: usize, m_stages: usize, n_s: usize) -> (f64, f64) {
    if n_s <= 1 {
        return (attempt_probability(0.0, w0, m_stages), 0.0);
    }
    let others = (n_s - 1) as i32;
    let gap = |p: f64| p - (1.0 - (1.0 - attempt_probability(p, w0, m_stages)).powi(others));
    let (mut lo, mut hi) = (0.0_f64, 1.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let p = 0.5 * (lo + hi);
    let tau = attempt_probability(p, w0, m_stages);
    // Report p consistent with the returned tau.
    (tau, 1.0 - (1.0 - tau).powi(others))
}

/// `(p_idle, p_coll, p_succ)` over the other `n_s - 1` nodes.
pub fn slot_probabilities(tau_mac: f64, n_s: usize) -> (f64, f64, f64) {
    if n_s <= 1 {
        return (1.0, 0.0, 0.0);
    }
    let others = (n_s - 1) as i32;
    let p_idle = (1.0 - tau_mac).powi(others);
    let p_succ = others as f64 * tau_mac * (1.0 - tau_mac).powi(others - 1);
    let p_coll = (1.0 - p_idle - p_succ).max(0.0);
    (p_idle, p_coll, p_succ)
}

impl MacSlotModel {
    pub fn new(cfg: &ScenarioConfig) -> MacSlotModel {
        let (tau_mac, p_col) = solve_contention(cfg.w0, cfg.m_stages, cfg.n_s);
        let (p_idle, p_coll, p_succ) = slot_probabilities(tau_mac, cfg.n_s);
        MacSlotModel {
            tau_mac,
            p_col,
            p_idle,
            p_coll,
            p_succ,
            t_idle: cfg.t_idle,
            t_coll: cfg.t_coll,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form with `m_stages - 1` doublings.
    fn closed_form(p: f64, w: f64, m_stages: usize) -> f64 {
        let last = (m_stages - 1) as i32;
        2.0 * (1.0 - 2.0 * p) / ((1.0 - 2.0 * p) * (w + 1.0) + p * w * (1.0 - (2.0 * p).powi(last)))
    }

    #[test]
    fn renewal_form_matches_closed_form() {
        for &p in &[0.0, 0.05, 0.2, 0.37, 0.49, 0.51, 0.7, 0.9] {
            for &(w, m) in &[(4usize, 4usize), (16, 6), (32, 1), (8, 3)] {
                let a = attempt_probability(p, w, m);
                let b = closed_form(p, w as f64, m);
                assert!((a - b).abs() < 1e-12 * b.max(1e-3), "p={p} w={w} m={m}: {a} {b}");
            }
        }
    }

    #[test]
    fn single_node() {
        let (tau, p) = solve_contention(4, 4, 1);
        assert_eq!(p, 0.0);
        assert!((tau - 0.4).abs() < 1e-15);
        assert_eq!(slot_probabilities(tau, 1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn fixed_point_residual() {
        for n in [2, 5, 10, 20, 50] {
            let (tau, p) = solve_contention(4, 4, n);
            assert!((0.0..1.0).contains(&p));
            assert!(tau > 0.0 && tau <= 1.0);
            assert!((p - (1.0 - (1.0 - tau).powi(n as i32 - 1))).abs() < 1e-15);
            assert!((tau - attempt_probability(p, 4, 4)).abs() < 1e-12);
        }
    }

    #[test]
    fn attempt_rate_falls_with_population() {
        let taus: Vec<f64> = [2, 5, 10, 20].iter().map(|&n| solve_contention(4, 4, n).0).collect();
        assert!(taus.windows(2).all(|w| w[1] < w[0]), "{taus:?}");
    }

    #[test]
    fn slot_mix_is_a_distribution() {
        for n in 1..40 {
            for tau in [0.0, 1e-6, 0.1, 0.4, 0.9, 1.0] {
                let (i, c, s) = slot_probabilities(tau, n);
                assert!(i >= 0.0 && c >= 0.0 && s >= 0.0);
                assert!((i + c + s - 1.0).abs() < 1e-12);
            }
        }
        let (i, _, _) = slot_probabilities(1e-12, 10);
        assert!(i > 1.0 - 1e-10);
    }

    /// Slotted contention among `n` saturated nodes: attempt rate per node
    /// per slot and collision rate per attempt.
    fn contend(n: usize, w0: usize, m: usize, slots: usize, seed: u64) -> (f64, f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let window = |stage: usize| w0 << (stage - 1);
        let mut stage = vec![1usize; n];
        let mut counter: Vec<usize> = (0..n).map(|_| rng.random_range(0..w0)).collect();
        let (mut attempts, mut collided) = (0u64, 0u64);
        for _ in 0..slots {
            let tx: Vec<usize> = (0..n).filter(|&k| counter[k] == 0).collect();
            attempts += tx.len() as u64;
            if tx.len() > 1 {
                collided += tx.len() as u64;
            }
            for k in 0..n {
                if counter[k] > 0 {
                    counter[k] -= 1;
                    continue;
                }
                stage[k] = if tx.len() > 1 { (stage[k] + 1).min(m) } else { 1 };
                counter[k] = rng.random_range(0..window(stage[k]));
            }
        }
        (attempts as f64 / (n * slots) as f64, collided as f64 / attempts as f64)
    }

    #[test]
    fn fixed_point_matches_contention_monte_carlo() {
        for (n, w0, m) in [(5, 4, 4), (10, 4, 4), (20, 4, 4), (10, 16, 6)] {
            let (tau, p) = solve_contention(w0, m, n);
            let (tau_mc, p_mc) = contend(n, w0, m, 400_000, n as u64);
            assert!((tau - tau_mc).abs() / tau_mc < 0.02, "n={n} w0={w0}: tau {tau} vs {tau_mc}");
            assert!((p - p_mc).abs() / p_mc < 0.02, "n={n} w0={w0}: p {p} vs {p_mc}");
        }
    }
}
