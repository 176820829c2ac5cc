//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use cogwlan::phase::PhaseRule;
use cogwlan::primary_chain::PrimaryChain;
use cogwlan::qn1::analyze;
use cogwlan::simulator::simulate;
use cogwlan::txtime::table_for;
use cogwlan::{Ratio, ScenarioConfig, Striping};

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario(lambda_p: f64, n_s: usize) -> ScenarioConfig {
    ScenarioConfig {
        lambda_p,
        n_s,
        ..ScenarioConfig::default()
    }
}

fn lambda_sat(cfg: &ScenarioConfig) -> f64 {
    analyze(cfg).expect("analysis runs").1.lambda_sat
}

/// Buffer state after one frame: serve up to `m` slots, then add arrivals.
fn next_state(u: usize, m: usize, n: usize, s_p: usize, arrivals: u64) -> usize {
    (u.saturating_sub(m) + arrivals as usize * s_p).min(n)
}

fn arrivals(rng: &mut ChaCha8Rng, d: &Option<Poisson<f64>>) -> u64 {
    d.as_ref().map_or(0, |d| d.sample(rng) as u64)
}

fn poisson(lambda_p: f64) -> Option<Poisson<f64>> {
    (lambda_p > 0.0).then(|| Poisson::new(lambda_p).unwrap())
}

fn stationary_vs_monte_carlo() -> Outcome {
    let frames = 1_000_000u64;
    let mut worst = 0.0f64;
    for (i, lp) in [10.0, 25.0, 35.0].into_iter().enumerate() {
        let cfg = scenario(lp, 10);
        let g = cfg.geometry().unwrap();
        let pi = PrimaryChain::new(&cfg).unwrap().steady_state;
        let d = poisson(lp);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut hist = vec![0u64; g.n_states + 1];
        let mut u = 0;
        for _ in 0..10_000 {
            u = next_state(u, g.m_slots, g.n_states, cfg.s_p, arrivals(&mut rng, &d));
        }
        for _ in 0..frames {
            hist[u] += 1;
            u = next_state(u, g.m_slots, g.n_states, cfg.s_p, arrivals(&mut rng, &d));
        }
        let tv: f64 = 0.5
            * pi.iter()
                .zip(&hist)
                .map(|(p, &h)| (p - h as f64 / frames as f64).abs())
                .sum::<f64>();
        worst = worst.max(tv);
    }
    Outcome {
        pass: worst < 0.01,
        detail: format!("max TV over lambda_p in {{10,25,35}} = {worst:.5} (< 0.01)"),
    }
}

/// Empty cells of downlink column `c` for horizontal striping.
fn empty_in_column(u: usize, c: usize, rows: usize, cols: usize, m: usize) -> usize {
    let used = u.min(m);
    let occupied = used / cols + usize::from(c < used % cols);
    rows - occupied
}

fn mean_tx_time_by_walk() -> Outcome {
    let paths = 1_000_000usize;
    let mut worst = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut beta_ok = true;
    for lp in [0.0, 25.0] {
        let cfg = scenario(lp, 10);
        let g = cfg.geometry().unwrap();
        let (_, table) = table_for(&cfg).unwrap();
        for x in 1..=table.len() {
            let row = table.beta_row(x);
            let sum: f64 = row.iter().sum();
            let ul: f64 = row
                .iter()
                .enumerate()
                .filter(|(e, _)| table.grid.is_uplink(e + 1))
                .map(|(_, p)| p)
                .sum();
            beta_ok &= (sum - 1.0).abs() < 1e-9 && ul == 0.0;
        }
        let mut pick = ChaCha8Rng::seed_from_u64(7 + lp as u64);
        let starts: Vec<usize> = sample(&mut pick, table.len(), 10).into_iter().map(|i| i + 1).collect();
        let errs: Vec<(f64, f64)> = starts
            .par_iter()
            .map(|&x| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + x as u64);
                let entry = WeightedIndex::new(&table.entry_dist[x - 1]).unwrap();
                let d = poisson(lp);
                let o0 = table.grid.offset_symbols(x);
                let (mut total, mut total_sq) = (0.0, 0.0);
                for _ in 0..paths {
                    let mut u = entry.sample(&mut rng);
                    let mut o = o0;
                    let mut left = cfg.s_s;
                    let mut frames = 0usize;
                    let end = 'walk: loop {
                        if o < g.k_sym_dl as f64 {
                            let first = (o / g.nu as f64 - 1e-9).ceil().max(0.0) as usize;
                            for c in first..g.cols_dl {
                                let e = empty_in_column(u, c, g.rows, g.cols_dl, g.m_slots);
                                if e > 0 && e >= left {
                                    break 'walk frames as f64 * g.k_sym as f64
                                        + g.nu as f64 * (c as f64 + left as f64 / e as f64);
                                }
                                left -= e;
                            }
                        }
                        u = next_state(u, g.m_slots, g.n_states, cfg.s_p, arrivals(&mut rng, &d));
                        frames += 1;
                        o = 0.0;
                    };
                    let t = (end - o0) * g.t_sym;
                    total += t;
                    total_sq += t * t;
                }
                let n = paths as f64;
                let walk = total / n;
                let se = ((total_sq / n - walk * walk) / n).sqrt();
                let err = (table.gamma(x) - walk).abs();
                (err / walk, if se > 0.0 { err / se } else { 0.0 })
            })
            .collect();
        for (e, z) in errs {
            worst = worst.max(e);
            worst_z = worst_z.max(z);
        }
    }
    Outcome {
        pass: worst < 0.005 && beta_ok,
        detail: format!(
            "max relative gamma error {:.4}% (< 0.5%, largest {worst_z:.1} standard errors), beta rows stochastic with no uplink mass: {beta_ok}",
            worst * 100.0
        ),
    }
}

/// Cycle rate of a lone node with an idle primary, from the phase chain of
/// the frame on a 10 us grid.
fn lone_node_rate(cfg: &ScenarioConfig) -> f64 {
    let g = cfg.geometry().unwrap();
    let tick = 10e-6;
    let ticks = |t: f64| {
        let n = (t / tick).round();
        assert!((n * tick - t).abs() < 1e-12, "{t} is not on the grid");
        n as usize
    };
    let frame = ticks(g.t_frame);
    let sym = ticks(g.t_sym);
    let col = sym * g.nu;
    let dl = sym * g.k_sym_dl;
    let handshake = ticks(cfg.t_rts) + ticks(cfg.t_cts);
    let ack = ticks(cfg.t_ack);
    let slot = ticks(cfg.t_idle);
    // End of data started at absolute tick `s`.
    let data_end = |s: usize| -> usize {
        let (mut f, mut o) = (s / frame, s % frame);
        let mut left = cfg.s_s;
        loop {
            if o < dl {
                for c in o.div_ceil(col)..g.cols_dl {
                    if g.rows >= left {
                        let end = f * frame + c * col + col * left / g.rows;
                        assert_eq!(col * left % g.rows, 0);
                        return end;
                    }
                    left -= g.rows;
                }
            }
            f += 1;
            o = 0;
        }
    };
    let w0 = cfg.w0;
    let mut trans = vec![Vec::new(); frame];
    let mut cycle = vec![0.0; frame];
    for p in 0..frame {
        for k in 0..w0 {
            let next = data_end(p + k * slot + handshake) + ack;
            trans[p].push(next % frame);
            cycle[p] += (next - p) as f64 * tick / w0 as f64;
        }
    }
    let mut pi = vec![0.0; frame];
    pi[0] = 1.0;
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; frame];
        for p in 0..frame {
            next[p] += 0.5 * pi[p];
            for &q in &trans[p] {
                next[q] += 0.5 * pi[p] / w0 as f64;
            }
        }
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    1.0 / pi.iter().zip(&cycle).map(|(p, c)| p * c).sum::<f64>()
}

fn lone_node_closed_form() -> Outcome {
    let mut cfg = scenario(0.0, 1);
    cfg.analysis.ticks_per_symbol = 10;
    cfg.analysis.phase_rule = PhaseRule::EndOfTick;
    let exact = lone_node_rate(&cfg);
    let analytic = lambda_sat(&cfg);
    let rel_a = (analytic - exact).abs() / exact;
    let frames = (1.2e5 / exact / cfg.t_frame).ceil() as u64;
    let sim = simulate(&cfg, 31, frames + frames / 10, frames / 10).unwrap();
    let rel_s = (sim.per_su_throughput - exact).abs() / exact;
    Outcome {
        pass: rel_a < 1e-6 && rel_s < 0.01 && sim.packets >= 100_000,
        detail: format!(
            "cycle rate {exact:.6}/s, analytic rel err {rel_a:.2e} (< 1e-6), DES rel err {:.3}% over {} packets (< 1%)",
            rel_s * 100.0,
            sim.packets
        ),
    }
}

fn analytic_vs_simulation() -> Outcome {
    let grid: Vec<(f64, usize)> = [15.0, 25.0, 35.0]
        .into_iter()
        .flat_map(|lp| [5, 10, 20].map(|n| (lp, n)))
        .collect();
    let rows: Vec<(f64, usize, f64)> = grid
        .par_iter()
        .map(|&(lp, n)| {
            let cfg = scenario(lp, n);
            let a = lambda_sat(&cfg);
            let s = simulate(&cfg, 2024, 200_000, 20_000).unwrap().per_su_throughput;
            (lp, n, (a - s).abs() / s)
        })
        .collect();
    let (lp, n, worst) = rows.iter().copied().fold((0.0, 0, 0.0), |a, b| if b.2 > a.2 { b } else { a });
    Outcome {
        pass: rows.iter().all(|r| r.2 <= 0.03),
        detail: format!(
            "worst mismatch {:.3}% at lambda_p={lp} N_s={n} over 9 points (<= 3%)",
            worst * 100.0
        ),
    }
}

fn monotonicity() -> Outcome {
    let loads: Vec<f64> = (1..=8).map(|i| 5.0 * i as f64).collect();
    let sizes = [5, 10, 15, 20];
    let ratios: Vec<Ratio> = ["11/14", "12/13", "13/12", "14/11", "3/2"]
        .iter()
        .map(|r| r.parse().unwrap())
        .collect();
    let points: Vec<(usize, usize, usize)> = (0..ratios.len())
        .flat_map(|r| (0..loads.len()).flat_map(move |l| (0..sizes.len()).map(move |s| (r, l, s))))
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(r, l, s)| {
            let cfg = scenario(loads[l], sizes[s]).with_ratio(ratios[r]).unwrap();
            lambda_sat(&cfg)
        })
        .collect();
    let at = |r: usize, l: usize, s: usize| values[(r * loads.len() + l) * sizes.len() + s];
    let mut bad = Vec::new();
    for r in 0..ratios.len() {
        for l in 0..loads.len() {
            for s in 0..sizes.len() {
                if l + 1 < loads.len() && at(r, l + 1, s) > at(r, l, s) {
                    bad.push(format!("load R={} lp={} N={}", ratios[r], loads[l], sizes[s]));
                }
                if s + 1 < sizes.len() && at(r, l, s + 1) > at(r, l, s) {
                    bad.push(format!("size R={} lp={} N={}", ratios[r], loads[l], sizes[s]));
                }
                if r + 1 < ratios.len() && at(r + 1, l, s) < at(r, l, s) {
                    bad.push(format!("ratio R={} lp={} N={}", ratios[r], loads[l], sizes[s]));
                }
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} points ordered in lambda_p, N_s and R", values.len())
        } else {
            format!("{} violations, first: {}", bad.len(), bad[0])
        },
    }
}

fn striping_order() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for n in [5, 10, 15, 20] {
        let h = lambda_sat(&scenario(25.0, n));
        let v = lambda_sat(&ScenarioConfig {
            striping: Striping::Vertical,
            ..scenario(25.0, n)
        });
        pass &= h >= v;
        detail.push(format!("N_s={n}: {h:.3} vs {v:.3}"));
    }
    Outcome {
        pass,
        detail: format!("horizontal >= vertical ({})", detail.join(", ")),
    }
}

fn heavy_load_flattening() -> Outcome {
    let spread = |lp: f64| {
        let v: Vec<f64> = [10, 15, 20, 25, 30]
            .par_iter()
            .map(|&n| analyze(&scenario(lp, n)).unwrap().1.big_lambda_sat)
            .collect();
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / (v.iter().sum::<f64>() / v.len() as f64)
    };
    let (heavy, light) = (spread(35.0), spread(10.0));
    Outcome {
        pass: heavy < light,
        detail: format!("relative spread of network throughput {heavy:.4} at lambda_p=35 vs {light:.4} at lambda_p=10"),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 primary stationary law vs Monte Carlo", stationary_vs_monte_carlo),
        ("2 transmission time vs path walk", mean_tx_time_by_walk),
        ("3 lone node closed form", lone_node_closed_form),
        ("4 analytic vs simulation gate", analytic_vs_simulation),
        ("5 monotonicity", monotonicity),
        ("6 horizontal vs vertical striping", striping_order),
        ("7 heavy-load flattening", heavy_load_flattening),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
