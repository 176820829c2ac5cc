use approx::assert_relative_eq;
use proptest::prelude::*;

use cogwlan::config::ConfigFile;
use cogwlan::experiment::{run, ExperimentPlan, Mode, Sweep};
use cogwlan::phase::{PhaseGrid, PhaseRule};
use cogwlan::qn1::analyze;
use cogwlan::txtime::{table_for, EntryRule};
use cogwlan::{Ratio, ScenarioConfig, Striping};

#[test]
fn config_file_drives_a_plan() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig6.toml");
    std::fs::write(
        &path,
        r#"
[primary]
lambda_p = 20.0
striping = "vertical"

[secondary]
n_s = 7

[analysis]
entry_rule = "stationary"

[experiment]
lambda_p = [10.0, 20.0]
n_s = [5, 10]
seed = 9
"#,
    )
    .unwrap();
    let file = ConfigFile::from_path(&path).unwrap();
    let cfg = file.scenario().unwrap();
    assert_eq!(cfg.n_s, 7);
    assert_eq!(cfg.striping, Striping::Vertical);
    assert_eq!(cfg.analysis.entry_rule, EntryRule::Stationary);
    let plan = ExperimentPlan::from_file(&file, Mode::Analytic).unwrap();
    assert_eq!(plan.seed, 9);
    assert_eq!(plan.grid_size(), 4);
    let report = run(&plan).unwrap();
    assert!(report.passed());
    assert!(report.rows.iter().all(|r| r.cfg.striping == Striping::Vertical));

    std::fs::write(&path, "[primary]\nlambda = 3.0\n").unwrap();
    assert!(ConfigFile::from_path(&path).is_err());
}

#[test]
fn occupancy_is_linear_in_the_offered_rate() {
    let (_, sol) = analyze(&ScenarioConfig::default()).unwrap();
    for rate in [1.0, 10.0, sol.lambda_sat] {
        assert_relative_eq!(sol.rho_at(2.0 * rate), 2.0 * sol.rho_at(rate), max_relative = 1e-12);
    }
    assert_relative_eq!(sol.rho_at(sol.lambda_sat), 1.0, max_relative = 1e-9);
}

#[test]
fn every_entry_rule_gives_a_valid_table() {
    let mut sats = Vec::new();
    for rule in [EntryRule::Completion, EntryRule::Stationary, EntryRule::Channel] {
        let mut cfg = ScenarioConfig::default();
        cfg.analysis.entry_rule = rule;
        let (_, table) = table_for(&cfg).unwrap();
        for x in 1..=table.len() {
            assert!(table.gamma(x) > 0.0);
            assert_relative_eq!(table.beta_row(x).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert_relative_eq!(table.entry_dist[x - 1].iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        sats.push(analyze(&cfg).unwrap().1.lambda_sat);
    }
    // The channel law sits between the two one-sided closures.
    let (completion, stationary, channel) = (sats[0], sats[1], sats[2]);
    assert!(stationary < channel && channel < completion, "{sats:?}");
}

#[test]
fn rectangular_striping_is_supported() {
    let cfg = ScenarioConfig {
        striping: Striping::Rectangular,
        ..ScenarioConfig::default()
    };
    let (_, sol) = analyze(&cfg).unwrap();
    assert!(sol.lambda_sat > 0.0);
}

#[test]
fn finer_phases_agree_with_symbol_phases() {
    let coarse = analyze(&ScenarioConfig::default()).unwrap().1.lambda_sat;
    let mut cfg = ScenarioConfig::default();
    cfg.analysis.ticks_per_symbol = 5;
    let fine = analyze(&cfg).unwrap().1.lambda_sat;
    assert_relative_eq!(coarse, fine, max_relative = 0.01);
}

proptest! {
    #[test]
    fn ratio_round_trips(num in 1u64..500, den in 1u64..500) {
        let r = Ratio::new(num, den).unwrap();
        let back: Ratio = r.to_string().parse().unwrap();
        prop_assert_eq!(r, back);
        prop_assert!((r.as_f64() - num as f64 / den as f64).abs() < 1e-12);
    }

    #[test]
    fn dithered_shift_keeps_the_mean(t in 0.0f64..0.02, r in 1usize..20) {
        let g = ScenarioConfig::default().geometry().unwrap();
        let grid = PhaseGrid::new(&g, r, PhaseRule::Uniform);
        let s = grid.shift(t);
        prop_assert!((0.0..1.0).contains(&s.p_up));
        prop_assert!((s.mean() * grid.t_tick - t).abs() < 1e-12);
    }

    #[test]
    fn range_sweeps_hit_both_ends(start in 0u32..20, steps in 0u32..10, step in 1u32..5) {
        let stop = start + steps * step;
        let s: Sweep = format!("lambda_p={start}:{stop}:{step}").parse().unwrap();
        match s {
            Sweep::LambdaP(v) => {
                prop_assert_eq!(v.len(), steps as usize + 1);
                prop_assert_eq!(v[0], start as f64);
                prop_assert_eq!(*v.last().unwrap(), stop as f64);
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
