use std::collections::HashMap;

use super::*;
use crate::panel::PanelDataset;

fn small(seed: u64) -> SimConfig {
    SimConfig { n_individuals: 1500, seed, ..SimConfig::default() }
}

fn csv_bytes(out: &SimOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    crate::panel::write_persons(&mut buf, &out.persons).unwrap();
    crate::panel::write_observations(&mut buf, &out.observations).unwrap();
    write_truth(&mut buf, &out.truth).unwrap();
    buf
}

#[test]
fn same_seed_same_output_under_any_execution() {
    let cfg = small(11);
    let a = generate_panel(&cfg, Execution::Parallel).unwrap();
    let b = generate_panel(&cfg, Execution::Parallel).unwrap();
    let c = generate_panel(&cfg, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(csv_bytes(&a), csv_bytes(&c));
    let other = generate_panel(&small(12), Execution::Parallel).unwrap();
    assert_ne!(a.observations, other.observations);
}

#[test]
fn persons_are_independent_of_cohort_size() {
    let big = generate_panel(&small(3), Execution::Parallel).unwrap();
    let few = generate_panel(&SimConfig { n_individuals: 20, ..small(3) }, Execution::Sequential).unwrap();
    assert_eq!(few.persons[..], big.persons[..20]);
}

#[test]
fn histories_respect_visit_and_date_rules() {
    let cfg = small(5);
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    let mut by_person: HashMap<&str, Vec<&ObservationRecord>> = HashMap::new();
    for o in &out.observations {
        by_person.entry(&o.person_id).or_default().push(o);
    }
    assert_eq!(by_person.len(), cfg.n_individuals);
    for obs in by_person.values() {
        assert!((cfg.min_visits..=cfg.max_visits).contains(&obs.len()));
        for w in obs.windows(2) {
            assert!((w[1].date - w[0].date).num_days() >= cfg.visit_gap_min_days as i64);
        }
        for o in obs {
            assert!(cfg.start_date <= o.date && o.date <= cfg.end_date);
            assert!(o.cd4 >= 0.0 && o.cd4.fract() == 0.0);
        }
    }
    assert_eq!(out.truth.len(), out.observations.len() - out.persons.len());
}

#[test]
fn truth_joins_one_to_one_with_built_intervals() {
    let out = generate_panel(&small(6), Execution::Parallel).unwrap();
    let ds = PanelDataset::build(&out.observations, &out.persons).unwrap();
    assert_eq!(ds.len(), out.truth.len());
    let truth: HashMap<(&str, NaiveDate), &TruthRecord> =
        out.truth.iter().map(|t| ((t.person_id.as_str(), t.start_date), t)).collect();
    assert_eq!(truth.len(), out.truth.len());
    for iv in ds.intervals() {
        let p = ds.person(iv.person);
        let t = truth[&(p.person_id.as_str(), iv.start_date)];
        assert_eq!(t.end_date, iv.end_date);
        assert_eq!(t.start_cd4, iv.start_cd4);
        assert_eq!(t.post_initiation, iv.post_initiation);
        assert_eq!(t.dg_ever, p.dg_ever);
        // Realized change decomposes into expectation, offset and noise.
        let rebuilt = t.expected_rate + t.manipulation_offset + t.noise;
        assert!((rebuilt - iv.annualized_change).abs() < 1e-6);
    }
}

#[test]
fn without_effect_or_noise_trajectories_ignore_grant_status() {
    let cfg = SimConfig { delta: 0.0, noise_sd: 0.0, qualified_gap_shift_days: 0.0, ..small(7) };
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    // The end value is a function of start value, initiation status and gap alone.
    let mut seen: HashMap<(i64, bool, i64), (f64, bool)> = HashMap::new();
    let mut shared = 0;
    for t in &out.truth {
        let key = (t.start_cd4 as i64, t.post_initiation, t.base_gap_days);
        let end = t.start_cd4 + (t.expected_rate + t.noise) * t.base_gap_days as f64 / DAYS_PER_YEAR;
        if let Some(&(prev, dg)) = seen.get(&key) {
            assert!((prev - end).abs() < 1e-6, "{key:?}");
            shared += usize::from(dg != t.dg_ever);
        }
        seen.insert(key, (end, t.dg_ever));
    }
    assert!(shared > 0, "no recipient/non-recipient pair shared a start");
    assert!(out.truth.iter().all(|t| !t.manipulated));
}

#[test]
fn manipulation_hits_exactly_the_targeted_intervals() {
    let cfg = small(8);
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    let (lo, hi) = cfg.manipulation_window;
    for t in &out.truth {
        let target = t.dg_ever && t.post_initiation && lo <= t.start_cd4 && t.start_cd4 < hi;
        assert_eq!(t.manipulated, target);
        assert_eq!(t.manipulation_offset, if target { cfg.delta } else { 0.0 });
    }
    let summary = describe_truth(&out.truth, cfg.threshold);
    assert!(summary.n_manipulated > 100);
    assert_eq!(summary.mean_manipulation_offset, Some(cfg.delta));

    let null = generate_panel(&SimConfig { delta: 0.0, ..cfg }, Execution::Parallel).unwrap();
    let s = describe_truth(&null.truth, 200.0);
    assert_eq!((s.n_manipulated, s.manipulation_prevalence, s.mean_manipulation_offset), (0, 0.0, None));
}

#[test]
fn era_effect_confines_manipulation_to_the_early_era() {
    let cfg = SimConfig { era_effect: Some(2.0), ..small(9) };
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    let mut early = 0;
    for t in out.truth.iter().filter(|t| t.manipulated) {
        assert!(t.start_date <= cfg.law_change_date);
        assert_eq!(t.manipulation_offset, -60.0);
        early += 1;
    }
    assert!(early > 0);
    let late_targets = out
        .truth
        .iter()
        .filter(|t| t.dg_ever && t.post_initiation && t.start_date > cfg.law_change_date)
        .filter(|t| (150.0..250.0).contains(&t.start_cd4))
        .count();
    assert!(late_targets > 0);
    for p in &out.persons {
        let first = out.observations.iter().filter(|o| o.person_id == p.person_id).map(|o| o.date).min().unwrap();
        assert_eq!(p.dg_pre_law, Some(p.dg_ever && first <= cfg.law_change_date));
    }
}

#[test]
fn rate_noise_has_the_configured_spread() {
    let out = generate_panel(&small(10), Execution::Parallel).unwrap();
    // Away from the floor, the only other distortion is rounding to whole cells.
    let noise: Vec<f64> = out
        .truth
        .iter()
        .filter(|t| t.start_cd4 > 400.0 && t.base_gap_days >= 180)
        .map(|t| t.noise)
        .collect();
    assert!(noise.len() > 1000);
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let sd = crate::stats::sample_sd(&noise);
    let se = 100.0 / (noise.len() as f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "mean {mean}");
    assert!((sd - 100.0).abs() < 5.0, "sd {sd}");
}

#[test]
fn gap_shift_applies_to_qualified_recipients() {
    let cfg = SimConfig { n_individuals: 8000, ..small(13) };
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    for t in &out.truth {
        assert_eq!(t.qualified, t.dg_ever && t.start_cd4 < cfg.threshold);
        assert_eq!(t.gap_shift_days, if t.qualified { 17 } else { 0 });
    }
    let s = describe_truth(&out.truth, cfg.threshold);
    let shift = s.realized_gap_shift.unwrap();
    // Base gaps are drawn independently of status; 4 SE of a difference of
    // means with SD near 245.
    let n_q = out.truth.iter().filter(|t| t.qualified).count() as f64;
    let n_n = out.truth.iter().filter(|t| !t.dg_ever && t.start_cd4 < 200.0).count() as f64;
    let se = 245.0 * (1.0 / n_q + 1.0 / n_n).sqrt();
    assert!((shift - 17.0).abs() < 4.0 * se, "shift {shift} se {se}");
}

#[test]
fn truth_bins_follow_the_recovery_curve() {
    let cfg = small(14);
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    let s = describe_truth(&out.truth, cfg.threshold);
    for b in &s.expected_by_bin {
        // The curve is linear inside each bin below 400, so the bin mean lies
        // between the rates at the two edges.
        let (a, z) = (cfg.recovery_at(b.bin_lo), cfg.recovery_at(b.bin_lo + 25.0));
        let (lo, hi) = (a.min(z), a.max(z));
        if b.bin_lo < 500.0 {
            assert!(lo - 1e-9 <= b.mean_expected_rate && b.mean_expected_rate <= hi + 1e-9, "{b:?}");
        }
    }
    assert!(s.expected_by_bin.iter().any(|b| b.bin_lo == 25.0));
}

#[test]
fn covariates_match_group_targets() {
    let cfg = SimConfig { n_individuals: 8000, ..small(15) };
    let out = generate_panel(&cfg, Execution::Parallel).unwrap();
    let dg: Vec<&PersonRecord> = out.persons.iter().filter(|p| p.dg_ever).collect();
    let share = dg.len() as f64 / out.persons.len() as f64;
    assert!((share - 0.18).abs() < 4.0 * (0.18f64 * 0.82 / 8000.0).sqrt());
    let mean_age = |dg_ever: bool| {
        let ages: Vec<f64> = out
            .persons
            .iter()
            .filter(|p| p.dg_ever == dg_ever)
            .map(|p| {
                let first = out.observations.iter().find(|o| o.person_id == p.person_id).unwrap().date;
                p.age_at(first)
            })
            .collect();
        ages.iter().sum::<f64>() / ages.len() as f64
    };
    assert!((mean_age(true) - 40.0).abs() < 1.5);
    assert!((mean_age(false) - 30.0).abs() < 1.0);
}

#[test]
fn recovery_curve_interpolates_and_is_flat_outside() {
    let cfg = SimConfig::default();
    assert_eq!(cfg.recovery_at(0.0), 215.0);
    assert_eq!(cfg.recovery_at(37.5), 215.0);
    assert!((cfg.recovery_at(218.75) - 167.5).abs() < 1e-9);
    assert_eq!(cfg.recovery_at(450.0), 60.0);
    assert_eq!(cfg.recovery_at(900.0), 0.0);
}

#[test]
fn invalid_configs_are_configuration_errors() {
    let bad = [
        SimConfig { visit_gap_mean_days: 20.0, ..SimConfig::default() },
        SimConfig { n_individuals: 0, ..SimConfig::default() },
        SimConfig { dg_fraction: 1.5, ..SimConfig::default() },
        SimConfig { min_visits: 2, ..SimConfig::default() },
        SimConfig { noise_sd: -1.0, ..SimConfig::default() },
        SimConfig { recovery_curve: vec![(0.0, 100.0), (100.0, 150.0)], ..SimConfig::default() },
        SimConfig { manipulation_window: (250.0, 150.0), ..SimConfig::default() },
        SimConfig { start_date: NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), ..SimConfig::default() },
    ];
    for cfg in bad {
        assert!(generate_panel(&cfg, Execution::Sequential).unwrap_err().is_config(), "{cfg:?}");
    }
    assert!(SimConfig::from_json(r#"{"noise": 3}"#).unwrap_err().is_config());
}

#[test]
fn config_json_round_trips_with_defaults() {
    let cfg = SimConfig::from_json(r#"{"delta": -45.0, "seed": 9}"#).unwrap();
    assert_eq!(cfg, SimConfig { delta: -45.0, seed: 9, ..SimConfig::default() });
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(SimConfig::from_json(&text).unwrap(), cfg);
}
