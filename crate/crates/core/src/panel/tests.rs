use super::*;
use proptest::prelude::*;

fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2005, 1, 1).unwrap() + chrono::Duration::days(n)
}

fn person(id: &str, art: Option<NaiveDate>) -> PersonRecord {
    PersonRecord {
        person_id: id.into(),
        dg_ever: false,
        sex: Sex::Female,
        birth_year: 1970,
        education_years: 8,
        road_distance_cat: 1,
        art_init_date: art,
        dg_pre_law: None,
    }
}

fn obs(id: &str, d: i64, cd4: f64) -> ObservationRecord {
    ObservationRecord { person_id: id.into(), date: day(d), cd4 }
}

fn series(id: &str, values: &[f64]) -> Vec<ObservationRecord> {
    values.iter().enumerate().map(|(k, &v)| obs(id, 100 * k as i64, v)).collect()
}

/// A dataset whose intervals carry the given annualized changes: one person
/// per pair of changes, with four-year (1461-day) gaps so that annualizing
/// is exact.
fn dataset_with_changes(changes: &[f64]) -> PanelDataset {
    assert!(changes.len() % 2 == 0);
    let mut persons = Vec::new();
    let mut observations = Vec::new();
    for (i, pair) in changes.chunks(2).enumerate() {
        let id = format!("p{i}");
        persons.push(person(&id, None));
        let mut level = 10_000.0;
        observations.push(obs(&id, 0, level));
        for (k, &c) in pair.iter().enumerate() {
            level += 4.0 * c;
            observations.push(obs(&id, 1461 * (k as i64 + 1), level));
        }
    }
    PanelDataset::build(&observations, &persons).unwrap()
}

#[test]
fn half_year_gap_annualizes() {
    assert_eq!(annualize(200.0, 250.0, 182.625), 100.0);
    assert_eq!(annualize(310.0, 310.0, 17.0), 0.0);
}

#[test]
fn builds_consecutive_pairs() {
    let p = person("a", None);
    let o = vec![obs("a", 0, 200.0), obs("a", 200, 260.0), obs("a", 100, 230.0)];
    let ds = PanelDataset::build(&o, &[p]).unwrap();
    assert_eq!(ds.len(), 2);
    let iv = &ds.intervals()[0];
    assert_eq!((iv.start_cd4, iv.end_cd4, iv.delta_days), (200.0, 230.0, 100.0));
    assert_eq!(iv.annualized_change, 30.0 / (100.0 / 365.25));
    assert_eq!(ds.intervals()[1].seq, 1);
    assert_eq!(ds.intervals()[1].calendar_year, 2005);
}

#[test]
fn two_observations_are_not_enough() {
    let ds = PanelDataset::build(&series("a", &[100.0, 150.0]), &[person("a", None)]).unwrap();
    assert!(ds.is_empty());
    assert_eq!(ds.provenance().persons_dropped_min_obs, 1);
    assert!(ds.persons().is_empty());
}

#[test]
fn zero_change_is_zero() {
    let ds = PanelDataset::build(&series("a", &[300.0, 300.0, 300.0]), &[person("a", None)]).unwrap();
    assert!(ds.intervals().iter().all(|iv| iv.annualized_change == 0.0));
}

#[test]
fn rejects_same_day_duplicates() {
    let o = vec![obs("a", 0, 200.0), obs("a", 0, 210.0), obs("a", 50, 220.0)];
    let err = PanelDataset::build(&o, &[person("a", None)]).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Data(_)));
    assert!(msg.contains("(a, 2005-01-01)"), "{msg}");
}

#[test]
fn rejects_unknown_person_and_bad_values() {
    let err = PanelDataset::build(&[obs("ghost", 0, 1.0)], &[person("a", None)]).unwrap_err();
    assert!(err.to_string().contains("ghost"));
    let err = PanelDataset::build(&[obs("a", 0, -1.0)], &[person("a", None)]).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    let dup = PanelDataset::build(&[], &[person("a", None), person("a", None)]).unwrap_err();
    assert!(dup.to_string().contains("duplicate person_id"));
    let mut young = person("a", None);
    young.birth_year = 2000;
    assert!(PanelDataset::build(&series("a", &[1.0, 2.0, 3.0]), &[young]).is_err());
}

#[test]
fn post_initiation_from_start_date() {
    let o = series("a", &[100.0, 150.0, 200.0, 260.0]);
    let ds = PanelDataset::build(&o, &[person("a", Some(day(100)))]).unwrap();
    let flags: Vec<bool> = ds.intervals().iter().map(|iv| iv.post_initiation).collect();
    assert_eq!(flags, [false, true, true]);
    let ds = PanelDataset::build(&o, &[person("a", None)]).unwrap();
    assert!(ds.intervals().iter().all(|iv| !iv.post_initiation));
}

#[test]
fn trim_removes_one_value_per_tail() {
    let changes: Vec<f64> = (1..=100).map(f64::from).collect();
    let ds = dataset_with_changes(&changes);
    assert_eq!(ds.len(), 100);
    let mut got: Vec<f64> = ds.intervals().iter().map(|iv| iv.annualized_change.round()).collect();
    got.sort_by(f64::total_cmp);
    assert_eq!(got, changes);

    let trimmed = ds.trim_outliers(1.0, 99.0).unwrap();
    assert_eq!(trimmed.len(), 98);
    let remaining: Vec<f64> = trimmed.intervals().iter().map(|iv| iv.annualized_change.round()).collect();
    assert!(!remaining.contains(&1.0) && !remaining.contains(&100.0));
    let log = trimmed.provenance().trim.as_ref().unwrap();
    assert_eq!((log.removed_low, log.removed_high), (1, 1));
}

#[test]
fn trim_full_range_is_identity() {
    let changes: Vec<f64> = (1..=40).map(|x| f64::from(x) * 3.5 - 60.0).collect();
    let ds = dataset_with_changes(&changes);
    let same = ds.trim_outliers(0.0, 100.0).unwrap();
    assert_eq!(same.intervals(), ds.intervals());
}

#[test]
fn trim_rejects_inverted_percentiles() {
    let ds = dataset_with_changes(&[1.0, 2.0, 3.0, 4.0]);
    assert!(ds.trim_outliers(99.0, 1.0).unwrap_err().is_config());
    assert!(ds.trim_outliers(5.0, 5.0).unwrap_err().is_config());
}

#[test]
fn trim_on_ten_thousand_intervals() {
    // Continuous draws: no ties, so nearest-rank arithmetic removes exactly
    // ceil(0.01 n) per tail.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let changes: Vec<f64> = (0..10_000).map(|_| rng.random_range(-900.0..900.0)).collect();
    let ds = dataset_with_changes(&changes);
    assert_eq!(ds.len(), 10_000);
    let removed = ds.len() - ds.trim_outliers(1.0, 99.0).unwrap().len();
    assert!((198..=202).contains(&removed), "removed {removed}");
}

#[test]
fn flags_first_interval_after_crossing() {
    let ds = PanelDataset::build(&series("a", &[180.0, 230.0, 210.0]), &[person("a", None)])
        .unwrap()
        .annotate(200.0, 25.0)
        .unwrap();
    let flags: Vec<bool> = ds.intervals().iter().map(|iv| iv.first_after_crossing).collect();
    assert_eq!(flags, [false, true]);

    let ds = PanelDataset::build(&series("b", &[300.0, 250.0, 220.0]), &[person("b", None)])
        .unwrap()
        .annotate(200.0, 25.0)
        .unwrap();
    assert!(ds.intervals().iter().all(|iv| !iv.first_after_crossing));
}

#[test]
fn repeat_crossings_are_logged_not_flagged() {
    let ds = PanelDataset::build(&series("a", &[150.0, 250.0, 190.0, 260.0, 240.0]), &[person("a", None)])
        .unwrap()
        .annotate(200.0, 25.0)
        .unwrap();
    let flags: Vec<bool> = ds.intervals().iter().map(|iv| iv.first_after_crossing).collect();
    assert_eq!(flags, [false, true, false, false]);
    let log = ds.provenance().annotation.as_ref().unwrap();
    assert_eq!(log.persons_with_repeat_crossings, 1);
    assert_eq!(log.first_after_crossing_flagged, 1);
}

#[test]
fn terminal_bin_pools_high_values() {
    assert_eq!(bin_index(500.0, 25.0), 20);
    assert_eq!(bin_index(612.0, 25.0), 20);
    assert_eq!(bin_index(499.9, 25.0), 19);
    assert_eq!(bin_index(0.0, 25.0), 0);
    assert_eq!(bin_index(24.99, 25.0), 0);
    assert_eq!(bin_index(25.0, 25.0), 1);
    assert_eq!(bin_index(777.0, 50.0), 10);
    let ds = PanelDataset::build(&series("a", &[500.0, 612.0, 20.0]), &[person("a", None)])
        .unwrap()
        .annotate(200.0, 25.0)
        .unwrap();
    assert_eq!(ds.intervals()[0].start_bin, 20);
    assert_eq!(ds.intervals()[1].start_bin, 20);
    assert!(ds.annotate(200.0, 0.0).unwrap_err().is_config());
}

#[test]
fn population_filters() {
    let persons = [person("a", Some(day(100))), person("b", None)];
    let mut o = series("a", &[100.0, 150.0, 200.0, 260.0]);
    o.extend(series("b", &[100.0, 150.0, 200.0]));
    let ds = PanelDataset::build(&o, &persons).unwrap();
    assert_eq!(ds.filter(Population::All).intervals(), ds.intervals());
    assert_eq!(ds.filter(Population::PostInitiation).len(), 2);
    // Person b has no known initiation date, so none of b's intervals are pre-initiation.
    let pre = ds.filter(Population::PreInitiation);
    assert_eq!(pre.len(), 1);
    assert_eq!(pre.intervals()[0].person, PersonIdx(0));
    let window = ds.filter(Population::DateWindow { start: day(0), end: day(200) });
    assert_eq!(window.len(), 4);
    let empty = ds.filter(Population::DateWindow { start: day(1000), end: day(2000) });
    assert!(empty.is_empty());
    assert_eq!(empty.provenance().filters.last().unwrap().removed, ds.len());
}

#[test]
fn csv_round_trip_preserves_records() {
    let mut p = person("a", Some(day(3)));
    p.dg_pre_law = Some(true);
    let persons = vec![p, person("b,quoted", None)];
    let observations = vec![obs("a", 0, 123.456), obs("b,quoted", 7, 0.1 + 0.2)];
    let mut buf = Vec::new();
    write_persons(&mut buf, &persons).unwrap();
    assert_eq!(read_persons_from(buf.as_slice()).unwrap(), persons);
    let mut buf = Vec::new();
    write_observations(&mut buf, &observations).unwrap();
    assert_eq!(read_observations_from(buf.as_slice()).unwrap(), observations);
}

#[test]
fn reads_schema_without_optional_column() {
    let text = "person_id,dg_ever,sex,birth_year,education_years,road_distance_cat,art_init_date\n\
                x,1,male,1960,4,2,\ny,0,female,1980,12,0,2007-03-04\n";
    let persons = read_persons_from(text.as_bytes()).unwrap();
    assert_eq!(persons.len(), 2);
    assert!(persons[0].dg_ever && persons[0].art_init_date.is_none());
    assert_eq!(persons[1].art_init_date, NaiveDate::from_ymd_opt(2007, 3, 4));
    assert_eq!(persons[1].dg_pre_law, None);
    let bad = "person_id,dg_ever,sex,birth_year,education_years,road_distance_cat,art_init_date\nx,maybe,male,1960,4,2,\n";
    assert!(matches!(read_persons_from(bad.as_bytes()).unwrap_err(), Error::Data(_)));
}

fn arb_panel() -> impl Strategy<Value = (Vec<PersonRecord>, Vec<ObservationRecord>)> {
    prop::collection::vec(prop::collection::vec((1i64..400, 0.0f64..900.0), 0..8), 1..12).prop_map(
        |people| {
            let mut persons = Vec::new();
            let mut observations = Vec::new();
            for (i, tests) in people.into_iter().enumerate() {
                let id = format!("p{i}");
                persons.push(person(&id, Some(day(300))));
                let mut d = 0;
                for (gap, cd4) in tests {
                    d += gap;
                    observations.push(obs(&id, d, cd4.round()));
                }
            }
            (persons, observations)
        },
    )
}

proptest! {
    #[test]
    fn interval_counts_and_spans((persons, observations) in arb_panel()) {
        let ds = PanelDataset::build(&observations, &persons).unwrap();
        for p in &persons {
            let dates: Vec<NaiveDate> = observations.iter().filter(|o| o.person_id == p.person_id).map(|o| o.date).collect();
            let idx = ds.persons().iter().position(|q| q.person_id == p.person_id);
            let mine: Vec<&IntervalRecord> = match idx {
                Some(i) => ds.intervals().iter().filter(|iv| iv.person.get() == i).collect(),
                None => Vec::new(),
            };
            if dates.len() >= MIN_OBSERVATIONS {
                prop_assert_eq!(mine.len(), dates.len() - 1);
                let span = (*dates.iter().max().unwrap() - *dates.iter().min().unwrap()).num_days() as f64;
                prop_assert_eq!(mine.iter().map(|iv| iv.delta_days).sum::<f64>(), span);
                for w in mine.windows(2) {
                    prop_assert_eq!(w[0].end_date, w[1].start_date);
                }
            } else {
                prop_assert!(mine.is_empty());
            }
            for iv in &mine {
                prop_assert!(iv.end_date > iv.start_date);
                prop_assert_eq!(iv.annualized_change, (iv.end_cd4 - iv.start_cd4) / iv.delta_years);
            }
        }
    }

    #[test]
    fn annualization_is_antisymmetric(a in 0.0f64..2000.0, b in 0.0f64..2000.0, gap in 1.0f64..4000.0) {
        prop_assert_eq!(annualize(a, b, gap), -annualize(b, a, gap));
    }

    #[test]
    fn trimming_is_idempotent((persons, observations) in arb_panel(), lo in 0.0f64..20.0, hi in 80.0f64..100.0) {
        let ds = PanelDataset::build(&observations, &persons).unwrap();
        prop_assume!(!ds.is_empty());
        let once = ds.trim_outliers(lo, hi).unwrap();
        let twice = once.trim_outliers(lo, hi).unwrap();
        prop_assert_eq!(once.intervals(), twice.intervals());
    }

    #[test]
    fn at_most_one_crossing_flag_per_person((persons, observations) in arb_panel(), threshold in 100.0f64..700.0) {
        let ds = PanelDataset::build(&observations, &persons).unwrap().annotate(threshold, 25.0).unwrap();
        for ivs in ds.intervals_by_person().values() {
            let flagged: Vec<_> = ivs.iter().filter(|iv| iv.first_after_crossing).collect();
            prop_assert!(flagged.len() <= 1);
            if let Some(iv) = flagged.first() {
                prop_assert!(iv.start_cd4 > threshold);
                prop_assert!(ds.history(iv.person)[..usize::from(iv.seq)].iter().any(|t| t.cd4 <= threshold));
            }
        }
    }
}
