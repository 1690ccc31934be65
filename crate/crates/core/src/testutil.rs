//! Fixtures shared by unit tests.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::panel::{ObservationRecord, PanelDataset, PersonRecord, Sex};

fn person(id: &str, dg: bool, edu: u8) -> PersonRecord {
    PersonRecord {
        person_id: id.into(),
        dg_ever: dg,
        sex: if edu % 2 == 0 { Sex::Female } else { Sex::Male },
        birth_year: 1970,
        education_years: edu,
        road_distance_cat: edu % 3,
        art_init_date: NaiveDate::from_ymd_opt(2006, 1, 1),
        dg_pre_law: Some(dg && edu % 2 == 0),
    }
}

/// Random panel: persons with 3-7 tests spanning the start-value range.
pub fn random_panel(seed: u64, n_persons: usize) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut persons = Vec::new();
    let mut obs = Vec::new();
    for i in 0..n_persons {
        let id = format!("p{i}");
        persons.push(person(&id, rng.random_bool(0.3), rng.random_range(0..=12)));
        let mut date = NaiveDate::from_ymd_opt(2004, 1, 1).unwrap() + chrono::Duration::days(rng.random_range(0..700));
        let mut cd4: f64 = rng.random_range(20.0..450.0);
        for _ in 0..rng.random_range(3..=7) {
            obs.push(ObservationRecord { person_id: id.clone(), date, cd4: cd4.round() });
            date += chrono::Duration::days(rng.random_range(60..500));
            cd4 = (cd4 + rng.random_range(-80.0..140.0)).max(0.0);
        }
    }
    PanelDataset::build(&obs, &persons).unwrap().annotate(200.0, 25.0).unwrap()
}


/// Dataset from explicit test histories: `(dg_ever, [(day offset, cd4)])`
/// per person, days counted from 2005-01-01, initiation on 2004-01-01.
pub fn panel_from(people: &[(bool, Vec<(i64, f64)>)]) -> PanelDataset {
    let origin = NaiveDate::from_ymd_opt(2005, 1, 1).unwrap();
    let mut persons = Vec::new();
    let mut obs = Vec::new();
    for (i, (dg, tests)) in people.iter().enumerate() {
        let id = format!("p{i}");
        persons.push(person(&id, *dg, (i % 5) as u8));
        for &(d, cd4) in tests {
            obs.push(ObservationRecord { person_id: id.clone(), date: origin + chrono::Duration::days(d), cd4 });
        }
    }
    PanelDataset::build(&obs, &persons).unwrap().annotate(200.0, 25.0).unwrap()
}
