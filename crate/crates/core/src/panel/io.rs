//! CSV readers and writers for the panel schemas.
//!
//! `observations.csv`: `person_id,date,cd4`
//! `persons.csv`: `person_id,dg_ever,sex,birth_year,education_years,road_distance_cat,art_init_date`
//! with an optional trailing `dg_pre_law` column. Dates are ISO-8601; an empty
//! `art_init_date` means initiation is unknown.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{ObservationRecord, PanelDataset, PersonRecord, Sex};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawObservation {
    person_id: String,
    date: String,
    cd4: String,
}

#[derive(Deserialize)]
struct RawPerson {
    person_id: String,
    dg_ever: String,
    sex: String,
    birth_year: String,
    education_years: String,
    road_distance_cat: String,
    art_init_date: String,
    #[serde(default)]
    dg_pre_law: Option<String>,
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::data(format!("line {line}: bad date {s:?}: {e}")))
}

fn parse_bool(s: &str, field: &str, line: u64) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::data(format!("line {line}: bad {field} {other:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &str, line: u64) -> Result<T> {
    s.trim().parse().map_err(|_| Error::data(format!("line {line}: bad {field} {s:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn read_observations_from<R: Read>(reader: R) -> Result<Vec<ObservationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let raw: RawObservation = rec.deserialize(Some(&headers))?;
        out.push(ObservationRecord {
            person_id: raw.person_id,
            date: parse_date(&raw.date, line)?,
            cd4: parse_num(&raw.cd4, "cd4", line)?,
        });
    }
    Ok(out)
}

pub fn read_persons_from<R: Read>(reader: R) -> Result<Vec<PersonRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let raw: RawPerson = rec.deserialize(Some(&headers))?;
        let sex = match raw.sex.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Sex::Female,
            "male" | "m" => Sex::Male,
            other => return Err(Error::data(format!("line {line}: bad sex {other:?}"))),
        };
        let education_years: u8 = parse_num(&raw.education_years, "education_years", line)?;
        if education_years > 20 {
            return Err(Error::data(format!("line {line}: education_years {education_years} > 20")));
        }
        let art_init_date = match raw.art_init_date.trim() {
            "" => None,
            s => Some(parse_date(s, line)?),
        };
        let dg_pre_law = match raw.dg_pre_law.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(parse_bool(s, "dg_pre_law", line)?),
        };
        out.push(PersonRecord {
            person_id: raw.person_id,
            dg_ever: parse_bool(&raw.dg_ever, "dg_ever", line)?,
            sex,
            birth_year: parse_num(&raw.birth_year, "birth_year", line)?,
            education_years,
            road_distance_cat: parse_num(&raw.road_distance_cat, "road_distance_cat", line)?,
            art_init_date,
            dg_pre_law,
        });
    }
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    read_observations_from(File::open(path)?)
}

pub fn read_persons(path: &Path) -> Result<Vec<PersonRecord>> {
    read_persons_from(File::open(path)?)
}

fn flag(b: bool) -> &'static str {
    if b { "1" } else { "0" }
}

pub fn write_persons<W: Write>(w: W, persons: &[PersonRecord]) -> Result<()> {
    let with_pre_law = persons.iter().any(|p| p.dg_pre_law.is_some());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![
        "person_id",
        "dg_ever",
        "sex",
        "birth_year",
        "education_years",
        "road_distance_cat",
        "art_init_date",
    ];
    if with_pre_law {
        header.push("dg_pre_law");
    }
    wtr.write_record(&header)?;
    for p in persons {
        let mut row = vec![
            p.person_id.clone(),
            flag(p.dg_ever).to_string(),
            match p.sex {
                Sex::Female => "female".to_string(),
                Sex::Male => "male".to_string(),
            },
            p.birth_year.to_string(),
            p.education_years.to_string(),
            p.road_distance_cat.to_string(),
            p.art_init_date.map(|d| d.to_string()).unwrap_or_default(),
        ];
        if with_pre_law {
            row.push(p.dg_pre_law.map(|b| flag(b).to_string()).unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_observations<W: Write>(w: W, observations: &[ObservationRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["person_id", "date", "cd4"])?;
    for o in observations {
        wtr.write_record([o.person_id.clone(), o.date.to_string(), o.cd4.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_intervals<W: Write>(w: W, ds: &PanelDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "person_id",
        "start_date",
        "end_date",
        "start_cd4",
        "end_cd4",
        "delta_days",
        "delta_years",
        "annualized_change",
        "post_initiation",
        "first_after_crossing",
        "calendar_year",
        "start_bin",
        "dg_ever",
    ])?;
    for iv in ds.intervals() {
        let p = ds.person(iv.person);
        wtr.write_record([
            p.person_id.clone(),
            iv.start_date.to_string(),
            iv.end_date.to_string(),
            iv.start_cd4.to_string(),
            iv.end_cd4.to_string(),
            iv.delta_days.to_string(),
            iv.delta_years.to_string(),
            iv.annualized_change.to_string(),
            flag(iv.post_initiation).to_string(),
            flag(iv.first_after_crossing).to_string(),
            iv.calendar_year.to_string(),
            iv.start_bin.to_string(),
            flag(p.dg_ever).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
