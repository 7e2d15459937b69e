use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use super::{Cohort, Grade, Laterality, NodalStage, PatientRecord};
use crate::error::{Error, Result};

/// Column names, in order, of the cohort CSV format.
pub const CSV_HEADER: [&str; 13] = [
    "age",
    "nodal_stage",
    "node_count",
    "laterality",
    "er",
    "pr",
    "size_mm",
    "grade",
    "radiotherapy",
    "chemotherapy",
    "trastuzumab",
    "time",
    "event",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Rows dropped because `time <= 0`.
    pub dropped_nonpositive_time: usize,
    /// Events after the horizon, recoded as administratively censored at the horizon.
    pub censored_at_horizon: usize,
}

pub fn ingest_csv(path: &Path, horizon: f64) -> Result<(Cohort, IngestReport)> {
    let file = File::open(path)?;
    read_csv(file, horizon, &path.display().to_string())
}

pub fn read_csv<R: Read>(reader: R, horizon: f64, provenance: &str) -> Result<(Cohort, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        let found = header.get(i).unwrap_or("");
        if found != *expected {
            return Err(Error::Schema { expected: expected.to_string(), found: found.to_string() });
        }
    }
    if header.len() > CSV_HEADER.len() {
        return Err(Error::Schema {
            expected: "<end of header>".into(),
            found: header.get(CSV_HEADER.len()).unwrap_or("").to_string(),
        });
    }

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        report.rows_read += 1;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let err = |message: String| Error::Row { row, message };
        let time = parse_f64(cell(11)).map_err(|m| err(format!("time: {m}")))?;
        let time = time.ok_or_else(|| err("time is required".into()))?;
        if time <= 0.0 {
            report.dropped_nonpositive_time += 1;
            continue;
        }
        let mut event = parse_bool(cell(12))
            .map_err(|m| err(format!("event: {m}")))?
            .ok_or_else(|| err("event is required".into()))?;
        let mut time = time;
        if event && time > horizon {
            event = false;
            time = horizon;
            report.censored_at_horizon += 1;
        }
        let age = parse_f64(cell(0))
            .map_err(|m| err(format!("age: {m}")))?
            .ok_or_else(|| err("age is required".into()))?;
        let record = PatientRecord {
            id: row as u64,
            age,
            nodal_stage: parse_stage(cell(1)).map_err(|m| err(format!("nodal_stage: {m}")))?,
            node_count: parse_count(cell(2)).map_err(|m| err(format!("node_count: {m}")))?,
            laterality: parse_laterality(cell(3)).map_err(|m| err(format!("laterality: {m}")))?,
            er: parse_bool(cell(4)).map_err(|m| err(format!("er: {m}")))?,
            pr: parse_bool(cell(5)).map_err(|m| err(format!("pr: {m}")))?,
            size_mm: parse_f64(cell(6)).map_err(|m| err(format!("size_mm: {m}")))?,
            grade: parse_grade(cell(7)).map_err(|m| err(format!("grade: {m}")))?,
            radiotherapy: parse_bool(cell(8)).map_err(|m| err(format!("radiotherapy: {m}")))?,
            chemotherapy: parse_bool(cell(9)).map_err(|m| err(format!("chemotherapy: {m}")))?,
            trastuzumab: parse_bool(cell(10)).map_err(|m| err(format!("trastuzumab: {m}")))?,
            time,
            event,
        };
        record.validate(horizon).map_err(|e| err(e.to_string()))?;
        records.push(record);
    }
    Ok((Cohort::new(records, horizon, provenance)?, report))
}

pub fn write_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    let b = |v: Option<bool>| v.map(|x| if x { "1" } else { "0" }.to_string()).unwrap_or_default();
    for r in &cohort.records {
        w.write_record([
            r.age.to_string(),
            r.nodal_stage.map(|s| s.label().to_string()).unwrap_or_default(),
            r.node_count.map(|n| n.to_string()).unwrap_or_default(),
            r.laterality.map(|l| l.label().to_string()).unwrap_or_default(),
            b(r.er),
            b(r.pr),
            r.size_mm.map(|s| s.to_string()).unwrap_or_default(),
            r.grade.map(|g| g.number().to_string()).unwrap_or_default(),
            b(r.radiotherapy),
            b(r.chemotherapy),
            b(r.trastuzumab),
            r.time.to_string(),
            if r.event { "1".into() } else { "0".into() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("cannot parse `{s}` as a number"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value `{s}`"));
    }
    Ok(Some(v))
}

fn parse_bool(s: &str) -> std::result::Result<Option<bool>, String> {
    match s {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        other => Err(format!("expected 0 or 1, found `{other}`")),
    }
}

fn parse_count(s: &str) -> std::result::Result<Option<u32>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("expected a nonnegative integer, found `{s}`"))
}

fn parse_stage(s: &str) -> std::result::Result<Option<NodalStage>, String> {
    match s.to_ascii_uppercase().as_str() {
        "" => Ok(None),
        "N0" => Ok(Some(NodalStage::N0)),
        "N1" => Ok(Some(NodalStage::N1)),
        "N2" => Ok(Some(NodalStage::N2)),
        "N3" => Ok(Some(NodalStage::N3)),
        _ => Err(format!("unknown nodal stage `{s}`")),
    }
}

fn parse_laterality(s: &str) -> std::result::Result<Option<Laterality>, String> {
    match s.to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "left" => Ok(Some(Laterality::Left)),
        "right" => Ok(Some(Laterality::Right)),
        "bilateral" => Ok(Some(Laterality::Bilateral)),
        _ => Err(format!("unknown laterality `{s}`")),
    }
}

fn parse_grade(s: &str) -> std::result::Result<Option<Grade>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<u8>()
        .ok()
        .and_then(Grade::from_number)
        .map(Some)
        .ok_or_else(|| format!("expected grade 1, 2 or 3, found `{s}`"))
}
