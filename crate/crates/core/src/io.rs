//! File formats.
//!
//! * Matrix: JSON `{"dim": N, "entries": [[...], ...]}` or CSV with `N` rows of
//!   `N` comma-separated values (diagonal included).
//! * Schedule: JSON `{"rows": N, "cols": L, "entries": [[...], ...]}` or CSV
//!   with `N` rows of `L` values.
//! * Assignment: CSV with header `device,channel`, one row per device.
//! * Layout: CSV `device,x,y` plus a JSON sidecar `{"region_radius": .., "density": ..}`.
//!
//! Floats are written in Rust's shortest round-trip notation, which needs at
//! most 17 significant digits and reads back to the identical `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, JointActivationMatrix, ScheduleMatrix};
use crate::sim::{DeviceLayout, Point};

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn json_error(e: serde_json::Error) -> Error {
    Error::parse(format!("line {}, column {}", e.line(), e.column()), e)
}

fn rows_json(rows: impl Iterator<Item = Vec<f64>>) -> String {
    let rows: Vec<String> = rows
        .map(|r| format!("    [{}]", r.iter().map(|&v| format_f64(v)).collect::<Vec<_>>().join(", ")))
        .collect();
    rows.join(",\n")
}

fn rows_csv(rows: impl Iterator<Item = Vec<f64>>) -> String {
    rows.map(|r| r.iter().map(|&v| format_f64(v)).collect::<Vec<_>>().join(",") + "\n").collect()
}

/// Parses headerless numeric CSV; errors name the line and column.
fn parse_numeric_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(format!("line {line}"), e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|e| Error::parse(format!("line {line}, column {}", col + 1), format!("`{field}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct MatrixDoc {
    dim: usize,
    entries: Vec<Vec<f64>>,
}

pub fn matrix_from_json(text: &str) -> Result<JointActivationMatrix> {
    let doc: MatrixDoc = serde_json::from_str(text).map_err(json_error)?;
    if doc.entries.len() != doc.dim {
        return Err(Error::parse(
            "field `entries`",
            format!("has {} rows but `dim` is {}", doc.entries.len(), doc.dim),
        ));
    }
    JointActivationMatrix::from_rows(doc.entries)
}

pub fn matrix_from_csv(text: &str) -> Result<JointActivationMatrix> {
    JointActivationMatrix::from_rows(parse_numeric_csv(text)?)
}

pub fn matrix_to_json(a: &JointActivationMatrix) -> String {
    format!("{{\n  \"dim\": {},\n  \"entries\": [\n{}\n  ]\n}}\n", a.dim(), rows_json(a.to_rows().into_iter()))
}

pub fn matrix_to_csv(a: &JointActivationMatrix) -> String {
    rows_csv(a.to_rows().into_iter())
}

/// Reads a matrix; `.json` files are JSON, anything else CSV.
pub fn read_matrix(path: &Path) -> Result<JointActivationMatrix> {
    let text = fs::read_to_string(path)?;
    if is_json(path) {
        matrix_from_json(&text)
    } else {
        matrix_from_csv(&text)
    }
}

pub fn write_matrix(path: &Path, a: &JointActivationMatrix) -> Result<()> {
    let text = if is_json(path) { matrix_to_json(a) } else { matrix_to_csv(a) };
    fs::write(path, text)?;
    Ok(())
}

#[derive(Deserialize)]
struct ScheduleDoc {
    rows: usize,
    cols: usize,
    entries: Vec<Vec<f64>>,
}

pub fn schedule_from_json(text: &str) -> Result<ScheduleMatrix> {
    let doc: ScheduleDoc = serde_json::from_str(text).map_err(json_error)?;
    if doc.entries.len() != doc.rows {
        return Err(Error::parse("field `entries`", format!("has {} rows but `rows` is {}", doc.entries.len(), doc.rows)));
    }
    if let Some((i, r)) = doc.entries.iter().enumerate().find(|(_, r)| r.len() != doc.cols) {
        return Err(Error::parse(format!("field `entries`, row {i}"), format!("has {} values but `cols` is {}", r.len(), doc.cols)));
    }
    ScheduleMatrix::new(doc.entries)
}

pub fn schedule_to_json(e: &ScheduleMatrix) -> String {
    format!(
        "{{\n  \"rows\": {},\n  \"cols\": {},\n  \"entries\": [\n{}\n  ]\n}}\n",
        e.n_devices(),
        e.n_channels(),
        rows_json(e.to_rows().into_iter())
    )
}

pub fn schedule_to_csv(e: &ScheduleMatrix) -> String {
    rows_csv(e.to_rows().into_iter())
}

pub fn read_schedule(path: &Path) -> Result<ScheduleMatrix> {
    let text = fs::read_to_string(path)?;
    if is_json(path) {
        schedule_from_json(&text)
    } else {
        ScheduleMatrix::new(parse_numeric_csv(&text)?)
    }
}

pub fn write_schedule(path: &Path, e: &ScheduleMatrix) -> Result<()> {
    let text = if is_json(path) { schedule_to_json(e) } else { schedule_to_csv(e) };
    fs::write(path, text)?;
    Ok(())
}

/// Parses `device,channel` rows; every device `0..N` must appear exactly once.
pub fn assignment_from_csv(text: &str) -> Result<Assignment> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse("line 1", e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["device", "channel"] {
        return Err(Error::parse("line 1", format!("expected header `device,channel`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(format!("line {}", e.position().map_or(0, |p| p.line())), e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize, name: &str| -> Result<usize> {
            let raw = record.get(k).ok_or_else(|| Error::parse(format!("line {line}"), format!("missing `{name}`")))?;
            raw.parse::<usize>().map_err(|e| Error::parse(format!("line {line}, field `{name}`"), format!("`{raw}`: {e}")))
        };
        pairs.push((line, field(0, "device")?, field(1, "channel")?));
    }
    let n = pairs.len();
    let mut channel_of = vec![None; n];
    for (line, device, channel) in pairs {
        let slot = channel_of
            .get_mut(device)
            .ok_or_else(|| Error::parse(format!("line {line}, field `device`"), format!("device {device} out of range for {n} rows")))?;
        if slot.replace(channel).is_some() {
            return Err(Error::parse(format!("line {line}, field `device`"), format!("device {device} listed twice")));
        }
    }
    Ok(Assignment::new(channel_of.into_iter().map(|c| c.expect("every slot filled")).collect()))
}

pub fn assignment_to_csv(x: &Assignment) -> String {
    let mut out = String::from("device,channel\n");
    for (i, c) in x.channel_of().iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    out
}

pub fn read_assignment(path: &Path) -> Result<Assignment> {
    assignment_from_csv(&fs::read_to_string(path)?)
}

pub fn write_assignment(path: &Path, x: &Assignment) -> Result<()> {
    fs::write(path, assignment_to_csv(x))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LayoutSidecar {
    region_radius: f64,
    density: f64,
}

/// Path of the JSON sidecar next to a layout CSV (`layout.csv` -> `layout.json`).
pub fn layout_sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn layout_to_csv(layout: &DeviceLayout) -> String {
    let mut out = String::from("device,x,y\n");
    for (i, p) in layout.positions().iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", format_f64(p.x), format_f64(p.y)));
    }
    out
}

pub fn layout_sidecar_json(layout: &DeviceLayout) -> String {
    format!(
        "{{\n  \"region_radius\": {},\n  \"density\": {}\n}}\n",
        format_f64(layout.region_radius()),
        format_f64(layout.density())
    )
}

pub fn layout_from_parts(csv_text: &str, sidecar_json: &str) -> Result<DeviceLayout> {
    let side: LayoutSidecar = serde_json::from_str(sidecar_json).map_err(json_error)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    let mut positions = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(format!("line {}", e.position().map_or(0, |p| p.line())), e))?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |k: usize, name: &str| -> Result<f64> {
            let raw = record.get(k).ok_or_else(|| Error::parse(format!("line {line}"), format!("missing `{name}`")))?;
            raw.parse::<f64>().map_err(|e| Error::parse(format!("line {line}, field `{name}`"), format!("`{raw}`: {e}")))
        };
        if num(0, "device")? as usize != row {
            return Err(Error::parse(format!("line {line}, field `device`"), format!("expected device {row}")));
        }
        positions.push(Point::new(num(1, "x")?, num(2, "y")?));
    }
    DeviceLayout::new(positions, side.region_radius, side.density)
}

pub fn read_layout(csv_path: &Path) -> Result<DeviceLayout> {
    let csv_text = fs::read_to_string(csv_path)?;
    let side = fs::read_to_string(layout_sidecar_path(csv_path))?;
    layout_from_parts(&csv_text, &side)
}

/// Writes the CSV and its sidecar.
pub fn write_layout(csv_path: &Path, layout: &DeviceLayout) -> Result<()> {
    fs::write(csv_path, layout_to_csv(layout))?;
    fs::write(layout_sidecar_path(csv_path), layout_sidecar_json(layout))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn missing_dim_is_a_parse_error() {
        let err = matrix_from_json(r#"{"entries": [[0.0]]}"#).unwrap_err();
        match err {
            Error::Parse { message, .. } => assert!(message.contains("dim")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_in_csv_is_a_validation_error() {
        let err = matrix_from_csv("0,NaN\nNaN,0\n").unwrap_err();
        assert!(matches!(err, Error::InvalidMatrix(_)));
    }

    #[test]
    fn bad_csv_cell_names_the_line() {
        let err = matrix_from_csv("0,0.1\n0.1,abc\n").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 2, column 2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn assignment_csv_round_trip_and_errors() {
        let x = Assignment::new(vec![2, 0, 1, 1]);
        let text = assignment_to_csv(&x);
        assert_eq!(text, "device,channel\n0,2\n1,0\n2,1\n3,1\n");
        assert_eq!(assignment_from_csv(&text).unwrap(), x);
        assert!(assignment_from_csv("dev,chan\n0,1\n").is_err());
        assert!(assignment_from_csv("device,channel\n0,1\n0,1\n").is_err());
        assert!(assignment_from_csv("device,channel\n0,x\n").is_err());
    }

    #[test]
    fn schedule_json_round_trip() {
        let e = ScheduleMatrix::new(vec![vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        assert_eq!(schedule_from_json(&schedule_to_json(&e)).unwrap(), e);
        assert!(schedule_from_json(r#"{"rows": 1, "cols": 2, "entries": [[0.5]]}"#).is_err());
    }

    #[test]
    fn layout_round_trip() {
        let layout = crate::sim::generate_layout(6, 0.2, 4).unwrap();
        let back = layout_from_parts(&layout_to_csv(&layout), &layout_sidecar_json(&layout)).unwrap();
        assert_eq!(back, layout);
    }

    proptest! {
        #[test]
        fn matrix_text_round_trip(n in 1usize..7, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = JointActivationMatrix::from_pairs(n, |_, _| rng.random::<f64>()).unwrap();
            let json = matrix_to_json(&a);
            let back = matrix_from_json(&json).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(matrix_to_json(&back), json);
            prop_assert_eq!(matrix_from_csv(&matrix_to_csv(&a)).unwrap(), a);
        }
    }
}
