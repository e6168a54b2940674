//! Text formats for bipartite vectors and shot records.
//!
//! Bipartite vectors come as CSV with header `i,j,value` (missing entries
//! are zero) or as JSON `{"dim_a": .., "dim_b": .., "coefficients": [[..], ..]}`
//! with one inner array per `i`. Shot records use the header
//! `dir_index,y_1,..,y_d,trials,successes` written by `records_to_csv`.

use nalgebra::DVector;
use serde::Deserialize;

use crate::composite::BipartiteVector;
use crate::error::{Error, Result};
use crate::protocol::ShotRecord;

/// Largest local dimension accepted from files.
pub const MAX_DIM: usize = 64;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn csv_err(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, e.to_string())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize, name: &str) -> Result<T> {
    let raw = rec.get(k).ok_or_else(|| parse_err(line, format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {name} from '{raw}'")))
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Parses `i,j,value` rows. Dimensions are taken from `dims` when given and
/// inferred from the largest indices otherwise.
pub fn parse_composite_csv(text: &str, dims: Option<(usize, usize)>) -> Result<BipartiteVector> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(&e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["i", "j", "value"] {
        return Err(parse_err(1, "header must be 'i,j,value'"));
    }
    let mut entries: Vec<(usize, usize, f64, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = line_of(&rec);
        let i: usize = field(&rec, 0, line, "i")?;
        let j: usize = field(&rec, 1, line, "j")?;
        let v: f64 = field(&rec, 2, line, "value")?;
        if !v.is_finite() {
            return Err(parse_err(line, "value must be finite"));
        }
        if i > MAX_DIM || j > MAX_DIM {
            return Err(parse_err(line, format!("index exceeds {MAX_DIM}")));
        }
        if entries.iter().any(|e| e.0 == i && e.1 == j) {
            return Err(parse_err(line, format!("duplicate entry ({i},{j})")));
        }
        entries.push((i, j, v, line));
    }
    let (da, db) = match dims {
        Some(d) => d,
        None => (
            entries.iter().map(|e| e.0).max().unwrap_or(0),
            entries.iter().map(|e| e.1).max().unwrap_or(0),
        ),
    };
    if da == 0 || db == 0 {
        return Err(parse_err(1, "local dimensions must be at least 1"));
    }
    let mut c = DVector::zeros((da + 1) * (db + 1));
    for (i, j, v, line) in entries {
        if i > da || j > db {
            return Err(parse_err(line, format!("index ({i},{j}) outside d_A = {da}, d_B = {db}")));
        }
        c[i * (db + 1) + j] = v;
    }
    BipartiteVector::new(da, db, c)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompositeJson {
    dim_a: usize,
    dim_b: usize,
    coefficients: Vec<Vec<f64>>,
}

pub fn parse_composite_json(text: &str) -> Result<BipartiteVector> {
    let raw: CompositeJson =
        serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
    let (da, db) = (raw.dim_a, raw.dim_b);
    if da == 0 || db == 0 || da > MAX_DIM || db > MAX_DIM {
        return Err(parse_err(1, format!("local dimensions must lie in 1..={MAX_DIM}")));
    }
    if raw.coefficients.len() != da + 1 || raw.coefficients.iter().any(|r| r.len() != db + 1) {
        return Err(parse_err(
            1,
            format!("coefficients must be a {}×{} array", da + 1, db + 1),
        ));
    }
    let flat: Vec<f64> = raw.coefficients.into_iter().flatten().collect();
    BipartiteVector::new(da, db, DVector::from_vec(flat))
}

/// JSON if the first non-blank character is `{`, CSV otherwise.
pub fn parse_composite(text: &str, dims: Option<(usize, usize)>) -> Result<BipartiteVector> {
    if text.trim_start().starts_with('{') {
        let v = parse_composite_json(text)?;
        if let Some((da, db)) = dims {
            if (v.dim_a, v.dim_b) != (da, db) {
                return Err(Error::input(format!(
                    "file has d_A = {}, d_B = {}, expected {da}, {db}",
                    v.dim_a, v.dim_b
                )));
            }
        }
        Ok(v)
    } else {
        parse_composite_csv(text, dims)
    }
}

pub fn composite_to_json(v: &BipartiteVector) -> String {
    let rows: Vec<Vec<f64>> = (0..=v.dim_a)
        .map(|i| (0..=v.dim_b).map(|j| v.get(i, j)).collect())
        .collect();
    serde_json::json!({"dim_a": v.dim_a, "dim_b": v.dim_b, "coefficients": rows}).to_string()
}

pub fn composite_to_csv(v: &BipartiteVector) -> String {
    let mut out = String::from("i,j,value\n");
    for i in 0..=v.dim_a {
        for j in 0..=v.dim_b {
            out.push_str(&format!("{i},{j},{:?}\n", v.get(i, j)));
        }
    }
    out
}

/// Reads a shot-record table. Rows must be numbered `0, 1, ..` in order.
pub fn parse_shot_records(text: &str) -> Result<Vec<ShotRecord>> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(&e))?.clone();
    let n = headers.len();
    if n < 4 {
        return Err(parse_err(1, "expected dir_index, y_1..y_d, trials, successes"));
    }
    let d = n - 3;
    let ok = headers.get(0) == Some("dir_index")
        && (1..=d).all(|k| headers.get(k) == Some(format!("y_{k}").as_str()))
        && headers.get(n - 2) == Some("trials")
        && headers.get(n - 1) == Some("successes");
    if !ok || d > MAX_DIM {
        return Err(parse_err(1, "header must be dir_index,y_1,..,y_d,trials,successes"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = line_of(&rec);
        let idx: usize = field(&rec, 0, line, "dir_index")?;
        if idx != out.len() {
            return Err(parse_err(line, format!("expected dir_index {}, found {idx}", out.len())));
        }
        let mut y = DVector::zeros(d);
        for k in 0..d {
            y[k] = field(&rec, k + 1, line, &format!("y_{}", k + 1))?;
        }
        let trials: u64 = field(&rec, n - 2, line, "trials")?;
        let successes: u64 = field(&rec, n - 1, line, "successes")?;
        let r = ShotRecord::new(y, trials, successes).map_err(|e| parse_err(line, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::singlet;
    use crate::protocol::records_to_csv;

    #[test]
    fn composite_round_trips() {
        let s = singlet();
        assert_eq!(parse_composite(&composite_to_json(&s), None).unwrap(), s);
        assert_eq!(parse_composite(&composite_to_csv(&s), None).unwrap(), s);
        assert_eq!(parse_composite(&composite_to_csv(&s), Some((3, 3))).unwrap(), s);
    }

    #[test]
    fn sparse_csv_fills_zeros() {
        let v = parse_composite_csv("i,j,value\n0,0,1\n1,1,-0.5\n", None).unwrap();
        assert_eq!((v.dim_a, v.dim_b), (1, 1));
        assert_eq!(v.coefficients.as_slice(), &[1.0, 0.0, 0.0, -0.5]);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = parse_composite_csv("i,j,value\n0,0,1\n1,x,2\n", None).unwrap_err();
        assert_eq!(e, parse_err(3, "cannot parse j from 'x'"));
        let e = parse_composite_csv("i,j,value\n0,0,1\n0,0,2\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = parse_composite_json("{\"dim_a\": 1,\n \"dim_b\": 1,\n \"coefficients\": [[1, 0]]}").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
        let e = parse_composite_json("{\"dim_a\": 1,\n \"oops\": 1}").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn shot_records_round_trip() {
        let recs = vec![
            ShotRecord::new(DVector::from_vec(vec![1.0, 0.0]), 10, 3).unwrap(),
            ShotRecord::new(DVector::from_vec(vec![0.6, -0.8]), 7, 7).unwrap(),
        ];
        assert_eq!(parse_shot_records(&records_to_csv(&recs)).unwrap(), recs);
        let bad = "dir_index,y_1,y_2,trials,successes\n0,1,0,5,6\n";
        assert!(matches!(parse_shot_records(bad).unwrap_err(), Error::Parse { line: 2, .. }));
    }
}
