//! CSV input and output for observation series and decoded paths.
//!
//! Input is one observation per row. A header row is optional; when present
//! the value column is the one named `value`, `count` or `y`, an optional
//! `missing` column flags missing rows and an optional `timestamp` column is
//! carried along. Without a header the first column is the value and an
//! optional second column is the missing flag. An empty field or `NA` marks
//! a missing value. Numbers are written with 17 significant digits.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::hmm::cumulative_probs;
use crate::sampler::fmt_num;

/// A parsed observation series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub timestamps: Option<Vec<String>>,
    pub values: Vec<Option<f64>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct Columns {
    value: usize,
    missing: Option<usize>,
    timestamp: Option<usize>,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na")
}

fn parse_value(s: &str, line: u64) -> Result<Option<f64>> {
    if is_missing_token(s) {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(v) => Err(parse_err(line, format!("non-finite value {v}"))),
        Err(_) => Err(parse_err(line, format!("cannot parse `{s}` as a number"))),
    }
}

fn parse_flag(s: &str, line: u64) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(parse_err(line, format!("cannot parse `{s}` as a missing flag"))),
    }
}

fn header_columns(fields: &csv::StringRecord, line: u64) -> Result<Columns> {
    let find = |names: &[&str]| {
        fields
            .iter()
            .position(|f| names.iter().any(|n| f.eq_ignore_ascii_case(n)))
    };
    let value = find(&["value", "count", "y"])
        .ok_or_else(|| parse_err(line, "header has no `value`, `count` or `y` column"))?;
    Ok(Columns {
        value,
        missing: find(&["missing"]),
        timestamp: find(&["timestamp", "time"]),
    })
}

/// Reads an observation series.
pub fn read_series<R: Read>(r: R) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut cols: Option<Columns> = None;
    let mut series = Series::default();
    let mut timestamps = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if i == 0 {
            let first = rec.get(0).unwrap_or("");
            if !is_missing_token(first) && first.parse::<f64>().is_err() {
                cols = Some(header_columns(&rec, line)?);
                continue;
            }
        }
        let c = cols.get_or_insert(Columns {
            value: 0,
            missing: (rec.len() > 1).then_some(1),
            timestamp: None,
        });
        let field = |j: usize| {
            rec.get(j)
                .ok_or_else(|| parse_err(line, format!("expected at least {} fields", j + 1)))
        };
        let mut value = parse_value(field(c.value)?, line)?;
        if let Some(m) = c.missing {
            if parse_flag(field(m)?, line)? {
                value = None;
            }
        }
        if let Some(ts) = c.timestamp {
            timestamps.push(field(ts)?.to_string());
        }
        series.values.push(value);
    }
    if cols.as_ref().is_some_and(|c| c.timestamp.is_some()) {
        series.timestamps = Some(timestamps);
    }
    Ok(series)
}

/// Writes `value,missing` rows; missing values are written as `NA`.
pub fn write_series<W: Write>(mut w: W, values: &[Option<f64>]) -> Result<()> {
    writeln!(w, "value,missing")?;
    for v in values {
        match v {
            Some(y) => writeln!(w, "{},0", fmt_num(*y))?,
            None => writeln!(w, "NA,1")?,
        }
    }
    Ok(())
}

/// Writes `t,state,p_0..,cum_0..` rows for a decoded path with its smoothed
/// probabilities and their running sums over states.
pub fn write_decoding<W: Write>(mut w: W, path: &[usize], probs: &[Vec<f64>]) -> Result<()> {
    if path.len() != probs.len() {
        return Err(Error::InvalidData("path and probabilities differ in length".into()));
    }
    let n = probs.first().map_or(0, Vec::len);
    let mut header = String::from("t,state");
    for prefix in ["p", "cum"] {
        for i in 0..n {
            header.push_str(&format!(",{prefix}_{i}"));
        }
    }
    writeln!(w, "{header}")?;
    let cum = cumulative_probs(probs);
    for (t, ((s, p), c)) in path.iter().zip(probs).zip(&cum).enumerate() {
        let mut row = format!("{t},{s}");
        for x in p.iter().chain(c) {
            row.push(',');
            row.push_str(&fmt_num(*x));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headerless_single_column_with_missing_tokens() {
        let s = read_series("1.5\nNA\n\n-2\n".as_bytes()).unwrap();
        // A blank line is skipped by the CSV reader, not read as missing.
        assert_eq!(s.values, vec![Some(1.5), None, Some(-2.0)]);
        assert!(s.timestamps.is_none());
    }

    #[test]
    fn value_missing_pairs_round_trip() {
        let values = vec![Some(0.1), None, Some(1e-300), Some(-7.25)];
        let mut buf = Vec::new();
        write_series(&mut buf, &values).unwrap();
        assert_eq!(read_series(buf.as_slice()).unwrap().values, values);
    }

    #[test]
    fn timestamp_count_header() {
        let text = "timestamp,count\n2020-01-01 00:00,0\n2020-01-01 00:01,12\n2020-01-01 00:02,\n";
        let s = read_series(text.as_bytes()).unwrap();
        assert_eq!(s.values, vec![Some(0.0), Some(12.0), None]);
        assert_eq!(s.timestamps.unwrap()[1], "2020-01-01 00:01");
    }

    #[test]
    fn bad_number_reports_its_line() {
        let text = "value\n1\n2\nabc\n";
        match read_series(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        match read_series("p,q\n1,2\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoding_rows_have_cumulative_columns() {
        let mut buf = Vec::new();
        write_decoding(&mut buf, &[0, 1], &[vec![0.75, 0.25], vec![0.5, 0.5]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,state,p_0,p_1,cum_0,cum_1");
        let last: Vec<f64> = lines[1].split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert_eq!(last, vec![0.75, 0.25, 0.75, 1.0]);
    }
}
