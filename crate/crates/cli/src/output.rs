//! Result tables as CSV or JSON, written atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    Num(f64),
    Int(u64),
    Bool(bool),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_owned())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

/// Rows sharing one header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row
                .iter()
                .map(|cell| match cell {
                    Cell::Str(s) => csv_field(s),
                    Cell::Num(x) => format_number(*x),
                    Cell::Int(n) => n.to_string(),
                    Cell::Bool(b) => b.to_string(),
                })
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    fn to_json(&self) -> String {
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (col, cell) in self.columns.iter().zip(row) {
                    let v = match cell {
                        Cell::Str(s) => Value::String(s.clone()),
                        Cell::Num(x) => serde_json::Number::from_f64(*x)
                            .map(Value::Number)
                            .unwrap_or_else(|| Value::String(format_number(*x))),
                        Cell::Int(n) => Value::from(*n),
                        Cell::Bool(b) => Value::Bool(*b),
                    };
                    obj.insert((*col).to_owned(), v);
                }
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&Value::Array(records)).unwrap();
        s.push('\n');
        s
    }
}

/// 17 significant digits in scientific notation; `inf`, `-inf`, `nan`
/// for non-finite values.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        let mut s = String::new();
        write!(s, "{x:.16e}").unwrap();
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Writes `text` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Renders `table` and writes it to `path`, or to stdout when `path` is
/// `None`.
pub fn emit_table(table: &Table, format: Format, path: Option<&Path>) -> std::io::Result<()> {
    let text = table.render(format);
    match path {
        Some(p) => write_atomic(p, &text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record_is_two_lines() {
        let mut t = Table::new(&["state", "log_z"]);
        t.push(vec!["S0".into(), (-1.785f64).into()]);
        assert_eq!(t.render(Format::Csv), "state,log_z\nS0,-1.7849999999999999e0\n");
    }

    #[test]
    fn empty_table_keeps_header() {
        let t = Table::new(&["state", "log_z"]);
        assert_eq!(t.render(Format::Csv), "state,log_z\n");
        assert_eq!(t.render(Format::Json), "[]\n");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE, -0.0] {
            assert_eq!(format_number(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(format_number(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn json_records_share_field_names() {
        let mut t = Table::new(&["state", "p", "n", "ok"]);
        t.push(vec!["a,b".into(), 0.5.into(), 3usize.into(), true.into()]);
        t.push(vec!["c".into(), f64::NEG_INFINITY.into(), 0usize.into(), false.into()]);
        let v: Value = serde_json::from_str(&t.render(Format::Json)).unwrap();
        let rows = v.as_array().unwrap();
        assert_eq!(rows[0]["state"], "a,b");
        assert_eq!(rows[1]["p"], "-inf");
        assert_eq!(rows[0]["n"], 3);
        assert!(t.render(Format::Csv).contains("\"a,b\""));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, "old\n").unwrap();
        write_atomic(&p, "new\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "new\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
