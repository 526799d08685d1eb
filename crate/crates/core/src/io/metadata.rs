//! Per-sample metadata tables: the first column holds sample ids, the
//! remaining columns categorical or numeric annotations.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::io::table::sniff_delimiter;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metadata {
    pub columns: Vec<String>,
    rows: HashMap<String, Vec<Value>>,
}

fn cell_value(cell: &str) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = cell.parse::<i64>() {
        return Value::Number(Number::from(i));
    }
    match cell.parse::<f64>().ok().and_then(Number::from_f64) {
        Some(n) => Value::Number(n),
        None => Value::String(cell.to_string()),
    }
}

impl Metadata {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let table_err = |row: usize, col: usize, message: String| Error::Table {
            path: source.to_path_buf(),
            row,
            col,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(sniff_delimiter(text))
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(h) => h?,
            None => return Err(table_err(0, 0, "empty metadata table".into())),
        };
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = HashMap::new();
        for (i, record) in records.enumerate() {
            let record = record?;
            let line = i + 2;
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            if record.len() != header.len() {
                return Err(table_err(
                    line,
                    record.len().min(header.len()) + 1,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            let id = record[0].to_string();
            let values = record.iter().skip(1).map(cell_value).collect();
            if rows.insert(id.clone(), values).is_some() {
                return Err(table_err(line, 1, format!("duplicate sample id {id:?}")));
            }
        }
        Ok(Metadata { columns, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    /// Column name to value for one sample; empty when the id is unknown.
    pub fn for_sample(&self, id: &str) -> Map<String, Value> {
        match self.rows.get(id) {
            Some(values) => self.columns.iter().cloned().zip(values.iter().cloned()).collect(),
            None => Map::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_cells() {
        let m = Metadata::parse("id,subject,day\ns1,A,1\ns2,B,\n", Path::new("m.csv")).unwrap();
        assert_eq!(m.columns, vec!["subject", "day"]);
        let s1 = m.for_sample("s1");
        assert_eq!(s1["subject"], Value::String("A".into()));
        assert_eq!(s1["day"].as_i64(), Some(1));
        assert_eq!(m.for_sample("s2")["day"], Value::Null);
        let m = Metadata::parse("id,w\ns1,2.5\n", Path::new("m.csv")).unwrap();
        assert_eq!(m.for_sample("s1")["w"].as_f64(), Some(2.5));
        assert!(m.for_sample("zz").is_empty());
    }

    #[test]
    fn rejects_duplicates_and_ragged_rows() {
        assert!(Metadata::parse("id,a\ns1,1\ns1,2\n", Path::new("m.csv")).is_err());
        assert!(Metadata::parse("id,a\ns1,1,2\n", Path::new("m.csv")).is_err());
    }
}
