//! The ordination JSON document shared by the CLI, the server and the
//! explorer.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! finite f64 exactly; non-finite values become `null`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

use crate::dpcoa::DpcoaResult;
use crate::error::{Error, Result};
use crate::family::AdaptiveResult;
use crate::gpca::GpcaResult;
use crate::io::metadata::Metadata;
use crate::linalg::Matrix;

pub const SCHEMA_VERSION: u32 = 1;

/// `%.17g`-style decimal for a finite float.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let digits = digits.trim_end_matches('0');
    if (-5..17).contains(&exp) {
        let mut out = String::from(sign);
        if exp < 0 {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(digits);
        } else {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                out.push_str(digits);
                out.extend(std::iter::repeat_n('0', int_len - digits.len()));
            } else {
                out.push_str(&digits[..int_len]);
                out.push('.');
                out.push_str(&digits[int_len..]);
            }
        }
        out
    } else {
        let (head, tail) = digits.split_at(1);
        if tail.is_empty() {
            format!("{sign}{head}e{exp}")
        } else {
            format!("{sign}{head}.{tail}e{exp}")
        }
    }
}

/// Compact JSON with [`format_f64`] numbers.
#[derive(Debug, Clone, Copy, Default)]
pub struct Digits17;

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17);
    value.serialize(&mut ser)?;
    Ok(out)
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(String::from_utf8(to_json_bytes(value)?).expect("serde_json emits UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub coords: Vec<f64>,
    #[serde(default)]
    pub metadata: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub name: String,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub loglik: f64,
}

/// One member of a family grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub r: f64,
    pub sigma2: f64,
    pub eigenvalues: Vec<f64>,
    pub variance_fractions: Vec<f64>,
    pub samples: Vec<SampleEntry>,
    pub variables: Vec<VariableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinationDoc {
    pub schema_version: u32,
    pub method: String,
    pub r: Option<f64>,
    pub sigma2: Option<f64>,
    pub eigenvalues: Vec<f64>,
    pub variance_fractions: Vec<f64>,
    pub samples: Vec<SampleEntry>,
    pub variables: Vec<VariableEntry>,
    pub profile_trace: Option<Vec<ProfilePoint>>,
    pub grid: Option<Vec<GridEntry>>,
}

fn rows_of(m: &Matrix) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..m.rows()).map(|i| m.row(i).to_vec())
}

fn check_names(names: &[String], m: &Matrix, what: &str) -> Result<()> {
    if names.len() != m.rows() {
        return Err(Error::DimensionMismatch {
            op: "ordination output",
            expected: format!("{} {what} names", m.rows()),
            found: format!("{}", names.len()),
        });
    }
    Ok(())
}

/// Sample entries from an n×k coordinate matrix.
pub fn sample_entries(ids: &[String], coords: &Matrix, metadata: Option<&Metadata>) -> Result<Vec<SampleEntry>> {
    check_names(ids, coords, "sample")?;
    Ok(ids
        .iter()
        .zip(rows_of(coords))
        .map(|(id, c)| SampleEntry {
            id: id.clone(),
            coords: c,
            metadata: metadata.map(|m| m.for_sample(id)).unwrap_or_default(),
        })
        .collect())
}

/// Variable entries from a p×k coordinate matrix.
pub fn variable_entries(names: &[String], coords: &Matrix) -> Result<Vec<VariableEntry>> {
    check_names(names, coords, "variable")?;
    Ok(names
        .iter()
        .zip(rows_of(coords))
        .map(|(name, c)| VariableEntry {
            name: name.clone(),
            coords: c,
        })
        .collect())
}

/// Names and metadata used to label an ordination.
#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub sample_ids: &'a [String],
    pub variable_names: &'a [String],
    pub metadata: Option<&'a Metadata>,
}

impl OrdinationDoc {
    fn base(method: &str, eigenvalues: &[f64], variance_fractions: &[f64]) -> Self {
        OrdinationDoc {
            schema_version: SCHEMA_VERSION,
            method: method.to_string(),
            r: None,
            sigma2: None,
            eigenvalues: eigenvalues.to_vec(),
            variance_fractions: variance_fractions.to_vec(),
            samples: vec![],
            variables: vec![],
            profile_trace: None,
            grid: None,
        }
    }

    /// Sample coordinates `U Λ^{1/2}` and variables `Q V`.
    pub fn from_gpca(method: &str, result: &GpcaResult, labels: Labels) -> Result<Self> {
        let mut doc = Self::base(method, &result.eigenvalues, &result.variance_fractions);
        doc.samples = sample_entries(labels.sample_ids, &result.row_coordinates, labels.metadata)?;
        doc.variables = variable_entries(labels.variable_names, &result.metric_axes)?;
        Ok(doc)
    }

    pub fn from_adaptive(result: &AdaptiveResult, labels: Labels) -> Result<Self> {
        let mut doc = Self::from_gpca("adaptive_gpca", &result.ordination, labels)?;
        doc.variables = variable_entries(labels.variable_names, &result.variable_scores)?;
        doc.r = Some(result.fit.r_hat);
        doc.sigma2 = Some(result.fit.sigma2_hat);
        doc.profile_trace = result
            .fit
            .profile_trace
            .as_ref()
            .map(|t| t.iter().map(|&(r, loglik)| ProfilePoint { r, loglik }).collect());
        Ok(doc)
    }

    pub fn from_dpcoa(result: &DpcoaResult, labels: Labels) -> Result<Self> {
        let mut doc = Self::base("dpcoa", &result.eigenvalues, &result.variance_fractions);
        doc.samples = sample_entries(labels.sample_ids, &result.sample_scores, labels.metadata)?;
        doc.variables = variable_entries(labels.variable_names, &result.species_scores)?;
        Ok(doc)
    }

    pub fn grid_entry(result: &AdaptiveResult, labels: Labels) -> Result<GridEntry> {
        Ok(GridEntry {
            r: result.fit.r_hat,
            sigma2: result.fit.sigma2_hat,
            eigenvalues: result.ordination.eigenvalues.clone(),
            variance_fractions: result.ordination.variance_fractions.clone(),
            samples: sample_entries(labels.sample_ids, &result.ordination.row_coordinates, labels.metadata)?,
            variables: variable_entries(labels.variable_names, &result.variable_scores)?,
        })
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let bytes = to_json_bytes(value)?;
    fs::write(path, bytes).map_err(|e| Error::output(path, e))
}

pub fn write_ordination(doc: &OrdinationDoc, path: &Path) -> Result<()> {
    write_json(doc, path)
}

pub fn read_ordination(path: &Path) -> Result<OrdinationDoc> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: OrdinationDoc = serde_json::from_str(&text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(format_f64(0.1), "0.10000000000000001");
        assert_eq!(format_f64(6.0), "6");
        assert_eq!(format_f64(-2.5), "-2.5");
        assert_eq!(format_f64(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_f64(1e20), "1e20");
        assert_eq!(format_f64(123456.0), "123456");
        assert_eq!(format_f64(0.00048828125), "0.00048828125");
        assert_eq!(format_f64(-0.0), "-0");
        assert_eq!(format_f64(0.0), "0");
    }

    #[test]
    fn floats_round_trip() {
        let values = [
            0.1,
            1.0 / 3.0,
            -std::f64::consts::PI,
            f64::MIN_POSITIVE,
            f64::MAX,
            5e-324,
            123456789012345680.0,
            1e16,
            0.5e-5,
        ];
        for v in values {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        let text = to_json_string(&values.to_vec()).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, values.to_vec());
    }

    #[test]
    fn nonfinite_becomes_null() {
        assert_eq!(to_json_string(&vec![f64::NAN, 1.0]).unwrap(), "[null,1]");
    }

    #[test]
    fn value_reserialisation_is_stable() {
        let doc = vec![0.1, 2.0, -1e-9, 12.5];
        let first = to_json_string(&doc).unwrap();
        let value: Value = serde_json::from_str(&first).unwrap();
        assert_eq!(to_json_string(&value).unwrap(), first);
    }
}
