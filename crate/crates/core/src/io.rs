//! JSON file formats for rules, probability tables and local functions, and
//! a serializer that prints every float with 17 significant digits.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::lattice::{OffsetSet, Site};
use crate::localfn::{LocalFnError, LocalFunction};
use crate::rule::{FourierRule, ProbTable, RuleError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    LocalFn(#[from] LocalFnError),
}

/// `{"A": [[...], ...], "r": ...}`; an empty `A` is the constant term.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffEntry {
    #[serde(rename = "A")]
    pub a: Vec<Vec<i64>>,
    pub r: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuleFile {
    pub dimension: usize,
    pub coeffs: Vec<CoeffEntry>,
}

impl RuleFile {
    pub fn from_rule(rule: &FourierRule) -> Self {
        RuleFile {
            dimension: rule.dimension(),
            coeffs: rule
                .coeffs()
                .iter()
                .map(|(a, r)| CoeffEntry {
                    a: a.sites().iter().map(|s| s.coords().to_vec()).collect(),
                    r: *r,
                })
                .collect(),
        }
    }

    pub fn to_rule(&self) -> Result<FourierRule, RuleError> {
        FourierRule::new(
            self.dimension,
            self.coeffs.iter().map(|e| {
                (
                    OffsetSet::new(e.a.iter().map(|c| Site::new(c.clone()))),
                    e.r,
                )
            }),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbTableFile {
    pub dimension: usize,
    pub neighborhood: Vec<Vec<i64>>,
    pub probs: Vec<f64>,
}

impl ProbTableFile {
    pub fn from_table(table: &ProbTable) -> Self {
        ProbTableFile {
            dimension: table.dimension(),
            neighborhood: table
                .neighborhood()
                .iter()
                .map(|s| s.coords().to_vec())
                .collect(),
            probs: table.probs().to_vec(),
        }
    }

    pub fn to_table(&self) -> Result<ProbTable, RuleError> {
        ProbTable::new(
            self.dimension,
            self.neighborhood
                .iter()
                .map(|c| Site::new(c.clone()))
                .collect(),
            self.probs.clone(),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalFunctionFile {
    pub dimension: usize,
    pub sites: Vec<Vec<i64>>,
    pub table: Vec<f64>,
}

impl LocalFunctionFile {
    pub fn from_function(f: &LocalFunction) -> Self {
        LocalFunctionFile {
            dimension: f.dimension(),
            sites: f.sites().iter().map(|s| s.coords().to_vec()).collect(),
            table: f.table().to_vec(),
        }
    }

    pub fn to_function(&self) -> Result<LocalFunction, LocalFnError> {
        LocalFunction::new(
            self.dimension,
            self.sites.iter().map(|c| Site::new(c.clone())).collect(),
            self.table.clone(),
        )
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    parse_json(&text, &path.display().to_string())
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, context: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|source| IoError::Json {
        context: context.to_string(),
        source,
    })
}

pub fn read_rule(path: &Path) -> Result<FourierRule, IoError> {
    Ok(read_json::<RuleFile>(path)?.to_rule()?)
}

pub fn read_prob_table(path: &Path) -> Result<ProbTable, IoError> {
    Ok(read_json::<ProbTableFile>(path)?.to_table()?)
}

pub fn read_local_function(path: &Path) -> Result<LocalFunction, IoError> {
    Ok(read_json::<LocalFunctionFile>(path)?.to_function()?)
}

/// Pretty JSON with floats written as `d.dddddddddddddddde±x`.
/// Non-finite floats become `null`.
pub struct ExactFloatFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for ExactFloatFormatter<'_> {
    fn default() -> Self {
        ExactFloatFormatter {
            inner: PrettyFormatter::new(),
        }
    }
}

impl Formatter for ExactFloatFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

/// Serializes `value` with [`ExactFloatFormatter`].
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloatFormatter::default());
    value
        .serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// A float in the same 17-digit notation, for CSV cells.
pub fn format_f64(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else if value.is_nan() {
        "nan".to_string()
    } else if value > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::Builtin;

    #[test]
    fn floats_round_trip_exactly() {
        let values = vec![0.1, 1.0 / 3.0, 2.9761904761904762e-1, -1e-300, 123456789.0];
        let text = to_json_string(&values);
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, values);
        assert!(text.contains("1.0000000000000001e-1"));
        assert_eq!(
            to_json_string(&vec![f64::INFINITY])
                .split_whitespace()
                .collect::<String>(),
            "[null]"
        );
    }

    #[test]
    fn rule_file_round_trip() {
        let rule = Builtin::ToomNec { eps: 0.3 }.rule();
        let text = to_json_string(&RuleFile::from_rule(&rule));
        let back = parse_json::<RuleFile>(&text, "test")
            .unwrap()
            .to_rule()
            .unwrap();
        assert_eq!(back, rule);
        let constant: RuleFile =
            parse_json(r#"{"dimension": 1, "coeffs": [{"A": [], "r": 0.3}]}"#, "t").unwrap();
        assert_eq!(
            constant.to_rule().unwrap().coefficient(&OffsetSet::empty()),
            0.3
        );
    }

    #[test]
    fn table_and_function_files() {
        let t: ProbTableFile = parse_json(
            r#"{"dimension": 1, "neighborhood": [[0], [1]], "probs": [0.2, 0.2, 0.2, 1.0]}"#,
            "t",
        )
        .unwrap();
        let table = t.to_table().unwrap();
        assert_eq!(ProbTableFile::from_table(&table).probs, t.probs);
        let f: LocalFunctionFile = parse_json(
            r#"{"dimension": 1, "sites": [[0]], "table": [-1.0, 1.0]}"#,
            "f",
        )
        .unwrap();
        assert_eq!(f.to_function().unwrap(), LocalFunction::spin(Site::d1(0)));
        assert!(parse_json::<LocalFunctionFile>("{", "bad").is_err());
    }
}
