//! Scalar cell values shared by staging rows, dimension members and filters.

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;

use chrono::Datelike;
pub use chrono::NaiveDate;

/// Declared kind of a dimension attribute or staging field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarKind {
    Text,
    Integer,
    Date,
}

impl ScalarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarKind::Text => "text",
            ScalarKind::Integer => "integer",
            ScalarKind::Date => "date",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(ScalarKind::Text),
            "integer" => Some(ScalarKind::Integer),
            "date" => Some(ScalarKind::Date),
            _ => None,
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A staging or member cell. `Missing` marks an absent or unparseable input.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Text(String),
    Int(i64),
    Float(f64),
    Date(NaiveDate),
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// Numeric view used by the cleaning statistics. Text is parsed leniently.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) if v.is_finite() => Some(*v),
            Value::Text(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Float(v) if v.is_finite() => Some(libm::round(*v) as i64),
            Value::Text(s) => s.trim().parse::<i64>().ok(),
            _ => None,
        }
    }

    pub fn as_date(&self) -> Option<NaiveDate> {
        match self {
            Value::Date(d) => Some(*d),
            Value::Text(s) => parse_iso_date(s.trim()),
            _ => None,
        }
    }

    /// Canonical text form. Dimension tables and natural keys store this form, so
    /// `Int(10)` and `Text("10")` coerced to an integer attribute meet on `"10"`.
    pub fn render(&self) -> String {
        match self {
            Value::Missing => String::new(),
            Value::Text(s) => s.clone(),
            Value::Int(v) => v.to_string(),
            Value::Float(v) => format!("{v}"),
            Value::Date(d) => format_iso_date(*d),
        }
    }

    /// Coerces the value to `kind` and renders it canonically.
    pub fn render_as(&self, kind: ScalarKind) -> Option<String> {
        match kind {
            ScalarKind::Text => match self {
                Value::Missing => None,
                Value::Text(s) => {
                    let t = s.trim();
                    (!t.is_empty()).then(|| t.to_string())
                }
                other => Some(other.render()),
            },
            ScalarKind::Integer => self.as_i64().map(|v| v.to_string()),
            ScalarKind::Date => self.as_date().map(format_iso_date),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    let y = s.get(0..4)?.parse::<i32>().ok()?;
    let m = s.get(5..7)?.parse::<u32>().ok()?;
    let d = s.get(8..10)?.parse::<u32>().ok()?;
    NaiveDate::from_ymd_opt(y, m, d)
}

/// `yyyymmdd`, the layout used by the fixed-width sources.
pub fn parse_compact_date(s: &str) -> Option<NaiveDate> {
    if s.len() != 8 || !s.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let y = s[0..4].parse::<i32>().ok()?;
    let m = s[4..6].parse::<u32>().ok()?;
    let d = s[6..8].parse::<u32>().ok()?;
    NaiveDate::from_ymd_opt(y, m, d)
}

pub fn format_iso_date(d: NaiveDate) -> String {
    format!("{:04}-{:02}-{:02}", d.year(), d.month(), d.day())
}

/// Calendar roll-up keys of a day: (`YYYY-MM`, `YYYY-Qn`, `YYYY`).
/// Byte order of each key is chronological order.
pub fn calendar_keys(d: NaiveDate) -> (String, String, String) {
    let y = d.year();
    let m = d.month();
    (format!("{y:04}-{m:02}"), format!("{y:04}-Q{}", (m - 1) / 3 + 1), format!("{y:04}"))
}
