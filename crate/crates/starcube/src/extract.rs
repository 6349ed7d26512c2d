//! Reading source files into staging batches: delimited exports, sheet
//! exports (`;`, decimal comma, dd/mm/yyyy) and fixed-width records.

use std::path::PathBuf;

use starcube_core::clean::StagingBatch;
use starcube_core::value::{parse_compact_date, parse_iso_date, NaiveDate, Value};
use thiserror::Error;

use crate::config::{ColumnType, FieldKind, FixedWidthLayout, SourceKind, SourceSpec};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("source {source_id}: file {} not found", path.display())]
    MissingFile { source_id: String, path: PathBuf },
    #[error("source {source_id}: reading {}: {error}", path.display())]
    Io { source_id: String, path: PathBuf, error: std::io::Error },
    #[error("source {source_id}, line {line}: record is {got} bytes, layout expects {expected}")]
    RecordLength { source_id: String, line: u64, expected: usize, got: usize },
    #[error("source {source_id}: invalid layout: {detail}")]
    Layout { source_id: String, detail: String },
    #[error("source {source_id}, line {line}: {detail}")]
    Malformed { source_id: String, line: u64, detail: String },
}

impl ExtractError {
    pub fn is_io(&self) -> bool {
        matches!(self, ExtractError::MissingFile { .. } | ExtractError::Io { .. })
    }
}

/// Reads the file named by `spec` into a batch. Rows keep their input order.
pub fn extract(spec: &SourceSpec) -> Result<StagingBatch, ExtractError> {
    let bytes = std::fs::read(&spec.path).map_err(|error| {
        if error.kind() == std::io::ErrorKind::NotFound {
            ExtractError::MissingFile { source_id: spec.id.clone(), path: spec.path.clone() }
        } else {
            ExtractError::Io { source_id: spec.id.clone(), path: spec.path.clone(), error }
        }
    })?;
    extract_bytes(spec, &bytes)
}

pub fn extract_bytes(spec: &SourceSpec, bytes: &[u8]) -> Result<StagingBatch, ExtractError> {
    match spec.kind {
        SourceKind::FixedWidth => {
            let layout = spec
                .layout
                .as_ref()
                .ok_or_else(|| ExtractError::Layout { source_id: spec.id.clone(), detail: "missing layout".into() })?;
            extract_fixed(spec, layout, bytes)
        }
        SourceKind::Delimited | SourceKind::SheetExport => extract_delimited(spec, bytes),
    }
}

fn extract_fixed(spec: &SourceSpec, layout: &FixedWidthLayout, bytes: &[u8]) -> Result<StagingBatch, ExtractError> {
    if let Some(detail) = layout.check().into_iter().next() {
        return Err(ExtractError::Layout { source_id: spec.id.clone(), detail });
    }
    let fields = layout.fields.iter().map(|f| f.name.clone()).collect();
    let mut batch = StagingBatch::new(spec.id.clone(), spec.priority, fields);
    for (i, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let line = i as u64 + 1;
        let record = raw.strip_suffix(b"\r").unwrap_or(raw);
        if record.is_empty() {
            continue;
        }
        if record.len() != layout.record_length {
            return Err(ExtractError::RecordLength {
                source_id: spec.id.clone(),
                line,
                expected: layout.record_length,
                got: record.len(),
            });
        }
        let mut row = Vec::with_capacity(layout.fields.len());
        for f in &layout.fields {
            let cell = &record[f.offset..f.offset + f.width];
            let (v, degraded) = parse_fixed(cell, f.kind);
            batch.cleaned_cells += u64::from(degraded);
            row.push(v);
        }
        batch.push(line, row);
    }
    Ok(batch)
}

/// Parses one fixed-width cell. The flag is set when non-blank input could not be read.
fn parse_fixed(cell: &[u8], kind: FieldKind) -> (Value, bool) {
    let text = String::from_utf8_lossy(cell);
    let t = text.trim();
    if t.is_empty() {
        return (Value::Missing, false);
    }
    let parsed = match kind {
        FieldKind::Text => Some(Value::Text(t.to_string())),
        FieldKind::Integer => t.parse::<i64>().ok().map(Value::Int),
        FieldKind::DateYyyymmdd => {
            if t.bytes().all(|b| b == b'0') {
                return (Value::Missing, false);
            }
            parse_compact_date(t).map(Value::Date)
        }
        FieldKind::ZonedAmount => decode_zoned(t).map(Value::Int),
    };
    match parsed {
        Some(v) => (v, false),
        None => (Value::Missing, true),
    }
}

/// Decodes a signed zoned-decimal (overpunched) integer: the last byte carries
/// the sign, `{`/`A`..`I` for +0..+9 and `}`/`J`..`R` for -0..-9. A plain
/// trailing digit means positive.
pub fn decode_zoned(s: &str) -> Option<i64> {
    let b = s.as_bytes();
    let (&last, head) = b.split_last()?;
    if !head.iter().all(u8::is_ascii_digit) {
        return None;
    }
    let (digit, negative) = match last {
        b'0'..=b'9' => (last - b'0', false),
        b'{' => (0, false),
        b'A'..=b'I' => (last - b'A' + 1, false),
        b'}' => (0, true),
        b'J'..=b'R' => (last - b'J' + 1, true),
        _ => return None,
    };
    let mut v: i64 = 0;
    for &d in head {
        v = v.checked_mul(10)?.checked_add(i64::from(d - b'0'))?;
    }
    v = v.checked_mul(10)?.checked_add(i64::from(digit))?;
    Some(if negative { -v } else { v })
}

/// Inverse of [`decode_zoned`], left-padded with zeros to `width`.
pub fn encode_zoned(v: i64, width: usize) -> String {
    let mag = v.unsigned_abs().to_string();
    let (head, last) = mag.split_at(mag.len() - 1);
    let d = last.as_bytes()[0] - b'0';
    let punch = if v < 0 {
        if d == 0 {
            '}'
        } else {
            (b'J' + d - 1) as char
        }
    } else if d == 0 {
        '{'
    } else {
        (b'A' + d - 1) as char
    };
    format!("{head:0>w$}{punch}", w = width.saturating_sub(1))
}

fn extract_delimited(spec: &SourceSpec, bytes: &[u8]) -> Result<StagingBatch, ExtractError> {
    let sheet = spec.kind == SourceKind::SheetExport;
    let mut reader =
        csv::ReaderBuilder::new().delimiter(spec.delimiter_byte()).has_headers(false).flexible(true).from_reader(bytes);
    let malformed = |line: u64, detail: String| ExtractError::Malformed { source_id: spec.id.clone(), line, detail };

    let mut records = reader.byte_records();
    let header: Vec<String> = if spec.header {
        match records.next() {
            None => return Ok(StagingBatch::new(spec.id.clone(), spec.priority, Vec::new())),
            Some(r) => {
                let r = r.map_err(|e| malformed(1, e.to_string()))?;
                r.iter().map(|f| String::from_utf8_lossy(f).trim().trim_start_matches('\u{feff}').to_string()).collect()
            }
        }
    } else {
        Vec::new()
    };
    let mut batch: Option<StagingBatch> =
        spec.header.then(|| StagingBatch::new(spec.id.clone(), spec.priority, header.clone()));
    let types: Vec<ColumnType> =
        header.iter().map(|h| spec.types.get(h).copied().unwrap_or(ColumnType::Text)).collect();

    for rec in records {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(malformed(line, e.to_string()));
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let b = batch.get_or_insert_with(|| {
            // headerless: columns are named c0, c1, ...
            let names = (0..rec.len()).map(|i| format!("c{i}")).collect();
            StagingBatch::new(spec.id.clone(), spec.priority, names)
        });
        if rec.len() == 1 && rec[0].iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        if rec.len() != b.fields.len() {
            let raw: Vec<String> = rec.iter().map(|f| String::from_utf8_lossy(f).into_owned()).collect();
            b.reject(
                line,
                format!("expected {} fields, got {}", b.fields.len(), rec.len()),
                raw.join(&(spec.delimiter_byte() as char).to_string()),
            );
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (i, f) in rec.iter().enumerate() {
            let text = String::from_utf8_lossy(f);
            let kind =
                if spec.header { types[i] } else { spec.types.get(&b.fields[i]).copied().unwrap_or(ColumnType::Text) };
            let (v, degraded) = parse_delimited(text.trim(), kind, sheet);
            b.cleaned_cells += u64::from(degraded);
            row.push(v);
        }
        b.push(line, row);
    }
    Ok(batch.unwrap_or_else(|| StagingBatch::new(spec.id.clone(), spec.priority, Vec::new())))
}

fn parse_delimited(t: &str, kind: ColumnType, sheet: bool) -> (Value, bool) {
    if t.is_empty() {
        return (Value::Missing, false);
    }
    let number = |t: &str| -> String {
        let t: String = t.chars().filter(|c| !c.is_whitespace() && *c != '\u{a0}').collect();
        if sheet {
            t.replace(',', ".")
        } else {
            t
        }
    };
    let parsed = match kind {
        ColumnType::Text => Some(Value::Text(t.to_string())),
        ColumnType::Integer | ColumnType::Amount => number(t).parse::<i64>().ok().map(Value::Int),
        ColumnType::Decimal => number(t).parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::Float),
        ColumnType::Date => if sheet { parse_sheet_date(t) } else { parse_iso_date(t) }.map(Value::Date),
    };
    match parsed {
        Some(v) => (v, false),
        None => (Value::Missing, true),
    }
}

/// `dd/mm/yyyy`.
pub fn parse_sheet_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%d/%m/%Y").ok()
}

pub fn format_sheet_date(d: NaiveDate) -> String {
    d.format("%d/%m/%Y").to_string()
}
