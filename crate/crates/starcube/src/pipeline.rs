//! The ETL run: extract every source, clean, consolidate dimensions, load facts
//! and commit, all against a copy of the state that replaces the original only
//! when the whole run succeeds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};
use starcube_core::clean::{apply_rule, resolve_conflicts, ConflictLog, Reject, StagingBatch};
use starcube_core::store::{FactRecord, Record};
use starcube_core::value::{NaiveDate, ScalarKind, Value};

use crate::config::{PipelineConfig, SourceSpec};
use crate::error::{Error, Result};
use crate::extract::{extract_bytes, ExtractError};
use crate::state::{State, WarehouseDir};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SourceReport {
    pub id: String,
    pub target: String,
    /// Already loaded by an earlier run (same id and bytes).
    pub skipped: bool,
    pub extracted: usize,
    pub loaded: usize,
    pub rejected: usize,
    pub cleaned_cells: u64,
    pub reject_reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub inserted: usize,
    pub deduplicated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictDoc {
    pub target: String,
    pub key: String,
    pub field: String,
    pub winner_source: String,
    pub winner_value: String,
    pub loser_source: String,
    pub loser_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EtlReport {
    pub sources: Vec<SourceReport>,
    pub targets: Vec<TargetReport>,
    pub conflicts: Vec<ConflictDoc>,
    /// Regression imputations that fell back to the mean, as `source.column`.
    pub fallbacks: Vec<String>,
    pub committed: bool,
    pub epoch: u64,
    pub refreshed_views: Vec<String>,
}

impl EtlReport {
    pub fn source(&self, id: &str) -> Option<&SourceReport> {
        self.sources.iter().find(|s| s.id == id)
    }

    pub fn target(&self, name: &str) -> Option<&TargetReport> {
        self.targets.iter().find(|t| t.target == name)
    }

    /// True when extracted = loaded + rejected for every source.
    pub fn reconciles(&self) -> bool {
        self.sources.iter().all(|s| s.extracted == s.loaded + s.rejected)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

impl fmt::Display for EtlReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.sources {
            if s.skipped {
                writeln!(f, "source {} -> {}: skipped (already loaded)", s.id, s.target)?;
                continue;
            }
            writeln!(
                f,
                "source {} -> {}: extracted {}, loaded {}, rejected {}, cleaned cells {}",
                s.id, s.target, s.extracted, s.loaded, s.rejected, s.cleaned_cells
            )?;
            for (reason, n) in &s.reject_reasons {
                writeln!(f, "  {n} x {reason}")?;
            }
        }
        for t in &self.targets {
            writeln!(f, "target {}: inserted {}, deduplicated {}", t.target, t.inserted, t.deduplicated)?;
        }
        if !self.conflicts.is_empty() {
            writeln!(f, "conflicts resolved by priority: {}", self.conflicts.len())?;
        }
        for fb in &self.fallbacks {
            writeln!(f, "regression fell back to mean: {fb}")?;
        }
        let state = if self.committed { "committed" } else { "unchanged" };
        writeln!(f, "epoch {} ({state})", self.epoch)?;
        if !self.refreshed_views.is_empty() {
            writeln!(f, "views refreshed: {}", self.refreshed_views.join(", "))?;
        }
        Ok(())
    }
}

/// Result of a successful run.
#[derive(Debug, Clone)]
pub struct EtlOutcome {
    pub state: State,
    pub report: EtlReport,
    pub rejects: Vec<Reject>,
}

/// Identifies a source's content: its id and exact bytes.
pub fn batch_fingerprint(id: &str, bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(id.as_bytes());
    h.write_u8(0);
    h.write(bytes);
    h.finish()
}

fn abort(error: Error, report: &EtlReport) -> Error {
    Error::Etl { error: Box::new(error), report: Box::new(report.clone()) }
}

struct Extracted {
    index: usize,
    fingerprint: u64,
    batch: StagingBatch,
}

/// Runs `cfg` against a copy of `state`.
pub fn run_pipeline(cfg: &PipelineConfig, state: &State) -> Result<EtlOutcome> {
    let mut report = EtlReport {
        sources: cfg
            .sources
            .iter()
            .map(|s| SourceReport { id: s.id.clone(), target: s.target.clone(), ..Default::default() })
            .collect(),
        epoch: state.wh.epoch(),
        ..Default::default()
    };
    cfg.check(state.schema()).map_err(|e| abort(e, &report))?;

    let mut next = state.clone();
    next.wh.set_unknown_policy(cfg.pipeline.unknown_members.into());
    next.define_views(&cfg.views).map_err(|e| abort(e, &report))?;

    // Sources are independent until load: read and extract them in parallel.
    let read: Vec<std::result::Result<Option<Extracted>, ExtractError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .sources
            .iter()
            .enumerate()
            .map(|(index, spec)| {
                let wh = &next.wh;
                scope.spawn(move || read_source(index, spec, |fp| wh.has_batch(fp)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    });
    let mut extracted = Vec::new();
    for (i, r) in read.into_iter().enumerate() {
        match r {
            Ok(Some(e)) => extracted.push(e),
            Ok(None) => report.sources[i].skipped = true,
            Err(e) => return Err(abort(e.into(), &report)),
        }
    }

    let mut rejects = Vec::new();
    for e in &mut extracted {
        let spec = &cfg.sources[e.index];
        for rule in &spec.clean {
            let rule = rule.to_rule().map_err(|m| abort(Error::Config(m), &report))?;
            let outcome = apply_rule(&mut e.batch, &rule).map_err(|err| {
                abort(Error::Data(format!("source {}: cleaning {}: {err}", spec.id, rule.column)), &report)
            })?;
            if outcome.fell_back_to_mean {
                report.fallbacks.push(format!("{}.{}", spec.id, rule.column));
            }
        }
        let r = &mut report.sources[e.index];
        r.extracted = e.batch.extracted();
        r.cleaned_cells = e.batch.cleaned_cells;
        for rej in &e.batch.rejects {
            r.rejected += 1;
            *r.reject_reasons.entry(rej.reason.clone()).or_default() += 1;
        }
        rejects.extend(e.batch.rejects.iter().cloned());
    }

    // Dimensions first, in schema order, then facts in config order.
    let schema = next.wh.schema_arc().clone();
    for dim in &schema.dimensions {
        let group: Vec<&Extracted> = extracted.iter().filter(|e| cfg.sources[e.index].target == dim.name).collect();
        if group.is_empty() {
            continue;
        }
        let batches: Vec<StagingBatch> = group.iter().map(|e| e.batch.clone()).collect();
        let key_attr = dim.natural_key();
        let key_kind = dim.attributes[dim.attribute_index(key_attr).expect("validated")].kind;
        let merged = resolve_conflicts(&batches, key_attr, key_kind)
            .map_err(|err| abort(Error::Data(format!("dimension {}: {err}", dim.name)), &report))?;

        let contributors = contributors(&batches, key_attr, key_kind);
        let mut loaded: HashMap<&str, usize> = merged.accepted.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let mut target = TargetReport { target: dim.name.clone(), inserted: 0, deduplicated: merged.deduplicated };
        let mut post_rejects: Vec<Reject> = merged.rejects.clone();
        for (key, row) in merged.keys.iter().zip(&merged.rows) {
            let mut rec = Record::new();
            let mut missing = None;
            for a in &dim.attributes {
                match merged.fields.iter().position(|f| f == &a.name).map(|i| &row[i]) {
                    Some(v) if !v.is_missing() => {
                        rec.insert(a.name.clone(), v.clone());
                    }
                    _ => {
                        missing.get_or_insert_with(|| a.name.clone());
                    }
                }
            }
            let failure = match missing {
                Some(a) => Some(format!("missing attribute {a}")),
                None => match next.wh.insert_members(&dim.name, std::slice::from_ref(&rec)) {
                    Ok(1) => {
                        target.inserted += 1;
                        None
                    }
                    Ok(_) => {
                        target.deduplicated += 1;
                        None
                    }
                    Err(e) => Some(e.to_string()),
                },
            };
            if let Some(reason) = failure {
                let raw = row.iter().map(Value::render).collect::<Vec<_>>().join("|");
                for (bi, line) in &contributors[key] {
                    let source = batches[*bi].source.clone();
                    *loaded.get_mut(source.as_str()).expect("accepted source") -= 1;
                    post_rejects.push(Reject { source, line: *line, reason: reason.clone(), raw: raw.clone() });
                }
            }
        }
        for e in &group {
            let r = &mut report.sources[e.index];
            r.loaded = loaded.get(r.id.as_str()).copied().unwrap_or(0);
        }
        for rej in post_rejects {
            let r = report.sources.iter_mut().find(|s| s.id == rej.source).expect("known source");
            r.rejected += 1;
            *r.reject_reasons.entry(rej.reason.clone()).or_default() += 1;
            rejects.push(rej);
        }
        report.conflicts.extend(merged.conflicts.iter().map(|c: &ConflictLog| ConflictDoc {
            target: dim.name.clone(),
            key: c.key.clone(),
            field: c.field.clone(),
            winner_source: c.winner_source.clone(),
            winner_value: c.winner_value.clone(),
            loser_source: c.loser_source.clone(),
            loser_value: c.loser_value.clone(),
        }));
        report.targets.push(target);
    }

    let mut fact_target = TargetReport { target: crate::config::FACT_TARGET.into(), ..Default::default() };
    let mut any_fact = false;
    for e in extracted.iter().filter(|e| cfg.sources[e.index].is_fact()) {
        any_fact = true;
        let (inserted, fact_rejects) = load_facts(&mut next, &e.batch).map_err(|err| abort(err, &report))?;
        let r = &mut report.sources[e.index];
        r.loaded = inserted;
        fact_target.inserted += inserted;
        for rej in fact_rejects {
            r.rejected += 1;
            *r.reject_reasons.entry(rej.reason.clone()).or_default() += 1;
            rejects.push(rej);
        }
    }
    if any_fact {
        report.targets.push(fact_target);
    }

    for e in &extracted {
        next.wh.record_batch(e.fingerprint);
    }
    report.committed = next.wh.commit();
    report.epoch = next.wh.epoch();
    if report.committed {
        next.cubes.retain_current(next.wh.epoch());
        if cfg.pipeline.auto_refresh {
            report.refreshed_views = next.views.refresh_all_stale(&next.wh).map_err(|e| abort(e.into(), &report))?;
        }
    }
    debug_assert!(report.reconciles());
    Ok(EtlOutcome { state: next, report, rejects })
}

fn read_source(
    index: usize,
    spec: &SourceSpec,
    loaded: impl Fn(u64) -> bool,
) -> std::result::Result<Option<Extracted>, ExtractError> {
    let bytes = std::fs::read(&spec.path).map_err(|error| {
        if error.kind() == std::io::ErrorKind::NotFound {
            ExtractError::MissingFile { source_id: spec.id.clone(), path: spec.path.clone() }
        } else {
            ExtractError::Io { source_id: spec.id.clone(), path: spec.path.clone(), error }
        }
    })?;
    let fingerprint = batch_fingerprint(&spec.id, &bytes);
    if loaded(fingerprint) {
        return Ok(None);
    }
    let batch = extract_bytes(spec, &bytes)?;
    Ok(Some(Extracted { index, fingerprint, batch }))
}

/// Per natural key, the (batch, line) of the first row of each batch carrying it.
fn contributors(batches: &[StagingBatch], key: &str, kind: ScalarKind) -> HashMap<String, Vec<(usize, u64)>> {
    let mut out: HashMap<String, Vec<(usize, u64)>> = HashMap::new();
    for (bi, b) in batches.iter().enumerate() {
        let Some(ki) = b.field_index(key) else {
            continue;
        };
        let mut seen = BTreeSet::new();
        for (row, line) in b.rows.iter().zip(&b.lines) {
            if let Some(k) = row[ki].render_as(kind) {
                if seen.insert(k.clone()) {
                    out.entry(k).or_default().push((bi, *line));
                }
            }
        }
    }
    out
}

/// Translates and appends one fact batch; returns (inserted, rejects).
fn load_facts(next: &mut State, batch: &StagingBatch) -> Result<(usize, Vec<Reject>)> {
    let schema = next.wh.schema_arc().clone();
    let ndims = schema.dimensions.len();
    let time = schema.time_dimension();
    let mut cols = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let column = schema.fact_key_column(d).expect("validated");
        let idx = batch.field_index(column);
        let dim = &schema.dimensions[d];
        let kind = dim.attributes[dim.attribute_index(dim.natural_key()).expect("validated")].kind;
        cols.push((column, idx, kind));
    }
    let measure = &schema.measure().name;
    let amount_idx = batch.field_index(measure);
    if batch.rows.is_empty() {
        return Ok((0, Vec::new()));
    }
    if let Some((column, _, _)) = cols.iter().find(|(_, i, _)| i.is_none()) {
        return Err(Error::Data(format!("fact source {} has no column {column}", batch.source)));
    }
    let amount_idx =
        amount_idx.ok_or_else(|| Error::Data(format!("fact source {} has no column {measure}", batch.source)))?;

    let route = next.wh.unknown_policy() == starcube_core::store::UnknownPolicy::RouteToUnknown;
    let mut rejects = Vec::new();
    let mut records = Vec::with_capacity(batch.rows.len());
    let mut lines = Vec::with_capacity(batch.rows.len());
    let mut days: BTreeSet<NaiveDate> = BTreeSet::new();
    let raw = |row: &[Value]| row.iter().map(Value::render).collect::<Vec<_>>().join("|");
    'rows: for (row, &line) in batch.rows.iter().zip(&batch.lines) {
        let mut keys = Vec::with_capacity(ndims);
        for (d, (column, idx, kind)) in cols.iter().enumerate() {
            let Some(k) = row[idx.expect("checked")].render_as(*kind) else {
                rejects.push(reject(batch, line, format!("missing key {column}"), raw(row)));
                continue 'rows;
            };
            if Some(d) != time && !route && next.wh.dimension(d).surrogate(&k).is_none() {
                rejects.push(reject(batch, line, format!("unresolved key {}", schema.dimensions[d].name), raw(row)));
                continue 'rows;
            }
            keys.push(k);
        }
        let Some(amount) = row[amount_idx].as_i64() else {
            rejects.push(reject(batch, line, format!("missing {measure}"), raw(row)));
            continue;
        };
        if let Some(t) = time {
            match row[cols[t].1.expect("checked")].as_date() {
                Some(day) => {
                    days.insert(day);
                }
                None => {
                    rejects.push(reject(batch, line, format!("invalid date {}", cols[t].0), raw(row)));
                    continue;
                }
            }
        }
        records.push(FactRecord { keys, amount });
        lines.push(line);
    }
    next.wh.ensure_time_members(days)?;
    let ins = next.wh.append_facts(&records);
    for (pos, reason) in ins.rejected {
        let r = &records[pos];
        rejects.push(reject(batch, lines[pos], reason, format!("{}|{}", r.keys.join("|"), r.amount)));
    }
    Ok((ins.inserted, rejects))
}

fn reject(batch: &StagingBatch, line: u64, reason: String, raw: String) -> Reject {
    Reject { source: batch.source.clone(), line, reason, raw }
}

/// Writes a run's results into `dir`: the state when it committed, the reject
/// log and `etl-report.json`.
pub fn persist(dir: &WarehouseDir, cfg: &PipelineConfig, out: &EtlOutcome) -> Result<()> {
    if out.report.committed {
        dir.save(&out.state)?;
    }
    write_reject_log(&dir.path(&cfg.pipeline.reject_log), &out.rejects)?;
    write_report(dir, &out.report)
}

pub fn write_report(dir: &WarehouseDir, report: &EtlReport) -> Result<()> {
    let path = dir.path("etl-report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))
}

/// Writes the reject log: delimited text with columns source, line, reason, raw.
pub fn write_reject_log(path: &std::path::Path, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["source", "line", "reason", "raw"]).map_err(io)?;
    for r in rejects {
        w.write_record([r.source.as_str(), &r.line.to_string(), &r.reason, &r.raw]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
