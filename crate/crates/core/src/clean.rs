//! Cleaning transformations applied to staging batches: mean and regression
//! imputation, equal-frequency bin smoothing, z-score standardization, value
//! correction, and priority-based consolidation of overlapping sources.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use hashbrown::HashMap;
use thiserror::Error;

use crate::value::{ScalarKind, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CleanError {
    #[error("column '{0}' has no non-missing values")]
    AllMissing(String),
    #[error("regression needs at least 2 complete pairs, found {0}")]
    InsufficientPairs(usize),
    #[error("predictor column has missing values")]
    PredictorMissing,
    #[error("target and predictor lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("bin count {k} must be in 1..={n}")]
    InvalidBinCount { k: usize, n: usize },
    #[error("cannot clean an empty column")]
    Empty,
    #[error("standardization needs at least 2 values")]
    TooFewValues,
    #[error("column has zero variance")]
    ZeroVariance,
    #[error("column '{0}' still has missing values")]
    MissingValues(String),
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("predictor must differ from the cleaned column")]
    SelfPredictor,
}

/// Compensated (Neumaier) summation.
fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = s + v;
        if libm::fabs(s) >= libm::fabs(v) {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

fn mean(values: &[f64]) -> f64 {
    sum(values.iter().copied()) / values.len() as f64
}

/// Replaces missing entries by the mean of the present ones.
pub fn impute_mean(values: &[Option<f64>]) -> Result<Vec<f64>, CleanError> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(CleanError::AllMissing(String::new()));
    }
    let m = mean(&present);
    Ok(values.iter().map(|v| v.unwrap_or(m)).collect())
}

/// Outcome of [`impute_regression`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionImputation {
    pub values: Vec<f64>,
    /// `(intercept, slope)` of the fitted line; `None` after a mean fallback.
    pub fit: Option<(f64, f64)>,
    pub fell_back_to_mean: bool,
}

/// Single-predictor ordinary least squares `y = a + b·x` over the complete pairs.
/// A predictor without variance cannot be fitted and degrades to mean imputation.
pub fn impute_regression(target: &[Option<f64>], predictor: &[f64]) -> Result<RegressionImputation, CleanError> {
    if target.len() != predictor.len() {
        return Err(CleanError::LengthMismatch(target.len(), predictor.len()));
    }
    let pairs: Vec<(f64, f64)> = target.iter().zip(predictor).filter_map(|(y, x)| y.map(|y| (*x, y))).collect();
    if pairs.len() < 2 {
        return Err(CleanError::InsufficientPairs(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mx = sum(pairs.iter().map(|p| p.0)) / n;
    let my = sum(pairs.iter().map(|p| p.1)) / n;
    let sxx = sum(pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)));
    if sxx == 0.0 {
        return Ok(RegressionImputation { values: impute_mean(target)?, fit: None, fell_back_to_mean: true });
    }
    let sxy = sum(pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    let b = sxy / sxx;
    let a = my - b * mx;
    let values = target.iter().zip(predictor).map(|(y, x)| y.unwrap_or(a + b * x)).collect();
    Ok(RegressionImputation { values, fit: Some((a, b)), fell_back_to_mean: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinMode {
    Means,
    Boundaries,
}

impl BinMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "means" => Some(BinMode::Means),
            "boundaries" => Some(BinMode::Boundaries),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinMode::Means => "means",
            BinMode::Boundaries => "boundaries",
        }
    }
}

/// Equal-frequency binning: the sorted column is cut into `k` bins, the first
/// `n % k` bins holding one extra element. Output keeps the input order.
pub fn smooth_bins(values: &[f64], k: usize, mode: BinMode) -> Result<Vec<f64>, CleanError> {
    let n = values.len();
    if n == 0 {
        return Err(CleanError::Empty);
    }
    if k == 0 || k > n {
        return Err(CleanError::InvalidBinCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let base = n / k;
    let extra = n % k;
    let mut out = vec![0.0; n];
    let mut start = 0;
    for bin in 0..k {
        let len = base + usize::from(bin < extra);
        let members = &order[start..start + len];
        match mode {
            BinMode::Means => {
                let m = sum(members.iter().map(|&i| values[i])) / len as f64;
                for &i in members {
                    out[i] = m;
                }
            }
            BinMode::Boundaries => {
                let lo = values[members[0]];
                let hi = values[members[len - 1]];
                for &i in members {
                    let v = values[i];
                    out[i] = if v - lo <= hi - v { lo } else { hi };
                }
            }
        }
        start += len;
    }
    Ok(out)
}

/// Z-scores with the population standard deviation.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>, CleanError> {
    if values.len() < 2 {
        return Err(CleanError::TooFewValues);
    }
    let m = mean(values);
    let mut dev: Vec<f64> = values.iter().map(|v| v - m).collect();
    // second pass removes the rounding error of `m`
    let c = mean(&dev);
    for d in &mut dev {
        *d -= c;
    }
    let var = sum(dev.iter().map(|d| d * d)) / values.len() as f64;
    if var == 0.0 {
        return Err(CleanError::ZeroVariance);
    }
    let sd = libm::sqrt(var);
    Ok(dev.into_iter().map(|d| d / sd).collect())
}

/// Source position of a staging row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub source: String,
    pub line: u64,
    pub reason: String,
    pub raw: String,
}

/// Rows extracted from one source. Every row has one value per entry of `fields`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagingBatch {
    pub source: String,
    pub priority: i64,
    pub fields: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Input line (1-based) of each row.
    pub lines: Vec<u64>,
    pub rejects: Vec<Reject>,
    /// Cells degraded to missing during extraction or modified by cleaning.
    pub cleaned_cells: u64,
}

impl StagingBatch {
    pub fn new(source: impl Into<String>, priority: i64, fields: Vec<String>) -> Self {
        StagingBatch {
            source: source.into(),
            priority,
            fields,
            rows: Vec::new(),
            lines: Vec::new(),
            rejects: Vec::new(),
            cleaned_cells: 0,
        }
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f == name)
    }

    pub fn push(&mut self, line: u64, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.fields.len());
        self.rows.push(row);
        self.lines.push(line);
    }

    pub fn reject(&mut self, line: u64, reason: impl Into<String>, raw: impl Into<String>) {
        self.rejects.push(Reject { source: self.source.clone(), line, reason: reason.into(), raw: raw.into() });
    }

    /// Number of records read from the source: kept rows plus rejects.
    pub fn extracted(&self) -> usize {
        self.rows.len() + self.rejects.len()
    }

    pub fn column(&self, name: &str) -> Option<impl Iterator<Item = &Value> + '_> {
        let i = self.field_index(name)?;
        Some(self.rows.iter().map(move |r| &r[i]))
    }

    pub fn missing_in(&self, name: &str) -> Option<usize> {
        Some(self.column(name)?.filter(|v| v.is_missing()).count())
    }

    fn output_index(&mut self, name: &str) -> usize {
        match self.field_index(name) {
            Some(i) => i,
            None => {
                self.fields.push(name.to_string());
                for r in &mut self.rows {
                    r.push(Value::Missing);
                }
                self.fields.len() - 1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CleanAction {
    ImputeMean,
    ImputeRegression { predictor: String },
    SmoothBins { k: usize, mode: BinMode },
    Standardize,
    Correct(BTreeMap<String, String>),
}

/// One cleaning step. With `output` set, results go to that (possibly new)
/// derived column and the source column is left as is.
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningRule {
    pub column: String,
    pub action: CleanAction,
    pub output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RuleOutcome {
    pub changed_cells: u64,
    pub fell_back_to_mean: bool,
}

/// Applies `rule` to `batch`, adding the number of modified cells to
/// `batch.cleaned_cells`.
pub fn apply_rule(batch: &mut StagingBatch, rule: &CleaningRule) -> Result<RuleOutcome, CleanError> {
    let col = batch.field_index(&rule.column).ok_or_else(|| CleanError::UnknownColumn(rule.column.clone()))?;
    let name = || rule.column.clone();
    let numeric: Vec<Option<f64>> = batch.rows.iter().map(|r| r[col].as_f64()).collect();
    let complete = || -> Result<Vec<f64>, CleanError> {
        numeric.iter().map(|v| v.ok_or_else(|| CleanError::MissingValues(name()))).collect()
    };

    let mut fell_back = false;
    let new_values: Vec<Value> = match &rule.action {
        CleanAction::ImputeMean => {
            let filled = impute_mean(&numeric).map_err(|_| CleanError::AllMissing(name()))?;
            keep_present(&batch.rows, col, filled)
        }
        CleanAction::ImputeRegression { predictor } => {
            if predictor == &rule.column {
                return Err(CleanError::SelfPredictor);
            }
            let p = batch.field_index(predictor).ok_or_else(|| CleanError::UnknownColumn(predictor.clone()))?;
            let xs: Vec<f64> = batch
                .rows
                .iter()
                .map(|r| r[p].as_f64().ok_or(CleanError::PredictorMissing))
                .collect::<Result<_, _>>()?;
            let fit = impute_regression(&numeric, &xs).map_err(|e| match e {
                CleanError::AllMissing(_) => CleanError::AllMissing(name()),
                other => other,
            })?;
            fell_back = fit.fell_back_to_mean;
            keep_present(&batch.rows, col, fit.values)
        }
        CleanAction::SmoothBins { k, mode } => {
            smooth_bins(&complete()?, *k, *mode)?.into_iter().map(Value::Float).collect()
        }
        CleanAction::Standardize => standardize(&complete()?)?.into_iter().map(Value::Float).collect(),
        CleanAction::Correct(map) => batch
            .rows
            .iter()
            .map(|r| match map.get(r[col].render().trim()) {
                Some(fixed) => Value::Text(fixed.clone()),
                None => r[col].clone(),
            })
            .collect(),
    };

    let out = match &rule.output {
        Some(o) => batch.output_index(o),
        None => col,
    };
    let mut changed = 0;
    for (row, v) in batch.rows.iter_mut().zip(new_values) {
        if row[out] != v {
            changed += 1;
            row[out] = v;
        }
    }
    batch.cleaned_cells += changed;
    Ok(RuleOutcome { changed_cells: changed, fell_back_to_mean: fell_back })
}

/// Present cells keep their original value (and kind); missing ones take the imputed float.
fn keep_present(rows: &[Vec<Value>], col: usize, filled: Vec<f64>) -> Vec<Value> {
    rows.iter()
        .zip(filled)
        .map(|(r, f)| match r[col].as_f64() {
            Some(_) => r[col].clone(),
            None => Value::Float(f),
        })
        .collect()
}

/// An attribute disagreement settled by source priority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictLog {
    pub key: String,
    pub field: String,
    pub winner_source: String,
    pub winner_value: String,
    pub loser_source: String,
    pub loser_value: String,
}

/// Output of [`resolve_conflicts`]: one row per natural key over the union of fields.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Consolidation {
    pub fields: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub keys: Vec<String>,
    pub conflicts: Vec<ConflictLog>,
    pub rejects: Vec<Reject>,
    /// Rows accepted into consolidation, per source id.
    pub accepted: BTreeMap<String, usize>,
    /// Accepted rows that merged into an already-seen key.
    pub deduplicated: usize,
}

/// Merges batches describing the same dimension. Per attribute, the highest-priority
/// source with a present value wins (ties go to the earlier batch); every losing
/// disagreement is logged. A natural key repeated inside one source is rejected.
pub fn resolve_conflicts(
    batches: &[StagingBatch],
    natural_key: &str,
    key_kind: ScalarKind,
) -> Result<Consolidation, CleanError> {
    let mut fields: Vec<String> = Vec::new();
    for b in batches {
        if b.field_index(natural_key).is_none() && !b.rows.is_empty() {
            return Err(CleanError::UnknownColumn(natural_key.to_string()));
        }
        for f in &b.fields {
            if !fields.contains(f) {
                fields.push(f.clone());
            }
        }
    }

    // Gather candidate rows per key in first-appearance order.
    struct Candidate<'a> {
        batch: usize,
        row: &'a [Value],
    }
    let mut out = Consolidation { fields: fields.clone(), ..Default::default() };
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut candidates: Vec<Vec<Candidate>> = Vec::new();
    for (bi, b) in batches.iter().enumerate() {
        let Some(ki) = b.field_index(natural_key) else { continue };
        let mut seen_here: HashMap<String, ()> = HashMap::new();
        let mut accepted = 0;
        for (row, &line) in b.rows.iter().zip(&b.lines) {
            let Some(key) = row[ki].render_as(key_kind) else {
                out.rejects.push(Reject {
                    source: b.source.clone(),
                    line,
                    reason: alloc::format!("missing natural key {natural_key}"),
                    raw: render_row(row),
                });
                continue;
            };
            if seen_here.insert(key.clone(), ()).is_some() {
                out.rejects.push(Reject {
                    source: b.source.clone(),
                    line,
                    reason: alloc::format!("duplicate natural key {key} within source"),
                    raw: render_row(row),
                });
                continue;
            }
            accepted += 1;
            match slot.get(&key) {
                Some(&s) => {
                    candidates[s].push(Candidate { batch: bi, row });
                    out.deduplicated += 1;
                }
                None => {
                    slot.insert(key.clone(), candidates.len());
                    out.keys.push(key);
                    candidates.push(vec![Candidate { batch: bi, row }]);
                }
            }
        }
        *out.accepted.entry(b.source.clone()).or_default() += accepted;
    }

    for (key, mut cands) in out.keys.iter().zip(candidates) {
        cands.sort_by(|a, b| batches[b.batch].priority.cmp(&batches[a.batch].priority).then(a.batch.cmp(&b.batch)));
        let mut merged = Vec::with_capacity(fields.len());
        for f in &fields {
            if f == natural_key {
                merged.push(Value::Text(key.clone()));
                continue;
            }
            let mut winner: Option<(&Candidate, &Value)> = None;
            for c in &cands {
                let Some(fi) = batches[c.batch].field_index(f) else { continue };
                let v = &c.row[fi];
                if v.is_missing() {
                    continue;
                }
                match winner {
                    None => winner = Some((c, v)),
                    Some((w, wv)) => {
                        if wv.render().trim() != v.render().trim() {
                            out.conflicts.push(ConflictLog {
                                key: key.clone(),
                                field: f.clone(),
                                winner_source: batches[w.batch].source.clone(),
                                winner_value: wv.render(),
                                loser_source: batches[c.batch].source.clone(),
                                loser_value: v.render(),
                            });
                        }
                    }
                }
            }
            merged.push(winner.map(|(_, v)| v.clone()).unwrap_or(Value::Missing));
        }
        out.rows.push(merged);
    }
    Ok(out)
}

fn render_row(row: &[Value]) -> String {
    let mut s = String::new();
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push('|');
        }
        s.push_str(&v.render());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| libm::fabs(x - y) <= tol)
    }

    #[test]
    fn mean_imputation() {
        assert_eq!(impute_mean(&[Some(2.0), None, Some(4.0)]).unwrap(), vec![2.0, 3.0, 4.0]);
        assert_eq!(impute_mean(&[Some(1.5), Some(-2.0)]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(impute_mean(&[None, Some(5.0)]).unwrap(), vec![5.0, 5.0]);
        assert!(matches!(impute_mean(&[None, None]), Err(CleanError::AllMissing(_))));
    }

    /// Closed-form simple linear regression, written out independently of the
    /// implementation: b = (nΣxy − ΣxΣy)/(nΣx² − (Σx)²), a = (Σy − bΣx)/n.
    fn ols_oracle(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        ((sy - b * sx) / n, b)
    }

    #[test]
    fn regression_imputation() {
        let r = impute_regression(&[Some(1.0), Some(2.0), None], &[1.0, 2.0, 4.0]).unwrap();
        assert!(close(&r.values, &[1.0, 2.0, 4.0], 1e-12));

        let r = impute_regression(&[Some(3.0), Some(3.0), None], &[1.0, 2.0, 9.0]).unwrap();
        assert!(close(&r.values, &[3.0, 3.0, 3.0], 1e-12));

        let (a, b) = ols_oracle(&[1.0, 2.0, 3.0], &[1.0, 2.1, 2.9]);
        // x̄ = 2, ȳ = 2, b = 1.9 / 2 = 0.95, a = 0.1 → a + 4b = 3.9
        assert!(libm::fabs(a + 4.0 * b - 3.9) < 1e-12);
        let r = impute_regression(&[Some(1.0), Some(2.1), Some(2.9), None], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(libm::fabs(r.values[3] - (a + 4.0 * b)) < 1e-12);
        assert_eq!(&r.values[..3], &[1.0, 2.1, 2.9]);
    }

    #[test]
    fn regression_degenerate_falls_back() {
        let r = impute_regression(&[Some(1.0), Some(3.0), None], &[5.0, 5.0, 7.0]).unwrap();
        assert!(r.fell_back_to_mean);
        assert_eq!(r.values, vec![1.0, 3.0, 2.0]);
        assert_eq!(impute_regression(&[Some(1.0), None], &[1.0, 2.0]), Err(CleanError::InsufficientPairs(1)));
    }

    const BOOK: [f64; 9] = [4.0, 8.0, 15.0, 21.0, 21.0, 24.0, 25.0, 28.0, 34.0];

    #[test]
    fn bins_means() {
        let out = smooth_bins(&BOOK, 3, BinMode::Means).unwrap();
        assert_eq!(out, vec![9.0, 9.0, 9.0, 22.0, 22.0, 22.0, 29.0, 29.0, 29.0]);
        let global = smooth_bins(&[1.0, 2.0, 6.0], 1, BinMode::Means).unwrap();
        assert_eq!(global, vec![3.0; 3]);
    }

    /// Nearer-endpoint rule evaluated by hand per bin:
    /// [4,8,15] → 4,4,15; [21,21,24] → 21,21,24; [25,28,34] → 25,25,34.
    #[test]
    fn bins_boundaries() {
        let out = smooth_bins(&BOOK, 3, BinMode::Boundaries).unwrap();
        assert_eq!(out, vec![4.0, 4.0, 15.0, 21.0, 21.0, 24.0, 25.0, 25.0, 34.0]);
        // tie goes to the lower endpoint
        assert_eq!(smooth_bins(&[0.0, 1.0, 2.0], 1, BinMode::Boundaries).unwrap(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn bins_keep_input_order_and_remainder_goes_first() {
        // 5 values, 2 bins → sizes 3 and 2
        let out = smooth_bins(&[50.0, 1.0, 40.0, 2.0, 3.0], 2, BinMode::Means).unwrap();
        assert_eq!(out, vec![45.0, 2.0, 45.0, 2.0, 2.0]);
        assert_eq!(smooth_bins(&[1.0], 2, BinMode::Means), Err(CleanError::InvalidBinCount { k: 2, n: 1 }));
        assert_eq!(smooth_bins(&[1.0], 0, BinMode::Means), Err(CleanError::InvalidBinCount { k: 0, n: 1 }));
    }

    #[test]
    fn standardize_values() {
        assert!(close(&standardize(&[1.0, 3.0]).unwrap(), &[-1.0, 1.0], 1e-15));
        // μ = 20, σ = sqrt(200/3)
        let sd = libm::sqrt(200.0 / 3.0);
        let expected = [-10.0 / sd, 0.0, 10.0 / sd];
        let got = standardize(&[10.0, 20.0, 30.0]).unwrap();
        assert!(close(&got, &expected, 1e-12));
        assert!(libm::fabs(got[0] + 1.224_744_871_391_589) < 1e-12);
        assert_eq!(standardize(&[2.0, 2.0]), Err(CleanError::ZeroVariance));
        assert_eq!(standardize(&[2.0]), Err(CleanError::TooFewValues));
    }

    fn batch(source: &str, priority: i64, rows: &[(&str, &str)]) -> StagingBatch {
        let mut b = StagingBatch::new(source, priority, vec!["code_br".into(), "nom_br".into()]);
        for (i, (k, n)) in rows.iter().enumerate() {
            b.push(i as u64 + 1, vec![Value::Text(k.to_string()), Value::Text(n.to_string())]);
        }
        b
    }

    #[test]
    fn consolidation_identical_rows_merge() {
        let a = batch("a", 1, &[("10", "ARIANA")]);
        let b = batch("b", 1, &[("10", "ARIANA")]);
        let c = resolve_conflicts(&[a, b], "code_br", ScalarKind::Integer).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert!(c.conflicts.is_empty());
        assert_eq!(c.deduplicated, 1);
    }

    #[test]
    fn consolidation_priority_wins() {
        let low = batch("low", 1, &[("10", "ARIANA N.")]);
        let high = batch("high", 2, &[("010", "ARIANA")]);
        let c = resolve_conflicts(&[low, high], "code_br", ScalarKind::Integer).unwrap();
        assert_eq!(c.rows, vec![vec![Value::Text("10".into()), Value::Text("ARIANA".into())]]);
        assert_eq!(c.conflicts.len(), 1);
        let name = &c.conflicts[0];
        assert_eq!((name.winner_value.as_str(), name.loser_value.as_str()), ("ARIANA", "ARIANA N."));
    }

    #[test]
    fn consolidation_of_overlapping_sources() {
        let rows: Vec<(alloc::string::String, alloc::string::String)> =
            (1..=41).map(|i| (i.to_string(), alloc::format!("OFFICE {i}"))).collect();
        let refs: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let batches = [batch("s1", 3, &refs), batch("s2", 2, &refs), batch("s3", 1, &refs)];
        let c = resolve_conflicts(&batches, "code_br", ScalarKind::Integer).unwrap();
        assert_eq!(c.rows.len(), 41);
        assert_eq!(c.deduplicated, 82);
        assert!(c.conflicts.is_empty());
    }

    #[test]
    fn duplicate_key_within_source_is_rejected() {
        let a = batch("a", 1, &[("10", "ARIANA"), ("10", "ARIANA BIS"), ("", "NOKEY")]);
        let c = resolve_conflicts(&[a], "code_br", ScalarKind::Integer).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rejects.len(), 2);
        assert_eq!(c.accepted["a"], 1);
    }

    #[test]
    fn rule_application_counts_cells() {
        let mut b = StagingBatch::new("s", 0, vec!["x".into(), "y".into()]);
        b.push(1, vec![Value::Int(2), Value::Int(1)]);
        b.push(2, vec![Value::Missing, Value::Int(2)]);
        b.push(3, vec![Value::Int(4), Value::Int(3)]);
        let out =
            apply_rule(&mut b, &CleaningRule { column: "x".into(), action: CleanAction::ImputeMean, output: None })
                .unwrap();
        assert_eq!(out.changed_cells, 1);
        assert_eq!(b.rows[1][0], Value::Float(3.0));
        assert_eq!(b.rows[0][0], Value::Int(2));

        let out = apply_rule(
            &mut b,
            &CleaningRule { column: "y".into(), action: CleanAction::Standardize, output: Some("y_z".into()) },
        )
        .unwrap();
        assert_eq!(out.changed_cells, 3);
        assert_eq!(b.fields, vec!["x", "y", "y_z"]);
        assert_eq!(b.cleaned_cells, 4);

        let err = apply_rule(
            &mut b,
            &CleaningRule {
                column: "x".into(),
                action: CleanAction::ImputeRegression { predictor: "x".into() },
                output: None,
            },
        );
        assert_eq!(err, Err(CleanError::SelfPredictor));
    }
}
