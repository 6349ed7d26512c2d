//! Columnar warehouse: dimension tables with dense surrogate keys and level
//! indexes, one foreign-key column per dimension plus the measure column, and
//! hierarchy-aware filtered scans.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use hashbrown::HashMap;
use thiserror::Error;

use crate::schema::{AttributeDef, DimensionDef, StarSchema, Violation};
use crate::value::{calendar_keys, parse_iso_date, ScalarKind, Value};

/// Key and label of the reserved surrogate 0 at every level.
pub const UNKNOWN_MEMBER: &str = "UNKNOWN";

/// Member attributes by name, as handed to [`Warehouse::insert_members`].
pub type Record = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("schema has {} violation(s)", .0.len())]
    InvalidSchema(Vec<Violation>),
    #[error("unknown dimension '{0}'")]
    UnknownDimension(String),
    #[error("dimension '{dimension}': member is missing attribute '{attribute}'")]
    MissingAttribute { dimension: String, attribute: String },
    #[error("dimension '{dimension}': attribute '{attribute}' value '{value}' is not a valid {kind}")]
    BadAttribute { dimension: String, attribute: String, value: String, kind: ScalarKind },
    #[error("dimension '{dimension}': {level} '{key}' already rolls up to '{existing}', not '{conflicting}'")]
    HierarchyConflict { dimension: String, level: String, key: String, existing: String, conflicting: String },
    #[error("dimension '{dimension}' has no level '{level}'")]
    UnknownLevel { dimension: String, level: String },
    #[error("'{member}' is not a member of {dimension}.{level}")]
    UnknownMember { dimension: String, level: String, member: String },
    #[error("time range requires a time dimension")]
    NoTimeDimension,
    #[error("time range {from} > {to}")]
    InvertedRange { from: NaiveDate, to: NaiveDate },
    #[error("fact row has {got} keys, schema has {want} dimensions")]
    KeyArity { got: usize, want: usize },
}

/// Members of one hierarchy level. Ids are dense per level, 0 being UNKNOWN.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelIndex {
    name: String,
    key_attr: usize,
    label_attr: usize,
    keys: Vec<String>,
    labels: Vec<String>,
    by_key: HashMap<String, u32>,
    /// Finest-level surrogate → id at this level.
    of_member: Vec<u32>,
    /// Id at this level → id at the next coarser level. Empty for the coarsest.
    parent: Vec<u32>,
}

impl LevelIndex {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of ids including UNKNOWN.
    pub fn cardinality(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, id: u32) -> &str {
        &self.keys[id as usize]
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn id(&self, key: &str) -> Option<u32> {
        self.by_key.get(key).copied()
    }

    pub fn of_member(&self) -> &[u32] {
        &self.of_member
    }

    pub fn parent_ids(&self) -> &[u32] {
        &self.parent
    }
}

/// A dimension's members stored column-wise; row 0 is the UNKNOWN member.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionTable {
    name: String,
    attributes: Vec<AttributeDef>,
    columns: Vec<Vec<String>>,
    natural: HashMap<String, u32>,
    levels: Vec<LevelIndex>,
    /// Parsed day of each member when this is the time dimension.
    dates: Vec<Option<NaiveDate>>,
    is_time: bool,
}

impl DimensionTable {
    fn new(def: &DimensionDef) -> Self {
        let attr = |name: &str| def.attribute_index(name).expect("validated schema");
        let levels = def
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| LevelIndex {
                name: l.name.clone(),
                key_attr: attr(&l.key_attribute),
                label_attr: attr(&l.label_attribute),
                keys: vec![UNKNOWN_MEMBER.to_string()],
                labels: vec![UNKNOWN_MEMBER.to_string()],
                by_key: HashMap::new(),
                of_member: vec![0],
                parent: if i + 1 < def.levels.len() { vec![0] } else { Vec::new() },
            })
            .collect();
        DimensionTable {
            name: def.name.clone(),
            attributes: def.attributes.clone(),
            columns: def.attributes.iter().map(|_| vec![UNKNOWN_MEMBER.to_string()]).collect(),
            natural: HashMap::new(),
            levels,
            dates: vec![None],
            is_time: def.is_time(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attributes(&self) -> &[AttributeDef] {
        &self.attributes
    }

    /// Members excluding UNKNOWN; also the largest surrogate.
    pub fn member_count(&self) -> usize {
        self.columns[0].len() - 1
    }

    pub fn surrogate(&self, natural_key: &str) -> Option<u32> {
        self.natural.get(natural_key).copied()
    }

    /// Column of attribute `i`, index 0 being UNKNOWN.
    pub fn column(&self, i: usize) -> &[String] {
        &self.columns[i]
    }

    pub fn attribute(&self, member: u32, name: &str) -> Option<&str> {
        let i = self.attributes.iter().position(|a| a.name == name)?;
        Some(&self.columns[i][member as usize])
    }

    pub fn levels(&self) -> &[LevelIndex] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &LevelIndex {
        &self.levels[i]
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }

    pub fn date_of(&self, member: u32) -> Option<NaiveDate> {
        self.dates.get(member as usize).copied().flatten()
    }

    pub fn is_time(&self) -> bool {
        self.is_time
    }

    /// Maps every id at level `from` to its ancestor id at level `to` (`to ≥ from`).
    pub fn ancestor_map(&self, from: usize, to: usize) -> Vec<u32> {
        debug_assert!(from <= to);
        let mut map: Vec<u32> = (0..self.levels[from].cardinality() as u32).collect();
        for l in from..to {
            let up = &self.levels[l].parent;
            for v in &mut map {
                *v = up[*v as usize];
            }
        }
        map
    }

    /// Ids at `level` whose parent (at `level + 1`) is `parent_id`.
    pub fn children(&self, level: usize, parent_id: u32) -> Vec<u32> {
        let up = &self.levels[level].parent;
        (1..up.len() as u32).filter(|&id| up[id as usize] == parent_id).collect()
    }

    /// Canonical attribute values of a record; time members derive their
    /// calendar attributes from the day when the record does not carry them.
    fn member_values(&self, rec: &Record) -> Result<Vec<String>, StoreError> {
        let mut derived: BTreeMap<&str, String> = BTreeMap::new();
        if self.is_time {
            let day_attr = &self.attributes[self.levels[0].key_attr].name;
            if let Some(d) = rec.get(day_attr).and_then(Value::as_date) {
                let (m, q, y) = calendar_keys(d);
                for (level, key) in self.levels.iter().skip(1).zip([m, q, y]) {
                    derived.insert(&self.attributes[level.key_attr].name, key.clone());
                    derived.insert(&self.attributes[level.label_attr].name, key);
                }
            }
        }
        self.attributes
            .iter()
            .map(|a| match rec.get(&a.name) {
                Some(v) if !v.is_missing() => v.render_as(a.kind).ok_or_else(|| StoreError::BadAttribute {
                    dimension: self.name.clone(),
                    attribute: a.name.clone(),
                    value: v.render(),
                    kind: a.kind,
                }),
                _ => derived.get(a.name.as_str()).cloned().ok_or_else(|| StoreError::MissingAttribute {
                    dimension: self.name.clone(),
                    attribute: a.name.clone(),
                }),
            })
            .collect()
    }

    /// Appends the rows whose natural key is new. All-or-nothing: any invalid
    /// row or hierarchy conflict leaves the table unchanged.
    fn insert(&mut self, rows: &[Record]) -> Result<usize, StoreError> {
        let key_attr = self.levels[0].key_attr;
        let mut fresh: Vec<Vec<String>> = Vec::new();
        let mut batch_keys: HashMap<String, ()> = HashMap::new();
        // (level, key) → parent key, for level keys first seen in this batch
        let mut pending_parent: HashMap<(usize, String), String> = HashMap::new();
        for rec in rows {
            let values = self.member_values(rec)?;
            let natural = &values[key_attr];
            if self.natural.contains_key(natural) || batch_keys.contains_key(natural) {
                continue;
            }
            for l in 0..self.levels.len().saturating_sub(1) {
                let key = &values[self.levels[l].key_attr];
                let parent_key = &values[self.levels[l + 1].key_attr];
                let existing = match self.levels[l].id(key) {
                    Some(id) => {
                        let p = self.levels[l].parent[id as usize];
                        Some(self.levels[l + 1].key(p).to_string())
                    }
                    None => pending_parent.get(&(l, key.clone())).cloned(),
                };
                match existing {
                    Some(e) if &e != parent_key => {
                        return Err(StoreError::HierarchyConflict {
                            dimension: self.name.clone(),
                            level: self.levels[l].name.clone(),
                            key: key.clone(),
                            existing: e,
                            conflicting: parent_key.clone(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        pending_parent.insert((l, key.clone()), parent_key.clone());
                    }
                }
            }
            batch_keys.insert(natural.clone(), ());
            fresh.push(values);
        }
        let n = fresh.len();
        for values in fresh {
            self.push_member(values);
        }
        Ok(n)
    }

    /// Appends one validated member. Coarse levels are resolved first so a new
    /// finer id can point at its parent.
    fn push_member(&mut self, values: Vec<String>) {
        let surrogate = self.columns[0].len() as u32;
        let mut upper: Option<u32> = None;
        for l in (0..self.levels.len()).rev() {
            let level = &mut self.levels[l];
            let key = &values[level.key_attr];
            let id = match level.by_key.get(key) {
                Some(&id) => id,
                None => {
                    let id = level.keys.len() as u32;
                    level.keys.push(key.clone());
                    level.labels.push(values[level.label_attr].clone());
                    level.by_key.insert(key.clone(), id);
                    if let Some(p) = upper {
                        level.parent.push(p);
                    }
                    id
                }
            };
            level.of_member.push(id);
            upper = Some(id);
        }
        debug_assert_eq!(self.levels[0].of_member[surrogate as usize], surrogate);
        if self.is_time {
            self.dates.push(parse_iso_date(&values[self.levels[0].key_attr]));
        } else {
            self.dates.push(None);
        }
        self.natural.insert(values[self.levels[0].key_attr].clone(), surrogate);
        for (col, v) in self.columns.iter_mut().zip(values) {
            col.push(v);
        }
    }
}

/// Fact rows: one surrogate column per schema dimension and the measure column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactColumnset {
    keys: Vec<Vec<u32>>,
    amounts: Vec<i64>,
}

impl FactColumnset {
    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    /// Foreign-key column of dimension `dim` (schema order).
    pub fn keys(&self, dim: usize) -> &[u32] {
        &self.keys[dim]
    }

    pub fn amounts(&self) -> &[i64] {
        &self.amounts
    }
}

/// A fact identified by natural keys, one per schema dimension in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactRecord {
    pub keys: Vec<String>,
    pub amount: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FactInsert {
    pub inserted: usize,
    /// Input position and reason of each rejected row.
    pub rejected: Vec<(usize, String)>,
}

/// What happens to a fact whose natural key has no member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownPolicy {
    #[default]
    Reject,
    RouteToUnknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarehouseMeta {
    pub fingerprint: u64,
    /// Incremented by every commit that changed the store.
    pub epoch: u64,
    pub fact_rows: usize,
    pub member_counts: Vec<(String, usize)>,
}

/// One filter clause: the dimension's members must roll up into `members` at `level`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FilterClause {
    pub dimension: String,
    pub level: String,
    pub members: BTreeSet<String>,
}

/// Inclusive day bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScanFilter {
    pub clauses: Vec<FilterClause>,
    pub time_range: Option<DateRange>,
}

impl ScanFilter {
    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty() && self.time_range.is_none()
    }

    /// Adds a clause, intersecting with an existing clause on the same level.
    pub fn restrict(&mut self, clause: FilterClause) {
        match self.clauses.iter_mut().find(|c| c.dimension == clause.dimension && c.level == clause.level) {
            Some(c) => c.members = c.members.intersection(&clause.members).cloned().collect(),
            None => self.clauses.push(clause),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ResolvedClause {
    dim: usize,
    level: usize,
    accept: Vec<bool>,
}

/// A [`ScanFilter`] bound to level ids of one warehouse state.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedFilter {
    clauses: Vec<ResolvedClause>,
    time: Option<(usize, DateRange)>,
}

impl ResolvedFilter {
    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty() && self.time.is_none()
    }

    /// Finest level a source must keep on `dim` to evaluate this filter, if
    /// the filter constrains `dim` at all.
    pub fn required_level(&self, dim: usize) -> Option<usize> {
        let clause = self.clauses.iter().filter(|c| c.dim == dim).map(|c| c.level).min();
        match self.time {
            Some((t, _)) if t == dim => Some(0),
            _ => clause,
        }
    }

    pub fn constrained_dims(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.clauses.iter().map(|c| c.dim).collect();
        if let Some((t, _)) = self.time {
            s.insert(t);
        }
        s
    }

    /// Acceptance of every id at `level` of `dim`, or `None` when `dim` is
    /// unconstrained. `level` must not exceed [`Self::required_level`].
    pub fn mask_at(&self, wh: &Warehouse, dim: usize, level: usize) -> Option<Vec<bool>> {
        let required = self.required_level(dim)?;
        assert!(level <= required, "filter on dimension {dim} needs level {required}, got {level}");
        let table = &wh.dims[dim];
        let mut mask = vec![true; table.levels[level].cardinality()];
        for c in self.clauses.iter().filter(|c| c.dim == dim) {
            let up = table.ancestor_map(level, c.level);
            for (m, a) in mask.iter_mut().zip(up) {
                *m &= c.accept[a as usize];
            }
        }
        if let Some((t, range)) = self.time {
            if t == dim {
                for (id, m) in mask.iter_mut().enumerate() {
                    *m &= table.date_of(id as u32).is_some_and(|d| d >= range.from && d <= range.to);
                }
            }
        }
        Some(mask)
    }
}

/// The warehouse: schema, dimension tables, fact columns and load epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Warehouse {
    schema: Arc<StarSchema>,
    dims: Vec<DimensionTable>,
    facts: FactColumnset,
    epoch: u64,
    loaded_batches: BTreeSet<u64>,
    unknown_policy: UnknownPolicy,
    pending: bool,
}

impl Warehouse {
    pub fn new(schema: Arc<StarSchema>) -> Result<Self, StoreError> {
        let violations = schema.validate();
        if !violations.is_empty() {
            return Err(StoreError::InvalidSchema(violations));
        }
        let dims: Vec<DimensionTable> = schema.dimensions.iter().map(DimensionTable::new).collect();
        let facts = FactColumnset { keys: vec![Vec::new(); dims.len()], amounts: Vec::new() };
        Ok(Warehouse {
            schema,
            dims,
            facts,
            epoch: 0,
            loaded_batches: BTreeSet::new(),
            unknown_policy: UnknownPolicy::Reject,
            pending: false,
        })
    }

    pub fn schema(&self) -> &StarSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<StarSchema> {
        &self.schema
    }

    pub fn dimensions(&self) -> &[DimensionTable] {
        &self.dims
    }

    pub fn dimension(&self, i: usize) -> &DimensionTable {
        &self.dims[i]
    }

    pub fn dimension_named(&self, name: &str) -> Result<(usize, &DimensionTable), StoreError> {
        self.dims
            .iter()
            .enumerate()
            .find(|(_, d)| d.name == name)
            .ok_or_else(|| StoreError::UnknownDimension(name.to_string()))
    }

    pub fn facts(&self) -> &FactColumnset {
        &self.facts
    }

    pub fn fact_count(&self) -> usize {
        self.facts.len()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn unknown_policy(&self) -> UnknownPolicy {
        self.unknown_policy
    }

    pub fn set_unknown_policy(&mut self, policy: UnknownPolicy) {
        self.unknown_policy = policy;
    }

    pub fn meta(&self) -> WarehouseMeta {
        WarehouseMeta {
            fingerprint: self.schema.fingerprint(),
            epoch: self.epoch,
            fact_rows: self.facts.len(),
            member_counts: self.dims.iter().map(|d| (d.name.clone(), d.member_count())).collect(),
        }
    }

    /// Fingerprints of source batches already committed.
    pub fn loaded_batches(&self) -> &BTreeSet<u64> {
        &self.loaded_batches
    }

    pub fn has_batch(&self, fingerprint: u64) -> bool {
        self.loaded_batches.contains(&fingerprint)
    }

    pub fn record_batch(&mut self, fingerprint: u64) {
        self.loaded_batches.insert(fingerprint);
    }

    /// Appends members with new natural keys and returns how many were added.
    pub fn insert_members(&mut self, dim: &str, rows: &[Record]) -> Result<usize, StoreError> {
        let i = self.dimension_named(dim)?.0;
        let n = self.dims[i].insert(rows)?;
        self.pending |= n > 0;
        Ok(n)
    }

    /// Materializes one time member per distinct day not yet present.
    pub fn ensure_time_members(&mut self, days: impl IntoIterator<Item = NaiveDate>) -> Result<usize, StoreError> {
        let t = self.schema.time_dimension().ok_or(StoreError::NoTimeDimension)?;
        let day_attr = self.schema.dimensions[t].natural_key().to_string();
        let mut unique: BTreeSet<NaiveDate> = BTreeSet::new();
        for d in days {
            if self.dims[t].surrogate(&crate::value::format_iso_date(d)).is_none() {
                unique.insert(d);
            }
        }
        let rows: Vec<Record> = unique
            .into_iter()
            .map(|d| {
                let mut r = Record::new();
                r.insert(day_attr.clone(), Value::Date(d));
                r
            })
            .collect();
        let name = self.dims[t].name.clone();
        self.insert_members(&name, &rows)
    }

    /// Translates natural keys and appends the resolvable rows without committing.
    pub fn append_facts(&mut self, rows: &[FactRecord]) -> FactInsert {
        let mut out = FactInsert::default();
        let mut resolved = vec![0u32; self.dims.len()];
        'rows: for (pos, row) in rows.iter().enumerate() {
            if row.keys.len() != self.dims.len() {
                out.rejected.push((pos, format!("expected {} keys, got {}", self.dims.len(), row.keys.len())));
                continue;
            }
            for (d, key) in row.keys.iter().enumerate() {
                match self.dims[d].surrogate(key) {
                    Some(s) => resolved[d] = s,
                    None if self.unknown_policy == UnknownPolicy::RouteToUnknown => resolved[d] = 0,
                    None => {
                        out.rejected.push((pos, format!("unresolved key {}", self.dims[d].name)));
                        continue 'rows;
                    }
                }
            }
            for (col, s) in self.facts.keys.iter_mut().zip(&resolved) {
                col.push(*s);
            }
            self.facts.amounts.push(row.amount);
            out.inserted += 1;
        }
        self.pending |= out.inserted > 0;
        out
    }

    /// Appends facts and commits.
    pub fn insert_facts(&mut self, rows: &[FactRecord]) -> FactInsert {
        let out = self.append_facts(rows);
        self.commit();
        out
    }

    /// Advances the epoch if anything changed since the last commit.
    pub fn commit(&mut self) -> bool {
        if self.pending {
            self.epoch += 1;
            self.pending = false;
            true
        } else {
            false
        }
    }

    pub fn has_pending_changes(&self) -> bool {
        self.pending
    }

    pub fn resolve_filter(&self, filter: &ScanFilter) -> Result<ResolvedFilter, StoreError> {
        let mut clauses = Vec::with_capacity(filter.clauses.len());
        for c in &filter.clauses {
            let (dim, table) = self.dimension_named(&c.dimension)?;
            let level = table
                .level_index(&c.level)
                .ok_or_else(|| StoreError::UnknownLevel { dimension: c.dimension.clone(), level: c.level.clone() })?;
            let li = &table.levels[level];
            let mut accept = vec![false; li.cardinality()];
            for m in &c.members {
                let id = li.id(m).ok_or_else(|| StoreError::UnknownMember {
                    dimension: c.dimension.clone(),
                    level: c.level.clone(),
                    member: m.clone(),
                })?;
                accept[id as usize] = true;
            }
            clauses.push(ResolvedClause { dim, level, accept });
        }
        let time = match filter.time_range {
            None => None,
            Some(r) => {
                if r.from > r.to {
                    return Err(StoreError::InvertedRange { from: r.from, to: r.to });
                }
                Some((self.schema.time_dimension().ok_or(StoreError::NoTimeDimension)?, r))
            }
        };
        Ok(ResolvedFilter { clauses, time })
    }

    /// Rows whose members satisfy every clause of `filter`.
    pub fn scan(&self, filter: &ScanFilter) -> Result<Scan<'_>, StoreError> {
        let resolved = self.resolve_filter(filter)?;
        Ok(self.scan_resolved(&resolved))
    }

    pub fn scan_resolved(&self, filter: &ResolvedFilter) -> Scan<'_> {
        let masks = filter
            .constrained_dims()
            .into_iter()
            .map(|d| (d, filter.mask_at(self, d, 0).expect("constrained")))
            .collect();
        Scan { wh: self, masks, row: 0 }
    }

    /// Rebuilds a warehouse from stored columns (snapshot loading). Member
    /// columns exclude the UNKNOWN row.
    pub fn restore(
        schema: Arc<StarSchema>,
        members: Vec<Vec<Vec<String>>>,
        fact_keys: Vec<Vec<u32>>,
        amounts: Vec<i64>,
        epoch: u64,
        loaded_batches: BTreeSet<u64>,
    ) -> Result<Self, RestoreError> {
        let mut wh = Warehouse::new(schema).map_err(|_| RestoreError::Schema)?;
        if members.len() != wh.dims.len() || fact_keys.len() != wh.dims.len() {
            return Err(RestoreError::Shape("dimension count"));
        }
        for (table, columns) in wh.dims.iter_mut().zip(members) {
            if columns.len() != table.attributes.len() {
                return Err(RestoreError::Shape("attribute count"));
            }
            let n = columns.first().map_or(0, Vec::len);
            if columns.iter().any(|c| c.len() != n) {
                return Err(RestoreError::Shape("ragged member columns"));
            }
            for i in 0..n {
                let values: Vec<String> = columns.iter().map(|c| c[i].clone()).collect();
                if table.natural.contains_key(&values[table.levels[0].key_attr]) {
                    return Err(RestoreError::Shape("duplicate natural key"));
                }
                table.push_member(values);
            }
        }
        for (d, col) in fact_keys.iter().enumerate() {
            if col.len() != amounts.len() {
                return Err(RestoreError::Shape("ragged fact columns"));
            }
            let max = wh.dims[d].member_count() as u32;
            if col.iter().any(|&k| k > max) {
                return Err(RestoreError::Shape("dangling foreign key"));
            }
        }
        wh.facts = FactColumnset { keys: fact_keys, amounts };
        wh.epoch = epoch;
        wh.loaded_batches = loaded_batches;
        Ok(wh)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RestoreError {
    #[error("stored schema is invalid")]
    Schema,
    #[error("inconsistent stored data: {0}")]
    Shape(&'static str),
}

/// Iterator over fact rows passing a resolved filter.
pub struct Scan<'a> {
    wh: &'a Warehouse,
    masks: Vec<(usize, Vec<bool>)>,
    row: usize,
}

/// A borrowed fact row.
#[derive(Clone, Copy)]
pub struct FactRef<'a> {
    facts: &'a FactColumnset,
    row: usize,
}

impl FactRef<'_> {
    pub fn row(&self) -> usize {
        self.row
    }

    pub fn key(&self, dim: usize) -> u32 {
        self.facts.keys[dim][self.row]
    }

    pub fn amount(&self) -> i64 {
        self.facts.amounts[self.row]
    }
}

impl<'a> Iterator for Scan<'a> {
    type Item = FactRef<'a>;

    fn next(&mut self) -> Option<FactRef<'a>> {
        let facts = &self.wh.facts;
        while self.row < facts.len() {
            let row = self.row;
            self.row += 1;
            if self.masks.iter().all(|(d, m)| m[facts.keys[*d][row] as usize]) {
                return Some(FactRef { facts, row });
            }
        }
        None
    }
}
