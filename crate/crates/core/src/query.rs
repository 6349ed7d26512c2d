//! Aggregate queries, result grids and the planner choosing between a
//! materialized view, a built cuboid and a fact scan.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use thiserror::Error;

use crate::cube::{Cell, CubeCatalog, Cuboid, GroupBySpec, Grouper, LevelChoice};
use crate::mview::MViewCatalog;
use crate::schema::{Aggregator, StarSchema};
use crate::store::{ResolvedFilter, ScanFilter, StoreError, Warehouse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("unknown level '{0}'")]
    UnknownLevel(String),
    #[error("dimension '{0}' is grouped twice")]
    DuplicateAxis(String),
    #[error("unknown measure '{0}'")]
    UnknownMeasure(String),
    #[error("cannot parse measure '{0}', expected aggregator(measure)")]
    BadMeasure(String),
    #[error("query needs at least one measure")]
    NoMeasures,
    #[error("cannot sort by '{0}': not an axis or measure of the query")]
    BadSort(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// `aggregator(measure)`, e.g. `sum(montant)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasureRef {
    pub aggregator: Aggregator,
}

impl MeasureRef {
    pub const fn new(aggregator: Aggregator) -> Self {
        MeasureRef { aggregator }
    }

    /// Parses `agg(name)` against the schema's stored measure.
    pub fn parse(schema: &StarSchema, text: &str) -> Result<Self, QueryError> {
        let t = text.trim();
        let (agg, rest) = t.split_once('(').ok_or_else(|| QueryError::BadMeasure(t.to_string()))?;
        let name = rest.strip_suffix(')').ok_or_else(|| QueryError::BadMeasure(t.to_string()))?.trim();
        let aggregator =
            Aggregator::parse(&agg.trim().to_ascii_lowercase()).ok_or_else(|| QueryError::BadMeasure(t.to_string()))?;
        if name != schema.measure().name && !(aggregator == Aggregator::Count && name == "*") {
            return Err(QueryError::UnknownMeasure(name.to_string()));
        }
        Ok(MeasureRef { aggregator })
    }

    pub fn render(&self, schema: &StarSchema) -> String {
        format!("{}({})", self.aggregator.as_str(), schema.measure().name)
    }

    pub fn evaluate(&self, cell: Cell) -> MeasureValue {
        match self.aggregator {
            Aggregator::Sum => MeasureValue::Int(cell.sum),
            Aggregator::Count => MeasureValue::Int(cell.count as i64),
            Aggregator::Average => MeasureValue::Float(cell.sum as f64 / cell.count as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureValue {
    Int(i64),
    Float(f64),
}

impl MeasureValue {
    pub fn as_f64(self) -> f64 {
        match self {
            MeasureValue::Int(v) => v as f64,
            MeasureValue::Float(v) => v,
        }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (MeasureValue::Int(a), MeasureValue::Int(b)) => a.cmp(b),
            _ => self.as_f64().total_cmp(&other.as_f64()),
        }
    }
}

impl fmt::Display for MeasureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureValue::Int(v) => write!(f, "{v}"),
            MeasureValue::Float(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortKey {
    /// An axis token (`office.governorate`, `governorate`) or a measure (`sum(montant)`).
    pub column: String,
    pub descending: bool,
}

/// A group-by query over the fact table. Axes appear in the grid in
/// `group_by` order; dimensions not listed are at ALL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateQuery {
    pub measures: Vec<MeasureRef>,
    /// Level tokens as accepted by [`StarSchema::resolve_level`].
    pub group_by: Vec<String>,
    pub filter: ScanFilter,
    pub sort: Option<SortKey>,
    pub limit: Option<usize>,
}

impl AggregateQuery {
    /// `sum(measure)` with the given axes, no filter.
    pub fn sum_by(group_by: &[&str]) -> Self {
        AggregateQuery {
            measures: vec![MeasureRef::new(Aggregator::Sum)],
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            filter: ScanFilter::default(),
            sort: None,
            limit: None,
        }
    }

    pub fn resolve(&self, wh: &Warehouse) -> Result<ResolvedQuery, QueryError> {
        let schema = wh.schema();
        if self.measures.is_empty() {
            return Err(QueryError::NoMeasures);
        }
        let mut spec = GroupBySpec::all(schema.dimensions.len());
        let mut axes = Vec::with_capacity(self.group_by.len());
        for token in &self.group_by {
            let (d, l) = schema.resolve_level(token).ok_or_else(|| QueryError::UnknownLevel(token.clone()))?;
            if spec.choice(d) != LevelChoice::All {
                return Err(QueryError::DuplicateAxis(schema.dimensions[d].name.clone()));
            }
            spec.set(d, LevelChoice::Level(l));
            axes.push((d, l));
        }
        let filter = wh.resolve_filter(&self.filter)?;
        let sort = match &self.sort {
            None => None,
            Some(k) => Some((resolve_sort(schema, &axes, &self.measures, &k.column)?, k.descending)),
        };
        Ok(ResolvedQuery { spec, axes, filter, measures: self.measures.clone(), sort, limit: self.limit })
    }
}

fn resolve_sort(
    schema: &StarSchema,
    axes: &[(usize, usize)],
    measures: &[MeasureRef],
    column: &str,
) -> Result<SortColumn, QueryError> {
    if let Some(dl) = schema.resolve_level(column) {
        if let Some(i) = axes.iter().position(|a| *a == dl) {
            return Ok(SortColumn::Axis(i));
        }
    }
    if let Ok(m) = MeasureRef::parse(schema, column) {
        if let Some(i) = measures.iter().position(|x| *x == m) {
            return Ok(SortColumn::Measure(i));
        }
    }
    Err(QueryError::BadSort(column.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortColumn {
    Axis(usize),
    Measure(usize),
}

/// A query bound to one warehouse state.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedQuery {
    pub spec: GroupBySpec,
    /// `(dimension, level)` per axis, query order.
    pub axes: Vec<(usize, usize)>,
    pub filter: ResolvedFilter,
    pub measures: Vec<MeasureRef>,
    pub sort: Option<(SortColumn, bool)>,
    pub limit: Option<usize>,
}

impl ResolvedQuery {
    /// True when `source` keeps enough detail for this query: the query
    /// grouping rolls up from it and every filtered dimension is grouped at or
    /// below the filter's level.
    pub fn answerable_from(&self, source: &GroupBySpec) -> bool {
        self.spec.is_rollup_of(source)
            && self.filter.constrained_dims().into_iter().all(|d| match source.choice(d) {
                LevelChoice::Level(l) => self.filter.required_level(d).is_some_and(|r| l <= r),
                LevelChoice::All => false,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanKind {
    MView(String),
    Cuboid(GroupBySpec),
    Scan,
}

impl PlanKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlanKind::MView(_) => "mview",
            PlanKind::Cuboid(_) => "cuboid",
            PlanKind::Scan => "scan",
        }
    }

    /// `mview:Name`, `cuboid:dim.level,...` or `scan`.
    pub fn describe(&self, schema: &StarSchema) -> String {
        match self {
            PlanKind::MView(n) => format!("mview:{n}"),
            PlanKind::Cuboid(s) => format!("cuboid:{}", s.display(schema)),
            PlanKind::Scan => "scan".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub kind: PlanKind,
    /// Cells or fact rows of the chosen source.
    pub estimated_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub dimension: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Member {
    pub key: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub members: Vec<Member>,
    pub values: Vec<MeasureValue>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub plan: PlanKind,
    pub input_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultGrid {
    pub axes: Vec<Axis>,
    pub measures: Vec<String>,
    pub rows: Vec<GridRow>,
    /// `None` when rows are in the default order (axis labels ascending).
    pub sort: Option<(SortColumn, bool)>,
    pub provenance: Provenance,
}

impl ResultGrid {
    /// Rows in default order: axis labels, then keys, byte-wise ascending.
    pub fn sort_default(&mut self) {
        self.rows.sort_by(default_row_order);
        self.sort = None;
    }
}

fn default_row_order(a: &GridRow, b: &GridRow) -> Ordering {
    let labels = a.members.iter().map(|m| m.label.as_bytes()).cmp(b.members.iter().map(|m| m.label.as_bytes()));
    labels.then_with(|| a.members.iter().map(|m| m.key.as_bytes()).cmp(b.members.iter().map(|m| m.key.as_bytes())))
}

/// Re-aggregates `source` cells to `target`, keeping only cells that pass `filter`.
/// The caller guarantees `source` can answer (see [`ResolvedQuery::answerable_from`]).
pub fn aggregate_cuboid(
    wh: &Warehouse,
    source: &Cuboid,
    target: &GroupBySpec,
    filter: &ResolvedFilter,
) -> BTreeMap<Vec<u32>, Cell> {
    let mut pos = vec![usize::MAX; target.len()];
    let mut src_level = vec![0usize; target.len()];
    for (i, (d, l)) in source.spec().grouped().enumerate() {
        pos[d] = i;
        src_level[d] = l;
    }
    let masks: Vec<(usize, Vec<bool>)> = filter
        .constrained_dims()
        .into_iter()
        .map(|d| (pos[d], filter.mask_at(wh, d, src_level[d]).expect("constrained")))
        .collect();
    let maps: Vec<(usize, Vec<u32>)> =
        target.grouped().map(|(d, l)| (pos[d], wh.dimension(d).ancestor_map(src_level[d], l))).collect();
    let cards: Vec<usize> = target.grouped().map(|(d, l)| wh.dimension(d).level(l).cardinality()).collect();
    let mut grouper = Grouper::new(&cards);
    let mut key = vec![0u32; maps.len()];
    'cells: for (coord, cell) in source.cells() {
        for (p, m) in &masks {
            if !m[coord[*p] as usize] {
                continue 'cells;
            }
        }
        for (k, (p, map)) in key.iter_mut().zip(&maps) {
            *k = map[coord[*p] as usize];
        }
        grouper.add(&key, *cell);
    }
    grouper.finish()
}

/// Aggregates the filtered fact rows directly at `target`.
pub fn aggregate_scan(wh: &Warehouse, target: &GroupBySpec, filter: &ResolvedFilter) -> BTreeMap<Vec<u32>, Cell> {
    let facts = wh.facts();
    let masks: Vec<(&[u32], Vec<bool>)> = filter
        .constrained_dims()
        .into_iter()
        .map(|d| (facts.keys(d), filter.mask_at(wh, d, 0).expect("constrained")))
        .collect();
    let cols: Vec<(&[u32], &[u32])> =
        target.grouped().map(|(d, l)| (facts.keys(d), wh.dimension(d).level(l).of_member())).collect();
    let cards: Vec<usize> = target.grouped().map(|(d, l)| wh.dimension(d).level(l).cardinality()).collect();
    let mut grouper = Grouper::new(&cards);
    let mut key = vec![0u32; cols.len()];
    'rows: for (row, &amount) in facts.amounts().iter().enumerate() {
        for (col, m) in &masks {
            if !m[col[row] as usize] {
                continue 'rows;
            }
        }
        for (k, (col, map)) in key.iter_mut().zip(&cols) {
            *k = map[col[row] as usize];
        }
        grouper.add(&key, Cell { sum: amount, count: 1 });
    }
    grouper.finish()
}

/// Turns schema-ordered cells into a sorted, limited grid.
pub fn build_grid(
    wh: &Warehouse,
    q: &ResolvedQuery,
    cells: BTreeMap<Vec<u32>, Cell>,
    provenance: Provenance,
) -> ResultGrid {
    let schema = wh.schema();
    // coordinate slot of each axis: coordinates follow schema order
    let grouped: Vec<usize> = q.spec.grouped().map(|(d, _)| d).collect();
    let slots: Vec<usize> = q.axes.iter().map(|(d, _)| grouped.iter().position(|g| g == d).expect("axis")).collect();
    let mut rows: Vec<GridRow> = cells
        .into_iter()
        .map(|(coord, cell)| GridRow {
            members: q
                .axes
                .iter()
                .zip(&slots)
                .map(|(&(d, l), &s)| {
                    let level = wh.dimension(d).level(l);
                    Member { key: level.key(coord[s]).to_string(), label: level.label(coord[s]).to_string() }
                })
                .collect(),
            values: q.measures.iter().map(|m| m.evaluate(cell)).collect(),
        })
        .collect();
    rows.sort_by(default_row_order);
    if let Some((col, desc)) = q.sort {
        // stable: ties keep the default order
        rows.sort_by(|a, b| {
            let o = match col {
                SortColumn::Axis(i) => a.members[i].label.as_bytes().cmp(b.members[i].label.as_bytes()),
                SortColumn::Measure(i) => a.values[i].total_cmp(&b.values[i]),
            };
            if desc {
                o.reverse()
            } else {
                o
            }
        });
    }
    if let Some(n) = q.limit {
        rows.truncate(n);
    }
    ResultGrid {
        axes: q
            .axes
            .iter()
            .map(|&(d, l)| Axis {
                dimension: schema.dimensions[d].name.clone(),
                level: schema.dimensions[d].levels[l].name.clone(),
            })
            .collect(),
        measures: q.measures.iter().map(|m| m.render(schema)).collect(),
        rows,
        sort: q.sort,
        provenance,
    }
}

/// Execution strategy. `Auto` follows the mview > cuboid > scan preference; the
/// others force one source and yield `None` when it cannot answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Force {
    Auto,
    MView,
    Cuboid,
    Scan,
}

/// Read-only query engine over one consistent warehouse/catalog state.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub warehouse: &'a Warehouse,
    pub cubes: &'a CubeCatalog,
    pub views: &'a MViewCatalog,
}

impl<'a> Engine<'a> {
    pub fn new(warehouse: &'a Warehouse, cubes: &'a CubeCatalog, views: &'a MViewCatalog) -> Self {
        Engine { warehouse, cubes, views }
    }

    fn best_cuboid(&self, q: &ResolvedQuery) -> Option<&'a Cuboid> {
        self.cubes.current(self.warehouse.epoch()).filter(|c| q.answerable_from(c.spec())).min_by_key(|c| c.len())
    }

    pub fn plan(&self, query: &AggregateQuery) -> Result<Plan, QueryError> {
        let q = query.resolve(self.warehouse)?;
        Ok(self.plan_resolved(&q))
    }

    pub fn plan_resolved(&self, q: &ResolvedQuery) -> Plan {
        if let Some(p) = self.views.rewrite(self.warehouse, q) {
            return Plan { kind: PlanKind::MView(p.view), estimated_rows: p.view_cells };
        }
        if let Some(c) = self.best_cuboid(q) {
            return Plan { kind: PlanKind::Cuboid(c.spec().clone()), estimated_rows: c.len() };
        }
        Plan { kind: PlanKind::Scan, estimated_rows: self.warehouse.fact_count() }
    }

    pub fn execute(&self, query: &AggregateQuery) -> Result<ResultGrid, QueryError> {
        Ok(self.execute_forced(query, Force::Auto)?.expect("auto always has a plan"))
    }

    pub fn execute_forced(&self, query: &AggregateQuery, force: Force) -> Result<Option<ResultGrid>, QueryError> {
        let q = query.resolve(self.warehouse)?;
        Ok(self.execute_resolved(&q, force))
    }

    pub fn execute_resolved(&self, q: &ResolvedQuery, force: Force) -> Option<ResultGrid> {
        let wh = self.warehouse;
        if matches!(force, Force::Auto | Force::MView) {
            if let Some(plan) = self.views.rewrite(wh, q) {
                // a view that went stale after planning falls through to the next source
                if let Ok(grid) = self.views.answer_from(wh, &plan, q) {
                    return Some(grid);
                }
            }
            if force == Force::MView {
                return None;
            }
        }
        if matches!(force, Force::Auto | Force::Cuboid) {
            if let Some(c) = self.best_cuboid(q) {
                let cells = aggregate_cuboid(wh, c, &q.spec, &q.filter);
                let prov = Provenance { plan: PlanKind::Cuboid(c.spec().clone()), input_rows: c.len() };
                return Some(build_grid(wh, q, cells, prov));
            }
            if force == Force::Cuboid {
                return None;
            }
        }
        let cells = aggregate_scan(wh, &q.spec, &q.filter);
        Some(build_grid(wh, q, cells, Provenance { plan: PlanKind::Scan, input_rows: wh.fact_count() }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PivotError {
    #[error("axis order {0:?} is not a permutation of {1} axes")]
    NotAPermutation(Vec<usize>, usize),
}

/// Reorders the axis columns; `order[i]` is the old index of new axis `i`.
/// A grid in default order is re-sorted by the new axis order.
pub fn pivot(grid: &ResultGrid, order: &[usize]) -> Result<ResultGrid, PivotError> {
    let n = grid.axes.len();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || core::mem::replace(&mut seen[i], true)) {
        return Err(PivotError::NotAPermutation(order.to_vec(), n));
    }
    let mut out = grid.clone();
    out.axes = order.iter().map(|&i| grid.axes[i].clone()).collect();
    for (row, src) in out.rows.iter_mut().zip(&grid.rows) {
        row.members = order.iter().map(|&i| src.members[i].clone()).collect();
    }
    match grid.sort {
        None => out.sort_default(),
        Some((SortColumn::Axis(i), desc)) => {
            let new = order.iter().position(|&o| o == i).expect("permutation");
            out.sort = Some((SortColumn::Axis(new), desc));
        }
        Some(_) => {}
    }
    Ok(out)
}
