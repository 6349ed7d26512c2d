//! The group-by lattice of a star schema and cuboid materialization.
//!
//! A cuboid is one node of the lattice: a choice of level (or ALL) per
//! dimension, with one `(sum, count)` cell per non-empty coordinate. Cells keep
//! the count next to the sum so every cuboid stays re-aggregable, which is what
//! lets coarser cuboids be derived from finer ones and averages be answered
//! from any of them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use hashbrown::HashMap;
use thiserror::Error;

use crate::schema::StarSchema;
use crate::store::Warehouse;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CubeError {
    #[error("group-by spec does not match the schema: {0}")]
    SpecMismatch(String),
    #[error("{coarser} is not a roll-up of {finer}")]
    NotComparable { finer: String, coarser: String },
    #[error("cuboid built at epoch {cuboid}, warehouse is at epoch {warehouse}")]
    EpochMismatch { cuboid: u64, warehouse: u64 },
    #[error("full cube needs ~{estimate} cells, budget is {budget}")]
    BudgetExceeded { estimate: u64, budget: u64 },
    #[error("cannot parse group-by '{0}'")]
    Parse(String),
}

/// Level chosen for one dimension: an ordinal into its levels, or ALL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LevelChoice {
    Level(usize),
    All,
}

impl LevelChoice {
    /// Ordinal with ALL placed one above the coarsest level.
    fn rank(self, level_count: usize) -> usize {
        match self {
            LevelChoice::Level(l) => l,
            LevelChoice::All => level_count,
        }
    }

    /// True when `self` is the same level as `other` or coarser.
    pub fn covers(self, other: LevelChoice) -> bool {
        match (self, other) {
            (LevelChoice::All, _) => true,
            (LevelChoice::Level(_), LevelChoice::All) => false,
            (LevelChoice::Level(a), LevelChoice::Level(b)) => a >= b,
        }
    }
}

/// One level choice per schema dimension, in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupBySpec(Vec<LevelChoice>);

impl GroupBySpec {
    pub fn new(choices: Vec<LevelChoice>) -> Self {
        GroupBySpec(choices)
    }

    pub fn all(dims: usize) -> Self {
        GroupBySpec(vec![LevelChoice::All; dims])
    }

    /// Every dimension at its finest level.
    pub fn base(dims: usize) -> Self {
        GroupBySpec(vec![LevelChoice::Level(0); dims])
    }

    pub fn choices(&self) -> &[LevelChoice] {
        &self.0
    }

    pub fn choice(&self, dim: usize) -> LevelChoice {
        self.0[dim]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn set(&mut self, dim: usize, choice: LevelChoice) {
        self.0[dim] = choice;
    }

    /// `(dimension, level)` for every non-ALL dimension, in schema order. This is
    /// also the layout of cuboid coordinates.
    pub fn grouped(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().enumerate().filter_map(|(d, c)| match c {
            LevelChoice::Level(l) => Some((d, *l)),
            LevelChoice::All => None,
        })
    }

    pub fn is_all(&self) -> bool {
        self.0.iter().all(|c| *c == LevelChoice::All)
    }

    /// Lattice order: every choice of `self` is equal to or coarser than `finer`'s.
    pub fn is_rollup_of(&self, finer: &GroupBySpec) -> bool {
        self.0.len() == finer.0.len() && self.0.iter().zip(&finer.0).all(|(a, b)| a.covers(*b))
    }

    fn rank(&self, schema: &StarSchema) -> usize {
        self.0.iter().zip(&schema.dimensions).map(|(c, d)| c.rank(d.levels.len())).sum()
    }

    pub fn check(&self, schema: &StarSchema) -> Result<(), CubeError> {
        if self.0.len() != schema.dimensions.len() {
            return Err(CubeError::SpecMismatch(format!(
                "{} choices for {} dimensions",
                self.0.len(),
                schema.dimensions.len()
            )));
        }
        for (c, d) in self.0.iter().zip(&schema.dimensions) {
            if let LevelChoice::Level(l) = c {
                if *l >= d.levels.len() {
                    return Err(CubeError::SpecMismatch(format!("{} has no level {l}", d.name)));
                }
            }
        }
        Ok(())
    }

    /// Parses `dim.level,...` (bare level or dimension names allowed, see
    /// [`StarSchema::resolve_level`]); `ALL` or an empty string is the apex.
    pub fn parse(schema: &StarSchema, text: &str) -> Result<Self, CubeError> {
        let mut spec = GroupBySpec::all(schema.dimensions.len());
        let text = text.trim();
        if text.is_empty() || text.eq_ignore_ascii_case("all") {
            return Ok(spec);
        }
        for token in text.split(',') {
            let (d, l) = schema.resolve_level(token).ok_or_else(|| CubeError::Parse(token.trim().to_string()))?;
            if spec.0[d] != LevelChoice::All {
                return Err(CubeError::Parse(format!("dimension {} listed twice", schema.dimensions[d].name)));
            }
            spec.0[d] = LevelChoice::Level(l);
        }
        Ok(spec)
    }

    pub fn display<'a>(&'a self, schema: &'a StarSchema) -> SpecDisplay<'a> {
        SpecDisplay { spec: self, schema }
    }
}

pub struct SpecDisplay<'a> {
    spec: &'a GroupBySpec,
    schema: &'a StarSchema,
}

impl fmt::Display for SpecDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.spec.is_all() {
            return f.write_str("ALL");
        }
        for (i, (d, l)) in self.spec.grouped().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let dim = &self.schema.dimensions[d];
            write!(f, "{}.{}", dim.name, dim.levels[l].name)?;
        }
        Ok(())
    }
}

/// All group-by specs of a schema with their one-step coarsening edges.
#[derive(Debug, Clone)]
pub struct CubeLattice {
    nodes: Vec<GroupBySpec>,
    /// `parents[i]`: nodes one coarsening step above node `i`.
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl CubeLattice {
    pub fn nodes(&self) -> &[GroupBySpec] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Every `(finer, coarser)` pair joined by one coarsening step.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents.iter().enumerate().flat_map(|(c, ps)| ps.iter().map(move |p| (c, *p)))
    }

    pub fn index_of(&self, spec: &GroupBySpec) -> Option<usize> {
        self.nodes.iter().position(|n| n == spec)
    }
}

/// Enumerates Π (levels + 1) nodes, finest first.
pub fn lattice(schema: &StarSchema) -> CubeLattice {
    let radices: Vec<usize> = schema.dimensions.iter().map(|d| d.levels.len() + 1).collect();
    let total: usize = radices.iter().product();
    let mut nodes = Vec::with_capacity(total);
    for mut n in 0..total {
        let mut choices = Vec::with_capacity(radices.len());
        for (d, r) in radices.iter().enumerate() {
            let digit = n % r;
            n /= r;
            let levels = schema.dimensions[d].levels.len();
            choices.push(if digit == levels { LevelChoice::All } else { LevelChoice::Level(digit) });
        }
        nodes.push(GroupBySpec(choices));
    }
    nodes.sort_by_key(|s| (s.rank(schema), s.clone()));
    let index: HashMap<GroupBySpec, usize> = nodes.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

    let mut parents = vec![Vec::new(); nodes.len()];
    let mut children = vec![Vec::new(); nodes.len()];
    for (i, spec) in nodes.iter().enumerate() {
        for (d, c) in spec.0.iter().enumerate() {
            let LevelChoice::Level(l) = *c else { continue };
            let mut up = spec.clone();
            up.0[d] =
                if l + 1 < schema.dimensions[d].levels.len() { LevelChoice::Level(l + 1) } else { LevelChoice::All };
            let p = index[&up];
            parents[i].push(p);
            children[p].push(i);
        }
    }
    CubeLattice { nodes, parents, children }
}

/// Aggregate of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cell {
    pub sum: i64,
    pub count: u64,
}

impl Cell {
    pub fn add(&mut self, other: Cell) {
        self.sum += other.sum;
        self.count += other.count;
    }
}

/// Hash aggregation on composite level-id keys. Keys are packed into a single
/// `u64` when the product of the per-position cardinalities allows it.
pub(crate) struct Grouper {
    strides: Option<Vec<u64>>,
    packed: HashMap<u64, Cell>,
    wide: HashMap<Vec<u32>, Cell>,
    width: usize,
}

impl Grouper {
    pub(crate) fn new(cardinalities: &[usize]) -> Self {
        let mut strides = Vec::with_capacity(cardinalities.len());
        let mut acc: Option<u64> = Some(1);
        for &c in cardinalities {
            strides.push(acc.unwrap_or(0));
            acc = acc.and_then(|a| a.checked_mul(c.max(1) as u64));
        }
        Grouper {
            strides: acc.map(|_| strides),
            packed: HashMap::new(),
            wide: HashMap::new(),
            width: cardinalities.len(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, key: &[u32], cell: Cell) {
        match &self.strides {
            Some(strides) => {
                let k = key.iter().zip(strides).map(|(v, s)| u64::from(*v) * s).sum();
                self.packed.entry(k).or_default().add(cell);
            }
            None => match self.wide.get_mut(key) {
                Some(c) => c.add(cell),
                None => {
                    self.wide.insert(key.to_vec(), cell);
                }
            },
        }
    }

    pub(crate) fn finish(self) -> BTreeMap<Vec<u32>, Cell> {
        match self.strides {
            Some(strides) => self
                .packed
                .into_iter()
                .map(|(mut k, cell)| {
                    let mut key = vec![0u32; self.width];
                    for i in (0..self.width).rev() {
                        key[i] = (k / strides[i]) as u32;
                        k %= strides[i];
                    }
                    (key, cell)
                })
                .collect(),
            None => self.wide.into_iter().collect(),
        }
    }
}

/// One materialized node of the lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cuboid {
    spec: GroupBySpec,
    /// Coordinates hold one level id per grouped dimension, schema order.
    cells: BTreeMap<Vec<u32>, Cell>,
    epoch: u64,
}

impl Cuboid {
    /// Assembles a cuboid from stored parts; zero-count cells are dropped.
    pub fn from_parts(spec: GroupBySpec, cells: BTreeMap<Vec<u32>, Cell>, epoch: u64) -> Self {
        let cells = cells.into_iter().filter(|(_, c)| c.count > 0).collect();
        Cuboid { spec, cells, epoch }
    }

    pub fn spec(&self) -> &GroupBySpec {
        &self.spec
    }

    pub fn cells(&self) -> &BTreeMap<Vec<u32>, Cell> {
        &self.cells
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total(&self) -> Cell {
        let mut t = Cell::default();
        for c in self.cells.values() {
            t.add(*c);
        }
        t
    }

    /// Checks coordinate arity and that every id exists at its level.
    pub fn check_against(&self, wh: &Warehouse) -> Result<(), CubeError> {
        self.spec.check(wh.schema())?;
        let grouped: Vec<(usize, usize)> = self.spec.grouped().collect();
        for coord in self.cells.keys() {
            if coord.len() != grouped.len() {
                return Err(CubeError::SpecMismatch("coordinate arity".into()));
            }
            for (&id, &(d, l)) in coord.iter().zip(&grouped) {
                if id as usize >= wh.dimension(d).level(l).cardinality() {
                    return Err(CubeError::SpecMismatch(format!("member id {id} out of range")));
                }
            }
        }
        Ok(())
    }

    /// Member keys of a coordinate, one per grouped dimension.
    pub fn coordinate_keys<'a>(&self, wh: &'a Warehouse, coord: &[u32]) -> Vec<&'a str> {
        self.spec.grouped().zip(coord).map(|((d, l), id)| wh.dimension(d).level(l).key(*id)).collect()
    }
}

/// Aggregates the fact table directly at `spec`.
pub fn build_cuboid(wh: &Warehouse, spec: &GroupBySpec) -> Result<Cuboid, CubeError> {
    spec.check(wh.schema())?;
    let grouped: Vec<(usize, usize)> = spec.grouped().collect();
    let maps: Vec<&[u32]> = grouped.iter().map(|&(d, l)| wh.dimension(d).level(l).of_member()).collect();
    let cards: Vec<usize> = grouped.iter().map(|&(d, l)| wh.dimension(d).level(l).cardinality()).collect();
    let cols: Vec<&[u32]> = grouped.iter().map(|&(d, _)| wh.facts().keys(d)).collect();
    let amounts = wh.facts().amounts();

    let mut grouper = Grouper::new(&cards);
    let mut key = vec![0u32; grouped.len()];
    for (row, &amount) in amounts.iter().enumerate() {
        for (k, (col, map)) in key.iter_mut().zip(cols.iter().zip(&maps)) {
            *k = map[col[row] as usize];
        }
        grouper.add(&key, Cell { sum: amount, count: 1 });
    }
    Ok(Cuboid { spec: spec.clone(), cells: grouper.finish(), epoch: wh.epoch() })
}

/// Re-keys the cells of `finer` through the hierarchy up to `coarser` and sums them.
pub fn rollup_from(wh: &Warehouse, finer: &Cuboid, coarser: &GroupBySpec) -> Result<Cuboid, CubeError> {
    if finer.epoch != wh.epoch() {
        return Err(CubeError::EpochMismatch { cuboid: finer.epoch, warehouse: wh.epoch() });
    }
    coarser.check(wh.schema())?;
    if !coarser.is_rollup_of(&finer.spec) {
        return Err(CubeError::NotComparable {
            finer: finer.spec.display(wh.schema()).to_string(),
            coarser: coarser.display(wh.schema()).to_string(),
        });
    }
    if coarser == &finer.spec {
        return Ok(finer.clone());
    }
    // position of each dimension inside finer coordinates
    let mut pos = vec![usize::MAX; coarser.len()];
    for (i, (d, _)) in finer.spec.grouped().enumerate() {
        pos[d] = i;
    }
    let plan: Vec<(usize, Vec<u32>)> = coarser
        .grouped()
        .map(|(d, to)| {
            let LevelChoice::Level(from) = finer.spec.choice(d) else { unreachable!() };
            (pos[d], wh.dimension(d).ancestor_map(from, to))
        })
        .collect();
    let cards: Vec<usize> = coarser.grouped().map(|(d, l)| wh.dimension(d).level(l).cardinality()).collect();

    let mut grouper = Grouper::new(&cards);
    let mut key = vec![0u32; plan.len()];
    for (coord, cell) in &finer.cells {
        for (k, (p, map)) in key.iter_mut().zip(&plan) {
            *k = map[coord[*p] as usize];
        }
        grouper.add(&key, *cell);
    }
    Ok(Cuboid { spec: coarser.clone(), cells: grouper.finish(), epoch: finer.epoch })
}

/// Materialized cuboids of one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CubeCatalog {
    cuboids: BTreeMap<GroupBySpec, Cuboid>,
}

impl CubeCatalog {
    pub fn get(&self, spec: &GroupBySpec) -> Option<&Cuboid> {
        self.cuboids.get(spec)
    }

    pub fn insert(&mut self, cuboid: Cuboid) {
        self.cuboids.insert(cuboid.spec.clone(), cuboid);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cuboid> {
        self.cuboids.values()
    }

    pub fn len(&self) -> usize {
        self.cuboids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuboids.is_empty()
    }

    /// Cuboids usable at the warehouse's current epoch.
    pub fn current(&self, epoch: u64) -> impl Iterator<Item = &Cuboid> + '_ {
        self.cuboids.values().filter(move |c| c.epoch == epoch)
    }

    /// Drops cuboids built before `epoch`.
    pub fn retain_current(&mut self, epoch: u64) {
        self.cuboids.retain(|_, c| c.epoch == epoch);
    }

    /// Smallest current cuboid that `spec` can be rolled up from.
    fn smallest_source(&self, wh: &Warehouse, spec: &GroupBySpec) -> Option<&Cuboid> {
        self.current(wh.epoch()).filter(|c| spec.is_rollup_of(&c.spec)).min_by_key(|c| c.cells.len())
    }
}

/// What [`build_cube`] should materialize.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CubeRequest {
    Full,
    Specs(Vec<GroupBySpec>),
}

/// How one cuboid of a build was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildSource {
    Facts,
    Rollup(GroupBySpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildStep {
    pub spec: GroupBySpec,
    pub source: BuildSource,
    pub cells: usize,
}

/// Upper bound on the cell count of `spec`: the fact count or the product of
/// level cardinalities, whichever is smaller.
pub fn estimate_cells(wh: &Warehouse, spec: &GroupBySpec) -> u64 {
    let rows = wh.fact_count() as u64;
    let mut product: u64 = 1;
    for (d, l) in spec.grouped() {
        product = product.saturating_mul(wh.dimension(d).level(l).cardinality() as u64);
    }
    if rows == 0 {
        0
    } else {
        product.min(rows)
    }
}

/// Materializes the requested cuboids into `catalog`, finest first; each one is
/// derived from the smallest already-built finer cuboid when there is one.
/// A full build is refused when its estimated size exceeds `budget`.
pub fn build_cube(
    wh: &Warehouse,
    catalog: &mut CubeCatalog,
    request: &CubeRequest,
    budget: u64,
) -> Result<Vec<BuildStep>, CubeError> {
    let schema = wh.schema();
    let mut specs = match request {
        CubeRequest::Full => {
            let nodes = lattice(schema).nodes;
            let estimate = nodes.iter().map(|s| estimate_cells(wh, s)).fold(0u64, u64::saturating_add);
            if estimate > budget {
                return Err(CubeError::BudgetExceeded { estimate, budget });
            }
            nodes
        }
        CubeRequest::Specs(v) => {
            for s in v {
                s.check(schema)?;
            }
            v.clone()
        }
    };
    specs.sort_by_key(|s| (s.rank(schema), s.clone()));
    specs.dedup();

    let mut steps = Vec::with_capacity(specs.len());
    for spec in specs {
        let (cuboid, source) = match catalog.smallest_source(wh, &spec) {
            Some(src) => (rollup_from(wh, src, &spec)?, BuildSource::Rollup(src.spec.clone())),
            None => (build_cuboid(wh, &spec)?, BuildSource::Facts),
        };
        steps.push(BuildStep { spec: spec.clone(), source, cells: cuboid.len() });
        catalog.insert(cuboid);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{nssf_default_schema, AttributeDef, DimensionDef, DimensionKey, FactDef, LevelDef, MeasureDef};
    use crate::value::ScalarKind;

    #[test]
    fn nssf_lattice_has_240_nodes() {
        let schema = nssf_default_schema();
        let oracle: usize = schema.dimensions.iter().map(|d| d.levels.len() + 1).product();
        assert_eq!(oracle, 5 * 3 * 2 * 2 * 2 * 2);
        let l = lattice(&schema);
        assert_eq!(l.len(), 240);
        let apex = GroupBySpec::all(6);
        for (i, n) in l.nodes().iter().enumerate() {
            if *n == apex {
                assert!(l.parents(i).is_empty());
            } else {
                assert!(!l.parents(i).is_empty());
            }
            for &p in l.parents(i) {
                assert!(l.nodes()[p].is_rollup_of(n));
                assert_ne!(&l.nodes()[p], n);
            }
        }
        assert_eq!(l.nodes()[0], GroupBySpec::base(6));
        assert_eq!(l.nodes()[239], apex);
        // edges: every grouped dimension of every node coarsens once
        let edges: usize = l.nodes().iter().map(|n| n.grouped().count()).sum();
        assert_eq!(l.edges().count(), edges);
    }

    #[test]
    fn one_dimension_lattice() {
        let schema = StarSchema {
            fact: FactDef {
                name: "f".into(),
                dimension_keys: vec![DimensionKey { dimension: "d".into(), column: "k".into() }],
                measures: vec![MeasureDef { name: "m".into(), aggregator: "sum".into(), unit: String::new() }],
            },
            dimensions: vec![DimensionDef {
                name: "d".into(),
                levels: vec![LevelDef {
                    name: "d".into(),
                    ordinal: 0,
                    key_attribute: "k".into(),
                    label_attribute: "k".into(),
                }],
                attributes: vec![AttributeDef { name: "k".into(), kind: ScalarKind::Text }],
            }],
        };
        let l = lattice(&schema);
        assert_eq!(l.len(), 2);
        assert_eq!(l.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn spec_text_round_trip() {
        let schema = nssf_default_schema();
        let s = GroupBySpec::parse(&schema, "governorate, prestation").unwrap();
        assert_eq!(s.display(&schema).to_string(), "office.governorate,prestation.prestation");
        assert_eq!(GroupBySpec::parse(&schema, &s.display(&schema).to_string()).unwrap(), s);
        assert!(GroupBySpec::parse(&schema, "ALL").unwrap().is_all());
        assert!(GroupBySpec::parse(&schema, "office,governorate").is_err());
        assert!(GroupBySpec::parse(&schema, "week").is_err());
    }

    #[test]
    fn level_cover_order() {
        use LevelChoice::*;
        assert!(All.covers(Level(0)));
        assert!(Level(2).covers(Level(1)));
        assert!(!Level(0).covers(Level(1)));
        assert!(!Level(3).covers(All));
    }

    #[test]
    fn grouper_packed_and_wide_agree() {
        let keys = [[1u32, 2], [3, 0], [1, 2], [0, 0]];
        let mut packed = Grouper::new(&[4, 3]);
        let mut wide = Grouper::new(&[usize::MAX, usize::MAX]);
        assert!(wide.strides.is_none());
        for (i, k) in keys.iter().enumerate() {
            packed.add(k, Cell { sum: i as i64, count: 1 });
            wide.add(k, Cell { sum: i as i64, count: 1 });
        }
        let a = packed.finish();
        assert_eq!(a, wide.finish());
        assert_eq!(a[&vec![1, 2]], Cell { sum: 2, count: 2 });
    }
}
