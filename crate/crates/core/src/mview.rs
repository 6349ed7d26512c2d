//! Materialized views: named cuboids refreshed on demand, tracked against the
//! warehouse epoch, and used to answer queries transparently.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::cube::{build_cuboid, CubeError, Cuboid, GroupBySpec, LevelChoice};
use crate::query::{aggregate_cuboid, build_grid, MeasureRef, PlanKind, Provenance, ResolvedQuery, ResultGrid};
use crate::schema::{Aggregator, StarSchema};
use crate::store::{ResolvedFilter, Warehouse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MViewError {
    #[error("view '{0}' is already defined")]
    Duplicate(String),
    #[error("unknown view '{0}'")]
    UnknownView(String),
    #[error("view '{view}': cannot group by '{token}'")]
    InvalidGrouping { view: String, token: String },
    #[error("view '{0}' declares no measures")]
    NoMeasures(String),
    #[error("view '{0}' is stale")]
    Stale(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MViewDef {
    pub name: String,
    /// `dimension.attribute` naming a level's key or label attribute, or any
    /// level token accepted by [`StarSchema::resolve_level`].
    pub group_by: Vec<String>,
    pub measures: Vec<MeasureRef>,
    pub rewrite_enabled: bool,
}

impl MViewDef {
    /// The regime × prestation × office pre-aggregation of `montant`.
    pub fn mvt_reg_pres_br() -> Self {
        MViewDef {
            name: "MvtRegPresBr".into(),
            group_by: ["regime.libelle_regime", "prestation.libelle_prestation", "office.nom_br"]
                .map(String::from)
                .to_vec(),
            measures: alloc::vec![MeasureRef::new(Aggregator::Sum)],
            rewrite_enabled: true,
        }
    }

    pub fn resolve(&self, schema: &StarSchema) -> Result<GroupBySpec, MViewError> {
        if self.measures.is_empty() {
            return Err(MViewError::NoMeasures(self.name.clone()));
        }
        let mut spec = GroupBySpec::all(schema.dimensions.len());
        for token in &self.group_by {
            let bad = || MViewError::InvalidGrouping { view: self.name.clone(), token: token.clone() };
            let (d, l) = resolve_attribute(schema, token).ok_or_else(bad)?;
            if spec.choice(d) != LevelChoice::All {
                return Err(bad());
            }
            spec.set(d, LevelChoice::Level(l));
        }
        Ok(spec)
    }
}

fn resolve_attribute(schema: &StarSchema, token: &str) -> Option<(usize, usize)> {
    let token = token.trim();
    if let Some((dim, attr)) = token.split_once('.') {
        if let Some(d) = schema.dimension_index(dim) {
            let levels = &schema.dimensions[d].levels;
            if let Some(l) = levels.iter().position(|l| l.key_attribute == attr || l.label_attribute == attr) {
                return Some((d, l));
            }
        }
    }
    schema.resolve_level(token)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    def: MViewDef,
    spec: GroupBySpec,
    data: Option<Cuboid>,
}

/// One line of `mv list`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MViewStatus {
    pub name: String,
    pub grouping: String,
    pub built_epoch: Option<u64>,
    pub stale: bool,
    pub cells: usize,
    pub rewrite_enabled: bool,
}

/// A view able to answer a query, with the roll-up and filters still to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct RewritePlan {
    pub view: String,
    pub view_spec: GroupBySpec,
    /// Target grouping; always a roll-up of `view_spec`.
    pub residual_rollup: GroupBySpec,
    pub residual_filter: ResolvedFilter,
    pub view_cells: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MViewCatalog {
    entries: BTreeMap<String, Entry>,
}

impl MViewCatalog {
    /// Registers an unbuilt view.
    pub fn define(&mut self, schema: &StarSchema, def: MViewDef) -> Result<(), MViewError> {
        if self.entries.contains_key(&def.name) {
            return Err(MViewError::Duplicate(def.name));
        }
        let spec = def.resolve(schema)?;
        self.entries.insert(def.name.clone(), Entry { def, spec, data: None });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn def(&self, name: &str) -> Option<&MViewDef> {
        self.entries.get(name).map(|e| &e.def)
    }

    pub fn spec(&self, name: &str) -> Option<&GroupBySpec> {
        self.entries.get(name).map(|e| &e.spec)
    }

    pub fn data(&self, name: &str) -> Option<&Cuboid> {
        self.entries.get(name).and_then(|e| e.data.as_ref())
    }

    /// Unbuilt views count as stale.
    pub fn is_stale(&self, name: &str, epoch: u64) -> Option<bool> {
        self.entries.get(name).map(|e| e.data.as_ref().is_none_or(|c| c.epoch() != epoch))
    }

    /// Rebuilds the view from the facts at the warehouse's current epoch.
    pub fn refresh(&mut self, wh: &Warehouse, name: &str) -> Result<&Cuboid, MViewError> {
        let entry = self.entries.get_mut(name).ok_or_else(|| MViewError::UnknownView(name.to_string()))?;
        let cuboid = build_cuboid(wh, &entry.spec)?;
        Ok(entry.data.insert(cuboid))
    }

    /// Refreshes every stale or unbuilt view; returns the refreshed names.
    pub fn refresh_all_stale(&mut self, wh: &Warehouse) -> Result<Vec<String>, MViewError> {
        let stale: Vec<String> = self
            .entries
            .iter()
            .filter(|(_, e)| e.data.as_ref().is_none_or(|c| c.epoch() != wh.epoch()))
            .map(|(n, _)| n.clone())
            .collect();
        for n in &stale {
            self.refresh(wh, n)?;
        }
        Ok(stale)
    }

    /// Number of built views left behind by a commit to `epoch`. Staleness is
    /// derived from the recorded epochs, so nothing else changes here.
    pub fn mark_stale_on_commit(&self, epoch: u64) -> usize {
        self.entries.values().filter(|e| e.data.as_ref().is_some_and(|c| c.epoch() != epoch)).count()
    }

    /// Installs previously stored view data.
    pub fn restore(&mut self, name: &str, data: Cuboid) -> Result<(), MViewError> {
        let entry = self.entries.get_mut(name).ok_or_else(|| MViewError::UnknownView(name.to_string()))?;
        if data.spec() != &entry.spec {
            return Err(MViewError::InvalidGrouping { view: name.to_string(), token: "stored grouping".into() });
        }
        entry.data = Some(data);
        Ok(())
    }

    pub fn status(&self, schema: &StarSchema, epoch: u64) -> Vec<MViewStatus> {
        self.entries
            .values()
            .map(|e| MViewStatus {
                name: e.def.name.clone(),
                grouping: e.spec.display(schema).to_string(),
                built_epoch: e.data.as_ref().map(Cuboid::epoch),
                stale: e.data.as_ref().is_none_or(|c| c.epoch() != epoch),
                cells: e.data.as_ref().map_or(0, Cuboid::len),
                rewrite_enabled: e.def.rewrite_enabled,
            })
            .collect()
    }

    /// Picks the smallest fresh, rewrite-enabled view that can answer `q`:
    /// the query grouping rolls up from the view's, every filtered dimension is
    /// grouped by the view at or below the filter level, and every measure is
    /// derivable from the stored (sum, count). Ties go to the first name.
    pub fn rewrite(&self, wh: &Warehouse, q: &ResolvedQuery) -> Option<RewritePlan> {
        let derivable = q
            .measures
            .iter()
            .all(|m| matches!(m.aggregator, Aggregator::Sum | Aggregator::Count | Aggregator::Average));
        if !derivable {
            return None;
        }
        let (name, e, data) = self
            .entries
            .iter()
            .filter(|(_, e)| e.def.rewrite_enabled)
            .filter_map(|(n, e)| e.data.as_ref().map(|d| (n, e, d)))
            .filter(|(_, _, d)| d.epoch() == wh.epoch())
            .filter(|(_, e, _)| q.answerable_from(&e.spec))
            .min_by_key(|(_, _, d)| d.len())?;
        Some(RewritePlan {
            view: name.clone(),
            view_spec: e.spec.clone(),
            residual_rollup: q.spec.clone(),
            residual_filter: q.filter.clone(),
            view_cells: data.len(),
            epoch: data.epoch(),
        })
    }

    pub fn answer_from(&self, wh: &Warehouse, plan: &RewritePlan, q: &ResolvedQuery) -> Result<ResultGrid, MViewError> {
        let data = self
            .entries
            .get(&plan.view)
            .ok_or_else(|| MViewError::UnknownView(plan.view.clone()))?
            .data
            .as_ref()
            .filter(|d| d.epoch() == wh.epoch() && d.epoch() == plan.epoch)
            .ok_or_else(|| MViewError::Stale(plan.view.clone()))?;
        let cells = aggregate_cuboid(wh, data, &plan.residual_rollup, &plan.residual_filter);
        let prov = Provenance { plan: PlanKind::MView(plan.view.clone()), input_rows: data.len() };
        Ok(build_grid(wh, q, cells, prov))
    }
}

impl core::fmt::Display for MViewStatus {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let epoch = self.built_epoch.map_or_else(|| "-".to_string(), |e| format!("{e}"));
        write!(f, "{} [{}] epoch={} stale={} cells={}", self.name, self.grouping, epoch, self.stale, self.cells)
    }
}
