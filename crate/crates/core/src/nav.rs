//! Interactive navigation over an [`AggregateQuery`]: roll up, drill down,
//! slice and dice, each step undoable with `back`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::query::AggregateQuery;
use crate::store::{DateRange, FilterClause, ScanFilter, StoreError, Warehouse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NavError {
    #[error("unknown dimension '{0}'")]
    UnknownDimension(String),
    #[error("dimension '{0}' is already at ALL")]
    AlreadyAll(String),
    #[error("dimension '{0}' is already at its finest level")]
    AtFinest(String),
    #[error("'{member}' is not a member of {dimension} at the current level")]
    BadAnchor { dimension: String, member: String },
    #[error("query axis '{0}' does not resolve")]
    BadAxis(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavState {
    pub current: AggregateQuery,
    pub history: Vec<AggregateQuery>,
}

impl NavState {
    pub fn new(query: AggregateQuery) -> Self {
        NavState { current: query, history: Vec::new() }
    }

    /// Index into `group_by` and level of `dim`, or `None` at ALL.
    fn axis(&self, wh: &Warehouse, dim: usize) -> Result<Option<(usize, usize)>, NavError> {
        for (i, token) in self.current.group_by.iter().enumerate() {
            let (d, l) = wh.schema().resolve_level(token).ok_or_else(|| NavError::BadAxis(token.clone()))?;
            if d == dim {
                return Ok(Some((i, l)));
            }
        }
        Ok(None)
    }

    fn token(wh: &Warehouse, dim: usize, level: usize) -> String {
        let d = &wh.schema().dimensions[dim];
        format!("{}.{}", d.name, d.levels[level].name)
    }

    fn commit(&mut self, next: AggregateQuery) {
        let prev = core::mem::replace(&mut self.current, next);
        self.history.push(prev);
    }

    /// Moves `dimension` one level coarser; the coarsest level goes to ALL.
    /// Filters are kept.
    pub fn roll_up(&mut self, wh: &Warehouse, dimension: &str) -> Result<(), NavError> {
        let (dim, table) = dim_of(wh, dimension)?;
        let (i, level) = self.axis(wh, dim)?.ok_or_else(|| NavError::AlreadyAll(dimension.to_string()))?;
        let mut next = self.current.clone();
        if level + 1 < table.levels().len() {
            next.group_by[i] = Self::token(wh, dim, level + 1);
        } else {
            next.group_by.remove(i);
        }
        self.commit(next);
        Ok(())
    }

    /// Moves `dimension` one level finer (from ALL: its coarsest level, added as
    /// the last axis). An anchor, a member key at the current level, restricts
    /// the result to its children.
    pub fn drill_down(&mut self, wh: &Warehouse, dimension: &str, anchor: Option<&str>) -> Result<(), NavError> {
        let (dim, table) = dim_of(wh, dimension)?;
        let mut next = self.current.clone();
        let current = self.axis(wh, dim)?;
        if let Some(member) = anchor {
            let bad = || NavError::BadAnchor { dimension: dimension.to_string(), member: member.to_string() };
            let (_, level) = current.ok_or_else(bad)?;
            if level == 0 {
                return Err(NavError::AtFinest(dimension.to_string()));
            }
            table.level(level).id(member).ok_or_else(bad)?;
            next.filter.restrict(FilterClause {
                dimension: table.name().to_string(),
                level: table.level(level).name().to_string(),
                members: BTreeSet::from([member.to_string()]),
            });
        }
        match current {
            None => next.group_by.push(Self::token(wh, dim, table.levels().len() - 1)),
            Some((_, 0)) => return Err(NavError::AtFinest(dimension.to_string())),
            Some((i, level)) => next.group_by[i] = Self::token(wh, dim, level - 1),
        }
        self.commit(next);
        Ok(())
    }

    /// Restricts `dimension` to one member at `level`.
    pub fn slice(&mut self, wh: &Warehouse, dimension: &str, level: &str, member: &str) -> Result<(), NavError> {
        let clause = FilterClause {
            dimension: dimension.to_string(),
            level: level.to_string(),
            members: BTreeSet::from([member.to_string()]),
        };
        self.dice(wh, &ScanFilter { clauses: alloc::vec![clause], time_range: None })
    }

    /// Adds every clause of `filters` at once.
    pub fn dice(&mut self, wh: &Warehouse, filters: &ScanFilter) -> Result<(), NavError> {
        wh.resolve_filter(filters)?;
        let mut next = self.current.clone();
        for c in &filters.clauses {
            next.filter.restrict(c.clone());
        }
        if let Some(r) = filters.time_range {
            match next.filter.time_range {
                None => next.filter.time_range = Some(r),
                Some(old) => {
                    let from = old.from.max(r.from);
                    let to = old.to.min(r.to);
                    if from <= to {
                        next.filter.time_range = Some(DateRange { from, to });
                    } else {
                        // disjoint ranges: an empty day set matches nothing
                        let t = wh.schema().time_dimension().ok_or(StoreError::NoTimeDimension)?;
                        let time = &wh.schema().dimensions[t];
                        next.filter.restrict(FilterClause {
                            dimension: time.name.clone(),
                            level: time.levels[0].name.clone(),
                            members: BTreeSet::new(),
                        });
                    }
                }
            }
        }
        self.commit(next);
        Ok(())
    }

    /// Restores the previous query; false when there is none.
    pub fn back(&mut self) -> bool {
        match self.history.pop() {
            Some(q) => {
                self.current = q;
                true
            }
            None => false,
        }
    }
}

fn dim_of<'a>(wh: &'a Warehouse, name: &str) -> Result<(usize, &'a crate::store::DimensionTable), NavError> {
    wh.dimension_named(name).map_err(|_| NavError::UnknownDimension(name.to_string()))
}
