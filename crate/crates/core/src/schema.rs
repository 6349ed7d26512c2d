//! Star-schema metadata: dimensions with level hierarchies, the fact table and its measure.
//!
//! Levels are listed finest first. The implicit coarsest level of every dimension (ALL)
//! is not part of [`DimensionDef`]; it only appears in group-by specifications.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;

use hashbrown::HashSet;

use crate::value::ScalarKind;

/// Name of the dimension that receives calendar handling.
pub const TIME_DIMENSION: &str = "time";
/// Required level names of the time dimension, finest first.
pub const TIME_LEVELS: [&str; 4] = ["day", "month", "quarter", "year"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeDef {
    pub name: String,
    pub kind: ScalarKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelDef {
    pub name: String,
    /// 0 is the finest level.
    pub ordinal: usize,
    pub key_attribute: String,
    pub label_attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionDef {
    pub name: String,
    pub levels: Vec<LevelDef>,
    pub attributes: Vec<AttributeDef>,
}

impl DimensionDef {
    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// The finest level's key attribute identifies a member.
    pub fn natural_key(&self) -> &str {
        &self.levels[0].key_attribute
    }

    pub fn is_time(&self) -> bool {
        self.name == TIME_DIMENSION
    }
}

/// How a measure is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregator {
    Sum,
    Count,
    Average,
}

impl Aggregator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Aggregator::Sum),
            "count" => Some(Aggregator::Count),
            "average" | "avg" => Some(Aggregator::Average),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Count => "count",
            Aggregator::Average => "average",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasureDef {
    pub name: String,
    /// Kept as written in the schema document so unsupported names surface in `validate`.
    pub aggregator: String,
    pub unit: String,
}

impl MeasureDef {
    pub fn aggregator(&self) -> Option<Aggregator> {
        Aggregator::parse(&self.aggregator)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionKey {
    pub dimension: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactDef {
    pub name: String,
    pub dimension_keys: Vec<DimensionKey>,
    pub measures: Vec<MeasureDef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarSchema {
    pub fact: FactDef,
    pub dimensions: Vec<DimensionDef>,
}

/// One broken invariant, reported by [`StarSchema::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { path: path.into(), message: message.into() }
}

impl StarSchema {
    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionDef> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn time_dimension(&self) -> Option<usize> {
        self.dimensions.iter().position(DimensionDef::is_time)
    }

    /// The single stored measure.
    pub fn measure(&self) -> &MeasureDef {
        &self.fact.measures[0]
    }

    /// Fact column holding the natural key of dimension `dim` (schema order).
    pub fn fact_key_column(&self, dim: usize) -> Option<&str> {
        let name = &self.dimensions[dim].name;
        self.fact.dimension_keys.iter().find(|k| &k.dimension == name).map(|k| k.column.as_str())
    }

    /// Resolves `dim.level`, a bare level name that is unique across dimensions,
    /// or a bare dimension name (its finest level).
    pub fn resolve_level(&self, token: &str) -> Option<(usize, usize)> {
        let token = token.trim();
        if let Some((d, l)) = token.split_once('.') {
            let di = self.dimension_index(d)?;
            let li = self.dimensions[di].level_index(l)?;
            return Some((di, li));
        }
        let mut hits = self.dimensions.iter().enumerate().filter_map(|(di, d)| d.level_index(token).map(|li| (di, li)));
        if let Some(first) = hits.next() {
            if hits.next().is_none() {
                return Some(first);
            }
            // ambiguous level name: only an exact dimension name can settle it
        }
        self.dimension_index(token).map(|di| (di, 0))
    }

    /// Empty iff every schema invariant holds.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for d in &self.dimensions {
            if !seen.insert(d.name.as_str()) {
                out.push(violation(format!("dimension.{}", d.name), "duplicate dimension"));
            }
        }
        for d in &self.dimensions {
            validate_dimension(d, &mut out);
        }

        let fact = &self.fact;
        let mut referenced = HashSet::new();
        for k in &fact.dimension_keys {
            if self.dimension(&k.dimension).is_none() {
                out.push(violation(
                    format!("fact.{}", k.column),
                    format!("unresolved dimension key '{}'", k.dimension),
                ));
            } else if !referenced.insert(k.dimension.as_str()) {
                out.push(violation(
                    format!("fact.{}", k.column),
                    format!("duplicate foreign key for dimension '{}'", k.dimension),
                ));
            }
        }
        for d in &self.dimensions {
            if !referenced.contains(d.name.as_str()) {
                out.push(violation(format!("dimension.{}", d.name), "dimension is not referenced by the fact"));
            }
        }
        if fact.measures.len() != 1 {
            out.push(violation(
                "fact.measure",
                format!("fact must declare exactly one stored measure, found {}", fact.measures.len()),
            ));
        }
        let mut names = HashSet::new();
        for m in &fact.measures {
            if !names.insert(m.name.as_str()) {
                out.push(violation(format!("fact.measure.{}", m.name), "duplicate measure"));
            }
            if m.aggregator().is_none() {
                out.push(violation(
                    format!("fact.measure.{}", m.name),
                    format!("unsupported aggregator '{}'", m.aggregator),
                ));
            }
        }
        out
    }

    /// Stable 64-bit digest of the schema; snapshots record it and refuse to load
    /// against a different schema.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        let mut put = |s: &str| {
            h.write(s.as_bytes());
            h.write_u8(0xff);
        };
        for d in &self.dimensions {
            put("dimension");
            put(&d.name);
            for a in &d.attributes {
                put(&a.name);
                put(a.kind.as_str());
            }
            for l in &d.levels {
                put(&l.name);
                put(&format!("{}", l.ordinal));
                put(&l.key_attribute);
                put(&l.label_attribute);
            }
        }
        put("fact");
        put(&self.fact.name);
        for k in &self.fact.dimension_keys {
            put(&k.dimension);
            put(&k.column);
        }
        for m in &self.fact.measures {
            put(&m.name);
            put(&m.aggregator);
            put(&m.unit);
        }
        h.finish()
    }
}

fn validate_dimension(d: &DimensionDef, out: &mut Vec<Violation>) {
    let path = format!("dimension.{}", d.name);
    if d.levels.is_empty() {
        out.push(violation(path, "dimension has no levels"));
        return;
    }
    let mut attrs = HashSet::new();
    for a in &d.attributes {
        if !attrs.insert(a.name.as_str()) {
            out.push(violation(format!("{path}.{}", a.name), "duplicate attribute"));
        }
    }
    let ordinals_ok = d.levels.iter().enumerate().all(|(i, l)| l.ordinal == i);
    if !ordinals_ok {
        out.push(violation(path.clone(), "level ordinals must run 0..n-1 from finest to coarsest"));
    }
    let mut level_names = HashSet::new();
    for l in &d.levels {
        if !level_names.insert(l.name.as_str()) {
            out.push(violation(format!("{path}.{}", l.name), "duplicate level"));
        }
        for attr in [&l.key_attribute, &l.label_attribute] {
            if d.attribute_index(attr).is_none() {
                out.push(violation(
                    format!("{path}.{}", l.name),
                    format!("level attribute '{attr}' is not a member attribute"),
                ));
            }
        }
    }
    if d.is_time() && ordinals_ok {
        let names: Vec<&str> = d.levels.iter().map(|l| l.name.as_str()).collect();
        if names != TIME_LEVELS {
            out.push(violation(path, "time levels must be day < month < quarter < year"));
        }
    }
}

fn attr(name: &str, kind: ScalarKind) -> AttributeDef {
    AttributeDef { name: name.to_owned(), kind }
}

fn level(name: &str, ordinal: usize, key: &str, label: &str) -> LevelDef {
    LevelDef { name: name.to_owned(), ordinal, key_attribute: key.to_owned(), label_attribute: label.to_owned() }
}

fn single_level(name: &str, key: &str, key_kind: ScalarKind, label: &str) -> DimensionDef {
    DimensionDef {
        name: name.to_owned(),
        levels: vec![level(name, 0, key, label)],
        attributes: vec![attr(key, key_kind), attr(label, ScalarKind::Text)],
    }
}

/// The insured-account movements warehouse: fact `mvtass` over six dimensions.
pub fn nssf_default_schema() -> StarSchema {
    use ScalarKind::*;
    let insured = DimensionDef {
        name: "insured".into(),
        levels: vec![level("insured", 0, "matricule", "nom")],
        attributes: vec![attr("matricule", Text), attr("nom", Text), attr("etat_civil", Text)],
    };
    let office = DimensionDef {
        name: "office".into(),
        levels: vec![level("office", 0, "code_br", "nom_br"), level("governorate", 1, "governorate", "governorate")],
        attributes: vec![
            attr("code_br", Integer),
            attr("nom_br", Text),
            attr("code_postal", Text),
            attr("governorate", Text),
        ],
    };
    let time = DimensionDef {
        name: TIME_DIMENSION.into(),
        levels: vec![
            level("day", 0, "date", "date"),
            level("month", 1, "month", "month"),
            level("quarter", 2, "quarter", "quarter"),
            level("year", 3, "year", "year"),
        ],
        attributes: vec![attr("date", Date), attr("month", Text), attr("quarter", Text), attr("year", Integer)],
    };
    let payment = single_level("payment", "code_paiement", Integer, "libelle_paiement");
    let regime = single_level("regime", "code_regime", Integer, "libelle_regime");
    let prestation = single_level("prestation", "code_prestation", Integer, "libelle_prestation");

    let key =
        |dimension: &str, column: &str| DimensionKey { dimension: dimension.to_owned(), column: column.to_owned() };
    StarSchema {
        fact: FactDef {
            name: "mvtass".into(),
            dimension_keys: vec![
                key("insured", "matricule"),
                key("office", "code_br"),
                key("time", "date_mvt"),
                key("payment", "code_paiement"),
                key("regime", "code_regime"),
                key("prestation", "code_prestation"),
            ],
            measures: vec![MeasureDef { name: "montant".into(), aggregator: "sum".into(), unit: "millimes".into() }],
        },
        dimensions: vec![insured, office, time, payment, regime, prestation],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_is_valid() {
        let s = nssf_default_schema();
        assert_eq!(s.validate(), vec![]);
        assert_eq!(s.dimensions.len(), 6);
        assert_eq!(s.dimension("time").unwrap().levels.len(), 4);
        let office = s.dimension("office").unwrap();
        assert_eq!(office.levels.len(), 2);
        for a in ["code_br", "nom_br", "code_postal", "governorate"] {
            assert!(office.attribute_index(a).is_some(), "{a}");
        }
        assert_eq!(s.measure().name, "montant");
        assert_eq!(s.measure().unit, "millimes");
        for d in ["insured", "payment", "regime", "prestation"] {
            assert_eq!(s.dimension(d).unwrap().levels.len(), 1);
        }
    }

    #[test]
    fn ordinals_are_dense() {
        for d in nssf_default_schema().dimensions {
            let ords: Vec<usize> = d.levels.iter().map(|l| l.ordinal).collect();
            assert_eq!(ords, (0..d.levels.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn duplicate_dimension() {
        let mut s = nssf_default_schema();
        let dup = s.dimension("regime").unwrap().clone();
        s.dimensions.push(dup);
        let v = s.validate();
        assert!(v.iter().any(|v| v.message == "duplicate dimension"), "{v:?}");
    }

    #[test]
    fn unresolved_dimension_key() {
        let mut s = nssf_default_schema();
        s.fact.dimension_keys.push(DimensionKey { dimension: "agency".into(), column: "code_ag".into() });
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("unresolved dimension key"));
    }

    #[test]
    fn inverted_time_levels_is_one_violation() {
        let mut s = nssf_default_schema();
        let t = s.dimensions.iter_mut().find(|d| d.is_time()).unwrap();
        t.levels = vec![level("month", 0, "month", "month"), level("day", 1, "date", "date")];
        assert_eq!(s.validate().len(), 1);

        // same levels with ordinals swapped against list order: still a single violation
        let t = s.dimensions.iter_mut().find(|d| d.is_time()).unwrap();
        t.levels = vec![level("month", 1, "month", "month"), level("day", 0, "date", "date")];
        assert_eq!(s.validate().len(), 1);
    }

    #[test]
    fn unsupported_aggregator() {
        let mut s = nssf_default_schema();
        s.fact.measures[0].aggregator = "median".into();
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("unsupported aggregator"));
    }

    #[test]
    fn level_tokens() {
        let s = nssf_default_schema();
        let office = s.dimension_index("office").unwrap();
        assert_eq!(s.resolve_level("governorate"), Some((office, 1)));
        assert_eq!(s.resolve_level("office.governorate"), Some((office, 1)));
        assert_eq!(s.resolve_level("office"), Some((office, 0)));
        let p = s.dimension_index("prestation").unwrap();
        assert_eq!(s.resolve_level("prestation"), Some((p, 0)));
        assert_eq!(s.resolve_level("nope"), None);
        assert_eq!(s.resolve_level("time.week"), None);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = nssf_default_schema();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.dimensions[0].attributes[2].name = "marital".into();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
