#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starcube_core::cube::GroupBySpec;
use starcube_core::schema::{nssf_default_schema, StarSchema};
use starcube_core::store::{FactRecord, Record, ScanFilter, Warehouse};
use starcube_core::value::{NaiveDate, Value};

pub const GOVERNORATES: [&str; 4] = ["ARIANA", "BEJA", "GABES", "KEBILI"];
pub const PRESTATIONS: [u32; 8] = [66, 67, 68, 69, 76, 77, 78, 79];

fn rec(pairs: &[(&str, String)]) -> Record {
    pairs.iter().map(|(k, v)| (k.to_string(), Value::Text(v.clone()))).collect()
}

/// Small NSSF-shaped warehouse with `facts` random movements.
pub fn random_warehouse(seed: u64, facts: usize) -> Warehouse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wh = Warehouse::new(Arc::new(nssf_default_schema())).unwrap();
    let insured: Vec<Record> = (0..25)
        .map(|i| rec(&[("matricule", format!("M{i:04}")), ("nom", format!("N{i}")), ("etat_civil", "C".into())]))
        .collect();
    wh.insert_members("insured", &insured).unwrap();
    let offices: Vec<Record> = (0..9)
        .map(|i| {
            rec(&[
                ("code_br", (10 + i).to_string()),
                ("nom_br", format!("BR-{}", 10 + i)),
                ("code_postal", "1000".into()),
                ("governorate", GOVERNORATES[i % 4].into()),
            ])
        })
        .collect();
    wh.insert_members("office", &offices).unwrap();
    let pay: Vec<Record> =
        (1..=3).map(|i| rec(&[("code_paiement", i.to_string()), ("libelle_paiement", format!("P{i}"))])).collect();
    wh.insert_members("payment", &pay).unwrap();
    let reg: Vec<Record> =
        (1..=3).map(|i| rec(&[("code_regime", i.to_string()), ("libelle_regime", format!("R{i}"))])).collect();
    wh.insert_members("regime", &reg).unwrap();
    let pres: Vec<Record> = PRESTATIONS
        .iter()
        .map(|p| rec(&[("code_prestation", p.to_string()), ("libelle_prestation", format!("PR{p}"))]))
        .collect();
    wh.insert_members("prestation", &pres).unwrap();

    let start = NaiveDate::from_ymd_opt(2008, 11, 1).unwrap();
    let mut rows = Vec::with_capacity(facts);
    let mut days = BTreeSet::new();
    for _ in 0..facts {
        let day = start + chrono::Days::new(rng.random_range(0..500));
        days.insert(day);
        let p = PRESTATIONS[rng.random_range(0..8)];
        let mag: i64 = rng.random_range(1..5_000_000);
        rows.push(FactRecord {
            keys: vec![
                format!("M{:04}", rng.random_range(0..25)),
                (10 + rng.random_range(0..9)).to_string(),
                starcube_core::value::format_iso_date(day),
                rng.random_range(1..=3).to_string(),
                rng.random_range(1..=3).to_string(),
                p.to_string(),
            ],
            amount: if p >= 76 { -mag } else { mag },
        });
    }
    wh.ensure_time_members(days).unwrap();
    let ins = wh.insert_facts(&rows);
    assert_eq!(ins.inserted, facts);
    wh
}

/// Key attribute value of fact `row` at level `level` of `dim`, read from the
/// member's attribute columns.
pub fn member_key(wh: &Warehouse, dim: usize, level: usize, row: usize) -> String {
    let schema = wh.schema();
    let member = wh.facts().keys(dim)[row];
    let attr = &schema.dimensions[dim].levels[level].key_attribute;
    wh.dimension(dim).attribute(member, attr).unwrap().to_string()
}

/// Row passes every clause and the time range, judged from attribute strings.
pub fn row_matches(wh: &Warehouse, filter: &ScanFilter, row: usize) -> bool {
    let schema = wh.schema();
    for c in &filter.clauses {
        let d = schema.dimension_index(&c.dimension).unwrap();
        let l = schema.dimensions[d].level_index(&c.level).unwrap();
        if !c.members.contains(&member_key(wh, d, l, row)) {
            return false;
        }
    }
    if let Some(r) = filter.time_range {
        let t = schema.time_dimension().unwrap();
        let day = starcube_core::value::parse_iso_date(&member_key(wh, t, 0, row));
        if !day.is_some_and(|d| d >= r.from && d <= r.to) {
            return false;
        }
    }
    true
}

/// Per-row accumulation keyed by member keys of the grouped levels.
pub fn brute_force(wh: &Warehouse, spec: &GroupBySpec, filter: &ScanFilter) -> BTreeMap<Vec<String>, (i64, u64)> {
    let mut out: BTreeMap<Vec<String>, (i64, u64)> = BTreeMap::new();
    for row in 0..wh.fact_count() {
        if !row_matches(wh, filter, row) {
            continue;
        }
        let key: Vec<String> = spec.grouped().map(|(d, l)| member_key(wh, d, l, row)).collect();
        let e = out.entry(key).or_default();
        e.0 += wh.facts().amounts()[row];
        e.1 += 1;
    }
    out
}

pub fn schema() -> StarSchema {
    nssf_default_schema()
}

/// Random grouping, member filters and time range over [`random_warehouse`].
pub fn random_query(wh: &Warehouse, rng: &mut impl Rng) -> starcube_core::query::AggregateQuery {
    use starcube_core::query::{AggregateQuery, MeasureRef};
    use starcube_core::schema::Aggregator;
    use starcube_core::store::{DateRange, FilterClause};
    let schema = wh.schema();
    let mut dims: Vec<usize> = (0..schema.dimensions.len()).filter(|_| rng.random_bool(0.4)).collect();
    // shuffle axis order
    for i in (1..dims.len()).rev() {
        dims.swap(i, rng.random_range(0..=i));
    }
    let group_by = dims
        .iter()
        .map(|&d| {
            let dim = &schema.dimensions[d];
            format!("{}.{}", dim.name, dim.levels[rng.random_range(0..dim.levels.len())].name)
        })
        .collect();
    let mut filter = ScanFilter::default();
    for (d, dim) in schema.dimensions.iter().enumerate() {
        if !rng.random_bool(0.25) {
            continue;
        }
        let l = rng.random_range(0..dim.levels.len());
        let level = wh.dimension(d).level(l);
        let members: BTreeSet<String> = (1..level.cardinality() as u32)
            .filter(|_| rng.random_bool(0.5))
            .map(|id| level.key(id).to_string())
            .collect();
        filter.clauses.push(FilterClause { dimension: dim.name.clone(), level: dim.levels[l].name.clone(), members });
    }
    if rng.random_bool(0.3) {
        let base = NaiveDate::from_ymd_opt(2008, 11, 1).unwrap();
        let a = base + chrono::Days::new(rng.random_range(0..500));
        let b = a + chrono::Days::new(rng.random_range(0..200));
        filter.time_range = Some(DateRange { from: a, to: b });
    }
    let all = [Aggregator::Sum, Aggregator::Count, Aggregator::Average];
    let measures = (0..rng.random_range(1..=3)).map(|i| MeasureRef::new(all[i])).collect();
    AggregateQuery { measures, group_by, filter, sort: None, limit: None }
}
