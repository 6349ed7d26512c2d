//! Seeded synthetic warehouse sources at the NSSF cardinalities: offices over
//! governorates, regimes, benefit codes, payment modes, insured persons and
//! movements split across a fixed-width, a delimited and a sheet export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};
use starcube_core::mview::MViewDef;
use starcube_core::schema::nssf_default_schema;
use starcube_core::store::{FactRecord, Record};
use starcube_core::value::{format_iso_date, NaiveDate, Value};

use crate::config::{
    ColumnType, FieldKind, FixedWidthLayout, LayoutField, PipelineConfig, PipelineSettings, SourceKind, SourceSpec,
    ViewSpec,
};
use crate::error::{Error, Result};
use crate::extract::{encode_zoned, format_sheet_date};
use crate::state::State;

pub const GOVERNORATES: [&str; 24] = [
    "ARIANA",
    "BEJA",
    "BEN AROUS",
    "BIZERTE",
    "GABES",
    "GAFSA",
    "JENDOUBA",
    "KAIROUAN",
    "KASSERINE",
    "KEBILI",
    "LE KEF",
    "MAHDIA",
    "MANOUBA",
    "MEDENINE",
    "MONASTIR",
    "NABEUL",
    "SFAX",
    "SIDI BOUZID",
    "SILIANA",
    "SOUSSE",
    "TATAOUINE",
    "TOZEUR",
    "TUNIS",
    "ZAGHOUAN",
];

const REGIMES: [&str; 6] = ["RSNA", "RSAA", "RSAAA", "RTNS", "RTSE", "RETUDIANTS"];
const PAYMENTS: [&str; 4] = ["CHEQUE", "VIREMENT", "MANDAT", "ESPECES"];
/// Contribution codes come first, then benefit payout codes.
const PRESTATION_CODES: [u32; 8] = [66, 67, 68, 69, 76, 77, 78, 79];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub facts: usize,
    pub offices: usize,
    pub governorates: usize,
    pub regimes: usize,
    pub prestations: usize,
    pub insured: usize,
    pub payments: usize,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            seed: 42,
            facts: 10_000,
            offices: 41,
            governorates: 24,
            regimes: 6,
            prestations: 8,
            insured: 2_000,
            payments: 4,
            first_day: NaiveDate::from_ymd_opt(2007, 1, 1).expect("valid"),
            last_day: NaiveDate::from_ymd_opt(2010, 12, 31).expect("valid"),
        }
    }
}

impl GenSpec {
    pub fn check(&self) -> Result<()> {
        let counts = [
            ("offices", self.offices),
            ("governorates", self.governorates),
            ("regimes", self.regimes),
            ("prestations", self.prestations),
            ("insured", self.insured),
            ("payments", self.payments),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Usage(format!("{name} must be at least 1")));
        }
        if self.governorates > self.offices {
            return Err(Error::Usage("governorates must not exceed offices".into()));
        }
        if self.offices > 9_000 || self.prestations > 99 || self.regimes > 99 || self.payments > 99 {
            return Err(Error::Usage("counts exceed the source record widths".into()));
        }
        if self.first_day > self.last_day {
            return Err(Error::Usage("first day is after last day".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Office {
    pub code: u32,
    pub name: String,
    pub postal: String,
    pub governorate: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Movement {
    pub matricule: String,
    pub office: u32,
    pub day: NaiveDate,
    pub payment: u32,
    pub regime: u32,
    pub prestation: u32,
    pub montant: i64,
}

/// Generated member lists and movements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub offices: Vec<Office>,
    pub insured: Vec<(String, String, String)>,
    pub payments: Vec<(u32, String)>,
    pub regimes: Vec<(u32, String)>,
    pub prestations: Vec<(u32, String)>,
    pub facts: Vec<Movement>,
}

fn governorate_name(i: usize) -> String {
    GOVERNORATES.get(i).map_or_else(|| format!("GOVERNORATE {}", i + 1), |g| g.to_string())
}

pub fn generate(spec: &GenSpec) -> Result<Generated> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Every governorate gets one office; the rest go to random governorates.
    let mut per_gov = vec![1usize; spec.governorates];
    let mut office_gov: Vec<usize> = (0..spec.governorates).collect();
    for _ in spec.governorates..spec.offices {
        let g = rng.random_range(0..spec.governorates);
        per_gov[g] += 1;
        office_gov.push(g);
    }
    let mut seen = vec![0usize; spec.governorates];
    let offices: Vec<Office> = office_gov
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            seen[g] += 1;
            let gov = governorate_name(g);
            let name = if per_gov[g] == 1 { gov.clone() } else { format!("{gov} {}", seen[g]) };
            Office { code: 10 + i as u32, name, postal: format!("{:04}", 1000 + 100 * g + seen[g]), governorate: gov }
        })
        .collect();

    let insured: Vec<(String, String, String)> = (0..spec.insured)
        .map(|i| {
            let civil = ["C", "M", "D", "V"][rng.random_range(0..4)];
            (format!("{:08}", 10_000_000 + i), format!("ASSURE {i}"), civil.to_string())
        })
        .collect();
    let named = |n: usize, names: &[&str], prefix: &str| -> Vec<(u32, String)> {
        (0..n)
            .map(|i| (i as u32 + 1, names.get(i).map_or_else(|| format!("{prefix} {}", i + 1), |s| s.to_string())))
            .collect()
    };
    let payments = named(spec.payments, &PAYMENTS, "PAIEMENT");
    let regimes = named(spec.regimes, &REGIMES, "REGIME");
    let prestations: Vec<(u32, String)> = (0..spec.prestations)
        .map(|i| {
            let code = PRESTATION_CODES.get(i).copied().unwrap_or(80 + i as u32);
            (code, format!("PRESTATION {code}"))
        })
        .collect();

    // Skewed group sizes: office and regime weights fall off with rank.
    let zipf = |n: usize, s: f64| {
        WeightedIndex::new((0..n).map(|r| 1.0 / ((r + 1) as f64).powf(s))).expect("positive weights")
    };
    let office_w = zipf(offices.len(), 0.8);
    let regime_w = zipf(regimes.len(), 1.2);
    let magnitude = LogNormal::new(11.0, 1.5).expect("valid parameters");
    let span = (spec.last_day - spec.first_day).num_days() as u64;
    let half = spec.prestations.div_ceil(2);

    let mut facts = Vec::with_capacity(spec.facts);
    for _ in 0..spec.facts {
        let p = rng.random_range(0..prestations.len());
        let mag = (magnitude.sample(&mut rng) as i64).clamp(1, 999_999_999_999);
        facts.push(Movement {
            matricule: insured[rng.random_range(0..insured.len())].0.clone(),
            office: offices[office_w.sample(&mut rng)].code,
            day: spec.first_day + chrono::Days::new(rng.random_range(0..=span)),
            payment: payments[rng.random_range(0..payments.len())].0,
            regime: regimes[regime_w.sample(&mut rng)].0,
            prestation: prestations[p].0,
            montant: if p < half { mag } else { -mag },
        });
    }
    Ok(Generated { offices, insured, payments, regimes, prestations, facts })
}

fn text(s: &str) -> Value {
    Value::Text(s.to_string())
}

fn record(pairs: &[(&str, Value)]) -> Record {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

impl Generated {
    /// Loads the data straight into a fresh state, bypassing the source files.
    pub fn to_state(&self) -> Result<State> {
        let mut state = State::new(Arc::new(nssf_default_schema()))?;
        let wh = &mut state.wh;
        let offices: Vec<Record> = self
            .offices
            .iter()
            .map(|o| {
                record(&[
                    ("code_br", Value::Int(o.code.into())),
                    ("nom_br", text(&o.name)),
                    ("code_postal", text(&o.postal)),
                    ("governorate", text(&o.governorate)),
                ])
            })
            .collect();
        wh.insert_members("office", &offices)?;
        let insured: Vec<Record> = self
            .insured
            .iter()
            .map(|(m, n, c)| record(&[("matricule", text(m)), ("nom", text(n)), ("etat_civil", text(c))]))
            .collect();
        wh.insert_members("insured", &insured)?;
        for (dim, key, label, rows) in [
            ("payment", "code_paiement", "libelle_paiement", &self.payments),
            ("regime", "code_regime", "libelle_regime", &self.regimes),
            ("prestation", "code_prestation", "libelle_prestation", &self.prestations),
        ] {
            let recs: Vec<Record> =
                rows.iter().map(|(c, l)| record(&[(key, Value::Int((*c).into())), (label, text(l))])).collect();
            wh.insert_members(dim, &recs)?;
        }
        wh.ensure_time_members(self.facts.iter().map(|f| f.day).collect::<BTreeSet<_>>())?;
        let rows: Vec<FactRecord> = self
            .facts
            .iter()
            .map(|f| FactRecord {
                keys: vec![
                    f.matricule.clone(),
                    f.office.to_string(),
                    format_iso_date(f.day),
                    f.payment.to_string(),
                    f.regime.to_string(),
                    f.prestation.to_string(),
                ],
                amount: f.montant,
            })
            .collect();
        let ins = wh.insert_facts(&rows);
        if !ins.rejected.is_empty() {
            return Err(Error::Data(format!("{} generated facts did not resolve", ins.rejected.len())));
        }
        Ok(state)
    }

    /// Writes the source files, `pipeline.toml` and `manifest.json` into `dir`.
    pub fn write(&self, spec: &GenSpec, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = BTreeMap::new();
        let mut put = |name: &str, body: String, rows: usize| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            files.insert(name.to_string(), rows);
            Ok(())
        };

        let n = self.offices.len();
        let mut dat = String::new();
        for o in &self.offices {
            writeln!(dat, "{:>4}{:<24}{:<6}{:<16}", o.code, o.name, o.postal, o.governorate).expect("string");
        }
        put("offices.dat", dat, n)?;
        put(
            "offices_oracle.csv",
            delimited(
                ',',
                &["code_br", "nom_br", "code_postal", "governorate"],
                self.offices
                    .iter()
                    .map(|o| vec![o.code.to_string(), o.name.clone(), o.postal.clone(), o.governorate.clone()]),
            ),
            n,
        )?;
        put(
            "offices_excel.csv",
            delimited(
                ';',
                &["code_br", "nom_br", "code_postal", "governorate"],
                self.offices
                    .iter()
                    .map(|o| vec![o.code.to_string(), o.name.clone(), o.postal.clone(), o.governorate.clone()]),
            ),
            n,
        )?;
        put(
            "insured.csv",
            delimited(
                ',',
                &["matricule", "nom", "etat_civil"],
                self.insured.iter().map(|(m, n, c)| vec![m.clone(), n.clone(), c.clone()]),
            ),
            self.insured.len(),
        )?;
        let coded =
            |rows: &[(u32, String)]| rows.iter().map(|(c, l)| vec![c.to_string(), l.clone()]).collect::<Vec<_>>();
        put(
            "payment.csv",
            delimited(',', &["code_paiement", "libelle_paiement"], coded(&self.payments)),
            self.payments.len(),
        )?;
        put(
            "regime.csv",
            delimited(';', &["code_regime", "libelle_regime"], coded(&self.regimes)),
            self.regimes.len(),
        )?;
        put(
            "prestation.csv",
            delimited(',', &["code_prestation", "libelle_prestation"], coded(&self.prestations)),
            self.prestations.len(),
        )?;

        let header = ["matricule", "code_br", "date_mvt", "code_paiement", "code_regime", "code_prestation", "montant"];
        let mut cobol = String::new();
        let mut oracle = Vec::new();
        let mut excel = Vec::new();
        for (i, f) in self.facts.iter().enumerate() {
            match i % 3 {
                0 => writeln!(
                    cobol,
                    "{:<10}{:>4}{}{:>2}{:>2}{:>2}{}",
                    f.matricule,
                    f.office,
                    f.day.format("%Y%m%d"),
                    f.payment,
                    f.regime,
                    f.prestation,
                    encode_zoned(f.montant, 15)
                )
                .expect("string"),
                1 => oracle.push(fact_cells(f, format_iso_date(f.day))),
                _ => excel.push(fact_cells(f, format_sheet_date(f.day))),
            }
        }
        let cobol_rows = self.facts.len().div_ceil(3);
        let oracle_rows = oracle.len();
        let excel_rows = excel.len();
        put("mvt_cobol.dat", cobol, cobol_rows)?;
        put("mvt_oracle.csv", delimited(',', &header, oracle), oracle_rows)?;
        put("mvt_excel.csv", delimited(';', &header, excel), excel_rows)?;

        let cfg = pipeline_config();
        put("pipeline.toml", cfg.to_document(), 0)?;
        files.remove("pipeline.toml");

        let manifest = Manifest {
            spec: spec.clone(),
            files,
            members: BTreeMap::from([
                ("office".to_string(), self.offices.len()),
                ("insured".to_string(), self.insured.len()),
                ("payment".to_string(), self.payments.len()),
                ("regime".to_string(), self.regimes.len()),
                ("prestation".to_string(), self.prestations.len()),
                ("time".to_string(), self.facts.iter().map(|f| f.day).collect::<BTreeSet<_>>().len()),
            ]),
            governorates: self.offices.iter().map(|o| &o.governorate).collect::<BTreeSet<_>>().len(),
            facts: self.facts.len(),
            montant_total: self.facts.iter().map(|f| f.montant).sum(),
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
            .map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

fn fact_cells(f: &Movement, date: String) -> Vec<String> {
    vec![
        f.matricule.clone(),
        f.office.to_string(),
        date,
        f.payment.to_string(),
        f.regime.to_string(),
        f.prestation.to_string(),
        f.montant.to_string(),
    ]
}

fn delimited(sep: char, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().delimiter(sep as u8).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

/// Expected counts of a generated source set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GenSpec,
    /// Data rows per file.
    pub files: BTreeMap<String, usize>,
    /// Distinct members per dimension.
    pub members: BTreeMap<String, usize>,
    pub governorates: usize,
    pub facts: usize,
    pub montant_total: i64,
}

/// The pipeline config matching [`Generated::write`].
pub fn pipeline_config() -> PipelineConfig {
    let source = |id: &str, kind, path: &str, target: &str, priority| SourceSpec {
        id: id.into(),
        kind,
        path: path.into(),
        target: target.into(),
        priority,
        delimiter: None,
        header: true,
        layout: None,
        types: BTreeMap::new(),
        clean: Vec::new(),
    };
    let field = |name: &str, offset, width, kind| LayoutField { name: name.into(), offset, width, kind };
    let mut offices_cobol = source("offices_cobol", SourceKind::FixedWidth, "offices.dat", "office", 3);
    offices_cobol.header = false;
    offices_cobol.layout = Some(FixedWidthLayout {
        record_length: 50,
        fields: vec![
            field("code_br", 0, 4, FieldKind::Integer),
            field("nom_br", 4, 24, FieldKind::Text),
            field("code_postal", 28, 6, FieldKind::Text),
            field("governorate", 34, 16, FieldKind::Text),
        ],
    });
    let mut mvt_cobol = source("mvt_cobol", SourceKind::FixedWidth, "mvt_cobol.dat", "fact", 0);
    mvt_cobol.header = false;
    mvt_cobol.layout = Some(FixedWidthLayout {
        record_length: 43,
        fields: vec![
            field("matricule", 0, 10, FieldKind::Text),
            field("code_br", 10, 4, FieldKind::Integer),
            field("date_mvt", 14, 8, FieldKind::DateYyyymmdd),
            field("code_paiement", 22, 2, FieldKind::Integer),
            field("code_regime", 24, 2, FieldKind::Integer),
            field("code_prestation", 26, 2, FieldKind::Integer),
            field("montant", 28, 15, FieldKind::ZonedAmount),
        ],
    });
    let fact_types =
        BTreeMap::from([("date_mvt".to_string(), ColumnType::Date), ("montant".to_string(), ColumnType::Amount)]);
    let mut mvt_oracle = source("mvt_oracle", SourceKind::Delimited, "mvt_oracle.csv", "fact", 0);
    mvt_oracle.types = fact_types.clone();
    let mut mvt_excel = source("mvt_excel", SourceKind::SheetExport, "mvt_excel.csv", "fact", 0);
    mvt_excel.types = fact_types;
    let schema = nssf_default_schema();
    PipelineConfig {
        pipeline: PipelineSettings::default(),
        sources: vec![
            offices_cobol,
            source("offices_oracle", SourceKind::Delimited, "offices_oracle.csv", "office", 2),
            source("offices_excel", SourceKind::SheetExport, "offices_excel.csv", "office", 1),
            source("insured", SourceKind::Delimited, "insured.csv", "insured", 0),
            source("payment", SourceKind::Delimited, "payment.csv", "payment", 0),
            source("regime", SourceKind::SheetExport, "regime.csv", "regime", 0),
            source("prestation", SourceKind::Delimited, "prestation.csv", "prestation", 0),
            mvt_cobol,
            mvt_oracle,
            mvt_excel,
        ],
        views: vec![ViewSpec::from_def(&schema, &MViewDef::mvt_reg_pres_br())],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_have_the_nssf_cardinalities() {
        let g = generate(&GenSpec { facts: 500, ..Default::default() }).unwrap();
        assert_eq!(g.offices.len(), 41);
        assert_eq!(g.offices.iter().map(|o| &o.governorate).collect::<BTreeSet<_>>().len(), 24);
        assert_eq!(g.regimes.len(), 6);
        assert_eq!(g.prestations.len(), 8);
        for f in &g.facts {
            assert_eq!(f.montant > 0, f.prestation < 70, "{f:?}");
            assert!(f.day.format("%Y").to_string().as_str() >= "2007");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = GenSpec { facts: 300, seed: 7, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GenSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().facts, generate(&other).unwrap().facts);
    }

    #[test]
    fn invalid_specs() {
        assert!(GenSpec { offices: 10, ..Default::default() }.check().is_err());
        assert!(GenSpec { insured: 0, ..Default::default() }.check().is_err());
    }

    #[test]
    fn in_memory_load_matches() {
        let g = generate(&GenSpec { facts: 1000, ..Default::default() }).unwrap();
        let s = g.to_state().unwrap();
        assert_eq!(s.wh.fact_count(), 1000);
        assert_eq!(s.wh.facts().amounts().iter().sum::<i64>(), g.facts.iter().map(|f| f.montant).sum::<i64>());
    }
}
