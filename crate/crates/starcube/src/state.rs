//! The engine state (store, built cuboids, views) and its on-disk warehouse
//! directory:
//!
//! ```text
//! schema.toml       schema document
//! store.snap        store snapshot
//! views.toml        view definitions
//! views.snap        view data
//! cubes.snap        built cuboids
//! rejects.csv       reject log of the last ETL run
//! etl-report.json   report of the last ETL run
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use starcube_core::cube::CubeCatalog;
use starcube_core::mview::MViewCatalog;
use starcube_core::query::Engine;
use starcube_core::schema::StarSchema;
use starcube_core::store::Warehouse;

use crate::config::ViewSpec;
use crate::error::{Error, Result};
use crate::schema_doc::{load_schema, to_document};
use crate::snapshot::{self, SnapshotKind};

/// One consistent engine state. Readers share it behind an `Arc`; writers
/// work on a clone and swap it in.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub wh: Warehouse,
    pub cubes: CubeCatalog,
    pub views: MViewCatalog,
}

impl State {
    pub fn new(schema: Arc<StarSchema>) -> Result<Self> {
        Ok(State { wh: Warehouse::new(schema)?, cubes: CubeCatalog::default(), views: MViewCatalog::default() })
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(&self.wh, &self.cubes, &self.views)
    }

    pub fn schema(&self) -> &StarSchema {
        self.wh.schema()
    }

    /// Defines the views of `specs` that are not defined yet. A name already
    /// defined with a different grouping is an error.
    pub fn define_views(&mut self, specs: &[ViewSpec]) -> Result<usize> {
        let mut added = 0;
        for v in specs {
            let def = v.to_def(self.wh.schema())?;
            match self.views.def(&v.name) {
                Some(existing) if *existing == def => {}
                Some(_) => return Err(Error::Config(format!("view {} is already defined differently", v.name))),
                None => {
                    self.views.define(self.wh.schema(), def)?;
                    added += 1;
                }
            }
        }
        Ok(added)
    }

    pub fn view_specs(&self) -> Vec<ViewSpec> {
        let schema = self.wh.schema();
        self.views.names().filter_map(|n| self.views.def(n)).map(|d| ViewSpec::from_def(schema, d)).collect()
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ViewsDoc {
    #[serde(rename = "view", default)]
    views: Vec<ViewSpec>,
}

/// A warehouse directory on disk.
#[derive(Debug, Clone)]
pub struct WarehouseDir {
    root: PathBuf,
}

impl WarehouseDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        WarehouseDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn schema_path(&self) -> PathBuf {
        self.path("schema.toml")
    }

    pub fn store_path(&self) -> PathBuf {
        self.path("store.snap")
    }

    /// Creates the directory with `schema` and an empty store unless a schema is already there.
    pub fn init(&self, schema: &StarSchema) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.schema_path();
        if !path.exists() {
            std::fs::write(&path, to_document(schema)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load_schema(&self) -> Result<Arc<StarSchema>> {
        let path = self.schema_path();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Arc::new(load_schema(&text)?))
    }

    /// Loads everything present; missing snapshot files mean empty parts.
    pub fn load(&self) -> Result<State> {
        let schema = self.load_schema()?;
        let store = self.store_path();
        let wh = if store.exists() {
            snapshot::decode_store(&snapshot::read_file(&store)?, schema.clone())?
        } else {
            Warehouse::new(schema.clone())?
        };
        let mut state = State { wh, cubes: CubeCatalog::default(), views: MViewCatalog::default() };

        let defs = self.path("views.toml");
        if defs.exists() {
            let text = std::fs::read_to_string(&defs).map_err(|e| Error::io(&defs, e))?;
            let doc: ViewsDoc =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", defs.display(), e.message())))?;
            state.define_views(&doc.views)?;
        }
        let data = self.path("views.snap");
        if data.exists() {
            for (name, cuboid) in snapshot::decode_cuboids(&snapshot::read_file(&data)?, SnapshotKind::Views, &schema)?
            {
                state.views.restore(&name, cuboid)?;
            }
        }
        let cubes = self.path("cubes.snap");
        if cubes.exists() {
            for (_, cuboid) in snapshot::decode_cuboids(&snapshot::read_file(&cubes)?, SnapshotKind::Cubes, &schema)? {
                cuboid.check_against(&state.wh)?;
                state.cubes.insert(cuboid);
            }
        }
        Ok(state)
    }

    pub fn save(&self, state: &State) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        snapshot::write_atomic(&self.store_path(), &snapshot::encode_store(&state.wh))?;
        self.save_views(state)?;
        self.save_cubes(state)
    }

    pub fn save_views(&self, state: &State) -> Result<()> {
        let doc = ViewsDoc { views: state.view_specs() };
        let text = toml::to_string_pretty(&doc).expect("view documents always serialize");
        snapshot::write_atomic(&self.path("views.toml"), text.as_bytes())?;
        let items: Vec<(&str, &starcube_core::cube::Cuboid)> =
            state.views.names().filter_map(|n| state.views.data(n).map(|c| (n, c))).collect();
        snapshot::write_atomic(
            &self.path("views.snap"),
            &snapshot::encode_cuboids(SnapshotKind::Views, state.schema(), &items),
        )
    }

    pub fn save_cubes(&self, state: &State) -> Result<()> {
        let items: Vec<(&str, &starcube_core::cube::Cuboid)> = state.cubes.iter().map(|c| ("", c)).collect();
        snapshot::write_atomic(
            &self.path("cubes.snap"),
            &snapshot::encode_cuboids(SnapshotKind::Cubes, state.schema(), &items),
        )
    }
}
