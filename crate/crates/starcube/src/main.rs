use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use starcube::api::{self, Api};
use starcube::config::{PipelineConfig, ViewSpec};
use starcube::gen::{generate, GenSpec};
use starcube::pipeline::{persist, run_pipeline, write_report};
use starcube::query_doc::{execute, FilterDoc, ForceDoc, QueryRequest, QueryResponse, SortDoc, TimeRangeDoc};
use starcube::report::{chart_data, export_csv, export_cuboid, render_table, GroupStyle, ReportSpec};
use starcube::schema_doc::{load_schema, to_document};
use starcube::snapshot::{self, SnapshotKind};
use starcube::state::{State, WarehouseDir};
use starcube::{Error, Result};
use starcube_core::cube::{build_cube, BuildSource, CubeCatalog, CubeRequest, GroupBySpec};
use starcube_core::mview::MViewCatalog;
use starcube_core::query::{PlanKind, ResultGrid};
use starcube_core::schema::nssf_default_schema;
use starcube_core::value::parse_iso_date;

/// Star-schema warehouse: ETL, cube and view builds, queries and the HTTP server.
#[derive(Parser)]
#[command(name = "starcube", version)]
struct Cli {
    /// Warehouse directory.
    #[arg(long, global = true, env = "STARCUBE_WAREHOUSE", default_value = "warehouse")]
    warehouse: PathBuf,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, env = "STARCUBE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    JsonDoc,
}

#[derive(Subcommand)]
enum Command {
    /// Write deterministic synthetic source files.
    Gen(GenArgs),
    #[command(subcommand)]
    Schema(SchemaCmd),
    #[command(subcommand)]
    Etl(EtlCmd),
    #[command(subcommand)]
    Cube(CubeCmd),
    /// Materialized views.
    #[command(subcommand)]
    Mv(MvCmd),
    /// Run a query document or a query built from flags.
    Query(QueryArgs),
    /// A query printed as a report with totals, optionally with chart data.
    Report(ReportArgs),
    #[command(subcommand)]
    Snapshot(SnapshotCmd),
    /// Serve the HTTP API on loopback.
    Serve {
        #[arg(long, default_value_t = api::DEFAULT_PORT)]
        port: u16,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    facts: usize,
    #[arg(long, default_value_t = 41)]
    offices: usize,
    #[arg(long, default_value_t = 24)]
    governorates: usize,
    #[arg(long, default_value_t = 6)]
    regimes: usize,
    #[arg(long, default_value_t = 8)]
    prestations: usize,
    #[arg(long, default_value_t = 2000)]
    insured: usize,
    #[arg(long, default_value = "2007-01-01", value_parser = day)]
    from: NaiveDate,
    #[arg(long, default_value = "2010-12-31", value_parser = day)]
    to: NaiveDate,
}

fn day(s: &str) -> std::result::Result<NaiveDate, String> {
    parse_iso_date(s).ok_or_else(|| format!("'{s}' is not a YYYY-MM-DD date"))
}

#[derive(Subcommand)]
enum SchemaCmd {
    /// Check a schema document.
    Validate { file: PathBuf },
    /// Print the default schema document.
    Default,
    /// Print the warehouse's schema document.
    Show,
}

#[derive(Subcommand)]
enum EtlCmd {
    /// Run the pipeline of --config into the warehouse.
    Run,
}

#[derive(Subcommand)]
enum CubeCmd {
    /// Materialize cuboids: `all` for the whole lattice, `apex`, or level lists such as `office.governorate,prestation`.
    Build {
        #[arg(long, required = true)]
        spec: Vec<String>,
        /// Refuse a full build whose estimated cell count exceeds this.
        #[arg(long, default_value_t = 200_000_000)]
        budget: u64,
    },
    List,
    /// Print one built cuboid as delimited text.
    Export {
        #[arg(long)]
        spec: String,
    },
}

#[derive(Subcommand)]
enum MvCmd {
    List,
    /// Refresh one view, or every stale view with --all.
    Refresh {
        #[arg(long, conflicts_with = "name")]
        all: bool,
        #[arg(required_unless_present = "all")]
        name: Option<String>,
    },
    Define {
        name: String,
        #[arg(long, value_delimiter = ',', required = true)]
        group_by: Vec<String>,
        #[arg(long = "measure")]
        measures: Vec<String>,
        #[arg(long)]
        no_rewrite: bool,
    },
}

#[derive(Args)]
struct QueryArgs {
    /// Query document (JSON); `-` reads stdin. Flags below are ignored when given.
    document: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    group_by: Vec<String>,
    #[arg(long = "measure")]
    measures: Vec<String>,
    /// `dimension.level=member|member`
    #[arg(long = "filter")]
    filters: Vec<String>,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    /// Column name, optionally suffixed with `:desc`.
    #[arg(long)]
    sort: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_enum)]
    force: Option<ForceArg>,
    #[command(flatten)]
    layout: LayoutArgs,
}

#[derive(Args)]
struct LayoutArgs {
    /// Print member labels instead of keys.
    #[arg(long)]
    labels: bool,
    #[arg(long)]
    totals: bool,
    /// Show amounts in dinars (millimes / 1000).
    #[arg(long)]
    dinars: bool,
    #[arg(long)]
    thousands: bool,
    /// Print repeated group members instead of blanks.
    #[arg(long)]
    repeat: bool,
    /// Dimensions spread across columns.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Emit chart data with this dimension as categories.
    #[arg(long)]
    chart: Option<String>,
    /// Split the chart into one series per member of this dimension.
    #[arg(long, requires = "chart")]
    series: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ForceArg {
    Auto,
    Mview,
    Cuboid,
    Scan,
}

#[derive(Subcommand)]
enum SnapshotCmd {
    /// Write the store snapshot to a file.
    Save {
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the store with a snapshot file; cuboids are dropped and views go stale.
    Load { file: PathBuf },
    /// Check a snapshot file's framing and checksums.
    Verify { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Error::Etl { report, .. } = &e {
                eprint!("{report}");
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    // a closed pipe is not an error worth reporting
    let _ = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush());
}

fn run(cli: &Cli) -> Result<()> {
    let dir = WarehouseDir::new(&cli.warehouse);
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Schema(c) => cmd_schema(&dir, c),
        Command::Etl(EtlCmd::Run) => cmd_etl(cli, &dir),
        Command::Cube(c) => cmd_cube(&dir, c),
        Command::Mv(c) => cmd_mv(&dir, c),
        Command::Query(a) => cmd_query(cli, &dir, a, None),
        Command::Report(a) => cmd_query(cli, &dir, &a.query, Some(a)),
        Command::Snapshot(c) => cmd_snapshot(&dir, c),
        Command::Serve { port } => cmd_serve(cli, &dir, *port),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = GenSpec {
        seed: a.seed,
        facts: a.facts,
        offices: a.offices,
        governorates: a.governorates,
        regimes: a.regimes,
        prestations: a.prestations,
        insured: a.insured,
        first_day: a.from,
        last_day: a.to,
        ..GenSpec::default()
    };
    let m = generate(&spec)?.write(&spec, &a.out)?;
    out(&format!(
        "wrote {} facts, {} offices over {} governorates into {}\n",
        m.facts,
        m.members["office"],
        m.governorates,
        a.out.display()
    ));
    Ok(())
}

fn cmd_schema(dir: &WarehouseDir, c: &SchemaCmd) -> Result<()> {
    match c {
        SchemaCmd::Validate { file } => {
            let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
            let schema = load_schema(&text)?;
            out(&format!(
                "ok: {} dimensions, fact {}, fingerprint {:016x}\n",
                schema.dimensions.len(),
                schema.fact.name,
                schema.fingerprint()
            ));
        }
        SchemaCmd::Default => out(&to_document(&nssf_default_schema())),
        SchemaCmd::Show => out(&to_document(&*dir.load_schema()?)),
    }
    Ok(())
}

fn pipeline(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Usage("--config is required".into()))?;
    PipelineConfig::load(path)
}

fn cmd_etl(cli: &Cli, dir: &WarehouseDir) -> Result<()> {
    let cfg = pipeline(cli)?;
    if !dir.schema_path().exists() {
        dir.init(&nssf_default_schema())?;
    }
    let state = dir.load()?;
    cfg.check(state.schema())?;
    let outcome = match run_pipeline(&cfg, &state) {
        Ok(o) => o,
        Err(e) => {
            if let Error::Etl { report, .. } = &e {
                write_report(dir, report)?;
            }
            return Err(e);
        }
    };
    persist(dir, &cfg, &outcome)?;
    match cli.format {
        Format::JsonDoc => out(&(outcome.report.to_json() + "\n")),
        _ => out(&outcome.report.to_string()),
    }
    Ok(())
}

fn parse_specs(state: &State, specs: &[String]) -> Result<CubeRequest> {
    if specs.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        return Ok(CubeRequest::Full);
    }
    let schema = state.schema();
    let parsed = specs
        .iter()
        .map(|s| match s.as_str() {
            "apex" => Ok(GroupBySpec::all(schema.dimensions.len())),
            "base" => Ok(GroupBySpec::base(schema.dimensions.len())),
            other => GroupBySpec::parse(schema, other),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CubeRequest::Specs(parsed))
}

fn cmd_cube(dir: &WarehouseDir, c: &CubeCmd) -> Result<()> {
    let mut state = dir.load()?;
    match c {
        CubeCmd::Build { spec, budget } => {
            let request = parse_specs(&state, spec)?;
            state.cubes.retain_current(state.wh.epoch());
            let steps = build_cube(&state.wh, &mut state.cubes, &request, *budget)?;
            dir.save_cubes(&state)?;
            let cells: usize = steps.iter().map(|s| s.cells).sum();
            let from_facts = steps.iter().filter(|s| s.source == BuildSource::Facts).count();
            out(&format!(
                "built {} cuboids ({} cells, {} from facts) at epoch {}\n",
                steps.len(),
                cells,
                from_facts,
                state.wh.epoch()
            ));
        }
        CubeCmd::List => {
            let schema = state.schema();
            let mut text = String::new();
            for cube in state.cubes.iter() {
                let status = if cube.epoch() == state.wh.epoch() { "current" } else { "stale" };
                text.push_str(&format!(
                    "{}\t{} cells\tepoch {}\t{status}\n",
                    cube.spec().display(schema),
                    cube.len(),
                    cube.epoch()
                ));
            }
            out(&text);
        }
        CubeCmd::Export { spec } => {
            let wanted = match spec.as_str() {
                "apex" => GroupBySpec::all(state.schema().dimensions.len()),
                "base" => GroupBySpec::base(state.schema().dimensions.len()),
                other => GroupBySpec::parse(state.schema(), other)?,
            };
            let cube = state
                .cubes
                .get(&wanted)
                .ok_or_else(|| Error::Data(format!("cuboid {} is not built", wanted.display(state.schema()))))?;
            out(&export_cuboid(&state.wh, cube));
        }
    }
    Ok(())
}

fn cmd_mv(dir: &WarehouseDir, c: &MvCmd) -> Result<()> {
    let mut state = dir.load()?;
    match c {
        MvCmd::List => {
            let mut text = String::new();
            for s in state.views.status(state.schema(), state.wh.epoch()) {
                let built = s.built_epoch.map_or("never".to_string(), |e| format!("epoch {e}"));
                let stale = if s.stale { "stale" } else { "fresh" };
                let rewrite = if s.rewrite_enabled { "rewrite" } else { "no rewrite" };
                text.push_str(&format!("{}\t{}\t{built}\t{stale}\t{} cells\t{rewrite}\n", s.name, s.grouping, s.cells));
            }
            out(&text);
        }
        MvCmd::Refresh { all, name } => {
            let refreshed = if *all {
                state.views.refresh_all_stale(&state.wh)?
            } else {
                let name = name.as_deref().expect("clap requires a name without --all");
                state.views.refresh(&state.wh, name)?;
                vec![name.to_string()]
            };
            if !refreshed.is_empty() {
                dir.save_views(&state)?;
            }
            let mut text = format!("{} refreshed\n", refreshed.len());
            for n in &refreshed {
                text.push_str(&format!("  {n}\n"));
            }
            out(&text);
        }
        MvCmd::Define { name, group_by, measures, no_rewrite } => {
            let spec = ViewSpec {
                name: name.clone(),
                group_by: group_by.clone(),
                measures: if measures.is_empty() { vec!["sum(montant)".into()] } else { measures.clone() },
                rewrite: !no_rewrite,
            };
            let added = state.define_views(&[spec])?;
            dir.save_views(&state)?;
            out(&format!("{}\n", if added == 1 { "defined (stale until refreshed)" } else { "already defined" }));
        }
    }
    Ok(())
}

fn request_from_flags(a: &QueryArgs) -> Result<QueryRequest> {
    let mut filters = Vec::new();
    for f in &a.filters {
        let bad = || Error::Usage(format!("--filter '{f}': expected dimension.level=member|member"));
        let (path, members) = f.split_once('=').ok_or_else(bad)?;
        let (dimension, level) = path.split_once('.').ok_or_else(bad)?;
        filters.push(FilterDoc {
            dimension: dimension.trim().into(),
            level: level.trim().into(),
            members: members.split('|').map(|m| m.trim().to_string()).collect(),
        });
    }
    let time_range = match (&a.from, &a.to) {
        (None, None) => None,
        (Some(from), Some(to)) => Some(TimeRangeDoc { from: from.clone(), to: to.clone() }),
        _ => return Err(Error::Usage("--from and --to go together".into())),
    };
    let sort = a.sort.as_ref().map(|s| match s.rsplit_once(':') {
        Some((col, "desc")) => SortDoc { column: col.into(), direction: starcube::query_doc::Direction::Desc },
        Some((col, "asc")) => SortDoc { column: col.into(), direction: starcube::query_doc::Direction::Asc },
        _ => SortDoc { column: s.clone(), direction: starcube::query_doc::Direction::Asc },
    });
    Ok(QueryRequest {
        measures: if a.measures.is_empty() { vec!["sum(montant)".into()] } else { a.measures.clone() },
        group_by: a.group_by.clone(),
        filters,
        time_range,
        sort,
        limit: a.limit,
        force: a.force.map(|f| match f {
            ForceArg::Auto => ForceDoc::Auto,
            ForceArg::Mview => ForceDoc::Mview,
            ForceArg::Cuboid => ForceDoc::Cuboid,
            ForceArg::Scan => ForceDoc::Scan,
        }),
        echo: None,
    })
}

fn read_request(a: &QueryArgs) -> Result<QueryRequest> {
    match &a.document {
        None => request_from_flags(a),
        Some(path) => {
            let text = if path.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
                s
            } else {
                std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
            };
            Ok(QueryRequest::from_json(&text)?)
        }
    }
}

fn layout(grid: &ResultGrid, l: &LayoutArgs, totals: bool) -> Result<ReportSpec> {
    let mut spec = ReportSpec::rows_for(grid);
    spec.labels = l.labels;
    spec.totals = totals || l.totals;
    spec.thousands = l.thousands;
    spec.divisor = if l.dinars { 1000 } else { 1 };
    if l.repeat {
        spec.style = GroupStyle::Repeat;
    }
    for dim in &l.columns {
        let a = grid
            .axes
            .iter()
            .position(|a| &a.dimension == dim)
            .ok_or_else(|| Error::Usage(format!("--columns: '{dim}' is not grouped")))?;
        spec.row_axes.retain(|&r| r != a);
        spec.column_axes.push(a);
    }
    Ok(spec)
}

fn plan_line(state: &State, grid: &ResultGrid, ms: f64) -> String {
    let source = match &grid.provenance.plan {
        PlanKind::MView(n) => n.clone(),
        PlanKind::Cuboid(s) => s.display(state.schema()).to_string(),
        PlanKind::Scan => state.schema().fact.name.clone(),
    };
    format!(
        "plan: {} {} ({} input rows, {:.3} ms, epoch {})\n",
        grid.provenance.plan.name(),
        source,
        grid.provenance.input_rows,
        ms,
        state.wh.epoch()
    )
}

fn cmd_query(cli: &Cli, dir: &WarehouseDir, a: &QueryArgs, report: Option<&ReportArgs>) -> Result<()> {
    let req = read_request(a)?;
    let state = dir.load()?;
    let (grid, ms) = execute(&state.engine(), &req)?;
    if let Some(chart) = report.and_then(|r| r.chart.as_deref()) {
        let data = chart_data(&grid, chart, report.and_then(|r| r.series.as_deref()))?;
        if cli.format == Format::JsonDoc {
            out(&(serde_json::to_string_pretty(&data).expect("chart data serializes") + "\n"));
            return Ok(());
        }
        let mut text = format!("categories: {}\n", data.categories.join(", "));
        for s in &data.series {
            let values: Vec<String> = s.values.iter().map(i64::to_string).collect();
            text.push_str(&format!("{}: {}\n", s.name, values.join(", ")));
        }
        out(&text);
        return Ok(());
    }
    match cli.format {
        Format::Csv => out(&export_csv(&grid)),
        Format::JsonDoc => out(&(QueryResponse::from_grid(&state.wh, &grid, req.echo.clone(), ms).to_json() + "\n")),
        Format::Text => {
            let spec = layout(&grid, &a.layout, report.is_some())?;
            let mut text = render_table(&grid, &spec)?.join("\n");
            text.push('\n');
            text.push_str(&plan_line(&state, &grid, ms));
            out(&text);
        }
    }
    Ok(())
}

fn cmd_snapshot(dir: &WarehouseDir, c: &SnapshotCmd) -> Result<()> {
    match c {
        SnapshotCmd::Save { out: path } => {
            let state = dir.load()?;
            snapshot::write_atomic(path, &snapshot::encode_store(&state.wh))?;
            out(&format!("saved epoch {} ({} facts) to {}\n", state.wh.epoch(), state.wh.fact_count(), path.display()));
        }
        SnapshotCmd::Load { file } => {
            let schema = dir.load_schema()?;
            let wh = snapshot::decode_store(&snapshot::read_file(file)?, schema)?;
            let old = dir.load()?;
            let mut views = MViewCatalog::default();
            for name in old.views.names() {
                let def = old.views.def(name).expect("listed view").clone();
                views.define(wh.schema(), def)?;
            }
            let state = State { wh, cubes: CubeCatalog::default(), views };
            dir.save(&state)?;
            out(&format!("loaded epoch {} ({} facts)\n", state.wh.epoch(), state.wh.fact_count()));
        }
        SnapshotCmd::Verify { file } => {
            let info = snapshot::verify(&snapshot::read_file(file)?)?;
            let kind = match info.kind {
                SnapshotKind::Store => "store",
                SnapshotKind::Views => "views",
                SnapshotKind::Cubes => "cubes",
            };
            let mut text = format!(
                "ok: {kind} snapshot, version {}, schema fingerprint {:016x}\n",
                info.version, info.fingerprint
            );
            for (tag, len) in &info.sections {
                text.push_str(&format!("  {tag} {len} bytes\n"));
            }
            out(&text);
        }
    }
    Ok(())
}

fn cmd_serve(cli: &Cli, dir: &WarehouseDir, port: u16) -> Result<()> {
    let mut server = Api::loading().with_dir(dir.clone());
    if cli.config.is_some() {
        server = server.with_pipeline(pipeline(cli)?);
    }
    let server = Arc::new(server);
    let loader = server.clone();
    let load_dir = dir.clone();
    std::thread::spawn(move || match load_dir.load() {
        Ok(state) => {
            eprintln!("warehouse loaded: epoch {}, {} facts", state.wh.epoch(), state.wh.fact_count());
            loader.set_state(state);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code().into());
        }
    });
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new("tokio runtime"), e))?;
    rt.block_on(api::serve(server, port))
}
