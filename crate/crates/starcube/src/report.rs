//! Rendering result grids: grouped text tables, chart series and delimited or
//! structured exports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use starcube_core::cube::Cuboid;
use starcube_core::query::{Axis, GridRow, MeasureValue, Member, ResultGrid};
use starcube_core::store::Warehouse;
use thiserror::Error;

use crate::query_doc::QueryResponse;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("axis {0} does not exist in the grid")]
    NoSuchAxis(usize),
    #[error("axes must partition the grid's {0} axes")]
    NotAPartition(usize),
    #[error("dimension '{0}' is not an axis of the grid")]
    NotGrouped(String),
    #[error("crosstab needs at least one measure")]
    NoMeasure,
    #[error("delimited input, line {line}: {detail}")]
    Parse { line: u64, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupStyle {
    /// Repeated group members print as blanks.
    #[default]
    BlankOnRepeat,
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSpec {
    /// Grid axis indices printed as row headers, in order.
    pub row_axes: Vec<usize>,
    /// Grid axis indices spread across columns (crosstab of the first measure).
    pub column_axes: Vec<usize>,
    pub style: GroupStyle,
    /// Print member labels instead of keys.
    pub labels: bool,
    pub totals: bool,
    pub thousands: bool,
    /// 1 for millimes, 1000 for dinars.
    pub divisor: i64,
}

impl ReportSpec {
    /// Every axis as a row header, in grid order.
    pub fn rows_for(grid: &ResultGrid) -> Self {
        ReportSpec {
            row_axes: (0..grid.axes.len()).collect(),
            column_axes: Vec::new(),
            style: GroupStyle::BlankOnRepeat,
            labels: false,
            totals: false,
            thousands: false,
            divisor: 1,
        }
    }

    fn check(&self, grid: &ResultGrid) -> Result<(), ReportError> {
        let n = grid.axes.len();
        let mut seen = vec![false; n];
        for &a in self.row_axes.iter().chain(&self.column_axes) {
            if a >= n {
                return Err(ReportError::NoSuchAxis(a));
            }
            if std::mem::replace(&mut seen[a], true) {
                return Err(ReportError::NotAPartition(n));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ReportError::NotAPartition(n));
        }
        if !self.column_axes.is_empty() && grid.measures.is_empty() {
            return Err(ReportError::NoMeasure);
        }
        Ok(())
    }
}

/// Formats a money or count value.
pub fn format_value(v: MeasureValue, divisor: i64, thousands: bool) -> String {
    match v {
        MeasureValue::Int(i) if divisor <= 1 => group(&i.to_string(), thousands),
        MeasureValue::Int(i) => {
            let digits = divisor.to_string().len() - 1;
            let sign = if i < 0 { "-" } else { "" };
            let (q, r) = (i.unsigned_abs() / divisor as u64, i.unsigned_abs() % divisor as u64);
            format!("{sign}{}.{r:0digits$}", group(&q.to_string(), thousands))
        }
        MeasureValue::Float(f) => {
            let f = f / divisor.max(1) as f64;
            let s = format!("{f:.3}");
            match s.split_once('.') {
                Some((int, frac)) => format!("{}.{frac}", group(int, thousands)),
                None => s,
            }
        }
    }
}

fn group(int: &str, thousands: bool) -> String {
    if !thousands {
        return int.to_string();
    }
    let (sign, digits) = int.strip_prefix('-').map_or(("", int), |d| ("-", d));
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(' ');
        }
        out.push(c);
    }
    format!("{sign}{out}")
}

fn member_text(m: &Member, labels: bool) -> &str {
    if labels {
        &m.label
    } else {
        &m.key
    }
}

/// Renders `grid` as aligned text lines: header, one line per row, optional totals.
pub fn render_table(grid: &ResultGrid, spec: &ReportSpec) -> Result<Vec<String>, ReportError> {
    spec.check(grid)?;
    let fmt = |v: MeasureValue| format_value(v, spec.divisor, spec.thousands);
    let mut header: Vec<String> = spec.row_axes.iter().map(|&a| grid.axes[a].level.clone()).collect();
    let mut body: Vec<Vec<String>> = Vec::new();
    let mut totals: Vec<Option<i64>>;

    if spec.column_axes.is_empty() {
        header.extend(grid.measures.iter().cloned());
        totals = grid.measures.iter().map(|m| (!m.starts_with("average")).then_some(0)).collect();
        for row in &grid.rows {
            let mut line: Vec<String> =
                spec.row_axes.iter().map(|&a| member_text(&row.members[a], spec.labels).to_string()).collect();
            for (i, v) in row.values.iter().enumerate() {
                line.push(fmt(*v));
                if let (Some(t), MeasureValue::Int(x)) = (&mut totals[i], v) {
                    *t += x;
                }
            }
            body.push(line);
        }
    } else {
        // crosstab of the first measure
        let key =
            |row: &GridRow, axes: &[usize]| -> Vec<Member> { axes.iter().map(|&a| row.members[a].clone()).collect() };
        let mut cols: Vec<Vec<Member>> = Vec::new();
        let mut rows: Vec<Vec<Member>> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), MeasureValue> = BTreeMap::new();
        for row in &grid.rows {
            let (rk, ck) = (key(row, &spec.row_axes), key(row, &spec.column_axes));
            let ri = rows.iter().position(|r| *r == rk).unwrap_or_else(|| {
                rows.push(rk);
                rows.len() - 1
            });
            let ci = cols.iter().position(|c| *c == ck).unwrap_or_else(|| {
                cols.push(ck);
                cols.len() - 1
            });
            cells.insert((ri, ci), row.values[0]);
        }
        let mut order: Vec<usize> = (0..cols.len()).collect();
        order.sort_by(|&a, &b| {
            let l = |c: &Vec<Member>| c.iter().map(|m| member_text(m, spec.labels).to_string()).collect::<Vec<_>>();
            l(&cols[a]).cmp(&l(&cols[b]))
        });
        for &c in &order {
            header.push(cols[c].iter().map(|m| member_text(m, spec.labels)).collect::<Vec<_>>().join("/"));
        }
        let summable = !grid.measures[0].starts_with("average");
        totals = order.iter().map(|_| summable.then_some(0)).collect();
        for (ri, rk) in rows.iter().enumerate() {
            let mut line: Vec<String> = rk.iter().map(|m| member_text(m, spec.labels).to_string()).collect();
            for (ti, &c) in order.iter().enumerate() {
                match cells.get(&(ri, c)) {
                    Some(v) => {
                        line.push(fmt(*v));
                        if let (Some(t), MeasureValue::Int(x)) = (&mut totals[ti], v) {
                            *t += x;
                        }
                    }
                    None => line.push(String::new()),
                }
            }
            body.push(line);
        }
    }

    let naxes = spec.row_axes.len();
    if spec.style == GroupStyle::BlankOnRepeat {
        for i in (1..body.len()).rev() {
            // a header cell is blank when it and every cell left of it repeat
            let same = (0..naxes).take_while(|&c| body[i][c] == body[i - 1][c]).count();
            for c in 0..same.min(naxes.saturating_sub(1)) {
                body[i][c].clear();
            }
        }
    }
    if spec.totals {
        let mut line = vec![String::new(); naxes];
        if let Some(first) = line.first_mut() {
            *first = "TOTAL".into();
        }
        line.extend(totals.iter().map(|t| t.map(|x| fmt(MeasureValue::Int(x))).unwrap_or_default()));
        body.push(line);
    }

    let ncols = header.len();
    let mut width = vec![0usize; ncols];
    for line in std::iter::once(&header).chain(&body) {
        for (c, cell) in line.iter().enumerate() {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let render = |line: &Vec<String>| -> String {
        let mut s = String::new();
        for (c, cell) in line.iter().enumerate() {
            if c > 0 {
                s.push_str("  ");
            }
            let pad = width[c] - cell.chars().count();
            if c < naxes {
                s.push_str(cell);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    Ok(std::iter::once(&header).chain(&body).map(render).collect())
}

/// Categories and one integer series per measure, or per member of a series axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartData {
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<i64>,
}

fn axis_of(grid: &ResultGrid, dimension: &str) -> Result<usize, ReportError> {
    grid.axes
        .iter()
        .position(|a| a.dimension == dimension)
        .ok_or_else(|| ReportError::NotGrouped(dimension.to_string()))
}

fn int(v: MeasureValue) -> i64 {
    match v {
        MeasureValue::Int(i) => i,
        MeasureValue::Float(f) => f.round() as i64,
    }
}

/// Sums the grid's values per member of `category` (labels, in row order).
/// Other axes are summed over unless `series_axis` names one of them, in which
/// case the first measure is split into one series per member of that axis.
pub fn chart_data(grid: &ResultGrid, category: &str, series_axis: Option<&str>) -> Result<ChartData, ReportError> {
    let c = axis_of(grid, category)?;
    let s = series_axis.map(|d| axis_of(grid, d)).transpose()?;
    let mut categories: Vec<String> = Vec::new();
    let mut series: Vec<Series> = match s {
        None => grid.measures.iter().map(|m| Series { name: m.clone(), values: Vec::new() }).collect(),
        Some(_) => Vec::new(),
    };
    for row in &grid.rows {
        let label = &row.members[c].label;
        let ci = categories.iter().position(|x| x == label).unwrap_or_else(|| {
            categories.push(label.clone());
            for se in &mut series {
                se.values.push(0);
            }
            categories.len() - 1
        });
        match s {
            None => {
                for (se, v) in series.iter_mut().zip(&row.values) {
                    se.values[ci] += int(*v);
                }
            }
            Some(sa) => {
                let name = &row.members[sa].label;
                let si = series.iter().position(|x| &x.name == name).unwrap_or_else(|| {
                    series.push(Series { name: name.clone(), values: vec![0; categories.len()] });
                    series.len() - 1
                });
                if let Some(v) = row.values.first() {
                    series[si].values[ci] += int(*v);
                }
            }
        }
    }
    for se in &mut series {
        se.values.resize(categories.len(), 0);
    }
    Ok(ChartData { categories, series })
}

/// Header of the delimited export: key and label column per axis, then measures.
fn csv_header(grid_axes: &[Axis], measures: &[String]) -> Vec<String> {
    let mut h = Vec::new();
    for a in grid_axes {
        h.push(format!("{}.{}", a.dimension, a.level));
        h.push(format!("{}.{}.label", a.dimension, a.level));
    }
    h.extend(measures.iter().cloned());
    h
}

/// Comma-separated, RFC 4180 quoting, plain integers.
pub fn export_csv(grid: &ResultGrid) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(&grid.axes, &grid.measures)).expect("in-memory write");
    for row in &grid.rows {
        let mut rec: Vec<String> = Vec::new();
        for m in &row.members {
            rec.push(m.key.clone());
            rec.push(m.label.clone());
        }
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8")
}

/// Axes, measures and rows read back from [`export_csv`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedGrid {
    pub axes: Vec<Axis>,
    pub measures: Vec<String>,
    pub rows: Vec<GridRow>,
}

pub fn parse_csv(text: &str) -> Result<ParsedGrid, ReportError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = r.records();
    let perr = |line: u64, detail: String| ReportError::Parse { line, detail };
    let header = match records.next() {
        None => return Err(perr(1, "missing header".into())),
        Some(h) => h.map_err(|e| perr(1, e.to_string()))?,
    };
    let mut axes = Vec::new();
    let mut i = 0;
    while i + 1 < header.len() && header[i + 1] == *format!("{}.label", &header[i]) {
        let (d, l) = header[i].split_once('.').ok_or_else(|| perr(1, format!("bad axis column '{}'", &header[i])))?;
        axes.push(Axis { dimension: d.into(), level: l.into() });
        i += 2;
    }
    let measures: Vec<String> = header.iter().skip(i).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(perr(line, format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let members =
            (0..axes.len()).map(|a| Member { key: rec[2 * a].into(), label: rec[2 * a + 1].into() }).collect();
        let values = rec
            .iter()
            .skip(i)
            .map(|v| match v.parse::<i64>() {
                Ok(x) => Ok(MeasureValue::Int(x)),
                Err(_) => {
                    v.parse::<f64>().map(MeasureValue::Float).map_err(|_| perr(line, format!("bad number '{v}'")))
                }
            })
            .collect::<Result<_, _>>()?;
        rows.push(GridRow { members, values });
    }
    Ok(ParsedGrid { axes, measures, rows })
}

/// The structured export: the API response document.
pub fn export_json(wh: &Warehouse, grid: &ResultGrid, elapsed_ms: f64) -> String {
    QueryResponse::from_grid(wh, grid, None, elapsed_ms).to_json()
}

/// A cuboid as delimited text: one label column per grouped level, then sum and count.
pub fn export_cuboid(wh: &Warehouse, cuboid: &Cuboid) -> String {
    let schema = wh.schema();
    let grouped: Vec<(usize, usize)> = cuboid.spec().grouped().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = grouped
        .iter()
        .map(|&(d, l)| format!("{}.{}", schema.dimensions[d].name, schema.dimensions[d].levels[l].name))
        .collect();
    header.push(format!("sum({})", schema.measure().name));
    header.push(format!("count({})", schema.measure().name));
    w.write_record(&header).expect("in-memory write");
    let mut rows: Vec<Vec<String>> = cuboid
        .cells()
        .iter()
        .map(|(coord, cell)| {
            let mut r: Vec<String> = grouped
                .iter()
                .zip(coord)
                .map(|(&(d, l), &id)| wh.dimension(d).level(l).label(id).to_string())
                .collect();
            r.push(cell.sum.to_string());
            r.push(cell.count.to_string());
            r
        })
        .collect();
    rows.sort();
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use starcube_core::query::{PlanKind, Provenance};

    fn member(k: &str) -> Member {
        Member { key: k.into(), label: k.into() }
    }

    fn grid(rows: &[(&str, &str, i64)]) -> ResultGrid {
        ResultGrid {
            axes: vec![
                Axis { dimension: "office".into(), level: "governorate".into() },
                Axis { dimension: "prestation".into(), level: "prestation".into() },
            ],
            measures: vec!["sum(montant)".into()],
            rows: rows
                .iter()
                .map(|(g, p, v)| GridRow { members: vec![member(g), member(p)], values: vec![MeasureValue::Int(*v)] })
                .collect(),
            sort: None,
            provenance: Provenance { plan: PlanKind::Scan, input_rows: 0 },
        }
    }

    #[test]
    fn blank_on_repeat() {
        let g = grid(&[("ARIANA", "66", 591330), ("ARIANA", "68", 2362968), ("BEJA", "68", 40000)]);
        let lines = render_table(&g, &ReportSpec::rows_for(&g)).unwrap();
        assert_eq!(lines[0], "governorate  prestation  sum(montant)");
        assert_eq!(lines[1], "ARIANA       66                591330");
        assert_eq!(lines[2], "             68               2362968");
        assert_eq!(lines[3], "BEJA         68                 40000");
        let mut spec = ReportSpec::rows_for(&g);
        spec.style = GroupStyle::Repeat;
        assert!(render_table(&g, &spec).unwrap()[2].starts_with("ARIANA"));
    }

    #[test]
    fn empty_and_single_row() {
        let g = grid(&[]);
        assert_eq!(render_table(&g, &ReportSpec::rows_for(&g)).unwrap().len(), 1);
        let g = grid(&[("BEJA", "77", -1731614)]);
        let mut spec = ReportSpec::rows_for(&g);
        spec.totals = true;
        let lines = render_table(&g, &spec).unwrap();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("TOTAL") && lines[2].ends_with("-1731614"), "{lines:?}");
    }

    #[test]
    fn spec_must_partition_axes() {
        let g = grid(&[]);
        let mut spec = ReportSpec::rows_for(&g);
        spec.row_axes = vec![0];
        assert_eq!(render_table(&g, &spec), Err(ReportError::NotAPartition(2)));
        spec.row_axes = vec![0, 0];
        assert_eq!(render_table(&g, &spec), Err(ReportError::NotAPartition(2)));
    }

    #[test]
    fn crosstab() {
        let g = grid(&[("ARIANA", "66", 1), ("ARIANA", "68", 2), ("BEJA", "68", 3)]);
        let spec = ReportSpec { row_axes: vec![0], column_axes: vec![1], totals: true, ..ReportSpec::rows_for(&g) };
        let lines = render_table(&g, &spec).unwrap();
        assert_eq!(
            lines,
            vec!["governorate  66  68", "ARIANA        1   2", "BEJA              3", "TOTAL         1   5"]
        );
    }

    #[test]
    fn number_formats() {
        assert_eq!(format_value(MeasureValue::Int(-298209150), 1, false), "-298209150");
        assert_eq!(format_value(MeasureValue::Int(-298209150), 1, true), "-298 209 150");
        assert_eq!(format_value(MeasureValue::Int(-298209150), 1000, false), "-298209.150");
        assert_eq!(format_value(MeasureValue::Int(5), 1000, false), "0.005");
        assert_eq!(format_value(MeasureValue::Float(1234.5), 1, true), "1 234.500");
    }

    #[test]
    fn chart_series() {
        let g = grid(&[("ARIANA", "66", 10), ("ARIANA", "68", 5), ("BEJA", "68", -3)]);
        let c = chart_data(&g, "office", None).unwrap();
        assert_eq!(c.categories, vec!["ARIANA", "BEJA"]);
        assert_eq!(c.series[0].values, vec![15, -3]);
        let split = chart_data(&g, "office", Some("prestation")).unwrap();
        assert_eq!(split.series.len(), 2);
        assert_eq!(split.series[1].values, vec![5, -3]);
        assert_eq!(chart_data(&g, "regime", None), Err(ReportError::NotGrouped("regime".into())));
        let empty = chart_data(&grid(&[]), "office", None).unwrap();
        assert!(empty.categories.is_empty() && empty.series[0].values.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let mut g = grid(&[("BEN AROUS", "79", -150068470), ("A,\"B\"", "66", 1)]);
        g.measures.push("average(montant)".into());
        for r in &mut g.rows {
            r.values.push(MeasureValue::Float(0.1 + 0.2));
        }
        let text = export_csv(&g);
        assert!(text.contains("-150068470"));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.axes, g.axes);
        assert_eq!(back.measures, g.measures);
        assert_eq!(back.rows, g.rows);
    }
}
