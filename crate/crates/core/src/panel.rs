//! Balanced group × time panels, post−pre transforms and CSV ingestion.
//!
//! Period indices in this module are 0-based. A treated group's
//! `treat_start` is the number of its pre-treatment periods, so the
//! treatment indicator `d_jt` is one exactly for `t >= treat_start`
//! (0-based), which matches the 1-based convention "treated after
//! period t*" used on the command line.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense N × T outcome matrix with group and period labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeGrid {
    n_groups: usize,
    n_periods: usize,
    values: Vec<f64>,
    group_ids: Vec<String>,
    time_ids: Vec<String>,
}

impl OutcomeGrid {
    /// Builds a grid from row-major values. Non-finite entries mark
    /// missing cells and are rejected as unbalanced.
    pub fn new(
        values: Vec<f64>,
        group_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = (group_ids.len(), time_ids.len());
        if values.len() != n * t {
            return Err(Error::DimMismatch(format!(
                "{} values for a {n} x {t} panel",
                values.len()
            )));
        }
        if n == 0 || t == 0 {
            return Err(Error::DimMismatch("panel needs at least one group and one period".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unbalanced {
                group: group_ids[pos / t].clone(),
                period: time_ids[pos % t].clone(),
            });
        }
        Ok(Self { n_groups: n, n_periods: t, values, group_ids, time_ids })
    }

    /// Grid with default labels `g1..gN` and `1..T`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::DimMismatch("rows have different lengths".into()));
        }
        Self::new(
            rows.iter().flatten().copied().collect(),
            (1..=n).map(|j| format!("g{j}")).collect(),
            (1..=t).map(|s| s.to_string()).collect(),
        )
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn value(&self, group: usize, period: usize) -> f64 {
        self.values[group * self.n_periods + period]
    }

    pub fn row(&self, group: usize) -> &[f64] {
        &self.values[group * self.n_periods..(group + 1) * self.n_periods]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Same labels, new values (must have the same length).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.group_ids.clone(), self.time_ids.clone())
    }

    /// Restricts the grid to the given group and period indices, in order.
    pub fn subset(&self, groups: &[usize], periods: &[usize]) -> Result<Self> {
        for &t in periods {
            if t >= self.n_periods {
                return Err(Error::PeriodOutOfRange { index: t, periods: self.n_periods });
            }
        }
        let mut values = Vec::with_capacity(groups.len() * periods.len());
        for &j in groups {
            let row = self.row(j);
            values.extend(periods.iter().map(|&t| row[t]));
        }
        Self::new(
            values,
            groups.iter().map(|&j| self.group_ids[j].clone()).collect(),
            periods.iter().map(|&t| self.time_ids[t].clone()).collect(),
        )
    }
}

/// A balanced panel together with its treatment design.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    grid: OutcomeGrid,
    treat_start: Vec<Option<usize>>,
}

impl PanelData {
    /// `treat_start[j]` is `Some(k)` when group `j` is treated from
    /// 0-based period `k` on (so it has `k` pre-periods), `None` for controls.
    pub fn new(grid: OutcomeGrid, treat_start: Vec<Option<usize>>) -> Result<Self> {
        let p = Self { grid, treat_start };
        validate_panel(&p)?;
        Ok(p)
    }

    /// Common-timing design: every flagged group is treated after `t_star` pre-periods.
    pub fn uniform(grid: OutcomeGrid, treated: &[bool], t_star: usize) -> Result<Self> {
        let starts = treated.iter().map(|&d| d.then_some(t_star)).collect();
        Self::new(grid, starts)
    }

    pub fn outcomes(&self) -> &OutcomeGrid {
        &self.grid
    }

    pub fn n_groups(&self) -> usize {
        self.grid.n_groups
    }

    pub fn n_periods(&self) -> usize {
        self.grid.n_periods
    }

    pub fn is_treated(&self, group: usize) -> bool {
        self.treat_start[group].is_some()
    }

    pub fn treat_start(&self, group: usize) -> Option<usize> {
        self.treat_start[group]
    }

    pub fn treat_starts(&self) -> &[Option<usize>] {
        &self.treat_start
    }

    /// Treatment indicator for cell (j, t).
    pub fn d(&self, group: usize, period: usize) -> bool {
        self.treat_start[group].is_some_and(|k| period >= k)
    }

    pub fn treated_flags(&self) -> Vec<bool> {
        self.treat_start.iter().map(Option::is_some).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.treat_start.iter().filter(|s| s.is_some()).count()
    }

    pub fn n_control(&self) -> usize {
        self.n_groups() - self.n_treated()
    }

    /// The common start period when all treated groups share one.
    pub fn uniform_t_star(&self) -> Option<usize> {
        let mut starts = self.treat_start.iter().flatten();
        let first = *starts.next()?;
        starts.all(|&s| s == first).then_some(first)
    }

    /// Sorted distinct start periods of the treated cohorts.
    pub fn cohorts(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.treat_start.iter().flatten().copied().collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Same design with new outcome values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(Self { grid: self.grid.with_values(values)?, treat_start: self.treat_start.clone() })
    }
}

/// Checks every panel invariant: balanced finite cells, at least one
/// treated and one control group, and start periods leaving at least one
/// pre- and one post-period.
pub fn validate_panel(p: &PanelData) -> Result<()> {
    let g = &p.grid;
    if g.values.len() != g.n_groups * g.n_periods {
        return Err(Error::DimMismatch("outcome matrix does not match labels".into()));
    }
    if let Some(pos) = g.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Unbalanced {
            group: g.group_ids[pos / g.n_periods].clone(),
            period: g.time_ids[pos % g.n_periods].clone(),
        });
    }
    if p.treat_start.len() != g.n_groups {
        return Err(Error::DimMismatch(format!(
            "{} treatment entries for {} groups",
            p.treat_start.len(),
            g.n_groups
        )));
    }
    for (j, s) in p.treat_start.iter().enumerate() {
        if let Some(k) = *s {
            if k == 0 || k >= g.n_periods {
                return Err(Error::BadTStar {
                    group: g.group_ids[j].clone(),
                    reason: format!(
                        "treatment start {k} must lie in 1..={} to leave a pre and a post period",
                        g.n_periods - 1
                    ),
                });
            }
        }
    }
    if p.n_treated() == 0 {
        return Err(Error::NoTreated);
    }
    if p.n_control() == 0 {
        return Err(Error::NoControl);
    }
    Ok(())
}

fn check_window(name: &'static str, window: &[usize], periods: usize) -> Result<()> {
    if window.is_empty() {
        return Err(Error::EmptyWindow(name));
    }
    if let Some(&t) = window.iter().find(|&&t| t >= periods) {
        return Err(Error::PeriodOutOfRange { index: t, periods });
    }
    Ok(())
}

/// Per-group post-window mean minus pre-window mean.
pub fn nabla_means(grid: &OutcomeGrid, pre: &[usize], post: &[usize]) -> Result<Vec<f64>> {
    check_window("pre", pre, grid.n_periods)?;
    check_window("post", post, grid.n_periods)?;
    if let Some(&t) = pre.iter().find(|t| post.contains(t)) {
        return Err(Error::OverlappingWindow(t));
    }
    Ok((0..grid.n_groups).map(|j| nabla_row(grid.row(j), pre, post)).collect())
}

pub(crate) fn nabla_row(row: &[f64], pre: &[usize], post: &[usize]) -> f64 {
    let mean = |w: &[usize]| w.iter().map(|&t| row[t]).sum::<f64>() / w.len() as f64;
    mean(post) - mean(pre)
}

/// One unit-level observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroRow {
    pub unit: String,
    pub group: String,
    pub time: String,
    pub outcome: f64,
    pub weight: f64,
    pub cluster: Option<String>,
    pub cohort: Option<String>,
}

/// Unit-level data nested in group × time cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MicroPanel {
    pub rows: Vec<MicroRow>,
}

/// Group × time panel with optional per-group attributes, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTable {
    pub grid: OutcomeGrid,
    /// Per-group treatment start, present when the file carries treatment columns.
    pub treat_start: Option<Vec<Option<usize>>>,
    pub cluster: Option<Vec<String>>,
    pub cohort: Option<Vec<String>>,
}

impl GroupTable {
    pub fn into_panel(self) -> Result<PanelData> {
        let starts = self
            .treat_start
            .ok_or_else(|| Error::Schema(vec!["treated".into(), "treat_start".into()]))?;
        PanelData::new(self.grid, starts)
    }
}

/// Column names used when reading CSV files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub group: String,
    pub time: String,
    pub outcome: String,
    pub unit: String,
    pub weight: String,
    pub treated: String,
    pub treat_start: String,
    pub cluster: String,
    pub cohort: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            group: "group".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            unit: "unit".into(),
            weight: "weight".into(),
            treated: "treated".into(),
            treat_start: "treat_start".into(),
            cluster: "cluster".into(),
            cohort: "cohort".into(),
        }
    }
}

/// Result of [`load_panel_csv`]: group files become panels, files with a
/// unit column stay at the unit level.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Panel(PanelData),
    Micro(MicroPanel),
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    if !path.exists() {
        return Err(Error::DataNotFound(path.display().to_string()));
    }
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Self { index: headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect() }
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    fn require(&self, names: &[&str]) -> Result<Vec<usize>> {
        let missing: Vec<String> =
            names.iter().filter(|n| self.get(n).is_none()).map(|n| n.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::Schema(missing));
        }
        Ok(names.iter().map(|n| self.index[*n]).collect())
    }
}

fn parse_f64(field: &str, row: usize, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::Parse { row, message: format!("invalid {what} `{field}`") })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, message: format!("non-finite {what} `{field}`") });
    }
    Ok(v)
}

fn parse_bool(field: &str, row: usize) -> Result<bool> {
    match field.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        _ => Err(Error::Parse { row, message: format!("invalid treated flag `{field}`") }),
    }
}

/// Orders time labels numerically when they all parse as numbers,
/// lexicographically otherwise.
fn sort_time_labels(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            a.parse::<f64>().unwrap().partial_cmp(&b.parse::<f64>().unwrap()).unwrap()
        }),
        None => labels.sort(),
    }
}

struct LabelIndex {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelIndex {
    fn new() -> Self {
        Self { labels: Vec::new(), index: HashMap::new() }
    }

    fn insert(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    fn sorted_times(mut self) -> Self {
        sort_time_labels(&mut self.labels);
        self.index = self.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        self
    }
}

/// Per-group attribute that must be constant across the group's rows.
fn set_group_attr<T: PartialEq + Clone + std::fmt::Debug>(
    slot: &mut Option<T>,
    value: T,
    row: usize,
    what: &str,
) -> Result<()> {
    match slot {
        Some(prev) if *prev != value => Err(Error::Parse {
            row,
            message: format!("{what} changes within a group ({prev:?} vs {value:?})"),
        }),
        _ => {
            *slot = Some(value);
            Ok(())
        }
    }
}

/// Reads a CSV, dispatching on the presence of the unit column.
pub fn load_panel_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Loaded> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?;
    if Columns::new(headers).get(&schema.unit).is_some() {
        return read_micro_csv(path, schema).map(Loaded::Micro);
    }
    read_group_csv(path, schema)?.into_panel().map(Loaded::Panel)
}

/// Reads a group-level CSV (`group,time,outcome[,treated,treat_start,cluster,cohort]`).
pub fn read_group_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GroupTable> {
    let mut rdr = open_csv(path.as_ref())?;
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?;
    let cols = Columns::new(headers);
    let idx = cols.require(&[&schema.group, &schema.time, &schema.outcome])?;
    let (gi, ti, yi) = (idx[0], idx[1], idx[2]);
    let treated_col = cols.get(&schema.treated);
    let start_col = cols.get(&schema.treat_start);
    if treated_col.is_some() != start_col.is_some() {
        let missing = if treated_col.is_none() { &schema.treated } else { &schema.treat_start };
        return Err(Error::Schema(vec![missing.clone()]));
    }
    let cluster_col = cols.get(&schema.cluster);
    let cohort_col = cols.get(&schema.cohort);

    let mut groups = LabelIndex::new();
    let mut cells: Vec<(usize, String, f64, usize)> = Vec::new();
    let mut starts: Vec<Option<Option<usize>>> = Vec::new();
    let mut clusters: Vec<Option<String>> = Vec::new();
    let mut cohorts: Vec<Option<String>> = Vec::new();
    let mut times = LabelIndex::new();

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let g = groups.insert(field(gi));
        if g == starts.len() {
            starts.push(None);
            clusters.push(None);
            cohorts.push(None);
        }
        let y = parse_f64(field(yi), row, "outcome")?;
        times.insert(field(ti));
        cells.push((g, field(ti).to_string(), y, row));
        if let (Some(dc), Some(sc)) = (treated_col, start_col) {
            let start = if parse_bool(field(dc), row)? {
                let s: usize = field(sc).parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("treated row needs an integer treat_start, got `{}`", field(sc)),
                })?;
                Some(s)
            } else {
                None
            };
            set_group_attr(&mut starts[g], start, row, "treatment")?;
        }
        if let Some(c) = cluster_col {
            set_group_attr(&mut clusters[g], field(c).to_string(), row, "cluster")?;
        }
        if let Some(c) = cohort_col {
            set_group_attr(&mut cohorts[g], field(c).to_string(), row, "cohort")?;
        }
    }

    let times = times.sorted_times();
    let (n, t) = (groups.labels.len(), times.labels.len());
    let mut values = vec![f64::NAN; n * t];
    for (g, time, y, row) in cells {
        let slot = &mut values[g * t + times.index[&time]];
        if !slot.is_nan() {
            return Err(Error::Parse {
                row,
                message: format!("duplicate cell (group `{}`, time `{time}`)", groups.labels[g]),
            });
        }
        *slot = y;
    }
    let grid = OutcomeGrid::new(values, groups.labels, times.labels)?;
    Ok(GroupTable {
        grid,
        treat_start: treated_col.map(|_| {
            starts.into_iter().map(|s| s.flatten()).collect()
        }),
        cluster: cluster_col.map(|_| clusters.into_iter().map(Option::unwrap_or_default).collect()),
        cohort: cohort_col.map(|_| cohorts.into_iter().map(Option::unwrap_or_default).collect()),
    })
}

/// Reads a unit-level CSV (`unit,group,time,outcome[,weight,cluster,cohort]`).
pub fn read_micro_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MicroPanel> {
    let mut rdr = open_csv(path.as_ref())?;
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?;
    let cols = Columns::new(headers);
    let idx = cols.require(&[&schema.unit, &schema.group, &schema.time, &schema.outcome])?;
    let weight_col = cols.get(&schema.weight);
    let cluster_col = cols.get(&schema.cluster);
    let cohort_col = cols.get(&schema.cohort);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let weight = match weight_col {
            Some(c) if !field(c).is_empty() => {
                let w = parse_f64(&field(c), row, "weight")?;
                if w <= 0.0 {
                    return Err(Error::Parse { row, message: format!("weight must be positive, got {w}") });
                }
                w
            }
            _ => 1.0,
        };
        rows.push(MicroRow {
            unit: field(idx[0]),
            group: field(idx[1]),
            time: field(idx[2]),
            outcome: parse_f64(&field(idx[3]), row, "outcome")?,
            weight,
            cluster: cluster_col.map(field),
            cohort: cohort_col.map(field),
        });
    }
    Ok(MicroPanel { rows })
}

/// Collapses unit rows to weighted cell means over the full group × time
/// cross product.
pub fn aggregate_micro(m: &MicroPanel) -> Result<OutcomeGrid> {
    let mut groups = LabelIndex::new();
    let mut times = LabelIndex::new();
    for r in &m.rows {
        groups.insert(&r.group);
        times.insert(&r.time);
    }
    let times = times.sorted_times();
    let (n, t) = (groups.labels.len(), times.labels.len());
    let mut num = vec![0.0; n * t];
    let mut den = vec![0.0; n * t];
    for r in &m.rows {
        let k = groups.index[&r.group] * t + times.index[&r.time];
        num[k] += r.weight * r.outcome;
        den[k] += r.weight;
    }
    if let Some(k) = den.iter().position(|&w| w == 0.0) {
        return Err(Error::EmptyCell {
            group: groups.labels[k / t].clone(),
            period: times.labels[k % t].clone(),
        });
    }
    let values = num.iter().zip(&den).map(|(a, b)| a / b).collect();
    OutcomeGrid::new(values, groups.labels, times.labels)
}

impl MicroPanel {
    /// Per-group attribute labels in the group order produced by
    /// [`aggregate_micro`]. Fails when a group carries two labels.
    pub fn group_attribute(&self, pick: impl Fn(&MicroRow) -> Option<&String>) -> Result<Option<Vec<String>>> {
        let mut groups = LabelIndex::new();
        let mut attrs: Vec<Option<String>> = Vec::new();
        let mut any = false;
        for (i, r) in self.rows.iter().enumerate() {
            let g = groups.insert(&r.group);
            if g == attrs.len() {
                attrs.push(None);
            }
            if let Some(v) = pick(r) {
                any = true;
                set_group_attr(&mut attrs[g], v.clone(), i + 2, "group attribute")?;
            }
        }
        Ok(any.then(|| attrs.into_iter().map(Option::unwrap_or_default).collect()))
    }

    /// Aggregates to a [`GroupTable`] carrying cluster and cohort labels.
    pub fn to_group_table(&self) -> Result<GroupTable> {
        Ok(GroupTable {
            grid: aggregate_micro(self)?,
            treat_start: None,
            cluster: self.group_attribute(|r| r.cluster.as_ref())?,
            cohort: self.group_attribute(|r| r.cohort.as_ref())?,
        })
    }
}

/// Reads either CSV flavour into a [`GroupTable`].
pub fn read_table(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GroupTable> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?;
    if Columns::new(headers).get(&schema.unit).is_some() {
        read_micro_csv(path, schema)?.to_group_table()
    } else {
        read_group_csv(path, schema)
    }
}

/// Writes the group-level schema, one row per cell in group-major order.
pub fn write_panel_csv(p: &PanelData, path: impl AsRef<Path>) -> Result<()> {
    write_table_csv(
        &GroupTable {
            grid: p.grid.clone(),
            treat_start: Some(p.treat_start.clone()),
            cluster: None,
            cohort: None,
        },
        path,
    )
}

pub fn write_table_csv(table: &GroupTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path.as_ref())?);
    let mut header = String::from("group,time,outcome");
    if table.treat_start.is_some() {
        header.push_str(",treated,treat_start");
    }
    if table.cluster.is_some() {
        header.push_str(",cluster");
    }
    if table.cohort.is_some() {
        header.push_str(",cohort");
    }
    writeln!(out, "{header}")?;
    let g = &table.grid;
    for j in 0..g.n_groups {
        for t in 0..g.n_periods {
            write!(out, "{},{},{}", g.group_ids[j], g.time_ids[t], g.value(j, t))?;
            if let Some(starts) = &table.treat_start {
                match starts[j] {
                    Some(k) => write!(out, ",1,{k}")?,
                    None => write!(out, ",0,")?,
                }
            }
            if let Some(c) = &table.cluster {
                write!(out, ",{}", c[j])?;
            }
            if let Some(c) = &table.cohort {
                write!(out, ",{}", c[j])?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}
