//! Unit-level data model: ingestion, validation, one-hot encoding and the
//! cluster-level exploration/validation split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            ColumnData::Continuous(_) => FeatureKind::Continuous,
            ColumnData::Categorical(_) => FeatureKind::Categorical,
        }
    }

    fn subset(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column { name: name.into(), data: ColumnData::Continuous(values) }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<String>) -> Self {
        Column { name: name.into(), data: ColumnData::Categorical(values) }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Continuous(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    /// Value as a number: continuous values directly, categorical levels
    /// when they parse as numbers.
    pub fn numeric_value(&self, row: usize) -> Option<f64> {
        match &self.data {
            ColumnData::Continuous(v) => Some(v[row]),
            ColumnData::Categorical(v) => v[row].trim().parse().ok(),
        }
    }

    pub fn text_value(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Continuous(v) => format_number(v[row]),
            ColumnData::Categorical(v) => v[row].clone(),
        }
    }
}

/// Shortest round-trip representation of a float.
pub fn format_number(x: f64) -> String {
    format!("{x}")
}

/// Identifies a cluster. Units with no recorded cluster are their own
/// singleton cluster keyed by unit id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClusterKey {
    Named(String),
    Unit(String),
}

impl std::fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterKey::Named(s) => write!(f, "{s}"),
            ClusterKey::Unit(s) => write!(f, "unit:{s}"),
        }
    }
}

/// Raw (pre-encoding) covariates of a set of units, with optional cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    unit_ids: Vec<String>,
    columns: Vec<Column>,
    clusters: Option<Vec<Option<String>>>,
}

impl FeatureTable {
    pub fn new(
        unit_ids: Vec<String>,
        columns: Vec<Column>,
        clusters: Option<Vec<Option<String>>>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if columns.is_empty() {
            return Err(Error::Schema("at least one feature column is required".into()));
        }
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", c.name)));
            }
            if c.data.len() != n {
                return Err(Error::Shape(format!(
                    "column `{}` has {} values, expected {n}",
                    c.name,
                    c.data.len()
                )));
            }
            if let ColumnData::Continuous(v) = &c.data {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Validation {
                        row: i + 1,
                        message: format!("non-finite value in feature `{}`", c.name),
                    });
                }
            }
        }
        if let Some(cl) = &clusters {
            if cl.len() != n {
                return Err(Error::Shape(format!("cluster column has {} values, expected {n}", cl.len())));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, id) in unit_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation { row: i + 1, message: format!("duplicate unit id `{id}`") });
            }
        }
        Ok(FeatureTable { unit_ids, columns, clusters })
    }

    pub fn n_rows(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Name(format!("feature `{name}` not found")))
    }

    pub fn clusters(&self) -> Option<&[Option<String>]> {
        self.clusters.as_deref()
    }

    pub fn has_clusters(&self) -> bool {
        self.clusters.is_some()
    }

    pub fn cluster_key(&self, row: usize) -> ClusterKey {
        match self.clusters.as_ref().and_then(|c| c[row].clone()) {
            Some(s) => ClusterKey::Named(s),
            None => ClusterKey::Unit(self.unit_ids[row].clone()),
        }
    }

    /// Rows grouped by cluster, ordered by cluster key.
    pub fn cluster_groups(&self) -> Vec<(ClusterKey, Vec<usize>)> {
        let mut map: BTreeMap<ClusterKey, Vec<usize>> = BTreeMap::new();
        for i in 0..self.n_rows() {
            map.entry(self.cluster_key(i)).or_default().push(i);
        }
        map.into_iter().collect()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureTable {
        FeatureTable {
            unit_ids: rows.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column { name: c.name.clone(), data: c.data.subset(rows) })
                .collect(),
            clusters: self.clusters.as_ref().map(|cl| rows.iter().map(|&i| cl[i].clone()).collect()),
        }
    }

    /// Copy with every unit's `feature` overwritten by `value`.
    pub fn with_feature_value(&self, feature: &str, value: &GridValue) -> Result<FeatureTable> {
        let idx = self
            .columns
            .iter()
            .position(|c| c.name == feature)
            .ok_or_else(|| Error::Name(format!("feature `{feature}` not found")))?;
        let mut out = self.clone();
        let n = self.n_rows();
        out.columns[idx].data = match (&self.columns[idx].data, value) {
            (ColumnData::Continuous(_), GridValue::Number(x)) => ColumnData::Continuous(vec![*x; n]),
            (ColumnData::Continuous(_), GridValue::Level(s)) => {
                let x: f64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("level `{s}` is not numeric for `{feature}`")))?;
                ColumnData::Continuous(vec![x; n])
            }
            (ColumnData::Categorical(_), GridValue::Level(s)) => ColumnData::Categorical(vec![s.clone(); n]),
            (ColumnData::Categorical(_), GridValue::Number(x)) => {
                ColumnData::Categorical(vec![format_number(*x); n])
            }
        };
        Ok(out)
    }

    /// Same covariates without cluster ids.
    pub fn without_clusters(&self) -> FeatureTable {
        FeatureTable { clusters: None, ..self.clone() }
    }
}

/// A grid point for curve computations: a number for continuous features,
/// a level for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Level(String),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Number(x) => write!(f, "{}", format_number(*x)),
            GridValue::Level(s) => write!(f, "{s}"),
        }
    }
}

/// Observational study data: covariates, binary treatment and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    table: FeatureTable,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
}

impl Dataset {
    pub fn new(table: FeatureTable, treatment: Vec<u8>, outcome: Vec<f64>) -> Result<Self> {
        let n = table.n_rows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Shape(format!(
                "treatment ({}) and outcome ({}) must have {n} rows",
                treatment.len(),
                outcome.len()
            )));
        }
        if n < 2 {
            return Err(Error::Validation { row: n, message: "at least two units are required".into() });
        }
        if let Some(i) = treatment.iter().position(|&z| z > 1) {
            return Err(Error::Validation { row: i + 1, message: "treatment must be 0 or 1".into() });
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::Validation { row: i + 1, message: "outcome must be finite".into() });
        }
        let treated = treatment.iter().filter(|&&z| z == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::Validation {
                row: 0,
                message: "both treatment values must appear at least once".into(),
            });
        }
        Ok(Dataset { table, treatment, outcome })
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn unit_ids(&self) -> &[String] {
        self.table.unit_ids()
    }

    pub fn treated_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.treatment[i] == 1).collect()
    }

    pub fn control_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.treatment[i] == 0).collect()
    }

    /// Subset of rows. Fails if the subset violates the dataset invariants
    /// (for example a single arm).
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.table.subset(rows),
            rows.iter().map(|&i| self.treatment[i]).collect(),
            rows.iter().map(|&i| self.outcome[i]).collect(),
        )
    }

    /// Copy with outcomes replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.table.clone(), self.treatment.clone(), outcome)
    }

    /// Copy with treatment labels replaced.
    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Dataset> {
        Dataset::new(self.table.clone(), treatment, self.outcome.clone())
    }

    /// Write in the CSV layout `load_csv` reads back with `schema`.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &Schema, preamble: Option<&str>) -> Result<()> {
        let mut w = writer;
        if let Some(p) = preamble {
            writeln!(w, "# {p}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec![schema.id.clone().unwrap_or_else(|| "unit_id".into())];
        header.extend(self.table.feature_names());
        header.push(schema.treatment.clone());
        header.push(schema.outcome.clone());
        if self.table.has_clusters() {
            header.push(schema.cluster.clone().unwrap_or_else(|| "cluster".into()));
        }
        csv.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.unit_ids()[i].clone()];
            rec.extend(self.table.columns().iter().map(|c| c.text_value(i)));
            rec.push(self.treatment[i].to_string());
            rec.push(format_number(self.outcome[i]));
            if let Some(cl) = self.table.clusters() {
                rec.push(cl[i].clone().unwrap_or_default());
            }
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Feature columns; every remaining column when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    /// Unit id column; row numbers are used when absent.
    #[serde(default)]
    pub id: Option<String>,
}

impl Schema {
    pub fn new(outcome: &str, treatment: &str) -> Self {
        Schema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            cluster: None,
            categorical: Vec::new(),
            features: None,
            id: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

/// Parse a headed CSV. Lines starting with `#` are ignored. Row numbers in
/// errors are 1-based data rows.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let y_col = find(&schema.outcome)?;
    let z_col = find(&schema.treatment)?;
    let cl_col = schema.cluster.as_deref().map(find).transpose()?;
    let id_col = schema.id.as_deref().map(find).transpose()?;
    for c in &schema.categorical {
        find(c)?;
    }
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_col && *i != z_col && Some(*i) != cl_col && Some(*i) != id_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Schema("schema names no feature columns".into()));
    }
    let feature_cols: Vec<usize> = feature_names.iter().map(|f| find(f)).collect::<Result<_>>()?;
    for c in &schema.categorical {
        if !feature_names.contains(c) {
            return Err(Error::Schema(format!("categorical column `{c}` is not a feature")));
        }
    }
    let categorical: BTreeSet<&str> = schema.categorical.iter().map(String::as_str).collect();

    let mut ids = Vec::new();
    let mut z = Vec::new();
    let mut y = Vec::new();
    let mut clusters = cl_col.map(|_| Vec::new());
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];

    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let get = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| Error::Validation { row, message: "record is too short".into() })
        };
        ids.push(match id_col {
            Some(c) => get(c)?.to_string(),
            None => r.to_string(),
        });
        let zv = get(z_col)?;
        let zf: f64 = zv.parse().map_err(|_| Error::Validation {
            row,
            message: format!("treatment value `{zv}` is not numeric"),
        })?;
        if zf == 0.0 {
            z.push(0);
        } else if zf == 1.0 {
            z.push(1);
        } else {
            return Err(Error::Validation { row, message: format!("treatment value `{zv}` is not 0 or 1") });
        }
        y.push(parse_finite(get(y_col)?, row, &schema.outcome)?);
        if let (Some(c), Some(cl)) = (cl_col, clusters.as_mut()) {
            let v = get(c)?;
            cl.push(if v.is_empty() { None } else { Some(v.to_string()) });
        }
        for (k, &c) in feature_cols.iter().enumerate() {
            let v = get(c)?;
            if v.is_empty() {
                return Err(Error::Validation {
                    row,
                    message: format!("missing value in feature `{}`", feature_names[k]),
                });
            }
            raw[k].push(v.to_string());
        }
    }

    let mut columns = Vec::with_capacity(feature_cols.len());
    for (k, name) in feature_names.iter().enumerate() {
        let values = std::mem::take(&mut raw[k]);
        if categorical.contains(name.as_str()) {
            columns.push(Column::categorical(name.clone(), values));
        } else {
            let parsed = values
                .iter()
                .enumerate()
                .map(|(i, v)| parse_finite(v, i + 1, name))
                .collect::<Result<Vec<_>>>()?;
            columns.push(Column::continuous(name.clone(), parsed));
        }
    }
    let table = FeatureTable::new(ids, columns, clusters)?;
    Dataset::new(table, z, y)
}

fn parse_finite(v: &str, row: usize, col: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Validation { row, message: format!("value `{v}` in column `{col}` is not a finite number") }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncodedBlock {
    Continuous { name: String },
    Categorical { name: String, levels: Vec<String> },
}

/// Deterministic mapping from raw covariates to a dense numeric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingPlan {
    blocks: Vec<EncodedBlock>,
    cluster_levels: Option<Vec<String>>,
}

impl EncodingPlan {
    /// Learn the plan from `table`. Categorical levels and cluster ids are
    /// sorted lexicographically.
    pub fn fit(table: &FeatureTable, include_cluster: bool) -> Result<Self> {
        let blocks = table
            .columns()
            .iter()
            .map(|c| match &c.data {
                ColumnData::Continuous(_) => EncodedBlock::Continuous { name: c.name.clone() },
                ColumnData::Categorical(v) => {
                    let levels: BTreeSet<&String> = v.iter().collect();
                    EncodedBlock::Categorical {
                        name: c.name.clone(),
                        levels: levels.into_iter().cloned().collect(),
                    }
                }
            })
            .collect();
        let cluster_levels = if include_cluster {
            let cl = table
                .clusters()
                .ok_or_else(|| Error::Config("include_cluster requested but the data has no cluster column".into()))?;
            let levels: BTreeSet<&String> = cl.iter().flatten().collect();
            Some(levels.into_iter().cloned().collect())
        } else {
            None
        };
        Ok(EncodingPlan { blocks, cluster_levels })
    }

    pub fn includes_cluster(&self) -> bool {
        self.cluster_levels.is_some()
    }

    pub fn blocks(&self) -> &[EncodedBlock] {
        &self.blocks
    }

    pub fn n_columns(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                EncodedBlock::Continuous { .. } => 1,
                EncodedBlock::Categorical { levels, .. } => levels.len(),
            })
            .sum::<usize>()
            + self.cluster_levels.as_ref().map_or(0, Vec::len)
    }

    /// Encoded column names: `name` for continuous features, `name=level`
    /// for indicator columns and `cluster=id` for the cluster block.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_columns());
        for b in &self.blocks {
            match b {
                EncodedBlock::Continuous { name } => out.push(name.clone()),
                EncodedBlock::Categorical { name, levels } => {
                    out.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        if let Some(levels) = &self.cluster_levels {
            out.extend(levels.iter().map(|l| format!("cluster={l}")));
        }
        out
    }

    /// Original feature name for each raw feature, in encoding order.
    pub fn source_features(&self) -> Vec<String> {
        self.blocks
            .iter()
            .map(|b| match b {
                EncodedBlock::Continuous { name } | EncodedBlock::Categorical { name, .. } => name.clone(),
            })
            .collect()
    }

    /// Encode `table`. Unseen levels produce an all-zero indicator block.
    pub fn apply(&self, table: &FeatureTable) -> Result<Array2<f64>> {
        let n = table.n_rows();
        let mut out = Array2::zeros((n, self.n_columns()));
        let mut offset = 0;
        for b in &self.blocks {
            match b {
                EncodedBlock::Continuous { name } => {
                    let col = table.column(name).map_err(|_| Error::Shape(format!("query lacks feature `{name}`")))?;
                    let ColumnData::Continuous(v) = &col.data else {
                        return Err(Error::Shape(format!("feature `{name}` must be continuous")));
                    };
                    for (i, x) in v.iter().enumerate() {
                        out[[i, offset]] = *x;
                    }
                    offset += 1;
                }
                EncodedBlock::Categorical { name, levels } => {
                    let col = table.column(name).map_err(|_| Error::Shape(format!("query lacks feature `{name}`")))?;
                    let ColumnData::Categorical(v) = &col.data else {
                        return Err(Error::Shape(format!("feature `{name}` must be categorical")));
                    };
                    for (i, s) in v.iter().enumerate() {
                        if let Ok(k) = levels.binary_search(s) {
                            out[[i, offset + k]] = 1.0;
                        }
                    }
                    offset += levels.len();
                }
            }
        }
        if let Some(levels) = &self.cluster_levels {
            let cl = table
                .clusters()
                .ok_or_else(|| Error::Shape("model was fit with cluster ids but the query has none".into()))?;
            for (i, c) in cl.iter().enumerate() {
                if let Some(Ok(k)) = c.as_ref().map(|c| levels.binary_search(c)) {
                    out[[i, offset + k]] = 1.0;
                }
            }
        }
        Ok(out)
    }
}

/// One-hot encode the dataset's covariates.
pub fn encode(ds: &Dataset, include_cluster: bool) -> Result<(Array2<f64>, EncodingPlan)> {
    let plan = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = plan.apply(ds.table())?;
    Ok((x, plan))
}

pub fn write_encoded_csv<W: Write>(writer: W, plan: &EncodingPlan, x: &Array2<f64>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(plan.column_names())?;
    for row in x.rows() {
        csv.write_record(row.iter().map(|v| format_number(*v)))?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Exploration,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub sides: BTreeMap<ClusterKey, Side>,
    pub exploration: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Split clusters into two halves of near-equal row count: seeded shuffle,
/// then largest-first assignment to the lighter side.
pub fn cluster_split(ds: &Dataset, seed: u64) -> Result<SplitAssignment> {
    let mut groups = ds.table().cluster_groups();
    if groups.len() < 2 {
        return Err(Error::Split(format!("need at least 2 clusters, found {}", groups.len())));
    }
    let mut rng = seeding::rng(seed);
    groups.shuffle(&mut rng);
    // stable: equal sizes keep their shuffled order
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));

    let mut sides = BTreeMap::new();
    let mut exploration = Vec::new();
    let mut validation = Vec::new();
    for (key, rows) in groups {
        let side = if exploration.len() <= validation.len() { Side::Exploration } else { Side::Validation };
        match side {
            Side::Exploration => exploration.extend(rows),
            Side::Validation => validation.extend(rows),
        }
        sides.insert(key, side);
    }
    exploration.sort_unstable();
    validation.sort_unstable();
    Ok(SplitAssignment { sides, exploration, validation })
}
