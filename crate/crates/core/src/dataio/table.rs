use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Whitespace,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "ws" | "whitespace" => Ok(TableFormat::Whitespace),
            other => Err(Error::Config(format!("unknown table format `{other}`"))),
        }
    }
}

/// Rows belonging to one cluster, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub label: String,
    pub rows: Vec<usize>,
}

/// Numeric columns plus a cluster partition of the rows.
///
/// Clusters are ordered by first appearance of their label. Every column has
/// `N` entries and every row belongs to exactly one cluster.
#[derive(Debug, Clone)]
pub struct Dataset {
    group: String,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    cluster_ids: Vec<String>,
    clusters: Vec<Cluster>,
}

impl Dataset {
    pub fn new(
        group: impl Into<String>,
        cluster_ids: Vec<String>,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let n = cluster_ids.len();
        let mut names = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "column `{name}` has {} entries, expected {n}",
                    col.len()
                )));
            }
            if names.contains(&name) {
                return Err(Error::Config(format!("duplicate column `{name}`")));
            }
            names.push(name);
            data.push(col);
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut clusters: Vec<Cluster> = Vec::new();
        for (row, id) in cluster_ids.iter().enumerate() {
            let k = *index.entry(id.as_str()).or_insert_with(|| {
                clusters.push(Cluster {
                    label: id.clone(),
                    rows: Vec::new(),
                });
                clusters.len() - 1
            });
            clusters[k].rows.push(row);
        }
        if clusters.len() < 2 {
            return Err(Error::TooFewClusters(clusters.len()));
        }

        Ok(Dataset {
            group: group.into(),
            names,
            columns: data,
            cluster_ids,
            clusters,
        })
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Total number of observations `N`.
    pub fn n_obs(&self) -> usize {
        self.cluster_ids.len()
    }

    /// Number of clusters `J`.
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.rows.len()).collect()
    }

    /// Average cluster size `N / J`.
    pub fn mean_cluster_size(&self) -> f64 {
        self.n_obs() as f64 / self.n_clusters() as f64
    }

    /// Adds (or replaces) a derived column.
    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.n_obs() {
            return Err(Error::Dimension(format!(
                "column `{name}` has {} entries, expected {}",
                values.len(),
                self.n_obs()
            )));
        }
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name);
                self.columns.push(values);
            }
        }
        Ok(self)
    }
}

pub fn load_table(path: impl AsRef<Path>, format: TableFormat, group: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table(BufReader::new(file), format, group)
}

/// Reads a table with a header row. All columns except `group` must be numeric.
pub fn read_table<R: Read>(reader: R, format: TableFormat, group: &str) -> Result<Dataset> {
    let (header, records) = match format {
        TableFormat::Csv => read_csv(reader)?,
        TableFormat::Whitespace => read_whitespace(reader)?,
    };
    let gcol = header
        .iter()
        .position(|h| h == group)
        .ok_or_else(|| Error::MissingGroup(group.to_string()))?;

    let mut ids = Vec::with_capacity(records.len());
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(records.len()); header.len()];
    for (line, rec) in &records {
        if rec.len() != header.len() {
            return Err(Error::Table {
                line: *line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (k, cell) in rec.iter().enumerate() {
            if k == gcol {
                ids.push(cell.clone());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Table {
                line: *line,
                msg: format!("non-numeric value `{cell}` in column `{}`", header[k]),
            })?;
            cols[k].push(v);
        }
    }

    let columns = header
        .into_iter()
        .zip(cols)
        .enumerate()
        .filter(|(k, _)| *k != gcol)
        .map(|(_, c)| c)
        .collect();
    Dataset::new(group, ids, columns)
}

type Records = (Vec<String>, Vec<(usize, Vec<String>)>);

fn read_csv<R: Read>(reader: R) -> Result<Records> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Table {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Table {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, records))
}

fn read_whitespace<R: Read>(reader: R) -> Result<Records> {
    let mut header: Option<Vec<String>> = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Table {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if fields.is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(fields);
        } else {
            records.push((i + 1, fields));
        }
    }
    let header = header.ok_or(Error::Table {
        line: 1,
        msg: "missing header row".into(),
    })?;
    Ok((header, records))
}
