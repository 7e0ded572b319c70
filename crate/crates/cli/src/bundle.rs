use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const FORMAT: &str = "eigengrowth-bundle/1";

/// A CSV table: header plus rows of already-formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn row(mut self, cells: Vec<String>) -> Self {
        self.push(cells);
        self
    }

    pub fn push(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(cells);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| anyhow!("table `{}` has no column `{name}`", self.name))
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[col]
                    .parse::<f64>()
                    .with_context(|| format!("table `{}` row {} column `{name}`: `{}`", self.name, i + 1, r[col]))
            })
            .collect()
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }

    fn from_csv(name: &str, bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let columns = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(String::from).collect()))
            .collect::<Result<_>>()?;
        Ok(Self { name: name.into(), columns, rows })
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Output of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub schema: u32,
    pub tables: Vec<Table>,
    /// Core operations that produced the numbers, as `module::operation`.
    pub provenance: Vec<&'static str>,
    pub resolution: BTreeMap<String, Value>,
    pub calibrated: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TableMeta {
    pub file: String,
    pub experiment: String,
    pub columns: Vec<String>,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub name: String,
    pub schema: String,
    pub tables: Vec<String>,
    pub provenance: Vec<String>,
    pub resolution: BTreeMap<String, Value>,
    pub calibrated: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub format: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: String,
    pub experiments: Vec<ExperimentMeta>,
    pub tables: BTreeMap<String, TableMeta>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes tables, `metadata.json` (deterministic) and `timing.json` (wall times).
pub fn write(dir: &Path, config: &RunConfig, results: &[ExperimentResult]) -> Result<Metadata> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let canonical = config.canonical()?;
    let mut tables = BTreeMap::new();
    let mut experiments = vec![];
    for r in results {
        for t in &r.tables {
            let bytes = t.to_csv()?;
            let file = format!("{}.csv", t.name);
            fs::write(dir.join(&file), &bytes).with_context(|| format!("writing {file}"))?;
            let meta = TableMeta {
                file,
                experiment: r.name.clone(),
                columns: t.columns.clone(),
                rows: t.rows.len(),
                sha256: sha256_hex(&bytes),
            };
            if tables.insert(t.name.clone(), meta).is_some() {
                bail!("table `{}` written twice", t.name);
            }
        }
        experiments.push(ExperimentMeta {
            name: r.name.clone(),
            schema: format!("{}/{}", r.name, r.schema),
            tables: r.tables.iter().map(|t| t.name.clone()).collect(),
            provenance: r.provenance.iter().map(|s| s.to_string()).collect(),
            resolution: r.resolution.clone(),
            calibrated: r.calibrated.clone(),
        });
    }
    let meta = Metadata {
        format: FORMAT.into(),
        config_sha256: sha256_hex(canonical.as_bytes()),
        seed: config.seed,
        config: canonical,
        experiments,
        tables,
    };
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    let timing: BTreeMap<&str, f64> = results.iter().map(|r| (r.name.as_str(), r.seconds)).collect();
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok(meta)
}

/// Reads a bundle back, rejecting any table whose bytes no longer match its recorded hash.
pub fn load(dir: &Path) -> Result<(Metadata, BTreeMap<String, Table>)> {
    let path = dir.join("metadata.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let meta: Metadata = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if meta.format != FORMAT {
        bail!("unsupported bundle format `{}`", meta.format);
    }
    let mut tables = BTreeMap::new();
    for (name, t) in &meta.tables {
        let bytes = fs::read(dir.join(&t.file)).with_context(|| format!("reading table {}", t.file))?;
        if sha256_hex(&bytes) != t.sha256 {
            bail!("table {} does not match its recorded sha256", t.file);
        }
        let table = Table::from_csv(name, &bytes)?;
        if table.columns != t.columns || table.rows.len() != t.rows {
            bail!("table {} does not match its recorded shape", t.file);
        }
        tables.insert(name.clone(), table);
    }
    Ok((meta, tables))
}
