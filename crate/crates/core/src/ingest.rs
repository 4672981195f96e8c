//! Dataset loading, validation and train/test splitting.
//!
//! Two on-disk layouts are accepted:
//!
//! * CSV, one row per query with the column order
//!   `query_id, emb_0..emb_{k-1}, d_0..d_{M-1}, g_0..g_{M-1}`.
//! * JSONL, one record per line with named arrays
//!   (`query_id`, `embedding`, `scores`, `costs`, optional `input_tokens` and
//!   `output_tokens`). An optional first line `{"models": [...], "provenance": ...}`
//!   carries the catalog with per-token prices. When a record omits `costs` but
//!   carries token counts, costs are priced from the catalog.
//!
//! Embeddings may instead come from a sidecar JSONL file of
//! `{"query_id": .., "embedding": [..]}` lines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{compute_cost, ModelCatalog, ModelSpec, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::config("format", format!("unknown format {other:?}; expected jsonl or csv"))),
        }
    }
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "jsonl" | "json" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub catalog: ModelCatalog,
    pub embedding_dimension: usize,
    pub historical: Vec<QueryRecord>,
    pub test_queries: Vec<QueryRecord>,
    pub provenance: String,
}

impl DatasetManifest {
    pub fn new(
        catalog: ModelCatalog,
        historical: Vec<QueryRecord>,
        test_queries: Vec<QueryRecord>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let embedding_dimension = historical
            .first()
            .or(test_queries.first())
            .map(|r| r.embedding.len())
            .unwrap_or(0);
        let manifest = Self {
            catalog,
            embedding_dimension,
            historical,
            test_queries,
            provenance: provenance.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn num_models(&self) -> usize {
        self.catalog.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        if self.historical.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for r in self.historical.iter().chain(&self.test_queries) {
            r.validate(&self.catalog, self.embedding_dimension)?;
        }
        Ok(())
    }

    /// Resplits all records (historical and test) with [`split_dataset`].
    pub fn resplit(&self, test_size: usize, seed: u64) -> Result<Self> {
        let (historical, test_queries) = split_dataset(self, test_size, seed)?;
        let out = Self {
            historical,
            test_queries,
            ..self.clone()
        };
        if out.historical.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(out)
    }
}

/// Options beyond the file itself.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Catalog to use instead of (or in the absence of) one embedded in the file.
    pub catalog: Option<ModelCatalog>,
    /// Sidecar file mapping `query_id` to embedding.
    pub embeddings: Option<PathBuf>,
    /// Separate file of test queries in the same format.
    pub test_path: Option<PathBuf>,
}

/// Loads and validates a dataset; all records land in `historical`.
pub fn load_manifest(path: &Path, format: DataFormat) -> Result<DatasetManifest> {
    load_manifest_with(path, format, &LoadOptions::default())
}

pub fn load_manifest_with(path: &Path, format: DataFormat, opts: &LoadOptions) -> Result<DatasetManifest> {
    let sidecar = match &opts.embeddings {
        Some(p) => Some(load_embedding_sidecar(p)?),
        None => None,
    };
    let (mut historical, file_catalog, provenance) = read_records(path, format, opts.catalog.as_ref())?;
    let mut test_queries = match &opts.test_path {
        Some(p) => read_records(p, format, opts.catalog.as_ref().or(file_catalog.as_ref()))?.0,
        None => Vec::new(),
    };
    if let Some(map) = &sidecar {
        for r in historical.iter_mut().chain(test_queries.iter_mut()) {
            if r.embedding.is_empty() {
                r.embedding = map
                    .get(&r.query_id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidRecord {
                        query_id: r.query_id.clone(),
                        message: "no embedding in sidecar file".into(),
                    })?;
            }
        }
    }
    if historical.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = historical[0].scores.len();
    let catalog = match opts.catalog.clone().or(file_catalog) {
        Some(c) => c,
        None => ModelCatalog::anonymous(m),
    };
    let manifest = DatasetManifest {
        catalog,
        embedding_dimension: historical[0].embedding.len(),
        historical,
        test_queries,
        provenance: provenance.unwrap_or_else(|| path.display().to_string()),
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_embedding_sidecar(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    #[derive(Deserialize)]
    struct Row {
        query_id: String,
        embedding: Vec<f64>,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        map.insert(row.query_id, row.embedding);
    }
    Ok(map)
}

type Loaded = (Vec<QueryRecord>, Option<ModelCatalog>, Option<String>);

fn read_records(path: &Path, format: DataFormat, catalog: Option<&ModelCatalog>) -> Result<Loaded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Csv => Ok((read_csv(BufReader::new(file))?, None, None)),
        DataFormat::Jsonl => read_jsonl(BufReader::new(file), catalog),
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    models: Vec<ModelSpec>,
    #[serde(default)]
    provenance: Option<String>,
}

#[derive(Deserialize)]
struct JsonlRecord {
    query_id: String,
    #[serde(default)]
    embedding: Vec<f64>,
    scores: Vec<f64>,
    #[serde(default)]
    costs: Option<Vec<f64>>,
    #[serde(default)]
    input_tokens: Option<u64>,
    #[serde(default)]
    output_tokens: Option<Vec<u64>>,
}

fn read_jsonl<R: BufRead>(input: R, catalog: Option<&ModelCatalog>) -> Result<Loaded> {
    let mut records = Vec::new();
    let mut file_catalog: Option<ModelCatalog> = None;
    let mut provenance = None;
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if records.is_empty() && file_catalog.is_none() && value.get("models").is_some() {
            let header: JsonlHeader = serde_json::from_value(value).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            file_catalog = Some(ModelCatalog::new(header.models)?);
            provenance = header.provenance;
            continue;
        }
        let raw: JsonlRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let costs = match (raw.costs, raw.input_tokens, &raw.output_tokens) {
            (Some(c), _, _) => c,
            (None, Some(input), Some(outputs)) => {
                let cat = catalog.or(file_catalog.as_ref()).ok_or_else(|| Error::InvalidRecord {
                    query_id: raw.query_id.clone(),
                    message: "token counts without a priced catalog".into(),
                })?;
                if outputs.len() != cat.len() {
                    return Err(Error::InvalidRecord {
                        query_id: raw.query_id.clone(),
                        message: format!("output token vector has {} entries, expected {}", outputs.len(), cat.len()),
                    });
                }
                cat.models.iter().zip(outputs).map(|(m, &o)| compute_cost(m, input, o)).collect()
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("record {} has neither costs nor token counts", raw.query_id),
                })
            }
        };
        records.push(QueryRecord {
            query_id: raw.query_id,
            embedding: raw.embedding,
            scores: raw.scores,
            costs,
            input_tokens: raw.input_tokens,
            output_tokens: raw.output_tokens,
        });
    }
    Ok((records, file_catalog, provenance))
}

struct CsvLayout {
    dim: usize,
    models: usize,
}

fn csv_layout(headers: &csv::StringRecord) -> Result<CsvLayout> {
    let bad = |message: String| Error::Parse { line: 1, message };
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols.first() != Some(&"query_id") {
        return Err(bad("first column must be query_id".into()));
    }
    let count_prefix = |start: usize, prefix: &str| {
        cols[start..]
            .iter()
            .enumerate()
            .take_while(|(k, c)| **c == format!("{prefix}{k}"))
            .count()
    };
    let dim = count_prefix(1, "emb_");
    let models = count_prefix(1 + dim, "d_");
    let costs = count_prefix(1 + dim + models, "g_");
    if models == 0 {
        return Err(bad("no d_0.. score columns after the embedding columns".into()));
    }
    if costs != models {
        return Err(bad(format!("{models} score columns but {costs} cost columns")));
    }
    if cols.len() != 1 + dim + 2 * models {
        return Err(bad(format!(
            "unexpected column {:?}; expected query_id, emb_*, d_*, g_*",
            cols[1 + dim + 2 * models]
        )));
    }
    Ok(CsvLayout { dim, models })
}

fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<QueryRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let layout = csv_layout(&headers)?;
    let width = 1 + layout.dim + 2 * layout.models;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let query_id = row.get(0).unwrap_or_default().to_string();
        if row.len() != width {
            return Err(Error::InvalidRecord {
                query_id,
                message: format!("row at line {line} has {} fields, expected {width}", row.len()),
            });
        }
        let parse = |k: usize| -> Result<f64> {
            let field = row.get(k).unwrap_or_default().trim();
            field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column {} of record {query_id}: {field:?} is not a number", headers.get(k).unwrap_or("?")),
            })
        };
        let embedding = (1..1 + layout.dim).map(parse).collect::<Result<Vec<_>>>()?;
        let d0 = 1 + layout.dim;
        let scores = (d0..d0 + layout.models).map(parse).collect::<Result<Vec<_>>>()?;
        let g0 = d0 + layout.models;
        let costs = (g0..g0 + layout.models).map(parse).collect::<Result<Vec<_>>>()?;
        records.push(QueryRecord::new(query_id.clone(), embedding, scores, costs));
    }
    Ok(records)
}

/// Writes records in the given layout. CSV drops the catalog and token counts.
pub fn write_records(
    path: &Path,
    format: DataFormat,
    catalog: &ModelCatalog,
    provenance: &str,
    records: &[QueryRecord],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        DataFormat::Jsonl => {
            let header = JsonlHeader {
                models: catalog.models.clone(),
                provenance: Some(provenance.to_string()),
            };
            serde_json::to_writer(&mut out, &header)?;
            out.write_all(b"\n").map_err(io)?;
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n").map_err(io)?;
            }
        }
        DataFormat::Csv => {
            let dim = records.first().map(|r| r.embedding.len()).unwrap_or(0);
            let m = catalog.len();
            let mut w = csv::Writer::from_writer(&mut out);
            let mut header = vec!["query_id".to_string()];
            header.extend((0..dim).map(|k| format!("emb_{k}")));
            header.extend((0..m).map(|k| format!("d_{k}")));
            header.extend((0..m).map(|k| format!("g_{k}")));
            w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
            for r in records {
                let mut row = vec![r.query_id.clone()];
                row.extend(r.embedding.iter().chain(&r.scores).chain(&r.costs).map(|v| v.to_string()));
                w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
            }
            w.flush().map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Writes `historical` to `path` and, when present, the test queries to `test_path`.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path, test_path: Option<&Path>, format: DataFormat) -> Result<()> {
    write_records(path, format, &manifest.catalog, &manifest.provenance, &manifest.historical)?;
    if let Some(tp) = test_path {
        write_records(tp, format, &manifest.catalog, &manifest.provenance, &manifest.test_queries)?;
    }
    Ok(())
}

/// Draws `test_size` records uniformly without replacement as the test set;
/// the rest stay historical. Both keep the original record order.
pub fn split_dataset(manifest: &DatasetManifest, test_size: usize, seed: u64) -> Result<(Vec<QueryRecord>, Vec<QueryRecord>)> {
    let pool: Vec<&QueryRecord> = manifest.historical.iter().chain(&manifest.test_queries).collect();
    if test_size >= pool.len() {
        return Err(Error::config(
            "test_size",
            format!("test size {test_size} must be smaller than the {} available records", pool.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; pool.len()];
    for idx in rand::seq::index::sample(&mut rng, pool.len(), test_size) {
        chosen[idx] = true;
    }
    let mut historical = Vec::with_capacity(pool.len() - test_size);
    let mut test = Vec::with_capacity(test_size);
    for (r, is_test) in pool.into_iter().zip(chosen) {
        if is_test {
            test.push(r.clone());
        } else {
            historical.push(r.clone());
        }
    }
    Ok((historical, test))
}
