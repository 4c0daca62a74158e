//! Record datasets and ground-truth partitions.
//!
//! A [`Dataset`] keeps records in file order; that order is the canonical
//! visit order of the refinement loop. Each record also gets a lexicographic
//! rank of its id, which is what label comparisons use for tie-breaking.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// A single record: an opaque id and ordered text attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub attributes: Vec<(String, String)>,
}

impl Record {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            attributes: Vec::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((name.into(), value.into()));
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::EmptyId);
        }
        let mut seen = HashSet::new();
        for (name, _) in &self.attributes {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateAttribute {
                    record: self.id.clone(),
                    attribute: name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Input file format for [`load_records`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    /// Guess from the file extension; anything but `.jsonl`/`.ndjson` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => RecordFormat::Jsonl,
            _ => RecordFormat::Csv,
        }
    }
}

/// An ordered, validated record collection.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<Record>,
    index: HashMap<String, usize>,
    rank: Vec<u32>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("dataset must hold at least one record".into()));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate()?;
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
        let mut rank = vec![0u32; records.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r as u32;
        }
        Ok(Self {
            records,
            index,
            rank,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Record {
        &self.records[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Lexicographic rank of record `i`'s id among all ids.
    pub fn id_rank(&self, i: usize) -> u32 {
        self.rank[i]
    }

    pub fn id_ranks(&self) -> &[u32] {
        &self.rank
    }
}

/// Load records from CSV (header row, first column is the id) or JSONL
/// (one object per line with an `id` field).
pub fn load_records(path: impl AsRef<Path>, format: RecordFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let records = match format {
        RecordFormat::Csv => read_csv_records(path)?,
        RecordFormat::Jsonl => read_jsonl_records(path)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyInput { path: path.into() });
    }
    Dataset::new(records)
}

fn read_csv_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(malformed(path, 1, e.to_string())),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput { path: path.into() });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(line);
            malformed(path, line, e.to_string())
        })?;
        let mut fields = row.iter();
        let id = fields.next().unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(malformed(path, line, "empty id".into()));
        }
        let attributes = headers
            .iter()
            .skip(1)
            .zip(fields)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        out.push(Record { id, attributes });
    }
    Ok(out)
}

fn read_jsonl_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| malformed(path, line_no, e.to_string()))?;
        let serde_json::Value::Object(map) = value else {
            return Err(malformed(path, line_no, "expected a JSON object".into()));
        };
        let mut id = None;
        let mut attributes = Vec::with_capacity(map.len());
        for (k, v) in map {
            let text = match v {
                serde_json::Value::Null => String::new(),
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            if k == "id" {
                id = Some(text);
            } else {
                attributes.push((k, text));
            }
        }
        let id = id
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed(path, line_no, "missing id".into()))?;
        out.push(Record { id, attributes });
    }
    Ok(out)
}

fn malformed(path: &Path, row: usize, reason: String) -> Error {
    Error::MalformedRow {
        path: path.into(),
        row,
        reason,
    }
}

/// Write records as CSV. The header comes from the first record; every record
/// must carry the same attribute names in the same order.
pub fn write_records_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let first = dataset.record(0);
    let mut header = vec!["id"];
    header.extend(first.attributes.iter().map(|(k, _)| k.as_str()));
    w.write_record(&header)?;
    for r in dataset.records() {
        let same_schema = r.attributes.len() == first.attributes.len()
            && r
                .attributes
                .iter()
                .zip(&first.attributes)
                .all(|((a, _), (b, _))| a == b);
        if !same_schema {
            return Err(Error::Config(format!(
                "record {:?} does not share the CSV header schema",
                r.id
            )));
        }
        let mut row = vec![r.id.as_str()];
        row.extend(r.attributes.iter().map(|(_, v)| v.as_str()));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err("<csv writer>"))?;
    Ok(())
}

pub fn write_records_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for r in dataset.records() {
        let mut map = serde_json::Map::new();
        map.insert("id".into(), r.id.clone().into());
        for (k, v) in &r.attributes {
            map.insert(k.clone(), v.clone().into());
        }
        serde_json::to_writer(&mut out, &serde_json::Value::Object(map))?;
        out.write_all(b"\n").map_err(io_err("<jsonl writer>"))?;
    }
    Ok(())
}

/// Record-id → entity-id assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    assignment: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

impl GroundTruth {
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut gt = GroundTruth::default();
        for (r, e) in pairs {
            gt.insert(r.into(), e.into())?;
        }
        Ok(gt)
    }

    fn insert(&mut self, record: String, entity: String) -> Result<()> {
        if self.index.contains_key(&record) {
            return Err(Error::DuplicateTruth(record));
        }
        self.index.insert(record.clone(), self.assignment.len());
        self.assignment.push((record, entity));
        Ok(())
    }

    pub fn entity_of(&self, record: &str) -> Option<&str> {
        self.index
            .get(record)
            .map(|&i| self.assignment[i].1.as_str())
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.assignment
            .iter()
            .map(|(r, e)| (r.as_str(), e.as_str()))
    }

    pub fn entity_count(&self) -> usize {
        self.assignment
            .iter()
            .map(|(_, e)| e.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Reject ids not present in `dataset`.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        for (r, _) in &self.assignment {
            if dataset.position(r).is_none() {
                return Err(Error::UnknownRecord(r.clone()));
            }
        }
        Ok(())
    }

    /// Dense entity index per record, in dataset order. Fails if any record is
    /// unlabelled.
    pub fn entity_indices(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        self.validate_against(dataset)?;
        let mut ids: HashMap<&str, usize> = HashMap::new();
        dataset
            .records()
            .iter()
            .map(|r| {
                let e = self
                    .entity_of(&r.id)
                    .ok_or_else(|| Error::IncompleteTruth(r.id.clone()))?;
                let next = ids.len();
                Ok(*ids.entry(e).or_insert(next))
            })
            .collect()
    }
}

/// Load a two-column `record_id,entity_id` CSV.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut gt = GroundTruth::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| malformed(path, line, e.to_string()))?;
        if row.len() != 2 {
            return Err(malformed(path, line, format!("expected 2 columns, got {}", row.len())));
        }
        gt.insert(row[0].to_string(), row[1].to_string())?;
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput { path: path.into() });
    }
    Ok(gt)
}

pub fn write_ground_truth<W: Write>(gt: &GroundTruth, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "entity_id"])?;
    for (r, e) in gt.pairs() {
        w.write_record([r, e])?;
    }
    w.flush().map_err(io_err("<csv writer>"))?;
    Ok(())
}

/// Size summary of a labelled dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub entities: usize,
    /// Unordered intra-entity record pairs.
    pub matches: u64,
    /// Entity dispersion: records per entity.
    pub dispersion: f64,
}

pub fn dataset_stats(dataset: &Dataset, gt: &GroundTruth) -> Result<DatasetStats> {
    let entity = gt.entity_indices(dataset)?;
    let mut sizes: HashMap<usize, u64> = HashMap::new();
    for e in entity {
        *sizes.entry(e).or_default() += 1;
    }
    let matches = sizes.values().map(|&s| s * (s - 1) / 2).sum();
    Ok(DatasetStats {
        n: dataset.len(),
        entities: sizes.len(),
        matches,
        dispersion: dataset.len() as f64 / sizes.len() as f64,
    })
}
