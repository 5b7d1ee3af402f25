//! Warehouse extracts: CSV ingestion into batch subsets and batch lookup.
//!
//! A CSV extract holds rows from one table; one column names the batch each
//! row was loaded in. [`load_batches`] groups rows by that column into
//! [`BatchSubset`]s. Cells are kept as source text and never coerced, so
//! every hash computed downstream is independent of any value parser.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

/// Bytes reserved for the canonical hashing frame.
pub const UNIT_SEPARATOR: char = '\u{1F}';
pub const RECORD_SEPARATOR: char = '\u{1E}';

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, thiserror::Error)]
pub enum WarehouseError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("batch not found: table {table_id}, batch {batch_id}")]
    NotFound { table_id: String, batch_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    /// Column holds personal data that may later be erased.
    pub gdpr: bool,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, gdpr: bool) -> Self {
        ColumnSpec {
            name: name.into(),
            gdpr,
        }
    }
}

/// One batch of warehouse rows, the unit of verification.
///
/// Rows are rectangular, keep their source order, and contain no cell with
/// the reserved separator bytes `0x1E` / `0x1F`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSubset {
    table_id: String,
    batch_id: String,
    timestamp: DateTime<Utc>,
    schema: Vec<ColumnSpec>,
    rows: Vec<Vec<String>>,
}

impl BatchSubset {
    pub fn new(
        table_id: impl Into<String>,
        batch_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        schema: Vec<ColumnSpec>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, WarehouseError> {
        let batch = BatchSubset {
            table_id: table_id.into(),
            batch_id: batch_id.into(),
            // Second precision.
            timestamp: DateTime::from_timestamp(timestamp.timestamp(), 0).unwrap_or(timestamp),
            schema,
            rows,
        };
        batch.validate()?;
        Ok(batch)
    }

    fn validate(&self) -> Result<(), WarehouseError> {
        if self.table_id.is_empty() || self.batch_id.is_empty() {
            return Err(WarehouseError::InvalidBatch(
                "table id and batch id must be non-empty".into(),
            ));
        }
        validate_schema(&self.schema)?;
        if self.rows.is_empty() {
            return Err(WarehouseError::EmptyBatch(format!(
                "table {} batch {} has no rows",
                self.table_id, self.batch_id
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            check_row(&self.schema, i, row)?;
        }
        Ok(())
    }

    pub fn table_id(&self) -> &str {
        &self.table_id
    }

    pub fn batch_id(&self) -> &str {
        &self.batch_id
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }

    /// ISO-8601 UTC text with second precision.
    pub fn timestamp_text(&self) -> String {
        self.timestamp.format(TIMESTAMP_FORMAT).to_string()
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.schema.iter().map(|c| c.name.as_str())
    }

    pub fn gdpr_columns(&self) -> impl Iterator<Item = &str> {
        self.schema
            .iter()
            .filter(|c| c.gdpr)
            .map(|c| c.name.as_str())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&str> {
        self.rows.get(row)?.get(column).map(String::as_str)
    }

    pub fn set_cell(
        &mut self,
        row: usize,
        column: usize,
        value: impl Into<String>,
    ) -> Result<String, WarehouseError> {
        let value = value.into();
        check_cell(row, &value)?;
        let cell = self
            .rows
            .get_mut(row)
            .and_then(|r| r.get_mut(column))
            .ok_or_else(|| {
                WarehouseError::InvalidBatch(format!("cell ({row}, {column}) out of range"))
            })?;
        Ok(std::mem::replace(cell, value))
    }

    pub fn set_cell_by_name(
        &mut self,
        row: usize,
        column: &str,
        value: impl Into<String>,
    ) -> Result<String, WarehouseError> {
        let idx = self
            .column_index(column)
            .ok_or_else(|| WarehouseError::Schema(format!("unknown column {column:?}")))?;
        self.set_cell(row, idx, value)
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<(), WarehouseError> {
        check_row(&self.schema, self.rows.len(), &row)?;
        self.rows.push(row);
        Ok(())
    }

    /// Removes the last row. The final row of a batch cannot be removed.
    pub fn pop_row(&mut self) -> Result<Vec<String>, WarehouseError> {
        if self.rows.len() <= 1 {
            return Err(WarehouseError::EmptyBatch(format!(
                "cannot remove the last row of batch {}",
                self.batch_id
            )));
        }
        Ok(self.rows.pop().expect("checked non-empty"))
    }

    /// Same data under a different batch identity.
    pub fn with_batch_id(&self, batch_id: impl Into<String>) -> Result<Self, WarehouseError> {
        BatchSubset::new(
            self.table_id.clone(),
            batch_id,
            self.timestamp,
            self.schema.clone(),
            self.rows.clone(),
        )
    }
}

fn validate_schema(schema: &[ColumnSpec]) -> Result<(), WarehouseError> {
    if schema.is_empty() {
        return Err(WarehouseError::Schema("schema has no columns".into()));
    }
    let mut seen = BTreeSet::new();
    for col in schema {
        if col.name.is_empty() {
            return Err(WarehouseError::Schema("empty column name".into()));
        }
        if col
            .name
            .chars()
            .any(|c| c == UNIT_SEPARATOR || c == RECORD_SEPARATOR || c == '\n')
        {
            return Err(WarehouseError::Schema(format!(
                "column name {:?} contains a reserved separator",
                col.name
            )));
        }
        if !seen.insert(col.name.as_str()) {
            return Err(WarehouseError::Schema(format!(
                "duplicate column name {:?}",
                col.name
            )));
        }
    }
    Ok(())
}

fn check_row(schema: &[ColumnSpec], index: usize, row: &[String]) -> Result<(), WarehouseError> {
    if row.len() != schema.len() {
        return Err(WarehouseError::InvalidBatch(format!(
            "row {index} has {} cells, schema has {} columns",
            row.len(),
            schema.len()
        )));
    }
    row.iter().try_for_each(|cell| check_cell(index, cell))
}

fn check_cell(row: usize, cell: &str) -> Result<(), WarehouseError> {
    if cell.contains([UNIT_SEPARATOR, RECORD_SEPARATOR]) {
        return Err(WarehouseError::InvalidBatch(format!(
            "row {row} has a cell containing a reserved separator byte"
        )));
    }
    Ok(())
}

/// Where a batch's timestamp comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimestampSource {
    /// A per-batch column holding a date (`YYYY-MM-DD`) or RFC 3339 value.
    /// The column is batch metadata and is excluded from the schema; every
    /// row of a batch must carry the same value.
    Column(String),
    Fixed(DateTime<Utc>),
    /// Wall clock, sampled once per ingestion call.
    IngestionTime,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub table_id: String,
    pub batch_column: String,
    pub gdpr_columns: BTreeSet<String>,
    pub timestamp: TimestampSource,
}

impl LoadOptions {
    pub fn new(table_id: impl Into<String>, batch_column: impl Into<String>) -> Self {
        LoadOptions {
            table_id: table_id.into(),
            batch_column: batch_column.into(),
            gdpr_columns: BTreeSet::new(),
            timestamp: TimestampSource::IngestionTime,
        }
    }

    pub fn gdpr<I, S>(mut self, columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.gdpr_columns = columns.into_iter().map(Into::into).collect();
        self
    }

    pub fn timestamp(mut self, source: TimestampSource) -> Self {
        self.timestamp = source;
        self
    }
}

/// Parses a date or date-time into UTC.
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.with_timezone(&Utc));
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.and_utc());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc());
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc())
}

/// Orders batch ids numerically when both are integers, lexically otherwise.
pub fn compare_batch_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u128>(), b.parse::<u128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

pub fn load_batches(
    path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Vec<BatchSubset>, WarehouseError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| WarehouseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_batches_from_reader(file, opts)
}

struct Parsed {
    headers: Vec<String>,
    records: Vec<(u64, Vec<String>)>,
}

fn parse_csv<R: Read>(reader: R) -> Result<Parsed, WarehouseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(WarehouseError::EmptyBatch("input has no header row".into()));
    }
    let mut records = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        records.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(Parsed { headers, records })
}

fn csv_error(err: csv::Error) -> WarehouseError {
    let line = err.position().map_or(0, |p| p.line());
    let message = match err.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => {
            format!("ragged row: expected {expected_len} fields, found {len}")
        }
        _ => err.to_string(),
    };
    WarehouseError::Ingestion { line, message }
}

/// Groups the rows of a CSV extract into batches sorted by batch id.
pub fn load_batches_from_reader<R: Read>(
    reader: R,
    opts: &LoadOptions,
) -> Result<Vec<BatchSubset>, WarehouseError> {
    let Parsed { headers, records } = parse_csv(reader)?;

    let find = |name: &str| headers.iter().position(|h| h == name);
    let batch_idx = find(&opts.batch_column).ok_or_else(|| {
        WarehouseError::Schema(format!(
            "batch column {:?} not in header",
            opts.batch_column
        ))
    })?;
    let ts_idx = match &opts.timestamp {
        TimestampSource::Column(name) => Some(find(name).ok_or_else(|| {
            WarehouseError::Schema(format!("timestamp column {name:?} not in header"))
        })?),
        _ => None,
    };
    if ts_idx == Some(batch_idx) {
        return Err(WarehouseError::Schema(
            "timestamp column must differ from the batch column".into(),
        ));
    }
    for gdpr in &opts.gdpr_columns {
        match find(gdpr) {
            Some(i) if i != batch_idx && Some(i) != ts_idx => {}
            _ => {
                return Err(WarehouseError::Schema(format!(
                    "GDPR column {gdpr:?} is not a data column"
                )))
            }
        }
    }
    let data_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != batch_idx && Some(i) != ts_idx)
        .collect();
    let schema: Vec<ColumnSpec> = data_cols
        .iter()
        .map(|&i| ColumnSpec::new(headers[i].clone(), opts.gdpr_columns.contains(&headers[i])))
        .collect();
    validate_schema(&schema)?;
    if records.is_empty() {
        return Err(WarehouseError::EmptyBatch(format!(
            "table {} has no data rows",
            opts.table_id
        )));
    }

    let fallback = match &opts.timestamp {
        TimestampSource::Fixed(t) => Some(*t),
        TimestampSource::IngestionTime => Some(Utc::now()),
        TimestampSource::Column(_) => None,
    };

    struct Group {
        timestamp: Option<(String, u64)>,
        rows: Vec<Vec<String>>,
    }
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for (line, record) in records {
        let batch_id = record[batch_idx].clone();
        if batch_id.is_empty() {
            return Err(WarehouseError::Ingestion {
                line,
                message: "empty batch id".into(),
            });
        }
        let row: Vec<String> = data_cols.iter().map(|&i| record[i].clone()).collect();
        if let Err(e) = check_row(&schema, 0, &row) {
            return Err(WarehouseError::Ingestion {
                line,
                message: e.to_string(),
            });
        }
        let group = groups.entry(batch_id.clone()).or_insert(Group {
            timestamp: None,
            rows: Vec::new(),
        });
        if let Some(i) = ts_idx {
            let value = &record[i];
            match &group.timestamp {
                None => group.timestamp = Some((value.clone(), line)),
                Some((first, first_line)) if first != value => {
                    return Err(WarehouseError::Ingestion {
                        line,
                        message: format!(
                            "batch {batch_id} timestamp {value:?} disagrees with {first:?} from line {first_line}"
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        group.rows.push(row);
    }

    let mut batches = Vec::with_capacity(groups.len());
    for (batch_id, group) in groups {
        let timestamp = match (fallback, group.timestamp) {
            (Some(t), _) => t,
            (None, Some((text, line))) => {
                parse_timestamp(&text).ok_or_else(|| WarehouseError::Ingestion {
                    line,
                    message: format!("unparseable timestamp {text:?}"),
                })?
            }
            (None, None) => unreachable!("every group has at least one row"),
        };
        batches.push(BatchSubset::new(
            opts.table_id.clone(),
            batch_id,
            timestamp,
            schema.clone(),
            group.rows,
        )?);
    }
    batches.sort_by(|a, b| compare_batch_ids(&a.batch_id, &b.batch_id));
    Ok(batches)
}

/// Blanks `columns` in every row of batch `batch_id`, copying the extract
/// from `input` to `output`. Returns the number of cells that changed.
///
/// This is the warehouse half of a GDPR cleanup; the ledger decides whether
/// the resulting batch may replace its anchored evidence.
pub fn erase_columns<R: Read, W: Write>(
    input: R,
    output: W,
    batch_column: &str,
    batch_id: &str,
    columns: &[String],
) -> Result<usize, WarehouseError> {
    let Parsed { headers, records } = parse_csv(input)?;
    let batch_idx = headers
        .iter()
        .position(|h| h == batch_column)
        .ok_or_else(|| {
            WarehouseError::Schema(format!("batch column {batch_column:?} not in header"))
        })?;
    let targets = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .filter(|&i| i != batch_idx)
                .ok_or_else(|| WarehouseError::Schema(format!("unknown column {c:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut matched = false;
    let mut changed = 0;
    let mut wtr = csv::Writer::from_writer(output);
    let io_err = |e: csv::Error| WarehouseError::Io {
        path: "<output>".into(),
        source: std::io::Error::other(e),
    };
    wtr.write_record(&headers).map_err(io_err)?;
    for (_, mut record) in records {
        if record[batch_idx] == batch_id {
            matched = true;
            for &i in &targets {
                if !record[i].is_empty() {
                    record[i].clear();
                    changed += 1;
                }
            }
        }
        wtr.write_record(&record).map_err(io_err)?;
    }
    wtr.flush().map_err(|source| WarehouseError::Io {
        path: "<output>".into(),
        source,
    })?;
    if !matched {
        return Err(WarehouseError::NotFound {
            table_id: String::new(),
            batch_id: batch_id.to_string(),
        });
    }
    Ok(changed)
}

/// In-memory batch lookup keyed by `(table_id, batch_id)`.
#[derive(Debug, Clone, Default)]
pub struct BatchRegistry {
    tables: BTreeMap<String, BTreeMap<String, BatchSubset>>,
}

impl BatchRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a batch, returning the previous value.
    pub fn insert(&mut self, batch: BatchSubset) -> Option<BatchSubset> {
        self.tables
            .entry(batch.table_id.clone())
            .or_default()
            .insert(batch.batch_id.clone(), batch)
    }

    pub fn extend(&mut self, batches: impl IntoIterator<Item = BatchSubset>) {
        for b in batches {
            self.insert(b);
        }
    }

    pub fn get(&self, table_id: &str, batch_id: &str) -> Result<&BatchSubset, WarehouseError> {
        self.tables
            .get(table_id)
            .and_then(|t| t.get(batch_id))
            .ok_or_else(|| WarehouseError::NotFound {
                table_id: table_id.to_string(),
                batch_id: batch_id.to_string(),
            })
    }

    pub fn get_mut(
        &mut self,
        table_id: &str,
        batch_id: &str,
    ) -> Result<&mut BatchSubset, WarehouseError> {
        self.tables
            .get_mut(table_id)
            .and_then(|t| t.get_mut(batch_id))
            .ok_or_else(|| WarehouseError::NotFound {
                table_id: table_id.to_string(),
                batch_id: batch_id.to_string(),
            })
    }

    /// Batch ids of a table in batch-id order.
    pub fn batch_ids(&self, table_id: &str) -> Vec<String> {
        let mut ids: Vec<String> = self
            .tables
            .get(table_id)
            .map(|t| t.keys().cloned().collect())
            .unwrap_or_default();
        ids.sort_by(|a, b| compare_batch_ids(a, b));
        ids
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rows_partition_exactly(rows in prop::collection::vec((0u8..5, "[a-z]{0,3}", "[a-z ,]{0,4}"), 1..40)) {
            let mut csv = String::from("batch,a,b\n");
            let mut wtr = csv::Writer::from_writer(Vec::new());
            for (batch, a, b) in &rows {
                wtr.write_record([batch.to_string(), a.clone(), b.clone()]).unwrap();
            }
            csv.push_str(&String::from_utf8(wtr.into_inner().unwrap()).unwrap());
            let opts = LoadOptions::new("t", "batch")
                .timestamp(TimestampSource::Fixed(DateTime::from_timestamp(0, 0).unwrap()));
            let batches = load_batches_from_reader(csv.as_bytes(), &opts).unwrap();

            let mut expected: Vec<(String, Vec<String>)> = rows
                .iter()
                .map(|(batch, a, b)| (batch.to_string(), vec![a.clone(), b.clone()]))
                .collect();
            expected.sort_by(|x, y| compare_batch_ids(&x.0, &y.0));
            let actual: Vec<(String, Vec<String>)> = batches
                .iter()
                .flat_map(|b| b.rows().iter().map(move |r| (b.batch_id().to_string(), r.clone())))
                .collect();
            // Stable sort keeps source order within each batch.
            prop_assert_eq!(actual, expected);
            prop_assert_eq!(load_batches_from_reader(csv.as_bytes(), &opts).unwrap(), batches);
        }
    }
}
