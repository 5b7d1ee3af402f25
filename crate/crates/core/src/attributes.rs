//! Identification attributes, verification attributes and verification
//! records.
//!
//! # Canonical hashing frame
//!
//! Every digest here is SHA-256 over the same framing of a (possibly
//! column-restricted) grid of cells:
//!
//! ```text
//! <row count> 0x1F <col 1> 0x1F ... <col n> 0x1E
//! <cell 1,1> 0x1F ... <cell 1,n> 0x1E
//! ...
//! ```
//!
//! The subset hash frames every column, a column hash frames that single
//! column, and a row hash frames a one-row grid over all columns. Cells and
//! column names never contain the separator bytes, so the framing is
//! unambiguous.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::{Digest, Hasher};
use crate::warehouse::BatchSubset;

const US: &[u8] = &[0x1F];
const RS: &[u8] = &[0x1E];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AttributeError {
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("attributes are not comparable: {0}")]
    Incomparable(String),
    #[error("malformed verification attribute: {0}")]
    Malformed(String),
}

/// How much of a batch the verification attribute captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Traceability {
    /// Column hashes.
    Columns = 1,
    /// Column and row hashes.
    Rows = 2,
    /// The full cell grid.
    Full = 3,
}

impl Traceability {
    pub const ALL: [Traceability; 3] = [Self::Columns, Self::Rows, Self::Full];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(Self::Columns),
            2 => Some(Self::Rows),
            3 => Some(Self::Full),
            _ => None,
        }
    }
}

impl fmt::Display for Traceability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level())
    }
}

impl std::str::FromStr for Traceability {
    type Err = AttributeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<u8>()
            .ok()
            .and_then(Self::from_level)
            .ok_or_else(|| AttributeError::Malformed(format!("traceability {s:?}")))
    }
}

// Serialized as the string "1" / "2" / "3" to match the record layout.
impl Serialize for Traceability {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Traceability {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(u8),
        }
        let level = match Raw::deserialize(deserializer)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom)?,
            Raw::Number(n) => Traceability::from_level(n)
                .ok_or_else(|| serde::de::Error::custom(format!("traceability {n}")))?,
        };
        Ok(level)
    }
}

/// Public keyword set locating a batch's evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationAttribute {
    #[serde(rename = "Org")]
    pub organization: String,
    #[serde(rename = "TableId")]
    pub table_id: String,
    #[serde(rename = "BatchId")]
    pub batch_id: String,
    #[serde(rename = "Timestamp")]
    pub timestamp: String,
}

/// Hash bundle proving a batch's content at one traceability level.
///
/// Field presence depends on the level: `colHash` at levels 1 and 2,
/// `rowHash` at level 2, `data` at level 3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationAttribute {
    pub h_v: Digest,
    pub traceability: Traceability,
    pub cols: Vec<String>,
    pub rows: usize,
    pub gdpr: Vec<String>,
    #[serde(rename = "gdprHash")]
    pub gdpr_hash: Digest,
    #[serde(rename = "colHash", default, skip_serializing_if = "Option::is_none")]
    pub col_hash: Option<BTreeMap<String, Digest>>,
    #[serde(rename = "rowHash", default, skip_serializing_if = "Option::is_none")]
    pub row_hash: Option<Vec<Digest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<Vec<String>>>,
}

impl VerificationAttribute {
    /// Checks the level's field set and the internal length invariants.
    pub fn validate(&self) -> Result<(), AttributeError> {
        let bad = |m: String| Err(AttributeError::Malformed(m));
        let level = self.traceability;
        let want_cols = level != Traceability::Full;
        if self.col_hash.is_some() != want_cols {
            return bad(format!("colHash presence wrong for level {level}"));
        }
        if self.row_hash.is_some() != (level == Traceability::Rows) {
            return bad(format!("rowHash presence wrong for level {level}"));
        }
        if self.data.is_some() != (level == Traceability::Full) {
            return bad(format!("data presence wrong for level {level}"));
        }
        let names: BTreeSet<&str> = self.cols.iter().map(String::as_str).collect();
        if names.len() != self.cols.len() {
            return bad("duplicate column names".into());
        }
        if let Some(g) = self.gdpr.iter().find(|g| !names.contains(g.as_str())) {
            return bad(format!("gdpr column {g:?} not in cols"));
        }
        if let Some(ch) = &self.col_hash {
            if ch.len() != self.cols.len() || ch.keys().any(|k| !names.contains(k.as_str())) {
                return bad("colHash keys differ from cols".into());
            }
        }
        if let Some(rh) = &self.row_hash {
            if rh.len() != self.rows {
                return bad(format!("{} row hashes for {} rows", rh.len(), self.rows));
            }
        }
        if let Some(data) = &self.data {
            if data.len() != self.rows || data.iter().any(|r| r.len() != self.cols.len()) {
                return bad("data grid shape differs from rows x cols".into());
            }
        }
        Ok(())
    }

    /// Per-column digests, computed from the embedded grid at level 3.
    pub fn column_digests(&self) -> BTreeMap<String, Digest> {
        if let Some(ch) = &self.col_hash {
            return ch.clone();
        }
        let data = self.data.as_deref().unwrap_or_default();
        self.cols
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let digest = frame_digest(
                    std::iter::once(name.as_str()),
                    data.len(),
                    data.iter().map(|row| std::iter::once(row[j].as_str())),
                );
                (name.clone(), digest)
            })
            .collect()
    }

    pub fn is_gdpr(&self, column: &str) -> bool {
        self.gdpr.iter().any(|g| g == column)
    }
}

/// Identification plus verification attributes, the off-chain artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    #[serde(rename = "identification")]
    pub id: IdentificationAttribute,
    #[serde(rename = "verification")]
    pub v: VerificationAttribute,
    pub description: String,
}

impl VerificationRecord {
    /// Key-sorted, whitespace-free JSON.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("record serializes to JSON");
        serde_json::to_vec(&value).expect("JSON value serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AttributeError> {
        let record: VerificationRecord =
            serde_json::from_slice(bytes).map_err(|e| AttributeError::Malformed(e.to_string()))?;
        record.v.validate()?;
        Ok(record)
    }

    /// Columns the description declares mutable.
    pub fn mutable_columns(&self) -> &[String] {
        &self.v.gdpr
    }
}

fn frame_digest<'a, H, R, C>(header: H, row_count: usize, rows: R) -> Digest
where
    H: IntoIterator<Item = &'a str>,
    R: IntoIterator<Item = C>,
    C: IntoIterator<Item = &'a str>,
{
    let mut h = Hasher::new();
    h.update(row_count.to_string().as_bytes());
    for name in header {
        h.update(US);
        h.update(name.as_bytes());
    }
    h.update(RS);
    for row in rows {
        for (i, cell) in row.into_iter().enumerate() {
            if i > 0 {
                h.update(US);
            }
            h.update(cell.as_bytes());
        }
        h.update(RS);
    }
    h.finish()
}

fn digest_columns(batch: &BatchSubset, cols: &[usize]) -> Digest {
    let schema = batch.schema();
    frame_digest(
        cols.iter().map(|&j| schema[j].name.as_str()),
        batch.row_count(),
        batch
            .rows()
            .iter()
            .map(|row| cols.iter().map(move |&j| row[j].as_str())),
    )
}

pub fn id_att_gen(batch: &BatchSubset, organization: &str) -> IdentificationAttribute {
    IdentificationAttribute {
        organization: organization.to_string(),
        table_id: batch.table_id().to_string(),
        batch_id: batch.batch_id().to_string(),
        timestamp: batch.timestamp_text(),
    }
}

/// SHA-256 over the batch restricted to the non-excluded columns.
pub fn subset_hash<S: AsRef<str>>(
    batch: &BatchSubset,
    exclude: &[S],
) -> Result<Digest, AttributeError> {
    for name in exclude {
        if batch.column_index(name.as_ref()).is_none() {
            return Err(AttributeError::UnknownColumn(name.as_ref().to_string()));
        }
    }
    let kept: Vec<usize> = batch
        .schema()
        .iter()
        .enumerate()
        .filter(|(_, c)| !exclude.iter().any(|e| e.as_ref() == c.name))
        .map(|(j, _)| j)
        .collect();
    if kept.is_empty() {
        return Err(AttributeError::Degenerate(
            "every column is excluded from the subset hash".into(),
        ));
    }
    Ok(digest_columns(batch, &kept))
}

/// Like [`subset_hash`] excluding `gdpr`, but an all-GDPR schema is allowed:
/// the frame then commits to the row count alone.
fn gdpr_exempt_hash(batch: &BatchSubset, gdpr: &[String]) -> Result<Digest, AttributeError> {
    let mut kept = Vec::new();
    for (j, c) in batch.schema().iter().enumerate() {
        if !gdpr.contains(&c.name) {
            kept.push(j);
        }
    }
    if let Some(g) = gdpr.iter().find(|g| batch.column_index(g).is_none()) {
        return Err(AttributeError::UnknownColumn(g.clone()));
    }
    Ok(digest_columns(batch, &kept))
}

pub fn column_hash(batch: &BatchSubset, column: &str) -> Result<Digest, AttributeError> {
    let j = batch
        .column_index(column)
        .ok_or_else(|| AttributeError::UnknownColumn(column.to_string()))?;
    Ok(digest_columns(batch, &[j]))
}

pub fn row_hash(batch: &BatchSubset, row_index: usize) -> Result<Digest, AttributeError> {
    let row = batch
        .rows()
        .get(row_index)
        .ok_or(AttributeError::RowOutOfRange {
            index: row_index,
            rows: batch.row_count(),
        })?;
    Ok(frame_digest(
        batch.column_names(),
        1,
        std::iter::once(row.iter().map(String::as_str)),
    ))
}

/// Builds the verification attribute at `level`, using the batch's own
/// GDPR flags.
pub fn vrfc_att_gen(
    batch: &BatchSubset,
    level: Traceability,
) -> Result<VerificationAttribute, AttributeError> {
    let gdpr: Vec<String> = batch.gdpr_columns().map(str::to_string).collect();
    build_attribute(batch, level, gdpr)
}

/// Rebuilds attributes from `batch` with the level and GDPR column set of
/// `reference`, so a live batch is always compared like-for-like with its
/// anchored record.
pub fn regenerate(
    batch: &BatchSubset,
    reference: &VerificationAttribute,
) -> Result<VerificationAttribute, AttributeError> {
    build_attribute(batch, reference.traceability, reference.gdpr.clone())
}

fn build_attribute(
    batch: &BatchSubset,
    level: Traceability,
    gdpr: Vec<String>,
) -> Result<VerificationAttribute, AttributeError> {
    let cols: Vec<String> = batch.column_names().map(str::to_string).collect();
    let h_v = subset_hash::<&str>(batch, &[])?;
    let gdpr_hash = gdpr_exempt_hash(batch, &gdpr)?;
    let col_hash = (level != Traceability::Full).then(|| {
        (0..cols.len())
            .map(|j| (cols[j].clone(), digest_columns(batch, &[j])))
            .collect()
    });
    let row_hash = (level == Traceability::Rows).then(|| {
        (0..batch.row_count())
            .map(|i| row_hash(batch, i).expect("index in range"))
            .collect()
    });
    let data = (level == Traceability::Full).then(|| batch.rows().to_vec());
    Ok(VerificationAttribute {
        h_v,
        traceability: level,
        cols,
        rows: batch.row_count(),
        gdpr,
        gdpr_hash,
        col_hash,
        row_hash,
        data,
    })
}

fn describe(v: &VerificationAttribute) -> String {
    let fields = match v.traceability {
        Traceability::Columns => "h_v, cols, rows, gdpr, gdprHash, colHash",
        Traceability::Rows => "h_v, cols, rows, gdpr, gdprHash, colHash, rowHash",
        Traceability::Full => "h_v, cols, rows, gdpr, gdprHash, data",
    };
    let mutable = if v.gdpr.is_empty() {
        "none".to_string()
    } else {
        v.gdpr.join(", ")
    };
    format!(
        "traceability {}; attributes: {fields}; mutable GDPR columns: {mutable}; \
         all other columns are immutable and must keep their hashes",
        v.traceability
    )
}

pub fn rec_gen(id: IdentificationAttribute, v: VerificationAttribute) -> VerificationRecord {
    let description = describe(&v);
    VerificationRecord { id, v, description }
}

/// A cell that differs between the live batch and the reference record.
/// `None` marks a cell that exists on one side only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellChange {
    pub row: usize,
    pub column: String,
    pub old: Option<String>,
    pub new: Option<String>,
}

/// Differences between two verification attributes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDiff {
    pub h_v_changed: bool,
    pub gdpr_hash_changed: bool,
    /// Schema order.
    pub changed_columns: Vec<String>,
    /// Ascending. Populated at levels 2 and 3.
    pub changed_rows: Vec<usize>,
    /// Row-major. Populated at level 3.
    pub changed_cells: Vec<CellChange>,
    /// `current.rows - reference.rows`.
    pub row_count_delta: i64,
}

impl AttributeDiff {
    pub fn is_empty(&self) -> bool {
        !self.h_v_changed
            && !self.gdpr_hash_changed
            && self.changed_columns.is_empty()
            && self.changed_rows.is_empty()
            && self.changed_cells.is_empty()
            && self.row_count_delta == 0
    }
}

pub fn diff_attributes(
    current: &VerificationAttribute,
    reference: &VerificationAttribute,
) -> Result<AttributeDiff, AttributeError> {
    if current.traceability != reference.traceability {
        return Err(AttributeError::Incomparable(format!(
            "traceability {} vs {}",
            current.traceability, reference.traceability
        )));
    }
    if current.cols != reference.cols {
        return Err(AttributeError::Incomparable("column sets differ".into()));
    }
    if current.gdpr != reference.gdpr {
        return Err(AttributeError::Incomparable(
            "GDPR column sets differ".into(),
        ));
    }
    current.validate()?;
    reference.validate()?;

    let mut diff = AttributeDiff {
        h_v_changed: current.h_v != reference.h_v,
        gdpr_hash_changed: current.gdpr_hash != reference.gdpr_hash,
        row_count_delta: current.rows as i64 - reference.rows as i64,
        ..AttributeDiff::default()
    };

    match (&current.data, &reference.data) {
        (Some(cur), Some(old)) => {
            let mut cols_changed = vec![false; current.cols.len()];
            for i in 0..cur.len().max(old.len()) {
                let mut row_changed = false;
                for (j, name) in current.cols.iter().enumerate() {
                    let new_cell = cur.get(i).map(|r| &r[j]);
                    let old_cell = old.get(i).map(|r| &r[j]);
                    if new_cell != old_cell {
                        row_changed = true;
                        cols_changed[j] = true;
                        diff.changed_cells.push(CellChange {
                            row: i,
                            column: name.clone(),
                            old: old_cell.cloned(),
                            new: new_cell.cloned(),
                        });
                    }
                }
                if row_changed {
                    diff.changed_rows.push(i);
                }
            }
            diff.changed_columns = current
                .cols
                .iter()
                .zip(cols_changed)
                .filter(|(_, c)| *c)
                .map(|(n, _)| n.clone())
                .collect();
        }
        _ => {
            let cur = current.col_hash.as_ref().expect("validated");
            let old = reference.col_hash.as_ref().expect("validated");
            diff.changed_columns = current
                .cols
                .iter()
                .filter(|c| cur.get(*c) != old.get(*c))
                .cloned()
                .collect();
            if let (Some(cur), Some(old)) = (&current.row_hash, &reference.row_hash) {
                diff.changed_rows = (0..cur.len().max(old.len()))
                    .filter(|&i| cur.get(i) != old.get(i))
                    .collect();
            }
        }
    }
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warehouse::ColumnSpec;
    use chrono::DateTime;

    fn batch(cols: &[(&str, bool)], rows: &[&[&str]]) -> BatchSubset {
        BatchSubset::new(
            "T",
            "1",
            DateTime::from_timestamp(1_512_777_600, 0).unwrap(),
            cols.iter().map(|(n, g)| ColumnSpec::new(*n, *g)).collect(),
            rows.iter()
                .map(|r| r.iter().map(|c| c.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn two_by_two() -> BatchSubset {
        batch(&[("x", false), ("y", true)], &[&["a", "b"], &["c", "d"]])
    }

    // Expected digests below were computed with Python's hashlib over
    // hand-built framed bytes, e.g. b"1\x1fc\x1ea\x1e" for the 1x1 batch.
    #[test]
    fn subset_hash_matches_external_oracle() {
        let b = batch(&[("c", false)], &[&["a"]]);
        assert_eq!(
            subset_hash::<&str>(&b, &[]).unwrap().to_hex(),
            "7e172215f80d088ddb8d23277777b513c99235e447b3c38f68c062c0d72b5781"
        );
        let b = two_by_two();
        assert_eq!(
            subset_hash::<&str>(&b, &[]).unwrap().to_hex(),
            "a2965b5470044422dffa61bcbff4d944784121d16b8857e1284cf7a3773d0893"
        );
        assert_eq!(
            column_hash(&b, "x").unwrap().to_hex(),
            "5eb519b7f2bd5e010e7cc4441f22e9c2e1e906cc841424c6505ef8aef12846fd"
        );
        assert_eq!(
            row_hash(&b, 0).unwrap().to_hex(),
            "6a0c8610d60e7a5b4aaf24d36fbd8df99f7d5a0234c8c54d284351bb98297506"
        );
        assert_eq!(
            subset_hash(&b, &["y"]).unwrap(),
            column_hash(&b, "x").unwrap()
        );
    }

    #[test]
    fn framing_separates_cell_boundaries() {
        let ab_c = batch(&[("x", false), ("y", false)], &[&["ab", "c"]]);
        let a_bc = batch(&[("x", false), ("y", false)], &[&["a", "bc"]]);
        let h1 = subset_hash::<&str>(&ab_c, &[]).unwrap();
        let h2 = subset_hash::<&str>(&a_bc, &[]).unwrap();
        assert_eq!(
            h1.to_hex(),
            "3a79471ee4cb37288c90e3c464f33d3f824cbf559c3b2510e4d9aae105d64d11"
        );
        assert_eq!(
            h2.to_hex(),
            "976bf1b9276566515c87de4b2d258dd31d7f2afc598aae7df6fc1ae92e2f75d6"
        );
    }

    #[test]
    fn row_order_is_part_of_identity() {
        let b = two_by_two();
        let swapped = batch(&[("x", false), ("y", true)], &[&["c", "d"], &["a", "b"]]);
        let orders = [
            subset_hash::<&str>(&b, &[]).unwrap(),
            subset_hash::<&str>(&swapped, &[]).unwrap(),
        ];
        assert_ne!(orders[0], orders[1]);
        assert_eq!(
            orders[1].to_hex(),
            "36e714f4e8d3b57cd60c13552cce325d6c5a07c49016545b5e516d7ac51dfc18"
        );
    }

    #[test]
    fn excluded_column_cannot_affect_hash() {
        let mut b = two_by_two();
        let before = subset_hash(&b, &["y"]).unwrap();
        b.set_cell(1, 1, "zzz").unwrap();
        assert_eq!(subset_hash(&b, &["y"]).unwrap(), before);
        b.set_cell(0, 0, "zzz").unwrap();
        assert_ne!(subset_hash(&b, &["y"]).unwrap(), before);
    }

    #[test]
    fn subset_hash_errors() {
        let b = two_by_two();
        assert!(matches!(
            subset_hash(&b, &["x", "y"]),
            Err(AttributeError::Degenerate(_))
        ));
        assert_eq!(
            subset_hash(&b, &["q"]),
            Err(AttributeError::UnknownColumn("q".into()))
        );
        assert_eq!(
            column_hash(&b, "q"),
            Err(AttributeError::UnknownColumn("q".into()))
        );
        assert_eq!(
            row_hash(&b, 2),
            Err(AttributeError::RowOutOfRange { index: 2, rows: 2 })
        );
    }

    #[test]
    fn empty_column_digest_depends_only_on_length() {
        let a = batch(&[("x", false), ("e", false)], &[&["1", ""], &["2", ""]]);
        let b = batch(&[("x", false), ("e", false)], &[&["7", ""], &["8", ""]]);
        let c = batch(&[("x", false), ("e", false)], &[&["7", ""]]);
        assert_eq!(column_hash(&a, "e").unwrap(), column_hash(&b, "e").unwrap());
        assert_ne!(column_hash(&a, "e").unwrap(), column_hash(&c, "e").unwrap());
    }

    #[test]
    fn single_cell_sensitivity_3x3() {
        let base = batch(
            &[("a", false), ("b", false), ("c", false)],
            &[&["1", "2", "3"], &["4", "5", "6"], &["7", "8", "9"]],
        );
        let cols = ["a", "b", "c"];
        for i in 0..3 {
            for j in 0..3 {
                let mut m = base.clone();
                m.set_cell(i, j, "X").unwrap();
                for (k, col) in cols.iter().enumerate() {
                    let same = column_hash(&m, col).unwrap() == column_hash(&base, col).unwrap();
                    assert_eq!(same, k != j, "cell ({i},{j}) column {col}");
                }
            }
        }
    }

    #[test]
    fn single_cell_hits_row_and_column_2x2() {
        let base = two_by_two();
        for i in 0..2 {
            for j in 0..2 {
                let mut m = base.clone();
                m.set_cell(i, j, "X").unwrap();
                for r in 0..2 {
                    assert_eq!(
                        row_hash(&m, r).unwrap() != row_hash(&base, r).unwrap(),
                        r == i
                    );
                }
                for (k, c) in ["x", "y"].iter().enumerate() {
                    assert_eq!(
                        column_hash(&m, c).unwrap() != column_hash(&base, c).unwrap(),
                        k == j
                    );
                }
            }
        }
    }

    #[test]
    fn identical_rows_identical_hashes_and_prefix_stability() {
        let mut b = batch(&[("x", false)], &[&["a"], &["a"], &["b"]]);
        assert_eq!(row_hash(&b, 0).unwrap(), row_hash(&b, 1).unwrap());
        let before: Vec<_> = (0..2).map(|i| row_hash(&b, i).unwrap()).collect();
        b.pop_row().unwrap();
        let after: Vec<_> = (0..2).map(|i| row_hash(&b, i).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn level_field_sets() {
        let b = two_by_two();
        let l1 = vrfc_att_gen(&b, Traceability::Columns).unwrap();
        assert!(l1.col_hash.is_some() && l1.row_hash.is_none() && l1.data.is_none());
        let l2 = vrfc_att_gen(&b, Traceability::Rows).unwrap();
        assert!(l2.col_hash.is_some() && l2.row_hash.as_ref().unwrap().len() == 2);
        let l3 = vrfc_att_gen(&b, Traceability::Full).unwrap();
        assert!(l3.col_hash.is_none() && l3.row_hash.is_none() && l3.data.is_some());
        for v in [&l1, &l2, &l3] {
            v.validate().unwrap();
            assert_eq!(v.h_v, subset_hash::<&str>(&b, &[]).unwrap());
            assert_eq!(v.gdpr_hash, subset_hash(&b, &["y"]).unwrap());
            assert_eq!(v.gdpr, ["y"]);
        }
        assert_eq!(l3.column_digests(), l1.col_hash.clone().unwrap());
    }

    #[test]
    fn json_layout_uses_record_field_names() {
        let v = vrfc_att_gen(&two_by_two(), Traceability::Rows).unwrap();
        let json: serde_json::Value = serde_json::to_value(&v).unwrap();
        let keys: BTreeSet<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(
            keys,
            [
                "cols",
                "colHash",
                "gdpr",
                "gdprHash",
                "h_v",
                "rowHash",
                "rows",
                "traceability"
            ]
            .into_iter()
            .collect()
        );
        assert_eq!(json["traceability"], "2");
    }

    #[test]
    fn record_canonical_round_trip() {
        let b = two_by_two();
        let make = || {
            rec_gen(
                id_att_gen(&b, "Electron"),
                vrfc_att_gen(&b, Traceability::Columns).unwrap(),
            )
        };
        let r = make();
        let bytes = r.canonical_bytes();
        assert_eq!(bytes, make().canonical_bytes());
        let reparsed: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(serde_json::to_vec(&reparsed).unwrap(), bytes);
        assert!(!bytes.contains(&b'\n'));
        assert_eq!(VerificationRecord::from_bytes(&bytes).unwrap(), r);
    }

    #[test]
    fn description_names_gdpr_columns() {
        let b = batch(
            &[("length", false), ("EndPoint", true)],
            &[&["3", "Main 1"]],
        );
        let r = rec_gen(
            id_att_gen(&b, "Electron"),
            vrfc_att_gen(&b, Traceability::Columns).unwrap(),
        );
        assert!(r.description.contains("EndPoint"));
        assert!(r.description.contains("mutable GDPR columns: EndPoint"));
    }

    #[test]
    fn id_attribute_is_projection() {
        let b = two_by_two();
        let id = id_att_gen(&b, "Electron");
        assert_eq!(id, id_att_gen(&b, "Electron"));
        let other = id_att_gen(&b.with_batch_id("2").unwrap(), "Electron");
        assert_eq!(
            IdentificationAttribute {
                batch_id: "1".into(),
                ..other
            },
            id
        );
        assert!(!serde_json::to_string(&id).unwrap().contains("\"a\""));
    }

    #[test]
    fn diff_reflexive_and_incomparable() {
        let b = two_by_two();
        for level in Traceability::ALL {
            let v = vrfc_att_gen(&b, level).unwrap();
            assert!(diff_attributes(&v, &v).unwrap().is_empty());
        }
        let v1 = vrfc_att_gen(&b, Traceability::Columns).unwrap();
        let v2 = vrfc_att_gen(&b, Traceability::Rows).unwrap();
        assert!(matches!(
            diff_attributes(&v1, &v2),
            Err(AttributeError::Incomparable(_))
        ));
        let other = batch(&[("x", false), ("z", true)], &[&["a", "b"]]);
        let v3 = vrfc_att_gen(&other, Traceability::Columns).unwrap();
        assert!(matches!(
            diff_attributes(&v1, &v3),
            Err(AttributeError::Incomparable(_))
        ));
    }

    #[test]
    fn level3_pinpoints_every_single_cell_edit_3x2() {
        let base = batch(
            &[("p", false), ("q", false)],
            &[&["1", "2"], &["3", "4"], &["5", "6"]],
        );
        let reference = vrfc_att_gen(&base, Traceability::Full).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut m = base.clone();
                let old = m.set_cell(i, j, "edited").unwrap();
                let d = diff_attributes(&vrfc_att_gen(&m, Traceability::Full).unwrap(), &reference)
                    .unwrap();
                assert_eq!(
                    d.changed_cells,
                    vec![CellChange {
                        row: i,
                        column: ["p", "q"][j].into(),
                        old: Some(old),
                        new: Some("edited".into()),
                    }]
                );
                assert_eq!(d.changed_rows, vec![i]);
                assert_eq!(d.changed_columns, vec![["p", "q"][j].to_string()]);
            }
        }
    }

    #[test]
    fn appended_rows_change_every_column() {
        let base = two_by_two();
        let mut dup = base.clone();
        for row in base.rows().to_vec() {
            dup.push_row(row).unwrap();
        }
        for level in Traceability::ALL {
            let d = diff_attributes(
                &vrfc_att_gen(&dup, level).unwrap(),
                &vrfc_att_gen(&base, level).unwrap(),
            )
            .unwrap();
            assert_eq!(d.changed_columns, ["x", "y"]);
            assert_eq!(d.row_count_delta, 2);
            if level != Traceability::Columns {
                assert_eq!(d.changed_rows, [2, 3]);
            }
        }
    }

    #[test]
    fn malformed_attributes_rejected() {
        let mut v = vrfc_att_gen(&two_by_two(), Traceability::Columns).unwrap();
        v.row_hash = Some(vec![]);
        assert!(v.validate().is_err());
        let mut v = vrfc_att_gen(&two_by_two(), Traceability::Rows).unwrap();
        v.row_hash.as_mut().unwrap().pop();
        assert!(v.validate().is_err());
        assert!(VerificationRecord::from_bytes(b"{}").is_err());
    }
}
