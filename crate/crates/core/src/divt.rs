//! Upload, two-tier verification, audits and GDPR updates.
//!
//! [`Divt`] ties the pieces together: attributes are generated from a batch,
//! the record is encrypted and put into the content store, and the evidence
//! plus key material are committed in a single ledger transaction. Verify I
//! compares subset hashes only; Verify II decrypts the anchored record and
//! diffs it against attributes regenerated from the live batch.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attributes::{
    diff_attributes, id_att_gen, rec_gen, regenerate, subset_hash, vrfc_att_gen, CellChange,
    Traceability, VerificationRecord,
};
use crate::cas::{CasError, ContentStore, LocationHash};
use crate::crypto::{self, CipherEnvelope};
use crate::digest::Digest;
use crate::ledger::{
    evidence_key, CertResult, Certificate, ContractError, Evidence, Identity, Ledger, LedgerError,
    Receipt, UpdateRequest, PRIVATE_COLLECTION,
};
use crate::warehouse::{BatchRegistry, BatchSubset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Attributes,
    KeyGen,
    Store,
    Ledger,
    Decrypt,
    Certificate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Attributes => "attributes",
            Stage::KeyGen => "keygen",
            Stage::Store => "store",
            Stage::Ledger => "ledger",
            Stage::Decrypt => "decrypt",
            Stage::Certificate => "certificate",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DivtError {
    #[error("the batch already exists (evidence {evidence_key})")]
    Duplicate { evidence_key: String },
    #[error("no evidence for {table_id}/{batch_id}")]
    MissingEvidence { table_id: String, batch_id: String },
    #[error("{0}")]
    Access(ContractError),
    #[error("update rejected: {reason}{}", fmt_columns(.columns))]
    Rejected {
        reason: String,
        columns: Vec<String>,
    },
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error(transparent)]
    Warehouse(#[from] crate::warehouse::WarehouseError),
}

fn fmt_columns(columns: &[String]) -> String {
    if columns.is_empty() {
        String::new()
    } else {
        format!(" (columns: {})", columns.join(", "))
    }
}

impl DivtError {
    /// Short machine-readable class.
    pub fn class(&self) -> &'static str {
        match self {
            DivtError::Duplicate { .. } => "duplicate",
            DivtError::MissingEvidence { .. } => "missing-evidence",
            DivtError::Access(_) => "access",
            DivtError::Rejected { .. } => "update-rejected",
            DivtError::Stage { .. } => "stage",
            DivtError::Warehouse(_) => "warehouse",
        }
    }

    fn stage(stage: Stage, e: impl fmt::Display) -> Self {
        DivtError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    fn from_ledger(stage: Stage, e: LedgerError) -> Self {
        match e {
            LedgerError::Contract(ContractError::Duplicate { key }) => {
                DivtError::Duplicate { evidence_key: key }
            }
            LedgerError::Contract(ContractError::UpdateRejected { reason, columns }) => {
                DivtError::Rejected { reason, columns }
            }
            LedgerError::Contract(
                c @ (ContractError::Unauthorized(_) | ContractError::AccessDenied { .. }),
            ) => DivtError::Access(c),
            other => DivtError::stage(stage, other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Authentic,
    Tampered,
    MissingEvidence,
    /// The off-chain record is missing, corrupt or does not match its anchor.
    RecordCompromised,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperReport {
    pub table_id: String,
    pub batch_id: String,
    pub evidence_key: String,
    pub verdict: Verdict,
    pub changed_columns: Vec<String>,
    pub changed_rows: Vec<usize>,
    pub changed_cells: Vec<CellChange>,
    pub row_count_delta: i64,
    pub notes: String,
}

impl TamperReport {
    fn new(
        batch: &BatchSubset,
        evidence_key: &str,
        verdict: Verdict,
        notes: impl Into<String>,
    ) -> Self {
        TamperReport {
            table_id: batch.table_id().to_string(),
            batch_id: batch.batch_id().to_string(),
            evidence_key: evidence_key.to_string(),
            verdict,
            changed_columns: vec![],
            changed_rows: vec![],
            changed_cells: vec![],
            row_count_delta: 0,
            notes: notes.into(),
        }
    }

    /// One-line summary, used as certificate detail.
    pub fn summary(&self) -> String {
        let mut parts = vec![format!("{}", self.verdict)];
        if !self.changed_columns.is_empty() {
            parts.push(format!("columns: {}", self.changed_columns.join(",")));
        }
        if !self.changed_rows.is_empty() {
            let rows: Vec<String> = self.changed_rows.iter().map(usize::to_string).collect();
            parts.push(format!("rows: {}", rows.join(",")));
        }
        if !self.changed_cells.is_empty() {
            parts.push(format!("cells: {}", self.changed_cells.len()));
        }
        if self.row_count_delta != 0 {
            parts.push(format!("row delta: {:+}", self.row_count_delta));
        }
        if !self.notes.is_empty() {
            parts.push(self.notes.clone());
        }
        parts.join("; ")
    }
}

impl fmt::Display for TamperReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}: {}", self.table_id, self.batch_id, self.summary())
    }
}

/// Wall time of each upload stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UploadTimings {
    pub identification: Duration,
    pub attributes: Duration,
    pub encrypt: Duration,
    pub store: Duration,
    pub ledger: Duration,
}

impl UploadTimings {
    pub fn total(&self) -> Duration {
        self.identification + self.attributes + self.encrypt + self.store + self.ledger
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Uploaded {
    pub evidence_key: String,
    pub h_v: Digest,
    pub h_l: LocationHash,
    pub height: u64,
    pub timings: UploadTimings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verify1 {
    pub evidence_key: String,
    pub verdict: Verdict,
    /// Recomputed from the live batch.
    pub h_v: Digest,
    /// Anchored on the ledger.
    pub h_v_anchored: Option<Digest>,
}

impl Verify1 {
    pub fn matched(&self) -> bool {
        self.verdict == Verdict::Authentic
    }
}

#[derive(Debug, Serialize)]
pub struct AuditEntry {
    pub batch_id: String,
    /// True when the deep comparison ran.
    pub escalated: bool,
    #[serde(serialize_with = "ser_outcome")]
    pub outcome: Result<TamperReport, DivtError>,
}

fn ser_outcome<S: serde::Serializer>(
    outcome: &Result<TamperReport, DivtError>,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(1))?;
    match outcome {
        Ok(r) => m.serialize_entry("report", r)?,
        Err(e) => m.serialize_entry("error", &format!("{}: {e}", e.class()))?,
    }
    m.end()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GdprUpdate {
    pub evidence_key: String,
    pub old_h_v: Digest,
    pub new_h_v: Digest,
    pub new_h_l: LocationHash,
    pub height: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub verify1: u64,
    pub verify2: u64,
    pub decrypt: u64,
}

#[derive(Default)]
struct AtomicCounters {
    verify1: AtomicU64,
    verify2: AtomicU64,
    decrypt: AtomicU64,
}

pub struct Divt {
    ledger: Arc<Ledger>,
    store: Arc<dyn ContentStore>,
    counters: AtomicCounters,
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot += t.elapsed();
    out
}

impl Divt {
    pub fn new(ledger: Arc<Ledger>, store: Arc<dyn ContentStore>) -> Self {
        Divt {
            ledger,
            store,
            counters: AtomicCounters::default(),
        }
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn store(&self) -> &Arc<dyn ContentStore> {
        &self.store
    }

    pub fn counters(&self) -> Counters {
        Counters {
            verify1: self.counters.verify1.load(Ordering::Relaxed),
            verify2: self.counters.verify2.load(Ordering::Relaxed),
            decrypt: self.counters.decrypt.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.verify1.store(0, Ordering::Relaxed);
        self.counters.verify2.store(0, Ordering::Relaxed);
        self.counters.decrypt.store(0, Ordering::Relaxed);
    }

    fn key_for(&self, batch: &BatchSubset, org: &str) -> Result<String, DivtError> {
        evidence_key(org, batch.table_id(), batch.batch_id())
            .map_err(|e| DivtError::stage(Stage::Attributes, e))
    }

    /// Anchors `batch` for the identity's organization.
    pub fn upload(
        &self,
        batch: &BatchSubset,
        level: Traceability,
        identity: &Identity,
    ) -> Result<Uploaded, DivtError> {
        let org = identity.org();
        let key = self.key_for(batch, org)?;
        if self.ledger.query_evidence(&key).is_ok() {
            return Err(DivtError::Duplicate { evidence_key: key });
        }
        let mut t = UploadTimings::default();
        let id = timed(&mut t.identification, || id_att_gen(batch, org));
        let record = timed(&mut t.attributes, || {
            vrfc_att_gen(batch, level).map(|v| rec_gen(id, v))
        })
        .map_err(|e| DivtError::stage(Stage::Attributes, e))?;
        let h_v = record.v.h_v;
        let (keys, envelope) = timed(&mut t.encrypt, || {
            crypto::keygen().map(|k| {
                let env = crypto::encrypt(&record.canonical_bytes(), &k);
                (k, env)
            })
        })
        .map_err(|e| DivtError::stage(Stage::KeyGen, e))?;
        let h_l = timed(&mut t.store, || self.store.put(envelope.as_bytes()))
            .map_err(|e| DivtError::stage(Stage::Store, e))?;
        let evidence = Evidence {
            organisation: org.to_string(),
            table_name: batch.table_id().to_string(),
            batch_id: batch.batch_id().to_string(),
            verification_hash: h_v,
            location_hash: h_l,
            traceability: level,
        };
        let receipt = timed(&mut t.ledger, || {
            self.ledger
                .create_evidence(identity, &evidence, Some(&keys))
        })
        .map_err(|e| DivtError::from_ledger(Stage::Ledger, e))?;
        Ok(Uploaded {
            evidence_key: key,
            h_v,
            h_l,
            height: receipt.height,
            timings: t,
        })
    }

    /// Fast tier: live subset hash against the anchored one.
    pub fn verify1(&self, batch: &BatchSubset, identity: &Identity) -> Result<Verify1, DivtError> {
        self.counters.verify1.fetch_add(1, Ordering::Relaxed);
        let key = self.key_for(batch, identity.org())?;
        let h_v =
            subset_hash::<&str>(batch, &[]).map_err(|e| DivtError::stage(Stage::Attributes, e))?;
        let (verdict, anchored) = match self.ledger.query_evidence(&key) {
            Ok(e) if e.verification_hash == h_v => (Verdict::Authentic, Some(e.verification_hash)),
            Ok(e) => (Verdict::Tampered, Some(e.verification_hash)),
            Err(ContractError::NotFound { .. }) => (Verdict::MissingEvidence, None),
            Err(e) => return Err(DivtError::stage(Stage::Ledger, e)),
        };
        Ok(Verify1 {
            evidence_key: key,
            verdict,
            h_v,
            h_v_anchored: anchored,
        })
    }

    /// Fetches and decrypts the anchored record.
    fn fetch_record(
        &self,
        evidence: &Evidence,
        key: &str,
        identity: &Identity,
    ) -> Result<Result<VerificationRecord, String>, DivtError> {
        let material = self
            .ledger
            .query_private_key(identity, PRIVATE_COLLECTION, key)
            .map_err(|e| match e {
                ContractError::NotFound { .. } => {
                    DivtError::stage(Stage::Decrypt, format!("no key material for {key}"))
                }
                other => DivtError::Access(other),
            })?;
        let bytes = match self.store.get(&evidence.location_hash) {
            Ok(b) => b,
            Err(e @ (CasError::NotFound(_) | CasError::Corrupt { .. })) => {
                return Ok(Err(format!("off-chain record unavailable: {e}")))
            }
            Err(e) => return Err(DivtError::stage(Stage::Store, e)),
        };
        self.counters.decrypt.fetch_add(1, Ordering::Relaxed);
        let plain = match crypto::decrypt(&CipherEnvelope::from_bytes(bytes), &material) {
            Ok(p) => p,
            Err(e) => return Ok(Err(format!("off-chain record compromised: {e}"))),
        };
        let record = match VerificationRecord::from_bytes(&plain) {
            Ok(r) => r,
            Err(e) => return Ok(Err(format!("off-chain record unreadable: {e}"))),
        };
        if record.v.h_v != evidence.verification_hash
            || record.v.traceability != evidence.traceability
        {
            return Ok(Err(
                "off-chain record does not match the anchored evidence".into()
            ));
        }
        Ok(Ok(record))
    }

    /// Deep tier: regenerates attributes at the anchored level, diffs them
    /// against the decrypted record and writes a certificate.
    pub fn verify2(
        &self,
        batch: &BatchSubset,
        identity: &Identity,
    ) -> Result<TamperReport, DivtError> {
        self.counters.verify2.fetch_add(1, Ordering::Relaxed);
        let key = self.key_for(batch, identity.org())?;
        let evidence = match self.ledger.query_evidence(&key) {
            Ok(e) => e,
            Err(ContractError::NotFound { .. }) => {
                return Ok(TamperReport::new(
                    batch,
                    &key,
                    Verdict::MissingEvidence,
                    "no evidence on the ledger",
                ))
            }
            Err(e) => return Err(DivtError::stage(Stage::Ledger, e)),
        };
        let report = match self.fetch_record(&evidence, &key, identity)? {
            Err(note) => TamperReport::new(batch, &key, Verdict::RecordCompromised, note),
            Ok(record) => compare(batch, &key, &record)?,
        };
        let result = match report.verdict {
            Verdict::Authentic => CertResult::Authentic,
            _ => CertResult::Tampered,
        };
        self.ledger
            .create_certificate(identity, &key, result, &report.summary())
            .map_err(|e| DivtError::from_ledger(Stage::Certificate, e))?;
        Ok(report)
    }

    /// Tiered audit: Verify I per batch, Verify II only on mismatch. Clean
    /// batches get an Authentic certificate without touching the record.
    pub fn audit(
        &self,
        registry: &BatchRegistry,
        table_id: &str,
        batch_ids: &[String],
        identity: &Identity,
    ) -> Vec<AuditEntry> {
        batch_ids
            .iter()
            .map(|batch_id| {
                let mut escalated = false;
                let outcome = registry
                    .get(table_id, batch_id)
                    .map_err(DivtError::from)
                    .and_then(|batch| {
                        let v1 = self.verify1(batch, identity)?;
                        match v1.verdict {
                            Verdict::Authentic => {
                                let report = TamperReport::new(
                                    batch,
                                    &v1.evidence_key,
                                    Verdict::Authentic,
                                    "",
                                );
                                self.ledger
                                    .create_certificate(
                                        identity,
                                        &v1.evidence_key,
                                        CertResult::Authentic,
                                        "Authentic; subset hash matches",
                                    )
                                    .map_err(|e| DivtError::from_ledger(Stage::Certificate, e))?;
                                Ok(report)
                            }
                            Verdict::MissingEvidence => Ok(TamperReport::new(
                                batch,
                                &v1.evidence_key,
                                Verdict::MissingEvidence,
                                "no evidence on the ledger",
                            )),
                            _ => {
                                escalated = true;
                                self.verify2(batch, identity)
                            }
                        }
                    });
                AuditEntry {
                    batch_id: batch_id.clone(),
                    escalated,
                    outcome,
                }
            })
            .collect()
    }

    /// Re-anchors a batch whose GDPR-flagged cells were edited. The ledger
    /// rejects the update if any other column changed.
    pub fn gdpr_delete(
        &self,
        batch: &BatchSubset,
        reason: &str,
        identity: &Identity,
    ) -> Result<GdprUpdate, DivtError> {
        self.gdpr_delete_for(identity.org(), batch, reason, identity)
    }

    /// As [`Divt::gdpr_delete`] for evidence owned by `org`.
    pub fn gdpr_delete_for(
        &self,
        org: &str,
        batch: &BatchSubset,
        reason: &str,
        identity: &Identity,
    ) -> Result<GdprUpdate, DivtError> {
        let key = self.key_for(batch, org)?;
        let evidence =
            self.ledger
                .query_evidence(&key)
                .map_err(|_| DivtError::MissingEvidence {
                    table_id: batch.table_id().to_string(),
                    batch_id: batch.batch_id().to_string(),
                })?;
        let old = self
            .fetch_record(&evidence, &key, identity)?
            .map_err(|m| DivtError::stage(Stage::Decrypt, m))?;
        let v = regenerate(batch, &old.v).map_err(|e| DivtError::stage(Stage::Attributes, e))?;
        let new = rec_gen(old.id.clone(), v);
        let new_h_v = new.v.h_v;
        let keys = crypto::keygen().map_err(|e| DivtError::stage(Stage::KeyGen, e))?;
        let envelope = crypto::encrypt(&new.canonical_bytes(), &keys);
        let new_h_l = self
            .store
            .put(envelope.as_bytes())
            .map_err(|e| DivtError::stage(Stage::Store, e))?;
        let receipt: Receipt = self
            .ledger
            .update_evidence(
                identity,
                UpdateRequest {
                    evidence_key: key.clone(),
                    new_h_v,
                    new_h_l,
                    old_record: Some(old.canonical_bytes()),
                    new_record: new.canonical_bytes(),
                    new_keys: keys,
                    reason: reason.to_string(),
                },
            )
            .map_err(|e| DivtError::from_ledger(Stage::Ledger, e))?;
        Ok(GdprUpdate {
            evidence_key: key,
            old_h_v: evidence.verification_hash,
            new_h_v,
            new_h_l,
            height: receipt.height,
        })
    }

    /// Certificates visible to `identity`; never touches keys or records.
    pub fn external_audit(
        &self,
        evidence_key: &str,
        identity: &Identity,
    ) -> Result<Vec<Certificate>, DivtError> {
        self.ledger
            .query_certificates(identity, evidence_key)
            .map_err(|e| match e {
                ContractError::NotFound { .. } => DivtError::stage(Stage::Ledger, e),
                other => DivtError::Access(other),
            })
    }
}

fn compare(
    batch: &BatchSubset,
    key: &str,
    record: &VerificationRecord,
) -> Result<TamperReport, DivtError> {
    let live_cols: Vec<&str> = batch.column_names().collect();
    if live_cols != record.v.cols.iter().map(String::as_str).collect::<Vec<_>>() {
        let mut r = TamperReport::new(batch, key, Verdict::Tampered, "schema changed");
        r.changed_columns = record
            .v
            .cols
            .iter()
            .filter(|c| !live_cols.contains(&c.as_str()))
            .cloned()
            .chain(
                live_cols
                    .iter()
                    .filter(|c| !record.v.cols.iter().any(|r| r == *c))
                    .map(|c| c.to_string()),
            )
            .collect();
        r.row_count_delta = batch.row_count() as i64 - record.v.rows as i64;
        return Ok(r);
    }
    let current =
        regenerate(batch, &record.v).map_err(|e| DivtError::stage(Stage::Attributes, e))?;
    let diff =
        diff_attributes(&current, &record.v).map_err(|e| DivtError::stage(Stage::Attributes, e))?;
    let verdict = if diff.is_empty() {
        Verdict::Authentic
    } else {
        Verdict::Tampered
    };
    let mut notes = Vec::new();
    if diff.h_v_changed && diff.changed_columns.is_empty() && diff.row_count_delta == 0 {
        notes.push("subset hash differs".to_string());
    }
    Ok(TamperReport {
        changed_columns: diff.changed_columns,
        changed_rows: diff.changed_rows,
        changed_cells: diff.changed_cells,
        row_count_delta: diff.row_count_delta,
        notes: notes.join("; "),
        ..TamperReport::new(batch, key, verdict, "")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cas::MemoryStore;
    use crate::ledger::{AccessPolicy, LedgerConfig, Role, Scope};
    use crate::warehouse::ColumnSpec;

    struct Fixture {
        divt: Divt,
        store: Arc<MemoryStore>,
        writer: Identity,
        auditor: Identity,
        external: Identity,
        cleanup: Identity,
    }

    fn fixture() -> Fixture {
        let mut p = AccessPolicy::new();
        let writer = p.add_member("Electron", "alice", [Role::Writer]);
        let auditor = p.add_member("Electron", "bob", [Role::Auditor]);
        let external = p.add_member("AuditCo", "eve", [Role::External]);
        let cleanup = p.add_member("Electron", "gdpr", [Role::Cleanup]);
        p.set_gdpr_cleanup_client(Some(cleanup.id().clone()));
        p.grant("Electron", "AuditCo", [Scope::Certificates]);
        let store = Arc::new(MemoryStore::new());
        let ledger = Arc::new(Ledger::in_memory(p, LedgerConfig::default()));
        Fixture {
            divt: Divt::new(ledger, store.clone()),
            store,
            writer,
            auditor,
            external,
            cleanup,
        }
    }

    fn batch(id: &str) -> BatchSubset {
        BatchSubset::new(
            "LowVoltage",
            id,
            chrono::DateTime::parse_from_rfc3339("2017-12-09T00:00:00Z")
                .unwrap()
                .into(),
            vec![
                ColumnSpec::new("id", false),
                ColumnSpec::new("begindate", false),
                ColumnSpec::new("length", false),
                ColumnSpec::new("EndPoint", true),
            ],
            vec![
                vec![
                    "1".into(),
                    "2017-12-09".into(),
                    "12.5".into(),
                    "Main St 1".into(),
                ],
                vec![
                    "2".into(),
                    "2017-12-09".into(),
                    "7.25".into(),
                    "Main St 2".into(),
                ],
            ],
        )
        .unwrap()
    }

    #[test]
    fn upload_then_verify_is_authentic() {
        let f = fixture();
        let b = batch("100");
        let up = f.divt.upload(&b, Traceability::Columns, &f.writer).unwrap();
        assert!(f.store.stat(&up.h_l).unwrap().exists);
        assert!(f.divt.verify1(&b, &f.auditor).unwrap().matched());
        let r = f.divt.verify2(&b, &f.auditor).unwrap();
        assert_eq!(r.verdict, Verdict::Authentic);
        let certs = f
            .divt
            .external_audit(&up.evidence_key, &f.external)
            .unwrap();
        assert_eq!(certs.len(), 1);
        assert_eq!(certs[0].result, CertResult::Authentic);
    }

    #[test]
    fn duplicate_upload_leaves_state_untouched() {
        let f = fixture();
        let b = batch("100");
        f.divt.upload(&b, Traceability::Columns, &f.writer).unwrap();
        let (h, root) = (f.divt.ledger().height(), f.divt.ledger().state_root());
        let err = f
            .divt
            .upload(&b, Traceability::Columns, &f.writer)
            .unwrap_err();
        assert!(matches!(err, DivtError::Duplicate { .. }));
        assert_eq!(
            (f.divt.ledger().height(), f.divt.ledger().state_root()),
            (h, root)
        );
    }

    #[test]
    fn single_cell_edit_is_localized() {
        let f = fixture();
        let mut b = batch("1");
        f.divt.upload(&b, Traceability::Rows, &f.writer).unwrap();
        b.set_cell_by_name(1, "length", "99").unwrap();
        assert!(!f.divt.verify1(&b, &f.auditor).unwrap().matched());
        let r = f.divt.verify2(&b, &f.auditor).unwrap();
        assert_eq!(r.verdict, Verdict::Tampered);
        assert_eq!(r.changed_columns, ["length"]);
        assert_eq!(r.changed_rows, [1]);
    }

    #[test]
    fn missing_evidence_and_compromised_record() {
        let f = fixture();
        let b = batch("7");
        assert_eq!(
            f.divt.verify1(&b, &f.auditor).unwrap().verdict,
            Verdict::MissingEvidence
        );
        let up = f.divt.upload(&b, Traceability::Columns, &f.writer).unwrap();
        f.store.corrupt_with(&up.h_l, |bytes| bytes[0] ^= 1);
        let r = f.divt.verify2(&b, &f.auditor).unwrap();
        assert_eq!(r.verdict, Verdict::RecordCompromised);
    }

    #[test]
    fn audit_escalates_only_on_mismatch() {
        let f = fixture();
        let mut reg = BatchRegistry::new();
        for id in ["1", "2", "3"] {
            let b = batch(id);
            f.divt.upload(&b, Traceability::Columns, &f.writer).unwrap();
            reg.insert(b);
        }
        reg.get_mut("LowVoltage", "2")
            .unwrap()
            .set_cell_by_name(0, "begindate", "2018-01-01")
            .unwrap();
        let ids: Vec<String> = ["1", "2", "3", "404"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let entries = f.divt.audit(&reg, "LowVoltage", &ids, &f.auditor);
        assert_eq!(f.divt.counters().verify2, 1);
        assert_eq!(f.divt.counters().decrypt, 1);
        assert_eq!(
            entries[1].outcome.as_ref().unwrap().changed_columns,
            ["begindate"]
        );
        assert!(entries[3].outcome.is_err());
        assert!(f.divt.audit(&reg, "LowVoltage", &[], &f.auditor).is_empty());
    }

    #[test]
    fn gdpr_delete_accepts_only_gdpr_edits() {
        let f = fixture();
        let mut b = batch("5");
        f.divt.upload(&b, Traceability::Columns, &f.writer).unwrap();
        let mut bad = b.clone();
        bad.set_cell_by_name(0, "EndPoint", "").unwrap();
        bad.set_cell_by_name(0, "length", "0").unwrap();
        match f.divt.gdpr_delete(&bad, "erase", &f.cleanup) {
            Err(DivtError::Rejected { columns, .. }) => assert_eq!(columns, ["length"]),
            other => panic!("{other:?}"),
        }
        assert!(f.divt.verify1(&b, &f.auditor).unwrap().matched());
        assert!(matches!(
            f.divt.gdpr_delete(&b, "erase", &f.writer),
            Err(DivtError::Access(_))
        ));
        b.set_cell_by_name(0, "EndPoint", "").unwrap();
        b.set_cell_by_name(1, "EndPoint", "").unwrap();
        let up = f.divt.gdpr_delete(&b, "erase", &f.cleanup).unwrap();
        assert_ne!(up.old_h_v, up.new_h_v);
        assert_eq!(
            f.divt.verify2(&b, &f.auditor).unwrap().verdict,
            Verdict::Authentic
        );
        assert_eq!(f.divt.ledger().query_update_log(&up.evidence_key).len(), 1);
    }
}
