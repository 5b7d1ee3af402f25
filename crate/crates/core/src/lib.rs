//! Tamper-evident integrity auditing for tabular data batches.
//!
//! Batches ingested from a warehouse extract are reduced to verification
//! attributes (subset, column, row and GDPR-exempt hashes). The attributes are
//! bundled into a verification record, encrypted with AES-256-GCM and stored
//! in a content-addressed store, while the subset hash and the record's
//! location are anchored on a simulated permissioned ledger. Auditors later
//! recompute the attributes from the live data and compare them in two tiers:
//! a fast hash-equality check against the ledger, and a deep attribute-level
//! comparison against the decrypted record that pinpoints what changed.
//!
//! Module map:
//!
//! - [`warehouse`]: CSV ingestion into [`warehouse::BatchSubset`]s.
//! - [`attributes`]: identification/verification attributes and records.
//! - [`crypto`]: key material and authenticated record encryption.
//! - [`cas`]: content-addressed storage for encrypted records.
//! - [`ledger`]: hash-chained ledger with the evidence, private-key,
//!   certificate and GDPR-update contracts.
//! - [`divt`]: the upload / verify / audit / GDPR-update orchestration.
//! - [`bench`]: overhead and load benchmarks.

pub mod attributes;
pub mod bench;
pub mod cas;
pub mod crypto;
pub mod digest;
pub mod divt;
pub mod ledger;
pub mod warehouse;

pub use attributes::{
    IdentificationAttribute, Traceability, VerificationAttribute, VerificationRecord,
};
pub use cas::{ContentStore, DiskStore, LocationHash, MemoryStore};
pub use crypto::{CipherEnvelope, KeyMaterial};
pub use digest::Digest;
pub use divt::{Divt, TamperReport, Verdict};
pub use ledger::{AccessPolicy, Identity, Ledger};
pub use warehouse::{BatchRegistry, BatchSubset, ColumnSpec};
