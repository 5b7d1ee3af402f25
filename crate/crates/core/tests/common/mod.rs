#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use auditem::ledger::{AccessPolicy, LedgerConfig, Role, Scope};
use auditem::warehouse::{load_batches, LoadOptions, TimestampSource};
use auditem::{BatchRegistry, BatchSubset, Divt, Identity, Ledger, MemoryStore};

pub const ORG: &str = "Electron";
pub const TABLE: &str = "LowVoltage";

pub fn sample_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata/lowvoltage.csv")
}

pub fn sample_batches() -> Vec<BatchSubset> {
    let opts = LoadOptions::new(TABLE, "batch")
        .gdpr(["EndPoint"])
        .timestamp(TimestampSource::Column("date".into()));
    load_batches(sample_path(), &opts).expect("sample table loads")
}

pub fn sample_registry() -> BatchRegistry {
    let mut reg = BatchRegistry::new();
    reg.extend(sample_batches());
    reg
}

pub struct World {
    pub divt: Divt,
    pub store: Arc<MemoryStore>,
    pub writer: Identity,
    pub auditor: Identity,
    pub external: Identity,
    pub cleanup: Identity,
}

pub fn policy() -> (AccessPolicy, [Identity; 4]) {
    let mut p = AccessPolicy::new();
    let writer = p.add_member(ORG, "uploader", [Role::Writer]);
    let auditor = p.add_member(ORG, "auditor", [Role::Auditor]);
    let external = p.add_member("AuditCo", "external", [Role::External]);
    let cleanup = p.add_member(ORG, "gdpr-cleanup", [Role::Cleanup]);
    p.set_gdpr_cleanup_client(Some(cleanup.id().clone()));
    p.grant(ORG, "AuditCo", [Scope::Certificates]);
    (p, [writer, auditor, external, cleanup])
}

pub fn world() -> World {
    let (p, [writer, auditor, external, cleanup]) = policy();
    let store = Arc::new(MemoryStore::new());
    let ledger = Arc::new(Ledger::in_memory(p, LedgerConfig::default()));
    World {
        divt: Divt::new(ledger, store.clone()),
        store,
        writer,
        auditor,
        external,
        cleanup,
    }
}
