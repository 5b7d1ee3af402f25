//! Simulated permissioned ledger.
//!
//! A single ordering lock stands in for the consensus leader: each submitted
//! transaction is executed against the committed state, sealed into its own
//! block (failed transactions included, flagged as such) and applied. Reads
//! take a shared lock on the committed state and never append blocks.
//!
//! Transient inputs (key material, full records for the update check) are
//! consumed by the contracts and dropped; blocks carry only the public
//! arguments.

mod chain;
mod contracts;
mod policy;
mod state;
mod types;

use std::path::Path;
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

pub use chain::{block_hash, read_block_file, verify_blocks, ChainReport};
pub use contracts::check_update;
pub use policy::{AccessPolicy, Grant, Identity, MemberId, PolicyError, Role, Scope};
pub use types::{
    composite_key, evidence_key, Block, CertResult, Certificate, CommittedTx, Contract,
    ContractError, Evidence, PrivateDetails, Receipt, Transaction, TransientKeys, TxStatus,
    UpdateLog, OWNER_INDEX, PRIVATE_COLLECTION, TRANSIENT_KEYS, TRANSIENT_NEW_RECORD,
    TRANSIENT_OLD_RECORD,
};

use chain::DiskLog;
use state::World;

use crate::cas::LocationHash;
use crate::crypto::KeyMaterial;
use crate::digest::Digest;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("signature of {0} does not verify")]
    InvalidSignature(MemberId),
    #[error("unknown identity {0}")]
    UnknownIdentity(MemberId),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("ledger storage: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct LedgerConfig {
    /// Artificial per-block delay inside the ordering lock.
    pub commit_delay: Duration,
}

struct Orderer {
    log: Option<DiskLog>,
}

pub struct Ledger {
    policy: AccessPolicy,
    config: LedgerConfig,
    order: Mutex<Orderer>,
    world: RwLock<World>,
    blocks: RwLock<Vec<Block>>,
}

/// Inputs of the GDPR update contract.
#[derive(Debug, Clone)]
pub struct UpdateRequest {
    pub evidence_key: String,
    pub new_h_v: Digest,
    pub new_h_l: LocationHash,
    /// Canonical bytes of the currently anchored record.
    pub old_record: Option<Vec<u8>>,
    pub new_record: Vec<u8>,
    pub new_keys: KeyMaterial,
    pub reason: String,
}

fn keys_json(key: &str, material: &KeyMaterial) -> Vec<u8> {
    serde_json::to_vec(&TransientKeys {
        secret_key: material.secret_key_hex(),
        nonce: material.nonce_hex(),
        key: key.to_string(),
    })
    .expect("transient keys serialize")
}

impl Ledger {
    pub fn in_memory(policy: AccessPolicy, config: LedgerConfig) -> Ledger {
        let world = World::default();
        let genesis = Block::seal(0, Digest::ZERO, vec![], world.root());
        Ledger {
            policy,
            config,
            order: Mutex::new(Orderer { log: None }),
            world: RwLock::new(world),
            blocks: RwLock::new(vec![genesis]),
        }
    }

    /// Opens or creates a ledger persisted under `dir`.
    pub fn open(
        dir: impl AsRef<Path>,
        policy: AccessPolicy,
        config: LedgerConfig,
    ) -> Result<Ledger, LedgerError> {
        let dir = dir.as_ref();
        let (mut blocks, world) = DiskLog::load(dir)?;
        let mut log = DiskLog::open(dir)?;
        if blocks.is_empty() {
            let genesis = Block::seal(0, Digest::ZERO, vec![], world.root());
            log.append(&genesis, &world)?;
            blocks.push(genesis);
        }
        Ok(Ledger {
            policy,
            config,
            order: Mutex::new(Orderer { log: Some(log) }),
            world: RwLock::new(world),
            blocks: RwLock::new(blocks),
        })
    }

    pub fn policy(&self) -> &AccessPolicy {
        &self.policy
    }

    /// Orders, executes and commits one transaction.
    pub fn submit(&self, tx: Transaction) -> Result<Receipt, LedgerError> {
        let start = Instant::now();
        if !self
            .policy
            .verify(&tx.creator, &tx.signing_payload(), &tx.signature)
        {
            return Err(LedgerError::InvalidSignature(tx.creator));
        }
        let mut order = self.order.lock().unwrap_or_else(|e| e.into_inner());
        let outcome = {
            let world = self.world.read().unwrap_or_else(|e| e.into_inner());
            contracts::execute(&tx, &world, &self.policy)
        };
        if !self.config.commit_delay.is_zero() {
            std::thread::sleep(self.config.commit_delay);
        }
        let (status, writes) = match outcome {
            Ok(w) => (TxStatus::Valid, w),
            Err(error) => (TxStatus::Failed { error }, Vec::new()),
        };
        let tx_id = tx.tx_id.clone();
        let committed = CommittedTx {
            tx: Transaction {
                transient: Default::default(),
                ..tx
            },
            status: status.clone(),
        };
        let mut world = self.world.write().unwrap_or_else(|e| e.into_inner());
        world.apply(writes);
        let mut blocks = self.blocks.write().unwrap_or_else(|e| e.into_inner());
        let prev = blocks.last().expect("genesis exists");
        let block = Block::seal(
            prev.height + 1,
            prev.block_hash,
            vec![committed],
            world.root(),
        );
        if let Some(log) = order.log.as_mut() {
            log.append(&block, &world)?;
        }
        let height = block.height;
        blocks.push(block);
        drop(blocks);
        drop(world);
        drop(order);
        Ok(Receipt {
            tx_id,
            height,
            status,
            latency: start.elapsed(),
        })
    }

    fn submit_ok(&self, tx: Transaction) -> Result<Receipt, LedgerError> {
        Ok(self.submit(tx)?.into_result()?)
    }

    /// Writes evidence and, when given, its key material in one transaction.
    pub fn create_evidence(
        &self,
        identity: &Identity,
        evidence: &Evidence,
        keys: Option<&KeyMaterial>,
    ) -> Result<Receipt, LedgerError> {
        let key = evidence.key()?;
        let mut tx = Transaction::new(
            identity,
            Contract::Evidence,
            "createEvidence",
            evidence.create_args(&key),
        );
        if let Some(k) = keys {
            tx = tx.with_transient(TRANSIENT_KEYS, keys_json(&key, k));
        }
        self.submit_ok(tx)
    }

    pub fn create_private_key(
        &self,
        identity: &Identity,
        evidence_key: &str,
        keys: &KeyMaterial,
    ) -> Result<Receipt, LedgerError> {
        let tx = Transaction::new(identity, Contract::PrivateKeys, "createPrivateKey", vec![])
            .with_transient(TRANSIENT_KEYS, keys_json(evidence_key, keys));
        self.submit_ok(tx)
    }

    pub fn create_certificate(
        &self,
        identity: &Identity,
        evidence_key: &str,
        result: CertResult,
        detail: &str,
    ) -> Result<Receipt, LedgerError> {
        let tx = Transaction::new(
            identity,
            Contract::Certificates,
            "createCertificate",
            vec![
                evidence_key.to_string(),
                result.to_string(),
                detail.to_string(),
            ],
        );
        self.submit_ok(tx)
    }

    pub fn update_evidence(
        &self,
        identity: &Identity,
        req: UpdateRequest,
    ) -> Result<Receipt, LedgerError> {
        let mut tx = Transaction::new(
            identity,
            Contract::Update,
            "updateEvidence",
            vec![
                req.evidence_key.clone(),
                req.new_h_v.to_hex(),
                req.new_h_l.to_hex(),
                req.reason,
            ],
        )
        .with_transient(TRANSIENT_NEW_RECORD, req.new_record)
        .with_transient(TRANSIENT_KEYS, keys_json(&req.evidence_key, &req.new_keys));
        if let Some(old) = req.old_record {
            tx = tx.with_transient(TRANSIENT_OLD_RECORD, old);
        }
        self.submit_ok(tx)
    }

    fn read_world(&self) -> std::sync::RwLockReadGuard<'_, World> {
        self.world.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn query_evidence(&self, key: &str) -> Result<Evidence, ContractError> {
        contracts::load_evidence(&self.read_world(), key)
    }

    /// Evidence keys and values owned by `org`, via the composite index.
    pub fn query_by_owner(&self, org: &str) -> Vec<(String, Evidence)> {
        let world = self.read_world();
        let prefix = composite_key(OWNER_INDEX, &[org]);
        world
            .scan(&prefix)
            .filter_map(|(k, _)| {
                let key = k[prefix.len()..].trim_end_matches('\u{0}');
                contracts::load_evidence(&world, key)
                    .ok()
                    .map(|e| (key.to_string(), e))
            })
            .collect()
    }

    fn authenticate(&self, identity: &Identity) -> Result<(), ContractError> {
        if self.policy.authenticate(identity) {
            Ok(())
        } else {
            Err(ContractError::Unauthorized(format!(
                "unknown identity {}",
                identity.id()
            )))
        }
    }

    pub fn query_private_key(
        &self,
        identity: &Identity,
        collection: &str,
        key: &str,
    ) -> Result<KeyMaterial, ContractError> {
        self.authenticate(identity)?;
        if collection != PRIVATE_COLLECTION {
            return Err(ContractError::NotFound {
                key: collection.to_string(),
            });
        }
        let world = self.read_world();
        let raw = world
            .get_private(collection, key)
            .ok_or_else(|| ContractError::NotFound {
                key: key.to_string(),
            })?;
        let details: PrivateDetails = serde_json::from_str(raw)
            .map_err(|e| ContractError::Validation(format!("stored private details: {e}")))?;
        if !self
            .policy
            .may_read(identity.org(), &details.owner, Scope::PrivateKeys)
        {
            return Err(ContractError::AccessDenied {
                key: key.to_string(),
            });
        }
        KeyMaterial::from_hex(&details.secret_key, &details.nonce)
            .map_err(|e| ContractError::Validation(e.to_string()))
    }

    /// Certificates of one evidence key, oldest first.
    pub fn query_certificates(
        &self,
        identity: &Identity,
        key: &str,
    ) -> Result<Vec<Certificate>, ContractError> {
        self.authenticate(identity)?;
        let world = self.read_world();
        let evidence = contracts::load_evidence(&world, key)?;
        if !self
            .policy
            .may_read(identity.org(), &evidence.organisation, Scope::Certificates)
        {
            return Err(ContractError::AccessDenied {
                key: key.to_string(),
            });
        }
        Ok(world
            .scan(&contracts::certificate_prefix(key))
            .filter_map(|(_, v)| serde_json::from_str(v).ok())
            .collect())
    }

    pub fn query_update_log(&self, key: &str) -> Vec<UpdateLog> {
        self.read_world()
            .scan(&contracts::update_prefix(key))
            .filter_map(|(_, v)| serde_json::from_str(v).ok())
            .collect()
    }

    /// Height of the newest block; genesis is 0.
    pub fn height(&self) -> u64 {
        self.blocks.read().unwrap_or_else(|e| e.into_inner()).len() as u64 - 1
    }

    pub fn state_root(&self) -> Digest {
        self.read_world().root()
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.blocks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Verifies the hash chain and that the head commits to the current state.
    pub fn verify_chain(&self) -> ChainReport {
        let blocks = self.blocks.read().unwrap_or_else(|e| e.into_inner());
        let mut report = verify_blocks(&blocks);
        if report.ok {
            let head = blocks.last().expect("genesis exists");
            if head.state_root != self.read_world().root() {
                report.ok = false;
                report.first_bad_height = Some(head.height);
            }
        }
        report
    }

    /// Fault injection: rewrites a committed block in place.
    #[doc(hidden)]
    pub fn tamper_block(&self, height: u64, f: impl FnOnce(&mut Block)) -> bool {
        let mut blocks = self.blocks.write().unwrap_or_else(|e| e.into_inner());
        match blocks.get_mut(height as usize) {
            Some(b) => {
                f(b);
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::Traceability;
    use crate::crypto::keygen;

    fn setup() -> (Ledger, Identity, Identity, Identity) {
        let mut p = AccessPolicy::new();
        let writer = p.add_member("Electron", "alice", [Role::Writer]);
        let auditor = p.add_member("Electron", "bob", [Role::Auditor]);
        let outsider = p.add_member("Other", "carol", [Role::Writer, Role::Auditor]);
        (
            Ledger::in_memory(p, LedgerConfig::default()),
            writer,
            auditor,
            outsider,
        )
    }

    fn evidence(org: &str, batch: &str) -> Evidence {
        Evidence {
            organisation: org.into(),
            table_name: "LowVoltage".into(),
            batch_id: batch.into(),
            verification_hash: Digest::of(batch.as_bytes()),
            location_hash: LocationHash::of(batch.as_bytes()),
            traceability: Traceability::Columns,
        }
    }

    #[test]
    fn create_query_and_duplicate() {
        let (l, w, _, _) = setup();
        let e = evidence("Electron", "100");
        let key = e.key().unwrap();
        let r = l.create_evidence(&w, &e, None).unwrap();
        assert_eq!(r.height, 1);
        assert_eq!(l.query_evidence(&key).unwrap(), e);
        let root = l.state_root();
        let err = l.create_evidence(&w, &e, None).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::Contract(ContractError::Duplicate { .. })
        ));
        assert_eq!(l.state_root(), root);
        assert_eq!(l.height(), 2, "failed tx is still recorded");
        assert!(!l.blocks()[2].txs[0].status.is_valid());
        assert!(l.verify_chain().ok);
    }

    #[test]
    fn queries_do_not_append_blocks() {
        let (l, w, _, _) = setup();
        let e = evidence("Electron", "1");
        l.create_evidence(&w, &e, Some(&keygen().unwrap())).unwrap();
        let (h, root) = (l.height(), l.state_root());
        for _ in 0..10 {
            l.query_evidence(&e.key().unwrap()).unwrap();
            l.query_by_owner("Electron");
            l.query_private_key(&w, PRIVATE_COLLECTION, &e.key().unwrap())
                .unwrap();
        }
        assert_eq!((l.height(), l.state_root()), (h, root));
        assert!(l.query_evidence("missing").is_err());
    }

    #[test]
    fn foreign_org_and_bad_signature_are_rejected() {
        let (l, w, _, outsider) = setup();
        let e = evidence("Electron", "1");
        let err = l.create_evidence(&outsider, &e, None).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::Contract(ContractError::Unauthorized(_))
        ));
        let forged = Identity::new("Electron", "alice", [7; 32]);
        let err = l.create_evidence(&forged, &e, None).unwrap_err();
        assert!(matches!(err, LedgerError::InvalidSignature(_)));
        let k = keygen().unwrap();
        l.create_evidence(&w, &e, Some(&k)).unwrap();
        let err = l
            .query_private_key(&outsider, PRIVATE_COLLECTION, &e.key().unwrap())
            .unwrap_err();
        assert_eq!(
            err,
            ContractError::AccessDenied {
                key: e.key().unwrap()
            }
        );
    }

    #[test]
    fn private_key_contract_validates_transient() {
        let (l, w, _, _) = setup();
        let e = evidence("Electron", "1");
        let key = e.key().unwrap();
        l.create_evidence(&w, &e, None).unwrap();
        let empty = serde_json::to_vec(&TransientKeys {
            key: key.clone(),
            ..Default::default()
        })
        .unwrap();
        let tx = Transaction::new(&w, Contract::PrivateKeys, "createPrivateKey", vec![])
            .with_transient(TRANSIENT_KEYS, empty);
        let r = l.submit(tx).unwrap();
        assert!(
            matches!(r.status, TxStatus::Failed { error: ContractError::Validation(ref m) } if m.contains("secretKey"))
        );
        let k = keygen().unwrap();
        l.create_private_key(&w, &key, &k).unwrap();
        assert_eq!(
            l.query_private_key(&w, PRIVATE_COLLECTION, &key).unwrap(),
            k
        );
    }

    #[test]
    fn certificates_are_appended_in_order() {
        let (l, w, a, outsider) = setup();
        let e = evidence("Electron", "1");
        let key = e.key().unwrap();
        l.create_evidence(&w, &e, None).unwrap();
        assert!(l
            .create_certificate(&w, &key, CertResult::Authentic, "")
            .is_err());
        assert!(l
            .create_certificate(&outsider, &key, CertResult::Authentic, "")
            .is_err());
        l.create_certificate(&a, &key, CertResult::Authentic, "ok")
            .unwrap();
        l.create_certificate(&a, &key, CertResult::Tampered, "bad")
            .unwrap();
        let certs = l.query_certificates(&a, &key).unwrap();
        assert_eq!(certs.iter().map(|c| c.seq).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(certs[1].result, CertResult::Tampered);
        assert!(certs[0].date <= certs[1].date);
        assert!(l.query_certificates(&outsider, &key).is_err());
    }

    #[test]
    fn query_by_owner_matches_brute_force() {
        let (l, w, _, outsider) = setup();
        for b in ["1", "2", "3"] {
            l.create_evidence(&w, &evidence("Electron", b), None)
                .unwrap();
        }
        l.create_evidence(&outsider, &evidence("Other", "9"), None)
            .unwrap();
        let mut got: Vec<String> = l
            .query_by_owner("Electron")
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        got.sort();
        let mut want: Vec<String> = ["1", "2", "3"]
            .iter()
            .map(|b| evidence_key("Electron", "LowVoltage", b).unwrap())
            .collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn tampering_is_located() {
        let (l, w, _, _) = setup();
        for b in 0..5 {
            l.create_evidence(&w, &evidence("Electron", &b.to_string()), None)
                .unwrap();
        }
        assert!(l.tamper_block(3, |b| b.txs[0].tx.args[3] = "x".into()));
        let r = l.verify_chain();
        assert_eq!((r.ok, r.first_bad_height), (false, Some(3)));
    }

    #[test]
    fn persisted_ledger_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = AccessPolicy::new();
        let w = p.add_member("Electron", "alice", [Role::Writer]);
        let e = evidence("Electron", "1");
        let k = keygen().unwrap();
        let root = {
            let l = Ledger::open(dir.path(), p.clone(), LedgerConfig::default()).unwrap();
            l.create_evidence(&w, &e, Some(&k)).unwrap();
            l.state_root()
        };
        let l = Ledger::open(dir.path(), p, LedgerConfig::default()).unwrap();
        assert_eq!(l.height(), 1);
        assert_eq!(l.state_root(), root);
        assert!(l.verify_chain().ok);
        assert_eq!(
            l.query_private_key(&w, PRIVATE_COLLECTION, &e.key().unwrap())
                .unwrap(),
            k
        );
        let raw = std::fs::read(dir.path().join("blocks.bin")).unwrap();
        assert!(!String::from_utf8_lossy(&raw).contains(&k.secret_key_hex()));
    }
}
