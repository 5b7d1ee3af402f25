use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::policy::{Identity, MemberId};
use crate::attributes::Traceability;
use crate::cas::LocationHash;
use crate::digest::Digest;

pub const PRIVATE_COLLECTION: &str = "collectionPrivateDetails";
pub const OWNER_INDEX: &str = "owner_key";
pub(crate) const CERT_INDEX: &str = "cert";
pub(crate) const UPDATE_INDEX: &str = "updatelog";

/// Transient map keys.
pub const TRANSIENT_KEYS: &str = "keys";
pub const TRANSIENT_OLD_RECORD: &str = "oldRecord";
pub const TRANSIENT_NEW_RECORD: &str = "newRecord";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail", rename_all = "kebab-case")]
pub enum ContractError {
    #[error("{key} already exists")]
    Duplicate { key: String },
    #[error("{key} not found")]
    NotFound { key: String },
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    /// Formatted like the private-data chaincode's error JSON.
    #[error("{{\"Error\":\"{key}: access denied\"}}")]
    AccessDenied { key: String },
    #[error("invalid arguments: {0}")]
    Validation(String),
    #[error("update rejected: {reason}")]
    UpdateRejected {
        reason: String,
        /// Non-GDPR columns whose hashes changed.
        columns: Vec<String>,
    },
    #[error("unknown function {0}")]
    UnknownFunction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Contract {
    Evidence,
    PrivateKeys,
    Certificates,
    Update,
}

/// The part of a transaction the creator signs.
#[derive(Serialize)]
struct SignedFields<'a> {
    tx_id: &'a str,
    contract: Contract,
    function: &'a str,
    args: &'a [String],
    creator: &'a MemberId,
    timestamp: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub contract: Contract,
    pub function: String,
    pub args: Vec<String>,
    /// Private inputs; never serialized, so never reach a block.
    #[serde(skip)]
    pub transient: BTreeMap<String, Vec<u8>>,
    pub creator: MemberId,
    pub timestamp: String,
    pub signature: Digest,
}

impl Transaction {
    pub fn new(
        identity: &Identity,
        contract: Contract,
        function: &str,
        args: Vec<String>,
    ) -> Transaction {
        let mut id = [0u8; 16];
        OsRng.fill_bytes(&mut id);
        let mut tx = Transaction {
            tx_id: hex::encode(id),
            contract,
            function: function.to_string(),
            args,
            transient: BTreeMap::new(),
            creator: identity.id().clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            signature: Digest::ZERO,
        };
        tx.signature = identity.sign(&tx.signing_payload());
        tx
    }

    pub fn with_transient(mut self, key: &str, value: Vec<u8>) -> Self {
        self.transient.insert(key.to_string(), value);
        self
    }

    pub fn signing_payload(&self) -> Vec<u8> {
        serde_json::to_vec(&SignedFields {
            tx_id: &self.tx_id,
            contract: self.contract,
            function: &self.function,
            args: &self.args,
            creator: &self.creator,
            timestamp: &self.timestamp,
        })
        .expect("signed fields serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TxStatus {
    Valid,
    Failed { error: ContractError },
}

impl TxStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, TxStatus::Valid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTx {
    pub tx: Transaction,
    #[serde(flatten)]
    pub status: TxStatus,
}

impl CommittedTx {
    pub fn digest(&self) -> Digest {
        Digest::of(&serde_json::to_vec(self).expect("committed tx serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<CommittedTx>,
    pub state_root: Digest,
    pub block_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_id: String,
    pub height: u64,
    pub status: TxStatus,
    /// Submit to commit.
    pub latency: Duration,
}

impl Receipt {
    pub fn into_result(self) -> Result<Receipt, ContractError> {
        match &self.status {
            TxStatus::Valid => Ok(self),
            TxStatus::Failed { error } => Err(error.clone()),
        }
    }
}

/// On-ledger binding of a batch identity to its verification and
/// location hashes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(rename = "Organisation")]
    pub organisation: String,
    #[serde(rename = "Table_name")]
    pub table_name: String,
    #[serde(rename = "Batch_ID")]
    pub batch_id: String,
    #[serde(rename = "Verification_Hash")]
    pub verification_hash: Digest,
    #[serde(rename = "Location_Hash")]
    pub location_hash: LocationHash,
    #[serde(rename = "Traceability")]
    pub traceability: Traceability,
}

impl Evidence {
    pub fn key(&self) -> Result<String, ContractError> {
        evidence_key(&self.organisation, &self.table_name, &self.batch_id)
    }

    pub(crate) fn create_args(&self, key: &str) -> Vec<String> {
        vec![
            key.to_string(),
            self.organisation.clone(),
            self.table_name.clone(),
            self.batch_id.clone(),
            self.verification_hash.to_hex(),
            self.location_hash.to_hex(),
            self.traceability.to_string(),
        ]
    }
}

/// SHA-256 hex of `org|table|batch`; `|` is banned from all three fields.
pub fn evidence_key(org: &str, table: &str, batch: &str) -> Result<String, ContractError> {
    for (name, field) in [("organisation", org), ("table", table), ("batch", batch)] {
        if field.is_empty() || field.contains('|') {
            return Err(ContractError::Validation(format!(
                "{name} {field:?} must be non-empty and must not contain '|'"
            )));
        }
    }
    Ok(Digest::of(format!("{org}|{table}|{batch}").as_bytes()).to_hex())
}

/// Composite key in the `\0type\0attr\0...` layout used by chaincode state.
pub fn composite_key(object_type: &str, attrs: &[&str]) -> String {
    let mut key = String::from("\u{0}");
    key.push_str(object_type);
    key.push('\u{0}');
    for a in attrs {
        key.push_str(a);
        key.push('\u{0}');
    }
    key
}

/// Key material held in the private collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateDetails {
    #[serde(rename = "secretKey")]
    pub secret_key: String,
    pub nonce: String,
    pub owner: String,
}

/// Transient input of `createPrivateKey`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransientKeys {
    #[serde(rename = "secretKey", default)]
    pub secret_key: String,
    #[serde(default)]
    pub nonce: String,
    #[serde(default)]
    pub key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertResult {
    Authentic,
    Tampered,
}

impl fmt::Display for CertResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertResult::Authentic => "Authentic",
            CertResult::Tampered => "Tampered",
        })
    }
}

impl std::str::FromStr for CertResult {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Authentic" => Ok(CertResult::Authentic),
            "Tampered" => Ok(CertResult::Tampered),
            other => Err(ContractError::Validation(format!(
                "certificate result {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub evidence_key: String,
    pub seq: u64,
    pub date: String,
    pub auditor: MemberId,
    pub result: CertResult,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub evidence_key: String,
    pub seq: u64,
    pub old_h_v: Digest,
    pub new_h_v: Digest,
    pub old_h_l: LocationHash,
    pub new_h_l: LocationHash,
    pub user: MemberId,
    pub reason: String,
    pub timestamp: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evidence_key_is_framed_hash() {
        let k = evidence_key("Electron", "LowVoltage", "100").unwrap();
        assert_eq!(k, Digest::of(b"Electron|LowVoltage|100").to_hex());
        assert!(evidence_key("Elec|tron", "LowVoltage", "100").is_err());
        assert!(evidence_key("", "LowVoltage", "100").is_err());
    }

    #[test]
    fn composite_key_layout() {
        assert_eq!(
            composite_key("owner_key", &["Org", "k"]),
            "\0owner_key\0Org\0k\0"
        );
    }

    #[test]
    fn transient_is_never_serialized() {
        let id = Identity::new("A", "b", [1; 32]);
        let tx = Transaction::new(&id, Contract::PrivateKeys, "createPrivateKey", vec![])
            .with_transient(TRANSIENT_KEYS, b"super-secret".to_vec());
        let json = serde_json::to_string(&tx).unwrap();
        assert!(!json.contains("super-secret"));
        assert!(!json.contains("transient"));
    }

    #[test]
    fn access_denied_mirrors_error_json() {
        let e = ContractError::AccessDenied { key: "k1".into() };
        assert_eq!(e.to_string(), r#"{"Error":"k1: access denied"}"#);
    }
}
