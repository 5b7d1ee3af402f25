//! Contract execution: a transaction plus a read-only view of the world
//! state yields a write set or an error. Nothing here mutates state.

use std::collections::BTreeSet;

use super::policy::{AccessPolicy, Role};
use super::state::{World, Write};
use super::types::*;
use crate::attributes::VerificationRecord;
use crate::cas::LocationHash;
use crate::crypto::KeyMaterial;
use crate::digest::Digest;

type Outcome = Result<Vec<Write>, ContractError>;

pub(crate) fn execute(tx: &Transaction, world: &World, policy: &AccessPolicy) -> Outcome {
    match (tx.contract, tx.function.as_str()) {
        (Contract::Evidence, "createEvidence") => create_evidence(tx, world, policy),
        (Contract::PrivateKeys, "createPrivateKey") => create_private_key(tx, world, policy),
        (Contract::Certificates, "createCertificate") => create_certificate(tx, world, policy),
        (Contract::Update, "updateEvidence") => update_evidence(tx, world, policy),
        (c, f) => Err(ContractError::UnknownFunction(format!("{c:?}.{f}"))),
    }
}

fn expect_args(tx: &Transaction, n: usize) -> Result<&[String], ContractError> {
    if tx.args.len() != n {
        return Err(ContractError::Validation(format!(
            "{} expects {n} arguments, got {}",
            tx.function,
            tx.args.len()
        )));
    }
    Ok(&tx.args)
}

fn parse_digest(field: &str, text: &str) -> Result<Digest, ContractError> {
    text.parse()
        .map_err(|_| ContractError::Validation(format!("{field} is not a lowercase hex digest")))
}

pub(crate) fn load_evidence(world: &World, key: &str) -> Result<Evidence, ContractError> {
    let raw = world.get(key).ok_or_else(|| ContractError::NotFound {
        key: key.to_string(),
    })?;
    serde_json::from_str(raw)
        .map_err(|e| ContractError::Validation(format!("stored evidence {key}: {e}")))
}

fn require_role(policy: &AccessPolicy, tx: &Transaction, role: Role) -> Result<(), ContractError> {
    if policy.has_role(&tx.creator, role) {
        Ok(())
    } else {
        Err(ContractError::Unauthorized(format!(
            "{} lacks the {role:?} role",
            tx.creator
        )))
    }
}

/// Parses and validates the `keys` transient entry.
fn transient_keys(tx: &Transaction) -> Result<Option<(TransientKeys, KeyMaterial)>, ContractError> {
    let Some(raw) = tx.transient.get(TRANSIENT_KEYS) else {
        return Ok(None);
    };
    let input: TransientKeys = serde_json::from_slice(raw)
        .map_err(|e| ContractError::Validation(format!("transient keys: {e}")))?;
    if input.secret_key.is_empty() {
        return Err(ContractError::Validation(
            "secretKey field must be a non-empty string".into(),
        ));
    }
    if input.nonce.is_empty() {
        return Err(ContractError::Validation(
            "nonce field must be a non-empty string".into(),
        ));
    }
    let material = KeyMaterial::from_hex(&input.secret_key, &input.nonce)
        .map_err(|e| ContractError::Validation(e.to_string()))?;
    Ok(Some((input, material)))
}

fn private_write(key: &str, material: &KeyMaterial, owner: &str) -> Write {
    let details = PrivateDetails {
        secret_key: material.secret_key_hex(),
        nonce: material.nonce_hex(),
        owner: owner.to_string(),
    };
    Write::private(
        PRIVATE_COLLECTION,
        key,
        serde_json::to_string(&details).expect("private details serialize"),
    )
}

fn create_evidence(tx: &Transaction, world: &World, policy: &AccessPolicy) -> Outcome {
    let a = expect_args(tx, 7)?;
    require_role(policy, tx, Role::Writer)?;
    let evidence = Evidence {
        organisation: a[1].clone(),
        table_name: a[2].clone(),
        batch_id: a[3].clone(),
        verification_hash: parse_digest("verification hash", &a[4])?,
        location_hash: LocationHash::from(parse_digest("location hash", &a[5])?),
        traceability: a[6]
            .parse()
            .map_err(|_| ContractError::Validation(format!("traceability {:?}", a[6])))?,
    };
    let key = &a[0];
    if *key != evidence.key()? {
        return Err(ContractError::Validation(format!(
            "key {key} is not the evidence key of {}/{}/{}",
            evidence.organisation, evidence.table_name, evidence.batch_id
        )));
    }
    if tx.creator.org != evidence.organisation {
        return Err(ContractError::Unauthorized(format!(
            "{} cannot create evidence for {}",
            tx.creator, evidence.organisation
        )));
    }
    if world.get(key).is_some() {
        return Err(ContractError::Duplicate { key: key.clone() });
    }
    let mut writes = vec![
        Write::public(
            key.clone(),
            serde_json::to_string(&evidence).expect("evidence serializes"),
        ),
        Write::public(
            composite_key(OWNER_INDEX, &[&evidence.organisation, key]),
            "\u{0}",
        ),
    ];
    if let Some((input, material)) = transient_keys(tx)? {
        if !input.key.is_empty() && input.key != *key {
            return Err(ContractError::Validation(
                "transient key does not match evidence key".into(),
            ));
        }
        writes.push(private_write(key, &material, &evidence.organisation));
    }
    Ok(writes)
}

fn create_private_key(tx: &Transaction, world: &World, policy: &AccessPolicy) -> Outcome {
    expect_args(tx, 0)?;
    require_role(policy, tx, Role::Writer)?;
    let (input, material) = transient_keys(tx)?.ok_or_else(|| {
        ContractError::Validation("private details must be passed in the transient map".into())
    })?;
    if input.key.is_empty() {
        return Err(ContractError::Validation(
            "key field must be a non-empty string".into(),
        ));
    }
    let evidence = load_evidence(world, &input.key)?;
    if evidence.organisation != tx.creator.org {
        return Err(ContractError::AccessDenied { key: input.key });
    }
    if world.get_private(PRIVATE_COLLECTION, &input.key).is_some() {
        return Err(ContractError::Duplicate { key: input.key });
    }
    Ok(vec![private_write(
        &input.key,
        &material,
        &evidence.organisation,
    )])
}

pub(crate) fn certificate_prefix(evidence_key: &str) -> String {
    composite_key(CERT_INDEX, &[evidence_key])
}

pub(crate) fn update_prefix(evidence_key: &str) -> String {
    composite_key(UPDATE_INDEX, &[evidence_key])
}

fn seq_key(prefix: &str, seq: u64) -> String {
    format!("{prefix}{seq:020}\u{0}")
}

fn create_certificate(tx: &Transaction, world: &World, policy: &AccessPolicy) -> Outcome {
    let a = expect_args(tx, 3)?;
    require_role(policy, tx, Role::Auditor)?;
    let key = &a[0];
    let result: CertResult = a[1].parse()?;
    let evidence = load_evidence(world, key)?;
    if evidence.organisation != tx.creator.org {
        return Err(ContractError::Unauthorized(format!(
            "{} is not an auditor of {}",
            tx.creator, evidence.organisation
        )));
    }
    let prefix = certificate_prefix(key);
    let seq = world.scan(&prefix).count() as u64;
    let cert = Certificate {
        evidence_key: key.clone(),
        seq,
        date: tx.timestamp.clone(),
        auditor: tx.creator.clone(),
        result,
        detail: a[2].clone(),
    };
    Ok(vec![Write::public(
        seq_key(&prefix, seq),
        serde_json::to_string(&cert).expect("certificate serializes"),
    )])
}

fn reject(reason: impl Into<String>, columns: Vec<String>) -> ContractError {
    ContractError::UpdateRejected {
        reason: reason.into(),
        columns,
    }
}

fn transient_record(tx: &Transaction, name: &str) -> Result<VerificationRecord, ContractError> {
    let raw = tx
        .transient
        .get(name)
        .ok_or_else(|| reject(format!("missing {name}"), vec![]))?;
    VerificationRecord::from_bytes(raw).map_err(|e| reject(format!("{name}: {e}"), vec![]))
}

/// Compares old and new records: only GDPR-flagged columns may change.
pub fn check_update(
    old: &VerificationRecord,
    new: &VerificationRecord,
) -> Result<(), ContractError> {
    if old.id.organization != new.id.organization
        || old.id.table_id != new.id.table_id
        || old.id.batch_id != new.id.batch_id
    {
        return Err(reject("records identify different batches", vec![]));
    }
    let (o, n) = (&old.v, &new.v);
    if o.traceability != n.traceability {
        return Err(reject("traceability level changed", vec![]));
    }
    if o.cols != n.cols {
        return Err(reject("column set changed", vec![]));
    }
    let og: BTreeSet<&String> = o.gdpr.iter().collect();
    let ng: BTreeSet<&String> = n.gdpr.iter().collect();
    if og != ng {
        return Err(reject("GDPR column set changed", vec![]));
    }
    if o.rows != n.rows {
        return Err(reject("row count changed", vec![]));
    }
    let (od, nd) = (o.column_digests(), n.column_digests());
    let changed: Vec<String> = o
        .cols
        .iter()
        .filter(|c| !o.is_gdpr(c) && od.get(*c) != nd.get(*c))
        .cloned()
        .collect();
    if !changed.is_empty() {
        return Err(reject("non-GDPR columns changed", changed));
    }
    if o.gdpr_hash != n.gdpr_hash {
        return Err(reject("hash over non-GDPR data changed", vec![]));
    }
    Ok(())
}

fn update_evidence(tx: &Transaction, world: &World, policy: &AccessPolicy) -> Outcome {
    let a = expect_args(tx, 4)?;
    let key = &a[0];
    let new_h_v = parse_digest("new verification hash", &a[1])?;
    let new_h_l = LocationHash::from(parse_digest("new location hash", &a[2])?);
    let reason = &a[3];
    let mut evidence = load_evidence(world, key)?;
    match policy.gdpr_cleanup_client() {
        Some(client) if *client != tx.creator => {
            return Err(ContractError::Unauthorized(format!(
                "only {client} may update evidence"
            )))
        }
        Some(_) => {}
        None => {
            if tx.creator.org != evidence.organisation
                || !(policy.has_role(&tx.creator, Role::Cleanup)
                    || policy.has_role(&tx.creator, Role::Writer))
            {
                return Err(ContractError::Unauthorized(format!(
                    "{} may not update evidence of {}",
                    tx.creator, evidence.organisation
                )));
            }
        }
    }
    let old = transient_record(tx, TRANSIENT_OLD_RECORD)?;
    let new = transient_record(tx, TRANSIENT_NEW_RECORD)?;
    if old.v.h_v != evidence.verification_hash
        || old.id.organization != evidence.organisation
        || old.id.table_id != evidence.table_name
        || old.id.batch_id != evidence.batch_id
    {
        return Err(reject(
            "old record does not match the anchored evidence",
            vec![],
        ));
    }
    if new.v.h_v != new_h_v {
        return Err(reject(
            "new record does not carry the new verification hash",
            vec![],
        ));
    }
    check_update(&old, &new)?;
    let (_, material) = transient_keys(tx)?.ok_or_else(|| {
        ContractError::Validation("new key material must be passed in the transient map".into())
    })?;

    let prefix = update_prefix(key);
    let seq = world.scan(&prefix).count() as u64;
    let log = UpdateLog {
        evidence_key: key.clone(),
        seq,
        old_h_v: evidence.verification_hash,
        new_h_v,
        old_h_l: evidence.location_hash,
        new_h_l,
        user: tx.creator.clone(),
        reason: reason.clone(),
        timestamp: tx.timestamp.clone(),
    };
    evidence.verification_hash = new_h_v;
    evidence.location_hash = new_h_l;
    Ok(vec![
        Write::public(
            key.clone(),
            serde_json::to_string(&evidence).expect("evidence serializes"),
        ),
        Write::public(
            seq_key(&prefix, seq),
            serde_json::to_string(&log).expect("log serializes"),
        ),
        private_write(key, &material, &evidence.organisation),
    ])
}
