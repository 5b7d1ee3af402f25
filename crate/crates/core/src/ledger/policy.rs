//! Consortium membership: signing identities, roles and cross-org grants.
//!
//! Identities are simulated. Each member holds a 32-byte secret and signs
//! with HMAC-SHA256; the ledger verifies against the same table. A member
//! without a configured secret gets one derived from its name, which is
//! only suitable for local simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::digest::Digest;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("cannot read policy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid policy: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Uploads batches: creates evidence and private keys.
    Writer,
    /// Internal auditor: reads private keys of its org, writes certificates.
    Auditor,
    /// External auditor: reads certificates it has been granted.
    External,
    /// GDPR cleanup client.
    Cleanup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Certificates,
    PrivateKeys,
}

/// `org/user` name of a member.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemberId {
    pub org: String,
    pub user: String,
}

impl MemberId {
    pub fn new(org: impl Into<String>, user: impl Into<String>) -> Self {
        MemberId {
            org: org.into(),
            user: user.into(),
        }
    }

    /// Parses `org/user`.
    pub fn parse(text: &str) -> Option<Self> {
        let (org, user) = text.split_once('/')?;
        (!org.is_empty() && !user.is_empty()).then(|| MemberId::new(org, user))
    }
}

impl fmt::Display for MemberId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.org, self.user)
    }
}

/// A signing identity held by a client.
#[derive(Clone, PartialEq, Eq)]
pub struct Identity {
    id: MemberId,
    secret: [u8; 32],
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identity({})", self.id)
    }
}

impl Identity {
    pub fn new(org: impl Into<String>, user: impl Into<String>, secret: [u8; 32]) -> Self {
        Identity {
            id: MemberId::new(org, user),
            secret,
        }
    }

    pub fn id(&self) -> &MemberId {
        &self.id
    }

    pub fn org(&self) -> &str {
        &self.id.org
    }

    pub fn user(&self) -> &str {
        &self.id.user
    }

    /// HMAC-SHA256 over `(org, user, payload)`.
    pub fn sign(&self, payload: &[u8]) -> Digest {
        sign_with(&self.secret, &self.id, payload)
    }
}

fn sign_with(secret: &[u8; 32], id: &MemberId, payload: &[u8]) -> Digest {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(id.org.as_bytes());
    mac.update(&[0x1F]);
    mac.update(id.user.as_bytes());
    mac.update(&[0x1F]);
    mac.update(payload);
    Digest::from_bytes(mac.finalize().into_bytes().into())
}

fn derived_secret(id: &MemberId) -> [u8; 32] {
    *Digest::of(format!("auditem-simulated-identity\x1f{}\x1f{}", id.org, id.user).as_bytes())
        .as_bytes()
}

#[derive(Debug, Clone)]
struct Member {
    roles: BTreeSet<Role>,
    secret: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    /// Organization whose data is shared.
    pub owner: String,
    pub grantee: String,
    pub scopes: BTreeSet<Scope>,
}

/// Static org/role table plus grants, loaded from TOML:
///
/// ```toml
/// gdpr_cleanup_client = "Electron/cleanup"   # optional
///
/// [[members]]
/// org = "Electron"
/// user = "alice"
/// roles = ["writer"]
/// secret = "<64 hex chars>"                  # optional
///
/// [[grants]]
/// owner = "Electron"
/// grantee = "AuditCo"
/// scopes = ["certificates"]
/// ```
#[derive(Debug, Clone, Default)]
pub struct AccessPolicy {
    members: BTreeMap<MemberId, Member>,
    grants: Vec<Grant>,
    gdpr_cleanup_client: Option<MemberId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberFile {
    org: String,
    user: String,
    roles: BTreeSet<Role>,
    secret: Option<String>,
}

#[derive(Deserialize)]
struct PolicyFile {
    #[serde(default)]
    gdpr_cleanup_client: Option<String>,
    #[serde(default)]
    members: Vec<MemberFile>,
    #[serde(default)]
    grants: Vec<Grant>,
}

impl AccessPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a member and returns its signing identity.
    pub fn add_member(
        &mut self,
        org: &str,
        user: &str,
        roles: impl IntoIterator<Item = Role>,
    ) -> Identity {
        let id = MemberId::new(org, user);
        let secret = derived_secret(&id);
        self.insert(id.clone(), roles.into_iter().collect(), secret);
        Identity { id, secret }
    }

    fn insert(&mut self, id: MemberId, roles: BTreeSet<Role>, secret: [u8; 32]) {
        self.members.insert(id, Member { roles, secret });
    }

    pub fn grant(&mut self, owner: &str, grantee: &str, scopes: impl IntoIterator<Item = Scope>) {
        self.grants.push(Grant {
            owner: owner.to_string(),
            grantee: grantee.to_string(),
            scopes: scopes.into_iter().collect(),
        });
    }

    pub fn set_gdpr_cleanup_client(&mut self, member: Option<MemberId>) {
        self.gdpr_cleanup_client = member;
    }

    pub fn gdpr_cleanup_client(&self) -> Option<&MemberId> {
        self.gdpr_cleanup_client.as_ref()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile =
            toml::from_str(text).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn from_file(file: PolicyFile) -> Result<Self, PolicyError> {
        let mut policy = AccessPolicy::new();
        for m in file.members {
            let id = MemberId::new(m.org, m.user);
            if id.org.is_empty() || id.user.is_empty() || id.org.contains(['|', '/']) {
                return Err(PolicyError::Invalid(format!("bad member name {id}")));
            }
            if policy.members.contains_key(&id) {
                return Err(PolicyError::Invalid(format!("member {id} listed twice")));
            }
            let secret = match m.secret {
                Some(hex_secret) => {
                    let mut s = [0u8; 32];
                    hex::decode_to_slice(&hex_secret, &mut s)
                        .map_err(|e| PolicyError::Invalid(format!("secret of {id}: {e}")))?;
                    s
                }
                None => derived_secret(&id),
            };
            policy.insert(id, m.roles, secret);
        }
        policy.grants = file.grants;
        if let Some(client) = file.gdpr_cleanup_client {
            let id = MemberId::parse(&client).ok_or_else(|| {
                PolicyError::Invalid(format!("gdpr_cleanup_client {client:?} is not org/user"))
            })?;
            if !policy.members.contains_key(&id) {
                return Err(PolicyError::Invalid(format!(
                    "gdpr_cleanup_client {id} is not a member"
                )));
            }
            policy.gdpr_cleanup_client = Some(id);
        }
        Ok(policy)
    }

    /// The signing identity of a configured member.
    pub fn identity(&self, org: &str, user: &str) -> Option<Identity> {
        let id = MemberId::new(org, user);
        self.members.get(&id).map(|m| Identity {
            id,
            secret: m.secret,
        })
    }

    pub fn members(&self) -> impl Iterator<Item = &MemberId> {
        self.members.keys()
    }

    pub fn verify(&self, id: &MemberId, payload: &[u8], signature: &Digest) -> bool {
        self.members
            .get(id)
            .is_some_and(|m| sign_with(&m.secret, id, payload) == *signature)
    }

    /// True iff `identity` holds the secret registered for its name.
    pub fn authenticate(&self, identity: &Identity) -> bool {
        self.members
            .get(&identity.id)
            .is_some_and(|m| m.secret == identity.secret)
    }

    pub fn has_role(&self, id: &MemberId, role: Role) -> bool {
        self.members
            .get(id)
            .is_some_and(|m| m.roles.contains(&role))
    }

    pub fn roles(&self, id: &MemberId) -> BTreeSet<Role> {
        self.members
            .get(id)
            .map(|m| m.roles.clone())
            .unwrap_or_default()
    }

    /// Whether members of `reader_org` may read `owner_org`'s data in `scope`.
    pub fn may_read(&self, reader_org: &str, owner_org: &str, scope: Scope) -> bool {
        reader_org == owner_org
            || self.grants.iter().any(|g| {
                g.owner == owner_org && g.grantee == reader_org && g.scopes.contains(&scope)
            })
    }
}
