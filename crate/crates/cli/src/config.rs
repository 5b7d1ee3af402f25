use std::path::{Path, PathBuf};
use std::sync::Arc;

use auditem::ledger::{LedgerConfig, MemberId};
use auditem::{AccessPolicy, ContentStore, DiskStore, Identity, Ledger, MemoryStore};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CasBackend {
    #[default]
    Disk,
    Memory,
}

/// The client-side keys of the config file. The same file also carries the
/// authorization table (`members`, `grants`, `gdpr_cleanup_client`).
#[derive(Debug, Deserialize)]
struct FileConfig {
    #[serde(default = "default_ledger")]
    ledger_path: PathBuf,
    #[serde(default)]
    cas_backend: CasBackend,
    #[serde(default = "default_cas")]
    cas_path: PathBuf,
    identity: Option<String>,
    /// Milliseconds of simulated ordering delay.
    #[serde(default)]
    commit_delay_ms: u64,
}

fn default_ledger() -> PathBuf {
    PathBuf::from("ledger")
}

fn default_cas() -> PathBuf {
    PathBuf::from("cas")
}

pub struct CliConfig {
    pub ledger_path: PathBuf,
    pub cas_backend: CasBackend,
    pub cas_path: PathBuf,
    pub identity: Option<MemberId>,
    pub commit_delay_ms: u64,
    pub policy: AccessPolicy,
}

impl CliConfig {
    /// Relative paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<CliConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let policy = AccessPolicy::from_toml_str(&text).map_err(|e| CliError::new("config", e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let identity = file
            .identity
            .map(|s| {
                MemberId::parse(&s).ok_or_else(|| {
                    CliError::new("config", format!("identity {s:?} is not org/user"))
                })
            })
            .transpose()?;
        Ok(CliConfig {
            ledger_path: base.join(file.ledger_path),
            cas_backend: file.cas_backend,
            cas_path: base.join(file.cas_path),
            identity,
            commit_delay_ms: file.commit_delay_ms,
            policy,
        })
    }

    pub fn identity(&self, override_name: Option<&str>) -> Result<Identity, CliError> {
        let id = match override_name {
            Some(s) => MemberId::parse(s).ok_or_else(|| {
                CliError::new("config", format!("identity {s:?} is not org/user"))
            })?,
            None => self
                .identity
                .clone()
                .ok_or_else(|| CliError::new("config", "no identity configured"))?,
        };
        self.policy.identity(&id.org, &id.user).ok_or_else(|| {
            CliError::new(
                "config",
                format!("identity {id} is not in the authorization table"),
            )
        })
    }

    pub fn ledger(&self) -> Result<Arc<Ledger>, CliError> {
        let cfg = LedgerConfig {
            commit_delay: std::time::Duration::from_millis(self.commit_delay_ms),
        };
        Ok(Arc::new(Ledger::open(
            &self.ledger_path,
            self.policy.clone(),
            cfg,
        )?))
    }

    pub fn store(&self) -> Result<Arc<dyn ContentStore>, CliError> {
        Ok(match self.cas_backend {
            CasBackend::Disk => Arc::new(DiskStore::open(&self.cas_path)?),
            CasBackend::Memory => Arc::new(MemoryStore::new()),
        })
    }
}
