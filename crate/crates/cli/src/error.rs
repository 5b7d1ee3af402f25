use std::fmt;

use auditem::cas::CasError;
use auditem::divt::DivtError;
use auditem::ledger::{ContractError, LedgerError};
use auditem::warehouse::WarehouseError;

/// Printed as `error[class]: message`.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: &'static str, message: impl fmt::Display) -> Self {
        CliError {
            class,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {one_line}", self.class)
    }
}

impl From<DivtError> for CliError {
    fn from(e: DivtError) -> Self {
        CliError::new(e.class(), e)
    }
}

impl From<ContractError> for CliError {
    fn from(e: ContractError) -> Self {
        let class = match e {
            ContractError::Duplicate { .. } => "duplicate",
            ContractError::NotFound { .. } => "not-found",
            ContractError::Unauthorized(_) | ContractError::AccessDenied { .. } => "access",
            ContractError::UpdateRejected { .. } => "update-rejected",
            ContractError::Validation(_) | ContractError::UnknownFunction(_) => "invalid",
        };
        CliError::new(class, e)
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::Contract(c) => c.into(),
            LedgerError::InvalidSignature(_) | LedgerError::UnknownIdentity(_) => {
                CliError::new("access", e)
            }
            LedgerError::Storage(_) => CliError::new("ledger", e),
        }
    }
}

impl From<CasError> for CliError {
    fn from(e: CasError) -> Self {
        let class = match e {
            CasError::NotFound(_) => "not-found",
            CasError::Corrupt { .. } => "corrupt",
            _ => "cas",
        };
        CliError::new(class, e)
    }
}

impl From<WarehouseError> for CliError {
    fn from(e: WarehouseError) -> Self {
        CliError::new("warehouse", e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e)
    }
}
