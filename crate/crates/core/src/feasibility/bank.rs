//! Rule-bank file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Provenance, RuleBank};
use crate::model::Env;
use crate::rules::{parse_rule, RuleError};

pub const BANK_VERSION: u32 = 1;
pub const BANK_FILE_NAME: &str = "pruned_rules_code.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub id: String,
    pub description: String,
    pub dsl_source: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankFile {
    pub version: u32,
    pub env: Env,
    pub rules: Vec<RuleRecord>,
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("unsupported rule-bank version {found} (expected {BANK_VERSION})")]
    Schema { found: u32 },
    #[error("rule {id} does not parse: {source}")]
    Rule { id: String, source: RuleError },
    #[error("rule {stored} re-parses with id {computed}")]
    IdMismatch { stored: String, computed: String },
    #[error("malformed rule-bank file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<&RuleBank> for BankFile {
    fn from(bank: &RuleBank) -> Self {
        BankFile {
            version: BANK_VERSION,
            env: bank.env,
            rules: bank
                .rules
                .iter()
                .zip(&bank.provenance)
                .map(|(r, p)| RuleRecord {
                    id: r.id.clone(),
                    description: r.description.clone(),
                    dsl_source: r.canonical_source(),
                    provenance: p.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<BankFile> for RuleBank {
    type Error = BankError;

    fn try_from(file: BankFile) -> Result<Self, BankError> {
        if file.version != BANK_VERSION {
            return Err(BankError::Schema { found: file.version });
        }
        let mut bank = RuleBank::empty(file.env);
        for rec in file.rules {
            let rule = parse_rule(file.env, &rec.dsl_source)
                .map_err(|source| BankError::Rule { id: rec.id.clone(), source })?
                .with_description(rec.description);
            if rule.id != rec.id {
                return Err(BankError::IdMismatch { stored: rec.id, computed: rule.id });
            }
            bank.rules.push(rule);
            bank.provenance.push(rec.provenance);
        }
        Ok(bank)
    }
}

pub fn bank_to_string(bank: &RuleBank) -> String {
    let mut s = serde_json::to_string_pretty(&BankFile::from(bank)).expect("bank serializes");
    s.push('\n');
    s
}

pub fn bank_from_str(text: &str) -> Result<RuleBank, BankError> {
    // Check the version before the full schema so old files get a clear error.
    let raw: serde_json::Value = serde_json::from_str(text)?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != u64::from(BANK_VERSION) {
            return Err(BankError::Schema { found: v as u32 });
        }
    }
    RuleBank::try_from(serde_json::from_value::<BankFile>(raw)?)
}

pub fn save_bank(bank: &RuleBank, path: &Path) -> Result<(), BankError> {
    fs::write(path, bank_to_string(bank))?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<RuleBank, BankError> {
    bank_from_str(&fs::read_to_string(path)?)
}
