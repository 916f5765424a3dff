//! Single-use payment tokens.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PaymentToken;
use crate::protocol::ResponseCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenState {
    Issued,
    Redeemed,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub amount: f64,
    pub payer: String,
    pub state: TokenState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payee: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PaymentError {
    #[error("amount must be finite and > 0")]
    InvalidAmount,
    #[error("unknown token")]
    UnknownToken,
    #[error("token worth {amount} does not cover {required}")]
    Insufficient { amount: f64, required: f64 },
    #[error("token already redeemed")]
    AlreadyRedeemed,
    #[error("token is not in the redeemed state")]
    InvalidRefund,
    #[error("payment service unavailable: {0}")]
    Unavailable(String),
    #[error("ledger storage: {0}")]
    Storage(String),
}

impl PaymentError {
    /// Code used in `ERR` replies of the payment line protocol.
    pub fn wire_code(&self) -> u16 {
        match self {
            PaymentError::UnknownToken | PaymentError::Insufficient { .. } => 402,
            PaymentError::AlreadyRedeemed => 409,
            PaymentError::InvalidAmount | PaymentError::InvalidRefund => 422,
            PaymentError::Unavailable(_) | PaymentError::Storage(_) => 503,
        }
    }

    /// Code reported to a sender whose PAY failed.
    pub fn response_code(&self) -> ResponseCode {
        match self {
            PaymentError::AlreadyRedeemed => ResponseCode::DuplicateToken,
            _ => ResponseCode::PaymentRequired,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LedgerEntry {
    Issue { token: String, amount: f64, payer: String },
    Redeem { token: String, payee: String },
    Refund { token: String },
}

struct Inner {
    records: BTreeMap<String, TokenRecord>,
    log: Option<File>,
}

impl Inner {
    fn append(&mut self, entry: &LedgerEntry) -> Result<(), PaymentError> {
        if let Some(f) = self.log.as_mut() {
            let mut line = serde_json::to_vec(entry).map_err(|e| PaymentError::Storage(e.to_string()))?;
            line.push(b'\n');
            f.write_all(&line)
                .and_then(|_| f.sync_data())
                .map_err(|e| PaymentError::Storage(e.to_string()))?;
        }
        Ok(())
    }

    fn apply(&mut self, entry: LedgerEntry) {
        match entry {
            LedgerEntry::Issue { token, amount, payer } => {
                self.records.insert(token, TokenRecord { amount, payer, state: TokenState::Issued, payee: None });
            }
            LedgerEntry::Redeem { token, payee } => {
                if let Some(r) = self.records.get_mut(&token) {
                    r.state = TokenState::Redeemed;
                    r.payee = Some(payee);
                }
            }
            LedgerEntry::Refund { token } => {
                if let Some(r) = self.records.get_mut(&token) {
                    r.state = TokenState::Refunded;
                }
            }
        }
    }
}

/// Token ledger. Every mutation is a single critical section, so
/// redemption is an atomic check-and-set. With a backing file each change
/// is appended and synced before the call returns.
pub struct TokenLedger {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl TokenLedger {
    pub fn in_memory() -> Self {
        TokenLedger {
            inner: Mutex::new(Inner { records: BTreeMap::new(), log: None }),
            path: None,
        }
    }

    /// Opens or creates a JSON-lines ledger, replaying existing entries.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut inner = Inner { records: BTreeMap::new(), log: None };
        if path.exists() {
            super::jsonl::replay(path, |e| inner.apply(e))?;
        }
        inner.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(TokenLedger { inner: Mutex::new(inner), path: Some(path.to_path_buf()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn issue(&self, payer: &str, amount: f64) -> Result<PaymentToken, PaymentError> {
        if !(amount.is_finite() && amount > 0.0) {
            return Err(PaymentError::InvalidAmount);
        }
        let mut inner = self.lock();
        let token = loop {
            let t = format!("{:032x}", rand::rng().random::<u128>());
            if !inner.records.contains_key(&t) {
                break t;
            }
        };
        let entry = LedgerEntry::Issue { token: token.clone(), amount, payer: payer.to_string() };
        inner.append(&entry)?;
        inner.apply(entry);
        Ok(PaymentToken(token))
    }

    /// Returns the token's face amount on success.
    pub fn verify_and_redeem(&self, token: &PaymentToken, required: f64, payee: &str) -> Result<f64, PaymentError> {
        let mut inner = self.lock();
        let rec = inner.records.get(&token.0).ok_or(PaymentError::UnknownToken)?;
        match rec.state {
            TokenState::Issued => {}
            TokenState::Redeemed | TokenState::Refunded => return Err(PaymentError::AlreadyRedeemed),
        }
        if rec.amount < required {
            return Err(PaymentError::Insufficient { amount: rec.amount, required });
        }
        let amount = rec.amount;
        let entry = LedgerEntry::Redeem { token: token.0.clone(), payee: payee.to_string() };
        inner.append(&entry)?;
        inner.apply(entry);
        Ok(amount)
    }

    pub fn refund(&self, token: &PaymentToken) -> Result<(), PaymentError> {
        let mut inner = self.lock();
        match inner.records.get(&token.0).map(|r| r.state) {
            Some(TokenState::Redeemed) => {}
            _ => return Err(PaymentError::InvalidRefund),
        }
        let entry = LedgerEntry::Refund { token: token.0.clone() };
        inner.append(&entry)?;
        inner.apply(entry);
        Ok(())
    }

    pub fn get(&self, token: &PaymentToken) -> Option<TokenRecord> {
        self.lock().records.get(&token.0).cloned()
    }

    pub fn snapshot(&self) -> BTreeMap<String, TokenRecord> {
        self.lock().records.clone()
    }

    pub fn count(&self, state: TokenState) -> usize {
        self.lock().records.values().filter(|r| r.state == state).count()
    }
}
