//! Sender authentication by shared-secret MAC.
//!
//! `digest = hex(SHA-256(body))` and
//! `authenticator = hex(HMAC-SHA256(secret, digest))`, where the digest is
//! MACed as its 64 lowercase ASCII hex characters.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::error::{read_file, ConfigError};

type HmacSha256 = Hmac<Sha256>;

pub fn body_digest(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

pub fn compute_mac(secret: &[u8], digest: &str) -> String {
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(digest.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

/// Authenticator a sender attaches for `body`.
pub fn authenticate_body(secret: &[u8], body: &[u8]) -> String {
    compute_mac(secret, &body_digest(body))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("unknown sender")]
    UnknownSender,
    #[error("bad authenticator")]
    BadMac,
    #[error("identity service unavailable: {0}")]
    Unavailable(String),
}

impl IdentityError {
    pub fn wire_code(&self) -> u16 {
        match self {
            IdentityError::UnknownSender | IdentityError::BadMac => 401,
            IdentityError::Unavailable(_) => 503,
        }
    }
}

/// On-disk form: `{"secrets": {"alice": "secret", ...}}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    pub secrets: BTreeMap<String, String>,
}

#[derive(Debug, Default)]
pub struct IdentityRegistry {
    secrets: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl IdentityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(file: &RegistryFile) -> Result<Self, ConfigError> {
        let reg = Self::new();
        for (id, secret) in &file.secrets {
            reg.register(id, secret.as_bytes())?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read_file(path)?;
        Self::from_file(&serde_json::from_str(&text)?)
    }

    pub fn register(&self, sender_id: &str, secret: &[u8]) -> Result<(), ConfigError> {
        if secret.is_empty() {
            return Err(ConfigError::invalid("secrets", format!("secret for `{sender_id}` is empty")));
        }
        if sender_id.is_empty() || sender_id.contains(char::is_whitespace) {
            return Err(ConfigError::invalid("secrets", format!("bad sender id `{sender_id}`")));
        }
        self.secrets
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(sender_id.to_string(), secret.to_vec());
        Ok(())
    }

    pub fn check(&self, sender_id: &str, digest: &str, authenticator: &str) -> Result<(), IdentityError> {
        let secrets = self.secrets.read().unwrap_or_else(|p| p.into_inner());
        let secret = secrets.get(sender_id).ok_or(IdentityError::UnknownSender)?;
        let expected = compute_mac(secret, digest);
        if bool::from(expected.as_bytes().ct_eq(authenticator.to_ascii_lowercase().as_bytes())) {
            Ok(())
        } else {
            Err(IdentityError::BadMac)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vectors() {
        assert_eq!(body_digest(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        // RFC 4231 test case 2.
        let mut mac = HmacSha256::new_from_slice(b"Jefe").unwrap();
        mac.update(b"what do ya want for nothing?");
        assert_eq!(
            hex::encode(mac.finalize().into_bytes()),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn check_outcomes() {
        let reg = IdentityRegistry::new();
        reg.register("alice", b"k1").unwrap();
        let d = body_digest(b"hello");
        assert_eq!(reg.check("alice", &d, &compute_mac(b"k1", &d)), Ok(()));
        assert_eq!(reg.check("alice", &d, &compute_mac(b"k2", &d)), Err(IdentityError::BadMac));
        assert_eq!(reg.check("alice", &d, "zz"), Err(IdentityError::BadMac));
        assert_eq!(reg.check("mallory", &d, &compute_mac(b"k1", &d)), Err(IdentityError::UnknownSender));
        assert!(reg.register("bob", b"").is_err());
    }
}
