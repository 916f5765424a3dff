//! Notifications for messages accepted into alert classes.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::net::UdpSocket;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub message_id: String,
    pub cos_id: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlertSinkConfig {
    /// Appends one JSON line per alert.
    LogFile {
        path: PathBuf,
        #[serde(default = "default_retries")]
        retries: u32,
    },
    /// Sends one JSON datagram per alert.
    Udp {
        addr: String,
        #[serde(default = "default_retries")]
        retries: u32,
    },
    /// Keeps records only in memory.
    Memory,
}

fn default_retries() -> u32 {
    2
}

/// Alert sink. Delivery failures are logged and never propagate to the
/// accepting session. Each message id alerts at most once.
pub struct AlertSink {
    config: AlertSinkConfig,
    seen: Mutex<BTreeSet<String>>,
    records: Mutex<Vec<AlertRecord>>,
}

impl AlertSink {
    pub fn new(config: AlertSinkConfig) -> Self {
        AlertSink { config, seen: Mutex::new(BTreeSet::new()), records: Mutex::new(Vec::new()) }
    }

    pub fn memory() -> Self {
        Self::new(AlertSinkConfig::Memory)
    }

    /// Emits the alert unless `message_id` already alerted. Returns the
    /// record when one was produced, whether or not the sink accepted it.
    pub fn dispatch(&self, message_id: &str, cos_id: &str) -> Option<AlertRecord> {
        if !self.seen.lock().unwrap_or_else(|p| p.into_inner()).insert(message_id.to_string()) {
            return None;
        }
        let rec = AlertRecord {
            message_id: message_id.to_string(),
            cos_id: cos_id.to_string(),
            timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        };
        let line = serde_json::to_string(&rec).expect("alert record serializes");
        let retries = match &self.config {
            AlertSinkConfig::LogFile { retries, .. } | AlertSinkConfig::Udp { retries, .. } => *retries,
            AlertSinkConfig::Memory => 0,
        };
        let mut delivered = false;
        for n in 0..=retries {
            match self.deliver_once(&line) {
                Ok(()) => {
                    delivered = true;
                    break;
                }
                Err(e) => log::warn!("alert for {message_id} attempt {} failed: {e}", n + 1),
            }
        }
        if !delivered {
            log::error!("alert for {message_id} dropped after {} attempts", retries + 1);
        }
        self.records.lock().unwrap_or_else(|p| p.into_inner()).push(rec.clone());
        Some(rec)
    }

    fn deliver_once(&self, line: &str) -> std::io::Result<()> {
        match &self.config {
            AlertSinkConfig::LogFile { path, .. } => {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                writeln!(f, "{line}")
            }
            AlertSinkConfig::Udp { addr, .. } => {
                let sock = UdpSocket::bind("0.0.0.0:0")?;
                sock.send_to(line.as_bytes(), addr.as_str()).map(|_| ())
            }
            AlertSinkConfig::Memory => Ok(()),
        }
    }

    pub fn records(&self) -> Vec<AlertRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}
