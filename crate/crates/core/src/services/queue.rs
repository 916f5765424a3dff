//! Durable per-class FIFO queues.
//!
//! Each class has an append-only JSON-lines file `queue-<cos_id>.jsonl`
//! holding `enqueue` and `deliver` records. Replaying the file rebuilds the
//! queue exactly. Appends are synced before the call returns.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::model::{Catalog, Message};
use crate::protocol::DeliveryState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMessage {
    pub receipt_id: u64,
    pub enqueued_at_ms: u64,
    pub delivered: bool,
    /// Reading minutes committed against the class when admitted.
    #[serde(default)]
    pub predicted_minutes: f64,
    pub message: Message,
}

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("queue `{0}` is full")]
    QueueFull(String),
    #[error("unknown class of service `{0}`")]
    NotFound(String),
    #[error("recipient credentials rejected")]
    AuthFailed,
    #[error("queue storage: {0}")]
    Storage(#[from] std::io::Error),
}

impl QueueError {
    pub fn wire_code(&self) -> u16 {
        match self {
            QueueError::QueueFull(_) => 507,
            QueueError::NotFound(_) => 404,
            QueueError::AuthFailed => 401,
            QueueError::Storage(_) => 550,
        }
    }
}

/// Who may fetch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipientCredentials {
    pub recipient_id: String,
    pub credential: String,
}

impl RecipientCredentials {
    fn matches(&self, recipient_id: &str, credential: &str) -> bool {
        let id_ok = self.recipient_id.as_bytes().ct_eq(recipient_id.as_bytes());
        let cred_ok = self.credential.as_bytes().ct_eq(credential.as_bytes());
        bool::from(id_ok & cred_ok)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum QueueRecord {
    Enqueue(StoredMessage),
    Deliver { receipt_ids: Vec<u64> },
}

struct Queue {
    capacity: usize,
    entries: Vec<StoredMessage>,
    /// Index of the oldest undelivered entry.
    head: usize,
    log: Option<File>,
}

impl Queue {
    fn queued(&self) -> usize {
        self.entries.len() - self.head
    }

    fn append(&mut self, rec: &QueueRecord) -> std::io::Result<()> {
        if let Some(f) = self.log.as_mut() {
            let mut line = serde_json::to_vec(rec)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }

    fn apply(&mut self, rec: QueueRecord) {
        match rec {
            QueueRecord::Enqueue(m) => self.entries.push(m),
            QueueRecord::Deliver { receipt_ids } => {
                for id in receipt_ids {
                    if let Some(e) = self.entries.iter_mut().find(|e| e.receipt_id == id) {
                        e.delivered = true;
                    }
                }
                while self.head < self.entries.len() && self.entries[self.head].delivered {
                    self.head += 1;
                }
            }
        }
    }
}

pub struct QueueStore {
    queues: Mutex<BTreeMap<String, Queue>>,
    credentials: RecipientCredentials,
    dir: Option<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn queue_file(dir: &Path, cos_id: &str) -> PathBuf {
    dir.join(format!("queue-{cos_id}.jsonl"))
}

impl QueueStore {
    pub fn in_memory(catalog: &Catalog, credentials: RecipientCredentials) -> Self {
        let queues = catalog
            .classes
            .iter()
            .map(|c| (c.cos_id.clone(), Queue { capacity: c.capacity, entries: Vec::new(), head: 0, log: None }))
            .collect();
        QueueStore { queues: Mutex::new(queues), credentials, dir: None }
    }

    /// Opens the queues under `dir`, replaying any existing files.
    pub fn open(dir: &Path, catalog: &Catalog, credentials: RecipientCredentials) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut queues = BTreeMap::new();
        for c in &catalog.classes {
            let path = queue_file(dir, &c.cos_id);
            let mut q = Queue { capacity: c.capacity, entries: Vec::new(), head: 0, log: None };
            if path.exists() {
                super::jsonl::replay(&path, |rec| q.apply(rec))?;
            }
            q.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
            queues.insert(c.cos_id.clone(), q);
        }
        Ok(QueueStore { queues: Mutex::new(queues), credentials, dir: Some(dir.to_path_buf()) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, Queue>> {
        self.queues.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn enqueue(&self, cos_id: &str, message: Message, predicted_minutes: f64) -> Result<u64, QueueError> {
        let mut queues = self.lock();
        let q = queues.get_mut(cos_id).ok_or_else(|| QueueError::NotFound(cos_id.to_string()))?;
        if q.queued() >= q.capacity {
            return Err(QueueError::QueueFull(cos_id.to_string()));
        }
        let receipt_id = q.entries.last().map_or(1, |e| e.receipt_id + 1);
        let rec = QueueRecord::Enqueue(StoredMessage {
            receipt_id,
            enqueued_at_ms: now_ms(),
            delivered: false,
            predicted_minutes,
            message,
        });
        q.append(&rec)?;
        q.apply(rec);
        Ok(receipt_id)
    }

    /// Returns up to `max_n` oldest undelivered messages and marks them
    /// delivered.
    pub fn fetch(
        &self,
        cos_id: &str,
        recipient_id: &str,
        credential: &str,
        max_n: usize,
    ) -> Result<Vec<StoredMessage>, QueueError> {
        if !self.credentials.matches(recipient_id, credential) {
            return Err(QueueError::AuthFailed);
        }
        let mut queues = self.lock();
        let q = queues.get_mut(cos_id).ok_or_else(|| QueueError::NotFound(cos_id.to_string()))?;
        let batch: Vec<StoredMessage> = q.entries[q.head..].iter().take(max_n).cloned().collect();
        if batch.is_empty() {
            return Ok(batch);
        }
        let rec = QueueRecord::Deliver { receipt_ids: batch.iter().map(|m| m.receipt_id).collect() };
        q.append(&rec)?;
        q.apply(rec);
        Ok(batch
            .into_iter()
            .map(|mut m| {
                m.delivered = true;
                m
            })
            .collect())
    }

    pub fn queued_len(&self, cos_id: &str) -> Option<usize> {
        self.lock().get(cos_id).map(Queue::queued)
    }

    /// Queued entries of one class, oldest first.
    pub fn queued(&self, cos_id: &str) -> Vec<StoredMessage> {
        self.lock().get(cos_id).map(|q| q.entries[q.head..].to_vec()).unwrap_or_default()
    }

    /// All entries, delivered ones included, oldest first.
    pub fn entries(&self, cos_id: &str) -> Vec<StoredMessage> {
        self.lock().get(cos_id).map(|q| q.entries.clone()).unwrap_or_default()
    }

    pub fn status(&self, message_id: &str) -> DeliveryState {
        let queues = self.lock();
        let mut state = DeliveryState::Unknown;
        for q in queues.values() {
            for e in q.entries.iter().filter(|e| e.message.id == message_id) {
                state = if e.delivered { DeliveryState::Delivered } else { DeliveryState::Queued };
            }
        }
        state
    }
}
