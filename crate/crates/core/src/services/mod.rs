//! Long-running services: receiver (queues, alerts, retrieval), sender,
//! payment and identity, with their persistence and line protocols.

pub mod alert;
pub mod daemon;
pub mod identity;
pub(crate) mod jsonl;
pub mod ledger;
pub mod mailbox;
pub mod queue;
pub mod sending;
pub mod wire;

pub use alert::{AlertRecord, AlertSink, AlertSinkConfig};
pub use identity::{authenticate_body, body_digest, compute_mac, IdentityError, IdentityRegistry};
pub use ledger::{PaymentError, TokenLedger, TokenRecord, TokenState};
pub use mailbox::Mailbox;
pub use queue::{QueueError, QueueStore, RecipientCredentials, StoredMessage};
