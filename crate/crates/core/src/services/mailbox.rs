//! Recipient mailbox: durable queues plus the live policy state of each
//! class.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use super::identity::{IdentityError, IdentityRegistry};
use super::ledger::{PaymentError, TokenLedger};
use super::queue::{QueueError, QueueStore, RecipientCredentials, StoredMessage};
use crate::model::{Catalog, ClassOfService, PaymentToken};
use crate::policy::{commit, decide, drain, quote_price, record_offer, update_adaptive, Outcome, PolicyState};
use crate::protocol::receiver::{AdmitOutcome, AdmitRequest, IdentityClient, MessageStore, PaymentClient};
use crate::protocol::DeliveryState;

/// Offers between adaptive price updates.
pub const ADAPT_WINDOW: u64 = 5;

pub struct Mailbox {
    store: QueueStore,
    policy: Mutex<BTreeMap<String, PolicyState>>,
}

fn rebuild_policy(store: &QueueStore, catalog: &Catalog) -> BTreeMap<String, PolicyState> {
    catalog
        .classes
        .iter()
        .map(|c| {
            let state = store
                .queued(&c.cos_id)
                .iter()
                .fold(PolicyState::new(&c.pricing), |s, m| commit(&s, m.predicted_minutes));
            (c.cos_id.clone(), state)
        })
        .collect()
}

impl Mailbox {
    pub fn in_memory(catalog: &Catalog, credentials: RecipientCredentials) -> Self {
        let store = QueueStore::in_memory(catalog, credentials);
        let policy = Mutex::new(rebuild_policy(&store, catalog));
        Mailbox { store, policy }
    }

    /// Opens the queues under `dir`; policy state of queued messages is
    /// recommitted from the replayed entries.
    pub fn open(dir: &Path, catalog: &Catalog, credentials: RecipientCredentials) -> std::io::Result<Self> {
        let store = QueueStore::open(dir, catalog, credentials)?;
        let policy = Mutex::new(rebuild_policy(&store, catalog));
        Ok(Mailbox { store, policy })
    }

    pub fn store(&self) -> &QueueStore {
        &self.store
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, PolicyState>> {
        self.policy.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn policy_state(&self, cos_id: &str) -> Option<PolicyState> {
        self.lock().get(cos_id).cloned()
    }

    /// Retrieves messages and releases their committed reading time.
    pub fn fetch(
        &self,
        cos_id: &str,
        recipient_id: &str,
        credential: &str,
        max_n: usize,
    ) -> Result<Vec<StoredMessage>, QueueError> {
        let batch = self.store.fetch(cos_id, recipient_id, credential, max_n)?;
        let mut policy = self.lock();
        if let Some(state) = policy.get_mut(cos_id) {
            for m in &batch {
                *state = drain(state, m.predicted_minutes);
            }
        }
        Ok(batch)
    }
}

impl MessageStore for Mailbox {
    fn quote(&self, cos: &ClassOfService) -> (f64, bool) {
        let policy = self.lock();
        let price = policy.get(&cos.cos_id).map_or(cos.pricing.base_price, |s| quote_price(&cos.pricing, s));
        let available = self.store.queued_len(&cos.cos_id).is_some_and(|n| n < cos.capacity);
        (price, available)
    }

    fn admit(&self, req: AdmitRequest<'_>) -> Result<AdmitOutcome, String> {
        let cos = req.cos;
        let mut policy = self.lock();
        let state = policy
            .get(&cos.cos_id)
            .cloned()
            .unwrap_or_else(|| PolicyState::new(&cos.pricing));
        let decision = decide(&cos.pricing, &state, req.predicted_minutes, req.predicted_benefit, req.offered_payment)
            .map_err(|e| e.to_string())?;
        let mut next = record_offer(&state, decision.is_accept());
        let outcome = match decision.outcome {
            Outcome::Accept => match self.store.enqueue(&cos.cos_id, req.message, req.predicted_minutes) {
                Ok(receipt_id) => {
                    next = commit(&next, req.predicted_minutes);
                    AdmitOutcome::Accepted { receipt_id }
                }
                Err(QueueError::QueueFull(_)) => AdmitOutcome::QueueFull,
                Err(e) => return Err(e.to_string()),
            },
            Outcome::NeedsPayment(p) => AdmitOutcome::NeedsPayment(p),
            Outcome::Reject => AdmitOutcome::Rejected(decision.reason),
        };
        if next.window_offer_count >= ADAPT_WINDOW {
            next = update_adaptive(&cos.pricing, &next);
        }
        policy.insert(cos.cos_id.clone(), next);
        Ok(outcome)
    }

    fn status(&self, message_id: &str) -> DeliveryState {
        self.store.status(message_id)
    }
}

impl PaymentClient for TokenLedger {
    fn verify_and_redeem(&self, token: &PaymentToken, required: f64, payee: &str) -> Result<f64, PaymentError> {
        TokenLedger::verify_and_redeem(self, token, required, payee)
    }

    fn refund(&self, token: &PaymentToken) -> Result<(), PaymentError> {
        TokenLedger::refund(self, token)
    }
}

impl IdentityClient for IdentityRegistry {
    fn check(&self, sender_id: &str, digest: &str, authenticator: &str) -> Result<(), IdentityError> {
        IdentityRegistry::check(self, sender_id, digest, authenticator)
    }
}
