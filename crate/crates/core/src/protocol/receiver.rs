//! Receiver-side session: quotes a class, verifies payment and identity,
//! applies the class policy and stores the message.

use serde::{Deserialize, Serialize};

use super::codes::ResponseCode;
use super::frame::{DeliveryState, Frame, ProtocolError, QueryDocument};
use super::sender::SessionState;
use super::sender::SessionState as S;
use crate::model::{match_cos, score_message, Catalog, ClassOfService, Message, PaymentToken, ScoringConfig};
use crate::policy::ReasonCode;
use crate::selection::{predict_read_time, ReadingTimeModel};
use crate::services::identity::{body_digest, IdentityError};
use crate::services::ledger::PaymentError;

pub trait PaymentClient: Send + Sync {
    /// Redeems `token` if it is unused and worth at least `required`;
    /// returns its face amount.
    fn verify_and_redeem(&self, token: &PaymentToken, required: f64, payee: &str) -> Result<f64, PaymentError>;
    fn refund(&self, token: &PaymentToken) -> Result<(), PaymentError>;
}

pub trait IdentityClient: Send + Sync {
    fn check(&self, sender_id: &str, digest: &str, authenticator: &str) -> Result<(), IdentityError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmitRequest<'a> {
    pub cos: &'a ClassOfService,
    pub message: Message,
    pub predicted_minutes: f64,
    pub predicted_benefit: f64,
    pub offered_payment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmitOutcome {
    Accepted { receipt_id: u64 },
    NeedsPayment(f64),
    Rejected(ReasonCode),
    QueueFull,
}

/// Per-class message storage with policy state. `admit` runs the policy
/// decision, the capacity check, the durable append and the policy commit
/// as one linearized step.
pub trait MessageStore: Send + Sync {
    /// Current quote and whether the class has room.
    fn quote(&self, cos: &ClassOfService) -> (f64, bool);
    fn admit(&self, req: AdmitRequest<'_>) -> Result<AdmitOutcome, String>;
    fn status(&self, message_id: &str) -> DeliveryState;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub recipient_id: String,
    pub catalog: Catalog,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default = "ReadingTimeModel::prior")]
    pub reading_model: ReadingTimeModel,
    /// Benefit units per predicted reading minute.
    #[serde(default = "default_benefit_rate")]
    pub benefit_rate: f64,
    /// Benefit units per admission-score point.
    #[serde(default = "default_score_weight")]
    pub score_weight: f64,
}

fn default_benefit_rate() -> f64 {
    5.0
}

fn default_score_weight() -> f64 {
    1.0
}

impl ReceiverConfig {
    pub fn new(recipient_id: impl Into<String>, catalog: Catalog) -> Self {
        ReceiverConfig {
            recipient_id: recipient_id.into(),
            catalog,
            scoring: ScoringConfig::default(),
            reading_model: ReadingTimeModel::prior(),
            benefit_rate: default_benefit_rate(),
            score_weight: default_score_weight(),
        }
    }
}

pub struct ReceiverDeps<'a> {
    pub config: &'a ReceiverConfig,
    pub payment: &'a dyn PaymentClient,
    pub identity: &'a dyn IdentityClient,
    pub store: &'a dyn MessageStore,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiverEvent {
    Frame(Frame),
    /// The peer sent bytes that do not decode.
    Malformed(ProtocolError),
    ConnectionLost,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiverAction {
    Send(Frame),
    Alert { message_id: String, cos_id: String },
    Close,
}

#[derive(Debug, Clone)]
pub struct ReceiverSession {
    pub state: SessionState,
    pub sender_id: Option<String>,
    pub query: Option<QueryDocument>,
    pub cos_id: Option<String>,
    pub quoted_price: Option<f64>,
    /// Redeemed and not yet settled by acceptance or refund.
    pub paid: Option<(PaymentToken, f64)>,
    pub accepted: Option<String>,
}

impl Default for ReceiverSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ReceiverSession {
    pub fn new() -> Self {
        ReceiverSession {
            state: SessionState::Idle,
            sender_id: None,
            query: None,
            cos_id: None,
            quoted_price: None,
            paid: None,
            accepted: None,
        }
    }

    fn refund(&mut self, deps: &ReceiverDeps<'_>) {
        if let Some((token, _)) = self.paid.take() {
            if let Err(e) = deps.payment.refund(&token) {
                log::error!("refund of token {token} failed: {e}");
            }
        }
    }

    fn reject(&mut self, deps: &ReceiverDeps<'_>, code: ResponseCode, reason: impl Into<String>) -> Vec<ReceiverAction> {
        self.refund(deps);
        self.state = SessionState::Failed;
        vec![ReceiverAction::Send(Frame::rejected(code, reason))]
    }

    fn violation(&mut self, deps: &ReceiverDeps<'_>, reason: impl Into<String>) -> Vec<ReceiverAction> {
        let mut acts = self.reject(deps, ResponseCode::ProtocolViolation, reason);
        acts.push(ReceiverAction::Close);
        acts
    }

    pub fn step(&mut self, event: ReceiverEvent, deps: &ReceiverDeps<'_>) -> Vec<ReceiverAction> {
        let frame = match event {
            ReceiverEvent::ConnectionLost => {
                self.refund(deps);
                if !self.state.is_terminal() {
                    self.state = S::Failed;
                }
                return Vec::new();
            }
            ReceiverEvent::Malformed(e) => {
                if self.state.is_terminal() {
                    return vec![ReceiverAction::Close];
                }
                return self.violation(deps, e.to_string());
            }
            ReceiverEvent::Frame(f) => f,
        };
        match (self.state, frame) {
            (_, Frame::Quit) => {
                self.refund(deps);
                if !self.state.is_terminal() {
                    self.state = S::Failed;
                }
                vec![ReceiverAction::Close]
            }
            (S::Idle | S::Done, Frame::Status { message_id, state: DeliveryState::Query }) => {
                let state = deps.store.status(&message_id);
                vec![ReceiverAction::Send(Frame::Status { message_id, state })]
            }
            // A rejected session's pipelined frames are drained.
            (S::Failed, _) => Vec::new(),
            (S::Idle, Frame::Hello { sender_id }) => {
                self.sender_id = Some(sender_id);
                self.state = S::Hello;
                Vec::new()
            }
            (S::Hello, Frame::Query(doc)) => self.on_query(*doc, deps),
            (S::Quoted, Frame::Pay { token }) => self.on_pay(token, deps),
            (S::Quoted | S::Paying, Frame::Data { body }) => self.on_data(body, deps),
            (state, f) => self.violation(deps, format!("unexpected {} in state {state:?}", f.verb())),
        }
    }

    fn on_query(&mut self, doc: QueryDocument, deps: &ReceiverDeps<'_>) -> Vec<ReceiverAction> {
        let cfg = deps.config;
        let meta = &doc.message;
        if Some(&meta.sender_id) != self.sender_id.as_ref() {
            return self.violation(deps, "message sender differs from HELLO");
        }
        if let Err(e) = doc.profile.validate() {
            return self.violation(deps, e.to_string());
        }
        self.query = Some(doc.clone());
        let meta = &doc.message;
        if meta.recipient_id != cfg.recipient_id {
            self.state = S::Failed;
            return vec![ReceiverAction::Send(Frame::NoCos { reason: format!("unknown recipient {}", meta.recipient_id) })];
        }
        let classes: Vec<ClassOfService> = cfg
            .catalog
            .classes
            .iter()
            .filter(|c| match &meta.cos_id {
                Some(wanted) => &c.cos_id == wanted,
                None => c.admits_sender(&meta.sender_id),
            })
            .filter(|c| c.qos.flexibility.is_empty() || c.qos.flexibility.contains(&meta.format_tag))
            .cloned()
            .collect();
        let candidates = match_cos(&doc.profile, &classes);
        let quotes: Vec<(&ClassOfService, f64, bool)> = candidates
            .iter()
            .filter_map(|id| cfg.catalog.get(id))
            .map(|c| {
                let (p, avail) = deps.store.quote(c);
                (c, p, avail)
            })
            .collect();
        let chosen = quotes
            .iter()
            .find(|(_, p, _)| *p <= doc.profile.budget)
            .or_else(|| quotes.first());
        match chosen {
            Some((c, price, available)) => {
                self.cos_id = Some(c.cos_id.clone());
                self.quoted_price = Some(*price);
                self.state = S::Quoted;
                vec![ReceiverAction::Send(Frame::Quote { cos_id: c.cos_id.clone(), price: *price, available: *available })]
            }
            None => {
                self.state = S::Failed;
                vec![ReceiverAction::Send(Frame::NoCos { reason: "no class satisfies the profile".into() })]
            }
        }
    }

    fn on_pay(&mut self, token: PaymentToken, deps: &ReceiverDeps<'_>) -> Vec<ReceiverAction> {
        let price = self.quoted_price.unwrap_or(0.0);
        if price <= 0.0 {
            return self.violation(deps, "PAY on a free class");
        }
        match deps.payment.verify_and_redeem(&token, price, &deps.config.recipient_id) {
            Ok(amount) => {
                self.paid = Some((token, amount));
                self.state = S::Paying;
                Vec::new()
            }
            Err(e) => self.reject(deps, e.response_code(), e.to_string()),
        }
    }

    fn on_data(&mut self, body: Vec<u8>, deps: &ReceiverDeps<'_>) -> Vec<ReceiverAction> {
        let cfg = deps.config;
        let (Some(doc), Some(cos_id)) = (self.query.clone(), self.cos_id.clone()) else {
            return self.violation(deps, "DATA before a quote");
        };
        let meta = &doc.message;
        if meta.size_bytes != body.len() as u64 {
            return self.violation(deps, format!("declared {} bytes, received {}", meta.size_bytes, body.len()));
        }
        if self.quoted_price.unwrap_or(0.0) > 0.0 && self.paid.is_none() {
            return self.reject(deps, ResponseCode::PaymentRequired, "payment required");
        }
        let Some(cos) = cfg.catalog.get(&cos_id) else {
            return self.violation(deps, "negotiated class vanished");
        };
        if !cos.admits_sender(&meta.sender_id) {
            return self.reject(deps, ResponseCode::CosDenied, "trusted senders only");
        }
        if cos.requires_authentication() {
            let Some(mac) = doc.authenticator.as_deref() else {
                return self.reject(deps, ResponseCode::IdentityFailed, "authenticator required");
            };
            if let Err(e) = deps.identity.check(&meta.sender_id, &body_digest(&body), mac) {
                return self.reject(deps, ResponseCode::IdentityFailed, e.to_string());
            }
        }
        let message = Message {
            id: meta.id.clone(),
            sender_id: meta.sender_id.clone(),
            recipient_id: meta.recipient_id.clone(),
            size_bytes: meta.size_bytes,
            format_tag: meta.format_tag.clone(),
            body,
            stamp: meta.stamp.clone(),
            payment: self.paid.as_ref().map(|(t, _)| t.clone()),
            cos_id: Some(cos_id.clone()),
        };
        if let Err(e) = message.validate() {
            return self.violation(deps, e.to_string());
        }
        let (minutes, _) = predict_read_time(&cfg.reading_model, &meta.sender_id, meta.size_bytes);
        let score = score_message(meta, &cfg.scoring, meta.stamp.is_some());
        let benefit = cfg.benefit_rate * minutes + cfg.score_weight * score.total;
        let offered = self.paid.as_ref().map_or(0.0, |(_, a)| *a);
        let outcome = deps.store.admit(AdmitRequest {
            cos,
            message,
            predicted_minutes: minutes,
            predicted_benefit: benefit,
            offered_payment: offered,
        });
        match outcome {
            Ok(AdmitOutcome::Accepted { .. }) => {
                // The redemption is now settled by the acceptance.
                self.paid = None;
                self.state = S::Done;
                self.accepted = Some(meta.id.clone());
                let mut acts = vec![ReceiverAction::Send(Frame::Accepted { message_id: meta.id.clone() })];
                if cos.alert {
                    acts.push(ReceiverAction::Alert { message_id: meta.id.clone(), cos_id });
                }
                acts
            }
            Ok(AdmitOutcome::NeedsPayment(p)) => {
                self.reject(deps, ResponseCode::PaymentRequired, format!("price is now {p}"))
            }
            Ok(AdmitOutcome::Rejected(reason)) => {
                let text = serde_json::to_value(reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                self.reject(deps, ResponseCode::Congestion, text)
            }
            Ok(AdmitOutcome::QueueFull) => self.reject(deps, ResponseCode::QueueFull, "queue full"),
            Err(e) => {
                log::error!("storage failure admitting {}: {e}", meta.id);
                self.reject(deps, ResponseCode::ProtocolViolation, "storage failure")
            }
        }
    }
}
