//! Sender-side session: negotiates a class, pays, and transfers the body.

use serde::{Deserialize, Serialize};

use super::codes::ResponseCode;
use super::frame::{Frame, QueryDocument};
use crate::model::{Message, PaymentToken, SenderProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    /// HELLO and QUERY sent; awaiting QUOTE or NOCOS.
    Hello,
    /// Quote accepted; awaiting a token from the payment service.
    Quoted,
    /// Receiver side only: payment redeemed, awaiting DATA.
    Paying,
    /// DATA sent; awaiting ACCEPTED or REJECTED.
    Sending,
    Done,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Done | SessionState::Failed)
    }
}

/// Terminal outcome reported to the submitting user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Feedback {
    Delivered { message_id: String, cos_id: String, price: f64 },
    BudgetExceeded { price: f64, budget: f64 },
    NoSuitableClass { reason: String },
    Rejected { code: ResponseCode, reason: String },
}

impl Feedback {
    /// Process exit status for `send`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Feedback::Delivered { .. } => 0,
            Feedback::BudgetExceeded { .. } => 10,
            Feedback::NoSuitableClass { .. } => 11,
            Feedback::Rejected { code, .. } => match code {
                ResponseCode::IdentityFailed => 20,
                ResponseCode::PaymentRequired => 21,
                ResponseCode::CosDenied => 22,
                ResponseCode::DuplicateToken => 23,
                ResponseCode::Congestion => 24,
                ResponseCode::QueueFull => 25,
                ResponseCode::ProtocolViolation | ResponseCode::Accepted => 26,
            },
        }
    }

    pub fn code(&self) -> Option<ResponseCode> {
        match self {
            Feedback::Delivered { .. } => Some(ResponseCode::Accepted),
            Feedback::Rejected { code, .. } => Some(*code),
            _ => None,
        }
    }

    pub fn is_connection_loss(&self) -> bool {
        matches!(self, Feedback::Rejected { code: ResponseCode::ProtocolViolation, reason } if reason == CONNECTION_LOST)
    }
}

impl std::fmt::Display for Feedback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Feedback::Delivered { message_id, cos_id, price } => {
                write!(f, "DELIVERED {message_id} via {cos_id} price {price}")
            }
            Feedback::BudgetExceeded { price, budget } => {
                write!(f, "BUDGET_EXCEEDED quoted {price} over budget {budget}")
            }
            Feedback::NoSuitableClass { reason } => write!(f, "NO_SUITABLE_CLASS {reason}"),
            Feedback::Rejected { code, reason } => write!(f, "REJECTED {code} {reason}"),
        }
    }
}

pub const CONNECTION_LOST: &str = "connection lost";

#[derive(Debug, Clone, PartialEq)]
pub enum SenderEvent {
    Submit,
    Frame(Frame),
    TokenIssued(PaymentToken),
    TokenFailed(String),
    ConnectionLost,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SenderAction {
    Send(Frame),
    RequestToken { amount: f64 },
    Feedback(Feedback),
    Close,
}

/// Local event delivered in a state that cannot accept it.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {event} is illegal in state {state:?}")]
pub struct IllegalEvent {
    pub state: SessionState,
    pub event: &'static str,
}

#[derive(Debug, Clone)]
pub struct SenderSession {
    pub state: SessionState,
    pub cos_id: Option<String>,
    pub quoted_price: Option<f64>,
    pub budget_remaining: f64,
    pub message: Message,
    pub profile: SenderProfile,
    pub authenticator: Option<String>,
    pub token: Option<PaymentToken>,
    pub feedback: Option<Feedback>,
}

impl SenderSession {
    pub fn new(profile: SenderProfile, message: Message, authenticator: Option<String>) -> Self {
        SenderSession {
            state: SessionState::Idle,
            cos_id: None,
            quoted_price: None,
            budget_remaining: profile.budget,
            message,
            profile,
            authenticator,
            token: None,
            feedback: None,
        }
    }

    fn finish(&mut self, fb: Feedback, quit: bool) -> Vec<SenderAction> {
        self.state = if matches!(fb, Feedback::Delivered { .. }) {
            SessionState::Done
        } else {
            SessionState::Failed
        };
        self.feedback = Some(fb.clone());
        let mut actions = Vec::new();
        if quit {
            actions.push(SenderAction::Send(Frame::Quit));
        }
        actions.push(SenderAction::Feedback(fb));
        actions.push(SenderAction::Close);
        actions
    }

    fn violation(&mut self, reason: impl Into<String>) -> Vec<SenderAction> {
        self.finish(Feedback::Rejected { code: ResponseCode::ProtocolViolation, reason: reason.into() }, true)
    }

    fn data(&self) -> SenderAction {
        SenderAction::Send(Frame::Data { body: self.message.body.clone() })
    }

    /// Advances the session. Frames arriving out of order abort the session
    /// with a protocol-violation outcome; misplaced local events are errors.
    pub fn step(&mut self, event: SenderEvent) -> Result<Vec<SenderAction>, IllegalEvent> {
        use SessionState as S;
        let illegal = |state, event| Err(IllegalEvent { state, event });
        if self.state.is_terminal() {
            // The outcome has already been reported.
            return match event {
                SenderEvent::Frame(_) | SenderEvent::ConnectionLost => Ok(Vec::new()),
                SenderEvent::Submit => illegal(self.state, "Submit"),
                SenderEvent::TokenIssued(_) => illegal(self.state, "TokenIssued"),
                SenderEvent::TokenFailed(_) => illegal(self.state, "TokenFailed"),
            };
        }
        let actions = match (self.state, event) {
            (S::Idle, SenderEvent::Submit) => {
                self.state = S::Hello;
                let query = QueryDocument {
                    profile: self.profile.clone(),
                    message: self.message.meta(),
                    authenticator: self.authenticator.clone(),
                };
                vec![
                    SenderAction::Send(Frame::Hello { sender_id: self.message.sender_id.clone() }),
                    SenderAction::Send(Frame::Query(Box::new(query))),
                ]
            }
            (_, SenderEvent::Submit) => return illegal(self.state, "Submit"),
            (S::Idle, SenderEvent::ConnectionLost) => return illegal(self.state, "ConnectionLost"),
            (_, SenderEvent::ConnectionLost) => self.finish(
                Feedback::Rejected { code: ResponseCode::ProtocolViolation, reason: CONNECTION_LOST.into() },
                false,
            ),
            (S::Hello, SenderEvent::Frame(Frame::Quote { cos_id, price, available })) => {
                self.cos_id = Some(cos_id);
                self.quoted_price = Some(price);
                if price > self.budget_remaining {
                    self.finish(Feedback::BudgetExceeded { price, budget: self.budget_remaining }, true)
                } else if !available {
                    self.finish(
                        Feedback::Rejected { code: ResponseCode::QueueFull, reason: "class unavailable".into() },
                        true,
                    )
                } else if price == 0.0 {
                    self.state = S::Sending;
                    vec![self.data()]
                } else {
                    self.state = S::Quoted;
                    vec![SenderAction::RequestToken { amount: price }]
                }
            }
            (S::Hello, SenderEvent::Frame(Frame::NoCos { reason })) => {
                self.finish(Feedback::NoSuitableClass { reason }, true)
            }
            (S::Quoted, SenderEvent::TokenIssued(token)) => {
                self.budget_remaining -= self.quoted_price.unwrap_or(0.0);
                self.token = Some(token.clone());
                self.state = S::Sending;
                vec![SenderAction::Send(Frame::Pay { token }), self.data()]
            }
            (S::Quoted, SenderEvent::TokenFailed(reason)) => self.finish(
                Feedback::Rejected { code: ResponseCode::PaymentRequired, reason: format!("token unavailable: {reason}") },
                true,
            ),
            (S::Sending, SenderEvent::Frame(Frame::Accepted { message_id })) => {
                let fb = Feedback::Delivered {
                    message_id,
                    cos_id: self.cos_id.clone().unwrap_or_default(),
                    price: self.quoted_price.unwrap_or(0.0),
                };
                self.finish(fb, true)
            }
            (S::Hello | S::Quoted | S::Sending, SenderEvent::Frame(Frame::Rejected { code, reason })) => {
                if code == ResponseCode::Accepted {
                    self.violation("REJECTED carried the acceptance code")
                } else {
                    self.finish(Feedback::Rejected { code, reason }, true)
                }
            }
            (state, SenderEvent::Frame(f)) => {
                self.violation(format!("unexpected {} in state {state:?}", f.verb()))
            }
            (state, SenderEvent::TokenIssued(_)) => return illegal(state, "TokenIssued"),
            (state, SenderEvent::TokenFailed(_)) => return illegal(state, "TokenFailed"),
        };
        Ok(actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(budget: f64) -> SenderSession {
        let mut s = SenderSession::new(
            SenderProfile::with_budget(budget),
            Message::new("m1", "alice", "bob", b"hello".to_vec()),
            None,
        );
        s.step(SenderEvent::Submit).unwrap();
        s
    }

    fn quote(price: f64) -> SenderEvent {
        SenderEvent::Frame(Frame::Quote { cos_id: "cos2".into(), price, available: true })
    }

    fn feedbacks(actions: &[SenderAction]) -> usize {
        actions.iter().filter(|a| matches!(a, SenderAction::Feedback(_))).count()
    }

    #[test]
    fn submit_sends_hello_then_query() {
        let mut s = SenderSession::new(SenderProfile::with_budget(1.0), Message::new("m", "alice", "bob", vec![]), None);
        let acts = s.step(SenderEvent::Submit).unwrap();
        assert!(matches!(&acts[0], SenderAction::Send(Frame::Hello { sender_id }) if sender_id == "alice"));
        assert!(matches!(&acts[1], SenderAction::Send(Frame::Query(_))));
        assert_eq!(s.state, SessionState::Hello);
    }

    #[test]
    fn quote_within_budget_pays_then_sends() {
        let mut s = session(20.0);
        assert_eq!(s.step(quote(10.0)).unwrap(), vec![SenderAction::RequestToken { amount: 10.0 }]);
        let acts = s.step(SenderEvent::TokenIssued(PaymentToken("t".into()))).unwrap();
        assert_eq!(
            acts,
            vec![
                SenderAction::Send(Frame::Pay { token: PaymentToken("t".into()) }),
                SenderAction::Send(Frame::Data { body: b"hello".to_vec() }),
            ]
        );
        assert_eq!(s.budget_remaining, 10.0);
        let acts = s.step(SenderEvent::Frame(Frame::Accepted { message_id: "m1".into() })).unwrap();
        assert_eq!(feedbacks(&acts), 1);
        assert_eq!(s.state, SessionState::Done);
        assert_eq!(s.feedback.as_ref().unwrap().exit_code(), 0);
    }

    #[test]
    fn quote_over_budget_quits() {
        let mut s = session(5.0);
        let acts = s.step(quote(10.0)).unwrap();
        assert_eq!(acts[0], SenderAction::Send(Frame::Quit));
        assert!(matches!(acts[1], SenderAction::Feedback(Feedback::BudgetExceeded { .. })));
        assert_eq!(s.state, SessionState::Failed);
    }

    #[test]
    fn free_quote_skips_pay() {
        let mut s = session(0.0);
        assert_eq!(s.step(quote(0.0)).unwrap(), vec![SenderAction::Send(Frame::Data { body: b"hello".to_vec() })]);
    }

    #[test]
    fn nocos_and_rejection_feedback() {
        let mut s = session(5.0);
        let acts = s.step(SenderEvent::Frame(Frame::NoCos { reason: "none".into() })).unwrap();
        assert!(matches!(acts[1], SenderAction::Feedback(Feedback::NoSuitableClass { .. })));

        let mut s = session(5.0);
        s.step(quote(0.0)).unwrap();
        s.step(SenderEvent::Frame(Frame::rejected(ResponseCode::Congestion, "busy"))).unwrap();
        assert_eq!(s.feedback.unwrap().exit_code(), 24);
    }

    #[test]
    fn out_of_order_frame_is_violation_and_single_feedback() {
        let mut s = session(5.0);
        let acts = s.step(SenderEvent::Frame(Frame::Accepted { message_id: "m1".into() })).unwrap();
        assert_eq!(feedbacks(&acts), 1);
        assert_eq!(s.feedback.as_ref().unwrap().code(), Some(ResponseCode::ProtocolViolation));
        assert!(s.step(SenderEvent::Frame(Frame::Quit)).unwrap().is_empty());
        assert!(s.step(SenderEvent::ConnectionLost).unwrap().is_empty());
        assert!(s.step(SenderEvent::Submit).is_err());
    }

    #[test]
    fn illegal_local_events_are_errors() {
        let mut s = session(5.0);
        assert!(s.step(SenderEvent::TokenIssued(PaymentToken("t".into()))).is_err());
        assert_eq!(s.state, SessionState::Hello);
        let mut idle = SenderSession::new(SenderProfile::with_budget(1.0), Message::new("m", "a", "b", vec![]), None);
        assert!(idle.step(SenderEvent::ConnectionLost).is_err());
    }

    #[test]
    fn connection_loss_is_reported_once() {
        let mut s = session(5.0);
        let acts = s.step(SenderEvent::ConnectionLost).unwrap();
        assert_eq!(feedbacks(&acts), 1);
        assert!(s.feedback.as_ref().unwrap().is_connection_loss());
    }
}
