//! Runs a sender and a receiver session against each other without a
//! network. Every frame still goes through the codec in both directions.

use std::collections::VecDeque;

use super::frame::{decode_frame, encode_frame, Frame, ProtocolError};
use super::receiver::{ReceiverAction, ReceiverDeps, ReceiverEvent, ReceiverSession};
use super::sender::{Feedback, SenderAction, SenderEvent, SenderSession};
use crate::model::PaymentToken;

#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    ToReceiver,
    ToSender,
}

#[derive(Debug, Clone)]
pub struct Exchange {
    pub feedback: Option<Feedback>,
    pub alerts: Vec<(String, String)>,
    /// Encoded frames in wire order.
    pub transcript: Vec<(Direction, Vec<u8>)>,
    pub receiver: ReceiverSession,
}

fn through_wire(f: &Frame) -> (Vec<u8>, Result<Frame, ProtocolError>) {
    let bytes = encode_frame(f);
    let decoded = decode_frame(&bytes);
    (bytes, decoded)
}

/// Drives `sender` to a terminal outcome. `tokens` plays the payment
/// service for the sender side.
pub fn run_in_process(
    sender: &mut SenderSession,
    deps: &ReceiverDeps<'_>,
    tokens: &mut dyn FnMut(f64) -> Result<PaymentToken, String>,
) -> Exchange {
    let mut receiver = ReceiverSession::new();
    let mut out = Exchange { feedback: None, alerts: Vec::new(), transcript: Vec::new(), receiver: ReceiverSession::new() };
    let mut events = VecDeque::from([SenderEvent::Submit]);
    let mut receiver_open = true;
    let mut sender_open = true;

    while let Some(ev) = events.pop_front() {
        let Ok(actions) = sender.step(ev) else { break };
        for act in actions {
            match act {
                SenderAction::Send(frame) if sender_open && receiver_open => {
                    let (bytes, decoded) = through_wire(&frame);
                    out.transcript.push((Direction::ToReceiver, bytes));
                    let rev = match decoded {
                        Ok(f) => ReceiverEvent::Frame(f),
                        Err(e) => ReceiverEvent::Malformed(e),
                    };
                    for ract in receiver.step(rev, deps) {
                        match ract {
                            ReceiverAction::Send(reply) => {
                                let (bytes, decoded) = through_wire(&reply);
                                out.transcript.push((Direction::ToSender, bytes));
                                match decoded {
                                    Ok(f) => events.push_back(SenderEvent::Frame(f)),
                                    Err(_) => events.push_back(SenderEvent::ConnectionLost),
                                }
                            }
                            ReceiverAction::Alert { message_id, cos_id } => out.alerts.push((message_id, cos_id)),
                            ReceiverAction::Close => receiver_open = false,
                        }
                    }
                }
                SenderAction::Send(_) => {}
                SenderAction::RequestToken { amount } => events.push_back(match tokens(amount) {
                    Ok(t) => SenderEvent::TokenIssued(t),
                    Err(e) => SenderEvent::TokenFailed(e),
                }),
                SenderAction::Feedback(fb) => out.feedback = Some(fb),
                SenderAction::Close => {
                    sender_open = false;
                    if receiver_open {
                        receiver.step(ReceiverEvent::ConnectionLost, deps);
                        receiver_open = false;
                    }
                }
            }
        }
        if events.is_empty() && !sender.state.is_terminal() {
            events.push_back(SenderEvent::ConnectionLost);
        }
    }
    out.receiver = receiver;
    out
}
