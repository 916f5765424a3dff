//! Negotiation wire protocol and the sender/receiver session machines.

pub mod codes;
pub mod frame;
pub mod inprocess;
pub mod receiver;
pub mod retrieval;
pub mod sender;

pub use codes::ResponseCode;
pub use frame::{decode_frame, encode_frame, read_frame, write_frame, DeliveryState, Frame, ProtocolError, QueryDocument};
pub use receiver::{ReceiverAction, ReceiverConfig, ReceiverDeps, ReceiverEvent, ReceiverSession};
pub use sender::{Feedback, SenderAction, SenderEvent, SenderSession};
