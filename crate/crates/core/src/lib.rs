//! Economically regulated person-to-person messaging.
//!
//! Recipients publish classes of service with pricing and admission
//! policies; senders negotiate a class, attach a single-use payment token,
//! and transfer the message directly to the recipient's service. The crate
//! also carries a deterministic simulator of the cycle-based benefit model
//! used to compare admission policies.

pub mod cli;
pub mod error;
pub mod model;
pub mod policy;
pub mod protocol;
pub mod selection;
pub mod services;
pub mod sim;

pub use error::{ConfigError, InputError};
pub use model::{
    classify_benefit, match_cos, region_to_cos, score_message, AdmissionScore, BenefitPoint,
    Catalog, ClassOfService, GridRegion, Message, MessageMeta, QosDescriptor, ScoringConfig,
    SenderProfile, Thresholds,
};
pub use policy::{decide, quote_price, Decision, Outcome, PolicyKind, PolicyState, PricingPolicyConfig};

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
