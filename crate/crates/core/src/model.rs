//! Shared domain types: messages, sender profiles, QoS descriptors and
//! classes of service, plus admission scoring and benefit-grid routing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, ConfigError, InputError};
use crate::policy::{PolicyKind, PricingPolicyConfig};

/// Opaque single-use payment credential.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PaymentToken(pub String);

impl std::fmt::Display for PaymentToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// The features of a message that policies are allowed to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageMeta {
    pub id: String,
    pub sender_id: String,
    pub recipient_id: String,
    pub size_bytes: u64,
    #[serde(default = "default_format")]
    pub format_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos_id: Option<String>,
}

fn default_format() -> String {
    "plain".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub sender_id: String,
    pub recipient_id: String,
    pub size_bytes: u64,
    pub format_tag: String,
    #[serde(with = "crate::b64")]
    pub body: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payment: Option<PaymentToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos_id: Option<String>,
}

impl Message {
    pub fn new(
        id: impl Into<String>,
        sender_id: impl Into<String>,
        recipient_id: impl Into<String>,
        body: Vec<u8>,
    ) -> Self {
        Message {
            id: id.into(),
            sender_id: sender_id.into(),
            recipient_id: recipient_id.into(),
            size_bytes: body.len() as u64,
            format_tag: default_format(),
            body,
            stamp: None,
            payment: None,
            cos_id: None,
        }
    }

    pub fn meta(&self) -> MessageMeta {
        MessageMeta {
            id: self.id.clone(),
            sender_id: self.sender_id.clone(),
            recipient_id: self.recipient_id.clone(),
            size_bytes: self.size_bytes,
            format_tag: self.format_tag.clone(),
            stamp: self.stamp.clone(),
            cos_id: self.cos_id.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), InputError> {
        if self.id.is_empty() {
            return Err(InputError::new("id", "must be nonempty"));
        }
        if self.size_bytes != self.body.len() as u64 {
            return Err(InputError::new(
                "size_bytes",
                format!("{} != body length {}", self.size_bytes, self.body.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accessibility {
    Open,
    TrustedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Security {
    None,
    Authenticated,
}

/// Service quality a class of service offers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosDescriptor {
    pub availability: f64,
    pub accessibility: Accessibility,
    pub integrity: bool,
    pub latency_s: f64,
    pub reliability: f64,
    /// Accepted format tags.
    pub flexibility: BTreeSet<String>,
    pub security: Security,
    #[serde(default)]
    pub recipient_properties: BTreeSet<String>,
}

impl QosDescriptor {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("availability", self.availability),
            ("reliability", self.reliability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(field, format!("{v} outside [0, 1]")));
            }
        }
        if !(self.latency_s.is_finite() && self.latency_s > 0.0) {
            return Err(ConfigError::invalid("latency_s", "must be > 0"));
        }
        Ok(())
    }
}

/// The partial QoS a sender asks for. Absent fields are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QosRequirement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_availability: Option<f64>,
    /// `Some(Open)` restricts matching to open classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accessibility: Option<Accessibility>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub integrity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_reliability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub security: Option<Security>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub recipient_properties: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderProfile {
    pub budget: f64,
    /// `None` means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency_s: Option<f64>,
    #[serde(default)]
    pub required_qos: QosRequirement,
    /// Advisory only; never trusted by the receiver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_benefit: Option<f64>,
}

impl SenderProfile {
    pub fn with_budget(budget: f64) -> Self {
        SenderProfile {
            budget,
            max_latency_s: None,
            required_qos: QosRequirement::default(),
            declared_benefit: None,
        }
    }

    pub fn validate(&self) -> Result<(), InputError> {
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(InputError::new("budget", "must be finite and >= 0"));
        }
        if let Some(l) = self.max_latency_s {
            if l.is_nan() || l <= 0.0 {
                return Err(InputError::new("max_latency_s", "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOfService {
    pub cos_id: String,
    pub qos: QosDescriptor,
    pub pricing: PricingPolicyConfig,
    #[serde(default)]
    pub trusted_senders: BTreeSet<String>,
    pub capacity: usize,
    #[serde(default)]
    pub alert: bool,
}

impl ClassOfService {
    pub fn is_trusted_only(&self) -> bool {
        self.qos.accessibility == Accessibility::TrustedOnly
    }

    pub fn admits_sender(&self, sender_id: &str) -> bool {
        !self.is_trusted_only() || self.trusted_senders.contains(sender_id)
    }

    pub fn requires_authentication(&self) -> bool {
        self.qos.security == Security::Authenticated
    }

    /// Field-wise dominance of the class's QoS over a sender's requirement.
    pub fn satisfies(&self, profile: &SenderProfile) -> bool {
        let q = &self.qos;
        let r = &profile.required_qos;
        let latency_limit = match (profile.max_latency_s, r.max_latency_s) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        latency_limit.is_none_or(|l| q.latency_s <= l)
            && r.min_availability.is_none_or(|a| q.availability >= a)
            && r.min_reliability.is_none_or(|a| q.reliability >= a)
            && r.accessibility
                .is_none_or(|a| a == Accessibility::TrustedOnly || q.accessibility == a)
            && (!r.integrity || q.integrity)
            && r.format.as_ref().is_none_or(|f| q.flexibility.contains(f))
            && r.security.is_none_or(|s| q.security >= s)
            && r.recipient_properties.is_subset(&q.recipient_properties)
    }
}

/// A recipient's set of classes of service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub classes: Vec<ClassOfService>,
}

impl Catalog {
    pub fn new(classes: Vec<ClassOfService>) -> Result<Self, ConfigError> {
        let cat = Catalog { classes };
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if c.cos_id.is_empty() || c.cos_id.contains(char::is_whitespace) {
                return Err(ConfigError::invalid(
                    "cos_id",
                    format!("`{}` must be a nonempty token", c.cos_id),
                ));
            }
            if !seen.insert(c.cos_id.as_str()) {
                return Err(ConfigError::DuplicateCos(c.cos_id.clone()));
            }
            if c.capacity == 0 {
                return Err(ConfigError::invalid("capacity", "must be >= 1"));
            }
            c.qos.validate()?;
            c.pricing.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cat: Catalog = serde_json::from_str(text)?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn get(&self, cos_id: &str) -> Option<&ClassOfService> {
        self.classes.iter().find(|c| c.cos_id == cos_id)
    }

    /// The three-class catalog: `cos1` trusted-only and free, `cos2` fixed
    /// price, `cos3` loosely congestion priced.
    pub fn canonical(trusted: impl IntoIterator<Item = String>) -> Self {
        let formats: BTreeSet<String> = ["plain", "html", "ical"]
            .into_iter()
            .map(String::from)
            .collect();
        let qos = |accessibility, security, latency_s| QosDescriptor {
            availability: 0.99,
            accessibility,
            integrity: true,
            latency_s,
            reliability: 0.99,
            flexibility: formats.clone(),
            security,
            recipient_properties: BTreeSet::new(),
        };
        Catalog {
            classes: vec![
                ClassOfService {
                    cos_id: "cos1".into(),
                    qos: qos(Accessibility::TrustedOnly, Security::Authenticated, 60.0),
                    pricing: PricingPolicyConfig::fixed(0.0),
                    trusted_senders: trusted.into_iter().collect(),
                    capacity: 1000,
                    alert: true,
                },
                ClassOfService {
                    cos_id: "cos2".into(),
                    qos: qos(Accessibility::Open, Security::None, 3600.0),
                    pricing: PricingPolicyConfig::fixed(10.0),
                    trusted_senders: BTreeSet::new(),
                    capacity: 1000,
                    alert: false,
                },
                ClassOfService {
                    cos_id: "cos3".into(),
                    qos: qos(Accessibility::Open, Security::None, 600.0),
                    pricing: PricingPolicyConfig::congestion(1.0, 0.5, 10.0),
                    trusted_senders: BTreeSet::new(),
                    capacity: 1000,
                    alert: false,
                },
            ],
        }
    }
}

/// Classes whose QoS dominates the profile and whose cheapest quote fits the
/// budget, ordered by (min price, latency, id).
pub fn match_cos(profile: &SenderProfile, catalog: &[ClassOfService]) -> Vec<String> {
    let mut hits: Vec<(&ClassOfService, f64)> = catalog
        .iter()
        .filter(|c| c.satisfies(profile))
        .map(|c| (c, c.pricing.min_quotable_price()))
        .filter(|(_, p)| *p <= profile.budget)
        .collect();
    hits.sort_by(|(a, pa), (b, pb)| {
        pa.total_cmp(pb)
            .then(a.qos.latency_s.total_cmp(&b.qos.latency_s))
            .then_with(|| a.cos_id.cmp(&b.cos_id))
    });
    let mut out: Vec<String> = hits.into_iter().map(|(c, _)| c.cos_id.clone()).collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    #[serde(default)]
    pub source_points: BTreeMap<String, f64>,
    #[serde(default)]
    pub stamp_points: f64,
    #[serde(default)]
    pub format_points: BTreeMap<String, f64>,
    /// sender id → category (e.g. friend, partner, unknown).
    #[serde(default)]
    pub category_of: BTreeMap<String, String>,
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all_finite = self.stamp_points.is_finite()
            && self.source_points.values().all(|v| v.is_finite())
            && self.format_points.values().all(|v| v.is_finite());
        if all_finite {
            Ok(())
        } else {
            Err(ConfigError::invalid("points", "all point values must be finite"))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScoringConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_file(path)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmissionScore {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

pub const RULE_SOURCE: &str = "source";
pub const RULE_STAMP: &str = "stamp";
pub const RULE_FORMAT: &str = "format";

pub fn score_message(msg: &MessageMeta, cfg: &ScoringConfig, stamp_valid: bool) -> AdmissionScore {
    let source = cfg
        .category_of
        .get(&msg.sender_id)
        .and_then(|cat| cfg.source_points.get(cat))
        .copied()
        .unwrap_or(0.0);
    let stamp = if stamp_valid { cfg.stamp_points } else { 0.0 };
    let format = cfg
        .format_points
        .get(&msg.format_tag)
        .copied()
        .unwrap_or(0.0);
    let components: BTreeMap<String, f64> = [
        (RULE_SOURCE, source),
        (RULE_STAMP, stamp),
        (RULE_FORMAT, format),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    AdmissionScore {
        total: source + stamp + format,
        components,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitPoint {
    pub sender_benefit: f64,
    pub receiver_benefit: f64,
}

impl BenefitPoint {
    pub fn new(sender_benefit: f64, receiver_benefit: f64) -> Self {
        BenefitPoint {
            sender_benefit,
            receiver_benefit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridRegion {
    ReceiverOnly,
    SenderOnly,
    Mutual,
    Neither,
}

/// Cut points on the (sender, receiver) benefit axes. A coordinate at or
/// above its threshold counts as beneficial.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Thresholds {
    pub sender: f64,
    pub receiver: f64,
}

pub fn classify_benefit(p: BenefitPoint, thresholds: Thresholds) -> Result<GridRegion, InputError> {
    for (field, v) in [
        ("sender_benefit", p.sender_benefit),
        ("receiver_benefit", p.receiver_benefit),
        ("threshold.sender", thresholds.sender),
        ("threshold.receiver", thresholds.receiver),
    ] {
        if !v.is_finite() {
            return Err(InputError::new(field, "must be finite"));
        }
    }
    let s = p.sender_benefit >= thresholds.sender;
    let r = p.receiver_benefit >= thresholds.receiver;
    Ok(match (s, r) {
        (true, true) => GridRegion::Mutual,
        (true, false) => GridRegion::SenderOnly,
        (false, true) => GridRegion::ReceiverOnly,
        (false, false) => GridRegion::Neither,
    })
}

/// Maps a grid region to the canonical class serving it. The trusted-only
/// class is recognised by its accessibility, the others by pricing kind.
pub fn region_to_cos(region: GridRegion, catalog: &[ClassOfService]) -> Option<String> {
    let pick = |pred: &dyn Fn(&ClassOfService) -> bool| {
        catalog
            .iter()
            .find(|c| pred(c))
            .map(|c| c.cos_id.clone())
    };
    match region {
        GridRegion::ReceiverOnly => pick(&|c| c.is_trusted_only()),
        GridRegion::SenderOnly => {
            pick(&|c| !c.is_trusted_only() && c.pricing.kind == PolicyKind::FixedPrice)
        }
        GridRegion::Mutual => {
            pick(&|c| !c.is_trusted_only() && c.pricing.kind == PolicyKind::CongestionPrice)
        }
        GridRegion::Neither => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(sender: &str, format: &str) -> MessageMeta {
        MessageMeta {
            id: "m1".into(),
            sender_id: sender.into(),
            recipient_id: "bob".into(),
            size_bytes: 10,
            format_tag: format.into(),
            stamp: None,
            cos_id: None,
        }
    }

    fn scoring() -> ScoringConfig {
        ScoringConfig {
            source_points: [("friend".to_string(), 50.0)].into(),
            stamp_points: 40.0,
            format_points: [("ical".to_string(), 10.0)].into(),
            category_of: [("alice".to_string(), "friend".to_string())].into(),
        }
    }

    #[test]
    fn scoring_examples() {
        let cfg = scoring();
        assert_eq!(score_message(&meta("mallory", "plain"), &cfg, false).total, 0.0);
        assert_eq!(score_message(&meta("alice", "plain"), &cfg, false).total, 50.0);
        let s = score_message(&meta("alice", "ical"), &cfg, true);
        assert_eq!(s.total, 100.0);
        assert_eq!(s.components[RULE_STAMP], 40.0);
        assert_eq!(s.components.values().sum::<f64>(), s.total);
    }

    #[test]
    fn grid_quadrants() {
        let t = Thresholds::default();
        let c = |s, r| classify_benefit(BenefitPoint::new(s, r), t).unwrap();
        assert_eq!(c(5.0, 5.0), GridRegion::Mutual);
        assert_eq!(c(5.0, -1.0), GridRegion::SenderOnly);
        assert_eq!(c(-1.0, 5.0), GridRegion::ReceiverOnly);
        assert_eq!(c(-1.0, -1.0), GridRegion::Neither);
        assert_eq!(c(0.0, 0.0), GridRegion::Mutual);
        assert!(classify_benefit(BenefitPoint::new(f64::NAN, 0.0), t).is_err());
        assert!(classify_benefit(BenefitPoint::new(f64::INFINITY, 0.0), t).is_err());
    }

    #[test]
    fn canonical_routing() {
        let cat = Catalog::canonical(["alice".to_string()]);
        cat.validate().unwrap();
        assert_eq!(region_to_cos(GridRegion::ReceiverOnly, &cat.classes).as_deref(), Some("cos1"));
        assert_eq!(region_to_cos(GridRegion::SenderOnly, &cat.classes).as_deref(), Some("cos2"));
        assert_eq!(region_to_cos(GridRegion::Mutual, &cat.classes).as_deref(), Some("cos3"));
        assert_eq!(region_to_cos(GridRegion::Neither, &cat.classes), None);
        assert_eq!(region_to_cos(GridRegion::Mutual, &cat.classes[..2]), None);
    }

    fn open_class(id: &str, price: f64, latency: f64) -> ClassOfService {
        let mut c = Catalog::canonical(std::iter::empty()).classes[1].clone();
        c.cos_id = id.into();
        c.pricing = PricingPolicyConfig::fixed(price);
        c.qos.latency_s = latency;
        c
    }

    #[test]
    fn matching_examples() {
        assert!(match_cos(&SenderProfile::with_budget(100.0), &[]).is_empty());
        let pricey = vec![open_class("a", 10.0, 10.0), open_class("b", 15.0, 10.0)];
        assert!(match_cos(&SenderProfile::with_budget(0.0), &pricey).is_empty());
        let cat = vec![open_class("costly", 10.0, 1.0), open_class("cheap", 5.0, 100.0)];
        assert_eq!(
            match_cos(&SenderProfile::with_budget(20.0), &cat),
            vec!["cheap".to_string(), "costly".to_string()]
        );
    }

    #[test]
    fn matching_honours_requirements() {
        let cat = Catalog::canonical(["alice".to_string()]);
        let mut p = SenderProfile::with_budget(100.0);
        p.max_latency_s = Some(100.0);
        assert_eq!(match_cos(&p, &cat.classes), vec!["cos1".to_string()]);
        p.required_qos.accessibility = Some(Accessibility::Open);
        assert!(match_cos(&p, &cat.classes).is_empty());
        p.max_latency_s = None;
        assert_eq!(match_cos(&p, &cat.classes), vec!["cos3".to_string(), "cos2".to_string()]);
        p.required_qos.format = Some("pdf".into());
        assert!(match_cos(&p, &cat.classes).is_empty());
    }

    #[test]
    fn catalog_json_round_trip_and_validation() {
        let cat = Catalog::canonical(["alice".to_string()]);
        let text = serde_json::to_string(&cat).unwrap();
        assert_eq!(Catalog::from_json(&text).unwrap(), cat);
        let mut dup = cat.clone();
        dup.classes.push(dup.classes[0].clone());
        assert!(matches!(dup.validate(), Err(ConfigError::DuplicateCos(_))));
        let mut zero = cat;
        zero.classes[0].capacity = 0;
        assert!(zero.validate().is_err());
    }

    #[test]
    fn message_invariants() {
        let mut m = Message::new("m", "a", "b", b"hello".to_vec());
        m.validate().unwrap();
        m.size_bytes = 4;
        assert!(m.validate().is_err());
        let empty = Message::new("", "a", "b", vec![]);
        assert!(empty.validate().is_err());
    }

    fn arb_class() -> impl Strategy<Value = ClassOfService> {
        (0u32..50, 0.0f64..20.0, 1.0f64..500.0, any::<bool>()).prop_map(|(id, price, lat, open)| {
            let mut c = open_class(&format!("c{id}"), price, lat);
            if !open {
                c.qos.accessibility = Accessibility::TrustedOnly;
            }
            c
        })
    }

    proptest! {
        #[test]
        fn scoring_is_additive(sender in "[a-c]", fmt in prop_oneof![Just("plain"), Just("ical")], stamp in any::<bool>()) {
            let cfg = scoring();
            let m = meta(&sender, fmt);
            let full = score_message(&m, &cfg, stamp).total;
            let only = |c: ScoringConfig| score_message(&m, &c, stamp).total;
            let src = only(ScoringConfig { stamp_points: 0.0, format_points: BTreeMap::new(), ..cfg.clone() });
            let stp = only(ScoringConfig { source_points: BTreeMap::new(), format_points: BTreeMap::new(), ..cfg.clone() });
            let fm = only(ScoringConfig { source_points: BTreeMap::new(), stamp_points: 0.0, ..cfg.clone() });
            prop_assert_eq!(full, src + stp + fm);
        }

        #[test]
        fn classify_shift_invariance(s in -100.0f64..100.0, r in -100.0f64..100.0, eps in 0.001f64..50.0) {
            let t = Thresholds::default();
            let region = classify_benefit(BenefitPoint::new(s, r), t).unwrap();
            let away = |v: f64| if v >= 0.0 { v + eps } else { v - eps };
            let shifted = classify_benefit(BenefitPoint::new(away(s), away(r)), t).unwrap();
            prop_assert_eq!(region, shifted);
        }

        #[test]
        fn match_is_subset_dedup_and_permutation_stable(
            mut classes in proptest::collection::vec(arb_class(), 0..8),
            budget in 0.0f64..25.0,
            seed in any::<u64>(),
        ) {
            let mut seen = BTreeSet::new();
            classes.retain(|c| seen.insert(c.cos_id.clone()));
            let profile = SenderProfile::with_budget(budget);
            let out = match_cos(&profile, &classes);
            let ids: BTreeSet<_> = classes.iter().map(|c| c.cos_id.clone()).collect();
            prop_assert!(out.iter().all(|id| ids.contains(id)));
            let uniq: BTreeSet<_> = out.iter().collect();
            prop_assert_eq!(uniq.len(), out.len());
            let mut permuted = classes.clone();
            let n = permuted.len();
            if n > 1 {
                let mut x = seed;
                for i in (1..n).rev() {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    permuted.swap(i, (x >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(match_cos(&profile, &permuted), out);
        }

        #[test]
        fn routing_is_deterministic(s in -10.0f64..10.0, r in -10.0f64..10.0) {
            let cat = Catalog::canonical(std::iter::empty());
            let route = || region_to_cos(classify_benefit(BenefitPoint::new(s, r), Thresholds::default()).unwrap(), &cat.classes);
            prop_assert_eq!(route(), route());
        }
    }
}
