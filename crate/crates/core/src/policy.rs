//! Recipient-side admission policies and price quoting.
//!
//! Every decision function here is pure. [`PolicyState`] is mutated only
//! through [`commit`], [`drain`] and [`update_adaptive`], which return the
//! next state; a recipient's store is expected to linearize those calls.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, InputError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    AcceptAll,
    TimeCap,
    FixedPrice,
    AdaptivePrice,
    CongestionPrice,
    ExpectedUtility,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::AcceptAll => "accept_all",
            PolicyKind::TimeCap => "time_cap",
            PolicyKind::FixedPrice => "fixed_price",
            PolicyKind::AdaptivePrice => "adaptive_price",
            PolicyKind::CongestionPrice => "congestion_price",
            PolicyKind::ExpectedUtility => "expected_utility",
        }
    }

    pub fn is_priced(self) -> bool {
        matches!(
            self,
            PolicyKind::FixedPrice | PolicyKind::AdaptivePrice | PolicyKind::CongestionPrice
        )
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Ok(match norm.as_str() {
            "accept_all" => PolicyKind::AcceptAll,
            "time_cap" => PolicyKind::TimeCap,
            "fixed_price" => PolicyKind::FixedPrice,
            "adaptive_price" => PolicyKind::AdaptivePrice,
            "congestion_price" => PolicyKind::CongestionPrice,
            "expected_utility" => PolicyKind::ExpectedUtility,
            _ => return Err(format!("unknown policy `{s}`")),
        })
    }
}

fn default_gamma() -> f64 {
    0.1
}
fn default_ceiling() -> f64 {
    f64::MAX
}
fn default_time_cap() -> f64 {
    15.0
}
fn default_opportunity_rate() -> f64 {
    10.0
}

/// Parameters of one pricing/admission policy. Shares the JSON schema used
/// inside class-of-service catalogs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingPolicyConfig {
    pub kind: PolicyKind,
    #[serde(default)]
    pub base_price: f64,
    /// Price increment per message already queued.
    #[serde(default)]
    pub congestion_slope: f64,
    #[serde(default = "default_gamma")]
    pub adapt_gamma: f64,
    #[serde(default)]
    pub price_floor: f64,
    #[serde(default = "default_ceiling")]
    pub price_ceiling: f64,
    #[serde(default = "default_time_cap")]
    pub time_cap_minutes: f64,
    /// Benefit forgone per minute of reading past the exclusive budget.
    #[serde(default = "default_opportunity_rate")]
    pub opportunity_rate: f64,
}

impl PricingPolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PricingPolicyConfig {
            kind,
            base_price: 0.0,
            congestion_slope: 0.0,
            adapt_gamma: default_gamma(),
            price_floor: 0.0,
            price_ceiling: default_ceiling(),
            time_cap_minutes: default_time_cap(),
            opportunity_rate: default_opportunity_rate(),
        }
    }

    pub fn accept_all() -> Self {
        Self::new(PolicyKind::AcceptAll)
    }

    pub fn time_cap(minutes: f64) -> Self {
        PricingPolicyConfig {
            time_cap_minutes: minutes,
            ..Self::new(PolicyKind::TimeCap)
        }
    }

    pub fn fixed(price: f64) -> Self {
        PricingPolicyConfig {
            base_price: price,
            ..Self::new(PolicyKind::FixedPrice)
        }
    }

    pub fn congestion(base: f64, slope: f64, ceiling: f64) -> Self {
        PricingPolicyConfig {
            base_price: base,
            congestion_slope: slope,
            price_ceiling: ceiling,
            ..Self::new(PolicyKind::CongestionPrice)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite_nonneg = |field, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("{v} must be finite and >= 0")))
            }
        };
        finite_nonneg("base_price", self.base_price)?;
        finite_nonneg("congestion_slope", self.congestion_slope)?;
        finite_nonneg("price_floor", self.price_floor)?;
        finite_nonneg("opportunity_rate", self.opportunity_rate)?;
        if self.price_ceiling.is_nan() || self.price_ceiling < self.price_floor {
            return Err(ConfigError::invalid(
                "price_ceiling",
                "must be >= price_floor",
            ));
        }
        if !(self.price_floor <= self.base_price && self.base_price <= self.price_ceiling) {
            return Err(ConfigError::invalid(
                "base_price",
                "must lie within [price_floor, price_ceiling]",
            ));
        }
        if !(self.adapt_gamma > 0.0 && self.adapt_gamma < 1.0) {
            return Err(ConfigError::invalid("adapt_gamma", "must lie in (0, 1)"));
        }
        if !(self.time_cap_minutes.is_finite() && self.time_cap_minutes > 0.0) {
            return Err(ConfigError::invalid("time_cap_minutes", "must be > 0"));
        }
        Ok(())
    }

    fn clamp(&self, price: f64) -> f64 {
        price.max(self.price_floor).min(self.price_ceiling)
    }

    /// Lowest price this policy can ever quote.
    pub fn min_quotable_price(&self) -> f64 {
        match self.kind {
            PolicyKind::FixedPrice => self.base_price,
            PolicyKind::CongestionPrice => self.clamp(self.base_price),
            PolicyKind::AdaptivePrice => self.price_floor,
            PolicyKind::AcceptAll | PolicyKind::TimeCap | PolicyKind::ExpectedUtility => 0.0,
        }
    }
}

pub const DEFAULT_EXCLUSIVE_BUDGET_MINUTES: f64 = 15.0;

/// Mutable bookkeeping a recipient keeps per policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub current_price: f64,
    pub queue_length: u64,
    /// Expected reading minutes already accepted this cycle.
    pub committed_minutes: f64,
    pub exclusive_budget_minutes: f64,
    pub window_accept_count: u64,
    pub window_offer_count: u64,
    /// Fraction of the cycle elapsed, in (0, 1]; used to project committed
    /// minutes to a full cycle for adaptive pricing.
    pub cycle_progress: f64,
}

impl PolicyState {
    pub fn new(cfg: &PricingPolicyConfig) -> Self {
        PolicyState {
            current_price: cfg.clamp(cfg.base_price),
            queue_length: 0,
            committed_minutes: 0.0,
            exclusive_budget_minutes: DEFAULT_EXCLUSIVE_BUDGET_MINUTES,
            window_accept_count: 0,
            window_offer_count: 0,
            cycle_progress: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Accept,
    Reject,
    NeedsPayment(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    AcceptAll,
    WithinTimeCap,
    TimeCapExceeded,
    PaymentSufficient,
    PaymentRequired,
    WithinExclusiveBudget,
    PositiveExpectedUtility,
    NegativeExpectedUtility,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub reason: ReasonCode,
}

impl Decision {
    fn accept(reason: ReasonCode) -> Self {
        Decision {
            outcome: Outcome::Accept,
            reason,
        }
    }
    fn reject(reason: ReasonCode) -> Self {
        Decision {
            outcome: Outcome::Reject,
            reason,
        }
    }

    pub fn is_accept(&self) -> bool {
        self.outcome == Outcome::Accept
    }
}

pub fn quote_price(cfg: &PricingPolicyConfig, state: &PolicyState) -> f64 {
    match cfg.kind {
        PolicyKind::FixedPrice => cfg.base_price,
        PolicyKind::CongestionPrice => {
            cfg.clamp(cfg.base_price + cfg.congestion_slope * state.queue_length as f64)
        }
        PolicyKind::AdaptivePrice => state.current_price,
        PolicyKind::AcceptAll | PolicyKind::TimeCap | PolicyKind::ExpectedUtility => 0.0,
    }
}

/// Admission decision for a single offered message.
pub fn decide(
    cfg: &PricingPolicyConfig,
    state: &PolicyState,
    predicted_minutes: f64,
    predicted_benefit: f64,
    offered_payment: f64,
) -> Result<Decision, InputError> {
    if !(predicted_minutes.is_finite() && predicted_minutes >= 0.0) {
        return Err(InputError::new(
            "predicted_minutes",
            format!("{predicted_minutes} must be finite and >= 0"),
        ));
    }
    if predicted_benefit.is_nan() {
        return Err(InputError::new("predicted_benefit", "NaN"));
    }
    if offered_payment.is_nan() || offered_payment < 0.0 {
        return Err(InputError::new("offered_payment", "must be >= 0"));
    }
    let projected = state.committed_minutes + predicted_minutes;
    let decision = match cfg.kind {
        PolicyKind::AcceptAll => Decision::accept(ReasonCode::AcceptAll),
        PolicyKind::TimeCap => {
            if projected <= cfg.time_cap_minutes {
                Decision::accept(ReasonCode::WithinTimeCap)
            } else {
                Decision::reject(ReasonCode::TimeCapExceeded)
            }
        }
        PolicyKind::FixedPrice | PolicyKind::AdaptivePrice | PolicyKind::CongestionPrice => {
            let quote = quote_price(cfg, state);
            if offered_payment >= quote {
                Decision::accept(ReasonCode::PaymentSufficient)
            } else {
                Decision {
                    outcome: Outcome::NeedsPayment(quote),
                    reason: ReasonCode::PaymentRequired,
                }
            }
        }
        PolicyKind::ExpectedUtility => {
            let budget = state.exclusive_budget_minutes;
            if projected <= budget {
                if predicted_benefit > 0.0 {
                    Decision::accept(ReasonCode::WithinExclusiveBudget)
                } else {
                    Decision::reject(ReasonCode::NegativeExpectedUtility)
                }
            } else {
                // Only the minutes spilling past the exclusive budget displace
                // other tasks.
                let overflow = projected - state.committed_minutes.max(budget);
                if predicted_benefit > cfg.opportunity_rate * overflow {
                    Decision::accept(ReasonCode::PositiveExpectedUtility)
                } else {
                    Decision::reject(ReasonCode::NegativeExpectedUtility)
                }
            }
        }
    };
    Ok(decision)
}

/// Records an accepted message's expected reading time.
pub fn commit(state: &PolicyState, predicted_minutes: f64) -> PolicyState {
    PolicyState {
        committed_minutes: state.committed_minutes + predicted_minutes.max(0.0),
        queue_length: state.queue_length + 1,
        ..state.clone()
    }
}

/// Inverse of [`commit`] for a message the recipient has retrieved.
pub fn drain(state: &PolicyState, predicted_minutes: f64) -> PolicyState {
    PolicyState {
        committed_minutes: (state.committed_minutes - predicted_minutes.max(0.0)).max(0.0),
        queue_length: state.queue_length.saturating_sub(1),
        ..state.clone()
    }
}

/// Counts one offer in the current adaptive-pricing window.
pub fn record_offer(state: &PolicyState, accepted: bool) -> PolicyState {
    PolicyState {
        window_offer_count: state.window_offer_count + 1,
        window_accept_count: state.window_accept_count + u64::from(accepted),
        ..state.clone()
    }
}

/// Multiplicative price adjustment toward a projected load of 1.0 against
/// the time cap. A window with no offers leaves the state unchanged.
pub fn update_adaptive(cfg: &PricingPolicyConfig, state: &PolicyState) -> PolicyState {
    if cfg.kind != PolicyKind::AdaptivePrice || state.window_offer_count == 0 {
        return state.clone();
    }
    let progress = if state.cycle_progress > 0.0 {
        state.cycle_progress.min(1.0)
    } else {
        1.0
    };
    let load = state.committed_minutes / progress / cfg.time_cap_minutes;
    let factor = if load > 1.0 {
        1.0 + cfg.adapt_gamma
    } else {
        1.0 - cfg.adapt_gamma
    };
    PolicyState {
        current_price: cfg.clamp(state.current_price * factor),
        window_accept_count: 0,
        window_offer_count: 0,
        ..state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(committed: f64) -> PolicyState {
        PolicyState {
            committed_minutes: committed,
            ..PolicyState::new(&PricingPolicyConfig::accept_all())
        }
    }

    #[test]
    fn quotes() {
        let fixed = PricingPolicyConfig::fixed(10.0);
        assert_eq!(quote_price(&fixed, &PolicyState::new(&fixed)), 10.0);

        let cong = PricingPolicyConfig::congestion(10.0, 2.0, f64::MAX);
        let mut st = PolicyState::new(&cong);
        assert_eq!(quote_price(&cong, &st), 10.0);
        st.queue_length = 5;
        assert_eq!(quote_price(&cong, &st), 20.0);

        for kind in [PolicyKind::AcceptAll, PolicyKind::TimeCap, PolicyKind::ExpectedUtility] {
            let cfg = PricingPolicyConfig::new(kind);
            assert_eq!(quote_price(&cfg, &st), 0.0);
        }
    }

    #[test]
    fn congestion_quote_is_clamped() {
        let cong = PricingPolicyConfig::congestion(10.0, 2.0, 15.0);
        let st = PolicyState {
            queue_length: 100,
            ..PolicyState::new(&cong)
        };
        assert_eq!(quote_price(&cong, &st), 15.0);
    }

    #[test]
    fn accept_all_always_accepts() {
        let cfg = PricingPolicyConfig::accept_all();
        let d = decide(&cfg, &state(1e6), 50.0, -10.0, 0.0).unwrap();
        assert!(d.is_accept());
    }

    #[test]
    fn time_cap_rejects_overflow() {
        let cfg = PricingPolicyConfig::time_cap(15.0);
        let d = decide(&cfg, &state(14.0), 3.0, 15.0, 0.0).unwrap();
        assert_eq!(d.outcome, Outcome::Reject);
        assert_eq!(d.reason, ReasonCode::TimeCapExceeded);
        assert!(decide(&cfg, &state(12.0), 3.0, 15.0, 0.0).unwrap().is_accept());
    }

    #[test]
    fn expected_utility_beyond_budget() {
        let cfg = PricingPolicyConfig::new(PolicyKind::ExpectedUtility);
        let d = decide(&cfg, &state(20.0), 3.0, 15.0, 0.0).unwrap();
        assert_eq!(d.outcome, Outcome::Reject);
        assert_eq!(d.reason, ReasonCode::NegativeExpectedUtility);
        assert!(decide(&cfg, &state(20.0), 3.0, 31.0, 0.0).unwrap().is_accept());
        // Within budget any positive benefit is taken.
        assert!(decide(&cfg, &state(0.0), 3.0, 0.5, 0.0).unwrap().is_accept());
        assert!(!decide(&cfg, &state(0.0), 3.0, -0.5, 0.0).unwrap().is_accept());
    }

    #[test]
    fn expected_utility_straddling_budget_charges_only_overflow() {
        let cfg = PricingPolicyConfig::new(PolicyKind::ExpectedUtility);
        // 14 + 3 spills 2 minutes: cost 20.
        assert!(decide(&cfg, &state(14.0), 3.0, 21.0, 0.0).unwrap().is_accept());
        assert!(!decide(&cfg, &state(14.0), 3.0, 19.0, 0.0).unwrap().is_accept());
    }

    #[test]
    fn negative_minutes_rejected() {
        let cfg = PricingPolicyConfig::accept_all();
        assert!(decide(&cfg, &state(0.0), -1.0, 0.0, 0.0).is_err());
        assert!(decide(&cfg, &state(0.0), f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn adaptive_updates() {
        let cfg = PricingPolicyConfig {
            base_price: 10.0,
            price_ceiling: 20.0,
            ..PricingPolicyConfig::new(PolicyKind::AdaptivePrice)
        };
        let base = PolicyState {
            window_offer_count: 4,
            window_accept_count: 2,
            ..PolicyState::new(&cfg)
        };
        let over = PolicyState {
            committed_minutes: 22.5,
            ..base.clone()
        };
        let next = update_adaptive(&cfg, &over);
        assert!((next.current_price - 11.0).abs() < 1e-12);
        assert_eq!(next.window_offer_count, 0);
        assert_eq!(next.window_accept_count, 0);

        let under = PolicyState {
            committed_minutes: 7.5,
            ..base.clone()
        };
        assert!((update_adaptive(&cfg, &under).current_price - 9.0).abs() < 1e-12);

        let at_ceiling = PolicyState {
            current_price: 20.0,
            ..over.clone()
        };
        assert_eq!(update_adaptive(&cfg, &at_ceiling).current_price, 20.0);

        let idle = PolicyState {
            window_offer_count: 0,
            ..over
        };
        assert_eq!(update_adaptive(&cfg, &idle), idle);
    }

    #[test]
    fn commit_and_drain_bookkeeping() {
        let s0 = state(0.0);
        let s1 = commit(&s0, 3.0);
        assert_eq!((s1.committed_minutes, s1.queue_length), (3.0, 1));
        let s2 = commit(&s1, 3.0);
        assert_eq!((s2.committed_minutes, s2.queue_length), (6.0, 2));
        let s3 = drain(&s2, 3.0);
        assert_eq!(s3.queue_length, s1.queue_length);
        assert_eq!(s3.committed_minutes, 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(PricingPolicyConfig::fixed(10.0).validate().is_ok());
        let bad = PricingPolicyConfig {
            price_floor: 5.0,
            ..PricingPolicyConfig::fixed(1.0)
        };
        assert!(bad.validate().is_err());
        let bad_gamma = PricingPolicyConfig {
            adapt_gamma: 1.0,
            ..PricingPolicyConfig::fixed(1.0)
        };
        assert!(bad_gamma.validate().is_err());
        let json = r#"{"kind":"congestion_price","base_price":1,"congestion_slope":0.5}"#;
        let cfg: PricingPolicyConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.price_ceiling, f64::MAX);
        assert_eq!(cfg.time_cap_minutes, 15.0);
        cfg.validate().unwrap();
    }

    proptest! {
        #[test]
        fn congestion_quote_monotone_and_bounded(
            base in 0.0f64..20.0,
            slope in 0.0f64..5.0,
            span in 0.0f64..50.0,
            q1 in 0u64..200,
            dq in 0u64..200,
        ) {
            let cfg = PricingPolicyConfig { price_floor: base * 0.5, ..PricingPolicyConfig::congestion(base, slope, base + span) };
            let mut st = PolicyState::new(&cfg);
            st.queue_length = q1;
            let p1 = quote_price(&cfg, &st);
            st.queue_length = q1 + dq;
            let p2 = quote_price(&cfg, &st);
            prop_assert!(p2 >= p1);
            prop_assert!(p1 >= cfg.price_floor && p2 <= cfg.price_ceiling);
        }

        #[test]
        fn time_cap_never_overcommits(
            cap in 1.0f64..30.0,
            preds in proptest::collection::vec(0.0f64..8.0, 0..60),
        ) {
            let cfg = PricingPolicyConfig::time_cap(cap);
            let mut st = PolicyState::new(&cfg);
            for p in preds {
                let d = decide(&cfg, &st, p, 1.0, 0.0).unwrap();
                if d.is_accept() {
                    st = commit(&st, p);
                }
                prop_assert!(st.committed_minutes <= cap + 1e-9);
            }
        }

        #[test]
        fn fixed_price_payment_threshold(price in 0.01f64..100.0, pay in 0.0f64..200.0) {
            let cfg = PricingPolicyConfig::fixed(price);
            let st = PolicyState::new(&cfg);
            let d = decide(&cfg, &st, 3.0, 1.0, pay).unwrap();
            if d.is_accept() {
                prop_assert!(pay >= price);
                let lowered = decide(&cfg, &st, 3.0, 1.0, price * 0.999).unwrap();
                prop_assert_eq!(lowered.outcome, Outcome::NeedsPayment(price));
            } else {
                prop_assert_eq!(d.outcome, Outcome::NeedsPayment(price));
            }
        }

        #[test]
        fn decide_is_deterministic(
            kind in prop_oneof![
                Just(PolicyKind::AcceptAll), Just(PolicyKind::TimeCap), Just(PolicyKind::FixedPrice),
                Just(PolicyKind::AdaptivePrice), Just(PolicyKind::CongestionPrice), Just(PolicyKind::ExpectedUtility)
            ],
            committed in 0.0f64..40.0,
            q in 0u64..20,
            minutes in 0.0f64..10.0,
            benefit in -20.0f64..60.0,
            pay in 0.0f64..30.0,
        ) {
            let cfg = PricingPolicyConfig { base_price: 5.0, congestion_slope: 1.0, ..PricingPolicyConfig::new(kind) };
            let st = PolicyState { committed_minutes: committed, queue_length: q, ..PolicyState::new(&cfg) };
            let a = decide(&cfg, &st, minutes, benefit, pay).unwrap();
            let b = decide(&cfg, &st, minutes, benefit, pay).unwrap();
            prop_assert_eq!(a, b);
            if let Outcome::NeedsPayment(p) = a.outcome {
                prop_assert!(p > 0.0);
            }
        }

        /// Offer stream whose load falls with price: committed minutes for
        /// the window equal `demand / price`. The controller's price stays
        /// within the clamps, moves monotonically toward the equilibrium
        /// `demand / cap` until it first crosses it, and afterwards stays
        /// within one multiplicative step of it.
        #[test]
        fn adaptive_price_converges(
            demand in 50.0f64..2000.0,
            start in 1.0f64..100.0,
            gamma in 0.01f64..0.5,
        ) {
            let cap = 15.0;
            let cfg = PricingPolicyConfig {
                base_price: start,
                adapt_gamma: gamma,
                price_floor: 0.5,
                price_ceiling: 500.0,
                time_cap_minutes: cap,
                ..PricingPolicyConfig::new(PolicyKind::AdaptivePrice)
            };
            let equilibrium = (demand / cap).clamp(cfg.price_floor, cfg.price_ceiling);
            let mut st = PolicyState::new(&cfg);
            let mut prices = vec![st.current_price];
            for _ in 0..400 {
                st.committed_minutes = demand / st.current_price;
                st.window_offer_count = 10;
                st = update_adaptive(&cfg, &st);
                prices.push(st.current_price);
            }
            for p in &prices {
                prop_assert!(*p >= cfg.price_floor && *p <= cfg.price_ceiling);
            }
            let initial_side = prices[0] < equilibrium;
            let crossing = prices.iter().position(|p| (*p < equilibrium) != initial_side);
            let prefix_end = crossing.unwrap_or(prices.len());
            for w in prices[..prefix_end].windows(2) {
                if initial_side { prop_assert!(w[1] >= w[0]); } else { prop_assert!(w[1] <= w[0]); }
            }
            let band = (1.0 + gamma) / (1.0 - gamma);
            for p in &prices[prefix_end.min(prices.len() - 1)..] {
                prop_assert!(*p <= equilibrium * band + 1e-9 && *p >= equilibrium / band - 1e-9);
            }
        }
    }
}
