use serde::{Deserialize, Serialize};

use super::rng::SimRng;
use super::SimError;
use crate::policy::{self, PolicyKind, PolicyState, PricingPolicyConfig};
use crate::selection::{predict_read_time, ReadingTimeModel, MIN_PREDICTED_MINUTES};

/// Parameters of the login-cycle model. Rates are per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub lambda_per_min: f64,
    pub cycle_minutes: f64,
    pub mean_read_minutes: f64,
    pub read_sd_minutes: f64,
    pub mean_benefit_rate: f64,
    pub benefit_rate_sd: f64,
    pub exclusive_budget_minutes: f64,
    pub opportunity_rate: f64,
    /// Sender willingness to pay, used only by priced policies.
    pub wtp_mean: f64,
    pub wtp_sd: f64,
    /// Offers between adaptive price updates.
    pub adapt_window: u64,
    pub seed: u64,
    pub replications: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            lambda_per_min: 1.0 / 60.0,
            cycle_minutes: 300.0,
            mean_read_minutes: 3.0,
            read_sd_minutes: 1.0,
            mean_benefit_rate: 5.0,
            benefit_rate_sd: 2.0,
            exclusive_budget_minutes: 15.0,
            opportunity_rate: 10.0,
            wtp_mean: 10.0,
            wtp_sd: 5.0,
            adapt_window: 5,
            seed: 0,
            replications: 1000,
        }
    }
}

impl SimConfig {
    pub fn with_lambda(lambda_per_min: f64, seed: u64, replications: u64) -> Self {
        SimConfig {
            lambda_per_min,
            seed,
            replications,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(what.to_string()))
            }
        };
        check(
            self.lambda_per_min.is_finite() && self.lambda_per_min >= 0.0,
            "lambda_per_min must be finite and >= 0",
        )?;
        check(self.cycle_minutes.is_finite() && self.cycle_minutes > 0.0, "cycle_minutes must be > 0")?;
        check(
            self.mean_read_minutes.is_finite() && self.mean_read_minutes > 0.0,
            "mean_read_minutes must be > 0",
        )?;
        check(
            self.exclusive_budget_minutes.is_finite() && self.exclusive_budget_minutes > 0.0,
            "exclusive_budget_minutes must be > 0",
        )?;
        for (name, v) in [
            ("read_sd_minutes", self.read_sd_minutes),
            ("benefit_rate_sd", self.benefit_rate_sd),
            ("opportunity_rate", self.opportunity_rate),
            ("wtp_sd", self.wtp_sd),
        ] {
            check(v.is_finite() && v >= 0.0, &format!("{name} must be finite and >= 0"))?;
        }
        check(self.mean_benefit_rate.is_finite(), "mean_benefit_rate must be finite")?;
        check(self.wtp_mean.is_finite(), "wtp_mean must be finite")?;
        check(self.replications >= 1, "replications must be >= 1")?;
        check(self.adapt_window >= 1, "adapt_window must be >= 1")?;
        Ok(())
    }

    /// Expected arrivals per cycle.
    pub fn expected_arrivals(&self) -> f64 {
        self.lambda_per_min * self.cycle_minutes
    }

    /// Opportunity cost for a cycle with `minutes` of reading.
    pub fn opportunity_cost(&self, minutes: f64) -> f64 {
        self.opportunity_rate * (minutes - self.exclusive_budget_minutes).max(0.0)
    }

    /// Policy matching this configuration's budget and opportunity rate.
    pub fn policy(&self, kind: PolicyKind) -> PricingPolicyConfig {
        PricingPolicyConfig {
            time_cap_minutes: self.exclusive_budget_minutes,
            opportunity_rate: self.opportunity_rate,
            ..PricingPolicyConfig::new(kind)
        }
    }
}

/// Outcome of one login cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub messages_arrived: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub total_read_minutes: f64,
    pub gross_benefit: f64,
    pub opportunity_cost: f64,
    pub net_benefit: f64,
    pub payments_collected: f64,
}

impl CycleMetrics {
    /// Fills opportunity cost and net benefit from reading time and gross.
    pub fn settle(&mut self, cfg: &SimConfig) {
        self.opportunity_cost = cfg.opportunity_cost(self.total_read_minutes);
        self.net_benefit = self.gross_benefit - self.opportunity_cost;
    }

    fn fields(&self) -> [f64; 8] {
        [
            self.messages_arrived as f64,
            self.accepted as f64,
            self.rejected as f64,
            self.total_read_minutes,
            self.gross_benefit,
            self.opportunity_cost,
            self.net_benefit,
            self.payments_collected,
        ]
    }
}

/// Per-field averages (or standard errors) over replications.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub messages_arrived: f64,
    pub accepted: f64,
    pub rejected: f64,
    pub total_read_minutes: f64,
    pub gross_benefit: f64,
    pub opportunity_cost: f64,
    pub net_benefit: f64,
    pub payments_collected: f64,
}

impl MeanMetrics {
    fn from_fields(f: [f64; 8]) -> Self {
        MeanMetrics {
            messages_arrived: f[0],
            accepted: f[1],
            rejected: f[2],
            total_read_minutes: f[3],
            gross_benefit: f[4],
            opportunity_cost: f[5],
            net_benefit: f[6],
            payments_collected: f[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub replications: u64,
    pub mean: MeanMetrics,
    /// Standard error of each mean.
    pub se: MeanMetrics,
}

/// Welford accumulator over metric vectors, folded in replication order.
#[derive(Debug, Default, Clone)]
pub(crate) struct MetricsAccumulator {
    n: u64,
    mean: [f64; 8],
    m2: [f64; 8],
}

impl MetricsAccumulator {
    pub(crate) fn push(&mut self, m: &CycleMetrics) {
        self.n += 1;
        let x = m.fields();
        for ((xi, mean), m2) in x.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = xi - *mean;
            *mean += delta / self.n as f64;
            *m2 += delta * (xi - *mean);
        }
    }

    pub(crate) fn summary(&self) -> SimSummary {
        let mut se = [0.0; 8];
        if self.n > 1 {
            for (s, m2) in se.iter_mut().zip(&self.m2) {
                *s = (m2 / (self.n - 1) as f64 / self.n as f64).sqrt();
            }
        }
        SimSummary {
            replications: self.n,
            mean: MeanMetrics::from_fields(self.mean),
            se: MeanMetrics::from_fields(se),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticPolicy {
    AcceptAll,
    TimeCap,
}

impl AnalyticPolicy {
    pub fn kind(self) -> PolicyKind {
        match self {
            AnalyticPolicy::AcceptAll => PolicyKind::AcceptAll,
            AnalyticPolicy::TimeCap => PolicyKind::TimeCap,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.kind().as_str()
    }
}

impl std::str::FromStr for AnalyticPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<PolicyKind>()? {
            PolicyKind::AcceptAll => Ok(AnalyticPolicy::AcceptAll),
            PolicyKind::TimeCap => Ok(AnalyticPolicy::TimeCap),
            other => Err(format!("no closed form for `{other}`")),
        }
    }
}

/// Closed-form expected net benefit evaluated at the expected load.
///
/// With gross `g = b·t̄·λT` and reading time `r = λT·t̄`, accept-all gives
/// `g − c·max(0, r − B)` and the time cap gives `min(g, b·B)`.
pub fn analytic_net_benefit(policy: AnalyticPolicy, cfg: &SimConfig) -> f64 {
    let arrivals = cfg.expected_arrivals();
    let gross = cfg.mean_benefit_rate * cfg.mean_read_minutes * arrivals;
    let reading = arrivals * cfg.mean_read_minutes;
    match policy {
        AnalyticPolicy::AcceptAll => {
            gross - cfg.opportunity_rate * (reading - cfg.exclusive_budget_minutes).max(0.0)
        }
        AnalyticPolicy::TimeCap => gross.min(cfg.mean_benefit_rate * cfg.exclusive_budget_minutes),
    }
}

/// One simulated cycle. All draws for a message are made whether or not it
/// is accepted, so different policies see the same arrivals for a seed.
pub fn run_replication(
    cfg: &SimConfig,
    policy_cfg: &PricingPolicyConfig,
    time_model: &ReadingTimeModel,
    replication: u64,
) -> CycleMetrics {
    let mut rng = SimRng::stream(cfg.seed, replication);
    let n = rng.poisson(cfg.expected_arrivals());
    let mut arrivals: Vec<f64> = (0..n).map(|_| rng.uniform() * cfg.cycle_minutes).collect();
    arrivals.sort_by(f64::total_cmp);

    let mut state = PolicyState {
        exclusive_budget_minutes: cfg.exclusive_budget_minutes,
        ..PolicyState::new(policy_cfg)
    };
    let (predicted_minutes, _) = predict_read_time(time_model, "", 0);
    let predicted_benefit = cfg.mean_benefit_rate * predicted_minutes;
    let mut m = CycleMetrics {
        messages_arrived: n,
        ..Default::default()
    };
    for at in arrivals {
        let read = rng.normal(cfg.mean_read_minutes, cfg.read_sd_minutes).max(MIN_PREDICTED_MINUTES);
        let rate = rng.normal(cfg.mean_benefit_rate, cfg.benefit_rate_sd);
        let wtp = rng.normal(cfg.wtp_mean, cfg.wtp_sd).max(0.0);
        let offered = if policy_cfg.kind.is_priced() { wtp } else { 0.0 };

        state.cycle_progress = (at / cfg.cycle_minutes).max(f64::MIN_POSITIVE);
        let quote = policy::quote_price(policy_cfg, &state);
        let decision = policy::decide(policy_cfg, &state, predicted_minutes, predicted_benefit, offered)
            .expect("validated inputs");
        let accepted = decision.is_accept();
        if accepted {
            state = policy::commit(&state, predicted_minutes);
            m.accepted += 1;
            m.total_read_minutes += read;
            m.gross_benefit += rate * read;
            m.payments_collected += quote;
        } else {
            m.rejected += 1;
        }
        state = policy::record_offer(&state, accepted);
        if policy_cfg.kind == PolicyKind::AdaptivePrice && state.window_offer_count >= cfg.adapt_window {
            state = policy::update_adaptive(policy_cfg, &state);
        }
    }
    m.settle(cfg);
    m
}

/// Averages [`run_replication`] over `cfg.replications` independent streams.
pub fn simulate_cycle(
    cfg: &SimConfig,
    policy_cfg: &PricingPolicyConfig,
    time_model: &ReadingTimeModel,
) -> Result<SimSummary, SimError> {
    cfg.validate()?;
    policy_cfg
        .validate()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let mut acc = MetricsAccumulator::default();
    for rep in 0..cfg.replications {
        acc.push(&run_replication(cfg, policy_cfg, time_model, rep));
    }
    Ok(acc.summary())
}

/// The prediction model the simulator's recipient uses by default.
pub fn default_time_model(cfg: &SimConfig) -> ReadingTimeModel {
    ReadingTimeModel::constant(cfg.mean_read_minutes, cfg.read_sd_minutes.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: PolicyKind, lambda: f64, reps: u64) -> SimSummary {
        let cfg = SimConfig::with_lambda(lambda, 42, reps);
        simulate_cycle(&cfg, &cfg.policy(kind), &default_time_model(&cfg)).unwrap()
    }

    #[test]
    fn analytic_values() {
        let at = |p, l| analytic_net_benefit(p, &SimConfig::with_lambda(l, 0, 1));
        assert!((at(AnalyticPolicy::AcceptAll, 1.0 / 60.0) - 75.0).abs() < 1e-9);
        assert!(at(AnalyticPolicy::AcceptAll, 1.0 / 30.0).abs() < 1e-9);
        assert!((at(AnalyticPolicy::AcceptAll, 1.0 / 90.0) - 50.0).abs() < 1e-9);
        assert!((at(AnalyticPolicy::TimeCap, 1.0 / 30.0) - 75.0).abs() < 1e-9);
        assert_eq!(at(AnalyticPolicy::AcceptAll, 0.0), 0.0);
        assert_eq!(at(AnalyticPolicy::TimeCap, 0.0), 0.0);
    }

    #[test]
    fn zero_arrivals_is_exactly_zero() {
        let s = run(PolicyKind::AcceptAll, 0.0, 50);
        assert_eq!(s.mean, MeanMetrics::default());
    }

    #[test]
    fn deterministic_replay() {
        let a = run(PolicyKind::TimeCap, 1.0 / 45.0, 300);
        let b = run(PolicyKind::TimeCap, 1.0 / 45.0, 300);
        assert_eq!(a, b);
        let other_seed = {
            let cfg = SimConfig::with_lambda(1.0 / 45.0, 43, 300);
            simulate_cycle(&cfg, &cfg.policy(PolicyKind::TimeCap), &default_time_model(&cfg)).unwrap()
        };
        assert_ne!(a, other_seed);
    }

    #[test]
    fn per_replication_accounting() {
        let cfg = SimConfig::with_lambda(1.0 / 30.0, 5, 1);
        for kind in [PolicyKind::AcceptAll, PolicyKind::TimeCap, PolicyKind::FixedPrice] {
            let pol = PricingPolicyConfig { base_price: 8.0, ..cfg.policy(kind) };
            for rep in 0..200 {
                let m = run_replication(&cfg, &pol, &default_time_model(&cfg), rep);
                assert_eq!(m.accepted + m.rejected, m.messages_arrived);
                assert_eq!(m.net_benefit, m.gross_benefit - m.opportunity_cost);
                assert_eq!(
                    m.opportunity_cost,
                    cfg.opportunity_rate * (m.total_read_minutes - cfg.exclusive_budget_minutes).max(0.0)
                );
            }
        }
    }

    #[test]
    fn time_cap_accepts_at_most_budget_over_mean() {
        let cfg = SimConfig::with_lambda(0.1, 1, 1);
        for rep in 0..100 {
            let m = run_replication(&cfg, &cfg.policy(PolicyKind::TimeCap), &default_time_model(&cfg), rep);
            assert!(m.accepted <= 5);
        }
    }

    #[test]
    fn time_cap_plateaus() {
        let lambdas = [1.0 / 120.0, 1.0 / 90.0, 1.0 / 60.0, 1.0 / 45.0, 1.0 / 30.0, 1.0 / 20.0];
        let sims: Vec<SimSummary> = lambdas.iter().map(|&l| run(PolicyKind::TimeCap, l, 4000)).collect();
        for w in sims.windows(2) {
            let band = 3.0 * (w[0].se.net_benefit.powi(2) + w[1].se.net_benefit.powi(2)).sqrt();
            assert!(w[1].mean.net_benefit + band >= w[0].mean.net_benefit);
        }
    }

    #[test]
    fn priced_policies_collect_payments() {
        let cfg = SimConfig::with_lambda(1.0 / 30.0, 3, 500);
        let fixed = PricingPolicyConfig { base_price: 8.0, ..cfg.policy(PolicyKind::FixedPrice) };
        let s = simulate_cycle(&cfg, &fixed, &default_time_model(&cfg)).unwrap();
        assert!(s.mean.accepted < s.mean.messages_arrived);
        assert!((s.mean.payments_collected - 8.0 * s.mean.accepted).abs() < 1e-6);

        let cong = PricingPolicyConfig {
            base_price: 2.0,
            congestion_slope: 2.0,
            ..cfg.policy(PolicyKind::CongestionPrice)
        };
        let c = simulate_cycle(&cfg, &cong, &default_time_model(&cfg)).unwrap();
        assert!(c.mean.accepted < s.mean.messages_arrived);

        let adaptive = PricingPolicyConfig {
            base_price: 1.0,
            price_ceiling: 50.0,
            ..cfg.policy(PolicyKind::AdaptivePrice)
        };
        simulate_cycle(&cfg, &adaptive, &default_time_model(&cfg)).unwrap();
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SimConfig::with_lambda(-1.0, 0, 1);
        let pol = cfg.policy(PolicyKind::AcceptAll);
        assert!(simulate_cycle(&cfg, &pol, &default_time_model(&cfg)).is_err());
        cfg.lambda_per_min = 0.1;
        cfg.replications = 0;
        assert!(simulate_cycle(&cfg, &pol, &default_time_model(&cfg)).is_err());
    }
}
