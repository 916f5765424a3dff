use serde::{Deserialize, Serialize};

use super::cycle::{analytic_net_benefit, default_time_model, simulate_cycle, AnalyticPolicy, SimConfig};
use super::rng::SimRng;
use super::SimError;

/// One (λ, policy) row of a rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub policy: String,
    pub lambda: f64,
    pub analytic: f64,
    pub sim_mean: f64,
    pub sim_se: f64,
    pub replications: u64,
}

/// Rows are emitted λ-major in input order. Every row reuses the
/// template's seed.
pub fn sweep_lambda(
    template: &SimConfig,
    lambdas: &[f64],
    policies: &[AnalyticPolicy],
) -> Result<Vec<LambdaRow>, SimError> {
    if lambdas.is_empty() {
        return Err(SimError::InvalidConfig("lambda grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len() * policies.len());
    for &lambda in lambdas {
        let cfg = SimConfig {
            lambda_per_min: lambda,
            ..template.clone()
        };
        for &p in policies {
            let sim = simulate_cycle(&cfg, &cfg.policy(p.kind()), &default_time_model(&cfg))?;
            rows.push(LambdaRow {
                policy: p.as_str().to_string(),
                lambda,
                analytic: analytic_net_benefit(p, &cfg),
                sim_mean: sim.mean.net_benefit,
                sim_se: sim.se.net_benefit,
                replications: sim.replications,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Correlated,
    RecipientSkewed,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Correlated => "correlated",
            ScenarioKind::RecipientSkewed => "recipient_skewed",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "correlated" => Ok(ScenarioKind::Correlated),
            "recipient_skewed" => Ok(ScenarioKind::RecipientSkewed),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

/// Gaussian component of a benefit population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitComponent {
    pub weight: f64,
    pub sender_mean: f64,
    pub sender_sd: f64,
    /// Receiver benefit is `receiver_mean + coupling * sender + noise`.
    pub receiver_mean: f64,
    pub receiver_sd: f64,
    #[serde(default)]
    pub coupling: f64,
}

/// Population of (sender, receiver) benefit pairs. Senders are willing to
/// pay their own benefit, floored at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitScenario {
    pub kind: ScenarioKind,
    pub population_size: usize,
    pub components: Vec<BenefitComponent>,
}

impl BenefitScenario {
    /// Receiver benefit tracks sender benefit plus unit noise.
    pub fn correlated() -> Self {
        BenefitScenario {
            kind: ScenarioKind::Correlated,
            population_size: 10_000,
            components: vec![BenefitComponent {
                weight: 1.0,
                sender_mean: 5.0,
                sender_sd: 3.0,
                receiver_mean: 0.0,
                receiver_sd: 1.0,
                coupling: 1.0,
            }],
        }
    }

    /// Two groups: messages valuable to the recipient from senders with
    /// little at stake, and messages valuable mostly to their senders.
    pub fn recipient_skewed() -> Self {
        BenefitScenario {
            kind: ScenarioKind::RecipientSkewed,
            population_size: 10_000,
            components: vec![
                BenefitComponent {
                    weight: 0.4,
                    sender_mean: 1.0,
                    sender_sd: 1.0,
                    receiver_mean: 12.0,
                    receiver_sd: 3.0,
                    coupling: 0.0,
                },
                BenefitComponent {
                    weight: 0.6,
                    sender_mean: 9.0,
                    sender_sd: 3.0,
                    receiver_mean: 2.0,
                    receiver_sd: 2.0,
                    coupling: 0.0,
                },
            ],
        }
    }

    pub fn of_kind(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Correlated => Self::correlated(),
            ScenarioKind::RecipientSkewed => Self::recipient_skewed(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidConfig("mixture weights must sum to 1".into()));
        }
        if self.components.iter().any(|c| c.weight < 0.0 || c.sender_sd < 0.0 || c.receiver_sd < 0.0) {
            return Err(SimError::InvalidConfig("weights and deviations must be >= 0".into()));
        }
        Ok(())
    }

    /// (willingness to pay, receiver benefit) for each population member.
    pub fn generate(&self, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = SimRng::stream(seed, 0);
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        (0..self.population_size)
            .map(|_| {
                let c = &self.components[rng.categorical(&weights)];
                let sender = rng.normal(c.sender_mean, c.sender_sd);
                let receiver = c.receiver_mean + c.coupling * sender + rng.normal(0.0, c.receiver_sd);
                (sender.max(0.0), receiver)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub scenario: String,
    pub price: f64,
    pub accepted_count: u64,
    /// NaN when nothing is accepted.
    pub mean_receiver_benefit: f64,
    pub total_receiver_benefit: f64,
}

/// Filters one fixed population by `wtp >= price` at every price.
pub fn sweep_price(
    scenario: &BenefitScenario,
    prices: &[f64],
    seed: u64,
) -> Result<Vec<PriceRow>, SimError> {
    scenario.validate()?;
    if prices.windows(2).any(|w| w[1] < w[0]) || prices.iter().any(|p| !p.is_finite()) {
        return Err(SimError::InvalidConfig("prices must be finite and sorted ascending".into()));
    }
    let population = scenario.generate(seed);
    Ok(prices
        .iter()
        .map(|&price| {
            let (count, total) = population
                .iter()
                .filter(|(wtp, _)| *wtp >= price)
                .fold((0u64, 0.0), |(n, t), (_, r)| (n + 1, t + r));
            PriceRow {
                scenario: scenario.kind.as_str().to_string(),
                price,
                accepted_count: count,
                mean_receiver_benefit: if count == 0 { f64::NAN } else { total / count as f64 },
                total_receiver_benefit: total,
            }
        })
        .collect())
}

pub fn default_price_grid() -> Vec<f64> {
    (0..=10).map(f64::from).collect()
}
