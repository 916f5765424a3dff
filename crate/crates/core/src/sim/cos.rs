//! Classes-of-service experiment: route each generated message through the
//! benefit grid to a class, apply that class's access rule and pricing,
//! and compare the recipient's net benefit with a single fixed price.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cycle::{CycleMetrics, MetricsAccumulator, SimConfig, SimSummary};
use super::rng::SimRng;
use super::SimError;
use crate::model::{classify_benefit, region_to_cos, BenefitPoint, Catalog, Thresholds};
use crate::policy::{self, PolicyKind, PolicyState};
use crate::selection::MIN_PREDICTED_MINUTES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationComponent {
    pub label: String,
    pub weight: f64,
    pub sender_mean: f64,
    pub sender_sd: f64,
    pub receiver_mean: f64,
    pub receiver_sd: f64,
    /// Probability the sender is on the recipient's trusted list.
    pub trusted_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePopulation {
    pub components: Vec<PopulationComponent>,
    /// Sender ids drawn for trusted messages.
    pub trusted_senders: Vec<String>,
}

impl MessagePopulation {
    /// Friends, recipient-valued notes, sender-valued solicitations and
    /// misdirected mail.
    pub fn mixed() -> Self {
        let c = |label: &str, weight, sm, ss, rm, rs, tp| PopulationComponent {
            label: label.to_string(),
            weight,
            sender_mean: sm,
            sender_sd: ss,
            receiver_mean: rm,
            receiver_sd: rs,
            trusted_probability: tp,
        };
        MessagePopulation {
            components: vec![
                c("friends", 0.3, 6.0, 3.0, 15.0, 5.0, 0.6),
                c("recipient_valued", 0.2, -3.0, 1.5, 15.0, 5.0, 0.7),
                c("sender_valued", 0.3, 12.0, 5.0, -4.0, 3.0, 0.05),
                c("misdirected", 0.2, -2.0, 2.0, -6.0, 3.0, 0.0),
            ],
            trusted_senders: (1..=5).map(|i| format!("friend{i}")).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidConfig("mixture weights must sum to 1".into()));
        }
        let needs_trusted = self.components.iter().any(|c| c.trusted_probability > 0.0);
        if needs_trusted && self.trusted_senders.is_empty() {
            return Err(SimError::InvalidConfig("trusted_senders is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Offer {
    sender_id: String,
    point: BenefitPoint,
    wtp: f64,
    read_minutes: f64,
}

fn draw_offer(pop: &MessagePopulation, cfg: &SimConfig, rng: &mut SimRng, weights: &[f64], idx: u64) -> Offer {
    let comp = &pop.components[rng.categorical(weights)];
    let sender = rng.normal(comp.sender_mean, comp.sender_sd);
    let receiver = rng.normal(comp.receiver_mean, comp.receiver_sd);
    let trusted = rng.bernoulli(comp.trusted_probability);
    let pick = rng.uniform();
    let read_minutes = rng.normal(cfg.mean_read_minutes, cfg.read_sd_minutes).max(MIN_PREDICTED_MINUTES);
    let sender_id = if trusted {
        let i = ((pick * pop.trusted_senders.len() as f64) as usize).min(pop.trusted_senders.len() - 1);
        pop.trusted_senders[i].clone()
    } else {
        format!("anon{idx}")
    };
    Offer {
        sender_id,
        point: BenefitPoint::new(sender, receiver),
        wtp: sender.max(0.0),
        read_minutes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosRow {
    pub cos_id: String,
    pub metrics: SimSummary,
    /// Mean offers per cycle turned away by the class's sender allowlist.
    pub denied_untrusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosExperimentReport {
    pub per_cos: Vec<CosRow>,
    /// Messages whose grid region no class covers.
    pub unrouted: SimSummary,
    pub total: SimSummary,
    pub baseline_price: f64,
    pub baseline: SimSummary,
    /// Count over all cycles; an allowlist violation if nonzero.
    pub untrusted_admitted_to_trusted_only: u64,
}

#[derive(Default)]
struct ClassCycle {
    metrics: CycleMetrics,
    denied: u64,
}

/// Runs `cfg.replications` cycles of `Poisson(λT)` offers. The baseline
/// accepts any offer whose sender will pay the fixed-price class's price.
pub fn run_cos_experiment(
    catalog: &Catalog,
    population: &MessagePopulation,
    cfg: &SimConfig,
    thresholds: Thresholds,
    seed: u64,
) -> Result<CosExperimentReport, SimError> {
    cfg.validate()?;
    population.validate()?;
    catalog.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let baseline_price = catalog
        .classes
        .iter()
        .find(|c| !c.is_trusted_only() && c.pricing.kind == PolicyKind::FixedPrice)
        .map(|c| c.pricing.base_price)
        .ok_or_else(|| SimError::InvalidConfig("catalog has no open fixed-price class".into()))?;

    let weights: Vec<f64> = population.components.iter().map(|c| c.weight).collect();
    let mut per_cos: BTreeMap<&str, (MetricsAccumulator, f64)> = catalog
        .classes
        .iter()
        .map(|c| (c.cos_id.as_str(), (MetricsAccumulator::default(), 0.0)))
        .collect();
    let mut unrouted_acc = MetricsAccumulator::default();
    let mut total_acc = MetricsAccumulator::default();
    let mut base_acc = MetricsAccumulator::default();
    let mut violations = 0u64;

    for rep in 0..cfg.replications {
        let mut rng = SimRng::stream(seed, rep);
        let n = rng.poisson(cfg.expected_arrivals());
        let offers: Vec<Offer> = (0..n).map(|i| draw_offer(population, cfg, &mut rng, &weights, i)).collect();

        let mut classes: BTreeMap<&str, (ClassCycle, PolicyState)> = catalog
            .classes
            .iter()
            .map(|c| {
                let st = PolicyState {
                    exclusive_budget_minutes: cfg.exclusive_budget_minutes,
                    ..PolicyState::new(&c.pricing)
                };
                (c.cos_id.as_str(), (ClassCycle::default(), st))
            })
            .collect();
        let mut unrouted = CycleMetrics::default();
        let mut baseline = CycleMetrics {
            messages_arrived: n,
            ..Default::default()
        };

        for offer in &offers {
            if offer.wtp >= baseline_price {
                baseline.accepted += 1;
                baseline.total_read_minutes += offer.read_minutes;
                baseline.gross_benefit += offer.point.receiver_benefit;
                baseline.payments_collected += baseline_price;
            } else {
                baseline.rejected += 1;
            }

            let region = classify_benefit(offer.point, thresholds).expect("finite draws");
            let Some(cos) = region_to_cos(region, &catalog.classes).and_then(|id| catalog.get(&id)) else {
                unrouted.messages_arrived += 1;
                unrouted.rejected += 1;
                continue;
            };
            let (cycle, state) = classes.get_mut(cos.cos_id.as_str()).expect("class present");
            cycle.metrics.messages_arrived += 1;
            if !cos.admits_sender(&offer.sender_id) {
                cycle.denied += 1;
                cycle.metrics.rejected += 1;
                continue;
            }
            if state.queue_length as usize >= cos.capacity {
                cycle.metrics.rejected += 1;
                continue;
            }
            let quote = policy::quote_price(&cos.pricing, state);
            let predicted = cfg.mean_read_minutes;
            let decision = policy::decide(
                &cos.pricing,
                state,
                predicted,
                cfg.mean_benefit_rate * predicted,
                offer.wtp,
            )
            .expect("validated inputs");
            if decision.is_accept() {
                if cos.is_trusted_only() && !cos.trusted_senders.contains(&offer.sender_id) {
                    violations += 1;
                }
                *state = policy::commit(state, predicted);
                cycle.metrics.accepted += 1;
                cycle.metrics.total_read_minutes += offer.read_minutes;
                cycle.metrics.gross_benefit += offer.point.receiver_benefit;
                cycle.metrics.payments_collected += quote;
            } else {
                cycle.metrics.rejected += 1;
            }
        }

        // The exclusive budget is shared across classes; its overrun is
        // charged to each class in proportion to its reading minutes.
        let mut total = CycleMetrics {
            messages_arrived: n,
            ..Default::default()
        };
        for (cycle, _) in classes.values() {
            total.accepted += cycle.metrics.accepted;
            total.rejected += cycle.metrics.rejected;
            total.total_read_minutes += cycle.metrics.total_read_minutes;
            total.gross_benefit += cycle.metrics.gross_benefit;
            total.payments_collected += cycle.metrics.payments_collected;
        }
        total.rejected += unrouted.rejected;
        total.settle(cfg);
        for (id, (cycle, _)) in classes.iter_mut() {
            let m = &mut cycle.metrics;
            m.opportunity_cost = if total.total_read_minutes > 0.0 {
                total.opportunity_cost * m.total_read_minutes / total.total_read_minutes
            } else {
                0.0
            };
            m.net_benefit = m.gross_benefit - m.opportunity_cost;
            let slot = per_cos.get_mut(id).expect("class present");
            slot.0.push(m);
            slot.1 += cycle.denied as f64;
        }
        unrouted_acc.push(&unrouted);
        total_acc.push(&total);
        baseline.settle(cfg);
        base_acc.push(&baseline);
    }

    let reps = cfg.replications as f64;
    Ok(CosExperimentReport {
        per_cos: catalog
            .classes
            .iter()
            .map(|c| {
                let (acc, denied) = &per_cos[c.cos_id.as_str()];
                CosRow {
                    cos_id: c.cos_id.clone(),
                    metrics: acc.summary(),
                    denied_untrusted: denied / reps,
                }
            })
            .collect(),
        unrouted: unrouted_acc.summary(),
        total: total_acc.summary(),
        baseline_price,
        baseline: base_acc.summary(),
        untrusted_admitted_to_trusted_only: violations,
    })
}

impl CosExperimentReport {
    pub fn net_gain_over_baseline(&self) -> f64 {
        self.total.mean.net_benefit - self.baseline.mean.net_benefit
    }

    pub fn cos(&self, id: &str) -> Option<&CosRow> {
        self.per_cos.iter().find(|r| r.cos_id == id)
    }
}
