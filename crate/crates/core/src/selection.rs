//! Reading-time models and the benefit-maximising choice of messages and
//! tasks within a limited interval.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PRIOR_MEAN_MINUTES: f64 = 3.0;
pub const PRIOR_VARIANCE: f64 = 1.0;
pub const MIN_PREDICTED_MINUTES: f64 = 0.1;
/// Fewer observations than this yield the prior model.
pub const MIN_OBSERVATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadObservation {
    pub sender_id: String,
    pub size_bytes: u64,
    pub minutes: f64,
}

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: minutes must be > 0, got {minutes}")]
    NonPositiveMinutes { row: usize, minutes: f64 },
}

/// Reads `sender_id,size_bytes,minutes` rows (header required).
pub fn read_observations<R: std::io::Read>(
    reader: R,
) -> Result<Vec<ReadObservation>, ObservationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ReadObservation>().enumerate() {
        let rec = rec?;
        if !(rec.minutes.is_finite() && rec.minutes > 0.0) {
            return Err(ObservationError::NonPositiveMinutes {
                row: i + 1,
                minutes: rec.minutes,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_observations(path: &Path) -> Result<Vec<ReadObservation>, ObservationError> {
    let file = std::fs::File::open(path).map_err(csv::Error::from)?;
    read_observations(file)
}

/// Linear model of reading minutes on message size with additive
/// per-sender offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingTimeModel {
    pub intercept: f64,
    /// Minutes per byte.
    pub slope: f64,
    pub residual_variance: f64,
    pub per_sender_offset: BTreeMap<String, f64>,
    pub prior_mean: f64,
    pub prior_variance: f64,
    /// True when the model carries no fitted information.
    pub fallback: bool,
}

impl Default for ReadingTimeModel {
    fn default() -> Self {
        Self::prior()
    }
}

impl ReadingTimeModel {
    pub fn prior() -> Self {
        ReadingTimeModel {
            intercept: PRIOR_MEAN_MINUTES,
            slope: 0.0,
            residual_variance: PRIOR_VARIANCE,
            per_sender_offset: BTreeMap::new(),
            prior_mean: PRIOR_MEAN_MINUTES,
            prior_variance: PRIOR_VARIANCE,
            fallback: true,
        }
    }

    /// A model predicting a constant mean, e.g. the simulator's t̄.
    pub fn constant(mean: f64, variance: f64) -> Self {
        ReadingTimeModel {
            intercept: mean,
            prior_mean: mean,
            residual_variance: variance,
            prior_variance: variance,
            ..Self::prior()
        }
    }
}

/// Joint least squares of `minutes ~ intercept + slope*size + offset(sender)`.
///
/// The slope is the pooled within-sender estimate; each sender's intercept
/// is its mean residual, and the reported intercept is the count-weighted
/// mean of those so unknown senders get offset 0.
pub fn fit_reading_time(obs: &[ReadObservation]) -> ReadingTimeModel {
    if obs.len() < MIN_OBSERVATIONS {
        return ReadingTimeModel::prior();
    }
    let mut groups: BTreeMap<&str, Vec<&ReadObservation>> = BTreeMap::new();
    for o in obs {
        groups.entry(o.sender_id.as_str()).or_default().push(o);
    }
    let n = obs.len() as f64;
    let group_means: BTreeMap<&str, (f64, f64)> = groups
        .iter()
        .map(|(s, rows)| {
            let k = rows.len() as f64;
            let mx = rows.iter().map(|o| o.size_bytes as f64).sum::<f64>() / k;
            let my = rows.iter().map(|o| o.minutes).sum::<f64>() / k;
            (*s, (mx, my))
        })
        .collect();

    let (mut sxy, mut sxx) = (0.0, 0.0);
    for o in obs {
        let (mx, my) = group_means[o.sender_id.as_str()];
        let dx = o.size_bytes as f64 - mx;
        sxy += dx * (o.minutes - my);
        sxx += dx * dx;
    }
    let slope_estimated = sxx > 0.0;
    let slope = if slope_estimated { sxy / sxx } else { 0.0 };

    let mean_x = obs.iter().map(|o| o.size_bytes as f64).sum::<f64>() / n;
    let mean_y = obs.iter().map(|o| o.minutes).sum::<f64>() / n;
    let intercept = mean_y - slope * mean_x;
    let per_sender_offset: BTreeMap<String, f64> = group_means
        .iter()
        .map(|(s, (mx, my))| (s.to_string(), my - slope * mx - intercept))
        .collect();

    let ssr: f64 = obs
        .iter()
        .map(|o| {
            let fitted = intercept + slope * o.size_bytes as f64 + per_sender_offset[&o.sender_id];
            (o.minutes - fitted).powi(2)
        })
        .sum();
    let params = groups.len() + usize::from(slope_estimated);
    let residual_variance = if obs.len() > params {
        let v = ssr / (obs.len() - params) as f64;
        // Exact fits leave only rounding noise.
        if v < 1e-24 {
            0.0
        } else {
            v
        }
    } else {
        PRIOR_VARIANCE
    };

    ReadingTimeModel {
        intercept,
        slope,
        residual_variance,
        per_sender_offset,
        prior_mean: PRIOR_MEAN_MINUTES,
        prior_variance: PRIOR_VARIANCE,
        fallback: false,
    }
}

/// Mean and variance of the predicted reading time in minutes.
pub fn predict_read_time(model: &ReadingTimeModel, sender_id: &str, size_bytes: u64) -> (f64, f64) {
    if model.fallback {
        return (model.prior_mean, model.prior_variance);
    }
    let offset = model.per_sender_offset.get(sender_id).copied().unwrap_or(0.0);
    let mean = model.intercept + model.slope * size_bytes as f64 + offset;
    (mean.max(MIN_PREDICTED_MINUTES), model.residual_variance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Message,
    Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub minutes: f64,
    pub benefit: f64,
    pub kind: ItemKind,
}

impl TaskItem {
    pub fn new(id: impl Into<String>, minutes: f64, benefit: f64, kind: ItemKind) -> Self {
        TaskItem {
            id: id.into(),
            minutes,
            benefit,
            kind,
        }
    }

    pub fn rate(&self) -> f64 {
        self.benefit / self.minutes
    }
}

/// Chosen items, ids in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<String>,
    pub total_minutes: f64,
    pub total_benefit: f64,
}

impl Selection {
    fn from_items<'a>(items: impl IntoIterator<Item = &'a TaskItem>) -> Self {
        let mut sel = Selection::default();
        let mut chosen: Vec<&TaskItem> = items.into_iter().collect();
        chosen.sort_by(|a, b| a.id.cmp(&b.id));
        for it in chosen {
            sel.ids.push(it.id.clone());
            sel.total_minutes += it.minutes;
            sel.total_benefit += it.benefit;
        }
        sel
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("{items} items exceed the solver limit of {limit}")]
    Capacity { items: usize, limit: usize },
    #[error("table of {cells} cells exceeds the solver limit of {limit}")]
    TableTooLarge { cells: u128, limit: u128 },
    #[error("budget must be finite and >= 0, got {0}")]
    InvalidBudget(f64),
    #[error("item `{0}` has non-positive or non-finite minutes")]
    InvalidItem(String),
}

const FIT_EPS: f64 = 1e-9;

/// Highest-benefit-rate-first selection.
pub fn greedy_select(items: &[TaskItem], budget_minutes: f64) -> Selection {
    let mut cands: Vec<&TaskItem> = items
        .iter()
        .filter(|it| it.benefit > 0.0 && it.minutes > 0.0)
        .collect();
    cands.sort_by(|a, b| {
        b.rate()
            .total_cmp(&a.rate())
            .then(b.benefit.total_cmp(&a.benefit))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut remaining = budget_minutes.max(0.0);
    let mut picked = Vec::new();
    for it in cands {
        if it.minutes <= remaining + FIT_EPS {
            remaining -= it.minutes;
            picked.push(it);
        }
    }
    Selection::from_items(picked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverLimits {
    /// Minutes per discretisation step.
    pub resolution: f64,
    pub max_items: usize,
    pub max_cells: u128,
}

impl Default for SolverLimits {
    fn default() -> Self {
        SolverLimits {
            resolution: 0.1,
            max_items: 256,
            max_cells: 50_000_000,
        }
    }
}

fn to_units(minutes: f64, resolution: f64, round_up: bool) -> u64 {
    let x = minutes / resolution;
    let r = x.round();
    if (x - r).abs() < 1e-6 {
        r as u64
    } else if round_up {
        x.ceil() as u64
    } else {
        x.floor() as u64
    }
}

pub fn optimal_select(items: &[TaskItem], budget_minutes: f64) -> Result<Selection, SelectionError> {
    optimal_select_with(items, budget_minutes, SolverLimits::default())
}

/// Exact 0/1 knapsack over minutes discretised at `limits.resolution`.
///
/// Item durations are rounded up and the budget down, so the result always
/// fits the continuous budget; it is exactly optimal when all durations are
/// multiples of the resolution. Ties prefer fewer minutes, then the
/// lexicographically smallest id list.
pub fn optimal_select_with(
    items: &[TaskItem],
    budget_minutes: f64,
    limits: SolverLimits,
) -> Result<Selection, SelectionError> {
    if !(budget_minutes.is_finite() && budget_minutes >= 0.0) {
        return Err(SelectionError::InvalidBudget(budget_minutes));
    }
    if items.len() > limits.max_items {
        return Err(SelectionError::Capacity {
            items: items.len(),
            limit: limits.max_items,
        });
    }
    if let Some(bad) = items.iter().find(|it| !(it.minutes.is_finite() && it.minutes > 0.0)) {
        return Err(SelectionError::InvalidItem(bad.id.clone()));
    }
    let mut cands: Vec<&TaskItem> = items.iter().filter(|it| it.benefit > 0.0).collect();
    cands.sort_by(|a, b| a.id.cmp(&b.id));
    let cap = to_units(budget_minutes, limits.resolution, false) as usize;
    let weights: Vec<usize> = cands
        .iter()
        .map(|it| to_units(it.minutes, limits.resolution, true) as usize)
        .collect();
    let cells = (cands.len() as u128 + 1) * (cap as u128 + 1);
    if cells > limits.max_cells {
        return Err(SelectionError::TableTooLarge {
            cells,
            limit: limits.max_cells,
        });
    }

    // best[i][c]: optimum over cands[i..] using at most c units, as
    // (benefit, units). Filled from the back so reconstruction can walk ids
    // in ascending order and include the earliest consistent item.
    let n = cands.len();
    let width = cap + 1;
    let mut best = vec![(0.0f64, 0usize); (n + 1) * width];
    let better = |a: (f64, usize), b: (f64, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    for i in (0..n).rev() {
        let (w, b) = (weights[i], cands[i].benefit);
        for c in 0..width {
            let skip = best[(i + 1) * width + c];
            let mut v = skip;
            if w <= c {
                let rest = best[(i + 1) * width + c - w];
                let take = (b + rest.0, w + rest.1);
                if better(take, skip) || take == skip {
                    v = take;
                }
            }
            best[i * width + c] = v;
        }
    }
    let mut chosen = Vec::new();
    let mut c = cap;
    for i in 0..n {
        let w = weights[i];
        if w <= c {
            let rest = best[(i + 1) * width + c - w];
            if (cands[i].benefit + rest.0, w + rest.1) == best[i * width + c] {
                chosen.push(cands[i]);
                c -= w;
            }
        }
    }
    Ok(Selection::from_items(chosen))
}
