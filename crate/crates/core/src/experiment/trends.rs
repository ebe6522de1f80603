//! Machine-readable comparison of sampling conditions.

use super::{Condition, ReportBundle};
use crate::experiment::histogram::wasserstein1;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrendError {
    #[error("need a conventional condition and at least two typical conditions, found {conventional} conventional and {typical} typical")]
    InsufficientConditions { conventional: usize, typical: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Holds,
    Tie,
    Violated,
}

/// `margin = value(from) - value(to)`; the expected direction is a positive
/// margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub from: String,
    pub to: String,
    pub margin: f64,
    /// Standard error of the margin, when the compared values are estimates.
    pub std_err: Option<f64>,
    pub outcome: Outcome,
}

impl Comparison {
    fn new(from: &str, to: &str, margin: f64, std_err: Option<f64>) -> Self {
        let outcome = if margin > 0.0 {
            Outcome::Holds
        } else if margin == 0.0 {
            Outcome::Tie
        } else {
            Outcome::Violated
        };
        Comparison {
            from: from.to_string(),
            to: to.to_string(),
            margin,
            std_err,
            outcome,
        }
    }

    /// Margin exceeds `k` standard errors (false when no error is attached).
    pub fn exceeds(&self, k: f64) -> bool {
        self.std_err.is_some_and(|se| self.margin > k * se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trend {
    /// No comparison is violated; ties count as holding.
    pub holds: bool,
    pub ties: usize,
    pub comparisons: Vec<Comparison>,
}

impl Trend {
    fn from(comparisons: Vec<Comparison>) -> Self {
        Trend {
            holds: comparisons.iter().all(|c| c.outcome != Outcome::Violated),
            ties: comparisons
                .iter()
                .filter(|c| c.outcome == Outcome::Tie)
                .count(),
            comparisons,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSummary {
    /// Typical conditions ordered by decreasing tau.
    pub typical_order: Vec<String>,
    /// Standard deviation of signed per-event epsilon shrinks step by step as
    /// tau decreases.
    pub epsilon_stdev_decreasing: Trend,
    /// Each typical condition's epsilon stdev is at most the conventional one.
    pub epsilon_stdev_below_conventional: Trend,
    /// Mean sampled-sequence information density shrinks as tau decreases.
    pub mean_id_decreasing: Trend,
    /// Every step of `mean_id_decreasing` exceeds two standard errors.
    pub mean_id_margins_exceed_2se: bool,
    /// Conventional is closer (1-Wasserstein on shared epsilon bins) to the
    /// reference than each typical condition: `margin = W1(typical, ref) -
    /// W1(conventional, ref)`.
    pub conventional_closest_to_reference: Trend,
}

impl TrendSummary {
    pub fn all_hold(&self) -> bool {
        self.epsilon_stdev_decreasing.holds
            && self.epsilon_stdev_below_conventional.holds
            && self.mean_id_decreasing.holds
            && self.conventional_closest_to_reference.holds
    }
}

pub fn compare_conditions(bundle: &ReportBundle) -> Result<TrendSummary, TrendError> {
    let conventional: Vec<&Condition> = bundle
        .conditions
        .iter()
        .filter(|c| c.kind == super::ConditionKind::Conventional)
        .collect();
    let mut typical: Vec<&Condition> = bundle
        .conditions
        .iter()
        .filter(|c| matches!(c.kind, super::ConditionKind::Typical { .. }))
        .collect();
    if conventional.len() != 1 || typical.len() < 2 {
        return Err(TrendError::InsufficientConditions {
            conventional: conventional.len(),
            typical: typical.len(),
        });
    }
    let conventional = conventional[0];
    typical.sort_by(|a, b| b.tau().total_cmp(&a.tau()));

    let stdev_steps = typical
        .windows(2)
        .map(|w| {
            Comparison::new(
                &w[0].label,
                &w[1].label,
                w[0].event_summary.stdev - w[1].event_summary.stdev,
                None,
            )
        })
        .collect();
    let stdev_vs_conv = typical
        .iter()
        .map(|t| {
            Comparison::new(
                &conventional.label,
                &t.label,
                conventional.event_summary.stdev - t.event_summary.stdev,
                None,
            )
        })
        .collect();
    let id_steps: Vec<Comparison> = typical
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].id_estimate, w[1].id_estimate);
            Comparison::new(
                &w[0].label,
                &w[1].label,
                a.mean - b.mean,
                Some((a.std_err.powi(2) + b.std_err.powi(2)).sqrt()),
            )
        })
        .collect();
    let exceed = id_steps.iter().all(|c| c.exceeds(2.0));

    let reference = bundle.reference();
    let w1 = |c: &Condition| wasserstein1(&c.event_histogram, &reference.event_histogram);
    let conv_w1 = w1(conventional);
    let closeness = typical
        .iter()
        .map(|t| Comparison::new(&t.label, &conventional.label, w1(t) - conv_w1, None))
        .collect();

    Ok(TrendSummary {
        typical_order: typical.iter().map(|c| c.label.clone()).collect(),
        epsilon_stdev_decreasing: Trend::from(stdev_steps),
        epsilon_stdev_below_conventional: Trend::from(stdev_vs_conv),
        mean_id_decreasing: Trend::from(id_steps),
        mean_id_margins_exceed_2se: exceed,
        conventional_closest_to_reference: Trend::from(closeness),
    })
}
