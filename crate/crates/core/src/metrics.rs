//! Evaluation statistics: Harrell's C-index, the hazard ratio of a two-group
//! split, median-risk grouping and majority voting over folds.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::survival::SurvivalLabel;

/// Harrell's concordance index.
///
/// A pair (i, j) is comparable when `t_i < t_j` and patient i had the event.
/// It scores 1 if `r_i > r_j`, 0.5 on a risk tie, 0 otherwise. Runs in
/// O(N log N) with a Fenwick tree over risk ranks.
pub fn c_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    check_dim("c-index risks vs labels", labels.len(), risks.len())?;
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::Numerical("NaN risk".into()));
    }
    let n = risks.len();
    let mut sorted: Vec<f64> = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |r: f64| sorted.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));

    let mut tree = Fenwick::new(sorted.len());
    let mut inserted = 0u64;
    let mut concordant = 0u64;
    let mut tied = 0u64;
    let mut comparable = 0u64;
    let mut start = 0;
    while start < n {
        let t = labels[order[start]].time;
        let mut end = start;
        while end < n && labels[order[end]].time == t {
            end += 1;
        }
        // The tree holds exactly the patients with time > t.
        for &i in &order[start..end] {
            if !labels[i].event {
                continue;
            }
            let r = rank(risks[i]);
            let below = tree.prefix(r);
            let at_or_below = tree.prefix(r + 1);
            concordant += below;
            tied += at_or_below - below;
            comparable += inserted;
        }
        for &i in &order[start..end] {
            tree.add(rank(risks[i]));
            inserted += 1;
        }
        start = end;
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / comparable as f64)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of entries with index < `i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGroup {
    pub assignment: Vec<Group>,
    pub threshold: f64,
}

impl RiskGroup {
    pub fn count(&self, g: Group) -> usize {
        self.assignment.iter().filter(|&&a| a == g).count()
    }
}

/// Median; even counts average the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Thresholds `eval_risks` at the training median; strictly above is high.
pub fn median_split(train_risks: &[f64], eval_risks: &[f64]) -> Result<RiskGroup> {
    let threshold = median(train_risks)
        .ok_or_else(|| Error::InvalidInput("median split needs training risks".into()))?;
    Ok(split_at(threshold, eval_risks))
}

pub fn split_at(threshold: f64, risks: &[f64]) -> RiskGroup {
    RiskGroup {
        assignment: risks
            .iter()
            .map(|&r| {
                if r > threshold {
                    Group::High
                } else {
                    Group::Low
                }
            })
            .collect(),
        threshold,
    }
}

/// Per-patient modal group across folds; even splits go to high.
///
/// The returned threshold is the mean of the fold thresholds.
pub fn majority_vote(folds: &[RiskGroup]) -> Result<RiskGroup> {
    let first = folds
        .first()
        .ok_or_else(|| Error::InvalidInput("majority vote needs at least one fold".into()))?;
    let n = first.assignment.len();
    for f in folds {
        check_dim("majority vote patients", n, f.assignment.len())?;
    }
    let assignment = (0..n)
        .map(|i| {
            let high = folds
                .iter()
                .filter(|f| f.assignment[i] == Group::High)
                .count();
            if 2 * high >= folds.len() {
                Group::High
            } else {
                Group::Low
            }
        })
        .collect();
    let threshold = folds.iter().map(|f| f.threshold).sum::<f64>() / folds.len() as f64;
    Ok(RiskGroup {
        assignment,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRatioFit {
    /// Log hazard ratio of high vs low.
    pub beta: f64,
    pub hr: f64,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

pub const HR_TOLERANCE: f64 = 1e-10;
pub const HR_MAX_ITER: usize = 100;

/// Event risk-set composition for a binary covariate: for each event, the
/// number of low and high patients with `t_j ≥ t_i`, and its own group.
struct BinaryRiskSets {
    events: Vec<(f64, f64, bool)>,
}

impl BinaryRiskSets {
    fn new(groups: &[Group], labels: &[SurvivalLabel]) -> Self {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));
        let mut events = Vec::new();
        let (mut low, mut high) = (0.0, 0.0);
        let mut start = 0;
        while start < n {
            let t = labels[order[start]].time;
            let mut end = start;
            while end < n && labels[order[end]].time == t {
                match groups[order[end]] {
                    Group::Low => low += 1.0,
                    Group::High => high += 1.0,
                }
                end += 1;
            }
            for &i in &order[start..end] {
                if labels[i].event {
                    events.push((low, high, groups[i] == Group::High));
                }
            }
            start = end;
        }
        BinaryRiskSets { events }
    }

    /// Log partial likelihood with first and second derivatives in β.
    fn evaluate(&self, beta: f64) -> (f64, f64, f64) {
        let (mut ll, mut d1, mut d2) = (0.0, 0.0, 0.0);
        let e = beta.exp();
        for &(low, high, is_high) in &self.events {
            let denom = low + high * e;
            let p = high * e / denom;
            ll += if is_high { beta } else { 0.0 } - denom.ln();
            d1 += if is_high { 1.0 } else { 0.0 } - p;
            d2 -= p * (1.0 - p);
        }
        (ll, d1, d2)
    }
}

/// Univariate Cox fit on the high-group indicator by Newton's method with
/// step halving.
pub fn hazard_ratio(groups: &RiskGroup, labels: &[SurvivalLabel]) -> Result<HazardRatioFit> {
    check_dim(
        "hazard ratio groups vs labels",
        labels.len(),
        groups.assignment.len(),
    )?;
    let n_high = groups.count(Group::High);
    if n_high == 0 || n_high == labels.len() {
        return Err(Error::InvalidInput(
            "hazard ratio needs two nonempty groups".into(),
        ));
    }
    let events_in = |g: Group| {
        groups
            .assignment
            .iter()
            .zip(labels)
            .filter(|(a, l)| **a == g && l.event)
            .count()
    };
    let (ev_low, ev_high) = (events_in(Group::Low), events_in(Group::High));
    if ev_low + ev_high == 0 {
        return Err(Error::NoEvents);
    }
    if ev_low == 0 || ev_high == 0 {
        let beta = if ev_high == 0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
        return Ok(HazardRatioFit {
            beta,
            hr: beta.exp(),
            converged: false,
            iterations: 0,
            diagnostic: Some(format!(
                "separation: {ev_low} events in low group, {ev_high} in high group"
            )),
        });
    }
    let sets = BinaryRiskSets::new(&groups.assignment, labels);
    let mut beta = 0.0;
    let (mut ll, mut d1, mut d2) = sets.evaluate(beta);
    for iter in 1..=HR_MAX_ITER {
        if d2 >= 0.0 {
            // Flat likelihood: every risk set is single-group.
            return Ok(HazardRatioFit {
                beta,
                hr: beta.exp(),
                converged: d1.abs() < HR_TOLERANCE,
                iterations: iter - 1,
                diagnostic: Some("zero information".into()),
            });
        }
        let mut step = -d1 / d2;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = beta + step;
            let (ll_c, d1_c, d2_c) = sets.evaluate(candidate);
            if ll_c >= ll {
                beta = candidate;
                (ll, d1, d2) = (ll_c, d1_c, d2_c);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < HR_TOLERANCE {
            let converged = step.abs() < HR_TOLERANCE || d1.abs() < 1e-9;
            return Ok(HazardRatioFit {
                beta,
                hr: beta.exp(),
                converged,
                iterations: iter,
                diagnostic: (!converged).then(|| "line search stalled".to_string()),
            });
        }
        if beta.abs() > 50.0 {
            return Ok(HazardRatioFit {
                beta,
                hr: beta.exp(),
                converged: false,
                iterations: iter,
                diagnostic: Some("log hazard ratio diverging (monotone likelihood)".into()),
            });
        }
    }
    Ok(HazardRatioFit {
        beta,
        hr: beta.exp(),
        converged: false,
        iterations: HR_MAX_ITER,
        diagnostic: Some(format!("no convergence in {HR_MAX_ITER} iterations")),
    })
}

/// Log partial likelihood of `r_i = β·1(high)`, exposed for diagnostics.
pub fn group_log_likelihood(groups: &RiskGroup, labels: &[SurvivalLabel], beta: f64) -> f64 {
    BinaryRiskSets::new(&groups.assignment, labels)
        .evaluate(beta)
        .0
}
