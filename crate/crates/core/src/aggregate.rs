//! Event-study, per-group and overall summaries of the cell estimates.
//!
//! Only cells that were actually estimated enter an aggregate. Cells that the
//! target parameter would need but that are missing (beyond `t_max(g)`, or
//! failed) are listed in [`AggregationResult::excluded`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InfluencePanel;
use crate::linalg::{mean, rms};
use crate::panel::Group;

/// Cell estimates together with what aggregation needs to linearize them.
#[derive(Debug, Clone)]
pub struct CellEstimates {
    pub att: Vec<f64>,
    pub influence: InfluencePanel,
    pub unit_groups: Vec<Group>,
    pub n_periods: usize,
}

impl CellEstimates {
    fn n_units(&self) -> usize {
        self.unit_groups.len()
    }

    fn position(&self, g: u32, t: usize) -> Option<usize> {
        self.influence.cells.iter().position(|c| c.g == g && c.t == t)
    }

    fn share(&self, g: u32) -> f64 {
        let count = self.unit_groups.iter().filter(|&&x| x == Group::Period(g)).count();
        count as f64 / self.n_units() as f64
    }

    fn groups(&self) -> BTreeSet<u32> {
        self.influence.cells.iter().map(|c| c.g).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    EventStudy,
    Group,
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub g: u32,
    pub t: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCell {
    pub g: u32,
    pub t: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregationResult {
    pub kind: AggregationKind,
    /// Event time for event studies, group for group averages.
    pub index: Option<i64>,
    pub estimate: f64,
    pub se: f64,
    pub weights: Vec<CellWeight>,
    #[serde(skip)]
    pub influence: Vec<f64>,
    pub excluded: Vec<ExcludedCell>,
}

/// Influence of the ratio weight `p_g / Σ_{g'∈S} p_{g'}`.
fn ratio_weight_influence(atts: &CellEstimates, g: u32, set: &[u32]) -> Vec<f64> {
    let p_g = atts.share(g);
    let pi: f64 = set.iter().map(|&s| atts.share(s)).sum();
    atts.unit_groups
        .iter()
        .map(|&x| {
            let own = if x == Group::Period(g) { 1.0 } else { 0.0 };
            let in_set = if x.period().is_some_and(|p| set.contains(&p)) { 1.0 } else { 0.0 };
            (own - p_g) / pi - p_g / (pi * pi) * (in_set - pi)
        })
        .collect()
}

/// Shares normalized to sum to one, with the drift checked.
fn share_weights(atts: &CellEstimates, set: &[u32]) -> Vec<f64> {
    let pi: f64 = set.iter().map(|&g| atts.share(g)).sum();
    let raw: Vec<f64> = set.iter().map(|&g| atts.share(g) / pi).collect();
    let total: f64 = raw.iter().sum();
    debug_assert!((total - 1.0).abs() <= 1e-14 * set.len() as f64);
    raw.iter().map(|w| w / total).collect()
}

fn finish(
    kind: AggregationKind,
    index: Option<i64>,
    atts: &CellEstimates,
    weights: Vec<CellWeight>,
    influence: Vec<f64>,
    excluded: Vec<ExcludedCell>,
) -> AggregationResult {
    let estimate = weights
        .iter()
        .map(|w| w.weight * atts.att[atts.position(w.g, w.t).expect("weighted cell is estimated")])
        .sum();
    let se = rms(&influence) / (atts.n_units() as f64).sqrt();
    AggregationResult { kind, index, estimate, se, weights, influence, excluded }
}

/// `ATT^{ES†}(e)`: share-weighted average of `ATT(g, g+e)` over groups where that cell exists.
pub fn event_study(atts: &CellEstimates, e: i64) -> Result<AggregationResult> {
    if e < 0 {
        return Err(Error::EmptyEventTime(e));
    }
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for g in atts.unit_groups.iter().filter_map(|x| x.period()).collect::<BTreeSet<_>>() {
        let t = g as usize + e as usize;
        if t > atts.n_periods {
            continue;
        }
        match atts.position(g, t) {
            Some(_) => included.push(g),
            None => excluded.push(ExcludedCell { g, t, reason: "cell not estimated".into() }),
        }
    }
    if included.is_empty() {
        return Err(Error::EmptyEventTime(e));
    }
    let w = share_weights(atts, &included);
    let n = atts.n_units();
    let mut influence = vec![0.0; n];
    let mut weights = Vec::new();
    for (k, &g) in included.iter().enumerate() {
        let t = g as usize + e as usize;
        let col = atts.position(g, t).expect("included");
        let att = atts.att[col];
        let ww = ratio_weight_influence(atts, g, &included);
        for i in 0..n {
            influence[i] += w[k] * atts.influence.values[(i, col)] + att * ww[i];
        }
        weights.push(CellWeight { g, t, weight: w[k] });
    }
    Ok(finish(AggregationKind::EventStudy, Some(e), atts, weights, influence, excluded))
}

/// Included cells of group `g` and the missing ones in `g..=T`.
fn group_cells(atts: &CellEstimates, g: u32) -> (Vec<usize>, Vec<ExcludedCell>) {
    let mut ts = Vec::new();
    let mut excluded = Vec::new();
    for t in g as usize..=atts.n_periods {
        match atts.position(g, t) {
            Some(_) => ts.push(t),
            None => excluded.push(ExcludedCell { g, t, reason: "cell not estimated".into() }),
        }
    }
    (ts, excluded)
}

/// `ATT^{G†}(g)`: equal-weight average over the estimated post-periods of group `g`.
pub fn group_average(atts: &CellEstimates, g: u32) -> Result<AggregationResult> {
    let (ts, excluded) = group_cells(atts, g);
    if ts.is_empty() {
        return Err(Error::GroupInfeasible(g));
    }
    let w = 1.0 / ts.len() as f64;
    let n = atts.n_units();
    let mut influence = vec![0.0; n];
    let mut weights = Vec::new();
    for &t in &ts {
        let col = atts.position(g, t).expect("included");
        for (i, v) in influence.iter_mut().enumerate() {
            *v += w * atts.influence.values[(i, col)];
        }
        weights.push(CellWeight { g, t, weight: w });
    }
    Ok(finish(AggregationKind::Group, Some(g as i64), atts, weights, influence, excluded))
}

/// `ATT^{O†}`: share-weighted average of the group averages over groups with any estimated cell.
pub fn overall(atts: &CellEstimates) -> Result<AggregationResult> {
    let groups: Vec<u32> = atts.groups().into_iter().collect();
    if groups.is_empty() {
        return Err(Error::NoFeasibleCells { factors: atts.influence.cells.first().map_or(0, |c| c.r) });
    }
    let w = share_weights(atts, &groups);
    let n = atts.n_units();
    let mut influence = vec![0.0; n];
    let mut weights = Vec::new();
    let mut excluded = Vec::new();
    for (k, &g) in groups.iter().enumerate() {
        let ga = group_average(atts, g)?;
        let ww = ratio_weight_influence(atts, g, &groups);
        for i in 0..n {
            influence[i] += w[k] * ga.influence[i] + ga.estimate * ww[i];
        }
        weights.extend(ga.weights.iter().map(|c| CellWeight { weight: c.weight * w[k], ..*c }));
        excluded.extend(ga.excluded);
    }
    // excluded groups (no estimated cell at all) are reported too
    for g in atts.unit_groups.iter().filter_map(|x| x.period()).collect::<BTreeSet<_>>() {
        if !groups.contains(&g) {
            excluded.extend(group_cells(atts, g).1);
        }
    }
    Ok(finish(AggregationKind::Overall, None, atts, weights, influence, excluded))
}

/// Every event study with `e ≥ 0` that has at least one estimated cell.
pub fn all_event_studies(atts: &CellEstimates) -> Vec<AggregationResult> {
    let max_e = atts.influence.cells.iter().map(|c| c.event_time()).max().unwrap_or(-1);
    (0..=max_e).filter_map(|e| event_study(atts, e).ok()).collect()
}

pub fn all_group_averages(atts: &CellEstimates) -> Vec<AggregationResult> {
    atts.groups().into_iter().filter_map(|g| group_average(atts, g).ok()).collect()
}

/// Applies the weights of `weights_from` to externally estimated cells.
pub fn reweight_external(external: &BTreeMap<(u32, usize), f64>, weights_from: &AggregationResult) -> Result<f64> {
    let mut total = 0.0;
    for w in &weights_from.weights {
        if w.weight == 0.0 {
            continue;
        }
        let v = external.get(&(w.g, w.t)).ok_or(Error::MissingCellEstimate { g: w.g, t: w.t })?;
        total += w.weight * v;
    }
    Ok(total)
}

impl AggregationResult {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.weight).sum()
    }

    pub fn influence_mean(&self) -> f64 {
        mean(&self.influence)
    }
}
