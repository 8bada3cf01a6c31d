//! Which `(g, t)` cells are identified for a given number of factors, and the
//! matrices the per-cell moment systems are built from.
//!
//! For a treated group `g` and period `t >= g` the comparison set holds every
//! group still untreated at `t`. Each comparison group contributes one moment;
//! with `R` factors the cell has `R + 1` unknowns, so it needs at least `R + 1`
//! comparison groups and `g - 2 >= R` pre-treatment differences.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, sample_var, singular_values};
use crate::panel::{first_differences, Group, PanelDataset};

/// Default relative threshold `σ_{R+1} / σ_1` below which a design counts as rank deficient.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Critical value for the pointwise trend-gap z statistics.
const GAP_Z_CRIT: f64 = 1.96;

/// A target cell: treated group `g`, period `t`, and the working number of factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub g: u32,
    pub t: usize,
    pub r: usize,
}

impl CellIndex {
    pub fn new(g: u32, t: usize, r: usize) -> Self {
        Self { g, t, r }
    }

    pub fn group(&self) -> Group {
        Group::Period(self.g)
    }

    /// Number of pre-treatment differences `ΔY_2 .. ΔY_{g-1}`.
    pub fn n_pre(&self) -> usize {
        (self.g as usize).saturating_sub(2)
    }

    pub fn event_time(&self) -> i64 {
        self.t as i64 - self.g as i64
    }
}

/// Groups not yet treated in period `t`, ascending with `Never` last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonSet {
    pub members: Vec<Group>,
}

impl ComparisonSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, g: Group) -> bool {
        self.members.contains(&g)
    }

    /// Position of `g` in the set, which is also its moment row.
    pub fn position(&self, g: Group) -> Option<usize> {
        self.members.iter().position(|&m| m == g)
    }
}

pub fn comparison_set(g: u32, t: usize, groups_present: &[Group]) -> ComparisonSet {
    debug_assert!(g as usize <= t, "comparison sets are defined for post-treatment periods");
    let mut members: Vec<Group> = groups_present.iter().copied().filter(|grp| grp.untreated_at(t)).collect();
    members.sort();
    members.dedup();
    ComparisonSet { members }
}

/// Last period `t >= g` with at least `r + 1` not-yet-treated groups, if any.
pub fn t_max(g: u32, groups_present: &[Group], periods: usize, r: usize) -> Option<usize> {
    (g as usize..=periods)
        .rev()
        .find(|&t| comparison_set(g, t, groups_present).len() > r)
}

/// All identified cells, ordered by `g` then `t`.
pub fn feasible_cells(groups_present: &[Group], periods: usize, r: usize) -> Result<Vec<CellIndex>> {
    let mut finite: Vec<u32> = groups_present.iter().filter_map(|g| g.period()).collect();
    finite.sort_unstable();
    finite.dedup();
    let cells: Vec<CellIndex> = finite
        .into_iter()
        .filter(|&g| g as usize >= r + 2 && g as usize <= periods)
        .flat_map(|g| {
            let last = t_max(g, groups_present, periods, r).unwrap_or(0);
            (g as usize..=last).map(move |t| CellIndex::new(g, t, r))
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::NoFeasibleCells { factors: r });
    }
    Ok(cells)
}

/// Why a requested cell is not identified, or `None` when it is.
pub fn infeasibility(cell: CellIndex, groups_present: &[Group], periods: usize) -> Option<String> {
    if cell.t < cell.g as usize || cell.t > periods {
        return Some(format!("period {} outside {}..={periods}", cell.t, cell.g));
    }
    if cell.n_pre() < cell.r {
        return Some(format!("{} pre-treatment differences but R = {}", cell.n_pre(), cell.r));
    }
    if !groups_present.contains(&cell.group()) {
        return Some(format!("group {} is not present", cell.g));
    }
    let comp = comparison_set(cell.g, cell.t, groups_present).len();
    if comp < cell.r + 1 {
        return Some(format!("{comp} not-yet-treated groups but R + 1 = {} needed", cell.r + 1));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaKind {
    /// Select the last `R` pre-treatment differences.
    LastBlock,
    /// Top `R` principal directions of the comparison units' pre-treatment differences.
    PrincipalComponents,
    /// Select `ΔY_{g-k}` for each listed lag `k >= 1`; `[1..=R]` equals `LastBlock`.
    Lags(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmegaSpec {
    pub kind: OmegaKind,
    pub r: usize,
}

impl OmegaSpec {
    pub fn last_block(r: usize) -> Self {
        Self { kind: OmegaKind::LastBlock, r }
    }

    /// Estimated from data, so downstream standard errors ignore its sampling noise.
    pub fn is_estimated(&self) -> bool {
        matches!(self.kind, OmegaKind::PrincipalComponents)
    }
}

/// `(g-2) x R` compression of the pre-treatment differences.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix {
    pub values: DMatrix<f64>,
}

impl OmegaMatrix {
    pub fn r(&self) -> usize {
        self.values.ncols()
    }
}

/// Pre-treatment differences `ΔY_2 .. ΔY_{g-1}` for the listed units, one row per unit.
pub fn pre_differences(data: &PanelDataset, g: u32, units: &[usize]) -> DMatrix<f64> {
    let n_pre = (g as usize).saturating_sub(2);
    DMatrix::from_fn(units.len(), n_pre, |row, c| {
        let i = units[row];
        data.y(i, c + 2) - data.y(i, c + 1)
    })
}

/// Pre-differences of every unit in the comparison set of `cell`.
pub fn comparison_pre_differences(data: &PanelDataset, cell: CellIndex) -> DMatrix<f64> {
    let comp = comparison_set(cell.g, cell.t, &data.groups_present());
    let units: Vec<usize> = comp.members.iter().flat_map(|&m| data.members(m).iter().copied()).collect();
    pre_differences(data, cell.g, &units)
}

pub fn build_omega(
    spec: &OmegaSpec,
    cell: CellIndex,
    comp_prediffs: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<OmegaMatrix> {
    let n_pre = cell.n_pre();
    let r = spec.r;
    if r > n_pre {
        return Err(Error::InfeasibleCell {
            g: cell.g,
            t: cell.t,
            reason: format!("{n_pre} pre-treatment differences but R = {r}"),
        });
    }
    if comp_prediffs.ncols() != n_pre {
        return Err(Error::InvalidOmega(format!(
            "pre-difference matrix has {} columns, expected {n_pre}",
            comp_prediffs.ncols()
        )));
    }
    let values = match &spec.kind {
        OmegaKind::LastBlock => DMatrix::from_fn(n_pre, r, |row, col| if row == n_pre - r + col { 1.0 } else { 0.0 }),
        OmegaKind::Lags(lags) => {
            if lags.len() != r {
                return Err(Error::InvalidOmega(format!("{} lags given for R = {r}", lags.len())));
            }
            let mut sorted = lags.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != lags.len() || lags.iter().any(|&k| k == 0 || k > n_pre) {
                return Err(Error::InvalidOmega(format!(
                    "lags must be distinct and within 1..={n_pre} for group {}",
                    cell.g
                )));
            }
            let mut m = DMatrix::zeros(n_pre, r);
            for (col, &k) in lags.iter().enumerate() {
                m[(n_pre - k, col)] = 1.0;
            }
            m
        }
        OmegaKind::PrincipalComponents => principal_directions(comp_prediffs, cell, r, rank_tol)?,
    };
    Ok(OmegaMatrix { values })
}

fn principal_directions(x: &DMatrix<f64>, cell: CellIndex, r: usize, rank_tol: f64) -> Result<DMatrix<f64>> {
    let cols = x.ncols();
    if r == 0 {
        return Ok(DMatrix::zeros(cols, 0));
    }
    if x.nrows() < r {
        return Err(Error::RankDeficientOmega { g: cell.g, t: cell.t, ratio: 0.0 });
    }
    let mut centered = x.clone();
    for mut c in centered.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < r {
        return Err(Error::RankDeficientOmega { g: cell.g, t: cell.t, ratio: 0.0 });
    }
    let top = svd.singular_values[order[0]];
    let ratio = if top > 0.0 { svd.singular_values[order[r - 1]] / top } else { 0.0 };
    if ratio <= rank_tol {
        return Err(Error::RankDeficientOmega { g: cell.g, t: cell.t, ratio });
    }
    let mut out = DMatrix::zeros(cols, r);
    for (j, &k) in order.iter().take(r).enumerate() {
        let mut v: DVector<f64> = v_t.row(k).transpose();
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            v.neg_mut();
        }
        out.set_column(j, &v);
    }
    Ok(out)
}

/// Sample analogue of `Γ(g,t)`: row `g'` is `(1, mean over g' of Ω'ΔY^pre)`.
#[derive(Debug, Clone)]
pub struct GammaHat {
    pub values: DMatrix<f64>,
    pub cell: CellIndex,
    pub comparison: ComparisonSet,
    pub omega: OmegaMatrix,
    /// `Ω'ΔY_i^pre(g)` for every unit, one row per unit (`n x R`).
    pub projected: DMatrix<f64>,
}

pub fn gamma_hat(cell: CellIndex, omega: &OmegaMatrix, data: &PanelDataset) -> Result<GammaHat> {
    let groups = data.groups_present();
    let comparison = comparison_set(cell.g, cell.t, &groups);
    if comparison.is_empty() {
        return Err(Error::InfeasibleCell { g: cell.g, t: cell.t, reason: "no not-yet-treated groups".into() });
    }
    if omega.values.nrows() != cell.n_pre() {
        return Err(Error::InvalidOmega(format!(
            "omega has {} rows, cell ({},{}) has {} pre-treatment differences",
            omega.values.nrows(),
            cell.g,
            cell.t,
            cell.n_pre()
        )));
    }
    let all: Vec<usize> = (0..data.n_units()).collect();
    let projected = pre_differences(data, cell.g, &all) * &omega.values;
    let r = omega.r();
    let mut values = DMatrix::zeros(comparison.len(), r + 1);
    for (row, &m) in comparison.members.iter().enumerate() {
        let units = data.members(m);
        if units.is_empty() {
            return Err(Error::EmptyComparisonGroup { group: m, g: cell.g, t: cell.t });
        }
        values[(row, 0)] = 1.0;
        for j in 0..r {
            values[(row, j + 1)] = units.iter().map(|&i| projected[(i, j)]).sum::<f64>() / units.len() as f64;
        }
    }
    Ok(GammaHat { values, cell, comparison, omega: omega.clone(), projected })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank_ok: bool,
    pub singular_values: Vec<f64>,
    pub condition_number: f64,
}

/// Full-column-rank check on a design matrix: `σ_last / σ_1 > tol`.
pub fn rank_diagnostic(values: &DMatrix<f64>, tol: f64) -> RankReport {
    let sv = singular_values(values);
    let needed = values.ncols();
    let top = sv.first().copied().unwrap_or(0.0);
    let last = if sv.len() >= needed && needed > 0 { sv[needed - 1] } else { 0.0 };
    let rank_ok = needed > 0 && top > 0.0 && last / top > tol;
    let condition_number = if last > 0.0 { top / last } else { f64::INFINITY };
    RankReport { rank_ok, singular_values: sv, condition_number }
}

impl GammaHat {
    pub fn rank_diagnostic(&self, tol: f64) -> RankReport {
        rank_diagnostic(&self.values, tol)
    }
}

/// Difference in mean `ΔY_s` between two not-yet-treated groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendGap {
    pub first: Group,
    pub second: Group,
    pub period: usize,
    pub gap: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorCountReport {
    pub g: u32,
    pub t: usize,
    pub pairwise_trend_gaps: Vec<TrendGap>,
    /// Some pair trends together before `g` but apart at `t`.
    pub suggests_more_factors: bool,
}

impl FactorCountReport {
    pub fn gap(&self, first: Group, second: Group, period: usize) -> Option<f64> {
        self.pairwise_trend_gaps
            .iter()
            .find(|x| x.first == first && x.second == second && x.period == period)
            .map(|x| x.gap)
    }
}

/// Pairwise trend gaps among the groups not yet treated at `t`, for periods `2..=t`.
pub fn factor_count_diagnostic(data: &PanelDataset, g: u32, t: usize) -> Result<FactorCountReport> {
    let comp = comparison_set(g, t, &data.groups_present());
    if comp.len() < 2 {
        return Err(Error::InsufficientComparisonGroups { t, found: comp.len() });
    }
    let diffs = first_differences(data);
    // (mean, var / n) of ΔY_s for each comparison group and period
    let mut moments: BTreeMap<(Group, usize), (f64, f64)> = BTreeMap::new();
    for &m in &comp.members {
        let units = data.members(m);
        for s in 2..=t {
            let xs: Vec<f64> = units.iter().map(|&i| diffs.diff(i, s)).collect();
            moments.insert((m, s), (mean(&xs), sample_var(&xs) / xs.len() as f64));
        }
    }
    let mut gaps = Vec::new();
    let mut flag = false;
    for (a, &first) in comp.members.iter().enumerate() {
        for &second in &comp.members[a + 1..] {
            let mut pre_quiet = true;
            let mut post_loud = false;
            for s in 2..=t {
                let (m1, v1) = moments[&(first, s)];
                let (m2, v2) = moments[&(second, s)];
                let gap = m1 - m2;
                let se = (v1 + v2).sqrt();
                let z = gap_z(gap, se, 1.0 + m1.abs() + m2.abs());
                if s < g as usize && z.abs() > GAP_Z_CRIT {
                    pre_quiet = false;
                }
                if s == t && z.abs() > GAP_Z_CRIT {
                    post_loud = true;
                }
                gaps.push(TrendGap { first, second, period: s, gap, se, z });
            }
            flag |= pre_quiet && post_loud;
        }
    }
    Ok(FactorCountReport { g, t, pairwise_trend_gaps: gaps, suggests_more_factors: flag })
}

fn gap_z(gap: f64, se: f64, scale: f64) -> f64 {
    if se > 1e-12 * scale {
        gap / se
    } else if gap.abs() <= 1e-10 * scale {
        0.0
    } else {
        gap.signum() * f64::INFINITY
    }
}
