//! Per-cell GMM for `δ*(g,t) = (θ*, F*')'` and the resulting `ATT(g,t)`.
//!
//! Each comparison group `g'` supplies the moment
//! `mean_{g'}(Y_t - Y_{g-1}) = θ* + mean_{g'}(Ω'ΔY^pre)' F*`, so with
//! `Γ̂` the stacked `(1, mean Ω'ΔY^pre)` rows and `m̂` the stacked left-hand
//! sides, `δ̂* = (Γ̂'WΓ̂)⁻¹Γ̂'W m̂`. Cells are estimated independently.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::{
    build_omega, comparison_pre_differences, feasible_cells, gamma_hat, infeasibility, CellIndex, GammaHat,
    OmegaKind, OmegaMatrix, OmegaSpec, DEFAULT_RANK_TOL,
};
use crate::inference::{influence_attgt, stack_influence, InfluencePanel};
use crate::linalg::{rms, svd_solve, weighted_ls_operator};
use crate::panel::{Group, PanelDataset};

/// `Γ̂'WΓ̂` is treated as singular above this condition number.
pub const MAX_DESIGN_CONDITION: f64 = 1e12;

/// Relative ridge added to the two-step moment covariance.
const TWO_STEP_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative singular-value floor for `Γ̂` (see [`crate::identification::rank_diagnostic`]).
    pub rank_tol: f64,
    pub max_condition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rank_tol: DEFAULT_RANK_TOL, max_condition: MAX_DESIGN_CONDITION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    #[default]
    Identity,
    TwoStep,
}

/// Fitted nuisance parameters for one cell.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub cell: CellIndex,
    pub theta_star: f64,
    pub f_star: DVector<f64>,
    pub gamma: GammaHat,
    pub weight: DMatrix<f64>,
    /// `(Γ̂'WΓ̂)⁻¹Γ̂'W`, `(R+1) x |G^comp|`.
    pub b_matrix: DMatrix<f64>,
    /// Comparison-group means of `Y_t - Y_{g-1}`.
    pub target_means: DVector<f64>,
    /// `m̂ - Γ̂δ̂`; zero when just identified.
    pub moment_values: DVector<f64>,
}

impl GmmFit {
    /// `(θ̂*, F̂*')'`.
    pub fn delta(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.f_star.len() + 1);
        d[0] = self.theta_star;
        d.rows_mut(1, self.f_star.len()).copy_from(&self.f_star);
        d
    }

    /// `v̂_i = (Y_it - Y_i,g-1) - θ̂* - (Ω'ΔY_i^pre)'F̂*`.
    pub fn residual(&self, data: &PanelDataset, i: usize) -> f64 {
        let c = self.cell;
        let proj = self.gamma.projected.row(i);
        data.y(i, c.t) - data.y(i, c.g as usize - 1) - self.theta_star - proj.dot(&self.f_star.transpose())
    }
}

#[derive(Debug, Clone)]
pub struct AttEstimate {
    pub cell: CellIndex,
    pub att: f64,
    pub fit: GmmFit,
    /// `𝔼_n[A_i(g)]` with `A_i(g) = 1{G_i=g}(1, Ω'ΔY_i^pre)'`.
    pub a_mean: DVector<f64>,
    pub influence: Vec<f64>,
    pub se: f64,
}

/// Long-difference `Y_t - Y_{g-1}` averaged over a set of units.
fn mean_long_diff(data: &PanelDataset, units: &[usize], g: u32, t: usize) -> f64 {
    units.iter().map(|&i| data.y(i, t) - data.y(i, g as usize - 1)).sum::<f64>() / units.len() as f64
}

pub fn estimate_delta_star(
    cell: CellIndex,
    omega: &OmegaMatrix,
    data: &PanelDataset,
    weight: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<GmmFit> {
    if let Some(reason) = infeasibility(cell, &data.groups_present(), data.n_periods()) {
        return Err(Error::InfeasibleCell { g: cell.g, t: cell.t, reason });
    }
    let gamma = gamma_hat(cell, omega, data)?;
    let k = gamma.comparison.len();
    if weight.shape() != (k, k) || weight.clone().cholesky().is_none() {
        return Err(Error::InvalidWeight { expected: k });
    }
    let rank = gamma.rank_diagnostic(tol.rank_tol);
    if !rank.rank_ok {
        return Err(Error::SingularDesign {
            g: cell.g,
            t: cell.t,
            reason: format!(
                "comparison design has rank below R + 1 = {} (singular values {:?})",
                cell.r + 1,
                rank.singular_values
            ),
        });
    }
    let target_means = DVector::from_iterator(
        k,
        gamma.comparison.members.iter().map(|&m| mean_long_diff(data, data.members(m), cell.g, cell.t)),
    );
    let b_matrix = weighted_ls_operator(&gamma.values, weight, tol.max_condition)
        .ok_or(Error::InvalidWeight { expected: k })?
        .map_err(|cond| Error::SingularDesign {
            g: cell.g,
            t: cell.t,
            reason: format!("condition number of Γ'WΓ is {cond:.3e}"),
        })?;
    let delta = &b_matrix * &target_means;
    let moment_values = &target_means - &gamma.values * &delta;
    Ok(GmmFit {
        cell,
        theta_star: delta[0],
        f_star: delta.rows(1, cell.r).into_owned(),
        gamma,
        weight: weight.clone(),
        b_matrix,
        target_means,
        moment_values,
    })
}

/// Weight matrix for a cell with `size` comparison groups.
///
/// `TwoStep` inverts the sample covariance of `ℓ_i v̂_i` from `first_stage`.
/// A moment covariance with zero trace (exactly fitting data) falls back to
/// the identity.
pub fn default_weight(
    size: usize,
    mode: WeightMode,
    first_stage: Option<&GmmFit>,
    data: &PanelDataset,
) -> Result<DMatrix<f64>> {
    match mode {
        WeightMode::Identity => Ok(DMatrix::identity(size, size)),
        WeightMode::TwoStep => {
            let fit = first_stage.ok_or_else(|| Error::Config("two-step weighting needs a first-stage fit".into()))?;
            let comp = &fit.gamma.comparison;
            if comp.len() != size {
                return Err(Error::InvalidWeight { expected: comp.len() });
            }
            let n = data.n_units() as f64;
            // ℓ_i v̂_i has a single nonzero entry for comparison units
            let mut sums = DVector::<f64>::zeros(size);
            let mut squares = DVector::<f64>::zeros(size);
            for (k, &m) in comp.members.iter().enumerate() {
                let units = data.members(m);
                let p = units.len() as f64 / n;
                for &i in units {
                    let h = fit.residual(data, i) / p;
                    sums[k] += h;
                    squares[k] += h * h;
                }
            }
            let mean = sums / n;
            let mut cov = DMatrix::from_diagonal(&(squares / n)) - &mean * mean.transpose();
            let trace = cov.trace();
            if !(trace > 0.0) {
                return Ok(DMatrix::identity(size, size));
            }
            for d in 0..size {
                cov[(d, d)] += TWO_STEP_RIDGE * trace / size as f64;
            }
            let inv = svd_solve(&cov, &DMatrix::identity(size, size), f64::INFINITY)
                .map_err(|_| Error::InvalidWeight { expected: size })?;
            Ok((&inv + inv.transpose()) * 0.5)
        }
    }
}

/// The four group means entering the one-factor, two-comparison-group closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineMoments {
    pub dy3_never: f64,
    pub dy3_g4: f64,
    pub dy2_never: f64,
    pub dy2_g4: f64,
    /// Scale for the degeneracy test; the pooled sd of `ΔY_2`.
    pub scale: f64,
}

impl BaselineMoments {
    /// Reads the moments off a panel containing group 4 and never-treated units.
    pub fn from_panel(data: &PanelDataset) -> Result<Self> {
        let never = data.members(Group::Never);
        let g4 = data.members(Group::Period(4));
        if never.is_empty() || g4.is_empty() || data.n_periods() < 3 {
            return Err(Error::Config("closed form needs group 4, never-treated units, and 3 periods".into()));
        }
        let avg = |units: &[usize], t: usize| units.iter().map(|&i| data.y(i, t) - data.y(i, t - 1)).sum::<f64>() / units.len() as f64;
        let pooled: Vec<f64> = (0..data.n_units()).map(|i| data.y(i, 2) - data.y(i, 1)).collect();
        let m = crate::linalg::mean(&pooled);
        let centered: Vec<f64> = pooled.iter().map(|x| x - m).collect();
        Ok(Self {
            dy3_never: avg(never, 3),
            dy3_g4: avg(g4, 3),
            dy2_never: avg(never, 2),
            dy2_g4: avg(g4, 2),
            scale: rms(&centered),
        })
    }
}

/// `F₃* = (ΔY₃|∞ - ΔY₃|4) / (ΔY₂|∞ - ΔY₂|4)`, `θ₃* = ΔY₃|4 - F₃* ΔY₂|4`.
///
/// Returns `(θ₃*, F₃*)`.
pub fn baseline_f3_closed_form(m: &BaselineMoments) -> Result<(f64, f64)> {
    let denom = m.dy2_never - m.dy2_g4;
    let scale = if m.scale > 0.0 { m.scale } else { m.dy2_never.abs().max(m.dy2_g4.abs()) };
    let tol = 1e-10 * scale;
    if !(denom.abs() > tol) {
        return Err(Error::DegenerateDenominator { value: denom, tol });
    }
    let f3 = (m.dy3_never - m.dy3_g4) / denom;
    Ok((m.dy3_g4 - f3 * m.dy2_g4, f3))
}

pub fn estimate_attgt(cell: CellIndex, fit: GmmFit, data: &PanelDataset) -> Result<AttEstimate> {
    let treated = data.members(cell.group());
    if treated.is_empty() {
        return Err(Error::EmptyTreatedGroup(cell.g));
    }
    let p_g = treated.len() as f64 / data.n_units() as f64;
    let r = cell.r;
    let mut a_bar = DVector::zeros(r + 1);
    a_bar[0] = 1.0;
    for j in 0..r {
        a_bar[j + 1] = treated.iter().map(|&i| fit.gamma.projected[(i, j)]).sum::<f64>() / treated.len() as f64;
    }
    let att = mean_long_diff(data, treated, cell.g, cell.t) - a_bar.dot(&fit.delta());
    let mut est = AttEstimate { cell, att, fit, a_mean: a_bar * p_g, influence: Vec::new(), se: 0.0 };
    est.influence = influence_attgt(cell, &est.fit, &est, data);
    est.se = rms(&est.influence) / (data.n_units() as f64).sqrt();
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub factors: usize,
    pub omega: OmegaKind,
    pub weight: WeightMode,
    #[serde(skip, default)]
    pub tolerances: Tolerances,
    /// Restrict to these `(g, t)` cells; `None` means every feasible cell.
    pub cells: Option<Vec<(u32, usize)>>,
    /// Record failing cells and continue instead of aborting.
    pub keep_going: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            factors: 0,
            omega: OmegaKind::LastBlock,
            weight: WeightMode::Identity,
            tolerances: Tolerances::default(),
            cells: None,
            keep_going: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub g: u32,
    pub t: usize,
    pub error: String,
    pub validation: bool,
}

/// All cell-level estimates for one dataset.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub factors: usize,
    pub omega_estimated: bool,
    pub cells: Vec<AttEstimate>,
    pub failures: Vec<CellFailure>,
    pub n_units: usize,
    pub n_periods: usize,
    pub unit_groups: Vec<Group>,
}

impl Estimation {
    pub fn influence_panel(&self) -> InfluencePanel {
        let cells: Vec<CellIndex> = self.cells.iter().map(|c| c.cell).collect();
        let cols: Vec<Vec<f64>> = self.cells.iter().map(|c| c.influence.clone()).collect();
        stack_influence(&cells, &cols).expect("influence vectors share the sample size")
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.att).collect()
    }

    pub fn cell_estimates(&self) -> crate::aggregate::CellEstimates {
        crate::aggregate::CellEstimates {
            att: self.estimates(),
            influence: self.influence_panel(),
            unit_groups: self.unit_groups.clone(),
            n_periods: self.n_periods,
        }
    }
}

/// Fits one cell end to end: Ω, first-stage GMM, optional two-step refit, ATT.
pub fn fit_cell(data: &PanelDataset, cell: CellIndex, opts: &EstimateOptions) -> Result<AttEstimate> {
    let spec = OmegaSpec { kind: opts.omega.clone(), r: cell.r };
    let comp_prediffs = comparison_pre_differences(data, cell);
    let omega = build_omega(&spec, cell, &comp_prediffs, opts.tolerances.rank_tol)?;
    let k = crate::identification::comparison_set(cell.g, cell.t, &data.groups_present()).len();
    let identity = default_weight(k, WeightMode::Identity, None, data)?;
    let mut fit = estimate_delta_star(cell, &omega, data, &identity, &opts.tolerances)?;
    if opts.weight == WeightMode::TwoStep {
        let w = default_weight(k, WeightMode::TwoStep, Some(&fit), data)?;
        fit = estimate_delta_star(cell, &omega, data, &w, &opts.tolerances)?;
    }
    estimate_attgt(cell, fit, data)
}

/// Estimates every requested cell. Cells run in parallel; output order follows
/// the feasible-cell ordering regardless of scheduling.
pub fn estimate(data: &PanelDataset, opts: &EstimateOptions) -> Result<Estimation> {
    let groups = data.groups_present();
    let feasible = feasible_cells(&groups, data.n_periods(), opts.factors)?;
    let mut failures = Vec::new();
    let targets: Vec<CellIndex> = match &opts.cells {
        None => feasible,
        Some(list) => {
            let mut out = Vec::new();
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for (g, t) in sorted {
                let cell = CellIndex::new(g, t, opts.factors);
                match infeasibility(cell, &groups, data.n_periods()) {
                    None => out.push(cell),
                    Some(reason) => {
                        let err = Error::InfeasibleCell { g, t, reason };
                        if !opts.keep_going {
                            return Err(err);
                        }
                        failures.push(CellFailure { g, t, error: err.to_string(), validation: true });
                    }
                }
            }
            out
        }
    };
    let results: Vec<Result<AttEstimate>> = targets.par_iter().map(|&c| fit_cell(data, c, opts)).collect();
    let mut cells = Vec::with_capacity(results.len());
    for (cell, res) in targets.iter().zip(results) {
        match res {
            Ok(est) => cells.push(est),
            Err(e) if opts.keep_going => failures.push(CellFailure {
                g: cell.g,
                t: cell.t,
                error: e.to_string(),
                validation: e.is_validation(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(Estimation {
        factors: opts.factors,
        omega_estimated: matches!(opts.omega, OmegaKind::PrincipalComponents),
        cells,
        failures,
        n_units: data.n_units(),
        n_periods: data.n_periods(),
        unit_groups: data.groups().to_vec(),
    })
}
