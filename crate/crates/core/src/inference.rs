//! Influence functions, the multiplier bootstrap, and bootstrap standard errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{AttEstimate, GmmFit};
use crate::identification::CellIndex;
use crate::linalg::rms;
use crate::panel::PanelDataset;
use crate::rng::stream_rng;

/// `z_{0.75} - z_{0.25}` for the standard normal.
pub const NORMAL_IQR: f64 = 1.348979500392164;

/// Per-unit influence `ψ̂_igt = ψ̂⁽¹⁾ + ψ̂⁽²⁾ + ψ̂⁽³⁾ + ψ̂⁽⁴⁾` for one cell.
///
/// `att.att`, `att.a_mean` and the fit must already be populated.
pub fn influence_attgt(cell: CellIndex, fit: &GmmFit, att: &AttEstimate, data: &PanelDataset) -> Vec<f64> {
    let n = data.n_units();
    let treated = data.members(cell.group());
    let p_g = treated.len() as f64 / n as f64;
    let g_prev = cell.g as usize - 1;
    let long_diff = |i: usize| data.y(i, cell.t) - data.y(i, g_prev);
    let treated_diff_mean = treated.iter().map(|&i| long_diff(i)).sum::<f64>() / n as f64;

    let delta = fit.delta();
    let a_bar_scaled = &att.a_mean / p_g;
    // ψ⁽²⁾ loading on each comparison group's residual: -(𝔼_n[A]/p̂_g)' B̂ e_k / p̂_{g'}
    let comp_loadings: Vec<f64> = fit
        .gamma
        .comparison
        .members
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let p = data.members(m).len() as f64 / n as f64;
            -a_bar_scaled.dot(&fit.b_matrix.column(k)) / p
        })
        .collect();

    let r = cell.r;
    let mut out = Vec::with_capacity(n);
    let mut a_i = DVector::zeros(r + 1);
    for i in 0..n {
        let gi = data.group(i);
        let is_treated = gi == cell.group();
        let ind = if is_treated { 1.0 } else { 0.0 };

        let psi1 = (ind * long_diff(i) - treated_diff_mean) / p_g;

        let psi2 = match fit.gamma.comparison.position(gi) {
            Some(k) => comp_loadings[k] * (fit.residual(data, i) - fit.moment_values[k]),
            None => 0.0,
        };

        a_i.fill(0.0);
        if is_treated {
            a_i[0] = 1.0;
            for j in 0..r {
                a_i[j + 1] = fit.gamma.projected[(i, j)];
            }
        }
        let psi3 = -delta.dot(&(&a_i - &att.a_mean)) / p_g;

        let psi4 = -(att.att / p_g) * (ind - p_g);
        out.push(psi1 + psi2 + psi3 + psi4);
    }
    out
}

/// Influence values of all cells, one column per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluencePanel {
    pub values: DMatrix<f64>,
    pub cells: Vec<CellIndex>,
}

impl InfluencePanel {
    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cells(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).iter().copied().collect()
    }

    /// `𝔼_n[Ψ̂Ψ̂'] / n`, the joint covariance of the cell estimates.
    pub fn vcov(&self) -> DMatrix<f64> {
        let n = self.n_units() as f64;
        self.values.transpose() * &self.values / (n * n)
    }

    /// Analytic standard errors `sqrt(𝔼_n[ψ̂²] / n)`.
    pub fn analytic_se(&self) -> Vec<f64> {
        let root_n = (self.n_units() as f64).sqrt();
        (0..self.n_cells()).map(|k| rms(&self.column(k)) / root_n).collect()
    }
}

pub fn stack_influence(cells: &[CellIndex], per_cell: &[Vec<f64>]) -> Result<InfluencePanel> {
    if cells.len() != per_cell.len() {
        return Err(Error::LengthMismatch { expected: cells.len(), found: per_cell.len() });
    }
    let n = per_cell.first().map_or(0, Vec::len);
    if let Some(bad) = per_cell.iter().find(|v| v.len() != n) {
        return Err(Error::LengthMismatch { expected: n, found: bad.len() });
    }
    let values = DMatrix::from_fn(n, cells.len(), |i, k| per_cell[k][i]);
    Ok(InfluencePanel { values, cells: cells.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightLaw {
    /// ±1 with probability ½ each.
    #[default]
    Rademacher,
    Normal,
    /// ζ ≡ 0; only useful for checking the bootstrap plumbing.
    #[doc(hidden)]
    Zero,
}

impl WeightLaw {
    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightLaw::Normal => rng.sample(StandardNormal),
            WeightLaw::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// `B x K` draws of `√n (ATT̂* - ATT̂)`.
    pub draws: DMatrix<f64>,
    pub estimates: Vec<f64>,
    pub n_units: usize,
    pub seed: u64,
    pub weight_law: WeightLaw,
}

impl BootstrapResult {
    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    /// Bootstrap estimates `ATT̂*_b = ATT̂ + draw_b / √n` for cell `k`.
    pub fn bootstrap_estimates(&self, k: usize) -> Vec<f64> {
        let root_n = (self.n_units as f64).sqrt();
        self.draws.column(k).iter().map(|d| self.estimates[k] + d / root_n).collect()
    }
}

/// Draw `b` is `n^{-1/2} Σ_i ζ_i^{(b)} Ψ̂_i` with ζ from stream `(seed, b)`.
pub fn multiplier_bootstrap(
    panel: &InfluencePanel,
    estimates: &[f64],
    draws: usize,
    weight_law: WeightLaw,
    seed: u64,
) -> Result<BootstrapResult> {
    if draws < 2 {
        return Err(Error::TooFewDraws(draws));
    }
    if panel.n_cells() == 0 || panel.n_units() == 0 {
        return Err(Error::LengthMismatch { expected: 1, found: 0 });
    }
    if estimates.len() != panel.n_cells() {
        return Err(Error::LengthMismatch { expected: panel.n_cells(), found: estimates.len() });
    }
    let n = panel.n_units();
    let k = panel.n_cells();
    let root_n = (n as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let mut acc = vec![0.0; k];
            for i in 0..n {
                let z = weight_law.draw(&mut rng);
                if z != 0.0 {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += z * panel.values[(i, c)];
                    }
                }
            }
            acc.iter().map(|a| a / root_n).collect()
        })
        .collect();
    let matrix = DMatrix::from_fn(draws, k, |b, c| rows[b][c]);
    Ok(BootstrapResult { draws: matrix, estimates: estimates.to_vec(), n_units: n, seed, weight_law })
}

/// Quantile by linear interpolation of order statistics at position `p (B + 1)`,
/// clamped to the sample range. `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    assert!(b > 0, "quantile of an empty sample");
    let h = (p * (b as f64 + 1.0)).clamp(1.0, b as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= b {
        return sorted[b - 1];
    }
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// Bootstrap scale `σ*` of the √n-scaled draws for cell `k`.
pub fn bootstrap_sigma(result: &BootstrapResult, k: usize) -> Result<f64> {
    let b = result.n_draws();
    if b < 2 {
        return Err(Error::TooFewDraws(b));
    }
    if b < 20 {
        log::warn!("only {b} bootstrap draws; interquartile range is unstable");
    }
    let mut col: Vec<f64> = result.draws.column(k).iter().copied().collect();
    col.sort_by(f64::total_cmp);
    Ok(((quantile(&col, 0.75) - quantile(&col, 0.25)) / NORMAL_IQR).max(0.0))
}

/// Standard error of the estimate for cell `k`: `σ* / √n`.
pub fn se_from_bootstrap(result: &BootstrapResult, k: usize) -> Result<f64> {
    Ok(bootstrap_sigma(result, k)? / (result.n_units as f64).sqrt())
}

/// `1 - alpha` quantile of `max_k |draw_k| / σ*_k` over the draws, for uniform bands.
///
/// Cells with a zero bootstrap scale are left out of the maximum.
pub fn sup_t_critical(result: &BootstrapResult, alpha: f64) -> Result<f64> {
    let sigmas: Vec<f64> = (0..result.draws.ncols()).map(|k| bootstrap_sigma(result, k)).collect::<Result<_>>()?;
    let mut stats: Vec<f64> = result
        .draws
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(&sigmas)
                .filter(|(_, s)| **s > 0.0)
                .map(|(d, s)| d.abs() / s)
                .fold(0.0, f64::max)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(quantile(&stats, 1.0 - alpha))
}

/// Two-sided normal test of `estimate = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZTest {
    pub z: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn z_test(estimate: f64, se: f64, alpha: f64) -> ZTest {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std = Normal::standard();
    let crit = std.inverse_cdf(1.0 - alpha / 2.0);
    let z = if se > 0.0 { estimate / se } else { f64::NAN };
    let p = if z.is_nan() { f64::NAN } else { 2.0 * (1.0 - std.cdf(z.abs())) };
    ZTest { z, p, ci_low: estimate - crit * se, ci_high: estimate + crit * se }
}
