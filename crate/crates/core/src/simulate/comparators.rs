//! Comparison estimators: level differences, difference-in-differences, and
//! imputation with unit-specific linear trends.
//!
//! All three return [`CellEstimates`] over every `(g, t)`, `t >= g`, with a
//! nonempty not-yet-treated comparison set, so they aggregate exactly like
//! the main estimator. Cells are labelled with `r = 0`.

use nalgebra::{DMatrix, DVector};

use crate::aggregate::CellEstimates;
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimateOptions};
use crate::identification::{comparison_set, CellIndex};
use crate::inference::stack_influence;
use crate::linalg::pinv;
use crate::panel::{Group, PanelDataset};

fn comparator_cells(data: &PanelDataset) -> Result<Vec<CellIndex>> {
    let groups = data.groups_present();
    let mut cells = Vec::new();
    for g in groups.iter().filter_map(|g| g.period()) {
        for t in g as usize..=data.n_periods() {
            if !comparison_set(g, t, &groups).is_empty() {
                cells.push(CellIndex::new(g, t, 0));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::NoFeasibleCells { factors: 0 });
    }
    Ok(cells)
}

fn finish(data: &PanelDataset, cells: Vec<CellIndex>, att: Vec<f64>, cols: Vec<Vec<f64>>) -> Result<CellEstimates> {
    Ok(CellEstimates {
        att,
        influence: stack_influence(&cells, &cols)?,
        unit_groups: data.groups().to_vec(),
        n_periods: data.n_periods(),
    })
}

/// `mean(Y_t | g)` minus the equal-weight average of the comparison groups' `mean(Y_t | g')`.
pub fn levels(data: &PanelDataset) -> Result<CellEstimates> {
    let cells = comparator_cells(data)?;
    let n = data.n_units() as f64;
    let groups = data.groups_present();
    let mut att = Vec::with_capacity(cells.len());
    let mut cols = Vec::with_capacity(cells.len());
    for cell in &cells {
        let comp = comparison_set(cell.g, cell.t, &groups);
        let k = comp.len() as f64;
        // (weight on the group mean, group mean, share) per group involved
        let mut terms: Vec<(Group, f64, f64, f64)> = Vec::with_capacity(comp.len() + 1);
        for (gg, w) in std::iter::once((cell.group(), 1.0)).chain(comp.members.iter().map(|&m| (m, -1.0 / k))) {
            let units = data.members(gg);
            let mu = units.iter().map(|&i| data.y(i, cell.t)).sum::<f64>() / units.len() as f64;
            terms.push((gg, w, mu, units.len() as f64 / n));
        }
        att.push(terms.iter().map(|(_, w, mu, _)| w * mu).sum());
        let psi = (0..data.n_units())
            .map(|i| match terms.iter().find(|(gg, ..)| *gg == data.group(i)) {
                Some(&(_, w, mu, p)) => w * (data.y(i, cell.t) - mu) / p,
                None => 0.0,
            })
            .collect();
        cols.push(psi);
    }
    finish(data, cells, att, cols)
}

/// The staggered estimator with no factors and identity weighting.
pub fn did(data: &PanelDataset) -> Result<CellEstimates> {
    let opts = EstimateOptions { factors: 0, ..Default::default() };
    Ok(estimate(data, &opts)?.cell_estimates())
}

/// Per-group pieces of the unit-trend projection on the untreated periods `S`.
struct TrendBlock {
    /// Untreated periods (1-based).
    periods: Vec<usize>,
    /// `(X'X)^{-1} X'` with `X = [1, s]`, `2 x |S|`.
    coef: DMatrix<f64>,
    /// `I - X (X'X)^{-1} X'`.
    annihilator: DMatrix<f64>,
}

impl TrendBlock {
    fn new(last_untreated: usize) -> Self {
        let periods: Vec<usize> = (1..=last_untreated).collect();
        let x = DMatrix::from_fn(periods.len(), 2, |r, c| if c == 0 { 1.0 } else { periods[r] as f64 });
        let xtx_inv = (x.transpose() * &x).try_inverse().expect("two distinct periods");
        let coef = &xtx_inv * x.transpose();
        let annihilator = DMatrix::identity(periods.len(), periods.len()) - &x * &coef;
        Self { periods, coef, annihilator }
    }

    fn select(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.periods.len(), self.periods.iter().map(|&t| v[t - 1]))
    }

    /// `S' v` for a vector on the untreated periods.
    fn embed(&self, v: &DVector<f64>, periods: usize) -> DVector<f64> {
        let mut out = DVector::zeros(periods);
        for (k, &t) in self.periods.iter().enumerate() {
            out[t - 1] = v[k];
        }
        out
    }
}

/// Imputation under `Y_it(0) = θ_t + η_i + b_i t`, fitted on untreated observations.
///
/// Unit intercepts and slopes are profiled out; the time effects solve the
/// remaining normal equations through a pseudo-inverse (they are only
/// identified up to an affine function of `t`, which the imputations do not
/// depend on).
pub fn linear_trends(data: &PanelDataset) -> Result<CellEstimates> {
    let cells = comparator_cells(data)?;
    let periods = data.n_periods();
    let n = data.n_units();
    let last_untreated = |g: Group| g.period().map_or(periods, |p| p as usize - 1);
    if let Some(i) = (0..n).find(|&i| last_untreated(data.group(i)) < 2) {
        return Err(Error::InsufficientPrePeriods { unit: i });
    }
    let mut blocks = std::collections::BTreeMap::new();
    for g in data.groups_present() {
        blocks.insert(g, TrendBlock::new(last_untreated(g)));
    }
    let y = |i: usize| DVector::from_iterator(periods, data.outcomes().row(i).iter().copied());

    let mut a = DMatrix::zeros(periods, periods);
    let mut b = DVector::zeros(periods);
    for i in 0..n {
        let blk = &blocks[&data.group(i)];
        let m_y = &blk.annihilator * blk.select(&y(i));
        b += blk.embed(&m_y, periods);
    }
    for (g, blk) in &blocks {
        let count = data.members(*g).len() as f64;
        for (r, &tr) in blk.periods.iter().enumerate() {
            for (c, &tc) in blk.periods.iter().enumerate() {
                a[(tr - 1, tc - 1)] += count * blk.annihilator[(r, c)];
            }
        }
    }
    a /= n as f64;
    b /= n as f64;
    let a_pinv = pinv(&a, 1e-10);
    let theta = &a_pinv * &b;

    // per-unit influence of θ̂: A⁺ S_i' M_i (y_i - θ̂)
    let theta_influence: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let blk = &blocks[&data.group(i)];
            let resid = &blk.annihilator * (blk.select(&y(i)) - blk.select(&theta));
            &a_pinv * blk.embed(&resid, periods)
        })
        .collect();

    let mut att = Vec::with_capacity(cells.len());
    let mut cols = Vec::with_capacity(cells.len());
    for cell in &cells {
        let grp = cell.group();
        let blk = &blocks[&grp];
        let units = data.members(grp);
        let p = units.len() as f64 / n as f64;
        let x_t = DVector::from_vec(vec![1.0, cell.t as f64]);
        let weights_s = blk.coef.transpose() * &x_t;
        let imputed = |i: usize| {
            let fitted = blk.select(&y(i)) - blk.select(&theta);
            theta[cell.t - 1] + weights_s.dot(&fitted)
        };
        let gaps: Vec<f64> = units.iter().map(|&i| data.y(i, cell.t) - imputed(i)).collect();
        let est = gaps.iter().sum::<f64>() / gaps.len() as f64;
        // ∂ATT/∂θ = -e_t + S' L' x_t
        let mut grad = blk.embed(&weights_s, periods);
        grad[cell.t - 1] -= 1.0;
        let mut psi: Vec<f64> = theta_influence.iter().map(|h| grad.dot(h)).collect();
        for (&i, gap) in units.iter().zip(&gaps) {
            psi[i] += (gap - est) / p;
        }
        att.push(est);
        cols.push(psi);
    }
    finish(data, cells, att, cols)
}
