//! Independent oracles and random instance builders shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use staggered_ife::panel::{Group, PanelDataset};
use staggered_ife::simulate::Latent;

/// `(θ*(g,t), F*(g,t))` evaluated directly from the latent `θ_t`, `F_t` with
/// `Ω` selecting the last `R` pre-period differences:
///
/// `F* = ((F_t - F_{g-1})' (Ω'ΔF^pre)^{-1})'`,
/// `θ* = (θ_t - θ_{g-1}) - (F_t - F_{g-1})' (Ω'ΔF^pre)^{-1} Ω'Δθ^pre`.
pub fn oracle_delta_star(latent: &Latent, g: usize, t: usize) -> (f64, DVector<f64>) {
    let r = latent.factors.ncols();
    let f = |s: usize| latent.factors.row(s - 1).transpose();
    let theta = |s: usize| latent.theta[s - 1];
    let long_theta = theta(t) - theta(g - 1);
    if r == 0 {
        return (long_theta, DVector::zeros(0));
    }
    let long_f = f(t) - f(g - 1);
    // rows of Ω'ΔF^pre are the last R pre-period differences, s = g-R .. g-1
    let periods: Vec<usize> = (g - r..g).collect();
    let omega_df = DMatrix::from_fn(r, r, |row, col| {
        let s = periods[row];
        latent.factors[(s - 1, col)] - latent.factors[(s - 2, col)]
    });
    let omega_dtheta = DVector::from_iterator(r, periods.iter().map(|&s| theta(s) - theta(s - 1)));
    let inv = omega_df.try_inverse().expect("oracle design has full-rank factor block");
    let row = long_f.transpose() * &inv;
    let f_star = row.transpose();
    let theta_star = long_theta - (row * omega_dtheta)[(0, 0)];
    (theta_star, f_star)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian outcomes on `T` periods with the given groups, `units` per group,
/// plus group-specific linear drifts so that designs are not flat.
pub fn random_panel(seed: u64, periods: usize, groups: &[Group], units: usize) -> PanelDataset {
    let mut r = rng(seed);
    let n = groups.len() * units;
    let drift: Vec<f64> = groups.iter().map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let unit_groups: Vec<Group> = groups.iter().flat_map(|&g| std::iter::repeat_n(g, units)).collect();
    let outcomes = DMatrix::from_fn(n, periods, |i, c| {
        let k = i / units;
        drift[k] * (c as f64) + r.sample::<f64, _>(StandardNormal)
    });
    PanelDataset::new(outcomes, unit_groups).unwrap()
}

/// Groups `{3, ..., T, ∞}`.
pub fn staggered_groups(periods: usize) -> Vec<Group> {
    let mut g: Vec<Group> = (3..=periods as u32).map(Group::Period).collect();
    g.push(Group::Never);
    g
}
