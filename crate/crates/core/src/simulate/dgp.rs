//! Data-generating processes.
//!
//! [`generate_panel`] is the staggered three-loading design used by the
//! Monte Carlo tables. [`FactorDesign`] is a noiseless design with loading
//! means fixed exactly within every group, used for exact-recovery checks and
//! for the degenerate (rank-deficient) instances in [`degenerate_design`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{NoiseLaw, SimConfig, Truth};
use crate::panel::{Group, PanelDataset};
use crate::rng::stream_rng;

/// Unobserved components behind a generated panel.
#[derive(Debug, Clone)]
pub struct Latent {
    pub theta: Vec<f64>,
    /// `T x K`, row `t-1` is `F_t`.
    pub factors: DMatrix<f64>,
    /// `n x K`.
    pub loadings: DMatrix<f64>,
    pub eta: Vec<f64>,
    /// `n x 3` instruments (empty for [`FactorDesign`] panels).
    pub z: DMatrix<f64>,
}

impl Latent {
    /// `Y_it(0)` without the idiosyncratic error.
    pub fn systematic(&self, i: usize, t: usize) -> f64 {
        self.theta[t - 1] + self.eta[i] + self.loadings.row(i).dot(&self.factors.row(t - 1))
    }
}

/// Factor paths `F̃_1t = t`, `F̃_2t = (-1)^t t ln t`, `F̃_3t = (-1)^{1{t>5}} (5-|5-t|)²`.
pub fn factor_paths(periods: usize) -> DMatrix<f64> {
    DMatrix::from_fn(periods, 3, |row, col| {
        let t = (row + 1) as f64;
        match col {
            0 => t,
            1 => {
                let sign = if (row + 1) % 2 == 0 { 1.0 } else { -1.0 };
                sign * t * t.ln()
            }
            _ => {
                let sign = if row + 1 > 5 { -1.0 } else { 1.0 };
                sign * (5.0 - (5.0 - t).abs()).powi(2)
            }
        }
    })
}

/// The factors switched on by `truth`; inactive columns are zero.
pub fn active_factors(truth: Truth, periods: usize) -> DMatrix<f64> {
    let mut f = factor_paths(periods);
    for col in truth.active_factors()..3 {
        f.column_mut(col).fill(0.0);
    }
    f
}

fn noise<R: Rng>(rng: &mut R, sd: f64, law: NoiseLaw) -> f64 {
    match law {
        NoiseLaw::Normal => sd * rng.sample::<f64, _>(StandardNormal),
        NoiseLaw::Uniform => sd * 3f64.sqrt() * rng.random_range(-1.0..1.0),
    }
}

/// Draws replication `rep` of the design in `config`.
///
/// Each replication uses its own random stream, so the result does not depend
/// on which other replications are drawn or in which order.
pub fn generate_panel(config: &SimConfig, rep: u64) -> (PanelDataset, Latent) {
    let mut rng = stream_rng(config.seed, rep);
    let n = config.n;
    let periods = config.periods;
    let factors = active_factors(config.truth_ife, periods);
    let theta = vec![0.0; periods];
    let h = config.truth_ife.h();
    let sd = config.noise;

    let mut groups = Vec::with_capacity(n);
    let mut loadings = DMatrix::zeros(n, 3);
    let mut z = DMatrix::zeros(n, 3);
    let mut eta = Vec::with_capacity(n);
    let mut outcomes = DMatrix::zeros(n, periods);
    for i in 0..n {
        let group = config.groups[rng.random_range(0..config.groups.len())];
        let gcode = group.period().map_or(config.never_code, f64::from);
        for j in 0..3 {
            z[(i, j)] = sd.z * rng.sample::<f64, _>(StandardNormal);
        }
        let e_eta = sd.eta * rng.sample::<f64, _>(StandardNormal);
        let mut e_lambda = [0.0; 3];
        for e in &mut e_lambda {
            *e = sd.lambda * rng.sample::<f64, _>(StandardNormal);
        }
        eta.push(h * gcode + e_eta);
        loadings[(i, 0)] = match config.l {
            Some(l) => 1.0 + gcode * l + e_lambda[0],
            None => 1.0 + 2.0 * gcode + config.rho * z[(i, 0)] + e_lambda[0],
        };
        loadings[(i, 1)] = 1.0 - 5.0 * gcode + config.rho * z[(i, 1)] + e_lambda[1];
        loadings[(i, 2)] = 5.0 - 10.0 * gcode + config.rho * z[(i, 2)] + e_lambda[2];
        for t in 1..=periods {
            let common = theta[t - 1] + eta[i] + loadings.row(i).dot(&factors.row(t - 1));
            let treated = group.period().is_some_and(|g| t >= g as usize);
            let effect = if treated { config.tau } else { 0.0 };
            outcomes[(i, t - 1)] = common + noise(&mut rng, sd.e, sd.e_law) + effect;
        }
        groups.push(group);
    }
    let data = PanelDataset::new(outcomes, groups).expect("generated panel is valid");
    (data, Latent { theta, factors, loadings, eta, z })
}

/// Noiseless IFE panel with loading means fixed exactly within each group.
#[derive(Debug, Clone)]
pub struct FactorDesign {
    pub theta: Vec<f64>,
    /// `T x R`.
    pub factors: DMatrix<f64>,
    /// `(group, units, mean loading)`.
    pub groups: Vec<(Group, usize, DVector<f64>)>,
    pub eta_sd: f64,
    /// Spread of unit loadings around their group mean; deviations are demeaned within group.
    pub deviation_sd: f64,
    /// Restricts deviations to multiples of this direction when set.
    pub deviation_direction: Option<DVector<f64>>,
    pub tau: f64,
}

impl FactorDesign {
    pub fn periods(&self) -> usize {
        self.theta.len()
    }

    pub fn r(&self) -> usize {
        self.factors.ncols()
    }

    /// A generic design: Gaussian `θ_t`, `F_t` and group loading means.
    pub fn random(r: usize, periods: usize, groups: &[Group], units_per_group: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let theta = (0..periods).map(|_| normal()).collect();
        let factors = DMatrix::from_fn(periods, r, |_, _| normal());
        let groups = groups
            .iter()
            .map(|&g| (g, units_per_group, DVector::from_fn(r, |_, _| 2.0 * normal())))
            .collect();
        Self { theta, factors, groups, eta_sd: 1.0, deviation_sd: 1.0, deviation_direction: None, tau: 0.0 }
    }

    pub fn generate(&self, seed: u64) -> (PanelDataset, Latent) {
        let mut rng = stream_rng(seed, 1);
        let r = self.r();
        let periods = self.periods();
        let n: usize = self.groups.iter().map(|(_, c, _)| c).sum();
        let mut loadings = DMatrix::zeros(n, r);
        let mut unit_groups = Vec::with_capacity(n);
        let mut eta = Vec::with_capacity(n);
        let mut row = 0;
        for (g, count, mean) in &self.groups {
            let dev: DMatrix<f64> = match &self.deviation_direction {
                Some(dir) => {
                    let s = DVector::from_fn(*count, |_, _| self.deviation_sd * rng.sample::<f64, _>(StandardNormal));
                    &s * dir.transpose()
                }
                None => DMatrix::from_fn(*count, r, |_, _| self.deviation_sd * rng.sample::<f64, _>(StandardNormal)),
            };
            let centre = dev.row_mean();
            for k in 0..*count {
                let lam = mean.transpose() + dev.row(k) - &centre;
                loadings.row_mut(row + k).copy_from(&lam);
                unit_groups.push(*g);
                eta.push(self.eta_sd * rng.sample::<f64, _>(StandardNormal));
            }
            row += count;
        }
        let outcomes = DMatrix::from_fn(n, periods, |i, c| {
            let t = c + 1;
            let treated = unit_groups[i].period().is_some_and(|g| t >= g as usize);
            self.theta[c] + eta[i] + loadings.row(i).dot(&self.factors.row(c)) + if treated { self.tau } else { 0.0 }
        });
        let data = PanelDataset::new(outcomes, unit_groups).expect("design panel is valid");
        let latent = Latent { theta: self.theta.clone(), factors: self.factors.clone(), loadings, eta, z: DMatrix::zeros(n, 0) };
        (data, latent)
    }
}

/// Ways for the factor model to collapse to fewer effective factors than estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateKind {
    /// Every group has the same mean loading (one factor, estimated with `R = 1`).
    SharedLoadingMeans,
    /// Second loading is a fixed multiple of the first (estimated with `R = 2`).
    ProportionalLoadings,
    /// Both factors follow the same path (estimated with `R = 2`).
    CollinearFactors,
}

impl DegenerateKind {
    pub const ALL: [DegenerateKind; 3] =
        [DegenerateKind::SharedLoadingMeans, DegenerateKind::ProportionalLoadings, DegenerateKind::CollinearFactors];

    pub fn factors(self) -> usize {
        match self {
            DegenerateKind::SharedLoadingMeans => 1,
            _ => 2,
        }
    }
}

/// A randomly drawn noiseless design of the given degenerate kind, on
/// `T = 8` with groups `{5, 6, 7, 8, ∞}`.
pub fn degenerate_design(kind: DegenerateKind, seed: u64) -> FactorDesign {
    let groups = [Group::Period(5), Group::Period(6), Group::Period(7), Group::Period(8), Group::Never];
    let mut design = FactorDesign::random(kind.factors(), 8, &groups, 40, seed);
    let mut rng = stream_rng(seed, 2);
    match kind {
        DegenerateKind::SharedLoadingMeans => {
            let common = design.groups[0].2.clone();
            for (_, _, mean) in &mut design.groups {
                mean.copy_from(&common);
            }
        }
        DegenerateKind::ProportionalLoadings => {
            let c: f64 = rng.random_range(0.5..2.0);
            for (_, _, mean) in &mut design.groups {
                mean[1] = c * mean[0];
            }
            design.deviation_direction = Some(DVector::from_vec(vec![1.0, c]));
        }
        DegenerateKind::CollinearFactors => {
            let first = design.factors.column(0).into_owned();
            design.factors.column_mut(1).copy_from(&first);
        }
    }
    design
}
