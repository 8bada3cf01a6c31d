//! Monte Carlo design, comparison estimators and the replication harness.

pub mod comparators;
pub mod dgp;
pub mod monte_carlo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::OmegaKind;
use crate::panel::Group;

pub use comparators::{did, levels, linear_trends};
pub use dgp::{degenerate_design, generate_panel, DegenerateKind, FactorDesign, Latent};
pub use monte_carlo::{
    run_monte_carlo, table1_configs, table1_estimators, table2_configs, write_table, McResult, McRow, RepRecord,
};

/// Which factors are active in the untreated outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum Truth {
    /// No factors and group-invariant unit effects.
    NoUnobservedHeterogeneity,
    /// No factors; unit effects shift with the group.
    ZeroFactors,
    OneFactor,
    TwoFactors,
}

impl Truth {
    pub fn code(self) -> i32 {
        match self {
            Truth::NoUnobservedHeterogeneity => -1,
            Truth::ZeroFactors => 0,
            Truth::OneFactor => 1,
            Truth::TwoFactors => 2,
        }
    }

    /// Group slope `h` of the unit effect.
    pub fn h(self) -> f64 {
        if self == Truth::NoUnobservedHeterogeneity {
            0.0
        } else {
            1.0
        }
    }

    pub fn active_factors(self) -> usize {
        self.code().max(0) as usize
    }
}

impl TryFrom<i32> for Truth {
    type Error = String;

    fn try_from(v: i32) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Truth::NoUnobservedHeterogeneity),
            0 => Ok(Truth::ZeroFactors),
            1 => Ok(Truth::OneFactor),
            2 => Ok(Truth::TwoFactors),
            other => Err(format!("truth_ife must be one of -1, 0, 1, 2; got {other}")),
        }
    }
}

impl From<Truth> for i32 {
    fn from(t: Truth) -> i32 {
        t.code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    StaggeredIfe { factors: usize },
    Levels,
    Did,
    LinearTrends,
}

impl EstimatorSpec {
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::StaggeredIfe { factors } => format!("staggered-ife R={factors}"),
            EstimatorSpec::Levels => "levels".into(),
            EstimatorSpec::Did => "did".into(),
            EstimatorSpec::LinearTrends => "linear-trends".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Parameter {
    Overall,
    EventStudy { e: i64 },
}

impl Parameter {
    pub fn label(&self) -> String {
        match self {
            Parameter::Overall => "overall".into(),
            Parameter::EventStudy { e } => format!("event-study e={e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    #[default]
    Normal,
    /// Uniform with the requested standard deviation.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub eta: f64,
    pub lambda: f64,
    pub z: f64,
    pub e: f64,
    pub e_law: NoiseLaw,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { eta: 0.1, lambda: 1.0, z: 1.0, e: 1.0, e_law: NoiseLaw::Normal }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self { eta: 0.0, lambda: 0.0, z: 0.0, e: 0.0, e_law: NoiseLaw::Normal }
    }
}

/// How standard errors are computed inside the Monte Carlo loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SeMethod {
    #[default]
    Analytic,
    Bootstrap { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub periods: usize,
    /// Treatment groups drawn with equal probability; `"inf"` is never treated.
    pub groups: Vec<Group>,
    pub truth_ife: Truth,
    pub rho: f64,
    /// Replaces the group slope of the first loading (and drops its `Z` term) when set.
    pub l: Option<f64>,
    pub noise: NoiseConfig,
    /// Value of `G_i` used for never-treated units in the loading and unit-effect formulas.
    pub never_code: f64,
    /// Constant treatment effect added to treated cells.
    pub tau: f64,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorSpec>,
    pub parameters: Vec<Parameter>,
    /// Projection used by the staggered estimator with `R > 0`.
    pub omega: OmegaKind,
    pub se_method: SeMethod,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            periods: 8,
            groups: vec![Group::Period(5), Group::Period(6), Group::Period(7), Group::Period(8), Group::Never],
            truth_ife: Truth::OneFactor,
            rho: 0.2,
            l: None,
            noise: NoiseConfig::default(),
            never_code: 0.0,
            tau: 0.0,
            reps: 1000,
            seed: 0,
            estimators: vec![EstimatorSpec::StaggeredIfe { factors: 1 }],
            parameters: vec![Parameter::Overall],
            omega: OmegaKind::LastBlock,
            se_method: SeMethod::Analytic,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.periods < 3 {
            return bad("at least 3 periods are required");
        }
        if self.groups.is_empty() {
            return bad("groups must not be empty");
        }
        for g in &self.groups {
            if let Group::Period(p) = g {
                if *p < 2 || *p as usize > self.periods {
                    return Err(Error::Config(format!("group {p} outside 2..={}", self.periods)));
                }
            }
        }
        if self.estimators.is_empty() || self.parameters.is_empty() {
            return bad("at least one estimator and one parameter are required");
        }
        let sds = [self.noise.eta, self.noise.lambda, self.noise.z, self.noise.e];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise standard deviations must be finite and nonnegative");
        }
        if let SeMethod::Bootstrap { draws } = self.se_method {
            if draws < 2 {
                return Err(Error::TooFewDraws(draws));
            }
        }
        Ok(())
    }
}
