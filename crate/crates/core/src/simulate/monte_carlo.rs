//! Replication loop and table summaries.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{comparators, generate_panel, EstimatorSpec, Parameter, SeMethod, SimConfig, Truth};
use crate::aggregate::{event_study, overall, AggregationResult, CellEstimates};
use crate::error::Result;
use crate::estimator::{estimate, EstimateOptions};
use crate::inference::{multiplier_bootstrap, se_from_bootstrap, stack_influence, WeightLaw};
use crate::identification::{CellIndex, OmegaKind};
use crate::linalg::mean;
use crate::panel::PanelDataset;

/// Two-sided 5% critical value.
pub const Z_CRIT: f64 = 1.96;

#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: EstimatorSpec,
    pub parameter: Parameter,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub error: Option<String>,
}

/// Summary of one estimator and parameter across replications.
#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    pub estimator: EstimatorSpec,
    pub parameter: Parameter,
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Median of `|estimate - truth|`.
    pub mad: f64,
    /// Share of replications with `|z| > 1.96` among those with a positive SE; NaN if none.
    pub rejection_rate: f64,
    pub mean_se: f64,
    /// Monte Carlo standard deviation of the estimates.
    pub sd_estimate: f64,
    pub reps_used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub config: SimConfig,
    pub rows: Vec<McRow>,
    pub records: Vec<RepRecord>,
}

impl McResult {
    pub fn row(&self, estimator: EstimatorSpec, parameter: Parameter) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.parameter == parameter)
    }
}

/// Cell estimates of one estimator on one panel.
pub fn cell_estimates(spec: EstimatorSpec, omega: &OmegaKind, data: &PanelDataset) -> Result<CellEstimates> {
    match spec {
        EstimatorSpec::StaggeredIfe { factors } => {
            let opts = EstimateOptions { factors, omega: omega.clone(), ..Default::default() };
            Ok(estimate(data, &opts)?.cell_estimates())
        }
        EstimatorSpec::Levels => comparators::levels(data),
        EstimatorSpec::Did => comparators::did(data),
        EstimatorSpec::LinearTrends => comparators::linear_trends(data),
    }
}

pub fn aggregate(atts: &CellEstimates, parameter: Parameter) -> Result<AggregationResult> {
    match parameter {
        Parameter::Overall => overall(atts),
        Parameter::EventStudy { e } => event_study(atts, e),
    }
}

/// Seed for the bootstrap inside replication `rep`, decorrelated from the data stream.
fn bootstrap_seed(seed: u64, rep: u64) -> u64 {
    seed ^ (rep + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn standard_error(agg: &AggregationResult, method: SeMethod, seed: u64) -> Result<f64> {
    match method {
        SeMethod::Analytic => Ok(agg.se),
        SeMethod::Bootstrap { draws } => {
            let panel = stack_influence(&[CellIndex::new(0, 0, 0)], std::slice::from_ref(&agg.influence))?;
            let boot = multiplier_bootstrap(&panel, &[agg.estimate], draws, WeightLaw::Rademacher, seed)?;
            se_from_bootstrap(&boot, 0)
        }
    }
}

fn run_rep(config: &SimConfig, rep: usize) -> Vec<RepRecord> {
    let (data, _) = generate_panel(config, rep as u64);
    let mut out = Vec::with_capacity(config.estimators.len() * config.parameters.len());
    for &estimator in &config.estimators {
        let cells = cell_estimates(estimator, &config.omega, &data);
        for &parameter in &config.parameters {
            let res = cells.as_ref().map_err(|e| e.to_string()).and_then(|c| {
                let agg = aggregate(c, parameter).map_err(|e| e.to_string())?;
                let se = standard_error(&agg, config.se_method, bootstrap_seed(config.seed, rep as u64))
                    .map_err(|e| e.to_string())?;
                Ok((agg.estimate, se))
            });
            let (estimate, se, error) = match res {
                Ok((est, se)) => (Some(est), Some(se), None),
                Err(e) => (None, None, Some(e)),
            };
            out.push(RepRecord { rep, estimator, parameter, estimate, se, error });
        }
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn summarize(estimator: EstimatorSpec, parameter: Parameter, truth: f64, records: &[&RepRecord]) -> McRow {
    let ok: Vec<(f64, f64)> = records.iter().filter_map(|r| Some((r.estimate?, r.se?))).collect();
    let failures = records.len() - ok.len();
    let errors: Vec<f64> = ok.iter().map(|(e, _)| e - truth).collect();
    let bias = mean(&errors);
    let rmse = mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt();
    let mad = median(errors.iter().map(|e| e.abs()).collect());
    let tested: Vec<bool> = ok
        .iter()
        .filter(|(_, se)| *se > 0.0 && se.is_finite())
        .map(|(est, se)| ((est - truth) / se).abs() > Z_CRIT)
        .collect();
    let rejection_rate = if tested.is_empty() {
        f64::NAN
    } else {
        tested.iter().filter(|&&r| r).count() as f64 / tested.len() as f64
    };
    let est_mean = mean(&ok.iter().map(|(e, _)| *e).collect::<Vec<_>>());
    let sd_estimate = if ok.len() > 1 {
        (ok.iter().map(|(e, _)| (e - est_mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    McRow {
        estimator,
        parameter,
        truth,
        bias,
        rmse,
        mad,
        rejection_rate,
        mean_se: mean(&ok.iter().map(|(_, s)| *s).collect::<Vec<_>>()),
        sd_estimate,
        reps_used: ok.len(),
        failures,
    }
}

/// Runs every replication in parallel and summarizes in replication order, so
/// results do not depend on the number of worker threads.
pub fn run_monte_carlo(config: &SimConfig) -> Result<McResult> {
    config.validate()?;
    let per_rep: Vec<Vec<RepRecord>> = (0..config.reps).into_par_iter().map(|rep| run_rep(config, rep)).collect();
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for &estimator in &config.estimators {
        for &parameter in &config.parameters {
            let subset: Vec<&RepRecord> =
                records.iter().filter(|r| r.estimator == estimator && r.parameter == parameter).collect();
            let row = summarize(estimator, parameter, config.tau, &subset);
            if row.failures > 0 {
                log::warn!("{} / {}: {} of {} replications failed", estimator.label(), parameter.label(), row.failures, config.reps);
            }
            rows.push(row);
        }
    }
    Ok(McResult { config: config.clone(), rows, records })
}

/// Estimator rows of the first comparison table: levels, `R = 0, 1, 2`, DID, linear trends.
pub fn table1_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::Levels,
        EstimatorSpec::StaggeredIfe { factors: 0 },
        EstimatorSpec::StaggeredIfe { factors: 1 },
        EstimatorSpec::StaggeredIfe { factors: 2 },
        EstimatorSpec::Did,
        EstimatorSpec::LinearTrends,
    ]
}

/// One configuration per truth column of the comparison table.
pub fn table1_configs(reps: usize, seed: u64) -> Vec<(String, SimConfig)> {
    [Truth::NoUnobservedHeterogeneity, Truth::ZeroFactors, Truth::OneFactor, Truth::TwoFactors]
        .into_iter()
        .map(|truth| {
            let cfg = SimConfig { truth_ife: truth, reps, seed, estimators: table1_estimators(), ..Default::default() };
            (format!("{} IFE", truth.code()), cfg)
        })
        .collect()
}

/// One configuration per loading separation `l` with a single true factor.
pub fn table2_configs(reps: usize, seed: u64) -> Vec<(String, SimConfig)> {
    [0.5, 0.1, 0.01, 0.001]
        .into_iter()
        .map(|l| {
            let cfg = SimConfig {
                truth_ife: Truth::OneFactor,
                l: Some(l),
                reps,
                seed,
                estimators: table1_estimators()[..4].to_vec(),
                parameters: vec![
                    Parameter::Overall,
                    Parameter::EventStudy { e: 0 },
                    Parameter::EventStudy { e: 1 },
                    Parameter::EventStudy { e: 2 },
                ],
                ..Default::default()
            };
            (format!("l={l}"), cfg)
        })
        .collect()
}

fn fmt4(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.4}")
    }
}

/// Wide CSV: one row per (parameter, estimator), four columns per labelled run.
pub fn write_table<W: Write>(columns: &[(String, McResult)], mut sink: W) -> Result<()> {
    let mut header = vec!["parameter".to_string(), "estimator".to_string()];
    for (label, _) in columns {
        for stat in ["bias", "rmse", "mad", "rej"] {
            header.push(format!("{label} {stat}"));
        }
    }
    writeln!(sink, "{}", header.join(","))?;
    let Some((_, first)) = columns.first() else {
        return Ok(());
    };
    let mut keys: Vec<(Parameter, EstimatorSpec)> = Vec::new();
    for p in &first.config.parameters {
        for e in &first.config.estimators {
            keys.push((*p, *e));
        }
    }
    for (p, e) in keys {
        let mut line = vec![p.label(), e.label()];
        for (_, res) in columns {
            match res.row(e, p) {
                Some(r) => line.extend([fmt4(r.bias), fmt4(r.rmse), fmt4(r.mad), fmt4(r.rejection_rate)]),
                None => line.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        writeln!(sink, "{}", line.join(","))?;
    }
    Ok(())
}
