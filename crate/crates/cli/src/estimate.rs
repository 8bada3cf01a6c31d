use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use staggered_ife::aggregate::{all_event_studies, all_group_averages, overall, AggregationKind, AggregationResult};
use staggered_ife::estimator::{estimate, EstimateOptions, Estimation, Tolerances, WeightMode};
use staggered_ife::identification::{CellIndex, OmegaKind, RankReport};
use staggered_ife::inference::{
    multiplier_bootstrap, se_from_bootstrap, stack_influence, sup_t_critical, z_test, WeightLaw,
};
use staggered_ife::panel::{load_panel, LoadOptions, PanelDataset};

use crate::report::{csv_num, read_input, sha256_hex, OutputDir, RunManifest, MANIFEST};
use crate::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaArg {
    LastBlock,
    Pca,
    Lags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightArg {
    Identity,
    TwoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultArg {
    Rademacher,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateArg {
    None,
    Event,
    Group,
    Overall,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Long-format CSV with columns unit,period,outcome,group.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for reports; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of interactive fixed effects R.
    #[arg(long, default_value_t = 0)]
    pub factors: usize,
    #[arg(long, value_enum, default_value = "last-block")]
    pub omega: OmegaArg,
    /// Pre-period lags selected by `--omega lags`, one per factor (1 = last pre-period difference).
    #[arg(long, value_delimiter = ',')]
    pub omega_lags: Vec<usize>,
    #[arg(long, value_enum, default_value = "identity")]
    pub weight: WeightArg,
    /// `all`, or `g,t` pairs in calendar periods separated by `;` (e.g. `3,3;4,5`).
    #[arg(long, default_value = "all")]
    pub cells: String,
    /// Multiplier bootstrap draws; the bare flag means 999.
    #[arg(long, num_args = 0..=1, default_missing_value = "999")]
    pub bootstrap: Option<usize>,
    /// Bootstrap seed; required with `--bootstrap`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "rademacher")]
    pub mult: MultArg,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "overall")]
    pub aggregate: Vec<AggregateArg>,
    /// Significance level for intervals and tests.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Drop units treated in the first period instead of failing.
    #[arg(long)]
    pub drop_g1: bool,
    /// Record failing cells and report the rest.
    #[arg(long)]
    pub keep_going: bool,
    /// Relative singular-value floor for the rank check.
    #[arg(long, default_value_t = staggered_ife::identification::DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
}

fn parse_cells(spec: &str, first_period: i64) -> CliResult<Option<Vec<(u32, usize)>>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    let bad = |part: &str| Failure::Validation(format!("--cells: cannot parse `{part}` as g,t"));
    let mut cells = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (g, t) = part.split_once(',').ok_or_else(|| bad(part))?;
        let g: i64 = g.trim().parse().map_err(|_| bad(part))?;
        let t: i64 = t.trim().parse().map_err(|_| bad(part))?;
        let (g, t) = (g - first_period + 1, t - first_period + 1);
        if g < 2 || t < 1 {
            return Err(Failure::Validation(format!("--cells: `{part}` is before the second observed period")));
        }
        cells.push((g as u32, t as usize));
    }
    if cells.is_empty() {
        return Err(Failure::Validation("--cells lists no cells".into()));
    }
    Ok(Some(cells))
}

fn options(args: &EstimateArgs, first_period: i64) -> CliResult<EstimateOptions> {
    let omega = match args.omega {
        OmegaArg::LastBlock => OmegaKind::LastBlock,
        OmegaArg::Pca => OmegaKind::PrincipalComponents,
        OmegaArg::Lags => {
            if args.omega_lags.len() != args.factors {
                return Err(Failure::Validation(format!(
                    "--omega lags needs {} lag(s) in --omega-lags, got {}",
                    args.factors,
                    args.omega_lags.len()
                )));
            }
            OmegaKind::Lags(args.omega_lags.clone())
        }
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Failure::Validation("--alpha must lie in (0, 1)".into()));
    }
    if !(args.rank_tol > 0.0 && args.rank_tol < 1.0) {
        return Err(Failure::Validation("--rank-tol must lie in (0, 1)".into()));
    }
    Ok(EstimateOptions {
        factors: args.factors,
        omega,
        weight: match args.weight {
            WeightArg::Identity => WeightMode::Identity,
            WeightArg::TwoStep => WeightMode::TwoStep,
        },
        tolerances: Tolerances { rank_tol: args.rank_tol, ..Default::default() },
        cells: parse_cells(&args.cells, first_period)?,
        keep_going: args.keep_going,
    })
}

/// Standard errors and intervals for a set of estimates sharing one influence panel.
struct Inference {
    se: Vec<f64>,
    source: &'static str,
    /// Sup-t critical value for a uniform band, bootstrap only.
    band_crit: Option<f64>,
}

fn inference(
    labels: &[CellIndex],
    influence: &[Vec<f64>],
    estimates: &[f64],
    analytic_se: &[f64],
    args: &EstimateArgs,
) -> CliResult<Inference> {
    let Some(draws) = args.bootstrap else {
        return Ok(Inference { se: analytic_se.to_vec(), source: "analytic", band_crit: None });
    };
    if estimates.is_empty() {
        return Ok(Inference { se: Vec::new(), source: "bootstrap", band_crit: None });
    }
    let seed = args.seed.expect("checked before estimation");
    let law = match args.mult {
        MultArg::Rademacher => WeightLaw::Rademacher,
        MultArg::Normal => WeightLaw::Normal,
    };
    let panel = stack_influence(labels, influence)?;
    let boot = multiplier_bootstrap(&panel, estimates, draws, law, seed)?;
    let se = (0..estimates.len()).map(|k| se_from_bootstrap(&boot, k)).collect::<Result<Vec<_>, _>>()?;
    let band_crit = sup_t_critical(&boot, args.alpha).ok();
    Ok(Inference { se, source: "bootstrap", band_crit })
}

#[derive(Serialize)]
struct CellRow {
    g: i64,
    t: i64,
    event_time: i64,
    att: f64,
    se: f64,
    se_analytic: f64,
    ci_low: f64,
    ci_high: f64,
    z: f64,
    p: f64,
    band_low: Option<f64>,
    band_high: Option<f64>,
    theta_star: f64,
    f_star: Vec<f64>,
    rank: RankReport,
}

#[derive(Serialize)]
struct FailureRow {
    g: i64,
    t: i64,
    error: String,
}

#[derive(Serialize)]
struct CellReport<'a> {
    manifest: &'static str,
    factors: usize,
    omega: &'a OmegaKind,
    omega_estimated: bool,
    weight: WeightArg,
    se_method: String,
    alpha: f64,
    n_units: usize,
    n_periods: usize,
    first_period: i64,
    cells: Vec<CellRow>,
    failures: Vec<FailureRow>,
}

#[derive(Serialize)]
struct AggregateRow {
    #[serde(flatten)]
    result: AggregationResult,
    se_analytic: f64,
    ci_low: f64,
    ci_high: f64,
    z: f64,
    p: f64,
}

#[derive(Serialize)]
struct AggregateReport {
    manifest: &'static str,
    se_method: String,
    aggregates: Vec<AggregateRow>,
}

fn se_label(source: &str, omega_estimated: bool) -> String {
    if omega_estimated {
        format!("{source}-uncorrected")
    } else {
        source.to_string()
    }
}

fn aggregates(est: &Estimation, args: &EstimateArgs, data: &PanelDataset) -> CliResult<Vec<AggregationResult>> {
    if est.cells.is_empty() || args.aggregate.contains(&AggregateArg::None) {
        return Ok(Vec::new());
    }
    let atts = est.cell_estimates();
    let mut out = Vec::new();
    for kind in &args.aggregate {
        match kind {
            AggregateArg::Overall => out.push(overall(&atts)?),
            AggregateArg::Event => out.extend(all_event_studies(&atts)),
            AggregateArg::Group => out.extend(all_group_averages(&atts)),
            AggregateArg::None => {}
        }
    }
    // report groups and cells on the calendar scale
    let shift = data.first_period() - 1;
    for agg in &mut out {
        if agg.kind == AggregationKind::Group {
            agg.index = agg.index.map(|g| g + shift);
        }
    }
    Ok(out)
}

pub fn run(args: &EstimateArgs) -> CliResult<()> {
    if args.bootstrap.is_some() && args.seed.is_none() {
        return Err(Failure::Validation("--bootstrap needs an explicit --seed".into()));
    }
    let raw = read_input(&args.data)?;
    let loaded = load_panel(raw.as_slice(), &LoadOptions { drop_first_period: args.drop_g1 })?;
    if loaded.dropped_first_period > 0 {
        log::info!("dropped {} unit(s) treated in the first period", loaded.dropped_first_period);
    }
    let data = loaded.data;
    let first = data.first_period();
    let opts = options(args, first)?;
    let est = estimate(&data, &opts)?;
    let cal = |x: i64| x + first - 1;

    let labels: Vec<CellIndex> = est.cells.iter().map(|c| c.cell).collect();
    let influence: Vec<Vec<f64>> = est.cells.iter().map(|c| c.influence.clone()).collect();
    let analytic: Vec<f64> = est.cells.iter().map(|c| c.se).collect();
    let inf = inference(&labels, &influence, &est.estimates(), &analytic, args)?;

    let cells: Vec<CellRow> = est
        .cells
        .iter()
        .zip(&inf.se)
        .map(|(c, &se)| {
            let test = z_test(c.att, se, args.alpha);
            CellRow {
                g: cal(c.cell.g as i64),
                t: cal(c.cell.t as i64),
                event_time: c.cell.event_time(),
                att: c.att,
                se,
                se_analytic: c.se,
                ci_low: test.ci_low,
                ci_high: test.ci_high,
                z: test.z,
                p: test.p,
                band_low: inf.band_crit.map(|k| c.att - k * se),
                band_high: inf.band_crit.map(|k| c.att + k * se),
                theta_star: c.fit.theta_star,
                f_star: c.fit.f_star.iter().copied().collect(),
                rank: c.fit.gamma.rank_diagnostic(args.rank_tol),
            }
        })
        .collect();
    let failures: Vec<FailureRow> =
        est.failures.iter().map(|f| FailureRow { g: cal(f.g as i64), t: cal(f.t as i64), error: f.error.clone() }).collect();

    let aggs = aggregates(&est, args, &data)?;
    let agg_labels: Vec<CellIndex> = (0..aggs.len()).map(|k| CellIndex::new(0, k, 0)).collect();
    let agg_influence: Vec<Vec<f64>> = aggs.iter().map(|a| a.influence.clone()).collect();
    let agg_estimates: Vec<f64> = aggs.iter().map(|a| a.estimate).collect();
    let agg_analytic: Vec<f64> = aggs.iter().map(|a| a.se).collect();
    let agg_inf = inference(&agg_labels, &agg_influence, &agg_estimates, &agg_analytic, args)?;
    let agg_rows: Vec<AggregateRow> = aggs
        .into_iter()
        .zip(&agg_inf.se)
        .map(|(mut result, &se)| {
            let test = z_test(result.estimate, se, args.alpha);
            let se_analytic = result.se;
            result.se = se;
            for w in &mut result.weights {
                w.g = cal(w.g as i64) as u32;
                w.t = cal(w.t as i64) as usize;
            }
            for x in &mut result.excluded {
                x.g = cal(x.g as i64) as u32;
                x.t = cal(x.t as i64) as usize;
            }
            AggregateRow { result, se_analytic, ci_low: test.ci_low, ci_high: test.ci_high, z: test.z, p: test.p }
        })
        .collect();

    let se_method = se_label(inf.source, est.omega_estimated);
    let mut out = OutputDir::new(&args.out);
    let cell_csv: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.g.to_string(),
                c.t.to_string(),
                c.event_time.to_string(),
                csv_num(c.att),
                csv_num(c.se),
                csv_num(c.ci_low),
                csv_num(c.ci_high),
                csv_num(c.z),
                csv_num(c.p),
                c.band_low.map(csv_num).unwrap_or_default(),
                c.band_high.map(csv_num).unwrap_or_default(),
                se_method.clone(),
            ]
        })
        .collect();
    out.write_csv(
        "cells.csv",
        &["g", "t", "event_time", "att", "se", "ci_low", "ci_high", "z", "p", "band_low", "band_high", "se_method"],
        &cell_csv,
    )?;
    let agg_csv: Vec<Vec<String>> = agg_rows
        .iter()
        .map(|a| {
            let kind = serde_json::to_value(a.result.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            vec![
                kind,
                a.result.index.map(|i| i.to_string()).unwrap_or_default(),
                csv_num(a.result.estimate),
                csv_num(a.result.se),
                csv_num(a.ci_low),
                csv_num(a.ci_high),
                csv_num(a.z),
                csv_num(a.p),
                a.result.weights.len().to_string(),
                a.result.excluded.len().to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "aggregates.csv",
        &["kind", "index", "estimate", "se", "ci_low", "ci_high", "z", "p", "n_cells", "n_excluded"],
        &agg_csv,
    )?;
    out.write_json(
        "cells.json",
        &CellReport {
            manifest: MANIFEST,
            factors: est.factors,
            omega: &opts.omega,
            omega_estimated: est.omega_estimated,
            weight: args.weight,
            se_method: se_method.clone(),
            alpha: args.alpha,
            n_units: data.n_units(),
            n_periods: data.n_periods(),
            first_period: first,
            cells,
            failures,
        },
    )?;
    out.write_json("aggregates.json", &AggregateReport { manifest: MANIFEST, se_method: se_method.clone(), aggregates: agg_rows })?;
    out.finish(RunManifest::new("estimate", args, Some(sha256_hex(&raw)), args.seed.into_iter().collect()))?;

    println!("{} cell(s) estimated, {} failed; reports in {}", est.cells.len(), est.failures.len(), args.out.display());
    for f in &est.failures {
        log::warn!("cell ({},{}) failed: {}", cal(f.g as i64), cal(f.t as i64), f.error);
    }
    match est.failures.iter().find(|f| !f.validation).or(est.failures.first()) {
        None => Ok(()),
        Some(f) if f.validation => Err(Failure::Validation(format!("cell ({},{}): {}", cal(f.g as i64), cal(f.t as i64), f.error))),
        Some(f) => Err(Failure::Estimation(format!("cell ({},{}): {}", cal(f.g as i64), cal(f.t as i64), f.error))),
    }
}
