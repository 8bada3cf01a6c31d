use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use staggered_ife::identification::{
    build_omega, comparison_pre_differences, comparison_set, factor_count_diagnostic, gamma_hat, infeasibility,
    CellIndex, FactorCountReport, OmegaKind, OmegaSpec, RankReport,
};
use staggered_ife::panel::{load_panel, LoadOptions, PanelDataset};

use crate::estimate::OmegaArg;
use crate::report::{csv_num, read_input, sha256_hex, OutputDir, RunManifest, MANIFEST};
use crate::{CliResult, Failure};

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Working number of factors R for the rank check.
    #[arg(long, default_value_t = 1)]
    pub factors: usize,
    #[arg(long, value_enum, default_value = "last-block")]
    pub omega: OmegaArg,
    #[arg(long, value_delimiter = ',')]
    pub omega_lags: Vec<usize>,
    #[arg(long, default_value_t = staggered_ife::identification::DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    #[arg(long)]
    pub drop_g1: bool,
}

#[derive(Serialize)]
struct CellDiagnostic {
    g: i64,
    t: i64,
    comparison_groups: Vec<String>,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rank: Option<RankReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    /// Pairwise trend gaps among the comparison groups, on the 1..=T period index; absent with fewer than two.
    #[serde(skip_serializing_if = "Option::is_none")]
    trend_gaps: Option<FactorCountReport>,
}

#[derive(Serialize)]
struct Report {
    manifest: &'static str,
    factors: usize,
    rank_tol: f64,
    first_period: i64,
    cells: Vec<CellDiagnostic>,
}

fn omega_kind(args: &DiagnoseArgs) -> CliResult<OmegaKind> {
    Ok(match args.omega {
        OmegaArg::LastBlock => OmegaKind::LastBlock,
        OmegaArg::Pca => OmegaKind::PrincipalComponents,
        OmegaArg::Lags if args.omega_lags.len() == args.factors => OmegaKind::Lags(args.omega_lags.clone()),
        OmegaArg::Lags => return Err(Failure::Validation(format!("--omega lags needs {} lag(s)", args.factors))),
    })
}

fn diagnose_cell(data: &PanelDataset, cell: CellIndex, kind: &OmegaKind, rank_tol: f64) -> CellDiagnostic {
    let groups = data.groups_present();
    let shift = data.first_period() - 1;
    let comp = comparison_set(cell.g, cell.t, &groups);
    let mut diag = CellDiagnostic {
        g: cell.g as i64 + shift,
        t: cell.t as i64 + shift,
        comparison_groups: comp
            .members
            .iter()
            .map(|m| m.period().map_or_else(|| "inf".to_string(), |p| (p as i64 + shift).to_string()))
            .collect(),
        feasible: false,
        reason: infeasibility(cell, &groups, data.n_periods()),
        rank: None,
        error: None,
        trend_gaps: factor_count_diagnostic(data, cell.g, cell.t).ok(),
    };
    if diag.reason.is_some() {
        return diag;
    }
    diag.feasible = true;
    let spec = OmegaSpec { kind: kind.clone(), r: cell.r };
    let rank = build_omega(&spec, cell, &comparison_pre_differences(data, cell), rank_tol)
        .and_then(|omega| gamma_hat(cell, &omega, data))
        .map(|gamma| gamma.rank_diagnostic(rank_tol));
    match rank {
        Ok(r) => diag.rank = Some(r),
        Err(e) => diag.error = Some(e.to_string()),
    }
    diag
}

pub fn run(args: &DiagnoseArgs) -> CliResult<()> {
    let kind = omega_kind(args)?;
    let raw = read_input(&args.data)?;
    let data = load_panel(raw.as_slice(), &LoadOptions { drop_first_period: args.drop_g1 })?.data;
    let mut cells = Vec::new();
    for g in data.groups_present().iter().filter_map(|g| g.period()) {
        for t in g as usize..=data.n_periods() {
            cells.push(diagnose_cell(&data, CellIndex::new(g, t, args.factors), &kind, args.rank_tol));
        }
    }
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.g.to_string(),
                c.t.to_string(),
                c.feasible.to_string(),
                c.rank.as_ref().map(|r| r.rank_ok.to_string()).unwrap_or_default(),
                c.rank.as_ref().map(|r| csv_num(r.condition_number)).unwrap_or_default(),
                c.trend_gaps.as_ref().map(|r| r.suggests_more_factors.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let deficient = cells.iter().filter(|c| c.rank.as_ref().is_some_and(|r| !r.rank_ok)).count();
    let feasible = cells.iter().filter(|c| c.feasible).count();

    let mut out = OutputDir::new(&args.out);
    out.write_csv("diagnose.csv", &["g", "t", "feasible", "rank_ok", "condition_number", "suggests_more_factors"], &rows)?;
    out.write_json(
        "diagnose.json",
        &Report { manifest: MANIFEST, factors: args.factors, rank_tol: args.rank_tol, first_period: data.first_period(), cells },
    )?;
    out.finish(RunManifest::new("diagnose", args, Some(sha256_hex(&raw)), Vec::new()))?;
    println!("{feasible} feasible cell(s) with R = {}, {deficient} rank deficient", args.factors);
    Ok(())
}
