//! Ablation grids: reference-distribution pairs, head-tail cut on/off and
//! headed-level subsets. Every row trains from the same seed and reports
//! test-split metrics of its best validation checkpoint.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::Family;
use crate::metrics::EvalReport;
use crate::model::Level;
use crate::pipeline::config::RunConfig;
use crate::pipeline::data::Dataset;
use crate::pipeline::evaluate::evaluate;
use crate::pipeline::train::train;
use crate::synth::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Dc,
    Htc,
    Levels,
}

impl std::str::FromStr for Grid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc" => Ok(Grid::Dc),
            "htc" => Ok(Grid::Htc),
            "levels" => Ok(Grid::Levels),
            other => Err(Error::config(format!(
                "unknown grid `{other}`; expected dc, htc or levels"
            ))),
        }
    }
}

/// Default level weight, used when a subset names a level the base
/// configuration does not carry.
fn default_lambda(level: Level) -> f64 {
    match level {
        Level::F1 => 0.0,
        Level::F2 => 0.125,
        Level::F3 => 0.25,
        Level::F4 => 0.5,
        Level::F5 => 1.0,
    }
}

pub const LEVEL_SUBSETS: [&[Level]; 5] = [
    &[Level::F5],
    &[Level::F2, Level::F3, Level::F5],
    &[Level::F2, Level::F4, Level::F5],
    &[Level::F3, Level::F4, Level::F5],
    &[Level::F2, Level::F3, Level::F4, Level::F5],
];

pub const DC_FOREGROUND: [Family; 4] = [
    Family::Uniform,
    Family::Gaussian,
    Family::Laplace,
    Family::Delta,
];
pub const DC_BACKGROUND: [Family; 5] = [
    Family::None,
    Family::Uniform,
    Family::Gaussian,
    Family::Laplace,
    Family::Delta,
];

/// Settings of one grid, each a label and a derived configuration.
pub fn settings(base: &RunConfig, grid: Grid) -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    match grid {
        Grid::Dc => {
            let with = |fg: Family, bg: Family| {
                let mut c = base.clone();
                c.loss.fg_family = fg;
                c.loss.bg_family = bg;
                (format!("fg={} bg={}", fg.name(), bg.name()), c)
            };
            out.push(with(Family::None, Family::None));
            for fg in DC_FOREGROUND {
                for bg in DC_BACKGROUND {
                    out.push(with(fg, bg));
                }
            }
        }
        Grid::Htc => {
            for htc in [false, true] {
                let mut c = base.clone();
                c.model.htc = htc;
                out.push((if htc { "w/ HTC" } else { "w/o HTC" }.to_string(), c));
            }
        }
        Grid::Levels => {
            for subset in LEVEL_SUBSETS {
                let mut c = base.clone();
                c.loss.lambdas = subset
                    .iter()
                    .map(|l| {
                        base.model
                            .levels
                            .iter()
                            .position(|b| b == l)
                            .and_then(|i| base.loss.lambdas.get(i).copied())
                            .unwrap_or_else(|| default_lambda(*l))
                    })
                    .collect();
                c.model.levels = subset.to_vec();
                let label = subset
                    .iter()
                    .map(Level::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                out.push((label, c));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub report: EvalReport,
    pub epochs: usize,
    pub best_val_rmse: Option<f64>,
}

/// Trains `cfg` and evaluates its best parameters on the test split.
pub fn run_setting(cfg: &RunConfig, data: &Dataset) -> Result<(EvalReport, usize, Option<f64>)> {
    let mut cfg = cfg.clone();
    cfg.output_dir = None;
    let outcome = train(&cfg, data, None)?;
    let test = data.subset(Split::Test);
    if test.is_empty() {
        return Err(Error::Data("no samples in the test split".into()));
    }
    let report = evaluate(&outcome.model, &outcome.best_params, &test, cfg.connectivity)?;
    Ok((report, outcome.epochs.len(), outcome.best_val_rmse))
}

/// Runs every setting of `grid`; `progress` sees each row as it finishes.
pub fn run_grid(
    base: &RunConfig,
    grid: Grid,
    data: &Dataset,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (setting, cfg) in settings(base, grid) {
        let (report, epochs, best_val_rmse) = run_setting(&cfg, data)?;
        let row = AblationRow {
            setting,
            report,
            epochs,
            best_val_rmse,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

fn metric_values(r: &EvalReport) -> [Option<f64>; 5] {
    [r.rmse, r.rmse_m, r.rmse_nm, r.rmse_b, r.rmse_bg]
}

/// Metrics among RMSE, RMSE-M, RMSE-NM, RMSE-B and RMSE-BG where `row`
/// is strictly lower than `baseline`.
pub fn improvements(row: &EvalReport, baseline: &EvalReport) -> usize {
    metric_values(row)
        .iter()
        .zip(metric_values(baseline))
        .filter(|(a, b)| matches!((a, b), (Some(a), Some(b)) if a < b))
        .count()
}

/// Plain-text table, one row per setting. The dc grid gains an
/// improvement count against its first (no-constraint) row.
pub fn format_table(grid: Grid, rows: &[AblationRow]) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut header = vec![
        "Setting", "Accuracy", "RMSE", "RMSE-M", "RMSE-NM", "RMSE-B", "RMSE-BG",
    ];
    if grid == Grid::Dc {
        header.push("Improvements");
    }
    let mut lines = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for (i, row) in rows.iter().enumerate() {
        let r = &row.report;
        let mut cells = vec![
            row.setting.clone(),
            f(r.htc_accuracy),
            f(r.rmse),
            f(r.rmse_m),
            f(r.rmse_nm),
            f(r.rmse_b),
            f(r.rmse_bg),
        ];
        if grid == Grid::Dc {
            cells.push(if i == 0 {
                "-".into()
            } else {
                improvements(r, &rows[0].report).to_string()
            });
        }
        lines.push(cells);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    lines
        .iter()
        .map(|l| {
            l.iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
