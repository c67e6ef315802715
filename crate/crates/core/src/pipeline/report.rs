use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::dataio::{Frame, PanelDataset};
use crate::error::{Error, Result};
use crate::hierarchy::{aggregate, SeriesMatrix};
use crate::metrics::{report_metrics, rmsse_with, LevelSummary};

pub const REPORT_SCHEMA: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

/// Error metrics of one upper-level node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub level: usize,
    pub node: String,
    pub rmsse: Option<f64>,
    pub mean_error: f64,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub lambda: f64,
    pub alignment_rmse: Option<f64>,
}

/// Everything a run reports; reproducible from config, seed and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub frame: Frame,
    pub seed: u64,
    pub train_days: usize,
    pub horizon_days: Vec<u32>,
    pub lambda_star: f64,
    pub neighborhood: Vec<f64>,
    pub alignment: Vec<ObjectivePoint>,
    /// WRMSSE of the aligned bottom-up forecast over all levels.
    pub wrmsse: f64,
    pub excluded_series: usize,
    /// Per-level scores of the aligned bottom-up forecast.
    pub levels: Vec<LevelSummary>,
    /// Per-node scores of the top model's own forecasts.
    pub top_model: Vec<NodeRow>,
    pub config: PipelineConfig,
}

impl RunReport {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifacts {
                dir: dir.to_path_buf(),
                files: vec![REPORT_FILE.into(), "scores/alignment.csv".into(), "scores/levels.json".into()],
            });
        }
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if r.schema_version != REPORT_SCHEMA {
            return Err(Error::Data(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }
}

/// Scores the top model's forecast for every node on levels up to
/// `min(top_levels, detail_levels)`.
pub(crate) fn top_model_rows(
    config: &PipelineConfig,
    train: &PanelDataset,
    actual: &SeriesMatrix<f64>,
    top: &SeriesMatrix<f64>,
) -> Result<Vec<NodeRow>> {
    let spec = &train.hierarchy;
    let levels = config
        .basisnet
        .top_levels
        .min(config.report.detail_levels)
        .min(spec.num_levels());
    let mut rows = Vec::new();
    let mut offset = 0;
    for l in 1..=levels {
        let hist = aggregate(spec, &train.sales, l)?;
        let act = aggregate(spec, actual, l)?;
        for i in 0..hist.n_series() {
            let f = top.row(offset + i);
            let m = report_metrics(act.row(i), f)?;
            let rmsse = match rmsse_with(hist.row(i), act.row(i), f, config.report.scale_convention) {
                Ok(v) => Some(v),
                Err(Error::UndefinedScale) => None,
                Err(e) => return Err(e),
            };
            rows.push(NodeRow {
                level: l,
                node: hist.series_ids()[i].clone(),
                rmsse,
                mean_error: m.mean_error,
                mae: m.mae,
                rmse: m.rmse,
            });
        }
        offset += hist.n_series();
    }
    Ok(rows)
}

fn cell(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.precision$}"),
        _ => "-".into(),
    }
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Markdown tables for one or more runs; with several runs every metric
/// gets one column per run.
pub fn render(runs: &[(String, RunReport)]) -> String {
    let mut s = String::new();
    let names: Vec<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
    let head = |metric: &str| names.iter().map(|n| format!("{metric} {n}")).collect::<Vec<_>>().join(" | ");

    let _ = writeln!(s, "## Run summary\n");
    let _ = writeln!(s, "| | {} |", names.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(names.len()));
    let mut summary_row = |label: &str, f: &dyn Fn(&RunReport) -> String| {
        let vals: Vec<String> = runs.iter().map(|(_, r)| f(r)).collect();
        let _ = writeln!(s, "| {label} | {} |", vals.join(" | "));
    };
    summary_row("frame", &|r| format!("{:?}", r.frame).to_lowercase());
    summary_row("epochs", &|r| r.config.basisnet.train.epochs.to_string());
    summary_row("lambda*", &|r| format!("{}", r.lambda_star));
    summary_row("neighborhood", &|r| {
        r.neighborhood.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
    });
    summary_row("WRMSSE", &|r| format!("{:.4}", r.wrmsse));

    let base = &runs[0].1;
    let _ = writeln!(s, "\n## Top model by node\n");
    let _ = writeln!(
        s,
        "| Hierarchy | Category | {} | {} | {} | {} |",
        head("RMSSE"),
        head("MEAN ERROR"),
        head("MAE"),
        head("RMSE")
    );
    let _ = writeln!(s, "|---|---|{}", "---|".repeat(4 * names.len()));
    for row in &base.top_model {
        let find = |r: &RunReport| -> Option<NodeRow> {
            r.top_model
                .iter()
                .find(|x| x.level == row.level && x.node == row.node)
                .cloned()
        };
        let matched: Vec<Option<NodeRow>> = runs.iter().map(|(_, r)| find(r)).collect();
        let col = |f: &dyn Fn(&NodeRow) -> Option<f64>, p: usize| {
            matched
                .iter()
                .map(|m| cell(m.as_ref().and_then(f), p))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            row.level,
            row.node,
            col(&|n| n.rmsse, 4),
            col(&|n| Some(n.mean_error), 1),
            col(&|n| Some(n.mae), 1),
            col(&|n| Some(n.rmse), 1)
        );
    }

    let _ = writeln!(s, "\n## Aligned forecast by level\n");
    let _ = writeln!(s, "| Level | Label | Series | {} | {} |", head("WRMSSE"), head("mean RMSSE"));
    let _ = writeln!(s, "|---|---|---|{}", "---|".repeat(2 * names.len()));
    for lvl in &base.levels {
        let matched: Vec<Option<&LevelSummary>> = runs
            .iter()
            .map(|(_, r)| r.levels.iter().find(|x| x.level == lvl.level))
            .collect();
        let w: Vec<String> = matched.iter().map(|m| cell(m.map(|x| x.wrmsse), 4)).collect();
        let m: Vec<String> = matched
            .iter()
            .map(|m| cell(m.and_then(|x| x.mean_rmsse), 4))
            .collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            lvl.level,
            lvl.label,
            lvl.series,
            w.join(" | "),
            m.join(" | ")
        );
    }

    let _ = writeln!(s, "\n## Alignment objective\n");
    let _ = writeln!(s, "| lambda | {} |", head("RMSE"));
    let _ = writeln!(s, "|---|{}", "---|".repeat(names.len()));
    for p in &base.alignment {
        let vals: Vec<String> = runs
            .iter()
            .map(|(_, r)| {
                cell(
                    r.alignment
                        .iter()
                        .find(|q| q.lambda == p.lambda)
                        .and_then(|q| q.alignment_rmse),
                    4,
                )
            })
            .collect();
        let _ = writeln!(s, "| {} | {} |", p.lambda, vals.join(" | "));
    }
    s
}

/// Renders a run directory (and optional comparison runs) and writes the
/// tables next to the first run's report.
pub fn cmd_report(dir: &Path, compare: &[PathBuf]) -> Result<String> {
    let mut runs = vec![(run_name(dir), RunReport::load(dir)?)];
    for c in compare {
        runs.push((run_name(c), RunReport::load(c)?));
    }
    let text = render(&runs);
    let file = if compare.is_empty() { "report.md" } else { "compare.md" };
    std::fs::write(dir.join(file), &text)?;
    Ok(text)
}
