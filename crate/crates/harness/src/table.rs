//! Result tables and plots assembled from persisted reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cdbench_core::metrics::MetricReport;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::config::MetricKind;
use crate::error::{HarnessError, Result};
use crate::pipeline::report_hash;

pub const TABLE_TEXT: &str = "table.txt";
pub const TABLE_JSON: &str = "table.json";
pub const RHO_PLOT: &str = "score_vs_rho.svg";
pub const EPOCH_PLOT: &str = "score_vs_epoch.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub metric: MetricKind,
    pub rho: Option<usize>,
}

impl Column {
    pub fn label(&self) -> String {
        match self.rho {
            Some(r) => format!("{}@{r}", self.metric.label()),
            None => self.metric.label().to_string(),
        }
    }

    fn value(&self, r: &MetricReport) -> Option<f64> {
        match (self.metric, self.rho) {
            (MetricKind::Irs, _) => Some(r.irs),
            (MetricKind::DciD, _) => r.dci_d,
            (MetricKind::Uc, Some(rho)) => r.uc.get(&rho).copied(),
            (MetricKind::Cg, Some(rho)) => r.cg.get(&rho).copied(),
            _ => None,
        }
    }
}

/// Mean over seeds, with the sample standard deviation when there are several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub spread: Option<f64>,
    pub n: usize,
}

impl Cell {
    fn from_values(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let spread = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Self { mean, spread, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: String,
    pub cells: Vec<Option<Cell>>,
    /// Hashes of the reports aggregated in this row, in input order.
    pub reports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub dataset_hash: String,
    pub columns: Vec<Column>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableLayout {
    pub metrics: Vec<MetricKind>,
    pub rhos: Vec<usize>,
    pub precision: usize,
}

impl TableLayout {
    /// Every metric present in the reports, with the union of their ρ values.
    pub fn from_reports(reports: &[MetricReport]) -> Self {
        let mut rhos: Vec<usize> = reports.iter().flat_map(|r| r.uc.keys().chain(r.cg.keys()).copied()).collect();
        rhos.sort_unstable();
        rhos.dedup();
        let mut metrics = vec![MetricKind::Irs];
        if reports.iter().any(|r| r.dci_d.is_some()) {
            metrics.push(MetricKind::DciD);
        }
        if reports.iter().any(|r| !r.uc.is_empty()) {
            metrics.push(MetricKind::Uc);
        }
        if reports.iter().any(|r| !r.cg.is_empty()) {
            metrics.push(MetricKind::Cg);
        }
        Self {
            metrics,
            rhos,
            precision: 2,
        }
    }

    pub fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::new();
        for &m in &self.metrics {
            if m.per_rho() {
                cols.extend(self.rhos.iter().map(|&r| Column { metric: m, rho: Some(r) }));
            } else {
                cols.push(Column { metric: m, rho: None });
            }
        }
        cols
    }
}

/// Groups reports by variant (first-appearance order) and averages over seeds.
pub fn build_table(reports: &[MetricReport], layout: &TableLayout) -> Result<ResultTable> {
    let first = reports
        .first()
        .ok_or_else(|| cdbench_core::Error::Provenance("no reports to tabulate".into()))?;
    let dataset_hash = first.provenance.dataset_hash.clone();
    if let Some(r) = reports.iter().find(|r| r.provenance.dataset_hash != dataset_hash) {
        return Err(cdbench_core::Error::Provenance(format!(
            "report for {} was computed on dataset {}, not {}",
            r.variant, r.provenance.dataset_hash, dataset_hash
        ))
        .into());
    }
    let columns = layout.columns();
    let mut variants: Vec<&str> = Vec::new();
    for r in reports {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let rows = variants
        .iter()
        .map(|&v| {
            let group: Vec<&MetricReport> = reports.iter().filter(|r| r.variant == v).collect();
            let cells = columns
                .iter()
                .map(|c| {
                    let vals: Vec<f64> = group.iter().filter_map(|r| c.value(r)).collect();
                    Cell::from_values(&vals)
                })
                .collect();
            TableRow {
                variant: v.to_string(),
                cells,
                reports: group.iter().map(|r| report_hash(r)).collect(),
            }
        })
        .collect();
    Ok(ResultTable {
        dataset_hash,
        columns,
        rows,
    })
}

impl ResultTable {
    pub fn render_text(&self, precision: usize) -> String {
        let fmt = |c: &Option<Cell>| match c {
            None => "n/a".to_string(),
            Some(Cell { mean, spread: None, .. }) => format!("{mean:.precision$}"),
            Some(Cell {
                mean,
                spread: Some(s),
                ..
            }) => format!("{mean:.precision$} ± {s:.precision$}"),
        };
        let header: Vec<String> = std::iter::once("model".to_string())
            .chain(self.columns.iter().map(Column::label))
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| std::iter::once(r.variant.clone()).chain(r.cells.iter().map(fmt)).collect())
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|row| row[i].chars().count())
                    .chain([header[i].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    let _ = write!(s, "{c}{}", " ".repeat(pad));
                } else {
                    let _ = write!(s, "  {}{c}", " ".repeat(pad));
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        let seeds = self.rows.iter().map(|r| r.reports.len()).max().unwrap_or(0);
        let _ = writeln!(out, "dataset {} | up to {seeds} seed(s) per row", &self.dataset_hash[..self.dataset_hash.len().min(12)]);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables always serialize")
    }
}

/// Builds the table and, given a directory, writes the text and JSON
/// renderings plus a score-vs-ρ plot when more than one ρ is present.
pub fn emit_table(reports: &[MetricReport], layout: &TableLayout, out_dir: Option<&Path>) -> Result<ResultTable> {
    let table = build_table(reports, layout)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Cache::write_atomic(&dir.join(TABLE_TEXT), table.render_text(layout.precision).as_bytes())?;
        Cache::write_atomic(&dir.join(TABLE_JSON), table.to_json().as_bytes())?;
        if layout.rhos.len() > 1 {
            plot_score_vs_rho(&table, &dir.join(RHO_PLOT))?;
        }
    }
    Ok(table)
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn line_plot(path: &Path, title: &str, x_desc: &str, series: &[Series]) -> Result<()> {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return Err(HarnessError::Plot("nothing to plot".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(lo..hi, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("score")
        .draw()
        .map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Mean UC and CG per variant against ρ.
pub fn plot_score_vs_rho(table: &ResultTable, path: &Path) -> Result<()> {
    let mut series = Vec::new();
    for row in &table.rows {
        for metric in [MetricKind::Uc, MetricKind::Cg] {
            let points: Vec<(f64, f64)> = table
                .columns
                .iter()
                .zip(&row.cells)
                .filter(|(c, _)| c.metric == metric)
                .filter_map(|(c, cell)| Some((c.rho? as f64, cell.as_ref()?.mean)))
                .collect();
            if !points.is_empty() {
                series.push(Series {
                    name: format!("{} {}", row.variant, metric.label()),
                    points,
                });
            }
        }
    }
    line_plot(path, "score vs ρ", "ρ", &series)
}

/// IRS, UC and CG at one ρ against training epoch, averaged per epoch.
pub fn plot_score_vs_epoch(points: &[(usize, MetricReport)], rho: usize, path: &Path) -> Result<PathBuf> {
    let mut epochs: Vec<usize> = points.iter().map(|p| p.0).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let mean_at = |epoch: usize, f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = points.iter().filter(|p| p.0 == epoch).filter_map(|p| f(&p.1)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let getters: [(&str, Box<dyn Fn(&MetricReport) -> Option<f64>>); 3] = [
        ("IRS", Box::new(|r| Some(r.irs))),
        ("UC", Box::new(move |r| r.uc.get(&rho).copied())),
        ("CG", Box::new(move |r| r.cg.get(&rho).copied())),
    ];
    let series: Vec<Series> = getters
        .iter()
        .map(|(name, f)| Series {
            name: name.to_string(),
            points: epochs
                .iter()
                .filter_map(|&e| mean_at(e, f.as_ref()).map(|v| (e as f64, v)))
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    line_plot(path, &format!("score vs epoch (ρ = {rho})"), "epoch", &series)?;
    Ok(path.to_path_buf())
}
