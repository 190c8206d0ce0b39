//! Report files: one self-describing `report.json` per run, rendered into
//! CSV tables, learning curves and standalone SVG bar charts.
//!
//! Rendering reads only the JSON value, so `robofi report` can regenerate
//! every derived file from `report.json` alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use robofi_core::train::{MeanStd, Metrics};
use robofi_core::Velocity;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{io_err, read_json_file, write_json_file, ContainerError};
use crate::fit::EpochRecord;
use crate::protocols::{class_names, weighted_class_mean, Experiment, FreqSweepReport, LocationReport, LovoReport, ProtocolReport};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Outcome of a single `train` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub experiment: Experiment,
    pub train_size: usize,
    pub val_size: usize,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    pub val_metrics: Metrics,
    /// SHA-256 of the saved (best-epoch) checkpoint.
    pub weight_hash: String,
    pub history: Vec<EpochRecord>,
}

/// Outcome of evaluating a checkpoint on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub weight_hash: String,
    pub test_size: usize,
    pub loss: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Report {
    Train(TrainReport),
    Eval(EvalReport),
    Cv(ProtocolReport),
    Lovo(LovoReport),
    FreqSweep(FreqSweepReport),
    Location(LocationReport),
}

/// Writes `report.json` and every derived file; returns the paths written.
pub fn write_report(dir: &Path, report: &Report) -> Result<Vec<PathBuf>, ReportError> {
    let path = dir.join(REPORT_FILE);
    write_json_file(&path, report)?;
    let mut out = vec![path];
    out.extend(render(dir, report)?);
    Ok(out)
}

pub fn read_report(dir: &Path) -> Result<Report, ReportError> {
    Ok(read_json_file(&dir.join(REPORT_FILE))?)
}

/// Rows of strings written as one CSV file.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: ToString>(header: &[S]) -> Self {
        Self { header: header.iter().map(ToString::to_string).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<(), ReportError> {
        let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| ReportError::Container(io_err(path)(e)))
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn confusion_table(m: &Metrics) -> Table {
    let names = class_names();
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(names.iter().map(ToString::to_string));
    let mut t = Table::new(&header);
    for (name, row) in names.iter().zip(&m.confusion) {
        let mut r = vec![name.to_string()];
        r.extend(row.iter().map(ToString::to_string));
        t.push(r);
    }
    t
}

fn curves_table(history: &[EpochRecord]) -> Table {
    let mut t = Table::new(&["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]);
    for h in history {
        t.push(vec![h.epoch.to_string(), num(h.train_loss), num(h.train_accuracy), num(h.val_loss), num(h.val_accuracy)]);
    }
    t
}

fn per_class_table(m: &Metrics) -> Table {
    let mut t = Table::new(&["class", "precision", "recall", "f1", "support"]);
    let counts = m.class_counts();
    for (i, name) in class_names().iter().enumerate() {
        t.push(vec![
            name.to_string(),
            num(m.per_class_precision[i]),
            num(m.per_class_recall[i]),
            num(m.per_class_f1[i]),
            counts[i].to_string(),
        ]);
    }
    t
}

struct Output<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Output<'_> {
    fn table(&mut self, name: &str, t: &Table) -> Result<(), ReportError> {
        let path = self.dir.join(name);
        t.write(&path)?;
        self.written.push(path);
        Ok(())
    }

    fn svg(&mut self, name: &str, chart: &BarChart) -> Result<(), ReportError> {
        let path = self.dir.join(name);
        std::fs::write(&path, chart.render()).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }
}

fn velocity_names(vs: &[Velocity]) -> Vec<String> {
    vs.iter().map(|v| v.name().to_string()).collect()
}

/// Writes the CSV and SVG files derived from `report`.
pub fn render(dir: &Path, report: &Report) -> Result<Vec<PathBuf>, ReportError> {
    let mut out = Output { dir, written: Vec::new() };
    match report {
        Report::Train(r) => {
            out.table("curves.csv", &curves_table(&r.history))?;
            out.table("val_confusion.csv", &confusion_table(&r.val_metrics))?;
        }
        Report::Eval(r) => {
            out.table("confusion.csv", &confusion_table(&r.metrics))?;
            out.table("per_class.csv", &per_class_table(&r.metrics))?;
        }
        Report::Cv(r) => render_cv(&mut out, r)?,
        Report::Lovo(r) => render_lovo(&mut out, r)?,
        Report::FreqSweep(r) => render_sweep(&mut out, r)?,
        Report::Location(r) => render_location(&mut out, r)?,
    }
    Ok(out.written)
}

fn model_name(exp: &Experiment) -> String {
    match exp.kind {
        robofi_core::models::ModelKind::Bivtc => "BiVTC".to_string(),
        robofi_core::models::ModelKind::Vit { sniffer } => format!("ViT (S{})", sniffer.index()),
    }
}

fn pm(m: &MeanStd) -> [String; 2] {
    [num(m.mean), num(m.std)]
}

fn render_cv(out: &mut Output<'_>, r: &ProtocolReport) -> Result<(), ReportError> {
    let mut folds = Table::new(&[
        "fold", "seed", "train", "val", "test", "best_epoch", "stopped_epoch", "accuracy", "precision", "recall", "f1",
    ]);
    for f in &r.folds {
        let m = &f.metrics;
        folds.push(vec![
            f.fold.to_string(),
            f.seed.to_string(),
            f.train_size.to_string(),
            f.val_size.to_string(),
            f.test_size.to_string(),
            f.best_epoch.to_string(),
            f.stopped_epoch.to_string(),
            num(m.accuracy),
            num(m.macro_precision),
            num(m.macro_recall),
            num(m.macro_f1),
        ]);
    }
    out.table("folds.csv", &folds)?;

    let s = &r.summary;
    let mut summary = Table::new(&[
        "model", "accuracy_mean", "accuracy_std", "precision_mean", "precision_std", "recall_mean", "recall_std", "f1_mean",
        "f1_std",
    ]);
    let mut row = vec![model_name(&r.experiment)];
    for m in [&s.accuracy, &s.macro_precision, &s.macro_recall, &s.macro_f1] {
        row.extend(pm(m));
    }
    summary.push(row);
    out.table("summary.csv", &summary)?;

    for f in &r.folds {
        out.table(&format!("confusion_fold{}.csv", f.fold), &confusion_table(&f.metrics))?;
        out.table(&format!("curves_fold{}.csv", f.fold), &curves_table(&f.history))?;
    }
    let chart = BarChart {
        title: format!("{} cross-validation", model_name(&r.experiment)),
        categories: vec!["Accuracy".into(), "Precision".into(), "Recall".into(), "F1".into()],
        series: vec![Series {
            name: model_name(&r.experiment),
            values: [&s.accuracy, &s.macro_precision, &s.macro_recall, &s.macro_f1].map(|m| m.mean * 100.0).to_vec(),
            errors: Some([&s.accuracy, &s.macro_precision, &s.macro_recall, &s.macro_f1].map(|m| m.std * 100.0).to_vec()),
        }],
    };
    out.svg("summary.svg", &chart)
}

fn render_lovo(out: &mut Output<'_>, r: &LovoReport) -> Result<(), ReportError> {
    let names = class_names();
    let mut header = vec!["train".to_string(), "test".to_string()];
    header.extend(names.iter().map(ToString::to_string));
    header.extend(["overall".to_string(), "class_weighted_mean".to_string()]);
    let mut table = Table::new(&header);
    for arm in &r.arms {
        let train: Vec<&str> = Velocity::ALL.iter().filter(|v| **v != arm.held_out).map(|v| v.name()).collect();
        let mut row = vec![train.join("+"), arm.held_out.name().to_string()];
        row.extend(arm.per_class_accuracy.iter().map(|a| num(a * 100.0)));
        row.push(num(arm.overall_accuracy * 100.0));
        row.push(num(weighted_class_mean(&arm.per_class_accuracy, &arm.class_counts) * 100.0));
        table.push(row);
        let name = arm.held_out.name();
        out.table(&format!("confusion_{name}.csv"), &confusion_table(&arm.fold.metrics))?;
        out.table(&format!("curves_{name}.csv"), &curves_table(&arm.fold.history))?;
    }
    out.table("table.csv", &table)?;
    let chart = BarChart {
        title: format!("{} leave-one-velocity-out, per-class accuracy", model_name(&r.experiment)),
        categories: names.iter().map(ToString::to_string).chain(["Overall".to_string()]).collect(),
        series: r
            .arms
            .iter()
            .map(|a| Series {
                name: format!("test {}", a.held_out.name()),
                values: a.per_class_accuracy.iter().chain([&a.overall_accuracy]).map(|x| x * 100.0).collect(),
                errors: None,
            })
            .collect(),
    };
    out.svg("lovo.svg", &chart)
}

fn render_sweep(out: &mut Output<'_>, r: &FreqSweepReport) -> Result<(), ReportError> {
    let vnames = velocity_names(&r.velocities);
    let mut header = vec!["rate_hz".to_string()];
    for v in &vnames {
        header.push(format!("{v}_mean"));
        header.push(format!("{v}_std"));
    }
    let mut grid = Table::new(&header);
    for (rate, row) in r.rates.iter().zip(&r.grid) {
        let mut cells = vec![rate.to_string()];
        for m in row {
            cells.extend(pm(m));
        }
        grid.push(cells);
    }
    out.table("grid.csv", &grid)?;
    let chart = BarChart {
        title: "Test accuracy by sampling rate and velocity".into(),
        categories: r.rates.iter().map(|r| format!("{r} Hz")).collect(),
        series: vnames
            .iter()
            .enumerate()
            .map(|(j, v)| Series {
                name: v.clone(),
                values: r.grid.iter().map(|row| row[j].mean * 100.0).collect(),
                errors: Some(r.grid.iter().map(|row| row[j].std * 100.0).collect()),
            })
            .collect(),
    };
    out.svg("grid.svg", &chart)
}

fn render_location(out: &mut Output<'_>, r: &LocationReport) -> Result<(), ReportError> {
    let lnames: Vec<String> = r.locations.iter().map(|l| l.name().to_string()).collect();
    let mut header = vec!["train_on".to_string()];
    header.extend(lnames.iter().cloned());
    let mut matrix = Table::new(&header);
    for arm in &r.arms {
        let mut row = vec![arm.train_on.clone()];
        row.extend(arm.test_accuracy.iter().map(|a| num(a * 100.0)));
        matrix.push(row);
        out.table(&format!("curves_{}.csv", arm.train_on), &curves_table(&arm.history))?;
    }
    out.table("matrix.csv", &matrix)?;
    let chart = BarChart {
        title: "Test accuracy by training and test location".into(),
        categories: lnames.iter().map(|l| format!("test {l}")).collect(),
        series: r
            .arms
            .iter()
            .map(|a| Series {
                name: format!("train {}", a.train_on),
                values: a.test_accuracy.iter().map(|x| x * 100.0).collect(),
                errors: None,
            })
            .collect(),
    };
    out.svg("location.svg", &chart)
}

/// One bar per category.
pub struct Series {
    pub name: String,
    /// Percentages.
    pub values: Vec<f64>,
    /// Half-widths of optional error bars.
    pub errors: Option<Vec<f64>>,
}

/// Grouped bar chart on a fixed 0..100 axis.
pub struct BarChart {
    pub title: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl BarChart {
    pub fn render(&self) -> String {
        let (left, top, plot_h, group_w) = (60.0, 40.0, 260.0, 40.0 + 22.0 * self.series.len() as f64);
        let width = left + group_w * self.categories.len().max(1) as f64 + 160.0;
        let height = top + plot_h + 60.0;
        let y = |pct: f64| top + plot_h * (1.0 - pct.clamp(0.0, 100.0) / 100.0);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(&self.title));
        for tick in (0..=100).step_by(20) {
            let ty = y(f64::from(tick));
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
                width - 150.0,
                left - 6.0,
                ty + 4.0
            );
        }
        for (c, cat) in self.categories.iter().enumerate() {
            let gx = left + group_w * c as f64 + 10.0;
            for (k, series) in self.series.iter().enumerate() {
                let Some(v) = series.values.get(c) else { continue };
                let x = gx + 22.0 * k as f64;
                let color = PALETTE[k % PALETTE.len()];
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{:.1}" width="18" height="{:.1}" fill="{color}"><title>{}: {v:.2}</title></rect>"#,
                    y(*v),
                    y(0.0) - y(*v),
                    escape(&series.name)
                );
                if let Some(e) = series.errors.as_ref().and_then(|e| e.get(c)) {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
                        x + 9.0,
                        y(v + e),
                        x + 9.0,
                        y(v - e)
                    );
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + group_w / 2.0 - 10.0,
                top + plot_h + 18.0,
                escape(cat)
            );
        }
        let lx = width - 140.0;
        for (k, series) in self.series.iter().enumerate() {
            let ly = top + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                PALETTE[k % PALETTE.len()],
                lx + 14.0,
                ly + 9.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed_and_escaped() {
        let chart = BarChart {
            title: "a < b".into(),
            categories: vec!["x".into(), "y".into()],
            series: vec![Series { name: "s".into(), values: vec![50.0, 150.0], errors: Some(vec![5.0, 0.0]) }],
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<rect").count(), 3);
    }
}
