use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricValues;
use crate::error::{Error, Result};
use crate::store::Split;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Frozen pretrained expert; the baseline row.
    Expert,
    Student,
    Teacher,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Expert, ModelKind::Student, ModelKind::Teacher];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Expert => "expert",
            ModelKind::Student => "student",
            ModelKind::Teacher => "teacher",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Expert => "Initial Experts",
            ModelKind::Student => "Students",
            ModelKind::Teacher => "Teachers",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Report(format!("unknown model kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: ModelKind,
    pub dataset: usize,
    pub split: Split,
    #[serde(flatten)]
    pub values: MetricValues,
}

/// Metrics of every model after one epoch (or before training when `epoch`
/// is `None`), plus mean training losses of that epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub epoch: Option<usize>,
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    /// Mean supervised part of the loss (α·CE + β·hinge) per sample.
    pub loss_cls: f64,
    /// Mean γ-weighted distillation part per sample.
    pub loss_kd: f64,
    /// Unlabeled samples seen while distillation was off.
    pub skipped_unlabeled: usize,
}

impl MetricsSnapshot {
    pub fn get(&self, model: ModelKind, dataset: usize, split: Split) -> Option<&MetricValues> {
        find(&self.rows, model, dataset, split)
    }
}

fn find(rows: &[MetricRow], model: ModelKind, dataset: usize, split: Split) -> Option<&MetricValues> {
    rows.iter()
        .find(|r| r.model == model && r.dataset == dataset && r.split == split)
        .map(|r| &r.values)
}

/// Final metrics of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub datasets: Vec<String>,
    pub final_epoch: Option<usize>,
    pub rows: Vec<MetricRow>,
    /// Every model before the first update.
    pub initial: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn get(&self, model: ModelKind, dataset: usize, split: Split) -> Option<&MetricValues> {
        find(&self.rows, model, dataset, split)
    }

    /// A table with one row per model kind and an (acc@1, acc@5, mAP) column
    /// group per dataset, in percent.
    pub fn render_table(&self, split: Split) -> String {
        let mut out = String::new();
        let cell = 22;
        let _ = write!(out, "{:<18}", format!("[{split}]"));
        for name in &self.datasets {
            let _ = write!(out, "| {:<cell$}", name);
        }
        out.push('\n');
        let _ = write!(out, "{:<18}", "");
        for _ in &self.datasets {
            let _ = write!(out, "| {:<cell$}", format!("{:>6} {:>6} {:>6}", "acc@1", "acc@5", "mAP"));
        }
        out.push('\n');
        for kind in ModelKind::ALL {
            if !self.rows.iter().any(|r| r.model == kind && r.split == split) {
                continue;
            }
            let _ = write!(out, "{:<18}", kind.label());
            for d in 0..self.datasets.len() {
                let text = match self.get(kind, d, split) {
                    Some(v) => format!("{:>6.2} {:>6.2} {:>6.2}", 100.0 * v.acc1, 100.0 * v.acc5, 100.0 * v.map),
                    None => format!("{:>6} {:>6} {:>6}", "-", "-", "-"),
                };
                let _ = write!(out, "| {:<cell$}", text);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Report(e.to_string()))
    }
}

/// One value of one curve, as stored in the curves CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub model: String,
    pub dataset: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

fn check_row(r: &MetricRow, epoch: Option<usize>) -> Result<()> {
    let v = &r.values;
    let at = || {
        format!(
            "{} {} {} at {}",
            r.model.name(),
            r.dataset,
            r.split,
            epoch.map_or("initial".to_string(), |e| format!("epoch {e}"))
        )
    };
    for x in [v.acc1, v.acc5, v.map] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Report(format!("metric {x} outside [0, 1] for {}", at())));
        }
    }
    if v.acc1 > v.acc5 {
        return Err(Error::Report(format!("acc@1 {} exceeds acc@5 {} for {}", v.acc1, v.acc5, at())));
    }
    Ok(())
}

/// Builds the final table and the full curves from a run's snapshots.
///
/// `epochs` holds one snapshot per trained epoch. With none, the table only
/// shows the experts.
pub fn assemble_report(
    initial: &MetricsSnapshot,
    epochs: &[MetricsSnapshot],
    datasets: &[String],
) -> Result<(MetricsReport, Vec<CurvePoint>)> {
    for s in std::iter::once(initial).chain(epochs) {
        if s.config_hash != initial.config_hash {
            return Err(Error::Report(format!(
                "snapshots from different configurations ({} vs {})",
                initial.config_hash, s.config_hash
            )));
        }
        for r in &s.rows {
            check_row(r, s.epoch)?;
            if r.dataset >= datasets.len() {
                return Err(Error::Report(format!("row for unknown dataset {}", r.dataset)));
            }
        }
    }

    let (final_epoch, rows) = match epochs.last() {
        Some(last) => (last.epoch, last.rows.clone()),
        None => (
            None,
            initial.rows.iter().filter(|r| r.model == ModelKind::Expert).cloned().collect(),
        ),
    };

    let mut curves = Vec::new();
    for s in epochs {
        let epoch = s.epoch.ok_or_else(|| Error::Report("training snapshot without an epoch".into()))?;
        for r in &s.rows {
            for (metric, value) in [("acc1", r.values.acc1), ("acc5", r.values.acc5), ("map", r.values.map)] {
                curves.push(CurvePoint {
                    epoch,
                    model: r.model.name().into(),
                    dataset: datasets[r.dataset].clone(),
                    split: r.split.name().into(),
                    metric: metric.into(),
                    value,
                });
            }
        }
        for (metric, value) in [("loss_cls", s.loss_cls), ("loss_kd", s.loss_kd)] {
            curves.push(CurvePoint {
                epoch,
                model: "train".into(),
                dataset: "all".into(),
                split: "train".into(),
                metric: metric.into(),
                value,
            });
        }
    }

    Ok((
        MetricsReport {
            config_hash: initial.config_hash.clone(),
            datasets: datasets.to_vec(),
            final_epoch,
            rows,
            initial: initial.rows.clone(),
        },
        curves,
    ))
}

/// Serializes curves with the header `epoch,model,dataset,split,metric,value`.
pub fn write_curves_csv(points: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| Error::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    if points.is_empty() {
        return Ok("epoch,model,dataset,split,metric,value\n".into());
    }
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses a curves CSV. Errors name the 1-based data row.
pub fn parse_curves_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Report(format!("header: {e}")))?.clone();
    let want = ["epoch", "model", "dataset", "split", "metric", "value"];
    if header.iter().ne(want) {
        return Err(Error::Report(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::Report(format!("row {}: {e}", i + 1))))
        .collect()
}

/// Line chart of one metric against epoch for one dataset and split:
/// student and teacher curves plus the expert as a dashed baseline.
pub fn render_svg(points: &[CurvePoint], dataset: &str, split: &str, metric: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 300.0;
    const PAD: f64 = 40.0;
    let series = |model: &str| -> Vec<(usize, f64)> {
        let mut s: Vec<_> = points
            .iter()
            .filter(|p| p.model == model && p.dataset == dataset && p.split == split && p.metric == metric)
            .map(|p| (p.epoch, p.value))
            .collect();
        s.sort_by_key(|&(e, _)| e);
        s
    };
    let all = [("student", "#1f77b4"), ("teacher", "#d62728"), ("expert", "#555555")]
        .map(|(m, colour)| (m, colour, series(m)));
    let max_epoch = all.iter().flat_map(|(_, _, s)| s.iter().map(|p| p.0)).max().unwrap_or(0).max(1) as f64;
    let values = all.iter().flat_map(|(_, _, s)| s.iter().map(|p| p.1));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() {
        ((lo - 0.02).max(0.0), (hi + 0.02).min(1.0).max(lo + 0.01))
    } else {
        (0.0, 1.0)
    };
    let x = |e: usize| PAD + (W - 2.0 * PAD) * e as f64 / max_epoch;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{dataset} ({split} {metric})</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for (v, anchor) in [(lo, H - PAD), (hi, PAD)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{anchor}" text-anchor="end" font-family="sans-serif" font-size="10">{:.1}</text>"#,
            PAD - 4.0,
            100.0 * v
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">epoch {}</text>"#,
        W - PAD,
        H - PAD + 14.0,
        max_epoch
    );
    for (k, (model, colour, s)) in all.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let dash = if *model == "expert" { r#" stroke-dasharray="6 4""# } else { "" };
        let pts: Vec<String> = s.iter().map(|&(e, v)| format!("{:.2},{:.2}", x(e), y(v))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
        if s.len() == 1 {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, x(s[0].0), y(s[0].1));
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{colour}">{model}</text>"#,
            W - PAD - 60.0,
            PAD + 14.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
