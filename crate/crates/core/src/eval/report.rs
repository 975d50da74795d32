use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::variants::MatchRow;
use super::wilcoxon::{wilcoxon_signed_rank, PValueMethod, WilcoxonError};
use super::MethodVariant;
use crate::config::EvalConfig;

pub const UNIT_OF_ANALYSIS: &str = "per-video mean valid_match_count";
pub const ZERO_HANDLING: &str = "zero differences discarded";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no rows")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub video_id: String,
    pub variant: MethodVariant,
    pub pairs: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub reference: MethodVariant,
    pub other: MethodVariant,
    /// Videos with both variants measured.
    pub videos: usize,
    /// Non-zero differences entering the test.
    pub n: usize,
    pub w: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub method: Option<PValueMethod>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub rows: Vec<MatchRow>,
    pub aggregates: Vec<Aggregate>,
    pub tests: Vec<TestResult>,
    pub alpha: f64,
}

impl MatchReport {
    /// Per-video means of one variant, in video order.
    pub fn means(&self, variant: MethodVariant) -> Vec<f64> {
        self.aggregates
            .iter()
            .filter(|a| a.variant == variant)
            .map(|a| a.mean)
            .collect()
    }
}

pub fn build_report(rows: &[MatchRow], eval: &EvalConfig) -> MatchReport {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| (&a.video_id, a.variant, a.pair_index).cmp(&(&b.video_id, b.variant, b.pair_index)));
    let mut groups: BTreeMap<(String, MethodVariant), Vec<usize>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.video_id.clone(), r.variant))
            .or_default()
            .push(r.valid_match_count);
    }
    let aggregates: Vec<Aggregate> = groups
        .into_iter()
        .map(|((video_id, variant), counts)| Aggregate {
            video_id,
            variant,
            pairs: counts.len(),
            mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        })
        .collect();
    let means_of = |v: MethodVariant| -> BTreeMap<&str, f64> {
        aggregates
            .iter()
            .filter(|a| a.variant == v)
            .map(|a| (a.video_id.as_str(), a.mean))
            .collect()
    };
    let reference = eval.reference;
    let ref_means = means_of(reference);
    let tests = MethodVariant::ALL
        .into_iter()
        .filter(|&v| v != reference)
        .map(|other| {
            let other_means = means_of(other);
            let (x, y): (Vec<f64>, Vec<f64>) = ref_means
                .iter()
                .filter_map(|(id, &m)| other_means.get(id).map(|&o| (m, o)))
                .unzip();
            let base = format!("unit: {UNIT_OF_ANALYSIS}; {ZERO_HANDLING}");
            match wilcoxon_signed_rank(&x, &y) {
                Ok(r) => TestResult {
                    reference,
                    other,
                    videos: x.len(),
                    n: r.n,
                    w: Some(r.w),
                    p_value: Some(r.p),
                    significant: r.p < eval.alpha,
                    method: Some(r.method),
                    note: base,
                },
                Err(e) => TestResult {
                    reference,
                    other,
                    videos: x.len(),
                    n: 0,
                    w: None,
                    p_value: None,
                    significant: false,
                    method: None,
                    note: match e {
                        WilcoxonError::AllZeroDifferences if x.is_empty() => format!("{base}; no paired videos"),
                        e => format!("{base}; not computed: {e}"),
                    },
                },
            }
        })
        .collect();
    MatchReport {
        rows,
        aggregates,
        tests,
        alpha: eval.alpha,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ReportError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `report.csv`, `summary.csv`, `errors.csv` and `boxplot.svg`.
pub fn emit_report(report: &MatchReport, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::Empty);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let report_path = out_dir.join("report.csv");
    let mut w = csv_writer(&report_path)?;
    w.write_record(["video_id", "variant", "pair_index", "valid_match_count"])?;
    for r in &report.rows {
        w.write_record([
            r.video_id.as_str(),
            r.variant.name(),
            &r.pair_index.to_string(),
            &r.valid_match_count.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&report_path))?;

    let summary_path = out_dir.join("summary.csv");
    let mut w = csv_writer(&summary_path)?;
    w.write_record([
        "record", "video_id", "variant", "reference", "n", "mean", "w", "p_value", "significant", "method", "note",
    ])?;
    for a in &report.aggregates {
        w.write_record([
            "aggregate",
            &a.video_id,
            a.variant.name(),
            "",
            &a.pairs.to_string(),
            &a.mean.to_string(),
            "",
            "",
            "",
            "",
            "",
        ])?;
    }
    for t in &report.tests {
        let method = t.method.map(|m| format!("{m:?}").to_lowercase()).unwrap_or_default();
        w.write_record([
            "test",
            "",
            t.other.name(),
            t.reference.name(),
            &t.n.to_string(),
            "",
            &opt(t.w),
            &opt(t.p_value),
            &t.significant.to_string(),
            &method,
            &format!("{}; alpha {}", t.note, report.alpha),
        ])?;
    }
    w.flush().map_err(io_err(&summary_path))?;

    let errors_path = out_dir.join("errors.csv");
    let mut w = csv_writer(&errors_path)?;
    w.write_record(["video_id", "variant", "pair_index", "stage", "item", "message"])?;
    for r in &report.rows {
        if let Some(e) = &r.error {
            w.write_record([
                r.video_id.as_str(),
                r.variant.name(),
                &r.pair_index.to_string(),
                &e.stage.to_string(),
                &e.item,
                &e.message,
            ])?;
        }
    }
    w.flush().map_err(io_err(&errors_path))?;

    let svg_path = out_dir.join("boxplot.svg");
    fs::write(&svg_path, boxplot_svg(report)).map_err(io_err(&svg_path))?;
    Ok(vec![report_path, summary_path, errors_path, svg_path])
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

/// Tukey box: whiskers reach the furthest points within 1.5 IQR of the box.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let fence = 1.5 * (q3 - q1);
    // Interpolated quartiles can lie beyond every in-fence point; whiskers never enter the box.
    let whisker_low = v.iter().copied().find(|&x| x >= q1 - fence).unwrap_or(q1).min(q1);
    let whisker_high = v.iter().rev().copied().find(|&x| x <= q3 + fence).unwrap_or(q3).max(q3);
    Some(BoxStats {
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
    })
}

/// Box-and-whisker plot of per-video means, with an asterisked bracket for
/// each significant comparison.
pub fn boxplot_svg(report: &MatchReport) -> String {
    let (width, height) = (520.0, 380.0);
    let (left, right, top, bottom) = (70.0, 490.0, 70.0, 330.0);
    let series: Vec<(MethodVariant, Vec<f64>)> = MethodVariant::ALL.iter().map(|&v| (v, report.means(v))).collect();
    let max = series
        .iter()
        .flat_map(|(_, m)| m.iter().copied())
        .fold(1.0f64, f64::max);
    let y_max = max * 1.1;
    let y = |v: f64| bottom - (v / y_max) * (bottom - top);
    let slot = (right - left) / series.len() as f64;
    let x_of = |i: usize| left + slot * (i as f64 + 0.5);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">Valid matches per video (mean over keyframe pairs)</text>"#,
        width / 2.0
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{yy:.2}" x2="{left}" y2="{yy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.1}</text>"#,
            left - 4.0,
            left - 7.0,
            yy + 4.0
        );
    }
    for (i, (variant, means)) in series.iter().enumerate() {
        let cx = x_of(i);
        let half = slot * 0.22;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            bottom + 20.0,
            variant.name()
        );
        let Some(b) = box_stats(means) else { continue };
        let _ = writeln!(
            s,
            r#"<g class="box" data-variant="{}"><line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/><line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="lightsteelblue" stroke="black"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/></g>"#,
            variant.name(),
            y(b.whisker_low),
            y(b.q1),
            y(b.q3),
            y(b.whisker_high),
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5),
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        for &m in means.iter().filter(|&&m| m < b.whisker_low || m > b.whisker_high) {
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, y(m));
        }
    }
    let index = |v: MethodVariant| MethodVariant::ALL.iter().position(|&x| x == v).expect("known variant");
    let mut level = 0;
    for t in report.tests.iter().filter(|t| t.significant) {
        let (a, b) = (x_of(index(t.reference)), x_of(index(t.other)));
        let yy = top - 12.0 - 16.0 * level as f64 + 20.0;
        level += 1;
        let _ = writeln!(
            s,
            r#"<path d="M{a:.2},{:.2} V{yy:.2} H{b:.2} V{:.2}" fill="none" stroke="black"/><text class="sig" x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="16">*</text>"#,
            yy + 5.0,
            yy + 5.0,
            (a + b) / 2.0,
            yy - 2.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (1.75, 2.5, 3.25));
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(b.whisker_high, 4.0);
    }
}
