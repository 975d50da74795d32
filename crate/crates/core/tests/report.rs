use annustitch::config::EvalConfig;
use annustitch::eval::report::{boxplot_svg, box_stats, ReportError};
use annustitch::eval::{build_report, emit_report, MatchRow, MethodVariant};
use annustitch::pipeline::{Stage, StageError};
use proptest::prelude::*;

fn rows(videos: usize, pairs: usize, count: impl Fn(usize, MethodVariant, usize) -> usize) -> Vec<MatchRow> {
    let mut out = Vec::new();
    for v in 0..videos {
        for variant in MethodVariant::ALL {
            for p in 0..pairs {
                out.push(MatchRow {
                    video_id: format!("vid{v}"),
                    variant,
                    pair_index: p,
                    valid_match_count: count(v, variant, p),
                    error: None,
                });
            }
        }
    }
    out
}

fn bump(variant: MethodVariant) -> usize {
    match variant {
        MethodVariant::Original => 0,
        MethodVariant::Ahe => 5,
        MethodVariant::AheRotated => 11,
    }
}

#[test]
fn one_csv_row_per_measurement() {
    let report = build_report(&rows(2, 4, |v, m, p| v + p + bump(m)), &EvalConfig::default());
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "video_id,variant,pair_index,valid_match_count");
    assert_eq!(lines.len(), 25);
    assert!(lines.contains(&"vid1,ahe_rotated,3,15"));
    for f in ["summary.csv", "errors.csv", "boxplot.svg"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("per-video mean valid_match_count"));
    assert!(summary.contains("zero differences discarded"));
}

#[test]
fn aggregates_are_per_video_means() {
    let report = build_report(&rows(3, 4, |v, m, p| 10 * v + p + bump(m)), &EvalConfig::default());
    assert_eq!(report.means(MethodVariant::Original), vec![1.5, 11.5, 21.5]);
    assert_eq!(report.means(MethodVariant::AheRotated), vec![12.5, 22.5, 32.5]);
    assert_eq!(report.tests.len(), 2);
    for t in &report.tests {
        assert_eq!(t.reference, MethodVariant::AheRotated);
        assert_eq!(t.videos, 3);
        // Three identical-sign differences: exact p = 2 / 8.
        assert_eq!(t.p_value, Some(0.25));
        assert!(!t.significant);
    }
}

#[test]
fn empty_report_is_refused() {
    let report = build_report(&[], &EvalConfig::default());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_report(&report, dir.path()), Err(ReportError::Empty)));
}

#[test]
fn identical_variants_give_no_test() {
    let report = build_report(&rows(4, 2, |v, _, _| v), &EvalConfig::default());
    for t in &report.tests {
        assert_eq!(t.p_value, None);
        assert!(!t.significant);
        assert!(t.note.contains("every paired difference is zero"), "{}", t.note);
    }
}

#[test]
fn stage_errors_are_listed() {
    let mut r = rows(1, 2, |_, _, _| 3);
    r[1].valid_match_count = 0;
    r[1].error = Some(StageError::new(Stage::Ransac, "vid0/original/pair_001", "no consensus, \"quoted\""));
    let report = build_report(&r, &EvalConfig::default());
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(&records[0][3], "ransac");
    assert_eq!(&records[0][5], "no consensus, \"quoted\"");
}

#[test]
fn report_is_deterministic_under_row_order() {
    let r = rows(3, 3, |v, m, p| v * p + bump(m));
    let mut shuffled = r.clone();
    shuffled.reverse();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&build_report(&r, &EvalConfig::default()), a.path()).unwrap();
    emit_report(&build_report(&shuffled, &EvalConfig::default()), b.path()).unwrap();
    for f in ["report.csv", "summary.csv", "errors.csv", "boxplot.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn svg_marks_exactly_the_significant_tests() {
    // Eight videos with consistent sign: exact p = 2 / 256.
    let report = build_report(&rows(8, 2, |v, m, p| v + p + bump(m)), &EvalConfig::default());
    let svg = boxplot_svg(&report);
    assert!(svg.starts_with("<?xml") && svg.contains(r#"version="1.1""#));
    let marks = svg.matches(r#"class="sig""#).count();
    assert_eq!(marks, report.tests.iter().filter(|t| t.significant).count());
    assert_eq!(marks, 2);

    let few = build_report(&rows(3, 2, |v, m, p| v + p + bump(m)), &EvalConfig::default());
    assert_eq!(boxplot_svg(&few).matches(r#"class="sig""#).count(), 0);
}

proptest! {
    #[test]
    fn significance_flag_matches_p(counts in prop::collection::vec(0usize..40, 18)) {
        let r = rows(6, 1, |v, m, _| counts[v * 3 + m as usize]);
        let report = build_report(&r, &EvalConfig::default());
        let svg = boxplot_svg(&report);
        let mut significant = 0;
        for t in &report.tests {
            if let Some(p) = t.p_value {
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert_eq!(t.significant, p < 0.05);
            }
            significant += usize::from(t.significant);
        }
        prop_assert_eq!(svg.matches(r#"class="sig""#).count(), significant);
    }

    #[test]
    fn box_stats_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let b = box_stats(&values).unwrap();
        prop_assert!(b.whisker_low <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.whisker_high);
    }
}
