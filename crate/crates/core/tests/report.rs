use proptest::prelude::*;

use t2s_core::analysis::{emit_report, parse_metrics_csv, MetricRow};

fn read(dir: &std::path::Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn svg_files(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".svg"))
        .collect();
    v.sort();
    v
}

#[test]
fn empty_metric_set_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&[], dir.path()).unwrap();
    assert_eq!(read(dir.path(), "metrics.csv"), "run,step,metric,class,value\n");
    assert!(svg_files(dir.path()).is_empty());
}

#[test]
fn svg_is_well_formed_with_one_bar_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = vec![MetricRow::new("a<b", 10, "miou", None, 0.5)];
    for c in 0..4 {
        rows.push(MetricRow::new("a<b", 5, "ccd", Some(c), 9.0));
        rows.push(MetricRow::new("a<b", 10, "ccd", Some(c), 0.1 * c as f64));
        rows.push(MetricRow::new("a<b", 10, "pdd", Some(c), -0.5 + 0.3 * c as f64));
    }
    emit_report(&rows, dir.path()).unwrap();
    assert_eq!(svg_files(dir.path()), ["ccd.svg", "pdd.svg"]);
    for name in ["ccd.svg", "pdd.svg"] {
        let text = read(dir.path(), name);
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let bars: Vec<_> = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect") && n.attribute("class") == Some("bar"))
            .collect();
        assert_eq!(bars.len(), 4, "{name}");
        for b in bars {
            let h: f64 = b.attribute("height").unwrap().parse().unwrap();
            assert!(h >= 0.0);
        }
    }
    // The stale step-5 value must not be drawn.
    assert!(!read(dir.path(), "ccd.svg").contains(": 9<"));
}

#[test]
fn two_runs_get_separate_bars() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<MetricRow> = ["so", "full"]
        .iter()
        .flat_map(|r| (0..3).map(move |c| MetricRow::new(r, 0, "similarity", Some(c), 0.9)))
        .collect();
    emit_report(&rows, dir.path()).unwrap();
    let text = read(dir.path(), "similarity.svg");
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("bar")).count(), 6);
}

#[test]
fn fields_with_separators_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = emit_report(&[MetricRow::new("a,b", 0, "miou", None, 1.0)], dir.path()).unwrap_err();
    assert!(matches!(err, t2s_core::Error::Format { .. }), "{err}");
}

#[test]
fn malformed_csv_is_a_format_error() {
    let p = std::path::Path::new("metrics.csv");
    assert!(parse_metrics_csv("run,step\n", p).is_err());
    assert!(parse_metrics_csv("run,step,metric,class,value\nx,1,m,,notanumber\n", p).is_err());
    assert!(parse_metrics_csv("run,step,metric,class,value\nx,1,m\n", p).is_err());
}

fn row() -> impl Strategy<Value = MetricRow> {
    (
        "[a-z][a-z0-9_]{0,6}",
        0u64..100_000,
        prop::sample::select(vec!["miou", "iou", "ccd", "pdd", "similarity"]),
        prop::option::of(0usize..19),
        prop::num::f64::NORMAL | prop::num::f64::ZERO,
    )
        .prop_map(|(run, step, metric, class, value)| MetricRow::new(&run, step, metric, class, value))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn csv_round_trip(rows in prop::collection::vec(row(), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&rows, dir.path()).unwrap();
        let parsed = parse_metrics_csv(&read(dir.path(), "metrics.csv"), dir.path()).unwrap();
        prop_assert_eq!(parsed, rows);
    }
}
