use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg::{self, Series};
use super::*;
use crate::corpus::CoarsePos;

/// Every statistic for one model's audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub model: ModelKind,
    pub seed: u64,
    pub perturbations: usize,
    pub preserved: usize,
    pub discard_rate: f64,
    pub change_histogram: ChangeHistogram,
    pub change_percentages: [f64; 6],
    pub direct: DirectCounts,
    pub direct_fraction: Option<f64>,
    pub bucket_width: usize,
    pub distance_quartiles: Vec<BucketQuartiles>,
    pub location_uniformity: UniformityTest,
    pub stability: BTreeMap<usize, Vec<usize>>,
    pub highly_unstable_fraction: Option<f64>,
    pub pos: PosComposition,
    pub prediction_shift: PredictionShift,
}

/// Builds the report from every change record (prediction-changing ones
/// included) and the original traces with their coarse tags.
pub fn build_report(
    model: ModelKind,
    seed: u64,
    records: &[ChangeRecord],
    originals: &[(&RationaleTrace, &[CoarsePos])],
    bucket_width: usize,
) -> StabilityReport {
    let kept: Vec<ChangeRecord> = records.iter().filter(|r| r.preserved()).cloned().collect();
    let histogram = change_count_histogram(&kept);
    let direct = direct_counts(&kept);
    let stability = sentence_stability(&kept);
    let original_preds: Vec<u8> = originals.iter().map(|(t, _)| t.pred).collect();
    let perturbed_preds: Vec<u8> = records.iter().map(|r| r.perturbed_pred).collect();
    StabilityReport {
        model,
        seed,
        perturbations: records.len(),
        preserved: kept.len(),
        discard_rate: if records.is_empty() {
            0.0
        } else {
            1.0 - kept.len() as f64 / records.len() as f64
        },
        change_percentages: histogram.percentages(),
        change_histogram: histogram,
        direct_fraction: direct.fraction(),
        direct,
        bucket_width,
        distance_quartiles: indirect_distance_quartiles(&kept, bucket_width),
        location_uniformity: location_uniformity(&location_scatter(&kept)),
        highly_unstable_fraction: highly_unstable_fraction(&stability),
        stability,
        pos: pos_composition(&kept, originals),
        prediction_shift: prediction_shift(&original_preds, &perturbed_preds),
    }
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), f4)
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, CSV tables, SVG figures and `summary.md` into `dir`.
/// `records` supplies the location points.
pub fn write_report(report: &StabilityReport, records: &[ChangeRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report)?;
    write_text(&dir.join("report.json"), &(json + "\n"))?;

    let h = &report.change_histogram;
    write_csv(
        &dir.join("change_counts.csv"),
        &["changes", "records", "percent"],
        (0..6)
            .map(|b| vec![ChangeHistogram::LABELS[b].to_string(), h.counts[b].to_string(), f4(report.change_percentages[b])])
            .collect(),
    )?;
    write_csv(
        &dir.join("direct_changes.csv"),
        &["direct", "indirect", "direct_fraction"],
        vec![vec![
            report.direct.direct.to_string(),
            report.direct.indirect.to_string(),
            opt(report.direct_fraction),
        ]],
    )?;
    write_csv(
        &dir.join("distance_quartiles.csv"),
        &["min_length", "max_length", "changes", "q1", "median", "q3"],
        report
            .distance_quartiles
            .iter()
            .map(|b| {
                vec![
                    b.min_length.to_string(),
                    b.max_length.to_string(),
                    b.count.to_string(),
                    f4(b.quartiles.q1),
                    f4(b.quartiles.median),
                    f4(b.quartiles.q3),
                ]
            })
            .collect(),
    )?;
    let kept: Vec<ChangeRecord> = records.iter().filter(|r| r.preserved()).cloned().collect();
    let points = location_scatter(&kept);
    write_csv(
        &dir.join("locations.csv"),
        &["sentence_length", "change_index"],
        points.iter().map(|(l, i)| vec![l.to_string(), i.to_string()]).collect(),
    )?;
    write_csv(
        &dir.join("stability.csv"),
        &["perturbations", "changing", "sentences"],
        report
            .stability
            .iter()
            .flat_map(|(n, counts)| {
                counts
                    .iter()
                    .enumerate()
                    .map(move |(s, c)| vec![n.to_string(), s.to_string(), c.to_string()])
            })
            .collect(),
    )?;
    let mut pos_header = vec!["row"];
    pos_header.extend(CoarsePos::ALL.iter().map(|p| p.name()));
    write_csv(
        &dir.join("pos_composition.csv"),
        &pos_header,
        report
            .pos
            .rows()
            .iter()
            .map(|(name, pct)| std::iter::once(name.to_string()).chain(pct.iter().map(|&v| f4(v))).collect())
            .collect(),
    )?;
    let ps = &report.prediction_shift;
    write_csv(
        &dir.join("prediction_shift.csv"),
        &["label", "original_percent", "perturbed_percent", "delta"],
        (0..ps.original.len())
            .map(|l| vec![l.to_string(), f4(ps.original[l]), f4(ps.perturbed[l]), f4(ps.delta[l])])
            .collect(),
    )?;

    let model = report.model.name();
    let quart = |f: fn(&Quartiles) -> f64| -> Vec<(f64, f64)> {
        report
            .distance_quartiles
            .iter()
            .map(|b| ((b.min_length + b.max_length) as f64 / 2.0, f(&b.quartiles)))
            .collect()
    };
    write_text(
        &dir.join("distance_quartiles.svg"),
        &svg::scatter(
            &format!("{model}: distance of indirect changes"),
            "sentence length",
            "distance to perturbation",
            &[
                Series {
                    name: "Q1",
                    color: "#1f77b4",
                    points: quart(|q| q.q1),
                },
                Series {
                    name: "median",
                    color: "#ff7f0e",
                    points: quart(|q| q.median),
                },
                Series {
                    name: "Q3",
                    color: "#2ca02c",
                    points: quart(|q| q.q3),
                },
            ],
        ),
    )?;
    write_text(
        &dir.join("locations.svg"),
        &svg::scatter(
            &format!("{model}: change locations"),
            "sentence length",
            "change index",
            &[Series {
                name: "change",
                color: "#d62728",
                points: points.iter().map(|&(l, i)| (l as f64, i as f64)).collect(),
            }],
        ),
    )?;
    let columns: Vec<(usize, Vec<usize>)> = report.stability.iter().map(|(n, c)| (*n, c.clone())).collect();
    write_text(
        &dir.join("stability.svg"),
        &svg::column_bubbles(
            &format!("{model}: sentence stability"),
            "perturbations per sentence",
            "perturbations changing the rationale",
            &columns,
        ),
    )?;
    write_text(&dir.join("summary.md"), &summary(report))
}

fn summary(r: &StabilityReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Rationale stability: {} (seed {})\n", r.model, r.seed);
    let _ = writeln!(
        s,
        "{} perturbations, {} keep the predicted label (discard rate {}).\n",
        r.perturbations,
        r.preserved,
        f4(r.discard_rate)
    );
    let _ = writeln!(s, "## Number of selection changes\n");
    let _ = writeln!(s, "| changes | {} |", ChangeHistogram::LABELS.join(" | "));
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    let pct: Vec<String> = r.change_percentages.iter().map(|p| format!("{p:.1}%")).collect();
    let _ = writeln!(s, "| {} | {} |\n", r.model, pct.join(" | "));
    let _ = writeln!(
        s,
        "Direct changes: {} of {} ({}).\n",
        r.direct.direct,
        r.direct.total(),
        r.direct_fraction.map_or("n/a".into(), |f| format!("{:.1}%", 100.0 * f))
    );
    let _ = writeln!(s, "## Indirect change distance (length buckets of {})\n", r.bucket_width);
    let _ = writeln!(s, "| lengths | changes | Q1 | median | Q3 |\n|---|---|---|---|---|");
    for b in &r.distance_quartiles {
        let _ = writeln!(
            s,
            "| {}-{} | {} | {:.2} | {:.2} | {:.2} |",
            b.min_length, b.max_length, b.count, b.quartiles.q1, b.quartiles.median, b.quartiles.q3
        );
    }
    let u = &r.location_uniformity;
    let _ = writeln!(
        s,
        "\nLocation uniformity over relative-position deciles: chi-square {:.2} on {} df, p = {}.\n",
        u.statistic,
        u.degrees_of_freedom,
        u.p_value.map_or("n/a".into(), |p| format!("{p:.4}"))
    );
    let _ = writeln!(
        s,
        "Sentences where at least half the perturbations change the rationale: {}.\n",
        r.highly_unstable_fraction.map_or("n/a".into(), |f| format!("{:.1}%", 100.0 * f))
    );
    let _ = writeln!(s, "## Part of speech\n");
    let names: Vec<&str> = CoarsePos::ALL.iter().map(|p| p.name()).collect();
    let _ = writeln!(s, "| | {} |\n|---|---|---|---|---|---|---|---|", names.join(" | "));
    for (row, pct) in r.pos.rows() {
        let cells: Vec<String> = pct.iter().map(|p| format!("{p:.1}%")).collect();
        let _ = writeln!(s, "| {row} | {} |", cells.join(" | "));
    }
    let _ = writeln!(s, "\n## Predicted labels (shift on perturbed sentences)\n");
    let _ = writeln!(s, "| | 0 | 1 | 2 | 3 | 4 |\n|---|---|---|---|---|---|");
    let cells: Vec<String> = (0..r.prediction_shift.original.len())
        .map(|l| format!("{:.1} ({:+.1})", r.prediction_shift.original[l], r.prediction_shift.delta[l]))
        .collect();
    let _ = writeln!(s, "| {} | {} |", r.model, cells.join(" | "));
    s
}
