//! Plain-text tables mirroring the published result layouts.

use super::{format_pct, top_bug_types, EvaluationReport};
use crate::corpus::CorpusStats;

/// Minimal fixed-width table writer.
pub(crate) struct TextTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new<S: Into<String>>(header: Vec<S>) -> Self {
        TextTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: Vec<S>) {
        let cells: Vec<String> = cells.into_iter().map(Into::into).collect();
        assert_eq!(cells.len(), self.header.len(), "ragged table row");
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut out = String::from("|");
            for (cell, width) in cells.iter().zip(&widths) {
                out.push_str(&format!(" {cell:<width$} |"));
            }
            out.push('\n');
            out
        };
        let rule = {
            let mut out = String::from("+");
            for width in &widths {
                out.push_str(&"-".repeat(width + 2));
                out.push('+');
            }
            out.push('\n');
            out
        };
        let mut out = rule.clone();
        out.push_str(&line(&self.header));
        out.push_str(&rule);
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out.push_str(&rule);
        out
    }
}

/// Human-readable report: accuracy, top bug types, lengths, novelty, timing.
pub fn render_report(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Dataset {} | approach {}\n",
        report.dataset, report.approach
    ));
    out.push_str(&format!("Accuracy: {}\n", report.accuracy_display()));
    out.push_str(&format!("Test split checksum: {}\n\n", report.test_checksum));

    out.push_str("Top-3 bug types by success rate\n");
    let mut types = TextTable::new(vec!["Bug Type", "Matched", "Total", "Ratio"]);
    for (bug_type, cell) in top_bug_types(report, 3) {
        types.row(vec![
            bug_type,
            cell.matched.to_string(),
            cell.total.to_string(),
            format!("{}%", format_pct(cell.matched, cell.total)),
        ]);
    }
    out.push_str(&types.render());
    out.push('\n');

    if !report.length_buckets.is_empty() {
        out.push_str("Success rate by fixed-code token length\n");
        let mut lengths = TextTable::new(vec!["Length", "Matched", "Total", "Ratio"]);
        for bucket in &report.length_buckets {
            lengths.row(vec![
                bucket.label.clone(),
                bucket.stat.matched.to_string(),
                bucket.stat.total.to_string(),
                format!("{}%", format_pct(bucket.stat.matched, bucket.stat.total)),
            ]);
        }
        out.push_str(&lengths.render());
        out.push('\n');

        out.push_str("Longest matched patches\n");
        let mut longest = TextTable::new(vec!["Project", "FixCommitSHA1", "Length"]);
        for patch in &report.longest_matches {
            longest.row(vec![
                patch.project.clone(),
                patch.commit_prefix.clone(),
                patch.length.to_string(),
            ]);
        }
        out.push_str(&longest.render());
        out.push('\n');
    }

    if !report.zero_shot_projects.is_empty() {
        out.push_str("Zero-shot projects (absent from training split)\n");
        let mut zs = TextTable::new(vec!["Project", "Matched", "Total", "Ratio"]);
        for project in &report.zero_shot_projects {
            let cell = report.per_project[project];
            zs.row(vec![
                project.clone(),
                cell.matched.to_string(),
                cell.total.to_string(),
                format!("{}%", format_pct(cell.matched, cell.total)),
            ]);
        }
        out.push_str(&zs.render());
        out.push('\n');
    }

    out.push_str(&format!(
        "Novel fixes (not in training split): {}\n",
        report.novel_fixes.len()
    ));
    for id in &report.novel_fixes {
        out.push_str(&format!("  - {id}\n"));
    }
    out.push_str(&format!(
        "\nInference wall clock: total {:.1} ms, mean {:.2} ms/bug, max {:.2} ms\n",
        report.timing.total_ms, report.timing.mean_ms, report.timing.max_ms
    ));
    out
}

/// Accuracy rows for several approaches over one test split.
pub fn render_comparison(reports: &[&EvaluationReport]) -> String {
    let mut table = TextTable::new(vec!["Approach", "Dataset", "Accuracy"]);
    for report in reports {
        table.row(vec![
            report.approach.clone(),
            report.dataset.clone(),
            report.accuracy_display(),
        ]);
    }
    table.render()
}

/// Pair-count summary for a prepared variant, in the shape of the
/// published dataset table.
pub fn render_stats_table(name: &str, stats: &CorpusStats) -> String {
    let mut table = TextTable::new(vec!["Stage", "Count"]);
    table.row(vec!["raw records".to_string(), stats.raw.to_string()]);
    table.row(vec![
        "load rejects".to_string(),
        stats.load_rejects.to_string(),
    ]);
    table.row(vec![
        "after type filter".to_string(),
        stats.after_type_filter.to_string(),
    ]);
    if let Some(after_dedup) = stats.after_dedup {
        table.row(vec!["after dedup".to_string(), after_dedup.to_string()]);
    }
    for (reason, count) in &stats.drop_reasons {
        table.row(vec![format!("dropped: {reason}"), count.to_string()]);
    }
    if let Some(over) = stats.over_length_510 {
        table.row(vec![
            "over 510 tokens".to_string(),
            format!("{} / {}", over.over, over.total),
        ]);
    }
    format!("Dataset {name}\n{}", table.render())
}

/// Training/inference duration rows, one per dataset, like the published
/// execution-time table.
pub fn render_timing_table(rows: &[(String, f64, f64)]) -> String {
    let mut table = TextTable::new(vec!["Dataset", "Training Time", "Inference Time"]);
    for (dataset, train_secs, infer_secs) in rows {
        table.row(vec![
            dataset.clone(),
            human_duration(*train_secs),
            human_duration(*infer_secs),
        ]);
    }
    table.render()
}

fn human_duration(secs: f64) -> String {
    if secs >= 3600.0 {
        format!("{:.1} h", secs / 3600.0)
    } else if secs >= 60.0 {
        format!("{:.1} min", secs / 60.0)
    } else {
        format!("{secs:.1} s")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::{inst, record};
    use crate::eval::score;

    #[test]
    fn report_renders_all_sections() {
        let train = vec![inst("t:0", "T", "p", "known")];
        let test = vec![inst("a:0", "T", "p", "x"), inst("b:1", "U", "q", "y")];
        let predictions = vec![record("a:0", "x"), record("b:1", "bad")];
        let report = score(&predictions, &test, Some(&train), None, "Unique-Small", "m", "c")
            .unwrap();
        let text = render_report(&report);
        assert!(text.contains("1 / 2 (50.00%)"));
        assert!(text.contains("Top-3 bug types"));
        assert!(text.contains("Novel fixes"));
    }

    #[test]
    fn timing_table_prints_paper_scale_rows() {
        let rows = vec![
            ("Duplicate-Large".to_string(), 9.0 * 3600.0, 20.0 * 60.0),
            ("Unique-Small".to_string(), 5.5 * 3600.0, 1.6 * 60.0),
        ];
        let text = render_timing_table(&rows);
        assert!(text.contains("9.0 h"));
        assert!(text.contains("20.0 min"));
        assert!(text.contains("5.5 h"));
        assert!(text.contains("1.6 min"));
    }
}
