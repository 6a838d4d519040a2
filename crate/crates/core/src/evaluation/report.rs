//! Text and JSON renderings of a [`MetricReport`].

use super::{Aspect, KaRegime, MetricReport, NaHandling};

fn regime_line(report: &MetricReport) -> String {
    let ka = match report.regime.ka {
        KaRegime::Tolerant => "tolerant",
        KaRegime::Strict => "strict",
    };
    let na = match report.regime.na {
        NaHandling::NaExcluded => "NA excluded",
        NaHandling::NaAsNo => "NA as no",
    };
    format!("knowledge absorption: {ka}; {na}")
}

/// Aspects as rows, tasks as columns, averages last.
pub fn render_table(report: &MetricReport) -> String {
    let aspects: Vec<Aspect> = Aspect::ALL
        .into_iter()
        .filter(|a| report.per_task.values().any(|m| m.contains_key(a)))
        .collect();
    let mut header = vec!["aspect".to_string()];
    header.extend(report.tasks.iter().cloned());
    header.push("avg".into());

    let mut rows = vec![header];
    for aspect in &aspects {
        let mut row = vec![aspect.to_string()];
        for task in &report.tasks {
            row.push(report.get(task, *aspect).map_or(String::new(), |p| p.to_string()));
        }
        row.push(report.average(*aspect).map_or(String::new(), |p| p.to_string()));
        rows.push(row);
    }

    let columns = rows[0].len();
    let widths: Vec<usize> = (0..columns)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = regime_line(report);
    out.push('\n');
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                let pad = w - cell.chars().count();
                if i == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_json(report: &MetricReport) -> String {
    serde_json::to_string_pretty(report).expect("reports always serialize")
}
