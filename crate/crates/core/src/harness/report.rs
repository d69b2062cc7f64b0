use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MethodSummary, ScenarioReport, Study};
use crate::comparators::Method;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    #[default]
    Markdown,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            _ => Err(Error::Config(format!(
                "unknown format `{s}` (valid: csv, markdown)"
            ))),
        }
    }
}

const CSV_HEADER: [&str; 11] = [
    "study",
    "scenario",
    "label",
    "n",
    "replications",
    "method",
    "rejections",
    "rate",
    "se",
    "mean_weights",
    "wall_clock_secs",
];

fn join_weights(w: &Option<Vec<f64>>) -> String {
    w.as_ref()
        .map(|w| w.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
        .unwrap_or_default()
}

fn render_csv(reports: &[ScenarioReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let weights = join_weights(&r.mean_weights);
        for m in &r.methods {
            w.write_record([
                r.study.key(),
                &r.scenario,
                &r.label,
                &r.n.to_string(),
                &r.replications.to_string(),
                m.method.key(),
                &m.rejections.to_string(),
                &m.rate.to_string(),
                &m.se.to_string(),
                &weights,
                &r.wall_clock_secs.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn table_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn separator(cols: usize) -> String {
    let mut s = String::from("|");
    for i in 0..cols {
        s.push_str(if i == 0 { "---|" } else { "---:|" });
    }
    s.push('\n');
    s
}

fn study_title(study: Study) -> &'static str {
    match study {
        Study::Study1 => "Study 1",
        Study::Study2 => "Study 2",
    }
}

fn render_markdown(reports: &[ScenarioReport]) -> String {
    if reports.iter().all(|r| r.methods.is_empty()) {
        return format!("{}{}", table_row(&["Scenario".into()]), separator(1));
    }
    let mut out = String::new();
    for study in [Study::Study1, Study::Study2] {
        let group: Vec<&ScenarioReport> = reports.iter().filter(|r| r.study == study).collect();
        if group.is_empty() {
            continue;
        }
        let mut methods: Vec<Method> = Vec::new();
        for m in group
            .iter()
            .flat_map(|r| r.methods.iter().map(|m| m.method))
        {
            if !methods.contains(&m) {
                methods.push(m);
            }
        }
        let max_se = group
            .iter()
            .flat_map(|r| r.methods.iter().map(|m| m.se))
            .fold(0.0, f64::max);
        let reps: Vec<String> = group.iter().map(|r| r.replications.to_string()).collect();
        let _ = writeln!(out, "### {}: rejection rates\n", study_title(study));
        let mut header = vec!["Scenario".to_string()];
        header.extend(methods.iter().map(|m| m.label().to_string()));
        out.push_str(&table_row(&header));
        out.push_str(&separator(header.len()));
        for r in &group {
            let mut row = vec![r.label.clone()];
            row.extend(methods.iter().map(|&m| {
                r.rate(m)
                    .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
            }));
            out.push_str(&table_row(&row));
        }
        let _ = writeln!(
            out,
            "\nReplications: {}. Largest Monte Carlo SE: {max_se:.3}.\n",
            reps.join(", ")
        );

        let weighted: Vec<&&ScenarioReport> =
            group.iter().filter(|r| r.mean_weights.is_some()).collect();
        if let Some(k) = weighted
            .first()
            .and_then(|r| r.mean_weights.as_ref().map(Vec::len))
        {
            let _ = writeln!(
                out,
                "### {}: average stabilized CV-TMLE composite weights\n",
                study_title(study)
            );
            let mut header = vec!["Scenario".to_string()];
            header.extend((1..=k).map(|j| format!("ᾱ{j}")));
            out.push_str(&table_row(&header));
            out.push_str(&separator(header.len()));
            for r in weighted {
                let mut row = vec![r.label.clone()];
                row.extend(
                    r.mean_weights
                        .as_ref()
                        .expect("filtered")
                        .iter()
                        .map(|w| format!("{w:.3}")),
                );
                out.push_str(&table_row(&row));
            }
            out.push('\n');
        }
    }
    out
}

/// Deterministic text rendering of a set of reports.
pub fn render_report(reports: &[ScenarioReport], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => render_csv(reports),
        OutputFormat::Markdown => Ok(render_markdown(reports)),
    }
}

/// Writes the rendered reports to `path`.
pub fn emit_report(reports: &[ScenarioReport], format: OutputFormat, path: &Path) -> Result<()> {
    let text = render_report(reports, format)?;
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    study: String,
    scenario: String,
    label: String,
    n: usize,
    replications: usize,
    method: String,
    rejections: usize,
    rate: f64,
    se: f64,
    mean_weights: String,
    wall_clock_secs: f64,
}

/// Parses CSV produced by [`render_report`] back into reports (without
/// per-replication records).
pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ScenarioReport>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut reports: Vec<ScenarioReport> = Vec::new();
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        let study: Study = row.study.parse()?;
        let method = Method::parse(&row.method)
            .ok_or_else(|| Error::InvalidData(format!("unknown method `{}`", row.method)))?;
        let mean_weights = if row.mean_weights.is_empty() {
            None
        } else {
            Some(
                row.mean_weights
                    .split(';')
                    .map(|x| {
                        x.parse::<f64>()
                            .map_err(|e| Error::InvalidData(format!("weight `{x}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let summary = MethodSummary {
            method,
            rejections: row.rejections,
            rate: row.rate,
            se: row.se,
        };
        match reports.last_mut() {
            Some(r) if r.study == study && r.scenario == row.scenario => r.methods.push(summary),
            _ => reports.push(ScenarioReport {
                study,
                scenario: row.scenario,
                label: row.label,
                n: row.n,
                replications: row.replications,
                methods: vec![summary],
                mean_weights,
                wall_clock_secs: row.wall_clock_secs,
                records: None,
            }),
        }
    }
    Ok(reports)
}

/// One row per (replication, method); stabilized weights repeated per row.
pub fn write_records_csv<W: Write>(report: &ScenarioReport, writer: W) -> Result<()> {
    let records = report
        .records
        .as_ref()
        .ok_or_else(|| Error::Config("report has no per-replication records".into()))?;
    let k = records
        .iter()
        .find_map(|r| r.mean_weights.as_ref().map(Vec::len))
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["replication", "method", "statistic", "p_value", "reject"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=k).map(|j| format!("alpha_{j}")));
    w.write_record(&header)?;
    for r in records {
        for o in &r.outcomes {
            let mut row = vec![
                r.replication.to_string(),
                o.method.key().to_string(),
                o.statistic.to_string(),
                o.p_value.to_string(),
                u8::from(o.reject).to_string(),
            ];
            match &r.mean_weights {
                Some(ws) => row.extend(ws.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), k)),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(methods: Vec<MethodSummary>) -> ScenarioReport {
        ScenarioReport {
            study: Study::Study1,
            scenario: "S2".into(),
            label: "S2 (Strong Y1)".into(),
            n: 50,
            replications: 7,
            methods,
            mean_weights: Some(vec![0.1 + 0.2, 1.0 - (0.1 + 0.2)]),
            wall_clock_secs: 1.25,
            records: None,
        }
    }

    fn summary(method: Method, rejections: usize) -> MethodSummary {
        let rate = rejections as f64 / 7.0;
        MethodSummary {
            method,
            rejections,
            rate,
            se: (rate * (1.0 - rate) / 7.0).sqrt(),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = report(vec![
            summary(Method::Holm, 3),
            summary(Method::StabCvTmle, 5),
        ]);
        let text = render_report(std::slice::from_ref(&r), OutputFormat::Csv).unwrap();
        let back = read_report_csv(text.as_bytes()).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn empty_methods_give_header_only() {
        let r = report(vec![]);
        let csv = render_report(std::slice::from_ref(&r), OutputFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1);
        let md = render_report(&[r], OutputFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 2);
    }

    #[test]
    fn markdown_uses_three_decimals() {
        let r = report(vec![summary(Method::Holm, 3)]);
        let md = render_report(&[r], OutputFormat::Markdown).unwrap();
        assert!(md.contains("| S2 (Strong Y1) | 0.429 |"), "{md}");
        assert!(md.contains("| S2 (Strong Y1) | 0.300 | 0.700 |"), "{md}");
    }
}
