//! CSV report assembly: aggregate rows in the benchmark-table layout plus a
//! per-trial sidecar from which the aggregates can be recomputed.

use dmh::policy::EpisodeMetrics;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no rows")]
    Empty,
    #[error("malformed external metrics line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub policy: String,
    pub instance: String,
    pub mean_makespan: f64,
    pub mean_tardiness: f64,
    pub satisfaction_pct: f64,
    pub mean_decision_ms: f64,
    pub trials: usize,
}

pub const REPORT_HEADER: &str =
    "policy,instance,mean_makespan,mean_tardiness,satisfaction_pct,mean_decision_ms,trials";

pub const DETAIL_HEADER: &str = "policy,instance,trial,makespan,tardiness,satisfied,decisions";

/// Aggregate CSV, one row per (policy, instance), makespan/tardiness and
/// satisfaction rendered with one decimal.
pub fn emit_report(rows: &[ReportRow]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.1},{:.1},{:.1},{:.3},{}\n",
            r.policy,
            r.instance,
            r.mean_makespan,
            r.mean_tardiness,
            r.satisfaction_pct,
            r.mean_decision_ms,
            r.trials
        ));
    }
    Ok(out)
}

/// Per-trial sidecar CSV retaining enough detail to recompute every
/// aggregate column except decision timing.
pub fn emit_detail(trials: &[DetailRow]) -> Result<String, ReportError> {
    if trials.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut out = String::from(DETAIL_HEADER);
    out.push('\n');
    for t in trials {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{}\n",
            t.policy, t.instance, t.trial, t.makespan, t.tardiness, t.satisfied, t.decisions
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DetailRow {
    pub policy: String,
    pub instance: String,
    pub trial: usize,
    pub makespan: f64,
    pub tardiness: f64,
    pub satisfied: bool,
    pub decisions: usize,
}

impl DetailRow {
    pub fn from_metrics(policy: &str, instance: &str, trial: usize, m: &EpisodeMetrics) -> Self {
        DetailRow {
            policy: policy.to_string(),
            instance: instance.to_string(),
            trial,
            makespan: m.makespan,
            tardiness: m.tardiness,
            satisfied: m.constraint_satisfied,
            decisions: m.decisions,
        }
    }
}

/// Parses an external per-trial metrics CSV (sidecar format) and aggregates
/// it into report rows, so agents produced elsewhere can join the table.
pub fn ingest_external(text: &str, epsilon: f64) -> Result<Vec<ReportRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DETAIL_HEADER => {}
        _ => {
            return Err(ReportError::Malformed {
                line: 1,
                message: format!("expected header `{DETAIL_HEADER}`"),
            })
        }
    }
    let mut details: Vec<DetailRow> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(ReportError::Malformed {
                line: idx + 1,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| {
            s.trim().parse::<f64>().map_err(|e| ReportError::Malformed {
                line: idx + 1,
                message: format!("{what}: {e}"),
            })
        };
        let makespan = parse_f(fields[3], "makespan")?;
        let tardiness = parse_f(fields[4], "tardiness")?;
        details.push(DetailRow {
            policy: fields[0].trim().to_string(),
            instance: fields[1].trim().to_string(),
            trial: fields[2].trim().parse().unwrap_or(0),
            makespan,
            tardiness,
            satisfied: tardiness <= epsilon,
            decisions: fields[6].trim().parse().unwrap_or(0),
        });
    }
    if details.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(aggregate_details(&details))
}

/// Groups per-trial rows by (policy, instance) and produces aggregate rows
/// sorted by (instance, policy). External rows carry no timing data.
pub fn aggregate_details(details: &[DetailRow]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, String)> = details
        .iter()
        .map(|d| (d.instance.clone(), d.policy.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|(instance, policy)| {
            let group: Vec<&DetailRow> = details
                .iter()
                .filter(|d| &d.instance == instance && &d.policy == policy)
                .collect();
            let n = group.len() as f64;
            ReportRow {
                policy: policy.clone(),
                instance: instance.clone(),
                mean_makespan: group.iter().map(|d| d.makespan).sum::<f64>() / n,
                mean_tardiness: group.iter().map(|d| d.tardiness).sum::<f64>() / n,
                satisfaction_pct: 100.0 * group.iter().filter(|d| d.satisfied).count() as f64 / n,
                mean_decision_ms: 0.0,
                trials: group.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ReportRow {
        ReportRow {
            policy: "fcfs".into(),
            instance: "instance01".into(),
            mean_makespan: 1840.04,
            mean_tardiness: 33.26,
            satisfaction_pct: 96.67,
            mean_decision_ms: 0.0123,
            trials: 30,
        }
    }

    #[test]
    fn one_row_is_two_lines() {
        let csv = emit_report(&[row()]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], REPORT_HEADER);
    }

    #[test]
    fn values_rounded_to_one_decimal() {
        let csv = emit_report(&[row()]).unwrap();
        assert!(csv.contains("1840.0,33.3,96.7"), "{csv}");
    }

    #[test]
    fn empty_rows_error() {
        assert!(matches!(emit_report(&[]), Err(ReportError::Empty)));
        assert!(matches!(emit_detail(&[]), Err(ReportError::Empty)));
    }

    #[test]
    fn external_round_trip_recomputes_aggregates() {
        let details = vec![
            DetailRow {
                policy: "ppo".into(),
                instance: "instance01".into(),
                trial: 0,
                makespan: 100.0,
                tardiness: 40.0,
                satisfied: true,
                decisions: 12,
            },
            DetailRow {
                policy: "ppo".into(),
                instance: "instance01".into(),
                trial: 1,
                makespan: 140.0,
                tardiness: 80.0,
                satisfied: false,
                decisions: 12,
            },
        ];
        let text = emit_detail(&details).unwrap();
        let rows = ingest_external(&text, 50.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_makespan, 120.0);
        assert_eq!(rows[0].mean_tardiness, 60.0);
        assert_eq!(rows[0].satisfaction_pct, 50.0);
        assert_eq!(rows[0].trials, 2);
    }

    #[test]
    fn external_bad_header_rejected() {
        assert!(ingest_external("nope\n1,2,3", 50.0).is_err());
    }

    #[test]
    fn aggregation_sorts_by_instance_then_policy() {
        let d = |policy: &str, instance: &str| DetailRow {
            policy: policy.into(),
            instance: instance.into(),
            trial: 0,
            makespan: 1.0,
            tardiness: 0.0,
            satisfied: true,
            decisions: 1,
        };
        let rows = aggregate_details(&[
            d("std", "instance02"),
            d("fcfs", "instance02"),
            d("std", "instance01"),
        ]);
        let order: Vec<(String, String)> = rows
            .iter()
            .map(|r| (r.instance.clone(), r.policy.clone()))
            .collect();
        assert_eq!(
            order,
            vec![
                ("instance01".into(), "std".into()),
                ("instance02".into(), "fcfs".into()),
                ("instance02".into(), "std".into()),
            ]
        );
    }
}
