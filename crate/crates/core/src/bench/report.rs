use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsRow;
use crate::error::Result;

/// Metric column headers with units, in report order.
pub const REPORT_COLUMNS: [&str; 11] = [
    "success [n/total]",
    "time [s]",
    "cum. heading [rad]",
    "path [m]",
    "dist/path [m/m]",
    "v_mean [m/s]",
    "omega std.dev. [rad/s]",
    "max linear acceleration [m/s^2]",
    "max yaw acceleration [rad/s^2]",
    "min obstacle distance [m]",
    "mean obstacle distance [m]",
];

/// Per-agent averages over all of its episodes, failures included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub label: String,
    pub successes: usize,
    pub episodes: usize,
    pub time: f64,
    pub cumulative_heading: f64,
    pub path: f64,
    pub dist_path_ratio: f64,
    pub v_mean: f64,
    pub omega_std: f64,
    pub max_linear_acceleration: f64,
    pub max_yaw_acceleration: f64,
    pub min_obstacle_distance: f64,
    pub mean_obstacle_distance: f64,
}

impl AgentSummary {
    pub fn success(&self) -> String {
        format!("{}/{}", self.successes, self.episodes)
    }

    fn numbers(&self) -> [f64; 10] {
        [
            self.time,
            self.cumulative_heading,
            self.path,
            self.dist_path_ratio,
            self.v_mean,
            self.omega_std,
            self.max_linear_acceleration,
            self.max_yaw_acceleration,
            self.min_obstacle_distance,
            self.mean_obstacle_distance,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Sorted by label.
    pub agents: Vec<AgentSummary>,
}

/// Groups rows by label and averages each metric.
pub fn aggregate_report<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsRow)>) -> BenchmarkReport {
    let mut groups: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for (label, row) in rows {
        groups.entry(label).or_default().push(row);
    }
    let agents = groups
        .into_iter()
        .map(|(label, rows)| {
            let n = rows.len() as f64;
            let avg = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            AgentSummary {
                label: label.to_string(),
                successes: rows.iter().filter(|r| r.success).count(),
                episodes: rows.len(),
                time: avg(|r| r.time),
                cumulative_heading: avg(|r| r.cumulative_heading),
                path: avg(|r| r.path),
                dist_path_ratio: avg(|r| r.dist_path_ratio),
                v_mean: avg(|r| r.v_mean),
                omega_std: avg(|r| r.omega_std),
                max_linear_acceleration: avg(|r| r.max_linear_acceleration),
                max_yaw_acceleration: avg(|r| r.max_yaw_acceleration),
                min_obstacle_distance: avg(|r| r.min_obstacle_distance),
                mean_obstacle_distance: avg(|r| r.mean_obstacle_distance),
            }
        })
        .collect();
    BenchmarkReport { agents }
}

impl BenchmarkReport {
    /// Header `agent` followed by [`REPORT_COLUMNS`]; full-precision numbers.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("agent").chain(REPORT_COLUMNS))?;
        for a in &self.agents {
            let mut rec = vec![a.label.clone(), a.success()];
            rec.extend(a.numbers().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::error::Error::Protocol(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Column-aligned text with two decimals.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("agent")
            .chain(REPORT_COLUMNS)
            .map(str::to_string)
            .collect()];
        for a in &self.agents {
            let mut row = vec![a.label.clone(), a.success()];
            row.extend(a.numbers().iter().map(|v| format!("{v:.2}")));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}
