use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeTrace, TraceRecord};
use crate::env::Outcome;
use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2D};
use crate::robot::VelocityCommand;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifestEntry {
    pub file: String,
    pub couple: usize,
    pub episode: u64,
    pub start: Pose2D,
    pub goal: Point,
    pub outcome: Outcome,
}

/// Index of a trace directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub label: String,
    /// World file the traces were recorded in, if known.
    pub world: Option<PathBuf>,
    pub dt: f64,
    pub episodes: Vec<TraceManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
    v_x: f64,
    v_y: f64,
    omega: f64,
    min_range: f64,
    /// `running` except on the final row.
    outcome: Outcome,
}

/// Writes one CSV per trace plus [`MANIFEST_FILE`] into `dir`.
pub fn write_traces(dir: &Path, label: &str, world: Option<&Path>, traces: &[EpisodeTrace]) -> Result<TraceManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dt = traces.first().map_or(0.0, |t| t.dt);
    let mut manifest = TraceManifest {
        label: label.to_string(),
        world: world.map(Path::to_path_buf),
        dt,
        episodes: Vec::new(),
    };
    for trace in traces {
        if trace.dt != dt {
            return Err(Error::validation("traces", "all traces must share one dt"));
        }
        let file = format!("episode_{:04}.csv", trace.episode);
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        let last = trace.records.len() - 1;
        for (k, r) in trace.records.iter().enumerate() {
            w.serialize(Row {
                t: r.t,
                x: r.pose.x,
                y: r.pose.y,
                theta: r.pose.theta,
                v_x: r.velocity.v_x,
                v_y: r.velocity.v_y,
                omega: r.velocity.omega,
                min_range: r.min_range,
                outcome: if k == last { trace.outcome } else { Outcome::Running },
            })?;
        }
        w.flush().map_err(|e| Error::io(dir.join(&file), e))?;
        manifest.episodes.push(TraceManifestEntry {
            file,
            couple: trace.couple,
            episode: trace.episode,
            start: trace.start,
            goal: trace.goal,
            outcome: trace.outcome,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a directory written by [`write_traces`]. Accelerations are recomputed
/// from consecutive velocities.
pub fn read_traces(dir: &Path) -> Result<(TraceManifest, Vec<EpisodeTrace>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: TraceManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut traces = Vec::new();
    for entry in &manifest.episodes {
        let file = dir.join(&entry.file);
        let mut reader = csv::Reader::from_path(&file)?;
        let rows: Vec<Row> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
        let mut records: Vec<TraceRecord> = Vec::with_capacity(rows.len());
        for row in &rows {
            let velocity = VelocityCommand::new(row.v_x, row.v_y, row.omega);
            let prev = records.last().map_or(VelocityCommand::default(), |r| r.velocity);
            let (lin, yaw) = if records.is_empty() {
                (0.0, 0.0)
            } else {
                (
                    (velocity.v_x - prev.v_x).hypot(velocity.v_y - prev.v_y) / manifest.dt,
                    (velocity.omega - prev.omega) / manifest.dt,
                )
            };
            records.push(TraceRecord {
                t: row.t,
                pose: Pose2D {
                    x: row.x,
                    y: row.y,
                    theta: row.theta,
                },
                velocity,
                linear_acceleration: lin,
                yaw_acceleration: yaw,
                min_range: row.min_range,
            });
        }
        let outcome = rows.last().map_or(entry.outcome, |r| r.outcome);
        if outcome != entry.outcome {
            return Err(Error::Parse {
                context: file.display().to_string(),
                message: format!(
                    "final outcome {} disagrees with manifest {}",
                    outcome.as_str(),
                    entry.outcome.as_str()
                ),
            });
        }
        let trace = EpisodeTrace {
            couple: entry.couple,
            episode: entry.episode,
            start: entry.start,
            goal: entry.goal,
            dt: manifest.dt,
            outcome,
            records,
        };
        trace.validate().map_err(|e| Error::Parse {
            context: file.display().to_string(),
            message: e.to_string(),
        })?;
        traces.push(trace);
    }
    Ok((manifest, traces))
}
