//! Trajectory ingestion, maneuver labeling, sample construction and resampling.

mod ingest;
mod maneuver;
mod samples;
mod split;

pub use ingest::{ingest, write_csv, IngestConfig, RawTrack, TrackFrame, Units};
pub use maneuver::{label_maneuver, LabelParams, Lateral, Longitudinal, ManeuverClass, MANEUVER_COUNT};
pub use samples::{
    build_samples, BuildReport, GridCell, GridSpec, Neighbor, Point, SampleConfig, TrajectorySample, GRID_COLS,
    GRID_ROWS,
};
pub use split::{bootstrap, split, BootstrapSet, Split, SplitMode};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },
    #[error("data error: {0}")]
    Invalid(String),
    #[error("vehicle {vehicle_id} does not cover frames {from}..={to} around {frame}")]
    Coverage {
        vehicle_id: i64,
        frame: i64,
        from: i64,
        to: i64,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("config error: {0}")]
    Config(String),
}
