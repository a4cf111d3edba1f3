use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

const FEET_TO_METERS: f64 = 0.3048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Feet,
    Meters,
}

/// Sidecar description of a trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub units: Units,
    /// Frame rate of the `frame` column.
    pub frame_rate_hz: f64,
    /// Frame period tracks are resampled to, seconds.
    #[serde(default = "default_period")]
    pub working_period_s: f64,
}

fn default_period() -> f64 {
    0.2
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            units: Units::Meters,
            frame_rate_hz: 5.0,
            working_period_s: default_period(),
        }
    }
}

impl IngestConfig {
    /// `tracks.csv` → `tracks.meta.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("meta.json")
    }

    /// Reads the sidecar next to `csv_path`; defaults apply when it is absent.
    pub fn for_csv(csv_path: &Path) -> Result<Self, DataError> {
        let path = Self::sidecar_path(csv_path);
        if !path.exists() {
            return Ok(IngestConfig::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::Config(format!("{}: {e}", path.display())))
    }

    pub fn write_sidecar(&self, csv_path: &Path) -> Result<(), DataError> {
        let path = Self::sidecar_path(csv_path);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, text).map_err(|source| DataError::Io { path, source })
    }

    /// Number of source frames per working frame.
    pub fn stride(&self) -> Result<i64, DataError> {
        let ratio = self.frame_rate_hz * self.working_period_s;
        let stride = ratio.round();
        if !(stride >= 1.0) || (ratio - stride).abs() > 1e-6 {
            return Err(DataError::Config(format!(
                "{} Hz cannot be resampled to a {} s period",
                self.frame_rate_hz, self.working_period_s
            )));
        }
        Ok(stride as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: i64,
    pub lane_id: i32,
    /// Lateral position, meters.
    pub x: f64,
    /// Longitudinal position (driving direction), meters.
    pub y: f64,
}

/// One vehicle's trajectory at the working frame period; frames are contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTrack {
    pub vehicle_id: i64,
    pub frames: Vec<TrackFrame>,
}

impl RawTrack {
    pub fn first_frame(&self) -> Option<i64> {
        self.frames.first().map(|f| f.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.frames.last().map(|f| f.frame)
    }

    /// Frame record at `frame`, relying on contiguity.
    pub fn at(&self, frame: i64) -> Option<&TrackFrame> {
        let first = self.first_frame()?;
        let idx = usize::try_from(frame - first).ok()?;
        self.frames.get(idx)
    }

    pub fn covers(&self, from: i64, to: i64) -> bool {
        matches!((self.first_frame(), self.last_frame()), (Some(a), Some(b)) if a <= from && to <= b)
    }

    /// Checks strictly increasing, unit-step frames.
    pub fn validate(&self) -> Result<(), DataError> {
        for w in self.frames.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(DataError::Invalid(format!(
                    "vehicle {}: frame {} follows {}",
                    self.vehicle_id, w[1].frame, w[0].frame
                )));
            }
        }
        Ok(())
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::Parse {
            line: 1,
            detail: format!("missing column `{name}`"),
        })
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T, DataError> {
    let raw = rec.get(idx).ok_or_else(|| DataError::Parse {
        line,
        detail: format!("missing field `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| DataError::Parse {
        line,
        detail: format!("bad `{name}` value {raw:?}"),
    })
}

/// Reads `vehicle_id,frame,lane_id,local_x,local_y` rows into per-vehicle tracks,
/// converted to meters and resampled to the working period.
pub fn ingest(csv_path: &Path, cfg: &IngestConfig) -> Result<Vec<RawTrack>, DataError> {
    let stride = cfg.stride()?;
    let file = File::open(csv_path).map_err(|source| DataError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let cols = [
        column(&headers, "vehicle_id")?,
        column(&headers, "frame")?,
        column(&headers, "lane_id")?,
        column(&headers, "local_x")?,
        column(&headers, "local_y")?,
    ];
    let factor = match cfg.units {
        Units::Feet => FEET_TO_METERS,
        Units::Meters => 1.0,
    };

    let mut by_vehicle: BTreeMap<i64, Vec<TrackFrame>> = BTreeMap::new();
    let mut last_source_frame: BTreeMap<i64, i64> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let vehicle_id: i64 = field(&rec, cols[0], "vehicle_id", line)?;
        let frame: i64 = field(&rec, cols[1], "frame", line)?;
        let lane_id: i32 = field(&rec, cols[2], "lane_id", line)?;
        let x: f64 = field(&rec, cols[3], "local_x", line)?;
        let y: f64 = field(&rec, cols[4], "local_y", line)?;
        if !x.is_finite() || !y.is_finite() {
            return Err(DataError::Parse {
                line,
                detail: "non-finite coordinate".into(),
            });
        }
        if let Some(&prev) = last_source_frame.get(&vehicle_id) {
            if frame == prev {
                return Err(DataError::Invalid(format!(
                    "line {line}: duplicated row for vehicle {vehicle_id} frame {frame}"
                )));
            }
            if frame < prev {
                return Err(DataError::Invalid(format!(
                    "line {line}: vehicle {vehicle_id} frame {frame} after {prev}"
                )));
            }
        }
        last_source_frame.insert(vehicle_id, frame);
        if frame.rem_euclid(stride) != 0 {
            continue;
        }
        by_vehicle.entry(vehicle_id).or_default().push(TrackFrame {
            frame: frame.div_euclid(stride),
            lane_id,
            x: x * factor,
            y: y * factor,
        });
    }

    let tracks: Vec<RawTrack> = by_vehicle
        .into_iter()
        .map(|(vehicle_id, frames)| RawTrack { vehicle_id, frames })
        .collect();
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

/// Writes tracks in the ingest schema (meters, working-frame numbering).
pub fn write_csv(path: &Path, tracks: &[RawTrack]) -> Result<(), DataError> {
    let io = |source: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["vehicle_id", "frame", "lane_id", "local_x", "local_y"])
        .map_err(|e| io(e.into()))?;
    for t in tracks {
        for f in &t.frames {
            w.write_record([
                t.vehicle_id.to_string(),
                f.frame.to_string(),
                f.lane_id.to_string(),
                f.x.to_string(),
                f.y.to_string(),
            ])
            .map_err(|e| io(e.into()))?;
        }
    }
    w.flush().map_err(io)
}
