use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{label_maneuver, LabelParams, ManeuverClass, RawTrack, MANEUVER_COUNT};

/// Longitudinal cells of the social grid.
pub const GRID_ROWS: usize = 13;
/// Lane columns of the social grid: left, own, right.
pub const GRID_COLS: usize = 3;

/// Position in meters; serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Cell length along the driving direction, meters.
    pub cell_length: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cell_length: 4.6 }
    }
}

impl GridSpec {
    pub const fn rows(&self) -> usize {
        GRID_ROWS
    }

    pub const fn cols(&self) -> usize {
        GRID_COLS
    }

    /// Cell of a neighbor at longitudinal offset `dy` and lane offset `dlane`
    /// (negative = left), or `None` if it falls outside the grid.
    pub fn cell_of(&self, dy: f64, dlane: i32) -> Option<GridCell> {
        let half = (GRID_ROWS / 2) as i64;
        let offset = (dy / self.cell_length).round() as i64;
        if offset.abs() > half || dlane.abs() > 1 {
            return None;
        }
        Some(GridCell {
            row: (half + offset) as usize,
            col: (dlane + 1) as usize,
        })
    }

    pub fn center(&self) -> GridCell {
        GridCell {
            row: GRID_ROWS / 2,
            col: GRID_COLS / 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    /// 0 = furthest behind, 12 = furthest ahead.
    pub row: usize,
    /// 0 = left lane, 1 = own lane, 2 = right lane.
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub cell: GridCell,
    pub vehicle_id: i64,
    /// `t_h + 1` positions relative to the target's position at prediction time.
    pub history: Vec<Point>,
}

/// One prediction instance. All positions are relative to the target at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub sample_id: usize,
    pub vehicle_id: i64,
    pub frame: i64,
    pub target_history: Vec<Point>,
    /// At most one neighbor per cell, ordered by cell.
    pub neighbors: Vec<Neighbor>,
    pub future_truth: Vec<Point>,
    pub true_maneuver: ManeuverClass,
}

impl TrajectorySample {
    pub fn neighbor_at(&self, cell: GridCell) -> Option<&Neighbor> {
        self.neighbors.iter().find(|n| n.cell == cell)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub t_h: usize,
    pub t_f: usize,
    pub grid: GridSpec,
    /// Take one prediction time every `stride` frames per vehicle.
    pub stride: usize,
    pub label: LabelParams,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            t_h: 15,
            t_f: 25,
            grid: GridSpec::default(),
            stride: 1,
            label: LabelParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub tracks: usize,
    pub samples: usize,
    /// Vehicles that produced no sample for lack of coverage.
    pub skipped_vehicles: usize,
    /// Sample count per maneuver, keyed by `lateral/longitudinal`.
    pub label_distribution: BTreeMap<String, usize>,
}

/// Builds one sample per (vehicle, prediction time) with full history and future coverage.
pub fn build_samples(tracks: &[RawTrack], cfg: &SampleConfig) -> (Vec<TrajectorySample>, BuildReport) {
    let (t_h, t_f) = (cfg.t_h as i64, cfg.t_f as i64);
    let label = LabelParams {
        t_h: cfg.t_h,
        t_f: cfg.t_f,
        ..cfg.label.clone()
    };
    let stride = cfg.stride.max(1) as i64;

    let mut sorted: Vec<&RawTrack> = tracks.iter().filter(|t| !t.frames.is_empty()).collect();
    sorted.sort_by_key(|t| t.vehicle_id);
    let mut present: HashMap<i64, Vec<usize>> = HashMap::new();
    for (ti, t) in sorted.iter().enumerate() {
        for f in &t.frames {
            present.entry(f.frame).or_default().push(ti);
        }
    }

    let mut samples = Vec::new();
    let mut counts = [0usize; MANEUVER_COUNT];
    let mut skipped = 0;
    for (ti, track) in sorted.iter().enumerate() {
        let (first, last) = (track.frames[0].frame, track.frames[track.frames.len() - 1].frame);
        let before = samples.len();
        let mut t = first + t_h;
        while t + t_f <= last {
            let now = *track.at(t).expect("contiguous track");
            let origin = Point::new(now.x, now.y);
            let rel = |x: f64, y: f64| Point::new(x - origin.x, y - origin.y);
            let maneuver = label_maneuver(track, t, &label).expect("coverage checked");
            let target_history = (t - t_h..=t)
                .map(|f| {
                    let p = track.at(f).expect("covered");
                    rel(p.x, p.y)
                })
                .collect();
            let future_truth = (t + 1..=t + t_f)
                .map(|f| {
                    let p = track.at(f).expect("covered");
                    rel(p.x, p.y)
                })
                .collect();

            // Nearest vehicle per cell; ties go to the lower vehicle id (iteration order).
            let mut cells: BTreeMap<GridCell, (f64, usize)> = BTreeMap::new();
            for &oi in present.get(&t).map(Vec::as_slice).unwrap_or(&[]) {
                if oi == ti {
                    continue;
                }
                let other = sorted[oi];
                if !other.covers(t - t_h, t) {
                    continue;
                }
                let o = other.at(t).expect("present at t");
                let (dx, dy) = (o.x - now.x, o.y - now.y);
                let Some(cell) = cfg.grid.cell_of(dy, o.lane_id - now.lane_id) else {
                    continue;
                };
                let dist = dx * dx + dy * dy;
                match cells.get(&cell) {
                    Some(&(best, _)) if best <= dist => {}
                    _ => {
                        cells.insert(cell, (dist, oi));
                    }
                }
            }
            let neighbors = cells
                .into_iter()
                .map(|(cell, (_, oi))| {
                    let other = sorted[oi];
                    Neighbor {
                        cell,
                        vehicle_id: other.vehicle_id,
                        history: (t - t_h..=t)
                            .map(|f| {
                                let p = other.at(f).expect("covered");
                                rel(p.x, p.y)
                            })
                            .collect(),
                    }
                })
                .collect();

            counts[maneuver.slot()] += 1;
            samples.push(TrajectorySample {
                sample_id: samples.len(),
                vehicle_id: track.vehicle_id,
                frame: t,
                target_history,
                neighbors,
                future_truth,
                true_maneuver: maneuver,
            });
            t += stride;
        }
        if samples.len() == before {
            skipped += 1;
        }
    }

    let report = BuildReport {
        tracks: sorted.len(),
        samples: samples.len(),
        skipped_vehicles: skipped + (tracks.len() - sorted.len()),
        label_distribution: ManeuverClass::ALL
            .iter()
            .map(|m| (m.to_string(), counts[m.slot()]))
            .collect(),
    };
    (samples, report)
}
