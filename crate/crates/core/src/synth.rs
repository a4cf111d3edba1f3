//! Synthetic multi-lane highway episodes with known maneuvers.
//!
//! Vehicles drive straight at constant speed, optionally brake at constant
//! deceleration to 0.6× their initial speed, and optionally change lanes along
//! a 4 s sigmoid. Lane 1 is the leftmost; `x` grows to the right.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    label_maneuver, DataError, LabelParams, Lateral, Longitudinal, ManeuverClass, RawTrack, TrackFrame, MANEUVER_COUNT,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub lanes: usize,
    /// Meters.
    pub lane_width: f64,
    pub vehicles: usize,
    /// Initial speed range, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Probabilities of the six maneuvers, in index order.
    pub maneuver_mix: [f64; MANEUVER_COUNT],
    /// Standard deviation of additive position noise, meters.
    pub noise_std: f64,
    /// Seconds.
    pub duration_s: f64,
    pub period_s: f64,
    /// Length of road on which vehicles start, meters.
    pub road_length: f64,
    /// Minimum initial spacing between vehicles in one lane, meters.
    pub min_gap: f64,
    /// Braking deceleration, m/s².
    pub deceleration: f64,
    pub seed: u64,
    pub label: LabelParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            lanes: 3,
            lane_width: 3.7,
            vehicles: 60,
            speed_min: 20.0,
            speed_max: 30.0,
            maneuver_mix: [0.4, 0.15, 0.15, 0.05, 0.15, 0.1],
            noise_std: 0.0,
            duration_s: 20.0,
            period_s: 0.2,
            road_length: 400.0,
            min_gap: 15.0,
            deceleration: 3.0,
            seed: 0,
            label: LabelParams::default(),
        }
    }
}

/// Lane-change transition time, seconds.
pub const LANE_CHANGE_S: f64 = 4.0;
/// Speed after braking, as a fraction of the initial speed.
pub const BRAKE_TO: f64 = 0.6;

/// Intended motion of one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehiclePlan {
    pub vehicle_id: i64,
    pub maneuver: ManeuverClass,
    pub start_lane: i32,
    pub y0: f64,
    pub speed: f64,
    /// Start of braking and center of the lane change, seconds.
    pub event_s: f64,
}

/// Ground-truth maneuver of a vehicle at one labelable frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub vehicle_id: i64,
    pub frame: i64,
    pub maneuver: ManeuverClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub tracks: Vec<RawTrack>,
    pub plans: Vec<VehiclePlan>,
    pub labels: Vec<WindowLabel>,
}

impl ScenarioConfig {
    pub fn frames(&self) -> usize {
        (self.duration_s / self.period_s).round() as usize + 1
    }

    pub fn capacity(&self) -> usize {
        self.lanes * (self.road_length / self.min_gap).floor() as usize
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        let total: f64 = self.maneuver_mix.iter().sum();
        if self.maneuver_mix.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("maneuver mix must be non-negative and sum to 1");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if self.lanes == 0 || !(self.lane_width > 0.0) || !(self.period_s > 0.0) || !(self.min_gap > 0.0) {
            return bad("lanes, lane width, period and gap must be positive");
        }
        if !(self.speed_min > 0.0 && self.speed_max >= self.speed_min && self.deceleration > 0.0) {
            return bad("speeds and deceleration must be positive with speed_min ≤ speed_max");
        }
        if self.vehicles > self.capacity() {
            return Err(DataError::Config(format!(
                "{} vehicles exceed road capacity {} ({} lanes × {} m / {} m gap)",
                self.vehicles,
                self.capacity(),
                self.lanes,
                self.road_length,
                self.min_gap
            )));
        }
        let changes: f64 = ManeuverClass::ALL
            .iter()
            .filter(|m| m.lateral != Lateral::Keep)
            .map(|m| self.maneuver_mix[m.slot()])
            .sum();
        if self.lanes == 1 && changes > 0.0 {
            return bad("lane changes need at least two lanes");
        }
        let needed = (self.label.t_h + self.label.t_f) as f64 * self.period_s;
        if self.duration_s < needed + LANE_CHANGE_S {
            return Err(DataError::Config(format!(
                "duration {} s too short for a {needed} s window",
                self.duration_s
            )));
        }
        Ok(())
    }
}

impl VehiclePlan {
    fn brakes(&self) -> bool {
        self.maneuver.longitudinal == Longitudinal::Braking
    }

    /// Noiseless longitudinal position at `t` seconds.
    pub fn y_at(&self, t: f64, decel: f64) -> f64 {
        if !self.brakes() || t <= self.event_s {
            return self.y0 + self.speed * t;
        }
        let dur = (1.0 - BRAKE_TO) * self.speed / decel;
        let tau = t - self.event_s;
        let at_event = self.y0 + self.speed * self.event_s;
        if tau <= dur {
            at_event + self.speed * tau - 0.5 * decel * tau * tau
        } else {
            at_event + self.speed * dur - 0.5 * decel * dur * dur + BRAKE_TO * self.speed * (tau - dur)
        }
    }

    /// Noiseless lateral position at `t` seconds.
    pub fn x_at(&self, t: f64, lane_width: f64) -> f64 {
        let center = (f64::from(self.start_lane) - 0.5) * lane_width;
        let dir = match self.maneuver.lateral {
            Lateral::Keep => return center,
            Lateral::LeftChange => -1.0,
            Lateral::RightChange => 1.0,
        };
        // 1 % to 99 % of the offset within the transition window.
        let k = 2.0 * 99f64.ln() / LANE_CHANGE_S;
        center + dir * lane_width / (1.0 + (-k * (t - self.event_s)).exp())
    }
}

fn lane_of(x: f64, lane_width: f64, lanes: usize) -> i32 {
    ((x / lane_width).floor() as i32 + 1).clamp(1, lanes as i32)
}

/// Draws a scenario: tracks (with noise), plans, and per-frame ground truth
/// derived from the noiseless kinematics.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mix = WeightedIndex::new(cfg.maneuver_mix).map_err(|e| DataError::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| DataError::Config(e.to_string()))?;
    let slots_per_lane = (cfg.road_length / cfg.min_gap).floor() as usize;
    let mut free: Vec<Vec<usize>> = vec![(0..slots_per_lane).collect(); cfg.lanes];
    let n_frames = cfg.frames();
    let mut plans = Vec::with_capacity(cfg.vehicles);

    for v in 0..cfg.vehicles {
        let vehicle_id = v as i64 + 1;
        // Redraw maneuvers that no lane with free slots can host.
        let mut attempts = 0;
        let (maneuver, lane) = loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(DataError::Config(
                    "maneuver mix cannot be placed on the free lanes".into(),
                ));
            }
            let m = ManeuverClass::ALL[mix.sample(&mut rng)];
            let ok: Vec<usize> = (0..cfg.lanes)
                .filter(|&l| !free[l].is_empty())
                .filter(|&l| match m.lateral {
                    Lateral::Keep => true,
                    Lateral::LeftChange => l > 0,
                    Lateral::RightChange => l + 1 < cfg.lanes,
                })
                .collect();
            if !ok.is_empty() {
                break (m, ok[rng.random_range(0..ok.len())]);
            }
        };
        let pick = rng.random_range(0..free[lane].len());
        let slot = free[lane].swap_remove(pick);
        let jitter = rng.random_range(0.0..0.25 * cfg.min_gap);
        let window = (cfg.label.t_h + cfg.label.t_f) as f64 * cfg.period_s;
        let lo = (cfg.duration_s - window).clamp(0.0, LANE_CHANGE_S);
        let hi = (cfg.duration_s - LANE_CHANGE_S).max(lo + 1e-9);
        plans.push(VehiclePlan {
            vehicle_id,
            maneuver,
            start_lane: lane as i32 + 1,
            y0: slot as f64 * cfg.min_gap + jitter,
            speed: rng.random_range(cfg.speed_min..=cfg.speed_max),
            event_s: rng.random_range(lo..hi),
        });
    }

    let mut tracks = Vec::with_capacity(plans.len());
    let mut clean = Vec::with_capacity(plans.len());
    for p in &plans {
        let mut frames = Vec::with_capacity(n_frames);
        let mut clean_frames = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let t = f as f64 * cfg.period_s;
            let (x, y) = (p.x_at(t, cfg.lane_width), p.y_at(t, cfg.deceleration));
            clean_frames.push(TrackFrame {
                frame: f as i64,
                lane_id: lane_of(x, cfg.lane_width, cfg.lanes),
                x,
                y,
            });
            let (nx, ny) = if cfg.noise_std > 0.0 {
                (x + noise.sample(&mut rng), y + noise.sample(&mut rng))
            } else {
                (x, y)
            };
            frames.push(TrackFrame {
                frame: f as i64,
                lane_id: lane_of(nx, cfg.lane_width, cfg.lanes),
                x: nx,
                y: ny,
            });
        }
        tracks.push(RawTrack {
            vehicle_id: p.vehicle_id,
            frames,
        });
        clean.push(clean_frames);
    }
    let labels = ground_truth(&plans, &clean, cfg);
    Ok(Scenario { tracks, plans, labels })
}

/// Maneuver at every labelable frame, from the noiseless kinematics.
fn ground_truth(plans: &[VehiclePlan], clean: &[Vec<TrackFrame>], cfg: &ScenarioConfig) -> Vec<WindowLabel> {
    let p = &cfg.label;
    let (t_h, t_f, w) = (p.t_h as i64, p.t_f as i64, p.lane_window as i64);
    let sw = p.speed_window.clamp(1, p.t_h.max(1)) as i64;
    let mut out = Vec::new();
    for (plan, frames) in plans.iter().zip(clean) {
        let last = frames.len() as i64 - 1;
        // Frame at which the noiseless lane id first differs from the start lane.
        let crossing = frames
            .iter()
            .position(|f| f.lane_id != plan.start_lane)
            .map(|i| i as i64);
        let y = |f: i64| frames[f as usize].y;
        for f in t_h..=(last - t_f) {
            let lateral = match crossing {
                Some(c) if c > f - w && c <= f + w => plan.maneuver.lateral,
                _ => Lateral::Keep,
            };
            let now = (y(f) - y(f - sw)) / sw as f64;
            let future = (y(f + t_f) - y(f)) / t_f as f64;
            let longitudinal = if future < p.braking_ratio * now {
                Longitudinal::Braking
            } else {
                Longitudinal::Normal
            };
            out.push(WindowLabel {
                vehicle_id: plan.vehicle_id,
                frame: f,
                maneuver: ManeuverClass::new(lateral, longitudinal),
            });
        }
    }
    out
}

/// Fraction of ground-truth windows on which `label_maneuver` applied to `tracks`
/// agrees with the generator.
pub fn label_agreement(tracks: &[RawTrack], labels: &[WindowLabel], params: &LabelParams) -> Result<f64, DataError> {
    let by_id: std::collections::HashMap<i64, &RawTrack> = tracks.iter().map(|t| (t.vehicle_id, t)).collect();
    let mut agree = 0usize;
    for l in labels {
        let track = by_id
            .get(&l.vehicle_id)
            .ok_or_else(|| DataError::Invalid(format!("no track for vehicle {}", l.vehicle_id)))?;
        agree += usize::from(label_maneuver(track, l.frame, params)? == l.maneuver);
    }
    Ok(agree as f64 / labels.len().max(1) as f64)
}
