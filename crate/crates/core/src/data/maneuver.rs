use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DataError, RawTrack};

pub const MANEUVER_COUNT: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lateral {
    Keep,
    LeftChange,
    RightChange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Longitudinal {
    Normal,
    Braking,
}

/// One of the six (lateral × longitudinal) maneuvers. Serialized as its index 1..=6.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ManeuverClass {
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
}

impl ManeuverClass {
    pub const ALL: [ManeuverClass; MANEUVER_COUNT] = [
        ManeuverClass::new(Lateral::Keep, Longitudinal::Normal),
        ManeuverClass::new(Lateral::Keep, Longitudinal::Braking),
        ManeuverClass::new(Lateral::LeftChange, Longitudinal::Normal),
        ManeuverClass::new(Lateral::LeftChange, Longitudinal::Braking),
        ManeuverClass::new(Lateral::RightChange, Longitudinal::Normal),
        ManeuverClass::new(Lateral::RightChange, Longitudinal::Braking),
    ];

    pub const fn new(lateral: Lateral, longitudinal: Longitudinal) -> Self {
        ManeuverClass { lateral, longitudinal }
    }

    /// `2·lateral + longitudinal + 1`, in 1..=6.
    pub fn index(self) -> u8 {
        let lat = match self.lateral {
            Lateral::Keep => 0,
            Lateral::LeftChange => 1,
            Lateral::RightChange => 2,
        };
        let lon = match self.longitudinal {
            Longitudinal::Normal => 0,
            Longitudinal::Braking => 1,
        };
        2 * lat + lon + 1
    }

    /// Zero-based position in probability vectors.
    pub fn slot(self) -> usize {
        usize::from(self.index() - 1)
    }

    pub fn from_index(index: u8) -> Option<Self> {
        (1..=6).contains(&index).then(|| Self::ALL[usize::from(index - 1)])
    }

    pub fn from_slot(slot: usize) -> Option<Self> {
        Self::ALL.get(slot).copied()
    }
}

impl TryFrom<u8> for ManeuverClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ManeuverClass::from_index(v).ok_or_else(|| format!("maneuver index {v} not in 1..=6"))
    }
}

impl From<ManeuverClass> for u8 {
    fn from(m: ManeuverClass) -> u8 {
        m.index()
    }
}

impl fmt::Display for ManeuverClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lat = match self.lateral {
            Lateral::Keep => "keep",
            Lateral::LeftChange => "left",
            Lateral::RightChange => "right",
        };
        let lon = match self.longitudinal {
            Longitudinal::Normal => "normal",
            Longitudinal::Braking => "braking",
        };
        write!(f, "{lat}/{lon}")
    }
}

/// Parameters of the labeling rule, in working frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelParams {
    pub t_h: usize,
    pub t_f: usize,
    /// Half-width of the lane-change detection window (4 s at 0.2 s → 20).
    pub lane_window: usize,
    /// Frames used for the speed estimate at `t`.
    pub speed_window: usize,
    pub braking_ratio: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            t_h: 15,
            t_f: 25,
            lane_window: 20,
            speed_window: 5,
            braking_ratio: 0.8,
        }
    }
}

/// Labels the maneuver of `track` at frame `t`.
///
/// Lateral: a lane-id change between `t` and the window edges (clamped to the
/// track) marks a change; decreasing lane id is a left change.
/// Longitudinal: braking when the mean speed over the horizon falls below
/// `braking_ratio` times the speed at `t` (averaged over `speed_window` frames).
pub fn label_maneuver(track: &RawTrack, t: i64, p: &LabelParams) -> Result<ManeuverClass, DataError> {
    let (from, to) = (t - p.t_h as i64, t + p.t_f as i64);
    if !track.covers(from, to) {
        return Err(DataError::Coverage {
            vehicle_id: track.vehicle_id,
            frame: t,
            from,
            to,
        });
    }
    let first = track.first_frame().expect("covered track is non-empty");
    let last = track.last_frame().expect("covered track is non-empty");
    let at = |f: i64| track.at(f).expect("frame within covered track");
    let now = at(t);
    let ahead = at((t + p.lane_window as i64).min(last));
    let behind = at((t - p.lane_window as i64).max(first));

    let lateral = if ahead.lane_id > now.lane_id || now.lane_id > behind.lane_id {
        Lateral::RightChange
    } else if ahead.lane_id < now.lane_id || now.lane_id < behind.lane_id {
        Lateral::LeftChange
    } else {
        Lateral::Keep
    };

    let sw = p.speed_window.clamp(1, p.t_h.max(1)) as i64;
    let speed_now = (now.y - at(t - sw).y) / sw as f64;
    let future_mean = (at(to).y - now.y) / p.t_f as f64;
    let longitudinal = if future_mean < p.braking_ratio * speed_now {
        Longitudinal::Braking
    } else {
        Longitudinal::Normal
    };
    Ok(ManeuverClass::new(lateral, longitudinal))
}
