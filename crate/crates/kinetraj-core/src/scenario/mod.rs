//! Scenario data model and ingestion.
//!
//! A [`Scenario`] is the unit of training and evaluation: the object state
//! histories of all participants, the designated ego track, a drivable-area
//! raster, and the timestep that separates observed history from the future
//! to predict. Scenarios come from the neutral JSON format, from Argoverse v1
//! motion-forecasting CSVs, or from the synthetic generator.
//!
//! All types are immutable value objects after construction and are safe to
//! share across threads; directory loading may run per-file in parallel.

pub mod argoverse;
pub mod attributes;
pub mod frame;
pub mod json;
pub mod pgm;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::KinematicState;
use crate::scalar::Scalar;

pub use attributes::{derive_attributes, derive_attributes_masked, Attributes};
pub use frame::{to_ego_frame, RigidTransform};

/// Tolerance on timestamp uniformity, seconds.
pub const DT_TOLERANCE: f64 = 1e-9;

/// Role of a participant within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    /// The evaluation target (Argoverse's AGENT track maps here).
    Ego,
    Agent,
    Other,
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObjectClass::Ego => write!(f, "ego"),
            ObjectClass::Agent => write!(f, "agent"),
            ObjectClass::Other => write!(f, "other"),
        }
    }
}

/// One participant's time series on the scenario's uniform timeline.
#[derive(Debug, Clone)]
pub struct ObjectTrack {
    pub track_id: String,
    pub object_class: ObjectClass,
    /// Scenario-relative seconds, strictly increasing, uniform at 1/frequency.
    pub timestamps: Vec<f64>,
    /// Meters, local scenario frame. Steps with `observed_mask == false`
    /// carry the nearest observed position.
    pub positions: Vec<[f64; 2]>,
    /// Derived per-step attributes; same length as positions.
    pub attributes: Vec<Attributes>,
    pub observed_mask: Vec<bool>,
}

impl ObjectTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn observed_at(&self, step: usize) -> bool {
        self.observed_mask.get(step).copied().unwrap_or(false)
    }

    /// Kinematic state at a step, from position plus derived yaw and speed.
    pub fn state_at<T: Scalar>(&self, step: usize) -> KinematicState<T> {
        let p = self.positions[step];
        let a = &self.attributes[step];
        KinematicState::from_pose(
            T::from_f64(p[0]),
            T::from_f64(p[1]),
            T::from_f64(a.yaw),
            T::from_f64(a.speed()),
        )
    }

    fn validate(&self, dt: f64) -> Result<()> {
        let n = self.positions.len();
        if self.timestamps.len() != n || self.attributes.len() != n || self.observed_mask.len() != n
        {
            return Err(Error::dimension(format!(
                "track {}: timestamps/positions/attributes/mask lengths differ",
                self.track_id
            )));
        }
        for (step, pair) in self.timestamps.windows(2).enumerate() {
            let d = pair[1] - pair[0];
            if (d - dt).abs() >= DT_TOLERANCE {
                return Err(Error::NonUniformTimestamps {
                    track_id: self.track_id.clone(),
                    step,
                    dt: d,
                    expected: dt,
                });
            }
        }
        for p in &self.positions {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::NonFinite { context: format!("track {} position", self.track_id) });
            }
        }
        Ok(())
    }
}

/// Bird's-eye-view raster of the drivable area.
///
/// `origin` is the scenario-frame position of the top-left corner of pixel
/// (0, 0); columns advance along +x, rows along -y. World-to-pixel mapping is
/// `col = floor((x - origin.x) / resolution)`, `row = floor((origin.y - y) /
/// resolution)`; boundary points belong to the higher index.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Meters per pixel.
    pub resolution: f64,
    pub origin: [f64; 2],
    /// height * width row-major; 1 = drivable.
    pub driveable: Vec<u8>,
}

impl MapGrid {
    /// All-drivable grid centered on `center`.
    pub fn all_drivable(width: usize, height: usize, resolution: f64, center: [f64; 2]) -> Self {
        Self {
            width,
            height,
            channels: 1,
            resolution,
            origin: [
                center[0] - width as f64 / 2.0 * resolution,
                center[1] + height as f64 / 2.0 * resolution,
            ],
            driveable: vec![1; width * height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution <= 0.0 {
            return Err(Error::invalid_config("map resolution must be > 0"));
        }
        if self.driveable.len() != self.width * self.height {
            return Err(Error::dimension("map mask size != width * height"));
        }
        if let Some(v) = self.driveable.iter().find(|&&v| v > 1) {
            return Err(Error::invalid_config(format!("drivable mask value {v} not in {{0, 1}}")));
        }
        Ok(())
    }

    /// Pixel containing a point, or None when outside the grid.
    pub fn pixel_of(&self, point: [f64; 2]) -> Option<(usize, usize)> {
        let col = ((point[0] - self.origin[0]) / self.resolution).floor();
        let row = ((self.origin[1] - point[1]) / self.resolution).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// Pixel for a point, clamped onto the nearest border pixel when outside.
    pub fn pixel_of_clamped(&self, point: [f64; 2]) -> (usize, usize, bool) {
        let col = ((point[0] - self.origin[0]) / self.resolution).floor();
        let row = ((self.origin[1] - point[1]) / self.resolution).floor();
        let inside =
            col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height;
        let c = (col.max(0.0) as usize).min(self.width - 1);
        let r = (row.max(0.0) as usize).min(self.height - 1);
        (r, c, !inside)
    }

    /// Scenario-frame position of a pixel's center.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.resolution,
            self.origin[1] - (row as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn is_drivable(&self, row: usize, col: usize) -> bool {
        self.driveable[row * self.width + col] == 1
    }

    pub fn all_ones(&self) -> bool {
        self.driveable.iter().all(|&v| v == 1)
    }
}

/// One traffic scenario: the unit of ingestion, training, and evaluation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub scenario_id: String,
    pub frequency_hz: f64,
    pub tracks: Vec<ObjectTrack>,
    pub ego_index: usize,
    pub map: MapGrid,
    /// Timestep separating history from the future to predict.
    pub split_index: usize,
    /// Maps local (possibly ego-framed) coordinates back to the frame the
    /// scenario was loaded in; identity unless [`to_ego_frame`] ran.
    pub world_from_local: RigidTransform,
}

impl Scenario {
    pub fn dt(&self) -> f64 {
        1.0 / self.frequency_hz
    }

    pub fn ego(&self) -> &ObjectTrack {
        &self.tracks[self.ego_index]
    }

    /// Index of the last history step (the frame and rollout anchor).
    pub fn anchor_step(&self) -> usize {
        self.split_index - 1
    }

    pub fn total_steps(&self) -> usize {
        self.tracks.first().map_or(0, |t| t.len())
    }

    pub fn future_len(&self) -> usize {
        self.total_steps() - self.split_index
    }

    pub fn validate(&self) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(Error::empty("scenario has no tracks"));
        }
        if self.ego_index >= self.tracks.len() {
            return Err(Error::invalid_config(format!(
                "ego index {} out of range ({} tracks)",
                self.ego_index,
                self.tracks.len()
            )));
        }
        if self.frequency_hz <= 0.0 {
            return Err(Error::invalid_config("frequency must be > 0"));
        }
        let n = self.total_steps();
        if self.split_index == 0 || self.split_index >= n {
            return Err(Error::invalid_config(format!(
                "split index {} not inside track length {n}",
                self.split_index
            )));
        }
        let dt = self.dt();
        for track in &self.tracks {
            if track.len() != n {
                return Err(Error::dimension(format!(
                    "track {} length {} != scenario length {n}",
                    track.track_id,
                    track.len()
                )));
            }
            track.validate(dt)?;
        }
        self.map.validate()?;
        Ok(())
    }
}

/// On-disk scenario formats the loader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFormat {
    NeutralJson,
    ArgoverseCsv,
}

/// Loads one scenario file, deriving attributes and validating invariants.
pub fn load_scenario(path: &std::path::Path, format: ScenarioFormat) -> Result<Scenario> {
    match format {
        ScenarioFormat::NeutralJson => json::load(path),
        ScenarioFormat::ArgoverseCsv => argoverse::load(path),
    }
}

/// Saves a scenario in the neutral JSON format.
pub fn save_scenario(scenario: &Scenario, path: &std::path::Path) -> Result<()> {
    json::save(scenario, path)
}
