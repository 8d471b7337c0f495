//! Egocentric framing of scenarios.
//!
//! Training and prediction run in an ego-anchored frame: the ego pose at the
//! last history step becomes the origin with heading zero. The inverse
//! transform is kept on the scenario so reports can map back to the loaded
//! frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::wrap_angle;
use crate::scenario::{MapGrid, Scenario};

/// Planar rigid transform: `world = R(angle) * local + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angle: f64,
    pub translation: [f64; 2],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { angle: 0.0, translation: [0.0, 0.0] }
    }

    pub fn is_identity(&self) -> bool {
        self.angle == 0.0 && self.translation == [0.0, 0.0]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
        ]
    }

    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.angle.sin_cos();
        let t = self.translation;
        Self {
            angle: -self.angle,
            translation: [-(c * t[0] + s * t[1]), s * t[0] - c * t[1]],
        }
    }

    /// self after other: `(self . other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            angle: self.angle + other.angle,
            translation: self.apply(other.translation),
        }
    }
}

/// Rewrites the scenario so the ego pose at the last history step is the
/// origin with heading 0. Positions and velocity attributes rotate rigidly;
/// the drivable mask is resampled into an ego-centered grid of the same
/// dimensions (nearest neighbor, clamped to the source edge). The inverse
/// transform is retained in `world_from_local`.
pub fn to_ego_frame(scenario: &Scenario) -> Result<Scenario> {
    let anchor = scenario.anchor_step();
    let ego = scenario.ego();
    if !ego.observed_at(anchor) {
        return Err(Error::EgoUnobservedAtAnchor { step: anchor });
    }
    let anchor_pos = ego.positions[anchor];
    let anchor_yaw = ego.attributes[anchor].yaw;

    // local = R(-yaw) * (p - anchor)
    let world_from_new_local = RigidTransform { angle: anchor_yaw, translation: anchor_pos };
    let local_from_world = world_from_new_local.inverse();

    let mut tracks = scenario.tracks.clone();
    for track in &mut tracks {
        for p in &mut track.positions {
            *p = local_from_world.apply(*p);
        }
        for a in &mut track.attributes {
            let v = local_from_world.rotate([a.vx, a.vy]);
            a.vx = v[0];
            a.vy = v[1];
            a.yaw = wrap_angle(a.yaw - anchor_yaw);
        }
    }

    let ego_anchor_local = tracks[scenario.ego_index].positions[anchor];
    // Snap the anchor exactly onto the origin; rounding in the rigid
    // transform otherwise leaves ~1e-16 residue.
    for track in &mut tracks {
        for p in &mut track.positions {
            p[0] -= ego_anchor_local[0];
            p[1] -= ego_anchor_local[1];
        }
    }
    tracks[scenario.ego_index].attributes[anchor].yaw = 0.0;

    let map = resample_map(&scenario.map, &world_from_new_local);

    Ok(Scenario {
        scenario_id: scenario.scenario_id.clone(),
        frequency_hz: scenario.frequency_hz,
        tracks,
        ego_index: scenario.ego_index,
        map,
        split_index: scenario.split_index,
        world_from_local: scenario.world_from_local.compose(&world_from_new_local),
    })
}

/// Resamples the drivable mask into a grid of the same shape centered on the
/// new local origin. Source lookups outside the old grid clamp to the edge,
/// so an all-drivable placeholder mask stays all-drivable.
fn resample_map(map: &MapGrid, world_from_local: &RigidTransform) -> MapGrid {
    let mut out = MapGrid::all_drivable(map.width, map.height, map.resolution, [0.0, 0.0]);
    if map.all_ones() {
        return out;
    }
    for row in 0..out.height {
        for col in 0..out.width {
            let local = out.pixel_center(row, col);
            let world = world_from_local.apply(local);
            let c = ((world[0] - map.origin[0]) / map.resolution).floor();
            let r = ((map.origin[1] - world[1]) / map.resolution).floor();
            let c = (c.max(0.0) as usize).min(map.width - 1);
            let r = (r.max(0.0) as usize).min(map.height - 1);
            out.driveable[row * out.width + col] = map.driveable[r * map.width + c];
        }
    }
    out
}
