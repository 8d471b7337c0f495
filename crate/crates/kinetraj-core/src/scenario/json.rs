//! Neutral scenario JSON format.
//!
//! Dataset-independent on-disk representation. Tracks store observed states
//! only as (t, x, y); attributes are never serialized, they are derived on
//! load. The drivable mask is run-length encoded row-major from the top-left
//! pixel, alternating run values starting with drivable (the first entry may
//! be 0).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::attributes::{derive_attributes_masked, DEFAULT_SMOOTHING};
use crate::scenario::frame::RigidTransform;
use crate::scenario::{MapGrid, ObjectClass, ObjectTrack, Scenario};

#[derive(Serialize, Deserialize)]
struct ScenarioJson {
    scenario_id: String,
    frequency_hz: f64,
    split_index: usize,
    ego_track_id: String,
    tracks: Vec<TrackJson>,
    map: MapJson,
}

#[derive(Serialize, Deserialize)]
struct TrackJson {
    track_id: String,
    object_class: ObjectClass,
    states: Vec<StateJson>,
}

#[derive(Serialize, Deserialize)]
struct StateJson {
    t: f64,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct MapJson {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    driveable_rle: Vec<u64>,
}

/// Run-length encodes bits row-major; runs alternate starting with 1s.
pub fn rle_encode(bits: &[u8]) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = 1u8;
    let mut count = 0u64;
    for &b in bits {
        if b == current {
            count += 1;
        } else {
            runs.push(count);
            current = b;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

pub fn rle_decode(runs: &[u64], expected_len: usize) -> Result<Vec<u8>> {
    let mut bits = Vec::with_capacity(expected_len);
    let mut current = 1u8;
    for &run in runs {
        for _ in 0..run {
            bits.push(current);
        }
        current = 1 - current;
    }
    if bits.len() != expected_len {
        return Err(Error::parse(
            "<rle>",
            format!("run lengths decode to {} bits, expected {expected_len}", bits.len()),
        ));
    }
    Ok(bits)
}

pub fn save(scenario: &Scenario, path: &Path) -> Result<()> {
    let doc = ScenarioJson {
        scenario_id: scenario.scenario_id.clone(),
        frequency_hz: scenario.frequency_hz,
        split_index: scenario.split_index,
        ego_track_id: scenario.ego().track_id.clone(),
        tracks: scenario
            .tracks
            .iter()
            .map(|t| TrackJson {
                track_id: t.track_id.clone(),
                object_class: t.object_class,
                states: t
                    .timestamps
                    .iter()
                    .zip(&t.positions)
                    .zip(&t.observed_mask)
                    .filter(|(_, &obs)| obs)
                    .map(|((t, p), _)| StateJson { t: *t, x: p[0], y: p[1] })
                    .collect(),
            })
            .collect(),
        map: MapJson {
            width: scenario.map.width,
            height: scenario.map.height,
            resolution: scenario.map.resolution,
            origin: scenario.map.origin,
            driveable_rle: rle_encode(&scenario.map.driveable),
        },
    };
    let text = serde_json::to_string(&doc)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: ScenarioJson = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    from_document(doc, &path.display().to_string())
}

fn from_document(doc: ScenarioJson, path: &str) -> Result<Scenario> {
    if doc.tracks.is_empty() {
        return Err(Error::empty(format!("{path}: scenario has no tracks")));
    }
    if doc.frequency_hz <= 0.0 {
        return Err(Error::parse(path, "frequency_hz must be > 0"));
    }
    let dt = 1.0 / doc.frequency_hz;

    // Uniform scenario timeline from the union of observed timestamps,
    // rebased to start at zero.
    let t0 = doc
        .tracks
        .iter()
        .flat_map(|t| t.states.first().map(|s| s.t))
        .fold(f64::INFINITY, f64::min);
    let t_max = doc
        .tracks
        .iter()
        .flat_map(|t| t.states.last().map(|s| s.t))
        .fold(f64::NEG_INFINITY, f64::max);
    if !t0.is_finite() || !t_max.is_finite() {
        return Err(Error::empty(format!("{path}: all tracks are empty")));
    }
    let steps = ((t_max - t0) / dt).round() as usize + 1;

    let snap_tol = dt / 4.0;
    let mut tracks = Vec::with_capacity(doc.tracks.len());
    for tj in &doc.tracks {
        let mut positions = vec![[0.0, 0.0]; steps];
        let mut mask = vec![false; steps];
        for s in &tj.states {
            let rel = s.t - t0;
            let idx = (rel / dt).round();
            if idx < 0.0 || idx as usize >= steps || (rel - idx * dt).abs() > snap_tol {
                return Err(Error::NonUniformTimestamps {
                    track_id: tj.track_id.clone(),
                    step: idx.max(0.0) as usize,
                    dt: rel - idx * dt,
                    expected: dt,
                });
            }
            let idx = idx as usize;
            if mask[idx] {
                return Err(Error::parse(
                    path,
                    format!("track {} has duplicate state at step {idx}", tj.track_id),
                ));
            }
            positions[idx] = [s.x, s.y];
            mask[idx] = true;
        }
        fill_unobserved(&mut positions, &mask);
        let attributes = derive_attributes_masked(&positions, &mask, dt, DEFAULT_SMOOTHING)?;
        tracks.push(ObjectTrack {
            track_id: tj.track_id.clone(),
            object_class: tj.object_class,
            timestamps: (0..steps).map(|i| i as f64 * dt).collect(),
            positions,
            attributes,
            observed_mask: mask,
        });
    }

    let ego_index = tracks
        .iter()
        .position(|t| t.track_id == doc.ego_track_id)
        .ok_or_else(|| Error::NoEgoTrack { scenario_id: doc.scenario_id.clone() })?;

    let expected = doc.map.width * doc.map.height;
    let map = MapGrid {
        width: doc.map.width,
        height: doc.map.height,
        channels: 1,
        resolution: doc.map.resolution,
        origin: doc.map.origin,
        driveable: rle_decode(&doc.map.driveable_rle, expected)?,
    };

    let scenario = Scenario {
        scenario_id: doc.scenario_id,
        frequency_hz: doc.frequency_hz,
        tracks,
        ego_index,
        map,
        split_index: doc.split_index,
        world_from_local: RigidTransform::identity(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Carries the nearest observed position into unobserved slots so filler
/// values stay finite; masked steps are excluded from encoding and losses.
pub(crate) fn fill_unobserved(positions: &mut [[f64; 2]], mask: &[bool]) {
    if let Some(first) = mask.iter().position(|&m| m) {
        let fill = positions[first];
        for p in positions.iter_mut().take(first) {
            *p = fill;
        }
        let mut last = fill;
        for (p, &m) in positions.iter_mut().zip(mask).skip(first) {
            if m {
                last = *p;
            } else {
                *p = last;
            }
        }
    }
}
