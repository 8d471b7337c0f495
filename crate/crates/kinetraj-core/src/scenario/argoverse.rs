//! Argoverse v1 motion-forecasting CSV adapter.
//!
//! Required columns: TIMESTAMP, TRACK_ID, OBJECT_TYPE, X, Y, CITY_NAME. The
//! OBJECT_TYPE=AGENT row set is the evaluation target and maps to the ego
//! role; AV and OTHERS map to other. Sequences are 5 s at 10 Hz with a 2 s
//! history window. The CSV carries no raster map; a placeholder all-drivable
//! grid centered on the ego anchor is attached unless a mask file is supplied
//! separately.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenario::attributes::{derive_attributes_masked, DEFAULT_SMOOTHING};
use crate::scenario::frame::RigidTransform;
use crate::scenario::json::fill_unobserved;
use crate::scenario::{MapGrid, ObjectClass, ObjectTrack, Scenario};

pub const FREQUENCY_HZ: f64 = 10.0;
pub const HISTORY_STEPS: usize = 20;

/// Default placeholder raster: 128 px at 0.5 m/px centered on the ego anchor.
pub const DEFAULT_GRID: usize = 128;
pub const DEFAULT_RESOLUTION: f64 = 0.5;

const REQUIRED: [&str; 6] = ["TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y", "CITY_NAME"];

pub fn load(path: &Path) -> Result<Scenario> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(&display, e.to_string()))?;

    let headers = reader.headers().map_err(|e| Error::parse(&display, e.to_string()))?.clone();
    let mut index = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        index.insert(name.to_string(), i);
    }
    for col in REQUIRED {
        if !index.contains_key(col) {
            return Err(Error::MissingColumn { path: display, column: col.to_string() });
        }
    }
    let col = |name: &str| index[name];

    struct Row {
        t: f64,
        track_id: String,
        object_type: String,
        x: f64,
        y: f64,
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(&display, e.to_string()))?;
        let field = |name: &str| -> Result<&str> {
            record
                .get(col(name))
                .ok_or_else(|| Error::parse(&display, format!("short row missing {name}")))
        };
        let parse = |name: &str| -> Result<f64> {
            field(name)?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(&display, format!("bad {name}: {e}")))
        };
        rows.push(Row {
            t: parse("TIMESTAMP")?,
            track_id: field("TRACK_ID")?.to_string(),
            object_type: field("OBJECT_TYPE")?.trim().to_string(),
            x: parse("X")?,
            y: parse("Y")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::empty(format!("{display}: no data rows")));
    }

    let dt = 1.0 / FREQUENCY_HZ;
    let t0 = rows.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);
    let t_max = rows.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
    let steps = ((t_max - t0) / dt).round() as usize + 1;
    let snap_tol = dt / 4.0;

    // Group rows per track, preserving first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<&Row>> = BTreeMap::new();
    for row in &rows {
        if !grouped.contains_key(&row.track_id) {
            order.push(row.track_id.clone());
        }
        grouped.entry(row.track_id.clone()).or_default().push(row);
    }

    let scenario_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "argoverse".to_string());

    let mut tracks = Vec::new();
    let mut ego_index = None;
    for track_id in order {
        let entries = &grouped[&track_id];
        let object_class = match entries[0].object_type.as_str() {
            "AGENT" => ObjectClass::Ego,
            _ => ObjectClass::Other,
        };
        let mut positions = vec![[0.0, 0.0]; steps];
        let mut mask = vec![false; steps];
        for row in entries {
            let rel = row.t - t0;
            let idx = (rel / dt).round();
            if idx < 0.0 || idx as usize >= steps || (rel - idx * dt).abs() > snap_tol {
                return Err(Error::NonUniformTimestamps {
                    track_id: track_id.clone(),
                    step: idx.max(0.0) as usize,
                    dt: rel - idx * dt,
                    expected: dt,
                });
            }
            let idx = idx as usize;
            positions[idx] = [row.x, row.y];
            mask[idx] = true;
        }
        fill_unobserved(&mut positions, &mask);
        let attributes = derive_attributes_masked(&positions, &mask, dt, DEFAULT_SMOOTHING)?;
        if object_class == ObjectClass::Ego {
            if ego_index.is_some() {
                return Err(Error::parse(&display, "multiple AGENT tracks"));
            }
            ego_index = Some(tracks.len());
        }
        tracks.push(ObjectTrack {
            track_id,
            object_class,
            timestamps: (0..steps).map(|i| i as f64 * dt).collect(),
            positions,
            attributes,
            observed_mask: mask,
        });
    }

    let ego_index = ego_index.ok_or_else(|| Error::NoEgoTrack { scenario_id: scenario_id.clone() })?;
    let split_index = HISTORY_STEPS.min(steps.saturating_sub(1)).max(1);
    let anchor_pos = tracks[ego_index].positions[split_index - 1];
    let map = MapGrid::all_drivable(DEFAULT_GRID, DEFAULT_GRID, DEFAULT_RESOLUTION, anchor_pos);

    let scenario = Scenario {
        scenario_id,
        frequency_hz: FREQUENCY_HZ,
        tracks,
        ego_index,
        map,
        split_index,
        world_from_local: RigidTransform::identity(),
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn agent_csv(rows: usize) -> String {
        let mut s = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n");
        for i in 0..rows {
            let t = 315969629.0 + i as f64 * 0.1;
            s.push_str(&format!("{t:.1},agent-1,AGENT,{},{},PIT\n", 100.0 + i as f64, 50.0));
            s.push_str(&format!("{t:.1},av-1,AV,{},{},PIT\n", 90.0 + i as f64, 48.0));
        }
        s
    }

    #[test]
    fn loads_agent_as_ego_with_split_20() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, "seq.csv", &agent_csv(50));
        let s = load(&path).unwrap();
        assert_eq!(s.ego().object_class, ObjectClass::Ego);
        assert_eq!(s.ego().len(), 50);
        assert_eq!(s.split_index, 20);
        assert_eq!(s.frequency_hz, 10.0);
        assert!(s.tracks.iter().all(|t| t.timestamps[0] == 0.0));
    }

    #[test]
    fn missing_timestamp_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let body = "TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\na,AGENT,0,0,PIT\n";
        let path = write_csv(&dir, "bad.csv", body);
        match load(&path) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "TIMESTAMP"),
            other => panic!("expected missing-column error, got {other:?}"),
        }
    }

    #[test]
    fn no_agent_track_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n");
        for i in 0..30 {
            body.push_str(&format!("{},av-1,AV,{},0,PIT\n", i as f64 * 0.1, i));
        }
        let path = write_csv(&dir, "noego.csv", &body);
        assert!(matches!(load(&path), Err(Error::NoEgoTrack { .. })));
    }

    #[test]
    fn partially_observed_other_track_is_masked() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n");
        for i in 0..50 {
            body.push_str(&format!("{:.1},ag,AGENT,{},0,PIT\n", i as f64 * 0.1, i));
        }
        for i in 10..20 {
            body.push_str(&format!("{:.1},other,OTHERS,{},5,PIT\n", i as f64 * 0.1, i));
        }
        let path = write_csv(&dir, "partial.csv", &body);
        let s = load(&path).unwrap();
        let other = s.tracks.iter().find(|t| t.track_id == "other").unwrap();
        assert_eq!(other.len(), 50);
        assert!(!other.observed_at(5));
        assert!(other.observed_at(15));
        assert!(!other.observed_at(30));
    }
}
