//! Trajectory rasterization and drivable-area penalties.
//!
//! Reporting uses the exact pixel count: trajectories rasterize point-wise
//! into a binary image and offroad pixels are counted against the drivable
//! mask. Training uses a smooth surrogate instead — the raster difference has
//! zero gradient almost everywhere — built as a Euclidean distance transform
//! of the drivable mask, sampled bilinearly and differentiably at trajectory
//! points.

use std::path::Path;
use std::rc::Rc;

use crate::autodiff::{Tape, Value};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scenario::{pgm, MapGrid};

/// Binary image of trajectory point pixels, aligned with a [`MapGrid`].
#[derive(Debug, Clone)]
pub struct TrajectoryRaster {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    /// height * width row-major; 1 = trajectory pixel.
    pub grid: Vec<u8>,
    /// Points outside the grid (set on the nearest border pixel).
    pub out_of_bounds: usize,
}

impl TrajectoryRaster {
    pub fn set_pixel_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 1).count()
    }

    /// Debug dump: set pixels white on black.
    pub fn dump_pgm(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self.grid.iter().map(|&v| if v == 1 { 255 } else { 0 }).collect();
        pgm::write_pgm(path, self.width, self.height, &pixels)
    }
}

/// Point rasterization: each trajectory point sets its containing pixel
/// (floor rule; boundary points go to the higher index). No line
/// interpolation — at 10 Hz and urban speeds consecutive points fall within
/// a pixel of each other at the default resolutions.
pub fn rasterize(trajectory: &[[f64; 2]], map: &MapGrid) -> TrajectoryRaster {
    let mut grid = vec![0u8; map.width * map.height];
    let mut out_of_bounds = 0;
    for p in trajectory {
        let (row, col, outside) = map.pixel_of_clamped(*p);
        if outside {
            out_of_bounds += 1;
        }
        grid[row * map.width + col] = 1;
    }
    TrajectoryRaster {
        width: map.width,
        height: map.height,
        resolution: map.resolution,
        origin: map.origin,
        grid,
        out_of_bounds,
    }
}

/// Exact offroad pixel count: sum of max(0, traj - drivable) over pixels.
pub fn offroad_count(raster: &TrajectoryRaster, map: &MapGrid) -> Result<usize> {
    if raster.width != map.width || raster.height != map.height {
        return Err(Error::dimension(format!(
            "raster {}x{} vs map {}x{}",
            raster.width, raster.height, map.width, map.height
        )));
    }
    Ok(raster
        .grid
        .iter()
        .zip(&map.driveable)
        .filter(|&(&t, &d)| t > d)
        .count())
}

/// Distance-to-drivable field with bilinear differentiable sampling.
///
/// Zero exactly on drivable pixels, the center-to-center Euclidean distance
/// (in meters) to the nearest drivable pixel elsewhere. Sampling clamps to
/// the border, so the field is flat (zero gradient) outside the grid.
#[derive(Debug, Clone)]
pub struct PenaltyField {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    /// Meters, height * width row-major.
    pub dist: Vec<f64>,
}

/// Squared-distance sentinel for empty rows/columns.
const EDT_INF: f64 = 1e12;

/// Builds the exact Euclidean distance transform of the drivable mask.
pub fn build_penalty_field(map: &MapGrid) -> Result<PenaltyField> {
    map.validate()?;
    if map.driveable.iter().all(|&v| v == 0) {
        return Err(Error::NoDrivablePixel);
    }
    let (w, h) = (map.width, map.height);
    // Two-pass exact squared EDT (lower envelope of parabolas per axis).
    let mut sq = vec![0.0f64; w * h];
    for r in 0..h {
        for c in 0..w {
            sq[r * w + c] = if map.driveable[r * w + c] == 1 { 0.0 } else { EDT_INF };
        }
    }
    let mut column = vec![0.0; h];
    let mut out_col = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            column[r] = sq[r * w + c];
        }
        edt_1d(&column, &mut out_col);
        for r in 0..h {
            sq[r * w + c] = out_col[r];
        }
    }
    let mut row_buf = vec![0.0; w];
    let mut out_row = vec![0.0; w];
    for r in 0..h {
        row_buf.copy_from_slice(&sq[r * w..(r + 1) * w]);
        edt_1d(&row_buf, &mut out_row);
        for c in 0..w {
            sq[r * w + c] = out_row[c];
        }
    }
    let dist = sq.iter().map(|&d| d.sqrt() * map.resolution).collect();
    Ok(PenaltyField { width: w, height: h, resolution: map.resolution, origin: map.origin, dist })
}

/// 1-d squared distance transform of a sampled function.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

impl PenaltyField {
    /// Penalty and its gradient at a scenario-frame point.
    pub fn sample_with_grad(&self, point: [f64; 2]) -> (f64, [f64; 2]) {
        // Continuous pixel coordinates with centers at integers.
        let u = (point[0] - self.origin[0]) / self.resolution - 0.5;
        let v = (self.origin[1] - point[1]) / self.resolution - 0.5;
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let cu = u.clamp(0.0, max_u);
        let cv = v.clamp(0.0, max_v);
        let u0 = (cu.floor() as usize).min(self.width - 1);
        let v0 = (cv.floor() as usize).min(self.height - 1);
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = cu - u0 as f64;
        let fv = cv - v0 as f64;
        let at = |r: usize, c: usize| self.dist[r * self.width + c];
        let d00 = at(v0, u0);
        let d01 = at(v0, u1);
        let d10 = at(v1, u0);
        let d11 = at(v1, u1);
        let value = d00 * (1.0 - fu) * (1.0 - fv) + d01 * fu * (1.0 - fv) + d10 * (1.0 - fu) * fv + d11 * fu * fv;
        // d/du and d/dv of the bilinear form; clamped coordinates freeze.
        let dval_du = if u == cu { (d01 - d00) * (1.0 - fv) + (d11 - d10) * fv } else { 0.0 };
        let dval_dv = if v == cv { (d10 - d00) * (1.0 - fu) + (d11 - d01) * fu } else { 0.0 };
        let dx = dval_du / self.resolution;
        let dy = -dval_dv / self.resolution;
        (value, [dx, dy])
    }

    pub fn sample(&self, point: [f64; 2]) -> f64 {
        self.sample_with_grad(point).0
    }

    /// Differentiable sampling of scalar position nodes.
    pub fn sample_taped<T: Scalar>(&self, tape: &Tape<T>, x: Value, y: Value) -> Value {
        let point = [tape.scalar(x).to_f64(), tape.scalar(y).to_f64()];
        let (value, grad) = self.sample_with_grad(point);
        tape.external_scalar(
            T::from_f64(value),
            &[(x, T::from_f64(grad[0])), (y, T::from_f64(grad[1]))],
        )
    }

    /// Dump as raw little-endian f32 plus a JSON side-car header.
    pub fn dump_raw(&self, raw_path: &Path, header_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.dist.len() * 4);
        for &d in &self.dist {
            bytes.extend_from_slice(&(d as f32).to_le_bytes());
        }
        std::fs::write(raw_path, bytes).map_err(|e| Error::io(raw_path.display().to_string(), e))?;
        let header = serde_json::json!({
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "origin": self.origin,
            "dtype": "f32le",
        });
        std::fs::write(header_path, header.to_string())
            .map_err(|e| Error::io(header_path.display().to_string(), e))
    }
}

/// Shares a penalty field across taped samples.
pub type SharedPenaltyField = Rc<PenaltyField>;

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid(width: usize, height: usize, resolution: f64, origin: [f64; 2], bits: Vec<u8>) -> MapGrid {
        MapGrid { width, height, channels: 1, resolution, origin, driveable: bits }
    }

    #[test]
    fn points_in_one_pixel_set_one_pixel() {
        let map = MapGrid::all_drivable(8, 8, 0.5, [0.0, 0.0]);
        let p = map.pixel_center(3, 4);
        let traj: Vec<[f64; 2]> = (0..5)
            .map(|i| [p[0] + 0.01 * i as f64, p[1] - 0.01 * i as f64])
            .collect();
        let raster = rasterize(&traj, &map);
        assert_eq!(raster.set_pixel_count(), 1);
        assert_eq!(raster.out_of_bounds, 0);
    }

    #[test]
    fn out_of_bounds_points_clamp_to_border() {
        let map = MapGrid::all_drivable(8, 8, 0.5, [0.0, 0.0]);
        let raster = rasterize(&[[1e3, 1e3], [-1e3, 0.0]], &map);
        assert_eq!(raster.out_of_bounds, 2);
        assert_eq!(raster.set_pixel_count(), 2);
    }

    #[test]
    fn arc_set_pixels_match_brute_force_mapping() {
        let map = MapGrid::all_drivable(64, 64, 0.5, [0.0, 0.0]);
        let traj: Vec<[f64; 2]> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.1;
                [10.0 * (0.4 * t).cos() - 4.0, 10.0 * (0.4 * t).sin() - 4.0]
            })
            .collect();
        let raster = rasterize(&traj, &map);
        // Independent oracle: map every point by hand and collect the set.
        let mut expected = HashSet::new();
        for p in &traj {
            let col = ((p[0] - map.origin[0]) / map.resolution).floor() as i64;
            let row = ((map.origin[1] - p[1]) / map.resolution).floor() as i64;
            assert!(col >= 0 && row >= 0 && col < 64 && row < 64);
            expected.insert((row, col));
        }
        assert_eq!(raster.set_pixel_count(), expected.len());
        for (row, col) in expected {
            assert_eq!(raster.grid[row as usize * 64 + col as usize], 1);
        }
    }

    #[test]
    fn offroad_count_cases() {
        let all_ones = MapGrid::all_drivable(8, 8, 1.0, [0.0, 0.0]);
        let traj: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 - 3.5, i as f64 - 3.5]).collect();
        let raster = rasterize(&traj, &all_ones);
        assert_eq!(offroad_count(&raster, &all_ones).unwrap(), 0);

        let all_zeros = grid(8, 8, 1.0, all_ones.origin, vec![0; 64]);
        assert_eq!(offroad_count(&raster, &all_zeros).unwrap(), raster.set_pixel_count());
        assert_eq!(raster.set_pixel_count(), 5);

        let empty = rasterize(&[], &all_ones);
        assert_eq!(offroad_count(&empty, &all_zeros).unwrap(), 0);
    }

    #[test]
    fn offroad_count_dimension_mismatch() {
        let a = MapGrid::all_drivable(8, 8, 1.0, [0.0, 0.0]);
        let b = MapGrid::all_drivable(4, 4, 1.0, [0.0, 0.0]);
        let raster = rasterize(&[[0.0, 0.0]], &a);
        assert!(offroad_count(&raster, &b).is_err());
    }

    #[test]
    fn penalty_zero_on_drivable_pixel_center() {
        let mut bits = vec![0u8; 64];
        bits[3 * 8 + 4] = 1;
        let map = grid(8, 8, 0.5, [0.0, 4.0], bits);
        let field = build_penalty_field(&map).unwrap();
        assert_eq!(field.sample(map.pixel_center(3, 4)), 0.0);
    }

    #[test]
    fn penalty_three_pixels_from_road_edge() {
        // Left half drivable; a point 3 px to the right of the edge column.
        let mut bits = vec![0u8; 16 * 16];
        for r in 0..16 {
            for c in 0..8 {
                bits[r * 16 + c] = 1;
            }
        }
        let map = grid(16, 16, 0.5, [0.0, 8.0], bits);
        let field = build_penalty_field(&map).unwrap();
        let p = map.pixel_center(8, 10); // 3 px from column 7
        let d = field.sample(p);
        assert!((d - 1.5).abs() <= 0.25, "distance {d}");
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut bits = vec![0u8; 32 * 32];
        for r in 0..32 {
            for c in 0..10 {
                bits[r * 32 + c] = 1;
            }
        }
        let map = grid(32, 32, 0.5, [0.0, 16.0], bits);
        let field = build_penalty_field(&map).unwrap();
        let h = 1e-6;
        // Sample points away from pixel-center lattice lines.
        for &p in &[[7.1, 9.3], [8.6, 4.2], [12.3, 11.7], [9.9, 2.6]] {
            let (_, grad) = field.sample_with_grad(p);
            let fx = (field.sample([p[0] + h, p[1]]) - field.sample([p[0] - h, p[1]])) / (2.0 * h);
            let fy = (field.sample([p[0], p[1] + h]) - field.sample([p[0], p[1] - h])) / (2.0 * h);
            assert!((grad[0] - fx).abs() < 1e-4, "ddx {} vs fd {fx}", grad[0]);
            assert!((grad[1] - fy).abs() < 1e-4, "ddy {} vs fd {fy}", grad[1]);
        }
    }

    #[test]
    fn taped_sample_backpropagates() {
        let mut bits = vec![0u8; 32 * 32];
        for r in 0..32 {
            for c in 0..10 {
                bits[r * 32 + c] = 1;
            }
        }
        let map = grid(32, 32, 0.5, [0.0, 16.0], bits);
        let field = build_penalty_field(&map).unwrap();
        let tape = Tape::<f64>::new();
        let x = tape.scalar_leaf(8.6);
        let y = tape.scalar_leaf(4.2);
        let s = field.sample_taped(&tape, x, y);
        let loss = tape.mul_scalar(s, 2.0);
        let grads = tape.backward(loss);
        let (_, g) = field.sample_with_grad([8.6, 4.2]);
        assert!((grads.of(x)[0] - 2.0 * g[0]).abs() < 1e-12);
        assert!((grads.of(y)[0] - 2.0 * g[1]).abs() < 1e-12);
    }

    #[test]
    fn no_drivable_pixel_is_an_error() {
        let map = grid(4, 4, 1.0, [0.0, 0.0], vec![0; 16]);
        assert!(matches!(build_penalty_field(&map), Err(Error::NoDrivablePixel)));
    }

    #[test]
    fn edt_matches_brute_force_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (w, h) = (rng.gen_range(3..20), rng.gen_range(3..20));
            let mut bits: Vec<u8> = (0..w * h).map(|_| u8::from(rng.gen_bool(0.3))).collect();
            if bits.iter().all(|&b| b == 0) {
                bits[0] = 1;
            }
            let map = grid(w, h, 1.0, [0.0, h as f64], bits.clone());
            let field = build_penalty_field(&map).unwrap();
            for r in 0..h {
                for c in 0..w {
                    let mut best = f64::INFINITY;
                    for rr in 0..h {
                        for cc in 0..w {
                            if bits[rr * w + cc] == 1 {
                                let d = ((r as f64 - rr as f64).powi(2)
                                    + (c as f64 - cc as f64).powi(2))
                                .sqrt();
                                best = best.min(d);
                            }
                        }
                    }
                    let got = field.dist[r * w + c];
                    assert!((got - best).abs() < 1e-9, "({r},{c}): edt {got} vs brute {best}");
                }
            }
        }
    }

    #[test]
    fn translation_equivariance_of_offroad_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let bits: Vec<u8> = (0..64 * 64).map(|_| u8::from(rng.gen_bool(0.6))).collect();
        let map = grid(64, 64, 0.5, [0.0, 32.0], bits.clone());
        let traj: Vec<[f64; 2]> = (0..40)
            .map(|_| [rng.gen_range(1.0..30.0), rng.gen_range(1.0..30.0)])
            .collect();
        let base = offroad_count(&rasterize(&traj, &map), &map).unwrap();
        for &shift in &[[13.7, -4.2], [-200.0, 55.5]] {
            let moved_map = grid(64, 64, 0.5, [shift[0], 32.0 + shift[1]], bits.clone());
            let moved: Vec<[f64; 2]> = traj.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
            assert_eq!(offroad_count(&rasterize(&moved, &moved_map), &moved_map).unwrap(), base);
        }
    }

    #[test]
    fn one_pixel_band_consistency() {
        // offroad_count == 0 implies every point's penalty <= resolution.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let bits: Vec<u8> = (0..32 * 32).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            let mut map = grid(32, 32, 0.5, [0.0, 16.0], bits);
            if map.driveable.iter().all(|&b| b == 0) {
                map.driveable[0] = 1;
            }
            let field = build_penalty_field(&map).unwrap();
            // Points strictly inside random drivable pixels.
            let mut points = Vec::new();
            for _ in 0..50 {
                let r = rng.gen_range(0..32);
                let c = rng.gen_range(0..32);
                if map.is_drivable(r, c) {
                    let center = map.pixel_center(r, c);
                    points.push([
                        center[0] + rng.gen_range(-0.24..0.24),
                        center[1] + rng.gen_range(-0.24..0.24),
                    ]);
                }
            }
            let raster = rasterize(&points, &map);
            assert_eq!(offroad_count(&raster, &map).unwrap(), 0);
            for p in &points {
                assert!(field.sample(*p) <= map.resolution + 1e-9);
            }
        }
    }

    #[test]
    fn field_is_lipschitz_in_pixel_units() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let bits: Vec<u8> = (0..24 * 24).map(|_| u8::from(rng.gen_bool(0.2))).collect();
        let mut map = grid(24, 24, 2.0, [0.0, 48.0], bits);
        if map.driveable.iter().all(|&b| b == 0) {
            map.driveable[100] = 1;
        }
        let field = build_penalty_field(&map).unwrap();
        for _ in 0..500 {
            let a = (rng.gen_range(0..24), rng.gen_range(0..24));
            let b = (rng.gen_range(0..24), rng.gen_range(0..24));
            let da = field.dist[a.0 * 24 + a.1];
            let db = field.dist[b.0 * 24 + b.1];
            let sep = ((a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2)).sqrt()
                * map.resolution;
            assert!((da - db).abs() <= sep + 1e-9);
        }
    }
}
