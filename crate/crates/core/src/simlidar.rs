//! Synthetic spinning-LiDAR scans of posed planar targets.
//!
//! Rays follow the sensor's spherical convention: elevation `θ`, azimuth `φ`
//! measured from the forward `y` axis toward `x`,
//! `d = (cos θ sin φ, cos θ cos φ, sin θ)`.
//! A pose maps the target frame into the LiDAR frame; the target lies in its
//! own `y`-`z` plane with normal `x`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{RigidTransform3, Rotation3};
use crate::targets::{edge_lines, roi_contains, PolygonTarget};
use crate::{seed, Error, Mat3, Result, Vec3};

/// Constant intensity written for every simulated return.
pub const DEFAULT_INTENSITY: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    /// Ring elevations in degrees, strictly increasing. Ring id = index.
    pub elevations_deg: Vec<f64>,
    pub azimuth_step_deg: f64,
    /// Standard deviation of Gaussian range noise, meters.
    pub range_noise: f64,
    /// Systematic range offset per ring, meters.
    pub ring_bias: Vec<f64>,
}

impl Default for LidarSpec {
    /// 32 rings: 25 at 0.33° spacing from −5° up to 2.92°, three below and
    /// two above at 1.36° spacing, plus the −25° and +15° extremes.
    fn default() -> Self {
        let mut elevations_deg = vec![-25.0, -9.08, -7.72, -6.36];
        elevations_deg.extend((0..25).map(|k| -5.0 + 0.33 * k as f64));
        elevations_deg.extend([4.36, 5.72, 15.0]);
        let n = elevations_deg.len();
        LidarSpec { elevations_deg, azimuth_step_deg: 0.4, range_noise: 0.0, ring_bias: vec![0.0; n] }
    }
}

impl LidarSpec {
    pub fn ring_count(&self) -> usize {
        self.elevations_deg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.elevations_deg.is_empty() {
            return Err(Error::InvalidInput("LiDAR spec has no rings".into()));
        }
        if self.elevations_deg.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("ring elevations must be strictly increasing".into()));
        }
        if !(self.azimuth_step_deg > 0.0) {
            return Err(Error::InvalidInput(format!("azimuth step must be positive, got {}", self.azimuth_step_deg)));
        }
        if !(self.range_noise >= 0.0) {
            return Err(Error::InvalidInput("range noise must be non-negative".into()));
        }
        if self.ring_bias.len() != self.ring_count() {
            return Err(Error::LengthMismatch { left: self.ring_bias.len(), right: self.ring_count() });
        }
        Ok(())
    }

    /// Same rings, no noise or bias.
    pub fn noise_free(&self) -> Self {
        LidarSpec { range_noise: 0.0, ring_bias: vec![0.0; self.ring_count()], ..self.clone() }
    }

    /// Copy keeping only the given rings, renumbered in order.
    pub fn subset(&self, rings: &[usize]) -> Result<Self> {
        let mut rings = rings.to_vec();
        rings.sort_unstable();
        rings.dedup();
        if let Some(&r) = rings.iter().find(|&&r| r >= self.ring_count()) {
            return Err(Error::InvalidInput(format!("ring {r} out of range")));
        }
        Ok(LidarSpec {
            elevations_deg: rings.iter().map(|&r| self.elevations_deg[r]).collect(),
            ring_bias: rings.iter().map(|&r| self.ring_bias[r]).collect(),
            ..self.clone()
        })
    }
}

/// Unit ray for elevation `theta` and azimuth `phi` (radians).
pub fn ray_direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(ct * sp, ct * cp, st)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub ring: usize,
    pub intensity: f64,
}

impl LidarPoint {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    fn moved_to(&self, p: Vec3) -> Self {
        LidarPoint { x: p.x, y: p.y, z: p.z, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Scan {
    pub points: Vec<LidarPoint>,
    /// Position of this scan within a sequence.
    pub index: usize,
}

impl Scan {
    pub fn new(points: Vec<LidarPoint>, index: usize) -> Self {
        Scan { points, index }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(LidarPoint::position).collect()
    }

    /// Concatenates several scans into one cloud.
    pub fn merge(scans: &[Scan]) -> Scan {
        Scan { points: scans.iter().flat_map(|s| s.points.iter().copied()).collect(), index: 0 }
    }

    pub fn rings(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.points.iter().map(|p| p.ring).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    pub fn read_csv(path: &Path) -> Result<Scan> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let points = rdr.deserialize().collect::<std::result::Result<Vec<LidarPoint>, _>>()?;
        Ok(Scan { points, index: 0 })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pose placing the target upright and facing the sensor at `distance` along
/// the forward axis. Target `y` maps to LiDAR `−x`, target `z` to LiDAR `z`.
pub fn face_on_pose(distance: f64) -> RigidTransform3 {
    RigidTransform3::new(face_on_rotation(), Vec3::new(0.0, distance, 0.0))
}

/// Rotation taking target `x` to LiDAR `y` (a quarter turn about `z`).
pub fn face_on_rotation() -> Rotation3 {
    Rotation3::from_matrix(Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)).expect("valid rotation")
}

/// Ray-casts every (ring, azimuth) pair against the posed target. The spec's
/// ring bias and range noise are applied along each ray.
pub fn simulate_scan(spec: &LidarSpec, target: &PolygonTarget, pose: &RigidTransform3, seed: u64) -> Result<Scan> {
    spec.validate()?;
    let normal = pose.rotation.rotate(&Vec3::x());
    let offset = normal.dot(&pose.translation);
    if offset.abs() < 1e-12 {
        return Err(Error::Degenerate("target plane passes through the sensor origin".into()));
    }
    let lines = edge_lines(target)?;
    let inv = pose.inverse();
    let mut rng = seed::rng(seed);
    let step = spec.azimuth_step_deg.to_radians();
    let phase = rng.random_range(0.0..step);
    let n_az = (std::f64::consts::TAU / step).round() as usize;
    let normal_dist = Normal::new(0.0, spec.range_noise.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut points = Vec::new();
    for (ring, elev) in spec.elevations_deg.iter().enumerate() {
        let theta = elev.to_radians();
        for k in 0..n_az {
            let d = ray_direction(theta, phase + k as f64 * step);
            let denom = normal.dot(&d);
            if denom.abs() < 1e-12 {
                continue;
            }
            let range = offset / denom;
            if range <= 0.0 {
                continue;
            }
            let q = inv.apply(&(d * range));
            let q = Vec3::new(0.0, q.y, q.z);
            if !roi_contains(target, &lines, &q) {
                continue;
            }
            let mut r = range + spec.ring_bias[ring];
            if spec.range_noise > 0.0 {
                r += normal_dist.sample(&mut rng);
            }
            let p = d * r;
            points.push(LidarPoint { x: p.x, y: p.y, z: p.z, ring, intensity: DEFAULT_INTENSITY });
        }
    }
    Ok(Scan { points, index: 0 })
}

/// Several scans of the same target with independent azimuth phase and noise.
pub fn simulate_scans(
    spec: &LidarSpec,
    target: &PolygonTarget,
    pose: &RigidTransform3,
    count: usize,
    master_seed: u64,
) -> Result<Vec<Scan>> {
    (0..count)
        .map(|i| {
            let mut s = simulate_scan(spec, target, pose, seed::derive(master_seed, i as u64))?;
            s.index = i;
            Ok(s)
        })
        .collect()
}

/// Spacing of adjacent returns on one ring at `distance`.
pub fn quantization_error(distance: f64, spec: &LidarSpec) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::InvalidInput(format!("distance must be positive, got {distance}")));
    }
    Ok(distance * spec.azimuth_step_deg.to_radians())
}

/// Moves every point along its ray by `bias[ring] + N(0, σ²)`.
pub fn perturb_scan(scan: &Scan, per_ring_bias: &[f64], sigma: f64, seed: u64) -> Result<Scan> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput("sigma must be non-negative".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut points = Vec::with_capacity(scan.len());
    for p in &scan.points {
        let bias = *per_ring_bias
            .get(p.ring)
            .ok_or_else(|| Error::InvalidInput(format!("no bias for ring {}", p.ring)))?;
        let pos = p.position();
        let r = pos.norm();
        if r == 0.0 {
            points.push(*p);
            continue;
        }
        let noise = if sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        points.push(p.moved_to(pos * ((r + bias + noise) / r)));
    }
    Ok(Scan { points, index: scan.index })
}

/// Bias pattern `+a, −a, +a, …` by ring id.
pub fn alternating_bias(rings: usize, amplitude: f64) -> Vec<f64> {
    (0..rings).map(|r| if r % 2 == 0 { amplitude } else { -amplitude }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_diamond, DEFAULT_EPSILON};

    fn diamond() -> PolygonTarget {
        make_diamond(0.805, DEFAULT_EPSILON).unwrap()
    }

    #[test]
    fn default_spec_shape() {
        let s = LidarSpec::default();
        s.validate().unwrap();
        assert_eq!(s.ring_count(), 32);
        assert_eq!(s.elevations_deg[0], -25.0);
        assert_eq!(*s.elevations_deg.last().unwrap(), 15.0);
        let dense = s.elevations_deg.iter().filter(|e| (-5.0..=3.0).contains(*e)).count();
        assert_eq!(dense, 25);
    }

    #[test]
    fn quantization_examples() {
        let s = LidarSpec::default();
        assert!((quantization_error(30.0, &s).unwrap() - 0.2094).abs() < 1e-4);
        assert!((quantization_error(2.0, &s).unwrap() - 0.01396).abs() < 1e-4);
        assert!((quantization_error(1e-4, &s).unwrap() - 6.98e-7).abs() < 1e-8);
        assert!(quantization_error(0.0, &s).is_err());
    }

    #[test]
    fn noise_free_points_lie_on_plane() {
        let pose = RigidTransform3::new(crate::geom::euler_xyz_to_rotation(5.0, -10.0, 100.0), Vec3::new(0.3, 4.0, 0.2));
        let scan = simulate_scan(&LidarSpec::default(), &diamond(), &pose, 3).unwrap();
        assert!(scan.len() > 100);
        let n = pose.rotation.rotate(&Vec3::x());
        for p in &scan.points {
            assert!(n.dot(&(p.position() - pose.translation)).abs() < 1e-10);
        }
    }

    #[test]
    fn target_out_of_view_is_empty() {
        // far above the +15° ring
        let pose = RigidTransform3::new(face_on_rotation(), Vec3::new(0.0, 2.0, 5.0));
        assert!(simulate_scan(&LidarSpec::default(), &diamond(), &pose, 1).unwrap().is_empty());
        // behind the sensor plane along the normal
        let behind = face_on_pose(-2.0);
        let scan = simulate_scan(&LidarSpec::default(), &diamond(), &behind, 1).unwrap();
        assert!(scan.points.iter().all(|p| p.y < 0.0));
    }

    #[test]
    fn deterministic_and_monotone_counts() {
        let spec = LidarSpec { range_noise: 0.01, ..LidarSpec::default() };
        let a = simulate_scan(&spec, &diamond(), &face_on_pose(5.0), 9).unwrap();
        let b = simulate_scan(&spec, &diamond(), &face_on_pose(5.0), 9).unwrap();
        assert_eq!(a, b);
        let mut last = usize::MAX;
        for d in [1.5, 2.0, 4.0, 8.0, 16.0, 30.0] {
            let n = simulate_scan(&spec, &diamond(), &face_on_pose(d), 9).unwrap().len();
            assert!(n <= last, "{n} > {last} at {d}");
            last = n;
        }
    }

    #[test]
    fn perturbation() {
        let scan = simulate_scan(&LidarSpec::default(), &diamond(), &face_on_pose(3.0), 2).unwrap();
        let same = perturb_scan(&scan, &[0.0; 32], 0.0, 1).unwrap();
        assert_eq!(same, scan);
        let grown = perturb_scan(&scan, &[0.05; 32], 0.0, 1).unwrap();
        for (a, b) in scan.points.iter().zip(&grown.points) {
            assert!((b.position().norm() - a.position().norm() - 0.05).abs() < 1e-9);
            assert_eq!(a.ring, b.ring);
        }
        assert!(perturb_scan(&scan, &[0.0; 3], 0.0, 1).is_err());
    }

    #[test]
    fn alternating_bias_thickness() {
        let pose = face_on_pose(3.0);
        let scan = simulate_scan(&LidarSpec::default(), &diamond(), &pose, 4).unwrap();
        let biased = perturb_scan(&scan, &alternating_bias(32, 0.03), 0.0, 4).unwrap();
        let inv = pose.inverse();
        let xs: Vec<f64> = biased.points.iter().map(|p| inv.apply(&p.position()).x).collect();
        let thick = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((0.055..=0.07).contains(&thick), "thickness {thick}");
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.csv");
        let scan = simulate_scan(&LidarSpec::default(), &diamond(), &face_on_pose(6.0), 2).unwrap();
        scan.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,z,ring,intensity"));
        let back = Scan::read_csv(&path).unwrap();
        assert_eq!(back.len(), scan.len());
        for (a, b) in back.points.iter().zip(&scan.points) {
            assert!((a.position() - b.position()).norm() < 1e-12);
        }
    }
}
