//! Baseline vertex estimator: plane fit, projection, ring edge points, one
//! RANSAC line per target edge and vertices at adjacent line intersections.
//!
//! The output has no geometric constraint: the four vertices need not form
//! the reference shape. Sparse clouds with fewer than two edge points on some
//! edge fail with [`Error::InsufficientEdgePoints`].

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::simlidar::Scan;
use crate::{seed, Error, Result, Vec2, Vec3};

/// Least-squares plane through `points`: unit normal (facing the sensor at
/// the origin) and centroid.
pub fn fit_plane_svd(points: &[Vec3]) -> Result<(Vec3, Vec3)> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: points.len() });
    }
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let m = DMatrix::from_fn(points.len(), 3, |i, j| points[i][j] - c[j]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if !(s2 > 1e-9 * s1.max(1e-300)) {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let row = vt.row(order[2]);
    let mut n = Vec3::new(row[0], row[1], row[2]).normalize();
    if n.dot(&c) > 0.0 {
        n = -n;
    }
    Ok((n, c))
}

/// Orthonormal in-plane frame: `e1` horizontal, `e2` pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub normal: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl PlaneFrame {
    pub fn new(normal: Vec3, origin: Vec3) -> Self {
        let mut e1 = Vec3::z().cross(&normal);
        if e1.norm() < 1e-9 {
            e1 = Vec3::x().cross(&normal);
        }
        let e1 = e1.normalize();
        let mut e2 = normal.cross(&e1);
        if e2.z < 0.0 {
            e2 = -e2;
        }
        PlaneFrame { origin, normal, e1, e2 }
    }

    pub fn project(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.e1), d.dot(&self.e2))
    }

    pub fn lift(&self, q: &Vec2) -> Vec3 {
        self.origin + self.e1 * q.x + self.e2 * q.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingEdge {
    pub point: Vec3,
    pub ring: usize,
    pub side: Side,
}

/// Per ring with at least two returns, the extreme points along the fitted
/// plane's horizontal axis.
pub fn extract_ring_edges(cloud: &Scan) -> Result<Vec<RingEdge>> {
    let (n, c) = fit_plane_svd(&cloud.positions())?;
    Ok(ring_edges_in(cloud, &PlaneFrame::new(n, c)))
}

fn ring_edges_in(cloud: &Scan, frame: &PlaneFrame) -> Vec<RingEdge> {
    let mut out = Vec::new();
    for ring in cloud.rings() {
        let pts: Vec<Vec3> = cloud.points.iter().filter(|p| p.ring == ring).map(|p| p.position()).collect();
        if pts.len() < 2 {
            continue;
        }
        let h = |p: &Vec3| (p - frame.origin).dot(&frame.e1);
        let lo = pts.iter().min_by(|a, b| h(a).total_cmp(&h(b))).unwrap();
        let hi = pts.iter().max_by(|a, b| h(a).total_cmp(&h(b))).unwrap();
        out.push(RingEdge { point: *lo, ring, side: Side::Left });
        out.push(RingEdge { point: *hi, ring, side: Side::Right });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier distance threshold, meters.
    pub threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { iterations: 200, threshold: 0.01, min_inliers: 2, seed: 0 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.threshold > 0.0) {
            return Err(Error::InvalidInput("RANSAC needs ≥1 iteration and a positive threshold".into()));
        }
        Ok(())
    }
}

/// Line `a x + b y + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    pub fn distance(&self, p: &Vec2) -> f64 {
        (self.a * p.x + self.b * p.y + self.c).abs()
    }

    fn through(p: &Vec2, q: &Vec2) -> Option<Line2> {
        let d = q - p;
        let n = d.norm();
        if n < 1e-12 {
            return None;
        }
        let (a, b) = (-d.y / n, d.x / n);
        Some(Line2 { a, b, c: -(a * p.x + b * p.y) })
    }

    /// Total least squares through `pts`.
    fn fit(pts: &[Vec2]) -> Option<Line2> {
        let c = pts.iter().sum::<Vec2>() / pts.len() as f64;
        let mut s = Matrix2::zeros();
        for p in pts {
            let d = p - c;
            s += d * d.transpose();
        }
        let eig = s.symmetric_eigen();
        let i = eig.eigenvalues.imin();
        let n = eig.eigenvectors.column(i).into_owned();
        if eig.eigenvalues.max() < 1e-24 {
            return None;
        }
        Some(Line2 { a: n.x, b: n.y, c: -(n.x * c.x + n.y * c.y) })
    }

    pub fn intersect(&self, other: &Line2) -> Result<Vec2> {
        let det = self.a * other.b - self.b * other.a;
        if det.abs() < 1e-12 {
            return Err(Error::Degenerate("edge lines are parallel".into()));
        }
        Ok(Vec2::new(
            (self.b * other.c - other.b * self.c) / det,
            (other.a * self.c - self.a * other.c) / det,
        ))
    }
}

/// Best-consensus line refined by total least squares over its inliers.
pub fn ransac_line(points: &[Vec2], params: &RansacParams) -> Result<(Line2, Vec<usize>)> {
    params.validate()?;
    if points.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: points.len() });
    }
    let n = points.len();
    let pairs: Vec<(usize, usize)> = if n * (n - 1) / 2 <= params.iterations {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = seed::rng(params.seed);
        (0..params.iterations)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect()
    };

    let mut best: Option<(Line2, Vec<usize>, f64)> = None;
    for (i, j) in pairs {
        let Some(line) = Line2::through(&points[i], &points[j]) else { continue };
        let inliers: Vec<usize> = (0..n).filter(|&k| line.distance(&points[k]) <= params.threshold).collect();
        let spread: f64 = inliers.iter().map(|&k| line.distance(&points[k])).sum();
        let better = match &best {
            None => true,
            Some((_, bi, bs)) => inliers.len() > bi.len() || (inliers.len() == bi.len() && spread < *bs),
        };
        if better {
            best = Some((line, inliers, spread));
        }
    }
    let (line, inliers, _) = best.ok_or_else(|| Error::Degenerate("all points coincide".into()))?;
    if inliers.len() < params.min_inliers {
        return Err(Error::Degenerate(format!("best line has {} inliers, need {}", inliers.len(), params.min_inliers)));
    }
    let support: Vec<Vec2> = inliers.iter().map(|&k| points[k]).collect();
    let refined = Line2::fit(&support).unwrap_or(line);
    let inliers = (0..n).filter(|&k| refined.distance(&points[k]) <= params.threshold).collect::<Vec<_>>();
    let inliers = if inliers.len() >= params.min_inliers { inliers } else { support_indices(&support, points) };
    Ok((refined, inliers))
}

fn support_indices(support: &[Vec2], points: &[Vec2]) -> Vec<usize> {
    (0..points.len()).filter(|&k| support.contains(&points[k])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    /// Vertices at in-plane angles 0°, 90°, 180°, 270° (right, top, left,
    /// bottom as seen in the plane frame).
    pub vertices: Vec<Vec3>,
    pub frame: PlaneFrame,
    pub lines: Vec<Line2>,
    /// Edge points assigned to each edge, counterclockwise from the
    /// upper-right edge.
    pub edge_counts: Vec<usize>,
}

/// Angular half-width around quadrant boundaries within which an edge point is
/// assigned by distance to the provisional lines instead of by angle.
const BOUNDARY_BAND: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Full baseline pipeline for a diamond target.
pub fn baseline_vertices(cloud: &Scan, params: &RansacParams) -> Result<BaselineResult> {
    params.validate()?;
    let positions = cloud.positions();
    let (normal, centroid) = fit_plane_svd(&positions)?;
    let frame = PlaneFrame::new(normal, centroid);
    let edges = ring_edges_in(cloud, &frame);
    let pts: Vec<Vec2> = edges.iter().map(|e| frame.project(&e.point)).collect();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 4];
    let mut deferred = Vec::new();
    for (k, p) in pts.iter().enumerate() {
        let ang = p.y.atan2(p.x).rem_euclid(TAU);
        let q = ((ang / FRAC_PI_2) as usize).min(3);
        let off = ang - q as f64 * FRAC_PI_2;
        if off < BOUNDARY_BAND || FRAC_PI_2 - off < BOUNDARY_BAND {
            deferred.push((k, ang));
        } else {
            groups[q].push(k);
        }
    }
    // Points near a vertex go to the closer provisional line of the two
    // edges meeting there.
    let provisional: Vec<Option<Line2>> = groups
        .iter()
        .map(|g| {
            let gp: Vec<Vec2> = g.iter().map(|&k| pts[k]).collect();
            ransac_line(&gp, params).ok().map(|r| r.0)
        })
        .collect();
    for (k, ang) in deferred {
        let boundary = ((ang / FRAC_PI_2).round() as usize) % 4;
        let (a, b) = ((boundary + 3) % 4, boundary);
        let pick = match (&provisional[a], &provisional[b]) {
            (Some(la), Some(lb)) => {
                if la.distance(&pts[k]) <= lb.distance(&pts[k]) {
                    a
                } else {
                    b
                }
            }
            (Some(_), None) => a,
            (None, Some(_)) => b,
            (None, None) => ((ang / FRAC_PI_2) as usize).min(3),
        };
        groups[pick].push(k);
    }

    let edge_counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    if let Some((edge, &got)) = edge_counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::InsufficientEdgePoints { edge, got });
    }
    let mut lines = Vec::with_capacity(4);
    for (i, g) in groups.iter().enumerate() {
        let gp: Vec<Vec2> = g.iter().map(|&k| pts[k]).collect();
        let sub = RansacParams { seed: seed::derive(params.seed, i as u64), ..*params };
        lines.push(ransac_line(&gp, &sub)?.0);
    }
    // edge i spans angles [i·90°, (i+1)·90°]; vertex at i·90° joins edges i−1 and i
    let vertices = (0..4)
        .map(|i| lines[(i + 3) % 4].intersect(&lines[i]).map(|q| frame.lift(&q)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineResult { vertices, frame, lines, edge_counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{euler_xyz_to_rotation, RigidTransform3};
    use crate::simlidar::{alternating_bias, face_on_pose, perturb_scan, simulate_scan, LidarPoint, LidarSpec};
    use crate::targets::{edge_lines, make_diamond};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn match_rmse(a: &[Vec3], b: &[Vec3]) -> f64 {
        let mut best = f64::INFINITY;
        for s in 0..4 {
            for dir in [1i32, -1] {
                let e: f64 = (0..4).map(|i| (a[i] - b[((s as i32 + dir * i as i32).rem_euclid(4)) as usize]).norm_squared()).sum();
                best = best.min((e / 4.0).sqrt());
            }
        }
        best
    }

    #[test]
    fn plane_fit_examples() {
        let pts = vec![Vec3::new(1.0, 0.0, 2.0), Vec3::new(0.0, 1.0, 2.0), Vec3::new(-1.0, -1.0, 2.0), Vec3::new(2.0, 1.0, 2.0)];
        let (n, c) = fit_plane_svd(&pts).unwrap();
        assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((c.z - 2.0).abs() < 1e-12);
        assert!(fit_plane_svd(&pts[..2]).is_err());
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect();
        assert!(fit_plane_svd(&line).is_err());
    }

    #[test]
    fn noisy_plane_normal() {
        let target = make_diamond(0.8, 0.02).unwrap();
        let pose = RigidTransform3::new(euler_xyz_to_rotation(0.0, 15.0, 80.0), Vec3::new(0.3, 4.0, 0.0));
        let spec = LidarSpec { range_noise: 0.01, ..LidarSpec::default() };
        let scan = simulate_scan(&spec, &target, &pose, 7).unwrap();
        let (n, _) = fit_plane_svd(&scan.positions()).unwrap();
        let truth = pose.rotation.rotate(&Vec3::x());
        let ang = n.dot(&truth).abs().min(1.0).acos().to_degrees();
        assert!(ang < 2.0, "{ang}");
        assert!((n.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring_edges_two_per_ring() {
        let target = make_diamond(0.8, 0.02).unwrap();
        let pose = face_on_pose(6.0);
        let scan = simulate_scan(&LidarSpec::default(), &target, &pose, 1).unwrap();
        let mut rings: Vec<usize> = scan.rings();
        rings.retain(|r| scan.points.iter().filter(|p| p.ring == *r).count() >= 2);
        let edges = extract_ring_edges(&scan).unwrap();
        assert_eq!(edges.len(), 2 * rings.len());

        // every edge point lies within one azimuth step of the boundary
        let lines = edge_lines(&target).unwrap();
        let eq = 6.0 * 0.4f64.to_radians();
        let inv = pose.inverse();
        for e in &edges {
            let q = inv.apply(&e.point);
            let d = lines.lines.iter().map(|l| l.signed_distance(q.y, q.z)).fold(f64::INFINITY, f64::min);
            assert!(d < eq * 1.05, "{d}");
        }

        let single = Scan::new(vec![LidarPoint { x: 0.0, y: 5.0, z: 0.0, ring: 0, intensity: 1.0 }], 0);
        assert!(ring_edges_in(&single, &PlaneFrame::new(-Vec3::y(), Vec3::new(0.0, 5.0, 0.0))).is_empty());
    }

    #[test]
    fn ransac_cases() {
        let p = RansacParams::default();
        let on: Vec<Vec2> = (0..8).map(|i| Vec2::new(i as f64 * 0.1, 0.5 * i as f64 * 0.1 + 0.2)).collect();
        let (l, inl) = ransac_line(&on, &p).unwrap();
        assert!(on.iter().all(|q| l.distance(q) < 1e-12));
        assert_eq!(inl.len(), 8);

        let mut with_outliers = on.clone();
        with_outliers.push(Vec2::new(0.3, 1.5));
        with_outliers.push(Vec2::new(0.6, -0.8));
        let (l, inl) = ransac_line(&with_outliers, &p).unwrap();
        assert_eq!(inl, (0..8).collect::<Vec<_>>());
        assert!(l.distance(&Vec2::new(1.0, 0.7)) < 1e-12);

        let two = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)];
        let (l, _) = ransac_line(&two, &p).unwrap();
        assert!(l.distance(&two[0]) < 1e-12 && l.distance(&two[1]) < 1e-12);

        assert!(ransac_line(&[Vec2::new(1.0, 1.0); 3], &p).is_err());
        assert!(ransac_line(&two, &RansacParams { iterations: 0, ..p }).is_err());
    }

    #[test]
    fn ransac_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.003).unwrap();
        let pts: Vec<Vec2> = (0..60).map(|i| Vec2::new(i as f64 * 0.01, 0.3 + noise.sample(&mut rng))).collect();
        let p = RansacParams { seed: 9, ..RansacParams::default() };
        assert_eq!(ransac_line(&pts, &p).unwrap(), ransac_line(&pts, &p).unwrap());
    }

    #[test]
    fn dense_diamond_vertices() {
        let target = make_diamond(0.8, 0.02).unwrap();
        let pose = face_on_pose(2.0);
        let scan = simulate_scan(&LidarSpec::default(), &target, &pose, 1).unwrap();
        let res = baseline_vertices(&scan, &RansacParams::default()).unwrap();
        let truth: Vec<Vec3> = target.vertices_3d().iter().map(|v| pose.apply(v)).collect();
        let rmse = match_rmse(&res.vertices, &truth);
        assert!(rmse < 0.02, "{rmse}");
        for v in &res.vertices {
            assert!(res.frame.normal.dot(&(v - res.frame.origin)).abs() < 1e-12);
        }
    }

    #[test]
    fn biased_vertices_not_congruent() {
        let target = make_diamond(0.8, 0.02).unwrap();
        let pose = face_on_pose(4.0);
        let scan = simulate_scan(&LidarSpec::default(), &target, &pose, 2).unwrap();
        let scan = perturb_scan(&scan, &alternating_bias(32, 0.03), 0.005, 2).unwrap();
        let res = baseline_vertices(&scan, &RansacParams::default()).unwrap();
        let sides: Vec<f64> = (0..4).map(|i| (res.vertices[(i + 1) % 4] - res.vertices[i]).norm()).collect();
        let spread = sides.iter().cloned().fold(f64::MIN, f64::max) - sides.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.0);
    }

    #[test]
    fn sparse_scan_fails() {
        let target = make_diamond(1.0, 0.02).unwrap();
        let spec = LidarSpec::default().subset(&[20, 21, 22]).unwrap();
        let scan = simulate_scan(&spec, &target, &face_on_pose(30.0), 1).unwrap();
        assert!(matches!(baseline_vertices(&scan, &RansacParams::default()), Err(Error::InsufficientEdgePoints { .. })));
    }
}
