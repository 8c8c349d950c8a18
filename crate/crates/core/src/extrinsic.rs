//! LiDAR-to-camera extrinsic estimation.
//!
//! Two estimators share the same inputs: [`calibrate_pnp`] minimizes the
//! squared reprojection error of vertex/corner pairs, [`calibrate_iou`]
//! maximizes the overlap of projected target polygons with their image
//! polygons. Both refine a supplied guess.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, CameraIntrinsics, PixelPoint};
use crate::geom::RigidTransform3;
use crate::optim::{LevenbergMarquardt, NelderMead};
use crate::{Error, Result, Vec2, Vec3};

/// Convex polygon in pixel coordinates, counterclockwise in `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2 {
    vertices: Vec<Vec2>,
}

impl Polygon2 {
    /// Accepts either orientation; fails unless the input is strictly convex
    /// with positive area.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self> {
        let a = signed_area(&vertices)?;
        if !(a.abs() > 0.0) {
            return Err(Error::Degenerate("polygon has zero area".into()));
        }
        if a < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let (p, q, r) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            if (q - p).perp(&(r - q)) <= 0.0 {
                return Err(Error::InvalidInput("polygon is not strictly convex".into()));
            }
        }
        Ok(Polygon2 { vertices })
    }

    pub fn from_pixels(pixels: &[PixelPoint]) -> Result<Self> {
        convex_hull_ccw(&pixels.iter().map(|p| Vec2::new(p.u, p.v)).collect::<Vec<_>>())
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).map(f64::abs).unwrap_or(0.0)
    }
}

fn signed_area(v: &[Vec2]) -> Result<f64> {
    if v.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: v.len() });
    }
    let n = v.len();
    Ok(0.5 * (0..n).map(|i| v[i].perp(&v[(i + 1) % n])).sum::<f64>())
}

/// Polygon area by the shoelace formula.
pub fn shoelace_area(vertices: &[Vec2]) -> Result<f64> {
    signed_area(vertices).map(f64::abs)
}

/// Convex hull by Andrew's monotone chain; collinear boundary points are
/// dropped.
pub fn convex_hull_ccw(points: &[Vec2]) -> Result<Polygon2> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: points.len() });
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    let cross = |o: &Vec2, a: &Vec2, b: &Vec2| (a - o).perp(&(b - o));
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::Degenerate("points are collinear".into()));
    }
    Ok(Polygon2 { vertices: hull })
}

/// Clips `a` by every edge of `b`. Returns `None` when the overlap has no
/// area.
pub fn polygon_intersection(a: &Polygon2, b: &Polygon2) -> Option<Polygon2> {
    let mut out = a.vertices.clone();
    let m = b.vertices.len();
    for i in 0..m {
        let (p, q) = (b.vertices[i], b.vertices[(i + 1) % m]);
        let side = |x: &Vec2| (q - p).perp(&(x - p));
        let input = std::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let (cur, next) = (input[j], input[(j + 1) % n]);
            let (sc, sn) = (side(&cur), side(&next));
            if sc >= 0.0 {
                out.push(cur);
            }
            if (sc >= 0.0) != (sn >= 0.0) {
                let t = sc / (sc - sn);
                out.push(cur + (next - cur) * t);
            }
        }
        if out.len() < 3 {
            return None;
        }
    }
    let area = signed_area(&out).ok()?;
    if !(area > 1e-12 * a.area().max(b.area()).max(1e-300)) {
        return None;
    }
    Some(Polygon2 { vertices: out })
}

/// Intersection over union of two convex polygons.
pub fn iou(a: &Polygon2, b: &Polygon2) -> Result<f64> {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 && ab <= 0.0 {
        return Err(Error::Degenerate("both polygons have zero area".into()));
    }
    let inter = polygon_intersection(a, b).map(|p| p.area()).unwrap_or(0.0);
    Ok((inter / (aa + ab - inter)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub vertex: Vec3,
    pub corner: PixelPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpResult {
    pub extrinsic: RigidTransform3,
    /// Root mean square reprojection error, pixels.
    pub rms_px: f64,
    pub iterations: usize,
    /// Sum of squared residuals after each accepted step.
    pub cost_history: Vec<f64>,
}

/// Residual charged per coordinate when a vertex falls behind the camera.
const BEHIND_PENALTY: f64 = 1e6;

/// Root mean square pixel distance between projected vertices and corners.
pub fn reprojection_rms(corrs: &[Correspondence], extrinsic: &RigidTransform3, k: &CameraIntrinsics) -> Result<f64> {
    if corrs.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut acc = 0.0;
    for c in corrs {
        let p = project_point(&c.vertex, extrinsic, k)?;
        acc += (p.u - c.corner.u).powi(2) + (p.v - c.corner.v).powi(2);
    }
    Ok((acc / corrs.len() as f64).sqrt())
}

/// Minimizes the squared reprojection error over the six exponential
/// coordinates of an update applied to `init`.
pub fn calibrate_pnp(corrs: &[Correspondence], k: &CameraIntrinsics, init: &RigidTransform3) -> Result<PnpResult> {
    if corrs.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: corrs.len() });
    }
    k.validate()?;
    let lm = LevenbergMarquardt { max_iterations: 100, ..Default::default() };
    let res = lm.solve(
        |x, out| {
            let h = init.perturbed(&Vector6::from_column_slice(x));
            out.clear();
            for c in corrs {
                match project_point(&c.vertex, &h, k) {
                    Ok(p) => out.extend_from_slice(&[p.u - c.corner.u, p.v - c.corner.v]),
                    Err(_) => out.extend_from_slice(&[BEHIND_PENALTY, BEHIND_PENALTY]),
                }
            }
        },
        &[0.0; 6],
    );
    if !res.cost.is_finite() {
        return Err(Error::Optimizer("reprojection cost diverged".into()));
    }
    let extrinsic = init.perturbed(&Vector6::from_column_slice(&res.x));
    let rms_px = reprojection_rms(corrs, &extrinsic, k)
        .map_err(|_| Error::Optimizer("a vertex ended behind the camera".into()))?;
    Ok(PnpResult { extrinsic, rms_px, iterations: res.iterations, cost_history: res.history })
}

/// LiDAR vertices of one target and its image polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonPair {
    pub vertices: Vec<Vec3>,
    pub image: Polygon2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouResult {
    pub extrinsic: RigidTransform3,
    pub mean_iou: f64,
    pub evaluations: usize,
}

fn projected_polygon(vertices: &[Vec3], h: &RigidTransform3, k: &CameraIntrinsics) -> Option<Polygon2> {
    let px: Option<Vec<Vec2>> = vertices
        .iter()
        .map(|v| project_point(v, h, k).ok().map(|p| Vec2::new(p.u, p.v)))
        .collect();
    convex_hull_ccw(&px?).ok()
}

/// Mean IoU over the pairs; `0` for targets that do not project.
pub fn mean_iou(pairs: &[PolygonPair], h: &RigidTransform3, k: &CameraIntrinsics) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|p| projected_polygon(&p.vertices, h, k).and_then(|poly| iou(&poly, &p.image).ok()).unwrap_or(0.0))
        .sum();
    total / pairs.len().max(1) as f64
}

/// Maximizes the mean IoU of projected target polygons by simplex search
/// from `init`.
pub fn calibrate_iou(pairs: &[PolygonPair], k: &CameraIntrinsics, init: &RigidTransform3) -> Result<IouResult> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no target polygons".into()));
    }
    k.validate()?;
    if mean_iou(pairs, init, k) <= 0.0 {
        return Err(Error::NoOverlap);
    }
    let nm = NelderMead { max_evaluations: 20_000, value_tolerance: 1e-12, parameter_tolerance: 1e-9, max_restarts: 6 };
    let res = nm.minimize(
        |x| -mean_iou(pairs, &init.perturbed(&Vector6::from_column_slice(x)), k),
        &[0.0; 6],
        &[0.01, 0.01, 0.01, 0.02, 0.02, 0.02],
    );
    let extrinsic = init.perturbed(&Vector6::from_column_slice(&res.x));
    Ok(IouResult { mean_iou: mean_iou(pairs, &extrinsic, k), extrinsic, evaluations: res.evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project_points;
    use crate::geom::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(x: f64, y: f64, s: f64) -> Polygon2 {
        Polygon2::new(vec![Vec2::new(x, y), Vec2::new(x + s, y), Vec2::new(x + s, y + s), Vec2::new(x, y + s)]).unwrap()
    }

    #[test]
    fn shoelace_examples() {
        assert_eq!(shoelace_area(square(0.0, 0.0, 1.0).vertices()).unwrap(), 1.0);
        assert_eq!(shoelace_area(&[Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 2.0)]).unwrap(), 2.0);
        assert!(shoelace_area(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
    }

    fn random_convex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec2> {
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let c = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let r = rng.random_range(0.5..3.0);
        angles.iter().map(|a| c + Vec2::new(a.cos(), a.sin()) * r).collect()
    }

    #[test]
    fn shoelace_matches_fan_triangulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v = random_convex(&mut rng, 6);
            let fan: f64 = (1..5).map(|i| 0.5 * (v[i] - v[0]).perp(&(v[i + 1] - v[0])).abs()).sum();
            assert!((shoelace_area(&v).unwrap() - fan).abs() < 1e-10);
            let mut rotated = v.clone();
            rotated.rotate_left(2);
            let moved: Vec<Vec2> = v.iter().map(|p| p + Vec2::new(3.0, -7.0)).collect();
            assert!((shoelace_area(&rotated).unwrap() - fan).abs() < 1e-10);
            assert!((shoelace_area(&moved).unwrap() - fan).abs() < 1e-10);
        }
    }

    #[test]
    fn hull_examples() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0), Vec2::new(0.5, 0.5), Vec2::new(0.5, 0.0)];
        let h = convex_hull_ccw(&pts).unwrap();
        assert_eq!(h.vertices().len(), 4);
        let sq = square(0.0, 0.0, 1.0);
        let h2 = convex_hull_ccw(sq.vertices()).unwrap();
        assert_eq!(h2.area(), 1.0);
        assert!(h2.vertices().iter().all(|v| sq.vertices().contains(v)));
        assert!(convex_hull_ccw(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)]).is_err());
    }

    #[test]
    fn hull_matches_brute_force_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec2> = (0..200).map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let hull = convex_hull_ccw(&pts).unwrap();
        // a point is extreme iff it lies in no triangle of the other points
        let inside = |p: &Vec2, a: &Vec2, b: &Vec2, c: &Vec2| {
            let d1 = (b - a).perp(&(p - a));
            let d2 = (c - b).perp(&(p - b));
            let d3 = (a - c).perp(&(p - c));
            (d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0) || (d1 <= 0.0 && d2 <= 0.0 && d3 <= 0.0)
        };
        // restrict the O(n³) search to candidates near the boundary
        let near: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].x.abs().max(pts[i].y.abs()) > 0.8).collect();
        for &i in &near {
            let mut extreme = true;
            'outer: for a in 0..pts.len() {
                for b in a + 1..pts.len() {
                    for c in b + 1..pts.len() {
                        if [a, b, c].contains(&i) {
                            continue;
                        }
                        if inside(&pts[i], &pts[a], &pts[b], &pts[c]) {
                            extreme = false;
                            break 'outer;
                        }
                    }
                }
            }
            assert_eq!(extreme, hull.vertices().contains(&pts[i]), "point {i}");
        }
        for v in hull.vertices() {
            assert!(pts.contains(v));
        }
    }

    #[test]
    fn intersection_examples() {
        let a = square(0.0, 0.0, 1.0);
        assert!((polygon_intersection(&a, &a).unwrap().area() - 1.0).abs() < 1e-15);
        assert!(polygon_intersection(&a, &square(3.0, 0.0, 1.0)).is_none());
        assert!(polygon_intersection(&a, &square(1.0, 0.0, 1.0)).is_none());
        let b = square(0.5, 0.0, 1.0);
        assert!((polygon_intersection(&a, &b).unwrap().area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iou_examples() {
        let a = square(0.0, 0.0, 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &square(3.0, 0.0, 1.0)).unwrap(), 0.0);
        assert!((iou(&a, &square(0.5, 0.0, 1.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_symmetric_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a = Polygon2::new(random_convex(&mut rng, 5)).unwrap();
            let b = Polygon2::new(random_convex(&mut rng, 7)).unwrap();
            assert!((iou(&a, &b).unwrap() - iou(&b, &a).unwrap()).abs() < 1e-12);
        }
        let a = square(0.0, 0.0, 1.0);
        let mut last = 1.0;
        for k in 1..=10 {
            let v = iou(&a, &square(0.1 * k as f64, 0.0, 1.0)).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    fn scene(rng: &mut ChaCha8Rng) -> (Vec<Vec<Vec3>>, RigidTransform3, CameraIntrinsics) {
        let k = CameraIntrinsics::new(800.0, 800.0, 0.0, 640.0, 360.0).unwrap();
        let gt = RigidTransform3::new(
            so3_exp(&Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05))),
            Vec3::new(0.1, -0.2, 0.05),
        );
        let quad = |c: Vec3, tilt: f64| -> Vec<Vec3> {
            let r = so3_exp(&Vec3::new(0.0, tilt, 0.3));
            [(0.5, 0.0), (0.1, 0.45), (-0.5, 0.1), (-0.1, -0.5)].iter().map(|(x, y)| c + r.rotate(&Vec3::new(*x, *y, 0.0))).collect()
        };
        (vec![quad(Vec3::new(-1.2, 0.2, 6.0), 0.4), quad(Vec3::new(1.3, -0.1, 8.0), -0.5)], gt, k)
    }

    fn perturb(gt: &RigidTransform3, deg: f64, m: f64) -> RigidTransform3 {
        let w = Vec3::new(1.0, -1.0, 1.0).normalize() * deg.to_radians();
        gt.perturbed(&Vector6::new(w.x, w.y, w.z, m, -m * 0.6, m * 0.8))
    }

    #[test]
    fn pnp_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let (targets, gt, k) = scene(&mut rng);
            let corrs: Vec<Correspondence> = targets
                .iter()
                .flatten()
                .map(|v| Correspondence { vertex: *v, corner: project_point(v, &gt, &k).unwrap() })
                .collect();
            let res = calibrate_pnp(&corrs, &k, &perturb(&gt, 5.0, 0.05)).unwrap();
            let rel = res.extrinsic.inverse().compose(&gt);
            assert!(rel.rotation.angle().to_degrees() < 0.1);
            assert!((res.extrinsic.translation - gt.translation).norm() < 2e-3);
            assert!(res.rms_px < 1e-6);
            assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]));

            let fixed = calibrate_pnp(&corrs, &k, &gt).unwrap();
            assert!(fixed.rms_px < 1e-9);
            assert!(res.rms_px.is_finite());
        }
    }

    #[test]
    fn pnp_rejects_short_input() {
        let k = CameraIntrinsics::new(800.0, 800.0, 0.0, 640.0, 360.0).unwrap();
        let c = Correspondence { vertex: Vec3::new(0.0, 0.0, 5.0), corner: PixelPoint::new(640.0, 360.0) };
        assert!(calibrate_pnp(&[c.clone(), c.clone(), c], &k, &RigidTransform3::identity()).is_err());
    }

    fn pairs_for(targets: &[Vec<Vec3>], gt: &RigidTransform3, k: &CameraIntrinsics) -> Vec<PolygonPair> {
        targets
            .iter()
            .map(|t| PolygonPair { vertices: t.clone(), image: Polygon2::from_pixels(&project_points(t, gt, k).unwrap()).unwrap() })
            .collect()
    }

    #[test]
    fn iou_calibration_recovers_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (targets, gt, k) = scene(&mut rng);
        let pairs = pairs_for(&targets, &gt, &k);
        let at_gt = calibrate_iou(&pairs, &k, &gt).unwrap();
        assert!(at_gt.mean_iou > 1.0 - 1e-12);
        let res = calibrate_iou(&pairs, &k, &perturb(&gt, 5.0, 0.05)).unwrap();
        assert!(res.mean_iou > 0.98, "mean iou {}", res.mean_iou);

        // similar to PnP on the same scene
        let corrs: Vec<Correspondence> = targets
            .iter()
            .flatten()
            .map(|v| Correspondence { vertex: *v, corner: project_point(v, &gt, &k).unwrap() })
            .collect();
        let noisy: Vec<Correspondence> = corrs
            .iter()
            .map(|c| Correspondence { vertex: c.vertex, corner: PixelPoint::new(c.corner.u + rng.random_range(-1.0..1.0), c.corner.v + rng.random_range(-1.0..1.0)) })
            .collect();
        let pnp = calibrate_pnp(&noisy, &k, &perturb(&gt, 5.0, 0.05)).unwrap();
        let iou_rms = reprojection_rms(&corrs, &res.extrinsic, &k).unwrap();
        let pnp_rms = reprojection_rms(&corrs, &pnp.extrinsic, &k).unwrap();
        assert!(iou_rms <= 2.0 * pnp_rms.max(0.5) && pnp_rms <= 2.0 * iou_rms.max(0.5), "{iou_rms} {pnp_rms}");
    }

    #[test]
    fn iou_calibration_needs_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (targets, gt, k) = scene(&mut rng);
        let pairs = pairs_for(&targets, &gt, &k);
        let far = gt.perturbed(&Vector6::new(0.0, 0.0, 0.0, 5.0, 0.0, 0.0));
        assert!(matches!(calibrate_iou(&pairs, &k, &far), Err(Error::NoOverlap)));
    }
}
