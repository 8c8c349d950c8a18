//! Target vertex estimation by fitting a reference target volume to a point
//! cloud.
//!
//! The cloud is pulled back toward the origin by a rigid transform `H`; the
//! cost measures how far each pulled-back point lies outside the target
//! volume. Minimizing over `H` gives the pose, and the vertices are the
//! reference vertices pushed forward by `H⁻¹`.
//!
//! [`fit_template_p2l`] fits only the ring edge points to the template's edge
//! segments instead.

use nalgebra::Vector6;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{so3_exp, RigidTransform3, Rotation3};
use crate::optim::{LevenbergMarquardt, NelderMead};
use crate::simlidar::Scan;
use crate::targets::{edge_lines, EdgeLineSet, PolygonTarget};
use crate::{seed, Error, Result, Vec3};

/// Minimum cloud size for a volume fit.
pub const MIN_FIT_POINTS: usize = 8;

/// `0` inside `[−a, a]`, otherwise the distance to the nearer bound.
pub fn l1_scalar_cost(lambda: f64, a: f64) -> f64 {
    if lambda.abs() <= a {
        0.0
    } else {
        (lambda - a).abs().min((lambda + a).abs())
    }
}

/// Box cost: `Σ c(x, ε) + c(y, d/2) + c(z, d/2)`.
pub fn cloud_cost_box(points: &[Vec3], epsilon: f64, d: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(points
        .iter()
        .map(|p| l1_scalar_cost(p.x, epsilon) + l1_scalar_cost(p.y, d / 2.0) + l1_scalar_cost(p.z, d / 2.0))
        .sum())
}

fn point_cost_polygon(p: &Vec3, epsilon: f64, lines: &EdgeLineSet, norms: &[f64]) -> f64 {
    let mut c = l1_scalar_cost(p.x, epsilon);
    for (l, n) in lines.lines.iter().zip(norms) {
        let s = l.sign * l.eval(p.y, p.z);
        if s < 0.0 {
            c -= s / n;
        }
    }
    c
}

fn line_norms(lines: &EdgeLineSet) -> Vec<f64> {
    lines.lines.iter().map(|l| (l.a * l.a + l.b * l.b).sqrt()).collect()
}

/// Polygon cost: per point, the slab excess along `x` plus the distance to
/// every edge line whose interior side it violates.
pub fn cloud_cost_polygon(points: &[Vec3], target: &PolygonTarget, lines: &EdgeLineSet) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let norms = line_norms(lines);
    Ok(points.iter().map(|p| point_cost_polygon(p, target.epsilon(), lines, &norms)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostModel {
    /// General convex polygon with its edge lines.
    Polygon,
    /// Axis-aligned square of the given side.
    Box { side: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct L1Params {
    /// Overrides the target's slab half-thickness.
    pub epsilon: Option<f64>,
    pub cost: CostModel,
    /// Total starts: the initial guess plus random rotations around it.
    pub restarts: usize,
    pub restart_angle_deg: f64,
    pub seed: u64,
    /// After the descent, move the pose inside its zero-cost set so the points
    /// sit as far from the target boundary as possible.
    pub center_on_plateau: bool,
    pub value_tolerance: f64,
    pub parameter_tolerance: f64,
}

impl Default for L1Params {
    fn default() -> Self {
        L1Params {
            epsilon: None,
            cost: CostModel::Polygon,
            restarts: 8,
            restart_angle_deg: 30.0,
            seed: 0,
            center_on_plateau: true,
            value_tolerance: 1e-8,
            parameter_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Pullback `H_T^L` taking LiDAR points to the reference target frame.
    pub transform: RigidTransform3,
    /// `H⁻¹` applied to the reference vertices.
    pub vertices: Vec<Vec3>,
    pub cost: f64,
    pub iterations: usize,
    /// Number of starts that were run.
    pub restarts_used: usize,
    /// Index of the start that produced the result.
    pub best_restart: usize,
}

impl FitResult {
    fn new(transform: RigidTransform3, target: &PolygonTarget, cost: f64, iterations: usize, restarts_used: usize, best_restart: usize) -> Self {
        let inv = transform.inverse();
        let vertices = target.vertices_3d().iter().map(|v| inv.apply(v)).collect();
        FitResult { transform, vertices, cost, iterations, restarts_used, best_restart }
    }

    /// Target pose in the LiDAR frame (`H⁻¹`).
    pub fn pose(&self) -> RigidTransform3 {
        self.transform.inverse()
    }
}

/// Centered cloud `p̃ = R0ᵀ(p − c)` and the map from 6 parameters `(ω, τ)` to
/// the pullback `q = exp(ω) p̃ + τ`.
struct Chart {
    base: Rotation3,
    center: Vec3,
    local: Vec<Vec3>,
}

impl Chart {
    fn new(points: &[Vec3], pose_rotation: &Rotation3, center: Vec3) -> Self {
        let base = pose_rotation.transpose();
        let local = points.iter().map(|p| base.rotate(&(p - center))).collect();
        Chart { base, center, local }
    }

    fn pull(&self, x: &[f64], out: &mut Vec<Vec3>) {
        let r = so3_exp(&Vec3::new(x[0], x[1], x[2]));
        let t = Vec3::new(x[3], x[4], x[5]);
        out.clear();
        out.extend(self.local.iter().map(|p| r.rotate(p) + t));
    }

    fn transform(&self, x: &[f64]) -> RigidTransform3 {
        let r = so3_exp(&Vec3::new(x[0], x[1], x[2])) * self.base;
        let t = Vec3::new(x[3], x[4], x[5]) - r.rotate(&self.center);
        RigidTransform3::new(r, t)
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Random rotation with angle uniform in `[0, max_angle]` about a uniform axis.
fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> Rotation3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return so3_exp(&(v / n * rng.random_range(0.0..=max_angle)));
        }
    }
}

/// Fits the target volume to `cloud`. `init` is a guess of the target pose in
/// the LiDAR frame; only its rotation is used, the translation starts at the
/// cloud centroid.
///
/// With plateau centering on, the rays one azimuth step beyond each ring's
/// first and last return are known to miss the target and also bound the
/// centered pose.
pub fn fit_target_l1(cloud: &Scan, target: &PolygonTarget, params: &L1Params, init: &RigidTransform3) -> Result<FitResult> {
    fit_l1(&cloud.positions(), &miss_rays(cloud), target, params, init)
}

/// Like [`fit_target_l1`] for a bare point list.
pub fn fit_points_l1(points: &[Vec3], target: &PolygonTarget, params: &L1Params, init: &RigidTransform3) -> Result<FitResult> {
    fit_l1(points, &[], target, params, init)
}

/// Unit directions of the rays adjacent to each ring's extreme returns. The
/// azimuth step is the median spacing of consecutive returns over all rings.
pub fn miss_rays(scan: &Scan) -> Vec<Vec3> {
    let mut by_ring: std::collections::BTreeMap<usize, Vec<(f64, f64)>> = Default::default();
    for p in &scan.points {
        let horiz = p.x.hypot(p.y);
        by_ring.entry(p.ring).or_default().push((p.x.atan2(p.y), p.z.atan2(horiz)));
    }
    let mut gaps = Vec::new();
    for v in by_ring.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        gaps.extend(v.windows(2).map(|w| w[1].0 - w[0].0).filter(|g| *g > 1e-9));
    }
    if gaps.is_empty() {
        return Vec::new();
    }
    gaps.sort_by(f64::total_cmp);
    let step = gaps[gaps.len() / 2];
    let dir = |phi: f64, theta: f64| Vec3::new(theta.cos() * phi.sin(), theta.cos() * phi.cos(), theta.sin());
    let mut out = Vec::new();
    for v in by_ring.values() {
        if v.len() < 2 {
            continue;
        }
        let (first, last) = (v[0], v[v.len() - 1]);
        out.push(dir(first.0 - step, first.1));
        out.push(dir(last.0 + step, last.1));
    }
    out
}

fn fit_l1(
    points: &[Vec3],
    misses: &[Vec3],
    target: &PolygonTarget,
    params: &L1Params,
    init: &RigidTransform3,
) -> Result<FitResult> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_FIT_POINTS, got: points.len() });
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput("cloud contains non-finite coordinates".into()));
    }
    let target = match params.epsilon {
        Some(e) => target.with_epsilon(e)?,
        None => target.clone(),
    };
    let lines = edge_lines(&target)?;
    let norms = line_norms(&lines);
    let eps = target.epsilon();
    let cost_model = params.cost;
    let cost_of = |q: &[Vec3]| -> f64 {
        match cost_model {
            CostModel::Polygon => q.iter().map(|p| point_cost_polygon(p, eps, &lines, &norms)).sum(),
            CostModel::Box { side } => q
                .iter()
                .map(|p| l1_scalar_cost(p.x, eps) + l1_scalar_cost(p.y, side / 2.0) + l1_scalar_cost(p.z, side / 2.0))
                .sum(),
        }
    };

    let center = centroid(points);
    let size = target.width().max(target.height());
    let starts = params.restarts.max(1);
    let mut rng = seed::rng(params.seed);
    let rotations: Vec<Rotation3> = (0..starts)
        .map(|k| {
            if k == 0 {
                init.rotation
            } else {
                random_rotation(&mut rng, params.restart_angle_deg.to_radians()) * init.rotation
            }
        })
        .collect();

    let nm = NelderMead {
        value_tolerance: params.value_tolerance,
        parameter_tolerance: params.parameter_tolerance,
        ..NelderMead::default()
    };
    let step = [0.1, 0.1, 0.1, 0.1 * size, 0.1 * size, 0.1 * size];
    let runs: Vec<(f64, RigidTransform3, usize)> = rotations
        .par_iter()
        .map(|rot| {
            let chart = Chart::new(points, rot, center);
            let mut buf = Vec::with_capacity(points.len());
            let res = nm.minimize(
                |x| {
                    chart.pull(x, &mut buf);
                    cost_of(&buf)
                },
                &[0.0; 6],
                &step,
            );
            (res.value, chart.transform(&res.x), res.iterations)
        })
        .collect();

    let (best, _) = runs
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |(bi, bv), (i, r)| if r.0 < bv { (i, r.0) } else { (bi, bv) });
    let (value, mut transform, _) = runs[best];
    if !value.is_finite() {
        return Err(Error::Optimizer("non-finite cost".into()));
    }
    let iterations = runs.iter().map(|r| r.2).sum();

    if params.center_on_plateau {
        transform = center_pose(points, misses, &target, &lines, &transform, value, &cost_of, &nm);
    }
    let mut pulled = Vec::new();
    pull_points(points, &transform, &mut pulled);
    let cost = cost_of(&pulled);
    Ok(FitResult::new(transform, &target, cost, iterations, starts, best))
}

fn pull_points(points: &[Vec3], h: &RigidTransform3, out: &mut Vec<Vec3>) {
    out.clear();
    out.extend(points.iter().map(|p| h.apply(p)));
}

/// Moves the pullback to the middle of its zero-cost set. The out-of-plane
/// degrees of freedom maximize the smallest slab margin; the in-plane ones
/// move to the analytic center of the edge constraints (hits inside, miss
/// rays outside), starting from the point of largest smallest margin. The
/// input pose is returned unchanged if the result would cost more.
#[allow(clippy::too_many_arguments)]
fn center_pose<F>(
    points: &[Vec3],
    misses: &[Vec3],
    target: &PolygonTarget,
    lines: &EdgeLineSet,
    h: &RigidTransform3,
    cost: f64,
    cost_of: &F,
    nm: &NelderMead,
) -> RigidTransform3
where
    F: Fn(&[Vec3]) -> f64,
{
    let eps = target.epsilon();
    let norms = line_norms(lines);
    let mut q = Vec::new();
    pull_points(points, h, &mut q);
    let tol = 1e-12 * points.len() as f64;
    let original = *h;
    let mut h = *h;
    let size = target.width().max(target.height());
    // Keeps a centered pose only if the full cost did not grow.
    let fallback = |centered: RigidTransform3| {
        let mut q = Vec::new();
        pull_points(points, &centered, &mut q);
        if cost_of(&q) <= cost + tol {
            centered
        } else {
            original
        }
    };

    // Out of plane: rotations about target y and z, shift along x.
    if eps > 0.0 {
        let base = q.clone();
        let mut buf = Vec::with_capacity(base.len());
        let apply = |x: &[f64], buf: &mut Vec<Vec3>| {
            let r = so3_exp(&Vec3::new(0.0, x[0], x[1]));
            buf.clear();
            buf.extend(base.iter().map(|p| r.rotate(p) + Vec3::new(x[2], 0.0, 0.0)));
        };
        let slab = |q: &[Vec3]| q.iter().map(|p| l1_scalar_cost(p.x, eps)).sum::<f64>();
        let slab0 = slab(&base);
        let mut objective = |x: &[f64]| {
            apply(x, &mut buf);
            if slab(&buf) > slab0 + tol {
                return f64::INFINITY;
            }
            -buf.iter().map(|p| eps - p.x.abs()).fold(f64::INFINITY, f64::min)
        };
        // The least-squares plane of the pullback is usually close to the
        // slab center and gives the simplex a better start than the identity.
        let start = plane_alignment(&base)
            .filter(|x| objective(x) < objective(&[0.0; 3]))
            .unwrap_or([0.0; 3]);
        let res = nm.minimize(objective, &start, &[0.01, 0.01, 0.2 * eps]);
        if res.value.is_finite() {
            let r = so3_exp(&Vec3::new(0.0, res.x[0], res.x[1]));
            h = RigidTransform3::new(r, Vec3::new(res.x[2], 0.0, 0.0)).compose(&h);
            pull_points(points, &h, &mut q);
        }
    }

    // In plane: rotation about x and shifts along y, z leave every x unchanged,
    // so miss rays can be replaced by their hits on the plane x = 0.
    let origin = h.apply(&Vec3::zeros());
    let outside: Vec<Vec3> = misses
        .iter()
        .filter_map(|d| {
            let d = h.rotation.rotate(d);
            let t = -origin.x / d.x;
            (d.x.abs() > 1e-12 && t > 0.0).then(|| Vec3::new(0.0, origin.y + t * d.y, origin.z + t * d.z))
        })
        .collect();
    let margin = |p: &Vec3| -> f64 {
        lines.lines.iter().zip(&norms).map(|(l, n)| l.sign * l.eval(p.y, p.z) / n).fold(f64::INFINITY, f64::min)
    };
    let inplane = |q: &[Vec3], out: &[Vec3]| -> f64 {
        let inside = q.iter().map(&margin).fold(f64::INFINITY, f64::min);
        out.iter().map(|p| -margin(p)).fold(inside, f64::min)
    };
    let moved = |x: &[f64], src: &[Vec3], buf: &mut Vec<Vec3>| {
        let r = so3_exp(&Vec3::new(x[0], 0.0, 0.0));
        buf.clear();
        buf.extend(src.iter().map(|p| r.rotate(p) + Vec3::new(0.0, x[1], x[2])));
    };
    let base = q.clone();
    let mut buf = Vec::with_capacity(base.len());
    let mut obuf = Vec::with_capacity(outside.len());
    let maxmin = |out: &[Vec3], buf: &mut Vec<Vec3>, obuf: &mut Vec<Vec3>| {
        nm.minimize(
            |x| {
                moved(x, &base, buf);
                moved(x, out, obuf);
                -inplane(buf, obuf)
            },
            &[0.0; 3],
            &[0.02, 0.02 * size, 0.02 * size],
        )
    };
    // Misses are dropped when no pose separates them from the hits.
    let mut res = maxmin(&outside, &mut buf, &mut obuf);
    let mut outside = outside.as_slice();
    if res.value > 0.0 {
        outside = &[];
        res = maxmin(outside, &mut buf, &mut obuf);
    }
    if res.value > 0.0 {
        return fallback(h);
    }
    let mut x = res.x;
    // From the max-min point, move to the analytic center of the feasible set.
    let barrier = |q: &[Vec3], out: &[Vec3]| -> f64 {
        let mut acc = 0.0;
        for p in q {
            for (l, n) in lines.lines.iter().zip(&norms) {
                let s = l.sign * l.eval(p.y, p.z) / n;
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                acc -= s.ln();
            }
        }
        for p in out {
            let s = -margin(p);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            acc -= s.ln();
        }
        acc
    };
    let res = nm.minimize(
        |x| {
            moved(x, &base, &mut buf);
            moved(x, outside, &mut obuf);
            barrier(&buf, &obuf)
        },
        &x,
        &[0.01, 0.01 * size, 0.01 * size],
    );
    if res.value.is_finite() {
        x = res.x;
    }
    let r = so3_exp(&Vec3::new(x[0], 0.0, 0.0));
    fallback(RigidTransform3::new(r, Vec3::new(0.0, x[1], x[2])).compose(&h))
}

/// Parameters `(ω_y, ω_z, shift_x)` that rotate the least-squares plane of
/// `q` onto `x = 0`.
fn plane_alignment(q: &[Vec3]) -> Option<[f64; 3]> {
    if q.len() < 3 {
        return None;
    }
    let c = centroid(q);
    let m = nalgebra::DMatrix::from_fn(q.len(), 3, |i, j| q[i][j] - c[j]);
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let k = (0..3).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))?;
    let mut n = Vec3::new(vt[(k, 0)], vt[(k, 1)], vt[(k, 2)]);
    if n.x < 0.0 {
        n = -n;
    }
    let axis = n.cross(&Vec3::x());
    let s = axis.norm();
    let w = if s < 1e-15 { Vec3::zeros() } else { axis / s * s.atan2(n.x) };
    let r = so3_exp(&Vec3::new(0.0, w.y, w.z));
    Some([w.y, w.z, -r.rotate(&c).x])
}

/// First and last return of every ring, ordered by azimuth about the ring's
/// mean direction. Rings with a single return contribute that point once.
pub fn extract_edge_points(scan: &Scan) -> Vec<(Vec3, usize)> {
    let mut out = Vec::new();
    for ring in scan.rings() {
        let pts: Vec<Vec3> = scan.points.iter().filter(|p| p.ring == ring).map(|p| p.position()).collect();
        let mean_az = {
            let (s, c) = pts.iter().fold((0.0, 0.0), |(s, c), p| {
                let a = p.x.atan2(p.y);
                (s + a.sin(), c + a.cos())
            });
            s.atan2(c)
        };
        let rel = |p: &Vec3| {
            let mut a = p.x.atan2(p.y) - mean_az;
            a = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            a
        };
        let (mut lo, mut hi) = (0, 0);
        for (i, p) in pts.iter().enumerate() {
            if rel(p) < rel(&pts[lo]) {
                lo = i;
            }
            if rel(p) > rel(&pts[hi]) {
                hi = i;
            }
        }
        out.push((pts[lo], ring));
        if hi != lo {
            out.push((pts[hi], ring));
        }
    }
    out
}

/// Closest point to `p` on the segment `a`-`b`.
fn closest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct P2lParams {
    pub max_outer_iterations: usize,
    /// Stop when `‖Log(H_{k−1}⁻¹ H_k)‖` falls below this.
    pub step_tolerance: f64,
    /// Starting in-plane rotations, evenly spaced over a full turn.
    pub initial_rotations: usize,
}

impl Default for P2lParams {
    fn default() -> Self {
        P2lParams { max_outer_iterations: 100, step_tolerance: 1e-5, initial_rotations: 8 }
    }
}

/// Per-start record of the alternating point-to-edge fit.
#[derive(Debug, Clone)]
pub struct P2lTrace {
    pub costs: Vec<f64>,
}

/// Fits edge points to the template's edges by alternating nearest-edge
/// association and least-squares pose refinement.
pub fn fit_template_p2l(edge_points: &[Vec3], target: &PolygonTarget, init: &RigidTransform3) -> Result<FitResult> {
    fit_template_p2l_with(edge_points, target, init, &P2lParams::default()).map(|(r, _)| r)
}

pub fn fit_template_p2l_with(
    edge_points: &[Vec3],
    target: &PolygonTarget,
    init: &RigidTransform3,
    params: &P2lParams,
) -> Result<(FitResult, Vec<P2lTrace>)> {
    if edge_points.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: edge_points.len() });
    }
    let center = centroid(edge_points);
    let centered = nalgebra::DMatrix::from_fn(edge_points.len(), 3, |i, j| edge_points[i][j] - center[j]);
    let sv = centered.singular_values();
    if sv[1] <= 1e-9 * sv[0].max(1e-300) {
        return Err(Error::Degenerate("edge points are collinear".into()));
    }
    let verts = target.vertices_3d();
    let m = verts.len();
    let segs: Vec<(Vec3, Vec3)> = (0..m).map(|i| (verts[i], verts[(i + 1) % m])).collect();
    let assoc_cost = |q: &Vec3| -> (usize, f64) {
        segs.iter()
            .enumerate()
            .map(|(i, (a, b))| (i, (q - closest_on_segment(q, a, b)).norm_squared()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    };

    let n_starts = params.initial_rotations.max(1);
    let lm = LevenbergMarquardt::default();
    let runs: Vec<(f64, RigidTransform3, usize, P2lTrace)> = (0..n_starts)
        .into_par_iter()
        .map(|k| {
            let spin = so3_exp(&(Vec3::x() * (k as f64 * std::f64::consts::TAU / n_starts as f64)));
            let rot = spin * init.rotation.transpose();
            let mut h = RigidTransform3::new(rot, -rot.rotate(&center));
            let total = |h: &RigidTransform3| edge_points.iter().map(|p| assoc_cost(&h.apply(p)).1).sum::<f64>();
            let mut trace = P2lTrace { costs: vec![total(&h)] };
            let mut iterations = 0;
            for _ in 0..params.max_outer_iterations {
                iterations += 1;
                let assoc: Vec<usize> = edge_points.iter().map(|p| assoc_cost(&h.apply(p)).0).collect();
                let base = h;
                let res = lm.solve(
                    |x, out| {
                        let hx = base.perturbed(&Vector6::from_column_slice(x));
                        out.clear();
                        for (p, &j) in edge_points.iter().zip(&assoc) {
                            let q = hx.apply(p);
                            let d = q - closest_on_segment(&q, &segs[j].0, &segs[j].1);
                            out.extend_from_slice(&[d.x, d.y, d.z]);
                        }
                    },
                    &[0.0; 6],
                );
                let next = base.perturbed(&Vector6::from_column_slice(&res.x));
                let step = (h.inverse().compose(&next)).log().norm();
                h = next;
                trace.costs.push(total(&h));
                if step < params.step_tolerance {
                    break;
                }
            }
            let cost = total(&h);
            (cost, h, iterations, trace)
        })
        .collect();

    let best = (0..runs.len()).fold(0, |b, i| if runs[i].0 < runs[b].0 { i } else { b });
    let iterations = runs.iter().map(|r| r.2).sum();
    let result = FitResult::new(runs[best].1, target, runs[best].0, iterations, n_starts, best);
    Ok((result, runs.into_iter().map(|r| r.3).collect()))
}
