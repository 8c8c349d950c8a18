//! Intrinsic LiDAR calibration.
//!
//! Each ring gets its own correction, fitted by minimizing the summed
//! absolute point-to-plane distance of that ring's returns on several planar
//! targets. Three correction models are available: a similarity transform
//! and the two classic spherical models (3 and 6 parameters).
//!
//! Target planes come either from ground truth or from vertex fits; in the
//! latter case vertices and corrections are re-estimated alternately.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{RigidTransform3, Sim3Transform};
use crate::optim::NelderMead;
use crate::simlidar::{LidarPoint, Scan};
use crate::targets::PolygonTarget;
use crate::vertexfit::{fit_target_l1, L1Params};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    pub rho: f64,
    /// Elevation, radians.
    pub theta: f64,
    /// Azimuth from the `y` axis toward `x`, radians.
    pub phi: f64,
}

impl SphericalPoint {
    pub fn from_cartesian(p: &Vec3) -> Result<Self> {
        let rho = p.norm();
        if !(rho > 0.0) {
            return Err(Error::InvalidInput("the origin has no spherical coordinates".into()));
        }
        Ok(SphericalPoint { rho, theta: (p.z / rho).clamp(-1.0, 1.0).asin(), phi: p.x.atan2(p.y) })
    }

    pub fn to_cartesian(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(self.rho * ct * sp, self.rho * ct * cp, self.rho * st)
    }
}

/// Additive range, elevation and azimuth offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bl1Params {
    pub d_rho: f64,
    pub d_theta: f64,
    pub d_phi: f64,
}

/// [`Bl1Params`] plus range scale and horizontal/vertical origin offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bl2Params {
    pub d_rho: f64,
    pub d_theta: f64,
    pub d_phi: f64,
    pub scale: f64,
    pub h: f64,
    pub v: f64,
}

/// 3-parameter model. The ring's elevation is replaced by `d_theta`.
pub fn bl1_correct(raw: &SphericalPoint, a: &Bl1Params) -> Vec3 {
    let r = raw.rho + a.d_rho;
    let (st, ct) = a.d_theta.sin_cos();
    let (sp, cp) = (raw.phi - a.d_phi).sin_cos();
    Vec3::new(r * ct * sp, r * ct * cp, r * st)
}

/// 6-parameter model.
pub fn bl2_correct(raw: &SphericalPoint, a: &Bl2Params) -> Vec3 {
    let r = a.scale * raw.rho + a.d_rho;
    let (st, ct) = a.d_theta.sin_cos();
    let (sp, cp) = (raw.phi - a.d_phi).sin_cos();
    Vec3::new(r * ct * sp - a.h * cp, r * ct * cp + a.h * sp, r * st + a.v)
}

/// The 6-parameter model as `R₁(R₂t₁ + t₂)`.
pub fn bl2_decomposed(raw: &SphericalPoint, a: &Bl2Params) -> Vec3 {
    let (sp, cp) = (raw.phi - a.d_phi).sin_cos();
    let r1 = Matrix3::new(sp, -cp, 0.0, cp, sp, 0.0, 0.0, 0.0, 1.0);
    let (st, ct) = a.d_theta.sin_cos();
    let r2 = Matrix3::new(ct, 0.0, -st, 0.0, 1.0, 0.0, st, 0.0, ct);
    let t1 = Vec3::new(a.scale * raw.rho + a.d_rho, 0.0, 0.0);
    let t2 = Vec3::new(0.0, a.h, a.v);
    r1 * (r2 * t1 + t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntrinsicModel {
    Sim3,
    Bl1,
    Bl2,
}

impl std::str::FromStr for IntrinsicModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim3" => Ok(IntrinsicModel::Sim3),
            "bl1" => Ok(IntrinsicModel::Bl1),
            "bl2" => Ok(IntrinsicModel::Bl2),
            _ => Err(Error::InvalidInput(format!("unknown intrinsic model '{s}' (expected sim3, bl1 or bl2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Correction {
    Sim3(Sim3Transform),
    Bl1(Bl1Params),
    Bl2(Bl2Params),
}

impl Correction {
    pub fn apply(&self, x: &Vec3) -> Result<Vec3> {
        Ok(match self {
            Correction::Sim3(h) => h.apply(x),
            Correction::Bl1(a) => bl1_correct(&SphericalPoint::from_cartesian(x)?, a),
            Correction::Bl2(a) => bl2_correct(&SphericalPoint::from_cartesian(x)?, a),
        })
    }

    /// Parameters that leave points at elevation `theta` unchanged.
    pub fn identity(model: IntrinsicModel, theta: f64) -> Self {
        match model {
            IntrinsicModel::Sim3 => Correction::Sim3(Sim3Transform::identity()),
            IntrinsicModel::Bl1 => Correction::Bl1(Bl1Params { d_rho: 0.0, d_theta: theta, d_phi: 0.0 }),
            IntrinsicModel::Bl2 => {
                Correction::Bl2(Bl2Params { d_rho: 0.0, d_theta: theta, d_phi: 0.0, scale: 1.0, h: 0.0, v: 0.0 })
            }
        }
    }

    fn to_vec(self) -> Vec<f64> {
        match self {
            Correction::Sim3(h) => h.to_params().to_vec(),
            Correction::Bl1(a) => vec![a.d_rho, a.d_theta, a.d_phi],
            Correction::Bl2(a) => vec![a.d_rho, a.d_theta, a.d_phi, a.scale, a.h, a.v],
        }
    }

    fn from_vec(model: IntrinsicModel, x: &[f64]) -> Self {
        match model {
            IntrinsicModel::Sim3 => Correction::Sim3(Sim3Transform::from_params(x)),
            IntrinsicModel::Bl1 => Correction::Bl1(Bl1Params { d_rho: x[0], d_theta: x[1], d_phi: x[2] }),
            IntrinsicModel::Bl2 => {
                Correction::Bl2(Bl2Params { d_rho: x[0], d_theta: x[1], d_phi: x[2], scale: x[3], h: x[4], v: x[5] })
            }
        }
    }

    fn steps(model: IntrinsicModel) -> Vec<f64> {
        match model {
            IntrinsicModel::Sim3 => vec![2e-3, 2e-3, 2e-3, 1e-2, 1e-2, 1e-2, 1e-3],
            IntrinsicModel::Bl1 => vec![1e-2, 2e-3, 2e-3],
            IntrinsicModel::Bl2 => vec![1e-2, 2e-3, 2e-3, 1e-3, 1e-2, 1e-2],
        }
    }
}

/// A target plane `{x : n·(x − p₀) = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub anchor: Vec3,
}

impl Plane {
    pub fn new(normal: Vec3, anchor: Vec3) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidInput("plane normal must be nonzero".into()));
        }
        Ok(Plane { normal: normal / n, anchor })
    }

    /// The plane `x = 0` of a target frame mapped by `pose`.
    pub fn from_pose(pose: &RigidTransform3) -> Self {
        Plane { normal: pose.rotation.rotate(&Vec3::x()), anchor: pose.translation }
    }
}

/// Returns of one ring on one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub points: Vec<Vec3>,
    pub plane: Plane,
}

/// `Σ |nᵀ(F(x) − p₀)|` over all collections.
pub fn p2p_cost(collections: &[Collection], correction: &Correction) -> Result<f64> {
    let mut total = 0.0;
    for c in collections {
        if (c.plane.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("plane normals must have unit length".into()));
        }
        for x in &c.points {
            total += c.plane.normal.dot(&(correction.apply(x)? - c.plane.anchor)).abs();
        }
    }
    Ok(total)
}

/// Returns of one target with a rough pose guess for the vertex fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetObservation {
    pub target: PolygonTarget,
    pub scan: Scan,
    pub init: RigidTransform3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConfig {
    pub model: IntrinsicModel,
    /// Outer iterations of vertex/parameter alternation.
    pub max_outer_iterations: usize,
    /// Stop once no vertex moves more than this, meters.
    pub vertex_tolerance: f64,
    /// Ground-truth planes, one per observation; skips the vertex fits.
    #[serde(default)]
    pub known_planes: Option<Vec<Plane>>,
    pub seed: u64,
}

impl IntrinsicConfig {
    pub fn new(model: IntrinsicModel) -> Self {
        IntrinsicConfig { model, max_outer_iterations: 20, vertex_tolerance: 1e-5, known_planes: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingCalibration {
    pub ring: usize,
    pub correction: Correction,
    /// Cost of the uncorrected returns against the final planes.
    pub cost_before: f64,
    pub cost_after: f64,
    pub points: usize,
    pub targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub model: IntrinsicModel,
    pub rings: Vec<RingCalibration>,
    pub outer_iterations: usize,
    /// Largest vertex displacement after each outer iteration.
    pub vertex_changes: Vec<f64>,
    pub placement: Option<PlacementReport>,
    pub warnings: Vec<String>,
}

impl IntrinsicReport {
    pub fn correction_for(&self, ring: usize) -> Option<&Correction> {
        self.rings.iter().find(|r| r.ring == ring).map(|r| &r.correction)
    }

    /// Applies each ring's correction; rings without one pass through.
    pub fn apply(&self, scan: &Scan) -> Result<Scan> {
        let mut points = Vec::with_capacity(scan.len());
        for p in &scan.points {
            let pos = match self.correction_for(p.ring) {
                Some(c) => c.apply(&p.position())?,
                None => p.position(),
            };
            points.push(LidarPoint { x: pos.x, y: pos.y, z: pos.z, ..*p });
        }
        Ok(Scan { points, index: scan.index })
    }
}

fn fit_ring(model: IntrinsicModel, collections: &[Collection]) -> Result<(Correction, f64)> {
    let n: usize = collections.iter().map(|c| c.points.len()).sum();
    let theta = collections
        .iter()
        .flat_map(|c| c.points.iter())
        .map(|p| (p.z / p.norm()).asin())
        .sum::<f64>()
        / n as f64;
    let start = Correction::identity(model, theta);
    let nm = NelderMead { max_evaluations: 40_000, value_tolerance: 1e-12, parameter_tolerance: 1e-10, max_restarts: 6 };
    let res = nm.minimize(
        |x| p2p_cost(collections, &Correction::from_vec(model, x)).unwrap_or(f64::INFINITY),
        &start.to_vec(),
        &Correction::steps(model),
    );
    if !res.value.is_finite() {
        return Err(Error::Optimizer("ring correction diverged".into()));
    }
    Ok((Correction::from_vec(model, &res.x), res.value))
}

/// Fits one correction per ring. Rings seen on fewer than two targets are
/// left uncorrected and reported in `warnings`.
pub fn calibrate_rings(observations: &[TargetObservation], config: &IntrinsicConfig) -> Result<IntrinsicReport> {
    if observations.is_empty() {
        return Err(Error::InvalidInput("no target observations".into()));
    }
    if let Some(planes) = &config.known_planes {
        if planes.len() != observations.len() {
            return Err(Error::LengthMismatch { left: planes.len(), right: observations.len() });
        }
    }
    let mut warnings = Vec::new();
    // ring → per-target raw returns
    let mut by_ring: BTreeMap<usize, Vec<(usize, Vec<Vec3>)>> = BTreeMap::new();
    for (t, obs) in observations.iter().enumerate() {
        let mut rings: BTreeMap<usize, Vec<Vec3>> = BTreeMap::new();
        for p in &obs.scan.points {
            rings.entry(p.ring).or_default().push(p.position());
        }
        for (r, pts) in rings {
            by_ring.entry(r).or_default().push((t, pts));
        }
    }
    by_ring.retain(|r, v| {
        if v.len() < 2 {
            warnings.push(format!("ring {r} hits {} target(s); left uncorrected", v.len()));
            false
        } else {
            true
        }
    });
    if by_ring.is_empty() {
        return Err(Error::InvalidInput("no ring hits two or more targets".into()));
    }

    let fit_planes = |report: Option<&IntrinsicReport>| -> Result<(Vec<Plane>, Vec<Vec<Vec3>>)> {
        let mut planes = Vec::with_capacity(observations.len());
        let mut vertices = Vec::with_capacity(observations.len());
        for obs in observations {
            let scan = match report {
                Some(r) => r.apply(&obs.scan)?,
                None => obs.scan.clone(),
            };
            let params = L1Params { seed: config.seed, ..Default::default() };
            let fit = fit_target_l1(&scan, &obs.target, &params, &obs.init)?;
            planes.push(Plane::from_pose(&fit.pose()));
            vertices.push(fit.vertices);
        }
        Ok((planes, vertices))
    };

    let (mut planes, mut vertices) = match &config.known_planes {
        Some(p) => (p.iter().map(|q| Plane::new(q.normal, q.anchor)).collect::<Result<Vec<_>>>()?, Vec::new()),
        None => fit_planes(None)?,
    };

    let mut vertex_changes = Vec::new();
    let mut outer = 0;
    let mut report;
    loop {
        outer += 1;
        let rings: Vec<RingCalibration> = by_ring
            .par_iter()
            .map(|(&ring, hits)| {
                let collections: Vec<Collection> =
                    hits.iter().map(|(t, pts)| Collection { points: pts.clone(), plane: planes[*t] }).collect();
                let before = p2p_cost(&collections, &Correction::identity(IntrinsicModel::Sim3, 0.0))?;
                let (correction, after) = fit_ring(config.model, &collections)?;
                Ok(RingCalibration {
                    ring,
                    correction,
                    cost_before: before,
                    cost_after: after,
                    points: collections.iter().map(|c| c.points.len()).sum(),
                    targets: collections.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report = IntrinsicReport {
            model: config.model,
            rings,
            outer_iterations: outer,
            vertex_changes: vertex_changes.clone(),
            placement: None,
            warnings: warnings.clone(),
        };
        if config.known_planes.is_some() || outer >= config.max_outer_iterations {
            break;
        }
        let (new_planes, new_vertices) = fit_planes(Some(&report))?;
        let change = vertices
            .iter()
            .flatten()
            .zip(new_vertices.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        vertex_changes.push(change);
        planes = new_planes;
        vertices = new_vertices;
        if change < config.vertex_tolerance {
            break;
        }
    }
    report.vertex_changes = vertex_changes;

    if config.model == IntrinsicModel::Sim3 {
        if planes.len() < 4 {
            report.warnings.push(format!("Sim(3) needs four targets for a unique solution, got {}", planes.len()));
        } else {
            let normals: Vec<Vec3> = planes[..4].iter().map(|p| p.normal).collect();
            let anchors: Vec<Vec3> = planes[..4].iter().map(|p| p.anchor).collect();
            match ring_plane_intersections(&normals, &anchors).and_then(|p| placement_matrix(&normals, &p)) {
                Ok(pm) => {
                    if pm.rank < GENERIC_PLACEMENT_RANK {
                        report.warnings.push(format!(
                            "placement matrix has rank {} < {GENERIC_PLACEMENT_RANK}; the Sim(3) solution may not be unique",
                            pm.rank
                        ));
                    }
                    report.placement = Some(pm);
                }
                Err(e) => report.warnings.push(format!("placement check failed: {e}")),
            }
        }
    }
    Ok(report)
}

pub const PLACEMENT_ROWS: usize = 18;
pub const PLACEMENT_COLUMNS: usize = 15;

/// Largest rank reached by four targets in general position. Each target
/// line holds three of the six intersection points, so the constraints on
/// the affine part leave one free direction.
pub const GENERIC_PLACEMENT_RANK: usize = 14;

/// Pair order of the six intersection points.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    /// Row-major 18×15 matrix.
    pub matrix: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// `σ₁/σ₁₅`; infinite when rank-deficient.
    pub condition: f64,
}

/// Points where the ring plane `z = 0` meets each pair of target planes,
/// in [`PAIRS`] order.
pub fn ring_plane_intersections(normals: &[Vec3], anchors: &[Vec3]) -> Result<Vec<Vec3>> {
    if normals.len() < 4 || anchors.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: normals.len().min(anchors.len()) });
    }
    PAIRS
        .iter()
        .map(|&(i, j)| {
            let a = Matrix3::from_rows(&[normals[i].transpose(), normals[j].transpose(), Vec3::z().transpose()]);
            let b = Vec3::new(normals[i].dot(&anchors[i]), normals[j].dot(&anchors[j]), 0.0);
            a.lu()
                .solve(&b)
                .filter(|p| p.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::Degenerate(format!("targets {i} and {j} meet parallel to the ring plane")))
        })
        .collect()
}

/// The 18×15 condition matrix of the affine relaxation, built from the
/// in-plane coordinates of the six intersection points and the directions
/// `vᵢⱼ = nᵢ × nⱼ`.
pub fn placement_matrix(normals: &[Vec3], intersections: &[Vec3]) -> Result<PlacementReport> {
    if normals.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: normals.len() });
    }
    if intersections.len() != 6 {
        return Err(Error::LengthMismatch { left: intersections.len(), right: 6 });
    }
    let mut a = DMatrix::<f64>::zeros(PLACEMENT_ROWS, PLACEMENT_COLUMNS);
    for k in 0..3 {
        for (r, &(i, j)) in PAIRS.iter().enumerate() {
            let row = 6 * k + r;
            let p = intersections[r];
            let v = normals[i].cross(&normals[j]);
            a[(row, 2 * k)] = p.x;
            a[(row, 2 * k + 1)] = p.y;
            a[(row, 6 + k)] = 1.0;
            a[(row, 9 + r)] = -v[k];
        }
    }
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let tol = 1e-9 * sv[0];
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let condition = if rank == PLACEMENT_COLUMNS { sv[0] / sv[PLACEMENT_COLUMNS - 1] } else { f64::INFINITY };
    let matrix = (0..PLACEMENT_ROWS).map(|r| (0..PLACEMENT_COLUMNS).map(|c| a[(r, c)]).collect()).collect();
    Ok(PlacementReport { matrix, singular_values: sv, rank, condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
    }

    #[test]
    fn spherical_examples() {
        let s = SphericalPoint::from_cartesian(&Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!((s.rho, s.theta, s.phi), (1.0, 0.0, 0.0));
        let s = SphericalPoint::from_cartesian(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.theta, std::f64::consts::FRAC_PI_2);
        assert!(SphericalPoint::from_cartesian(&Vec3::zeros()).is_err());
    }

    #[test]
    fn spherical_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = random_point(&mut rng);
            let q = SphericalPoint::from_cartesian(&p).unwrap().to_cartesian();
            assert!((p - q).norm() < 1e-12 * p.norm().max(1.0));
        }
    }

    #[test]
    fn bl1_examples() {
        let zero = Bl1Params { d_rho: 0.0, d_theta: 0.0, d_phi: 0.0 };
        let raw = SphericalPoint { rho: 5.0, theta: 0.0, phi: std::f64::consts::FRAC_PI_2 };
        let p = bl1_correct(&raw, &zero);
        assert!((p - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-15);
        let grown = bl1_correct(&raw, &Bl1Params { d_rho: 0.1, ..zero });
        assert!((grown.norm() - 5.1).abs() < 1e-15);
    }

    #[test]
    fn bl1_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let raw = SphericalPoint { rho: rng.random_range(0.5..50.0), theta: rng.random_range(-0.5..0.5), phi: rng.random_range(-3.0..3.0) };
            let a = Bl1Params { d_rho: rng.random_range(-0.1..0.1), d_theta: rng.random_range(-0.5..0.5), d_phi: rng.random_range(-0.1..0.1) };
            let r = raw.rho + a.d_rho;
            let expect = Vec3::new(
                r * a.d_theta.cos() * (raw.phi - a.d_phi).sin(),
                r * a.d_theta.cos() * (raw.phi - a.d_phi).cos(),
                r * a.d_theta.sin(),
            );
            assert!((bl1_correct(&raw, &a) - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn bl2_examples() {
        let raw = SphericalPoint { rho: 4.0, theta: 0.3, phi: 0.0 };
        let unit = Bl2Params { d_rho: 0.0, d_theta: 0.0, d_phi: 0.0, scale: 1.0, h: 0.0, v: 0.0 };
        let b1 = bl1_correct(&raw, &Bl1Params { d_rho: 0.0, d_theta: 0.0, d_phi: 0.0 });
        assert!((bl2_correct(&raw, &unit) - b1).norm() < 1e-15);
        let shifted = bl2_correct(&raw, &Bl2Params { h: 0.2, ..unit });
        assert!((shifted.x - (b1.x - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn bl2_formula_equals_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let raw = SphericalPoint { rho: rng.random_range(0.5..50.0), theta: rng.random_range(-0.5..0.5), phi: rng.random_range(-3.0..3.0) };
            let a = Bl2Params {
                d_rho: rng.random_range(-0.1..0.1),
                d_theta: rng.random_range(-0.5..0.5),
                d_phi: rng.random_range(-0.1..0.1),
                scale: rng.random_range(0.9..1.1),
                h: rng.random_range(-0.1..0.1),
                v: rng.random_range(-0.1..0.1),
            };
            assert!((bl2_correct(&raw, &a) - bl2_decomposed(&raw, &a)).norm() < 1e-12);
        }
    }

    fn random_collections(rng: &mut ChaCha8Rng) -> Vec<Collection> {
        (0..3)
            .map(|_| Collection {
                points: (0..20).map(|_| random_point(rng)).collect(),
                plane: Plane::new(random_point(rng), random_point(rng)).unwrap(),
            })
            .collect()
    }

    #[test]
    fn p2p_examples() {
        let plane = Plane::new(Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 5.0, 0.0)).unwrap();
        let pts: Vec<Vec3> = (0..7).map(|i| Vec3::new(i as f64 * 0.1, 5.0, 0.2)).collect();
        let id = Correction::Sim3(Sim3Transform::identity());
        assert_eq!(p2p_cost(&[Collection { points: pts.clone(), plane }], &id).unwrap(), 0.0);
        let moved = Plane { anchor: Vec3::new(0.0, 5.1, 0.0), ..plane };
        assert!((p2p_cost(&[Collection { points: pts.clone(), plane: moved }], &id).unwrap() - 0.7).abs() < 1e-12);
        let bad = Plane { normal: Vec3::new(0.0, 2.0, 0.0), ..plane };
        assert!(p2p_cost(&[Collection { points: pts, plane: bad }], &id).is_err());
    }

    #[test]
    fn p2p_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cols = random_collections(&mut rng);
        let h = Sim3Transform::new(1.02, so3_exp(&Vec3::new(0.01, -0.02, 0.03)), Vec3::new(0.1, 0.0, -0.1)).unwrap();
        let mut naive = 0.0;
        for c in &cols {
            for p in &c.points {
                let q = h.rotation.matrix() * p * h.scale + h.translation;
                let d = q - c.plane.anchor;
                naive += (c.plane.normal.x * d.x + c.plane.normal.y * d.y + c.plane.normal.z * d.z).abs();
            }
        }
        let got = p2p_cost(&cols, &Correction::Sim3(h)).unwrap();
        assert!((got - naive).abs() < 1e-12 * naive.max(1.0));

        // permutation invariance
        let mut shuffled = cols.clone();
        shuffled.reverse();
        for c in &mut shuffled {
            c.points.reverse();
        }
        assert!((p2p_cost(&shuffled, &Correction::Sim3(h)).unwrap() - got).abs() < 1e-9);
    }

    fn tetra_normals() -> Vec<Vec3> {
        [Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, -1.0, -1.0), Vec3::new(-1.0, 1.0, -1.0), Vec3::new(-1.0, -1.0, 1.0)]
            .iter()
            .map(|v| so3_exp(&Vec3::new(0.3, 0.5, 0.2)).rotate(&v.normalize()))
            .collect()
    }

    fn anchors() -> Vec<Vec3> {
        vec![Vec3::new(3.0, 2.0, 0.5), Vec3::new(-2.0, 4.0, -0.3), Vec3::new(1.0, -3.0, 0.2), Vec3::new(-4.0, -1.0, 0.1)]
    }

    #[test]
    fn placement_tetrahedral_rank() {
        let n = tetra_normals();
        let p = ring_plane_intersections(&n, &anchors()).unwrap();
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            assert!(p[k].z.abs() < 1e-12);
            assert!(n[i].dot(&(p[k] - anchors()[i])).abs() < 1e-12);
            assert!(n[j].dot(&(p[k] - anchors()[j])).abs() < 1e-12);
        }
        let pm = placement_matrix(&n, &p).unwrap();
        assert_eq!(pm.matrix.len(), 18);
        assert_eq!(pm.matrix[0].len(), 15);
        assert_eq!(pm.rank, GENERIC_PLACEMENT_RANK);
        assert!(pm.singular_values[13] > 1e-6 * pm.singular_values[0]);
    }

    #[test]
    fn placement_null_vector_is_affine_line_map() {
        // the null vector is an affine map D(p) = M p + t with D(p_ij) ∥ v_ij
        let n = tetra_normals();
        let p = ring_plane_intersections(&n, &anchors()).unwrap();
        let pm = placement_matrix(&n, &p).unwrap();
        let a = DMatrix::from_fn(PLACEMENT_ROWS, PLACEMENT_COLUMNS, |r, c| pm.matrix[r][c]);
        let svd = a.svd(false, true);
        let vt = svd.v_t.unwrap();
        let k = svd.singular_values.imin();
        let x: Vec<f64> = vt.row(k).iter().copied().collect();
        for (r, &(i, j)) in PAIRS.iter().enumerate() {
            let d = Vec3::from_fn(|c, _| x[2 * c] * p[r].x + x[2 * c + 1] * p[r].y + x[6 + c]);
            assert!(d.cross(&n[i].cross(&n[j])).norm() < 1e-9);
            assert!(d.norm() > 1e-3);
        }
    }

    #[test]
    fn placement_rank_invariant_under_ring_axis_rotation() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, 0.7));
        let n: Vec<Vec3> = tetra_normals().iter().map(|v| r.rotate(v)).collect();
        let a: Vec<Vec3> = anchors().iter().map(|v| r.rotate(v)).collect();
        let pm = placement_matrix(&n, &ring_plane_intersections(&n, &a).unwrap()).unwrap();
        assert_eq!(pm.rank, GENERIC_PLACEMENT_RANK);
    }

    #[test]
    fn placement_coplanar_normals_lose_rank() {
        let n: Vec<Vec3> =
            [Vec3::new(1.0, 0.0, 0.3), Vec3::new(0.0, 1.0, 0.3), Vec3::new(1.0, 1.0, 0.6), Vec3::new(1.0, -1.0, 0.0)]
                .iter()
                .map(|v| v.normalize())
                .collect();
        let p = ring_plane_intersections(&n, &anchors()).unwrap();
        let pm = placement_matrix(&n, &p).unwrap();
        assert!(pm.rank < GENERIC_PLACEMENT_RANK);
        assert!(pm.condition.is_infinite());
        assert!(placement_matrix(&n[..3], &p).is_err());
    }

    #[test]
    fn model_names_parse() {
        assert_eq!("bl2".parse::<IntrinsicModel>().unwrap(), IntrinsicModel::Bl2);
        assert!("bl3".parse::<IntrinsicModel>().is_err());
    }
}
