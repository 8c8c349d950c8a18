//! Target shape design for sparse LiDAR returns.
//!
//! Candidate quadrilaterals are projective images of a unit square. A shape
//! is scored by how fast its ring edge points slide along the rings when the
//! shape moves in SE(2), in the worst case over in-plane rotations, partial
//! illumination strips and motion directions. [`optimize_shape`] maximizes
//! that worst case.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{projective_from_params, TwistSE2};
use crate::optim::NelderMead;
use crate::targets::signed_area2;
use crate::{seed, Error, Result, Vec2};

/// Vertices `(y, z)` of the shipped optimal shape: the output of
/// [`optimize_shape`] with the default configuration, seed 0 and 16 restarts,
/// rescaled to unit width.
pub const REFERENCE_SHAPE: [[f64; 2]; 4] = [
    [-0.44155201962680396, -0.32527158283219426],
    [0.06251365112709754, -0.2642925213371644],
    [0.558447980373196, -0.030895471537531183],
    [-0.17940961187348958, 0.6204595757068898],
];

/// The nominal square the projective family starts from.
pub fn nominal_square() -> Vec<Vec2> {
    vec![Vec2::new(-0.5, -0.5), Vec2::new(0.5, -0.5), Vec2::new(0.5, 0.5), Vec2::new(-0.5, 0.5)]
}

/// Parameter box for the search: `k`, `λ`, `v₁`, `v₂`, `υ`.
pub const PARAM_LOWER: [f64; 5] = [-2.0, 0.25, -1.5, -1.5, 0.2];
pub const PARAM_UPPER: [f64; 5] = [2.0, 4.0, 1.5, 1.5, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateShape {
    /// `(k, λ, v₁, v₂, υ)`.
    pub params: [f64; 5],
    /// Counterclockwise, centered on the vertex mean, unit area.
    pub vertices: Vec<Vec2>,
    pub width: f64,
    pub height: f64,
}

impl CandidateShape {
    /// Maps the nominal square through `P(k, λ, v, υ)` and normalizes the
    /// result. Fails when the convexity inequality is violated at a vertex.
    pub fn from_params(params: [f64; 5]) -> Result<Self> {
        let [k, lambda, v1, v2, upsilon] = params;
        let p = projective_from_params(k, lambda, Vec2::new(v1, v2), upsilon)?;
        let square = nominal_square();
        for x in &square {
            if !(p.denominator(x) > 1e-9) {
                return Err(Error::InvalidInput("convexity constraint p31·x + p32·y + υ > 0 violated".into()));
            }
        }
        let vertices = normalize(p.apply(&square)?)?;
        Ok(CandidateShape { params, width: extent(&vertices, 0), height: extent(&vertices, 1), vertices })
    }

    pub fn scaled_vertices(&self, size: f64) -> Vec<Vec2> {
        self.vertices.iter().map(|p| p * size).collect()
    }

    pub fn identity() -> Self {
        CandidateShape::from_params([0.0, 1.0, 0.0, 0.0, 1.0]).expect("identity parameters are valid")
    }
}

fn extent(v: &[Vec2], axis: usize) -> f64 {
    let max = v.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
    max - min
}

/// Counterclockwise order, vertex mean at the origin, unit area.
fn normalize(mut v: Vec<Vec2>) -> Result<Vec<Vec2>> {
    let a2 = signed_area2(&v);
    if !(a2.abs() > 1e-12) || !a2.is_finite() {
        return Err(Error::Degenerate("candidate has zero area".into()));
    }
    if a2 < 0.0 {
        v.reverse();
    }
    let mean = v.iter().sum::<Vec2>() / v.len() as f64;
    let s = (2.0 / a2.abs()).sqrt();
    Ok(v.iter().map(|p| (p - mean) * s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeScoreConfig {
    /// In-plane rotations `i·π/n`, `i = 0..n`.
    pub rotations: usize,
    /// Horizontal illumination strips of equal height.
    pub strips: usize,
    pub rings_per_strip: usize,
    /// Faces per spherical angle on the twist sphere.
    pub sphere_grid: usize,
    pub mu: f64,
    /// Candidates are scored at area `size²`.
    pub size: f64,
}

impl Default for ShapeScoreConfig {
    fn default() -> Self {
        ShapeScoreConfig { rotations: 6, strips: 5, rings_per_strip: 4, sphere_grid: 25, mu: 1.0, size: 0.002 }
    }
}

impl ShapeScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotations == 0 || self.strips == 0 || self.rings_per_strip == 0 {
            return Err(Error::InvalidInput("rotations, strips and rings per strip must be ≥ 1".into()));
        }
        if !(self.size > 0.0) || !self.size.is_finite() {
            return Err(Error::InvalidInput("size must be positive".into()));
        }
        if self.sphere_grid < 2 {
            return Err(Error::InvalidInput("sphere grid must be at least 2×2".into()));
        }
        Ok(())
    }

    /// Unit twists at the face centers of a uniform grid in spherical angles.
    pub fn twist_grid(&self) -> Vec<TwistSE2> {
        let g = self.sphere_grid;
        let mut out = Vec::with_capacity(g * g);
        for a in 0..g {
            let polar = (a as f64 + 0.5) * PI / g as f64;
            for b in 0..g {
                let az = (b as f64 + 0.5) * 2.0 * PI / g as f64;
                let (sp, cp) = polar.sin_cos();
                out.push(TwistSE2 { omega: cp, u: sp * az.cos(), v: sp * az.sin() });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePoint {
    pub x: f64,
    pub y: f64,
    /// Index `i` of the edge from vertex `i` to vertex `i+1`.
    pub edge: usize,
    /// Index into the ring list.
    pub ring: usize,
}

/// Intersections of horizontal rings `y = y_r` with the polygon edges. Each
/// edge covers the half-open span `[min y, max y)` so a vertex is reported
/// by one edge only; horizontal edges are skipped.
pub fn ring_edge_points(vertices: &[Vec2], rings: &[f64]) -> Vec<EdgePoint> {
    let n = vertices.len();
    let mut out = Vec::new();
    for (r, &yr) in rings.iter().enumerate() {
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if (b.y - a.y).abs() < 1e-12 {
                continue;
            }
            let (lo, hi) = if a.y < b.y { (a.y, b.y) } else { (b.y, a.y) };
            if yr < lo || yr >= hi {
                continue;
            }
            let x = a.x + (b.x - a.x) / (b.y - a.y) * (yr - a.y);
            out.push(EdgePoint { x, y: yr, edge: i, ring: r });
        }
    }
    out
}

/// Coefficients `g` with `v_x = g · (ω, u, v)` for the edge `a → b` at ring
/// height `y_r`.
fn gradient_coefficients(a: &Vec2, b: &Vec2, yr: f64) -> [f64; 3] {
    let (xi, yi, xj, yj) = (a.x, a.y, b.x, b.y);
    let dy = yi - yj;
    let w = (xi - xj) * (xi * yj - yi * xj + xj * yr - xi * yr) / (dy * dy) - yr;
    let slope = (xj - xi) / (yj - yi);
    [w, 1.0, -slope]
}

/// Velocity along the ring of the edge point on `a → b` at `y_r` under the
/// twist.
pub fn edge_gradient(a: &Vec2, b: &Vec2, yr: f64, twist: &TwistSE2) -> Result<f64> {
    if (b.y - a.y).abs() < 1e-12 {
        return Err(Error::Degenerate("edge is horizontal".into()));
    }
    let g = gradient_coefficients(a, b, yr);
    Ok(g[0] * twist.omega + g[1] * twist.u + g[2] * twist.v)
}

/// `(1/h) Σ v_x²` over the ring edge points; `0` without edge points.
pub fn sensitivity(vertices: &[Vec2], rings: &[f64], twist: &TwistSE2) -> f64 {
    let pts = ring_edge_points(vertices, rings);
    if pts.is_empty() {
        return 0.0;
    }
    let n = vertices.len();
    let h = extent(vertices, 1);
    let s: f64 = pts
        .iter()
        .map(|p| {
            let v = edge_gradient(&vertices[p.edge], &vertices[(p.edge + 1) % n], p.y, twist).unwrap_or(0.0);
            v * v
        })
        .sum();
    s / h
}

/// Sum over rings of the distance between the ring's outermost edge points.
pub fn ring_chord_sum(vertices: &[Vec2], rings: &[f64]) -> f64 {
    let pts = ring_edge_points(vertices, rings);
    (0..rings.len())
        .map(|r| {
            let xs = pts.iter().filter(|p| p.ring == r).map(|p| p.x);
            let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
            let min = xs.fold(f64::INFINITY, f64::min);
            if max > min {
                max - min
            } else {
                0.0
            }
        })
        .sum()
}

/// `Ψ = w·M + μ·Σ dᵢ`.
pub fn shape_score(vertices: &[Vec2], rings: &[f64], twist: &TwistSE2, mu: f64) -> f64 {
    extent(vertices, 0) * sensitivity(vertices, rings, twist) + mu * ring_chord_sum(vertices, rings)
}

fn rotate_about_mean(vertices: &[Vec2], angle: f64) -> Vec<Vec2> {
    let mean = vertices.iter().sum::<Vec2>() / vertices.len() as f64;
    let (s, c) = angle.sin_cos();
    vertices.iter().map(|p| {
        let d = p - mean;
        mean + Vec2::new(c * d.x - s * d.y, s * d.x + c * d.y)
    }).collect()
}

/// Ring heights illuminating strip `j` of `m` over the shape's vertical
/// extent.
pub fn strip_rings(vertices: &[Vec2], strip: usize, strips: usize, rings_per_strip: usize) -> Vec<f64> {
    let lo = vertices.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let h = extent(vertices, 1) / strips as f64;
    let base = lo + strip as f64 * h;
    (0..rings_per_strip).map(|k| base + (k as f64 + 0.5) * h / rings_per_strip as f64).collect()
}

/// Minimum over the twist grid of `Ψ` for fixed vertices and rings.
fn min_score_over_twists(vertices: &[Vec2], rings: &[f64], twists: &[TwistSE2], mu: f64) -> f64 {
    let pts = ring_edge_points(vertices, rings);
    let chords = mu * ring_chord_sum(vertices, rings);
    if pts.is_empty() {
        return chords;
    }
    let n = vertices.len();
    // Σ v² is the quadratic form tᵀ G t of the stacked gradient rows.
    let mut gram = Matrix3::<f64>::zeros();
    for p in &pts {
        let g = gradient_coefficients(&vertices[p.edge], &vertices[(p.edge + 1) % n], p.y);
        let g = nalgebra::Vector3::new(g[0], g[1], g[2]);
        gram += g * g.transpose();
    }
    let scale = extent(vertices, 0) / extent(vertices, 1);
    let min_q = twists
        .iter()
        .map(|t| {
            let x = nalgebra::Vector3::new(t.omega, t.u, t.v);
            x.dot(&(gram * x))
        })
        .fold(f64::INFINITY, f64::min);
    scale * min_q + chords
}

/// Worst case over rotations and strips of the twist-minimized score.
pub fn robust_score(vertices: &[Vec2], config: &ShapeScoreConfig) -> Result<f64> {
    config.validate()?;
    let twists = config.twist_grid();
    Ok(robust_score_with(vertices, config, &twists))
}

fn robust_score_with(vertices: &[Vec2], config: &ShapeScoreConfig, twists: &[TwistSE2]) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..config.rotations {
        let rotated = rotate_about_mean(vertices, i as f64 * PI / config.rotations as f64);
        for j in 0..config.strips {
            let rings = strip_rings(&rotated, j, config.strips, config.rings_per_strip);
            worst = worst.min(min_score_over_twists(&rotated, &rings, twists, config.mu));
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedShape {
    pub shape: CandidateShape,
    pub score: f64,
    /// Score of the nominal square under the same configuration.
    pub square_score: f64,
    pub best_restart: usize,
}

fn in_box(x: &[f64]) -> bool {
    x.iter().zip(PARAM_LOWER.iter().zip(&PARAM_UPPER)).all(|(v, (lo, hi))| v >= lo && v <= hi)
}

/// Maximizes [`robust_score`] over the five projective parameters. Restart 0
/// starts from the identity parameters, the rest from uniform draws in the
/// parameter box. Infeasible parameters score `−∞`.
pub fn optimize_shape(config: &ShapeScoreConfig, seed_value: u64, restarts: usize) -> Result<OptimizedShape> {
    config.validate()?;
    if restarts == 0 {
        return Err(Error::InvalidInput("restarts must be ≥ 1".into()));
    }
    let twists = config.twist_grid();
    let mut rng = seed::rng(seed_value);
    let starts: Vec<[f64; 5]> = (0..restarts)
        .map(|r| {
            if r == 0 {
                [0.0, 1.0, 0.0, 0.0, 1.0]
            } else {
                let mut x = [0.0; 5];
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = rng.random_range(PARAM_LOWER[i]..PARAM_UPPER[i]);
                }
                x
            }
        })
        .collect();
    let nm = NelderMead { max_evaluations: 4000, value_tolerance: 1e-10, parameter_tolerance: 1e-7, max_restarts: 3 };
    let objective = |x: &[f64]| -> f64 {
        if !in_box(x) {
            return f64::INFINITY;
        }
        match CandidateShape::from_params([x[0], x[1], x[2], x[3], x[4]]) {
            Ok(c) => -robust_score_with(&c.scaled_vertices(config.size), config, &twists),
            Err(_) => f64::INFINITY,
        }
    };
    let runs: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|x0| {
            let res = nm.minimize(objective, x0, &[0.2, 0.2, 0.2, 0.2, 0.2]);
            (res.value, res.x)
        })
        .collect();
    let best = (0..runs.len()).fold(0, |b, i| if runs[i].0 < runs[b].0 { i } else { b });
    if !runs[best].0.is_finite() {
        return Err(Error::Optimizer("every restart was infeasible".into()));
    }
    let x = &runs[best].1;
    let shape = CandidateShape::from_params([x[0], x[1], x[2], x[3], x[4]])?;
    let square_score = robust_score_with(&CandidateShape::identity().scaled_vertices(config.size), config, &twists);
    Ok(OptimizedShape { score: -runs[best].0, shape, square_score, best_restart: best })
}

/// Smallest RMS residual over all non-identity vertex relabelings after the
/// best proper rigid alignment. Zero means the shape maps onto itself.
pub fn self_similarity_residual(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..n).collect();
    permutations(&mut perm, 0, &mut |p| {
        if p.iter().enumerate().all(|(i, &j)| i == j) {
            return;
        }
        let target: Vec<Vec2> = p.iter().map(|&j| vertices[j]).collect();
        best = best.min(rigid_fit_rms(vertices, &target));
    });
    best
}

fn permutations(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, f);
        v.swap(k, i);
    }
}

/// RMS residual of the best rotation + translation taking `a` onto `b`.
fn rigid_fit_rms(a: &[Vec2], b: &[Vec2]) -> f64 {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vec2>() / n;
    let cb = b.iter().sum::<Vec2>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        let (p, q) = (p - ca, q - cb);
        sxx += p.x * q.x + p.y * q.y;
        sxy += p.x * q.y - p.y * q.x;
    }
    let theta = sxy.atan2(sxx);
    let (s, c) = theta.sin_cos();
    let e: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let d = p - ca;
            (Vec2::new(c * d.x - s * d.y, s * d.x + c * d.y) - (q - cb)).norm_squared()
        })
        .sum();
    (e / n).sqrt()
}
