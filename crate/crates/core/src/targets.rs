//! Reference target models placed at the LiDAR origin.
//!
//! A target is a convex polygon in the `y`-`z` plane with a slab thickness
//! `±ε` along `x`. Its region of interest (RoI) is the polygon extruded over
//! that slab.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec2, Vec3};

/// Default half-thickness of the target slab in meters.
pub const DEFAULT_EPSILON: f64 = 0.035;

/// Convex polygon with vertices `(y, z)` in meters, counterclockwise, centered
/// on the vertex mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonTarget {
    vertices: Vec<Vec2>,
    epsilon: f64,
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Twice the signed area; positive for counterclockwise order.
pub(crate) fn signed_area2(pts: &[Vec2]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| cross(&pts[i], &pts[(i + 1) % n])).sum()
}

impl PolygonTarget {
    /// Builds a target, reorienting to counterclockwise order and moving the
    /// vertex mean to the origin.
    pub fn new(vertices: Vec<Vec2>, epsilon: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(format!("polygon needs ≥3 vertices, got {}", vertices.len())));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!("epsilon must be ≥ 0, got {epsilon}")));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::InvalidInput("non-finite vertex".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            if (vertices[(i + 1) % n] - vertices[i]).norm() < 1e-12 {
                return Err(Error::Degenerate(format!("duplicate consecutive vertices at index {i}")));
            }
        }
        let mut vertices = vertices;
        if signed_area2(&vertices) < 0.0 {
            vertices.reverse();
        }
        for i in 0..n {
            let a = vertices[(i + 1) % n] - vertices[i];
            let b = vertices[(i + 2) % n] - vertices[(i + 1) % n];
            if cross(&a, &b) <= 1e-15 {
                return Err(Error::Degenerate(format!("polygon is not strictly convex at vertex {}", (i + 1) % n)));
            }
        }
        let mean = vertices.iter().sum::<Vec2>() / n as f64;
        vertices.iter_mut().for_each(|v| *v -= mean);
        Ok(PolygonTarget { vertices, epsilon })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        PolygonTarget::new(self.vertices.clone(), epsilon)
    }

    /// Uniformly rescales the polygon about its center.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        PolygonTarget::new(self.vertices.iter().map(|v| v * factor).collect(), self.epsilon)
    }

    /// Vertices embedded in 3D on the `x = 0` plane.
    pub fn vertices_3d(&self) -> Vec<Vec3> {
        self.vertices.iter().map(|v| Vec3::new(0.0, v.x, v.y)).collect()
    }

    /// Extent along `y`.
    pub fn width(&self) -> f64 {
        extent(self.vertices.iter().map(|v| v.x))
    }

    /// Extent along `z`.
    pub fn height(&self) -> f64 {
        extent(self.vertices.iter().map(|v| v.y))
    }

    pub fn area(&self) -> f64 {
        0.5 * signed_area2(&self.vertices)
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        let n = self.vertices.len();
        (0..n).map(|i| (self.vertices[(i + 1) % n] - self.vertices[i]).norm()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let file: ShapeFile = serde_json::from_str(&text)?;
        file.into_target()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&ShapeFile::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn extent(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = it.fold(f64::INFINITY, f64::min);
    max - min
}

/// On-disk shape description: `{"vertices": [[y, z], ...], "epsilon": ε}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFile {
    pub vertices: Vec<[f64; 2]>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl ShapeFile {
    pub fn into_target(self) -> Result<PolygonTarget> {
        PolygonTarget::new(self.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect(), self.epsilon)
    }
}

impl From<&PolygonTarget> for ShapeFile {
    fn from(t: &PolygonTarget) -> Self {
        ShapeFile { vertices: t.vertices.iter().map(|v| [v.x, v.y]).collect(), epsilon: t.epsilon }
    }
}

/// One edge line `a·y + b·z + c = 0` and the sign of its interior side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `+1` or `-1`: interior points satisfy `sign·(a y + b z + c) > 0`.
    pub sign: f64,
}

impl EdgeLine {
    pub fn eval(&self, y: f64, z: f64) -> f64 {
        self.a * y + self.b * z + self.c
    }

    /// Euclidean distance to the line, positive on the interior side.
    pub fn signed_distance(&self, y: f64, z: f64) -> f64 {
        self.sign * self.eval(y, z) / (self.a * self.a + self.b * self.b).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLineSet {
    pub lines: Vec<EdgeLine>,
}

/// Line through consecutive vertices `i`, `i+1` (wrapping), with the interior
/// side taken from the centroid.
pub fn edge_lines(target: &PolygonTarget) -> Result<EdgeLineSet> {
    let v = target.vertices();
    let n = v.len();
    let centroid = v.iter().sum::<Vec2>() / n as f64;
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let (p, q) = (v[i], v[(i + 1) % n]);
        if (q - p).norm() < 1e-12 {
            return Err(Error::Degenerate(format!("duplicate consecutive vertices at index {i}")));
        }
        let a = p.y - q.y;
        let b = q.x - p.x;
        let c = -p.y * q.x + q.y * p.x;
        let side = a * centroid.x + b * centroid.y + c;
        lines.push(EdgeLine { a, b, c, sign: if side >= 0.0 { 1.0 } else { -1.0 } });
    }
    Ok(EdgeLineSet { lines })
}

/// Whether a pulled-back point lies inside the target slab.
pub fn roi_contains(target: &PolygonTarget, lines: &EdgeLineSet, p: &Vec3) -> bool {
    p.x.abs() <= target.epsilon() && lines.lines.iter().all(|l| l.sign * l.eval(p.y, p.z) >= 0.0)
}

/// Square of side `d` rotated 45° in the `y`-`z` plane.
pub fn make_diamond(d: f64, epsilon: f64) -> Result<PolygonTarget> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("side length must be positive, got {d}")));
    }
    let r = d / std::f64::consts::SQRT_2;
    PolygonTarget::new(
        vec![Vec2::new(r, 0.0), Vec2::new(0.0, r), Vec2::new(-r, 0.0), Vec2::new(0.0, -r)],
        epsilon,
    )
}

/// Axis-aligned square of side `d`.
pub fn make_square(d: f64, epsilon: f64) -> Result<PolygonTarget> {
    let h = d / 2.0;
    PolygonTarget::new(
        vec![Vec2::new(-h, -h), Vec2::new(h, -h), Vec2::new(h, h), Vec2::new(-h, h)],
        epsilon,
    )
}

/// The asymmetric quadrilateral produced by `optimize-shape` with the default
/// configuration, normalized to unit width. Scale it with
/// [`PolygonTarget::scaled`].
pub fn reference_optimal_shape(epsilon: f64) -> PolygonTarget {
    let v: Vec<Vec2> = crate::shapeopt::REFERENCE_SHAPE.iter().map(|p| Vec2::new(p[0], p[1])).collect();
    PolygonTarget::new(v, epsilon).expect("shipped shape is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unit_square_lines() {
        let sq = make_square(1.0, 0.01).unwrap();
        let lines = edge_lines(&sq).unwrap();
        assert_eq!(lines.lines.len(), 4);
        for l in &lines.lines {
            // each line is y = ±0.5 or z = ±0.5
            let n = (l.a * l.a + l.b * l.b).sqrt();
            assert!((l.c.abs() / n - 0.5).abs() < 1e-15);
            assert!(l.signed_distance(0.0, 0.0) > 0.0);
        }
    }

    #[test]
    fn diamond_lines_are_symmetric() {
        let d = 0.8;
        let t = make_diamond(d, 0.02).unwrap();
        let lines = edge_lines(&t).unwrap();
        for l in &lines.lines {
            let n = (l.a * l.a + l.b * l.b).sqrt();
            // |y| + |z| = d/√2 has distance d/2 from the origin
            assert!((l.signed_distance(0.0, 0.0) - d / 2.0).abs() < 1e-12);
            assert!((l.a.abs() - l.b.abs()).abs() / n < 1e-12);
        }
    }

    #[test]
    fn diamond_geometry() {
        let t = make_diamond(1.0, 0.0).unwrap();
        assert!(t.vertices().iter().any(|v| (v - Vec2::new(0.7071, 0.0)).norm() < 1e-4));
        let big = make_diamond(0.805, DEFAULT_EPSILON).unwrap();
        for l in big.edge_lengths() {
            assert!((l - 0.805).abs() < 1e-12);
        }
        let small = make_diamond(0.158, DEFAULT_EPSILON).unwrap();
        assert!((small.edge_lengths()[0] - 0.158).abs() < 1e-12);
        assert!(make_diamond(0.0, 0.1).is_err());
    }

    #[test]
    fn vertices_lie_on_adjacent_lines() {
        let t = reference_optimal_shape(0.02);
        let lines = edge_lines(&t).unwrap();
        let n = t.vertices().len();
        for i in 0..n {
            let v = t.vertices()[i];
            let before = lines.lines[(i + n - 1) % n];
            let after = lines.lines[i];
            assert!(before.eval(v.x, v.y).abs() < 1e-12);
            assert!(after.eval(v.x, v.y).abs() < 1e-12);
        }
    }

    #[test]
    fn construction_normalizes() {
        // clockwise, off-center input
        let t = PolygonTarget::new(
            vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 2.0), Vec2::new(2.0, 2.0), Vec2::new(2.0, 1.0)],
            0.1,
        )
        .unwrap();
        assert!(t.area() > 0.0);
        let mean = t.vertices().iter().sum::<Vec2>() / 4.0;
        assert!(mean.norm() < 1e-12);
        assert!(PolygonTarget::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], 0.1).is_err());
        // non-convex dart
        let dart = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 1.0), Vec2::new(0.0, 2.0), Vec2::new(0.5, 1.0)];
        assert!(PolygonTarget::new(dart, 0.1).is_err());
    }

    #[test]
    fn roi_basic() {
        let t = make_diamond(1.0, 0.03).unwrap();
        let l = edge_lines(&t).unwrap();
        assert!(roi_contains(&t, &l, &Vec3::zeros()));
        assert!(!roi_contains(&t, &l, &Vec3::new(0.06, 0.0, 0.0)));
    }

    /// Half-plane test written against the raw vertex list.
    fn inside_oracle(poly: &[Vec2], eps: f64, p: &Vec3) -> bool {
        if p.x.abs() > eps {
            return false;
        }
        let n = poly.len();
        (0..n).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            (b.x - a.x) * (p.z - a.y) - (b.y - a.y) * (p.y - a.x) >= 0.0
        })
    }

    #[test]
    fn roi_matches_half_plane_oracle() {
        let t = reference_optimal_shape(0.05).scaled(0.9).unwrap();
        let l = edge_lines(&t).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = Vec3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
            assert_eq!(roi_contains(&t, &l, &p), inside_oracle(t.vertices(), 0.05, &p));
        }
    }

    #[test]
    fn roi_invariant_to_start_vertex_and_inradius_ball() {
        let t = reference_optimal_shape(0.05);
        let mut rotated = t.vertices().to_vec();
        rotated.rotate_left(2);
        let t2 = PolygonTarget::new(rotated, 0.05).unwrap();
        let (l1, l2) = (edge_lines(&t).unwrap(), edge_lines(&t2).unwrap());
        let inradius = l1.lines.iter().map(|l| l.signed_distance(0.0, 0.0)).fold(f64::INFINITY, f64::min);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = Vec3::new(rng.random_range(-0.06..0.06), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            assert_eq!(roi_contains(&t, &l1, &p), roi_contains(&t2, &l2, &p));
            let dir = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if dir.norm() > 1e-6 {
                let q = dir.normalize() * inradius * 0.999 * rng.random_range(0.0..1.0);
                assert!(roi_contains(&t, &l1, &Vec3::new(0.0, q.x, q.y)));
            }
        }
    }

    #[test]
    fn shape_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shape.json");
        let t = make_diamond(0.5, 0.02).unwrap();
        t.save(&path).unwrap();
        let back = PolygonTarget::load(&path).unwrap();
        for (a, b) in t.vertices().iter().zip(back.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(back.epsilon(), 0.02);
    }
}
