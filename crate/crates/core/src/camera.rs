//! Pinhole projection and vertex/corner pairing.

use nalgebra::{Matrix3, Matrix3x4};
use serde::{Deserialize, Serialize};

use crate::geom::RigidTransform3;
use crate::{Error, Result, Vec3};

/// Smallest camera-frame depth accepted by [`project_point`].
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    #[serde(default)]
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, skew: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, skew, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!("focal lengths must be positive, got {} and {}", self.fx, self.fy)));
        }
        if ![self.skew, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("intrinsics must be finite".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// The 3×4 matrix `K [I | 0] H`.
pub fn projection_matrix(extrinsic: &RigidTransform3, k: &CameraIntrinsics) -> Matrix3x4<f64> {
    let h = extrinsic.to_matrix();
    k.matrix() * h.fixed_view::<3, 4>(0, 0)
}

/// Projects a LiDAR-frame point through the extrinsic `H` (LiDAR → camera)
/// and the intrinsics.
pub fn project_point(x: &Vec3, extrinsic: &RigidTransform3, k: &CameraIntrinsics) -> Result<PixelPoint> {
    let c = extrinsic.apply(x);
    let h = k.matrix() * c;
    if !(h.z > MIN_DEPTH) {
        return Err(Error::BehindCamera { depth: h.z });
    }
    Ok(PixelPoint { u: h.x / h.z, v: h.y / h.z })
}

pub fn project_points(xs: &[Vec3], extrinsic: &RigidTransform3, k: &CameraIntrinsics) -> Result<Vec<PixelPoint>> {
    xs.iter().map(|x| project_point(x, extrinsic, k)).collect()
}

/// Labels four points as `[top, right, bottom, left]` by index. Top and
/// bottom are the smallest and largest `v`; the other two split by `u`.
fn extremes(p: &[PixelPoint]) -> Result<[usize; 4]> {
    let mut by_v: Vec<usize> = (0..4).collect();
    by_v.sort_by(|&a, &b| p[a].v.total_cmp(&p[b].v));
    let tie = |a: usize, b: usize| (p[a].v - p[b].v).abs() < 1.0;
    if tie(by_v[0], by_v[1]) || tie(by_v[2], by_v[3]) {
        return Err(Error::Degenerate("two corners tie for the top or bottom position".into()));
    }
    let (top, bottom) = (by_v[0], by_v[3]);
    let (a, b) = (by_v[1], by_v[2]);
    if (p[a].u - p[b].u).abs() < 1.0 {
        return Err(Error::Degenerate("two corners tie for the left or right position".into()));
    }
    let (left, right) = if p[a].u < p[b].u { (a, b) } else { (b, a) };
    Ok([top, right, bottom, left])
}

/// Pairs LiDAR vertices with image corners: returns `perm` such that
/// `corners[perm[i]]` corresponds to `vertices[i]`. Vertices are projected
/// with the guess and both sets are labeled top/right/bottom/left.
pub fn sort_correspondences(
    vertices: &[Vec3],
    corners: &[PixelPoint],
    k: &CameraIntrinsics,
    guess: &RigidTransform3,
) -> Result<[usize; 4]> {
    if vertices.len() != 4 || corners.len() != 4 {
        return Err(Error::InvalidInput(format!(
            "need 4 vertices and 4 corners, got {} and {}",
            vertices.len(),
            corners.len()
        )));
    }
    let projected = project_points(vertices, guess, k)?;
    let lv = extremes(&projected)?;
    let ic = extremes(corners)?;
    let mut perm = [0; 4];
    for (l, c) in lv.iter().zip(&ic) {
        perm[*l] = *c;
    }
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{so3_exp, Rotation3};
    use nalgebra::Vector4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k0() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 0.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let unit = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let id = RigidTransform3::identity();
        assert_eq!(project_point(&Vec3::new(0.0, 0.0, 5.0), &id, &unit).unwrap(), PixelPoint::new(0.0, 0.0));
        assert_eq!(project_point(&Vec3::new(1.0, 0.0, 10.0), &id, &k0()).unwrap(), PixelPoint::new(330.0, 240.0));
        assert!(matches!(project_point(&Vec3::new(0.0, 0.0, -1.0), &id, &k0()), Err(Error::BehindCamera { .. })));
        assert!(project_point(&Vec3::new(1.0, 1.0, 0.0), &id, &k0()).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn projection_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = CameraIntrinsics::new(
                rng.random_range(200.0..1500.0),
                rng.random_range(200.0..1500.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.0..1000.0),
                rng.random_range(0.0..800.0),
            )
            .unwrap();
            let w = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let h = RigidTransform3::new(so3_exp(&w), Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let x = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..20.0));
            let p = projection_matrix(&h, &k) * Vector4::new(x.x, x.y, x.z, 1.0);
            let got = project_point(&x, &h, &k).unwrap();
            assert!((got.u - p.x / p.z).abs() < 1e-9 && (got.v - p.y / p.z).abs() < 1e-9);
            // homogeneous scale invariance
            let q = p * 3.7;
            assert!((q.x / q.z - got.u).abs() < 1e-9 && (q.y / q.z - got.v).abs() < 1e-9);
        }
    }

    fn kite() -> Vec<Vec3> {
        // top, right, bottom, left in the camera image under the identity
        vec![Vec3::new(0.1, -0.6, 5.0), Vec3::new(0.5, 0.0, 5.0), Vec3::new(-0.1, 0.5, 5.0), Vec3::new(-0.6, 0.1, 5.0)]
    }

    #[test]
    fn sorting_examples() {
        let id = RigidTransform3::identity();
        let verts = kite();
        let corners = project_points(&verts, &id, &k0()).unwrap();
        assert_eq!(sort_correspondences(&verts, &corners, &k0(), &id).unwrap(), [0, 1, 2, 3]);
        let mut shifted = corners.clone();
        shifted.rotate_left(2);
        assert_eq!(sort_correspondences(&verts, &shifted, &k0(), &id).unwrap(), [2, 3, 0, 1]);
        assert!(sort_correspondences(&verts[..3], &corners, &k0(), &id).is_err());
        let square = vec![Vec3::new(-0.5, -0.5, 5.0), Vec3::new(0.5, -0.5, 5.0), Vec3::new(0.5, 0.5, 5.0), Vec3::new(-0.5, 0.5, 5.0)];
        let sc = project_points(&square, &id, &k0()).unwrap();
        assert!(sort_correspondences(&square, &sc, &k0(), &id).is_err());
    }

    #[test]
    fn sorting_pairs_nearest_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = CameraIntrinsics::new(800.0, 800.0, 0.0, 640.0, 360.0).unwrap();
        for _ in 0..100 {
            let gt = RigidTransform3::new(
                so3_exp(&Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))),
                Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
            );
            let spin = so3_exp(&Vec3::new(0.0, 0.0, rng.random_range(-0.3..0.3)));
            let verts: Vec<Vec3> = kite().iter().map(|v| spin.rotate(&(v - Vec3::new(0.0, 0.0, 5.0))) + Vec3::new(0.0, 0.0, 6.0)).collect();
            let truth = project_points(&verts, &gt, &k).unwrap();
            let mut order: Vec<usize> = (0..4).collect();
            for i in (1..4).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let corners: Vec<PixelPoint> = order.iter().map(|&i| truth[i]).collect();
            let guess = RigidTransform3::new(Rotation3::identity(), Vec3::zeros());
            let perm = sort_correspondences(&verts, &corners, &k, &guess).unwrap();
            for (i, &j) in perm.iter().enumerate() {
                let nearest = (0..4).min_by(|&a, &b| truth[i].distance(&corners[a]).total_cmp(&truth[i].distance(&corners[b]))).unwrap();
                assert_eq!(j, nearest);
            }
        }
    }
}
