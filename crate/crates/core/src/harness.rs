//! Metrics, scene files and the round-robin cross-validation study.
//!
//! A scene holds one LiDAR sweep of a few targets together with the image
//! corners of each target. The round-robin study fits vertices in every
//! scene, calibrates the extrinsic on one group of scenes and measures the
//! reprojection error on every scene outside that group.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector6;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_vertices, fit_plane_svd, RansacParams};
use crate::camera::{project_points, sort_correspondences, CameraIntrinsics, PixelPoint};
use crate::extrinsic::{calibrate_iou, calibrate_pnp, Correspondence, Polygon2, PolygonPair};
use crate::geom::{so3_exp, so3_log, RigidTransform3, Rotation3};
use crate::simlidar::{alternating_bias, face_on_rotation, simulate_scan, LidarSpec, Scan};
use crate::targets::{make_diamond, PolygonTarget, ShapeFile, DEFAULT_EPSILON};
use crate::vertexfit::{extract_edge_points, fit_target_l1, fit_template_p2l, L1Params};
use crate::{seed, Error, Mat3, Result, Vec3};

/// Environment variable that caps the number of worker threads.
pub const THREADS_ENV: &str = "CALIB_THREADS";

/// `√(¼ Σ ‖x̃ᵢ − xᵢ‖²)` for correspondence-ordered vertex sets.
pub fn vertex_rmse(estimated: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch { left: estimated.len(), right: truth.len() });
    }
    if truth.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = estimated.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// Translation error in meters and rotation error in degrees.
pub fn pose_error(estimate: &RigidTransform3, truth: &RigidTransform3) -> (f64, f64) {
    let e_t = (truth.translation - estimate.translation).norm();
    let e_r = so3_log(&(truth.rotation * estimate.rotation.transpose())).norm().to_degrees();
    (e_t, e_r)
}

/// Root mean square pixel distance per corner.
pub fn pixel_rms(projected: &[PixelPoint], corners: &[PixelPoint]) -> Result<f64> {
    if projected.len() != corners.len() {
        return Err(Error::LengthMismatch { left: projected.len(), right: corners.len() });
    }
    if corners.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = projected.iter().zip(corners).map(|(a, b)| a.distance(b).powi(2)).sum();
    Ok((sum / corners.len() as f64).sqrt())
}

/// Reorders `estimated` by the cyclic shift (either direction) closest to
/// `truth`. Fitted vertices come back in method-specific order.
pub fn align_vertices(estimated: &[Vec3], truth: &[Vec3]) -> Result<Vec<Vec3>> {
    let n = truth.len();
    if estimated.len() != n {
        return Err(Error::LengthMismatch { left: estimated.len(), right: n });
    }
    let mut best = (f64::INFINITY, Vec::new());
    for shift in 0..n {
        for reverse in [false, true] {
            let cand: Vec<Vec3> = (0..n)
                .map(|i| {
                    let j = if reverse { (shift + n - i) % n } else { (shift + i) % n };
                    estimated[j]
                })
                .collect();
            let err = vertex_rmse(&cand, truth)?;
            if err < best.0 {
                best = (err, cand);
            }
        }
    }
    Ok(best.1)
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Runs `f` on a pool sized by `CALIB_THREADS` (all cores when unset).
pub fn with_thread_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Error::InvalidInput(format!("{THREADS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTarget {
    pub shape: ShapeFile,
    /// Target frame → LiDAR frame.
    pub pose: RigidTransform3,
    /// Image corners in the order of the shape's vertices.
    pub corners: Vec<PixelPoint>,
    pub scan: Scan,
}

impl SceneTarget {
    pub fn target(&self) -> Result<PolygonTarget> {
        self.shape.clone().into_target()
    }

    pub fn true_vertices(&self) -> Result<Vec<Vec3>> {
        Ok(self.target()?.vertices_3d().iter().map(|v| self.pose.apply(v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub lidar: LidarSpec,
    pub camera: CameraIntrinsics,
    /// LiDAR frame → camera frame.
    pub extrinsic: RigidTransform3,
    pub targets: Vec<SceneTarget>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.lidar.validate()?;
        self.camera.validate()?;
        if self.targets.is_empty() {
            return Err(Error::InvalidInput(format!("scene {} has no targets", self.id)));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.corners.len() != 4 || t.shape.vertices.len() != 4 {
                return Err(Error::InvalidInput(format!(
                    "scene {} target {i}: expected 4 vertices and 4 corners, got {} and {}",
                    self.id,
                    t.shape.vertices.len(),
                    t.corners.len()
                )));
            }
            if let Some(p) = t.scan.points.iter().find(|p| p.ring >= self.lidar.ring_count()) {
                return Err(Error::InvalidInput(format!("scene {} target {i}: ring {} out of range", self.id, p.ring)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let scene: Scene =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Scene files of a directory (`*.json`), ordered by scene id.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut scenes = paths.iter().map(|p| Scene::load(p)).collect::<Result<Vec<_>>>()?;
    scenes.sort_by_key(|s| s.id);
    Ok(scenes)
}

pub fn save_scenes(scenes: &[Scene], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for s in scenes {
        s.save(&dir.join(format!("scene_{:03}.json", s.id)))?;
    }
    Ok(())
}

/// Camera looking along LiDAR `y` with image `x` to the right and image `y`
/// down, mounted 0.1 m to the right of and 0.2 m below the LiDAR, with a
/// small extra rotation.
pub fn default_extrinsic() -> RigidTransform3 {
    let axes = Rotation3::from_matrix(Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)).expect("valid rotation");
    let r = so3_exp(&Vec3::new(0.02, -0.015, 0.01)) * axes;
    let center = Vec3::new(0.1, 0.0, -0.2);
    RigidTransform3::new(r, -r.rotate(&center))
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics { fx: 800.0, fy: 800.0, skew: 0.0, cx: 640.0, cy: 360.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub scenes: usize,
    pub targets_per_scene: usize,
    pub shape: ShapeFile,
    /// Target distance range, meters.
    pub distance: [f64; 2],
    /// Targets spread over `±azimuth_deg` around the forward axis.
    pub azimuth_deg: f64,
    /// Largest random tilt about each in-plane axis, degrees.
    pub tilt_deg: f64,
    /// Elevation of target centers as seen from the LiDAR, degrees.
    pub elevation_deg: f64,
    /// Largest vertical jitter of a target center, meters.
    pub height: f64,
    /// Ring bias and range noise are taken from here.
    pub lidar: LidarSpec,
    pub camera: CameraIntrinsics,
    pub extrinsic: RigidTransform3,
    /// Gaussian noise on image corners, pixels.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let lidar = LidarSpec::default();
        let lidar = LidarSpec { ring_bias: alternating_bias(lidar.ring_count(), 0.03), range_noise: 0.01, ..lidar };
        SceneConfig {
            scenes: 7,
            targets_per_scene: 2,
            shape: ShapeFile::from(&make_diamond(0.805, DEFAULT_EPSILON).expect("valid diamond")),
            // whole targets stay inside the ring table's -9° to 5.7° span
            distance: [5.0, 9.0],
            azimuth_deg: 25.0,
            tilt_deg: 15.0,
            elevation_deg: -1.5,
            height: 0.05,
            lidar,
            camera: default_camera(),
            extrinsic: default_extrinsic(),
            pixel_noise: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 || self.targets_per_scene == 0 {
            return Err(Error::InvalidInput("need at least one scene and one target per scene".into()));
        }
        if !(self.distance[0] > 0.0 && self.distance[1] >= self.distance[0]) {
            return Err(Error::InvalidInput(format!("bad distance range {:?}", self.distance)));
        }
        if !(self.pixel_noise >= 0.0) || !(self.tilt_deg >= 0.0) || !(self.azimuth_deg >= 0.0) || !(self.height >= 0.0) || !self.elevation_deg.is_finite() {
            return Err(Error::InvalidInput("noise, tilt, azimuth and height must be non-negative".into()));
        }
        self.lidar.validate()?;
        self.camera.validate()?;
        self.shape.clone().into_target().map(|_| ())
    }
}

/// Simulates `config.scenes` scenes. Targets of one scene occupy disjoint
/// azimuth sectors.
pub fn generate_scenes(config: &SceneConfig) -> Result<Vec<Scene>> {
    config.validate()?;
    let target = config.shape.clone().into_target()?;
    (0..config.scenes)
        .into_par_iter()
        .map(|id| generate_scene(config, &target, id))
        .collect()
}

fn generate_scene(config: &SceneConfig, target: &PolygonTarget, id: usize) -> Result<Scene> {
    let scene_seed = seed::derive(config.seed, id as u64);
    let mut rng = seed::rng(scene_seed);
    let n = config.targets_per_scene;
    let sector = 2.0 * config.azimuth_deg / n as f64;
    let pixel = Normal::new(0.0, config.pixel_noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut targets = Vec::with_capacity(n);
    for k in 0..n {
        let lo = -config.azimuth_deg + sector * k as f64;
        // keep a quarter sector of margin on both sides
        let az = (lo + sector * rng.random_range(0.25..=0.75)).to_radians();
        let dist = rng.random_range(config.distance[0]..=config.distance[1]);
        let tilt = config.tilt_deg.to_radians();
        let (pitch, yaw) = (rng.random_range(-tilt..=tilt), rng.random_range(-tilt..=tilt));
        let z = dist * config.elevation_deg.to_radians().tan() + rng.random_range(-config.height..=config.height);
        // azimuth is measured from y toward x, a negative turn about z
        let turn = so3_exp(&(Vec3::z() * -az));
        let rotation = turn * so3_exp(&Vec3::new(pitch, 0.0, yaw)) * face_on_rotation();
        let pose = RigidTransform3::new(rotation, turn.rotate(&Vec3::new(0.0, dist, 0.0)) + Vec3::new(0.0, 0.0, z));
        let scan = simulate_scan(&config.lidar, target, &pose, seed::derive(scene_seed, 1 + k as u64))?;
        let truth: Vec<Vec3> = target.vertices_3d().iter().map(|v| pose.apply(v)).collect();
        let mut corners = project_points(&truth, &config.extrinsic, &config.camera)?;
        if config.pixel_noise > 0.0 {
            for c in &mut corners {
                c.u += pixel.sample(&mut rng);
                c.v += pixel.sample(&mut rng);
            }
        }
        targets.push(SceneTarget { shape: ShapeFile::from(target), pose, corners, scan });
    }
    Ok(Scene { id, lidar: config.lidar.clone(), camera: config.camera, extrinsic: config.extrinsic, targets })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Gl1,
    Template,
    Rn,
}

impl std::str::FromStr for FitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gl1" => Ok(FitMethod::Gl1),
            "template" => Ok(FitMethod::Template),
            "rn" => Ok(FitMethod::Rn),
            _ => Err(Error::InvalidInput(format!("unknown fit method '{s}' (expected gl1, template or rn)"))),
        }
    }
}

impl FitMethod {
    pub fn label(&self) -> &'static str {
        match self {
            FitMethod::Gl1 => "GL1",
            FitMethod::Template => "template",
            FitMethod::Rn => "RN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibMethod {
    Pnp,
    Iou,
}

impl std::str::FromStr for CalibMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pnp" => Ok(CalibMethod::Pnp),
            "iou" => Ok(CalibMethod::Iou),
            _ => Err(Error::InvalidInput(format!("unknown calibration method '{s}' (expected pnp or iou)"))),
        }
    }
}

impl CalibMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CalibMethod::Pnp => "PnP",
            CalibMethod::Iou => "IoU",
        }
    }
}

/// Upright pose guess from the returns alone: the plane normal points away
/// from the sensor and the target `z` axis follows the LiDAR `z` axis.
pub fn initial_pose(scan: &Scan) -> Result<RigidTransform3> {
    let (mut n, c) = fit_plane_svd(&scan.positions())?;
    if n.dot(&c) < 0.0 {
        n = -n;
    }
    let up = Vec3::z() - n * n.z;
    if up.norm() < 1e-6 {
        return Err(Error::Degenerate("target plane is horizontal".into()));
    }
    let up = up.normalize();
    let side = up.cross(&n);
    let r = Rotation3::from_matrix(Mat3::from_columns(&[n, side, up]))?;
    Ok(RigidTransform3::new(r, c))
}

/// Vertices of one target by the chosen method.
pub fn fit_vertices(scan: &Scan, target: &PolygonTarget, method: FitMethod, seed: u64) -> Result<Vec<Vec3>> {
    match method {
        FitMethod::Gl1 => {
            let init = initial_pose(scan)?;
            Ok(fit_target_l1(scan, target, &L1Params { seed, ..Default::default() }, &init)?.vertices)
        }
        FitMethod::Template => {
            let init = initial_pose(scan)?;
            let edges: Vec<Vec3> = extract_edge_points(scan).into_iter().map(|e| e.0).collect();
            Ok(fit_template_p2l(&edges, target, &init)?.vertices)
        }
        FitMethod::Rn => Ok(baseline_vertices(scan, &RansacParams { seed, ..Default::default() })?.vertices),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundRobinConfig {
    /// Scene-id groups to train on; empty means every single scene.
    pub training: Vec<Vec<usize>>,
    /// Starting extrinsic. When unset the first scene's extrinsic is
    /// perturbed by a random rotation and translation of the sizes below.
    pub init: Option<RigidTransform3>,
    pub init_rotation_deg: f64,
    pub init_translation: f64,
    pub seed: u64,
}

impl Default for RoundRobinConfig {
    fn default() -> Self {
        RoundRobinConfig { training: Vec::new(), init: None, init_rotation_deg: 2.0, init_translation: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFit {
    pub scene: usize,
    pub target: usize,
    /// Fitted vertices in the order of the shape's vertices; `None` when the
    /// fit failed.
    pub vertices: Option<Vec<Vec3>>,
    pub vertex_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCell {
    pub scene: usize,
    pub rms_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub training: Vec<usize>,
    pub extrinsic: Option<RigidTransform3>,
    pub train_rms_px: Option<f64>,
    pub e_t: Option<f64>,
    pub e_r_deg: Option<f64>,
    /// One cell per scene outside the training group, by scene id.
    pub validation: Vec<ValidationCell>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub cells: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
        Summary { mean, variance: sample_variance(values), cells: values.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub fit: FitMethod,
    pub calib: CalibMethod,
    pub scenes: Vec<usize>,
    pub fits: Vec<TargetFit>,
    pub rows: Vec<TrainingRow>,
    /// Over all validation cells.
    pub validation: Summary,
    pub training: Summary,
}

impl CalibrationReport {
    pub fn validation_values(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.validation.iter().filter_map(|c| c.rms_px)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Training rows × validation columns, one column per scene. Cells of a
    /// scene inside the training group are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,training,train_rms_px");
        for s in &self.scenes {
            let _ = write!(out, ",scene_{s}");
        }
        out.push('\n');
        let label = format!("{}+{}", self.fit.label(), self.calib.label());
        for row in &self.rows {
            let training: Vec<String> = row.training.iter().map(|s| s.to_string()).collect();
            let _ = write!(out, "{label},{},{}", training.join(" "), fmt_opt(row.train_rms_px));
            for s in &self.scenes {
                let cell = row.validation.iter().find(|c| c.scene == *s).and_then(|c| c.rms_px);
                let _ = write!(out, ",{}", fmt_opt(cell));
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn perturbed_init(base: &RigidTransform3, config: &RoundRobinConfig) -> RigidTransform3 {
    let mut rng = seed::rng(seed::derive(config.seed, 0xE1));
    let mut unit = || {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        v.normalize()
    };
    let w = unit() * config.init_rotation_deg.to_radians();
    let t = unit() * config.init_translation;
    base.perturbed(&Vector6::new(w.x, w.y, w.z, t.x, t.y, t.z))
}

struct Fitted<'a> {
    scene: &'a Scene,
    /// Per target: fitted vertices and the image corners in the same order.
    targets: Vec<Option<(Vec<Vec3>, Vec<PixelPoint>)>>,
}

fn calibrate(
    data: &[&Fitted],
    method: CalibMethod,
    init: &RigidTransform3,
) -> Result<RigidTransform3> {
    let k = data.first().ok_or_else(|| Error::InvalidInput("empty training group".into()))?.scene.camera;
    let usable = data.iter().flat_map(|f| f.targets.iter().flatten());
    match method {
        CalibMethod::Pnp => {
            let mut corrs = Vec::new();
            for (verts, corners) in usable {
                let perm = sort_correspondences(verts, corners, &k, init)?;
                corrs.extend(verts.iter().zip(perm).map(|(v, j)| Correspondence { vertex: *v, corner: corners[j] }));
            }
            Ok(calibrate_pnp(&corrs, &k, init)?.extrinsic)
        }
        CalibMethod::Iou => {
            let pairs = usable
                .map(|(verts, corners)| {
                    Ok(PolygonPair { vertices: verts.clone(), image: Polygon2::from_pixels(corners)? })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(calibrate_iou(&pairs, &k, init)?.extrinsic)
        }
    }
}

/// Pixel RMS of a scene's fitted vertices against its corners, pairing by
/// the same ordering rule as calibration.
fn scene_rms(f: &Fitted, h: &RigidTransform3) -> Result<Option<f64>> {
    let k = f.scene.camera;
    let mut projected = Vec::new();
    let mut corners = Vec::new();
    for (verts, cs) in f.targets.iter().flatten() {
        let perm = sort_correspondences(verts, cs, &k, h)?;
        projected.extend(project_points(verts, h, &k)?);
        corners.extend(perm.iter().map(|&j| cs[j]));
    }
    if corners.is_empty() {
        return Ok(None);
    }
    pixel_rms(&projected, &corners).map(Some)
}

/// Fits every target of every scene. Failed fits are kept with their error.
pub fn fit_all(scenes: &[Scene], fit: FitMethod, master_seed: u64) -> Result<Vec<TargetFit>> {
    scenes
        .par_iter()
        .flat_map_iter(|s| (0..s.targets.len()).map(move |t| (s, t)))
        .map(|(s, t)| {
            let st = &s.targets[t];
            let fit_seed = seed::derive(master_seed, ((s.id as u64) << 16) | t as u64);
            match st.target().and_then(|target| fit_vertices(&st.scan, &target, fit, fit_seed)) {
                Ok(v) => {
                    let truth = st.true_vertices()?;
                    let rmse = vertex_rmse(&align_vertices(&v, &truth)?, &truth)?;
                    Ok(TargetFit { scene: s.id, target: t, vertices: Some(v), vertex_rmse: Some(rmse), error: None })
                }
                Err(e) => Ok(TargetFit { scene: s.id, target: t, vertices: None, vertex_rmse: None, error: Some(e.to_string()) }),
            }
        })
        .collect()
}

fn fitted_scenes<'a>(scenes: &'a [Scene], fits: &[TargetFit]) -> Vec<Fitted<'a>> {
    scenes
        .iter()
        .map(|s| Fitted {
            scene: s,
            targets: (0..s.targets.len())
                .map(|t| {
                    let f = fits.iter().find(|f| f.scene == s.id && f.target == t)?;
                    Some((f.vertices.clone()?, s.targets[t].corners.clone()))
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicEstimate {
    pub fit: FitMethod,
    pub calib: CalibMethod,
    pub scenes: Vec<usize>,
    pub extrinsic: RigidTransform3,
    pub rms_px: Option<f64>,
    /// Errors against the extrinsic stored in the first scene.
    pub e_t: f64,
    pub e_r_deg: f64,
    pub fits: Vec<TargetFit>,
}

/// Fits vertices in all given scenes and calibrates once on all of them.
pub fn calibrate_scenes(
    scenes: &[Scene],
    fit: FitMethod,
    calib: CalibMethod,
    config: &RoundRobinConfig,
) -> Result<ExtrinsicEstimate> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no scenes".into()));
    }
    for s in scenes {
        s.validate()?;
    }
    let fits = fit_all(scenes, fit, config.seed)?;
    let fitted = fitted_scenes(scenes, &fits);
    let init = config.init.unwrap_or_else(|| perturbed_init(&scenes[0].extrinsic, config));
    let all: Vec<&Fitted> = fitted.iter().collect();
    let h = calibrate(&all, calib, &init)?;
    let rms: Vec<f64> = all.iter().filter_map(|f| scene_rms(f, &h).ok().flatten()).collect();
    let rms_px = (!rms.is_empty()).then(|| (rms.iter().map(|r| r * r).sum::<f64>() / rms.len() as f64).sqrt());
    let (e_t, e_r_deg) = pose_error(&h, &scenes[0].extrinsic);
    Ok(ExtrinsicEstimate { fit, calib, scenes: scenes.iter().map(|s| s.id).collect(), extrinsic: h, rms_px, e_t, e_r_deg, fits })
}

/// Trains on each group of scenes and validates on every scene outside it.
pub fn round_robin(
    scenes: &[Scene],
    fit: FitMethod,
    calib: CalibMethod,
    config: &RoundRobinConfig,
) -> Result<CalibrationReport> {
    if scenes.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: scenes.len() });
    }
    for s in scenes {
        s.validate()?;
    }
    let ids: Vec<usize> = scenes.iter().map(|s| s.id).collect();
    let groups: Vec<Vec<usize>> =
        if config.training.is_empty() { ids.iter().map(|&i| vec![i]).collect() } else { config.training.clone() };
    for g in &groups {
        if g.is_empty() || g.iter().any(|i| !ids.contains(i)) {
            return Err(Error::InvalidInput(format!("training group {g:?} names unknown scenes")));
        }
        if g.len() == ids.len() {
            return Err(Error::InvalidInput(format!("training group {g:?} leaves no scene for validation")));
        }
    }

    let fits = fit_all(scenes, fit, config.seed)?;
    let fitted = fitted_scenes(scenes, &fits);

    let init = config.init.unwrap_or_else(|| perturbed_init(&scenes[0].extrinsic, config));
    let rows: Vec<TrainingRow> = groups
        .par_iter()
        .map(|g| {
            let train: Vec<&Fitted> = fitted.iter().filter(|f| g.contains(&f.scene.id)).collect();
            let mut row = TrainingRow {
                training: g.clone(),
                extrinsic: None,
                train_rms_px: None,
                e_t: None,
                e_r_deg: None,
                validation: Vec::new(),
                error: None,
            };
            let h = match calibrate(&train, calib, &init) {
                Ok(h) => h,
                Err(e) => {
                    row.error = Some(e.to_string());
                    row.validation = fitted
                        .iter()
                        .filter(|f| !g.contains(&f.scene.id))
                        .map(|f| ValidationCell { scene: f.scene.id, rms_px: None })
                        .collect();
                    return row;
                }
            };
            let truth = train[0].scene.extrinsic;
            let (e_t, e_r) = pose_error(&h, &truth);
            row.extrinsic = Some(h);
            row.e_t = Some(e_t);
            row.e_r_deg = Some(e_r);
            let train_rms: Vec<f64> = train.iter().filter_map(|f| scene_rms(f, &h).ok().flatten()).collect();
            row.train_rms_px = (!train_rms.is_empty())
                .then(|| (train_rms.iter().map(|r| r * r).sum::<f64>() / train_rms.len() as f64).sqrt());
            row.validation = fitted
                .iter()
                .filter(|f| !g.contains(&f.scene.id))
                .map(|f| ValidationCell { scene: f.scene.id, rms_px: scene_rms(f, &h).ok().flatten() })
                .collect();
            row
        })
        .collect();

    let validation = Summary::of(&rows.iter().flat_map(|r| r.validation.iter().filter_map(|c| c.rms_px)).collect::<Vec<_>>());
    let training = Summary::of(&rows.iter().filter_map(|r| r.train_rms_px).collect::<Vec<_>>());
    Ok(CalibrationReport { fit, calib, scenes: ids, fits, rows, validation, training })
}
