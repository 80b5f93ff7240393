//! Pinhole depth-camera ray tracer.
//!
//! The camera looks straight down (-z), yawed about the vertical axis.
//! Every pixel stores the Euclidean distance from the camera center to the
//! first surface hit along its ray — a range image, not a z-buffer — with
//! 0.0 as the sentinel for "no return". Intersections against the table
//! plane and all primitive parts are analytic.

#[cfg(not(feature = "std"))]
use crate::math::Libm as _;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::{PartShape, Point3, Scene, Vec3, WorldPart};
use crate::rng::{self, tags};

pub const IMAGE_SIZE: usize = 64;
pub const PIXEL_COUNT: usize = IMAGE_SIZE * IMAGE_SIZE;

/// Sentinel value marking an invalid / no-return pixel.
pub const INVALID_DEPTH: f32 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl CameraPose {
    pub fn new(x: f64, y: f64, z: f64, theta: f64) -> Self {
        debug_assert!(z > 0.0);
        CameraPose { x, y, z, theta: crate::geometry::normalize_angle(theta) }
    }

    pub fn position(&self) -> Point3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub vertical_fov: f64,
    pub max_range: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            vertical_fov: 60f64.to_radians(),
            max_range: 1.0,
        }
    }
}

impl CameraIntrinsics {
    /// Half-width of the ground footprint seen from height `z`.
    pub fn footprint_half(&self, z: f64) -> f64 {
        z * (0.5 * self.vertical_fov).tan()
    }
}

/// 64×64 row-major range image in meters; 0.0 marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub pixels: Vec<f32>,
}

impl DepthImage {
    pub fn new_invalid() -> Self {
        DepthImage { pixels: vec![INVALID_DEPTH; PIXEL_COUNT] }
    }

    /// Pixel at column `x`, row `y`.
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * IMAGE_SIZE + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * IMAGE_SIZE + x] = v;
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0.0).count()
    }

    /// Mean over valid pixels; 0.0 if none are valid.
    pub fn valid_mean(&self) -> f32 {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for &p in &self.pixels {
            if p > 0.0 {
                sum += p as f64;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64) as f32
        }
    }
}

/// Ray-trace the scene into a range image.
pub fn render_depth(scene: &Scene, cam: &CameraPose, intr: &CameraIntrinsics) -> DepthImage {
    debug_assert!(cam.z > 0.0);
    debug_assert!(intr.width == IMAGE_SIZE && intr.height == IMAGE_SIZE);
    let parts: Vec<WorldPart> = scene.objects.iter().flat_map(|o| o.world_parts()).collect();
    let tan_half = (0.5 * intr.vertical_fov).tan();
    let (s, c) = (cam.theta.sin(), cam.theta.cos());
    let origin = cam.position();
    let mut img = DepthImage::new_invalid();
    let half = IMAGE_SIZE as f64 / 2.0;
    for py in 0..IMAGE_SIZE {
        let v = ((py as f64 + 0.5) - half) / half * tan_half;
        for px in 0..IMAGE_SIZE {
            let u = ((px as f64 + 0.5) - half) / half * tan_half;
            // Camera-frame direction (u, v, -1), yawed into the world.
            let dir = Vec3::new(c * u - s * v, s * u + c * v, -1.0);
            let dir = dir * (1.0 / dir.norm());
            // Table plane z = 0; dir.z < 0 always for fov < pi.
            let mut t_best = -origin.z / dir.z;
            for part in &parts {
                if let Some(t) = ray_part_intersect(origin, dir, part) {
                    if t < t_best {
                        t_best = t;
                    }
                }
            }
            if t_best <= intr.max_range {
                img.set(px, py, t_best as f32);
            }
        }
    }
    img
}

/// Nearest positive ray parameter hitting `part`, if any. `dir` must be
/// unit-length so the parameter is the Euclidean hit distance.
fn ray_part_intersect(origin: Point3, dir: Vec3, part: &WorldPart) -> Option<f64> {
    match part.shape {
        PartShape::Sphere { radius } => {
            let oc = origin - part.center;
            let b = oc.dot(dir);
            let disc = b * b - (oc.norm2() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            smallest_positive(-b - sq, -b + sq)
        }
        PartShape::Cylinder { radius, half_height } => {
            let ox = origin.x - part.center.x;
            let oy = origin.y - part.center.y;
            let oz = origin.z - part.center.z;
            let mut best: Option<f64> = None;
            // Lateral surface.
            let a = dir.x * dir.x + dir.y * dir.y;
            if a > 1e-300 {
                let b = 2.0 * (ox * dir.x + oy * dir.y);
                let cq = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * cq;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                        if t > 0.0 && (oz + t * dir.z).abs() <= half_height {
                            best = Some(best.map_or(t, |b: f64| b.min(t)));
                        }
                    }
                }
            }
            // End caps.
            if dir.z.abs() > 1e-300 {
                for cap in [half_height, -half_height] {
                    let t = (cap - oz) / dir.z;
                    if t > 0.0 {
                        let hx = ox + t * dir.x;
                        let hy = oy + t * dir.y;
                        if hx * hx + hy * hy <= radius * radius {
                            best = Some(best.map_or(t, |b: f64| b.min(t)));
                        }
                    }
                }
            }
            best
        }
        PartShape::Box { half_extents: h } => {
            // Slab test in the box's local frame.
            let (c, s) = part.cos_sin();
            let d = origin - part.center;
            let lo = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
            let ld = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
            let he = [h.x, h.y, h.z];
            let mut t_min = f64::NEG_INFINITY;
            let mut t_max = f64::INFINITY;
            for i in 0..3 {
                if ld[i].abs() < 1e-300 {
                    if lo[i].abs() > he[i] {
                        return None;
                    }
                } else {
                    let inv = 1.0 / ld[i];
                    let (t1, t2) = ((-he[i] - lo[i]) * inv, (he[i] - lo[i]) * inv);
                    t_min = t_min.max(t1.min(t2));
                    t_max = t_max.min(t1.max(t2));
                }
            }
            if t_max < t_min {
                return None;
            }
            smallest_positive(t_min, t_max)
        }
    }
}

fn smallest_positive(t1: f64, t2: f64) -> Option<f64> {
    if t1 > 0.0 {
        Some(t1)
    } else if t2 > 0.0 {
        Some(t2)
    } else {
        None
    }
}

/// One dilation pass per iteration: every sentinel pixel with at least one
/// valid 8-neighbor takes the maximum of those neighbors (simultaneous
/// update from the previous iteration's image); valid pixels never change.
/// Stops early at a fixed point.
pub fn fill_invalid(img: &DepthImage, iterations: usize) -> DepthImage {
    let mut current = img.clone();
    let mut next = img.clone();
    for _ in 0..iterations {
        let mut changed = false;
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                if current.at(x, y) != INVALID_DEPTH {
                    continue;
                }
                let mut best = INVALID_DEPTH;
                let x0 = x.saturating_sub(1);
                let y0 = y.saturating_sub(1);
                let x1 = (x + 1).min(IMAGE_SIZE - 1);
                let y1 = (y + 1).min(IMAGE_SIZE - 1);
                for ny in y0..=y1 {
                    for nx in x0..=x1 {
                        let v = current.at(nx, ny);
                        if v > best {
                            best = v;
                        }
                    }
                }
                if best != INVALID_DEPTH {
                    next.set(x, y, best);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        core::mem::swap(&mut current, &mut next);
        next.pixels.copy_from_slice(&current.pixels);
    }
    current
}

/// Dilate until every fillable pixel is filled (isolated all-invalid images
/// stay invalid).
pub fn fill_invalid_to_fixpoint(img: &DepthImage) -> DepthImage {
    fill_invalid(img, IMAGE_SIZE)
}

/// Gaussian range noise plus independent pixel dropout on valid pixels.
/// Perturbed values are clamped to `(0, max_range]`; dropped pixels become
/// the sentinel. Deterministic in `seed`.
pub fn add_sensor_noise(
    img: &DepthImage,
    seed: u64,
    sigma: f64,
    dropout_rate: f64,
    intr: &CameraIntrinsics,
) -> DepthImage {
    debug_assert!(sigma >= 0.0 && (0.0..=1.0).contains(&dropout_rate));
    let mut rng = rng::stream(seed, &[tags::SENSOR_NOISE]);
    let mut out = img.clone();
    for p in out.pixels.iter_mut() {
        if *p == INVALID_DEPTH {
            continue;
        }
        let n = rng::standard_normal(&mut rng);
        let u: f64 = rng.gen();
        if sigma > 0.0 {
            let v = (*p as f64 + sigma * n).clamp(1e-6, intr.max_range);
            *p = v as f32;
        }
        if u < dropout_rate {
            *p = INVALID_DEPTH;
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct CameraSampleConfig {
    /// Planar offset disc radius around the chosen object's center.
    pub disc_radius: f64,
    pub z_range: (f64, f64),
}

impl Default for CameraSampleConfig {
    fn default() -> Self {
        CameraSampleConfig { disc_radius: 0.1, z_range: (0.25, 0.40) }
    }
}

/// Random view pose: uniform over a disc around a random object's center,
/// uniform height, uniform yaw. Deterministic in `seed`.
pub fn sample_camera_pose(seed: u64, scene: &Scene, cfg: &CameraSampleConfig) -> CameraPose {
    let mut rng = rng::stream(seed, &[tags::CAMERA]);
    let obj = &scene.objects[rng.gen_range(0..scene.objects.len())];
    let r = cfg.disc_radius * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..core::f64::consts::TAU);
    let z = rng.gen_range(cfg.z_range.0..cfg.z_range.1);
    let theta = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
    CameraPose::new(obj.x + r * phi.cos(), obj.y + r * phi.sin(), z, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ObjectInstance, Primitive};

    fn empty_scene() -> Scene {
        Scene { seed: 0, objects: Vec::new() }
    }

    fn box_scene(hx: f64, hy: f64, hz: f64, x: f64, y: f64) -> Scene {
        let shape = Primitive::Box { half_extents: Vec3::new(hx, hy, hz) };
        Scene { seed: 0, objects: vec![ObjectInstance::new(0, shape, x, y, hz, 0.0)] }
    }

    #[test]
    fn center_pixel_sees_table_at_camera_height() {
        let img = render_depth(
            &empty_scene(),
            &CameraPose::new(0.0, 0.0, 0.3, 0.0),
            &CameraIntrinsics::default(),
        );
        // Center rays are half a pixel off-axis; allow that much slack.
        let center = img.at(32, 32) as f64;
        assert!((center - 0.3).abs() < 1e-4, "center {center}");
        assert_eq!(img.valid_count(), PIXEL_COUNT);
    }

    #[test]
    fn box_top_shortens_center_depth() {
        let scene = box_scene(0.05, 0.05, 0.05, 0.0, 0.0);
        let img = render_depth(
            &scene,
            &CameraPose::new(0.0, 0.0, 0.3, 0.0),
            &CameraIntrinsics::default(),
        );
        let center = img.at(32, 32) as f64;
        assert!((center - 0.2).abs() < 1e-4, "center {center}");
    }

    #[test]
    fn silhouette_shifts_opposite_to_camera_translation() {
        let scene = box_scene(0.04, 0.04, 0.03, 0.0, 0.0);
        let intr = CameraIntrinsics::default();
        let cam_a = CameraPose::new(0.0, 0.0, 0.3, 0.0);
        let cam_b = CameraPose::new(0.05, 0.0, 0.3, 0.0);
        let img_a = render_depth(&scene, &cam_a, &intr);
        let img_b = render_depth(&scene, &cam_b, &intr);
        // Column-profile cross-correlation of the binary silhouettes.
        let profile = |img: &DepthImage| -> Vec<f64> {
            (0..IMAGE_SIZE)
                .map(|x| {
                    (0..IMAGE_SIZE)
                        .filter(|&y| (img.at(x, y) as f64) < 0.3 - 0.01)
                        .count() as f64
                })
                .collect()
        };
        let pa = profile(&img_a);
        let pb = profile(&img_b);
        let mut best_shift = 0i64;
        let mut best_score = f64::NEG_INFINITY;
        for shift in -20i64..=20 {
            let mut score = 0.0;
            for x in 0..IMAGE_SIZE as i64 {
                let xb = x + shift;
                if (0..IMAGE_SIZE as i64).contains(&xb) {
                    score += pa[x as usize] * pb[xb as usize];
                }
            }
            if score > best_score {
                best_score = score;
                best_shift = shift;
            }
        }
        // The silhouette is the box's top face, so use that plane's distance.
        let plane_res = 2.0 * intr.footprint_half(0.3 - 0.06) / IMAGE_SIZE as f64;
        let expected = -0.05 / plane_res; // ≈ -11.5 px
        assert!(
            (best_shift as f64 - expected).abs() <= 1.0,
            "shift {best_shift}, expected {expected}"
        );
    }

    #[test]
    fn pinhole_projection_matches_formula() {
        let intr = CameraIntrinsics::default();
        let cam = CameraPose::new(0.02, -0.04, 0.3, 0.0);
        let (dx, dy) = (0.05, -0.03);
        let scene = Scene {
            seed: 0,
            objects: vec![ObjectInstance::new(
                0,
                Primitive::Sphere { radius: 0.015 },
                cam.x + dx,
                cam.y + dy,
                0.015,
                0.0,
            )],
        };
        let img = render_depth(&scene, &cam, &intr);
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0.0;
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let d = img.at(x, y) as f64;
                if d > 0.0 && d < 0.295 {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0, "sphere not visible");
        let tan_half = (0.5 * intr.vertical_fov).tan();
        let ex = 32.0 + 64.0 * dx / (2.0 * cam.z * tan_half);
        let ey = 32.0 + 64.0 * dy / (2.0 * cam.z * tan_half);
        assert!((sx / n - ex).abs() <= 1.0, "x centroid {} vs {}", sx / n, ex);
        assert!((sy / n - ey).abs() <= 1.0, "y centroid {} vs {}", sy / n, ey);
    }

    #[test]
    fn camera_yaw_rotates_the_image() {
        // Object due +x of the camera; with yaw = +90° the camera's x axis
        // points along world +y, so the object should appear along -v? No:
        // it appears where the camera-frame coordinates of the offset land.
        let scene = box_scene(0.02, 0.02, 0.02, 0.06, 0.0);
        let intr = CameraIntrinsics::default();
        let straight = render_depth(&scene, &CameraPose::new(0.0, 0.0, 0.3, 0.0), &intr);
        let yawed = render_depth(
            &scene,
            &CameraPose::new(0.0, 0.0, 0.3, core::f64::consts::FRAC_PI_2),
            &intr,
        );
        let centroid = |img: &DepthImage| {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut n = 0.0;
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    if (img.at(x, y) as f64) < 0.27 {
                        sx += x as f64;
                        sy += y as f64;
                        n += 1.0;
                    }
                }
            }
            (sx / n, sy / n)
        };
        let (ax, ay) = centroid(&straight);
        let (bx, by) = centroid(&yawed);
        assert!(ax > 36.0 && (ay - 31.5).abs() < 2.0, "straight at ({ax},{ay})");
        // World +x maps to camera-frame -y when the camera yaws +90°.
        assert!(by < 28.0 && (bx - 31.5).abs() < 2.0, "yawed at ({bx},{by})");
    }

    #[test]
    fn fill_invalid_examples() {
        let mut img = DepthImage { pixels: vec![0.25; PIXEL_COUNT] };
        assert_eq!(fill_invalid(&img, 5), img);

        let mut vals = [0.0f32; 8];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = 0.2 + 0.1 * (i as f32 + 1.0) / 8.0;
        }
        img.set(10, 10, INVALID_DEPTH);
        let mut k = 0;
        for (nx, ny) in [(9, 9), (10, 9), (11, 9), (9, 10), (11, 10), (9, 11), (10, 11), (11, 11)] {
            img.set(nx, ny, vals[k]);
            k += 1;
        }
        let filled = fill_invalid(&img, 1);
        assert_eq!(filled.at(10, 10), 0.3);

        // 3-wide invalid stripe: outer columns fill on pass 1, middle on pass 2.
        let mut striped = DepthImage { pixels: vec![0.25; PIXEL_COUNT] };
        for y in 0..IMAGE_SIZE {
            for x in 20..23 {
                striped.set(x, y, INVALID_DEPTH);
            }
        }
        let once = fill_invalid(&striped, 1);
        assert_eq!(once.at(20, 30), 0.25);
        assert_eq!(once.at(22, 30), 0.25);
        assert_eq!(once.at(21, 30), INVALID_DEPTH);
        let twice = fill_invalid(&striped, 2);
        assert_eq!(twice.valid_count(), PIXEL_COUNT);
        // Idempotent once filled.
        assert_eq!(fill_invalid(&twice, 3), twice);
    }

    #[test]
    fn sensor_noise_identity_and_dropout() {
        let scene = box_scene(0.03, 0.03, 0.03, 0.0, 0.0);
        let intr = CameraIntrinsics::default();
        let img = render_depth(&scene, &CameraPose::new(0.0, 0.0, 0.3, 0.0), &intr);
        assert_eq!(add_sensor_noise(&img, 9, 0.0, 0.0, &intr), img);
        let dropped = add_sensor_noise(&img, 9, 0.0, 1.0, &intr);
        assert_eq!(dropped.valid_count(), 0);
    }

    #[test]
    fn sensor_noise_sigma_statistics() {
        let base = DepthImage { pixels: vec![0.5; PIXEL_COUNT] };
        let intr = CameraIntrinsics::default();
        let mut devs: Vec<f64> = Vec::new();
        for seed in 0..3 {
            let noisy = add_sensor_noise(&base, seed, 0.005, 0.0, &intr);
            devs.extend(noisy.pixels.iter().map(|&p| p as f64 - 0.5));
        }
        assert!(devs.len() > 10_000);
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let std =
            (devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / devs.len() as f64).sqrt();
        assert!((0.0045..=0.0055).contains(&std), "std {std}");
    }

    #[test]
    fn camera_pose_sampling_is_deterministic_and_in_range() {
        let lib = crate::geometry::build_object_library(5, 10).unwrap();
        let scene = crate::geometry::generate_scene(3, &lib).unwrap();
        let cfg = CameraSampleConfig::default();
        let a = sample_camera_pose(11, &scene, &cfg);
        assert_eq!(a, sample_camera_pose(11, &scene, &cfg));
        for seed in 0..200 {
            let p = sample_camera_pose(seed, &scene, &cfg);
            assert!((cfg.z_range.0..cfg.z_range.1).contains(&p.z));
            let near_any = scene
                .objects
                .iter()
                .any(|o| ((p.x - o.x).powi(2) + (p.y - o.y).powi(2)).sqrt() <= cfg.disc_radius + 1e-12);
            assert!(near_any);
        }
    }

    #[test]
    fn occlusion_is_monotone_under_union() {
        let lib = crate::geometry::build_object_library(21, 12).unwrap();
        let intr = CameraIntrinsics::default();
        for seed in 0..10 {
            let scene = crate::geometry::generate_scene(seed, &lib).unwrap();
            let cam = sample_camera_pose(seed, &scene, &CameraSampleConfig::default());
            let base = render_depth(&scene, &cam, &intr);
            let mut bigger = scene.clone();
            bigger.objects.push(ObjectInstance::new(
                99,
                Primitive::Sphere { radius: 0.03 },
                cam.x + 0.02,
                cam.y,
                0.03,
                0.0,
            ));
            let over = render_depth(&bigger, &cam, &intr);
            for i in 0..PIXEL_COUNT {
                let a = if base.pixels[i] == INVALID_DEPTH { f32::INFINITY } else { base.pixels[i] };
                let b = if over.pixels[i] == INVALID_DEPTH { f32::INFINITY } else { over.pixels[i] };
                assert!(b <= a, "pixel {i}: {b} > {a}");
            }
        }
    }
}
