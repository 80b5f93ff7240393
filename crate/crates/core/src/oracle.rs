//! Ground-truth planar grasp analysis.
//!
//! Grasps of a scene are enumerated on a deterministic pose grid. A pose
//! qualifies when the open gripper descends around material without touching
//! anything (`candidate_valid`) and squeezing along the closing axis pins the
//! material between antipodal friction cones (`force_closure`). Training
//! labels and experiment scores are weighted pose-space distances to the
//! nearest enumerated grasp.

#[cfg(not(feature = "std"))]
use crate::math::Libm as _;

use alloc::vec::Vec;

use crate::geometry::{
    parts_penetration, Aabb, PartShape, PlanarPose, Point3, Scene, Vec3, WorldPart,
    WORKSPACE_HALF,
};

/// Probe spacing for the material-between-fingers test.
const PROBE_STEP: f64 = 0.0025;

/// Top of the swept approach columns; above every object and camera pose.
const SWEEP_TOP: f64 = 0.5;

/// Hand/object contact tolerance; overlaps deeper than this reject a pose.
const CONTACT_EPS: f64 = 1e-9;

/// Farthest (xy) an object AABB can sit from the hand center while still
/// reaching a probe point; used to prune the enumeration grid.
const PREFILTER_REACH: f64 = 0.044;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperModel {
    pub max_opening: f64,
    pub finger_thickness: f64,
    pub finger_length: f64,
    pub palm_width: f64,
    pub friction_mu: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        GripperModel {
            max_opening: 0.085,
            finger_thickness: 0.01,
            finger_length: 0.04,
            palm_width: 0.02,
            friction_mu: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grasp {
    pub pose: PlanarPose,
    pub grasp_height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspSet {
    pub grasps: Vec<Grasp>,
    /// (dx meters, dtheta radians) of the enumeration grid.
    pub grid_resolution: (f64, f64),
}

impl GraspSet {
    pub fn len(&self) -> usize {
        self.grasps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grasps.is_empty()
    }
}

/// Weighted planar pose metric with 180-degree gripper symmetry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseMetric {
    /// Meters per radian of angular difference.
    pub angular_weight: f64,
    /// Angular period; differences fold into `[0, period/2]`.
    pub angular_symmetry: f64,
}

impl Default for PoseMetric {
    fn default() -> Self {
        PoseMetric {
            angular_weight: 0.001 * 180.0 / core::f64::consts::PI,
            angular_symmetry: core::f64::consts::PI,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleError {
    NoGrasps,
}

impl core::fmt::Display for OracleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OracleError::NoGrasps => write!(f, "grasp set is empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OracleError {}

/// Minimum angular difference modulo `sym`, folded into `[0, sym/2]`.
fn fold_angle(delta: f64, sym: f64) -> f64 {
    let r = delta - sym * (delta / sym).floor();
    r.min(sym - r)
}

pub fn pose_distance(a: &PlanarPose, b: &PlanarPose, m: &PoseMetric) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dth = fold_angle(a.theta - b.theta, m.angular_symmetry);
    let w = m.angular_weight * dth;
    (dx * dx + dy * dy + w * w).sqrt()
}

/// Height of the closing plane: low on the object, but never above half the
/// shortest object in the scene.
pub fn default_grasp_height(scene: &Scene) -> f64 {
    (0.5 * scene.shortest_object_height()).min(0.02)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dx: f64,
    pub dtheta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dx: 0.005, dtheta: 5f64.to_radians() }
    }
}

/// Per-object flattened parts with a cached bound, built once per query.
struct ObjGeom {
    parts: Vec<WorldPart>,
    aabb: Aabb,
}

fn scene_geoms(scene: &Scene) -> Vec<ObjGeom> {
    scene
        .objects
        .iter()
        .map(|o| ObjGeom { parts: o.world_parts(), aabb: o.world_aabb() })
        .collect()
}

/// Swept collision volumes: two finger columns and the palm slab, extended
/// upward through the approach path.
fn hand_parts(pose: &PlanarPose, h: f64, g: &GripperModel) -> [WorldPart; 3] {
    let z_tip = 0.5 * h;
    let z_palm = z_tip + g.finger_length;
    let (s, c) = (pose.theta.sin(), pose.theta.cos());
    let finger_x = 0.5 * g.max_opening + 0.5 * g.finger_thickness;
    let finger_half = Vec3::new(
        0.5 * g.finger_thickness,
        0.5 * g.palm_width,
        0.5 * (SWEEP_TOP - z_tip),
    );
    let finger_z = z_tip + finger_half.z;
    let palm_half = Vec3::new(
        0.5 * g.max_opening + g.finger_thickness,
        0.5 * g.palm_width,
        0.5 * (SWEEP_TOP - z_palm),
    );
    [
        WorldPart::new(
            PartShape::Box { half_extents: finger_half },
            Vec3::new(pose.x + c * finger_x, pose.y + s * finger_x, finger_z),
            pose.theta,
        ),
        WorldPart::new(
            PartShape::Box { half_extents: finger_half },
            Vec3::new(pose.x - c * finger_x, pose.y - s * finger_x, finger_z),
            pose.theta,
        ),
        WorldPart::new(
            PartShape::Box { half_extents: palm_half },
            Vec3::new(pose.x, pose.y, z_palm + palm_half.z),
            pose.theta,
        ),
    ]
}

/// Open hand fits without contact and the closing region holds material.
pub fn candidate_valid(scene: &Scene, pose: &PlanarPose, h: f64, g: &GripperModel) -> bool {
    candidate_valid_impl(&scene_geoms(scene), pose, h, g)
}

fn candidate_valid_impl(objs: &[ObjGeom], pose: &PlanarPose, h: f64, g: &GripperModel) -> bool {
    debug_assert!(h > 0.0);
    let hand = hand_parts(pose, h, g);
    let hand_aabb = hand[0].aabb().union(&hand[1].aabb()).union(&hand[2].aabb());
    for o in objs {
        if hand_aabb.overlaps(&o.aabb) && parts_penetration(&hand, &o.parts) > CONTACT_EPS {
            return false;
        }
    }
    // Material check: dense probe grid over the closing mid-plane (the
    // sheet the closing line sweeps while the hand descends).
    let z_tip = 0.5 * h;
    let hx = 0.5 * g.max_opening;
    let (s, c) = (pose.theta.sin(), pose.theta.cos());
    let region = Aabb {
        min: Vec3::new(pose.x - c.abs() * hx, pose.y - s.abs() * hx, z_tip),
        max: Vec3::new(pose.x + c.abs() * hx, pose.y + s.abs() * hx, z_tip + g.finger_length),
    };
    let nx = (g.max_opening / PROBE_STEP).round() as usize;
    let nz = (g.finger_length / PROBE_STEP).round() as usize;
    for o in objs {
        if !o.aabb.overlaps(&region) {
            continue;
        }
        for i in 0..=nx {
            let gx = -hx + i as f64 * PROBE_STEP;
            let wx = pose.x + c * gx;
            let wy = pose.y + s * gx;
            if !o.aabb.contains_xy(wx, wy) {
                continue;
            }
            for k in 0..=nz {
                let z = z_tip + k as f64 * PROBE_STEP;
                if z < o.aabb.min.z || z > o.aabb.max.z {
                    continue;
                }
                let p = Point3::new(wx, wy, z);
                if o.parts.iter().any(|part| part.contains(p)) {
                    return true;
                }
            }
        }
    }
    false
}

/// Outward surface normal(s) at a finger contact, in the grasp frame.
#[derive(Clone, Copy, Debug)]
enum SliceNormal {
    Face([f64; 2]),
    /// Cross-section vertex: no single surface normal exists there, so the
    /// antipodal test must hold for both adjacent face normals.
    Corner([f64; 2], [f64; 2]),
}

/// First touch of one flat finger face on one part's cross-section: the
/// contact location along the closing axis, its extent across the finger
/// (a point, or a segment for a flush face), and the surface normal there.
#[derive(Clone, Copy, Debug)]
struct Contact {
    x: f64,
    y_lo: f64,
    y_hi: f64,
    normal: SliceNormal,
}

/// Circle cross-section against a finger face advancing from `side` (+1 from
/// +x, -1 from -x) whose width spans `|y| <= band`.
fn circle_first_touch(cx: f64, cy: f64, rho: f64, band: f64, side: f64) -> Option<Contact> {
    // Tangent point if it lies under the finger, else the finger's corner
    // meets the arc.
    let y = cy.clamp(-band, band);
    let dy = y - cy;
    if dy.abs() > rho {
        return None;
    }
    let half = (rho * rho - dy * dy).sqrt();
    let x = cx + side * half;
    Some(Contact { x, y_lo: y, y_hi: y, normal: SliceNormal::Face([side * half / rho, dy / rho]) })
}

/// Rectangle cross-section (center `(cx, cy)`, yaw `phi`, half extents
/// `(hx, hy)` in the grasp frame) against an advancing finger face.
fn rect_first_touch(
    cx: f64,
    cy: f64,
    phi: f64,
    hx: f64,
    hy: f64,
    band: f64,
    side: f64,
) -> Option<Contact> {
    let (sp, cp) = (phi.sin(), phi.cos());
    let corner = |sx: f64, sy: f64| {
        [cx + cp * sx * hx - sp * sy * hy, cy + sp * sx * hx + cp * sy * hy]
    };
    // Counter-clockwise corners and the outward local normal of the edge
    // that starts at each corner.
    let pts = [corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0), corner(-1.0, -1.0)];
    let edge_normals = [
        [cp, sp],   // x = +hx
        [-sp, cp],  // y = +hy
        [-cp, -sp], // x = -hx
        [sp, -cp],  // y = -hy
    ];
    // Candidate contact points: rectangle corners inside the finger band and
    // edge crossings with the band boundaries. Each carries the edges it
    // lies on.
    let mut cands: [([f64; 2], [usize; 2], usize); 16] = [([0.0; 2], [0; 2], 0); 16];
    let mut n_cands = 0;
    for e in 0..4 {
        let a = pts[e];
        let b = pts[(e + 1) % 4];
        if a[1].abs() <= band + 1e-12 {
            let prev = (e + 3) % 4;
            cands[n_cands] = (a, [prev, e], 2);
            n_cands += 1;
        }
        for yb in [band, -band] {
            if (a[1] - yb) * (b[1] - yb) < 0.0 {
                let t = (yb - a[1]) / (b[1] - a[1]);
                cands[n_cands] = ([a[0] + t * (b[0] - a[0]), yb], [e, 0], 1);
                n_cands += 1;
            }
        }
    }
    if n_cands == 0 {
        return None;
    }
    let cands = &cands[..n_cands];
    let best = cands
        .iter()
        .map(|(p, _, _)| side * p[0])
        .fold(f64::NEG_INFINITY, f64::max);
    // Everything the finger face meets simultaneously.
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    let mut seen = [false; 4];
    let mut common = [true; 4];
    for (p, eids, n_eids) in cands {
        if side * p[0] < best - 1e-9 {
            continue;
        }
        y_lo = y_lo.min(p[1]);
        y_hi = y_hi.max(p[1]);
        let mut has = [false; 4];
        for &e in &eids[..*n_eids] {
            has[e] = true;
            seen[e] = true;
        }
        for e in 0..4 {
            common[e] &= has[e];
        }
    }
    let shared = (0..4).find(|&e| common[e]);
    let normal = if y_hi - y_lo > 1e-9 {
        // A flush edge touches along a segment; its outward normal is the
        // contact normal even when a rectangle vertex caps the segment, so
        // take the edge every simultaneous touch lies on.
        match shared {
            Some(e) => SliceNormal::Face(edge_normals[e]),
            None => two_edge_corner(&seen, &edge_normals),
        }
    } else {
        let mut distinct = 0;
        for e in 0..4 {
            distinct += seen[e] as usize;
        }
        match shared {
            Some(e) if distinct == 1 => SliceNormal::Face(edge_normals[e]),
            _ => two_edge_corner(&seen, &edge_normals),
        }
    };
    Some(Contact { x: side * best, y_lo, y_hi, normal })
}

fn two_edge_corner(seen: &[bool; 4], edge_normals: &[[f64; 2]; 4]) -> SliceNormal {
    let first = (0..4).find(|&e| seen[e]).unwrap_or(0);
    let second = (0..4).rfind(|&e| seen[e]).unwrap_or(first);
    SliceNormal::Corner(edge_normals[first], edge_normals[second])
}

fn part_first_touch(
    part: &WorldPart,
    pose: &PlanarPose,
    h: f64,
    band: f64,
    side: f64,
) -> Option<Contact> {
    let (s, c) = (pose.theta.sin(), pose.theta.cos());
    let dx = part.center.x - pose.x;
    let dy = part.center.y - pose.y;
    let cx = c * dx + s * dy;
    let cy = -s * dx + c * dy;
    match part.shape {
        PartShape::Sphere { radius } => {
            let dz = h - part.center.z;
            if dz.abs() > radius {
                return None;
            }
            circle_first_touch(cx, cy, (radius * radius - dz * dz).sqrt(), band, side)
        }
        PartShape::Cylinder { radius, half_height } => {
            if (h - part.center.z).abs() > half_height {
                return None;
            }
            circle_first_touch(cx, cy, radius, band, side)
        }
        PartShape::Box { half_extents } => {
            if (h - part.center.z).abs() > half_extents.z {
                return None;
            }
            rect_first_touch(
                cx,
                cy,
                part.yaw - pose.theta,
                half_extents.x,
                half_extents.y,
                band,
                side,
            )
        }
    }
}

/// Alignment of the contact normal with unit direction `e`. A vertex contact
/// has no single normal, so it only reaches as far as its worse adjacent
/// face: the friction-cone test must hold whichever face the press actually
/// loads.
fn normal_reach(n: &SliceNormal, e: [f64; 2]) -> f64 {
    match *n {
        SliceNormal::Face(f) => f[0] * e[0] + f[1] * e[1],
        SliceNormal::Corner(n1, n2) => {
            (e[0] * n1[0] + e[1] * n1[1]).min(e[0] * n2[0] + e[1] * n2[1])
        }
    }
}

/// Antipodal friction-cone test at the first contacts each flat finger face
/// reaches while closing: the line between the contacts (taking the
/// least-tilted pair when a contact is a flush segment) must lie inside both
/// friction cones.
pub fn force_closure(scene: &Scene, pose: &PlanarPose, h: f64, g: &GripperModel) -> bool {
    debug_assert!(candidate_valid(scene, pose, h, g));
    force_closure_impl(&scene_geoms(scene), pose, h, g)
}

fn force_closure_impl(objs: &[ObjGeom], pose: &PlanarPose, h: f64, g: &GripperModel) -> bool {
    let band = 0.5 * g.palm_width;
    let mut hit_a: Option<Contact> = None;
    let mut hit_b: Option<Contact> = None;
    for o in objs {
        if h < o.aabb.min.z || h > o.aabb.max.z {
            continue;
        }
        for part in &o.parts {
            if let Some(c) = part_first_touch(part, pose, h, band, 1.0) {
                if hit_a.as_ref().map_or(true, |a| c.x > a.x) {
                    hit_a = Some(c);
                }
            }
            if let Some(c) = part_first_touch(part, pose, h, band, -1.0) {
                if hit_b.as_ref().map_or(true, |b| c.x < b.x) {
                    hit_b = Some(c);
                }
            }
        }
    }
    let (Some(a), Some(b)) = (hit_a, hit_b) else {
        return false;
    };
    if a.x - b.x < 1e-12 {
        return false;
    }
    // Least-tilted line between the contact extents.
    let dy = if a.y_lo > b.y_hi {
        b.y_hi - a.y_lo
    } else if b.y_lo > a.y_hi {
        b.y_lo - a.y_hi
    } else {
        0.0
    };
    let dx = b.x - a.x;
    let inv = 1.0 / (dx * dx + dy * dy).sqrt();
    let d = [dx * inv, dy * inv];
    // cos of the friction-cone half-angle atan(mu).
    let cone_cos = 1.0 / (1.0 + g.friction_mu * g.friction_mu).sqrt();
    normal_reach(&a.normal, [-d[0], -d[1]]) >= cone_cos - 1e-12
        && normal_reach(&b.normal, d) >= cone_cos - 1e-12
}

fn xy_aabb_distance(aabb: &Aabb, x: f64, y: f64) -> f64 {
    let dx = (aabb.min.x - x).max(0.0).max(x - aabb.max.x);
    let dy = (aabb.min.y - y).max(0.0).max(y - aabb.max.y);
    (dx * dx + dy * dy).sqrt()
}

/// Exhaustive deterministic sweep of the workspace pose grid.
pub fn enumerate_grasps(scene: &Scene, g: &GripperModel, grid: &GridSpec) -> GraspSet {
    debug_assert!(grid.dx <= 0.005 + 1e-12 && grid.dtheta <= 5f64.to_radians() + 1e-12);
    let h = default_grasp_height(scene);
    let objs = scene_geoms(scene);
    let n_xy = (2.0 * WORKSPACE_HALF / grid.dx).round() as usize;
    let n_th = (core::f64::consts::PI / grid.dtheta).round() as usize;
    let mut grasps = Vec::new();
    for ix in 0..=n_xy {
        let x = -WORKSPACE_HALF + ix as f64 * grid.dx;
        for iy in 0..=n_xy {
            let y = -WORKSPACE_HALF + iy as f64 * grid.dx;
            if !objs.iter().any(|o| xy_aabb_distance(&o.aabb, x, y) <= PREFILTER_REACH) {
                continue;
            }
            for it in 0..n_th {
                let pose = PlanarPose::new(x, y, it as f64 * grid.dtheta);
                if candidate_valid_impl(&objs, &pose, h, g)
                    && force_closure_impl(&objs, &pose, h, g)
                {
                    grasps.push(Grasp { pose, grasp_height: h });
                }
            }
        }
    }
    GraspSet { grasps, grid_resolution: (grid.dx, grid.dtheta) }
}

pub fn distance_to_nearest(
    pose: &PlanarPose,
    gs: &GraspSet,
    m: &PoseMetric,
) -> Result<f64, OracleError> {
    if gs.grasps.is_empty() {
        return Err(OracleError::NoGrasps);
    }
    Ok(gs
        .grasps
        .iter()
        .map(|g| pose_distance(pose, &g.pose, m))
        .fold(f64::INFINITY, f64::min))
}

/// Distance-to-nearest-grasp field over world or camera-frame poses; the
/// exact stand-in for a learned distance predictor.
#[derive(Clone, Debug)]
pub struct OracleField {
    pub set: GraspSet,
    pub metric: PoseMetric,
}

impl OracleField {
    pub fn from_scene(
        scene: &Scene,
        g: &GripperModel,
        grid: &GridSpec,
    ) -> Result<Self, OracleError> {
        let set = enumerate_grasps(scene, g, grid);
        if set.is_empty() {
            return Err(OracleError::NoGrasps);
        }
        Ok(OracleField { set, metric: PoseMetric::default() })
    }

    pub fn distance(&self, world: &PlanarPose) -> f64 {
        distance_to_nearest(world, &self.set, &self.metric).unwrap_or(f64::INFINITY)
    }

    /// Query with a pose expressed in another planar frame (e.g. a camera).
    pub fn distance_in_frame(&self, frame: &PlanarPose, local: &PlanarPose) -> f64 {
        self.distance(&frame.compose(*local))
    }
}
