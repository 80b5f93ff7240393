//! Scene geometry: analytic solids resting on a table plane, procedural
//! object/scene sampling, and the collision + containment queries the grasp
//! oracle is built on.
//!
//! Objects are upright (yaw-only) unions of boxes, cylinders, and spheres.
//! Every solid is closed under one flattening step: [`ObjectInstance::world_parts`]
//! expands an instance (including nested `Composite`s) into world-frame
//! convex parts, and all queries are exact on those parts.

#[cfg(not(feature = "std"))]
use crate::math::Libm as _;

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use rand::Rng;

use crate::rng::{self, tags};

/// Table workspace is the square `[-WORKSPACE_HALF, WORKSPACE_HALF]^2`,
/// matching the camera footprint at 0.3 m height.
pub const WORKSPACE_HALF: f64 = 0.2;

/// Maximum interpenetration allowed between placed objects.
pub const PENETRATION_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Positions and directions share one representation.
pub type Point3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Normalize an angle to `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    use core::f64::consts::{PI, TAU};
    let mut r = a - TAU * (a / TAU).floor(); // [0, 2*pi), modulo float edges
    if r >= TAU {
        r -= TAU;
    }
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        // only reachable through rounding at the seam
        r = -PI;
    }
    r
}

/// A planar pose / planar action: `(x, y, theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarPose {
    pub const ZERO: PlanarPose = PlanarPose { x: 0.0, y: 0.0, theta: 0.0 };

    /// Construct with `theta` normalized to `[-pi, pi)`.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        PlanarPose { x, y, theta: normalize_angle(theta) }
    }

    /// Treat `self` as a frame and map a pose expressed in it to the parent
    /// frame (rotate the offset by `self.theta`, then translate).
    pub fn compose(self, local: PlanarPose) -> PlanarPose {
        let (s, c) = (self.theta.sin(), self.theta.cos());
        PlanarPose::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.theta + local.theta,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeChild {
    pub shape: Primitive,
    /// Pose of the child in the parent frame, plus a vertical offset.
    pub pose: PlanarPose,
    pub z_offset: f64,
}

/// Analytic solid, centered on its local origin (children of a `Composite`
/// are placed relative to that origin instead).
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Box { half_extents: Vec3 },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Composite { children: Vec<CompositeChild> },
}

impl Primitive {
    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            Primitive::Box { half_extents: h } => {
                if h.x > 0.0 && h.y > 0.0 && h.z > 0.0 {
                    Ok(())
                } else {
                    Err(GeometryError::NonPositiveDimension)
                }
            }
            Primitive::Cylinder { radius, height } => {
                if *radius > 0.0 && *height > 0.0 {
                    Ok(())
                } else {
                    Err(GeometryError::NonPositiveDimension)
                }
            }
            Primitive::Sphere { radius } => {
                if *radius > 0.0 {
                    Ok(())
                } else {
                    Err(GeometryError::NonPositiveDimension)
                }
            }
            Primitive::Composite { children } => {
                if children.len() < 2 {
                    return Err(GeometryError::TooFewChildren);
                }
                if self.depth() > 2 {
                    return Err(GeometryError::NestingTooDeep);
                }
                for c in children {
                    c.shape.validate()?;
                }
                Ok(())
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            Primitive::Composite { children } => {
                1 + children.iter().map(|c| c.shape.depth()).max().unwrap_or(0)
            }
            _ => 0,
        }
    }

    /// Lowest local z reached by the solid.
    pub fn min_z(&self) -> f64 {
        match self {
            Primitive::Box { half_extents } => -half_extents.z,
            Primitive::Cylinder { height, .. } => -0.5 * height,
            Primitive::Sphere { radius } => -radius,
            Primitive::Composite { children } => children
                .iter()
                .map(|c| c.z_offset + c.shape.min_z())
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Highest local z reached by the solid.
    pub fn max_z(&self) -> f64 {
        match self {
            Primitive::Box { half_extents } => half_extents.z,
            Primitive::Cylinder { height, .. } => 0.5 * height,
            Primitive::Sphere { radius } => *radius,
            Primitive::Composite { children } => children
                .iter()
                .map(|c| c.z_offset + c.shape.max_z())
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Smallest half-width the fingers must span to grasp some part of the
    /// solid across a horizontal axis.
    pub fn min_horizontal_half_extent(&self) -> f64 {
        match self {
            Primitive::Box { half_extents } => half_extents.x.min(half_extents.y),
            Primitive::Cylinder { radius, .. } => *radius,
            Primitive::Sphere { radius } => *radius,
            Primitive::Composite { children } => children
                .iter()
                .map(|c| c.shape.min_horizontal_half_extent())
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn max_horizontal_half_extent(&self) -> f64 {
        match self {
            Primitive::Box { half_extents } => half_extents.x.max(half_extents.y),
            Primitive::Cylinder { radius, .. } => *radius,
            Primitive::Sphere { radius } => *radius,
            Primitive::Composite { children } => children
                .iter()
                .map(|c| {
                    c.shape.max_horizontal_half_extent()
                        + (c.pose.x * c.pose.x + c.pose.y * c.pose.y).sqrt()
                })
                .fold(0.0, f64::max),
        }
    }
}

/// A `Primitive` posed on the table: planar position, resting height `z`
/// (local origin height keeping the lowest point on the plane), and yaw.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectInstance {
    pub instance_id: u32,
    pub shape: Primitive,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl ObjectInstance {
    pub fn new(instance_id: u32, shape: Primitive, x: f64, y: f64, z: f64, yaw: f64) -> Self {
        ObjectInstance { instance_id, shape, x, y, z, yaw: normalize_angle(yaw) }
    }

    /// Template constructor: rest the shape on the plane at the origin.
    pub fn template(instance_id: u32, shape: Primitive) -> Self {
        let z = -shape.min_z();
        ObjectInstance::new(instance_id, shape, 0.0, 0.0, z, 0.0)
    }

    /// Place a copy of this template at a new planar pose (keeps resting z).
    pub fn placed_at(&self, x: f64, y: f64, yaw: f64) -> Self {
        ObjectInstance::new(self.instance_id, self.shape.clone(), x, y, self.z, yaw)
    }

    pub fn top_z(&self) -> f64 {
        self.z + self.shape.max_z()
    }

    pub fn bottom_z(&self) -> f64 {
        self.z + self.shape.min_z()
    }

    pub fn height(&self) -> f64 {
        self.shape.max_z() - self.shape.min_z()
    }

    /// Flatten into world-frame convex parts (recursing composites).
    pub fn world_parts(&self) -> Vec<WorldPart> {
        let mut parts = Vec::new();
        flatten(
            &self.shape,
            Vec3::new(self.x, self.y, self.z),
            self.yaw,
            &mut parts,
        );
        parts
    }

    pub fn world_aabb(&self) -> Aabb {
        let parts = self.world_parts();
        let mut aabb = parts[0].aabb();
        for p in &parts[1..] {
            aabb = aabb.union(&p.aabb());
        }
        aabb
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.world_parts().iter().any(|part| part.contains(p))
    }
}

fn flatten(shape: &Primitive, origin: Vec3, yaw: f64, out: &mut Vec<WorldPart>) {
    match shape {
        Primitive::Composite { children } => {
            let (s, c) = (yaw.sin(), yaw.cos());
            for child in children {
                let offset = Vec3::new(
                    c * child.pose.x - s * child.pose.y,
                    s * child.pose.x + c * child.pose.y,
                    child.z_offset,
                );
                flatten(&child.shape, origin + offset, yaw + child.pose.theta, out);
            }
        }
        leaf => {
            let shape = match leaf {
                Primitive::Box { half_extents } => PartShape::Box { half_extents: *half_extents },
                Primitive::Cylinder { radius, height } => {
                    PartShape::Cylinder { radius: *radius, half_height: 0.5 * height }
                }
                Primitive::Sphere { radius } => PartShape::Sphere { radius: *radius },
                Primitive::Composite { .. } => unreachable!(),
            };
            out.push(WorldPart::new(shape, origin, yaw));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartShape {
    Box { half_extents: Vec3 },
    Cylinder { radius: f64, half_height: f64 },
    Sphere { radius: f64 },
}

/// One convex solid in the world frame (center position + yaw).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPart {
    pub shape: PartShape,
    pub center: Vec3,
    pub yaw: f64,
    cos_yaw: f64,
    sin_yaw: f64,
}

impl WorldPart {
    pub fn new(shape: PartShape, center: Vec3, yaw: f64) -> Self {
        let yaw = normalize_angle(yaw);
        let (sin_yaw, cos_yaw) = (yaw.sin(), yaw.cos());
        WorldPart { shape, center, yaw, cos_yaw, sin_yaw }
    }

    pub fn cos_sin(&self) -> (f64, f64) {
        (self.cos_yaw, self.sin_yaw)
    }

    /// World point into the part's local frame.
    pub fn to_local(&self, p: Point3) -> Vec3 {
        let d = p - self.center;
        Vec3::new(
            self.cos_yaw * d.x + self.sin_yaw * d.y,
            -self.sin_yaw * d.x + self.cos_yaw * d.y,
            d.z,
        )
    }

    pub fn contains(&self, p: Point3) -> bool {
        match self.shape {
            PartShape::Box { half_extents: h } => {
                let l = self.to_local(p);
                l.x.abs() <= h.x && l.y.abs() <= h.y && l.z.abs() <= h.z
            }
            PartShape::Cylinder { radius, half_height } => {
                let l = self.to_local(p);
                l.z.abs() <= half_height && l.x * l.x + l.y * l.y <= radius * radius
            }
            PartShape::Sphere { radius } => (p - self.center).norm2() <= radius * radius,
        }
    }

    pub fn bottom_z(&self) -> f64 {
        match self.shape {
            PartShape::Box { half_extents } => self.center.z - half_extents.z,
            PartShape::Cylinder { half_height, .. } => self.center.z - half_height,
            PartShape::Sphere { radius } => self.center.z - radius,
        }
    }

    pub fn top_z(&self) -> f64 {
        match self.shape {
            PartShape::Box { half_extents } => self.center.z + half_extents.z,
            PartShape::Cylinder { half_height, .. } => self.center.z + half_height,
            PartShape::Sphere { radius } => self.center.z + radius,
        }
    }

    pub fn aabb(&self) -> Aabb {
        let (ex, ey, ez) = match self.shape {
            PartShape::Box { half_extents: h } => {
                let c = self.cos_yaw.abs();
                let s = self.sin_yaw.abs();
                (h.x * c + h.y * s, h.x * s + h.y * c, h.z)
            }
            PartShape::Cylinder { radius, half_height } => (radius, radius, half_height),
            PartShape::Sphere { radius } => (radius, radius, radius),
        };
        let e = Vec3::new(ex, ey, ez);
        Aabb { min: self.center - e, max: self.center + e }
    }

    /// Signed 2D distance from a world xy point to this part's horizontal
    /// cross-section outline (< 0 inside). Only meaningful for prisms.
    fn xy_signed_distance(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.center.x;
        let dy = py - self.center.y;
        match self.shape {
            PartShape::Box { half_extents: h } => {
                let lx = self.cos_yaw * dx + self.sin_yaw * dy;
                let ly = -self.sin_yaw * dx + self.cos_yaw * dy;
                let qx = lx.abs() - h.x;
                let qy = ly.abs() - h.y;
                if qx <= 0.0 && qy <= 0.0 {
                    qx.max(qy)
                } else {
                    qx.max(0.0).hypot(qy.max(0.0))
                }
            }
            PartShape::Cylinder { radius, .. } => dx.hypot(dy) - radius,
            PartShape::Sphere { radius } => dx.hypot(dy) - radius,
        }
    }

    /// Signed penetration depth between two parts: > 0 iff they overlap.
    pub fn penetration(&self, other: &WorldPart) -> f64 {
        use PartShape::*;
        match (self.shape, other.shape) {
            (Sphere { radius: ra }, Sphere { radius: rb }) => {
                ra + rb - (other.center - self.center).norm()
            }
            (Sphere { radius }, _) => radius - other.signed_distance_3d(self.center),
            (_, Sphere { radius }) => radius - self.signed_distance_3d(other.center),
            _ => {
                let z_overlap =
                    self.top_z().min(other.top_z()) - self.bottom_z().max(other.bottom_z());
                let xy = match (self.shape, other.shape) {
                    (Box { .. }, Box { .. }) => box_box_xy_overlap(self, other),
                    (Box { .. }, Cylinder { radius, .. }) => {
                        radius - self.xy_signed_distance(other.center.x, other.center.y)
                    }
                    (Cylinder { radius, .. }, Box { .. }) => {
                        radius - other.xy_signed_distance(self.center.x, self.center.y)
                    }
                    (Cylinder { radius: ra, .. }, Cylinder { radius: rb, .. }) => {
                        let dx = other.center.x - self.center.x;
                        let dy = other.center.y - self.center.y;
                        ra + rb - dx.hypot(dy)
                    }
                    _ => unreachable!("sphere cases handled above"),
                };
                z_overlap.min(xy)
            }
        }
    }

    /// Signed 3D distance from a point to the part surface (< 0 inside).
    fn signed_distance_3d(&self, p: Point3) -> f64 {
        match self.shape {
            PartShape::Box { half_extents: h } => {
                let l = self.to_local(p);
                let qx = l.x.abs() - h.x;
                let qy = l.y.abs() - h.y;
                let qz = l.z.abs() - h.z;
                if qx <= 0.0 && qy <= 0.0 && qz <= 0.0 {
                    qx.max(qy).max(qz)
                } else {
                    let ox = qx.max(0.0);
                    let oy = qy.max(0.0);
                    let oz = qz.max(0.0);
                    (ox * ox + oy * oy + oz * oz).sqrt()
                }
            }
            PartShape::Cylinder { radius, half_height } => {
                let l = self.to_local(p);
                let qr = (l.x * l.x + l.y * l.y).sqrt() - radius;
                let qz = l.z.abs() - half_height;
                if qr <= 0.0 && qz <= 0.0 {
                    qr.max(qz)
                } else {
                    qr.max(0.0).hypot(qz.max(0.0))
                }
            }
            PartShape::Sphere { radius } => (p - self.center).norm() - radius,
        }
    }
}

/// 2D separating-axis overlap of two yawed boxes (exact minimal overlap
/// along the four face normals; > 0 iff the cross-sections intersect).
fn box_box_xy_overlap(a: &WorldPart, b: &WorldPart) -> f64 {
    let (ha, hb) = match (a.shape, b.shape) {
        (PartShape::Box { half_extents: ha }, PartShape::Box { half_extents: hb }) => (ha, hb),
        _ => unreachable!(),
    };
    let d = (b.center.x - a.center.x, b.center.y - a.center.y);
    let axes = [
        (a.cos_yaw, a.sin_yaw),
        (-a.sin_yaw, a.cos_yaw),
        (b.cos_yaw, b.sin_yaw),
        (-b.sin_yaw, b.cos_yaw),
    ];
    let mut min_overlap = f64::INFINITY;
    for (ux, uy) in axes {
        let proj = |part: &WorldPart, h: Vec3| -> f64 {
            let cx = part.cos_yaw * ux + part.sin_yaw * uy;
            let cy = -part.sin_yaw * ux + part.cos_yaw * uy;
            h.x * cx.abs() + h.y * cy.abs()
        };
        let overlap = proj(a, ha) + proj(b, hb) - (d.0 * ux + d.1 * uy).abs();
        min_overlap = min_overlap.min(overlap);
    }
    min_overlap
}

/// Signed penetration between two placed objects: > 0 iff they overlap.
/// Exact for all shape pairs; composites take the max over their parts.
pub fn signed_penetration(a: &ObjectInstance, b: &ObjectInstance) -> f64 {
    let pa = a.world_parts();
    let pb = b.world_parts();
    parts_penetration(&pa, &pb)
}

pub fn parts_penetration(pa: &[WorldPart], pb: &[WorldPart]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for a in pa {
        for b in pb {
            best = best.max(a.penetration(b));
        }
    }
    best
}

/// Exact containment test (union over composite children).
pub fn point_in_object(p: Point3, o: &ObjectInstance) -> bool {
    o.contains(p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: Vec3::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y), self.min.z.min(o.min.z)),
            max: Vec3::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y), self.max.z.max(o.max.z)),
        }
    }

    pub fn inflate(&self, r: f64) -> Aabb {
        let e = Vec3::new(r, r, r);
        Aabb { min: self.min - e, max: self.max + e }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }
}

/// A generated tabletop scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub objects: Vec<ObjectInstance>,
}

impl Scene {
    pub fn shortest_object_height(&self) -> f64 {
        self.objects
            .iter()
            .map(ObjectInstance::height)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_point(&self, p: Point3) -> bool {
        self.objects.iter().any(|o| o.contains(p))
    }
}

/// Dimension ranges for the procedural object library.
#[derive(Clone, Copy, Debug)]
pub struct LibraryConfig {
    pub box_half_extent: (f64, f64),
    pub cylinder_radius: (f64, f64),
    pub cylinder_height: (f64, f64),
    pub sphere_radius: (f64, f64),
    /// Every template must have some horizontal half-extent at or below
    /// this, so a grasp axis fits the 8.5 cm hand opening.
    pub max_grasp_half_extent: f64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            box_half_extent: (0.01, 0.06),
            cylinder_radius: (0.01, 0.045),
            cylinder_height: (0.02, 0.15),
            sphere_radius: (0.02, 0.045),
            max_grasp_half_extent: 0.0425,
        }
    }
}

/// Procedurally sample `count` object templates (resting at the origin).
pub fn build_object_library(
    seed: u64,
    count: usize,
) -> Result<Vec<ObjectInstance>, GeometryError> {
    build_object_library_with(seed, count, &LibraryConfig::default())
}

pub fn build_object_library_with(
    seed: u64,
    count: usize,
    cfg: &LibraryConfig,
) -> Result<Vec<ObjectInstance>, GeometryError> {
    if count == 0 {
        return Err(GeometryError::ZeroCount);
    }
    let mut rng = rng::stream(seed, &[tags::LIBRARY]);
    let mut templates = Vec::with_capacity(count);
    for id in 0..count {
        // Rejection loop: keep only shapes with a graspable axis.
        let shape = loop {
            let shape = sample_shape(&mut rng, cfg);
            if shape.min_horizontal_half_extent() <= cfg.max_grasp_half_extent {
                break shape;
            }
        };
        debug_assert!(shape.validate().is_ok());
        templates.push(ObjectInstance::template(id as u32, shape));
    }
    Ok(templates)
}

fn sample_leaf<R: Rng>(rng: &mut R, cfg: &LibraryConfig) -> Primitive {
    if rng.gen::<f64>() < 0.5 {
        Primitive::Box {
            half_extents: Vec3::new(
                rng.gen_range(cfg.box_half_extent.0..cfg.box_half_extent.1),
                rng.gen_range(cfg.box_half_extent.0..cfg.box_half_extent.1),
                rng.gen_range(cfg.box_half_extent.0..cfg.box_half_extent.1),
            ),
        }
    } else {
        Primitive::Cylinder {
            radius: rng.gen_range(cfg.cylinder_radius.0..cfg.cylinder_radius.1),
            height: rng.gen_range(cfg.cylinder_height.0..cfg.cylinder_height.1),
        }
    }
}

fn sample_shape<R: Rng>(rng: &mut R, cfg: &LibraryConfig) -> Primitive {
    let roll: f64 = rng.gen();
    if roll < 0.35 {
        Primitive::Box {
            half_extents: Vec3::new(
                rng.gen_range(cfg.box_half_extent.0..cfg.box_half_extent.1),
                rng.gen_range(cfg.box_half_extent.0..cfg.box_half_extent.1),
                rng.gen_range(cfg.box_half_extent.0..cfg.box_half_extent.1),
            ),
        }
    } else if roll < 0.65 {
        Primitive::Cylinder {
            radius: rng.gen_range(cfg.cylinder_radius.0..cfg.cylinder_radius.1),
            height: rng.gen_range(cfg.cylinder_height.0..cfg.cylinder_height.1),
        }
    } else if roll < 0.80 {
        Primitive::Sphere {
            radius: rng.gen_range(cfg.sphere_radius.0..cfg.sphere_radius.1),
        }
    } else {
        sample_composite(rng, cfg)
    }
}

/// Composite recipe: a base part with its bottom on the plane, plus 1-2
/// parts either stacked on top (small lateral jitter) or attached to the
/// side. Yields mug/hammer/dumbbell-like unions out of exact solids.
fn sample_composite<R: Rng>(rng: &mut R, cfg: &LibraryConfig) -> Primitive {
    let n_extra = rng.gen_range(1..=2usize);
    let base = sample_leaf(rng, cfg);
    let base_height = base.max_z() - base.min_z();
    let base_radius = base.max_horizontal_half_extent();
    let mut top = base_height;
    let mut children = alloc::vec![CompositeChild {
        z_offset: 0.5 * base_height,
        pose: PlanarPose::ZERO,
        shape: base,
    }];
    for _ in 0..n_extra {
        let part = sample_leaf(rng, cfg);
        let h = part.max_z() - part.min_z();
        let r = part.max_horizontal_half_extent();
        // Keep every object well below the camera's minimum height.
        if rng.gen::<f64>() < 0.5 && top + h <= 0.2 {
            // stack
            let jx = rng.gen_range(-0.01..0.01);
            let jy = rng.gen_range(-0.01..0.01);
            let theta = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            children.push(CompositeChild {
                shape: part,
                pose: PlanarPose::new(jx, jy, theta),
                z_offset: top + 0.5 * h,
            });
            top += h;
        } else {
            // side attachment, overlapping the base slightly
            let dir = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            let dist = 0.8 * (base_radius + r);
            let theta = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            children.push(CompositeChild {
                shape: part,
                pose: PlanarPose::new(dist * dir.cos(), dist * dir.sin(), theta),
                z_offset: 0.5 * h,
            });
        }
    }
    Primitive::Composite { children }
}

/// Generate a scene: 1-5 objects drawn from the library, rejection-placed
/// in the workspace so no pair interpenetrates by more than
/// [`PENETRATION_TOL`]. Deterministic in `seed`.
pub fn generate_scene(seed: u64, library: &[ObjectInstance]) -> Result<Scene, GeometryError> {
    generate_scene_report(seed, library).map(|(scene, _)| scene)
}

/// As [`generate_scene`], also reporting how many objects were dropped
/// after exhausting their placement attempts.
pub fn generate_scene_report(
    seed: u64,
    library: &[ObjectInstance],
) -> Result<(Scene, usize), GeometryError> {
    if library.is_empty() {
        return Err(GeometryError::EmptyLibrary);
    }
    let mut rng = rng::stream(seed, &[tags::SCENE]);
    let n: usize = rng.gen_range(1..=5);
    let mut objects: Vec<ObjectInstance> = Vec::with_capacity(n);
    let mut dropped = 0usize;
    for _ in 0..n {
        let template = &library[rng.gen_range(0..library.len())];
        let mut placed = false;
        for _attempt in 0..1000 {
            let x = rng.gen_range(-WORKSPACE_HALF..WORKSPACE_HALF);
            let y = rng.gen_range(-WORKSPACE_HALF..WORKSPACE_HALF);
            let yaw = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            let candidate = template.placed_at(x, y, yaw);
            if objects
                .iter()
                .all(|o| signed_penetration(o, &candidate) <= PENETRATION_TOL)
            {
                objects.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            dropped += 1;
        }
    }
    debug_assert!(!objects.is_empty(), "first object always places on an empty table");
    Ok((Scene { seed, objects }, dropped))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryError {
    ZeroCount,
    EmptyLibrary,
    NonPositiveDimension,
    TooFewChildren,
    NestingTooDeep,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::ZeroCount => write!(f, "object count must be at least 1"),
            GeometryError::EmptyLibrary => write!(f, "object library is empty"),
            GeometryError::NonPositiveDimension => write!(f, "primitive dimensions must be positive"),
            GeometryError::TooFewChildren => write!(f, "composite needs at least 2 children"),
            GeometryError::NestingTooDeep => write!(f, "composite nesting depth exceeds 2"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}
