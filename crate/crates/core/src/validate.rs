//! Post-run scene checks. Deliberately shares no code with the placer.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use crate::geometry::Aabb3;
use crate::scene::{Category, ObjectInstance, SceneState};

/// Tolerance on coordinates, meters.
pub const TOL: f64 = 1e-9;
/// Tolerance on wall-object yaw, radians.
pub const YAW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId(String),
    FloorOverlap { a: String, b: String, depth: [f64; 3] },
    OutsideRoom { id: String, excess: f64 },
    BboxMismatch { id: String, error: f64 },
    WallYaw { id: String, yaw: f64, expected: f64 },
    BadScale(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate instance id `{id}`"),
            Violation::FloorOverlap { a, b, depth } => {
                write!(f, "floor objects `{a}` and `{b}` interpenetrate by {:.3e}/{:.3e}/{:.3e} m", depth[0], depth[1], depth[2])
            }
            Violation::OutsideRoom { id, excess } => write!(f, "`{id}` leaves the room by {excess:.3e} m"),
            Violation::BboxMismatch { id, error } => write!(f, "`{id}` stored bbox is off by {error:.3e} m"),
            Violation::WallYaw { id, yaw, expected } => {
                write!(f, "wall object `{id}` has yaw {yaw:.6} but should face away from its wall ({expected:.6})")
            }
            Violation::BadScale(id) => write!(f, "`{id}` has a non-positive scale or asset size"),
        }
    }
}

/// Box recomputed from the pose by rotating the four base corners.
fn pose_box(inst: &ObjectInstance) -> Aabb3 {
    let sx = inst.asset_size[0] * inst.scale[0];
    let sy = inst.asset_size[1] * inst.scale[1];
    let sz = inst.asset_size[2] * inst.scale[2];
    let (c, s) = (inst.yaw.cos(), inst.yaw.sin());
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (dx, dy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
        let (lx, ly) = (dx * sx, dy * sy);
        let w = [inst.position.x + c * lx - s * ly, inst.position.y + s * lx + c * ly];
        for k in 0..2 {
            lo[k] = lo[k].min(w[k]);
            hi[k] = hi[k].max(w[k]);
        }
    }
    Aabb3::new(
        crate::geometry::Vec3::new(lo[0], lo[1], inst.position.z),
        crate::geometry::Vec3::new(hi[0], hi[1], inst.position.z + sz),
    )
}

fn max_abs_diff(a: &Aabb3, b: &Aabb3) -> f64 {
    (a.min - b.min).abs().max().max((a.max - b.max).abs().max())
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Yaw that turns the asset front (local +y) toward the room from the wall
/// closest to the box.
fn away_from_nearest_wall(scene: &SceneState, b: &Aabb3) -> f64 {
    let r = &scene.room;
    let (x0, y0) = (r.origin[0], r.origin[1]);
    let (x1, y1) = (x0 + r.extent[0], y0 + r.extent[1]);
    // (distance, yaw giving front direction = inward normal)
    let options = [
        (b.min.y - y0, 0.0),
        (x1 - b.max.x, PI / 2.0),
        (y1 - b.max.y, PI),
        (b.min.x - x0, 1.5 * PI),
    ];
    options.iter().copied().fold((f64::INFINITY, 0.0), |best, o| if o.0 < best.0 { o } else { best }).1
}

pub fn validate_scene(scene: &SceneState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for inst in &scene.instances {
        if !seen.insert(inst.id.as_str()) {
            out.push(Violation::DuplicateId(inst.id.clone()));
        }
    }

    let r = &scene.room;
    let room_lo = [r.origin[0], r.origin[1], 0.0];
    let room_hi = [r.origin[0] + r.extent[0], r.origin[1] + r.extent[1], r.wall_height];
    for inst in &scene.instances {
        if inst.scale.iter().chain(&inst.asset_size).any(|v| !(*v > 0.0)) {
            out.push(Violation::BadScale(inst.id.clone()));
        }
        let b = &inst.world_bbox;
        let mut excess: f64 = 0.0;
        for k in 0..3 {
            excess = excess.max(room_lo[k] - b.min[k]).max(b.max[k] - room_hi[k]);
        }
        if excess > TOL {
            out.push(Violation::OutsideRoom { id: inst.id.clone(), excess });
        }
        let error = max_abs_diff(b, &pose_box(inst));
        if !(error <= TOL) {
            out.push(Violation::BboxMismatch { id: inst.id.clone(), error });
        }
        if inst.spec.category == Category::WallObject {
            let expected = away_from_nearest_wall(scene, b);
            if angle_gap(inst.yaw, expected) > YAW_TOL {
                out.push(Violation::WallYaw { id: inst.id.clone(), yaw: inst.yaw, expected });
            }
        }
    }

    let floor: Vec<&ObjectInstance> =
        scene.instances.iter().filter(|i| i.spec.category == Category::FloorObject).collect();
    for (i, a) in floor.iter().enumerate() {
        for b in &floor[i + 1..] {
            let (p, q) = (&a.world_bbox, &b.world_bbox);
            let depth = [0, 1, 2].map(|k| p.max[k].min(q.max[k]) - p.min[k].max(q.min[k]));
            if depth.iter().all(|d| *d > TOL) {
                out.push(Violation::FloorOverlap { a: a.id.clone(), b: b.id.clone(), depth });
            }
        }
    }
    out
}
