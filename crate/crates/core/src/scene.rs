//! Scene data model and the canonical `.scene.json` encoding.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb3, Vec3};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed scene document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid room: {0}")]
    InvalidRoom(String),
}

/// One of the four room walls, numbered counter-clockwise starting at the
/// front wall (`y = min`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Wall {
    Front = 0,
    Right = 1,
    Back = 2,
    Left = 3,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Front, Wall::Right, Wall::Back, Wall::Left];

    /// Unit normal pointing into the room.
    pub fn inward_normal(self) -> (f64, f64) {
        match self {
            Wall::Front => (0.0, 1.0),
            Wall::Right => (-1.0, 0.0),
            Wall::Back => (0.0, -1.0),
            Wall::Left => (1.0, 0.0),
        }
    }

    /// Yaw under which an object's front faces into the room from this wall.
    pub fn facing_yaw(self) -> f64 {
        match self {
            Wall::Front => 0.0,
            Wall::Right => FRAC_PI_2,
            Wall::Back => PI,
            Wall::Left => 3.0 * FRAC_PI_2,
        }
    }

    /// World axis running along the wall (0 = x, 1 = y).
    pub fn along_axis(self) -> usize {
        match self {
            Wall::Front | Wall::Back => 0,
            Wall::Left | Wall::Right => 1,
        }
    }

    pub fn perpendicular(self, other: Wall) -> bool {
        self.along_axis() != other.along_axis()
    }
}

impl From<Wall> for u8 {
    fn from(w: Wall) -> u8 {
        w as u8
    }
}

impl TryFrom<u8> for Wall {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Wall::ALL.get(v as usize).copied().ok_or_else(|| format!("wall index {v} out of range 0..4"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpeningKind {
    Door,
    Window,
}

/// Door or window, modeled as a keep-out rectangle on a wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallOpening {
    pub kind: OpeningKind,
    pub wall: Wall,
    /// Distance from the wall's lower-coordinate end along the wall.
    pub offset: f64,
    pub width: f64,
    pub height: f64,
    /// Bottom edge above the floor (zero for doors).
    #[serde(default)]
    pub sill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub wall_height: f64,
    #[serde(default)]
    pub openings: Vec<WallOpening>,
}

/// Thickness given to wall keep-out boxes.
pub const OPENING_DEPTH: f64 = 0.05;

impl Room {
    pub fn rectangle(x_len: f64, y_len: f64, wall_height: f64) -> Self {
        Self { origin: [0.0, 0.0], extent: [x_len, y_len], wall_height, openings: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidRoom(m));
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return bad(format!("extent must be positive, got {:?}", self.extent));
        }
        if !(self.wall_height > 0.0) {
            return bad(format!("wall height must be positive, got {}", self.wall_height));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return bad("origin must be finite".into());
        }
        for (k, o) in self.openings.iter().enumerate() {
            let span = self.wall_length(o.wall);
            let fits = o.offset >= 0.0
                && o.width > 0.0
                && o.height > 0.0
                && o.sill >= 0.0
                && o.offset + o.width <= span + 1e-9
                && o.sill + o.height <= self.wall_height + 1e-9;
            if !fits {
                return bad(format!("opening {k} does not fit on wall {:?}", o.wall));
            }
        }
        Ok(())
    }

    pub fn min_xy(&self) -> (f64, f64) {
        (self.origin[0], self.origin[1])
    }

    pub fn max_xy(&self) -> (f64, f64) {
        (self.origin[0] + self.extent[0], self.origin[1] + self.extent[1])
    }

    pub fn floor_area(&self) -> f64 {
        self.extent[0] * self.extent[1]
    }

    pub fn center(&self) -> (f64, f64) {
        (self.origin[0] + self.extent[0] / 2.0, self.origin[1] + self.extent[1] / 2.0)
    }

    pub fn wall_length(&self, wall: Wall) -> f64 {
        self.extent[wall.along_axis()]
    }

    /// Coordinate of the wall plane on the axis perpendicular to it.
    pub fn wall_plane(&self, wall: Wall) -> f64 {
        let (x0, y0) = self.min_xy();
        let (x1, y1) = self.max_xy();
        match wall {
            Wall::Front => y0,
            Wall::Right => x1,
            Wall::Back => y1,
            Wall::Left => x0,
        }
    }

    /// Box enclosing the room volume.
    pub fn bounds(&self) -> Aabb3 {
        let (x0, y0) = self.min_xy();
        let (x1, y1) = self.max_xy();
        Aabb3::new(Vec3::new(x0, y0, 0.0), Vec3::new(x1, y1, self.wall_height))
    }

    /// Distances from a footprint to each wall, clamped at zero, in
    /// `Wall::ALL` order.
    pub fn wall_distances(&self, footprint: &Rect) -> [f64; 4] {
        let (x0, y0) = self.min_xy();
        let (x1, y1) = self.max_xy();
        [
            (footprint.min[1] - y0).max(0.0),
            (x1 - footprint.max[0]).max(0.0),
            (y1 - footprint.max[1]).max(0.0),
            (footprint.min[0] - x0).max(0.0),
        ]
    }

    /// Keep-out box of a door or window, extending `OPENING_DEPTH` into the room.
    pub fn opening_box(&self, o: &WallOpening) -> Aabb3 {
        let plane = self.wall_plane(o.wall);
        let start = self.origin[o.wall.along_axis()] + o.offset;
        let (z0, z1) = (o.sill, o.sill + o.height);
        let (a, b) = (start, start + o.width);
        match o.wall {
            Wall::Front => Aabb3::new(Vec3::new(a, plane, z0), Vec3::new(b, plane + OPENING_DEPTH, z1)),
            Wall::Back => Aabb3::new(Vec3::new(a, plane - OPENING_DEPTH, z0), Vec3::new(b, plane, z1)),
            Wall::Left => Aabb3::new(Vec3::new(plane, a, z0), Vec3::new(plane + OPENING_DEPTH, b, z1)),
            Wall::Right => Aabb3::new(Vec3::new(plane - OPENING_DEPTH, a, z0), Vec3::new(plane, b, z1)),
        }
    }
}

/// Axis-aligned rectangle on the floor plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, d: f64) -> Self {
        Self { min: [cx - w / 2.0, cy - d / 2.0], max: [cx + w / 2.0, cy + d / 2.0] }
    }

    pub fn of_box(b: &Aabb3) -> Self {
        Self { min: [b.min.x, b.min.y], max: [b.max.x, b.max.y] }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn depth(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.depth()
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    /// Euclidean gap between two rectangles (zero when they touch or overlap).
    pub fn gap(&self, other: &Rect) -> f64 {
        let dx = (self.min[0] - other.max[0]).max(other.min[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - other.max[1]).max(other.min[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    /// Length of the overlap of the two projections onto `axis`.
    pub fn overlap_along(&self, other: &Rect, axis: usize) -> f64 {
        (self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])).max(0.0)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.overlap_along(other, 0) > 0.0 && self.overlap_along(other, 1) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    FloorObject,
    WallObject,
    SmallObject,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::FloorObject => "floor-object",
            Category::WallObject => "wall-object",
            Category::SmallObject => "small-object",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_matches('*').to_ascii_lowercase().replace([' ', '_'], "-").as_str() {
            "floor-object" => Some(Category::FloorObject),
            "wall-object" => Some(Category::WallObject),
            "small-object" => Some(Category::SmallObject),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub description: String,
    pub category: Category,
    /// Common-sense object size in meters, when an annotator supplied one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_scale: Option<[f64; 3]>,
}

impl ObjectSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, category: Category) -> Self {
        Self { name: name.into(), description: description.into(), category, nominal_scale: None }
    }
}

/// Cosine and sine of a yaw, exact at multiples of a quarter turn.
pub fn yaw_cos_sin(yaw: f64) -> (f64, f64) {
    let quarter = yaw / FRAC_PI_2;
    let k = quarter.round();
    if (quarter - k).abs() < 1e-12 {
        match (k as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (yaw.cos(), yaw.sin())
    }
}

/// Wraps a yaw into `[0, 2π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(TAU);
    if y >= TAU { 0.0 } else { y }
}

/// Direction an object's front faces for a given yaw. Assets face local `+y`.
pub fn front_direction(yaw: f64) -> (f64, f64) {
    let (c, s) = yaw_cos_sin(yaw);
    (-s, c)
}

/// Floor-plane half extents of a box of local half size `(hx, hy)` rotated by `yaw`.
pub fn rotated_half_extents(hx: f64, hy: f64, yaw: f64) -> (f64, f64) {
    let (c, s) = yaw_cos_sin(yaw);
    let (c, s) = (c.abs(), s.abs());
    (c * hx + s * hy, s * hx + c * hy)
}

/// World box of an asset of size `asset_size` placed with its base center at
/// `position`, rotated by `yaw` about `+z` and scaled per axis by `scale`.
pub fn placed_bbox(asset_size: [f64; 3], position: Vec3, yaw: f64, scale: [f64; 3]) -> Aabb3 {
    let hx = asset_size[0] * scale[0] / 2.0;
    let hy = asset_size[1] * scale[1] / 2.0;
    let h = asset_size[2] * scale[2];
    let (ex, ey) = rotated_half_extents(hx, hy, yaw);
    Aabb3::new(
        Vec3::new(position.x - ex, position.y - ey, position.z),
        Vec3::new(position.x + ex, position.y + ey, position.z + h),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: String,
    pub spec: ObjectSpec,
    pub asset_id: String,
    /// Size of the unscaled asset mesh bounds (local x = width, y = depth, z = height).
    pub asset_size: [f64; 3],
    /// Center of the base of the object.
    pub position: Vec3,
    pub yaw: f64,
    pub scale: [f64; 3],
    pub world_bbox: Aabb3,
}

impl ObjectInstance {
    pub fn new(
        id: impl Into<String>,
        spec: ObjectSpec,
        asset_id: impl Into<String>,
        asset_size: [f64; 3],
        position: Vec3,
        yaw: f64,
        scale: [f64; 3],
    ) -> Self {
        let yaw = normalize_yaw(yaw);
        let world_bbox = placed_bbox(asset_size, position, yaw, scale);
        Self { id: id.into(), spec, asset_id: asset_id.into(), asset_size, position, yaw, scale, world_bbox }
    }

    pub fn category(&self) -> Category {
        self.spec.category
    }

    pub fn footprint(&self) -> Rect {
        Rect::of_box(&self.world_bbox)
    }

    pub fn recomputed_bbox(&self) -> Aabb3 {
        placed_bbox(self.asset_size, self.position, self.yaw, self.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    ViewSelected,
    InpaintAccepted,
    InpaintRejected,
    ObjectLifted,
    ObjectPlaced,
    ObjectSkipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassEvent {
    pub ordinal: u64,
    pub kind: EventKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub room: Room,
    pub instances: Vec<ObjectInstance>,
    pub rng_seed: u64,
    pub pass_log: Vec<PassEvent>,
}

impl SceneState {
    pub fn new(room: Room, rng_seed: u64) -> Self {
        Self { room, instances: Vec::new(), rng_seed, pass_log: Vec::new() }
    }

    pub fn get(&self, id: &str) -> Option<&ObjectInstance> {
        self.instances.iter().find(|inst| inst.id == id)
    }

    pub fn floor_objects(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.instances.iter().filter(|i| i.category() == Category::FloorObject)
    }

    /// Appends an event with the next ordinal.
    pub fn log(&mut self, kind: EventKind, payload: impl Into<String>) {
        let ordinal = self.pass_log.last().map_or(0, |e| e.ordinal + 1);
        self.pass_log.push(PassEvent { ordinal, kind, payload: payload.into() });
    }

    pub fn count_events(&self, kind: EventKind) -> usize {
        self.pass_log.iter().filter(|e| e.kind == kind).count()
    }

    /// Identifier not yet used by any instance, derived from `name`.
    pub fn fresh_id(&self, name: &str) -> String {
        let slug: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        let mut n = self.instances.len();
        loop {
            let id = format!("{slug}-{n:03}");
            if self.get(&id).is_none() {
                return id;
            }
            n += 1;
        }
    }
}

// On-disk layout. Field order here is the canonical key order.

#[derive(Serialize, Deserialize)]
struct SceneDocument {
    room: Room,
    instances: Vec<InstanceRecord>,
    seed: u64,
    log: Vec<PassEvent>,
}

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: String,
    name: String,
    description: String,
    category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nominal_scale: Option<[f64; 3]>,
    asset_id: String,
    asset_size: [f64; 3],
    position: [f64; 3],
    yaw: f64,
    scale: [f64; 3],
    bbox: BoxRecord,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&ObjectInstance> for InstanceRecord {
    fn from(i: &ObjectInstance) -> Self {
        Self {
            id: i.id.clone(),
            name: i.spec.name.clone(),
            description: i.spec.description.clone(),
            category: i.spec.category,
            nominal_scale: i.spec.nominal_scale,
            asset_id: i.asset_id.clone(),
            asset_size: i.asset_size,
            position: arr(&i.position),
            yaw: i.yaw,
            scale: i.scale,
            bbox: BoxRecord { min: arr(&i.world_bbox.min), max: arr(&i.world_bbox.max) },
        }
    }
}

impl From<InstanceRecord> for ObjectInstance {
    fn from(r: InstanceRecord) -> Self {
        Self {
            id: r.id,
            spec: ObjectSpec {
                name: r.name,
                description: r.description,
                category: r.category,
                nominal_scale: r.nominal_scale,
            },
            asset_id: r.asset_id,
            asset_size: r.asset_size,
            position: Vec3::from(r.position),
            yaw: r.yaw,
            scale: r.scale,
            world_bbox: Aabb3 { min: Vec3::from(r.bbox.min), max: Vec3::from(r.bbox.max) },
        }
    }
}

/// Canonical encoding: fixed key order, two-space indentation, shortest
/// round-trip decimal floats and a trailing newline.
pub fn serialize_scene(scene: &SceneState) -> Vec<u8> {
    let doc = SceneDocument {
        room: scene.room.clone(),
        instances: scene.instances.iter().map(InstanceRecord::from).collect(),
        seed: scene.rng_seed,
        log: scene.pass_log.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("scene values are finite");
    bytes.push(b'\n');
    bytes
}

pub fn deserialize_scene(bytes: &[u8]) -> Result<SceneState, SceneError> {
    let doc: SceneDocument = serde_json::from_slice(bytes)?;
    doc.room.validate()?;
    Ok(SceneState {
        room: doc.room,
        instances: doc.instances.into_iter().map(ObjectInstance::from).collect(),
        rng_seed: doc.seed,
        pass_log: doc.log,
    })
}

/// Instance counts grouped by name, sorted by name.
pub fn inventory_summary(scene: &SceneState) -> Vec<(String, usize)> {
    let mut counts = BTreeMap::new();
    for inst in &scene.instances {
        *counts.entry(inst.spec.name.clone()).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}
