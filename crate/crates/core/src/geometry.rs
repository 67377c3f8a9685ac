//! Pinhole camera model, projection and axis-aligned boxes.
//!
//! Conventions used throughout the crate:
//!
//! * world frame is right-handed with `+z` up; the floor is `z = 0`;
//! * image coordinates are continuous, `u` grows to the right and `v` grows
//!   downward, and the center of pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`;
//! * `fov_deg` is the horizontal field of view, the vertical one follows from
//!   the aspect ratio (square pixels);
//! * depth is z-depth, the distance along the camera forward axis.

use std::io::{self, Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidView(&'static str),
    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),
    #[error("cannot build a bounding box from an empty point set")]
    EmptyCloud,
}

/// Serde helper writing a `Vector3<f64>` as a plain `[x, y, z]` array.
pub(crate) mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}

/// Camera defined by a look-at pose and horizontal field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraParams")]
pub struct CameraView {
    #[serde(with = "vec3_serde")]
    pub eye: Vec3,
    #[serde(with = "vec3_serde")]
    pub target: Vec3,
    #[serde(with = "vec3_serde")]
    pub up: Vec3,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    basis: CameraBasis,
}

#[derive(Deserialize)]
struct CameraParams {
    #[serde(with = "vec3_serde")]
    eye: Vec3,
    #[serde(with = "vec3_serde")]
    target: Vec3,
    #[serde(with = "vec3_serde")]
    up: Vec3,
    fov_deg: f64,
    width: u32,
    height: u32,
}

impl TryFrom<CameraParams> for CameraView {
    type Error = GeometryError;

    fn try_from(p: CameraParams) -> Result<Self, Self::Error> {
        CameraView::look_at_with_up(p.eye, p.target, p.up, p.fov_deg, p.width, p.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct CameraBasis {
    forward: Vec3,
    right: Vec3,
    /// Image-up direction in world space (`v` decreases along it).
    up: Vec3,
    focal: f64,
}

impl CameraBasis {
    fn compute(
        eye: &Vec3,
        target: &Vec3,
        up: &Vec3,
        fov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(GeometryError::InvalidView("fov must lie in (0, 180) degrees"));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidView("resolution must be at least 1x1"));
        }
        let dir = target - eye;
        let len = dir.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(GeometryError::InvalidView("eye and target coincide"));
        }
        let forward = dir / len;
        let up_len = up.norm();
        if !(up_len > 1e-12) {
            return Err(GeometryError::InvalidView("up vector is zero"));
        }
        let side = forward.cross(&(up / up_len));
        let side_len = side.norm();
        if side_len < 1e-9 {
            return Err(GeometryError::InvalidView("forward axis is parallel to up"));
        }
        let right = side / side_len;
        let cam_up = right.cross(&forward);
        let focal = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Ok(Self { forward, right, up: cam_up, focal })
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn visible(self) -> Option<(f64, f64, f64)> {
        match self {
            Projection::Visible { u, v, depth } => Some((u, v, depth)),
            Projection::BehindCamera => None,
        }
    }
}

/// Smallest forward distance treated as "in front of" the camera.
pub const NEAR_PLANE: f64 = 1e-6;

impl CameraView {
    /// Look-at camera with world `+z` as the up reference.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        fov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        Self::look_at_with_up(eye, target, Vec3::z(), fov_deg, width, height)
    }

    pub fn look_at_with_up(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let basis = CameraBasis::compute(&eye, &target, &up, fov_deg, width, height)?;
        Ok(Self { eye, target, up, fov_deg, width, height, basis })
    }

    /// Same pose at a different resolution.
    pub fn with_resolution(&self, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::look_at_with_up(self.eye, self.target, self.up, self.fov_deg, width, height)
    }

    pub fn forward(&self) -> Vec3 {
        self.basis.forward
    }

    pub fn right(&self) -> Vec3 {
        self.basis.right
    }

    pub fn image_up(&self) -> Vec3 {
        self.basis.up
    }

    /// Focal length in pixels (identical on both axes).
    pub fn focal_px(&self) -> f64 {
        self.basis.focal
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Vertical field of view in degrees, derived from aspect ratio.
    pub fn vertical_fov_deg(&self) -> f64 {
        2.0 * ((self.height as f64 / 2.0) / self.basis.focal).atan().to_degrees()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// World point at pixel `(u, v)` (continuous coordinates) and z-depth `depth`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3, GeometryError> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        let (cx, cy) = self.principal_point();
        let f = self.basis.focal;
        let x = (u - cx) / f * depth;
        let y = (cy - v) / f * depth;
        Ok(self.eye + self.basis.forward * depth + self.basis.right * x + self.basis.up * y)
    }

    /// Back-projects the center of pixel `(i, j)`.
    pub fn backproject_pixel(&self, i: u32, j: u32, depth: f64) -> Result<Vec3, GeometryError> {
        self.backproject(i as f64 + 0.5, j as f64 + 0.5, depth)
    }

    pub fn project(&self, point: &Vec3) -> Projection {
        let rel = point - self.eye;
        let depth = rel.dot(&self.basis.forward);
        if depth <= NEAR_PLANE {
            return Projection::BehindCamera;
        }
        let (cx, cy) = self.principal_point();
        let f = self.basis.focal;
        Projection::Visible {
            u: cx + f * rel.dot(&self.basis.right) / depth,
            v: cy - f * rel.dot(&self.basis.up) / depth,
            depth,
        }
    }

    /// World point expressed in camera coordinates `(right, image-up, forward)`.
    pub fn to_camera_frame(&self, point: &Vec3) -> Vec3 {
        let rel = point - self.eye;
        Vec3::new(
            rel.dot(&self.basis.right),
            rel.dot(&self.basis.up),
            rel.dot(&self.basis.forward),
        )
    }

    /// Whether continuous image coordinates fall inside the frame.
    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Axis-aligned bounding box in world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    #[serde(with = "vec3_serde")]
    pub min: Vec3,
    #[serde(with = "vec3_serde")]
    pub max: Vec3,
}

impl Aabb3 {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    pub fn from_center_size(center: Vec3, size: Vec3) -> Self {
        let half = size / 2.0;
        Self { min: center - half, max: center + half }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] <= self.max[k])
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s.x * s.y * s.z
    }

    pub fn footprint_area(&self) -> f64 {
        let s = self.size();
        s.x * s.y
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb3, tol: f64) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] - tol && other.max[k] <= self.max[k] + tol)
    }

    pub fn inflated(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Self { min: self.min - m, max: self.max + m }
    }

    pub fn union(&self, other: &Aabb3) -> Self {
        Self { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Slab-method ray intersection; returns the smallest parameter `t >= 0`
    /// at which `origin + t * dir` enters the box.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Componentwise bounds of a point set.
pub fn aabb_of(points: &[Vec3]) -> Result<Aabb3, GeometryError> {
    let first = points.first().ok_or(GeometryError::EmptyCloud)?;
    let (min, max) = points
        .iter()
        .skip(1)
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    Ok(Aabb3 { min, max })
}

/// Open-interior overlap test: true iff the per-axis gap between the boxes is
/// smaller than `margin` on all three axes. Faces that merely touch do not
/// collide when `margin == 0`.
pub fn aabb_intersects(a: &Aabb3, b: &Aabb3, margin: f64) -> bool {
    (0..3).all(|k| {
        let gap = (a.min[k] - b.max[k]).max(b.min[k] - a.max[k]);
        gap < margin
    })
}

/// A world-frame point cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Result<Aabb3, GeometryError> {
        aabb_of(&self.points)
    }
}

/// Per-pixel z-depth raster; `None` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<Option<f64>>,
}

#[derive(Debug, Error)]
pub enum DepthFileError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic, expected DPTH")]
    BadMagic,
    #[error("payload holds {found} samples, header declares {expected}")]
    Truncated { expected: usize, found: usize },
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, values: vec![None; width as usize * height as usize] }
    }

    /// Builds a map from row-major samples; non-positive or non-finite
    /// samples become invalid.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize, "depth sample count");
        let values = values
            .into_iter()
            .map(|d| (d > 0.0 && d.is_finite()).then_some(d))
            .collect();
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn index(&self, i: u32, j: u32) -> usize {
        j as usize * self.width as usize + i as usize
    }

    pub fn get(&self, i: u32, j: u32) -> Option<f64> {
        self.values[self.index(i, j)]
    }

    pub fn get_index(&self, idx: usize) -> Option<f64> {
        self.values[idx]
    }

    pub fn set(&mut self, i: u32, j: u32, depth: Option<f64>) {
        let idx = self.index(i, j);
        self.values[idx] = depth.filter(|d| *d > 0.0 && d.is_finite());
    }

    pub fn set_index(&mut self, idx: usize, depth: Option<f64>) {
        self.values[idx] = depth.filter(|d| *d > 0.0 && d.is_finite());
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Applies `f` to every valid sample.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .map(|v| v.map(&f).filter(|d| *d > 0.0 && d.is_finite()))
            .collect();
        Self { width: self.width, height: self.height, values }
    }

    /// Converts ray-length samples to z-depth for the given camera.
    pub fn ray_length_to_z(&self, cam: &CameraView) -> Self {
        let (cx, cy) = cam.principal_point();
        let f = cam.focal_px();
        let mut out = self.clone();
        for j in 0..self.height {
            for i in 0..self.width {
                if let Some(r) = self.get(i, j) {
                    let x = (i as f64 + 0.5 - cx) / f;
                    let y = (j as f64 + 0.5 - cy) / f;
                    out.set(i, j, Some(r / (1.0 + x * x + y * y).sqrt()));
                }
            }
        }
        out
    }

    /// Writes the debug raster: `DPTH`, u32 width, u32 height, u32 reserved,
    /// then row-major little-endian f32 samples (NaN for invalid pixels).
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(DEPTH_MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.map_or(f32::NAN, |d| d as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 4 * self.values.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DepthFileError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != DEPTH_MAGIC {
            return Err(DepthFileError::BadMagic);
        }
        let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().unwrap());
        let (width, height) = (word(4), word(8));
        let expected = width as usize * height as usize;
        let mut payload = Vec::with_capacity(expected * 4);
        r.read_to_end(&mut payload)?;
        if payload.len() < expected * 4 {
            return Err(DepthFileError::Truncated { expected, found: payload.len() / 4 });
        }
        let values = payload
            .chunks_exact(4)
            .take(expected)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self::from_values(width, height, values))
    }
}
