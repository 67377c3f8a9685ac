//! Software z-buffer rasterizer for box-proxy scenes, plus the floor metrics
//! that drive view selection (visibility and occupancy).

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::geometry::{Aabb3, CameraView, DepthMap, Vec3};
use crate::scene::{Category, Rect, Room, SceneState};

/// Pixel label for pixels that hit nothing.
pub const LABEL_NONE: u32 = 0;
pub const LABEL_FLOOR: u32 = 1;
pub const LABEL_WALL: u32 = 2;
pub const LABEL_CEILING: u32 = 3;
/// Labels at or above this value encode `OBJECT_LABEL_BASE + instance index`.
pub const OBJECT_LABEL_BASE: u32 = 16;

const CLIP_NEAR: f64 = 1e-4;

pub fn object_label(index: usize) -> u32 {
    OBJECT_LABEL_BASE + index as u32
}

/// Per-pixel instance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceIdMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl InstanceIdMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, labels: vec![LABEL_NONE; width as usize * height as usize] }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), width as usize * height as usize);
        Self { width, height, labels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn label(&self, i: u32, j: u32) -> u32 {
        self.labels[j as usize * self.width as usize + i as usize]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn set_index(&mut self, idx: usize, label: u32) {
        self.labels[idx] = label;
    }

    /// Instance index at a pixel, if the pixel shows an object.
    pub fn instance_at(&self, i: u32, j: u32) -> Option<usize> {
        label_instance(self.label(i, j))
    }

    /// Row-major indices of the pixels carrying `label`.
    pub fn pixels_with(&self, label: u32) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l == label).map(|(k, _)| k).collect()
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }
}

pub fn label_instance(label: u32) -> Option<usize> {
    (label >= OBJECT_LABEL_BASE).then(|| (label - OBJECT_LABEL_BASE) as usize)
}

/// Depth and instance buffers rendered from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub depth: DepthMap,
    pub ids: InstanceIdMap,
}

struct ZBuffer<'a> {
    cam: &'a CameraView,
    depth: Vec<f64>,
    labels: Vec<u32>,
}

impl<'a> ZBuffer<'a> {
    fn new(cam: &'a CameraView) -> Self {
        let n = cam.pixel_count();
        Self { cam, depth: vec![f64::INFINITY; n], labels: vec![LABEL_NONE; n] }
    }

    fn draw_quad(&mut self, q: [Vec3; 4], label: u32) {
        self.draw_triangle([q[0], q[1], q[2]], label);
        self.draw_triangle([q[0], q[2], q[3]], label);
    }

    fn draw_box(&mut self, b: &Aabb3, label: u32) {
        let c = b.corners();
        // Faces as corner-index quads: -z, +z, -y, +y, -x, +x.
        const FACES: [[usize; 4]; 6] =
            [[0, 1, 3, 2], [4, 5, 7, 6], [0, 1, 5, 4], [2, 3, 7, 6], [0, 2, 6, 4], [1, 3, 7, 5]];
        for f in FACES {
            self.draw_quad([c[f[0]], c[f[1]], c[f[2]], c[f[3]]], label);
        }
    }

    fn draw_room(&mut self, room: &Room) {
        let (x0, y0) = room.min_xy();
        let (x1, y1) = room.max_xy();
        let h = room.wall_height;
        let p = |x, y, z| Vec3::new(x, y, z);
        self.draw_quad([p(x0, y0, 0.0), p(x1, y0, 0.0), p(x1, y1, 0.0), p(x0, y1, 0.0)], LABEL_FLOOR);
        self.draw_quad([p(x0, y0, h), p(x1, y0, h), p(x1, y1, h), p(x0, y1, h)], LABEL_CEILING);
        self.draw_quad([p(x0, y0, 0.0), p(x1, y0, 0.0), p(x1, y0, h), p(x0, y0, h)], LABEL_WALL);
        self.draw_quad([p(x0, y1, 0.0), p(x1, y1, 0.0), p(x1, y1, h), p(x0, y1, h)], LABEL_WALL);
        self.draw_quad([p(x0, y0, 0.0), p(x0, y1, 0.0), p(x0, y1, h), p(x0, y0, h)], LABEL_WALL);
        self.draw_quad([p(x1, y0, 0.0), p(x1, y1, 0.0), p(x1, y1, h), p(x1, y0, h)], LABEL_WALL);
    }

    fn draw_triangle(&mut self, world: [Vec3; 3], label: u32) {
        let cam_pts = world.map(|p| self.cam.to_camera_frame(&p));
        let poly = clip_near(&cam_pts);
        if poly.len() < 3 {
            return;
        }
        for k in 1..poly.len() - 1 {
            self.fill([poly[0], poly[k], poly[k + 1]], label);
        }
    }

    /// Scan-converts a camera-space triangle lying in front of the near plane.
    fn fill(&mut self, tri: [Vec3; 3], label: u32) {
        let cam = self.cam;
        let (cx, cy) = cam.principal_point();
        let f = cam.focal_px();
        let screen = tri.map(|p| (cx + f * p.x / p.z, cy - f * p.y / p.z, 1.0 / p.z));
        let [(ax, ay, ai), (bx, by, bi), (qx, qy, qi)] = screen;
        let area = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax);
        if area.abs() < 1e-12 || !area.is_finite() {
            return;
        }
        let (w, h) = (cam.width as f64, cam.height as f64);
        let min_x = ax.min(bx).min(qx).floor().max(0.0);
        let max_x = ax.max(bx).max(qx).ceil().min(w);
        let min_y = ay.min(by).min(qy).floor().max(0.0);
        let max_y = ay.max(by).max(qy).ceil().min(h);
        if min_x >= max_x || min_y >= max_y {
            return;
        }
        let width = cam.width as usize;
        for j in min_y as usize..max_y as usize {
            let py = j as f64 + 0.5;
            for i in min_x as usize..max_x as usize {
                let px = i as f64 + 0.5;
                let e0 = ((qx - bx) * (py - by) - (qy - by) * (px - bx)) / area;
                let e1 = ((ax - qx) * (py - qy) - (ay - qy) * (px - qx)) / area;
                let e2 = 1.0 - e0 - e1;
                if e0 < 0.0 || e1 < 0.0 || e2 < 0.0 {
                    continue;
                }
                let inv_z = e0 * ai + e1 * bi + e2 * qi;
                if !(inv_z > 0.0) {
                    continue;
                }
                let z = 1.0 / inv_z;
                let idx = j * width + i;
                let (cur, cur_label) = (self.depth[idx], self.labels[idx]);
                if z < cur || (z == cur && label < cur_label) {
                    self.depth[idx] = z;
                    self.labels[idx] = label;
                }
            }
        }
    }

    fn finish(self) -> Frame {
        let (w, h) = (self.cam.width, self.cam.height);
        let depth = DepthMap::from_values(w, h, self.depth);
        Frame { depth, ids: InstanceIdMap::from_labels(w, h, self.labels) }
    }
}

/// Sutherland-Hodgman clip of a camera-space polygon against `z >= CLIP_NEAR`.
fn clip_near(poly: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let (ina, inb) = (a.z >= CLIP_NEAR, b.z >= CLIP_NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (CLIP_NEAR - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = CLIP_NEAR;
            out.push(p);
        }
    }
    out
}

/// Renders the room shell and every instance (as its world box) from `cam`.
/// Pixels of instance `k` carry `object_label(k)`.
pub fn rasterize(scene: &SceneState, cam: &CameraView) -> Frame {
    let boxes: Vec<(u32, Aabb3)> = scene
        .instances
        .iter()
        .enumerate()
        .map(|(k, inst)| (object_label(k), inst.world_bbox))
        .collect();
    rasterize_boxes(Some(&scene.room), &boxes, cam)
}

/// Renders labelled boxes, optionally inside a room shell.
pub fn rasterize_boxes(room: Option<&Room>, boxes: &[(u32, Aabb3)], cam: &CameraView) -> Frame {
    let mut zb = ZBuffer::new(cam);
    if let Some(room) = room {
        zb.draw_room(room);
    }
    for (label, b) in boxes {
        zb.draw_box(b, *label);
    }
    zb.finish()
}

/// Fraction of a uniform `grid x grid` sample of floor points that project
/// inside the image in front of the camera and are not hidden by a wall.
pub fn floor_visibility(room: &Room, cam: &CameraView, grid: usize) -> f64 {
    let grid = grid.max(1);
    let (x0, y0) = room.min_xy();
    let mut visible = 0usize;
    for a in 0..grid {
        for b in 0..grid {
            let p = Vec3::new(
                x0 + (a as f64 + 0.5) / grid as f64 * room.extent[0],
                y0 + (b as f64 + 0.5) / grid as f64 * room.extent[1],
                0.0,
            );
            let Some((u, v, _)) = cam.project(&p).visible() else { continue };
            if cam.in_frame(u, v) && !wall_blocks(room, &cam.eye, &p) {
                visible += 1;
            }
        }
    }
    visible as f64 / (grid * grid) as f64
}

/// Default sampling density for [`floor_visibility`].
pub const VISIBILITY_GRID: usize = 256;

fn wall_blocks(room: &Room, from: &Vec3, to: &Vec3) -> bool {
    let (x0, y0) = room.min_xy();
    let (x1, y1) = room.max_xy();
    let d = to - from;
    let planes = [(1usize, y0), (0usize, x1), (1usize, y1), (0usize, x0)];
    for (axis, value) in planes {
        if d[axis].abs() < 1e-15 {
            continue;
        }
        let t = (value - from[axis]) / d[axis];
        if !(t > 1e-9 && t < 1.0 - 1e-9) {
            continue;
        }
        let hit = from + d * t;
        let other = 1 - axis;
        let (lo, hi) = if other == 0 { (x0, x1) } else { (y0, y1) };
        if hit[other] >= lo && hit[other] <= hi && hit.z >= 0.0 && hit.z <= room.wall_height {
            return true;
        }
    }
    false
}

/// Default grid resolution for [`occupancy`].
pub const OCCUPANCY_GRID: usize = 512;

/// Fraction of the floor covered by the union of floor-object footprints.
pub fn occupancy(scene: &SceneState) -> f64 {
    let rects: Vec<Rect> = scene.floor_objects().map(|i| i.footprint()).collect();
    footprint_coverage(&scene.room, &rects, OCCUPANCY_GRID)
}

/// Union coverage of `rects` over the room floor, sampled at cell centers.
pub fn footprint_coverage(room: &Room, rects: &[Rect], grid: usize) -> f64 {
    if rects.is_empty() {
        return 0.0;
    }
    let (x0, y0) = room.min_xy();
    let cell_x = room.extent[0] / grid as f64;
    let cell_y = room.extent[1] / grid as f64;
    let mut covered = 0usize;
    for b in 0..grid {
        let y = y0 + (b as f64 + 0.5) * cell_y;
        // Collect x-intervals of rectangles spanning this row, then count the
        // cells whose centers fall inside their union.
        let mut spans: Vec<(f64, f64)> =
            rects.iter().filter(|r| r.min[1] <= y && y <= r.max[1]).map(|r| (r.min[0], r.max[0])).collect();
        if spans.is_empty() {
            continue;
        }
        spans.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut row = vec![false; grid];
        for (lo, hi) in spans {
            let first = ((lo - x0) / cell_x - 0.5).ceil().max(0.0) as usize;
            let last = ((hi - x0) / cell_x - 0.5).floor();
            if last < 0.0 {
                continue;
            }
            let last = (last as usize).min(grid - 1);
            for cell in row.iter_mut().take(last + 1).skip(first) {
                *cell = true;
            }
        }
        covered += row.iter().filter(|c| **c).count();
    }
    covered as f64 / (grid * grid) as f64
}

/// Floor footprint of a scene's floor objects as rectangles.
pub fn floor_footprints(scene: &SceneState) -> Vec<Rect> {
    scene.instances.iter().filter(|i| i.category() == Category::FloorObject).map(|i| i.footprint()).collect()
}

/// Normalized grayscale rendering of a depth map (near = bright).
pub fn depth_to_gray(depth: &DepthMap) -> GrayImage {
    let (lo, hi) = depth
        .values()
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    let span = (hi - lo).max(1e-12);
    GrayImage::from_fn(depth.width(), depth.height(), |i, j| match depth.get(i, j) {
        Some(d) => Luma([(255.0 - 235.0 * (d - lo) / span).round() as u8]),
        None => Luma([0]),
    })
}

/// Deterministic color for a pixel label.
pub fn label_color(label: u32) -> [u8; 3] {
    match label {
        LABEL_NONE => [0, 0, 0],
        LABEL_FLOOR => [150, 120, 90],
        LABEL_WALL => [215, 210, 195],
        LABEL_CEILING => [235, 235, 235],
        l => {
            let h = (l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            [(h >> 16) as u8 | 0x20, (h >> 32) as u8 | 0x20, (h >> 48) as u8 | 0x20]
        }
    }
}

pub fn ids_to_rgb(ids: &InstanceIdMap) -> RgbImage {
    RgbImage::from_fn(ids.width(), ids.height(), |i, j| Rgb(label_color(ids.label(i, j))))
}

/// Flat-shaded color image of a frame, darkened with distance. Stands in for
/// the photoreal render handed to the inpainting service.
pub fn shade(frame: &Frame) -> RgbImage {
    RgbImage::from_fn(frame.ids.width(), frame.ids.height(), |i, j| {
        let base = label_color(frame.ids.label(i, j));
        let k = frame.depth.get(i, j).map_or(1.0, |d| 1.0 / (1.0 + 0.08 * d));
        Rgb(base.map(|c| (c as f64 * k).round() as u8))
    })
}
