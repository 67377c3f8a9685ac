//! Camera selection for room and furniture passes, inpainting-mask
//! construction and mask softening.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb3, CameraView, GeometryError, Vec3};
use crate::render::{self, label_instance, Frame, LABEL_NONE};
use crate::scene::{front_direction, ObjectInstance, Room, SceneState};

#[derive(Debug, Error, PartialEq)]
pub enum ViewError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("object `{0}` has a zero-extent bounding box")]
    DegenerateObject(String),
    #[error("inpainting mask is empty")]
    EmptyMask,
    #[error("frame is {frame:?}, camera expects {camera:?}")]
    ResolutionMismatch { frame: (u32, u32), camera: (u32, u32) },
    #[error("support instance index {0} is out of range")]
    UnknownSupport(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskProvenance {
    RoomCentered,
    CubeFill,
}

/// Per-pixel inpainting weights: 1 = regenerate, 0 = keep.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintMask {
    pub width: u32,
    pub height: u32,
    pub weights: Vec<f64>,
    pub provenance: MaskProvenance,
    /// Instances whose pixels were removed from the mask.
    pub excluded_ids: Vec<String>,
}

impl InpaintMask {
    pub fn empty(width: u32, height: u32, provenance: MaskProvenance) -> Self {
        Self {
            width,
            height,
            weights: vec![0.0; width as usize * height as usize],
            provenance,
            excluded_ids: Vec::new(),
        }
    }

    pub fn is_masked(&self, idx: usize) -> bool {
        self.weights[idx] > 0.0
    }

    pub fn masked_count(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn masked_pixels(&self) -> Vec<usize> {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(k, _)| k).collect()
    }

    /// Pixels whose weight reaches one half.
    pub fn support(&self) -> Vec<bool> {
        self.weights.iter().map(|w| *w >= 0.5).collect()
    }

    /// 8-bit grayscale view for debugging or the wire format.
    pub fn to_gray(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |i, j| {
            let w = self.weights[j as usize * self.width as usize + i as usize];
            image::Luma([(w.clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopPolicy {
    pub occupancy_threshold: f64,
    pub max_views: usize,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self { occupancy_threshold: 0.7, max_views: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPlan {
    pub cameras: Vec<CameraView>,
    pub stop: StopPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomViewParams {
    pub eye_height: f64,
    pub look_height: f64,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for RoomViewParams {
    fn default() -> Self {
        Self { eye_height: 1.8, look_height: 0.5, fov_deg: 84.0, width: 512, height: 512 }
    }
}

/// Corner-to-corner, front-to-back and opposite corner-to-corner views.
pub fn room_views(room: &Room, params: &RoomViewParams, stop: StopPolicy) -> Result<ViewPlan, ViewError> {
    let (x0, y0) = room.min_xy();
    let (x1, y1) = room.max_xy();
    let xm = (x0 + x1) / 2.0;
    let (eh, lh) = (params.eye_height, params.look_height);
    let poses = [
        (Vec3::new(x1, y1, eh), Vec3::new(x0, y0, lh)),
        (Vec3::new(xm, y0, eh), Vec3::new(xm, y1, lh)),
        (Vec3::new(x0, y1, eh), Vec3::new(x1, y0, lh)),
    ];
    let cameras = poses
        .into_iter()
        .map(|(eye, target)| CameraView::look_at(eye, target, params.fov_deg, params.width, params.height))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ViewPlan { cameras, stop })
}

pub fn should_continue_at(occupancy: f64, views_used: usize, stop: &StopPolicy) -> bool {
    occupancy <= stop.occupancy_threshold && views_used < stop.max_views
}

/// Whether another room view should be inpainted.
pub fn should_continue(scene: &SceneState, views_used: usize, stop: &StopPolicy) -> bool {
    views_used < stop.max_views && should_continue_at(render::occupancy(scene), views_used, stop)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceptacleKind {
    /// Items go on the top surface (tables, desks).
    OnTop,
    /// Items go inside (shelves, cabinets).
    Inside,
}

/// Pitch of the front-top camera away from straight down, degrees.
pub const ON_TOP_PITCH_DEG: f64 = 30.0;
const FRAMING_MARGIN: f64 = 1.2;

/// Camera framing a single piece of furniture.
///
/// The eye distance starts at `(extent / 2) / tan(fov / 2) * 1.2` from the
/// near face and is pushed back until all eight box corners project inside
/// the frame.
pub fn object_view(
    inst: &ObjectInstance,
    kind: ReceptacleKind,
    fov_deg: f64,
    width: u32,
    height: u32,
) -> Result<CameraView, ViewError> {
    let b = inst.world_bbox;
    let size = b.size();
    if size.iter().any(|s| !(*s > 1e-9)) {
        return Err(ViewError::DegenerateObject(inst.id.clone()));
    }
    let (fx, fy) = front_direction(inst.yaw);
    let front = Vec3::new(fx, fy, 0.0);
    let c = b.center();
    let half_tan = (fov_deg.to_radians() / 2.0).tan();
    let (focus, dir, lateral, near_offset) = match kind {
        ReceptacleKind::OnTop => {
            let pitch = ON_TOP_PITCH_DEG.to_radians();
            let dir = Vec3::z() * pitch.cos() + front * pitch.sin();
            (Vec3::new(c.x, c.y, b.max.z), dir, size.x.max(size.y), 0.0)
        }
        ReceptacleKind::Inside => {
            let half_depth = (front.x * size.x).abs().max((front.y * size.y).abs()) / 2.0;
            let across = (front.y * size.x).abs().max((front.x * size.y).abs());
            (c, front, across.max(size.z), half_depth)
        }
    };
    let mut dist = (lateral / 2.0) / half_tan * FRAMING_MARGIN;
    for _ in 0..100 {
        let eye = focus + dir * (near_offset + dist);
        let cam = CameraView::look_at(eye, focus, fov_deg, width, height)?;
        let framed = b.corners().iter().all(|p| {
            cam.project(p).visible().is_some_and(|(u, v, _)| cam.in_frame(u, v))
        });
        if framed {
            return Ok(cam);
        }
        dist *= 1.1;
    }
    Err(ViewError::DegenerateObject(inst.id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    pub centered_width_frac: f64,
    pub centered_height_frac: f64,
    /// Cube size relative to the furniture footprint (or interior).
    pub cube_shrink: f64,
    /// Height of the cube placed on top surfaces, meters.
    pub on_top_cube_height: f64,
    /// Erosion radius at 512 px width; scaled with resolution.
    pub erosion_px: f64,
    /// Blur sigma at 512 px width; scaled with resolution.
    pub blur_sigma_px: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            centered_width_frac: 0.7,
            centered_height_frac: 0.6,
            cube_shrink: 0.9,
            on_top_cube_height: 0.35,
            erosion_px: 4.0,
            blur_sigma_px: 8.0,
        }
    }
}

impl MaskParams {
    /// Softening radius and sigma scaled to an image width.
    pub fn softening_for(&self, width: u32) -> (f64, f64) {
        let k = width as f64 / 512.0;
        (self.erosion_px * k, self.blur_sigma_px * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskKind {
    RoomCentered,
    /// Cube filled on or in the instance at this index of the scene.
    CubeFill { support: usize, kind: ReceptacleKind },
}

/// Virtual cube used to mask a receptacle.
pub fn fill_cube(support: &Aabb3, kind: ReceptacleKind, params: &MaskParams) -> Aabb3 {
    let c = support.center();
    let s = support.size();
    match kind {
        ReceptacleKind::OnTop => Aabb3::new(
            Vec3::new(c.x - s.x * params.cube_shrink / 2.0, c.y - s.y * params.cube_shrink / 2.0, support.max.z),
            Vec3::new(
                c.x + s.x * params.cube_shrink / 2.0,
                c.y + s.y * params.cube_shrink / 2.0,
                support.max.z + params.on_top_cube_height,
            ),
        ),
        ReceptacleKind::Inside => Aabb3::from_center_size(c, s * params.cube_shrink),
    }
}

/// Builds the binary inpainting mask for a rendered frame. Pixels showing an
/// existing object (other than the cube-fill support) are never masked.
pub fn build_inpaint_mask(
    kind: MaskKind,
    frame: &Frame,
    cam: &CameraView,
    scene: &SceneState,
    params: &MaskParams,
) -> Result<InpaintMask, ViewError> {
    let (w, h) = (cam.width, cam.height);
    if (frame.ids.width(), frame.ids.height()) != (w, h) {
        return Err(ViewError::ResolutionMismatch {
            frame: (frame.ids.width(), frame.ids.height()),
            camera: (w, h),
        });
    }
    let (mut mask, keep_support) = match kind {
        MaskKind::RoomCentered => {
            let mut m = InpaintMask::empty(w, h, MaskProvenance::RoomCentered);
            let half_w = w as f64 * params.centered_width_frac / 2.0;
            let half_h = h as f64 * params.centered_height_frac / 2.0;
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            for j in 0..h {
                let py = j as f64 + 0.5;
                for i in 0..w {
                    let px = i as f64 + 0.5;
                    if (px - cx).abs() < half_w && (py - cy).abs() < half_h {
                        m.weights[(j * w + i) as usize] = 1.0;
                    }
                }
            }
            (m, None)
        }
        MaskKind::CubeFill { support, kind } => {
            let inst = scene.instances.get(support).ok_or(ViewError::UnknownSupport(support))?;
            let cube = fill_cube(&inst.world_bbox, kind, params);
            let silhouette = render::rasterize_boxes(None, &[(1, cube)], cam);
            let mut m = InpaintMask::empty(w, h, MaskProvenance::CubeFill);
            for (k, label) in silhouette.ids.labels().iter().enumerate() {
                if *label != LABEL_NONE {
                    m.weights[k] = 1.0;
                }
            }
            (m, Some(support))
        }
    };
    let mut excluded = vec![false; scene.instances.len()];
    for (k, label) in frame.ids.labels().iter().enumerate() {
        if let Some(idx) = label_instance(*label) {
            if Some(idx) != keep_support && mask.weights[k] > 0.0 {
                mask.weights[k] = 0.0;
                if let Some(flag) = excluded.get_mut(idx) {
                    *flag = true;
                }
            }
        }
    }
    mask.excluded_ids = excluded
        .iter()
        .enumerate()
        .filter(|(_, e)| **e)
        .map(|(k, _)| scene.instances[k].id.clone())
        .collect();
    if mask.masked_count() == 0 {
        return Err(ViewError::EmptyMask);
    }
    Ok(mask)
}

/// Erodes the binary support by a disc, then applies a truncated (3σ)
/// Gaussian blur renormalized at the image border.
pub fn soften_mask(mask: &InpaintMask, erosion_radius_px: f64, blur_sigma_px: f64) -> InpaintMask {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let binary: Vec<bool> = mask.weights.iter().map(|v| *v > 0.0).collect();
    let eroded = if erosion_radius_px > 0.0 { erode(&binary, w, h, erosion_radius_px) } else { binary };
    let mut weights: Vec<f64> = eroded.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
    if blur_sigma_px > 0.0 {
        weights = gaussian_blur(&weights, w, h, blur_sigma_px);
    }
    for v in &mut weights {
        *v = v.clamp(0.0, 1.0);
    }
    InpaintMask { weights, ..mask.clone() }
}

fn erode(src: &[bool], w: usize, h: usize, radius: f64) -> Vec<bool> {
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| ((dx * dx + dy * dy) as f64) <= r2)
        .collect();
    let mut out = vec![false; src.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let idx = y as usize * w + x as usize;
            if !src[idx] {
                continue;
            }
            // Pixels outside the image do not erode.
            out[idx] = offsets.iter().all(|(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || src[ny as usize * w + nx as usize]
            });
        }
    }
    out
}

fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| {
            let d = d as f64;
            if d.abs() > 3.0 * sigma { 0.0 } else { (-d * d / (2.0 * sigma * sigma)).exp() }
        })
        .collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, kv) in kernel.iter().enumerate() {
                    let d = t as isize - radius;
                    let (nx, ny) = if horizontal { (x + d, y) } else { (x, y + d) };
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    acc += kv * src[ny as usize * w + nx as usize];
                    norm += kv;
                }
                out[y as usize * w + x as usize] = if norm > 0.0 { acc / norm } else { 0.0 };
            }
        }
        out
    };
    let tmp = pass(src, true);
    pass(&tmp, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::rasterize;
    use crate::scene::{Category, ObjectSpec};
    use std::f64::consts::PI;

    fn inst(id: &str, center: (f64, f64), size: [f64; 3], yaw: f64) -> ObjectInstance {
        ObjectInstance::new(
            id,
            ObjectSpec::new(id, "", Category::FloorObject),
            "proxy",
            size,
            Vec3::new(center.0, center.1, 0.0),
            yaw,
            [1.0; 3],
        )
    }

    #[test]
    fn room_view_coordinates() {
        let plan = room_views(&Room::rectangle(4.0, 4.0, 2.8), &RoomViewParams::default(), StopPolicy::default()).unwrap();
        assert_eq!(plan.cameras.len(), 3);
        assert_eq!(plan.cameras[0].eye, Vec3::new(4.0, 4.0, 1.8));
        assert_eq!(plan.cameras[0].target, Vec3::new(0.0, 0.0, 0.5));
        let plan = room_views(&Room::rectangle(6.0, 3.0, 2.8), &RoomViewParams::default(), StopPolicy::default()).unwrap();
        assert_eq!(plan.cameras[1].eye, Vec3::new(3.0, 0.0, 1.8));
        assert_eq!(plan.cameras[1].target, Vec3::new(3.0, 3.0, 0.5));
        assert_eq!(plan.cameras[2].eye, Vec3::new(0.0, 3.0, 1.8));
        assert_eq!(plan.cameras[2].target, Vec3::new(6.0, 0.0, 0.5));
        let eyes: Vec<_> = plan.cameras.iter().map(|c| c.eye).collect();
        assert!(eyes[0] != eyes[1] && eyes[1] != eyes[2] && eyes[0] != eyes[2]);
    }

    #[test]
    fn stop_rule() {
        let stop = StopPolicy::default();
        assert!(!should_continue_at(0.71, 1, &stop));
        assert!(!should_continue_at(0.1, 3, &stop));
        assert!(should_continue_at(0.0, 0, &stop));
        assert!(should_continue_at(0.7, 2, &stop));
        assert!(should_continue(&SceneState::new(Room::rectangle(3.0, 3.0, 2.5), 0), 0, &stop));
    }

    #[test]
    fn on_top_view_frames_table_top() {
        let table = inst("table", (2.0, 2.0), [1.0, 1.0, 1.0], 0.0);
        let cam = object_view(&table, ReceptacleKind::OnTop, 84.0, 512, 512).unwrap();
        let b = table.world_bbox;
        for (x, y) in [(b.min.x, b.min.y), (b.max.x, b.min.y), (b.min.x, b.max.y), (b.max.x, b.max.y)] {
            let (u, v, _) = cam.project(&Vec3::new(x, y, b.max.z)).visible().unwrap();
            assert!(cam.in_frame(u, v), "corner ({x}, {y}) projects to ({u}, {v})");
        }
        assert!(cam.eye.z > b.max.z);
        // Pitched toward the front (+y for yaw 0).
        assert!(cam.eye.y > 2.0);
    }

    #[test]
    fn inside_view_looks_into_front() {
        let shelf = inst("shelf", (1.0, 1.0), [0.8, 0.4, 1.8], 0.0);
        let cam = object_view(&shelf, ReceptacleKind::Inside, 84.0, 256, 256).unwrap();
        assert!(cam.eye.y > shelf.world_bbox.max.y);
        assert!((cam.forward() - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        assert!(cam.forward().z.abs() < 1e-12);
        let rotated = inst("shelf", (1.0, 1.0), [0.8, 0.4, 1.8], PI);
        let cam = object_view(&rotated, ReceptacleKind::Inside, 84.0, 256, 256).unwrap();
        assert!((cam.forward() - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_size_object_view_fails() {
        let flat = inst("rug", (1.0, 1.0), [1.0, 1.0, 0.0], 0.0);
        assert!(matches!(object_view(&flat, ReceptacleKind::OnTop, 84.0, 64, 64), Err(ViewError::DegenerateObject(_))));
    }

    #[test]
    fn centered_mask_in_empty_room() {
        let scene = SceneState::new(Room::rectangle(4.0, 4.0, 2.8), 0);
        let cam = CameraView::look_at(Vec3::new(4.0, 4.0, 1.8), Vec3::new(0.0, 0.0, 0.5), 84.0, 100, 100).unwrap();
        let frame = rasterize(&scene, &cam);
        let mask = build_inpaint_mask(MaskKind::RoomCentered, &frame, &cam, &scene, &MaskParams::default()).unwrap();
        assert!(mask.excluded_ids.is_empty());
        assert_eq!(mask.masked_count(), 70 * 60);
        assert!(mask.is_masked(50 * 100 + 50));
        assert!(!mask.is_masked(0));
    }

    #[test]
    fn existing_object_pixels_are_excluded() {
        let mut scene = SceneState::new(Room::rectangle(4.0, 4.0, 2.8), 0);
        scene.instances.push(inst("chair", (1.9, 1.9), [0.6, 0.6, 0.9], 0.0));
        let cam = CameraView::look_at(Vec3::new(4.0, 4.0, 1.8), Vec3::new(0.0, 0.0, 0.5), 84.0, 128, 128).unwrap();
        let frame = rasterize(&scene, &cam);
        let chair: Vec<usize> = frame.ids.pixels_with(render::object_label(0));
        assert!(!chair.is_empty());
        let mask = build_inpaint_mask(MaskKind::RoomCentered, &frame, &cam, &scene, &MaskParams::default()).unwrap();
        assert!(chair.iter().all(|k| !mask.is_masked(*k)));
        assert_eq!(mask.excluded_ids, vec!["chair".to_string()]);
    }

    #[test]
    fn fully_occluded_support_gives_empty_mask() {
        let mut scene = SceneState::new(Room::rectangle(4.0, 4.0, 2.8), 0);
        scene.instances.push(inst("table", (2.0, 1.0), [0.6, 0.6, 0.5], 0.0));
        let cam = object_view(&scene.instances[0], ReceptacleKind::OnTop, 84.0, 96, 96).unwrap();
        // A box enclosing the camera hides everything.
        scene.instances.push(ObjectInstance::new(
            "crate",
            ObjectSpec::new("crate", "", Category::FloorObject),
            "proxy",
            [0.4, 0.4, 0.4],
            Vec3::new(cam.eye.x, cam.eye.y, cam.eye.z - 0.2),
            0.0,
            [1.0; 3],
        ));
        let frame = rasterize(&scene, &cam);
        let kind = MaskKind::CubeFill { support: 0, kind: ReceptacleKind::OnTop };
        assert_eq!(build_inpaint_mask(kind, &frame, &cam, &scene, &MaskParams::default()), Err(ViewError::EmptyMask));
        scene.instances.pop();
        let frame = rasterize(&scene, &cam);
        let mask = build_inpaint_mask(kind, &frame, &cam, &scene, &MaskParams::default()).unwrap();
        assert!(mask.masked_count() > 100);
        assert_eq!(mask.provenance, MaskProvenance::CubeFill);
    }

    fn square_mask(w: u32, lo: u32, hi: u32) -> InpaintMask {
        let mut m = InpaintMask::empty(w, w, MaskProvenance::RoomCentered);
        for j in lo..hi {
            for i in lo..hi {
                m.weights[(j * w + i) as usize] = 1.0;
            }
        }
        m
    }

    #[test]
    fn soften_identity_and_erosion() {
        let m = square_mask(40, 10, 30);
        assert_eq!(soften_mask(&m, 0.0, 0.0), m);
        let eroded = soften_mask(&m, 2.0, 0.0);
        assert_eq!(eroded.masked_count(), 16 * 16);
        assert!(eroded.is_masked(12 * 40 + 12) && !eroded.is_masked(11 * 40 + 12));
    }

    #[test]
    fn soften_stays_in_unit_range_and_bounded() {
        let m = square_mask(64, 20, 44);
        let sigma = 3.0;
        let s = soften_mask(&m, 2.0, sigma);
        assert!(s.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        for (k, on) in s.support().iter().enumerate() {
            if *on {
                let (i, j) = ((k % 64) as f64, (k / 64) as f64);
                let dx = (20.0 - i).max(i - 43.0).max(0.0);
                let dy = (20.0 - j).max(j - 43.0).max(0.0);
                assert!(dx.hypot(dy) <= 3.0 * sigma);
            }
        }
    }
}
