//! End-to-end orchestration: furniture pass, small-object pass, validation
//! and output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::assets::{fnv1a, retrieve_candidates, select_asset, AssetError, Catalog, HashEmbedder};
use crate::config::PipelineConfig;
use crate::constraints::{
    derive_floor_constraints, derive_wall_constraints, nearest_wall, rotation_constraints, Constraint, Detection,
};
use crate::depth_lift::{lift_instance, rescale_depth_or_shift, select_reference_pixels, ReferenceMode};
use crate::geometry::{Aabb3, CameraView, DepthMap, Vec3};
use crate::perception::{
    accept_image, annotate_objects, build_prompts, disjoint_masks, parse_name_list, receptacle_request,
    rotation_request, Detection2d, Endpoints, FrameContext, InpaintRequest, MockScript, MockStudio, Perception,
    PromptPair, RemoteClient, RetryPolicy, TextTask,
};
use crate::placer::{
    dfs_place, fit_furniture, place_small_object, place_wall_objects, support_surface, Fixed, FloorItem, WallItem,
};
use crate::render::{rasterize, shade, Frame};
use crate::scene::{
    deserialize_scene, inventory_summary, serialize_scene, Category, EventKind, ObjectInstance, ObjectSpec,
    SceneError, SceneState,
};
use crate::validate::{validate_scene, Violation};
use crate::view_mask::{
    build_inpaint_mask, object_view, room_views, should_continue, soften_mask, InpaintMask, MaskKind,
    ReceptacleKind,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no perception backend: configure a mock script or all four service endpoints")]
    NoBackend,
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("mock script {path}: {source}")]
    MockScript { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    View(#[from] crate::view_mask::ViewError),
    #[error("scene failed validation ({} problems), written to {path}", violations.len())]
    Validation { path: PathBuf, violations: Vec<Violation> },
}

/// Mesh assets used to instantiate detected objects. Without a catalog each
/// object becomes a unit-scaled proxy box of its detected size.
#[derive(Debug, Clone, Default)]
pub struct AssetLibrary {
    pub catalog: Option<Catalog>,
    pub embedder: HashEmbedder,
    pub lambda: f64,
    pub top_k: usize,
}

/// Asset chosen for an object: catalog id, mesh size, and the per-axis
/// scale bringing it to the target size.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetFit {
    pub asset_id: String,
    pub asset_size: [f64; 3],
    pub scale: [f64; 3],
}

impl AssetFit {
    pub fn local_size(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| self.asset_size[k] * self.scale[k])
    }
}

impl AssetLibrary {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let catalog = match &cfg.assets.catalog {
            Some(path) => {
                let file = fs::File::open(path).map_err(|source| PipelineError::Read { path: path.clone(), source })?;
                Some(Catalog::load(BufReader::new(file))?)
            }
            None => None,
        };
        Ok(Self {
            catalog,
            embedder: HashEmbedder { seed: cfg.assets.embed_seed, ..HashEmbedder::default() },
            lambda: cfg.assets.lambda,
            top_k: cfg.assets.top_k,
        })
    }

    fn pick(&self, spec: &ObjectSpec, dims: [f64; 3]) -> Option<(String, [f64; 3])> {
        let catalog = self.catalog.as_ref()?;
        let query = format!("{} {}", spec.name, spec.description);
        let found = retrieve_candidates(&query, catalog, self.top_k.max(1), &self.embedder)
            .and_then(|c| select_asset(&c, dims, None, self.lambda));
        match found {
            Ok((r, _)) => Some((r.asset_id.clone(), r.mesh_bbox)),
            Err(e) => {
                log::warn!("asset lookup for `{}` failed: {e}; using a proxy", spec.name);
                None
            }
        }
    }

    fn proxy(spec: &ObjectSpec, size: [f64; 3]) -> AssetFit {
        AssetFit { asset_id: format!("proxy:{}", spec.name), asset_size: size, scale: [1.0; 3] }
    }

    /// Floor furniture: long horizontal axes of asset and target are paired.
    pub fn furniture(&self, spec: &ObjectSpec, target: &Aabb3) -> AssetFit {
        let s = target.size();
        match self.pick(spec, [s.x, s.y, s.z]) {
            Some((asset_id, asset_size)) => {
                let (_, scale) = fit_furniture(target, asset_size);
                AssetFit { asset_id, asset_size, scale }
            }
            None => Self::proxy(spec, [s.x, s.y, s.z]),
        }
    }

    /// Wall object with a wall-local target size `[along, thickness, height]`.
    pub fn wall(&self, spec: &ObjectSpec, local: [f64; 3]) -> AssetFit {
        match self.pick(spec, local) {
            Some((asset_id, asset_size)) => {
                let scale = [0, 1, 2].map(|k| local[k] / asset_size[k]);
                AssetFit { asset_id, asset_size, scale }
            }
            None => Self::proxy(spec, local),
        }
    }

    /// Small object: only the mesh is chosen, scale comes from placement.
    pub fn small(&self, spec: &ObjectSpec, target: &Aabb3) -> (String, [f64; 3]) {
        let s = target.size();
        self.pick(spec, [s.x, s.y, s.z])
            .unwrap_or_else(|| (format!("proxy:{}", spec.name), [s.x, s.y, s.z]))
    }
}

/// Deterministic per-request seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let bytes: Vec<u8> = std::iter::once(base).chain(parts.iter().copied()).flat_map(u64::to_le_bytes).collect();
    fnv1a(&bytes)
}

fn fmt_vec(v: &Vec3) -> String {
    format!("({:.3}, {:.3}, {:.3})", v.x, v.y, v.z)
}

fn fmt_box(b: &Aabb3) -> String {
    format!("{}..{}", fmt_vec(&b.min), fmt_vec(&b.max))
}

/// Identifier unused by the scene and by ids handed out in this batch.
fn next_id(scene: &SceneState, pending: &mut BTreeSet<String>, name: &str) -> String {
    let slug: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    let mut n = scene.instances.len() + pending.len();
    loop {
        let id = format!("{slug}-{n:03}");
        if scene.get(&id).is_none() && !pending.contains(&id) {
            pending.insert(id.clone());
            return id;
        }
        n += 1;
    }
}

/// Accepted inpainting with what was recognized in it.
struct Sample {
    image: RgbImage,
    detections: Vec<Detection2d>,
}

struct Round<'a> {
    cfg: &'a PipelineConfig,
    camera: &'a CameraView,
    frame: &'a Frame,
    mask: &'a InpaintMask,
    prompts: &'a PromptPair,
    min_count: usize,
    stage: u64,
    label: String,
}

fn recognise(backend: &mut dyn Perception, ctx: FrameContext<'_>, image: &RgbImage) -> Vec<Detection2d> {
    let annotations = match annotate_objects(backend, ctx, image) {
        Ok(a) => a,
        Err(e) => {
            log::warn!("annotation failed: {e}");
            return Vec::new();
        }
    };
    let mut tags: Vec<String> = Vec::new();
    for a in &annotations {
        if !tags.contains(&a.name) {
            tags.push(a.name.clone());
        }
    }
    let dets = match backend.detect_segment(ctx, image, &tags) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("detection failed: {e}");
            return Vec::new();
        }
    };
    let dets = dets
        .into_iter()
        .map(|mut d| {
            if let Some(a) = annotations.iter().find(|a| a.name == d.name) {
                if d.description.is_empty() {
                    d.description = a.description.clone();
                }
            }
            d
        })
        .collect();
    disjoint_masks(dets, image.width())
}

/// Inpaints until a sample passes the acceptance gate or attempts run out.
fn inpaint_round(scene: &mut SceneState, backend: &mut dyn Perception, r: &Round<'_>) -> Option<Sample> {
    let ctx = FrameContext { camera: r.camera, frame: r.frame };
    let image = shade(r.frame);
    let p = &r.cfg.perception;
    for attempt in 0..p.max_attempts {
        let mut best: Option<Sample> = None;
        for sample in 0..p.samples_per_view {
            let req = InpaintRequest {
                image: image.clone(),
                mask: r.mask.clone(),
                prompt: r.prompts.positive.clone(),
                negative_prompt: r.prompts.negative.clone(),
                seed: derive_seed(r.cfg.seed, &[r.stage, attempt as u64, sample as u64]),
            };
            let out = match backend.inpaint(ctx, &req) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("{}: inpainting failed: {e}", r.label);
                    continue;
                }
            };
            let detections = recognise(backend, ctx, &out);
            if best.as_ref().is_none_or(|b| detections.len() > b.detections.len()) {
                best = Some(Sample { image: out, detections });
            }
        }
        let found = best.as_ref().map_or(0, |b| b.detections.len());
        if let Some(b) = best.filter(|b| accept_image(&b.detections, r.min_count)) {
            scene.log(EventKind::InpaintAccepted, format!("{} attempt {attempt}: {found} objects", r.label));
            return Some(b);
        }
        scene.log(
            EventKind::InpaintRejected,
            format!("{} attempt {attempt}: {found} objects, need {}", r.label, r.min_count),
        );
    }
    None
}

/// Metric depth of an accepted sample, aligned on unmasked reference pixels.
fn metric_depth(
    backend: &mut dyn Perception,
    r: &Round<'_>,
    image: &RgbImage,
    mode: ReferenceMode,
    furniture: Option<usize>,
) -> Result<DepthMap, String> {
    let ctx = FrameContext { camera: r.camera, frame: r.frame };
    let mut estimate = backend.estimate_depth(ctx, image).map_err(|e| e.to_string())?;
    if r.cfg.perception.depth_is_ray_length {
        estimate = estimate.ray_length_to_z(r.camera);
    }
    let refs = select_reference_pixels(mode, &r.frame.ids, r.mask, furniture).map_err(|e| e.to_string())?;
    let (depth, stats) = rescale_depth_or_shift(&estimate, &r.frame.depth, &refs).map_err(|e| e.to_string())?;
    log::debug!("{}: depth scale {:.6} shift {:.6} over {} pixels", r.label, stats.scale, stats.shift, stats.n);
    Ok(depth)
}

fn prompts_for(backend: &mut dyn Perception, scene: &SceneState, caption: &str) -> PromptPair {
    build_prompts(&inventory_summary(scene), caption, backend).unwrap_or_else(|e| {
        log::warn!("prompt construction failed ({e}); using the caption alone");
        PromptPair { positive: caption.to_string(), negative: String::new() }
    })
}

/// Lifted object awaiting placement.
struct Lifted {
    det: Detection,
}

fn lift_all(
    scene: &mut SceneState,
    depth: &DepthMap,
    camera: &CameraView,
    dets: &[Detection2d],
    wanted: impl Fn(Category) -> bool,
    pending: &mut BTreeSet<String>,
    category_override: Option<Category>,
) -> Vec<Lifted> {
    let mut out = Vec::new();
    for d in dets {
        let category = category_override.unwrap_or(d.category);
        if !wanted(category) {
            scene.log(EventKind::ObjectSkipped, format!("{}: {} not handled in this pass", d.name, category));
            continue;
        }
        match lift_instance(depth, camera, &d.pixels, None) {
            Ok((cloud, bbox)) => {
                let id = next_id(scene, pending, &d.name);
                scene.log(EventKind::ObjectLifted, format!("{id} from {} points: {}", cloud.len(), fmt_box(&bbox)));
                let spec = ObjectSpec::new(d.name.clone(), d.description.clone(), category);
                out.push(Lifted { det: Detection::new(id, spec, bbox) });
            }
            Err(e) => scene.log(EventKind::ObjectSkipped, format!("{}: lifting failed: {e}", d.name)),
        }
    }
    out
}

fn fixed_of(scene: &SceneState) -> Vec<Fixed> {
    scene.instances.iter().filter(|i| i.spec.category != Category::SmallObject).map(Fixed::from_instance).collect()
}

fn commit(scene: &mut SceneState, inst: ObjectInstance, score: f64) {
    scene.log(
        EventKind::ObjectPlaced,
        format!("{} at {} yaw {:.4} score {:.6}", inst.id, fmt_vec(&inst.position), inst.yaw, score),
    );
    scene.instances.push(inst);
}

fn place_floor(
    scene: &mut SceneState,
    cfg: &PipelineConfig,
    rotation_reply: Result<String, String>,
    assets: &AssetLibrary,
    lifted: Vec<Detection>,
) {
    if lifted.is_empty() {
        return;
    }
    let room = scene.room.clone();
    let th = &cfg.placer.thresholds;
    // Floor objects stand on the floor; the lowest lifted point sits a
    // fraction of a pixel above it.
    let dets: Vec<Detection> = lifted
        .into_iter()
        .map(|mut d| {
            d.bbox.min.z = 0.0;
            d
        })
        .collect();
    let mut set = derive_floor_constraints(&dets, &room, th);
    if let Ok(rot) = rotation_constraints(&dets, &set.order, &room, rotation_reply, true) {
        for c in rot {
            set.push(c);
        }
    }
    log::debug!("floor constraints:\n{}", set.dump());
    let constraints: BTreeMap<String, Vec<Constraint>> =
        set.order.iter().map(|id| (id.clone(), set.for_subject(id).to_vec())).collect();
    let mut fits = BTreeMap::new();
    let items: Vec<FloorItem> = set
        .order
        .iter()
        .filter_map(|id| dets.iter().find(|d| &d.id == id))
        .map(|d| {
            let fit = assets.furniture(&d.spec, &d.bbox);
            let item = FloorItem { id: d.id.clone(), size: fit.local_size() };
            fits.insert(d.id.clone(), fit);
            item
        })
        .collect();
    let sol = dfs_place(&items, &constraints, &room, &fixed_of(scene), &cfg.scoring, &cfg.placer);
    log::debug!("floor search: {} expanded, {} pruned", sol.stats.expanded, sol.stats.pruned);
    for p in &sol.placements {
        let d = dets.iter().find(|d| d.id == p.id).expect("placed id comes from detections");
        let fit = &fits[&p.id];
        let pose = &p.candidate.pose;
        let inst = ObjectInstance::new(
            p.id.clone(),
            d.spec.clone(),
            fit.asset_id.clone(),
            fit.asset_size,
            Vec3::new(pose.x, pose.y, pose.z),
            pose.yaw,
            fit.scale,
        );
        commit(scene, inst, p.candidate.score);
    }
    for id in &sol.skipped {
        scene.log(EventKind::ObjectSkipped, format!("{id}: no admissible floor pose"));
    }
}

fn place_wall(scene: &mut SceneState, cfg: &PipelineConfig, assets: &AssetLibrary, dets: Vec<Detection>) {
    if dets.is_empty() {
        return;
    }
    let room = scene.room.clone();
    let floor: Vec<(String, Aabb3)> = scene.floor_objects().map(|i| (i.id.clone(), i.world_bbox)).collect();
    let wc = derive_wall_constraints(&dets, &floor, &room, &cfg.placer.thresholds);
    for e in &wc.demoted {
        scene.log(EventKind::ObjectSkipped, e.to_string());
    }
    let constraints: BTreeMap<String, Vec<Constraint>> =
        wc.set.order.iter().map(|id| (id.clone(), wc.set.for_subject(id).to_vec())).collect();
    let mut fits = BTreeMap::new();
    let mut items = Vec::new();
    for d in &dets {
        if !constraints.contains_key(&d.id) {
            continue;
        }
        let s = d.bbox.size();
        let local = if nearest_wall(&room, &d.bbox).0.along_axis() == 0 { [s.x, s.y, s.z] } else { [s.y, s.x, s.z] };
        let fit = assets.wall(&d.spec, local);
        items.push(WallItem { id: d.id.clone(), size: fit.local_size() });
        fits.insert(d.id.clone(), fit);
    }
    let sol = place_wall_objects(&items, &constraints, &room, &fixed_of(scene), &cfg.scoring, &cfg.placer);
    for p in &sol.placements {
        let d = dets.iter().find(|d| d.id == p.id).expect("placed id comes from detections");
        let fit = &fits[&p.id];
        let pose = &p.candidate.pose;
        let inst = ObjectInstance::new(
            p.id.clone(),
            d.spec.clone(),
            fit.asset_id.clone(),
            fit.asset_size,
            Vec3::new(pose.x, pose.y, pose.z),
            pose.yaw,
            fit.scale,
        );
        commit(scene, inst, p.candidate.score);
    }
    for id in &sol.skipped {
        scene.log(EventKind::ObjectSkipped, format!("{id}: no admissible wall pose"));
    }
}

/// Places lifted floor and wall objects into the scene, floor objects
/// first. `rotation_reply` is the annotator's `subject -> target` text; on
/// error the geometric orientation fallback is used.
pub fn place_detections(
    scene: &mut SceneState,
    dets: Vec<Detection>,
    cfg: &PipelineConfig,
    assets: &AssetLibrary,
    rotation_reply: Result<String, String>,
) {
    let (floor, rest): (Vec<Detection>, Vec<Detection>) =
        dets.into_iter().partition(|d| d.spec.category == Category::FloorObject);
    let (wall, other): (Vec<Detection>, Vec<Detection>) =
        rest.into_iter().partition(|d| d.spec.category == Category::WallObject);
    for d in other {
        scene.log(EventKind::ObjectSkipped, format!("{}: small objects need a receptacle", d.id));
    }
    place_floor(scene, cfg, rotation_reply, assets, floor);
    place_wall(scene, cfg, assets, wall);
}

/// Large-furniture pass over the room views.
pub fn run_furniture_pass(
    mut scene: SceneState,
    cfg: &PipelineConfig,
    backend: &mut dyn Perception,
    assets: &AssetLibrary,
) -> Result<SceneState, PipelineError> {
    let plan = room_views(&scene.room, &cfg.views, cfg.stop)?;
    for (k, camera) in plan.cameras.iter().enumerate() {
        if !should_continue(&scene, k, &plan.stop) {
            break;
        }
        scene.log(
            EventKind::ViewSelected,
            format!("room view {k}: eye {} target {}", fmt_vec(&camera.eye), fmt_vec(&camera.target)),
        );
        let frame = rasterize(&scene, camera);
        let binary = match build_inpaint_mask(MaskKind::RoomCentered, &frame, camera, &scene, &cfg.mask) {
            Ok(m) => m,
            Err(e) => {
                scene.log(EventKind::ObjectSkipped, format!("room view {k}: {e}"));
                continue;
            }
        };
        let (r, sigma) = cfg.mask.softening_for(camera.width);
        let mask = soften_mask(&binary, r, sigma);
        let prompts = prompts_for(backend, &scene, &cfg.caption);
        let round = Round {
            cfg,
            camera,
            frame: &frame,
            mask: &mask,
            prompts: &prompts,
            min_count: cfg.perception.min_count_room,
            stage: k as u64,
            label: format!("room view {k}"),
        };
        let Some(sample) = inpaint_round(&mut scene, backend, &round) else { continue };
        let depth = match metric_depth(backend, &round, &sample.image, ReferenceMode::RoomContext, None) {
            Ok(d) => d,
            Err(e) => {
                scene.log(EventKind::ObjectSkipped, format!("room view {k}: depth alignment failed: {e}"));
                continue;
            }
        };
        let mut pending = BTreeSet::new();
        let lifted = lift_all(
            &mut scene,
            &depth,
            camera,
            &sample.detections,
            |c| c != Category::SmallObject,
            &mut pending,
            None,
        );
        let dets: Vec<Detection> = lifted.into_iter().map(|l| l.det).collect();
        let names: Vec<String> =
            dets.iter().filter(|d| d.spec.category == Category::FloorObject).map(|d| d.id.clone()).collect();
        let reply = if names.is_empty() {
            Err("nothing to orient".to_string())
        } else {
            backend.complete(TextTask::Rotation, &rotation_request(&names)).map_err(|e| e.to_string())
        };
        place_detections(&mut scene, dets, cfg, assets, reply);
    }
    Ok(scene)
}

const INSIDE_WORDS: &[&str] = &["shelf", "shelves", "bookcase", "bookshelf", "cabinet", "cupboard", "wardrobe"];
const RECEPTACLE_WORDS: &[&str] =
    &["table", "desk", "counter", "dresser", "nightstand", "sideboard", "console", "shelf", "shelves", "bookcase", "cabinet", "cupboard"];

fn name_has(name: &str, words: &[&str]) -> bool {
    let lower = name.to_ascii_lowercase();
    words.iter().any(|w| lower.contains(w))
}

pub fn receptacle_kind(name: &str) -> ReceptacleKind {
    if name_has(name, INSIDE_WORDS) { ReceptacleKind::Inside } else { ReceptacleKind::OnTop }
}

pub fn is_receptacle_by_name(name: &str) -> bool {
    name_has(name, RECEPTACLE_WORDS)
}

/// Floor objects that can hold small items, largest footprint first.
pub fn receptacles(scene: &SceneState, backend: &mut dyn Perception) -> Vec<(usize, ReceptacleKind)> {
    let floor: Vec<(usize, &ObjectInstance)> =
        scene.instances.iter().enumerate().filter(|(_, i)| i.spec.category == Category::FloorObject).collect();
    if floor.is_empty() {
        return Vec::new();
    }
    let names: Vec<String> = floor.iter().map(|(_, i)| i.spec.name.clone()).collect();
    let chosen: Vec<String> = match backend.complete(TextTask::Receptacles, &receptacle_request(&names)) {
        Ok(text) => parse_name_list(&text),
        Err(e) => {
            log::info!("receptacle query failed ({e}); choosing by name");
            names.iter().filter(|n| is_receptacle_by_name(n)).cloned().collect()
        }
    };
    let mut out: Vec<(usize, &ObjectInstance)> = floor
        .into_iter()
        .filter(|(_, i)| chosen.iter().any(|c| c.eq_ignore_ascii_case(&i.spec.name) || c.eq_ignore_ascii_case(&i.id)))
        .collect();
    out.sort_by(|a, b| {
        b.1.world_bbox.footprint_area().total_cmp(&a.1.world_bbox.footprint_area()).then_with(|| a.1.id.cmp(&b.1.id))
    });
    out.into_iter().map(|(k, i)| (k, receptacle_kind(&i.spec.name))).collect()
}

/// Small objects on or inside each receptacle.
pub fn run_small_object_pass(
    mut scene: SceneState,
    cfg: &PipelineConfig,
    backend: &mut dyn Perception,
    assets: &AssetLibrary,
) -> Result<SceneState, PipelineError> {
    let p = &cfg.perception;
    for (support_idx, kind) in receptacles(&scene, backend) {
        let support = scene.instances[support_idx].clone();
        let label = format!("{} close-up", support.id);
        let camera = match object_view(&support, kind, p.object_fov_deg, p.object_resolution, p.object_resolution) {
            Ok(c) => c,
            Err(e) => {
                scene.log(EventKind::ObjectSkipped, format!("{label}: {e}"));
                continue;
            }
        };
        scene.log(
            EventKind::ViewSelected,
            format!("{label} ({kind:?}): eye {} target {}", fmt_vec(&camera.eye), fmt_vec(&camera.target)),
        );
        let frame = rasterize(&scene, &camera);
        let binary = match build_inpaint_mask(MaskKind::CubeFill { support: support_idx, kind }, &frame, &camera, &scene, &cfg.mask) {
            Ok(m) => m,
            Err(e) => {
                scene.log(EventKind::ObjectSkipped, format!("{label}: {e}"));
                continue;
            }
        };
        let (r, sigma) = cfg.mask.softening_for(camera.width);
        let mask = soften_mask(&binary, r, sigma);
        let where_ = if kind == ReceptacleKind::Inside { "inside" } else { "on" };
        let prompts = prompts_for(backend, &scene, &format!("small objects {where_} the {}", support.spec.name));
        let round = Round {
            cfg,
            camera: &camera,
            frame: &frame,
            mask: &mask,
            prompts: &prompts,
            min_count: p.min_count_small,
            stage: 1000 + support_idx as u64,
            label: label.clone(),
        };
        let Some(sample) = inpaint_round(&mut scene, backend, &round) else { continue };
        let depth =
            match metric_depth(backend, &round, &sample.image, ReferenceMode::FurnitureContext, Some(support_idx)) {
                Ok(d) => d,
                Err(e) => {
                    scene.log(EventKind::ObjectSkipped, format!("{label}: depth alignment failed: {e}"));
                    continue;
                }
            };
        let mut pending = BTreeSet::new();
        let lifted =
            lift_all(&mut scene, &depth, &camera, &sample.detections, |_| true, &mut pending, Some(Category::SmallObject));
        let view_dir = camera.forward();
        for l in lifted {
            let mut d = l.det;
            // The base of a resting item is rarely visible; extend it down to
            // the surface it stands on.
            let surface = support_surface(&support.world_bbox, kind, &d.bbox);
            if surface < d.bbox.min.z && surface < d.bbox.max.z {
                d.bbox.min.z = surface;
            }
            let (asset_id, asset_size) = assets.small(&d.spec, &d.bbox);
            match place_small_object(&d.bbox, asset_size, &view_dir, &support.world_bbox, kind, &scene.room) {
                Ok(sp) => {
                    let inst = ObjectInstance::new(d.id, d.spec, asset_id, asset_size, sp.position, sp.yaw, [sp.scale; 3]);
                    commit(&mut scene, inst, sp.scale);
                }
                Err(e) => scene.log(EventKind::ObjectSkipped, format!("{}: {e}", d.id)),
            }
        }
    }
    Ok(scene)
}

/// Backend named by the configuration: the mock script if given, otherwise
/// the remote services.
pub fn open_backend(cfg: &PipelineConfig) -> Result<Box<dyn Perception>, PipelineError> {
    if let Some(path) = &cfg.backend.mock {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Read { path: path.clone(), source })?;
        let script =
            MockScript::from_json(&text).map_err(|source| PipelineError::MockScript { path: path.clone(), source })?;
        return Ok(Box::new(MockStudio::new(script, cfg.seed)));
    }
    let endpoints: Endpoints = cfg.backend.endpoints.clone().with_env_overrides();
    if !endpoints.is_complete() {
        return Err(PipelineError::NoBackend);
    }
    Ok(Box::new(RemoteClient::new(endpoints, RetryPolicy::default())))
}

/// Starting scene: the configured room, or a pre-arranged scene file.
pub fn initial_scene(cfg: &PipelineConfig) -> Result<SceneState, PipelineError> {
    match (&cfg.room, &cfg.scene) {
        (Some(room), _) => Ok(SceneState::new(room.clone(), cfg.seed)),
        (None, Some(path)) => {
            let bytes = fs::read(path).map_err(|source| PipelineError::Read { path: path.clone(), source })?;
            let mut scene = deserialize_scene(&bytes)?;
            scene.rng_seed = cfg.seed;
            Ok(scene)
        }
        (None, None) => Err(PipelineError::Scene(SceneError::InvalidRoom("no room or scene configured".into()))),
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub scene: SceneState,
    pub scene_path: PathBuf,
    pub events_path: PathBuf,
}

/// Runs both passes with an explicit backend.
pub fn run_passes(
    cfg: &PipelineConfig,
    backend: &mut dyn Perception,
    assets: &AssetLibrary,
) -> Result<SceneState, PipelineError> {
    let scene = initial_scene(cfg)?;
    let scene = run_furniture_pass(scene, cfg, backend, assets)?;
    run_small_object_pass(scene, cfg, backend, assets)
}

pub fn events_jsonl(scene: &SceneState) -> Vec<u8> {
    let mut out = Vec::new();
    for e in &scene.pass_log {
        serde_json::to_writer(&mut out, e).expect("events serialize");
        out.push(b'\n');
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let wrap = |source| PipelineError::Write { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(wrap)?;
    f.write_all(bytes).map_err(wrap)
}

/// Full run with the given backend: passes, validation, then
/// `scene.scene.json` and `events.jsonl` in the output directory.
pub fn generate_with(
    cfg: &PipelineConfig,
    backend: &mut dyn Perception,
    out_dir: &Path,
) -> Result<GenerateOutput, PipelineError> {
    let assets = AssetLibrary::from_config(cfg)?;
    let scene = run_passes(cfg, backend, &assets)?;
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Write { path: out_dir.to_path_buf(), source })?;
    let scene_path = out_dir.join("scene.scene.json");
    let events_path = out_dir.join("events.jsonl");
    write_file(&scene_path, &serialize_scene(&scene))?;
    write_file(&events_path, &events_jsonl(&scene))?;
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        return Err(PipelineError::Validation { path: scene_path, violations });
    }
    Ok(GenerateOutput { scene, scene_path, events_path })
}

pub fn generate(cfg: &PipelineConfig) -> Result<GenerateOutput, PipelineError> {
    let mut backend = open_backend(cfg)?;
    generate_with(cfg, backend.as_mut(), &cfg.out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{AffineDepth, ScriptedObject};
    use crate::scene::Room;

    fn cfg(room: Room) -> PipelineConfig {
        let mut c = PipelineConfig { room: Some(room), ..Default::default() };
        c.views.width = 160;
        c.views.height = 160;
        c.perception.samples_per_view = 1;
        c
    }

    fn obj(name: &str, cat: Category, min: [f64; 3], max: [f64; 3]) -> ScriptedObject {
        ScriptedObject {
            name: name.into(),
            description: String::new(),
            category: cat,
            bbox: Aabb3::new(Vec3::new(min[0], min[1], min[2]), Vec3::new(max[0], max[1], max[2])),
        }
    }

    #[test]
    fn seeds_differ_per_part() {
        assert_ne!(derive_seed(1, &[0, 0]), derive_seed(1, &[0, 1]));
        assert_eq!(derive_seed(1, &[2]), derive_seed(1, &[2]));
    }

    #[test]
    fn all_rejections_leave_scene_unchanged() {
        let c = cfg(Room::rectangle(4.0, 4.0, 2.8));
        let mut studio = MockStudio::new(MockScript::default(), 0);
        let scene =
            run_furniture_pass(initial_scene(&c).unwrap(), &c, &mut studio, &AssetLibrary::default()).unwrap();
        assert!(scene.instances.is_empty());
        assert_eq!(scene.count_events(EventKind::ViewSelected), 3);
        assert_eq!(scene.count_events(EventKind::InpaintRejected), 12);
    }

    #[test]
    fn one_view_places_scripted_furniture() {
        let c = cfg(Room::rectangle(4.0, 4.0, 2.8));
        let mut script = MockScript { depth: Some(AffineDepth { a: 0.5, b: 2.0 }), ..Default::default() };
        script.inpaint.insert(
            0,
            vec![
                obj("sofa", Category::FloorObject, [1.2, 1.2, 0.0], [2.4, 2.0, 0.8]),
                obj("table", Category::FloorObject, [1.6, 2.4, 0.0], [2.4, 3.0, 0.6]),
            ],
        );
        let mut studio = MockStudio::new(script, 0);
        let scene =
            run_furniture_pass(initial_scene(&c).unwrap(), &c, &mut studio, &AssetLibrary::default()).unwrap();
        assert_eq!(scene.instances.len(), 2, "{:#?}", scene.pass_log);
        assert!(validate_scene(&scene).is_empty());
    }

    #[test]
    fn receptacle_heuristics() {
        assert_eq!(receptacle_kind("Tall Bookcase"), ReceptacleKind::Inside);
        assert_eq!(receptacle_kind("coffee table"), ReceptacleKind::OnTop);
        assert!(is_receptacle_by_name("writing desk"));
        assert!(!is_receptacle_by_name("sofa"));
    }

    #[test]
    fn missing_backend_is_reported() {
        let mut c = cfg(Room::rectangle(4.0, 4.0, 2.8));
        c.backend.endpoints = Endpoints::default();
        if std::env::var_os("ROOMFORGE_INPAINT_URL").is_none() {
            assert!(matches!(open_backend(&c), Err(PipelineError::NoBackend)));
        }
    }
}
