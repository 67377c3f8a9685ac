//! Contracts for the external perception services, a scripted offline
//! studio implementing all of them, and an HTTP client.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, ImageFormat, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::fnv1a;
use crate::geometry::{Aabb3, CameraView, DepthMap};
use crate::render::{self, label_color, label_instance, object_label, Frame};
use crate::scene::Category;
use crate::view_mask::InpaintMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("malformed service response: {0}")]
    BadResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("request invalid: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("no parseable annotation lines")]
    NoAnnotations,
    #[error("prompt reply unusable: {0}")]
    PromptBuild(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRequest {
    pub image: RgbImage,
    pub mask: InpaintMask,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
}

/// One segmented instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2d {
    pub name: String,
    pub description: String,
    pub category: Category,
    /// `[x0, y0, x1, y1)` in pixels.
    pub bbox: [u32; 4],
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
}

impl Detection2d {
    pub fn from_pixels(name: &str, description: &str, category: Category, width: u32, pixels: Vec<usize>) -> Self {
        let w = width as usize;
        let mut b = [u32::MAX, u32::MAX, 0, 0];
        for &k in &pixels {
            let (i, j) = ((k % w) as u32, (k / w) as u32);
            b = [b[0].min(i), b[1].min(j), b[2].max(i + 1), b[3].max(j + 1)];
        }
        if pixels.is_empty() {
            b = [0; 4];
        }
        Self { name: name.into(), description: description.into(), category, bbox: b, pixels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextTask {
    Prompts,
    Rotation,
    Receptacles,
}

/// What the backend is looking at; remote services ignore it.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub camera: &'a CameraView,
    pub frame: &'a Frame,
}

pub trait Perception {
    fn inpaint(&mut self, ctx: FrameContext<'_>, req: &InpaintRequest) -> Result<RgbImage, ServiceError>;
    fn estimate_depth(&mut self, ctx: FrameContext<'_>, image: &RgbImage) -> Result<DepthMap, ServiceError>;
    /// Raw annotation text, one object per line.
    fn annotate(&mut self, ctx: FrameContext<'_>, image: &RgbImage) -> Result<String, ServiceError>;
    fn detect_segment(
        &mut self,
        ctx: FrameContext<'_>,
        image: &RgbImage,
        tags: &[String],
    ) -> Result<Vec<Detection2d>, ServiceError>;
    fn complete(&mut self, task: TextTask, prompt: &str) -> Result<String, ServiceError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub name: String,
    pub description: String,
    pub category: Category,
}

/// Parses `name: description | category` lines; malformed lines are
/// dropped with a warning.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, PerceptionError> {
    let mut out = Vec::new();
    for raw in text.lines() {
        let line = raw.trim().trim_end_matches('\\').trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once(':').and_then(|(name, rest)| {
            let (desc, cat) = rest.rsplit_once('|')?;
            let name = name.trim().trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == '*');
            let name = name.trim();
            let category = Category::parse(cat)?;
            (!name.is_empty()).then(|| Annotation { name: name.to_string(), description: desc.trim().to_string(), category })
        });
        match parsed {
            Some(a) => out.push(a),
            None => log::warn!("dropping malformed annotation line: {line}"),
        }
    }
    if out.is_empty() {
        return Err(PerceptionError::NoAnnotations);
    }
    Ok(out)
}

pub fn annotate_objects(
    backend: &mut dyn Perception,
    ctx: FrameContext<'_>,
    image: &RgbImage,
) -> Result<Vec<Annotation>, PerceptionError> {
    parse_annotations(&backend.annotate(ctx, image)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: String,
    pub negative: String,
}

/// Question asking which objects are saturated and which are missing.
pub fn prompt_request(inventory: &[(String, usize)], caption: &str) -> String {
    let listing = if inventory.is_empty() {
        "(none)".to_string()
    } else {
        inventory.iter().map(|(n, c)| format!("{c} x {n}")).collect::<Vec<_>>().join(", ")
    };
    format!(
        "Room: {caption}\nCurrent objects: {listing}\n\
         Reply with exactly two lines:\nreached limit: <objects that should not be added again>\n\
         lacking: <specific objects the room still needs>\n"
    )
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().trim_end_matches('.').trim().to_string()).filter(|t| !t.is_empty()).collect()
}

/// Parses the `reached limit:` / `lacking:` reply into (reached, lacking).
pub fn parse_prompt_reply(text: &str) -> Result<(Vec<String>, Vec<String>), PerceptionError> {
    let (mut reached, mut lacking) = (None, None);
    for line in text.lines() {
        let line = line.trim().trim_end_matches('\\').trim();
        let lower = line.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("reached limit:") {
            reached = Some(split_list(&line[line.len() - rest.len()..]));
        } else if let Some(rest) = lower.strip_prefix("lacking:") {
            lacking = Some(split_list(&line[line.len() - rest.len()..]));
        }
    }
    let (Some(reached), Some(lacking)) = (reached, lacking) else {
        return Err(PerceptionError::PromptBuild("missing `reached limit:` or `lacking:` line".into()));
    };
    if let Some(both) = lacking.iter().find(|l| reached.iter().any(|r| r.eq_ignore_ascii_case(l))) {
        return Err(PerceptionError::PromptBuild(format!("`{both}` is both lacking and at its limit")));
    }
    Ok((reached, lacking))
}

pub fn prompt_pair(caption: &str, reached: &[String], lacking: &[String]) -> PromptPair {
    let positive = if lacking.is_empty() { caption.to_string() } else { format!("{caption}, {}", lacking.join(", ")) };
    PromptPair { positive, negative: reached.join(", ") }
}

pub fn build_prompts(
    inventory: &[(String, usize)],
    caption: &str,
    backend: &mut dyn Perception,
) -> Result<PromptPair, PerceptionError> {
    let reply = backend.complete(TextTask::Prompts, &prompt_request(inventory, caption))?;
    let (reached, lacking) = parse_prompt_reply(&reply)?;
    Ok(prompt_pair(caption, &reached, &lacking))
}

pub fn accept_image(detections: &[Detection2d], min_count: usize) -> bool {
    detections.len() >= min_count
}

pub fn rotation_request(names: &[String]) -> String {
    format!(
        "Objects: {}\nFor each object that should face another object, reply with one line `object -> target`.\n",
        names.join(", ")
    )
}

pub fn receptacle_request(names: &[String]) -> String {
    format!(
        "Objects: {}\nList, comma separated, the objects that can hold small items on top or inside.\n",
        names.join(", ")
    )
}

pub fn parse_name_list(text: &str) -> Vec<String> {
    text.lines().flat_map(split_list).map(|s| s.trim_start_matches(['-', '*', ' ']).to_string()).filter(|s| !s.is_empty()).collect()
}

// ---------------------------------------------------------------------------
// Scripted offline backend

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedObject {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub category: Category,
    pub bbox: Aabb3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDepth {
    pub a: f64,
    pub b: f64,
}

/// Responses keyed by per-service call index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    /// Depth corruption; drawn from the seed when absent.
    pub depth: Option<AffineDepth>,
    pub inpaint: BTreeMap<usize, Vec<ScriptedObject>>,
    pub annotate: BTreeMap<usize, String>,
    pub prompts: BTreeMap<usize, String>,
    pub rotation: BTreeMap<usize, String>,
    pub receptacles: BTreeMap<usize, String>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone)]
struct Composite {
    depth: DepthMap,
    /// Scripted object index per pixel.
    owner: Vec<Option<usize>>,
    objects: Vec<ScriptedObject>,
}

/// Offline stand-in for every service. Inpainting stamps the scripted
/// boxes into the masked part of the view; depth, annotation and
/// detection then report the stamped ground truth.
#[derive(Debug, Clone)]
pub struct MockStudio {
    pub script: MockScript,
    pub depth: AffineDepth,
    counters: BTreeMap<&'static str, usize>,
    composites: HashMap<u64, Composite>,
}

fn image_key(img: &RgbImage) -> u64 {
    fnv1a(img.as_raw()) ^ ((img.width() as u64) << 32 | img.height() as u64)
}

impl MockStudio {
    pub fn new(script: MockScript, seed: u64) -> Self {
        let depth = script.depth.unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64_6570_7468);
            AffineDepth { a: rng.random_range(0.2..2.0), b: rng.random_range(0.0..3.0) }
        });
        Self { script, depth, counters: BTreeMap::new(), composites: HashMap::new() }
    }

    fn next(&mut self, service: &'static str) -> usize {
        let c = self.counters.entry(service).or_insert(0);
        *c += 1;
        *c - 1
    }

    pub fn calls(&self, service: &str) -> usize {
        self.counters.get(service).copied().unwrap_or(0)
    }

    fn composite_for(&self, ctx: FrameContext<'_>, image: &RgbImage) -> Composite {
        self.composites.get(&image_key(image)).cloned().unwrap_or_else(|| Composite {
            depth: ctx.frame.depth.clone(),
            owner: vec![None; ctx.frame.ids.labels().len()],
            objects: Vec::new(),
        })
    }
}

impl Perception for MockStudio {
    fn inpaint(&mut self, ctx: FrameContext<'_>, req: &InpaintRequest) -> Result<RgbImage, ServiceError> {
        let call = self.next("inpaint");
        let (w, h) = (req.image.width(), req.image.height());
        if (req.mask.width, req.mask.height) != (w, h) || (ctx.camera.width, ctx.camera.height) != (w, h) {
            return Err(ServiceError::InvalidRequest("mask, image and camera sizes differ".into()));
        }
        let objects = self.script.inpaint.get(&call).cloned().unwrap_or_default();
        let boxes: Vec<(u32, Aabb3)> = objects.iter().enumerate().map(|(k, o)| (object_label(k), o.bbox)).collect();
        let sprites = render::rasterize_boxes(None, &boxes, ctx.camera);
        let mut out = req.image.clone();
        let mut depth = ctx.frame.depth.clone();
        let mut owner = vec![None; (w * h) as usize];
        for (k, label) in sprites.ids.labels().iter().enumerate() {
            let Some(obj) = label_instance(*label) else { continue };
            if req.mask.weights[k] < 0.5 {
                continue;
            }
            let (Some(sd), scene_d) = (sprites.depth.get_index(k), ctx.frame.depth.get_index(k)) else { continue };
            if scene_d.is_some_and(|d| d <= sd) {
                continue;
            }
            depth.set_index(k, Some(sd));
            owner[k] = Some(obj);
            let (i, j) = ((k % w as usize) as u32, (k / w as usize) as u32);
            out.put_pixel(i, j, image::Rgb(label_color(object_label(512 + obj + call * 64))));
        }
        if owner.iter().any(Option::is_some) {
            self.composites.insert(image_key(&out), Composite { depth, owner, objects });
        }
        Ok(out)
    }

    fn estimate_depth(&mut self, ctx: FrameContext<'_>, image: &RgbImage) -> Result<DepthMap, ServiceError> {
        self.next("depth");
        let AffineDepth { a, b } = self.depth;
        Ok(self.composite_for(ctx, image).depth.map_valid(|d| a * d + b))
    }

    fn annotate(&mut self, ctx: FrameContext<'_>, image: &RgbImage) -> Result<String, ServiceError> {
        let call = self.next("annotate");
        if let Some(text) = self.script.annotate.get(&call) {
            return Ok(text.clone());
        }
        let comp = self.composite_for(ctx, image);
        let mut lines = String::new();
        for (k, o) in comp.objects.iter().enumerate() {
            if comp.owner.contains(&Some(k)) {
                lines.push_str(&format!("{}: {} | {}\n", o.name, o.description, o.category));
            }
        }
        Ok(lines)
    }

    fn detect_segment(
        &mut self,
        ctx: FrameContext<'_>,
        image: &RgbImage,
        tags: &[String],
    ) -> Result<Vec<Detection2d>, ServiceError> {
        self.next("detect");
        let comp = self.composite_for(ctx, image);
        let mut out = Vec::new();
        for (k, o) in comp.objects.iter().enumerate() {
            if !tags.iter().any(|t| t.eq_ignore_ascii_case(&o.name)) {
                continue;
            }
            let pixels: Vec<usize> = comp.owner.iter().enumerate().filter(|(_, x)| **x == Some(k)).map(|(p, _)| p).collect();
            if !pixels.is_empty() {
                out.push(Detection2d::from_pixels(&o.name, &o.description, o.category, image.width(), pixels));
            }
        }
        Ok(out)
    }

    fn complete(&mut self, task: TextTask, _prompt: &str) -> Result<String, ServiceError> {
        let (service, table) = match task {
            TextTask::Prompts => ("prompts", &self.script.prompts),
            TextTask::Rotation => ("rotation", &self.script.rotation),
            TextTask::Receptacles => ("receptacles", &self.script.receptacles),
        };
        let reply = table.get(&self.calls(service)).cloned();
        self.next(service);
        match (task, reply) {
            (_, Some(text)) => Ok(text),
            (TextTask::Prompts, None) => Ok("reached limit:\nlacking:\n".into()),
            (_, None) => Err(ServiceError::Unavailable(format!("no scripted {service} reply"))),
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP client

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub inpaint: Option<String>,
    pub depth: Option<String>,
    pub annotate: Option<String>,
    pub detect: Option<String>,
}

impl Endpoints {
    /// Same host for every service, with the standard paths.
    pub fn with_base(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        Self {
            inpaint: Some(format!("{base}/inpaint")),
            depth: Some(format!("{base}/depth")),
            annotate: Some(format!("{base}/annotate")),
            detect: Some(format!("{base}/detect")),
        }
    }

    /// Applies `ROOMFORGE_{INPAINT,DEPTH,ANNOTATE,DETECT}_URL` overrides.
    pub fn with_env_overrides(mut self) -> Self {
        for (var, slot) in [
            ("ROOMFORGE_INPAINT_URL", &mut self.inpaint),
            ("ROOMFORGE_DEPTH_URL", &mut self.depth),
            ("ROOMFORGE_ANNOTATE_URL", &mut self.annotate),
            ("ROOMFORGE_DETECT_URL", &mut self.detect),
        ] {
            if let Ok(v) = std::env::var(var) {
                if !v.trim().is_empty() {
                    *slot = Some(v);
                }
            }
        }
        self
    }

    pub fn is_complete(&self) -> bool {
        self.inpaint.is_some() && self.depth.is_some() && self.annotate.is_some() && self.detect.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500), timeout: Duration::from_secs(120) }
    }
}

#[derive(Debug, Serialize)]
struct InpaintBody<'a> {
    image_b64: String,
    mask_b64: String,
    prompt: &'a str,
    negative_prompt: &'a str,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct ImageReply {
    image_b64: String,
}

#[derive(Debug, Serialize)]
struct ImageBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<TextTask>,
}

#[derive(Debug, Deserialize)]
struct DepthReply {
    depth_b64: String,
}

#[derive(Debug, Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Debug, Serialize)]
struct DetectBody<'a> {
    image_b64: String,
    tags: &'a [String],
}

#[derive(Debug, Deserialize)]
struct WireDetection {
    name: String,
    #[serde(rename = "box")]
    bbox: [u32; 4],
    mask_b64: String,
    category: String,
    #[serde(default)]
    description: String,
}

#[derive(Debug, Deserialize)]
struct DetectReply {
    detections: Vec<WireDetection>,
}

pub fn encode_png_rgb(img: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    STANDARD.encode(buf.into_inner())
}

pub fn encode_png_gray(img: &GrayImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    STANDARD.encode(buf.into_inner())
}

fn decode_png(b64: &str) -> Result<image::DynamicImage, ServiceError> {
    let bytes = STANDARD.decode(b64.trim()).map_err(|e| ServiceError::BadResponse(e.to_string()))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| ServiceError::BadResponse(e.to_string()))
}

/// Blocking JSON-over-HTTP client for the four services.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    pub endpoints: Endpoints,
    pub retry: RetryPolicy,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(endpoints: Endpoints, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(retry.timeout)).build().into();
        Self { endpoints, retry, agent }
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &Option<String>, body: &B) -> Result<R, ServiceError> {
        let url = url.as_deref().ok_or_else(|| ServiceError::Unavailable("no endpoint configured".into()))?;
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.retry.base_delay * (1u32 << (attempt - 1).min(16)));
            }
            match self.agent.post(url).send_json(body) {
                Ok(mut resp) => {
                    return resp.body_mut().read_json::<R>().map_err(|e| ServiceError::BadResponse(e.to_string()));
                }
                Err(e) => {
                    log::warn!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(ServiceError::Exhausted { attempts: self.retry.attempts.max(1), last })
    }
}

impl Perception for RemoteClient {
    fn inpaint(&mut self, _ctx: FrameContext<'_>, req: &InpaintRequest) -> Result<RgbImage, ServiceError> {
        if (req.mask.width, req.mask.height) != req.image.dimensions() {
            return Err(ServiceError::InvalidRequest("mask and image sizes differ".into()));
        }
        let body = InpaintBody {
            image_b64: encode_png_rgb(&req.image),
            mask_b64: encode_png_gray(&req.mask.to_gray()),
            prompt: &req.prompt,
            negative_prompt: &req.negative_prompt,
            seed: req.seed,
        };
        let reply: ImageReply = self.post(&self.endpoints.inpaint, &body)?;
        let img = decode_png(&reply.image_b64)?.to_rgb8();
        if img.dimensions() != req.image.dimensions() {
            return Err(ServiceError::BadResponse("inpainted image has different dimensions".into()));
        }
        Ok(img)
    }

    fn estimate_depth(&mut self, _ctx: FrameContext<'_>, image: &RgbImage) -> Result<DepthMap, ServiceError> {
        let body = ImageBody { image_b64: Some(encode_png_rgb(image)), prompt: None, task: None };
        let reply: DepthReply = self.post(&self.endpoints.depth, &body)?;
        let bytes = STANDARD.decode(reply.depth_b64.trim()).map_err(|e| ServiceError::BadResponse(e.to_string()))?;
        let depth = DepthMap::read_from(&bytes[..]).map_err(|e| ServiceError::BadResponse(e.to_string()))?;
        if (depth.width(), depth.height()) != image.dimensions() {
            return Err(ServiceError::BadResponse("depth map has different dimensions".into()));
        }
        Ok(depth)
    }

    fn annotate(&mut self, _ctx: FrameContext<'_>, image: &RgbImage) -> Result<String, ServiceError> {
        let body = ImageBody { image_b64: Some(encode_png_rgb(image)), prompt: None, task: None };
        let reply: TextReply = self.post(&self.endpoints.annotate, &body)?;
        Ok(reply.text)
    }

    fn detect_segment(
        &mut self,
        _ctx: FrameContext<'_>,
        image: &RgbImage,
        tags: &[String],
    ) -> Result<Vec<Detection2d>, ServiceError> {
        let body = DetectBody { image_b64: encode_png_rgb(image), tags };
        let reply: DetectReply = self.post(&self.endpoints.detect, &body)?;
        let (w, h) = image.dimensions();
        reply
            .detections
            .into_iter()
            .map(|d| {
                let mask = decode_png(&d.mask_b64)?.to_luma8();
                if mask.dimensions() != (w, h) {
                    return Err(ServiceError::BadResponse(format!("mask of `{}` has wrong size", d.name)));
                }
                let [x0, y0, x1, y1] = d.bbox;
                let pixels = mask
                    .enumerate_pixels()
                    .filter(|(i, j, Luma([v]))| *v > 0 && *i >= x0 && *i < x1 && *j >= y0 && *j < y1)
                    .map(|(i, j, _)| (j * w + i) as usize)
                    .collect();
                let category = Category::parse(&d.category)
                    .ok_or_else(|| ServiceError::BadResponse(format!("unknown category `{}`", d.category)))?;
                Ok(Detection2d { name: d.name, description: d.description, category, bbox: d.bbox, pixels })
            })
            .collect()
    }

    fn complete(&mut self, task: TextTask, prompt: &str) -> Result<String, ServiceError> {
        let body = ImageBody { image_b64: None, prompt: Some(prompt), task: Some(task) };
        let reply: TextReply = self.post(&self.endpoints.annotate, &body)?;
        Ok(reply.text)
    }
}

/// Makes each detection's pixels exclusive, earlier detections first.
pub fn disjoint_masks(mut dets: Vec<Detection2d>, width: u32) -> Vec<Detection2d> {
    let mut taken = std::collections::HashSet::new();
    for d in &mut dets {
        d.pixels.retain(|p| taken.insert(*p));
        *d = Detection2d::from_pixels(&d.name, &d.description, d.category, width, std::mem::take(&mut d.pixels));
    }
    dets.retain(|d| !d.pixels.is_empty());
    dets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::render::rasterize;
    use crate::scene::{Room, SceneState};
    use crate::view_mask::MaskProvenance;
    use std::io::{BufRead, BufReader, Read, Write as _};
    use std::net::TcpListener;

    #[test]
    fn annotation_sample_line() {
        let a = parse_annotations("table: A big yellow table | floor-object\nsofa red\ntv: A black wall-mounted television | wall-object")
            .unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(
            a[0],
            Annotation { name: "table".into(), description: "A big yellow table".into(), category: Category::FloorObject }
        );
        assert_eq!(a[1].category, Category::WallObject);
        assert_eq!(parse_annotations("nothing useful"), Err(PerceptionError::NoAnnotations));
    }

    #[test]
    fn prompt_reply_parsing() {
        let (reached, lacking) = parse_prompt_reply("reached limit: TV\nlacking: sofa, coffee table\n").unwrap();
        let pair = prompt_pair("a cozy living room", &reached, &lacking);
        assert_eq!(pair.negative, "TV");
        assert_eq!(pair.positive, "a cozy living room, sofa, coffee table");
        let (r, l) = parse_prompt_reply("reached limit:\nlacking: bed").unwrap();
        assert!(r.is_empty());
        assert_eq!(prompt_pair("bedroom", &r, &l).negative, "");
        assert!(matches!(parse_prompt_reply("reached limit: sofa\nlacking: Sofa"), Err(PerceptionError::PromptBuild(_))));
        assert!(matches!(parse_prompt_reply("hello"), Err(PerceptionError::PromptBuild(_))));
    }

    #[test]
    fn acceptance_gate() {
        let d = Detection2d::from_pixels("a", "", Category::FloorObject, 4, vec![0]);
        assert!(!accept_image(&[], 2));
        assert!(accept_image(&[d.clone(), d], 2));
        assert!(accept_image(&[], 0));
    }

    fn studio_setup() -> (SceneState, CameraView, Frame) {
        let scene = SceneState::new(Room::rectangle(4.0, 4.0, 2.8), 0);
        let cam = CameraView::look_at(Vec3::new(4.0, 4.0, 1.8), Vec3::new(0.0, 0.0, 0.5), 84.0, 96, 96).unwrap();
        let frame = rasterize(&scene, &cam);
        (scene, cam, frame)
    }

    fn scripted(name: &str, min: [f64; 3], max: [f64; 3]) -> ScriptedObject {
        ScriptedObject {
            name: name.into(),
            description: format!("a {name}"),
            category: Category::FloorObject,
            bbox: Aabb3::new(Vec3::new(min[0], min[1], min[2]), Vec3::new(max[0], max[1], max[2])),
        }
    }

    #[test]
    fn mock_inpaint_preserves_unmasked_pixels() {
        let (_, cam, frame) = studio_setup();
        let mut script = MockScript::default();
        script.inpaint.insert(0, vec![scripted("sofa", [1.0, 1.0, 0.0], [2.5, 2.0, 0.8])]);
        let mut studio = MockStudio::new(script, 1);
        let image = render::shade(&frame);
        let ctx = FrameContext { camera: &cam, frame: &frame };
        let empty = InpaintMask::empty(96, 96, MaskProvenance::RoomCentered);
        let req = InpaintRequest { image: image.clone(), mask: empty, prompt: "p".into(), negative_prompt: String::new(), seed: 0 };
        assert_eq!(studio.inpaint(ctx, &req).unwrap(), image);
        // Second call has no scripted objects either.
        let full = InpaintMask { weights: vec![1.0; 96 * 96], ..req.mask.clone() };
        let out = studio.inpaint(ctx, &InpaintRequest { mask: full.clone(), ..req.clone() }).unwrap();
        assert_eq!(out, image);
    }

    #[test]
    fn mock_round_trip_reports_sprites() {
        let (_, cam, frame) = studio_setup();
        let mut script = MockScript { depth: Some(AffineDepth { a: 0.5, b: 2.0 }), ..Default::default() };
        script.inpaint.insert(
            0,
            vec![scripted("sofa", [1.0, 1.0, 0.0], [2.5, 2.0, 0.8]), scripted("table", [0.5, 2.5, 0.0], [1.3, 3.3, 0.7])],
        );
        let mut studio = MockStudio::new(script, 1);
        let image = render::shade(&frame);
        let ctx = FrameContext { camera: &cam, frame: &frame };
        let mask = InpaintMask { weights: vec![1.0; 96 * 96], ..InpaintMask::empty(96, 96, MaskProvenance::RoomCentered) };
        let req = InpaintRequest { image: image.clone(), mask, prompt: "p".into(), negative_prompt: String::new(), seed: 0 };
        let out = studio.inpaint(ctx, &req).unwrap();
        assert_ne!(out, image);
        let ann = annotate_objects(&mut studio, ctx, &out).unwrap();
        assert_eq!(ann.len(), 2);
        let tags: Vec<String> = ann.iter().map(|a| a.name.clone()).collect();
        let dets = studio.detect_segment(ctx, &out, &tags).unwrap();
        assert_eq!(dets.len(), 2);
        // Sprite masks agree with a direct render of the boxes.
        let truth = render::rasterize_boxes(
            Some(&Room::rectangle(4.0, 4.0, 2.8)),
            &[(object_label(0), script_box(&studio, 0)), (object_label(1), script_box(&studio, 1))],
            &cam,
        );
        for (k, d) in dets.iter().enumerate() {
            assert_eq!(d.pixels, truth.ids.pixels_with(object_label(k)));
            assert!(d.pixels.iter().all(|p| {
                let (i, j) = ((p % 96) as u32, (p / 96) as u32);
                i >= d.bbox[0] && i < d.bbox[2] && j >= d.bbox[1] && j < d.bbox[3]
            }));
        }
        let depth = studio.estimate_depth(ctx, &out).unwrap();
        let k = dets[0].pixels[0];
        assert_eq!(depth.get_index(k), truth.depth.get_index(k).map(|d| 0.5 * d + 2.0));
        let none = studio.detect_segment(ctx, &out, &["lamp".to_string()]).unwrap();
        assert!(none.is_empty());
    }

    fn script_box(s: &MockStudio, k: usize) -> Aabb3 {
        s.script.inpaint[&0][k].bbox
    }

    #[test]
    fn mock_text_tasks() {
        let mut script = MockScript::default();
        script.prompts.insert(0, "reached limit: TV\nlacking: sofa".into());
        let mut studio = MockStudio::new(script, 0);
        let pair = build_prompts(&[("TV".into(), 1)], "living room", &mut studio).unwrap();
        assert_eq!(pair.negative, "TV");
        let pair = build_prompts(&[], "living room", &mut studio).unwrap();
        assert_eq!(pair, PromptPair { positive: "living room".into(), negative: String::new() });
        assert!(studio.complete(TextTask::Rotation, "").is_err());
    }

    #[test]
    fn overlapping_masks_become_disjoint() {
        let a = Detection2d::from_pixels("a", "", Category::FloorObject, 10, vec![1, 2, 3]);
        let b = Detection2d::from_pixels("b", "", Category::FloorObject, 10, vec![3, 4]);
        let out = disjoint_masks(vec![a, b], 10);
        assert_eq!(out[1].pixels, vec![4]);
        assert_eq!(out[1].bbox, [4, 0, 5, 1]);
    }

    /// Serves canned HTTP responses, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (addr, handle)
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1), timeout: Duration::from_secs(5) }
    }

    #[test]
    fn remote_annotate_retries_then_succeeds() {
        let (addr, handle) = serve(vec![
            (500, "{}".into()),
            (200, r#"{"text":"table: A big yellow table | floor-object"}"#.into()),
        ]);
        let mut client = RemoteClient::new(Endpoints::with_base(&addr), fast_retry());
        let (_, cam, frame) = studio_setup();
        let img = RgbImage::new(2, 2);
        let text = client.annotate(FrameContext { camera: &cam, frame: &frame }, &img).unwrap();
        assert!(text.starts_with("table:"));
        let bodies = handle.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        let png = decode_png(sent["image_b64"].as_str().unwrap()).unwrap();
        assert_eq!(png.to_rgb8(), img);
    }

    #[test]
    fn remote_gives_up_after_three_attempts() {
        let (addr, handle) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let mut client = RemoteClient::new(Endpoints::with_base(&addr), fast_retry());
        let err = client.complete(TextTask::Prompts, "hi").unwrap_err();
        assert!(matches!(err, ServiceError::Exhausted { attempts: 3, .. }));
        assert_eq!(handle.join().unwrap().len(), 3);
    }

    #[test]
    fn remote_inpaint_and_detect_wire_format() {
        let mut img = RgbImage::new(3, 2);
        img.put_pixel(1, 1, image::Rgb([9, 8, 7]));
        let mut mask_img = GrayImage::new(3, 2);
        mask_img.put_pixel(2, 0, Luma([255]));
        mask_img.put_pixel(1, 1, Luma([255]));
        let det = format!(
            r#"{{"detections":[{{"name":"lamp","box":[1,0,3,2],"mask_b64":"{}","category":"floor-object","description":"tall"}}]}}"#,
            encode_png_gray(&mask_img)
        );
        let (addr, handle) = serve(vec![(200, format!(r#"{{"image_b64":"{}"}}"#, encode_png_rgb(&img))), (200, det)]);
        let mut client = RemoteClient::new(Endpoints::with_base(&addr), fast_retry());
        let (_, cam, frame) = studio_setup();
        let ctx = FrameContext { camera: &cam, frame: &frame };
        let mask = InpaintMask { weights: vec![0.0, 1.0, 0.5, 0.0, 0.0, 0.0], ..InpaintMask::empty(3, 2, MaskProvenance::RoomCentered) };
        let req = InpaintRequest { image: img.clone(), mask, prompt: "a room".into(), negative_prompt: "tv".into(), seed: 7 };
        assert_eq!(client.inpaint(ctx, &req).unwrap(), img);
        let dets = client.detect_segment(ctx, &img, &["lamp".into()]).unwrap();
        assert_eq!(dets[0].pixels, vec![2, 4]);
        assert_eq!(dets[0].category, Category::FloorObject);
        let bodies = handle.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        for key in ["image_b64", "mask_b64", "prompt", "negative_prompt", "seed"] {
            assert!(sent.get(key).is_some(), "missing {key}");
        }
        assert_eq!(sent["seed"], 7);
        let sent: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["tags"][0], "lamp");
    }

    #[test]
    fn missing_endpoint_is_unavailable() {
        let mut client = RemoteClient::new(Endpoints::default(), fast_retry());
        assert!(matches!(client.complete(TextTask::Prompts, ""), Err(ServiceError::Unavailable(_))));
    }
}
