//! Placement constraints derived from detected boxes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb3;
use crate::scene::{ObjectSpec, Rect, Room, Wall};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConstraintError {
    #[error("wall object `{id}` is {distance:.3} m from the nearest wall")]
    NotNearWall { id: String, distance: f64 },
    #[error("rotation annotator failed: {0}")]
    Annotator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub edge_eps: f64,
    pub middle_eps: f64,
    pub near_eps: f64,
    pub far_eps: f64,
    pub align_eps: f64,
    /// Minimum overlap of perpendicular extents for directional relations,
    /// as a fraction of the smaller extent.
    pub overlap_frac: f64,
    /// Maximum distance from a wall object to its wall.
    pub wall_eps: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            edge_eps: 0.30,
            middle_eps: 0.75,
            near_eps: 0.50,
            far_eps: 2.0,
            align_eps: 0.10,
            overlap_frac: 0.5,
            wall_eps: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationTarget {
    Object(String),
    /// Face into the room, away from this wall.
    AwayFromWall(Wall),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    Edge,
    Middle,
    Corner,
    Horizontal,
    Vertical,
    Near(String),
    Far(String),
    FrontOf(String),
    Behind(String),
    LeftOf(String),
    RightOf(String),
    CenterAligned(String),
    Location { x: f64, y: f64 },
    FaceTo(RotationTarget),
    Above(String),
    Height(f64),
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::Edge => "edge",
            ConstraintKind::Middle => "middle",
            ConstraintKind::Corner => "corner",
            ConstraintKind::Horizontal => "horizontal",
            ConstraintKind::Vertical => "vertical",
            ConstraintKind::Near(_) => "near",
            ConstraintKind::Far(_) => "far",
            ConstraintKind::FrontOf(_) => "front-of",
            ConstraintKind::Behind(_) => "behind",
            ConstraintKind::LeftOf(_) => "left-of",
            ConstraintKind::RightOf(_) => "right-of",
            ConstraintKind::CenterAligned(_) => "center-aligned",
            ConstraintKind::Location { .. } => "location",
            ConstraintKind::FaceTo(_) => "face-to",
            ConstraintKind::Above(_) => "above",
            ConstraintKind::Height(_) => "height",
        }
    }

    /// Object this constraint refers to, if any.
    pub fn target(&self) -> Option<&str> {
        match self {
            ConstraintKind::Near(t)
            | ConstraintKind::Far(t)
            | ConstraintKind::FrontOf(t)
            | ConstraintKind::Behind(t)
            | ConstraintKind::LeftOf(t)
            | ConstraintKind::RightOf(t)
            | ConstraintKind::CenterAligned(t)
            | ConstraintKind::Above(t)
            | ConstraintKind::FaceTo(RotationTarget::Object(t)) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hardness {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub subject: String,
    pub kind: ConstraintKind,
    pub hardness: Hardness,
}

impl Constraint {
    pub fn hard(subject: &str, kind: ConstraintKind) -> Self {
        Self { subject: subject.to_string(), kind, hardness: Hardness::Hard }
    }

    pub fn soft(subject: &str, kind: ConstraintKind) -> Self {
        Self { subject: subject.to_string(), kind, hardness: Hardness::Soft }
    }

    pub fn is_hard(&self) -> bool {
        self.hardness == Hardness::Hard
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.subject, self.kind.name())?;
        match &self.kind {
            ConstraintKind::FaceTo(RotationTarget::AwayFromWall(w)) => write!(f, " wall:{}", *w as u8)?,
            kind => {
                if let Some(t) = kind.target() {
                    write!(f, " {t}")?;
                }
            }
        }
        let hardness = match self.hardness {
            Hardness::Hard => "hard",
            Hardness::Soft => "soft",
        };
        write!(f, " {hardness}")?;
        match self.kind {
            ConstraintKind::Location { x, y } => write!(f, " {x:.6} {y:.6}"),
            ConstraintKind::Height(h) => write!(f, " {h:.6}"),
            _ => Ok(()),
        }
    }
}

/// Constraints grouped by subject plus the placement order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub order: Vec<String>,
    by_subject: BTreeMap<String, Vec<Constraint>>,
}

impl ConstraintSet {
    pub fn new(order: Vec<String>) -> Self {
        let by_subject = order.iter().map(|id| (id.clone(), Vec::new())).collect();
        Self { order, by_subject }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Adds a constraint unless the same (kind, subject, target) is present.
    pub fn push(&mut self, c: Constraint) -> bool {
        let list = self.by_subject.entry(c.subject.clone()).or_default();
        if list.iter().any(|e| e.kind == c.kind || (e.kind.name() == c.kind.name() && same_triple(e, &c))) {
            return false;
        }
        if !self.order.contains(&c.subject) {
            self.order.push(c.subject.clone());
        }
        list.push(c);
        true
    }

    pub fn for_subject(&self, id: &str) -> &[Constraint] {
        self.by_subject.get(id).map_or(&[], Vec::as_slice)
    }

    /// All constraints in placement order.
    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.order.iter().flat_map(|id| self.for_subject(id).iter())
    }

    pub fn len(&self) -> usize {
        self.by_subject.values().map(Vec::len).sum()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.order.iter().position(|o| o == id)
    }

    /// One constraint per line.
    pub fn dump(&self) -> String {
        self.iter().map(|c| format!("{c}\n")).collect()
    }
}

fn same_triple(a: &Constraint, b: &Constraint) -> bool {
    match (&a.kind, &b.kind) {
        (ConstraintKind::Location { .. }, ConstraintKind::Location { .. }) => true,
        (ConstraintKind::Height(_), ConstraintKind::Height(_)) => true,
        (x, y) => x.target().is_some() && x.target() == y.target(),
    }
}

/// A detected object with its measured world box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub id: String,
    pub spec: ObjectSpec,
    pub bbox: Aabb3,
}

impl Detection {
    pub fn new(id: impl Into<String>, spec: ObjectSpec, bbox: Aabb3) -> Self {
        Self { id: id.into(), spec, bbox }
    }

    pub fn footprint(&self) -> Rect {
        Rect::of_box(&self.bbox)
    }
}

/// Largest footprint first, then taller, then by name and id.
pub fn placement_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.bbox
            .footprint_area()
            .total_cmp(&da.bbox.footprint_area())
            .then(db.bbox.size().z.total_cmp(&da.bbox.size().z))
            .then_with(|| da.spec.name.cmp(&db.spec.name))
            .then_with(|| da.id.cmp(&db.id))
    });
    idx
}

/// Global placement class of a footprint given its wall distances.
pub fn global_constraint(distances: &[f64; 4], th: &Thresholds) -> Option<ConstraintKind> {
    let close: Vec<Wall> = Wall::ALL.into_iter().filter(|w| distances[*w as usize] < th.edge_eps).collect();
    let corner = close.iter().any(|a| close.iter().any(|b| a.perpendicular(*b)));
    if corner {
        Some(ConstraintKind::Corner)
    } else if !close.is_empty() {
        Some(ConstraintKind::Edge)
    } else if distances.iter().all(|d| *d > th.middle_eps) {
        Some(ConstraintKind::Middle)
    } else {
        None
    }
}

pub fn orientation_constraint(footprint: &Rect) -> ConstraintKind {
    if footprint.width() >= footprint.depth() {
        ConstraintKind::Horizontal
    } else {
        ConstraintKind::Vertical
    }
}

/// Relations of `subject` to an earlier object `target`.
pub fn pair_constraints(subject: &Detection, target: &Detection, th: &Thresholds) -> Vec<Constraint> {
    let (a, b) = (subject.footprint(), target.footprint());
    let id = subject.id.as_str();
    let tid = target.id.clone();
    let mut out = Vec::new();
    let gap = a.gap(&b);
    if gap < th.near_eps {
        out.push(Constraint::soft(id, ConstraintKind::Near(tid.clone())));
    } else if gap > th.far_eps {
        out.push(Constraint::soft(id, ConstraintKind::Far(tid.clone())));
    }
    let (ca, cb) = (a.center(), b.center());
    let (dx, dy) = (ca[0] - cb[0], ca[1] - cb[1]);
    let overlap_ok = |axis: usize| {
        let extent = if axis == 0 { a.width().min(b.width()) } else { a.depth().min(b.depth()) };
        extent > 0.0 && a.overlap_along(&b, axis) > th.overlap_frac * extent
    };
    if dx.abs() >= dy.abs() {
        if dx != 0.0 && overlap_ok(1) {
            let kind = if dx < 0.0 { ConstraintKind::LeftOf(tid.clone()) } else { ConstraintKind::RightOf(tid.clone()) };
            out.push(Constraint::soft(id, kind));
        }
    } else if overlap_ok(0) {
        let kind = if dy < 0.0 { ConstraintKind::FrontOf(tid.clone()) } else { ConstraintKind::Behind(tid.clone()) };
        out.push(Constraint::soft(id, kind));
    }
    if dx.abs() < th.align_eps || dy.abs() < th.align_eps {
        out.push(Constraint::soft(id, ConstraintKind::CenterAligned(tid)));
    }
    out
}

pub fn derive_floor_constraints(dets: &[Detection], room: &Room, th: &Thresholds) -> ConstraintSet {
    let order = placement_order(dets);
    let mut set = ConstraintSet::new(order.iter().map(|&k| dets[k].id.clone()).collect());
    for (rank, &k) in order.iter().enumerate() {
        let d = &dets[k];
        let fp = d.footprint();
        if let Some(kind) = global_constraint(&room.wall_distances(&fp), th) {
            set.push(Constraint::hard(&d.id, kind));
        }
        set.push(Constraint::hard(&d.id, orientation_constraint(&fp)));
        for &e in &order[..rank] {
            for c in pair_constraints(d, &dets[e], th) {
                set.push(c);
            }
        }
        let [x, y] = fp.center();
        set.push(Constraint::soft(&d.id, ConstraintKind::Location { x, y }));
    }
    set
}

/// Wall nearest to a box, with its distance.
pub fn nearest_wall(room: &Room, bbox: &Aabb3) -> (Wall, f64) {
    let dist = room.wall_distances(&Rect::of_box(bbox));
    Wall::ALL
        .into_iter()
        .map(|w| (w, dist[w as usize]))
        .fold((Wall::Front, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallConstraints {
    pub set: ConstraintSet,
    /// Objects too far from every wall, with the reason.
    pub demoted: Vec<ConstraintError>,
}

/// Above / Location / Height constraints for wall-mounted objects.
/// `floor` holds the already-placed floor objects as (id, box).
pub fn derive_wall_constraints(
    dets: &[Detection],
    floor: &[(String, Aabb3)],
    room: &Room,
    th: &Thresholds,
) -> WallConstraints {
    let mut set = ConstraintSet::default();
    let mut demoted = Vec::new();
    for k in placement_order(dets) {
        let d = &dets[k];
        let (wall, distance) = nearest_wall(room, &d.bbox);
        if distance > th.wall_eps {
            demoted.push(ConstraintError::NotNearWall { id: d.id.clone(), distance });
            continue;
        }
        let fp = d.footprint();
        let axis = wall.along_axis();
        let below = floor
            .iter()
            .filter(|(_, b)| {
                Rect::of_box(b).overlap_along(&fp, axis) > 0.0 && b.max.z <= d.bbox.min.z + 1e-9
            })
            .min_by(|(ia, a), (ib, b)| {
                let da = (Rect::of_box(a).center()[axis] - fp.center()[axis]).abs();
                let db = (Rect::of_box(b).center()[axis] - fp.center()[axis]).abs();
                da.total_cmp(&db).then_with(|| ia.cmp(ib))
            });
        if let Some((target, _)) = below {
            set.push(Constraint::hard(&d.id, ConstraintKind::Above(target.clone())));
        }
        let [mut x, mut y] = fp.center();
        match wall {
            Wall::Front | Wall::Back => y = room.wall_plane(wall),
            Wall::Left | Wall::Right => x = room.wall_plane(wall),
        }
        set.push(Constraint::soft(&d.id, ConstraintKind::Location { x, y }));
        set.push(Constraint::hard(&d.id, ConstraintKind::Height(d.bbox.center().z)));
    }
    WallConstraints { set, demoted }
}

const SEATING: &[&str] = &["chair", "sofa", "couch", "stool", "bench", "armchair", "seat", "ottoman"];
const TABLES: &[&str] = &["table", "desk"];

fn name_has(name: &str, words: &[&str]) -> bool {
    let lower = name.to_ascii_lowercase();
    words.iter().any(|w| lower.contains(w))
}

pub fn is_seating(name: &str) -> bool {
    name_has(name, SEATING)
}

pub fn is_table(name: &str) -> bool {
    name_has(name, TABLES)
}

fn center_distance(a: &Aabb3, b: &Aabb3) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    (ca.x - cb.x).hypot(ca.y - cb.y)
}

/// Geometric default: seating faces the nearest earlier table or desk, other
/// objects face away from their nearest wall.
pub fn fallback_rotation(dets: &[Detection], order: &[String], room: &Room) -> Vec<Constraint> {
    let rank = |id: &str| order.iter().position(|o| o == id);
    let mut out = Vec::new();
    for id in order {
        let Some(d) = dets.iter().find(|d| &d.id == id) else { continue };
        let own = rank(id);
        let table = is_seating(&d.spec.name)
            .then(|| {
                dets.iter()
                    .filter(|t| t.id != d.id && is_table(&t.spec.name) && rank(&t.id) < own)
                    .min_by(|a, b| {
                        center_distance(&a.bbox, &d.bbox)
                            .total_cmp(&center_distance(&b.bbox, &d.bbox))
                            .then_with(|| a.id.cmp(&b.id))
                    })
            })
            .flatten();
        let target = match table {
            Some(t) => RotationTarget::Object(t.id.clone()),
            None => RotationTarget::AwayFromWall(nearest_wall(room, &d.bbox).0),
        };
        out.push(Constraint::soft(&d.id, ConstraintKind::FaceTo(target)));
    }
    out
}

/// Parses `subject -> target` lines naming objects by id or name. Each
/// subject faces the nearest matching target that precedes it in `order`.
pub fn parse_rotation_pairs(text: &str, dets: &[Detection], order: &[String]) -> Vec<Constraint> {
    let rank = |id: &str| order.iter().position(|o| o == id);
    let matches = |token: &str, d: &Detection| {
        let t = token.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '-').trim();
        !t.is_empty() && (d.id.eq_ignore_ascii_case(t) || d.spec.name.eq_ignore_ascii_case(t))
    };
    let mut out: Vec<Constraint> = Vec::new();
    for line in text.lines() {
        let Some((lhs, rhs)) = line.split_once("->").or_else(|| line.split_once('→')) else { continue };
        for subject in dets.iter().filter(|d| matches(lhs, d)) {
            let own = rank(&subject.id);
            let target = dets
                .iter()
                .filter(|t| t.id != subject.id && matches(rhs, t) && rank(&t.id) < own)
                .min_by(|a, b| {
                    center_distance(&a.bbox, &subject.bbox)
                        .total_cmp(&center_distance(&b.bbox, &subject.bbox))
                        .then_with(|| a.id.cmp(&b.id))
                });
            if let Some(t) = target {
                if !out.iter().any(|c| c.subject == subject.id) {
                    out.push(Constraint::soft(&subject.id, ConstraintKind::FaceTo(RotationTarget::Object(t.id.clone()))));
                }
            }
        }
    }
    out
}

/// Rotation constraints from an annotator reply, or the geometric fallback
/// when the annotator failed and `fallback` is enabled.
pub fn rotation_constraints<E: fmt::Display>(
    dets: &[Detection],
    order: &[String],
    room: &Room,
    reply: Result<String, E>,
    fallback: bool,
) -> Result<Vec<Constraint>, ConstraintError> {
    match reply {
        Ok(text) => Ok(parse_rotation_pairs(&text, dets, order)),
        Err(_) if fallback => Ok(fallback_rotation(dets, order, room)),
        Err(e) => Err(ConstraintError::Annotator(e.to_string())),
    }
}
