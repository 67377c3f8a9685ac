//! Discrete placement search: candidate enumeration, hard filtering, the
//! placement score and a greedy depth-first search over objects.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{Constraint, ConstraintKind, RotationTarget, Thresholds};
use crate::geometry::{aabb_intersects, Aabb3, Vec3};
use crate::scene::{front_direction, normalize_yaw, placed_bbox, ObjectInstance, Rect, Room, Wall};
use crate::view_mask::ReceptacleKind;

#[derive(Debug, Error, PartialEq)]
pub enum PlaceError {
    #[error("scaled object exceeds its support by more than 20% ({axis} axis: {size:.3} > {limit:.3})")]
    Oversize { axis: char, size: f64, limit: f64 },
    #[error("placed object leaves the room")]
    OutsideRoom,
    #[error("degenerate target or asset size")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringWeights {
    pub w_loc: f64,
    pub w_rotation: f64,
    /// Weight of the distance-to-reference term.
    pub w_cur: f64,
    /// Weight of already-placed objects without an explicit entry.
    pub w_default: f64,
    pub object_weights: BTreeMap<String, f64>,
    pub c: f64,
    pub delta_floor: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            w_loc: 1.0,
            w_rotation: 5.0,
            w_cur: 1.0,
            w_default: 1.0,
            object_weights: BTreeMap::new(),
            c: 1.0,
            delta_floor: 0.01,
        }
    }
}

impl ScoringWeights {
    pub fn weight_of(&self, id: &str) -> f64 {
        self.object_weights.get(id).copied().unwrap_or(self.w_default)
    }
}

/// Distances that enter the placement score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerms {
    /// Distance from the candidate to its location reference.
    pub delta_cur: f64,
    /// `(Δ_i, w_i)` for every already-placed object.
    pub placed: Vec<(f64, f64)>,
    /// Satisfied rotation constraints.
    pub rotations_satisfied: usize,
}

impl ScoreTerms {
    pub fn weighted_spread(&self) -> f64 {
        self.placed.iter().map(|(d, w)| d * w).sum()
    }
}

pub fn score_placement(terms: &ScoreTerms, weights: &ScoringWeights) -> f64 {
    weights.w_loc * (terms.weighted_spread() + weights.w_cur / terms.delta_cur.max(weights.delta_floor) + weights.c)
        + weights.w_rotation * terms.rotations_satisfied as f64
}

/// A concrete pose with its world box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Base height.
    pub z: f64,
    pub yaw: f64,
    pub bbox: Aabb3,
}

impl Pose {
    pub fn new(size: [f64; 3], x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let yaw = normalize_yaw(yaw);
        Self { x, y, z, yaw, bbox: placed_bbox(size, Vec3::new(x, y, z), yaw, [1.0; 3]) }
    }

    fn key_cmp(&self, other: &Pose) -> Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y)).then(self.yaw.total_cmp(&other.yaw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pose: Pose,
    pub terms: ScoreTerms,
    pub score: f64,
}

/// An object already in the room.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixed {
    pub id: String,
    pub bbox: Aabb3,
}

impl Fixed {
    pub fn from_instance(inst: &ObjectInstance) -> Self {
        Self { id: inst.id.clone(), bbox: inst.world_bbox }
    }
}

/// Object to place, with its world-space size at yaw 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorItem {
    pub id: String,
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacerParams {
    pub grid_step: f64,
    pub branch: usize,
    /// Node expansion budget after which the search stops widening. The
    /// first greedy descent always completes.
    pub max_expansions: Option<usize>,
    pub margin: f64,
    pub thresholds: Thresholds,
}

impl Default for PlacerParams {
    fn default() -> Self {
        Self { grid_step: 0.1, branch: 3, max_expansions: Some(400), margin: 0.0, thresholds: Thresholds::default() }
    }
}

/// One object's search input: pre-filtered poses plus what is needed to
/// score them.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchItem {
    pub id: String,
    pub size: [f64; 3],
    pub location: (f64, f64),
    pub face_to: Vec<RotationTarget>,
    pub poses: Vec<Pose>,
    /// Hard constraints re-checked on poses generated during the search.
    pub hard: Vec<ConstraintKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchProblem {
    pub room: Room,
    pub fixed: Vec<Fixed>,
    pub items: Vec<SearchItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub id: String,
    pub candidate: Candidate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub expanded: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub placements: Vec<Placement>,
    pub skipped: Vec<String>,
    pub total_score: f64,
    pub stats: SearchStats,
}

impl PlacementSolution {
    pub fn get(&self, id: &str) -> Option<&Candidate> {
        self.placements.iter().find(|p| p.id == id).map(|p| &p.candidate)
    }
}

/// Whether a footprint satisfies a global or orientation constraint.
pub fn hard_satisfied(kind: &ConstraintKind, fp: &Rect, room: &Room, th: &Thresholds) -> bool {
    let d = room.wall_distances(fp);
    match kind {
        ConstraintKind::Edge => d.iter().any(|v| *v < th.edge_eps),
        ConstraintKind::Corner => Wall::ALL.iter().any(|a| {
            d[*a as usize] < th.edge_eps
                && Wall::ALL.iter().any(|b| a.perpendicular(*b) && d[*b as usize] < th.edge_eps)
        }),
        ConstraintKind::Middle => d.iter().all(|v| *v > th.middle_eps),
        ConstraintKind::Horizontal => fp.width() >= fp.depth() - 1e-9,
        ConstraintKind::Vertical => fp.depth() >= fp.width() - 1e-9,
        _ => true,
    }
}

fn inside_room(room: &Room, b: &Aabb3) -> bool {
    room.bounds().contains_box(b, 1e-9)
}

/// Grid values `start + k * step` in `[lo, hi]`.
fn grid_values(start: f64, step: f64, lo: f64, hi: f64) -> Vec<f64> {
    if hi < lo {
        return Vec::new();
    }
    let k0 = ((lo - start) / step - 1e-9).ceil() as i64;
    let k1 = ((hi - start) / step + 1e-9).floor() as i64;
    (k0..=k1).map(|k| start + k as f64 * step).collect()
}

const CANONICAL_YAWS: [f64; 4] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];

fn obstacle_boxes(room: &Room, fixed: &[Fixed]) -> Vec<Aabb3> {
    room.openings.iter().map(|o| room.opening_box(o)).chain(fixed.iter().map(|f| f.bbox)).collect()
}

/// Grid poses of a floor object that pass its hard constraints, stay inside
/// the room and avoid every fixed object and opening.
pub fn enumerate_candidates(
    item: &FloorItem,
    constraints: &[Constraint],
    room: &Room,
    fixed: &[Fixed],
    params: &PlacerParams,
) -> SearchItem {
    let location = location_of(constraints).unwrap_or_else(|| room.center());
    let hard: Vec<ConstraintKind> = constraints.iter().filter(|c| c.is_hard()).map(|c| c.kind.clone()).collect();
    let obstacles = obstacle_boxes(room, fixed);
    let (x0, y0) = room.min_xy();
    let (x1, y1) = room.max_xy();
    let mut xs = grid_values(x0, params.grid_step, x0, x1);
    let mut ys = grid_values(y0, params.grid_step, y0, y1);
    xs.push(location.0);
    ys.push(location.1);
    let mut positions: Vec<(f64, f64)> = xs.iter().flat_map(|x| ys.iter().map(move |y| (*x, *y))).collect();
    positions.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    positions.dedup();
    let mut poses = Vec::new();
    for (x, y) in positions {
        for yaw in CANONICAL_YAWS {
            let pose = Pose::new(item.size, x, y, 0.0, yaw);
            if pose_admissible(&pose, &hard, room, &obstacles, params) {
                poses.push(pose);
            }
        }
    }
    SearchItem {
        id: item.id.clone(),
        size: item.size,
        location,
        face_to: face_targets(constraints),
        poses,
        hard,
    }
}

fn pose_admissible(pose: &Pose, hard: &[ConstraintKind], room: &Room, obstacles: &[Aabb3], params: &PlacerParams) -> bool {
    let fp = Rect::of_box(&pose.bbox);
    inside_room(room, &pose.bbox)
        && hard.iter().all(|k| hard_satisfied(k, &fp, room, &params.thresholds))
        && obstacles.iter().all(|o| !aabb_intersects(&pose.bbox, o, params.margin))
}

pub fn location_of(constraints: &[Constraint]) -> Option<(f64, f64)> {
    constraints.iter().find_map(|c| match c.kind {
        ConstraintKind::Location { x, y } => Some((x, y)),
        _ => None,
    })
}

fn face_targets(constraints: &[Constraint]) -> Vec<RotationTarget> {
    constraints
        .iter()
        .filter_map(|c| match &c.kind {
            ConstraintKind::FaceTo(t) => Some(t.clone()),
            _ => None,
        })
        .collect()
}

fn center_xy(b: &Aabb3) -> (f64, f64) {
    let c = b.center();
    (c.x, c.y)
}

/// Whether an object at `(x, y)` with `yaw` faces a direction within 45°.
pub fn faces(yaw: f64, dir: (f64, f64)) -> bool {
    let norm = dir.0.hypot(dir.1);
    if norm == 0.0 {
        return false;
    }
    let (fx, fy) = front_direction(yaw);
    (fx * dir.0 + fy * dir.1) / norm >= FRAC_PI_4.cos() - 1e-12
}

fn facing_direction(target: &RotationTarget, from: (f64, f64), placed: &[(&str, Aabb3, f64)]) -> Option<(f64, f64)> {
    match target {
        RotationTarget::Object(id) => placed.iter().find(|(p, _, _)| p == id).map(|(_, b, _)| {
            let (tx, ty) = center_xy(b);
            (tx - from.0, ty - from.1)
        }),
        RotationTarget::AwayFromWall(w) => Some(w.inward_normal()),
    }
}

fn score_terms(item: &SearchItem, pose: &Pose, placed: &[(&str, Aabb3, f64)]) -> ScoreTerms {
    let (cx, cy) = center_xy(&pose.bbox);
    let delta_cur = (pose.x - item.location.0).hypot(pose.y - item.location.1);
    let placed_terms = placed
        .iter()
        .map(|(_, b, w)| {
            let (px, py) = center_xy(b);
            ((cx - px).hypot(cy - py), *w)
        })
        .collect();
    let rotations_satisfied = item
        .face_to
        .iter()
        .filter(|t| facing_direction(t, (cx, cy), placed).is_some_and(|d| faces(pose.yaw, d)))
        .count();
    ScoreTerms { delta_cur, placed: placed_terms, rotations_satisfied }
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.pose.key_cmp(&b.pose))
}

struct Search<'a> {
    problem: &'a SearchProblem,
    weights: &'a ScoringWeights,
    params: &'a PlacerParams,
    stats: SearchStats,
    best: Option<(usize, f64, Vec<Option<Candidate>>)>,
    fixed_boxes: Vec<Aabb3>,
}

impl Search<'_> {
    fn exhausted(&self) -> bool {
        self.best.is_some() && self.params.max_expansions.is_some_and(|m| self.stats.expanded >= m)
    }

    /// Feasible candidates for the item at `depth` given the current path.
    fn candidates(&self, depth: usize, path: &[Option<Candidate>]) -> Vec<Candidate> {
        let item = &self.problem.items[depth];
        let mut placed: Vec<(&str, Aabb3, f64)> = self
            .problem
            .fixed
            .iter()
            .map(|f| (f.id.as_str(), f.bbox, self.weights.weight_of(&f.id)))
            .collect();
        for (k, c) in path.iter().enumerate() {
            if let Some(c) = c {
                let id = self.problem.items[k].id.as_str();
                placed.push((id, c.pose.bbox, self.weights.weight_of(id)));
            }
        }
        let path_boxes: Vec<Aabb3> = path.iter().flatten().map(|c| c.pose.bbox).collect();
        let free = |pose: &Pose| path_boxes.iter().all(|b| !aabb_intersects(&pose.bbox, b, self.params.margin));

        let mut poses: Vec<Pose> = item.poses.iter().filter(|p| free(p)).copied().collect();
        // Yaws pointing straight at an already-placed target.
        let mut positions: Vec<(f64, f64, f64)> = item.poses.iter().map(|p| (p.x, p.y, p.z)).collect();
        positions.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        for target in &item.face_to {
            let RotationTarget::Object(tid) = target else { continue };
            let Some((_, tb, _)) = placed.iter().find(|(id, _, _)| id == tid) else { continue };
            let (tx, ty) = center_xy(tb);
            for &(x, y, z) in &positions {
                let (dx, dy) = (tx - x, ty - y);
                if dx == 0.0 && dy == 0.0 {
                    continue;
                }
                let yaw = normalize_yaw((-dx).atan2(dy));
                if CANONICAL_YAWS.iter().any(|c| (c - yaw).abs() < 1e-9) {
                    continue;
                }
                let pose = Pose::new(item.size, x, y, z, yaw);
                if pose_admissible(&pose, &item.hard, &self.problem.room, &self.fixed_boxes, self.params) && free(&pose) {
                    poses.push(pose);
                }
            }
        }
        let mut out: Vec<Candidate> = poses
            .into_iter()
            .map(|pose| {
                let terms = score_terms(item, &pose, &placed);
                let score = score_placement(&terms, self.weights);
                Candidate { pose, terms, score }
            })
            .collect();
        out.sort_by(candidate_order);
        out
    }

    fn run(&mut self, depth: usize, path: &mut Vec<Option<Candidate>>, count: usize, total: f64) {
        let n = self.problem.items.len();
        if depth == n {
            let better = match &self.best {
                None => true,
                Some((bc, bs, _)) => count > *bc || (count == *bc && total > *bs),
            };
            if better {
                self.best = Some((count, total, path.clone()));
            }
            return;
        }
        if self.exhausted() {
            return;
        }
        self.stats.expanded += 1;
        let cands = self.candidates(depth, path);
        if cands.is_empty() {
            log::trace!("depth={depth} id={} unplaceable", self.problem.items[depth].id);
            path.push(None);
            self.run(depth + 1, path, count, total);
            path.pop();
            return;
        }
        let take = self.params.branch.max(1).min(cands.len());
        self.stats.pruned += cands.len() - take;
        for c in cands.into_iter().take(take) {
            if self.exhausted() {
                break;
            }
            log::trace!(
                "depth={depth} id={} x={:.3} y={:.3} yaw={:.4} score={:.6}",
                self.problem.items[depth].id,
                c.pose.x,
                c.pose.y,
                c.pose.yaw,
                c.score
            );
            let s = c.score;
            path.push(Some(c));
            self.run(depth + 1, path, count + 1, total + s);
            path.pop();
        }
    }
}

/// Depth-first search keeping the `branch` best candidates per object. The
/// result maximizes the number of placed objects, then the summed score.
pub fn dfs_search(problem: &SearchProblem, weights: &ScoringWeights, params: &PlacerParams) -> PlacementSolution {
    let mut search = Search {
        problem,
        weights,
        params,
        stats: SearchStats::default(),
        best: None,
        fixed_boxes: obstacle_boxes(&problem.room, &problem.fixed),
    };
    let mut path = Vec::with_capacity(problem.items.len());
    search.run(0, &mut path, 0, 0.0);
    let (_, total_score, best) = search.best.unwrap_or((0, 0.0, Vec::new()));
    let mut solution = PlacementSolution { total_score, stats: search.stats, ..Default::default() };
    for (item, choice) in problem.items.iter().zip(best) {
        match choice {
            Some(candidate) => solution.placements.push(Placement { id: item.id.clone(), candidate }),
            None => solution.skipped.push(item.id.clone()),
        }
    }
    solution
}

/// Places floor objects in the given order.
pub fn dfs_place(
    items: &[FloorItem],
    constraints: &BTreeMap<String, Vec<Constraint>>,
    room: &Room,
    fixed: &[Fixed],
    weights: &ScoringWeights,
    params: &PlacerParams,
) -> PlacementSolution {
    let problem = SearchProblem {
        room: room.clone(),
        fixed: fixed.to_vec(),
        items: items
            .iter()
            .map(|item| {
                let cs = constraints.get(&item.id).map_or(&[][..], Vec::as_slice);
                enumerate_candidates(item, cs, room, fixed, params)
            })
            .collect(),
    };
    dfs_search(&problem, weights, params)
}

/// Wall-mounted object with its world size at yaw 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WallItem {
    pub id: String,
    pub size: [f64; 3],
}

/// Wall whose plane is closest to a point.
pub fn wall_of_point(room: &Room, x: f64, y: f64) -> Wall {
    Wall::ALL
        .into_iter()
        .map(|w| {
            let along = if w.along_axis() == 0 { y } else { x };
            (w, (along - room.wall_plane(w)).abs())
        })
        .fold((Wall::Front, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// Wall poses along the wall nearest the Location reference, at the fixed
/// height, facing into the room.
pub fn enumerate_wall_candidates(
    item: &WallItem,
    constraints: &[Constraint],
    room: &Room,
    fixed: &[Fixed],
    params: &PlacerParams,
) -> SearchItem {
    let location = location_of(constraints).unwrap_or_else(|| room.center());
    let wall = wall_of_point(room, location.0, location.1);
    let yaw = wall.facing_yaw();
    let height = constraints
        .iter()
        .find_map(|c| match c.kind {
            ConstraintKind::Height(h) => Some(h),
            _ => None,
        })
        .unwrap_or(item.size[2] / 2.0);
    let z = height - item.size[2] / 2.0;
    let axis = wall.along_axis();
    let span = constraints.iter().find_map(|c| match &c.kind {
        ConstraintKind::Above(t) => fixed.iter().find(|f| &f.id == t).map(|f| {
            let r = Rect::of_box(&f.bbox);
            (r.min[axis], r.max[axis])
        }),
        _ => None,
    });
    let (lo, hi) = (room.origin[axis], room.origin[axis] + room.extent[axis]);
    let mut along = grid_values(lo, params.grid_step, lo, hi);
    along.push(if axis == 0 { location.0 } else { location.1 });
    along.sort_by(f64::total_cmp);
    along.dedup();
    let (nx, ny) = wall.inward_normal();
    let half_depth = item.size[1] / 2.0;
    let plane = room.wall_plane(wall);
    let obstacles = obstacle_boxes(room, fixed);
    let poses = along
        .into_iter()
        .filter(|a| span.is_none_or(|(s0, s1)| *a >= s0 - 1e-9 && *a <= s1 + 1e-9))
        .filter_map(|a| {
            let (x, y) = if axis == 0 {
                (a, plane + ny * half_depth)
            } else {
                (plane + nx * half_depth, a)
            };
            let pose = Pose::new(item.size, x, y, z, yaw);
            (z >= -1e-9 && pose_admissible(&pose, &[], room, &obstacles, params)).then_some(pose)
        })
        .collect();
    SearchItem { id: item.id.clone(), size: item.size, location, face_to: Vec::new(), poses, hard: Vec::new() }
}

pub fn place_wall_objects(
    items: &[WallItem],
    constraints: &BTreeMap<String, Vec<Constraint>>,
    room: &Room,
    fixed: &[Fixed],
    weights: &ScoringWeights,
    params: &PlacerParams,
) -> PlacementSolution {
    let problem = SearchProblem {
        room: room.clone(),
        fixed: fixed.to_vec(),
        items: items
            .iter()
            .map(|item| {
                let cs = constraints.get(&item.id).map_or(&[][..], Vec::as_slice);
                enumerate_wall_candidates(item, cs, room, fixed, params)
            })
            .collect(),
    };
    dfs_search(&problem, weights, params)
}

/// Per-axis scale that maps an asset onto a detected box, pairing the
/// longer horizontal axes. Returns `(world size at yaw 0, scale)`.
pub fn fit_furniture(target: &Aabb3, asset_size: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let s = target.size();
    let (tx, ty) = (s.x, s.y);
    let local = if (asset_size[0] >= asset_size[1]) == (tx >= ty) { [tx, ty, s.z] } else { [ty, tx, s.z] };
    let scale = [local[0] / asset_size[0], local[1] / asset_size[1], local[2] / asset_size[2]];
    (local, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallPlacement {
    /// Base center.
    #[serde(with = "crate::geometry::vec3_serde")]
    pub position: Vec3,
    pub yaw: f64,
    pub scale: f64,
    pub bbox: Aabb3,
}

/// Vertical spacing assumed between shelf boards.
pub const SHELF_SPACING: f64 = 0.4;

/// Board heights of a shelf or cabinet interior, bottom first.
pub fn shelf_levels(support: &Aabb3) -> Vec<f64> {
    let h = support.size().z;
    let levels = ((h / SHELF_SPACING).round() as usize).max(1);
    (0..levels).map(|k| support.min.z + h * k as f64 / levels as f64).collect()
}

/// Surface height the object rests on.
pub fn support_surface(support: &Aabb3, kind: ReceptacleKind, target: &Aabb3) -> f64 {
    match kind {
        ReceptacleKind::OnTop => support.max.z,
        ReceptacleKind::Inside => shelf_levels(support)
            .into_iter()
            .rev()
            .find(|z| *z <= target.min.z + 1e-9)
            .unwrap_or(support.min.z),
    }
}

/// Uniform scale from the two target dimensions most perpendicular to the
/// viewing direction. `asset_dims` are the asset's world dimensions at the
/// chosen yaw.
pub fn perpendicular_scale(target: &Aabb3, asset_dims: [f64; 3], view_dir: &Vec3) -> f64 {
    let t = target.size();
    let along = (0..3).max_by(|a, b| view_dir[*a].abs().total_cmp(&view_dir[*b].abs()).then(b.cmp(a))).unwrap_or(1);
    let mut product = 1.0;
    for axis in (0..3).filter(|a| *a != along) {
        product *= t[axis] / asset_dims[axis];
    }
    product.sqrt()
}

/// Scales and poses a small object so it matches a detected box and rests
/// on the support surface beneath it.
pub fn place_small_object(
    target: &Aabb3,
    asset_size: [f64; 3],
    view_dir: &Vec3,
    support: &Aabb3,
    kind: ReceptacleKind,
    room: &Room,
) -> Result<SmallPlacement, PlaceError> {
    let t = target.size();
    if asset_size.iter().any(|s| !(*s > 0.0)) || !(t.x > 0.0 && t.y > 0.0 && t.z > 0.0) {
        return Err(PlaceError::Degenerate);
    }
    let asset_long_x = asset_size[0] >= asset_size[1];
    let target_long_x = t.x >= t.y;
    let yaw = if asset_long_x == target_long_x { 0.0 } else { FRAC_PI_2 };
    let dims = if yaw == 0.0 { asset_size } else { [asset_size[1], asset_size[0], asset_size[2]] };
    let scale = perpendicular_scale(target, dims, view_dir);
    let c = target.center();
    let position = Vec3::new(c.x, c.y, support_surface(support, kind, target));
    let bbox = placed_bbox(asset_size, position, yaw, [scale; 3]);
    let s = support.size();
    let b = bbox.size();
    for (axis, name) in [(0usize, 'x'), (1, 'y')] {
        let limit = 1.2 * s[axis];
        if b[axis] > limit {
            return Err(PlaceError::Oversize { axis: name, size: b[axis], limit });
        }
    }
    if !inside_room(room, &bbox) {
        return Err(PlaceError::OutsideRoom);
    }
    Ok(SmallPlacement { position, yaw, scale, bbox })
}
