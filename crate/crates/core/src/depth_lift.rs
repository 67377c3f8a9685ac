//! Alignment of relative depth estimates to rendered metric depth and
//! lifting of segmented instances to boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{dbscan, ClusterParams};
use crate::geometry::{aabb_of, Aabb3, CameraView, DepthMap, GeometryError, PointCloud, Vec3};
use crate::render::{object_label, InstanceIdMap};
use crate::view_mask::InpaintMask;

#[derive(Debug, Error, PartialEq)]
pub enum LiftError {
    #[error("need at least 2 reference pixels, found {0}")]
    InsufficientReference(usize),
    #[error("estimated depth is constant ({0}) over the reference pixels")]
    DegenerateScale(f64),
    #[error("depth maps are {0:?} and {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
    #[error("instance mask is empty")]
    EmptyInstance,
    #[error("pixel {0} has no valid depth")]
    InvalidDepth(usize),
    #[error("no cluster reaches {min_pts} points (cloud of {points})")]
    NoCluster { points: usize, min_pts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Every pixel outside the mask.
    RoomContext,
    /// Unmasked pixels of the furniture being decorated.
    FurnitureContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub mode: ReferenceMode,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

pub fn select_reference_pixels(
    mode: ReferenceMode,
    ids: &InstanceIdMap,
    mask: &InpaintMask,
    furniture: Option<usize>,
) -> Result<ReferenceSet, LiftError> {
    let wanted = match mode {
        ReferenceMode::RoomContext => None,
        ReferenceMode::FurnitureContext => match furniture {
            Some(idx) => Some(object_label(idx)),
            None => return Err(LiftError::InsufficientReference(0)),
        },
    };
    let pixels: Vec<usize> = ids
        .labels()
        .iter()
        .enumerate()
        .filter(|(k, label)| !mask.is_masked(*k) && wanted.is_none_or(|w| **label == w))
        .map(|(k, _)| k)
        .collect();
    if pixels.len() < 2 {
        return Err(LiftError::InsufficientReference(pixels.len()));
    }
    Ok(ReferenceSet { pixels, mode })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleStats {
    pub max_r: f64,
    pub min_r: f64,
    pub max_e: f64,
    pub min_e: f64,
    pub mean_r: f64,
    pub mean_e: f64,
    pub scale: f64,
    /// `mean_r - mean_e * scale`.
    pub shift: f64,
    /// Reference pixels valid in both maps.
    pub n: usize,
}

/// Compensated (Neumaier) mean.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
        n += 1;
    }
    (sum + comp) / n as f64
}

struct RefSamples {
    r: Vec<f64>,
    e: Vec<f64>,
}

fn gather(d_e: &DepthMap, d_r: &DepthMap, refs: &ReferenceSet) -> Result<RefSamples, LiftError> {
    if (d_e.width(), d_e.height()) != (d_r.width(), d_r.height()) {
        return Err(LiftError::SizeMismatch((d_e.width(), d_e.height()), (d_r.width(), d_r.height())));
    }
    let (mut r, mut e) = (Vec::new(), Vec::new());
    for &k in &refs.pixels {
        if let (Some(vr), Some(ve)) = (d_r.get_index(k), d_e.get_index(k)) {
            r.push(vr);
            e.push(ve);
        }
    }
    if r.len() < 2 {
        return Err(LiftError::InsufficientReference(r.len()));
    }
    Ok(RefSamples { r, e })
}

fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

/// Aligns `d_e` to `d_r` with the min/max range ratio and mean anchoring
/// over the reference pixels.
pub fn rescale_depth(
    d_e: &DepthMap,
    d_r: &DepthMap,
    refs: &ReferenceSet,
) -> Result<(DepthMap, RescaleStats), LiftError> {
    let s = gather(d_e, d_r, refs)?;
    let (min_r, max_r) = extremes(&s.r);
    let (min_e, max_e) = extremes(&s.e);
    if max_e == min_e {
        return Err(LiftError::DegenerateScale(max_e));
    }
    let mean_r = mean(s.r.iter().copied());
    let mean_e = mean(s.e.iter().copied());
    let scale = (max_r - min_r) / (max_e - min_e);
    let stats = RescaleStats {
        max_r,
        min_r,
        max_e,
        min_e,
        mean_r,
        mean_e,
        scale,
        shift: mean_r - mean_e * scale,
        n: s.r.len(),
    };
    Ok((apply(d_e, |v| v * scale - mean_e * scale + mean_r), stats))
}

/// [`rescale_depth`], falling back to mean-shift alignment when the estimate
/// is constant over the references.
pub fn rescale_depth_or_shift(
    d_e: &DepthMap,
    d_r: &DepthMap,
    refs: &ReferenceSet,
) -> Result<(DepthMap, RescaleStats), LiftError> {
    match rescale_depth(d_e, d_r, refs) {
        Err(LiftError::DegenerateScale(_)) => {
            let s = gather(d_e, d_r, refs)?;
            let (min_r, max_r) = extremes(&s.r);
            let (min_e, max_e) = extremes(&s.e);
            let mean_r = mean(s.r.iter().copied());
            let mean_e = mean(s.e.iter().copied());
            let stats = RescaleStats {
                max_r,
                min_r,
                max_e,
                min_e,
                mean_r,
                mean_e,
                scale: 1.0,
                shift: mean_r - mean_e,
                n: s.r.len(),
            };
            Ok((apply(d_e, |v| v - mean_e + mean_r), stats))
        }
        other => other,
    }
}

fn apply(d: &DepthMap, f: impl Fn(f64) -> f64) -> DepthMap {
    let values = d.values().iter().map(|v| v.map_or(f64::NAN, &f)).collect();
    DepthMap::from_values(d.width(), d.height(), values)
}

/// Scale-relative clustering defaults for a cloud.
pub fn default_cluster_params(points: &[Vec3]) -> ClusterParams {
    let diag = aabb_of(points).map(|b| b.size().norm()).unwrap_or(0.0);
    ClusterParams::new((0.05 * diag).max(1e-9), (points.len() / 1000).max(4))
}

/// Back-projects the instance pixels, keeps the largest density cluster and
/// returns it with its bounding box.
pub fn lift_instance(
    depth: &DepthMap,
    cam: &CameraView,
    pixels: &[usize],
    params: Option<ClusterParams>,
) -> Result<(PointCloud, Aabb3), LiftError> {
    if pixels.is_empty() {
        return Err(LiftError::EmptyInstance);
    }
    let w = depth.width() as usize;
    let points = pixels
        .iter()
        .map(|&k| {
            let d = depth.get_index(k).ok_or(LiftError::InvalidDepth(k))?;
            Ok(cam.backproject_pixel((k % w) as u32, (k / w) as u32, d)?)
        })
        .collect::<Result<Vec<Vec3>, LiftError>>()?;
    let params = params.unwrap_or_else(|| default_cluster_params(&points));
    let clustering = dbscan(&points, params);
    let (best, size) = clustering
        .largest()
        .ok_or(LiftError::NoCluster { points: points.len(), min_pts: params.min_pts })?;
    if size < params.min_pts {
        return Err(LiftError::NoCluster { points: points.len(), min_pts: params.min_pts });
    }
    let kept: Vec<Vec3> = clustering.members(best).into_iter().map(|k| points[k]).collect();
    let bbox = aabb_of(&kept)?;
    Ok((PointCloud::new(kept), bbox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view_mask::MaskProvenance;

    fn map(values: &[f64]) -> DepthMap {
        DepthMap::from_values(values.len() as u32, 1, values.to_vec())
    }

    fn refs(pixels: Vec<usize>) -> ReferenceSet {
        ReferenceSet { pixels, mode: ReferenceMode::RoomContext }
    }

    #[test]
    fn hand_example() {
        let d_r = map(&[2.0, 4.0, 7.0]);
        let d_e = map(&[1.0, 2.0, 1.5]);
        let (out, stats) = rescale_depth(&d_e, &d_r, &refs(vec![0, 1])).unwrap();
        assert_eq!(stats.scale, 2.0);
        assert_eq!(stats.shift, 0.0);
        assert_eq!(out.get_index(2), Some(3.0));
        assert_eq!(out.get_index(0), Some(2.0));
    }

    #[test]
    fn identity_when_maps_agree() {
        let d = map(&[1.0, 2.5, 3.0, 0.7]);
        let (out, stats) = rescale_depth(&d, &d, &refs(vec![0, 1, 2, 3])).unwrap();
        assert_eq!(out, d);
        assert_eq!(stats.scale, 1.0);
    }

    #[test]
    fn constant_estimate_is_degenerate() {
        let d_r = map(&[1.0, 2.0, 3.0]);
        let d_e = map(&[5.0, 5.0, 4.0]);
        let r = refs(vec![0, 1]);
        assert_eq!(rescale_depth(&d_e, &d_r, &r), Err(LiftError::DegenerateScale(5.0)));
        let (out, stats) = rescale_depth_or_shift(&d_e, &d_r, &r).unwrap();
        assert_eq!(stats.scale, 1.0);
        assert_eq!(out.values(), &[Some(1.5), Some(1.5), Some(0.5)]);
    }

    #[test]
    fn invalid_reference_pixels_are_skipped() {
        let d_r = DepthMap::from_values(3, 1, vec![2.0, f64::NAN, 4.0]);
        let d_e = map(&[1.0, 1.2, 2.0]);
        let (_, stats) = rescale_depth(&d_e, &d_r, &refs(vec![0, 1, 2])).unwrap();
        assert_eq!(stats.n, 2);
        let d_r = DepthMap::from_values(3, 1, vec![2.0, f64::NAN, f64::NAN]);
        assert_eq!(rescale_depth(&d_e, &d_r, &refs(vec![0, 1, 2])), Err(LiftError::InsufficientReference(1)));
    }

    fn ids_with_block(w: u32, h: u32, label: u32, cols: std::ops::Range<u32>, rows: std::ops::Range<u32>) -> InstanceIdMap {
        let mut ids = InstanceIdMap::new(w, h);
        for j in rows {
            for i in cols.clone() {
                ids.set_index((j * w + i) as usize, label);
            }
        }
        ids
    }

    #[test]
    fn reference_selection_modes() {
        let ids = ids_with_block(20, 20, object_label(0), 0..10, 0..10);
        let empty = InpaintMask::empty(20, 20, MaskProvenance::RoomCentered);
        let all = select_reference_pixels(ReferenceMode::RoomContext, &ids, &empty, None).unwrap();
        assert_eq!(all.len(), 400);

        let mut mask = empty.clone();
        // Mask 40 of the 100 furniture pixels (rows 0..4).
        for j in 0..4 {
            for i in 0..10 {
                mask.weights[j * 20 + i] = 1.0;
            }
        }
        let furn = select_reference_pixels(ReferenceMode::FurnitureContext, &ids, &mask, Some(0)).unwrap();
        let brute: Vec<usize> = (0..400)
            .filter(|k| ids.labels()[*k] == object_label(0) && mask.weights[*k] == 0.0)
            .collect();
        assert_eq!(furn.pixels, brute);
        assert_eq!(furn.len(), 60);

        let full = InpaintMask { weights: vec![1.0; 400], ..empty };
        assert_eq!(
            select_reference_pixels(ReferenceMode::RoomContext, &ids, &full, None),
            Err(LiftError::InsufficientReference(0))
        );
        assert!(select_reference_pixels(ReferenceMode::FurnitureContext, &ids, &mask, None).is_err());
    }

    #[test]
    fn lift_drops_single_outlier() {
        // A fronto-parallel patch at depth 2 plus one pixel far behind it.
        let cam = CameraView::look_at(Vec3::new(0.0, -5.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 60.0, 32, 32).unwrap();
        let mut values = vec![2.0; 32 * 32];
        values[31 * 32 + 31] = 40.0;
        let depth = DepthMap::from_values(32, 32, values);
        let mut pixels: Vec<usize> = (10..20).flat_map(|j| (10..15).map(move |i| j * 32 + i)).collect();
        pixels.push(31 * 32 + 31);
        let (cloud, bbox) = lift_instance(&depth, &cam, &pixels, Some(ClusterParams::new(0.1, 4))).unwrap();
        assert_eq!(cloud.len(), 50);
        let expected: Vec<Vec3> = pixels[..50]
            .iter()
            .map(|k| cam.backproject_pixel((k % 32) as u32, (k / 32) as u32, 2.0).unwrap())
            .collect();
        assert_eq!(bbox, aabb_of(&expected).unwrap());
    }

    #[test]
    fn lift_too_few_points() {
        let cam = CameraView::look_at(Vec3::new(0.0, -5.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 60.0, 8, 8).unwrap();
        let depth = DepthMap::from_values(8, 8, vec![2.0; 64]);
        assert!(matches!(
            lift_instance(&depth, &cam, &[0, 1, 2], Some(ClusterParams::new(1.0, 5))),
            Err(LiftError::NoCluster { points: 3, min_pts: 5 })
        ));
        assert_eq!(lift_instance(&depth, &cam, &[], None), Err(LiftError::EmptyInstance));
    }

    #[test]
    fn compact_cloud_is_kept_whole() {
        let cam = CameraView::look_at(Vec3::new(0.0, -5.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 60.0, 16, 16).unwrap();
        let depth = DepthMap::from_values(16, 16, vec![3.0; 256]);
        let pixels: Vec<usize> = (0..256).collect();
        let (cloud, _) = lift_instance(&depth, &cam, &pixels, Some(ClusterParams::new(100.0, 4))).unwrap();
        assert_eq!(cloud.len(), 256);
    }
}
