//! Density-based clustering (DBSCAN) over a uniform hash grid.
//!
//! Labels are canonical: clusters are numbered in order of their
//! lowest-indexed core point, and a border point joins the lowest-numbered
//! cluster among its core neighbors. This is exactly what the sequential
//! textbook expansion produces when points are visited in index order.

use std::collections::HashMap;

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterParams {
    pub fn new(eps: f64, min_pts: usize) -> Self {
        assert!(eps > 0.0 && min_pts >= 1, "eps must be positive and min_pts at least 1");
        Self { eps, min_pts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub cluster_count: usize,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_count];
        for id in self.labels.iter().flatten() {
            sizes[*id] += 1;
        }
        sizes
    }

    /// Largest cluster, ties resolved toward the lower id.
    pub fn largest(&self) -> Option<(usize, usize)> {
        self.sizes()
            .into_iter()
            .enumerate()
            .fold(None, |best, (id, size)| match best {
                Some((_, s)) if s >= size => best,
                _ => Some((id, size)),
            })
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(cluster))
            .map(|(k, _)| k)
            .collect()
    }
}

#[inline]
pub(crate) fn within(a: &Vec3, b: &Vec3, eps2: f64) -> bool {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz <= eps2
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn dbscan(points: &[Vec3], params: ClusterParams) -> Clustering {
    let n = points.len();
    let eps2 = params.eps * params.eps;
    let cell_of = |p: &Vec3| {
        (
            (p.x / params.eps).floor() as i64,
            (p.y / params.eps).floor() as i64,
            (p.z / params.eps).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (k, p) in points.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(k);
    }

    let neighbors = |k: usize, out: &mut Vec<usize>| {
        out.clear();
        let (cx, cy, cz) = cell_of(&points[k]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(bucket.iter().copied().filter(|&q| within(&points[k], &points[q], eps2)));
                    }
                }
            }
        }
    };

    let mut scratch = Vec::new();
    let mut core = vec![false; n];
    for (k, is_core) in core.iter_mut().enumerate() {
        neighbors(k, &mut scratch);
        *is_core = scratch.len() >= params.min_pts;
    }

    let mut sets = DisjointSet::new(n);
    for k in (0..n).filter(|&k| core[k]) {
        neighbors(k, &mut scratch);
        for &q in &scratch {
            if core[q] {
                sets.union(k, q);
            }
        }
    }

    // Number clusters by their first core point.
    let mut root_id: HashMap<usize, usize> = HashMap::new();
    let mut labels = vec![None; n];
    for k in (0..n).filter(|&k| core[k]) {
        let root = sets.find(k);
        let next = root_id.len();
        labels[k] = Some(*root_id.entry(root).or_insert(next));
    }
    for k in (0..n).filter(|&k| !core[k]) {
        neighbors(k, &mut scratch);
        labels[k] = scratch.iter().filter(|&&q| core[q]).filter_map(|&q| labels[q]).min();
    }
    Clustering { labels, cluster_count: root_id.len() }
}
