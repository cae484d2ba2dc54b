//! Segment graph with overlap and adjacency edges.
//!
//! Two segments from different views get an overlap edge when the IoU of
//! their point-id sets exceeds `iou`. Segments that do not overlap that much
//! get an adjacency edge when some pair of their points is closer than
//! `adjacency`. The two relations are disjoint by construction.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::masks::SegmentSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphThresholds {
    /// Overlap edges need IoU strictly above this.
    pub iou: f64,
    /// Adjacency edges need a point pair strictly closer than this.
    pub adjacency: f64,
}

impl Default for GraphThresholds {
    fn default() -> Self {
        Self {
            iou: 0.10,
            adjacency: 0.01,
        }
    }
}

/// Undirected segment graph; edges are `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentGraph {
    pub node_count: usize,
    pub overlap_edges: Vec<(u32, u32)>,
    pub adjacency_edges: Vec<(u32, u32)>,
}

impl SegmentGraph {
    /// Checks edge ordering, range, disjointness of the two relations and
    /// that overlap edges join different views.
    pub fn validate(&self, view_of: &[usize]) -> Result<()> {
        for (name, edges) in [("overlap", &self.overlap_edges), ("adjacency", &self.adjacency_edges)] {
            for &(a, b) in edges.iter() {
                if a >= b {
                    return Err(Error::Graph(format!("{name} edge ({a}, {b}) is not ordered or is a self-edge")));
                }
                if b as usize >= self.node_count {
                    return Err(Error::Graph(format!("{name} edge ({a}, {b}) out of range")));
                }
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Graph(format!("{name} edges not strictly sorted")));
            }
        }
        let overlap: BTreeSet<_> = self.overlap_edges.iter().collect();
        if let Some(e) = self.adjacency_edges.iter().find(|e| overlap.contains(e)) {
            return Err(Error::Graph(format!("edge {e:?} is both overlap and adjacency")));
        }
        if view_of.len() == self.node_count {
            if let Some(e) = self
                .overlap_edges
                .iter()
                .find(|(a, b)| view_of[*a as usize] == view_of[*b as usize])
            {
                return Err(Error::Graph(format!("overlap edge {e:?} joins segments of one view")));
            }
        }
        Ok(())
    }

    /// Copy without the selected edge types.
    pub fn filtered(&self, overlap: bool, adjacency: bool) -> Self {
        Self {
            node_count: self.node_count,
            overlap_edges: if overlap { self.overlap_edges.clone() } else { Vec::new() },
            adjacency_edges: if adjacency { self.adjacency_edges.clone() } else { Vec::new() },
        }
    }
}

/// `|a ∩ b| / |a ∪ b|` for sorted id lists.
pub fn point_set_iou(a: &[u32], b: &[u32]) -> f64 {
    let inter = sorted_intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vec3, size: f64) -> Cell {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64)
}

/// Uniform hash grid over a subset of points.
struct HashGrid {
    size: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl HashGrid {
    fn new(ids: impl IntoIterator<Item = u32>, positions: &[Vec3], size: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for id in ids {
            cells.entry(cell_of(&positions[id as usize], size)).or_default().push(id);
        }
        Self { size, cells }
    }

    /// Calls `f` for every stored point in cells at Chebyshev ring `ring`
    /// around `center`.
    fn ring(&self, center: Cell, ring: i64, mut f: impl FnMut(u32)) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&(center.0 + dx, center.1 + dy, center.2 + dz)) {
                        ids.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }
}

/// Rings searched on the grid before falling back to an exhaustive scan.
const GRID_RINGS: i64 = 2;

/// Exact minimum Euclidean distance between two point sets.
///
/// Uses a hash grid of cell size `0.01`: a hit found within the first rings
/// around a query point is provably nearest, otherwise the remaining
/// candidates are scanned. Returns early on a shared point.
pub fn min_pairwise_distance(a: &[u32], b: &[u32], positions: &[Vec3]) -> f64 {
    min_distance_with_cell(a, b, positions, GraphThresholds::default().adjacency)
}

fn min_distance_with_cell(a: &[u32], b: &[u32], positions: &[Vec3], size: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let grid = HashGrid::new(b.iter().copied(), positions, size);
    // any point within GRID_RINGS * size lies inside the searched rings
    let radius = GRID_RINGS as f64 * size;
    let mut best = f64::INFINITY;
    let mut unresolved = Vec::new();
    for &i in a {
        let p = &positions[i as usize];
        let center = cell_of(p, size);
        let mut local = f64::INFINITY;
        for r in 0..=GRID_RINGS {
            grid.ring(center, r, |j| {
                local = local.min((positions[j as usize] - p).norm());
            });
        }
        if local <= radius {
            best = best.min(local);
            if best == 0.0 {
                return 0.0;
            }
        } else {
            unresolved.push(i);
        }
    }
    for &i in &unresolved {
        let p = &positions[i as usize];
        for &j in b {
            best = best.min((positions[j as usize] - p).norm());
        }
    }
    best
}

/// Builds the segment graph.
///
/// Overlap candidates come from an inverse point → segment index; adjacency
/// candidates from a hash grid of cell size `thresholds.adjacency`, so every
/// pair of points closer than the threshold lies in neighboring cells.
pub fn build_segment_graph(segs: &SegmentSet, positions: &[Vec3], thresholds: GraphThresholds) -> Result<SegmentGraph> {
    let n = segs.segments.len();
    let memberships = &segs.point_memberships;

    // shared-point counts for every pair of segments that intersect
    let mut shared: HashMap<(u32, u32), u32> = HashMap::new();
    for m in memberships {
        for (x, &a) in m.iter().enumerate() {
            for &b in &m[x + 1..] {
                *shared.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
    }

    // segment pairs with at least one point pair closer than the threshold
    let mut close: BTreeSet<(u32, u32)> = BTreeSet::new();
    let members: Vec<u32> = (0..memberships.len() as u32)
        .filter(|&p| !memberships[p as usize].is_empty())
        .collect();
    let grid = HashGrid::new(members.iter().copied(), positions, thresholds.adjacency);
    for &p in &members {
        let pos = &positions[p as usize];
        let center = cell_of(pos, grid.size);
        grid.ring(center, 0, |q| add_close(&mut close, memberships, positions, pos, p, q, thresholds.adjacency));
        grid.ring(center, 1, |q| add_close(&mut close, memberships, positions, pos, p, q, thresholds.adjacency));
    }

    let size = |s: u32| segs.segments[s as usize].len();
    let view = |s: u32| segs.segments[s as usize].view_id;
    let mut overlap = Vec::new();
    let mut is_overlap = BTreeSet::new();
    for (&(a, b), &inter) in &shared {
        let inter = inter as usize;
        let iou = inter as f64 / (size(a) + size(b) - inter) as f64;
        if view(a) != view(b) && iou > thresholds.iou {
            overlap.push((a, b));
            is_overlap.insert((a, b));
        }
    }
    overlap.sort_unstable();

    let adjacency: Vec<(u32, u32)> = close
        .into_iter()
        .filter(|pair| {
            let inter = shared.get(pair).copied().unwrap_or(0) as usize;
            let iou = inter as f64 / (size(pair.0) + size(pair.1) - inter) as f64;
            iou <= thresholds.iou
        })
        .collect();

    let graph = SegmentGraph {
        node_count: n,
        overlap_edges: overlap,
        adjacency_edges: adjacency,
    };
    let views: Vec<usize> = segs.segments.iter().map(|s| s.view_id).collect();
    graph.validate(&views)?;
    Ok(graph)
}

fn add_close(
    close: &mut BTreeSet<(u32, u32)>,
    memberships: &[Vec<u32>],
    positions: &[Vec3],
    pos: &Vec3,
    p: u32,
    q: u32,
    threshold: f64,
) {
    if q < p || (positions[q as usize] - pos).norm() >= threshold {
        return;
    }
    for &a in &memberships[p as usize] {
        for &b in &memberships[q as usize] {
            if a != b {
                close.insert((a.min(b), a.max(b)));
            }
        }
    }
}
