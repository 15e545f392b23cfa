//! Minimal-cost-path baseline.
//!
//! A binary vessel mask is turned into a cost map that is cheapest along
//! vessel centers: `m − D` inside the mask and `m + 1` outside, where `D` is
//! the Euclidean distance to the nearest exterior pixel and `m = max D`.
//! One Dijkstra pass from the root pixel gives a minimal path to every
//! leaf. The paths are overlaid into a pixel tree whose junctions,
//! endpoints and root become the nodes of the extracted tree.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use thiserror::Error;

use crate::render::{render_chords, RenderConfig};
use crate::tree::{Edge, Node, NodeId, Tree};
use crate::types::{
    pixel_to_world, world_to_pixel, ChannelTag, CoreError, ImageGrid, KeypointSet, PixelIndex,
    Profile, WorldPoint,
};

/// Floor applied to interior costs so every step has positive weight.
pub const COST_FLOOR: f64 = 1e-6;
pub const DEFAULT_SNAP_RADIUS_PX: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("mask has no foreground pixels")]
    DegenerateMask,
    #[error("no paths to merge")]
    NoPaths,
    #[error("tree has no root")]
    NoRoot,
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Foreground where the noiseless render is positive.
pub fn make_mask(tree: &Tree, config: &RenderConfig) -> ImageGrid {
    let chords = render_chords(tree, config.height, config.width);
    let (h, w) = chords.shape();
    let data = chords
        .into_data()
        .into_iter()
        .map(|v| if v > 0.0 { 1.0 } else { 0.0 })
        .collect();
    ImageGrid::from_vec(h, w, data, ChannelTag::Mask).expect("same shape")
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        if f[v[0]].is_infinite() {
            v[0] = q;
            continue;
        }
        let parabola = |p: usize| f[p] + (p * p) as f64;
        let mut s = (parabola(q) - parabola(v[k])) / (2 * q - 2 * v[k]) as f64;
        while s <= z[k] {
            k -= 1;
            s = (parabola(q) - parabola(v[k])) / (2 * q - 2 * v[k]) as f64;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    if f[v[0]].is_infinite() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel, in pixels. The grid is surrounded by a ring of
/// background, so foreground touching the border is at distance 1 from it.
pub fn distance_transform(mask: &ImageGrid) -> ImageGrid {
    let (h, w) = mask.shape();
    let (ph, pw) = (h + 2, w + 2);
    let mut f = vec![0.0f64; ph * pw];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) > 0.0 {
                f[(r + 1) * pw + c + 1] = f64::INFINITY;
            }
        }
    }
    let n = ph.max(pw);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut col_in = vec![0.0; ph];
    let mut col_out = vec![0.0; ph];
    for c in 0..pw {
        for r in 0..ph {
            col_in[r] = f[r * pw + c];
        }
        edt_1d(&col_in, &mut col_out, &mut v, &mut z);
        for r in 0..ph {
            f[r * pw + c] = col_out[r];
        }
    }
    let mut row_out = vec![0.0; pw];
    for r in 0..ph {
        edt_1d(&f[r * pw..(r + 1) * pw], &mut row_out, &mut v, &mut z);
        f[r * pw..(r + 1) * pw].copy_from_slice(&row_out);
    }
    ImageGrid::from_fn(h, w, ChannelTag::Intensity, |r, c| {
        f[(r + 1) * pw + c + 1].sqrt()
    })
}

/// Traversal cost per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub grid: ImageGrid,
    /// Largest interior distance.
    pub m: f64,
}

pub fn build_cost_map(dt: &ImageGrid) -> Result<CostMap, BaselineError> {
    let m = dt.max();
    if !(m > 0.0) {
        return Err(BaselineError::DegenerateMask);
    }
    let (h, w) = dt.shape();
    let data = dt
        .data()
        .iter()
        .map(|&d| {
            if d > 0.0 {
                (m - d).max(COST_FLOOR)
            } else {
                m + 1.0
            }
        })
        .collect();
    Ok(CostMap {
        grid: ImageGrid::from_vec(h, w, data, ChannelTag::Cost)?,
        m,
    })
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Weight of the step between adjacent pixels `a` and `b`.
pub fn step_weight(cost: &ImageGrid, a: PixelIndex, b: PixelIndex) -> f64 {
    let len = if a.row != b.row && a.col != b.col {
        std::f64::consts::SQRT_2
    } else {
        1.0
    };
    0.5 * (cost.get(a.row, a.col) + cost.get(b.row, b.col)) * len
}

/// Accumulated weight along a pixel path.
pub fn path_cost(cost: &ImageGrid, path: &[PixelIndex]) -> f64 {
    path.windows(2).map(|w| step_weight(cost, w[0], w[1])).sum()
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    index: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths on the 8-connected grid.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    height: usize,
    width: usize,
    source: PixelIndex,
    dist: Vec<f64>,
    prev: Vec<usize>,
}

impl ShortestPaths {
    pub fn distance(&self, p: PixelIndex) -> f64 {
        self.dist[p.row * self.width + p.col]
    }

    /// Pixels from the source to `target`, or `None` when unreachable.
    pub fn path_to(&self, target: PixelIndex) -> Option<Vec<PixelIndex>> {
        let mut i = target.row * self.width + target.col;
        if !self.dist[i].is_finite() {
            return None;
        }
        let src = self.source.row * self.width + self.source.col;
        let mut out = vec![target];
        while i != src {
            i = self.prev[i];
            out.push(PixelIndex::new(i / self.width, i % self.width));
        }
        out.reverse();
        debug_assert!(out.len() <= self.height * self.width);
        Some(out)
    }
}

pub fn dijkstra(cost: &ImageGrid, source: PixelIndex) -> ShortestPaths {
    let (h, w) = cost.shape();
    let mut dist = vec![f64::INFINITY; h * w];
    let mut prev = vec![usize::MAX; h * w];
    let mut done = vec![false; h * w];
    let s = source.row * w + source.col;
    dist[s] = 0.0;
    let mut heap = BinaryHeap::from([HeapItem {
        dist: 0.0,
        index: s,
    }]);
    while let Some(HeapItem { dist: d, index }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        let a = PixelIndex::new(index / w, index % w);
        for (dr, dc) in NEIGHBORS {
            let (r, c) = (a.row as isize + dr, a.col as isize + dc);
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                continue;
            }
            let b = PixelIndex::new(r as usize, c as usize);
            let j = b.row * w + b.col;
            if done[j] {
                continue;
            }
            let nd = d + step_weight(cost, a, b);
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = index;
                heap.push(HeapItem { dist: nd, index: j });
            }
        }
    }
    ShortestPaths {
        height: h,
        width: w,
        source,
        dist,
        prev,
    }
}

/// Minimal paths from the root to each leaf; `None` for unreachable leaves.
pub fn trace_paths(
    cost: &CostMap,
    root: WorldPoint,
    leaves: &[WorldPoint],
) -> Result<Vec<Option<Vec<PixelIndex>>>, BaselineError> {
    let (h, w) = cost.grid.shape();
    let sp = dijkstra(&cost.grid, world_to_pixel(root, h, w)?);
    leaves
        .iter()
        .map(|l| Ok(sp.path_to(world_to_pixel(*l, h, w)?)))
        .collect()
}

/// Paths closer than this always count as joined, pixels.
pub const MIN_JOIN_RADIUS_PX: f64 = 1.5;

/// Overlays root-first pixel paths into a tree and extracts its branching
/// structure.
///
/// Each path is scanned from its leaf end toward the root until a pixel
/// comes within the join radius of the overlay built from earlier paths:
/// `max(MIN_JOIN_RADIUS_PX, dt(pixel))` when a distance transform is given,
/// so parallel tracks inside one vessel coincide. The remaining leaf-side
/// pixels hang from the nearest overlay pixel, which becomes a junction.
/// Nodes are the root, the path ends and every junction. More children
/// than the profile allows are split over nodes at the same position;
/// non-root nodes with one child are removed. Junctions and ends move to
/// the nearest keypoint within `snap_radius_px`. The pixels between nodes
/// are kept as edge polylines.
pub fn extract_connectivity(
    paths: &[Vec<PixelIndex>],
    keypoints: &KeypointSet,
    snap_radius_px: f64,
    join_radius: Option<&ImageGrid>,
    profile: Profile,
    height: usize,
    width: usize,
) -> Result<Tree, BaselineError> {
    let root_px = paths
        .iter()
        .find_map(|p| p.first().copied())
        .ok_or(BaselineError::NoPaths)?;
    let mut in_union = vec![false; height * width];
    in_union[root_px.row * width + root_px.col] = true;
    let mut children: HashMap<PixelIndex, Vec<PixelIndex>> = HashMap::new();
    let mut ends = Vec::new();
    // Nearest overlay pixel within the join radius of `p`.
    let nearest_in_union = |in_union: &[bool], p: PixelIndex| -> Option<PixelIndex> {
        let radius = join_radius
            .map_or(0.0, |dt| dt.get(p.row, p.col))
            .max(MIN_JOIN_RADIUS_PX);
        let reach = radius.floor() as isize;
        let mut best: Option<(f64, PixelIndex)> = None;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (p.row as isize + dr, p.col as isize + dc);
                if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                    continue;
                }
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                let q = PixelIndex::new(r as usize, c as usize);
                if d <= radius
                    && in_union[q.row * width + q.col]
                    && best.is_none_or(|(bd, bq)| (d, q) < (bd, bq))
                {
                    best = Some((d, q));
                }
            }
        }
        best.map(|(_, q)| q)
    };
    for path in paths.iter().filter(|p| !p.is_empty()) {
        let (j, attach) = (0..path.len())
            .rev()
            .find_map(|j| nearest_in_union(&in_union, path[j]).map(|a| (j, a)))
            .unwrap_or((0, root_px));
        let mut prev = attach;
        for &px in &path[j..] {
            if px == prev || in_union[px.row * width + px.col] {
                continue;
            }
            in_union[px.row * width + px.col] = true;
            children.entry(prev).or_default().push(px);
            prev = px;
        }
        ends.push(prev);
    }
    let significant = |p: &PixelIndex| -> bool {
        *p == root_px || ends.contains(p) || children.get(p).is_some_and(|c| c.len() != 1)
    };

    // Compress the pixel tree: (parent node, child node, interior pixels).
    let mut node_px: Vec<PixelIndex> = vec![root_px];
    let mut edges: Vec<(usize, usize, Vec<PixelIndex>)> = Vec::new();
    let mut stack: Vec<(usize, PixelIndex)> = vec![(0, root_px)];
    while let Some((from, px)) = stack.pop() {
        let kids = children.get(&px).cloned().unwrap_or_default();
        for k in kids {
            let mut interior = Vec::new();
            let mut cur = k;
            while !significant(&cur) {
                interior.push(cur);
                cur = children[&cur][0];
            }
            node_px.push(cur);
            let id = node_px.len() - 1;
            edges.push((from, id, interior));
            stack.push((id, cur));
        }
    }
    // Restore child order as first seen.
    edges.sort_by_key(|e| e.1);
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); node_px.len()];
    let mut interior: HashMap<(usize, usize), Vec<PixelIndex>> = HashMap::new();
    for (p, c, px) in edges {
        kids[p].push(c);
        interior.insert((p, c), px);
    }

    // Split nodes with too many children.
    let max = profile.max_children();
    let mut i = 0;
    while i < kids.len() {
        if kids[i].len() > max {
            let rest = kids[i].split_off(max - 1);
            node_px.push(node_px[i]);
            let extra = node_px.len() - 1;
            interior.insert((i, extra), Vec::new());
            for &c in &rest {
                let px = interior.remove(&(i, c)).unwrap_or_default();
                interior.insert((extra, c), px);
            }
            kids[i].push(extra);
            kids.push(rest);
        }
        i += 1;
    }

    // Remove non-root single-child nodes, joining their polylines.
    let mut out_edges: Vec<(usize, usize, Vec<PixelIndex>)> = Vec::new();
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut order = vec![0usize];
    while let Some(p) = queue.pop_front() {
        for &c0 in &kids[p] {
            let mut c = c0;
            let mut px = interior.remove(&(p, c)).unwrap_or_default();
            while kids[c].len() == 1 {
                let next = kids[c][0];
                px.push(node_px[c]);
                px.extend(interior.remove(&(c, next)).unwrap_or_default());
                c = next;
            }
            out_edges.push((p, c, px));
            order.push(c);
            queue.push_back(c);
        }
    }

    // Dense ids in breadth-first order, snapped positions.
    let ids: HashMap<usize, u32> = order
        .iter()
        .enumerate()
        .map(|(k, &n)| (n, k as u32))
        .collect();
    let to_world = |p: PixelIndex| pixel_to_world(p, height, width);
    let snap = |p: PixelIndex| -> WorldPoint {
        let wp = to_world(p);
        match keypoints.nearest(&wp) {
            Some(i) => {
                let k = keypoints.points()[i];
                let dx = (k.x - wp.x) * (width - 1) as f64;
                let dy = (k.y - wp.y) * (height - 1) as f64;
                if dx.hypot(dy) <= snap_radius_px {
                    k
                } else {
                    wp
                }
            }
            None => wp,
        }
    };
    let nodes = order
        .iter()
        .map(|&n| Node {
            id: NodeId(ids[&n]),
            position: snap(node_px[n]),
            radius: 0.0,
        })
        .collect();
    let mut tree_edges = Vec::with_capacity(out_edges.len());
    let mut polylines = BTreeMap::new();
    for (p, c, px) in out_edges {
        let e = Edge::new(NodeId(ids[&p]), NodeId(ids[&c]));
        tree_edges.push(e);
        polylines.insert(e, px.into_iter().map(to_world).collect());
    }
    Ok(Tree::new(NodeId(0), nodes, tree_edges)?.with_paths(polylines)?)
}

/// Baseline output plus the leaves that could not be reached.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub tree: Tree,
    pub unreachable: Vec<NodeId>,
}

/// Full baseline on a ground-truth tree: mask from its render, its root and
/// leaves as endpoints, its nodes as snapping keypoints.
pub fn run_baseline(
    gt: &Tree,
    config: &RenderConfig,
    snap_radius_px: f64,
    profile: Profile,
) -> Result<BaselineResult, BaselineError> {
    let (h, w) = (config.height, config.width);
    let root = gt.root().ok_or(BaselineError::NoRoot)?;
    let root_pos = gt.position(root).expect("root exists");
    let mask = make_mask(gt, config);
    let dt = distance_transform(&mask);
    let cost = build_cost_map(&dt)?;
    let leaves: Vec<NodeId> = gt.leaves().into_iter().filter(|&l| l != root).collect();
    let leaf_pos: Vec<WorldPoint> = leaves
        .iter()
        .map(|&l| gt.position(l).expect("leaf"))
        .collect();
    let traced = trace_paths(&cost, root_pos, &leaf_pos)?;
    let mut unreachable = Vec::new();
    let mut paths = Vec::new();
    for (leaf, p) in leaves.iter().zip(traced) {
        match p {
            Some(p) => paths.push(p),
            None => unreachable.push(*leaf),
        }
    }
    if paths.is_empty() {
        return Err(BaselineError::NoPaths);
    }
    let kps = KeypointSet::from_ordered(gt.nodes().iter().map(|n| n.position).collect());
    let tree = extract_connectivity(&paths, &kps, snap_radius_px, Some(&dt), profile, h, w)?;
    Ok(BaselineResult { tree, unreachable })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, f: impl FnMut(usize, usize) -> f64) -> ImageGrid {
        ImageGrid::from_fn(h, w, ChannelTag::Mask, f)
    }

    #[test]
    fn dt_examples() {
        let full = grid(5, 5, |_, _| 1.0);
        assert_eq!(distance_transform(&full).get(2, 2), 3.0);
        let one = grid(5, 5, |r, c| if (r, c) == (2, 2) { 1.0 } else { 0.0 });
        let dt = distance_transform(&one);
        assert_eq!(dt.get(2, 2), 1.0);
        assert_eq!(dt.get(0, 0), 0.0);
        let zero = grid(4, 6, |_, _| 0.0);
        assert!(distance_transform(&zero).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cost_examples() {
        let mut dt = ImageGrid::zeros(3, 3, ChannelTag::Intensity);
        dt.set(1, 1, 5.0);
        dt.set(0, 1, 2.0);
        let c = build_cost_map(&dt).unwrap();
        assert_eq!(c.m, 5.0);
        assert_eq!(c.grid.get(1, 1), COST_FLOOR);
        assert_eq!(c.grid.get(0, 1), 3.0);
        assert_eq!(c.grid.get(2, 2), 6.0);
        let zero = ImageGrid::zeros(3, 3, ChannelTag::Intensity);
        assert_eq!(build_cost_map(&zero), Err(BaselineError::DegenerateMask));
    }

    #[test]
    fn uniform_grid_straight_path() {
        let cost = ImageGrid::filled(9, 9, 1.0, ChannelTag::Cost);
        let sp = dijkstra(&cost, PixelIndex::new(4, 1));
        let p = sp.path_to(PixelIndex::new(4, 7)).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|q| q.row == 4));
        assert_eq!(sp.distance(PixelIndex::new(4, 7)), 6.0);
        assert_eq!(
            sp.path_to(PixelIndex::new(4, 1)).unwrap(),
            vec![PixelIndex::new(4, 1)]
        );
    }

    #[test]
    fn path_stays_in_trench() {
        // Expensive everywhere except row 0, col 8 and row 8.
        let cost = ImageGrid::from_fn(9, 9, ChannelTag::Cost, |r, c| {
            if r == 0 || c == 8 || r == 8 {
                0.01
            } else {
                10.0
            }
        });
        let sp = dijkstra(&cost, PixelIndex::new(0, 0));
        let p = sp.path_to(PixelIndex::new(8, 0)).unwrap();
        assert!(p.iter().all(|q| cost.get(q.row, q.col) == 0.01));
        assert!((path_cost(&cost, &p) - sp.distance(PixelIndex::new(8, 0))).abs() < 1e-12);
    }

    #[test]
    fn single_path_is_chain() {
        let path: Vec<_> = (0..10).map(|c| PixelIndex::new(5, c)).collect();
        let t = extract_connectivity(
            &[path],
            &KeypointSet::default(),
            5.0,
            None,
            Profile::Ssa,
            20,
            20,
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.edges().len(), 1);
        assert_eq!(t.interior_path(&t.edges()[0]).len(), 8);
    }

    #[test]
    fn shared_prefix_bifurcates() {
        let mut a: Vec<_> = (0..8).map(|r| PixelIndex::new(r, 10)).collect();
        let mut b = a.clone();
        a.extend((1..6).map(|k| PixelIndex::new(7 + k, 10 - k)));
        b.extend((1..6).map(|k| PixelIndex::new(7 + k, 10 + k)));
        let t = extract_connectivity(
            &[a, b],
            &KeypointSet::default(),
            5.0,
            None,
            Profile::Ssa,
            20,
            21,
        )
        .unwrap();
        assert_eq!(t.len(), 4);
        let junction = t.children(NodeId(0))[0];
        assert_eq!(t.children(junction).len(), 2);
        let pos = t.position(junction).unwrap();
        assert_eq!(world_to_pixel(pos, 20, 21).unwrap(), PixelIndex::new(7, 10));
    }

    #[test]
    fn too_many_children_are_split() {
        let stem: Vec<_> = (0..5).map(|r| PixelIndex::new(r, 10)).collect();
        let arms: Vec<Vec<PixelIndex>> = [(0isize, -1isize), (1, 0), (0, 1)]
            .iter()
            .map(|&(dr, dc)| {
                let mut p = stem.clone();
                p.extend(
                    (1..5).map(|k| PixelIndex::new((4 + dr * k) as usize, (10 + dc * k) as usize)),
                );
                p
            })
            .collect();
        let t = extract_connectivity(
            &arms,
            &KeypointSet::default(),
            5.0,
            None,
            Profile::Ssa,
            20,
            20,
        )
        .unwrap();
        assert!(crate::tree::validate_tree(&t, Profile::Ssa).is_valid());
        assert_eq!(t.leaves().len(), 3);
        let v = extract_connectivity(
            &arms,
            &KeypointSet::default(),
            5.0,
            None,
            Profile::Vrm,
            20,
            20,
        )
        .unwrap();
        assert_eq!(v.children(v.children(NodeId(0))[0]).len(), 3);
    }

    #[test]
    fn junctions_snap_to_keypoints() {
        let mut a: Vec<_> = (0..8).map(|r| PixelIndex::new(r, 10)).collect();
        let mut b = a.clone();
        a.extend((1..6).map(|k| PixelIndex::new(7 + k, 10 - k)));
        b.extend((1..6).map(|k| PixelIndex::new(7 + k, 10 + k)));
        let kp = pixel_to_world(PixelIndex::new(8, 12), 20, 21);
        let kps = KeypointSet::from_ordered(vec![kp]);
        let t = extract_connectivity(&[a, b], &kps, 5.0, None, Profile::Ssa, 20, 21).unwrap();
        let junction = t.children(NodeId(0))[0];
        assert_eq!(t.position(junction), Some(kp));
    }
}
