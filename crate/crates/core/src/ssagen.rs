//! Synthetic vessel tree generation.
//!
//! Trees are grown with a space-colonization scheme: attractor points are
//! scattered uniformly, each attractor pulls its nearest tree node, and
//! pulled nodes extend one step toward the mean pull direction. A node
//! that already has one child and is pulled more than 60° away from it
//! branches. After growth, short terminal twigs are pruned, degree-2
//! chains collapse into polyline edges between keypoints, and radii follow
//! Murray's law from a fixed terminal radius.
//!
//! In slab mode the attractors and nodes live in a thin 3D slab, so the
//! projected tree can contain crossing branches.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{Edge, Node, NodeId, Tree};
use crate::types::{CoreError, WorldPoint};

/// Nodes stay within `[DOMAIN_MARGIN, 1 - DOMAIN_MARGIN]²`.
pub const DOMAIN_MARGIN: f64 = 0.05;

const MAX_ITERATIONS: usize = 4000;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid growth config: {0}")]
    InvalidConfig(String),
    #[error("growth stalled for seed {seed}: no attractor reachable from the root")]
    Stalled { seed: u64 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub seed: u64,
    pub n_attractors: usize,
    pub attraction_radius: f64,
    pub kill_radius: f64,
    pub step_size: f64,
    /// Cap on raw growth nodes, before chains are collapsed.
    pub max_nodes: usize,
    /// Minimum centerline length between consecutive branch points, and
    /// minimum length of a terminal twig.
    pub branch_margin: f64,
    pub root_position: WorldPoint,
    pub terminal_radius: f64,
    pub slab_mode: bool,
    pub slab_depth: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_attractors: 400,
            attraction_radius: 0.15,
            kill_radius: 0.03,
            step_size: 0.015,
            max_nodes: 600,
            branch_margin: 0.04,
            root_position: WorldPoint {
                x: 0.5,
                y: DOMAIN_MARGIN,
            },
            terminal_radius: 0.004,
            slab_mode: false,
            slab_depth: 0.2,
        }
    }
}

impl GrowthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: &str| Err(GenerationError::InvalidConfig(m.to_string()));
        if !(self.kill_radius < self.attraction_radius) {
            return bad("kill_radius must be smaller than attraction_radius");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if self.max_nodes < 3 {
            return bad("max_nodes must be at least 3");
        }
        if !(self.terminal_radius >= 0.0) {
            return bad("terminal_radius must be non-negative");
        }
        if self.slab_mode && !(self.slab_depth > 0.0) {
            return bad("slab_depth must be positive in slab mode");
        }
        let lo = DOMAIN_MARGIN;
        let hi = 1.0 - DOMAIN_MARGIN;
        let r = self.root_position;
        if !(lo..=hi).contains(&r.x) || !(lo..=hi).contains(&r.y) {
            return bad("root_position must lie inside the growth margin");
        }
        Ok(())
    }
}

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn dist_xy(a: V3, b: V3) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node3D {
    pub id: NodeId,
    pub position: V3,
    pub radius: f64,
}

/// A generated tree before projection; `z` spans `[0, slab_depth]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree3D {
    pub root: NodeId,
    pub nodes: Vec<Node3D>,
    pub edges: Vec<Edge>,
    pub paths: BTreeMap<Edge, Vec<V3>>,
}

struct Growth {
    pos: Vec<V3>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl Growth {
    fn push(&mut self, p: V3, parent: usize) {
        let id = self.pos.len();
        self.pos.push(p);
        self.parent.push(Some(parent));
        self.children.push(Vec::new());
        self.children[parent].push(id);
    }

    /// Branching at `ni` must leave `margin` of centerline to the nearest
    /// branch point above and below.
    fn branch_spacing_ok(&self, ni: usize, margin: f64) -> bool {
        let mut len = 0.0;
        let mut cur = ni;
        while let Some(p) = self.parent[cur] {
            len += norm(sub(self.pos[cur], self.pos[p]));
            if len >= margin {
                break;
            }
            if self.parent[p].is_none() || self.children[p].len() >= 2 {
                return false;
            }
            cur = p;
        }
        let mut len = 0.0;
        let mut cur = ni;
        while self.children[cur].len() == 1 {
            let c = self.children[cur][0];
            len += norm(sub(self.pos[c], self.pos[cur]));
            if len >= margin {
                return true;
            }
            cur = c;
        }
        self.children[cur].len() < 2
    }

    /// Planar growth keeps every node `min_sep` apart in the image plane.
    /// Slab growth only needs that in 3D, plus planar separation from
    /// nodes that are currently keypoints (root, tips, branch points).
    fn too_close(&self, cand: V3, from: usize, min_sep: f64, planar: bool) -> bool {
        self.pos.iter().enumerate().any(|(i, &p)| {
            if i == from {
                return false;
            }
            if planar {
                return dist_xy(p, cand) < min_sep;
            }
            let keypoint = i == 0 || self.children[i].len() != 1;
            norm(sub(p, cand)) < min_sep || (keypoint && dist_xy(p, cand) < min_sep)
        })
    }

    fn crowded_in_plane(&self, ni: usize, min_sep: f64) -> bool {
        let p = self.pos[ni];
        self.pos
            .iter()
            .enumerate()
            .any(|(i, &q)| i != ni && dist_xy(p, q) < min_sep)
    }

    fn near_existing_segment(&self, a: V3, b: V3, from: usize, clearance: f64) -> bool {
        (1..self.pos.len()).any(|j| {
            let Some(p) = self.parent[j] else {
                return false;
            };
            if j == from || p == from {
                return false;
            }
            segment_distance_xy(a, b, self.pos[p], self.pos[j]) < clearance
        })
    }
}

fn point_segment_distance_xy(p: V3, a: V3, b: V3) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * abx).hypot(p[1] - a[1] - t * aby)
}

fn segment_distance_xy(a: V3, b: V3, c: V3, d: V3) -> f64 {
    if segments_cross((a[0], a[1]), (b[0], b[1]), (c[0], c[1]), (d[0], d[1])) {
        return 0.0;
    }
    point_segment_distance_xy(a, c, d)
        .min(point_segment_distance_xy(b, c, d))
        .min(point_segment_distance_xy(c, a, b))
        .min(point_segment_distance_xy(d, a, b))
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Proper intersection of two 2D segments (interiors cross).
pub fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn grow_raw(cfg: &GrowthConfig) -> Result<Growth, GenerationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lo = DOMAIN_MARGIN;
    let hi = 1.0 - DOMAIN_MARGIN;
    let depth = if cfg.slab_mode { cfg.slab_depth } else { 0.0 };
    let mut attractors: Vec<V3> = (0..cfg.n_attractors)
        .map(|_| {
            let x = rng.random_range(lo..=hi);
            let y = rng.random_range(lo..=hi);
            let z = if cfg.slab_mode {
                rng.random_range(0.0..=depth)
            } else {
                0.0
            };
            [x, y, z]
        })
        .collect();

    let root = [cfg.root_position.x, cfg.root_position.y, depth / 2.0];
    let mut g = Growth {
        pos: vec![root],
        parent: vec![None],
        children: vec![Vec::new()],
    };
    let min_sep = 0.6 * cfg.step_size;
    let clearance = 0.4 * cfg.step_size;
    let cos_branch = 60f64.to_radians().cos();

    for _ in 0..MAX_ITERATIONS {
        if attractors.is_empty() || g.pos.len() >= cfg.max_nodes {
            break;
        }
        let mut pulls: BTreeMap<usize, V3> = BTreeMap::new();
        attractors.retain(|&a| {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (i, &p) in g.pos.iter().enumerate() {
                let d = norm(sub(a, p));
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            if best_d < cfg.kill_radius {
                return false;
            }
            if best_d <= cfg.attraction_radius {
                let u = sub(a, g.pos[best]);
                let acc = pulls.entry(best).or_insert([0.0; 3]);
                for k in 0..3 {
                    acc[k] += u[k] / best_d;
                }
            }
            true
        });

        let mut grew = false;
        for (ni, sum) in pulls {
            if g.pos.len() >= cfg.max_nodes {
                break;
            }
            if g.children[ni].len() >= 2 {
                continue;
            }
            let len = norm(sum);
            if len < 1e-9 {
                continue;
            }
            let dir = [sum[0] / len, sum[1] / len, sum[2] / len];
            if let Some(&c) = g.children[ni].first() {
                let existing = sub(g.pos[c], g.pos[ni]);
                if dot(dir, existing) / norm(existing) >= cos_branch {
                    continue;
                }
                if ni != 0 && !g.branch_spacing_ok(ni, cfg.branch_margin) {
                    continue;
                }
                if cfg.slab_mode && g.crowded_in_plane(ni, min_sep) {
                    continue;
                }
            }
            let p = g.pos[ni];
            let cand = [
                (p[0] + cfg.step_size * dir[0]).clamp(lo, hi),
                (p[1] + cfg.step_size * dir[1]).clamp(lo, hi),
                (p[2] + cfg.step_size * dir[2]).clamp(0.0, depth),
            ];
            if g.too_close(cand, ni, min_sep, !cfg.slab_mode) {
                continue;
            }
            if !cfg.slab_mode && g.near_existing_segment(p, cand, ni, clearance) {
                continue;
            }
            g.push(cand, ni);
            grew = true;
        }
        if !grew {
            break;
        }
    }

    if g.pos.len() < 2 {
        return Err(GenerationError::Stalled { seed: cfg.seed });
    }
    Ok(g)
}

/// Removes terminal chains shorter than `margin` hanging off branch points.
fn prune_twigs(g: &Growth, margin: f64) -> Vec<bool> {
    let n = g.pos.len();
    let mut alive = vec![true; n];
    let active_children =
        |alive: &[bool], i: usize| g.children[i].iter().filter(|&&c| alive[c]).count();
    loop {
        let mut changed = false;
        for leaf in 1..n {
            if !alive[leaf] || active_children(&alive, leaf) != 0 {
                continue;
            }
            let mut chain = vec![leaf];
            let mut len = 0.0;
            let mut cur = leaf;
            let branch = loop {
                let p = g.parent[cur].expect("non-root has parent");
                len += norm(sub(g.pos[cur], g.pos[p]));
                if p == 0 || active_children(&alive, p) != 1 {
                    break p;
                }
                chain.push(p);
                cur = p;
            };
            if active_children(&alive, branch) >= 2 && len < margin {
                for c in chain {
                    alive[c] = false;
                }
                changed = true;
            }
        }
        if !changed {
            return alive;
        }
    }
}

fn collapse(g: &Growth, alive: &[bool]) -> (Vec<usize>, Vec<(usize, usize, Vec<V3>)>) {
    let active: Vec<Vec<usize>> = g
        .children
        .iter()
        .map(|cs| cs.iter().copied().filter(|&c| alive[c]).collect())
        .collect();
    let keypoints: Vec<usize> = (0..g.pos.len())
        .filter(|&i| alive[i] && (i == 0 || active[i].len() != 1))
        .collect();
    let mut edges = Vec::new();
    for &k in keypoints.iter().skip(1) {
        let mut interior = Vec::new();
        let mut cur = g.parent[k].expect("non-root has parent");
        while cur != 0 && active[cur].len() == 1 {
            interior.push(g.pos[cur]);
            cur = g.parent[cur].expect("non-root has parent");
        }
        interior.reverse();
        edges.push((cur, k, interior));
    }
    (keypoints, edges)
}

/// Murray's-law radii: leaves get `terminal`, parents `cbrt(Σ r_c³)`.
fn murray_radii(
    root: NodeId,
    children: &HashMap<NodeId, Vec<NodeId>>,
    terminal: f64,
) -> HashMap<NodeId, f64> {
    let mut order = vec![root];
    let mut i = 0;
    while i < order.len() {
        if let Some(cs) = children.get(&order[i]) {
            order.extend(cs.iter().copied());
        }
        i += 1;
    }
    let mut radii: HashMap<NodeId, f64> = HashMap::with_capacity(order.len());
    for &id in order.iter().rev() {
        let r = match children.get(&id) {
            Some(cs) if !cs.is_empty() => cs.iter().map(|c| radii[c].powi(3)).sum::<f64>().cbrt(),
            _ => terminal,
        };
        radii.insert(id, r);
    }
    radii
}

/// Reassigns all radii by Murray's law with the given terminal radius.
pub fn assign_radii(tree: &Tree, terminal_radius: f64) -> Tree {
    let Some(root) = tree.root() else {
        return tree.clone();
    };
    let children: HashMap<NodeId, Vec<NodeId>> = tree
        .nodes()
        .iter()
        .map(|n| (n.id, tree.children(n.id).to_vec()))
        .collect();
    let radii = murray_radii(root, &children, terminal_radius);
    let nodes = tree
        .nodes()
        .iter()
        .map(|n| Node {
            radius: radii.get(&n.id).copied().unwrap_or(terminal_radius),
            ..*n
        })
        .collect();
    Tree::new(root, nodes, tree.edges().to_vec())
        .and_then(|t| t.with_paths(tree.paths().clone()))
        .expect("same structure as a valid tree")
}

/// Grows a tree in 3D (planar when not in slab mode, with `z = 0`).
pub fn grow_tree3d(cfg: &GrowthConfig) -> Result<Tree3D, GenerationError> {
    cfg.validate()?;
    let g = grow_raw(cfg)?;
    let alive = prune_twigs(&g, cfg.branch_margin);
    let (keypoints, raw_edges) = collapse(&g, &alive);
    let id_of: HashMap<usize, NodeId> = keypoints
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, NodeId(i as u32)))
        .collect();

    let mut edges = Vec::with_capacity(raw_edges.len());
    let mut paths = BTreeMap::new();
    let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (p, c, interior) in raw_edges {
        let e = Edge::new(id_of[&p], id_of[&c]);
        children.entry(e.parent).or_default().push(e.child);
        edges.push(e);
        if !interior.is_empty() {
            paths.insert(e, interior);
        }
    }
    let root = NodeId(0);
    let radii = murray_radii(root, &children, cfg.terminal_radius);
    let nodes = keypoints
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let id = NodeId(i as u32);
            Node3D {
                id,
                position: g.pos[k],
                radius: radii[&id],
            }
        })
        .collect();
    Ok(Tree3D {
        root,
        nodes,
        edges,
        paths,
    })
}

/// Drops `z`, keeping connectivity, radii, and polylines.
pub fn project_slab(tree3d: &Tree3D) -> Tree {
    let xy = |p: V3| WorldPoint::clamped(p[0], p[1]);
    let nodes = tree3d
        .nodes
        .iter()
        .map(|n| Node {
            id: n.id,
            position: xy(n.position),
            radius: n.radius,
        })
        .collect();
    let paths = tree3d
        .paths
        .iter()
        .map(|(e, pts)| (*e, pts.iter().map(|&p| xy(p)).collect()))
        .collect();
    Tree::new(tree3d.root, nodes, tree3d.edges.clone())
        .and_then(|t| t.with_paths(paths))
        .expect("generated tree is referentially consistent")
}

/// Grows and projects a tree.
pub fn grow_tree(cfg: &GrowthConfig) -> Result<Tree, GenerationError> {
    Ok(project_slab(&grow_tree3d(cfg)?))
}

/// Points where polylines of two edges that share no node cross in the plane.
pub fn crossing_points(tree: &Tree) -> Vec<WorldPoint> {
    let polylines: Vec<(Edge, Vec<WorldPoint>)> = tree
        .edges()
        .iter()
        .map(|e| (*e, tree.edge_polyline(e)))
        .collect();
    let mut out = Vec::new();
    for (i, (ea, pa)) in polylines.iter().enumerate() {
        for (eb, pb) in polylines.iter().skip(i + 1) {
            let shared = [ea.parent, ea.child]
                .iter()
                .any(|n| *n == eb.parent || *n == eb.child);
            if shared {
                continue;
            }
            for sa in pa.windows(2) {
                for sb in pb.windows(2) {
                    let (a, b, c, d) = (
                        (sa[0].x, sa[0].y),
                        (sa[1].x, sa[1].y),
                        (sb[0].x, sb[0].y),
                        (sb[1].x, sb[1].y),
                    );
                    if segments_cross(a, b, c, d) {
                        let t = orient(c, d, a) / (orient(c, d, a) - orient(c, d, b));
                        out.push(WorldPoint::clamped(
                            a.0 + t * (b.0 - a.0),
                            a.1 + t * (b.1 - a.1),
                        ));
                    }
                }
            }
        }
    }
    out
}

pub fn has_crossing(tree: &Tree) -> bool {
    !crossing_points(tree).is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::validate_tree;
    use crate::types::Profile;

    fn murray_residual(tree: &Tree) -> f64 {
        tree.nodes()
            .iter()
            .filter(|n| !tree.children(n.id).is_empty())
            .map(|n| {
                let sum: f64 = tree
                    .children(n.id)
                    .iter()
                    .map(|c| tree.node(*c).unwrap().radius.powi(3))
                    .sum();
                (n.radius.powi(3) - sum).abs() / sum
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn default_tree_is_valid_and_deterministic() {
        let cfg = GrowthConfig::with_seed(7);
        let a = grow_tree(&cfg).unwrap();
        let b = grow_tree(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(
            validate_tree(&a, Profile::Ssa).is_valid(),
            "{}",
            validate_tree(&a, Profile::Ssa)
        );
        assert!(a.len() > 5, "tree too small: {}", a.len());
        assert_eq!(a.edges().len(), a.len() - 1);
    }

    #[test]
    fn tiny_max_nodes() {
        let cfg = GrowthConfig {
            max_nodes: 3,
            ..GrowthConfig::with_seed(1)
        };
        let t = grow_tree(&cfg).unwrap();
        assert_eq!(t.edges().len(), t.len() - 1);
        assert_eq!(t.root(), Some(NodeId(0)));
        assert!(t.len() >= 2);
        assert!(validate_tree(&t, Profile::Ssa).is_valid());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = GrowthConfig {
            kill_radius: 0.2,
            ..Default::default()
        };
        assert!(matches!(
            grow_tree(&cfg),
            Err(GenerationError::InvalidConfig(_))
        ));
        let cfg = GrowthConfig {
            max_nodes: 2,
            ..Default::default()
        };
        assert!(grow_tree(&cfg).is_err());
    }

    #[test]
    fn stall_when_nothing_reachable() {
        let cfg = GrowthConfig {
            n_attractors: 0,
            ..Default::default()
        };
        assert!(matches!(
            grow_tree(&cfg),
            Err(GenerationError::Stalled { .. })
        ));
    }

    #[test]
    fn murray_two_leaves() {
        let mk = |id, x, y| Node {
            id: NodeId(id),
            position: WorldPoint { x, y },
            radius: 0.0,
        };
        let t = Tree::new(
            NodeId(0),
            vec![mk(0, 0.5, 0.2), mk(1, 0.3, 0.8), mk(2, 0.7, 0.8)],
            vec![
                Edge::new(NodeId(0), NodeId(1)),
                Edge::new(NodeId(0), NodeId(2)),
            ],
        )
        .unwrap();
        let t = assign_radii(&t, 1.0);
        assert!((t.node(NodeId(0)).unwrap().radius - 1.2599210498948732).abs() < 1e-15);
        assert_eq!(t.node(NodeId(1)).unwrap().radius, 1.0);
    }

    #[test]
    fn murray_chain_root_keeps_terminal_radius() {
        let mk = |id, y| Node {
            id: NodeId(id),
            position: WorldPoint { x: 0.5, y },
            radius: 0.0,
        };
        let t = Tree::new(
            NodeId(0),
            vec![mk(0, 0.1), mk(1, 0.9)],
            vec![Edge::new(NodeId(0), NodeId(1))],
        )
        .unwrap();
        let t = assign_radii(&t, 0.25);
        assert!((t.node(NodeId(0)).unwrap().radius - 0.25).abs() < 1e-15);
    }

    #[test]
    fn generated_radii_obey_murray() {
        for seed in 0..20 {
            let t = grow_tree(&GrowthConfig::with_seed(seed)).unwrap();
            assert!(murray_residual(&t) < 1e-12);
            for e in t.edges() {
                let rp = t.node(e.parent).unwrap().radius;
                let rc = t.node(e.child).unwrap().radius;
                if t.children(e.parent).len() >= 2 {
                    assert!(rp > rc);
                } else {
                    assert!(rp >= rc * (1.0 - 1e-15));
                }
            }
        }
    }

    #[test]
    fn planar_trees_have_no_crossings() {
        for seed in 0..20 {
            let t = grow_tree(&GrowthConfig::with_seed(seed)).unwrap();
            assert!(!has_crossing(&t), "seed {seed}");
        }
    }

    #[test]
    fn planar_slab_projects_identically() {
        let tree3d = grow_tree3d(&GrowthConfig::with_seed(3)).unwrap();
        assert!(tree3d.nodes.iter().all(|n| n.position[2] == 0.0));
        let t = project_slab(&tree3d);
        assert_eq!(t.len(), tree3d.nodes.len());
        for (a, b) in t.nodes().iter().zip(&tree3d.nodes) {
            assert_eq!(a.position.x, b.position[0]);
            assert_eq!(a.position.y, b.position[1]);
        }
    }

    #[test]
    fn slab_projection_can_cross() {
        // two branches at distinct depths whose projections cross
        let node = |id, p: V3| Node3D {
            id: NodeId(id),
            position: p,
            radius: 0.01,
        };
        let tree3d = Tree3D {
            root: NodeId(0),
            nodes: vec![
                node(0, [0.5, 0.1, 0.1]),
                node(1, [0.5, 0.3, 0.1]),
                node(2, [0.2, 0.9, 0.0]),
                node(3, [0.8, 0.9, 0.2]),
                node(4, [0.9, 0.5, 0.2]),
                node(5, [0.1, 0.6, 0.0]),
            ],
            edges: vec![
                Edge::new(NodeId(0), NodeId(1)),
                Edge::new(NodeId(1), NodeId(2)),
                Edge::new(NodeId(1), NodeId(3)),
                Edge::new(NodeId(2), NodeId(4)),
                Edge::new(NodeId(2), NodeId(5)),
            ],
            paths: BTreeMap::new(),
        };
        let t = project_slab(&tree3d);
        assert_eq!(t.edges(), tree3d.edges.as_slice());
        assert_eq!(t.len(), 6);
        assert!(has_crossing(&t));
    }

    #[test]
    fn slab_mode_generates_valid_trees_with_some_crossings() {
        let mut crossings = 0;
        for seed in 0..30 {
            let cfg = GrowthConfig {
                slab_mode: true,
                ..GrowthConfig::with_seed(seed)
            };
            let t = grow_tree(&cfg).unwrap();
            assert!(validate_tree(&t, Profile::Ssa).is_valid());
            crossings += usize::from(has_crossing(&t));
        }
        assert!(crossings > 0);
    }
}
