//! Rooted vessel trees, structural validation, and the canonical JSON form.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};

use serde_json::Value;

use crate::types::{CoreError, Profile, WorldPoint};

/// Node identifier, unique within a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: WorldPoint,
    /// Vessel radius entering this node, in world units.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub parent: NodeId,
    pub child: NodeId,
}

impl Edge {
    pub const fn new(parent: NodeId, child: NodeId) -> Self {
        Self { parent, child }
    }
}

/// A directed rooted tree of spatial nodes.
///
/// Construction only enforces referential integrity (unique ids, known
/// endpoints, in-domain positions). Topological rules are checked by
/// [`validate_tree`] so that malformed predictions can still be inspected.
/// Edges may carry interior centerline points used for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    root: Option<NodeId>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    paths: BTreeMap<Edge, Vec<WorldPoint>>,
    index: HashMap<NodeId, usize>,
    children: HashMap<NodeId, Vec<NodeId>>,
    parents: HashMap<NodeId, Vec<NodeId>>,
}

impl Tree {
    pub fn new(root: NodeId, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, CoreError> {
        Self::build(Some(root), nodes, edges, BTreeMap::new())
    }

    /// A tree with no nodes at all.
    pub fn empty() -> Self {
        Self {
            root: None,
            nodes: Vec::new(),
            edges: Vec::new(),
            paths: BTreeMap::new(),
            index: HashMap::new(),
            children: HashMap::new(),
            parents: HashMap::new(),
        }
    }

    /// Attaches interior centerline points to edges.
    pub fn with_paths(self, paths: BTreeMap<Edge, Vec<WorldPoint>>) -> Result<Self, CoreError> {
        Self::build(self.root, self.nodes, self.edges, paths)
    }

    fn build(
        root: Option<NodeId>,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        paths: BTreeMap<Edge, Vec<WorldPoint>>,
    ) -> Result<Self, CoreError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !n.position.in_domain() {
                return Err(CoreError::OutOfDomain {
                    x: n.position.x,
                    y: n.position.y,
                });
            }
            if !(n.radius.is_finite() && n.radius >= 0.0) {
                return Err(CoreError::Parse(format!(
                    "node {} has invalid radius",
                    n.id
                )));
            }
            if index.insert(n.id, i).is_some() {
                return Err(CoreError::DuplicateNode(n.id.0));
            }
        }
        match root {
            Some(r) if !index.contains_key(&r) => return Err(CoreError::UnknownNode(r.0)),
            None if !nodes.is_empty() => {
                return Err(CoreError::Parse("non-empty tree without root".into()))
            }
            _ => {}
        }
        let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut parents: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for e in &edges {
            for id in [e.parent, e.child] {
                if !index.contains_key(&id) {
                    return Err(CoreError::UnknownNode(id.0));
                }
            }
            children.entry(e.parent).or_default().push(e.child);
            parents.entry(e.child).or_default().push(e.parent);
        }
        let edge_set: HashSet<&Edge> = edges.iter().collect();
        for (e, pts) in &paths {
            if !edge_set.contains(e) {
                return Err(CoreError::Parse(format!(
                    "path for unknown edge [{}, {}]",
                    e.parent, e.child
                )));
            }
            if let Some(p) = pts.iter().find(|p| !p.in_domain()) {
                return Err(CoreError::OutOfDomain { x: p.x, y: p.y });
            }
        }
        let paths = paths.into_iter().filter(|(_, v)| !v.is_empty()).collect();
        Ok(Self {
            root,
            nodes,
            edges,
            paths,
            index,
            children,
            parents,
        })
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn paths(&self) -> &BTreeMap<Edge, Vec<WorldPoint>> {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn position(&self, id: NodeId) -> Option<WorldPoint> {
        self.node(id).map(|n| n.position)
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parents.get(&id).and_then(|p| p.first().copied())
    }

    /// Interior points of an edge, excluding both endpoints.
    pub fn interior_path(&self, edge: &Edge) -> &[WorldPoint] {
        self.paths.get(edge).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Full centerline polyline of an edge from parent to child.
    pub fn edge_polyline(&self, edge: &Edge) -> Vec<WorldPoint> {
        let mut out = Vec::with_capacity(self.interior_path(edge).len() + 2);
        if let Some(p) = self.position(edge.parent) {
            out.push(p);
        }
        out.extend_from_slice(self.interior_path(edge));
        if let Some(c) = self.position(edge.child) {
            out.push(c);
        }
        out
    }

    /// Node ids in breadth-first order from the root (children in edge order).
    pub fn bfs(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let Some(root) = self.root else {
            return out;
        };
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([root]);
        seen.insert(root);
        while let Some(id) = queue.pop_front() {
            out.push(id);
            for &c in self.children(id) {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| self.children(*id).is_empty())
            .collect()
    }
}

/// One broken invariant found by [`validate_tree`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTree,
    RootHasParent(NodeId),
    RootChildCount { node: NodeId, count: usize },
    TrifurcationNotAllowed(NodeId),
    InvalidChildCount { node: NodeId, count: usize },
    MultipleParents(NodeId),
    Orphan(NodeId),
    Unreachable(NodeId),
    SelfLoop(NodeId),
    DuplicateEdge(Edge),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTree => write!(f, "tree has no nodes"),
            Violation::RootHasParent(n) => write!(f, "root {n} has a parent"),
            Violation::RootChildCount { node, count } => {
                write!(f, "root has {count} children (node {node})")
            }
            Violation::TrifurcationNotAllowed(n) => {
                write!(f, "trifurcation not allowed in profile (node {n})")
            }
            Violation::InvalidChildCount { node, count } => {
                write!(f, "node {node} has invalid child count {count}")
            }
            Violation::MultipleParents(n) => write!(f, "node {n} has more than one parent"),
            Violation::Orphan(n) => write!(f, "non-root node {n} has no parent"),
            Violation::Unreachable(n) => write!(f, "node {n} is not reachable from the root"),
            Violation::SelfLoop(n) => write!(f, "self loop on node {n}"),
            Violation::DuplicateEdge(e) => {
                write!(f, "duplicate edge [{}, {}]", e.parent, e.child)
            }
        }
    }
}

/// Result of [`validate_tree`]; empty means the tree is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural and topological tree invariant under `profile`.
pub fn validate_tree(tree: &Tree, profile: Profile) -> ValidationReport {
    let mut violations = Vec::new();
    let Some(root) = tree.root() else {
        violations.push(Violation::EmptyTree);
        return ValidationReport { violations };
    };

    let mut seen_edges = HashSet::new();
    for e in tree.edges() {
        if e.parent == e.child {
            violations.push(Violation::SelfLoop(e.parent));
        }
        if !seen_edges.insert(*e) {
            violations.push(Violation::DuplicateEdge(*e));
        }
    }

    for n in tree.nodes() {
        let parents = tree.parents.get(&n.id).map_or(0, Vec::len);
        let is_root = n.id == root;
        if is_root && parents > 0 {
            violations.push(Violation::RootHasParent(n.id));
        }
        if !is_root && parents == 0 {
            violations.push(Violation::Orphan(n.id));
        }
        if parents > 1 {
            violations.push(Violation::MultipleParents(n.id));
        }

        let count = tree.children(n.id).len();
        if count == 3 && !profile.allows_trifurcation() {
            violations.push(Violation::TrifurcationNotAllowed(n.id));
        } else if is_root {
            if !profile.valid_child_count(count, true) {
                violations.push(Violation::RootChildCount { node: n.id, count });
            }
        } else if !profile.valid_child_count(count, false) {
            violations.push(Violation::InvalidChildCount { node: n.id, count });
        }
    }

    let reached: HashSet<NodeId> = tree.bfs().into_iter().collect();
    for n in tree.nodes() {
        if !reached.contains(&n.id) {
            violations.push(Violation::Unreachable(n.id));
        }
    }
    ValidationReport { violations }
}

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros removed.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if (-5..17).contains(&exp) {
        if exp >= 0 {
            let split = exp as usize + 1;
            let (int, frac) = digits.split_at(split);
            out.push_str(int);
            let frac = frac.trim_end_matches('0');
            if !frac.is_empty() {
                out.push('.');
                out.push_str(frac);
            }
        } else {
            out.push_str("0.");
            for _ in 0..(-exp - 1) {
                out.push('0');
            }
            out.push_str(digits.trim_end_matches('0'));
        }
    } else {
        let (lead, rest) = digits.split_at(1);
        out.push_str(lead);
        let rest = rest.trim_end_matches('0');
        if !rest.is_empty() {
            out.push('.');
            out.push_str(rest);
        }
        let _ = write!(out, "e{exp}");
    }
    out
}

/// Serializes a tree into its canonical JSON document.
///
/// Layout: `{"root": id, "nodes": [{"id","x","y","r"}...], "edges": [[p, c]...]}`,
/// followed by `"paths"` only when some edge carries interior points.
pub fn tree_to_json(tree: &Tree) -> String {
    let mut s = String::with_capacity(64 + tree.len() * 80);
    s.push_str("{\"root\": ");
    match tree.root() {
        Some(r) => {
            let _ = write!(s, "{r}");
        }
        None => s.push_str("null"),
    }
    s.push_str(", \"nodes\": [");
    for (i, n) in tree.nodes().iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(
            s,
            "{{\"id\": {}, \"x\": {}, \"y\": {}, \"r\": {}}}",
            n.id,
            format_g17(n.position.x),
            format_g17(n.position.y),
            format_g17(n.radius)
        );
    }
    s.push_str("], \"edges\": [");
    for (i, e) in tree.edges().iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "[{}, {}]", e.parent, e.child);
    }
    s.push(']');
    if !tree.paths().is_empty() {
        s.push_str(", \"paths\": [");
        for (i, (e, pts)) in tree.paths().iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(
                s,
                "{{\"parent\": {}, \"child\": {}, \"points\": [",
                e.parent, e.child
            );
            for (j, p) in pts.iter().enumerate() {
                if j > 0 {
                    s.push_str(", ");
                }
                let _ = write!(s, "[{}, {}]", format_g17(p.x), format_g17(p.y));
            }
            s.push_str("]}");
        }
        s.push(']');
    }
    s.push_str("}\n");
    s
}

fn parse_err(field: &str, msg: &str) -> CoreError {
    CoreError::Parse(format!("{field}: {msg}"))
}

fn as_f64(v: &Value, field: &str) -> Result<f64, CoreError> {
    v.as_f64()
        .ok_or_else(|| parse_err(field, "expected number"))
}

fn as_id(v: &Value, field: &str) -> Result<NodeId, CoreError> {
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .map(NodeId)
        .ok_or_else(|| parse_err(field, "expected non-negative integer id"))
}

fn as_point(v: &Value, field: &str) -> Result<WorldPoint, CoreError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| parse_err(field, "expected [x, y]"))?;
    let x = as_f64(&arr[0], &format!("{field}[0]"))?;
    let y = as_f64(&arr[1], &format!("{field}[1]"))?;
    WorldPoint::new(x, y).map_err(|_| parse_err(field, "point outside [0,1]^2"))
}

/// Parses a canonical tree document; errors name the offending field.
pub fn tree_from_json(text: &str) -> Result<Tree, CoreError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| CoreError::Parse(format!("invalid JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| parse_err("document", "expected object"))?;

    let root = match obj.get("root") {
        None => return Err(parse_err("root", "missing")),
        Some(Value::Null) => None,
        Some(v) => Some(as_id(v, "root")?),
    };

    let raw_nodes = obj
        .get("nodes")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("nodes", "missing or not an array"))?;
    let mut nodes = Vec::with_capacity(raw_nodes.len());
    for (i, n) in raw_nodes.iter().enumerate() {
        let field = |k: &str| format!("nodes[{i}].{k}");
        let o = n
            .as_object()
            .ok_or_else(|| parse_err(&format!("nodes[{i}]"), "expected object"))?;
        let get = |k: &str| o.get(k).ok_or_else(|| parse_err(&field(k), "missing"));
        let id = as_id(get("id")?, &field("id"))?;
        let x = as_f64(get("x")?, &field("x"))?;
        let y = as_f64(get("y")?, &field("y"))?;
        let r = as_f64(get("r")?, &field("r"))?;
        let position =
            WorldPoint::new(x, y).map_err(|_| parse_err(&field("x"), "outside [0,1]"))?;
        if r < 0.0 {
            return Err(parse_err(&field("r"), "negative radius"));
        }
        nodes.push(Node {
            id,
            position,
            radius: r,
        });
    }

    let raw_edges = obj
        .get("edges")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("edges", "missing or not an array"))?;
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (i, e) in raw_edges.iter().enumerate() {
        let field = format!("edges[{i}]");
        let pair = e
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| parse_err(&field, "expected [parent, child]"))?;
        edges.push(Edge::new(
            as_id(&pair[0], &format!("{field}[0]"))?,
            as_id(&pair[1], &format!("{field}[1]"))?,
        ));
    }

    let mut paths = BTreeMap::new();
    if let Some(raw) = obj.get("paths") {
        let arr = raw
            .as_array()
            .ok_or_else(|| parse_err("paths", "expected array"))?;
        for (i, p) in arr.iter().enumerate() {
            let field = |k: &str| format!("paths[{i}].{k}");
            let o = p
                .as_object()
                .ok_or_else(|| parse_err(&format!("paths[{i}]"), "expected object"))?;
            let get = |k: &str| o.get(k).ok_or_else(|| parse_err(&field(k), "missing"));
            let edge = Edge::new(
                as_id(get("parent")?, &field("parent"))?,
                as_id(get("child")?, &field("child"))?,
            );
            let pts = get("points")?
                .as_array()
                .ok_or_else(|| parse_err(&field("points"), "expected array"))?
                .iter()
                .enumerate()
                .map(|(j, v)| as_point(v, &format!("paths[{i}].points[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            paths.insert(edge, pts);
        }
    }

    let tree = match root {
        Some(r) => Tree::new(r, nodes, edges)?,
        None if nodes.is_empty() && edges.is_empty() => Tree::empty(),
        None => return Err(parse_err("root", "null root with non-empty tree")),
    };
    let tree = tree.with_paths(paths).map_err(|e| match e {
        CoreError::UnknownNode(id) => CoreError::Parse(format!("unknown node id {id}")),
        other => other,
    })?;
    Ok(tree)
}
