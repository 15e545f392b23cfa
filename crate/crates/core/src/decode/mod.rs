//! Recursive tree decoding.
//!
//! A [`StepScorer`] answers one question: given the image stack and a query
//! node, which candidate keypoints are its children, and what topology does
//! each candidate have? [`decode_tree`] starts from the root with an empty
//! prompt and expands nodes breadth first. The child count of each node is
//! sampled from its temperature-scaled topology weights when the node is
//! selected; the children themselves are the top-k unused candidates by
//! selection score. [`stochastic_decode`] repeats this `n_dec` times with
//! independent random streams and merges the samples by parent-child vote.

mod external;
mod heuristic;
mod oracle;

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{ChannelStack, StackBuilder};
use crate::tree::{Edge, Node, NodeId, Tree};
use crate::types::{CoreError, KeypointSet, NodeTopology, Profile, WorldPoint};

pub use external::{ExternalScorer, PROTOCOL_VERSION};
pub use heuristic::{HeuristicConfig, HeuristicScorer};
pub use oracle::{
    ExactOracle, NoisyOracle, DEFAULT_LOGIT_MAGNITUDE, DEFAULT_MATCH_TOLERANCE, DEFAULT_NOISE_ETA,
};

pub const DEFAULT_LAMBDA_T: f64 = 0.1;
pub const DEFAULT_LAMBDA_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("root index {root} out of range for {len} keypoints")]
    RootOutOfRange { root: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Temperature softmax `w_i = exp(v_i/γ) / Σ_j exp(v_j/γ)`.
pub fn softmax_temperature(logits: &[f64], gamma: f64) -> Result<Vec<f64>, DecodeError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DecodeError::InvalidGamma(gamma));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| ((v - max) / gamma).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Inverse-CDF draw from `weights` using a uniform `u` in `[0, 1)`.
fn sample_from(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws a class from the temperature softmax of `logits`.
pub fn sample_class(logits: &[f64], gamma: f64, rng: &mut impl Rng) -> Result<usize, DecodeError> {
    let w = softmax_temperature(logits, gamma)?;
    Ok(sample_from(&w, rng.random::<f64>()))
}

/// Scorer output for one recursive step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScore {
    /// One raw selection score per candidate.
    pub selection: Vec<f64>,
    /// One row of `K` topology logits per candidate.
    pub topology_logits: Vec<Vec<f64>>,
}

impl StepScore {
    /// Checks the shape against `P` candidates and `K` classes.
    pub fn check(&self, p: usize, k: usize) -> Result<(), DecodeError> {
        if self.selection.len() != p || self.topology_logits.len() != p {
            return Err(DecodeError::Shape(format!(
                "expected {p} candidates, got selection {} and topology {}",
                self.selection.len(),
                self.topology_logits.len()
            )));
        }
        if let Some(i) = self.topology_logits.iter().position(|r| r.len() != k) {
            return Err(DecodeError::Shape(format!(
                "topology row {i} has {} classes, expected {k}",
                self.topology_logits[i].len()
            )));
        }
        let finite = self
            .selection
            .iter()
            .chain(self.topology_logits.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(DecodeError::Scorer("non-finite score".into()));
        }
        Ok(())
    }
}

/// Ground truth for one step: child indicator and topology class per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTarget {
    pub selection_target: Vec<f64>,
    pub topology_target: Vec<NodeTopology>,
}

impl StepTarget {
    /// One-hot row of length `k` for candidate `i`.
    pub fn one_hot(&self, i: usize, k: usize) -> Vec<f64> {
        let mut row = vec![0.0; k];
        row[self.topology_target[i].child_count()] = 1.0;
        row
    }
}

/// `λ_t · mean cross-entropy(topology) + λ_s · mean squared error(selection)`.
pub fn step_loss(
    score: &StepScore,
    target: &StepTarget,
    lambda_t: f64,
    lambda_s: f64,
) -> Result<f64, DecodeError> {
    let p = score.selection.len();
    if score.topology_logits.len() != p
        || target.selection_target.len() != p
        || target.topology_target.len() != p
    {
        return Err(DecodeError::Shape(
            "step score and target lengths differ".into(),
        ));
    }
    if p == 0 {
        return Ok(0.0);
    }
    let mut xe = 0.0;
    for (row, cls) in score.topology_logits.iter().zip(&target.topology_target) {
        let c = cls.child_count();
        if c >= row.len() {
            return Err(DecodeError::Shape(format!(
                "target class {c} outside {} logits",
                row.len()
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        xe += lse - row[c];
    }
    let mse: f64 = score
        .selection
        .iter()
        .zip(&target.selection_target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(lambda_t * xe / p as f64 + lambda_s * mse / p as f64)
}

/// Everything a scorer may look at for one step. The channel stack is
/// built on first access, so scorers that ignore the image pay nothing.
pub struct StepInput<'a> {
    pub keypoints: &'a KeypointSet,
    pub query: Option<WorldPoint>,
    pub profile: Profile,
    builder: &'a StackBuilder,
    stack: OnceLock<ChannelStack>,
}

impl<'a> StepInput<'a> {
    pub fn new(
        builder: &'a StackBuilder,
        keypoints: &'a KeypointSet,
        query: Option<WorldPoint>,
        profile: Profile,
    ) -> Self {
        Self {
            keypoints,
            query,
            profile,
            builder,
            stack: OnceLock::new(),
        }
    }

    pub fn stack(&self) -> &ChannelStack {
        self.stack.get_or_init(|| self.builder.build(self.query))
    }

    pub fn builder(&self) -> &StackBuilder {
        self.builder
    }

    pub fn k_classes(&self) -> usize {
        self.profile.k_classes()
    }
}

/// One recursive step of child selection and topology prediction.
///
/// Implementations must return identical scores for identical inputs.
pub trait StepScorer: Send + Sync {
    fn score(&self, input: &StepInput<'_>) -> Result<StepScore, DecodeError>;
}

/// How children are chosen from selection scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// The `k` best unused candidates, `k` from the sampled topology.
    #[default]
    TopK,
    /// Every unused candidate scoring above the threshold; the sampled
    /// topology only decides whether the node is expanded at all.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub gamma: f64,
    pub n_dec: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            n_dec: 1,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(DecodeError::InvalidGamma(self.gamma));
        }
        if self.n_dec == 0 {
            return Err(DecodeError::InvalidParams(
                "n_dec must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Random stream for the topology draw of `node` in sample `sample`.
pub fn keyed_rng(seed: u64, sample: u32, node: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(sample) << 32) | u64::from(node));
    rng
}

/// Shared inputs of a decode over one image.
pub struct DecodeContext<'a> {
    pub scorer: &'a dyn StepScorer,
    pub builder: &'a StackBuilder,
    pub keypoints: &'a KeypointSet,
    pub profile: Profile,
    pub rule: SelectionRule,
    cache: Mutex<HashMap<Option<usize>, Arc<StepScore>>>,
}

impl<'a> DecodeContext<'a> {
    pub fn new(
        scorer: &'a dyn StepScorer,
        builder: &'a StackBuilder,
        keypoints: &'a KeypointSet,
        profile: Profile,
    ) -> Self {
        Self {
            scorer,
            builder,
            keypoints,
            profile,
            rule: SelectionRule::TopK,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.rule = rule;
        self
    }

    /// Scores for the query keypoint (`None` for the root step). Scorers are
    /// deterministic, so results are memoized across samples.
    pub fn score(&self, query: Option<usize>) -> Result<Arc<StepScore>, DecodeError> {
        if let Some(s) = self.cache.lock().expect("score cache poisoned").get(&query) {
            return Ok(Arc::clone(s));
        }
        let q = query.map(|i| self.keypoints.points()[i]);
        let input = StepInput::new(self.builder, self.keypoints, q, self.profile);
        let score = self.scorer.score(&input)?;
        score.check(self.keypoints.len(), self.profile.k_classes())?;
        let score = Arc::new(score);
        self.cache
            .lock()
            .expect("score cache poisoned")
            .insert(query, Arc::clone(&score));
        Ok(score)
    }

    /// Number of scorer calls made so far (distinct queries).
    pub fn scorer_calls(&self) -> usize {
        self.cache.lock().expect("score cache poisoned").len()
    }
}

/// Topology classes a node may take.
fn allowed_classes(profile: Profile, is_root: bool) -> Vec<usize> {
    let first = if is_root { 1 } else { 0 };
    (first..profile.k_classes())
        .filter(|&c| c != 1 || is_root)
        .collect()
}

/// Samples a topology for keypoint `node` from its logit row, restricted
/// to classes valid for its role.
pub fn sample_topology(
    row: &[f64],
    profile: Profile,
    is_root: bool,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<NodeTopology, DecodeError> {
    let classes = allowed_classes(profile, is_root);
    let logits: Vec<f64> = classes.iter().map(|&c| row[c]).collect();
    let pick = sample_class(&logits, gamma, rng)?;
    Ok(NodeTopology::from_child_count(classes[pick]).expect("class within K"))
}

/// Which keypoints are already part of the tree being decoded.
#[derive(Debug, Clone)]
pub struct DecodeState {
    used: Vec<bool>,
}

impl DecodeState {
    pub fn new(p: usize) -> Self {
        Self {
            used: vec![false; p],
        }
    }

    pub fn is_used(&self, i: usize) -> bool {
        self.used[i]
    }

    pub fn mark(&mut self, i: usize) {
        self.used[i] = true;
    }
}

/// The node being expanded in a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepQuery {
    /// Initial step with an empty prompt; the root's own topology is
    /// sampled from this step's scores.
    Root(usize),
    /// Expansion of a selected node whose child count is already fixed.
    Node { index: usize, children: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub children: Vec<usize>,
    pub topologies: Vec<NodeTopology>,
    /// Sampled topology of the root, on the root step only.
    pub root_topology: Option<NodeTopology>,
    /// Fewer unused candidates than requested children.
    pub truncated: bool,
}

/// Candidates ordered by selection score, best first; ties by lower index.
fn ranked_unused(selection: &[f64], state: &DecodeState) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..selection.len())
        .filter(|&i| !state.is_used(i))
        .collect();
    idx.sort_by(|&a, &b| selection[b].total_cmp(&selection[a]).then(a.cmp(&b)));
    idx
}

/// One recursive step: score, select children, sample their topologies.
pub fn decode_step(
    ctx: &DecodeContext<'_>,
    query: StepQuery,
    state: &mut DecodeState,
    gamma: f64,
    seed: u64,
    sample: u32,
) -> Result<StepOutcome, DecodeError> {
    let (query_index, score, k, root_topology) = match query {
        StepQuery::Node { children: 0, .. } => {
            return Ok(StepOutcome {
                children: Vec::new(),
                topologies: Vec::new(),
                root_topology: None,
                truncated: false,
            })
        }
        StepQuery::Node { index, children } => (index, ctx.score(Some(index))?, children, None),
        StepQuery::Root(root) => {
            let score = ctx.score(None)?;
            let mut rng = keyed_rng(seed, sample, root as u32);
            let topo = sample_topology(
                &score.topology_logits[root],
                ctx.profile,
                true,
                gamma,
                &mut rng,
            )?;
            (root, score, topo.child_count(), Some(topo))
        }
    };
    state.mark(query_index);
    let ranked = ranked_unused(&score.selection, state);
    let (children, truncated) = match ctx.rule {
        SelectionRule::TopK => {
            let take = k.min(ranked.len());
            (ranked[..take].to_vec(), take < k)
        }
        SelectionRule::Threshold(t) => (
            ranked
                .into_iter()
                .filter(|&i| score.selection[i] > t)
                .collect(),
            false,
        ),
    };
    let mut topologies = Vec::with_capacity(children.len());
    for &c in &children {
        state.mark(c);
        let mut rng = keyed_rng(seed, sample, c as u32);
        topologies.push(sample_topology(
            &score.topology_logits[c],
            ctx.profile,
            false,
            gamma,
            &mut rng,
        )?);
    }
    Ok(StepOutcome {
        children,
        topologies,
        root_topology,
        truncated,
    })
}

/// A decoded tree plus the keypoints whose expansion ran out of candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTree {
    pub tree: Tree,
    pub truncated: Vec<usize>,
}

/// Builds a tree over keypoint indices, ids equal to indices.
pub fn tree_from_edges(
    keypoints: &KeypointSet,
    root: usize,
    edges: &[(usize, usize)],
) -> Result<Tree, CoreError> {
    let mut order = vec![root];
    order.extend(edges.iter().map(|&(_, c)| c));
    let nodes = order
        .iter()
        .map(|&i| Node {
            id: NodeId(i as u32),
            position: keypoints.points()[i],
            radius: 0.0,
        })
        .collect();
    let edges = edges
        .iter()
        .map(|&(p, c)| Edge::new(NodeId(p as u32), NodeId(c as u32)))
        .collect();
    Tree::new(NodeId(root as u32), nodes, edges)
}

/// Removes non-root nodes with exactly one child by linking their parent to
/// their child directly. Edges stay in breadth-first order.
pub fn splice_single_children(root: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(p, c) in edges {
        children.entry(p).or_default().push(c);
    }
    let mut out = Vec::with_capacity(edges.len());
    let mut queue = VecDeque::from([root]);
    while let Some(p) = queue.pop_front() {
        for &c in children.get(&p).map(Vec::as_slice).unwrap_or(&[]) {
            let mut c = c;
            while let Some([only]) = children.get(&c).map(Vec::as_slice) {
                c = *only;
            }
            out.push((p, c));
            queue.push_back(c);
        }
    }
    out
}

/// Breadth-first recursive decode from `root` for sample index `sample`.
pub fn decode_tree(
    ctx: &DecodeContext<'_>,
    root: usize,
    gamma: f64,
    seed: u64,
    sample: u32,
) -> Result<DecodedTree, DecodeError> {
    let p = ctx.keypoints.len();
    if root >= p {
        return Err(DecodeError::RootOutOfRange { root, len: p });
    }
    let mut state = DecodeState::new(p);
    let mut edges = Vec::new();
    let mut truncated = Vec::new();
    let mut queue = VecDeque::from([StepQuery::Root(root)]);
    while let Some(q) = queue.pop_front() {
        let parent = match q {
            StepQuery::Root(r) => r,
            StepQuery::Node { index, .. } => index,
        };
        let out = decode_step(ctx, q, &mut state, gamma, seed, sample)?;
        if out.truncated {
            truncated.push(parent);
        }
        for (&c, t) in out.children.iter().zip(&out.topologies) {
            edges.push((parent, c));
            queue.push_back(StepQuery::Node {
                index: c,
                children: t.child_count(),
            });
        }
    }
    let edges = splice_single_children(root, &edges);
    Ok(DecodedTree {
        tree: tree_from_edges(ctx.keypoints, root, &edges)?,
        truncated,
    })
}

/// `n_dec` sampled trees, their parent-child tally and the merged tree.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRun {
    pub samples: Vec<Tree>,
    /// `count_matrix[p][c]`: number of samples containing edge `p → c`.
    pub count_matrix: Vec<Vec<u32>>,
    pub merged: Tree,
    /// Number of samples in which some expansion was truncated.
    pub truncated_samples: usize,
}

/// Tallies parent-child pairs over samples whose ids are keypoint indices.
pub fn count_matrix(samples: &[Tree], p: usize) -> Vec<Vec<u32>> {
    let mut m = vec![vec![0u32; p]; p];
    for t in samples {
        for e in t.edges() {
            m[e.parent.0 as usize][e.child.0 as usize] += 1;
        }
    }
    m
}

/// Repeated decodes with per-sample random streams, then merge.
pub fn stochastic_decode(
    ctx: &DecodeContext<'_>,
    root: usize,
    params: &SamplingParams,
) -> Result<DecodeRun, DecodeError> {
    params.validate()?;
    let decoded: Vec<DecodedTree> = (0..params.n_dec as u32)
        .into_par_iter()
        .map(|s| decode_tree(ctx, root, params.gamma, params.seed, s))
        .collect::<Result<_, _>>()?;
    let truncated_samples = decoded.iter().filter(|d| !d.truncated.is_empty()).count();
    let samples: Vec<Tree> = decoded.into_iter().map(|d| d.tree).collect();
    let counts = count_matrix(&samples, ctx.keypoints.len());
    let merged = merge_trees(&samples, &counts, ctx.keypoints, root)?;
    Ok(DecodeRun {
        samples,
        count_matrix: counts,
        merged,
        truncated_samples,
    })
}

/// Vote-based merge of sampled trees.
///
/// Breadth first from `root`: a parent keeps the child count it has most
/// often among the samples that contain it (ties to the larger count), and
/// takes that many unused candidates with the highest parent-child counts
/// (ties to the lower index, zero counts never).
pub fn merge_trees(
    samples: &[Tree],
    counts: &[Vec<u32>],
    keypoints: &KeypointSet,
    root: usize,
) -> Result<Tree, DecodeError> {
    let p = keypoints.len();
    if root >= p {
        return Err(DecodeError::RootOutOfRange { root, len: p });
    }
    if counts.len() != p || counts.iter().any(|r| r.len() != p) {
        return Err(DecodeError::Shape(format!("count matrix must be {p}x{p}")));
    }
    let mut used = vec![false; p];
    used[root] = true;
    let mut edges = Vec::new();
    let mut queue = VecDeque::from([root]);
    while let Some(parent) = queue.pop_front() {
        let k = modal_child_count(samples, parent);
        let mut ranked: Vec<usize> = (0..p)
            .filter(|&c| !used[c] && counts[parent][c] > 0)
            .collect();
        ranked.sort_by(|&a, &b| counts[parent][b].cmp(&counts[parent][a]).then(a.cmp(&b)));
        for &c in ranked.iter().take(k) {
            used[c] = true;
            edges.push((parent, c));
            queue.push_back(c);
        }
    }
    let edges = splice_single_children(root, &edges);
    Ok(tree_from_edges(keypoints, root, &edges)?)
}

/// Most frequent child count of `node` over samples containing it; ties go
/// to the larger count, and 0 when no sample contains it.
pub fn modal_child_count(samples: &[Tree], node: usize) -> usize {
    let id = NodeId(node as u32);
    let mut tally: HashMap<usize, usize> = HashMap::new();
    for t in samples.iter().filter(|t| t.node(id).is_some()) {
        *tally.entry(t.children(id).len()).or_default() += 1;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map_or(0, |(k, _)| k)
}
