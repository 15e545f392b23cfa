//! Scorers that read a hidden ground-truth tree.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DecodeError, StepInput, StepScore, StepScorer, StepTarget};
use crate::tree::{NodeId, Tree};
use crate::types::{KeypointSet, NodeTopology, WorldPoint};

/// Logit magnitude `M`: the true class gets `+M`, all others `−M`.
pub const DEFAULT_LOGIT_MAGNITUDE: f64 = 10.0;
/// Maximum world distance between a candidate and the tree node it stands for.
pub const DEFAULT_MATCH_TOLERANCE: f64 = 0.02;

/// Emits the true children of the query (selection 1/0) and the true child
/// count of every candidate (logits `±M`).
///
/// Candidates are paired one-to-one with tree nodes, closest pairs first,
/// within the match tolerance. Unpaired candidates score as leaves that are
/// nobody's child. The query is the tree node paired with the candidate
/// nearest to the query point; without a query the tree root is used.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    tree: Tree,
    magnitude: f64,
    tolerance: f64,
}

impl ExactOracle {
    pub fn new(tree: Tree) -> Self {
        Self {
            tree,
            magnitude: DEFAULT_LOGIT_MAGNITUDE,
            tolerance: DEFAULT_MATCH_TOLERANCE,
        }
    }

    pub fn with_magnitude(mut self, m: f64) -> Self {
        self.magnitude = m;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    /// Tree node paired with each candidate.
    pub fn match_candidates(&self, keypoints: &KeypointSet) -> Vec<Option<NodeId>> {
        let mut pairs = Vec::new();
        for (i, p) in keypoints.points().iter().enumerate() {
            for n in self.tree.nodes() {
                let d = p.distance(&n.position);
                if d <= self.tolerance {
                    pairs.push((d, i, n.id));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut by_candidate = vec![None; keypoints.len()];
        let mut taken = HashMap::new();
        for (_, i, id) in pairs {
            if by_candidate[i].is_none() && !taken.contains_key(&id) {
                by_candidate[i] = Some(id);
                taken.insert(id, i);
            }
        }
        by_candidate
    }

    fn query_node(
        &self,
        keypoints: &KeypointSet,
        matched: &[Option<NodeId>],
        query: Option<WorldPoint>,
    ) -> Option<NodeId> {
        match query {
            None => self.tree.root(),
            Some(q) => keypoints.nearest(&q).and_then(|i| matched[i]),
        }
    }

    /// Ground-truth selection and topology for a step.
    pub fn target(&self, keypoints: &KeypointSet, query: Option<WorldPoint>) -> StepTarget {
        let matched = self.match_candidates(keypoints);
        let qnode = self.query_node(keypoints, &matched, query);
        let children = qnode.map(|q| self.tree.children(q)).unwrap_or(&[]);
        let selection_target = matched
            .iter()
            .map(|m| match m {
                Some(id) if children.contains(id) => 1.0,
                _ => 0.0,
            })
            .collect();
        let topology_target = matched
            .iter()
            .map(|m| {
                let n = m.map_or(0, |id| self.tree.children(id).len());
                NodeTopology::from_child_count(n).unwrap_or(NodeTopology::Trifurcation)
            })
            .collect();
        StepTarget {
            selection_target,
            topology_target,
        }
    }

    fn exact_score(&self, input: &StepInput<'_>) -> StepScore {
        let k = input.k_classes();
        let target = self.target(input.keypoints, input.query);
        let m = self.magnitude;
        let topology_logits = target
            .topology_target
            .iter()
            .map(|t| {
                let c = t.child_count().min(k - 1);
                (0..k).map(|j| if j == c { m } else { -m }).collect()
            })
            .collect();
        StepScore {
            selection: target.selection_target,
            topology_logits,
        }
    }
}

impl StepScorer for ExactOracle {
    fn score(&self, input: &StepInput<'_>) -> Result<StepScore, DecodeError> {
        Ok(self.exact_score(input))
    }
}

/// [`ExactOracle`] with seeded Gaussian noise added to its scores.
///
/// Noise on topology logits has std `eta`; noise on selection scores has
/// std `selection_eta` (0 by default). The noise for a candidate depends
/// only on the seed, the query position and the candidate index, so the
/// scorer is deterministic like a fixed network.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    exact: ExactOracle,
    eta: f64,
    selection_eta: f64,
    seed: u64,
}

pub const DEFAULT_NOISE_ETA: f64 = 2.0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoisyOracle {
    pub fn new(tree: Tree, eta: f64, seed: u64) -> Self {
        Self {
            exact: ExactOracle::new(tree),
            eta,
            selection_eta: 0.0,
            seed,
        }
    }

    pub fn with_selection_eta(mut self, s: f64) -> Self {
        self.selection_eta = s;
        self
    }

    pub fn with_exact(mut self, exact: ExactOracle) -> Self {
        self.exact = exact;
        self
    }

    fn query_key(&self, query: Option<WorldPoint>) -> u64 {
        let base = splitmix64(self.seed);
        match query {
            None => splitmix64(base ^ u64::MAX),
            Some(q) => splitmix64(splitmix64(base ^ q.x.to_bits()) ^ q.y.to_bits()),
        }
    }
}

impl StepScorer for NoisyOracle {
    fn score(&self, input: &StepInput<'_>) -> Result<StepScore, DecodeError> {
        let mut s = self.exact.exact_score(input);
        if self.eta <= 0.0 && self.selection_eta <= 0.0 {
            return Ok(s);
        }
        let key = self.query_key(input.query);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for (i, (sel, row)) in s
            .selection
            .iter_mut()
            .zip(&mut s.topology_logits)
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            rng.set_stream(i as u64);
            for v in row.iter_mut() {
                *v += self.eta * unit.sample(&mut rng);
            }
            *sel += self.selection_eta * unit.sample(&mut rng);
        }
        Ok(s)
    }
}
