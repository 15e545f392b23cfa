//! One synthetic case: a grown tree, its keypoints and its rendered image.

use crate::io::KeypointFile;
use crate::render::{add_perlin, render_tree, RenderConfig};
use crate::ssagen::{grow_tree, has_crossing, GenerationError, GrowthConfig};
use crate::tree::{validate_tree, Tree};
use crate::types::{CoreError, ImageGrid, KeypointSet, Profile};

/// Growth attempts per case before giving up.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 8;

/// Keypoints of a tree in row-major order, with the root's index.
pub fn tree_keypoints(tree: &Tree, height: usize, width: usize) -> Result<KeypointFile, CoreError> {
    let points = tree.nodes().iter().map(|n| n.position).collect();
    let keypoints = KeypointSet::new(points, height, width)?;
    let root = tree
        .root()
        .and_then(|r| tree.position(r))
        .and_then(|p| keypoints.points().iter().position(|q| *q == p));
    Ok(KeypointFile { keypoints, root })
}

#[derive(Debug, Clone)]
pub struct Case {
    /// Growth seed that produced the tree.
    pub seed: u64,
    pub tree: Tree,
    pub keypoints: KeypointFile,
    pub image: ImageGrid,
    pub has_crossing: bool,
}

/// Growth seed of attempt `attempt` for a case seeded with `case_seed`.
pub fn attempt_seed(case_seed: u64, attempt: u32) -> u64 {
    case_seed.wrapping_add(u64::from(attempt) << 32)
}

/// Grows and renders one case.
///
/// An attempt is rejected when growth fails, the tree breaks an invariant,
/// or two keypoints fall within the merge distance; the next attempt uses
/// [`attempt_seed`]. The noise seed is offset by the growth seed.
pub fn generate_case(
    growth: &GrowthConfig,
    render: &RenderConfig,
    case_seed: u64,
    max_attempts: u32,
) -> Result<Case, GenerationError> {
    render.validate()?;
    let (h, w) = (render.height, render.width);
    let mut last_err = None;
    for attempt in 0..max_attempts.max(1) {
        let seed = attempt_seed(case_seed, attempt);
        let cfg = GrowthConfig {
            seed,
            ..growth.clone()
        };
        let tree = match grow_tree(&cfg) {
            Ok(t) => t,
            Err(e @ GenerationError::InvalidConfig(_)) => return Err(e),
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        if !validate_tree(&tree, Profile::Ssa).is_valid() {
            continue;
        }
        let keypoints = tree_keypoints(&tree, h, w)?;
        if keypoints.keypoints.len() != tree.len() || keypoints.root.is_none() {
            continue;
        }
        let noise = RenderConfig {
            noise_seed: render.noise_seed.wrapping_add(seed),
            ..render.clone()
        };
        let image = add_perlin(&render_tree(&tree, &noise), &noise);
        let has_crossing = has_crossing(&tree);
        return Ok(Case {
            seed,
            tree,
            keypoints,
            image,
            has_crossing,
        });
    }
    Err(last_err.unwrap_or(GenerationError::Stalled { seed: case_seed }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoints_cover_tree_and_root() {
        let cfg = GrowthConfig::with_seed(4);
        let render = RenderConfig::default();
        let case = generate_case(&cfg, &render, 4, DEFAULT_MAX_ATTEMPTS).unwrap();
        assert_eq!(case.keypoints.keypoints.len(), case.tree.len());
        let root = case.keypoints.root.unwrap();
        assert_eq!(
            case.keypoints.keypoints.points()[root],
            case.tree.position(case.tree.root().unwrap()).unwrap()
        );
        assert_eq!(case.image.shape(), (250, 250));
        let again = generate_case(&cfg, &render, 4, DEFAULT_MAX_ATTEMPTS).unwrap();
        assert_eq!(again.image, case.image);
        assert_eq!(again.tree, case.tree);
    }
}
