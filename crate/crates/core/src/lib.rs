//! Vessel tree extraction toolkit.
//!
//! Synthetic vascular tree generation and rendering, the model-facing
//! channel stack, recursive tree decoding with temperature sampling and
//! count-matrix merging, a minimal-cost-path baseline, and point-set
//! evaluation metrics.

pub mod baseline;
pub mod cli;
pub mod dataset;
pub mod decode;
pub mod io;
pub mod metrics;
pub mod prompt;
pub mod render;
pub mod ssagen;
pub mod tree;
pub mod types;

pub use tree::{tree_from_json, tree_to_json, validate_tree, Edge, Node, NodeId, Tree};
pub use types::{
    pixel_to_world, world_to_pixel, ChannelTag, CoreError, ImageGrid, KeypointSet, NodeTopology,
    PixelIndex, Profile, WorldPoint,
};
