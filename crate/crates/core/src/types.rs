//! Shared domain types and the world/pixel coordinate convention.
//!
//! World coordinates live in `[0, 1]²` across the image domain. A world
//! point `(x, y)` maps to pixel `(row = y·(H−1), col = x·(W−1))`, rounded
//! half-up, and pixel centers map back exactly. Every module converts
//! through [`world_to_pixel`] and [`pixel_to_world`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the shared domain types.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("point ({x}, {y}) is outside the unit domain")]
    OutOfDomain { x: f64, y: f64 },
    #[error("grid must be at least 2x2, got {height}x{width}")]
    GridTooSmall { height: usize, width: usize },
    #[error("grid data length {len} does not match {height}x{width}")]
    DataLength {
        len: usize,
        height: usize,
        width: usize,
    },
    #[error("grid shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("duplicate node id {0}")]
    DuplicateNode(u32),
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("malformed tree document: {0}")]
    Parse(String),
}

/// A position in world units; both coordinates span `[0, 1]` over the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl WorldPoint {
    /// Checked constructor; rejects points outside `[0, 1]²` (and NaN).
    pub fn new(x: f64, y: f64) -> Result<Self, CoreError> {
        let p = Self { x, y };
        if p.in_domain() {
            Ok(p)
        } else {
            Err(CoreError::OutOfDomain { x, y })
        }
    }

    /// Clamps both coordinates into the domain.
    pub fn clamped(x: f64, y: f64) -> Self {
        Self {
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        }
    }

    pub fn in_domain(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_squared(&self, other: &WorldPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Row/column index into an [`ImageGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
}

impl PixelIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Rounds half-up, matching the world-to-pixel convention.
fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Maps a world point to the pixel whose center is nearest.
pub fn world_to_pixel(p: WorldPoint, height: usize, width: usize) -> Result<PixelIndex, CoreError> {
    if height < 2 || width < 2 {
        return Err(CoreError::GridTooSmall { height, width });
    }
    if !p.in_domain() {
        return Err(CoreError::OutOfDomain { x: p.x, y: p.y });
    }
    let col = round_half_up(p.x * (width - 1) as f64) as usize;
    let row = round_half_up(p.y * (height - 1) as f64) as usize;
    Ok(PixelIndex::new(row.min(height - 1), col.min(width - 1)))
}

/// World coordinates of a pixel center.
pub fn pixel_to_world(idx: PixelIndex, height: usize, width: usize) -> WorldPoint {
    WorldPoint {
        x: idx.col as f64 / (width - 1) as f64,
        y: idx.row as f64 / (height - 1) as f64,
    }
}

/// Continuous pixel coordinates `(col, row)` of a world point, unrounded.
pub fn world_to_pixel_f(p: WorldPoint, height: usize, width: usize) -> (f64, f64) {
    (p.x * (width - 1) as f64, p.y * (height - 1) as f64)
}

/// Number of children a node has, as a topology class.
///
/// The class index equals the child count, so `Leaf = 0` through
/// `Trifurcation = 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeTopology {
    Leaf,
    Single,
    Bifurcation,
    Trifurcation,
}

impl NodeTopology {
    pub const ALL: [NodeTopology; 4] = [
        NodeTopology::Leaf,
        NodeTopology::Single,
        NodeTopology::Bifurcation,
        NodeTopology::Trifurcation,
    ];

    pub fn child_count(self) -> usize {
        self as usize
    }

    pub fn from_child_count(n: usize) -> Option<Self> {
        Self::ALL.get(n).copied()
    }
}

/// Which topologies a dataset admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Planar synthetic angiography: no trifurcations, `K = 3`.
    #[default]
    Ssa,
    /// Projected-mesh style data with trifurcations, `K = 4`.
    Vrm,
}

impl Profile {
    pub fn allows_trifurcation(self) -> bool {
        matches!(self, Profile::Vrm)
    }

    /// Number of topology classes `K`.
    pub fn k_classes(self) -> usize {
        if self.allows_trifurcation() {
            4
        } else {
            3
        }
    }

    pub fn max_children(self) -> usize {
        self.k_classes() - 1
    }

    /// Whether a node with `n` children is valid here.
    pub fn valid_child_count(self, n: usize, is_root: bool) -> bool {
        if n > self.max_children() {
            return false;
        }
        if is_root {
            n >= 1
        } else {
            n != 1
        }
    }
}

/// Semantic tag carried by each raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelTag {
    Intensity,
    Prompt,
    PosX,
    PosY,
    PosXSin,
    PosYSin,
    Mask,
    Cost,
    Target,
}

/// Row-major `H×W` scalar raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
    tag: ChannelTag,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, tag: ChannelTag) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
            tag,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64, tag: ChannelTag) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
            tag,
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        data: Vec<f64>,
        tag: ChannelTag,
    ) -> Result<Self, CoreError> {
        if data.len() != height * width {
            return Err(CoreError::DataLength {
                len: data.len(),
                height,
                width,
            });
        }
        Ok(Self {
            height,
            width,
            data,
            tag,
        })
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        tag: ChannelTag,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            height,
            width,
            data,
            tag,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn tag(&self) -> ChannelTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: ChannelTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    /// Value at signed coordinates, `None` outside the grid.
    pub fn get_checked(&self, row: isize, col: isize) -> Option<f64> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(self.get(row as usize, col as usize))
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid) -> Result<(), CoreError> {
        if self.shape() != other.shape() {
            Err(CoreError::ShapeMismatch(self.shape(), other.shape()))
        } else {
            Ok(())
        }
    }
}

/// Default minimum keypoint separation in pixels.
pub const DEFAULT_MIN_SEPARATION_PX: f64 = 2.0;

/// Ordered candidate keypoints; index `i` of any step score refers to `points[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    points: Vec<WorldPoint>,
}

impl KeypointSet {
    /// Sorts row-major by pixel position on an `H×W` grid and merges points
    /// closer than the default two-pixel separation.
    pub fn new(points: Vec<WorldPoint>, height: usize, width: usize) -> Result<Self, CoreError> {
        Self::with_separation(points, DEFAULT_MIN_SEPARATION_PX, height, width)
    }

    /// Like [`KeypointSet::new`] with an explicit separation in pixels.
    ///
    /// When two points collide, the one earlier in row-major order is kept.
    pub fn with_separation(
        points: Vec<WorldPoint>,
        min_separation_px: f64,
        height: usize,
        width: usize,
    ) -> Result<Self, CoreError> {
        let mut keyed = points
            .into_iter()
            .map(|p| world_to_pixel(p, height, width).map(|idx| (idx, p)))
            .collect::<Result<Vec<_>, _>>()?;
        keyed.sort_by(|(ia, pa), (ib, pb)| {
            ia.cmp(ib)
                .then(pa.y.total_cmp(&pb.y))
                .then(pa.x.total_cmp(&pb.x))
        });
        let sx = (width - 1) as f64;
        let sy = (height - 1) as f64;
        let sep2 = min_separation_px * min_separation_px;
        let mut kept: Vec<WorldPoint> = Vec::with_capacity(keyed.len());
        for (_, p) in keyed {
            let clash = kept.iter().any(|q| {
                let dx = (p.x - q.x) * sx;
                let dy = (p.y - q.y) * sy;
                dx * dx + dy * dy < sep2
            });
            if !clash {
                kept.push(p);
            }
        }
        Ok(Self { points: kept })
    }

    /// Keeps the given order verbatim; no sorting or merging.
    pub fn from_ordered(points: Vec<WorldPoint>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[WorldPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<WorldPoint> {
        self.points.get(i).copied()
    }

    /// Index of the point nearest to `p`; ties go to the lower index.
    pub fn nearest(&self, p: &WorldPoint) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in self.points.iter().enumerate() {
            let d = q.distance_squared(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

impl fmt::Display for WorldPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}
