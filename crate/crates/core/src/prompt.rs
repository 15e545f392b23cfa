//! Model-facing inputs: the channel stack, patch crops, keypoint NMS and
//! training-time keypoint jitter.
//!
//! The stack holds six channels in a fixed order: intensity, the
//! distance-to-query prompt `sin(α·d)`, absolute X/Y positions, and their
//! sinusoidal lifts `sin(α·x)`, `sin(α·y)`. Distances and positions are in
//! world units.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::types::{
    pixel_to_world, world_to_pixel, ChannelTag, CoreError, ImageGrid, KeypointSet, PixelIndex,
    WorldPoint,
};

pub const DEFAULT_ALPHA: f64 = 30.0;
pub const DEFAULT_PATCH_SIZE: usize = 51;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_NMS_WINDOW: usize = 5;
pub const DEFAULT_JITTER_SIGMA_PX: f64 = 1.5;

/// Channel order of every [`ChannelStack`].
pub const STACK_TAGS: [ChannelTag; 6] = [
    ChannelTag::Intensity,
    ChannelTag::Prompt,
    ChannelTag::PosX,
    ChannelTag::PosY,
    ChannelTag::PosXSin,
    ChannelTag::PosYSin,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("patch size must be odd, got {0}")]
    EvenPatchSize(usize),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Ordered channels sharing one `H×W` shape.
///
/// Channels are reference counted so the positional planes can be shared
/// between the stacks built for successive queries.
#[derive(Debug, Clone)]
pub struct ChannelStack {
    channels: Vec<Arc<ImageGrid>>,
    alpha: f64,
}

impl ChannelStack {
    pub fn channels(&self) -> &[Arc<ImageGrid>] {
        &self.channels
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    pub fn channel(&self, tag: ChannelTag) -> Option<&ImageGrid> {
        self.channels
            .iter()
            .find(|c| c.tag() == tag)
            .map(|c| c.as_ref())
    }

    pub fn intensity(&self) -> &ImageGrid {
        &self.channels[0]
    }

    /// Owned copies in stack order, e.g. for export.
    pub fn to_grids(&self) -> Vec<ImageGrid> {
        self.channels.iter().map(|c| c.as_ref().clone()).collect()
    }
}

/// `sin(α·d)` with `d` the world distance to `query`; all zeros without a query.
pub fn prompt_channel(
    query: Option<WorldPoint>,
    height: usize,
    width: usize,
    alpha: f64,
) -> ImageGrid {
    let Some(q) = query else {
        return ImageGrid::zeros(height, width, ChannelTag::Prompt);
    };
    ImageGrid::from_fn(height, width, ChannelTag::Prompt, |row, col| {
        let p = pixel_to_world(PixelIndex::new(row, col), height, width);
        (alpha * p.distance(&q)).sin()
    })
}

/// The four positional channels in stack order.
pub fn positional_channels(height: usize, width: usize, alpha: f64) -> [ImageGrid; 4] {
    let sx = (width - 1) as f64;
    let sy = (height - 1) as f64;
    [
        ImageGrid::from_fn(height, width, ChannelTag::PosX, |_, c| c as f64 / sx),
        ImageGrid::from_fn(height, width, ChannelTag::PosY, |r, _| r as f64 / sy),
        ImageGrid::from_fn(height, width, ChannelTag::PosXSin, |_, c| {
            (alpha * c as f64 / sx).sin()
        }),
        ImageGrid::from_fn(height, width, ChannelTag::PosYSin, |r, _| {
            (alpha * r as f64 / sy).sin()
        }),
    ]
}

/// Builds stacks for one image, caching everything except the prompt.
#[derive(Debug, Clone)]
pub struct StackBuilder {
    intensity: Arc<ImageGrid>,
    positional: [Arc<ImageGrid>; 4],
    alpha: f64,
}

impl StackBuilder {
    pub fn new(intensity: ImageGrid, alpha: f64) -> Result<Self, CoreError> {
        let (h, w) = intensity.shape();
        if h < 2 || w < 2 {
            return Err(CoreError::GridTooSmall {
                height: h,
                width: w,
            });
        }
        let positional = positional_channels(h, w, alpha).map(Arc::new);
        Ok(Self {
            intensity: Arc::new(intensity.with_tag(ChannelTag::Intensity)),
            positional,
            alpha,
        })
    }

    pub fn intensity(&self) -> &ImageGrid {
        &self.intensity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shape(&self) -> (usize, usize) {
        self.intensity.shape()
    }

    pub fn build(&self, query: Option<WorldPoint>) -> ChannelStack {
        let (h, w) = self.shape();
        let mut channels = Vec::with_capacity(STACK_TAGS.len());
        channels.push(Arc::clone(&self.intensity));
        channels.push(Arc::new(prompt_channel(query, h, w, self.alpha)));
        channels.extend(self.positional.iter().cloned());
        ChannelStack {
            channels,
            alpha: self.alpha,
        }
    }
}

/// `size×size` crops of every channel centered on the pixel of `center`,
/// zero padded outside the grid.
pub fn crop_patch(
    stack: &ChannelStack,
    center: WorldPoint,
    size: usize,
) -> Result<Vec<ImageGrid>, PromptError> {
    if size % 2 == 0 {
        return Err(PromptError::EvenPatchSize(size));
    }
    let (h, w) = stack.shape();
    let c = world_to_pixel(center, h, w)?;
    let half = (size / 2) as isize;
    let (r0, c0) = (c.row as isize - half, c.col as isize - half);
    Ok(stack
        .channels
        .iter()
        .map(|ch| {
            ImageGrid::from_fn(size, size, ch.tag(), |r, col| {
                ch.get_checked(r0 + r as isize, c0 + col as isize)
                    .unwrap_or(0.0)
            })
        })
        .collect())
}

/// Non-maximum suppression over a `(2·window+1)²` neighborhood.
///
/// A pixel is kept when its value exceeds `threshold` and no neighbor is
/// larger or equal and earlier in row-major order; equal plateaus thus
/// yield their smallest `(row, col)` pixel. Output is row-major.
pub fn nms_extract(grid: &ImageGrid, threshold: f64, window: usize) -> KeypointSet {
    let (h, w) = grid.shape();
    let win = window as isize;
    let mut points = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let v = grid.get(row, col);
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for dr in -win..=win {
                for dc in -win..=win {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let Some(u) = grid.get_checked(row as isize + dr, col as isize + dc) else {
                        continue;
                    };
                    let earlier = dr < 0 || (dr == 0 && dc < 0);
                    if u > v || (u == v && earlier) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                points.push(pixel_to_world(PixelIndex::new(row, col), h, w));
            }
        }
    }
    KeypointSet::from_ordered(points)
}

/// Displaces each keypoint by Gaussian noise of `sigma_px` pixels per
/// axis, clamped to the domain. Order is preserved.
pub fn jitter_keypoints(
    kps: &KeypointSet,
    sigma_px: f64,
    seed: u64,
    height: usize,
    width: usize,
) -> KeypointSet {
    if sigma_px <= 0.0 {
        return kps.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_px).expect("positive sigma");
    let sx = (width - 1) as f64;
    let sy = (height - 1) as f64;
    let points = kps
        .points()
        .iter()
        .map(|p| {
            let dx = normal.sample(&mut rng) / sx;
            let dy = normal.sample(&mut rng) / sy;
            WorldPoint::clamped(p.x + dx, p.y + dy)
        })
        .collect();
    KeypointSet::from_ordered(points)
}
