//! Rasterization of vessel trees and keypoint target grids.
//!
//! Vessels are tubes of constant radius swept along each edge's centerline,
//! lying in the image plane. An orthographic ray through a pixel at in-plane
//! distance `s` from the centerline crosses the tube over a chord of length
//! `2·√(r² − s²)`. Chords from different edges add up, so crossings and
//! junctions appear brighter. Radii are converted to pixels with the column
//! scale `W − 1`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tree::Tree;
use crate::types::{
    world_to_pixel, world_to_pixel_f, ChannelTag, CoreError, ImageGrid, KeypointSet,
};

/// Upper clamp applied after noise is added.
pub const MAX_INTENSITY: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub noise_octaves: u32,
    pub noise_amplitude: f64,
    pub noise_seed: u64,
    /// Lattice cells across the image for the coarsest octave.
    pub noise_base_frequency: f64,
    /// Keypoint blob standard deviation, pixels.
    pub blob_sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 250,
            width: 250,
            noise_octaves: 4,
            noise_amplitude: 0.15,
            noise_seed: 0,
            noise_base_frequency: 4.0,
            blob_sigma: 2.0,
        }
    }
}

impl RenderConfig {
    pub fn with_size(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.height < 16 || self.width < 16 {
            return Err(CoreError::GridTooSmall {
                height: self.height,
                width: self.width,
            });
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(CoreError::Parse(
                "noise_amplitude must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((px - a.0) * abx + (py - a.1) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - a.0 - t * abx).hypot(py - a.1 - t * aby)
}

/// Unnormalized chord-length raster in pixels: the sum over edges of the
/// ray chord through each edge's tube.
pub fn render_chords(tree: &Tree, height: usize, width: usize) -> ImageGrid {
    let mut grid = ImageGrid::zeros(height, width, ChannelTag::Intensity);
    let scale = (width - 1) as f64;
    for edge in tree.edges() {
        let Some(child) = tree.node(edge.child) else {
            continue;
        };
        let r = child.radius * scale;
        if r <= 0.0 {
            continue;
        }
        let pts: Vec<(f64, f64)> = tree
            .edge_polyline(edge)
            .into_iter()
            .map(|p| world_to_pixel_f(p, height, width))
            .collect();
        let (mut cmin, mut cmax, mut rmin, mut rmax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(c, rr) in &pts {
            cmin = cmin.min(c);
            cmax = cmax.max(c);
            rmin = rmin.min(rr);
            rmax = rmax.max(rr);
        }
        let c0 = (cmin - r).floor().max(0.0) as usize;
        let c1 = ((cmax + r).ceil() as usize).min(width - 1);
        let r0 = (rmin - r).floor().max(0.0) as usize;
        let r1 = ((rmax + r).ceil() as usize).min(height - 1);
        let r2 = r * r;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (x, y) = (col as f64, row as f64);
                let s = if pts.len() == 1 {
                    (x - pts[0].0).hypot(y - pts[0].1)
                } else {
                    pts.windows(2)
                        .map(|w| point_segment_distance(x, y, w[0], w[1]))
                        .fold(f64::INFINITY, f64::min)
                };
                if s < r {
                    let v = grid.get(row, col) + 2.0 * (r2 - s * s).sqrt();
                    grid.set(row, col, v);
                }
            }
        }
    }
    grid
}

/// Noiseless render normalized so the brightest pixel is 1.0.
pub fn render_tree(tree: &Tree, config: &RenderConfig) -> ImageGrid {
    let mut grid = render_chords(tree, config.height, config.width);
    let max = grid.max();
    if max > 0.0 {
        for v in grid.data_mut() {
            *v /= max;
        }
    }
    grid
}

/// Classic gradient-lattice noise on a 256-entry permutation table.
struct Perlin {
    perm: [u8; 512],
    offset: (f64, f64),
}

const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (
        std::f64::consts::FRAC_1_SQRT_2,
        std::f64::consts::FRAC_1_SQRT_2,
    ),
    (
        -std::f64::consts::FRAC_1_SQRT_2,
        std::f64::consts::FRAC_1_SQRT_2,
    ),
    (
        std::f64::consts::FRAC_1_SQRT_2,
        -std::f64::consts::FRAC_1_SQRT_2,
    ),
    (
        -std::f64::consts::FRAC_1_SQRT_2,
        -std::f64::consts::FRAC_1_SQRT_2,
    ),
];

impl Perlin {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(&mut rng);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        let offset = (rng.random_range(0.0..256.0), rng.random_range(0.0..256.0));
        Self { perm, offset }
    }

    fn grad(&self, ix: i64, iy: i64, dx: f64, dy: f64) -> f64 {
        let h = self.perm[(self.perm[(ix & 255) as usize] as usize + (iy & 255) as usize) & 511];
        let g = GRADIENTS[(h & 7) as usize];
        g.0 * dx + g.1 * dy
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (x, y) = (x + self.offset.0, y + self.offset.1);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (u, v) = (fade(fx), fade(fy));
        let n00 = self.grad(ix, iy, fx, fy);
        let n10 = self.grad(ix + 1, iy, fx - 1.0, fy);
        let n01 = self.grad(ix, iy + 1, fx, fy - 1.0);
        let n11 = self.grad(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
        let nx0 = n00 + u * (n10 - n00);
        let nx1 = n01 + u * (n11 - n01);
        nx0 + v * (nx1 - nx0)
    }
}

/// Multi-octave noise field: `Σ_o amplitude·0.5^o · perlin(2^o·base, seed + o)`.
pub fn perlin_field(config: &RenderConfig) -> ImageGrid {
    let (h, w) = (config.height, config.width);
    let octaves: Vec<(Perlin, f64, f64)> = (0..config.noise_octaves)
        .map(|o| {
            (
                Perlin::new(config.noise_seed.wrapping_add(o as u64)),
                config.noise_base_frequency * 2f64.powi(o as i32),
                config.noise_amplitude * 0.5f64.powi(o as i32),
            )
        })
        .collect();
    ImageGrid::from_fn(h, w, ChannelTag::Intensity, |row, col| {
        let x = col as f64 / (w - 1) as f64;
        let y = row as f64 / (h - 1) as f64;
        octaves
            .iter()
            .map(|(p, f, a)| a * p.sample(x * f, y * f))
            .sum()
    })
}

/// Adds multi-scale noise and clamps to `[0, MAX_INTENSITY]`.
pub fn add_perlin(img: &ImageGrid, config: &RenderConfig) -> ImageGrid {
    if config.noise_amplitude == 0.0 || config.noise_octaves == 0 {
        return img.clone();
    }
    let cfg = RenderConfig {
        height: img.height(),
        width: img.width(),
        ..config.clone()
    };
    let noise = perlin_field(&cfg);
    let data = img
        .data()
        .iter()
        .zip(noise.data())
        .map(|(v, n)| (v + n).clamp(0.0, MAX_INTENSITY))
        .collect();
    ImageGrid::from_vec(img.height(), img.width(), data, img.tag()).expect("same shape")
}

/// Gaussian blob targets, max-composited; peak 1.0 on each keypoint pixel.
///
/// Each blob is evaluated within `8σ` of its center (beyond that the value
/// is below `1e-13`).
pub fn render_keypoint_targets(keypoints: &KeypointSet, config: &RenderConfig) -> ImageGrid {
    let (h, w) = (config.height, config.width);
    let mut grid = ImageGrid::zeros(h, w, ChannelTag::Target);
    let sigma = config.blob_sigma;
    let reach = (8.0 * sigma).ceil() as isize;
    for p in keypoints.points() {
        let Ok(center) = world_to_pixel(*p, h, w) else {
            continue;
        };
        let (cr, cc) = (center.row as isize, center.col as isize);
        for row in (cr - reach).max(0)..=(cr + reach).min(h as isize - 1) {
            for col in (cc - reach).max(0)..=(cc + reach).min(w as isize - 1) {
                let d2 = ((row - cr).pow(2) + (col - cc).pow(2)) as f64;
                let v = (-d2 / (2.0 * sigma * sigma)).exp();
                let (r, c) = (row as usize, col as usize);
                if v > grid.get(r, c) {
                    grid.set(r, c, v);
                }
            }
        }
    }
    grid
}

/// Foreground/background reweighted MSE for keypoint heatmaps.
///
/// Pixels with `target > 0.5` form the foreground (weight 0.7), the rest
/// the background (weight 0.3). An empty partition contributes 0.
pub fn weighted_mse_keypoint_loss(pred: &ImageGrid, target: &ImageGrid) -> Result<f64, CoreError> {
    pred.ensure_same_shape(target)?;
    let (mut fg, mut nfg, mut bg, mut nbg) = (0.0, 0usize, 0.0, 0usize);
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = (p - t) * (p - t);
        if *t > 0.5 {
            fg += e;
            nfg += 1;
        } else {
            bg += e;
            nbg += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(0.7 * mean(fg, nfg) + 0.3 * mean(bg, nbg))
}

/// Half-width of the square node markers drawn by [`draw_overlay`].
pub const MARKER_HALF_PX: isize = 1;

/// Copy of `image` with the tree's edge polylines drawn at
/// [`MAX_INTENSITY`] and each node marked by a dark square.
pub fn draw_overlay(image: &ImageGrid, tree: &Tree) -> ImageGrid {
    let mut out = image.clone();
    let (h, w) = image.shape();
    if h < 2 || w < 2 {
        return out;
    }
    let plot = |out: &mut ImageGrid, col: f64, row: f64, v: f64| {
        let (r, c) = (row.round(), col.round());
        if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
            out.set(r as usize, c as usize, v);
        }
    };
    for e in tree.edges() {
        let line: Vec<(f64, f64)> = tree
            .edge_polyline(e)
            .iter()
            .map(|p| world_to_pixel_f(*p, h, w))
            .collect();
        for seg in line.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()) * 2.0).ceil().max(1.0) as usize;
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                plot(
                    &mut out,
                    x0 + t * (x1 - x0),
                    y0 + t * (y1 - y0),
                    MAX_INTENSITY,
                );
            }
        }
    }
    for n in tree.nodes() {
        let (x, y) = world_to_pixel_f(n.position, h, w);
        for dr in -MARKER_HALF_PX..=MARKER_HALF_PX {
            for dc in -MARKER_HALF_PX..=MARKER_HALF_PX {
                plot(&mut out, x + dc as f64, y + dr as f64, 0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Edge, Node, NodeId};
    use crate::types::WorldPoint;

    fn segment_tree(a: WorldPoint, b: WorldPoint, r: f64) -> Tree {
        Tree::new(
            NodeId(0),
            vec![
                Node {
                    id: NodeId(0),
                    position: a,
                    radius: r,
                },
                Node {
                    id: NodeId(1),
                    position: b,
                    radius: r,
                },
            ],
            vec![Edge::new(NodeId(0), NodeId(1))],
        )
        .unwrap()
    }

    fn cross_tree() -> (Tree, Tree, Tree) {
        // a horizontal and a vertical vessel crossing at pixel (50, 50) on 101x101
        let p = |x: f64, y: f64| WorldPoint { x, y };
        let r = 0.03;
        let n = |id, pos| Node {
            id: NodeId(id),
            position: pos,
            radius: r,
        };
        let both = Tree::new(
            NodeId(0),
            vec![
                n(0, p(0.5, 0.1)),
                n(1, p(0.1, 0.5)),
                n(2, p(0.5, 0.9)),
                n(3, p(0.9, 0.5)),
            ],
            vec![
                Edge::new(NodeId(0), NodeId(2)),
                Edge::new(NodeId(0), NodeId(1)),
                Edge::new(NodeId(1), NodeId(3)),
            ],
        )
        .unwrap();
        (
            both,
            segment_tree(p(0.5, 0.1), p(0.5, 0.9), r),
            segment_tree(p(0.1, 0.5), p(0.9, 0.5), r),
        )
    }

    #[test]
    fn empty_region_is_zero_and_axis_is_diameter() {
        let t = segment_tree(
            WorldPoint { x: 0.2, y: 0.5 },
            WorldPoint { x: 0.8, y: 0.5 },
            0.02,
        );
        let raw = render_chords(&t, 101, 101);
        assert_eq!(raw.get(10, 10), 0.0);
        // radius 0.02 * 100 = 2 px, pixel (50, 50) on the axis
        assert!((raw.get(50, 50) - 4.0).abs() < 1e-12);
        let norm = render_tree(&t, &RenderConfig::with_size(101, 101));
        assert!((norm.get(50, 50) - 1.0).abs() < 1e-12);
        assert_eq!(norm.max(), 1.0);
    }

    #[test]
    fn crossing_is_additive() {
        let (both, a, b) = cross_tree();
        let rb = render_chords(&both, 101, 101);
        let ra = render_chords(&a, 101, 101);
        let rbb = render_chords(&b, 101, 101);
        let (x, y) = (50, 50);
        assert!(rb.get(y, x) > ra.get(y, x).max(rbb.get(y, x)));
        assert!((rb.get(y, x) - ra.get(y, x) - rbb.get(y, x)).abs() < 1e-12);
    }

    #[test]
    fn translation_by_whole_pixels_shifts_raster() {
        let p = |x: f64, y: f64| WorldPoint {
            x: x / 100.0,
            y: y / 100.0,
        };
        let a = segment_tree(p(20.0, 30.0), p(60.0, 45.0), 0.03);
        let b = segment_tree(p(27.0, 35.0), p(67.0, 50.0), 0.03);
        let ra = render_chords(&a, 101, 101);
        let rb = render_chords(&b, 101, 101);
        for row in 10..80 {
            for col in 10..80 {
                assert!((ra.get(row, col) - rb.get(row + 5, col + 7)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_amplitude_noise_is_noop() {
        let img = ImageGrid::filled(32, 32, 0.7, ChannelTag::Intensity);
        let cfg = RenderConfig {
            noise_amplitude: 0.0,
            ..RenderConfig::with_size(32, 32)
        };
        assert_eq!(add_perlin(&img, &cfg), img);
    }

    #[test]
    fn noise_deterministic_and_centered() {
        let cfg = RenderConfig {
            noise_seed: 11,
            ..RenderConfig::default()
        };
        let a = perlin_field(&cfg);
        assert_eq!(a, perlin_field(&cfg));
        let other = perlin_field(&RenderConfig {
            noise_seed: 12,
            ..cfg.clone()
        });
        assert_ne!(a, other);
        for seed in 0..10 {
            let f = perlin_field(&RenderConfig {
                noise_seed: seed,
                ..cfg.clone()
            });
            let mean = f.data().iter().sum::<f64>() / f.data().len() as f64;
            assert!(mean.abs() < 0.02, "seed {seed}: mean {mean}");
            assert!(f.max() > 0.01);
        }
    }

    #[test]
    fn noisy_render_is_clamped() {
        let img = ImageGrid::filled(40, 40, 1.45, ChannelTag::Intensity);
        let cfg = RenderConfig {
            noise_amplitude: 1.0,
            ..RenderConfig::with_size(40, 40)
        };
        let out = add_perlin(&img, &cfg);
        assert!(out.data().iter().all(|v| (0.0..=MAX_INTENSITY).contains(v)));
    }

    #[test]
    fn blob_targets() {
        let cfg = RenderConfig {
            blob_sigma: 2.0,
            ..RenderConfig::with_size(101, 101)
        };
        let one = KeypointSet::from_ordered(vec![WorldPoint { x: 0.5, y: 0.5 }]);
        let g = render_keypoint_targets(&one, &cfg);
        assert_eq!(g.get(50, 50), 1.0);
        assert!((g.get(50, 52) - (-0.5f64).exp()).abs() < 1e-15);

        let none = render_keypoint_targets(&KeypointSet::default(), &cfg);
        assert!(none.data().iter().all(|v| *v == 0.0));

        // 10 sigma = 20 px apart
        let two = KeypointSet::from_ordered(vec![
            WorldPoint { x: 0.4, y: 0.5 },
            WorldPoint { x: 0.6, y: 0.5 },
        ]);
        let g = render_keypoint_targets(&two, &cfg);
        assert_eq!(g.get(50, 40), 1.0);
        assert_eq!(g.get(50, 60), 1.0);
        assert!(g.get(50, 50) < 1e-5);

        let rev = KeypointSet::from_ordered(two.points().iter().rev().copied().collect());
        assert_eq!(render_keypoint_targets(&rev, &cfg), g);
    }

    #[test]
    fn weighted_loss_cases() {
        let z = ImageGrid::zeros(2, 2, ChannelTag::Target);
        assert_eq!(weighted_mse_keypoint_loss(&z, &z).unwrap(), 0.0);
        let p = ImageGrid::filled(2, 2, 0.1, ChannelTag::Target);
        assert!((weighted_mse_keypoint_loss(&p, &z).unwrap() - 0.003).abs() < 1e-15);
        let mut t = ImageGrid::zeros(2, 2, ChannelTag::Target);
        t.set(0, 0, 1.0);
        assert!((weighted_mse_keypoint_loss(&z, &t).unwrap() - 0.7).abs() < 1e-15);
        let other = ImageGrid::zeros(3, 2, ChannelTag::Target);
        assert!(weighted_mse_keypoint_loss(&other, &t).is_err());
    }
}
