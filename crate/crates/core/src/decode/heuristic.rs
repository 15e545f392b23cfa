//! Image-driven scorer with no learned parameters.

use serde::{Deserialize, Serialize};

use super::{DecodeError, StepInput, StepScore, StepScorer};
use crate::types::{world_to_pixel_f, ImageGrid, KeypointSet, WorldPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Distance decay length of the selection score, world units.
    pub decay: f64,
    /// A candidate closer than this to the query-candidate segment hides the
    /// candidates behind it, pixels.
    pub occlusion_px: f64,
    pub occlusion_factor: f64,
    /// Radius of the circle probed for branch arcs, pixels.
    pub ring_radius_px: f64,
    /// Brightness cut, relative to the intensity at the keypoint.
    pub bright_fraction: f64,
    pub magnitude: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            decay: 0.15,
            occlusion_px: 2.0,
            occlusion_factor: 0.1,
            ring_radius_px: 6.0,
            bright_fraction: 0.5,
            magnitude: 3.0,
        }
    }
}

/// Selection from straight-line intensity support, distance and occlusion;
/// topology from the number of bright arcs crossing a circle around each
/// candidate. Without a query the root is taken to be the candidate with
/// the brightest neighborhood.
#[derive(Debug, Clone, Default)]
pub struct HeuristicScorer {
    config: HeuristicConfig,
}

impl HeuristicScorer {
    pub fn new(config: HeuristicConfig) -> Self {
        Self { config }
    }
}

fn sample(img: &ImageGrid, col: f64, row: f64) -> f64 {
    img.get_checked(row.round() as isize, col.round() as isize)
        .unwrap_or(0.0)
}

fn local_peak(img: &ImageGrid, p: WorldPoint) -> f64 {
    let (h, w) = img.shape();
    let (c, r) = world_to_pixel_f(p, h, w);
    let mut best = 0.0f64;
    for dr in -1..=1 {
        for dc in -1..=1 {
            best = best.max(sample(img, c + dc as f64, r + dr as f64));
        }
    }
    best
}

fn disk_mean(img: &ImageGrid, p: WorldPoint, radius: isize) -> f64 {
    let (h, w) = img.shape();
    let (c, r) = world_to_pixel_f(p, h, w);
    let (mut sum, mut n) = (0.0, 0usize);
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            if dr * dr + dc * dc <= radius * radius {
                sum += sample(img, c + dc as f64, r + dr as f64);
                n += 1;
            }
        }
    }
    sum / n as f64
}

impl HeuristicScorer {
    fn support(&self, img: &ImageGrid, a: WorldPoint, b: WorldPoint) -> f64 {
        let (h, w) = img.shape();
        let (ac, ar) = world_to_pixel_f(a, h, w);
        let (bc, br) = world_to_pixel_f(b, h, w);
        let n = ((bc - ac).hypot(br - ar).ceil() as usize).max(1);
        let thr =
            (self.config.bright_fraction * local_peak(img, a).min(local_peak(img, b))).max(0.05);
        let hits = (0..=n)
            .filter(|&i| {
                let t = i as f64 / n as f64;
                sample(img, ac + t * (bc - ac), ar + t * (br - ar)) > thr
            })
            .count();
        hits as f64 / (n + 1) as f64
    }

    /// Whether another candidate sits on the segment from `q` to `points[j]`.
    fn occluded(&self, kps: &KeypointSet, q: WorldPoint, j: usize, h: usize, w: usize) -> bool {
        let (qc, qr) = world_to_pixel_f(q, h, w);
        let (jc, jr) = world_to_pixel_f(kps.points()[j], h, w);
        let (dx, dy) = (jc - qc, jr - qr);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return false;
        }
        kps.points().iter().enumerate().any(|(m, p)| {
            if m == j || *p == q {
                return false;
            }
            let (mc, mr) = world_to_pixel_f(*p, h, w);
            let t = ((mc - qc) * dx + (mr - qr) * dy) / len2;
            if t <= 0.0 || t >= 1.0 {
                return false;
            }
            let (px, py) = (qc + t * dx, qr + t * dy);
            (mc - px).hypot(mr - py) < self.config.occlusion_px
        })
    }

    /// Number of bright arcs crossing a circle around `p`.
    fn arc_count(&self, img: &ImageGrid, p: WorldPoint) -> usize {
        let (h, w) = img.shape();
        let (c, r) = world_to_pixel_f(p, h, w);
        let thr = (self.config.bright_fraction * local_peak(img, p)).max(0.05);
        let n = 72;
        let bright: Vec<bool> = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                let rr = self.config.ring_radius_px;
                sample(img, c + rr * a.cos(), r + rr * a.sin()) > thr
            })
            .collect();
        (0..n)
            .filter(|&i| bright[i] && !bright[(i + n - 1) % n])
            .count()
    }

    fn topology_row(&self, children: usize, k: usize) -> Vec<f64> {
        (0..k)
            .map(|c| -self.config.magnitude * (c as f64 - children as f64).abs())
            .collect()
    }
}

impl StepScorer for HeuristicScorer {
    fn score(&self, input: &StepInput<'_>) -> Result<StepScore, DecodeError> {
        let img = input.builder().intensity();
        let (h, w) = img.shape();
        let kps = input.keypoints;
        let k = input.k_classes();
        let (query, root) = match input.query {
            Some(q) => (Some(q), None),
            None => {
                let root = (0..kps.len()).max_by(|&a, &b| {
                    disk_mean(img, kps.points()[a], 2)
                        .total_cmp(&disk_mean(img, kps.points()[b], 2))
                        .then(b.cmp(&a))
                });
                (root.map(|i| kps.points()[i]), root)
            }
        };
        let mut selection = Vec::with_capacity(kps.len());
        let mut topology_logits = Vec::with_capacity(kps.len());
        for (j, p) in kps.points().iter().enumerate() {
            let arcs = self.arc_count(img, *p);
            let children = if Some(j) == root {
                arcs
            } else {
                arcs.saturating_sub(1)
            };
            topology_logits.push(self.topology_row(children.min(k - 1), k));
            let s = match query {
                Some(q) if q != *p => {
                    let mut s = self.support(img, q, *p).powi(2)
                        * (-q.distance(p) / self.config.decay).exp();
                    if self.occluded(kps, q, j, h, w) {
                        s *= self.config.occlusion_factor;
                    }
                    s
                }
                _ => 0.0,
            };
            selection.push(s);
        }
        Ok(StepScore {
            selection,
            topology_logits,
        })
    }
}
