//! Brute-force reference implementations shared by the test targets.
#![allow(dead_code)]

use vastree::baseline::step_weight;
use vastree::{ImageGrid, PixelIndex};

/// Distance from each foreground pixel to the nearest background pixel or
/// cell of the exterior ring around the grid.
pub fn brute_edt(mask: &ImageGrid) -> Vec<f64> {
    let (h, w) = mask.shape();
    let (hi, wi) = (h as isize, w as isize);
    let mut exterior = Vec::new();
    for r in -1..=hi {
        for c in -1..=wi {
            let outside = r < 0 || c < 0 || r >= hi || c >= wi;
            if outside || mask.get(r as usize, c as usize) <= 0.0 {
                exterior.push((r, c));
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) > 0.0 {
                let best = exterior
                    .iter()
                    .map(|&(er, ec)| ((r as isize - er).pow(2) + (c as isize - ec).pow(2)) as f64)
                    .fold(f64::INFINITY, f64::min);
                out[r * w + c] = best.sqrt();
            }
        }
    }
    out
}

/// Single-source shortest distances by Bellman-Ford relaxation.
pub fn bellman_ford(cost: &ImageGrid, source: PixelIndex) -> Vec<f64> {
    let (h, w) = cost.shape();
    let mut dist = vec![f64::INFINITY; h * w];
    dist[source.row * w + source.col] = 0.0;
    loop {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let d = dist[r * w + c];
                if !d.is_finite() {
                    continue;
                }
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (nr, nc) = (r as isize + dr, c as isize + dc);
                        if (dr, dc) == (0, 0)
                            || nr < 0
                            || nc < 0
                            || nr >= h as isize
                            || nc >= w as isize
                        {
                            continue;
                        }
                        let b = PixelIndex::new(nr as usize, nc as usize);
                        let nd = d + step_weight(cost, PixelIndex::new(r, c), b);
                        let j = b.row * w + b.col;
                        if nd < dist[j] {
                            dist[j] = nd;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

fn nn2(p: &[f64; 2], set: &[[f64; 2]]) -> f64 {
    set.iter()
        .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Chamfer distance: mean squared nearest distance both ways.
pub fn brute_chamfer(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let ab: f64 = a.iter().map(|p| nn2(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| nn2(p, a)).sum::<f64>() / b.len() as f64;
    ab + ba
}

pub fn brute_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let ab = a.iter().map(|p| nn2(p, b).sqrt()).fold(0.0, f64::max);
    let ba = b.iter().map(|p| nn2(p, a).sqrt()).fold(0.0, f64::max);
    ab.max(ba)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}
