//! Point-set distances between trees, in pixel units.
//!
//! Each edge is sampled at `n` evenly spaced points from parent to child,
//! both endpoints included. Chamfer distance is the symmetric sum of mean
//! squared nearest-neighbor distances (pixels²); Hausdorff distance is the
//! larger of the two directed maximum nearest-neighbor distances (pixels).
//! Nearest neighbors are found with a uniform bucket grid that returns the
//! same squared distances as an exhaustive scan.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::tree::{format_g17, tree_from_json, Tree};
use crate::types::world_to_pixel_f;

pub const DEFAULT_SAMPLES_PER_EDGE: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("point set is empty")]
    EmptySet,
    #[error("tree has no nodes")]
    EmptyTree,
    #[error("at least 2 samples per edge are required, got {0}")]
    TooFewSamples(usize),
}

/// Points in pixel units `(x, y) = (col, row)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<[f64; 2]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n` points per edge, linearly between parent and child inclusive.
pub fn sample_edges(
    tree: &Tree,
    n: usize,
    height: usize,
    width: usize,
) -> Result<PointSet, MetricsError> {
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    if tree.edges().is_empty() {
        return Err(MetricsError::EmptyTree);
    }
    let mut points = Vec::with_capacity(n * tree.edges().len());
    for e in tree.edges() {
        let (Some(a), Some(b)) = (tree.position(e.parent), tree.position(e.child)) else {
            continue;
        };
        let (ax, ay) = world_to_pixel_f(a, height, width);
        let (bx, by) = world_to_pixel_f(b, height, width);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            points.push([ax + t * (bx - ax), ay + t * (by - ay)]);
        }
    }
    Ok(PointSet::new(points))
}

/// Edge samples, or the node positions of a tree without edges.
pub fn tree_point_set(
    tree: &Tree,
    n: usize,
    height: usize,
    width: usize,
) -> Result<PointSet, MetricsError> {
    if tree.is_empty() {
        return Err(MetricsError::EmptyTree);
    }
    if tree.edges().is_empty() {
        let points = tree
            .nodes()
            .iter()
            .map(|nd| {
                let (x, y) = world_to_pixel_f(nd.position, height, width);
                [x, y]
            })
            .collect();
        return Ok(PointSet::new(points));
    }
    sample_edges(tree, n, height, width)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Uniform bucket grid for exact nearest-neighbor queries.
struct NnIndex<'a> {
    points: &'a [[f64; 2]],
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> NnIndex<'a> {
    fn new(points: &'a [[f64; 2]]) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let per_axis = (points.len() as f64).sqrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut index = Self {
            points,
            origin: lo,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = index.cell_of(p);
            buckets[cy * nx + cx].push(i as u32);
        }
        index.buckets = buckets;
        index
    }

    fn cell_of(&self, p: &[f64; 2]) -> (usize, usize) {
        let cx = ((p[0] - self.origin[0]) / self.cell)
            .floor()
            .clamp(0.0, (self.nx - 1) as f64);
        let cy = ((p[1] - self.origin[1]) / self.cell)
            .floor()
            .clamp(0.0, (self.ny - 1) as f64);
        (cx as usize, cy as usize)
    }

    /// Squared distance from `q` to its nearest indexed point.
    fn nearest2(&self, q: &[f64; 2]) -> f64 {
        let (cx, cy) = self.cell_of(q);
        let (cx, cy) = (cx as isize, cy as isize);
        let mut best = f64::INFINITY;
        let max_ring = self.nx.max(self.ny) as isize;
        for ring in 0..=max_ring {
            for y in (cy - ring)..=(cy + ring) {
                if y < 0 || y >= self.ny as isize {
                    continue;
                }
                let on_edge_row = y == cy - ring || y == cy + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) };
                let mut x = cx - ring;
                while x <= cx + ring {
                    if x >= 0 && x < self.nx as isize {
                        for &i in &self.buckets[y as usize * self.nx + x as usize] {
                            let d = dist2(q, &self.points[i as usize]);
                            if d < best {
                                best = d;
                            }
                        }
                    }
                    x += step;
                }
            }
            // Points outside rings 0..=ring lie at least ring·cell away.
            let bound = ring as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best
    }
}

/// Nearest squared distances from each point of `a` into `b`.
fn directed2(a: &PointSet, b: &PointSet) -> Vec<f64> {
    let index = NnIndex::new(&b.points);
    a.points.iter().map(|p| index.nearest2(p)).collect()
}

fn check(a: &PointSet, b: &PointSet) -> Result<(), MetricsError> {
    if a.is_empty() || b.is_empty() {
        Err(MetricsError::EmptySet)
    } else {
        Ok(())
    }
}

pub fn chamfer(a: &PointSet, b: &PointSet) -> Result<f64, MetricsError> {
    check(a, b)?;
    let ab: f64 = directed2(a, b).iter().sum();
    let ba: f64 = directed2(b, a).iter().sum();
    Ok(ab / a.len() as f64 + ba / b.len() as f64)
}

pub fn hausdorff(a: &PointSet, b: &PointSet) -> Result<f64, MetricsError> {
    check(a, b)?;
    let ab = directed2(a, b).into_iter().fold(0.0, f64::max);
    let ba = directed2(b, a).into_iter().fold(0.0, f64::max);
    Ok(ab.max(ba).sqrt())
}

/// Hausdorff and Chamfer distances between two trees.
pub fn compare_trees(
    pred: &Tree,
    gt: &Tree,
    n: usize,
    height: usize,
    width: usize,
) -> Result<(f64, f64), MetricsError> {
    let a = tree_point_set(pred, n, height, width)?;
    let b = tree_point_set(gt, n, height, width)?;
    Ok((hausdorff(&a, &b)?, chamfer(&a, &b)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case_id: String,
    pub hd_px: f64,
    pub cd_px2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseFailure {
    pub case_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetReport {
    pub cases: Vec<CaseResult>,
    pub failures: Vec<CaseFailure>,
}

impl DatasetReport {
    pub fn mean_hd(&self) -> Option<f64> {
        mean(self.cases.iter().map(|c| c.hd_px))
    }

    pub fn mean_cd(&self) -> Option<f64> {
        mean(self.cases.iter().map(|c| c.cd_px2))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,hd_px,cd_px2\n");
        for c in &self.cases {
            s.push_str(&format!(
                "{},{},{}\n",
                c.case_id,
                format_g17(c.hd_px),
                format_g17(c.cd_px2)
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let failures: Vec<_> = self
            .failures
            .iter()
            .map(|f| json!({"case_id": f.case_id, "reason": f.reason}))
            .collect();
        let doc = json!({
            "mean_hd": self.mean_hd(),
            "mean_cd": self.mean_cd(),
            "n": self.cases.len(),
            "failures": failures,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Case id of a ground-truth file name `tree_<id>.json`.
fn case_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let id = name.strip_prefix("tree_")?.strip_suffix(".json")?;
    Some(id.to_owned())
}

/// Ground-truth files of a dataset directory, sorted by case id
/// (numerically where ids are integers).
pub fn list_cases(dir: &Path) -> std::io::Result<Vec<(String, PathBuf)>> {
    let mut cases: Vec<(String, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter_map(|p| case_id(&p).map(|id| (id, p)))
        .collect();
    cases.sort_by(|a, b| match (a.0.parse::<u64>(), b.0.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.0.cmp(&b.0),
    });
    Ok(cases)
}

fn evaluate_case(
    pred: &Path,
    gt: &Path,
    n: usize,
    height: usize,
    width: usize,
) -> Result<(f64, f64), String> {
    let read = |p: &Path| -> Result<Tree, String> {
        let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        tree_from_json(&text).map_err(|e| format!("{}: {e}", p.display()))
    };
    let pred = read(pred)?;
    let gt = read(gt)?;
    compare_trees(&pred, &gt, n, height, width).map_err(|e| e.to_string())
}

/// Compares every `tree_<id>.json` of `gt_dir` with its namesake in `pred_dir`.
pub fn evaluate_dataset(
    pred_dir: &Path,
    gt_dir: &Path,
    n: usize,
    height: usize,
    width: usize,
) -> std::io::Result<DatasetReport> {
    let cases = list_cases(gt_dir)?;
    let results: Vec<_> = cases
        .par_iter()
        .map(|(id, gt)| {
            let pred = pred_dir.join(gt.file_name().expect("file name"));
            let r = if pred.exists() {
                evaluate_case(&pred, gt, n, height, width)
            } else {
                Err(format!("missing prediction {}", pred.display()))
            };
            (id.clone(), r)
        })
        .collect();
    let mut report = DatasetReport::default();
    for (case_id, r) in results {
        match r {
            Ok((hd_px, cd_px2)) => report.cases.push(CaseResult {
                case_id,
                hd_px,
                cd_px2,
            }),
            Err(reason) => report.failures.push(CaseFailure { case_id, reason }),
        }
    }
    Ok(report)
}
