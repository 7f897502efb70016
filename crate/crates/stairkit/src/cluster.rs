//! Middle-out clustering of positive grid cells into whole stair lines.
//!
//! Cells only see 32-pixel-wide chords of a stair line, so whole lines are
//! reassembled by least squares: the two center columns seed initial lines,
//! then the remaining columns are visited outward from the middle, each
//! segment joining the nearest existing line (vertically) or founding a new
//! one, with line parameters refit after every column.

use crate::grid::{DetectionGrid, GridError, LineClass};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("line fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("line fit is degenerate: all points share one abscissa")]
    ZeroXVariance,
    #[error("bad cluster params: {0}")]
    BadParams(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Pixel-space line segment with `x1 <= x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Segment2 {
    /// Builds a segment, swapping endpoints so `x1 <= x2` (ties broken by y).
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        let ((x1, y1), (x2, y2)) =
            if a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1) { (a, b) } else { (b, a) };
        Segment2 { x1, y1, x2, y2 }
    }

    fn endpoints(&self) -> [(f64, f64); 2] {
        [(self.x1, self.y1), (self.x2, self.y2)]
    }

}

/// A clustered stair line: extreme endpoints, least-squares slope and
/// intercept over all member endpoints, the member segments themselves, and
/// an optional class (clustering alone cannot tell convex from concave).
#[derive(Debug, Clone, PartialEq)]
pub struct StairLine2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub k: f64,
    pub b: f64,
    pub members: Vec<Segment2>,
    pub cls: Option<LineClass>,
}

/// Clustering thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Max mean vertical distance (px) for a segment to join a line. Kept
    /// below the 16 px cell height so lines one cell row apart stay distinct.
    pub assign_tolerance: f64,
    /// Max mean endpoint distance (px) under which a cell's two predicted
    /// pairs count as one segment.
    pub dedupe_tolerance: f64,
    /// The two center columns that seed initial lines.
    pub seed_columns: (usize, usize),
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { assign_tolerance: 10.0, dedupe_tolerance: 4.0, seed_columns: (7, 8) }
    }
}

impl ClusterParams {
    fn validate(&self, cols: usize) -> Result<(), ClusterError> {
        if !(self.assign_tolerance.is_finite() && self.assign_tolerance > 0.0) {
            return Err(ClusterError::BadParams(format!(
                "assign_tolerance {} must be positive",
                self.assign_tolerance
            )));
        }
        if !(self.dedupe_tolerance.is_finite() && self.dedupe_tolerance >= 0.0) {
            return Err(ClusterError::BadParams(format!(
                "dedupe_tolerance {} must be nonnegative",
                self.dedupe_tolerance
            )));
        }
        let (a, b) = self.seed_columns;
        if a >= cols || b >= cols || a == b {
            return Err(ClusterError::BadParams(format!(
                "seed columns ({a}, {b}) invalid for {cols} columns"
            )));
        }
        Ok(())
    }
}

/// Ordinary least squares of y on x. Returns `(k, b)` minimizing
/// `sum (y - kx - b)^2`.
pub fn fit_line_2d(points: &[(f64, f64)]) -> Result<(f64, f64), ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(ClusterError::ZeroXVariance);
    }
    let k = sxy / sxx;
    Ok((k, mean_y - k * mean_x))
}

/// Pixel segments predicted by one cell: both pairs denormalized, collapsed
/// to one segment when their mean endpoint distance is under
/// `dedupe_tolerance`. Cells with zero confidence yield nothing.
pub fn cell_segments(
    grid: &DetectionGrid,
    i: usize,
    j: usize,
    dedupe_tolerance: f64,
) -> Result<Vec<Segment2>, GridError> {
    let cell = grid.cell(i, j)?;
    if cell.conf == 0.0 {
        return Ok(Vec::new());
    }
    let denorm = |p: (f64, f64)| grid.cell_to_pixel(i, j, p);
    let (a1, a2) = cell.pair_one();
    let (b1, b2) = cell.pair_two();
    let s1 = Segment2::new(denorm(a1)?, denorm(a2)?);
    let s2 = Segment2::new(denorm(b1)?, denorm(b2)?);
    let d1 = ((s1.x1 - s2.x1).powi(2) + (s1.y1 - s2.y1).powi(2)).sqrt();
    let d2 = ((s1.x2 - s2.x2).powi(2) + (s1.y2 - s2.y2).powi(2)).sqrt();
    if (d1 + d2) / 2.0 < dedupe_tolerance {
        Ok(vec![s1])
    } else {
        Ok(vec![s1, s2])
    }
}

/// Working accumulator for one line during clustering.
struct LineAcc {
    members: Vec<Segment2>,
    k: f64,
    b: f64,
}

impl LineAcc {
    fn refit(&mut self) {
        let points: Vec<(f64, f64)> =
            self.members.iter().flat_map(|s| s.endpoints()).collect();
        match fit_line_2d(&points) {
            Ok((k, b)) => {
                self.k = k;
                self.b = b;
            }
            Err(_) => {
                // All endpoints share one abscissa (a degenerate vertical
                // stub): treat as horizontal through the mean ordinate.
                self.k = 0.0;
                self.b = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
            }
        }
    }

    /// Mean vertical distance from the segment's endpoints to `y = kx + b`.
    fn distance_to(&self, s: &Segment2) -> f64 {
        let d1 = (s.y1 - (self.k * s.x1 + self.b)).abs();
        let d2 = (s.y2 - (self.k * s.x2 + self.b)).abs();
        (d1 + d2) / 2.0
    }
}

/// Column visiting order: outward from the seed columns, alternating
/// left/right (6, 9, 5, 10, ... for seeds 7 and 8).
fn assignment_order(cols: usize, seeds: (usize, usize)) -> Vec<usize> {
    let lo = seeds.0.min(seeds.1);
    let hi = seeds.0.max(seeds.1);
    let mut left = (0..lo).rev();
    let mut right = (hi + 1)..cols;
    let mut order = Vec::with_capacity(cols - 2);
    loop {
        match (left.next(), right.next()) {
            (Some(l), Some(r)) => {
                order.push(l);
                order.push(r);
            }
            (Some(l), None) => order.push(l),
            (None, Some(r)) => order.push(r),
            (None, None) => break,
        }
    }
    order
}

/// Segments of one column in deterministic (row, pair) order.
fn column_segments(
    grid: &DetectionGrid,
    col: usize,
    dedupe_tolerance: f64,
) -> Result<Vec<Segment2>, GridError> {
    let mut out = Vec::new();
    for i in 0..grid.rows() {
        out.extend(cell_segments(grid, i, col, dedupe_tolerance)?);
    }
    Ok(out)
}

/// Clusters all positive cells of a grid into stair lines.
///
/// The grid is expected to be confidence-thresholded upstream; every cell
/// with positive confidence participates. Returns lines sorted by intercept
/// (top of image first). The procedure is fully deterministic: fixed
/// visiting order, ties won by the earliest-created line.
pub fn cluster_grid(
    grid: &DetectionGrid,
    params: &ClusterParams,
) -> Result<Vec<StairLine2D>, ClusterError> {
    params.validate(grid.cols())?;
    let eps = params.dedupe_tolerance;
    let tau = params.assign_tolerance;

    // Seed stage: chain segments from the two center columns whose nearest
    // endpoints are within tau of each other (transitively). Chaining on
    // endpoint proximity rather than on fitted lines avoids extrapolating a
    // slope from a single 32 px chord; measuring full 2D endpoint distance
    // (not bare ordinates) keeps parallel sloped rails from bridging across
    // columns, where a slope shifts one rail's ordinates into the other's.
    let mut seed_segs = Vec::new();
    for i in 0..grid.rows() {
        for col in [params.seed_columns.0, params.seed_columns.1] {
            seed_segs.extend(cell_segments(grid, i, col, eps)?);
        }
    }
    let n = seed_segs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let chained = |a: &Segment2, b: &Segment2| {
        a.endpoints()
            .iter()
            .any(|p| b.endpoints().iter().any(|q| (p.0 - q.0).hypot(p.1 - q.1) < tau))
    };
    for a in 0..n {
        for b in (a + 1)..n {
            if chained(&seed_segs[a], &seed_segs[b]) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[rb.max(ra)] = ra.min(rb);
                }
            }
        }
    }
    let mut lines: Vec<LineAcc> = Vec::new();
    let mut root_to_line = std::collections::BTreeMap::new();
    for (idx, seg) in seed_segs.iter().enumerate() {
        let root = find(&mut parent, idx);
        let line_idx = *root_to_line.entry(root).or_insert_with(|| {
            lines.push(LineAcc { members: Vec::new(), k: 0.0, b: 0.0 });
            lines.len() - 1
        });
        lines[line_idx].members.push(*seg);
    }
    for line in &mut lines {
        line.refit();
    }

    // Assignment stage: visit remaining columns outward from the middle.
    for col in assignment_order(grid.cols(), params.seed_columns) {
        let segs = column_segments(grid, col, eps)?;
        if segs.is_empty() {
            continue;
        }
        let mut touched = vec![false; lines.len()];
        for seg in segs {
            let mut best: Option<(usize, f64)> = None;
            for (idx, line) in lines.iter().enumerate() {
                let d = line.distance_to(&seg);
                // Strict < keeps the earliest-created line on exact ties.
                if d < tau && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((idx, d));
                }
            }
            match best {
                Some((idx, _)) => {
                    lines[idx].members.push(seg);
                    if idx < touched.len() {
                        touched[idx] = true;
                    }
                }
                None => {
                    let mut acc = LineAcc { members: vec![seg], k: 0.0, b: 0.0 };
                    acc.refit();
                    lines.push(acc);
                }
            }
        }
        for (idx, line) in lines.iter_mut().enumerate() {
            if idx < touched.len() && touched[idx] {
                line.refit();
            }
        }
    }

    // Final sweep: refit everything, take extreme-x endpoints, sort by
    // intercept top-down.
    let mut out: Vec<StairLine2D> = lines
        .into_iter()
        .map(|mut line| {
            line.refit();
            let mut points = line.members.iter().flat_map(|s| s.endpoints());
            let first = points.next().expect("lines always have members");
            let (mut left, mut right) = (first, first);
            for p in points {
                if p.0 < left.0 || (p.0 == left.0 && p.1 < left.1) {
                    left = p;
                }
                if p.0 > right.0 || (p.0 == right.0 && p.1 > right.1) {
                    right = p;
                }
            }
            StairLine2D {
                x1: left.0,
                y1: left.1,
                x2: right.0,
                y2: right.1,
                k: line.k,
                b: line.b,
                members: line.members,
                cls: None,
            }
        })
        .collect();
    out.sort_by(|p, q| p.b.partial_cmp(&q.b).expect("intercepts are finite"));
    Ok(out)
}
