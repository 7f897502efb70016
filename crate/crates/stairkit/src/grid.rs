//! Detection-grid model: labels, cells, and the pixel/cell coordinate maps.
//!
//! The detector divides a `W x H` image into `cols x rows` cells. Cell
//! `(i, j)` covers the half-open pixel box
//! `[j*cw, (j+1)*cw) x [i*ch, (i+1)*ch)` with `cw = W/cols`, `ch = H/rows`;
//! a chord lying exactly on a shared border belongs to the cell whose
//! minimum edge it touches. Each cell stores a confidence and two
//! cell-normalized endpoint pairs; single-chord cells duplicate their chord
//! into both pairs so that downstream code never branches on pair count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stair line class. Convex lines are outer edges (tread front), concave
/// lines are inner edges (tread back meeting the next riser).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineClass {
    Convex,
    Concave,
}

impl LineClass {
    /// Numeric code used by label files: 0 = convex, 1 = concave.
    pub fn code(self) -> u8 {
        match self {
            LineClass::Convex => 0,
            LineClass::Concave => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LineClass::Convex),
            1 => Some(LineClass::Concave),
            _ => None,
        }
    }
}

/// One ground-truth stair line in pixel coordinates, left endpoint first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StairLineLabel {
    pub cls: LineClass,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl StairLineLabel {
    /// Builds a label, swapping endpoints if needed so `x1 <= x2`.
    pub fn new(cls: LineClass, a: (f64, f64), b: (f64, f64)) -> Self {
        let ((x1, y1), (x2, y2)) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        StairLineLabel { cls, x1, y1, x2, y2 }
    }
}

/// Why a label line failed to parse.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelParseKind {
    #[error("expected 5 whitespace-separated fields, found {0}")]
    FieldCount(usize),
    #[error("field {0:?} is not a number")]
    NotANumber(String),
    #[error("class must be 0 (convex) or 1 (concave), found {0}")]
    BadClass(i64),
    #[error("endpoints out of order: x1 > x2 ({0} > {1})")]
    EndpointOrder(f64, f64),
    #[error("coordinate {0} is not finite and non-negative")]
    BadCoordinate(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("label line {line}: {kind}")]
pub struct LabelParseError {
    /// 1-based line number in the input text.
    pub line: usize,
    pub kind: LabelParseKind,
}

/// Parses label text: one `cls x1 y1 x2 y2` record per line, blank lines
/// skipped. Records must satisfy `x1 <= x2` and all coordinates must be
/// finite and non-negative; image-bounds checks happen at encode time.
pub fn parse_labels(text: &str) -> Result<Vec<StairLineLabel>, LabelParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(LabelParseError { line, kind: LabelParseKind::FieldCount(fields.len()) });
        }
        let cls_num: i64 = fields[0].parse().map_err(|_| LabelParseError {
            line,
            kind: LabelParseKind::NotANumber(fields[0].to_string()),
        })?;
        let cls = LineClass::from_code(u8::try_from(cls_num).unwrap_or(u8::MAX)).ok_or(
            LabelParseError { line, kind: LabelParseKind::BadClass(cls_num) },
        )?;
        let mut coords = [0.0f64; 4];
        for (k, field) in fields[1..].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| LabelParseError {
                line,
                kind: LabelParseKind::NotANumber(field.to_string()),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(LabelParseError { line, kind: LabelParseKind::BadCoordinate(v) });
            }
            coords[k] = v;
        }
        let [x1, y1, x2, y2] = coords;
        if x1 > x2 {
            return Err(LabelParseError { line, kind: LabelParseKind::EndpointOrder(x1, x2) });
        }
        out.push(StairLineLabel { cls, x1, y1, x2, y2 });
    }
    Ok(out)
}

/// Formats labels back into the text file layout accepted by [`parse_labels`].
pub fn format_labels(labels: &[StairLineLabel]) -> String {
    let mut s = String::new();
    for l in labels {
        s.push_str(&format!("{} {} {} {} {}\n", l.cls.code(), l.x1, l.y1, l.x2, l.y2));
    }
    s
}

/// One grid cell: confidence in `[0, 1]` plus two normalized endpoint pairs
/// `(x1,y1)-(x2,y2)` and `(x3,y3)-(x4,y4)`, all in the closed unit interval
/// with `x1 <= x2` and `x3 <= x4`. Live detector outputs are sigmoid-limited
/// and therefore strictly interior; ground-truth encodings may touch 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub conf: f64,
    pub coords: [f64; 8],
}

impl CellPrediction {
    /// An empty (negative) cell: zero confidence, neutral coordinates.
    pub fn empty() -> Self {
        CellPrediction { conf: 0.0, coords: [0.5; 8] }
    }

    pub fn new(conf: f64, coords: [f64; 8]) -> Result<Self, GridError> {
        if !(0.0..=1.0).contains(&conf) || !conf.is_finite() {
            return Err(GridError::BadConfidence(conf));
        }
        for &c in &coords {
            if !(0.0..=1.0).contains(&c) || !c.is_finite() {
                return Err(GridError::BadCellCoordinate(c));
            }
        }
        Ok(CellPrediction { conf, coords })
    }

    /// First endpoint pair, `((x1, y1), (x2, y2))`.
    pub fn pair_one(&self) -> ((f64, f64), (f64, f64)) {
        ((self.coords[0], self.coords[1]), (self.coords[2], self.coords[3]))
    }

    /// Second endpoint pair, `((x3, y3), (x4, y4))`.
    pub fn pair_two(&self) -> ((f64, f64), (f64, f64)) {
        ((self.coords[4], self.coords[5]), (self.coords[6], self.coords[7]))
    }
}

/// Grid granularity. The reference configuration is 32 rows by 16 columns
/// over a 512 x 512 image: cells 32 px wide and 16 px tall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridDims {
    fn default() -> Self {
        GridDims { rows: 32, cols: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid dims must be positive, got {rows}x{cols}")]
    BadDims { rows: usize, cols: usize },
    #[error("image dims must be positive, got {0}x{1}")]
    BadImageDims(u32, u32),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("cell coordinate {0} outside [0, 1]")]
    BadCellCoordinate(f64),
    #[error("cell index ({i}, {j}) outside {rows}x{cols} grid")]
    CellIndex { i: usize, j: usize, rows: usize, cols: usize },
    #[error("label endpoint ({x}, {y}) outside image bounds {w}x{h}")]
    LabelOutOfBounds { x: f64, y: f64, w: u32, h: u32 },
    #[error("grid dump cell ({0}, {1}) appears more than once")]
    DuplicateDumpCell(usize, usize),
}

/// Dense cell grid over one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrid {
    rows: usize,
    cols: usize,
    image_dims: (u32, u32),
    cells: Vec<CellPrediction>,
}

impl DetectionGrid {
    pub fn new(dims: GridDims, image_dims: (u32, u32)) -> Result<Self, GridError> {
        if dims.rows == 0 || dims.cols == 0 {
            return Err(GridError::BadDims { rows: dims.rows, cols: dims.cols });
        }
        if image_dims.0 == 0 || image_dims.1 == 0 {
            return Err(GridError::BadImageDims(image_dims.0, image_dims.1));
        }
        Ok(DetectionGrid {
            rows: dims.rows,
            cols: dims.cols,
            image_dims,
            cells: vec![CellPrediction::empty(); dims.rows * dims.cols],
        })
    }

    /// The reference layout: 32 x 16 cells over a 512 x 512 image.
    pub fn standard() -> Self {
        DetectionGrid::new(GridDims::default(), (512, 512)).expect("reference dims are valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image_dims(&self) -> (u32, u32) {
        self.image_dims
    }

    /// Cell width in pixels.
    pub fn cell_width(&self) -> f64 {
        f64::from(self.image_dims.0) / self.cols as f64
    }

    /// Cell height in pixels.
    pub fn cell_height(&self) -> f64 {
        f64::from(self.image_dims.1) / self.rows as f64
    }

    fn index(&self, i: usize, j: usize) -> Result<usize, GridError> {
        if i >= self.rows || j >= self.cols {
            return Err(GridError::CellIndex { i, j, rows: self.rows, cols: self.cols });
        }
        Ok(i * self.cols + j)
    }

    pub fn cell(&self, i: usize, j: usize) -> Result<&CellPrediction, GridError> {
        Ok(&self.cells[self.index(i, j)?])
    }

    pub fn set_cell(&mut self, i: usize, j: usize, cell: CellPrediction) -> Result<(), GridError> {
        let idx = self.index(i, j)?;
        self.cells[idx] = cell;
        Ok(())
    }

    /// Iterates all cells in row-major order as `(i, j, &cell)`.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, &CellPrediction)> {
        let cols = self.cols;
        self.cells.iter().enumerate().map(move |(idx, c)| (idx / cols, idx % cols, c))
    }

    /// Pixel box `(x0, y0, width, height)` of cell `(i, j)`; the box is
    /// half-open on its max edges.
    pub fn cell_box(&self, i: usize, j: usize) -> Result<(f64, f64, f64, f64), GridError> {
        self.index(i, j)?;
        let cw = self.cell_width();
        let ch = self.cell_height();
        Ok((j as f64 * cw, i as f64 * ch, cw, ch))
    }

    /// Maps a cell-normalized point to pixel coordinates.
    pub fn cell_to_pixel(
        &self,
        i: usize,
        j: usize,
        p: (f64, f64),
    ) -> Result<(f64, f64), GridError> {
        let (x0, y0, cw, ch) = self.cell_box(i, j)?;
        Ok((x0 + p.0 * cw, y0 + p.1 * ch))
    }

    /// Cells with `conf >= threshold`, in row-major order. A threshold above
    /// 1 selects nothing; at or below 0 it selects every cell.
    pub fn threshold_cells(&self, threshold: f64) -> Vec<(usize, usize, CellPrediction)> {
        self.iter_cells()
            .filter(|(_, _, c)| c.conf >= threshold)
            .map(|(i, j, c)| (i, j, *c))
            .collect()
    }

    /// Copy of the grid with every cell below `threshold` zeroed out.
    pub fn thresholded(&self, threshold: f64) -> DetectionGrid {
        let mut out = self.clone();
        for c in &mut out.cells {
            if c.conf < threshold {
                *c = CellPrediction::empty();
            }
        }
        out
    }

    /// Serializable dump containing only cells with positive confidence.
    pub fn to_dump(&self) -> GridDump {
        GridDump {
            rows: self.rows,
            cols: self.cols,
            image_dims: self.image_dims,
            cells: self
                .iter_cells()
                .filter(|(_, _, c)| c.conf > 0.0)
                .map(|(i, j, c)| DumpCell { i, j, conf: c.conf, coords: c.coords })
                .collect(),
        }
    }
}

/// Sparse JSON-facing form of a [`DetectionGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDump {
    pub rows: usize,
    pub cols: usize,
    pub image_dims: (u32, u32),
    pub cells: Vec<DumpCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DumpCell {
    pub i: usize,
    pub j: usize,
    pub conf: f64,
    pub coords: [f64; 8],
}

impl GridDump {
    pub fn into_grid(self) -> Result<DetectionGrid, GridError> {
        let mut grid =
            DetectionGrid::new(GridDims { rows: self.rows, cols: self.cols }, self.image_dims)?;
        for c in &self.cells {
            let existing = grid.cell(c.i, c.j)?;
            if existing.conf > 0.0 {
                return Err(GridError::DuplicateDumpCell(c.i, c.j));
            }
            grid.set_cell(c.i, c.j, CellPrediction::new(c.conf, c.coords)?)?;
        }
        Ok(grid)
    }
}

/// Result of encoding labels into a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEncoding {
    pub grid: DetectionGrid,
    /// Cells crossed by more than two chords; only the two longest were kept.
    pub crowded_cells: usize,
}

/// Clips segment `a-b` to the closed box `[x0, x1] x [y0, y1]`
/// (Liang-Barsky). Returns `None` when the intersection is empty or a point.
fn clip_segment(
    a: (f64, f64),
    b: (f64, f64),
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    // Each (p, q) pair encodes one box edge: the segment is inside where
    // p*t <= q.
    let checks = [(-dx, a.0 - x0), (dx, x1 - a.0), (-dy, a.1 - y0), (dy, y1 - a.1)];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                if r > t1 {
                    return None;
                }
                if r > t0 {
                    t0 = r;
                }
            } else {
                if r < t0 {
                    return None;
                }
                if r < t1 {
                    t1 = r;
                }
            }
        }
    }
    if t0 >= t1 {
        return None;
    }
    let e0 = (a.0 + t0 * dx, a.1 + t0 * dy);
    let e1 = (a.0 + t1 * dx, a.1 + t1 * dy);
    if e0 == e1 {
        return None;
    }
    Some((e0, e1))
}

/// Encodes ground-truth labels into a detection grid. Every cell whose
/// half-open pixel box is crossed by a nonzero-length chord of some label
/// becomes positive (`conf = 1`) and stores the chord endpoints normalized
/// to the cell. One chord is duplicated into both pairs; two chords fill the
/// pairs in label order; more than two keep the two longest and count the
/// cell as crowded.
pub fn labels_to_grid(
    labels: &[StairLineLabel],
    dims: GridDims,
    image_dims: (u32, u32),
) -> Result<LabelEncoding, GridError> {
    let mut grid = DetectionGrid::new(dims, image_dims)?;
    let (w, h) = (f64::from(image_dims.0), f64::from(image_dims.1));
    for l in labels {
        for (x, y) in [(l.x1, l.y1), (l.x2, l.y2)] {
            if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
                return Err(GridError::LabelOutOfBounds {
                    x,
                    y,
                    w: image_dims.0,
                    h: image_dims.1,
                });
            }
        }
    }

    let cw = grid.cell_width();
    let ch = grid.cell_height();
    // Chords per cell, gathered before pair assignment.
    let mut chords: Vec<Vec<((f64, f64), (f64, f64))>> =
        vec![Vec::new(); grid.rows() * grid.cols()];

    for l in labels {
        let a = (l.x1, l.y1);
        let b = (l.x2, l.y2);
        let j_lo = ((a.0.min(b.0) / cw).floor() as usize).min(grid.cols() - 1);
        let j_hi = ((a.0.max(b.0) / cw).floor() as usize).min(grid.cols() - 1);
        let i_lo = ((a.1.min(b.1) / ch).floor() as usize).min(grid.rows() - 1);
        let i_hi = ((a.1.max(b.1) / ch).floor() as usize).min(grid.rows() - 1);
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                let (bx0, by0) = (j as f64 * cw, i as f64 * ch);
                let (bx1, by1) = (bx0 + cw, by0 + ch);
                let Some((e0, e1)) = clip_segment(a, b, bx0, bx1, by0, by1) else {
                    continue;
                };
                // Half-open boxes: a chord lying on the max edge belongs to
                // the neighboring cell where that edge is the min edge.
                if (e0.0 == bx1 && e1.0 == bx1) || (e0.1 == by1 && e1.1 == by1) {
                    continue;
                }
                let norm = |p: (f64, f64)| ((p.0 - bx0) / cw, (p.1 - by0) / ch);
                let (mut n0, mut n1) = (norm(e0), norm(e1));
                if n0.0 > n1.0 || (n0.0 == n1.0 && n0.1 > n1.1) {
                    std::mem::swap(&mut n0, &mut n1);
                }
                chords[i * grid.cols() + j].push((n0, n1));
            }
        }
    }

    let mut crowded = 0usize;
    let cols = grid.cols();
    for (idx, mut cell_chords) in chords.into_iter().enumerate() {
        if cell_chords.is_empty() {
            continue;
        }
        if cell_chords.len() > 2 {
            crowded += 1;
            // Two longest chords in pixel space; stable sort keeps label
            // order among ties.
            cell_chords.sort_by(|p, q| {
                let len = |c: &((f64, f64), (f64, f64))| {
                    let dx = (c.1 .0 - c.0 .0) * cw;
                    let dy = (c.1 .1 - c.0 .1) * ch;
                    dx * dx + dy * dy
                };
                len(q).partial_cmp(&len(p)).expect("chord lengths are finite")
            });
            cell_chords.truncate(2);
        }
        let (p1, p2) = (cell_chords[0], *cell_chords.last().expect("nonempty"));
        let coords = [
            p1.0 .0, p1.0 .1, p1.1 .0, p1.1 .1, //
            p2.0 .0, p2.0 .1, p2.1 .0, p2.1 .1,
        ];
        let clamp01 = |v: f64| v.clamp(0.0, 1.0);
        let coords = coords.map(clamp01);
        grid.set_cell(idx / cols, idx % cols, CellPrediction::new(1.0, coords)?)?;
    }

    Ok(LabelEncoding { grid, crowded_cells: crowded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_record_file() {
        let labels = parse_labels("0 10.5 20 300 22\n1 5 40 500 41\n").unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0].cls, LineClass::Convex);
        assert_eq!(labels[0].x1, 10.5);
        assert_eq!(labels[1].cls, LineClass::Concave);
        assert_eq!(labels[1].y2, 41.0);
    }

    #[test]
    fn parses_empty_text_to_no_labels() {
        assert_eq!(parse_labels("").unwrap(), vec![]);
        assert_eq!(parse_labels("\n  \n").unwrap(), vec![]);
    }

    #[test]
    fn rejects_reversed_endpoints_with_line_number() {
        let err = parse_labels("0 1 1 5 1\n1 10 10 5 10\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.kind, LabelParseKind::EndpointOrder(10.0, 5.0));
    }

    #[test]
    fn rejects_bad_class_and_field_count_and_nonnumeric() {
        let err = parse_labels("2 0 0 1 1\n").unwrap_err();
        assert_eq!(err.kind, LabelParseKind::BadClass(2));
        let err = parse_labels("0 1 2 3\n").unwrap_err();
        assert_eq!(err.kind, LabelParseKind::FieldCount(4));
        let err = parse_labels("0 a 2 3 4\n").unwrap_err();
        assert_eq!(err.kind, LabelParseKind::NotANumber("a".into()));
    }

    #[test]
    fn label_format_round_trips() {
        let labels = vec![
            StairLineLabel::new(LineClass::Convex, (0.0, 100.0), (511.0, 102.5)),
            StairLineLabel::new(LineClass::Concave, (3.25, 200.0), (500.0, 201.0)),
        ];
        assert_eq!(parse_labels(&format_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn horizontal_label_fills_one_row() {
        let labels = [StairLineLabel::new(LineClass::Convex, (0.0, 100.0), (511.999, 100.0))];
        let enc = labels_to_grid(&labels, GridDims::default(), (512, 512)).unwrap();
        assert_eq!(enc.crowded_cells, 0);
        let positives = enc.grid.threshold_cells(0.5);
        assert_eq!(positives.len(), 16);
        for (i, _, cell) in &positives {
            assert_eq!(*i, 6, "y=100 lies in row 6 (rows are 16 px tall)");
            // Single chord duplicated into both pairs.
            assert_eq!(cell.pair_one(), cell.pair_two());
        }
    }

    #[test]
    fn border_tangent_label_goes_to_row_where_border_is_min_edge() {
        // y = 96 is the border between rows 5 and 6; half-open boxes put it
        // in row 6.
        let labels = [StairLineLabel::new(LineClass::Convex, (0.0, 96.0), (100.0, 96.0))];
        let enc = labels_to_grid(&labels, GridDims::default(), (512, 512)).unwrap();
        for (i, _, _) in enc.grid.threshold_cells(0.5) {
            assert_eq!(i, 6);
        }
        assert!(!enc.grid.threshold_cells(0.5).is_empty());
    }

    #[test]
    fn empty_labels_leave_grid_empty() {
        let enc = labels_to_grid(&[], GridDims::default(), (512, 512)).unwrap();
        assert!(enc.grid.threshold_cells(f64::MIN_POSITIVE).is_empty());
    }

    #[test]
    fn out_of_bounds_label_is_rejected() {
        let labels = [StairLineLabel::new(LineClass::Convex, (0.0, 10.0), (513.0, 10.0))];
        let err = labels_to_grid(&labels, GridDims::default(), (512, 512)).unwrap_err();
        assert!(matches!(err, GridError::LabelOutOfBounds { .. }));
    }

    #[test]
    fn crossing_labels_share_a_cell_with_two_pairs() {
        // Both labels pass through cell (8, 8): x in [256, 288), y in [128, 144).
        let a = StairLineLabel::new(LineClass::Convex, (0.0, 130.0), (511.0, 130.0));
        let b = StairLineLabel::new(LineClass::Concave, (0.0, 143.0), (511.0, 130.5));
        let enc = labels_to_grid(&[a, b], GridDims::default(), (512, 512)).unwrap();
        let cell = enc.grid.cell(8, 8).unwrap();
        assert_eq!(cell.conf, 1.0);
        assert_ne!(cell.pair_one(), cell.pair_two());
        // Pair order follows label order: pair one from label a (y=130
        // normalizes to (130-128)/16 = 0.125).
        assert!((cell.pair_one().0 .1 - 0.125).abs() < 1e-12);
    }

    #[test]
    fn crowded_cell_keeps_two_longest_chords() {
        // Three near-horizontal labels inside one cell row; the third is a
        // short stub crossing only cell (6, 0).
        let long1 = StairLineLabel::new(LineClass::Convex, (0.0, 97.0), (511.0, 97.0));
        let long2 = StairLineLabel::new(LineClass::Convex, (0.0, 99.0), (511.0, 99.0));
        let stub = StairLineLabel::new(LineClass::Concave, (1.0, 101.0), (9.0, 101.0));
        let enc = labels_to_grid(&[long1, long2, stub], GridDims::default(), (512, 512)).unwrap();
        assert_eq!(enc.crowded_cells, 1);
        let cell = enc.grid.cell(6, 0).unwrap();
        // Both kept chords span the full cell width (the stub, 8 px, lost).
        for pair in [cell.pair_one(), cell.pair_two()] {
            assert!((pair.1 .0 - pair.0 .0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_to_pixel_reference_points() {
        let g = DetectionGrid::standard();
        assert_eq!(g.cell_to_pixel(0, 0, (0.5, 0.5)).unwrap(), (16.0, 8.0));
        assert_eq!(g.cell_to_pixel(6, 8, (0.25, 0.5)).unwrap(), (264.0, 104.0));
        assert!(matches!(
            g.cell_to_pixel(32, 0, (0.0, 0.0)).unwrap_err(),
            GridError::CellIndex { .. }
        ));
    }

    #[test]
    fn threshold_is_inclusive_and_out_of_range_thresholds_behave() {
        let mut g = DetectionGrid::standard();
        g.set_cell(3, 4, CellPrediction::new(0.5, [0.5; 8]).unwrap()).unwrap();
        g.set_cell(5, 6, CellPrediction::new(0.49, [0.5; 8]).unwrap()).unwrap();
        let kept = g.threshold_cells(0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!((kept[0].0, kept[0].1), (3, 4));
        assert!(g.threshold_cells(1.0 + 1e-9).is_empty());
        assert_eq!(g.threshold_cells(0.0).len(), 32 * 16);
    }

    #[test]
    fn grid_dump_json_round_trips() {
        let labels = [
            StairLineLabel::new(LineClass::Convex, (10.0, 100.0), (500.0, 110.0)),
            StairLineLabel::new(LineClass::Concave, (20.0, 200.0), (490.0, 195.0)),
        ];
        let enc = labels_to_grid(&labels, GridDims::default(), (512, 512)).unwrap();
        let json = serde_json::to_string(&enc.grid.to_dump()).unwrap();
        let dump: GridDump = serde_json::from_str(&json).unwrap();
        assert_eq!(dump.into_grid().unwrap(), enc.grid);
    }

    #[test]
    fn dump_rejects_duplicate_cells() {
        let dump = GridDump {
            rows: 32,
            cols: 16,
            image_dims: (512, 512),
            cells: vec![
                DumpCell { i: 1, j: 1, conf: 0.9, coords: [0.5; 8] },
                DumpCell { i: 1, j: 1, conf: 0.8, coords: [0.5; 8] },
            ],
        };
        assert!(matches!(dump.into_grid().unwrap_err(), GridError::DuplicateDumpCell(1, 1)));
    }

    /// Brute-force membership oracle: a cell is positive iff some label has
    /// a nonzero-length intersection with the cell's half-open box, tested
    /// by dense point sampling along the label.
    fn oracle_positive(grid: &DetectionGrid, label: &StairLineLabel) -> Vec<(usize, usize)> {
        let cw = grid.cell_width();
        let ch = grid.cell_height();
        let mut hits = std::collections::BTreeSet::new();
        let n = 20_000;
        let len = ((label.x2 - label.x1).powi(2) + (label.y2 - label.y1).powi(2)).sqrt();
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let x = label.x1 + t * (label.x2 - label.x1);
            let y = label.y1 + t * (label.y2 - label.y1);
            let j = (x / cw).floor() as isize;
            let i = (y / ch).floor() as isize;
            if i >= 0 && j >= 0 && (i as usize) < grid.rows() && (j as usize) < grid.cols() {
                hits.insert((i as usize, j as usize, k));
            }
        }
        // Collapse consecutive samples per cell and drop cells grazed by
        // fewer than two samples (chord shorter than one sampling quantum,
        // below the oracle's resolution).
        let mut counts = std::collections::BTreeMap::new();
        for (i, j, _) in hits {
            *counts.entry((i, j)).or_insert(0usize) += 1;
        }
        let quantum = len / n as f64;
        counts
            .into_iter()
            .filter(|&(_, c)| (c as f64) * quantum > 2.0 * quantum)
            .map(|((i, j), _)| (i, j))
            .collect()
    }

    proptest! {
        /// Encoding then decoding reconstructs chords on the original
        /// segment to well under half a pixel.
        #[test]
        fn round_trip_chords_lie_on_label(
            x1 in 0.0f64..511.0,
            y1 in 0.0f64..511.0,
            dx in 32.0f64..400.0,
            dy in -40.0f64..40.0,
        ) {
            let x2 = (x1 + dx).min(511.9);
            let y2 = (y1 + dy).clamp(0.0, 511.9);
            let label = StairLineLabel::new(LineClass::Convex, (x1, y1), (x2, y2));
            let enc = labels_to_grid(&[label], GridDims::default(), (512, 512)).unwrap();
            let seg_len2 = (x2 - x1).powi(2) + (y2 - y1).powi(2);
            for (i, j, cell) in enc.grid.threshold_cells(0.5) {
                for (nx, ny) in [
                    cell.pair_one().0, cell.pair_one().1,
                    cell.pair_two().0, cell.pair_two().1,
                ] {
                    let (px, py) = enc.grid.cell_to_pixel(i, j, (nx, ny)).unwrap();
                    // Distance from (px, py) to the label segment.
                    let t = (((px - x1) * (x2 - x1) + (py - y1) * (y2 - y1)) / seg_len2)
                        .clamp(0.0, 1.0);
                    let (cx, cy) = (x1 + t * (x2 - x1), y1 + t * (y2 - y1));
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    prop_assert!(d < 0.5, "decoded endpoint {d} px off the label");
                }
            }
        }

        /// Cell membership matches a dense point-sampling oracle.
        #[test]
        fn encode_membership_matches_sampling_oracle(
            x1 in 0.0f64..400.0,
            y1 in 10.0f64..500.0,
            dx in 64.0f64..111.0,
            dy in -30.0f64..30.0,
        ) {
            let label = StairLineLabel::new(
                LineClass::Convex,
                (x1, y1),
                ((x1 + dx).min(511.9), (y1 + dy).clamp(0.0, 511.9)),
            );
            let enc = labels_to_grid(&[label], GridDims::default(), (512, 512)).unwrap();
            let got: Vec<(usize, usize)> =
                enc.grid.threshold_cells(0.5).into_iter().map(|(i, j, _)| (i, j)).collect();
            let want = oracle_positive(&enc.grid, &label);
            // The oracle under-counts cells grazed by chords shorter than
            // its sampling quantum; every oracle cell must be present and
            // extras must be nearly-degenerate grazes.
            for cell in &want {
                prop_assert!(got.contains(cell), "missing cell {cell:?}");
            }
            for cell in &got {
                if !want.contains(cell) {
                    let c = enc.grid.cell(cell.0, cell.1).unwrap();
                    let ((ax, ay), (bx, by)) = c.pair_one();
                    let len = (((bx - ax) * 32.0).powi(2) + ((by - ay) * 16.0).powi(2)).sqrt();
                    prop_assert!(len < 0.5, "unexpected substantial chord in {cell:?}");
                }
            }
        }

        /// cell_to_pixel is a bijection between the unit square and the
        /// cell's pixel box.
        #[test]
        fn cell_pixel_map_round_trips(
            i in 0usize..32, j in 0usize..16,
            nx in 0.0f64..1.0, ny in 0.0f64..1.0,
        ) {
            let g = DetectionGrid::standard();
            let (px, py) = g.cell_to_pixel(i, j, (nx, ny)).unwrap();
            let (x0, y0, cw, ch) = g.cell_box(i, j).unwrap();
            prop_assert!(px >= x0 && px <= x0 + cw && py >= y0 && py <= y0 + ch);
            prop_assert!(((px - x0) / cw - nx).abs() < 1e-12);
            prop_assert!(((py - y0) / ch - ny).abs() < 1e-12);
        }
    }
}
