//! End-to-end stair measurement: detection grid + depth map + gravity in,
//! metric step dimensions out.
//!
//! The chain: threshold the grid, cluster cells into image-space lines,
//! sample each line at nine abscissas, recover a depth for every sample from
//! the surrounding depth pixels, lift the samples to 3D, reduce each line to
//! an anchor point and a direction, rotate everything into the
//! gravity-aligned world frame, estimate yaw from the line directions, spin
//! the anchors into the stair frame, and read step widths and heights off
//! consecutive anchor differences.

use crate::cluster::{cluster_grid, fit_line_2d, ClusterError, ClusterParams, StairLine2D};
use crate::geom::{
    attitude_from_gravity, backproject, classify_direction, fit_line_3d, mean_yaw, measure_steps,
    world_to_stair, yaw_from_line, yoz_intersection, CameraRig, EdgeAnchor, GeomError,
    StairDirection, StepDims, WorldRotation,
};
use crate::grid::DetectionGrid;
use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("depth map is {depth_w}x{depth_h} but the grid covers {grid_w}x{grid_h}")]
    DimsMismatch { depth_w: u32, depth_h: u32, grid_w: u32, grid_h: u32 },
    #[error("bad depth data: {0}")]
    BadDepthData(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// A dense depth image in meters, row-major, with `0.0` marking holes
/// (pixels with no depth reading). Values are stored as f64; the on-disk
/// format is narrower, so maps that round-trip through a file lose a few
/// parts in 10^7.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        DepthMap { width, height, data: vec![0.0; width as usize * height as usize] }
    }

    /// Wraps a row-major buffer. Every value must be finite and nonnegative
    /// (zero = hole) and the length must match the dimensions.
    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self, MeasureError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(MeasureError::BadDepthData(format!(
                "{}x{} needs {} values, got {}",
                width,
                height,
                expected,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(MeasureError::BadDepthData(format!("invalid depth value {bad}")));
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Tunable knobs of the measurement chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureParams {
    /// Cells below this confidence are ignored.
    pub conf_threshold: f64,
    pub cluster: ClusterParams,
    /// Minimum metric component (m) for a consecutive anchor difference to
    /// count as a tread width or riser height.
    pub omega: f64,
    /// Measurements stop after this many steps (the near ones are the
    /// reliable ones).
    pub max_steps: usize,
    /// A line needs at least this many depth-resolved samples to be lifted
    /// to 3D.
    pub min_valid_samples: usize,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            conf_threshold: 0.5,
            cluster: ClusterParams::default(),
            omega: 0.05,
            max_steps: 3,
            min_valid_samples: 4,
        }
    }
}

/// Counters describing what happened inside one measurement run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MeasureDiagnostics {
    /// Cells at or above the confidence threshold.
    pub positive_cells: usize,
    /// Image-space lines produced by clustering.
    pub lines_clustered: usize,
    /// Lines that survived depth recovery and were lifted to 3D.
    pub lines_measured: usize,
    /// Lines dropped for too few depth-resolved samples or a degenerate fit.
    pub lines_dropped: usize,
    /// Samples that fell back to the nearest valid pixel in a 3x3 patch.
    pub nearest_fallback_samples: usize,
    /// Lines that missed the image center column and used even sampling.
    pub offcenter_lines: usize,
}

/// The result of one measurement run. `direction`, `yaw` and `steps` are
/// empty when the scene did not yield enough usable lines; pitch and roll
/// come from gravity alone and are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct StairMeasurement {
    pub direction: Option<StairDirection>,
    pub steps: Vec<StepDims>,
    /// Stair yaw in radians (mean over measured lines).
    pub yaw: Option<f64>,
    pub pitch: f64,
    pub roll: f64,
}

/// Nine sample abscissas along a clustered line. When the line straddles the
/// image center column the samples sit at `w/2 + m*d` for `m` in `-4..=4`
/// with `d` a quarter of the shorter arm — matching how the detector's
/// central columns anchor the line. Lines that miss the center fall back to
/// nine evenly spaced abscissas (`centered == false`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledLine {
    pub xs: [f64; 9],
    pub centered: bool,
}

pub fn sample_line_points(line: &StairLine2D, image_width: f64) -> SampledLine {
    let half = image_width / 2.0;
    let d = ((half - line.x1).min(line.x2 - half)) / 4.0;
    let mut xs = [0.0; 9];
    if d > 0.0 {
        for (m, x) in xs.iter_mut().enumerate() {
            *x = half + (m as f64 - 4.0) * d;
        }
        SampledLine { xs, centered: true }
    } else {
        let span = line.x2 - line.x1;
        for (m, x) in xs.iter_mut().enumerate() {
            *x = line.x1 + span * m as f64 / 8.0;
        }
        SampledLine { xs, centered: false }
    }
}

/// Depth of a stair edge at sub-pixel position `(u_c, v_star)`, where `u_c`
/// is a pixel-column center.
///
/// Depth pixels straddling an edge belong to one of the two planes meeting
/// there, and inverse depth restricted to a pixel column is affine in v on
/// any plane. So the pixels within 4.5 px above and below the edge are fit
/// separately (1/z against v) and extrapolated to the edge. Two consistent
/// sides average; two conflicting sides mean one of them looks past a
/// silhouette at background, which is always the farther reading, so the
/// minimum wins. A side with a single valid pixel contributes that pixel's
/// depth; with both sides empty the nearest valid pixel in the surrounding
/// 3x3 patch stands in, and `true` is returned alongside to flag the
/// fallback.
fn edge_depth(depth: &DepthMap, u_c: f64, v_star: f64, omega: f64) -> Option<(f64, bool)> {
    if let Some((z, _)) = edge_depth_sides(depth, u_c, v_star, omega) {
        return Some((z, false));
    }
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let ix = (u_c.floor() as i64).clamp(0, w - 1);
    let iyc = ((v_star - 0.5).round() as i64).clamp(0, h - 1);
    let mut best: Option<(f64, f64)> = None;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (jx, jy) = (ix + dx, iyc + dy);
            if jx < 0 || jy < 0 || jx >= w || jy >= h {
                continue;
            }
            let z = depth.get(jx as u32, jy as u32);
            if z <= 0.0 {
                continue;
            }
            let du = jx as f64 + 0.5 - u_c;
            let dv = jy as f64 + 0.5 - v_star;
            let d2 = du * du + dv * dv;
            if best.map_or(true, |(bd, _)| d2 < bd) {
                best = Some((d2, z));
            }
        }
    }
    best.map(|(_, z)| (z, true))
}

/// The two-sided part of [`edge_depth`]: `None` when the column's whole
/// fitting window is holes (the caller decides how to fall back). The flag
/// is `true` when the estimate is *robust* — both sides of the edge had at
/// least two valid pixels to fit — so the value cannot rest on a lone pixel
/// or on a single side grazing past an occluding contour onto a farther
/// surface. Sides disagreeing beyond `omega` settle toward the nearer one:
/// past an occluding edge the stray side always reads farther, never nearer,
/// so the minimum is the side the edge actually lies on.
fn edge_depth_sides(
    depth: &DepthMap,
    u_c: f64,
    v_star: f64,
    omega: f64,
) -> Option<(f64, bool)> {
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let ix = (u_c.floor() as i64).clamp(0, w - 1);
    let iy_lo = ((v_star - 5.0).ceil() as i64).max(0);
    let iy_hi = ((v_star + 4.0).floor() as i64).min(h - 1);
    let mut col: Vec<(f64, f64)> = Vec::new();
    for iy in iy_lo..=iy_hi {
        let vc = iy as f64 + 0.5;
        if (vc - v_star).abs() > 4.5 {
            continue;
        }
        let z = depth.get(ix as u32, iy as u32);
        if z <= 0.0 {
            continue;
        }
        col.push((vc, z));
    }
    // An occluding edge prints a depth jump in the column. When one shows
    // between adjacent rows of the window, split the sides there rather than
    // at the predicted ordinate: under label jitter the prediction can drift
    // past the edge, and splitting at the jump keeps each side on one
    // physical surface. A jump dwarfs sensor noise, so the largest
    // above-tolerance step between adjacent rows is the edge; without one
    // (ordinary meeting planes), the prediction itself divides the sides.
    let mut split = v_star;
    let mut best_jump = omega;
    for pair in col.windows(2) {
        let ((v0, z0), (v1, z1)) = (pair[0], pair[1]);
        if v1 - v0 <= 1.5 && (z1 - z0).abs() > best_jump {
            best_jump = (z1 - z0).abs();
            split = 0.5 * (v0 + v1);
        }
    }
    let (above, below): (Vec<(f64, f64)>, Vec<(f64, f64)>) =
        col.into_iter().partition(|&(vc, _)| vc < split);
    // A side's pixels should all lie on the one surface meeting the edge.
    // When the predicted ordinate is off (label jitter), the window can
    // straddle an occlusion boundary and mix a second, farther surface into
    // the fit; the mix extrapolates to depths that can undercut the honest
    // side and win the nearer-side tie-break below. A straddled side betrays
    // itself, though: inverse depth stops being affine in the ordinate, so
    // fit residuals blow past noise scale. Trim the pixel farthest from the
    // edge until the side is self-consistent.
    let residual_tol = 0.25 * omega;
    let extrapolate = |pts: &[(f64, f64)]| -> Option<f64> {
        let mut pts: Vec<(f64, f64)> = pts.to_vec();
        // Nearest to the edge first, so trimming pops the farthest pixel.
        pts.sort_by(|a, b| (a.0 - v_star).abs().total_cmp(&(b.0 - v_star).abs()));
        loop {
            match pts.len() {
                0 => return None,
                1 => return Some(pts[0].1),
                _ => {
                    let inv: Vec<(f64, f64)> =
                        pts.iter().map(|&(v, z)| (v, 1.0 / z)).collect();
                    let (a, c) = fit_line_2d(&inv).ok()?;
                    // Residuals measured in depth units: |z - 1/pred|.
                    let worst = inv
                        .iter()
                        .map(|&(v, iz)| {
                            let pred = a * v + c;
                            if pred <= 1e-9 {
                                f64::INFINITY
                            } else {
                                (pred - iz).abs() / (iz * pred)
                            }
                        })
                        .fold(0.0f64, f64::max);
                    if worst > residual_tol && pts.len() > 2 {
                        pts.pop();
                        continue;
                    }
                    let iz = a * v_star + c;
                    return (iz > 1e-9).then(|| 1.0 / iz);
                }
            }
        }
    };
    let full = |side: &[(f64, f64)]| side.len() >= 2;
    match (extrapolate(&above), extrapolate(&below)) {
        (Some(za), Some(zb)) => {
            let agree = (za - zb).abs() <= omega;
            let z = if agree { 0.5 * (za + zb) } else { za.min(zb) };
            Some((z, full(&above) && full(&below)))
        }
        (Some(z), None) | (None, Some(z)) => Some((z, false)),
        (None, None) => None,
    }
}

/// Runs the full measurement chain. Returns the measurement plus run
/// diagnostics; scenes with no usable lines yield an empty measurement
/// rather than an error, so the caller can distinguish "nothing detected"
/// from a malformed input or degenerate geometry (which do error).
pub fn measure_pipeline(
    grid: &DetectionGrid,
    depth: &DepthMap,
    rig: &CameraRig,
    params: &MeasureParams,
) -> Result<(StairMeasurement, MeasureDiagnostics), MeasureError> {
    rig.validate()?;
    let (gw, gh) = grid.image_dims();
    if depth.dims() != (gw, gh) {
        return Err(MeasureError::DimsMismatch {
            depth_w: depth.width(),
            depth_h: depth.height(),
            grid_w: gw,
            grid_h: gh,
        });
    }
    let gravity = rig.gravity_vector();
    let attitude = attitude_from_gravity(&gravity)?;
    let world = WorldRotation::from_gravity(&gravity)?;

    let mut diag = MeasureDiagnostics::default();
    let active = grid.thresholded(params.conf_threshold);
    diag.positive_cells = active.threshold_cells(f64::MIN_POSITIVE).len();

    let empty = |diag: MeasureDiagnostics| {
        Ok((
            StairMeasurement {
                direction: None,
                steps: Vec::new(),
                yaw: None,
                pitch: attitude.pitch,
                roll: attitude.roll,
            },
            diag,
        ))
    };

    let lines = cluster_grid(&active, &params.cluster)?;
    diag.lines_clustered = lines.len();
    if lines.is_empty() {
        return empty(diag);
    }

    let (img_w, img_h) = (f64::from(gw), f64::from(gh));
    let mut anchors_world: Vec<Point3<f64>> = Vec::new();
    let mut yaws: Vec<f64> = Vec::new();

    for line in &lines {
        let sampled = sample_line_points(line, img_w);
        if !sampled.centered {
            diag.offcenter_lines += 1;
        }
        // Each entry: backprojected point, whether the estimate was robust
        // (two-sided), whether it came from the last-resort neighbor fallback.
        let mut samples: Vec<(Point3<f64>, bool, bool)> = Vec::new();
        let x_mid = 0.5 * (line.x1 + line.x2);
        for &x in &sampled.xs {
            let ix = (x.floor()).clamp(0.0, img_w - 1.0);
            // A sample at a run end can round to a column at the stair
            // silhouette, where the fitting window is partly holes or it
            // leaks onto surfaces past the corner. Any column on the line
            // is an equally good edge sample, so slide up to two columns
            // toward the line's interior looking for a robust two-sided
            // estimate before settling for a degraded one.
            let inward = if ix + 0.5 < x_mid { 1.0 } else { -1.0 };
            let mut found = None;
            for slide in 0..3 {
                let col = ix + inward * f64::from(slide);
                if !(0.0..img_w).contains(&col) {
                    continue;
                }
                let u_c = col + 0.5;
                let v_star = line.k * u_c + line.b;
                if !(0.0..=img_h).contains(&v_star) {
                    continue;
                }
                if let Some((z, true)) = edge_depth_sides(depth, u_c, v_star, params.omega) {
                    found = Some((u_c, v_star, z, true, false));
                    break;
                }
            }
            if found.is_none() {
                let u_c = ix + 0.5;
                let v_star = line.k * u_c + line.b;
                if (0.0..=img_h).contains(&v_star) {
                    found = edge_depth(depth, u_c, v_star, params.omega)
                        .map(|(z, fell_back)| (u_c, v_star, z, false, fell_back));
                }
            }
            let Some((u_c, v_star, z, robust, fell_back)) = found else {
                continue;
            };
            if let Ok(p) = backproject((u_c, v_star), z, rig) {
                samples.push((p, robust, fell_back));
            }
        }
        // Degraded samples would drag a known bias into the fit, so they
        // only play when the robust ones alone cannot carry the line.
        let robust_count = samples.iter().filter(|s| s.1).count();
        if robust_count >= params.min_valid_samples {
            samples.retain(|s| s.1);
        }
        diag.nearest_fallback_samples += samples.iter().filter(|s| s.2).count();
        let pts: Vec<Point3<f64>> = samples.iter().map(|s| s.0).collect();
        if pts.len() < params.min_valid_samples {
            diag.lines_dropped += 1;
            continue;
        }

        let z_spread = pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max)
            - pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let lifted = if z_spread <= 1e-9 {
            // Square-on view: the line sits at constant depth, so the x-z
            // fit is degenerate. Anchor through the y(x) fit instead; the
            // direction is horizontal in the depth sense.
            let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();
            let z_bar = pts.iter().map(|p| p.z).sum::<f64>() / pts.len() as f64;
            fit_line_2d(&xy)
                .ok()
                .map(|(m, y0)| (Point3::new(0.0, y0, z_bar), Vector3::new(1.0, m, 0.0)))
        } else {
            fit_line_3d(&pts)
                .ok()
                .and_then(|l| yoz_intersection(&l).ok().map(|a| (a, l.direction())))
        };
        let Some((anchor_cam, dir_cam)) = lifted else {
            diag.lines_dropped += 1;
            continue;
        };

        let anchor_w = world.transform_point(&anchor_cam);
        let dir_w = world.transform_vector(&dir_cam);
        let yaw = match yaw_from_line(&Point3::origin(), &Point3::from(dir_w)) {
            Ok(y) => y,
            Err(_) => {
                diag.lines_dropped += 1;
                continue;
            }
        };
        anchors_world.push(anchor_w);
        yaws.push(yaw);
    }

    diag.lines_measured = anchors_world.len();
    if anchors_world.is_empty() {
        return empty(diag);
    }

    let yaw = mean_yaw(&yaws)?;
    let mut anchors: Vec<EdgeAnchor> = anchors_world
        .iter()
        .map(|p| EdgeAnchor { point: world_to_stair(p, yaw), cls: None })
        .collect();
    // Anchors on one physical rung agree in z only to fit precision, so a raw
    // lexicographic sort can break the tie the wrong way and make the hop to
    // the next rung carry a doubled step height. Group anchors whose z agree
    // within omega into one rung, then order each rung's points to follow the
    // overall vertical trend so the near-to-far walk stays monotone.
    anchors.sort_by(|a, b| a.point.z.total_cmp(&b.point.z));
    let mut rungs: Vec<Vec<EdgeAnchor>> = Vec::new();
    for a in anchors {
        match rungs.last_mut() {
            Some(r) if (a.point.z - r[0].point.z).abs() <= params.omega => r.push(a),
            _ => rungs.push(vec![a]),
        }
    }
    let mean_y =
        |r: &[EdgeAnchor]| r.iter().map(|a| a.point.y).sum::<f64>() / r.len() as f64;
    let climbing = rungs.len() < 2
        || mean_y(rungs.last().expect("nonempty")) >= mean_y(&rungs[0]);
    let mut anchors: Vec<EdgeAnchor> = Vec::new();
    for mut rung in rungs {
        rung.sort_by(|a, b| a.point.y.total_cmp(&b.point.y));
        if !climbing {
            rung.reverse();
        }
        anchors.append(&mut rung);
    }

    let (direction, steps) = if anchors.len() >= 2 {
        let direction = match classify_direction(&anchors) {
            Ok(d) => Some(d),
            // All anchors at one depth (a single edge seen square-on):
            // nothing to classify, nothing to measure against.
            Err(GeomError::ZeroZVariance) => None,
            Err(e) => return Err(e.into()),
        };
        let points: Vec<Point3<f64>> = anchors.iter().map(|a| a.point).collect();
        let mut steps = measure_steps(&points, params.omega)?;
        steps.truncate(params.max_steps);
        (direction, steps)
    } else {
        (None, Vec::new())
    };

    Ok((
        StairMeasurement {
            direction,
            steps,
            yaw: Some(yaw),
            pitch: attitude.pitch,
            roll: attitude.roll,
        },
        diag,
    ))
}
