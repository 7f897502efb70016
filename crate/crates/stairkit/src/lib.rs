//! Postprocessing and verification toolkit for grid-based stair perception.
//!
//! A stair detector divides an RGB-D frame into a coarse grid and predicts,
//! per cell, a confidence plus up to two normalized line segments ("chords")
//! where a stair edge crosses that cell. This crate covers everything around
//! that representation:
//!
//! 1. [`grid`] — the detection-grid model: label parsing, ground-truth
//!    encoding, cell/pixel coordinate maps, thresholding, JSON dumps.
//! 2. [`fusion`] — reference kernels for the RGB-D backbone: the lossless
//!    space-to-depth rearrangement, selective channel-weighted fusion, and
//!    the backbone shape plan.
//! 3. [`loss`] — the multitask training loss, validation coordinate errors,
//!    the dynamic x/y weight schedule, and cell-level detection metrics.
//! 4. [`cluster`] — grouping per-cell chords into whole stair lines by
//!    middle-out least-squares clustering.
//! 5. [`geom`] — the camera/IMU geometry chain: backprojection, 3D line
//!    fits, attitude from gravity, frame transforms, step measurement.
//! 6. [`pipeline`] — the end-to-end measurement pipeline from a detection
//!    grid plus depth map to metric step dimensions.
//! 7. [`synth`] — a synthetic stair scene generator (exact lattice
//!    geometry, ray-cast depth, projected ground-truth labels) used to
//!    verify the measurement chain end to end.
//! 8. [`io`] — file formats: label text files, grid dump JSON, rig JSON,
//!    and the small binary depth/feature-map containers.
//!
//! All numeric work is `f64`; depth rasters store `f32` per the on-disk
//! format. Functions are pure and single-threaded; batch callers may freely
//! parallelize over files, scenes, or lines.

pub mod cluster;
pub mod fusion;
pub mod geom;
pub mod grid;
pub mod io;
pub mod loss;
pub mod pipeline;
pub mod synth;

pub use cluster::{cell_segments, cluster_grid, fit_line_2d, ClusterParams, Segment2, StairLine2D};
pub use fusion::{
    backbone_shape_plan, focus_slice, focus_unslice, selective_fuse, AffineLogits, FeatureMap,
    FusionWeights, LogitSource, PoolActivation, SelectiveParams, ShapePlan, ShapePlanRow,
};
pub use geom::{
    attitude_from_gravity, backproject, camera_to_world, classify_direction, fit_line_3d,
    gravity_from_attitude, mean_yaw, measure_steps, project, world_to_stair, yaw_from_line,
    yoz_intersection, Attitude, CameraRig, EdgeAnchor, Line3DParams, StairDirection, StepDims,
    WorldRotation,
};
pub use grid::{
    labels_to_grid, parse_labels, CellPrediction, DetectionGrid, GridDims, LabelEncoding,
    LineClass, StairLineLabel,
};
pub use loss::{
    coord_errors, detection_metrics, multitask_loss, update_weights, LocationGate, LossBreakdown,
    LossMode, LossWeights, MetricReport, ValErrors,
};
pub use io::{
    read_depth, read_feature_map, read_grid_dump, read_labels, read_rig, write_depth,
    write_feature_map, write_grid_dump, write_labels, write_rig, IoError,
};
pub use pipeline::{
    measure_pipeline, sample_line_points, DepthMap, MeasureDiagnostics, MeasureError,
    MeasureParams, SampledLine, StairMeasurement,
};
pub use synth::{
    make_scene, perturb_grid, project_gt_lines, render_depth, sample_scene, GtEdge, Intrinsics,
    SceneSpec, Surface, SynthError, SyntheticScene,
};

/// Book chapters double as doc-tests so the guide can never drift from the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(grid, "../../../book/src/grid.md");
    chapter!(fusion, "../../../book/src/fusion.md");
    chapter!(loss, "../../../book/src/loss.md");
    chapter!(clustering, "../../../book/src/clustering.md");
    chapter!(geometry, "../../../book/src/geometry.md");
    chapter!(simulation, "../../../book/src/simulation.md");
}
