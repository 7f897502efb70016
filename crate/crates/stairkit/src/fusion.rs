//! Architectural kernels of the two-branch detector: the focus slice
//! (space-to-depth) rearrangement, channel-selective RGB/depth fusion, and
//! the backbone shape plan used to audit layer output sizes.
//!
//! These are pure numeric kernels: no convolutions and no training, just the
//! mechanisms whose arithmetic downstream stages rely on.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("data length {got} does not match {h}x{w}x{c}")]
    DataLength { h: usize, w: usize, c: usize, got: usize },
    #[error("feature map dims must be positive, got {0}x{1}x{2}")]
    BadDims(usize, usize, usize),
    #[error("feature map contains a non-finite value")]
    NonFinite,
    #[error("focus slice needs even spatial dims, got {0}x{1}")]
    OddSpatialDims(usize, usize),
    #[error("focus unslice needs channels divisible by 4, got {0}")]
    ChannelsNotDivisible(usize),
    #[error("feature map dims {0:?} and {1:?} differ")]
    DimsMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("logit generator sized for {got} channels, maps have {expected}")]
    LogitDims { expected: usize, got: usize },
    #[error("input {0}x{1} is not divisible by 32")]
    BadInputSize(u32, u32),
    #[error("width factor {0} must be positive and finite")]
    BadWidthFactor(f64),
}

/// Dense feature map stored row-major as `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, FusionError> {
        if h == 0 || w == 0 || c == 0 {
            return Err(FusionError::BadDims(h, w, c));
        }
        if data.len() != h * w * c {
            return Err(FusionError::DataLength { h, w, c, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite);
        }
        Ok(FeatureMap { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Result<Self, FusionError> {
        FeatureMap::new(h, w, c, vec![0.0; h * w * c])
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        c: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, FusionError> {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        FeatureMap::new(h, w, c, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Per-channel global average pool.
    pub fn global_avg_pool(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.c];
        for chunk in self.data.chunks_exact(self.c) {
            for (acc, v) in s.iter_mut().zip(chunk) {
                *acc += v;
            }
        }
        let n = (self.h * self.w) as f64;
        for v in &mut s {
            *v /= n;
        }
        s
    }
}

/// Space-to-depth rearrangement: each 2x2 spatial block becomes four channel
/// groups. Output channel `phase*c + ch` at `(y, x)` holds input `(2y + py,
/// 2x + px, ch)` where `phase = py*2 + px`, i.e. the groups are ordered
/// even-row/even-col, even/odd, odd/even, odd/odd.
pub fn focus_slice(input: &FeatureMap) -> Result<FeatureMap, FusionError> {
    let (h, w, c) = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(FusionError::OddSpatialDims(h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(oh, ow, 4 * c)?;
    for y in 0..h {
        for x in 0..w {
            let phase = (y % 2) * 2 + (x % 2);
            for ch in 0..c {
                out.set(y / 2, x / 2, phase * c + ch, input.get(y, x, ch));
            }
        }
    }
    Ok(out)
}

/// Inverse of [`focus_slice`]: `(h, w, 4c)` back to `(2h, 2w, c)`.
pub fn focus_unslice(input: &FeatureMap) -> Result<FeatureMap, FusionError> {
    let (h, w, c4) = input.dims();
    if c4 % 4 != 0 {
        return Err(FusionError::ChannelsNotDivisible(c4));
    }
    let c = c4 / 4;
    let mut out = FeatureMap::zeros(2 * h, 2 * w, c)?;
    for y in 0..2 * h {
        for x in 0..2 * w {
            let phase = (y % 2) * 2 + (x % 2);
            for ch in 0..c {
                out.set(y, x, ch, input.get(y / 2, x / 2, phase * c + ch));
            }
        }
    }
    Ok(out)
}

/// Optional nonlinearity applied to the pooled descriptor before the logit
/// maps. Off by default; exposed so the pooling-to-logits path can be
/// configured to match a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolActivation {
    Relu,
    Tanh,
    Sigmoid,
}

impl PoolActivation {
    fn apply(self, v: f64) -> f64 {
        match self {
            PoolActivation::Relu => v.max(0.0),
            PoolActivation::Tanh => v.tanh(),
            PoolActivation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

/// Affine map from the pooled descriptor to per-channel logits:
/// `logits = weight * s + bias` with `weight` a `c x c` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLogits {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineLogits {
    /// Identity weight, zero bias: logits equal the descriptor itself.
    pub fn identity(c: usize) -> Self {
        let mut weight = vec![0.0; c * c];
        for k in 0..c {
            weight[k * c + k] = 1.0;
        }
        AffineLogits { weight, bias: vec![0.0; c] }
    }

    fn check(&self, c: usize) -> Result<(), FusionError> {
        if self.bias.len() != c || self.weight.len() != c * c {
            return Err(FusionError::LogitDims { expected: c, got: self.bias.len() });
        }
        Ok(())
    }

    fn apply(&self, s: &[f64]) -> Vec<f64> {
        let c = s.len();
        let mut out = self.bias.clone();
        for (row, o) in out.iter_mut().enumerate() {
            let w = &self.weight[row * c..(row + 1) * c];
            *o += w.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

/// How per-channel branch logits are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum LogitSource {
    /// Two affine maps applied to the shared pooled descriptor.
    Affine { rgb: AffineLogits, depth: AffineLogits },
    /// Logit vectors supplied directly; deterministic and descriptor-free.
    Fixed { rgb: Vec<f64>, depth: Vec<f64> },
}

/// Configuration of the selective fusion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveParams {
    pub activation: Option<PoolActivation>,
    pub logits: LogitSource,
}

impl SelectiveParams {
    pub fn affine(rgb: AffineLogits, depth: AffineLogits) -> Self {
        SelectiveParams { activation: None, logits: LogitSource::Affine { rgb, depth } }
    }

    pub fn fixed(rgb: Vec<f64>, depth: Vec<f64>) -> Self {
        SelectiveParams { activation: None, logits: LogitSource::Fixed { rgb, depth } }
    }

    pub fn with_activation(mut self, activation: PoolActivation) -> Self {
        self.activation = Some(activation);
        self
    }
}

/// Per-channel branch weights chosen by the fusion stage; `rgb[k] + depth[k]
/// = 1` for every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
}

/// Fuses the RGB and depth feature maps with channel-selective weights.
///
/// The pooled descriptor `s` is the global average of the element-wise sum.
/// Each branch derives a logit per channel from `s` (or uses fixed logits);
/// a two-way softmax across the branch axis yields weights summing to 1 per
/// channel, and the fused map is the weighted channel-wise combination.
pub fn selective_fuse(
    u_rgb: &FeatureMap,
    u_d: &FeatureMap,
    params: &SelectiveParams,
) -> Result<(FeatureMap, FusionWeights), FusionError> {
    if u_rgb.dims() != u_d.dims() {
        return Err(FusionError::DimsMismatch(u_rgb.dims(), u_d.dims()));
    }
    let (h, w, c) = u_rgb.dims();

    let (logit_rgb, logit_d) = match &params.logits {
        LogitSource::Fixed { rgb, depth } => {
            if rgb.len() != c || depth.len() != c {
                return Err(FusionError::LogitDims { expected: c, got: rgb.len() });
            }
            (rgb.clone(), depth.clone())
        }
        LogitSource::Affine { rgb, depth } => {
            rgb.check(c)?;
            depth.check(c)?;
            let sum = FeatureMap::from_fn(h, w, c, |y, x, ch| {
                u_rgb.get(y, x, ch) + u_d.get(y, x, ch)
            })?;
            let mut s = sum.global_avg_pool();
            if let Some(act) = params.activation {
                for v in &mut s {
                    *v = act.apply(*v);
                }
            }
            (rgb.apply(&s), depth.apply(&s))
        }
    };

    let mut w_rgb = vec![0.0; c];
    let mut w_d = vec![0.0; c];
    for k in 0..c {
        // Two-way softmax, stabilized by subtracting the larger logit.
        let m = logit_rgb[k].max(logit_d[k]);
        let ea = (logit_rgb[k] - m).exp();
        let eb = (logit_d[k] - m).exp();
        w_rgb[k] = ea / (ea + eb);
        w_d[k] = eb / (ea + eb);
    }

    let fused = FeatureMap::from_fn(h, w, c, |y, x, ch| {
        w_rgb[ch] * u_rgb.get(y, x, ch) + w_d[ch] * u_d.get(y, x, ch)
    })?;
    Ok((fused, FusionWeights { rgb: w_rgb, depth: w_d }))
}

/// One audited layer of the backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlanRow {
    pub name: String,
    /// Parallel copies of the layer: 2 while RGB and depth run separately,
    /// 1 from the selective fusion onward.
    pub branches: u8,
    /// Spatial stride `(row, col)` relative to the previous row.
    pub stride: (u32, u32),
    /// Output size `(height, width, channels)` per branch.
    pub output: (u32, u32, u32),
}

/// Ordered layer-size audit of the backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    pub input: (u32, u32),
    pub rows: Vec<ShapePlanRow>,
}

impl ShapePlan {
    /// First row with the given name.
    pub fn row(&self, name: &str) -> Option<&ShapePlanRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Checks that every row's spatial size equals the previous row's size
    /// divided by the declared stride.
    pub fn is_consistent(&self) -> bool {
        let mut prev = self.input;
        for r in &self.rows {
            if prev.0 % r.stride.0 != 0 || prev.1 % r.stride.1 != 0 {
                return false;
            }
            let expect = (prev.0 / r.stride.0, prev.1 / r.stride.1);
            if (r.output.0, r.output.1) != expect {
                return false;
            }
            prev = expect;
        }
        true
    }
}

/// Builds the backbone layer-size audit for a given input size and channel
/// width factor. Channel counts are multiplied by the factor and rounded to
/// the nearest integer, never below 1; the two head output widths (1
/// classification channel, 8 location channels) are architectural constants
/// and are never scaled. Input height and width must be divisible by 32.
pub fn backbone_shape_plan(
    input: (u32, u32),
    width_factor: f64,
) -> Result<ShapePlan, FusionError> {
    if input.0 == 0 || input.1 == 0 || input.0 % 32 != 0 || input.1 % 32 != 0 {
        return Err(FusionError::BadInputSize(input.0, input.1));
    }
    if !(width_factor.is_finite() && width_factor > 0.0) {
        return Err(FusionError::BadWidthFactor(width_factor));
    }
    let sc = |c: u32| ((f64::from(c) * width_factor).round() as u32).max(1);
    let (h, w) = input;
    let mut rows = Vec::with_capacity(28);
    let mut push = |name: &str, branches: u8, stride: (u32, u32), output: (u32, u32, u32)| {
        rows.push(ShapePlanRow { name: name.to_string(), branches, stride, output });
    };

    push("Initial", 2, (2, 2), (h / 2, w / 2, sc(32)));
    push("Bottleneck 1.0", 2, (2, 2), (h / 4, w / 4, sc(128)));
    push("Bottleneck 1.1", 2, (1, 1), (h / 4, w / 4, sc(128)));
    push("Bottleneck 1.2", 2, (1, 1), (h / 4, w / 4, sc(128)));
    push("Selective module", 1, (1, 1), (h / 4, w / 4, sc(128)));
    for (stage, base) in [(2u32, h / 8), (3, h / 16)] {
        let (sh, sw) = (base, if stage == 2 { w / 8 } else { w / 16 });
        for k in 0..=7u32 {
            let stride = if k == 0 { (2, 2) } else { (1, 1) };
            push(&format!("Bottleneck {stage}.{k}"), 1, stride, (sh, sw, sc(256)));
        }
    }
    push("Conv 3x3", 1, (1, 2), (h / 16, w / 32, sc(128)));
    push("Classification Conv 3x3", 1, (1, 1), (h / 16, w / 32, sc(128)));
    push("Classification Conv 1x1", 1, (1, 1), (h / 16, w / 32, 1));
    push("Classification Sigmoid", 1, (1, 1), (h / 16, w / 32, 1));
    push("Location Conv 3x3", 1, (1, 1), (h / 16, w / 32, sc(128)));
    push("Location Conv 1x1", 1, (1, 1), (h / 16, w / 32, 8));
    push("Location Sigmoid", 1, (1, 1), (h / 16, w / 32, 8));

    Ok(ShapePlan { input, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_map(h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |y, x, ch| ((y * w + x) * c + ch) as f64).unwrap()
    }

    #[test]
    fn focus_slice_phase_layout_on_4x4() {
        let input = seq_map(4, 4, 1); // values 0..15 row-major
        let out = focus_slice(&input).unwrap();
        assert_eq!(out.dims(), (2, 2, 4));
        let gather = |ch: usize| {
            let mut v = Vec::new();
            for y in 0..2 {
                for x in 0..2 {
                    v.push(out.get(y, x, ch) as i64);
                }
            }
            v
        };
        assert_eq!(gather(0), vec![0, 2, 8, 10]);
        assert_eq!(gather(1), vec![1, 3, 9, 11]);
        assert_eq!(gather(2), vec![4, 6, 12, 14]);
        assert_eq!(gather(3), vec![5, 7, 13, 15]);
    }

    #[test]
    fn focus_slice_full_resolution_dims() {
        let input = FeatureMap::zeros(512, 512, 3).unwrap();
        assert_eq!(focus_slice(&input).unwrap().dims(), (256, 256, 12));
    }

    #[test]
    fn focus_slice_preserves_element_sum() {
        let input = seq_map(8, 6, 2);
        let out = focus_slice(&input).unwrap();
        let s_in: f64 = input.data().iter().sum();
        let s_out: f64 = out.data().iter().sum();
        assert!((s_in - s_out).abs() < 1e-9);
    }

    #[test]
    fn focus_slice_rejects_odd_dims() {
        let input = FeatureMap::zeros(5, 4, 1).unwrap();
        assert_eq!(focus_slice(&input).unwrap_err(), FusionError::OddSpatialDims(5, 4));
        let input = FeatureMap::zeros(4, 7, 1).unwrap();
        assert_eq!(focus_slice(&input).unwrap_err(), FusionError::OddSpatialDims(4, 7));
    }

    #[test]
    fn focus_unslice_rejects_bad_channels() {
        let input = FeatureMap::zeros(2, 2, 6).unwrap();
        assert_eq!(focus_unslice(&input).unwrap_err(), FusionError::ChannelsNotDivisible(6));
    }

    #[test]
    fn equal_maps_fuse_to_themselves() {
        let u = seq_map(4, 4, 3);
        let params = SelectiveParams::affine(AffineLogits::identity(3), {
            let mut a = AffineLogits::identity(3);
            a.bias = vec![0.3, -0.2, 1.0];
            a
        });
        let (fused, weights) = selective_fuse(&u, &u, &params).unwrap();
        for (a, b) in fused.data().iter().zip(u.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 0..3 {
            assert!((weights.rgb[k] + weights.depth[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_logits_ln3_ln1_weight_three_to_one() {
        let u_rgb = seq_map(2, 2, 1);
        let u_d = FeatureMap::from_fn(2, 2, 1, |y, x, _| (y + x) as f64 * 10.0).unwrap();
        let params = SelectiveParams::fixed(vec![3.0f64.ln()], vec![1.0f64.ln()]);
        let (fused, weights) = selective_fuse(&u_rgb, &u_d, &params).unwrap();
        assert!((weights.rgb[0] - 0.75).abs() < 1e-12);
        assert!((weights.depth[0] - 0.25).abs() < 1e-12);
        for y in 0..2 {
            for x in 0..2 {
                let want = 0.75 * u_rgb.get(y, x, 0) + 0.25 * u_d.get(y, x, 0);
                assert!((fused.get(y, x, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_rejects_mismatched_dims_and_logits() {
        let a = FeatureMap::zeros(2, 2, 1).unwrap();
        let b = FeatureMap::zeros(2, 4, 1).unwrap();
        let params = SelectiveParams::fixed(vec![0.0], vec![0.0]);
        assert!(matches!(
            selective_fuse(&a, &b, &params).unwrap_err(),
            FusionError::DimsMismatch(..)
        ));
        let params = SelectiveParams::fixed(vec![0.0, 1.0], vec![0.0, 1.0]);
        assert!(matches!(
            selective_fuse(&a, &a, &params).unwrap_err(),
            FusionError::LogitDims { .. }
        ));
    }

    #[test]
    fn shape_plan_matches_reference_architecture() {
        let plan = backbone_shape_plan((512, 512), 1.0).unwrap();
        assert_eq!(plan.rows.len(), 28);
        assert!(plan.is_consistent());
        let expect = |name: &str, branches: u8, output: (u32, u32, u32)| {
            let row = plan.row(name).unwrap_or_else(|| panic!("missing row {name}"));
            assert_eq!(row.branches, branches, "{name}");
            assert_eq!(row.output, output, "{name}");
        };
        expect("Initial", 2, (256, 256, 32));
        expect("Bottleneck 1.0", 2, (128, 128, 128));
        expect("Bottleneck 1.1", 2, (128, 128, 128));
        expect("Bottleneck 1.2", 2, (128, 128, 128));
        expect("Selective module", 1, (128, 128, 128));
        for k in 0..=7 {
            expect(&format!("Bottleneck 2.{k}"), 1, (64, 64, 256));
            expect(&format!("Bottleneck 3.{k}"), 1, (32, 32, 256));
        }
        expect("Conv 3x3", 1, (32, 16, 128));
        expect("Classification Conv 1x1", 1, (32, 16, 1));
        expect("Classification Sigmoid", 1, (32, 16, 1));
        expect("Location Conv 1x1", 1, (32, 16, 8));
        expect("Location Sigmoid", 1, (32, 16, 8));
        assert_eq!(plan.row("Conv 3x3").unwrap().stride, (1, 2));
    }

    #[test]
    fn width_factors_scale_trunk_but_not_heads() {
        let half = backbone_shape_plan((512, 512), 0.5).unwrap();
        assert_eq!(half.row("Bottleneck 1.1").unwrap().output, (128, 128, 64));
        assert_eq!(half.row("Classification Conv 1x1").unwrap().output.2, 1);
        assert_eq!(half.row("Location Sigmoid").unwrap().output.2, 8);
        let quarter = backbone_shape_plan((512, 512), 0.25).unwrap();
        assert_eq!(quarter.row("Initial").unwrap().output, (256, 256, 8));
        assert_eq!(quarter.row("Location Conv 1x1").unwrap().output.2, 8);
    }

    #[test]
    fn shape_plan_rejects_bad_inputs() {
        assert!(matches!(
            backbone_shape_plan((500, 512), 1.0).unwrap_err(),
            FusionError::BadInputSize(500, 512)
        ));
        assert!(matches!(
            backbone_shape_plan((512, 512), 0.0).unwrap_err(),
            FusionError::BadWidthFactor(_)
        ));
    }

    proptest! {
        #[test]
        fn focus_round_trip_is_exact(
            h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in 0u64..1000
        ) {
            let (h, w) = (2 * h, 2 * w);
            let mut state = seed;
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let input = FeatureMap::from_fn(h, w, c, |_, _, _| next()).unwrap();
            let restored = focus_unslice(&focus_slice(&input).unwrap()).unwrap();
            prop_assert_eq!(restored, input);
        }

        #[test]
        fn fused_lies_between_inputs_and_weights_sum_to_one(
            seed in 0u64..1000, bias1 in -5.0f64..5.0, bias2 in -5.0f64..5.0
        ) {
            let mut state = seed.wrapping_add(99);
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            };
            let u_rgb = FeatureMap::from_fn(3, 5, 2, |_, _, _| next()).unwrap();
            let u_d = FeatureMap::from_fn(3, 5, 2, |_, _, _| next()).unwrap();
            let mut a = AffineLogits::identity(2);
            a.bias = vec![bias1, bias2];
            let params = SelectiveParams::affine(a, AffineLogits::identity(2))
                .with_activation(PoolActivation::Tanh);
            let (fused, weights) = selective_fuse(&u_rgb, &u_d, &params).unwrap();
            for k in 0..2 {
                prop_assert!((weights.rgb[k] + weights.depth[k] - 1.0).abs() < 1e-9);
            }
            for y in 0..3 {
                for x in 0..5 {
                    for ch in 0..2 {
                        let (a, b) = (u_rgb.get(y, x, ch), u_d.get(y, x, ch));
                        let f = fused.get(y, x, ch);
                        prop_assert!(f >= a.min(b) - 1e-12 && f <= a.max(b) + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn fixed_weight_fusion_is_homogeneous(scale in 0.01f64..10.0, seed in 0u64..500) {
            let mut state = seed.wrapping_add(7);
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let u_rgb = FeatureMap::from_fn(2, 3, 2, |_, _, _| next()).unwrap();
            let u_d = FeatureMap::from_fn(2, 3, 2, |_, _, _| next()).unwrap();
            let params = SelectiveParams::fixed(vec![0.7, -0.3], vec![-0.1, 0.4]);
            let (fused, _) = selective_fuse(&u_rgb, &u_d, &params).unwrap();
            let scale_map = |m: &FeatureMap| {
                FeatureMap::new(
                    m.height(), m.width(), m.channels(),
                    m.data().iter().map(|v| v * scale).collect(),
                ).unwrap()
            };
            let (fused_scaled, _) =
                selective_fuse(&scale_map(&u_rgb), &scale_map(&u_d), &params).unwrap();
            for (a, b) in fused_scaled.data().iter().zip(fused.data()) {
                prop_assert!((a - b * scale).abs() < 1e-9 * (1.0 + b.abs() * scale));
            }
        }
    }
}
