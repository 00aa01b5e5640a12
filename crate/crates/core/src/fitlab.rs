//! Synthetic-data fitting laboratory.
//!
//! Everything needed to study directional losses end to end without real
//! data:
//!
//! * [`canonical_face_template`] — a synthetic but anatomically plausible
//!   68-landmark face in heatmap units, used as ground truth.
//! * [`generate_synthetic`] — draws noisy annotations around a truth shape
//!   with separate normal and tangent spreads, mimicking how human
//!   annotators slide along edges.
//! * [`fit_coordinates`] — gradient descent on the smooth anisotropic loss
//!   against a set of annotations, directly in coordinate space.
//! * [`fit_heatmap_logits`] — the heatmap path: free per-pixel logits are
//!   squared into a map, masked by the fixed point-edge target, decoded
//!   with soft-argmax, and optimized against target coordinates.
//! * [`estimate_lambda`] — recovers the anisotropy ratio per landmark from
//!   error scatter by fitting a covariance ellipse.
//!
//! Both optimizers are deterministic: identical configurations produce
//! identical traces, and synthetic data depends only on its seed.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::direction::{direction_frame, norm};
use crate::error::{Error, Result};
use crate::fmath;
use crate::heatmap::{
    apply_e2p, edge_heatmap, fuse, point_heatmap, soft_argmax, soft_argmax_backward, Heatmap,
    HeatmapGeometry, HeatmapKind,
};
use crate::loss::{
    awing_map, composite_loss, smooth_adl1, AwingConfig, CompositeWeights, Lambda, LossValueGrad,
};
use crate::metrics::ErrorScatter;
use crate::scheme::{CoordUnit, LandmarkScheme, PointSet};

/// An optimizer whose loss exceeds this bound (or leaves the finite range)
/// is reported as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Anisotropy ratios estimated from scatter are clamped to this range.
pub const LAMBDA_MIN: f64 = 1.0;
/// See [`LAMBDA_MIN`].
pub const LAMBDA_MAX: f64 = 16.0;

/// Initial value of every free heatmap logit (the map starts as the
/// uniform positive plateau `LOGIT_INIT²`).
pub const LOGIT_INIT: f64 = 0.3;

/// A synthetic 68-landmark face in heatmap units on the default 64×64
/// grid.
///
/// The shape is built from simple geometric primitives — a half-ellipse
/// jaw, arched eyebrows, six-point eye loops, twelve- and eight-point lip
/// loops — matching the topology of the builtin scheme. Its proportions
/// are face-like rather than captured from any photograph. Two properties
/// are intentional:
///
/// * the nose middle line is exactly vertical, so its interior landmarks
///   exercise the collinear (chord-tangent) frame fallback;
/// * every landmark lies well inside the grid (coordinates span roughly
///   6..58), with an inter-ocular distance of about 29 heatmap pixels.
pub fn canonical_face_template() -> PointSet {
    let mut p = alloc::vec![[0.0f64; 2]; 68];
    let deg = core::f64::consts::PI / 180.0;

    // Face contour 0..=16: lower half-ellipse from the right temple (index
    // 0, x = 0.08) through the chin (8, the lowest point) to the left
    // temple (16, x = 0.92).
    for k in 0..=16 {
        let phi = (180.0 - 11.25 * k as f64) * deg;
        p[k] = [0.5 + 0.42 * fmath::cos(phi), 0.46 + 0.50 * fmath::sin(phi)];
    }

    // Eyebrows 17..=21 and 22..=26: five points each, arched upward
    // (smaller y) by a half-sine.
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let arch = 0.035 * fmath::sin(core::f64::consts::PI * t);
        p[17 + k] = [0.16 + 0.25 * t, 0.275 - arch];
        p[22 + k] = [0.59 + 0.25 * t, 0.275 - arch];
    }

    // Nose middle line 27..=30: exactly vertical (collinear on purpose).
    for k in 0..4 {
        p[27 + k] = [0.5, 0.33 + 0.06 * k as f64];
    }
    // Nose bottom line 31..=35: gentle downward arch under the tip.
    for k in 0..5 {
        let t = k as f64 / 4.0;
        p[31 + k] = [0.42 + 0.16 * t, 0.555 + 0.02 * fmath::sin(core::f64::consts::PI * t)];
    }

    // Eyes: six points on an ellipse, 60° apart, corners on the horizontal
    // axis. Superior margin runs across the top (negative sine in the
    // y-down convention).
    let eye = |cx: f64, out: &mut [[f64; 2]]| {
        for (slot, step) in out.iter_mut().zip(0..6) {
            let phi = (180.0 + 60.0 * step as f64) * deg;
            *slot = [cx + 0.065 * fmath::cos(phi), 0.38 + 0.028 * fmath::sin(phi)];
        }
    };
    let mut right_eye = [[0.0; 2]; 6];
    eye(0.285, &mut right_eye);
    p[36..42].copy_from_slice(&right_eye);
    let mut left_eye = [[0.0; 2]; 6];
    eye(0.715, &mut left_eye);
    p[42..48].copy_from_slice(&left_eye);

    // Outer lip 48..=59: twelve points, 30° apart, corners on the axis.
    for k in 0..12 {
        let phi = (180.0 + 30.0 * k as f64) * deg;
        p[48 + k] = [0.5 + 0.13 * fmath::cos(phi), 0.76 + 0.052 * fmath::sin(phi)];
    }
    // Inner lip 60..=67: eight points, 45° apart.
    for k in 0..8 {
        let phi = (180.0 + 45.0 * k as f64) * deg;
        p[60 + k] = [0.5 + 0.085 * fmath::cos(phi), 0.76 + 0.022 * fmath::sin(phi)];
    }

    // Map the unit-square layout into the default 64×64 grid with a margin.
    let coords = p.iter().map(|q| [6.0 + 52.0 * q[0], 6.0 + 52.0 * q[1]]).collect();
    PointSet::new(coords, CoordUnit::HeatmapPixels).expect("template coordinates are finite")
}

/// Configuration of the synthetic annotation generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scheme: LandmarkScheme,
    /// Ground-truth shape (also the frame anchor for the noise model).
    pub base_shape: PointSet,
    /// Annotation spread across the curve, in coordinate units.
    pub sigma_normal: f64,
    /// Annotation spread along the curve, in coordinate units.
    pub sigma_tangent: f64,
    /// Annotations per face (think: independent annotators).
    pub n_annotations: usize,
    /// Independent faces to generate.
    pub n_faces: usize,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        self.base_shape.check_len(self.scheme.n_points())?;
        let ok = self.sigma_normal.is_finite()
            && self.sigma_normal >= 0.0
            && self.sigma_tangent.is_finite()
            && self.sigma_tangent >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig { reason: "sigmas must be finite and >= 0" });
        }
        if self.n_annotations == 0 || self.n_faces == 0 {
            return Err(Error::InvalidConfig { reason: "need at least one face and annotation" });
        }
        Ok(())
    }
}

/// One synthetic face: the ground truth and its noisy annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFace {
    pub truth: PointSet,
    pub annotations: Vec<PointSet>,
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub faces: Vec<SyntheticFace>,
}

/// Draws `n_faces × n_annotations` noisy annotations around the base
/// shape:
/// `annotation = truth + σ_n·ξ_n·N + σ_t·ξ_t·T` with independent standard
/// normals `ξ` and frames derived from the truth. Landmarks whose truth
/// frame is unusable (no edge, or fully degenerate) fall back to the grid
/// axes, receiving `σ_n` along x and `σ_t` along y.
///
/// The draw order is fixed (face → annotation → landmark), so output is a
/// pure function of the configuration.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    // Truth-anchored frames; the prediction argument is irrelevant here
    // except for landmarks on no edge, which degenerate at zero error and
    // take the axis fallback below.
    let frames = direction_frame(&cfg.scheme, &cfg.base_shape, &cfg.base_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.scheme.n_points();

    let mut faces = Vec::with_capacity(cfg.n_faces);
    for _ in 0..cfg.n_faces {
        let mut annotations = Vec::with_capacity(cfg.n_annotations);
        for _ in 0..cfg.n_annotations {
            let mut coords = Vec::with_capacity(n);
            for i in 0..n {
                let f = frames.get(i);
                // A chord-fallback frame is still a usable noise basis; only
                // zero frames fall back to the axes.
                let (nrm, tan) = if norm(f.normal) > 0.5 {
                    (f.normal, f.tangent)
                } else {
                    ([1.0, 0.0], [0.0, 1.0])
                };
                let xi_n: f64 = rng.sample(StandardNormal);
                let xi_t: f64 = rng.sample(StandardNormal);
                let t = cfg.base_shape.get(i);
                coords.push([
                    t[0] + cfg.sigma_normal * xi_n * nrm[0] + cfg.sigma_tangent * xi_t * tan[0],
                    t[1] + cfg.sigma_normal * xi_n * nrm[1] + cfg.sigma_tangent * xi_t * tan[1],
                ]);
            }
            annotations.push(PointSet::new(coords, cfg.base_shape.unit())?);
        }
        faces.push(SyntheticFace { truth: cfg.base_shape.clone(), annotations });
    }
    Ok(SyntheticData { faces })
}

/// Gradient-descent settings shared by both fitting paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: Lambda,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the loss improves by less than this between iterations.
    pub tolerance: f64,
    /// Standard deviation of the seeded isotropic displacement added to
    /// the starting iterate of the coordinate path (which begins at the
    /// annotation consensus). Zero starts exactly at the consensus; a
    /// positive spread models an untrained predictor that must travel
    /// toward the data, which is what makes finite-budget fits sensitive
    /// to how the loss splits its correction between the normal and
    /// tangent directions. Ignored by the heatmap path, whose iterate is
    /// a fixed logit plateau.
    pub init_spread: f64,
    /// Seeds the initial displacement. Everything else is deterministic,
    /// so identical configurations yield bit-identical traces.
    pub seed: u64,
}

impl FitConfig {
    fn validate(&self, n_points: usize) -> Result<()> {
        self.lambda.validate(n_points)?;
        let ok = self.learning_rate.is_finite()
            && self.learning_rate > 0.0
            && self.tolerance.is_finite()
            && self.tolerance >= 0.0
            && self.init_spread.is_finite()
            && self.init_spread >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig {
                reason: "learning rate must be > 0, tolerance and init spread >= 0",
            });
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig { reason: "max_iterations must be >= 1" });
        }
        Ok(())
    }
}

/// Loss history of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Loss at every evaluated iterate, including the final one.
    pub losses: Vec<f64>,
    /// Number of loss evaluations (equals `losses.len()`).
    pub iterations: usize,
    /// True when the improvement fell below the tolerance before the
    /// iteration budget ran out.
    pub converged: bool,
}

/// Result of [`fit_coordinates`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateFit {
    pub fitted: PointSet,
    pub trace: FitTrace,
}

/// Fits one face's landmarks to a set of annotations by gradient descent
/// on the mean smooth anisotropic loss.
///
/// The iterate starts at the annotation consensus (per-landmark mean)
/// displaced by seeded isotropic noise of scale `init_spread` — see
/// [`FitConfig`]. Direction frames are re-derived each iteration with the
/// consensus as geometry anchor and the current iterate as prediction;
/// gradients treat the frames as constants. Divergence (loss above
/// [`DIVERGENCE_BOUND`] or non-finite) aborts with [`Error::Diverged`].
pub fn fit_coordinates(
    annotations: &[PointSet],
    scheme: &LandmarkScheme,
    cfg: &FitConfig,
) -> Result<CoordinateFit> {
    if annotations.is_empty() {
        return Err(Error::InvalidInput { reason: "no annotations to fit" });
    }
    let n = scheme.n_points();
    cfg.validate(n)?;
    for a in annotations {
        a.check_len(n)?;
        annotations[0].check_compatible(a)?;
    }

    let k = annotations.len() as f64;
    let mut consensus = alloc::vec![[0.0f64; 2]; n];
    for a in annotations {
        for (c, p) in consensus.iter_mut().zip(a.coords()) {
            c[0] += p[0] / k;
            c[1] += p[1] / k;
        }
    }
    let unit = annotations[0].unit();
    let consensus = PointSet::new(consensus, unit)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start: Vec<[f64; 2]> = consensus
        .coords()
        .iter()
        .map(|p| {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            [p[0] + cfg.init_spread * dx, p[1] + cfg.init_spread * dy]
        })
        .collect();
    let mut q = PointSet::new(start, unit)?;

    let mut losses = Vec::new();
    let mut converged = false;
    for iter in 0..cfg.max_iterations {
        let frame = direction_frame(scheme, &consensus, &q)?;
        let mut value = 0.0;
        let mut grad = alloc::vec![0.0f64; 2 * n];
        for a in annotations {
            let term = smooth_adl1(&q, a, &frame, &cfg.lambda)?;
            value += term.value / k;
            for (g, t) in grad.iter_mut().zip(term.grad.iter()) {
                *g += t / k;
            }
        }
        losses.push(value);
        if !value.is_finite() || value > DIVERGENCE_BOUND {
            return Err(Error::Diverged { iteration: iter, loss: value });
        }
        if iter > 0 && (losses[iter - 1] - value).abs() < cfg.tolerance {
            converged = true;
            break;
        }
        let coords: Vec<[f64; 2]> = q
            .coords()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                [p[0] - cfg.learning_rate * grad[2 * i], p[1] - cfg.learning_rate * grad[2 * i + 1]]
            })
            .collect();
        q = PointSet::new(coords, unit)?;
    }

    let iterations = losses.len();
    Ok(CoordinateFit { fitted: q, trace: FitTrace { losses, iterations, converged } })
}

/// Result of [`fit_heatmap_logits`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFit {
    /// Decoded landmark positions after the final iteration.
    pub decoded: PointSet,
    /// Masked mass per channel after the final iteration.
    pub masses: Vec<f64>,
    pub trace: FitTrace,
}

/// Evaluates the heatmap objective at logits `g`: the map is `H = g²`
/// (elementwise), decoded through the masked soft-argmax, scored with the
/// smooth anisotropic loss against the targets, plus an optional adaptive
/// wing term pulling `H` toward the rendered point target. Returns the
/// composite value and its gradient with respect to `g`.
///
/// The edge-map term of the composite loss is identically zero here: the
/// edge evidence enters through the fixed mask, which is not optimized.
#[allow(clippy::too_many_arguments)]
pub(crate) fn heatmap_objective(
    logits: &[f64],
    targets: &PointSet,
    scheme: &LandmarkScheme,
    mask: &Heatmap,
    point_target: Option<&Heatmap>,
    lambda: &Lambda,
    awing: Option<&(AwingConfig, CompositeWeights)>,
) -> Result<(f64, Vec<f64>)> {
    let geometry = *mask.geometry();
    let map = Heatmap::from_data(
        HeatmapKind::Fused,
        geometry,
        mask.channels(),
        logits.iter().map(|g| g * g).collect(),
    )?;
    let decoded = soft_argmax(&map, mask)?;
    let frame = direction_frame(scheme, targets, &decoded.points)?;
    let coord = smooth_adl1(&decoded.points, targets, &frame, lambda)?;

    let upstream: Vec<[f64; 2]> = (0..mask.channels()).map(|c| coord.grad_xy(c)).collect();
    let coord_grad_h = soft_argmax_backward(&map, mask, &upstream)?;
    let coord_term = LossValueGrad { value: coord.value, grad: coord_grad_h };

    // The mask is fixed, so the edge term contributes neither value nor
    // gradient; it stays in the composition to keep the weighting explicit.
    let edge_term = LossValueGrad { value: 0.0, grad: alloc::vec![] };

    let total = match (awing, point_target) {
        (Some((aw_cfg, weights)), Some(target)) => {
            let point_term = awing_map(&map, target, aw_cfg)?;
            composite_loss(&coord_term, &edge_term, &point_term, weights)?
        }
        _ => coord_term,
    };

    // Chain through H = g²: dL/dg = dL/dH · 2g.
    let grad =
        total.grad.iter().zip(logits.iter()).map(|(dh, g)| dh * 2.0 * g).collect::<Vec<f64>>();
    Ok((total.value, grad))
}

/// Builds the fixed point-edge mask for a target shape: the fused product
/// of the point map and the per-landmark aggregated edge map.
pub fn point_edge_mask(
    scheme: &LandmarkScheme,
    targets: &PointSet,
    geometry: &HeatmapGeometry,
) -> Result<Heatmap> {
    let point = point_heatmap(scheme, targets, geometry)?;
    let edge = edge_heatmap(scheme, targets, geometry)?;
    let per_landmark = apply_e2p(&edge, &scheme.e2p_matrix())?;
    fuse(&point, &per_landmark)
}

/// Fits free heatmap logits so that the masked soft-argmax decodes to the
/// target coordinates; the standard mask is the fused point-edge target
/// from [`point_edge_mask`]. See [`fit_heatmap_logits_masked`].
pub fn fit_heatmap_logits(
    targets: &PointSet,
    scheme: &LandmarkScheme,
    geometry: &HeatmapGeometry,
    cfg: &FitConfig,
    awing: Option<(AwingConfig, CompositeWeights)>,
) -> Result<HeatmapFit> {
    let mask = point_edge_mask(scheme, targets, geometry)?;
    fit_heatmap_logits_masked(targets, scheme, &mask, cfg, awing)
}

/// [`fit_heatmap_logits`] with an explicit mask (one channel per
/// landmark).
///
/// Targets must lie inside the pixel-center hull of the grid. Logits start
/// at the uniform plateau [`LOGIT_INIT`]; if any masked channel holds no
/// mass at that starting point the fit cannot move that landmark and
/// errors with [`Error::NoMassInMask`].
pub fn fit_heatmap_logits_masked(
    targets: &PointSet,
    scheme: &LandmarkScheme,
    mask: &Heatmap,
    cfg: &FitConfig,
    awing: Option<(AwingConfig, CompositeWeights)>,
) -> Result<HeatmapFit> {
    let n = scheme.n_points();
    cfg.validate(n)?;
    targets.check_len(n)?;
    if targets.unit() != CoordUnit::HeatmapPixels {
        return Err(Error::UnitMismatch {
            expected: CoordUnit::HeatmapPixels,
            got: targets.unit(),
        });
    }
    if mask.channels() != n {
        return Err(Error::ShapeMismatch { reason: "mask needs one channel per landmark" });
    }
    let geometry = *mask.geometry();
    let (w, h) = (geometry.width as f64, geometry.height as f64);
    for p in targets.coords() {
        if p[0] < 0.0 || p[0] > w - 1.0 || p[1] < 0.0 || p[1] > h - 1.0 {
            return Err(Error::InvalidInput { reason: "target outside the heatmap grid" });
        }
    }

    // Every masked channel must hold mass at the uniform start, or its
    // landmark is stuck at the pinned grid center forever.
    for c in 0..n {
        if mask.channel(c).iter().all(|&m| m == 0.0) {
            return Err(Error::NoMassInMask { channel: c });
        }
    }

    let point_target = match &awing {
        Some(_) => Some(point_heatmap(scheme, targets, &geometry)?),
        None => None,
    };

    let mut logits = alloc::vec![LOGIT_INIT; mask.data().len()];
    let mut losses = Vec::new();
    let mut converged = false;
    for iter in 0..cfg.max_iterations {
        let (value, grad) = heatmap_objective(
            &logits,
            targets,
            scheme,
            mask,
            point_target.as_ref(),
            &cfg.lambda,
            awing.as_ref(),
        )?;
        losses.push(value);
        if !value.is_finite() || value > DIVERGENCE_BOUND {
            return Err(Error::Diverged { iteration: iter, loss: value });
        }
        if iter > 0 && (losses[iter - 1] - value).abs() < cfg.tolerance {
            converged = true;
            break;
        }
        for (g, d) in logits.iter_mut().zip(grad.iter()) {
            *g -= cfg.learning_rate * d;
        }
    }

    let map = Heatmap::from_data(
        HeatmapKind::Fused,
        geometry,
        n,
        logits.iter().map(|g| g * g).collect(),
    )?;
    let decoded = soft_argmax(&map, mask)?;
    let iterations = losses.len();
    Ok(HeatmapFit {
        decoded: decoded.points,
        masses: decoded.masses,
        trace: FitTrace { losses, iterations, converged },
    })
}

/// Covariance ellipse of one landmark's error scatter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseFit {
    /// Long semi-axis (standard deviation along the major direction).
    pub long_axis: f64,
    /// Short semi-axis.
    pub short_axis: f64,
    /// Major-axis direction in radians, measured from the e_normal axis
    /// toward the e_tangent axis, in `(-π/2, π/2]`.
    pub angle: f64,
    /// True when the short axis is numerically zero (collapsed scatter).
    pub degenerate: bool,
}

/// Output of [`estimate_lambda`].
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    /// Axis ratio per landmark, clamped to `[LAMBDA_MIN, LAMBDA_MAX]`.
    pub lambdas: Vec<f64>,
    pub ellipses: Vec<EllipseFit>,
}

/// Estimates each landmark's anisotropy ratio from signed error scatter.
///
/// Fits the 2×2 covariance of the `(e_normal, e_tangent)` pairs, takes the
/// square roots of its eigenvalues as ellipse semi-axes, and reports
/// `λ = long / short` clamped to `[1, 16]`. Collapsed scatter (short axis
/// numerically zero) is flagged degenerate: λ clamps to the upper bound,
/// or to 1 when there is no spread at all. Needs at least 3 pairs per
/// landmark.
pub fn estimate_lambda(scatter: &ErrorScatter) -> Result<LambdaEstimate> {
    let mut lambdas = Vec::with_capacity(scatter.pairs.len());
    let mut ellipses = Vec::with_capacity(scatter.pairs.len());
    for (landmark, pairs) in scatter.pairs.iter().enumerate() {
        if pairs.len() < 3 {
            return Err(Error::InsufficientScatter { landmark, n_pairs: pairs.len() });
        }
        let n = pairs.len() as f64;
        let (mut mx, mut my) = (0.0, 0.0);
        for (x, y) in pairs {
            mx += x / n;
            my += y / n;
        }
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in pairs {
            let (dx, dy) = (x - mx, y - my);
            sxx += dx * dx / n;
            sxy += dx * dy / n;
            syy += dy * dy / n;
        }
        let mean = 0.5 * (sxx + syy);
        let disc = fmath::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
        let long_axis = fmath::sqrt((mean + disc).max(0.0));
        let short_axis = fmath::sqrt((mean - disc).max(0.0));
        let mut angle = 0.5 * fmath::atan2(2.0 * sxy, sxx - syy);
        if angle <= -core::f64::consts::FRAC_PI_2 {
            angle += core::f64::consts::PI;
        }

        let degenerate = short_axis < 1e-12;
        let lambda = if long_axis < 1e-12 {
            // No spread at all: nothing to infer, stay isotropic.
            LAMBDA_MIN
        } else if degenerate {
            LAMBDA_MAX
        } else {
            (long_axis / short_axis).clamp(LAMBDA_MIN, LAMBDA_MAX)
        };
        lambdas.push(lambda);
        ellipses.push(EllipseFit { long_axis, short_axis, angle, degenerate });
    }
    Ok(LambdaEstimate { lambdas, ellipses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direction::decompose_errors;
    use crate::scheme::{builtin_300w, EdgeDef, NormalizationSpec};
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn template_is_well_formed() {
        let scheme = builtin_300w();
        let t = canonical_face_template();
        assert_eq!(t.len(), 68);
        assert_eq!(t.unit(), CoordUnit::HeatmapPixels);
        for p in t.coords() {
            assert!(p[0] > 0.0 && p[0] < 63.0, "x out of grid: {p:?}");
            assert!(p[1] > 0.0 && p[1] < 63.0, "y out of grid: {p:?}");
        }
        // Inter-ocular distance ≈ 29 heatmap pixels.
        let d = crate::metrics::normalization_distance(
            &scheme,
            &t,
            crate::metrics::NormKind::InterOcular,
        )
        .unwrap();
        assert!((d - 29.12).abs() < 0.1, "inter-ocular {d}");
        // The chin is the lowest contour point and lies below the mouth.
        assert!(t.get(8)[1] > t.get(57)[1]);
        // Only the vertical nose line's interior landmarks degenerate.
        let f = direction_frame(&scheme, &t, &t).unwrap();
        let degenerate: Vec<usize> =
            (0..68).filter(|&i| f.get(i).degenerate).collect();
        assert_eq!(degenerate, vec![28, 29]);
    }

    fn quick_synth(seed: u64, sigma_n: f64, sigma_t: f64, k: usize, faces: usize) -> SynthConfig {
        SynthConfig {
            scheme: builtin_300w(),
            base_shape: canonical_face_template(),
            sigma_normal: sigma_n,
            sigma_tangent: sigma_t,
            n_annotations: k,
            n_faces: faces,
            seed,
        }
    }

    #[test]
    fn zero_noise_reproduces_truth_exactly() {
        let data = generate_synthetic(&quick_synth(1, 0.0, 0.0, 3, 2)).unwrap();
        assert_eq!(data.faces.len(), 2);
        for face in &data.faces {
            assert_eq!(face.annotations.len(), 3);
            for a in &face.annotations {
                assert_eq!(a.coords(), face.truth.coords());
            }
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = generate_synthetic(&quick_synth(42, 0.5, 1.0, 4, 3)).unwrap();
        let b = generate_synthetic(&quick_synth(42, 0.5, 1.0, 4, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&quick_synth(43, 0.5, 1.0, 4, 3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_respects_the_frame_anisotropy() {
        // σ_t = 2σ_n: the empirical tangent spread of a single landmark
        // over many annotations must be about twice the normal spread.
        let cfg = quick_synth(7, 0.5, 1.0, 10_000, 1);
        let data = generate_synthetic(&cfg).unwrap();
        let face = &data.faces[0];
        let scheme = builtin_300w();
        let frames = direction_frame(&scheme, &face.truth, &face.truth).unwrap();
        let i = 8; // chin: interior, non-degenerate frame
        let f = frames.get(i);
        let t = face.truth.get(i);
        let (mut sn, mut st) = (0.0, 0.0);
        for a in &face.annotations {
            let e = [a.get(i)[0] - t[0], a.get(i)[1] - t[1]];
            let en = e[0] * f.normal[0] + e[1] * f.normal[1];
            let et = e[0] * f.tangent[0] + e[1] * f.tangent[1];
            sn += en * en;
            st += et * et;
        }
        let k = face.annotations.len() as f64;
        let ratio = (st / k).sqrt() / (sn / k).sqrt();
        assert!((ratio - 2.0).abs() < 0.1, "tangent/normal spread ratio {ratio}");
    }

    fn v_scheme() -> LandmarkScheme {
        LandmarkScheme::new(
            "v",
            3,
            vec![EdgeDef::open("V", vec![0, 1, 2])],
            NormalizationSpec { inter_ocular: (0, 2), inter_pupil: (vec![0], vec![2]) },
        )
        .unwrap()
    }

    #[test]
    fn single_annotation_fit_recovers_it() {
        // One annotation, isotropic loss: the unique minimizer is the
        // annotation itself, reached from a displaced start.
        let scheme = v_scheme();
        let annotation =
            PointSet::heatmap(vec![[10.0, 10.0], [12.0, 12.5], [14.0, 10.0]]).unwrap();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(1.0),
            learning_rate: 0.3,
            max_iterations: 2000,
            tolerance: 1e-13,
            init_spread: 2.0,
            seed: 11,
        };
        let fit = fit_coordinates(core::slice::from_ref(&annotation), &scheme, &cfg).unwrap();
        for i in 0..3 {
            let p = fit.fitted.get(i);
            let a = annotation.get(i);
            let d = ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt();
            assert!(d <= 1e-3, "landmark {i} off by {d}");
        }
        assert!(fit.trace.converged);
    }

    #[test]
    fn fits_are_deterministic() {
        let scheme = v_scheme();
        let annotations = [
            PointSet::heatmap(vec![[10.0, 10.1], [12.0, 12.4], [14.2, 10.0]]).unwrap(),
            PointSet::heatmap(vec![[9.6, 9.8], [12.1, 12.9], [13.8, 9.7]]).unwrap(),
        ];
        let cfg = FitConfig {
            lambda: Lambda::Scalar(2.0),
            learning_rate: 0.5,
            max_iterations: 40,
            tolerance: 0.0,
            init_spread: 1.5,
            seed: 21,
        };
        let a = fit_coordinates(&annotations, &scheme, &cfg).unwrap();
        let b = fit_coordinates(&annotations, &scheme, &cfg).unwrap();
        assert_eq!(a, b);
        // A different seed starts elsewhere and leaves a different trace.
        let c = fit_coordinates(&annotations, &scheme, &FitConfig { seed: 22, ..cfg }).unwrap();
        assert_ne!(a.trace.losses[0], c.trace.losses[0]);
    }

    #[test]
    fn coordinate_fit_matches_grid_search_oracle() {
        // λ = 1 makes the objective separable per landmark (smooth L1 of
        // the distance to each annotation), so a per-landmark grid search
        // can locate the optimum independently.
        let scheme = v_scheme();
        let annotations: Vec<PointSet> = [
            vec![[10.0, 10.1], [12.0, 12.4], [14.2, 10.0]],
            vec![[9.6, 9.8], [12.1, 12.9], [13.8, 9.7]],
            vec![[10.3, 10.0], [11.8, 12.6], [14.0, 10.4]],
            vec![[10.0, 9.7], [12.2, 12.3], [13.9, 10.1]],
            vec![[9.9, 10.3], [11.9, 12.7], [14.1, 9.9]],
        ]
        .into_iter()
        .map(|c| PointSet::heatmap(c).unwrap())
        .collect();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(1.0),
            learning_rate: 0.25,
            max_iterations: 4000,
            tolerance: 1e-14,
            init_spread: 1.0,
            seed: 3,
        };
        let fit = fit_coordinates(&annotations, &scheme, &cfg).unwrap();

        for i in 0..3 {
            // Brute-force oracle on a 0.005-step grid around the consensus.
            let cx: f64 = annotations.iter().map(|a| a.get(i)[0]).sum::<f64>() / 5.0;
            let cy: f64 = annotations.iter().map(|a| a.get(i)[1]).sum::<f64>() / 5.0;
            let objective = |x: f64, y: f64| {
                annotations
                    .iter()
                    .map(|a| {
                        let d =
                            ((x - a.get(i)[0]).powi(2) + (y - a.get(i)[1]).powi(2)).sqrt();
                        if d < 1.0 {
                            0.5 * d * d
                        } else {
                            d - 0.5
                        }
                    })
                    .sum::<f64>()
            };
            let mut best = (f64::INFINITY, 0.0, 0.0);
            let steps = 200;
            for sx in 0..=steps {
                for sy in 0..=steps {
                    let x = cx - 0.5 + sx as f64 / steps as f64;
                    let y = cy - 0.5 + sy as f64 / steps as f64;
                    let v = objective(x, y);
                    if v < best.0 {
                        best = (v, x, y);
                    }
                }
            }
            let p = fit.fitted.get(i);
            let d = ((p[0] - best.1).powi(2) + (p[1] - best.2).powi(2)).sqrt();
            assert!(d <= 0.02, "landmark {i}: fit {p:?} vs oracle ({}, {})", best.1, best.2);
        }
    }

    #[test]
    fn fit_trace_decreases_for_small_steps() {
        // Monotone trace at lr = 1e-3 on the standard synthetic setup:
        // the builtin scheme, σ_t = 2σ_n, eight annotations.
        let data = generate_synthetic(&quick_synth(5, 0.75, 1.5, 8, 1)).unwrap();
        let scheme = builtin_300w();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(2.0),
            learning_rate: 1e-3,
            max_iterations: 300,
            tolerance: 0.0,
            init_spread: 3.0,
            seed: 5,
        };
        let fit = fit_coordinates(&data.faces[0].annotations, &scheme, &cfg).unwrap();
        for w in fit.trace.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
        assert!(!fit.trace.converged); // tolerance 0 never triggers early stop
        assert_eq!(fit.trace.iterations, 300);
    }

    #[test]
    fn oversized_steps_diverge() {
        // Three annotations with asymmetric x offsets (0, 0.6, 3) put the
        // consensus in mixed branches, so its gradient is nonzero and a
        // huge step launches the iterate past the divergence bound.
        let scheme = v_scheme();
        let base = [[10.0, 10.0], [12.0, 13.0], [14.0, 10.0]];
        let annotations: Vec<PointSet> = [0.0, 0.6, 3.0]
            .iter()
            .map(|dx| {
                PointSet::heatmap(base.iter().map(|p| [p[0] + dx, p[1]]).collect()).unwrap()
            })
            .collect();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(1.0),
            learning_rate: 1e9,
            max_iterations: 50,
            tolerance: 0.0,
            init_spread: 0.0,
            seed: 0,
        };
        match fit_coordinates(&annotations, &scheme, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    /// Two points, no edges: each landmark has a free frame.
    fn free2() -> LandmarkScheme {
        LandmarkScheme::new(
            "free2",
            2,
            vec![],
            NormalizationSpec { inter_ocular: (0, 1), inter_pupil: (vec![0], vec![1]) },
        )
        .unwrap()
    }

    #[test]
    fn heatmap_fit_with_uniform_mask_reaches_targets() {
        let scheme = free2();
        let geometry = HeatmapGeometry::default();
        let targets = PointSet::heatmap(vec![[20.0, 20.0], [40.0, 30.0]]).unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geometry, 2, 1.0).unwrap();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(1.0),
            learning_rate: 30.0,
            max_iterations: 2000,
            tolerance: 0.0,
            init_spread: 0.0,
            seed: 0,
        };
        let fit = fit_heatmap_logits_masked(&targets, &scheme, &mask, &cfg, None).unwrap();
        for i in 0..2 {
            let p = fit.decoded.get(i);
            let t = targets.get(i);
            let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt();
            assert!(d <= 0.25, "landmark {i} decoded {p:?}, want {t:?} (d = {d})");
        }
    }

    #[test]
    fn heatmap_fit_with_pinning_mask_is_exact_immediately() {
        let scheme = free2();
        let geometry = HeatmapGeometry::default();
        let targets = PointSet::heatmap(vec![[20.0, 20.0], [40.0, 30.0]]).unwrap();
        // Mask zero everywhere except the true pixel of each landmark.
        let mut data = vec![0.0; 2 * 64 * 64];
        data[20 * 64 + 20] = 1.0;
        data[64 * 64 + 30 * 64 + 40] = 1.0;
        let mask = Heatmap::from_data(HeatmapKind::Fused, geometry, 2, data).unwrap();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(1.0),
            learning_rate: 1.0,
            max_iterations: 5,
            tolerance: 0.0,
            init_spread: 0.0,
            seed: 0,
        };
        let fit = fit_heatmap_logits_masked(&targets, &scheme, &mask, &cfg, None).unwrap();
        for i in 0..2 {
            let p = fit.decoded.get(i);
            let t = targets.get(i);
            assert!((p[0] - t[0]).abs() < 1e-4 && (p[1] - t[1]).abs() < 1e-4);
        }
        // The decode is already at the fixed point, so the loss is flat.
        let first = fit.trace.losses.first().unwrap();
        let last = fit.trace.losses.last().unwrap();
        assert!((first - last).abs() < 1e-10);
    }

    #[test]
    fn heatmap_fit_rejects_empty_mask_channels() {
        let scheme = free2();
        let geometry = HeatmapGeometry::default();
        let targets = PointSet::heatmap(vec![[20.0, 20.0], [40.0, 30.0]]).unwrap();
        let mut data = vec![0.0; 2 * 64 * 64];
        data[20 * 64 + 20] = 1.0; // channel 0 has mass, channel 1 has none
        let mask = Heatmap::from_data(HeatmapKind::Fused, geometry, 2, data).unwrap();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(1.0),
            learning_rate: 1.0,
            max_iterations: 5,
            tolerance: 0.0,
            init_spread: 0.0,
            seed: 0,
        };
        match fit_heatmap_logits_masked(&targets, &scheme, &mask, &cfg, None) {
            Err(Error::NoMassInMask { channel: 1 }) => {}
            other => panic!("expected NoMassInMask, got {other:?}"),
        }
        // Targets outside the grid are rejected up front.
        let outside = PointSet::heatmap(vec![[20.0, 20.0], [90.0, 30.0]]).unwrap();
        let ones = Heatmap::filled(HeatmapKind::Fused, geometry, 2, 1.0).unwrap();
        assert!(matches!(
            fit_heatmap_logits_masked(&outside, &scheme, &ones, &cfg, None),
            Err(Error::InvalidInput { .. })
        ));
    }

    #[test]
    fn full_heatmap_path_responds_to_awing() {
        // With the adaptive wing term on, the fitted map itself approaches
        // the point target, not just its decode.
        let scheme = builtin_300w();
        let targets = canonical_face_template();
        let geometry = HeatmapGeometry::default();
        let cfg = FitConfig {
            lambda: Lambda::Scalar(2.0),
            learning_rate: 0.02,
            max_iterations: 40,
            tolerance: 0.0,
            init_spread: 0.0,
            seed: 0,
        };
        let fit = fit_heatmap_logits(
            &targets,
            &scheme,
            &geometry,
            &cfg,
            Some((AwingConfig::default(), CompositeWeights::default())),
        )
        .unwrap();
        // The trace must decrease overall.
        let first = fit.trace.losses.first().unwrap();
        let last = fit.trace.losses.last().unwrap();
        assert!(last < first, "composite loss should drop: {first} -> {last}");
        // And the decode should sit near the targets already.
        let decomp_d: f64 = (0..68)
            .map(|i| {
                let p = fit.decoded.get(i);
                let t = targets.get(i);
                ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 68.0;
        assert!(decomp_d < 2.0, "mean decode error {decomp_d}");
    }

    #[test]
    fn lambda_estimation_on_controlled_clouds() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draw = |rng: &mut ChaCha8Rng, sx: f64, sy: f64, n: usize| -> Vec<(f64, f64)> {
            (0..n)
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    (sx * a, sy * b)
                })
                .collect()
        };
        // Isotropic cloud: λ ≈ 1 within 10%.
        let iso = ErrorScatter {
            sample_ids: vec!["synthetic".to_string()],
            pairs: vec![draw(&mut rng, 1.0, 1.0, 10_000)],
        };
        let est = estimate_lambda(&iso).unwrap();
        assert!((est.lambdas[0] - 1.0).abs() <= 0.1, "isotropic λ = {}", est.lambdas[0]);

        // 2:1 cloud along the tangent axis: λ ≈ 2, major axis ≈ ±π/2.
        let aniso = ErrorScatter {
            sample_ids: vec!["synthetic".to_string()],
            pairs: vec![draw(&mut rng, 1.0, 2.0, 10_000)],
        };
        let est = estimate_lambda(&aniso).unwrap();
        assert!((est.lambdas[0] - 2.0).abs() <= 0.2, "anisotropic λ = {}", est.lambdas[0]);
        assert!(
            (est.ellipses[0].angle.abs() - core::f64::consts::FRAC_PI_2).abs() < 0.1,
            "angle {}",
            est.ellipses[0].angle
        );
        assert!(!est.ellipses[0].degenerate);
    }

    #[test]
    fn lambda_estimation_degenerate_and_error_cases() {
        // Identical points: no spread at all → λ = 1, degenerate flag.
        let same = ErrorScatter {
            sample_ids: vec![],
            pairs: vec![vec![(0.5, -0.25); 5]],
        };
        let est = estimate_lambda(&same).unwrap();
        assert!(est.ellipses[0].degenerate);
        assert_eq!(est.lambdas[0], 1.0);

        // Perfectly collinear spread: short axis collapses → λ clamps to 16.
        let line = ErrorScatter {
            sample_ids: vec![],
            pairs: vec![vec![(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]],
        };
        let est = estimate_lambda(&line).unwrap();
        assert!(est.ellipses[0].degenerate);
        assert_eq!(est.lambdas[0], LAMBDA_MAX);
        assert!(est.ellipses[0].angle.abs() < 1e-12);

        // Fewer than three pairs is an error naming the landmark.
        let short = ErrorScatter {
            sample_ids: vec![],
            pairs: vec![vec![(0.0, 0.0), (1.0, 1.0)]],
        };
        match estimate_lambda(&short) {
            Err(Error::InsufficientScatter { landmark: 0, n_pairs: 2 }) => {}
            other => panic!("expected InsufficientScatter, got {other:?}"),
        }
    }

    #[test]
    fn estimated_lambda_tracks_the_generating_ratio() {
        // End to end: generate anisotropic annotations, decompose them
        // against the truth, and recover the σ_t/σ_n ratio.
        let cfg = quick_synth(99, 0.5, 1.5, 400, 1);
        let data = generate_synthetic(&cfg).unwrap();
        let scheme = builtin_300w();
        let face = &data.faces[0];
        let frames = direction_frame(&scheme, &face.truth, &face.truth).unwrap();
        let mut pairs = alloc::vec![Vec::new(); 68];
        for a in &face.annotations {
            let d = decompose_errors(&frames, &face.truth, a).unwrap();
            for i in 0..68 {
                pairs[i].push((d.get(i).e_normal, d.get(i).e_tangent));
            }
        }
        let est = estimate_lambda(&ErrorScatter {
            sample_ids: vec!["f".to_string()],
            pairs,
        })
        .unwrap();
        // Check a few stable interior landmarks (jaw, eyebrow, outer lip).
        for i in [4, 8, 12, 19, 51, 57] {
            let l = est.lambdas[i];
            assert!((l - 3.0).abs() < 0.45, "landmark {i}: λ = {l}, want ≈ 3");
        }
    }
}
