//! Regression losses with analytic gradients.
//!
//! Coordinate losses compare predicted and ground-truth point sets and
//! reduce by the mean over landmarks. The directional variants re-weight
//! the squared error components inside a per-landmark frame (see
//! [`crate::direction`]): with anisotropy ratio `λ ≥ 1` the normal
//! component costs `2λ/(1+λ)` and the tangent component `2/(1+λ)`, so the
//! two weights always sum to 2 and `λ = 1` recovers the isotropic loss.
//!
//! * [`l_n`] — plain `|e|` or `|e|²` per landmark.
//! * [`smooth_l1`] — quadratic inside the unit ball, linear outside.
//! * [`adl_n`] — anisotropic direction loss
//!   `(w_n (N·e)² + w_t (T·e)²)^(n/2)`.
//! * [`smooth_adl1`] — smooth-L1-style composition: `0.5·ADL₂` inside the
//!   unit ball (by raw error magnitude), `ADL₁ - 0.5` outside. Note the
//!   branch switch is on `|e|`, not on the weighted error, so for `λ ≠ 1`
//!   the loss value jumps at `|e| = 1`; this follows the composition as
//!   defined and is reported by the diagnostics rather than smoothed over.
//!
//! Heatmap losses compare rendered maps pixel by pixel and reduce by the
//! mean over all pixels of all channels:
//!
//! * [`awing_pixel`] / [`awing_map`] — adaptive wing loss, logarithmic
//!   around zero residual with an exponent that sharpens near foreground
//!   pixels (it depends on the ground-truth pixel value), continuing as an
//!   affine function beyond the threshold `θ` with matched value and slope.
//!
//! [`composite_loss`] combines a coordinate term with edge- and point-map
//! terms using scalar weights.
//!
//! Gradients are taken with the direction frames held constant (frames
//! come from ground-truth geometry; see [`crate::direction`]). Every
//! gradient here is verified against central differences in
//! [`crate::gradcheck`].

use alloc::vec::Vec;

use crate::direction::{dot, norm, sub, DirectionFrame};
use crate::error::{Error, Result};
use crate::fmath;
use crate::heatmap::Heatmap;
use crate::scheme::PointSet;

/// Exponent of an `L_n`-style loss; only 1 and 2 are meaningful here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exponent {
    /// Absolute error, `|e|`.
    One,
    /// Squared error, `|e|²`.
    Two,
}

/// Anisotropy ratio: how much more a normal-direction error costs than a
/// tangent-direction error.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    /// One ratio shared by all landmarks.
    Scalar(f64),
    /// A ratio per landmark.
    PerLandmark(Vec<f64>),
}

impl Lambda {
    /// Ratio for landmark `i` (a scalar broadcasts).
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Lambda::Scalar(l) => *l,
            Lambda::PerLandmark(v) => v[i],
        }
    }

    /// Errors unless every ratio is finite and positive and a per-landmark
    /// vector matches the point count.
    pub fn validate(&self, n_points: usize) -> Result<()> {
        match self {
            Lambda::Scalar(l) => {
                if !l.is_finite() || *l <= 0.0 {
                    return Err(Error::InvalidConfig { reason: "lambda must be finite and > 0" });
                }
            }
            Lambda::PerLandmark(v) => {
                if v.len() != n_points {
                    return Err(Error::PointCount { expected: n_points, got: v.len() });
                }
                if v.iter().any(|l| !l.is_finite() || *l <= 0.0) {
                    return Err(Error::InvalidConfig { reason: "lambda must be finite and > 0" });
                }
            }
        }
        Ok(())
    }
}

/// Normal/tangent weights for ratio `λ`: `(2λ/(1+λ), 2/(1+λ))`. They sum
/// to 2, and `λ = 1` gives `(1, 1)`.
pub fn direction_weights(lambda: f64) -> (f64, f64) {
    (2.0 * lambda / (1.0 + lambda), 2.0 / (1.0 + lambda))
}

/// A scalar loss value together with its gradient.
///
/// The gradient layout matches the differentiated parameters: coordinate
/// losses use interleaved `[dx₀, dy₀, dx₁, dy₁, ...]`; heatmap losses use
/// the channel-major pixel layout of the map. An empty gradient marks a
/// term that is constant with respect to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValueGrad {
    /// Gradient of landmark `i` as `[d/dx, d/dy]` (coordinate layout).
    pub fn grad_xy(&self, i: usize) -> [f64; 2] {
        [self.grad[2 * i], self.grad[2 * i + 1]]
    }
}

fn check_nonempty(pred: &PointSet) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::InvalidInput { reason: "empty point set" });
    }
    Ok(())
}

/// Isotropic per-landmark term `|e|^n` and its gradient.
fn iso_term(e: [f64; 2], n: Exponent) -> (f64, [f64; 2]) {
    match n {
        Exponent::Two => (e[0] * e[0] + e[1] * e[1], [2.0 * e[0], 2.0 * e[1]]),
        Exponent::One => {
            let a = norm(e);
            if a == 0.0 {
                (0.0, [0.0, 0.0])
            } else {
                (a, [e[0] / a, e[1] / a])
            }
        }
    }
}

/// Weighted quadratic form `w_n (N·e)² + w_t (T·e)²` and its gradient.
fn weighted_quadratic(
    e: [f64; 2],
    normal: [f64; 2],
    tangent: [f64; 2],
    w_n: f64,
    w_t: f64,
) -> (f64, [f64; 2]) {
    let en = dot(normal, e);
    let et = dot(tangent, e);
    let q = w_n * en * en + w_t * et * et;
    // d q / d e = 2 (w_n e_n N + w_t e_t T)
    let g = [
        2.0 * (w_n * en * normal[0] + w_t * et * tangent[0]),
        2.0 * (w_n * en * normal[1] + w_t * et * tangent[1]),
    ];
    (q, g)
}

/// Plain `L_n` loss: mean of `|e|^n` over landmarks.
pub fn l_n(pred: &PointSet, truth: &PointSet, n: Exponent) -> Result<LossValueGrad> {
    pred.check_compatible(truth)?;
    check_nonempty(pred)?;
    let scale = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * pred.len());
    for i in 0..pred.len() {
        let e = sub(pred.get(i), truth.get(i));
        let (v, g) = iso_term(e, n);
        value += v * scale;
        grad.push(g[0] * scale);
        grad.push(g[1] * scale);
    }
    Ok(LossValueGrad { value, grad })
}

/// Smooth L1: `0.5|e|²` for `|e| < 1`, `|e| - 0.5` otherwise; mean over
/// landmarks. Continuous with continuous gradient at `|e| = 1`.
pub fn smooth_l1(pred: &PointSet, truth: &PointSet) -> Result<LossValueGrad> {
    pred.check_compatible(truth)?;
    check_nonempty(pred)?;
    let scale = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * pred.len());
    for i in 0..pred.len() {
        let e = sub(pred.get(i), truth.get(i));
        let a = norm(e);
        let (v, g) = if a < 1.0 {
            (0.5 * a * a, [e[0], e[1]])
        } else {
            (a - 0.5, [e[0] / a, e[1] / a])
        };
        value += v * scale;
        grad.push(g[0] * scale);
        grad.push(g[1] * scale);
    }
    Ok(LossValueGrad { value, grad })
}

/// Whether a landmark uses the anisotropic path: it must lie on an edge
/// and its frame must be usable. Landmarks on no edge (and degenerate
/// frames) contribute the plain isotropic `|e|^n`, so the loss degenerates
/// to `L_n` exactly for them.
fn anisotropic(frame: &crate::direction::LandmarkFrame) -> bool {
    frame.on_edge && !frame.degenerate
}

/// Anisotropic direction loss: mean of
/// `(w_n (N·e)² + w_t (T·e)²)^(n/2)` over landmarks, with weights from
/// [`direction_weights`]. With `λ = 1` this equals [`l_n`]; landmarks on no
/// edge contribute `|e|^n` regardless of `λ`.
pub fn adl_n(
    pred: &PointSet,
    truth: &PointSet,
    frame: &DirectionFrame,
    n: Exponent,
    lambda: &Lambda,
) -> Result<LossValueGrad> {
    pred.check_compatible(truth)?;
    check_nonempty(pred)?;
    if frame.len() != pred.len() {
        return Err(Error::PointCount { expected: pred.len(), got: frame.len() });
    }
    lambda.validate(pred.len())?;

    let scale = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * pred.len());
    for i in 0..pred.len() {
        let e = sub(pred.get(i), truth.get(i));
        let f = frame.get(i);
        let (v, g) = if anisotropic(f) {
            let (w_n, w_t) = direction_weights(lambda.get(i));
            let (q, gq) = weighted_quadratic(e, f.normal, f.tangent, w_n, w_t);
            match n {
                Exponent::Two => (q, gq),
                Exponent::One => {
                    let s = fmath::sqrt(q);
                    if s == 0.0 {
                        (0.0, [0.0, 0.0])
                    } else {
                        // d sqrt(q) / d e = (d q / d e) / (2 sqrt(q))
                        (s, [gq[0] / (2.0 * s), gq[1] / (2.0 * s)])
                    }
                }
            }
        } else {
            iso_term(e, n)
        };
        value += v * scale;
        grad.push(g[0] * scale);
        grad.push(g[1] * scale);
    }
    Ok(LossValueGrad { value, grad })
}

/// Smooth anisotropic direction loss: per landmark, `0.5·ADL₂` when the
/// raw error magnitude is below 1, and `ADL₁ - 0.5` otherwise; mean over
/// landmarks. The branch is selected by `|e|` (not by the weighted error),
/// so for `λ ≠ 1` the value is discontinuous at `|e| = 1`; `λ = 1` recovers
/// [`smooth_l1`] exactly.
pub fn smooth_adl1(
    pred: &PointSet,
    truth: &PointSet,
    frame: &DirectionFrame,
    lambda: &Lambda,
) -> Result<LossValueGrad> {
    pred.check_compatible(truth)?;
    check_nonempty(pred)?;
    if frame.len() != pred.len() {
        return Err(Error::PointCount { expected: pred.len(), got: frame.len() });
    }
    lambda.validate(pred.len())?;

    let scale = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * pred.len());
    for i in 0..pred.len() {
        let e = sub(pred.get(i), truth.get(i));
        let a = norm(e);
        let f = frame.get(i);
        let (v, g) = if anisotropic(f) {
            let (w_n, w_t) = direction_weights(lambda.get(i));
            let (q, gq) = weighted_quadratic(e, f.normal, f.tangent, w_n, w_t);
            if a < 1.0 {
                (0.5 * q, [0.5 * gq[0], 0.5 * gq[1]])
            } else {
                let s = fmath::sqrt(q);
                if s == 0.0 {
                    (-0.5, [0.0, 0.0])
                } else {
                    (s - 0.5, [gq[0] / (2.0 * s), gq[1] / (2.0 * s)])
                }
            }
        } else if a < 1.0 {
            (0.5 * a * a, [e[0], e[1]])
        } else {
            (a - 0.5, [e[0] / a, e[1] / a])
        };
        value += v * scale;
        grad.push(g[0] * scale);
        grad.push(g[1] * scale);
    }
    Ok(LossValueGrad { value, grad })
}

/// Adaptive wing loss parameters.
///
/// `omega` scales the nonlinear part, `epsilon` scales the residual,
/// `theta` is the switch point to the affine tail, and `alpha` controls the
/// exponent `alpha - ŷ` (with `ŷ` the ground-truth pixel in `[0, 1]`, the
/// loss is sharper near foreground pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwingConfig {
    pub omega: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub theta: f64,
}

impl Default for AwingConfig {
    fn default() -> Self {
        Self { omega: 14.0, epsilon: 1.0, alpha: 2.1, theta: 0.5 }
    }
}

impl AwingConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.omega.is_finite()
            && self.omega > 0.0
            && self.epsilon.is_finite()
            && self.epsilon > 0.0
            && self.theta.is_finite()
            && self.theta > 0.0
            && self.alpha.is_finite()
            && self.alpha > 1.0;
        if !ok {
            return Err(Error::InvalidConfig {
                reason: "adaptive wing needs omega, epsilon, theta > 0 and alpha > 1",
            });
        }
        Ok(())
    }

    /// Slope `A` and offset `C` of the affine tail for ground-truth pixel
    /// `truth_pixel`, chosen so value and slope are continuous at `θ`.
    pub fn linear_coefficients(&self, truth_pixel: f64) -> (f64, f64) {
        let m = self.alpha - truth_pixel;
        let r = self.theta / self.epsilon;
        let rm = fmath::powf(r, m);
        let a = self.omega * (1.0 / (1.0 + rm)) * m * fmath::powf(r, m - 1.0) / self.epsilon;
        let c = self.theta * a - self.omega * fmath::ln(1.0 + rm);
        (a, c)
    }
}

/// Adaptive wing loss for one pixel: returns `(value, d value / d pred)`.
///
/// With residual `Δ = pred - ŷ` and exponent `m = α - ŷ`:
/// `ω·ln(1 + |Δ/ε|^m)` for `|Δ| < θ`, and `A|Δ| - C` beyond, with `A`, `C`
/// from [`AwingConfig::linear_coefficients`].
pub fn awing_pixel(pred_pixel: f64, truth_pixel: f64, cfg: &AwingConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&truth_pixel) {
        return Err(Error::InvalidInput { reason: "ground-truth pixel outside [0, 1]" });
    }
    if !pred_pixel.is_finite() {
        return Err(Error::NonFinite { context: "predicted pixel" });
    }
    Ok(awing_pixel_unchecked(pred_pixel, truth_pixel, cfg))
}

fn awing_pixel_unchecked(pred_pixel: f64, truth_pixel: f64, cfg: &AwingConfig) -> (f64, f64) {
    let delta = pred_pixel - truth_pixel;
    let a = delta.abs();
    let sign = if delta >= 0.0 { 1.0 } else { -1.0 };
    let m = cfg.alpha - truth_pixel;
    if a < cfg.theta {
        let r = a / cfg.epsilon;
        let rm = fmath::powf(r, m);
        let value = cfg.omega * fmath::ln(1.0 + rm);
        // d/dΔ ω ln(1 + (|Δ|/ε)^m) = ω m (|Δ|/ε)^(m-1) sign(Δ) / (ε (1 + (|Δ|/ε)^m))
        let grad = if a == 0.0 {
            0.0
        } else {
            cfg.omega * m * fmath::powf(r, m - 1.0) * sign / (cfg.epsilon * (1.0 + rm))
        };
        (value, grad)
    } else {
        let (slope, offset) = cfg.linear_coefficients(truth_pixel);
        (slope * a - offset, slope * sign)
    }
}

/// Adaptive wing loss between two heatmaps: mean over every pixel of every
/// channel, with the gradient taken with respect to `pred` in its own data
/// layout. Ground-truth values must lie in `[0, 1]`.
pub fn awing_map(pred: &Heatmap, truth: &Heatmap, cfg: &AwingConfig) -> Result<LossValueGrad> {
    cfg.validate()?;
    if pred.channels() != truth.channels()
        || pred.width() != truth.width()
        || pred.height() != truth.height()
    {
        return Err(Error::ShapeMismatch { reason: "heatmap shapes differ" });
    }
    let pd = pred.data();
    let td = truth.data();
    if pd.is_empty() {
        return Err(Error::InvalidInput { reason: "empty heatmap" });
    }
    let scale = 1.0 / pd.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pd.len());
    for (y, t) in pd.iter().zip(td.iter()) {
        if !(0.0..=1.0).contains(t) {
            return Err(Error::InvalidInput { reason: "ground-truth pixel outside [0, 1]" });
        }
        let (v, g) = awing_pixel_unchecked(*y, *t, cfg);
        value += v * scale;
        grad.push(g * scale);
    }
    Ok(LossValueGrad { value, grad })
}

/// Weights of the edge- and point-map terms in the composite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeWeights {
    pub alpha_edge: f64,
    pub beta_point: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        Self { alpha_edge: 10.0, beta_point: 10.0 }
    }
}

/// Combines a coordinate loss with edge- and point-map losses:
/// `coordinate + α·edge + β·point`, summing gradients with the same
/// weights. Terms with an empty gradient are treated as constants; all
/// non-empty gradients must share one layout (length).
pub fn composite_loss(
    coordinate: &LossValueGrad,
    awing_edge: &LossValueGrad,
    awing_point: &LossValueGrad,
    weights: &CompositeWeights,
) -> Result<LossValueGrad> {
    if !weights.alpha_edge.is_finite()
        || !weights.beta_point.is_finite()
        || weights.alpha_edge < 0.0
        || weights.beta_point < 0.0
    {
        return Err(Error::InvalidConfig { reason: "composite weights must be >= 0 and finite" });
    }
    let value = coordinate.value
        + weights.alpha_edge * awing_edge.value
        + weights.beta_point * awing_point.value;

    let terms = [
        (1.0, &coordinate.grad),
        (weights.alpha_edge, &awing_edge.grad),
        (weights.beta_point, &awing_point.grad),
    ];
    let len = terms.iter().map(|(_, g)| g.len()).find(|&l| l > 0).unwrap_or(0);
    let mut grad = alloc::vec![0.0; len];
    for (w, g) in terms {
        if g.is_empty() {
            continue;
        }
        if g.len() != len {
            return Err(Error::ShapeMismatch { reason: "composite gradient layouts differ" });
        }
        for (acc, gi) in grad.iter_mut().zip(g.iter()) {
            *acc += w * gi;
        }
    }
    Ok(LossValueGrad { value, grad })
}
