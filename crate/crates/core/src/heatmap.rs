//! Heatmap rendering and differentiable decoding.
//!
//! Landmarks and edges are rendered onto a coarse grid (one channel per
//! landmark or per edge) with Gaussian falloff, combined into per-landmark
//! fused maps, and decoded back to coordinates with a masked soft-argmax:
//!
//! 1. [`point_heatmap`] — per-landmark Gaussian bumps.
//! 2. [`edge_heatmap`] — per-edge distance fields through the polylines.
//! 3. [`apply_e2p`] — re-expresses edge channels per landmark using the
//!    scheme's membership matrix (a landmark's channel is the sum of the
//!    edge channels it belongs to).
//! 4. [`fuse`] — elementwise product of the point map and the
//!    per-landmark edge map, concentrating mass where both agree.
//! 5. [`soft_argmax`] — mass-weighted mean position of `map ⊗ mask`,
//!    differentiable with respect to the map ([`soft_argmax_jacobian`],
//!    [`soft_argmax_backward`]).
//!
//! Pixels are addressed by their centers at integer coordinates `(x, y)`
//! with `x` along the width; all heatmap coordinates are in
//! [`CoordUnit::HeatmapPixels`]. Generated channels are max-normalized to
//! peak 1 when the peak is at least [`NORMALIZE_MIN_PEAK`]; channels with
//! essentially no mass (their geometry lies far outside the grid) are left
//! unnormalized rather than amplifying noise.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::scheme::{CoordUnit, E2PMatrix, LandmarkScheme, PointSet};

/// Channels whose peak falls below this value are not max-normalized.
pub const NORMALIZE_MIN_PEAK: f64 = 1e-12;

/// Denominator guard of the soft-argmax: positions are
/// `Σ coord·mass / (Σ mass + ε)`.
pub const SOFT_ARGMAX_EPS: f64 = 1e-8;

/// What a heatmap's channels represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    /// One Gaussian bump per landmark.
    Point,
    /// One polyline distance field per edge.
    Edge,
    /// Edge evidence re-expressed per landmark (after [`apply_e2p`]).
    EdgePerLandmark,
    /// Product of point and per-landmark edge maps.
    Fused,
}

impl HeatmapKind {
    /// Stable lowercase identifier (used by file sidecars).
    pub fn as_str(&self) -> &'static str {
        match self {
            HeatmapKind::Point => "point",
            HeatmapKind::Edge => "edge",
            HeatmapKind::EdgePerLandmark => "edge_per_landmark",
            HeatmapKind::Fused => "fused",
        }
    }

    /// Parses the identifier written by [`HeatmapKind::as_str`].
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "point" => Some(HeatmapKind::Point),
            "edge" => Some(HeatmapKind::Edge),
            "edge_per_landmark" => Some(HeatmapKind::EdgePerLandmark),
            "fused" => Some(HeatmapKind::Fused),
            _ => None,
        }
    }
}

/// Grid shape and rendering parameters shared by the heatmap operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapGeometry {
    /// Grid width in pixels.
    pub width: usize,
    /// Grid height in pixels.
    pub height: usize,
    /// Image pixels per heatmap pixel.
    pub stride: f64,
    /// Standard deviation of the landmark Gaussian, in heatmap pixels.
    pub sigma_point: f64,
    /// Gaussian falloff width of edge fields, in heatmap pixels.
    pub edge_width: f64,
}

impl Default for HeatmapGeometry {
    /// 64×64 grid at stride 4 (256×256 images), σ = 1.5, edge width 1.
    fn default() -> Self {
        Self { width: 64, height: 64, stride: 4.0, sigma_point: 1.5, edge_width: 1.0 }
    }
}

impl HeatmapGeometry {
    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.width >= 1
            && self.height >= 1
            && self.stride.is_finite()
            && self.stride > 0.0
            && self.sigma_point.is_finite()
            && self.sigma_point > 0.0
            && self.edge_width.is_finite()
            && self.edge_width > 0.0;
        if !ok {
            return Err(Error::InvalidConfig {
                reason: "heatmap geometry needs width, height >= 1 and positive stride, sigma, edge width",
            });
        }
        Ok(())
    }
}

/// A stack of equally sized single-valued channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    kind: HeatmapKind,
    geometry: HeatmapGeometry,
    channels: usize,
    /// Channel-major, row-major within a channel:
    /// `data[c·w·h + y·w + x]`.
    data: Vec<f64>,
}

impl Heatmap {
    /// A map with every pixel set to `value`.
    pub fn filled(
        kind: HeatmapKind,
        geometry: HeatmapGeometry,
        channels: usize,
        value: f64,
    ) -> Result<Self> {
        geometry.validate()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "heatmap fill value" });
        }
        let data = alloc::vec![value; channels * geometry.width * geometry.height];
        Ok(Self { kind, geometry, channels, data })
    }

    /// Wraps raw data (channel-major layout); all values must be finite.
    pub fn from_data(
        kind: HeatmapKind,
        geometry: HeatmapGeometry,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        geometry.validate()?;
        if data.len() != channels * geometry.width * geometry.height {
            return Err(Error::ShapeMismatch { reason: "heatmap data length != channels·w·h" });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "heatmap data" });
        }
        Ok(Self { kind, geometry, channels, data })
    }

    pub fn kind(&self) -> HeatmapKind {
        self.kind
    }

    pub fn geometry(&self) -> &HeatmapGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    /// Flat data in channel-major layout.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn plane(&self) -> usize {
        self.geometry.width * self.geometry.height
    }

    /// One channel as a row-major slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Value at channel `c`, column `x`, row `y`.
    pub fn value(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.plane() + y * self.geometry.width + x]
    }

    fn same_shape(&self, other: &Heatmap) -> bool {
        self.channels == other.channels
            && self.geometry.width == other.geometry.width
            && self.geometry.height == other.geometry.height
    }
}

/// Max-normalizes a channel to peak 1 unless its peak is below
/// [`NORMALIZE_MIN_PEAK`].
fn normalize_channel(channel: &mut [f64]) {
    let max = channel.iter().fold(0.0f64, |m, &v| if v > m { v } else { m });
    if max > NORMALIZE_MIN_PEAK {
        for v in channel.iter_mut() {
            *v /= max;
        }
    }
}

/// Renders one Gaussian bump per landmark: channel `i` holds
/// `exp(-((x-xᵢ)² + (y-yᵢ)²) / (2σ²))`, max-normalized. Landmarks may lie
/// outside the grid; their channels then hold only the visible tail (or
/// effectively zeros when far away).
pub fn point_heatmap(
    scheme: &LandmarkScheme,
    truth: &PointSet,
    geometry: &HeatmapGeometry,
) -> Result<Heatmap> {
    geometry.validate()?;
    truth.check_len(scheme.n_points())?;
    if truth.unit() != CoordUnit::HeatmapPixels {
        return Err(Error::UnitMismatch {
            expected: CoordUnit::HeatmapPixels,
            got: truth.unit(),
        });
    }

    let mut map = Heatmap::filled(HeatmapKind::Point, *geometry, scheme.n_points(), 0.0)?;
    let two_sigma_sq = 2.0 * geometry.sigma_point * geometry.sigma_point;
    let (w, h) = (geometry.width, geometry.height);
    for (i, p) in truth.coords().iter().enumerate() {
        let channel = map.channel_mut(i);
        for y in 0..h {
            let dy = y as f64 - p[1];
            for x in 0..w {
                let dx = x as f64 - p[0];
                channel[y * w + x] = fmath::exp(-(dx * dx + dy * dy) / two_sigma_sq);
            }
        }
        normalize_channel(channel);
    }
    Ok(map)
}

/// Squared distance from point `p` to the segment `a`–`b`. A zero-length
/// segment degrades to the point distance.
fn segment_distance_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let denom = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if denom > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    dx * dx + dy * dy
}

/// Renders one distance field per authored edge: channel `j` holds
/// `exp(-d(x, polyline)² / (2w²))` where `d` is the distance to the edge's
/// polyline (including the closing segment of a closed edge),
/// max-normalized like [`point_heatmap`].
pub fn edge_heatmap(
    scheme: &LandmarkScheme,
    truth: &PointSet,
    geometry: &HeatmapGeometry,
) -> Result<Heatmap> {
    geometry.validate()?;
    truth.check_len(scheme.n_points())?;
    if truth.unit() != CoordUnit::HeatmapPixels {
        return Err(Error::UnitMismatch {
            expected: CoordUnit::HeatmapPixels,
            got: truth.unit(),
        });
    }

    let n_edges = scheme.edges().len();
    let mut map = Heatmap::filled(HeatmapKind::Edge, *geometry, n_edges, 0.0)?;
    let two_w_sq = 2.0 * geometry.edge_width * geometry.edge_width;
    let (w, h) = (geometry.width, geometry.height);
    for (j, edge) in scheme.edges().iter().enumerate() {
        let pts: Vec<[f64; 2]> = edge.vertices.iter().map(|&v| truth.get(v)).collect();
        let mut segments: Vec<([f64; 2], [f64; 2])> =
            pts.windows(2).map(|s| (s[0], s[1])).collect();
        if edge.closed {
            segments.push((*pts.last().unwrap(), pts[0]));
        }
        let channel = map.channel_mut(j);
        for y in 0..h {
            for x in 0..w {
                let p = [x as f64, y as f64];
                let d_sq = segments
                    .iter()
                    .map(|&(a, b)| segment_distance_sq(p, a, b))
                    .fold(f64::INFINITY, f64::min);
                channel[y * w + x] = fmath::exp(-d_sq / two_w_sq);
            }
        }
        normalize_channel(channel);
    }
    Ok(map)
}

/// Re-expresses edge channels per landmark: output channel `i` is the sum
/// of the input channels of every edge landmark `i` belongs to. Values are
/// deliberately not clamped, so a landmark on two edges can exceed 1 where
/// the edges overlap.
pub fn apply_e2p(edge_map: &Heatmap, matrix: &E2PMatrix) -> Result<Heatmap> {
    if edge_map.channels() != matrix.n_edges() {
        return Err(Error::ShapeMismatch { reason: "edge channels != membership matrix columns" });
    }
    let mut out = Heatmap::filled(
        HeatmapKind::EdgePerLandmark,
        *edge_map.geometry(),
        matrix.n_points(),
        0.0,
    )?;
    for i in 0..matrix.n_points() {
        for j in 0..matrix.n_edges() {
            if !matrix.get(i, j) {
                continue;
            }
            let src = edge_map.channel(j).to_vec();
            for (dst, s) in out.channel_mut(i).iter_mut().zip(src.iter()) {
                *dst += s;
            }
        }
    }
    Ok(out)
}

/// Elementwise product of a point map and a per-landmark edge map with the
/// same shape. The product concentrates mass where both targets agree.
pub fn fuse(point_map: &Heatmap, edge_per_landmark: &Heatmap) -> Result<Heatmap> {
    if !point_map.same_shape(edge_per_landmark) {
        return Err(Error::ShapeMismatch { reason: "fuse inputs must share channels and size" });
    }
    let data = point_map
        .data()
        .iter()
        .zip(edge_per_landmark.data().iter())
        .map(|(a, b)| a * b)
        .collect();
    Heatmap::from_data(HeatmapKind::Fused, *point_map.geometry(), point_map.channels(), data)
}

/// Result of [`soft_argmax`]: one decoded position per channel, plus the
/// masked mass and a degeneracy flag (mass exactly zero; the position is
/// then pinned to the grid center).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPoints {
    pub points: PointSet,
    /// Masked mass `Σ map·mask` per channel.
    pub masses: Vec<f64>,
    /// True where the masked channel held no mass at all.
    pub degenerate: Vec<bool>,
}

fn check_soft_argmax_inputs(map: &Heatmap, mask: &Heatmap) -> Result<()> {
    if !map.same_shape(mask) {
        return Err(Error::ShapeMismatch { reason: "map and mask must share channels and size" });
    }
    if map.data().iter().chain(mask.data().iter()).any(|&v| v < 0.0) {
        return Err(Error::InvalidInput { reason: "soft-argmax inputs must be non-negative" });
    }
    Ok(())
}

/// Decodes each channel to the mass-weighted mean pixel position of
/// `map ⊗ mask`:
/// `P = Σ (x, y)·map·mask / (Σ map·mask + ε)` with `ε =`
/// [`SOFT_ARGMAX_EPS`]. Channels with zero masked mass decode to the grid
/// center `((w-1)/2, (h-1)/2)` and are flagged degenerate.
pub fn soft_argmax(map: &Heatmap, mask: &Heatmap) -> Result<DecodedPoints> {
    check_soft_argmax_inputs(map, mask)?;
    let (w, h) = (map.width(), map.height());
    let mut coords = Vec::with_capacity(map.channels());
    let mut masses = Vec::with_capacity(map.channels());
    let mut degenerate = Vec::with_capacity(map.channels());
    for c in 0..map.channels() {
        let hm = map.channel(c);
        let mk = mask.channel(c);
        let mut s = 0.0;
        let mut wx = 0.0;
        let mut wy = 0.0;
        for y in 0..h {
            for x in 0..w {
                let m = hm[y * w + x] * mk[y * w + x];
                s += m;
                wx += x as f64 * m;
                wy += y as f64 * m;
            }
        }
        masses.push(s);
        if s == 0.0 {
            coords.push([(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0]);
            degenerate.push(true);
        } else {
            coords.push([wx / (s + SOFT_ARGMAX_EPS), wy / (s + SOFT_ARGMAX_EPS)]);
            degenerate.push(false);
        }
    }
    Ok(DecodedPoints {
        points: PointSet::new(coords, CoordUnit::HeatmapPixels)?,
        masses,
        degenerate,
    })
}

/// Jacobian of one decoded position with respect to that channel's map
/// values: returns `(dPx/dH, dPy/dH)` in row-major pixel layout. With
/// `s = Σ map·mask`:
/// `dPx/dH(x, y) = mask(x, y) · (x - Px) / (s + ε)`.
/// A degenerate channel (zero mass) returns zeros — its decode is pinned.
pub fn soft_argmax_jacobian(
    map: &Heatmap,
    mask: &Heatmap,
    channel: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_soft_argmax_inputs(map, mask)?;
    let decoded = soft_argmax(map, mask)?;
    let (w, h) = (map.width(), map.height());
    let mut jx = alloc::vec![0.0; w * h];
    let mut jy = alloc::vec![0.0; w * h];
    if decoded.degenerate[channel] {
        return Ok((jx, jy));
    }
    let p = decoded.points.get(channel);
    let denom = decoded.masses[channel] + SOFT_ARGMAX_EPS;
    let mk = mask.channel(channel);
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            jx[idx] = mk[idx] * (x as f64 - p[0]) / denom;
            jy[idx] = mk[idx] * (y as f64 - p[1]) / denom;
        }
    }
    Ok((jx, jy))
}

/// Pulls a gradient with respect to the decoded positions back onto the
/// map: `upstream[c]` is `(dL/dPx, dL/dPy)` for channel `c`, and the result
/// is `dL/dH` over the full map layout. Degenerate channels contribute
/// zeros.
pub fn soft_argmax_backward(
    map: &Heatmap,
    mask: &Heatmap,
    upstream: &[[f64; 2]],
) -> Result<Vec<f64>> {
    check_soft_argmax_inputs(map, mask)?;
    if upstream.len() != map.channels() {
        return Err(Error::ShapeMismatch { reason: "upstream length != channels" });
    }
    let decoded = soft_argmax(map, mask)?;
    let (w, h) = (map.width(), map.height());
    let mut grad = alloc::vec![0.0; map.data().len()];
    for c in 0..map.channels() {
        if decoded.degenerate[c] {
            continue;
        }
        let p = decoded.points.get(c);
        let denom = decoded.masses[c] + SOFT_ARGMAX_EPS;
        let mk = mask.channel(c);
        let [ux, uy] = upstream[c];
        let base = c * w * h;
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                grad[base + idx] =
                    mk[idx] * (ux * (x as f64 - p[0]) + uy * (y as f64 - p[1])) / denom;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{builtin_300w, EdgeDef, LandmarkScheme, NormalizationSpec};
    use alloc::vec;

    fn mini_scheme(n: usize, edges: Vec<EdgeDef>) -> LandmarkScheme {
        LandmarkScheme::new(
            "mini",
            n,
            edges,
            NormalizationSpec { inter_ocular: (0, n - 1), inter_pupil: (vec![0], vec![n - 1]) },
        )
        .unwrap()
    }

    fn small_geom() -> HeatmapGeometry {
        HeatmapGeometry { width: 32, height: 24, ..HeatmapGeometry::default() }
    }

    #[test]
    fn geometry_validation() {
        assert!(HeatmapGeometry::default().validate().is_ok());
        assert!(HeatmapGeometry { width: 0, ..HeatmapGeometry::default() }.validate().is_err());
        assert!(
            HeatmapGeometry { sigma_point: 0.0, ..HeatmapGeometry::default() }
                .validate()
                .is_err()
        );
        assert!(
            HeatmapGeometry { edge_width: -1.0, ..HeatmapGeometry::default() }
                .validate()
                .is_err()
        );
        assert!(HeatmapGeometry { stride: 0.0, ..HeatmapGeometry::default() }.validate().is_err());
    }

    #[test]
    fn point_peak_is_exactly_one() {
        let scheme = mini_scheme(2, vec![]);
        let truth = PointSet::heatmap(vec![[10.0, 20.0], [5.0, 5.0]]).unwrap();
        let map = point_heatmap(&scheme, &truth, &small_geom()).unwrap();
        assert_eq!(map.kind(), HeatmapKind::Point);
        assert_eq!(map.channels(), 2);
        assert_eq!(map.value(0, 10, 20), 1.0);
        assert_eq!(map.value(1, 5, 5), 1.0);
        // All values are within [0, 1].
        assert!(map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn point_value_at_distance_sigma() {
        // With the landmark on a pixel center, a pixel at distance σ holds
        // exactly exp(-1/2); the on-center peak makes normalization a no-op.
        let geom = HeatmapGeometry { sigma_point: 2.0, ..small_geom() };
        let scheme = mini_scheme(2, vec![]);
        let truth = PointSet::heatmap(vec![[10.0, 10.0], [0.0, 0.0]]).unwrap();
        let map = point_heatmap(&scheme, &truth, &geom).unwrap();
        let want = (-0.5f64).exp();
        assert!((map.value(0, 12, 10) - want).abs() < 1e-15);
        assert!((map.value(0, 10, 8) - want).abs() < 1e-15);
        // And at distance 1.5 = σ·0.75 with default σ = 1.5 the closed form
        // still holds: exp(-(1.5)²/(2·1.5²)) at integer offset... checked
        // with offset 1 instead: exp(-1/(2·2.25)).
        let geom_default = small_geom();
        let map = point_heatmap(&scheme, &truth, &geom_default).unwrap();
        let want = (-1.0 / 4.5f64).exp();
        assert!((map.value(0, 11, 10) - want).abs() < 1e-15);
    }

    #[test]
    fn point_far_outside_grid_stays_tiny() {
        let scheme = mini_scheme(2, vec![]);
        let truth = PointSet::heatmap(vec![[-50.0, -50.0], [5.0, 5.0]]).unwrap();
        let map = point_heatmap(&scheme, &truth, &small_geom()).unwrap();
        assert!(map.channel(0).iter().all(|&v| v < 1e-12), "no normalization of empty tails");
        assert_eq!(map.value(1, 5, 5), 1.0);
    }

    #[test]
    fn point_translation_consistency() {
        // Integer translation of the landmark shifts the channel exactly.
        let scheme = mini_scheme(2, vec![]);
        let a = PointSet::heatmap(vec![[10.3, 9.8], [0.0, 0.0]]).unwrap();
        let b = PointSet::heatmap(vec![[13.3, 11.8], [0.0, 0.0]]).unwrap();
        let geom = small_geom();
        let ma = point_heatmap(&scheme, &a, &geom).unwrap();
        let mb = point_heatmap(&scheme, &b, &geom).unwrap();
        for y in 0..10 {
            for x in 0..15 {
                assert_eq!(ma.value(0, x, y), mb.value(0, x + 3, y + 2), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn edge_field_on_and_off_the_line() {
        // Horizontal segment through pixel centers: value 1 on the line,
        // exp(-1/2) one pixel off (distance = edge width = 1).
        let scheme = mini_scheme(2, vec![EdgeDef::open("Line", vec![0, 1])]);
        let truth = PointSet::heatmap(vec![[10.0, 10.0], [20.0, 10.0]]).unwrap();
        let map = edge_heatmap(&scheme, &truth, &small_geom()).unwrap();
        assert_eq!(map.kind(), HeatmapKind::Edge);
        assert_eq!(map.channels(), 1);
        assert_eq!(map.value(0, 15, 10), 1.0);
        assert_eq!(map.value(0, 10, 10), 1.0);
        let want = (-0.5f64).exp();
        assert!((map.value(0, 15, 11) - want).abs() < 1e-15);
        assert!((map.value(0, 15, 9) - want).abs() < 1e-15);
        // Beyond the endpoint the distance is to the endpoint itself.
        let want_cap = (-2.0f64).exp(); // distance 2 past the endpoint
        assert!((map.value(0, 22, 10) - want_cap).abs() < 1e-15);
    }

    #[test]
    fn edge_with_coincident_vertices_behaves_as_point() {
        let scheme = mini_scheme(2, vec![EdgeDef::open("Degenerate", vec![0, 1])]);
        let truth = PointSet::heatmap(vec![[12.0, 12.0], [12.0, 12.0]]).unwrap();
        let geom = HeatmapGeometry { edge_width: 1.5, ..small_geom() };
        let edge = edge_heatmap(&scheme, &truth, &geom).unwrap();
        // Compare against a point Gaussian with σ = edge width.
        let point_scheme = mini_scheme(2, vec![]);
        let point = point_heatmap(
            &point_scheme,
            &truth,
            &HeatmapGeometry { sigma_point: 1.5, ..geom },
        )
        .unwrap();
        for y in 0..geom.height {
            for x in 0..geom.width {
                assert!((edge.value(0, x, y) - point.value(0, x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_edge_includes_wrap_segment() {
        let scheme = mini_scheme(3, vec![EdgeDef::closed("Triangle", vec![0, 1, 2])]);
        let truth =
            PointSet::heatmap(vec![[10.0, 10.0], [20.0, 10.0], [10.0, 20.0]]).unwrap();
        let map = edge_heatmap(&scheme, &truth, &small_geom()).unwrap();
        // (10, 15) lies on the closing segment from vertex 2 back to vertex 0.
        assert_eq!(map.value(0, 10, 15), 1.0);
    }

    #[test]
    fn e2p_aggregation_hand_example() {
        let scheme = mini_scheme(
            3,
            vec![EdgeDef::open("A", vec![0, 1]), EdgeDef::open("B", vec![1, 2])],
        );
        let geom = HeatmapGeometry { width: 4, height: 3, ..HeatmapGeometry::default() };
        let edge = Heatmap::from_data(
            HeatmapKind::Edge,
            geom,
            2,
            [vec![0.5; 12], vec![0.2; 12]].concat(),
        )
        .unwrap();
        let out = apply_e2p(&edge, &scheme.e2p_matrix()).unwrap();
        assert_eq!(out.kind(), HeatmapKind::EdgePerLandmark);
        assert_eq!(out.channels(), 3);
        assert!(out.channel(0).iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(out.channel(1).iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(out.channel(2).iter().all(|&v| (v - 0.2).abs() < 1e-15));
        // No clamping: landmark 1 exceeds the individual channel values.
        let wrong = Heatmap::filled(HeatmapKind::Edge, geom, 3, 0.0).unwrap();
        assert!(apply_e2p(&wrong, &scheme.e2p_matrix()).is_err());
    }

    #[test]
    fn fuse_is_elementwise_product() {
        let geom = HeatmapGeometry { width: 4, height: 3, ..HeatmapGeometry::default() };
        let a = Heatmap::filled(HeatmapKind::Point, geom, 2, 0.5).unwrap();
        let b = Heatmap::filled(HeatmapKind::EdgePerLandmark, geom, 2, 0.25).unwrap();
        let f = fuse(&a, &b).unwrap();
        assert_eq!(f.kind(), HeatmapKind::Fused);
        assert!(f.data().iter().all(|&v| (v - 0.125).abs() < 1e-15));
        let c = Heatmap::filled(HeatmapKind::EdgePerLandmark, geom, 3, 0.25).unwrap();
        assert!(fuse(&a, &c).is_err());
    }

    #[test]
    fn soft_argmax_single_pixel() {
        let geom = HeatmapGeometry { width: 32, height: 32, ..HeatmapGeometry::default() };
        let mut data = vec![0.0; 32 * 32];
        data[20 * 32 + 10] = 1.0;
        let map = Heatmap::from_data(HeatmapKind::Fused, geom, 1, data).unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geom, 1, 1.0).unwrap();
        let d = soft_argmax(&map, &mask).unwrap();
        let p = d.points.get(0);
        assert!((p[0] - 10.0).abs() < 1e-6);
        assert!((p[1] - 20.0).abs() < 1e-6);
        assert!(!d.degenerate[0]);
        assert!((d.masses[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn soft_argmax_two_equal_pixels() {
        let geom = HeatmapGeometry { width: 8, height: 8, ..HeatmapGeometry::default() };
        let mut data = vec![0.0; 64];
        data[0] = 1.0; // (0, 0)
        data[2] = 1.0; // (2, 0)
        let map = Heatmap::from_data(HeatmapKind::Fused, geom, 1, data).unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geom, 1, 1.0).unwrap();
        let p = soft_argmax(&map, &mask).unwrap().points.get(0);
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!(p[1].abs() < 1e-6);
    }

    #[test]
    fn soft_argmax_uniform_map_hits_grid_center() {
        let geom = HeatmapGeometry::default();
        let map = Heatmap::filled(HeatmapKind::Fused, geom, 1, 0.37).unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geom, 1, 1.0).unwrap();
        let p = soft_argmax(&map, &mask).unwrap().points.get(0);
        assert!((p[0] - 31.5).abs() < 1e-6);
        assert!((p[1] - 31.5).abs() < 1e-6);
    }

    #[test]
    fn soft_argmax_scale_invariance() {
        let geom = HeatmapGeometry { width: 16, height: 16, ..HeatmapGeometry::default() };
        let data: Vec<f64> = (0..256).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let map = Heatmap::from_data(HeatmapKind::Fused, geom, 1, data.clone()).unwrap();
        let scaled = Heatmap::from_data(
            HeatmapKind::Fused,
            geom,
            1,
            data.iter().map(|v| v * 3.7).collect(),
        )
        .unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geom, 1, 1.0).unwrap();
        let a = soft_argmax(&map, &mask).unwrap().points.get(0);
        let b = soft_argmax(&scaled, &mask).unwrap().points.get(0);
        assert!((a[0] - b[0]).abs() < 1e-6);
        assert!((a[1] - b[1]).abs() < 1e-6);
    }

    #[test]
    fn soft_argmax_stays_inside_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let geom = HeatmapGeometry { width: 9, height: 7, ..HeatmapGeometry::default() };
        for _ in 0..50 {
            let data: Vec<f64> = (0..63).map(|_| rng.random_range(0.0..1.0)).collect();
            let mask_data: Vec<f64> = (0..63).map(|_| rng.random_range(0.0..1.0)).collect();
            let map = Heatmap::from_data(HeatmapKind::Fused, geom, 1, data).unwrap();
            let mask = Heatmap::from_data(HeatmapKind::Fused, geom, 1, mask_data).unwrap();
            let p = soft_argmax(&map, &mask).unwrap().points.get(0);
            assert!((0.0..=8.0).contains(&p[0]));
            assert!((0.0..=6.0).contains(&p[1]));
        }
    }

    #[test]
    fn soft_argmax_zero_mass_is_degenerate() {
        let geom = HeatmapGeometry { width: 8, height: 6, ..HeatmapGeometry::default() };
        let map = Heatmap::filled(HeatmapKind::Fused, geom, 1, 1.0).unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geom, 1, 0.0).unwrap();
        let d = soft_argmax(&map, &mask).unwrap();
        assert!(d.degenerate[0]);
        assert_eq!(d.points.get(0), [3.5, 2.5]);
        // The Jacobian of a pinned channel is zero.
        let (jx, jy) = soft_argmax_jacobian(&map, &mask, 0).unwrap();
        assert!(jx.iter().chain(jy.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn soft_argmax_rejects_negative_values() {
        let geom = HeatmapGeometry { width: 4, height: 4, ..HeatmapGeometry::default() };
        let mut data = vec![0.5; 16];
        data[3] = -0.25;
        let map = Heatmap::from_data(HeatmapKind::Fused, geom, 1, data).unwrap();
        let mask = Heatmap::filled(HeatmapKind::Fused, geom, 1, 1.0).unwrap();
        assert!(matches!(soft_argmax(&map, &mask), Err(Error::InvalidInput { .. })));
    }

    #[test]
    fn backward_matches_jacobian_contraction() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let geom = HeatmapGeometry { width: 9, height: 7, ..HeatmapGeometry::default() };
        let n = 2 * 63;
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mask_data: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let map = Heatmap::from_data(HeatmapKind::Fused, geom, 2, data).unwrap();
        let mask = Heatmap::from_data(HeatmapKind::Fused, geom, 2, mask_data).unwrap();
        let upstream = [[0.3, -0.7], [1.1, 0.2]];
        let grad = soft_argmax_backward(&map, &mask, &upstream).unwrap();
        for c in 0..2 {
            let (jx, jy) = soft_argmax_jacobian(&map, &mask, c).unwrap();
            for i in 0..63 {
                let want = upstream[c][0] * jx[i] + upstream[c][1] * jy[i];
                assert!((grad[c * 63 + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_stack_shapes_for_builtin_scheme() {
        let scheme = builtin_300w();
        let truth = crate::fitlab::canonical_face_template();
        let geom = HeatmapGeometry::default();
        let point = point_heatmap(&scheme, &truth, &geom).unwrap();
        let edge = edge_heatmap(&scheme, &truth, &geom).unwrap();
        assert_eq!(point.channels(), 68);
        assert_eq!(edge.channels(), 13);
        let per_landmark = apply_e2p(&edge, &scheme.e2p_matrix()).unwrap();
        assert_eq!(per_landmark.channels(), 68);
        let fused = fuse(&point, &per_landmark).unwrap();
        assert_eq!(fused.channels(), 68);
        // Every landmark of the template sits inside the grid, so every
        // point channel peaks at exactly 1 and the fused map keeps mass.
        let mask_ones = Heatmap::filled(HeatmapKind::Fused, geom, 68, 1.0).unwrap();
        let decoded = soft_argmax(&fused, &mask_ones).unwrap();
        for c in 0..68 {
            assert!(!decoded.degenerate[c]);
            assert!(decoded.masses[c] > 0.1);
            // The fused map should decode near the true landmark.
            let p = decoded.points.get(c);
            let t = truth.get(c);
            let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt();
            assert!(d < 1.5, "channel {c} decoded {p:?}, truth {t:?}");
        }
    }
}
