//! Per-landmark direction frames and normal/tangent error decomposition.
//!
//! Annotation noise on curve landmarks is anisotropic: along the curve the
//! position is ambiguous, across it the position is sharp. To measure and
//! weight errors accordingly, each landmark gets an orthonormal frame
//! `(normal, tangent)` derived from the *ground-truth* positions of its
//! curve neighbors:
//!
//! * **Interior landmark** (including every vertex of a closed loop): the
//!   normal is the normalized second difference of its neighbors,
//!   `N = (prev + next - 2·self) / |...|`, which points toward the concave
//!   side of the curve; the tangent is the normal rotated by the fixed skew
//!   convention `T = (N.y, -N.x)`.
//! * **Chain endpoint**: the tangent is the unit direction of the terminal
//!   segment (in traversal order); the normal is the tangent rotated by the
//!   same skew convention.
//! * **Landmark on no edge**: both the normal and the tangent are the unit
//!   direction of the prediction error itself, so a directional loss on
//!   such a landmark reduces to an ordinary isotropic loss.
//!
//! When the defining vector is shorter than [`DEGENERACY_EPS`] the frame is
//! flagged degenerate rather than zero-normalized. Interior landmarks on
//! locally straight curves fall back to the chord direction for the
//! tangent; if even the chord vanishes the frame stays zero. Degenerate
//! frames make downstream consumers treat the error isotropically.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scheme::{LandmarkScheme, Neighbors, PointSet};

/// Below this magnitude (in the point set's declared units) a defining
/// vector is considered zero and the frame degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;

pub(crate) fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(v: [f64; 2]) -> f64 {
    crate::fmath::sqrt(v[0] * v[0] + v[1] * v[1])
}

pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Applies the fixed skew convention: `perp(v) = (v.y, -v.x)`.
pub(crate) fn perp(v: [f64; 2]) -> [f64; 2] {
    [v[1], -v[0]]
}

/// Orthonormal decomposition basis for one landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkFrame {
    /// Unit normal (zero when `degenerate`).
    pub normal: [f64; 2],
    /// Unit tangent (zero when fully degenerate).
    pub tangent: [f64; 2],
    /// True when the landmark lies on at least one edge.
    pub on_edge: bool,
    /// True when the defining vector was too short to normalize; consumers
    /// treat the error isotropically.
    pub degenerate: bool,
}

/// Direction frames for a whole point set.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionFrame {
    frames: Vec<LandmarkFrame>,
}

impl DirectionFrame {
    /// Wraps externally constructed frames (useful for tests and custom
    /// bases).
    pub fn from_frames(frames: Vec<LandmarkFrame>) -> Self {
        Self { frames }
    }

    /// Number of landmarks covered.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// True when no frames are held.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame of landmark `i`.
    pub fn get(&self, i: usize) -> &LandmarkFrame {
        &self.frames[i]
    }

    /// All frames in landmark order.
    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }
}

/// Computes direction frames for every landmark.
///
/// `truth` supplies the curve geometry (frames must not depend on the
/// prediction for on-edge landmarks, or the loss landscape would shift
/// while fitting); `pred` is only consulted for landmarks on no edge, whose
/// frame is the unit error direction.
pub fn direction_frame(
    scheme: &LandmarkScheme,
    truth: &PointSet,
    pred: &PointSet,
) -> Result<DirectionFrame> {
    truth.check_len(scheme.n_points())?;
    truth.check_compatible(pred)?;

    let t = truth.coords();
    let p = pred.coords();
    let mut frames = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        frames.push(frame_for(scheme.neighbors(i), t, p, i));
    }
    Ok(DirectionFrame::from_frames(frames))
}

fn frame_for(role: Neighbors, t: &[[f64; 2]], p: &[[f64; 2]], i: usize) -> LandmarkFrame {
    match role {
        Neighbors::Interior { prev, next } => {
            let d2 = [
                t[prev][0] + t[next][0] - 2.0 * t[i][0],
                t[prev][1] + t[next][1] - 2.0 * t[i][1],
            ];
            let len = norm(d2);
            if len >= DEGENERACY_EPS {
                let normal = [d2[0] / len, d2[1] / len];
                return LandmarkFrame {
                    normal,
                    tangent: perp(normal),
                    on_edge: true,
                    degenerate: false,
                };
            }
            // Locally straight curve: the second difference vanishes and the
            // concave side is undefined. Fall back to the chord for the
            // tangent and flag the frame.
            let chord = sub(t[next], t[prev]);
            let clen = norm(chord);
            if clen >= DEGENERACY_EPS {
                let tangent = [chord[0] / clen, chord[1] / clen];
                return LandmarkFrame {
                    normal: perp(tangent),
                    tangent,
                    on_edge: true,
                    degenerate: true,
                };
            }
            LandmarkFrame {
                normal: [0.0, 0.0],
                tangent: [0.0, 0.0],
                on_edge: true,
                degenerate: true,
            }
        }
        Neighbors::Endpoint { adjacent, at_start } => {
            let seg = if at_start { sub(t[adjacent], t[i]) } else { sub(t[i], t[adjacent]) };
            let len = norm(seg);
            if len >= DEGENERACY_EPS {
                let tangent = [seg[0] / len, seg[1] / len];
                return LandmarkFrame {
                    normal: perp(tangent),
                    tangent,
                    on_edge: true,
                    degenerate: false,
                };
            }
            LandmarkFrame {
                normal: [0.0, 0.0],
                tangent: [0.0, 0.0],
                on_edge: true,
                degenerate: true,
            }
        }
        Neighbors::Unconnected => {
            let e = sub(p[i], t[i]);
            let len = norm(e);
            if len >= DEGENERACY_EPS {
                let dir = [e[0] / len, e[1] / len];
                return LandmarkFrame { normal: dir, tangent: dir, on_edge: false, degenerate: false };
            }
            LandmarkFrame {
                normal: [0.0, 0.0],
                tangent: [0.0, 0.0],
                on_edge: false,
                degenerate: true,
            }
        }
    }
}

/// Signed error components for one landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkError {
    /// Error component along the normal (signed).
    pub e_normal: f64,
    /// Error component along the tangent (signed).
    pub e_tangent: f64,
    /// Euclidean error magnitude.
    pub e_norm: f64,
}

/// Normal/tangent error decomposition for a whole point set.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    items: Vec<LandmarkError>,
}

impl ErrorDecomposition {
    /// Number of landmarks covered.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// True when no items are held.
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Components of landmark `i`.
    pub fn get(&self, i: usize) -> &LandmarkError {
        &self.items[i]
    }

    /// All components in landmark order.
    pub fn items(&self) -> &[LandmarkError] {
        &self.items
    }
}

/// Projects each prediction error `e = pred - truth` onto its frame.
///
/// For a regular frame the components are `e·N` and `e·T`. For landmarks on
/// no edge (where `N = T` is the unit error direction) both components
/// equal `|e|`. Degenerate frames split the magnitude evenly:
/// `e_normal = e_tangent = |e| / sqrt(2)`, so that squared components still
/// sum to `|e|²`.
pub fn decompose_errors(
    frame: &DirectionFrame,
    truth: &PointSet,
    pred: &PointSet,
) -> Result<ErrorDecomposition> {
    truth.check_compatible(pred)?;
    if frame.len() != truth.len() {
        return Err(Error::PointCount { expected: frame.len(), got: truth.len() });
    }

    let mut items = Vec::with_capacity(truth.len());
    for i in 0..truth.len() {
        let f = frame.get(i);
        let e = sub(pred.get(i), truth.get(i));
        let e_norm = norm(e);
        let (e_normal, e_tangent) = if f.degenerate {
            let c = e_norm * core::f64::consts::FRAC_1_SQRT_2;
            (c, c)
        } else {
            (dot(f.normal, e), dot(f.tangent, e))
        };
        items.push(LandmarkError { e_normal, e_tangent, e_norm });
    }
    Ok(ErrorDecomposition { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{EdgeDef, NormalizationSpec};
    use alloc::vec;

    /// Three collinear-capable landmarks on one open chain.
    fn chain3() -> LandmarkScheme {
        LandmarkScheme::new(
            "chain3",
            3,
            vec![EdgeDef::open("Chain", vec![0, 1, 2])],
            NormalizationSpec { inter_ocular: (0, 2), inter_pupil: (vec![0], vec![2]) },
        )
        .unwrap()
    }

    /// Two landmarks, no edges: both are point landmarks.
    fn free2() -> LandmarkScheme {
        LandmarkScheme::new(
            "free2",
            2,
            vec![],
            NormalizationSpec { inter_ocular: (0, 1), inter_pupil: (vec![0], vec![1]) },
        )
        .unwrap()
    }

    fn assert_vec2_eq(got: [f64; 2], want: [f64; 2], tol: f64) {
        assert!(
            (got[0] - want[0]).abs() <= tol && (got[1] - want[1]).abs() <= tol,
            "got {got:?}, want {want:?}"
        );
    }

    #[test]
    fn symmetric_interior_normal() {
        // prev = (0,0), self = (1,1), next = (2,0): the second difference is
        // (0,-2), so N = (0,-1) and T = perp(N) = (-1,0).
        let scheme = chain3();
        let truth = PointSet::image(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        let pred = truth.clone();
        let f = direction_frame(&scheme, &truth, &pred).unwrap();
        let m = f.get(1);
        assert_vec2_eq(m.normal, [0.0, -1.0], 1e-15);
        assert_vec2_eq(m.tangent, [-1.0, 0.0], 1e-15);
        assert!(m.on_edge && !m.degenerate);
    }

    #[test]
    fn endpoint_uses_terminal_segment() {
        let scheme = chain3();
        let truth = PointSet::image(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &truth).unwrap();

        // Start endpoint: tangent points along traversal, toward vertex 1.
        let start = f.get(0);
        assert_vec2_eq(start.tangent, [1.0, 0.0], 1e-15);
        assert_vec2_eq(start.normal, [0.0, -1.0], 1e-15);
        assert!(start.on_edge && !start.degenerate);

        // End endpoint: tangent continues the traversal direction.
        let end = f.get(2);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert_vec2_eq(end.tangent, [s, s], 1e-12);
        assert_vec2_eq(end.normal, [s, -s], 1e-12);

        // Endpoint frames use the positive-determinant convention.
        for m in [start, end] {
            let det = m.normal[0] * m.tangent[1] - m.normal[1] * m.tangent[0];
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_frame_has_negative_determinant() {
        let scheme = chain3();
        let truth = PointSet::image(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &truth).unwrap();
        let m = f.get(1);
        let det = m.normal[0] * m.tangent[1] - m.normal[1] * m.tangent[0];
        assert!((det + 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_interior_falls_back_to_chord() {
        let scheme = chain3();
        let truth = PointSet::image(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &truth).unwrap();
        let m = f.get(1);
        assert!(m.degenerate && m.on_edge);
        assert_vec2_eq(m.tangent, [1.0, 0.0], 1e-15);
        assert_vec2_eq(m.normal, [0.0, -1.0], 1e-15);
    }

    #[test]
    fn coincident_neighbors_fully_degenerate() {
        let scheme = chain3();
        let truth = PointSet::image(vec![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &truth).unwrap();
        for i in 0..3 {
            let m = f.get(i);
            assert!(m.degenerate);
            assert_vec2_eq(m.normal, [0.0, 0.0], 0.0);
            assert_vec2_eq(m.tangent, [0.0, 0.0], 0.0);
        }
    }

    #[test]
    fn point_landmark_frame_is_error_direction() {
        let scheme = free2();
        let truth = PointSet::image(vec![[0.0, 0.0], [5.0, 5.0]]).unwrap();
        let pred = PointSet::image(vec![[3.0, 4.0], [5.0, 5.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &pred).unwrap();

        let m = f.get(0);
        assert!(!m.on_edge && !m.degenerate);
        assert_vec2_eq(m.normal, [0.6, 0.8], 1e-15);
        assert_vec2_eq(m.tangent, [0.6, 0.8], 1e-15);

        // Zero error: degenerate point frame.
        let z = f.get(1);
        assert!(!z.on_edge && z.degenerate);
    }

    #[test]
    fn decompose_hand_example() {
        // Frame N = (0,1), T = (1,0); error (1,1) splits into (1,1).
        let frame = DirectionFrame::from_frames(vec![LandmarkFrame {
            normal: [0.0, 1.0],
            tangent: [1.0, 0.0],
            on_edge: true,
            degenerate: false,
        }]);
        let truth = PointSet::image(vec![[0.0, 0.0]]).unwrap();
        let pred = PointSet::image(vec![[1.0, 1.0]]).unwrap();
        let d = decompose_errors(&frame, &truth, &pred).unwrap();
        assert_eq!(d.get(0).e_normal, 1.0);
        assert_eq!(d.get(0).e_tangent, 1.0);
        assert!((d.get(0).e_norm - core::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn decompose_zero_error() {
        let scheme = chain3();
        let truth = PointSet::image(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &truth).unwrap();
        let d = decompose_errors(&f, &truth, &truth).unwrap();
        for item in d.items() {
            assert_eq!((item.e_normal, item.e_tangent, item.e_norm), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn decompose_point_landmark_duplicates_magnitude() {
        let scheme = free2();
        let truth = PointSet::image(vec![[0.0, 0.0], [9.0, 9.0]]).unwrap();
        let pred = PointSet::image(vec![[3.0, 4.0], [9.0, 9.0]]).unwrap();
        let f = direction_frame(&scheme, &truth, &pred).unwrap();
        let d = decompose_errors(&f, &truth, &pred).unwrap();
        assert!((d.get(0).e_normal - 5.0).abs() < 1e-15);
        assert!((d.get(0).e_tangent - 5.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_frame_splits_evenly() {
        let frame = DirectionFrame::from_frames(vec![LandmarkFrame {
            normal: [0.0, 0.0],
            tangent: [0.0, 0.0],
            on_edge: true,
            degenerate: true,
        }]);
        let truth = PointSet::image(vec![[0.0, 0.0]]).unwrap();
        let pred = PointSet::image(vec![[3.0, 4.0]]).unwrap();
        let d = decompose_errors(&frame, &truth, &pred).unwrap();
        let c = 5.0 * core::f64::consts::FRAC_1_SQRT_2;
        assert!((d.get(0).e_normal - c).abs() < 1e-15);
        assert!((d.get(0).e_tangent - c).abs() < 1e-15);
        // Squared components still reconstruct the squared magnitude.
        let item = d.get(0);
        let sq = item.e_normal * item.e_normal + item.e_tangent * item.e_tangent;
        assert!((sq - 25.0).abs() < 1e-12);
    }

    #[test]
    fn frames_are_orthonormal_on_random_faces() {
        // Seeded sweep over jittered faces; every non-degenerate edge frame
        // must be orthonormal with determinant ±1, and the decomposition
        // must satisfy the Pythagorean identity.
        use rand::{Rng, SeedableRng};
        let scheme = crate::scheme::builtin_300w();
        let base = crate::fitlab::canonical_face_template();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let jitter = |p: &[f64; 2], rng: &mut rand_chacha::ChaCha8Rng| {
                [p[0] + rng.random_range(-0.3..0.3), p[1] + rng.random_range(-0.3..0.3)]
            };
            let truth = PointSet::heatmap(
                base.coords().iter().map(|p| jitter(p, &mut rng)).collect(),
            )
            .unwrap();
            let pred = PointSet::heatmap(
                truth.coords().iter().map(|p| jitter(p, &mut rng)).collect(),
            )
            .unwrap();
            let f = direction_frame(&scheme, &truth, &pred).unwrap();
            let d = decompose_errors(&f, &truth, &pred).unwrap();
            for i in 0..scheme.n_points() {
                let m = f.get(i);
                if m.degenerate {
                    continue;
                }
                assert!((norm(m.normal) - 1.0).abs() < 1e-12);
                assert!((norm(m.tangent) - 1.0).abs() < 1e-12);
                if m.on_edge {
                    assert!(dot(m.normal, m.tangent).abs() < 1e-12);
                    let det = m.normal[0] * m.tangent[1] - m.normal[1] * m.tangent[0];
                    assert!((det.abs() - 1.0).abs() < 1e-12);
                    let item = d.get(i);
                    let sq = item.e_normal * item.e_normal + item.e_tangent * item.e_tangent;
                    assert!((sq - item.e_norm * item.e_norm).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let scheme = chain3();
        let truth = PointSet::image(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let short = PointSet::image(vec![[0.0, 0.0]]).unwrap();
        assert!(matches!(
            direction_frame(&scheme, &truth, &short),
            Err(Error::PointCount { .. })
        ));
        let other_unit = PointSet::heatmap(truth.coords().to_vec()).unwrap();
        assert!(matches!(
            direction_frame(&scheme, &truth, &other_unit),
            Err(Error::UnitMismatch { .. })
        ));
    }
}
