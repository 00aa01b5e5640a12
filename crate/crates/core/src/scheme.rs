//! Landmark schemes: point sets, edge topology, and normalization.
//!
//! A [`LandmarkScheme`] names the landmarks of a shape model and groups them
//! into *edges* — ordered polylines such as an eyelid margin or the jaw
//! line. Edges drive everything downstream: direction frames come from a
//! landmark's neighbors along its edge, edge heatmaps rasterize the
//! polylines, and per-edge metrics aggregate over their vertex sets.
//!
//! Edges as authored may be fragments of a longer curve (an eye is usually
//! written as a superior and an inferior margin that share their corner
//! vertices). At construction the scheme reconstructs the maximal curves by
//! joining open edges end to end; chains whose two ends meet become closed
//! loops. Neighbor lookup — the basis for direction frames — then works on
//! the reconstructed curves, so an eye corner sees its neighbors across the
//! margin boundary instead of being treated as a chain end.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Coordinate space a [`PointSet`] lives in.
///
/// Landmarks are annotated in image pixels; heatmaps are rendered on a
/// coarser grid (`stride` image pixels per heatmap pixel). Keeping the unit
/// on the point set lets operations reject mixed-unit inputs instead of
/// silently producing off-by-stride results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordUnit {
    /// Original image resolution.
    ImagePixels,
    /// Heatmap grid resolution (image pixels divided by the stride).
    HeatmapPixels,
}

impl fmt::Display for CoordUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoordUnit::ImagePixels => write!(f, "image pixels"),
            CoordUnit::HeatmapPixels => write!(f, "heatmap pixels"),
        }
    }
}

/// An ordered list of 2-D points tagged with its coordinate unit.
///
/// All coordinates are finite; constructors reject NaN and infinities so the
/// numeric kernels never have to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Vec<[f64; 2]>,
    unit: CoordUnit,
}

impl PointSet {
    /// Builds a point set, rejecting non-finite coordinates.
    pub fn new(coords: Vec<[f64; 2]>, unit: CoordUnit) -> Result<Self> {
        for p in &coords {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite { context: "point set coordinates" });
            }
        }
        Ok(Self { coords, unit })
    }

    /// Builds a point set in image-pixel units.
    pub fn image(coords: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(coords, CoordUnit::ImagePixels)
    }

    /// Builds a point set in heatmap-pixel units.
    pub fn heatmap(coords: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(coords, CoordUnit::HeatmapPixels)
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    /// True when the set holds no points.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// The coordinate unit this set is expressed in.
    pub fn unit(&self) -> CoordUnit {
        self.unit
    }

    /// All coordinates as `[x, y]` pairs.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Coordinate of point `i`.
    pub fn get(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    /// Converts image-pixel coordinates to heatmap pixels by dividing by
    /// `stride`. A set already in heatmap pixels is returned unchanged.
    pub fn to_heatmap_units(&self, stride: f64) -> Result<Self> {
        if stride <= 0.0 || !stride.is_finite() {
            return Err(Error::InvalidConfig { reason: "stride must be positive and finite" });
        }
        match self.unit {
            CoordUnit::HeatmapPixels => Ok(self.clone()),
            CoordUnit::ImagePixels => {
                let coords = self.coords.iter().map(|p| [p[0] / stride, p[1] / stride]).collect();
                Self::new(coords, CoordUnit::HeatmapPixels)
            }
        }
    }

    /// Converts heatmap-pixel coordinates back to image pixels by
    /// multiplying by `stride`. A set already in image pixels is returned
    /// unchanged.
    pub fn to_image_units(&self, stride: f64) -> Result<Self> {
        if stride <= 0.0 || !stride.is_finite() {
            return Err(Error::InvalidConfig { reason: "stride must be positive and finite" });
        }
        match self.unit {
            CoordUnit::ImagePixels => Ok(self.clone()),
            CoordUnit::HeatmapPixels => {
                let coords = self.coords.iter().map(|p| [p[0] * stride, p[1] * stride]).collect();
                Self::new(coords, CoordUnit::ImagePixels)
            }
        }
    }

    /// Errors unless `self` and `other` have equal length and unit.
    pub(crate) fn check_compatible(&self, other: &PointSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::PointCount { expected: self.len(), got: other.len() });
        }
        if self.unit != other.unit {
            return Err(Error::UnitMismatch { expected: self.unit, got: other.unit });
        }
        Ok(())
    }

    /// Errors unless the set has exactly `n` points.
    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::PointCount { expected: n, got: self.len() });
        }
        Ok(())
    }
}

/// One edge of a scheme: a named, ordered polyline over landmark indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeDef {
    /// Human-readable name, used in per-edge reports.
    pub name: String,
    /// Landmark indices in traversal order.
    pub vertices: Vec<usize>,
    /// Whether the polyline closes back onto its first vertex. A closed
    /// edge does *not* repeat the first vertex at the end; the closing
    /// segment is implied.
    pub closed: bool,
}

impl EdgeDef {
    /// Convenience constructor for an open polyline.
    pub fn open(name: &str, vertices: Vec<usize>) -> Self {
        Self { name: name.to_owned(), vertices, closed: false }
    }

    /// Convenience constructor for a closed polyline.
    pub fn closed(name: &str, vertices: Vec<usize>) -> Self {
        Self { name: name.to_owned(), vertices, closed: true }
    }
}

/// How to compute the normalization distance for error metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizationSpec {
    /// Outer eye corner indices; the normalization distance is the distance
    /// between these two landmarks.
    pub inter_ocular: (usize, usize),
    /// Two landmark groups (typically the six points of each eye); the
    /// normalization distance is the distance between the group centroids.
    pub inter_pupil: (Vec<usize>, Vec<usize>),
}

/// Validation failure for a [`LandmarkScheme`].
#[derive(Debug, Clone, PartialEq, Eq)]
#[non_exhaustive]
pub enum SchemeError {
    /// An edge references a landmark index outside `0..n_points`.
    VertexOutOfRange { edge: String, vertex: usize, n_points: usize },
    /// An edge has fewer than two vertices.
    EdgeTooShort { edge: String, n_vertices: usize },
    /// An edge lists the same vertex twice in a row.
    RepeatedVertex { edge: String, vertex: usize },
    /// A closed edge repeats its first vertex at the end (the closing
    /// segment must stay implied).
    ClosedEdgeRepeatsEndpoint { edge: String },
    /// The normalization spec references an out-of-range landmark.
    NormIndexOutOfRange { vertex: usize, n_points: usize },
    /// An inter-pupil group is empty.
    EmptyPupilGroup,
    /// The two inter-pupil groups share a landmark.
    OverlappingPupilGroups { vertex: usize },
}

impl fmt::Display for SchemeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeError::VertexOutOfRange { edge, vertex, n_points } => write!(
                f,
                "edge \"{edge}\" references vertex {vertex}, but the scheme has {n_points} points"
            ),
            SchemeError::EdgeTooShort { edge, n_vertices } => {
                write!(f, "edge \"{edge}\" has {n_vertices} vertices; at least 2 are required")
            }
            SchemeError::RepeatedVertex { edge, vertex } => {
                write!(f, "edge \"{edge}\" repeats vertex {vertex} consecutively")
            }
            SchemeError::ClosedEdgeRepeatsEndpoint { edge } => write!(
                f,
                "closed edge \"{edge}\" repeats its first vertex; the closing segment is implied"
            ),
            SchemeError::NormIndexOutOfRange { vertex, n_points } => write!(
                f,
                "normalization references vertex {vertex}, but the scheme has {n_points} points"
            ),
            SchemeError::EmptyPupilGroup => write!(f, "inter-pupil groups must be non-empty"),
            SchemeError::OverlappingPupilGroups { vertex } => {
                write!(f, "inter-pupil groups both contain vertex {vertex}")
            }
        }
    }
}

impl core::error::Error for SchemeError {}

/// Where a landmark sits on its reconstructed curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbors {
    /// Interior vertex of a chain, or any vertex of a closed loop: both
    /// curve neighbors exist.
    Interior { prev: usize, next: usize },
    /// End of an open chain: only one adjacent vertex. `at_start` is true
    /// for the chain's first vertex, so the traversal direction is known.
    Endpoint { adjacent: usize, at_start: bool },
    /// The landmark is not referenced by any edge.
    Unconnected,
}

/// A maximal curve reconstructed from the authored edges.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Curve {
    vertices: Vec<usize>,
    /// True when the curve closes back onto its first vertex.
    ring: bool,
}

/// Binary landmark-membership matrix: entry `(i, j)` is set when landmark
/// `i` is a vertex of edge `j`. Multiplying an edge-channel heatmap stack by
/// this matrix re-expresses edge evidence per landmark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct E2PMatrix {
    n_points: usize,
    n_edges: usize,
    /// Row-major: `data[i * n_edges + j]`.
    data: Vec<bool>,
}

impl E2PMatrix {
    /// Number of rows (landmarks).
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Number of columns (edges).
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Whether landmark `point` belongs to edge `edge`.
    pub fn get(&self, point: usize, edge: usize) -> bool {
        self.data[point * self.n_edges + edge]
    }

    /// Membership row for one landmark.
    pub fn row(&self, point: usize) -> &[bool] {
        &self.data[point * self.n_edges..(point + 1) * self.n_edges]
    }

    /// Number of edges landmark `point` belongs to.
    pub fn row_sum(&self, point: usize) -> usize {
        self.row(point).iter().filter(|&&b| b).count()
    }
}

/// A complete landmark scheme: size, edge topology, and normalization.
///
/// Construction validates the definition and precomputes the reconstructed
/// curves and the per-landmark neighbor table.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkScheme {
    name: String,
    n_points: usize,
    edges: Vec<EdgeDef>,
    norm: NormalizationSpec,
    curves: Vec<Curve>,
    neighbors: Vec<Neighbors>,
}

impl LandmarkScheme {
    /// Validates a scheme definition and precomputes curve topology.
    pub fn new(
        name: &str,
        n_points: usize,
        edges: Vec<EdgeDef>,
        norm: NormalizationSpec,
    ) -> Result<Self, SchemeError> {
        for e in &edges {
            if e.vertices.len() < 2 {
                return Err(SchemeError::EdgeTooShort {
                    edge: e.name.clone(),
                    n_vertices: e.vertices.len(),
                });
            }
            for &v in &e.vertices {
                if v >= n_points {
                    return Err(SchemeError::VertexOutOfRange {
                        edge: e.name.clone(),
                        vertex: v,
                        n_points,
                    });
                }
            }
            for w in e.vertices.windows(2) {
                if w[0] == w[1] {
                    return Err(SchemeError::RepeatedVertex { edge: e.name.clone(), vertex: w[0] });
                }
            }
            if e.closed && e.vertices.first() == e.vertices.last() {
                return Err(SchemeError::ClosedEdgeRepeatsEndpoint { edge: e.name.clone() });
            }
        }

        let (a, b) = norm.inter_ocular;
        for v in [a, b] {
            if v >= n_points {
                return Err(SchemeError::NormIndexOutOfRange { vertex: v, n_points });
            }
        }
        let (left, right) = (&norm.inter_pupil.0, &norm.inter_pupil.1);
        if left.is_empty() || right.is_empty() {
            return Err(SchemeError::EmptyPupilGroup);
        }
        for &v in left.iter().chain(right.iter()) {
            if v >= n_points {
                return Err(SchemeError::NormIndexOutOfRange { vertex: v, n_points });
            }
        }
        for &v in left {
            if right.contains(&v) {
                return Err(SchemeError::OverlappingPupilGroups { vertex: v });
            }
        }

        let curves = reconstruct_curves(&edges);
        let neighbors = neighbor_table(n_points, &curves);
        Ok(Self { name: name.to_owned(), n_points, edges, norm, curves, neighbors })
    }

    /// Scheme name (e.g. `"300w"`).
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of landmarks.
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// The authored edges, in definition order.
    pub fn edges(&self) -> &[EdgeDef] {
        &self.edges
    }

    /// The normalization specification.
    pub fn norm(&self) -> &NormalizationSpec {
        &self.norm
    }

    /// Curve-topology role of landmark `i`.
    ///
    /// Neighbors come from the reconstructed maximal curves, not the raw
    /// edges: where two open edges join (an eye corner), the landmark is
    /// interior to the joined loop and sees one neighbor from each margin.
    /// A landmark used by several curves keeps the role from the first
    /// curve that grants it the strongest role (interior beats endpoint).
    pub fn neighbors(&self, i: usize) -> Neighbors {
        self.neighbors[i]
    }

    /// Builds the landmark-membership matrix over the *authored* edges (one
    /// column per edge, in definition order).
    pub fn e2p_matrix(&self) -> E2PMatrix {
        let n_edges = self.edges.len();
        let mut data = alloc::vec![false; self.n_points * n_edges];
        for (j, e) in self.edges.iter().enumerate() {
            for &v in &e.vertices {
                data[v * n_edges + j] = true;
            }
        }
        E2PMatrix { n_points: self.n_points, n_edges, data }
    }

    /// Sorted, de-duplicated vertex set of edge `j`.
    pub fn edge_vertex_set(&self, j: usize) -> Vec<usize> {
        let mut v = self.edges[j].vertices.clone();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Joins two open chains if they share an endpoint, preserving traversal
/// order of the first operand where possible.
fn try_join(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (a_first, a_last) = (a[0], *a.last().unwrap());
    let (b_first, b_last) = (b[0], *b.last().unwrap());
    let mut out: Vec<usize>;
    if a_last == b_first {
        out = a.to_vec();
        out.extend_from_slice(&b[1..]);
    } else if a_last == b_last {
        out = a.to_vec();
        out.extend(b[..b.len() - 1].iter().rev().copied());
    } else if a_first == b_last {
        out = b.to_vec();
        out.extend_from_slice(&a[1..]);
    } else if a_first == b_first {
        out = b.iter().rev().copied().collect();
        out.extend_from_slice(&a[1..]);
    } else {
        return None;
    }
    Some(out)
}

/// Merges authored edges into maximal curves. Open chains that share an
/// endpoint are joined end to end; a chain whose two ends meet becomes a
/// ring. Closed edges are rings as authored.
fn reconstruct_curves(edges: &[EdgeDef]) -> Vec<Curve> {
    let mut chains: Vec<Curve> = edges
        .iter()
        .map(|e| normalize_chain(e.vertices.clone(), e.closed))
        .collect();

    'merge: loop {
        for i in 0..chains.len() {
            if chains[i].ring {
                continue;
            }
            for j in i + 1..chains.len() {
                if chains[j].ring {
                    continue;
                }
                if let Some(joined) = try_join(&chains[i].vertices, &chains[j].vertices) {
                    chains[i] = normalize_chain(joined, false);
                    chains.remove(j);
                    continue 'merge;
                }
            }
        }
        break;
    }
    chains
}

/// Turns a vertex list into a `Curve`, detecting self-closure: an open
/// chain whose last vertex equals its first is stored as a ring without the
/// duplicate.
fn normalize_chain(mut vertices: Vec<usize>, closed: bool) -> Curve {
    if closed {
        return Curve { vertices, ring: true };
    }
    if vertices.len() > 2 && vertices.first() == vertices.last() {
        vertices.pop();
        return Curve { vertices, ring: true };
    }
    Curve { vertices, ring: false }
}

/// Ranks a neighbor role for precedence: interior beats endpoint beats
/// unconnected. First assignment wins among equals.
fn role_rank(n: &Neighbors) -> u8 {
    match n {
        Neighbors::Interior { .. } => 2,
        Neighbors::Endpoint { .. } => 1,
        Neighbors::Unconnected => 0,
    }
}

fn neighbor_table(n_points: usize, curves: &[Curve]) -> Vec<Neighbors> {
    let mut table = alloc::vec![Neighbors::Unconnected; n_points];
    for curve in curves {
        let n = curve.vertices.len();
        for (pos, &v) in curve.vertices.iter().enumerate() {
            let role = if curve.ring {
                Neighbors::Interior {
                    prev: curve.vertices[(pos + n - 1) % n],
                    next: curve.vertices[(pos + 1) % n],
                }
            } else if pos == 0 {
                Neighbors::Endpoint { adjacent: curve.vertices[1], at_start: true }
            } else if pos == n - 1 {
                Neighbors::Endpoint { adjacent: curve.vertices[n - 2], at_start: false }
            } else {
                Neighbors::Interior {
                    prev: curve.vertices[pos - 1],
                    next: curve.vertices[pos + 1],
                }
            };
            if role_rank(&role) > role_rank(&table[v]) {
                table[v] = role;
            }
        }
    }
    table
}

/// The standard 68-landmark face scheme with 13 edges.
///
/// Eye and lip margins are authored as separate superior/inferior polylines
/// sharing their corner vertices; curve reconstruction joins each pair into
/// a closed loop, so corner landmarks get interior neighbor frames.
/// Normalization: inter-ocular uses the outer eye corners (36, 45);
/// inter-pupil uses the centroids of the two six-point eye loops.
pub fn builtin_300w() -> LandmarkScheme {
    let range = |a: usize, b: usize| (a..=b).collect::<Vec<_>>();
    let edges = alloc::vec![
        EdgeDef::open("Face Contour", range(0, 16)),
        EdgeDef::open("Right Eyebrow", range(17, 21)),
        EdgeDef::open("Left Eyebrow", range(22, 26)),
        EdgeDef::open("Nose Middle Line", range(27, 30)),
        EdgeDef::open("Nose Bottom Line", range(31, 35)),
        EdgeDef::open("Right Eye Superior Margin", range(36, 39)),
        EdgeDef::open("Right Eye Inferior Margin", alloc::vec![39, 40, 41, 36]),
        EdgeDef::open("Left Eye Superior Margin", range(42, 45)),
        EdgeDef::open("Left Eye Inferior Margin", alloc::vec![45, 46, 47, 42]),
        EdgeDef::open("Outer Lip Superior Margin", range(48, 54)),
        EdgeDef::open("Outer Lip Inferior Margin", alloc::vec![54, 55, 56, 57, 58, 59, 48]),
        EdgeDef::open("Inner Lip Superior Margin", range(60, 64)),
        EdgeDef::open("Inner Lip Inferior Margin", alloc::vec![64, 65, 66, 67, 60]),
    ];
    let norm = NormalizationSpec {
        inter_ocular: (36, 45),
        inter_pupil: (range(36, 41), range(42, 47)),
    };
    LandmarkScheme::new("300w", 68, edges, norm)
        .expect("the builtin scheme is valid by construction")
}
