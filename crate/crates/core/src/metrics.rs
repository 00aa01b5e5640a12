//! Evaluation metrics with directional refinements.
//!
//! All metrics are percentages of a per-sample normalization distance `d`
//! (inter-ocular or inter-pupil, see [`normalization_distance`]):
//!
//! * [`nme`] — normalized mean error, `mean(|eᵢ|) / d · 100`.
//! * [`directional_nme`] — the same with `|eᵢ|` replaced by the absolute
//!   normal (resp. tangent) error component, measuring how much of the
//!   error crosses the curve versus slides along it.
//! * [`failure_rate`] — fraction of samples whose NME exceeds a threshold.
//! * [`auc_ced`] — exact area under the cumulative error distribution up
//!   to a threshold, normalized to `[0, 1]`.
//! * [`bias_rate`] — how much larger the tangent error is than the normal
//!   error, `(NME_t - NME_n) / NME_n · 100`.
//!
//! [`evaluate`] aggregates everything over a sample set — overall, per
//! threshold, and per edge — and [`error_scatter`] exports the signed
//! per-landmark `(e_normal, e_tangent)` pairs that anisotropy estimation
//! consumes. Aggregation always runs in sample-id order, so results do not
//! depend on input order.

use alloc::string::String;
use alloc::vec::Vec;

use crate::direction::{decompose_errors, direction_frame, norm, sub, DirectionFrame};
use crate::error::{Error, Result};
use crate::scheme::{LandmarkScheme, PointSet};

/// Which normalization distance to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Distance between the two outer eye-corner landmarks.
    InterOcular,
    /// Distance between the centroids of the two eye landmark groups.
    InterPupil,
}

/// Computes the normalization distance of one face from its ground truth.
pub fn normalization_distance(
    scheme: &LandmarkScheme,
    truth: &PointSet,
    kind: NormKind,
) -> Result<f64> {
    truth.check_len(scheme.n_points())?;
    let d = match kind {
        NormKind::InterOcular => {
            let (a, b) = scheme.norm().inter_ocular;
            norm(sub(truth.get(a), truth.get(b)))
        }
        NormKind::InterPupil => {
            let centroid = |ids: &[usize]| {
                let mut c = [0.0, 0.0];
                for &i in ids {
                    c[0] += truth.get(i)[0];
                    c[1] += truth.get(i)[1];
                }
                [c[0] / ids.len() as f64, c[1] / ids.len() as f64]
            };
            let (left, right) = (&scheme.norm().inter_pupil.0, &scheme.norm().inter_pupil.1);
            norm(sub(centroid(left), centroid(right)))
        }
    };
    if d <= 0.0 {
        return Err(Error::InvalidInput { reason: "normalization distance is not positive" });
    }
    Ok(d)
}

/// One prediction to score: ground truth, prediction, and the face's
/// normalization distance (same unit as the coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub truth: PointSet,
    pub pred: PointSet,
    pub norm_distance: f64,
}

impl EvalSample {
    fn validate(&self) -> Result<()> {
        self.truth.check_compatible(&self.pred)?;
        if self.truth.is_empty() {
            return Err(Error::InvalidInput { reason: "sample has no landmarks" });
        }
        if !self.norm_distance.is_finite() || self.norm_distance <= 0.0 {
            return Err(Error::InvalidInput { reason: "normalization distance must be > 0" });
        }
        Ok(())
    }
}

/// Normalized mean error of one sample, in percent.
pub fn nme(sample: &EvalSample) -> Result<f64> {
    sample.validate()?;
    let n = sample.truth.len() as f64;
    let mut acc = 0.0;
    for i in 0..sample.truth.len() {
        acc += norm(sub(sample.pred.get(i), sample.truth.get(i)));
    }
    Ok(acc / n / sample.norm_distance * 100.0)
}

/// Normal and tangent NME of one sample, in percent: the mean *absolute*
/// error component along each frame axis, over the normalization distance.
pub fn directional_nme(sample: &EvalSample, frame: &DirectionFrame) -> Result<(f64, f64)> {
    sample.validate()?;
    let decomp = decompose_errors(frame, &sample.truth, &sample.pred)?;
    let n = sample.truth.len() as f64;
    let mut acc_n = 0.0;
    let mut acc_t = 0.0;
    for item in decomp.items() {
        acc_n += item.e_normal.abs();
        acc_t += item.e_tangent.abs();
    }
    let d = sample.norm_distance;
    Ok((acc_n / n / d * 100.0, acc_t / n / d * 100.0))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::InvalidConfig { reason: "threshold must be finite and > 0" });
    }
    Ok(())
}

fn check_nmes(nmes: &[f64]) -> Result<()> {
    if nmes.is_empty() {
        return Err(Error::InvalidInput { reason: "empty NME list" });
    }
    if nmes.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput { reason: "NME values must be finite and >= 0" });
    }
    Ok(())
}

/// Fraction of samples whose NME strictly exceeds `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    check_nmes(nmes)?;
    let fails = nmes.iter().filter(|&&v| v > threshold).count();
    Ok(fails as f64 / nmes.len() as f64)
}

/// Exact area under the cumulative error distribution on `[0, threshold]`,
/// normalized by the threshold. The CED is a step function, so the area
/// has the closed form `Σ max(0, threshold - nmeᵢ) / (n · threshold)`;
/// a sample at NME 0 contributes 1, a sample beyond the threshold
/// contributes 0.
pub fn auc_ced(nmes: &[f64], threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    check_nmes(nmes)?;
    let total: f64 = nmes.iter().map(|&v| (threshold - v).max(0.0)).sum();
    Ok(total / (nmes.len() as f64 * threshold))
}

/// Tangent-over-normal bias in percent:
/// `(nme_tangent - nme_normal) / nme_normal · 100`. Undefined when the
/// normal error is zero.
pub fn bias_rate(nme_normal: f64, nme_tangent: f64) -> Result<f64> {
    if !nme_normal.is_finite() || !nme_tangent.is_finite() || nme_normal < 0.0 || nme_tangent < 0.0
    {
        return Err(Error::InvalidInput { reason: "directional NMEs must be finite and >= 0" });
    }
    if nme_normal == 0.0 {
        return Err(Error::UndefinedBiasRate);
    }
    Ok((nme_tangent - nme_normal) / nme_normal * 100.0)
}

/// Aggregated metrics of one edge (or the whole face).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub edge: String,
    pub nme: f64,
    pub nme_normal: f64,
    pub nme_tangent: f64,
    /// `None` when the normal error is zero for this edge.
    pub bias_rate: Option<f64>,
}

/// Full evaluation over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub nme: f64,
    pub nme_normal: f64,
    pub nme_tangent: f64,
    /// `None` when the overall normal error is zero.
    pub bias_rate: Option<f64>,
    /// `(threshold, failure rate)` in ascending threshold order.
    pub fr: Vec<(f64, f64)>,
    /// `(threshold, AUC)` in ascending threshold order.
    pub auc: Vec<(f64, f64)>,
    /// One row per authored edge, in scheme order.
    pub per_edge: Vec<EdgeRow>,
}

/// Indices of `samples` sorted by id; duplicate ids are rejected because
/// they make joins and ordered reductions ambiguous.
fn sorted_sample_order(samples: &[EvalSample]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
    for w in order.windows(2) {
        if samples[w[0]].id == samples[w[1]].id {
            return Err(Error::InvalidInput { reason: "duplicate sample id" });
        }
    }
    Ok(order)
}

/// Computes every metric over a sample set.
///
/// Per sample: direction frames from its ground truth, error decomposition,
/// NME, and directional NMEs. Aggregates are means over samples, reduced in
/// sample-id order so input order never changes the result. Thresholds are
/// sorted and de-duplicated. Per-edge rows average over each edge's
/// (de-duplicated) vertex set.
pub fn evaluate(
    scheme: &LandmarkScheme,
    samples: &[EvalSample],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput { reason: "no samples to evaluate" });
    }
    let mut thresholds: Vec<f64> = thresholds.to_vec();
    for t in &thresholds {
        check_threshold(*t)?;
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let order = sorted_sample_order(samples)?;
    let n_edges = scheme.edges().len();
    let edge_sets: Vec<Vec<usize>> = (0..n_edges).map(|j| scheme.edge_vertex_set(j)).collect();

    let mut sample_nmes = Vec::with_capacity(samples.len());
    let mut sum_nme = 0.0;
    let mut sum_dn = 0.0;
    let mut sum_dt = 0.0;
    let mut edge_sums = alloc::vec![[0.0f64; 3]; n_edges];

    for &idx in &order {
        let s = &samples[idx];
        s.validate()?;
        s.truth.check_len(scheme.n_points())?;
        let frame = direction_frame(scheme, &s.truth, &s.pred)?;
        let decomp = decompose_errors(&frame, &s.truth, &s.pred)?;

        let d = s.norm_distance;
        let n = s.truth.len() as f64;
        let mut acc = [0.0f64; 3];
        for item in decomp.items() {
            acc[0] += item.e_norm;
            acc[1] += item.e_normal.abs();
            acc[2] += item.e_tangent.abs();
        }
        let sample_nme = acc[0] / n / d * 100.0;
        sample_nmes.push(sample_nme);
        sum_nme += sample_nme;
        sum_dn += acc[1] / n / d * 100.0;
        sum_dt += acc[2] / n / d * 100.0;

        for (j, set) in edge_sets.iter().enumerate() {
            let mut e = [0.0f64; 3];
            for &i in set {
                let item = decomp.get(i);
                e[0] += item.e_norm;
                e[1] += item.e_normal.abs();
                e[2] += item.e_tangent.abs();
            }
            let m = set.len() as f64;
            edge_sums[j][0] += e[0] / m / d * 100.0;
            edge_sums[j][1] += e[1] / m / d * 100.0;
            edge_sums[j][2] += e[2] / m / d * 100.0;
        }
    }

    let n = samples.len() as f64;
    let nme_all = sum_nme / n;
    let dn_all = sum_dn / n;
    let dt_all = sum_dt / n;

    let mut fr = Vec::with_capacity(thresholds.len());
    let mut auc = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        fr.push((t, failure_rate(&sample_nmes, t)?));
        auc.push((t, auc_ced(&sample_nmes, t)?));
    }

    let per_edge = scheme
        .edges()
        .iter()
        .zip(edge_sums.iter())
        .map(|(e, sums)| {
            let (nm, dn, dt) = (sums[0] / n, sums[1] / n, sums[2] / n);
            EdgeRow {
                edge: e.name.clone(),
                nme: nm,
                nme_normal: dn,
                nme_tangent: dt,
                bias_rate: bias_rate(dn, dt).ok(),
            }
        })
        .collect();

    Ok(EvalReport {
        n_samples: samples.len(),
        nme: nme_all,
        nme_normal: dn_all,
        nme_tangent: dt_all,
        bias_rate: bias_rate(dn_all, dt_all).ok(),
        fr,
        auc,
        per_edge,
    })
}

/// Signed per-landmark error components across a sample set, for
/// anisotropy estimation and scatter plots.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorScatter {
    /// Sample ids in the reduction order (sorted).
    pub sample_ids: Vec<String>,
    /// `pairs[landmark][sample]` = signed `(e_normal, e_tangent)`.
    pub pairs: Vec<Vec<(f64, f64)>>,
}

/// Collects the signed `(e_normal, e_tangent)` pair of every landmark of
/// every sample, in sample-id order.
pub fn error_scatter(scheme: &LandmarkScheme, samples: &[EvalSample]) -> Result<ErrorScatter> {
    if samples.is_empty() {
        return Err(Error::InvalidInput { reason: "no samples to evaluate" });
    }
    let order = sorted_sample_order(samples)?;
    let mut sample_ids = Vec::with_capacity(samples.len());
    let mut pairs = alloc::vec![Vec::with_capacity(samples.len()); scheme.n_points()];
    for &idx in &order {
        let s = &samples[idx];
        s.validate()?;
        s.truth.check_len(scheme.n_points())?;
        let frame = direction_frame(scheme, &s.truth, &s.pred)?;
        let decomp = decompose_errors(&frame, &s.truth, &s.pred)?;
        sample_ids.push(s.id.clone());
        for (i, item) in decomp.items().iter().enumerate() {
            pairs[i].push((item.e_normal, item.e_tangent));
        }
    }
    Ok(ErrorScatter { sample_ids, pairs })
}
