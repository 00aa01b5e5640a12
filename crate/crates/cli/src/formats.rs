//! File formats: scheme JSON, `.pts` annotations, JSON-lines point
//! records, float32 heatmap dumps, PGM visualization, and the JSON/CSV
//! report writers.
//!
//! Everything emitted here is deterministic: JSON objects are written with
//! sorted keys, every float is rounded to six significant digits before
//! serialization (then printed in shortest round-trip form), and CSV rows
//! follow a fixed column order. Identical inputs therefore produce
//! byte-identical files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use alignlab_core::fitlab::LambdaEstimate;
use alignlab_core::heatmap::Heatmap;
use alignlab_core::metrics::{ErrorScatter, EvalReport};
use alignlab_core::scheme::{EdgeDef, LandmarkScheme, NormalizationSpec};

/// Rounds to six significant digits (the report precision). Negative zero
/// collapses to plain zero so the printed form is stable.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.5e}").parse().expect("a formatted float always parses")
}

/// Formats one CSV number: six significant digits, shortest decimal form.
fn csv_num(x: f64) -> String {
    format!("{}", sig6(x))
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Splits one CSV line into fields, honoring double-quote escaping.
fn split_csv_line(line: &str) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        match c {
            '"' if field.is_empty() && !quoted => quoted = true,
            '"' if quoted => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    field.push('"');
                } else {
                    quoted = false;
                }
            }
            ',' if !quoted => fields.push(core::mem::take(&mut field)),
            _ => field.push(c),
        }
    }
    if quoted {
        bail!("unterminated quoted field");
    }
    fields.push(field);
    Ok(fields)
}

/// Recursively rounds every float in a JSON tree to six significant
/// digits. Integers are left untouched.
fn round_floats(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                let rounded = sig6(n.as_f64().expect("checked is_f64"));
                *value = serde_json::Value::from(rounded);
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Serializes to canonical JSON: sorted keys, six-significant-digit
/// floats, two-space indentation, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut tree = serde_json::to_value(value).context("serializing to JSON")?;
    round_floats(&mut tree);
    let mut text = serde_json::to_string_pretty(&tree).context("rendering JSON")?;
    text.push('\n');
    Ok(text)
}

/// Writes canonical JSON to a file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = canonical_json(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scheme files
// ---------------------------------------------------------------------------

/// On-disk form of a landmark scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeFile {
    pub name: String,
    pub n_points: usize,
    pub edges: Vec<SchemeFileEdge>,
    pub normalization: SchemeFileNorm,
}

/// One named polyline of a scheme file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeFileEdge {
    pub name: String,
    pub vertices: Vec<usize>,
    pub closed: bool,
}

/// Normalization landmarks of a scheme file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeFileNorm {
    pub inter_ocular: [usize; 2],
    pub inter_pupil: [Vec<usize>; 2],
}

impl SchemeFile {
    /// Captures a validated scheme for serialization.
    pub fn from_scheme(scheme: &LandmarkScheme) -> Self {
        let norm = scheme.norm();
        Self {
            name: scheme.name().to_owned(),
            n_points: scheme.n_points(),
            edges: scheme
                .edges()
                .iter()
                .map(|e| SchemeFileEdge {
                    name: e.name.clone(),
                    vertices: e.vertices.clone(),
                    closed: e.closed,
                })
                .collect(),
            normalization: SchemeFileNorm {
                inter_ocular: [norm.inter_ocular.0, norm.inter_ocular.1],
                inter_pupil: [norm.inter_pupil.0.clone(), norm.inter_pupil.1.clone()],
            },
        }
    }

    /// Validates the file contents into a scheme.
    pub fn into_scheme(self) -> Result<LandmarkScheme> {
        let edges = self
            .edges
            .into_iter()
            .map(|e| EdgeDef { name: e.name, vertices: e.vertices, closed: e.closed })
            .collect();
        let [a, b] = self.normalization.inter_ocular;
        let [left, right] = self.normalization.inter_pupil;
        let norm = NormalizationSpec { inter_ocular: (a, b), inter_pupil: (left, right) };
        LandmarkScheme::new(&self.name, self.n_points, edges, norm)
            .map_err(|e| anyhow!("invalid scheme: {e}"))
    }
}

/// Canonical JSON text of a scheme.
pub fn scheme_to_json(scheme: &LandmarkScheme) -> Result<String> {
    canonical_json(&SchemeFile::from_scheme(scheme))
}

/// Parses scheme JSON text.
pub fn scheme_from_json(text: &str) -> Result<LandmarkScheme> {
    let file: SchemeFile = serde_json::from_str(text).context("parsing scheme JSON")?;
    file.into_scheme()
}

/// Resolves a `--scheme` argument: the built-in name `"300w"`, or a path
/// to a scheme JSON file.
pub fn load_scheme(name_or_path: &str) -> Result<LandmarkScheme> {
    if name_or_path == "300w" {
        return Ok(alignlab_core::scheme::builtin_300w());
    }
    let text = fs::read_to_string(name_or_path)
        .with_context(|| format!("reading scheme file {name_or_path}"))?;
    scheme_from_json(&text).with_context(|| format!("in {name_or_path}"))
}

// ---------------------------------------------------------------------------
// .pts annotations
// ---------------------------------------------------------------------------

/// Parses the de-facto landmark annotation text format:
///
/// ```text
/// version: 1
/// n_points: 68
/// {
/// x y        (one line per landmark)
/// }
/// ```
///
/// CRLF and surrounding whitespace are tolerated; errors carry 1-based
/// line numbers.
pub fn read_pts(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next_content = || lines.by_ref().find(|(_, l)| !l.is_empty());

    let (n, header) = next_content().ok_or_else(|| anyhow!("empty file"))?;
    let version = header
        .strip_prefix("version:")
        .ok_or_else(|| anyhow!("line {n}: expected \"version: 1\", got \"{header}\""))?;
    if version.trim() != "1" {
        bail!("line {n}: unsupported version \"{}\"", version.trim());
    }

    let (n, header) = next_content().ok_or_else(|| anyhow!("missing n_points header"))?;
    let count: usize = header
        .strip_prefix("n_points:")
        .ok_or_else(|| anyhow!("line {n}: expected \"n_points: N\", got \"{header}\""))?
        .trim()
        .parse()
        .with_context(|| format!("line {n}: invalid point count"))?;

    let (n, brace) = next_content().ok_or_else(|| anyhow!("missing opening brace"))?;
    if brace != "{" {
        bail!("line {n}: expected \"{{\", got \"{brace}\"");
    }

    let mut points = Vec::with_capacity(count);
    loop {
        let (n, line) = next_content().ok_or_else(|| anyhow!("missing closing brace"))?;
        if line == "}" {
            if points.len() != count {
                bail!(
                    "line {n}: header promised {count} points but the file lists {}",
                    points.len()
                );
            }
            return Ok(points);
        }
        if points.len() == count {
            bail!("line {n}: more coordinate lines than the n_points header ({count})");
        }
        let mut nums = line.split_whitespace().map(str::parse::<f64>);
        let (x, y) = match (nums.next(), nums.next(), nums.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => (x, y),
            _ => bail!("line {n}: expected \"x y\", got \"{line}\""),
        };
        if !x.is_finite() || !y.is_finite() {
            bail!("line {n}: non-finite coordinate");
        }
        points.push([x, y]);
    }
}

// ---------------------------------------------------------------------------
// JSON-lines point records
// ---------------------------------------------------------------------------

/// One annotated or predicted face: an id and its landmark coordinates in
/// image pixels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PointRecord {
    pub id: String,
    pub points: Vec<[f64; 2]>,
}

/// Parses a JSON-lines stream of [`PointRecord`]s: one object per
/// non-empty line, ids unique, coordinates finite. Errors carry 1-based
/// line numbers; an empty stream is an empty list.
pub fn read_point_records(text: &str) -> Result<Vec<PointRecord>> {
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record: PointRecord = serde_json::from_str(line)
            .with_context(|| format!("line {n}: malformed record"))?;
        if record.points.iter().flatten().any(|v| !v.is_finite()) {
            bail!("line {n}: non-finite coordinate in record \"{}\"", record.id);
        }
        if !seen.insert(record.id.clone()) {
            bail!("line {n}: duplicate id \"{}\"", record.id);
        }
        records.push(record);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Heatmap dumps
// ---------------------------------------------------------------------------

/// Sidecar metadata written next to a float32 heatmap dump.
#[derive(Debug, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub channels: usize,
    pub dtype: String,
    pub edge_width: f64,
    pub height: usize,
    pub kind: String,
    pub layout: String,
    pub sigma_point: f64,
    pub stride: f64,
    pub width: usize,
}

/// Writes a heatmap as raw little-endian float32 (channel-major, rows
/// within a channel) plus a `<path>.json` sidecar describing the shape.
pub fn write_heatmap_f32(path: &Path, map: &Heatmap) -> Result<PathBuf> {
    let mut bytes = Vec::with_capacity(map.data().len() * 4);
    for &v in map.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;

    let g = map.geometry();
    let sidecar = HeatmapSidecar {
        channels: map.channels(),
        dtype: "f32le".to_owned(),
        edge_width: g.edge_width,
        height: map.height(),
        kind: map.kind().as_str().to_owned(),
        layout: "channel_row_major".to_owned(),
        sigma_point: g.sigma_point,
        stride: g.stride,
        width: map.width(),
    };
    let sidecar_path = PathBuf::from(format!("{}.json", path.display()));
    write_json(&sidecar_path, &sidecar)?;
    Ok(sidecar_path)
}

/// Writes one 8-bit binary PGM per channel (`<prefix>-NN.pgm`), each
/// scaled so its own peak maps to 255. All-zero channels stay black.
pub fn write_heatmap_pgm(prefix: &Path, map: &Heatmap) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(map.channels());
    for c in 0..map.channels() {
        let channel = map.channel(c);
        let peak = channel.iter().cloned().fold(0.0, f64::max);
        let mut bytes = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
        bytes.extend(channel.iter().map(|&v| {
            if peak > 0.0 {
                (v / peak * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        let path = PathBuf::from(format!("{}-{c:02}.pgm", prefix.display()));
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

/// JSON form of an evaluation report.
#[derive(Debug, Serialize)]
pub struct ReportJson {
    pub n_samples: usize,
    pub nme: f64,
    pub nme_normal: f64,
    pub nme_tangent: f64,
    pub bias_rate: Option<f64>,
    pub fr: Vec<(f64, f64)>,
    pub auc: Vec<(f64, f64)>,
    pub per_edge: Vec<EdgeRowJson>,
}

/// JSON form of one per-edge report row.
#[derive(Debug, Serialize)]
pub struct EdgeRowJson {
    pub edge: String,
    pub nme: f64,
    pub nme_normal: f64,
    pub nme_tangent: f64,
    pub bias_rate: Option<f64>,
}

/// Converts a report into its serializable mirror.
pub fn report_json(report: &EvalReport) -> ReportJson {
    ReportJson {
        n_samples: report.n_samples,
        nme: report.nme,
        nme_normal: report.nme_normal,
        nme_tangent: report.nme_tangent,
        bias_rate: report.bias_rate,
        fr: report.fr.clone(),
        auc: report.auc.clone(),
        per_edge: report
            .per_edge
            .iter()
            .map(|row| EdgeRowJson {
                edge: row.edge.clone(),
                nme: row.nme,
                nme_normal: row.nme_normal,
                nme_tangent: row.nme_tangent,
                bias_rate: row.bias_rate,
            })
            .collect(),
    }
}

/// Per-edge CSV table: `edge,nme,nme_normal,nme_tangent,bias_rate`, one
/// row per authored edge. An undefined bias rate prints as an empty field.
pub fn edge_rows_csv(report: &EvalReport) -> String {
    let mut out = String::from("edge,nme,nme_normal,nme_tangent,bias_rate\n");
    for row in &report.per_edge {
        let bias = row.bias_rate.map(csv_num).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&row.edge),
            csv_num(row.nme),
            csv_num(row.nme_normal),
            csv_num(row.nme_tangent),
            bias,
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Error scatter
// ---------------------------------------------------------------------------

/// Scatter CSV: `landmark_index,sample_id,e_normal,e_tangent`, grouped by
/// landmark, samples in id order within each group.
pub fn scatter_csv(scatter: &ErrorScatter) -> String {
    let mut out = String::from("landmark_index,sample_id,e_normal,e_tangent\n");
    for (landmark, pairs) in scatter.pairs.iter().enumerate() {
        for (id, &(e_n, e_t)) in scatter.sample_ids.iter().zip(pairs) {
            out.push_str(&format!(
                "{landmark},{},{},{}\n",
                csv_field(id),
                csv_num(e_n),
                csv_num(e_t),
            ));
        }
    }
    out
}

/// Parses a scatter CSV back into per-landmark error pairs. Rows must be
/// grouped by ascending landmark index, with the same samples in the same
/// order inside every group — the shape [`scatter_csv`] writes.
pub fn parse_scatter_csv(text: &str) -> Result<ErrorScatter> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| anyhow!("empty scatter file"))?;
    if header.trim() != "landmark_index,sample_id,e_normal,e_tangent" {
        bail!("line 1: unexpected header \"{}\"", header.trim());
    }

    let mut sample_ids: Vec<String> = Vec::new();
    let mut pairs: Vec<Vec<(f64, f64)>> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line).with_context(|| format!("line {n}"))?;
        let [landmark, id, e_n, e_t] = fields.as_slice() else {
            bail!("line {n}: expected 4 fields, got {}", fields.len());
        };
        let landmark: usize =
            landmark.parse().with_context(|| format!("line {n}: bad landmark index"))?;
        let e_n: f64 = e_n.parse().with_context(|| format!("line {n}: bad e_normal"))?;
        let e_t: f64 = e_t.parse().with_context(|| format!("line {n}: bad e_tangent"))?;

        if landmark == pairs.len() {
            pairs.push(Vec::new());
        } else if landmark + 1 != pairs.len() {
            bail!("line {n}: landmark indices must be grouped in ascending order");
        }
        let group = pairs.last_mut().expect("just ensured non-empty");
        if landmark == 0 {
            sample_ids.push(id.clone());
        } else {
            match sample_ids.get(group.len()) {
                Some(expected) if expected == id => {}
                _ => bail!("line {n}: sample ids do not line up across landmark groups"),
            }
        }
        group.push((e_n, e_t));
    }
    if pairs.is_empty() {
        bail!("scatter file has no data rows");
    }
    if pairs.iter().any(|g| g.len() != sample_ids.len()) {
        bail!("landmark groups differ in sample count");
    }
    Ok(ErrorScatter { sample_ids, pairs })
}

// ---------------------------------------------------------------------------
// λ estimates
// ---------------------------------------------------------------------------

/// JSON form of a per-landmark anisotropy estimate.
#[derive(Debug, Serialize)]
pub struct LambdaJson {
    pub ellipses: Vec<EllipseJson>,
    pub lambdas: Vec<f64>,
}

/// JSON form of one scatter ellipse.
#[derive(Debug, Serialize)]
pub struct EllipseJson {
    pub angle: f64,
    pub degenerate: bool,
    pub long_axis: f64,
    pub short_axis: f64,
}

/// Converts a λ estimate into its serializable mirror.
pub fn lambda_json(estimate: &LambdaEstimate) -> LambdaJson {
    LambdaJson {
        ellipses: estimate
            .ellipses
            .iter()
            .map(|e| EllipseJson {
                angle: e.angle,
                degenerate: e.degenerate,
                long_axis: e.long_axis,
                short_axis: e.short_axis,
            })
            .collect(),
        lambdas: estimate.lambdas.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use alignlab_core::heatmap::{point_heatmap, HeatmapGeometry};
    use alignlab_core::scheme::builtin_300w;

    #[test]
    fn sig6_rounds_to_six_significant_digits() {
        assert_eq!(sig6(2.934567891), 2.93457);
        assert_eq!(sig6(0.000123456789), 0.000123457);
        assert_eq!(sig6(-1234567.89), -1234570.0);
        assert_eq!(sig6(-0.0), 0.0);
        assert_eq!(sig6(0.0), 0.0);
        assert_eq!(sig6(33.51), 33.51);
    }

    #[test]
    fn canonical_json_sorts_keys_and_rounds() {
        #[derive(Serialize)]
        struct Sample {
            zebra: f64,
            apple: u64,
        }
        let text = canonical_json(&Sample { zebra: 0.1234567, apple: 3 }).unwrap();
        assert_eq!(text, "{\n  \"apple\": 3,\n  \"zebra\": 0.123457\n}\n");
    }

    #[test]
    fn scheme_round_trip_is_byte_stable() {
        let scheme = builtin_300w();
        let first = scheme_to_json(&scheme).unwrap();
        let reparsed = scheme_from_json(&first).unwrap();
        let second = scheme_to_json(&reparsed).unwrap();
        assert_eq!(first, second);
        assert_eq!(reparsed.n_points(), 68);
        assert_eq!(reparsed.edges().len(), scheme.edges().len());
    }

    #[test]
    fn scheme_json_rejects_unknown_fields() {
        let text = r#"{"name":"x","n_points":2,"edges":[],"normalization":
            {"inter_ocular":[0,1],"inter_pupil":[[0],[1]]},"extra":1}"#;
        assert!(scheme_from_json(text).unwrap_err().to_string().contains("parsing scheme JSON"));
    }

    #[test]
    fn pts_parses_a_minimal_file() {
        let text = "version: 1\nn_points: 1\n{\n1.5 2.5\n}\n";
        assert_eq!(read_pts(text).unwrap(), vec![[1.5, 2.5]]);
    }

    #[test]
    fn pts_tolerates_crlf_line_endings() {
        let lf = "version: 1\nn_points: 2\n{\n1 2\n3 4\n}\n";
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(read_pts(lf).unwrap(), read_pts(&crlf).unwrap());
    }

    #[test]
    fn pts_reports_count_mismatch_with_line_number() {
        let text = "version: 1\nn_points: 68\n{\n1 2\n}\n";
        let err = read_pts(text).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
        assert!(err.contains("68"), "{err}");
    }

    #[test]
    fn pts_reports_bad_coordinate_lines() {
        let text = "version: 1\nn_points: 1\n{\nox 2.0\n}\n";
        let err = read_pts(text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn point_records_parse_and_reject_duplicates() {
        let text = "{\"id\":\"a\",\"points\":[[1.0,2.0]]}\n{\"id\":\"b\",\"points\":[[3.0,4.0]]}\n";
        let records = read_point_records(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].id, "a");
        assert_eq!(records[1].points, vec![[3.0, 4.0]]);

        assert_eq!(read_point_records("").unwrap(), Vec::new());

        let dup = "{\"id\":\"a\",\"points\":[[1,2]]}\n{\"id\":\"a\",\"points\":[[1,2]]}\n";
        let err = read_point_records(dup).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("duplicate"), "{err}");

        let bad = "{\"id\":\"a\",\"points\":[[1,2]]}\nnot json\n";
        let err = read_point_records(bad).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn heatmap_dump_round_trips_through_f32() {
        let scheme = builtin_300w();
        let geometry = HeatmapGeometry { width: 8, height: 8, ..HeatmapGeometry::default() };
        let truth = alignlab_core::fitlab::canonical_face_template();
        let scaled: Vec<[f64; 2]> =
            truth.coords().iter().map(|p| [p[0] / 8.0, p[1] / 8.0]).collect();
        let truth = alignlab_core::PointSet::heatmap(scaled).unwrap();
        let map = point_heatmap(&scheme, &truth, &geometry).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.f32");
        let sidecar = write_heatmap_f32(&path, &map).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), map.data().len() * 4);
        let first = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
        assert_eq!(first, map.data()[0] as f32);

        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
        assert_eq!(meta["channels"], 68);
        assert_eq!(meta["kind"], "point");
        assert_eq!(meta["width"], 8);
        assert_eq!(meta["dtype"], "f32le");
    }

    #[test]
    fn pgm_export_writes_one_header_per_channel() {
        let scheme = builtin_300w();
        let geometry = HeatmapGeometry { width: 8, height: 6, ..HeatmapGeometry::default() };
        let coords = vec![[3.0, 2.0]; 68];
        let truth = alignlab_core::PointSet::heatmap(coords).unwrap();
        let map = point_heatmap(&scheme, &truth, &geometry).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let paths = write_heatmap_pgm(&dir.path().join("viz"), &map).unwrap();
        assert_eq!(paths.len(), 68);
        let bytes = fs::read(&paths[0]).unwrap();
        assert!(bytes.starts_with(b"P5\n8 6\n255\n"));
        assert_eq!(bytes.len(), 11 + 48);
        // The peak pixel of a max-normalized Gaussian maps to 255.
        assert_eq!(*bytes[11..].iter().max().unwrap(), 255u8);
    }

    #[test]
    fn scatter_csv_round_trips_with_awkward_ids() {
        let scatter = ErrorScatter {
            sample_ids: vec!["plain".into(), "needs,\"quoting\"".into()],
            pairs: vec![
                vec![(0.5, -1.25), (0.0, 2.0)],
                vec![(1.0, 0.25), (-0.5, 0.75)],
            ],
        };
        let text = scatter_csv(&scatter);
        let back = parse_scatter_csv(&text).unwrap();
        assert_eq!(back, scatter);
    }

    #[test]
    fn scatter_parser_rejects_ragged_groups() {
        let text = "landmark_index,sample_id,e_normal,e_tangent\n0,a,1,2\n1,b,1,2\n";
        let err = parse_scatter_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn csv_escaping_survives_embedded_quotes() {
        let line = csv_field("a \"b\", c");
        assert_eq!(line, "\"a \"\"b\"\", c\"");
        let fields = split_csv_line(&format!("{line},1.5")).unwrap();
        assert_eq!(fields, vec!["a \"b\", c".to_owned(), "1.5".to_owned()]);
    }
}
