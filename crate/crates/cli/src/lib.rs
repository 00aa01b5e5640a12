//! Command-line front end for the landmark-geometry toolkit: annotation
//! and prediction ingestion, heatmap export, evaluation reports,
//! bias-scatter export, per-landmark anisotropy estimation, synthetic
//! fitting experiments, and the gradient-check suite.
//!
//! All outputs are deterministic: identical inputs and flags produce
//! byte-identical files (sorted JSON keys, six-significant-digit floats,
//! fixed CSV column order). Exit codes: 0 success, 1 validation or
//! runtime failure, 2 usage error.

pub mod experiment;
pub mod formats;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Deserialize;

use alignlab_core::heatmap::{
    apply_e2p, edge_heatmap, fuse, point_heatmap, Heatmap, HeatmapGeometry, HeatmapKind,
};
use alignlab_core::loss::{AwingConfig, CompositeWeights};
use alignlab_core::metrics::{
    error_scatter, evaluate, normalization_distance, EvalSample, NormKind,
};
use alignlab_core::scheme::{LandmarkScheme, PointSet};

use experiment::{ExperimentConfig, FitPath, COORDINATE_DEFAULTS, HEATMAP_DEFAULTS};
use formats::{load_scheme, PointRecord};

/// Parses `argv` (including the program name) and runs one subcommand.
pub fn run(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// All flags are long-form only, including help and version.
#[derive(Args)]
struct LongHelp {
    /// Print help.
    #[arg(long, action = ArgAction::Help)]
    help: Option<bool>,
}

#[derive(Parser)]
#[command(
    name = "alignlab",
    version,
    about = "Landmark-geometry toolkit: heatmaps, directional metrics, and fitting experiments",
    disable_help_flag = true,
    disable_version_flag = true
)]
struct Cli {
    #[command(flatten)]
    help: LongHelp,
    /// Print version.
    #[arg(long, action = ArgAction::Version)]
    version: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect landmark schemes.
    #[command(disable_help_flag = true)]
    Scheme {
        #[command(flatten)]
        help: LongHelp,
        #[command(subcommand)]
        action: SchemeAction,
    },
    /// Render heatmaps.
    #[command(disable_help_flag = true)]
    Heatmap {
        #[command(flatten)]
        help: LongHelp,
        #[command(subcommand)]
        action: HeatmapAction,
    },
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
    /// Export the signed per-landmark error scatter.
    BiasReport(BiasReportArgs),
    /// Estimate per-landmark anisotropy ratios from an error scatter.
    EstimateLambda(EstimateLambdaArgs),
    /// Run a synthetic fitting experiment.
    Fit(FitArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand)]
enum SchemeAction {
    /// Print a scheme as canonical JSON.
    Show(SchemeShowArgs),
}

#[derive(Subcommand)]
enum HeatmapAction {
    /// Generate heatmaps from an annotation file.
    Gen(HeatmapGenArgs),
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct SchemeShowArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Built-in scheme name ("300w") or path to a scheme JSON file.
    #[arg(long, default_value = "300w")]
    scheme: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct HeatmapGenArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Built-in scheme name ("300w") or path to a scheme JSON file.
    #[arg(long, default_value = "300w")]
    scheme: String,
    /// Annotation .pts file in image-pixel coordinates.
    #[arg(long)]
    pts: PathBuf,
    /// Channel set: "point", "edge", "edge_per_landmark", or "fused".
    #[arg(long, default_value = "point")]
    kind: String,
    /// Output path for the raw float32 dump; a "<out>.json" sidecar
    /// describing the shape is written alongside.
    #[arg(long)]
    out: PathBuf,
    /// Optional PGM visualization prefix (writes one "<prefix>-NN.pgm"
    /// per channel).
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Gaussian std-dev of point channels, heatmap pixels [default: 1.5].
    #[arg(long)]
    sigma: Option<f64>,
    /// Falloff width of edge channels, heatmap pixels [default: 1.0].
    #[arg(long)]
    edge_width: Option<f64>,
    /// Grid width in heatmap pixels [default: 64].
    #[arg(long)]
    width: Option<usize>,
    /// Grid height in heatmap pixels [default: 64].
    #[arg(long)]
    height: Option<usize>,
    /// Image pixels per heatmap pixel [default: 4].
    #[arg(long)]
    stride: Option<f64>,
    /// JSON file of default hyperparameters; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct EvalArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Built-in scheme name ("300w") or path to a scheme JSON file.
    #[arg(long, default_value = "300w")]
    scheme: String,
    /// Ground-truth JSON-lines file ({"id", "points"} per line).
    #[arg(long)]
    gt: PathBuf,
    /// Prediction JSON-lines file; ids must match --gt exactly.
    #[arg(long)]
    pred: PathBuf,
    /// Normalization distance: "interocular" or "interpupil"
    /// [default: interocular].
    #[arg(long)]
    norm: Option<String>,
    /// Comma-separated FR/AUC thresholds [default: 0.05,0.10].
    #[arg(long)]
    thresholds: Option<String>,
    /// JSON report output path.
    #[arg(long)]
    report: PathBuf,
    /// Optional per-edge CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON file of default hyperparameters; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct BiasReportArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Built-in scheme name ("300w") or path to a scheme JSON file.
    #[arg(long, default_value = "300w")]
    scheme: String,
    /// Ground-truth JSON-lines file.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction JSON-lines file; ids must match --gt exactly.
    #[arg(long)]
    pred: PathBuf,
    /// Normalization distance: "interocular" or "interpupil"
    /// [default: interocular]. Affects the per-edge table only; scatter
    /// components are unnormalized.
    #[arg(long)]
    norm: Option<String>,
    /// Scatter CSV output path (landmark_index,sample_id,e_normal,e_tangent).
    #[arg(long)]
    scatter: PathBuf,
    /// Optional per-edge CSV table output path.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// JSON file of default hyperparameters; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct EstimateLambdaArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Scatter CSV produced by bias-report.
    #[arg(long)]
    scatter: PathBuf,
    /// JSON output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct FitArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Optimization path: "coordinate" or "heatmap"
    /// [default: coordinate].
    #[arg(long)]
    path: Option<String>,
    /// Anisotropy ratio under test [default: 2.0].
    #[arg(long)]
    lambda: Option<f64>,
    /// Second ratio fitted on identical data for a paired comparison.
    #[arg(long)]
    baseline_lambda: Option<f64>,
    /// Annotation noise std-dev across the boundary [default: 0.75].
    #[arg(long)]
    sigma_normal: Option<f64>,
    /// Annotation noise std-dev along the boundary [default: 1.5].
    #[arg(long)]
    sigma_tangent: Option<f64>,
    /// Annotations per face [default: 8].
    #[arg(long)]
    annotations: Option<usize>,
    /// Faces per seed [default: 6 coordinate, 2 heatmap].
    #[arg(long)]
    faces: Option<usize>,
    /// Independent trials [default: 20 coordinate, 2 heatmap].
    #[arg(long)]
    seeds: Option<u64>,
    /// Gradient-descent step size [default: 4.0 coordinate, 30.0 heatmap].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Iteration budget [default: 50 coordinate, 200 heatmap].
    #[arg(long)]
    max_iters: Option<usize>,
    /// Early-stop loss-improvement threshold [default: 0, run the budget].
    #[arg(long)]
    tolerance: Option<f64>,
    /// Std-dev of the seeded starting displacement, coordinate path only
    /// [default: 3.0].
    #[arg(long)]
    init_spread: Option<f64>,
    /// Gaussian std-dev of point channels (heatmap path) [default: 1.5].
    #[arg(long)]
    sigma: Option<f64>,
    /// Falloff width of edge channels (heatmap path) [default: 1.0].
    #[arg(long)]
    edge_width: Option<f64>,
    /// Add the adaptive-wing map terms on the heatmap path.
    #[arg(long)]
    awing: bool,
    /// Weight of the edge-map wing term [default: 10.0].
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the point-map wing term [default: 10.0].
    #[arg(long)]
    beta: Option<f64>,
    /// JSON summary output file; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Optional loss-trace CSV output path.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// JSON file of default hyperparameters; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(disable_help_flag = true)]
struct GradcheckArgs {
    #[command(flatten)]
    help: LongHelp,
    /// Seed of the randomized check points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Optional defaults file: any subset of the numeric hyperparameters.
/// Explicit flags always win over these values, which in turn win over
/// the built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    path: Option<String>,
    lambda: Option<f64>,
    baseline_lambda: Option<f64>,
    sigma: Option<f64>,
    edge_width: Option<f64>,
    width: Option<usize>,
    height: Option<usize>,
    stride: Option<f64>,
    norm: Option<String>,
    thresholds: Option<Vec<f64>>,
    alpha: Option<f64>,
    beta: Option<f64>,
    sigma_normal: Option<f64>,
    sigma_tangent: Option<f64>,
    annotations: Option<usize>,
    faces: Option<usize>,
    seeds: Option<u64>,
    learning_rate: Option<f64>,
    max_iters: Option<usize>,
    tolerance: Option<f64>,
    init_spread: Option<f64>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scheme { action: SchemeAction::Show(args), .. } => scheme_show(args),
        Command::Heatmap { action: HeatmapAction::Gen(args), .. } => heatmap_gen(args),
        Command::Eval(args) => eval(args),
        Command::BiasReport(args) => bias_report(args),
        Command::EstimateLambda(args) => estimate_lambda_cmd(args),
        Command::Fit(args) => fit(args),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn scheme_show(args: SchemeShowArgs) -> Result<()> {
    let scheme = load_scheme(&args.scheme)?;
    let text = formats::scheme_to_json(&scheme)?;
    emit(args.out.as_deref(), &text)
}

fn heatmap_gen(args: HeatmapGenArgs) -> Result<()> {
    let defaults = ConfigFile::load(args.config.as_deref())?;
    let geometry = HeatmapGeometry {
        width: args.width.or(defaults.width).unwrap_or(64),
        height: args.height.or(defaults.height).unwrap_or(64),
        stride: args.stride.or(defaults.stride).unwrap_or(4.0),
        sigma_point: args.sigma.or(defaults.sigma).unwrap_or(1.5),
        edge_width: args.edge_width.or(defaults.edge_width).unwrap_or(1.0),
    };
    let scheme = load_scheme(&args.scheme)?;

    let text = fs::read_to_string(&args.pts)
        .with_context(|| format!("reading {}", args.pts.display()))?;
    let points =
        formats::read_pts(&text).with_context(|| format!("in {}", args.pts.display()))?;
    let truth = PointSet::image(points)?.to_heatmap_units(geometry.stride)?;

    let kind = HeatmapKind::parse(&args.kind)
        .with_context(|| format!("unknown heatmap kind \"{}\"", args.kind))?;
    let map = render(kind, &scheme, &truth, &geometry)?;

    formats::write_heatmap_f32(&args.out, &map)?;
    println!("wrote {} ({} channels)", args.out.display(), map.channels());
    if let Some(prefix) = &args.pgm {
        let paths = formats::write_heatmap_pgm(prefix, &map)?;
        println!("wrote {} PGM files under {}", paths.len(), prefix.display());
    }
    Ok(())
}

/// Renders the requested channel set from ground-truth landmarks.
fn render(
    kind: HeatmapKind,
    scheme: &LandmarkScheme,
    truth: &PointSet,
    geometry: &HeatmapGeometry,
) -> Result<Heatmap> {
    Ok(match kind {
        HeatmapKind::Point => point_heatmap(scheme, truth, geometry)?,
        HeatmapKind::Edge => edge_heatmap(scheme, truth, geometry)?,
        HeatmapKind::EdgePerLandmark => {
            let edges = edge_heatmap(scheme, truth, geometry)?;
            apply_e2p(&edges, &scheme.e2p_matrix())?
        }
        HeatmapKind::Fused => {
            let points = point_heatmap(scheme, truth, geometry)?;
            let edges = edge_heatmap(scheme, truth, geometry)?;
            fuse(&points, &apply_e2p(&edges, &scheme.e2p_matrix())?)?
        }
    })
}

fn eval(args: EvalArgs) -> Result<()> {
    let defaults = ConfigFile::load(args.config.as_deref())?;
    let scheme = load_scheme(&args.scheme)?;
    let norm = parse_norm(args.norm.as_deref(), &defaults)?;
    let thresholds = match &args.thresholds {
        Some(list) => parse_thresholds(list)?,
        None => defaults.thresholds.unwrap_or_else(|| vec![0.05, 0.10]),
    };

    let samples = load_joined_samples(&scheme, &args.gt, &args.pred, norm)?;
    let report = evaluate(&scheme, &samples, &thresholds)?;
    formats::write_json(&args.report, &formats::report_json(&report))?;
    println!("wrote {} ({} samples)", args.report.display(), report.n_samples);
    if let Some(path) = &args.csv {
        fs::write(path, formats::edge_rows_csv(&report))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn bias_report(args: BiasReportArgs) -> Result<()> {
    let defaults = ConfigFile::load(args.config.as_deref())?;
    let scheme = load_scheme(&args.scheme)?;
    let norm = parse_norm(args.norm.as_deref(), &defaults)?;

    let samples = load_joined_samples(&scheme, &args.gt, &args.pred, norm)?;
    let scatter = error_scatter(&scheme, &samples)?;
    fs::write(&args.scatter, formats::scatter_csv(&scatter))
        .with_context(|| format!("writing {}", args.scatter.display()))?;
    println!("wrote {} ({} samples)", args.scatter.display(), scatter.sample_ids.len());
    if let Some(path) = &args.edges {
        let report = evaluate(&scheme, &samples, &[])?;
        fs::write(path, formats::edge_rows_csv(&report))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn estimate_lambda_cmd(args: EstimateLambdaArgs) -> Result<()> {
    let text = fs::read_to_string(&args.scatter)
        .with_context(|| format!("reading {}", args.scatter.display()))?;
    let scatter =
        formats::parse_scatter_csv(&text).with_context(|| format!("in {}", args.scatter.display()))?;
    let estimate = alignlab_core::fitlab::estimate_lambda(&scatter)?;
    let text = formats::canonical_json(&formats::lambda_json(&estimate))?;
    emit(args.out.as_deref(), &text)
}

fn fit(args: FitArgs) -> Result<()> {
    let defaults = ConfigFile::load(args.config.as_deref())?;
    let path_name = args
        .path
        .or(defaults.path)
        .unwrap_or_else(|| "coordinate".to_owned());
    let path = FitPath::parse(&path_name)?;
    let d = match path {
        FitPath::Coordinate => COORDINATE_DEFAULTS,
        FitPath::Heatmap => HEATMAP_DEFAULTS,
    };

    let awing = if args.awing {
        let wing = AwingConfig::default();
        let weights = CompositeWeights {
            alpha_edge: args.alpha.or(defaults.alpha).unwrap_or(10.0),
            beta_point: args.beta.or(defaults.beta).unwrap_or(10.0),
        };
        Some((wing, weights))
    } else {
        None
    };

    let cfg = ExperimentConfig {
        path,
        lambda: args.lambda.or(defaults.lambda).unwrap_or(2.0),
        baseline_lambda: args.baseline_lambda.or(defaults.baseline_lambda),
        sigma_normal: args.sigma_normal.or(defaults.sigma_normal).unwrap_or(0.75),
        sigma_tangent: args.sigma_tangent.or(defaults.sigma_tangent).unwrap_or(1.5),
        n_annotations: args.annotations.or(defaults.annotations).unwrap_or(8),
        n_faces: args.faces.or(defaults.faces).unwrap_or(d.n_faces),
        n_seeds: args.seeds.or(defaults.seeds).unwrap_or(d.n_seeds),
        learning_rate: args
            .learning_rate
            .or(defaults.learning_rate)
            .unwrap_or(d.learning_rate),
        max_iterations: args.max_iters.or(defaults.max_iters).unwrap_or(d.max_iterations),
        tolerance: args.tolerance.or(defaults.tolerance).unwrap_or(0.0),
        init_spread: args.init_spread.or(defaults.init_spread).unwrap_or(3.0),
        sigma_point: args.sigma.or(defaults.sigma).unwrap_or(1.5),
        edge_width: args.edge_width.or(defaults.edge_width).unwrap_or(1.0),
        awing,
    };

    let result = experiment::run_experiment(&cfg)?;
    let text = formats::canonical_json(&result.summary)?;
    emit(args.summary.as_deref(), &text)?;
    if let Some(path) = &args.traces {
        fs::write(path, experiment::traces_csv(&result.traces))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let cases = alignlab_core::gradcheck::run_default_suite(args.seed)?;
    let mut failures = 0usize;
    for case in &cases {
        let status = if case.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {:40} max rel err {:.3e} (tolerance {:.0e})",
            case.name, case.max_rel_err, case.tolerance
        );
        failures += usize::from(!case.passed);
    }
    println!("gradient checks: {}/{} passed", cases.len() - failures, cases.len());
    if failures > 0 {
        bail!("{failures} gradient check(s) failed");
    }
    Ok(())
}

/// Writes `text` to the file, or to stdout when no path was given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_norm(flag: Option<&str>, defaults: &ConfigFile) -> Result<NormKind> {
    let name = flag.map(str::to_owned).or_else(|| defaults.norm.clone());
    match name.as_deref() {
        None | Some("interocular") => Ok(NormKind::InterOcular),
        Some("interpupil") => Ok(NormKind::InterPupil),
        Some(other) => bail!("unknown norm \"{other}\" (expected interocular or interpupil)"),
    }
}

fn parse_thresholds(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad threshold \"{}\"", s.trim()))
        })
        .collect()
}

/// Loads both JSON-lines files, verifies the id sets match, and joins
/// them into evaluation samples (ground truth carries the normalization
/// distance).
fn load_joined_samples(
    scheme: &LandmarkScheme,
    gt_path: &Path,
    pred_path: &Path,
    norm: NormKind,
) -> Result<Vec<EvalSample>> {
    let gt = read_records_checked(scheme, gt_path)?;
    let pred = read_records_checked(scheme, pred_path)?;

    let gt_ids: BTreeSet<&str> = gt.iter().map(|r| r.id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = pred.iter().map(|r| r.id.as_str()).collect();
    if gt_ids != pred_ids {
        let only_gt: Vec<&&str> = gt_ids.difference(&pred_ids).collect();
        let only_pred: Vec<&&str> = pred_ids.difference(&gt_ids).collect();
        bail!(
            "prediction ids do not match ground-truth ids \
             (only in {}: {only_gt:?}; only in {}: {only_pred:?})",
            gt_path.display(),
            pred_path.display(),
        );
    }

    let by_id: HashMap<&str, &PointRecord> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    gt.iter()
        .map(|record| {
            let truth = PointSet::image(record.points.clone())?;
            let pred_points = by_id[record.id.as_str()].points.clone();
            let norm_distance = normalization_distance(scheme, &truth, norm)?;
            Ok(EvalSample {
                id: record.id.clone(),
                truth,
                pred: PointSet::image(pred_points)?,
                norm_distance,
            })
        })
        .collect()
}

/// Reads one JSON-lines file and checks every record against the scheme.
fn read_records_checked(scheme: &LandmarkScheme, path: &Path) -> Result<Vec<PointRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = formats::read_point_records(&text)
        .with_context(|| format!("in {}", path.display()))?;
    for record in &records {
        if record.points.len() != scheme.n_points() {
            bail!(
                "{}: record \"{}\" has {} points, scheme \"{}\" expects {}",
                path.display(),
                record.id,
                record.points.len(),
                scheme.name(),
                scheme.n_points(),
            );
        }
    }
    Ok(records)
}
