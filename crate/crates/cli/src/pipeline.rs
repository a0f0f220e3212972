//! End-to-end orchestration: training, per-case segmentation in both
//! partial-volume modes, flow simulation, evaluation and sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use coropve_core::flowsim::{simulate_tree, tree_from_surfaces, FfrDocument, FlowConfig, TreeReport};
use coropve_core::graphcut::{
    prepare_branch, segment_prepared, BranchInputs, LumenSurface, PveMode, SegmentConfig, Segmentation, SurfaceDocument,
};
use coropve_core::io::{write_atomic, Centerline, CenterlineTree, TreeSide};
use coropve_core::likelihood::{build_ray_database, RayDatabase};
use coropve_core::metrics::{
    confusion, delong_test, dice, roc_auc, surface_distances, ConfusionStats, DeLongResult, Direction, MetricsError,
    RocCurve, SurfaceDistance,
};
use coropve_core::phantom::{hu_reduction_curve, PhantomSpec, PhantomTruth};
use coropve_core::pve::{calibrate_radius_model, IntensityProfile, ProfileModel, RadiusModel};

use crate::case::{generate_case, Suite};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::report::{csv_bytes, provenance_line, Plot, Series};

/// Random stream identifiers for [`derive_seed`].
pub const TRAINING_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;

/// Independent per-item seed from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lumen HU, background HU and PSF sigma shared by a set of phantoms.
pub fn imaging_parameters<'a>(specs: impl IntoIterator<Item = &'a PhantomSpec>) -> Result<(f64, f64, f64)> {
    let mut it = specs.into_iter();
    let first = it.next().ok_or_else(|| CliError::data("no phantoms to calibrate from"))?;
    let key = (first.lumen_hu, first.background_hu, first.psf_sigma_mm);
    for s in it {
        if (s.lumen_hu, s.background_hu, s.psf_sigma_mm) != key {
            return Err(CliError::data(
                "training phantoms disagree on lumen_hu, background_hu or psf_sigma_mm; calibrate needs one imaging setup",
            ));
        }
    }
    Ok(key)
}

/// Radius model fitted to the HU reduction of blurred cylinders, with the
/// `(diameter_mm, reduction)` curve it was fitted on.
pub fn calibrate_model(
    diameters: &[f64],
    lumen_hu: f64,
    background_hu: f64,
    psf_sigma_mm: f64,
) -> Result<(RadiusModel, Vec<(f64, f64)>)> {
    if !(psf_sigma_mm.is_finite() && psf_sigma_mm > 0.0) {
        return Err(CliError::data(format!("psf sigma must be > 0, got {psf_sigma_mm}")));
    }
    if !(lumen_hu > background_hu) {
        return Err(CliError::data("lumen_hu must exceed background_hu"));
    }
    let curve = hu_reduction_curve(diameters, lumen_hu, background_hu, psf_sigma_mm);
    let model = calibrate_radius_model(&curve)?;
    Ok((model, curve))
}

/// `pve-model.json`: the radius model plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PveModelDocument {
    #[serde(flatten)]
    pub model: RadiusModel,
    pub tool_version: String,
    pub config: serde_json::Value,
    /// `(diameter_mm, hu_reduction)` calibration points.
    pub calibration_curve: Vec<(f64, f64)>,
}

impl PveModelDocument {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("model serializes");
        out.push(b'\n');
        out
    }
}

/// Load the radius model from a `pve-model.json` (extra keys ignored).
pub fn load_radius_model(path: &Path) -> Result<RadiusModel> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(e.to_string()).context(path.display()))?;
    RadiusModel::from_json_slice(&bytes).map_err(|e| CliError::from(e).context(path.display()))
}

/// Everything learned from the training phantoms.
#[derive(Debug, Clone)]
pub struct Training {
    pub db: RayDatabase,
    pub radius_model: RadiusModel,
    pub calibration_curve: Vec<(f64, f64)>,
}

/// Ray database over the given phantoms with `cfg`'s grid and kernel.
pub fn build_database(cfg: &PipelineConfig, phantoms: &[PhantomTruth]) -> Result<RayDatabase> {
    let mut db = build_ray_database(phantoms, &cfg.grid, Some(cfg.resolved_kernel_lambda()), cfg.k_neighbors)?;
    db.provenance = serde_json::json!({
        "tool_version": coropve_core::VERSION,
        "config": cfg.echo(),
        "n_phantoms": phantoms.len(),
    });
    Ok(db)
}

/// Generate the training phantoms, build the ray database and calibrate the
/// radius model for their imaging setup.
pub fn train(cfg: &PipelineConfig, specs: &[(String, PhantomSpec)]) -> Result<Training> {
    let phantoms = specs
        .par_iter()
        .enumerate()
        .map(|(k, (id, spec))| {
            generate_case(spec, derive_seed(cfg.seed, TRAINING_STREAM, k as u64)).map_err(|e| e.context(id))
        })
        .collect::<Result<Vec<_>>>()?;
    let db = build_database(cfg, &phantoms)?;
    let (lumen, background, psf) = imaging_parameters(specs.iter().map(|(_, s)| s))?;
    let (radius_model, calibration_curve) = calibrate_model(&cfg.calibration_diameters_mm, lumen, background, psf)?;
    log::info!(
        "trained on {} phantoms: {} rays, alpha {:.4} mm, beta {:.4} mm",
        phantoms.len(),
        db.n_rays(),
        radius_model.alpha_mm,
        radius_model.beta_mm
    );
    Ok(Training { db, radius_model, calibration_curve })
}

/// Configuration block embedded in surface files.
pub fn segment_echo(cfg: &PipelineConfig, mode: PveMode, radius_model: &RadiusModel) -> serde_json::Value {
    let mut resolved = cfg.resolved();
    resolved.pve_mode = mode;
    serde_json::json!({ "pipeline": resolved, "radius_model": radius_model })
}

pub fn surface_document(
    surface: &LumenSurface,
    branch: usize,
    cfg: &PipelineConfig,
    mode: PveMode,
    radius_model: &RadiusModel,
) -> SurfaceDocument {
    SurfaceDocument {
        tool_version: coropve_core::VERSION.to_string(),
        config: segment_echo(cfg, mode, radius_model),
        branch,
        surface: surface.clone(),
    }
}

/// Ground-truth surface on the planes of `reference`.
pub fn truth_surface(truth: &PhantomTruth, reference: &LumenSurface) -> LumenSurface {
    let frames: Vec<_> = reference.planes.iter().map(|p| p.frame()).collect();
    LumenSurface::from_radius_fn(
        &frames,
        reference.plane_spacing_mm,
        reference.n_angles,
        reference.radii_mm.clone(),
        |s| truth.radius_at(s),
    )
}

/// Overlap and boundary distances of a predicted surface against a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub dice: f64,
    pub msd_mm: f64,
    pub maxsd_mm: f64,
}

pub fn score_surface(pred: &LumenSurface, truth: &PhantomTruth) -> Result<SegmentationScore> {
    let mask = pred.rasterize(*truth.lumen_mask.geometry());
    let d = dice(&mask, &truth.lumen_mask)?;
    let reference = truth_surface(truth, pred);
    let SurfaceDistance { mean_mm, max_mm } = surface_distances(&pred.contour_points(), &reference.contour_points())?;
    Ok(SegmentationScore { dice: d, msd_mm: mean_mm, maxsd_mm: max_mm })
}

/// Flow through a single-branch tree.
pub fn simulate_branch(surface: &LumenSurface, centerline: &Centerline, flow: &FlowConfig) -> Result<TreeReport> {
    let topology = CenterlineTree::single(centerline.clone(), TreeSide::Left);
    let tree = tree_from_surfaces(std::slice::from_ref(surface), &topology)?;
    Ok(simulate_tree(&tree, flow)?)
}

pub fn ffr_document(cfg: &PipelineConfig, trees: Vec<TreeReport>) -> FfrDocument {
    FfrDocument { tool_version: coropve_core::VERSION.to_string(), config: cfg.echo(), trees }
}

/// Result of one partial-volume mode on one case.
#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub segmentation: Segmentation,
    pub score: SegmentationScore,
    pub flow: TreeReport,
}

impl ModeOutcome {
    pub fn min_diameter_mm(&self) -> f64 {
        self.segmentation.surface.min_effective_diameter()
    }

    pub fn ffr(&self) -> f64 {
        self.flow.min_outlet_ffr
    }
}

/// Paired partial-volume on/off results for one case.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub id: String,
    pub truth: PhantomTruth,
    pub profile: IntensityProfile,
    pub truth_surface: LumenSurface,
    pub truth_flow: TreeReport,
    pub on: ModeOutcome,
    pub off: ModeOutcome,
}

impl CaseOutcome {
    pub fn mode(&self, mode: PveMode) -> &ModeOutcome {
        match mode {
            PveMode::On => &self.on,
            PveMode::Off => &self.off,
        }
    }

    /// Reference call: the flow simulated on the true lumen is significant.
    pub fn significant(&self, threshold: f64) -> bool {
        self.truth_flow.min_outlet_ffr <= threshold
    }
}

fn run_mode(
    inputs: &BranchInputs,
    truth: &PhantomTruth,
    training: &Training,
    mode: PveMode,
    cfg: &PipelineConfig,
    seg_cfg: &SegmentConfig,
) -> Result<ModeOutcome> {
    let segmentation = segment_prepared(inputs, &training.radius_model, mode, seg_cfg)?;
    let score = score_surface(&segmentation.surface, truth)?;
    let flow = simulate_branch(&segmentation.surface, &truth.centerline, &cfg.flow)?;
    Ok(ModeOutcome { segmentation, score, flow })
}

/// Segment a phantom in both modes, simulate flow on both surfaces and on
/// the true lumen, and score against the truth.
pub fn run_case(id: &str, truth: PhantomTruth, training: &Training, cfg: &PipelineConfig) -> Result<CaseOutcome> {
    let seg_cfg = cfg.segment_config();
    let inputs = prepare_branch(&truth.volume, &truth.centerline, &training.db, &seg_cfg)?;
    let on = run_mode(&inputs, &truth, training, PveMode::On, cfg, &seg_cfg)?;
    let off = run_mode(&inputs, &truth, training, PveMode::Off, cfg, &seg_cfg)?;
    let truth_surface = self::truth_surface(&truth, &off.segmentation.surface);
    let truth_flow = simulate_branch(&truth_surface, &truth.centerline, &cfg.flow)?;
    log::info!(
        "{id}: dice on {:.4} off {:.4}, min diameter on {:.3} off {:.3} mm, ffr on {:.3} off {:.3} truth {:.3}",
        on.score.dice,
        off.score.dice,
        on.min_diameter_mm(),
        off.min_diameter_mm(),
        on.ffr(),
        off.ffr(),
        truth_flow.min_outlet_ffr
    );
    Ok(CaseOutcome { id: id.to_string(), profile: inputs.profile, truth, truth_surface, truth_flow, on, off })
}

/// Generate the test phantoms of a suite and run every case.
pub fn run_cases(cfg: &PipelineConfig, suite: &Suite, training: &Training) -> Result<Vec<CaseOutcome>> {
    suite
        .test
        .par_iter()
        .enumerate()
        .map(|(k, (id, spec))| {
            let truth = generate_case(spec, derive_seed(cfg.seed, TEST_STREAM, k as u64)).map_err(|e| e.context(id))?;
            run_case(id, truth, training, cfg).map_err(|e| e.context(id))
        })
        .collect()
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case_id: String,
    pub pve_mode: PveMode,
    pub dice: f64,
    pub msd_mm: f64,
    pub maxsd_mm: f64,
    pub min_diameter_mm: f64,
    pub truth_min_diameter_mm: f64,
    pub pve_planes: usize,
    pub ffr: f64,
    pub truth_ffr: f64,
}

/// One row of the cases table consumed by `eval roc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub score_pve_on: f64,
    pub score_pve_off: f64,
    pub invasive_label: u8,
}

pub fn metrics_rows(outcomes: &[CaseOutcome]) -> Vec<MetricsRow> {
    let mut rows = Vec::with_capacity(2 * outcomes.len());
    for c in outcomes {
        for mode in [PveMode::On, PveMode::Off] {
            let m = c.mode(mode);
            rows.push(MetricsRow {
                case_id: c.id.clone(),
                pve_mode: mode,
                dice: m.score.dice,
                msd_mm: m.score.msd_mm,
                maxsd_mm: m.score.maxsd_mm,
                min_diameter_mm: m.min_diameter_mm(),
                truth_min_diameter_mm: c.truth_surface.min_effective_diameter(),
                pve_planes: m.segmentation.pve_planes(),
                ffr: m.ffr(),
                truth_ffr: c.truth_flow.min_outlet_ffr,
            });
        }
    }
    rows
}

pub fn case_rows(outcomes: &[CaseOutcome], threshold: f64) -> Vec<CaseRow> {
    outcomes
        .iter()
        .map(|c| CaseRow {
            case_id: c.id.clone(),
            score_pve_on: c.on.ffr(),
            score_pve_off: c.off.ffr(),
            invasive_label: u8::from(c.significant(threshold)),
        })
        .collect()
}

/// Diagnostic performance of one score column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub confusion: ConfusionStats,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

/// `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub threshold: f64,
    pub direction: Direction,
    pub n_cases: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub pve_on: ModeStats,
    pub pve_off: ModeStats,
    /// Paired comparison of the on (a) and off (b) AUCs.
    pub delong: Option<DeLongResult>,
    /// Why the comparison is missing, when it is.
    pub delong_note: Option<String>,
}

impl StatsDocument {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("stats serialize");
        out.push(b'\n');
        out
    }
}

/// One row of `roc.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub pve_mode: PveMode,
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

/// Statistics, ROC table and ROC plot for paired scores.
#[derive(Debug, Clone)]
pub struct RocReport {
    pub stats: StatsDocument,
    pub rows: Vec<RocRow>,
    pub plot: Plot,
}

fn optional_roc(scores: &[f64], labels: &[bool]) -> Result<Option<RocCurve>> {
    match roc_auc(scores, labels, Direction::LowerIsPositive) {
        Ok(c) => Ok(Some(c)),
        Err(MetricsError::DegenerateLabels { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Confusion at `threshold`, AUCs and DeLong's test for FFR-like scores
/// (low is positive). Missing classes or a degenerate variance are recorded
/// in the report rather than raised.
pub fn roc_report(rows: &[CaseRow], threshold: f64, echo: serde_json::Value) -> Result<RocReport> {
    let on: Vec<f64> = rows.iter().map(|r| r.score_pve_on).collect();
    let off: Vec<f64> = rows.iter().map(|r| r.score_pve_off).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.invasive_label == 1).collect();
    if on.iter().chain(&off).any(|v| !v.is_finite()) {
        return Err(CliError::data("scores must be finite"));
    }
    let dir = Direction::LowerIsPositive;
    let roc_on = optional_roc(&on, &labels)?;
    let roc_off = optional_roc(&off, &labels)?;
    let (delong, delong_note) = match delong_test(&on, &off, &labels, dir) {
        Ok(d) => (Some(d), None),
        Err(e @ (MetricsError::DegenerateLabels { .. } | MetricsError::DegenerateVariance { .. })) => {
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let n_positive = labels.iter().filter(|&&l| l).count();
    let stats = StatsDocument {
        tool_version: coropve_core::VERSION.to_string(),
        config: echo,
        threshold,
        direction: dir,
        n_cases: rows.len(),
        n_positive,
        n_negative: rows.len() - n_positive,
        pve_on: ModeStats { confusion: confusion(&on, &labels, threshold, dir)?, auc: roc_on.as_ref().map(|c| c.auc) },
        pve_off: ModeStats {
            confusion: confusion(&off, &labels, threshold, dir)?,
            auc: roc_off.as_ref().map(|c| c.auc),
        },
        delong,
        delong_note,
    };
    let mut table = Vec::new();
    let mut series = Vec::new();
    for (mode, curve, color) in [(PveMode::On, &roc_on, "#d62728"), (PveMode::Off, &roc_off, "#1f77b4")] {
        let Some(curve) = curve else { continue };
        table.extend(curve.points.iter().map(|p| RocRow {
            pve_mode: mode,
            threshold: p.threshold,
            fpr: p.fpr,
            tpr: p.tpr,
        }));
        series.push(Series {
            label: format!("PVE {} (AUC {:.3})", mode.as_str(), curve.auc),
            color,
            points: curve.points.iter().map(|p| (p.fpr, p.tpr)).collect(),
            markers: false,
        });
    }
    let plot = Plot {
        title: format!("ROC, FFR <= {threshold}"),
        x_label: "1 - specificity".into(),
        y_label: "sensitivity".into(),
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        series,
        diagonal: true,
    };
    Ok(RocReport { stats, rows: table, plot })
}

/// One row of `profile.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub arc_length_mm: f64,
    pub intensity_hu: f64,
    pub model_hu: f64,
    pub pve_flag: u8,
}

pub fn profile_rows(profile: &IntensityProfile, model: &ProfileModel) -> Vec<ProfileRow> {
    profile
        .arc_length()
        .iter()
        .zip(profile.intensity())
        .zip(&model.pve_mask)
        .map(|((&s, &i), &flag)| ProfileRow {
            arc_length_mm: s,
            intensity_hu: i,
            model_hu: model.eval(s),
            pve_flag: u8::from(flag),
        })
        .collect()
}

pub fn profile_plot(id: &str, rows: &[ProfileRow]) -> Plot {
    let pts = |f: fn(&ProfileRow) -> f64| rows.iter().map(|r| (r.arc_length_mm, f(r))).collect::<Vec<_>>();
    let flagged: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.pve_flag == 1).map(|r| (r.arc_length_mm, r.intensity_hu)).collect();
    Plot {
        title: format!("{id}: centerline intensity"),
        x_label: "arc length (mm)".into(),
        y_label: "HU".into(),
        x_range: Plot::padded_range(rows.iter().map(|r| r.arc_length_mm)),
        y_range: Plot::padded_range(rows.iter().flat_map(|r| [r.intensity_hu, r.model_hu])),
        series: vec![
            Series { label: "intensity".into(), color: "black", points: pts(|r| r.intensity_hu), markers: true },
            Series { label: "robust model".into(), color: "#1f77b4", points: pts(|r| r.model_hu), markers: false },
            Series { label: "partial volume".into(), color: "#d62728", points: flagged, markers: true },
        ],
        diagonal: false,
    }
}

/// Top-level `config.json` of a pipeline output directory.
fn config_document(cfg: &PipelineConfig) -> Vec<u8> {
    let v = serde_json::json!({ "tool_version": coropve_core::VERSION, "config": cfg.echo() });
    let mut out = serde_json::to_vec_pretty(&v).expect("config serializes");
    out.push(b'\n');
    out
}

fn write_case_outputs(dir: &Path, c: &CaseOutcome, cfg: &PipelineConfig, training: &Training) -> Result<()> {
    let echo = cfg.echo();
    let rm = &training.radius_model;
    for mode in [PveMode::On, PveMode::Off] {
        let m = c.mode(mode);
        let tag = format!("pve-{}", mode.as_str());
        surface_document(&m.segmentation.surface, 0, cfg, mode, rm).save(&dir.join(format!("{tag}.surface.json")))?;
        ffr_document(cfg, vec![m.flow.clone()]).save(&dir.join(format!("{tag}.ffr.json")))?;
    }
    let truth_doc = SurfaceDocument {
        tool_version: coropve_core::VERSION.to_string(),
        config: serde_json::json!({ "pipeline": cfg.resolved(), "source": "phantom radius profile" }),
        branch: 0,
        surface: c.truth_surface.clone(),
    };
    truth_doc.save(&dir.join("truth.surface.json"))?;
    ffr_document(cfg, vec![c.truth_flow.clone()]).save(&dir.join("truth.ffr.json"))?;
    if let Some(model) = &c.on.segmentation.profile_model {
        let rows = profile_rows(&c.profile, model);
        write_atomic(&dir.join("profile.csv"), &csv_bytes(&echo, &rows)?)?;
        write_atomic(&dir.join("profile.svg"), profile_plot(&c.id, &rows).to_svg(&echo).as_bytes())?;
    }
    Ok(())
}

/// Aggregate results of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub outcomes: Vec<CaseOutcome>,
    pub training: Training,
    pub roc: RocReport,
}

/// Run the full pipeline on a suite and write every artifact under `out`:
///
/// - `config.json`, `pve-model.json`, `training.raydb`
/// - `<case>/pve-{on,off}.surface.json`, `<case>/pve-{on,off}.ffr.json`,
///   `<case>/truth.surface.json`, `<case>/truth.ffr.json`,
///   `<case>/profile.csv`, `<case>/profile.svg`
/// - `metrics.csv`, `cases.csv`, `stats.json`, `roc.csv`, `roc.svg`
pub fn run_pipeline(cfg: &PipelineConfig, suite: &Suite, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let echo = cfg.echo();
    let training = train(cfg, &suite.training)?;
    let outcomes = run_cases(cfg, suite, &training)?;

    write_atomic(&out.join("config.json"), &config_document(cfg))?;
    let model_doc = PveModelDocument {
        model: training.radius_model,
        tool_version: coropve_core::VERSION.to_string(),
        config: echo.clone(),
        calibration_curve: training.calibration_curve.clone(),
    };
    write_atomic(&out.join("pve-model.json"), &model_doc.to_json())?;
    training.db.save(&out.join("training.raydb"))?;
    outcomes
        .par_iter()
        .map(|c| write_case_outputs(&out.join(&c.id), c, cfg, &training).map_err(|e| e.context(&c.id)))
        .collect::<Result<Vec<()>>>()?;

    write_atomic(&out.join("metrics.csv"), &csv_bytes(&echo, &metrics_rows(&outcomes))?)?;
    let cases = case_rows(&outcomes, cfg.ffr_threshold);
    write_atomic(&out.join("cases.csv"), &csv_bytes(&echo, &cases)?)?;
    let roc = roc_report(&cases, cfg.ffr_threshold, echo.clone())?;
    write_atomic(&out.join("stats.json"), &roc.stats.to_json())?;
    write_atomic(&out.join("roc.csv"), &csv_bytes(&echo, &roc.rows)?)?;
    write_atomic(&out.join("roc.svg"), roc.plot.to_svg(&echo).as_bytes())?;
    Ok(PipelineSummary { outcomes, training, roc })
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Smoothness weight of the graph energy.
    Lambda,
    /// Number of nearest training rays.
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "k" => Ok(SweepParam::K),
            other => Err(format!("sweep parameter must be 'lambda' or 'k', got '{other}'")),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::K => "k",
        }
    }

    /// Copy of `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Lambda => c.graph_lambda = value,
            SweepParam::K => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(CliError::data(format!("k must be a positive integer, got {value}")));
                }
                c.k_neighbors = value as usize;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// One row of `sweep.csv`: means over the test cases in the configured
/// partial-volume mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_dice: f64,
    pub mean_msd_mm: f64,
    pub mean_maxsd_mm: f64,
    pub n_cases: usize,
}

fn sweep_case(
    truth: &PhantomTruth,
    training: &Training,
    configs: &[PipelineConfig],
    param: SweepParam,
) -> Result<Vec<SegmentationScore>> {
    let mut shared: Option<BranchInputs> = None;
    let mut scores = Vec::with_capacity(configs.len());
    for cfg in configs {
        let seg_cfg = cfg.segment_config();
        let fresh;
        let inputs = match param {
            // the data term does not depend on lambda: compute it once
            SweepParam::Lambda => {
                if shared.is_none() {
                    shared = Some(prepare_branch(&truth.volume, &truth.centerline, &training.db, &seg_cfg)?);
                }
                shared.as_ref().expect("just set")
            }
            SweepParam::K => {
                fresh = prepare_branch(&truth.volume, &truth.centerline, &training.db, &seg_cfg)?;
                &fresh
            }
        };
        let seg = segment_prepared(inputs, &training.radius_model, cfg.pve_mode, &seg_cfg)?;
        scores.push(score_surface(&seg.surface, truth)?);
    }
    Ok(scores)
}

/// Mean segmentation quality over the suite's test cases for each value.
pub fn run_sweep(cfg: &PipelineConfig, suite: &Suite, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(CliError::usage("sweep needs at least one value"));
    }
    let configs = values.iter().map(|&v| param.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let training = train(cfg, &suite.training)?;
    let per_case = suite
        .test
        .par_iter()
        .enumerate()
        .map(|(k, (id, spec))| {
            let truth = generate_case(spec, derive_seed(cfg.seed, TEST_STREAM, k as u64)).map_err(|e| e.context(id))?;
            sweep_case(&truth, &training, &configs, param).map_err(|e| e.context(id))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_case.len();
    Ok(values
        .iter()
        .enumerate()
        .map(|(j, &value)| {
            let mean = |f: fn(&SegmentationScore) -> f64| per_case.iter().map(|s| f(&s[j])).sum::<f64>() / n as f64;
            SweepRow {
                value,
                mean_dice: mean(|s| s.dice),
                mean_msd_mm: mean(|s| s.msd_mm),
                mean_maxsd_mm: mean(|s| s.maxsd_mm),
                n_cases: n,
            }
        })
        .collect())
}

/// `sweep.csv`: provenance comment, then one row per value with the first
/// column named after the parameter.
pub fn sweep_csv(param: SweepParam, echo: &serde_json::Value, rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut out = format!("# {}\n", provenance_line(echo)).into_bytes();
    {
        let err = |e: csv::Error| CliError::data(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([param.as_str(), "mean_dice", "mean_msd_mm", "mean_maxsd_mm", "n_cases"]).map_err(err)?;
        for r in rows {
            w.serialize((r.value, r.mean_dice, r.mean_msd_mm, r.mean_maxsd_mm, r.n_cases)).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::data(format!("csv: {e}")))?;
    }
    Ok(out)
}
