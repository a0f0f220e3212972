//! One function per subcommand; `main` only parses arguments and maps
//! errors to exit codes.

use std::path::{Path, PathBuf};

use coropve_core::flowsim::{simulate_tree, tree_from_surfaces};
use coropve_core::graphcut::{segment_branch, PveMode, SurfaceDocument};
use coropve_core::io::{load_volume, write_atomic, CenterlineTree};
use coropve_core::likelihood::RayDatabase;
use coropve_core::phantom::load_spec;

use crate::case::{case_dirs, generate_case, load_case, load_truth_document, write_case, Suite};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{
    build_database, calibrate_model, ffr_document, imaging_parameters, load_radius_model, roc_report, run_pipeline,
    run_sweep, score_surface, surface_document, sweep_csv, CaseRow, PveModelDocument, SweepParam,
};
use crate::report::{csv_bytes, csv_reader};

pub fn phantom_gen(spec: &Path, seed: u64, out: &Path) -> Result<()> {
    let spec = load_spec(spec)?;
    let truth = generate_case(&spec, seed)?;
    write_case(out, &truth, seed)
}

pub fn calibrate(phantom_dir: &Path, psf_sigma: f64, out: &Path, diameters: Option<Vec<f64>>) -> Result<()> {
    let docs = case_dirs(phantom_dir)?.iter().map(|d| load_truth_document(d)).collect::<Result<Vec<_>>>()?;
    let specs: Vec<_> = docs.iter().map(|d| d.spec.clone()).collect();
    let (lumen, background, spec_psf) = imaging_parameters(&specs)?;
    if (spec_psf - psf_sigma).abs() > 1e-9 {
        log::warn!("--psf-sigma {psf_sigma} differs from the phantoms' psf_sigma_mm {spec_psf}; using {psf_sigma}");
    }
    let diameters = diameters.unwrap_or_else(|| PipelineConfig::default().calibration_diameters_mm);
    let (model, curve) = calibrate_model(&diameters, lumen, background, psf_sigma)?;
    let doc = PveModelDocument {
        model,
        tool_version: coropve_core::VERSION.to_string(),
        config: serde_json::json!({
            "psf_sigma_mm": psf_sigma,
            "lumen_hu": lumen,
            "background_hu": background,
            "calibration_diameters_mm": diameters,
        }),
        calibration_curve: curve,
    };
    write_atomic(out, &doc.to_json())?;
    Ok(())
}

pub fn raydb_build(phantom_dir: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let phantoms = case_dirs(phantom_dir)?.iter().map(|d| load_case(d)).collect::<Result<Vec<_>>>()?;
    build_database(&cfg, &phantoms)?.save(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn segment(
    volume: &Path,
    centerline: &Path,
    branch: usize,
    raydb: &Path,
    pve_model: &Path,
    pve: PveMode,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    let vol = load_volume(volume)?;
    let tree = CenterlineTree::load(centerline)?;
    let cl = tree.branches.get(branch).ok_or_else(|| {
        CliError::data(format!(
            "{}: branch {branch} does not exist ({} branches)",
            centerline.display(),
            tree.branches.len()
        ))
    })?;
    let db = RayDatabase::load(raydb)?;
    if !db.matches_radii(&cfg.grid.radii_mm) {
        return Err(CliError::data(format!(
            "{}: ray database radii differ from the configured grid.radii_mm",
            raydb.display()
        )));
    }
    match cfg.kernel_lambda {
        Some(l) if l != db.kernel_lambda => {
            log::warn!(
                "kernel_lambda {l} in the config differs from the database's {}; using the database's",
                db.kernel_lambda
            )
        }
        _ => {}
    }
    cfg.kernel_lambda = Some(db.kernel_lambda);
    let rm = load_radius_model(pve_model)?;
    let seg = segment_branch(&vol, cl, &db, &rm, pve, &cfg.segment_config())?;
    log::info!(
        "{} planes, {} with partial-volume override, minimum effective diameter {:.3} mm",
        seg.surface.planes.len(),
        seg.pve_planes(),
        seg.surface.min_effective_diameter()
    );
    surface_document(&seg.surface, branch, &cfg, pve, &rm).save(out)?;
    Ok(())
}

pub fn flow(surfaces: &Path, topology: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let tree = CenterlineTree::load(topology)?;
    let mut by_branch: Vec<Option<(PathBuf, SurfaceDocument)>> = vec![None; tree.branches.len()];
    let entries = std::fs::read_dir(surfaces).map_err(|e| CliError::data(e.to_string()).context(surfaces.display()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::data(e.to_string()).context(surfaces.display()))?.path();
        if path.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".surface.json")) {
            paths.push(path);
        }
    }
    paths.sort();
    for path in paths {
        let doc = SurfaceDocument::load(&path)?;
        let slot = by_branch.get_mut(doc.branch).ok_or_else(|| {
            CliError::data(format!("{}: branch {} is not in the topology", path.display(), doc.branch))
        })?;
        if let Some((prev, _)) = slot {
            return Err(CliError::data(format!(
                "{} and {} both describe branch {}",
                prev.display(),
                path.display(),
                doc.branch
            )));
        }
        *slot = Some((path, doc));
    }
    let surfaces_by_branch = by_branch
        .into_iter()
        .enumerate()
        .map(|(b, s)| {
            s.map(|(_, d)| d.surface)
                .ok_or_else(|| CliError::data(format!("{}: no surface for branch {b}", surfaces.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let vessel_tree = tree_from_surfaces(&surfaces_by_branch, &tree)?;
    let report = simulate_tree(&vessel_tree, &cfg.flow)?;
    ffr_document(&cfg, vec![report]).save(out)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalSegRow {
    case_id: String,
    dice: f64,
    msd_mm: f64,
    maxsd_mm: f64,
}

pub fn eval_seg(pred: &Path, truth: &Path, out: &Path) -> Result<()> {
    let doc = SurfaceDocument::load(pred)?;
    let phantom = load_case(truth)?;
    let score = score_surface(&doc.surface, &phantom)?;
    let case_id = truth
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| truth.display().to_string());
    let row = EvalSegRow { case_id, dice: score.dice, msd_mm: score.msd_mm, maxsd_mm: score.maxsd_mm };
    write_atomic(out, &csv_bytes(&doc.config, &[row])?)?;
    Ok(())
}

/// Parse a cases table (`case_id, score_pve_on, score_pve_off,
/// invasive_label`); labels are `0`/`1` or `false`/`true`.
pub fn read_case_rows(bytes: &[u8]) -> Result<Vec<CaseRow>> {
    let mut reader = csv_reader(bytes);
    let headers = reader.headers().map_err(|e| CliError::data(format!("csv header: {e}")))?.clone();
    for needed in ["case_id", "score_pve_on", "score_pve_off", "invasive_label"] {
        if !headers.iter().any(|h| h == needed) {
            return Err(CliError::data(format!("missing column {needed}")));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let (ci, on, off, lab) = (col("case_id"), col("score_pve_on"), col("score_pve_off"), col("invasive_label"));
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::data(format!("row {}: {e}", k + 1)))?;
        let field =
            |i: usize, name: &str| rec.get(i).ok_or_else(|| CliError::data(format!("row {}: missing {name}", k + 1)));
        let num = |i: usize, name: &str| -> Result<f64> {
            let s = field(i, name)?;
            let v: f64 =
                s.parse().map_err(|_| CliError::data(format!("row {}: {name} {s:?} is not a number", k + 1)))?;
            if !v.is_finite() {
                return Err(CliError::data(format!("row {}: {name} must be finite", k + 1)));
            }
            Ok(v)
        };
        let label = match field(lab, "invasive_label")? {
            "1" | "true" => 1,
            "0" | "false" => 0,
            other => return Err(CliError::data(format!("row {}: invasive_label {other:?} must be 0 or 1", k + 1))),
        };
        rows.push(CaseRow {
            case_id: field(ci, "case_id")?.to_string(),
            score_pve_on: num(on, "score_pve_on")?,
            score_pve_off: num(off, "score_pve_off")?,
            invasive_label: label,
        });
    }
    if rows.is_empty() {
        return Err(CliError::data("no cases"));
    }
    Ok(rows)
}

pub fn eval_roc(cases: &Path, threshold: f64, out: &Path, plot: Option<&Path>) -> Result<()> {
    if !threshold.is_finite() {
        return Err(CliError::usage("--threshold must be finite"));
    }
    let bytes = std::fs::read(cases).map_err(|e| CliError::data(e.to_string()).context(cases.display()))?;
    let rows = read_case_rows(&bytes).map_err(|e| e.context(cases.display()))?;
    let positives = rows.iter().filter(|r| r.invasive_label == 1).count();
    if positives == 0 || positives == rows.len() {
        return Err(CliError::data(format!(
            "{}: both classes must be present ({positives} of {} cases positive)",
            cases.display(),
            rows.len()
        )));
    }
    let echo = serde_json::json!({ "threshold": threshold, "cases": cases.display().to_string() });
    let report = roc_report(&rows, threshold, echo.clone())?;
    write_atomic(out, &report.stats.to_json())?;
    let roc_csv = out.with_file_name("roc.csv");
    write_atomic(&roc_csv, &csv_bytes(&echo, &report.rows)?)?;
    if let Some(plot) = plot {
        write_atomic(plot, report.plot.to_svg(&echo).as_bytes())?;
    }
    Ok(())
}

pub fn sweep(param: SweepParam, values: &[f64], cases: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let suite = Suite::load(cases)?;
    let rows = run_sweep(&cfg, &suite, param, values)?;
    let echo = serde_json::json!({ "pipeline": cfg.echo(), "param": param });
    write_atomic(out, &sweep_csv(param, &echo, &rows)?)?;
    Ok(())
}

pub fn pipeline_run(config: Option<&Path>, cases: &Path, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let suite = Suite::load(cases)?;
    let summary = run_pipeline(&cfg, &suite, out)?;
    let s = &summary.roc.stats;
    log::info!("{} cases ({} significant); AUC on {:?} off {:?}", s.n_cases, s.n_positive, s.pve_on.auc, s.pve_off.auc);
    Ok(())
}
