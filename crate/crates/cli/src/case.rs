//! On-disk phantom cases and case suites.
//!
//! A phantom case directory holds
//! `truth.json` (spec, seed, file names), `volume.vol.json` (blurred, noisy
//! HU, int16), `ideal.vol.json` (unblurred HU, float32), `mask.vol.json`
//! (true lumen mask) and `centerline.cl.json` (single-branch tree).
//!
//! A case suite directory holds `training/*.json` and `test/*.json`
//! phantom specs; the case id is the file stem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use coropve_core::io::{
    load_label_volume, load_volume, parse_json, save_label_volume, save_volume_with, write_atomic, CenterlineTree,
    Dtype, TreeSide,
};
use coropve_core::phantom::{generate_phantom, load_spec, PhantomSpec, PhantomTruth};

use crate::error::{CliError, Result};

pub const TRUTH_FILE: &str = "truth.json";
pub const VOLUME_FILE: &str = "volume.vol.json";
pub const IDEAL_FILE: &str = "ideal.vol.json";
pub const MASK_FILE: &str = "mask.vol.json";
pub const CENTERLINE_FILE: &str = "centerline.cl.json";

/// `truth.json` of a phantom case directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthDocument {
    pub tool_version: String,
    pub seed: u64,
    pub spec: PhantomSpec,
    pub volume: String,
    pub ideal: String,
    pub mask: String,
    pub centerline: String,
}

/// Round the observed volume to whole HU, as stored on disk, so in-memory
/// and file-based runs see identical intensities.
pub fn quantize(mut truth: PhantomTruth) -> PhantomTruth {
    for v in truth.volume.values_mut() {
        *v = v.round().clamp(i16::MIN as f64, i16::MAX as f64);
    }
    truth
}

/// Generate a phantom and quantize it to the stored precision.
pub fn generate_case(spec: &PhantomSpec, seed: u64) -> Result<PhantomTruth> {
    Ok(quantize(generate_phantom(spec, seed)?))
}

pub fn write_case(dir: &Path, truth: &PhantomTruth, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(e.to_string()).context(dir.display()))?;
    let doc = TruthDocument {
        tool_version: coropve_core::VERSION.to_string(),
        seed,
        spec: truth.spec.clone(),
        volume: VOLUME_FILE.into(),
        ideal: IDEAL_FILE.into(),
        mask: MASK_FILE.into(),
        centerline: CENTERLINE_FILE.into(),
    };
    let provenance = serde_json::json!({
        "tool_version": coropve_core::VERSION,
        "generator": "phantom",
        "seed": seed,
    });
    save_volume_with(&dir.join(VOLUME_FILE), &truth.volume, Dtype::Int16, Some(provenance.clone()))?;
    save_volume_with(&dir.join(IDEAL_FILE), &truth.ideal_volume, Dtype::Float32, Some(provenance.clone()))?;
    save_label_volume(&dir.join(MASK_FILE), &truth.lumen_mask, Some(provenance))?;
    CenterlineTree::single(truth.centerline.clone(), TreeSide::Left).save(&dir.join(CENTERLINE_FILE))?;
    let mut json = serde_json::to_vec_pretty(&doc).expect("truth serializes");
    json.push(b'\n');
    write_atomic(&dir.join(TRUTH_FILE), &json)?;
    Ok(())
}

pub fn load_truth_document(dir: &Path) -> Result<TruthDocument> {
    let path = dir.join(TRUTH_FILE);
    let bytes = std::fs::read(&path).map_err(|e| CliError::data(e.to_string()).context(path.display()))?;
    let doc: TruthDocument = parse_json(&bytes).map_err(|e| CliError::from(e).context(path.display()))?;
    doc.spec.validate().map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(doc)
}

/// Load a phantom case written by [`write_case`].
pub fn load_case(dir: &Path) -> Result<PhantomTruth> {
    let doc = load_truth_document(dir)?;
    let volume = load_volume(&dir.join(&doc.volume))?;
    let ideal_volume = load_volume(&dir.join(&doc.ideal))?;
    let lumen_mask = load_label_volume(&dir.join(&doc.mask))?;
    let tree = CenterlineTree::load(&dir.join(&doc.centerline))?;
    let expected = doc.spec.geometry();
    for (name, g) in
        [(&doc.volume, volume.geometry()), (&doc.ideal, ideal_volume.geometry()), (&doc.mask, lumen_mask.geometry())]
    {
        if *g != expected {
            return Err(
                CliError::data(format!("{name}: geometry does not match the phantom spec")).context(dir.display())
            );
        }
    }
    let centerline = tree.branches[tree.root()].clone();
    Ok(PhantomTruth { spec: doc.spec, volume, ideal_volume, lumen_mask, centerline })
}

/// Phantom case directories directly below `dir` (or `dir` itself if it is
/// one), sorted by name.
pub fn case_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(TRUTH_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = read_dir_sorted(dir)?.into_iter().filter(|p| p.join(TRUTH_FILE).is_file()).collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::data(format!("{}: no phantom cases (directories with {TRUTH_FILE})", dir.display())));
    }
    Ok(out)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::data(e.to_string()).context(dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        out.push(entry.map_err(|e| CliError::data(e.to_string()).context(dir.display()))?.path());
    }
    out.sort();
    Ok(out)
}

/// Named phantom specs of a case suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub training: Vec<(String, PhantomSpec)>,
    pub test: Vec<(String, PhantomSpec)>,
}

fn load_specs(dir: &Path) -> Result<Vec<(String, PhantomSpec)>> {
    let mut out = Vec::new();
    for path in read_dir_sorted(dir)? {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(id) = name.strip_suffix(".json") else { continue };
        if !path.is_file() {
            continue;
        }
        let id = id.strip_suffix(".spec").unwrap_or(id).to_string();
        out.push((id, load_spec(&path)?));
    }
    if out.is_empty() {
        return Err(CliError::data(format!("{}: no phantom specs (*.json)", dir.display())));
    }
    Ok(out)
}

impl Suite {
    pub fn load(dir: &Path) -> Result<Self> {
        let suite = Self { training: load_specs(&dir.join("training"))?, test: load_specs(&dir.join("test"))? };
        let mut ids: Vec<&str> = suite.test.iter().map(|(id, _)| id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != suite.test.len() {
            return Err(CliError::data(format!("{}: duplicate test case ids", dir.display())));
        }
        Ok(suite)
    }

    /// Write the suite as spec files under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (sub, specs) in [("training", &self.training), ("test", &self.test)] {
            for (id, spec) in specs {
                write_atomic(&dir.join(sub).join(format!("{id}.json")), &coropve_core::phantom::spec_to_json(spec))?;
            }
        }
        Ok(())
    }
}
