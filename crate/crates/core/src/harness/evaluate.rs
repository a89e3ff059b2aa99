//! Results and report files, evaluation and the ablation matrix.

use std::path::{Path, PathBuf};

use super::model::Model;
use crate::error::{Error, Result};
use crate::metrics::{collect_clips, evaluate, id_switches, EvalReport, PredictedTrack, Protocol};
use crate::scalar::Scalar;
use crate::synthdata::Dataset;

pub fn results_to_json(tracks: &[PredictedTrack]) -> String {
    serde_json::to_string_pretty(tracks).expect("results serialize")
}

pub fn write_results(tracks: &[PredictedTrack], path: &Path) -> Result<()> {
    std::fs::write(path, results_to_json(tracks)).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<PredictedTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::validation("results", format!("{}: {e}", path.display())))
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs inference over every clip and scores the result.
pub fn evaluate_model<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    protocol: Protocol,
) -> Result<(EvalReport, Vec<PredictedTrack>)> {
    if dataset.is_empty() {
        return Err(Error::NoClips);
    }
    let preds = model.infer_dataset(dataset)?;
    Ok((evaluate(&preds, dataset, protocol)?, preds))
}

/// Total identity switches of `preds` over `dataset`.
pub fn count_id_switches(preds: &[PredictedTrack], dataset: &Dataset) -> Result<usize> {
    Ok(collect_clips(preds, dataset)?.iter().map(id_switches).sum())
}

/// One row of the ablation matrix.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: &'static str,
    pub resfuser: bool,
    pub gnn: bool,
    pub report: EvalReport,
    pub id_switches: usize,
    pub path: PathBuf,
}

/// The {±resfuser, ±gnn} matrix with one set of weights. Disabling the
/// graph falls back to the overlap-only tracker. Writes
/// `report_<name>.json` per row into `out_dir`.
pub fn run_ablation<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    protocol: Protocol,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let variants = [
        ("baseline", false, false),
        ("resfuser", true, false),
        ("gnn", false, true),
        ("full", true, true),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for (name, resfuser, gnn) in variants {
        let m = model.with_flags(resfuser, gnn);
        let (report, preds) = evaluate_model(&m, dataset, protocol)?;
        let path = out_dir.join(format!("report_{name}.json"));
        write_report(&report, &path)?;
        rows.push(AblationRow {
            name,
            resfuser,
            gnn,
            report,
            id_switches: count_id_switches(&preds, dataset)?,
            path,
        });
    }
    Ok(rows)
}
