//! Gap-threshold screening and per-pipeline timing.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{embed_3d, huckel_labels, Dataset, EmbedConfig};
use crate::physics::solve_gev;
use crate::smiles::Parsed;
use crate::training::Model;

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("{pred} predicted gaps but {truth} reference gaps")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// 0.26 to 0.36 eV in steps of 0.02.
pub fn default_thresholds() -> Vec<f64> {
    vec![0.26, 0.28, 0.30, 0.32, 0.34, 0.36]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub threshold_ev: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Confusion counts per threshold with `gap > threshold` as the positive
/// class. Recall and precision are 0 when their denominator is 0.
pub fn classify_by_gap(pred: &[f64], truth: &[f64], thresholds: &[f64]) -> Result<Vec<ScreenRow>, ScreenError> {
    if pred.len() != truth.len() {
        return Err(ScreenError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if thresholds.is_empty() {
        return Err(ScreenError::EmptyThresholds);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(thresholds
        .iter()
        .map(|&th| {
            let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
            for (&p, &t) in pred.iter().zip(truth) {
                match (p > th, t > th) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fn_ += 1,
                }
            }
            ScreenRow {
                threshold_ev: th,
                tp,
                fp,
                tn,
                fn_,
                accuracy: ratio(tp + tn, pred.len()),
                recall: ratio(tp, tp + fn_),
                precision: ratio(tp, tp + fp),
            }
        })
        .collect())
}

pub fn write_rows_csv(path: &Path, rows: &[ScreenRow]) -> Result<(), ScreenError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold_ev", "tp", "fp", "tn", "fn", "accuracy", "recall", "precision"])?;
    for r in rows {
        w.write_record([
            r.threshold_ev.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.tn.to_string(),
            r.fn_.to_string(),
            r.accuracy.to_string(),
            r.recall.to_string(),
            r.precision.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTiming {
    /// Seconds per 1000 molecules, one per repeat.
    pub samples: Vec<f64>,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub repeat: usize,
    pub molecules: usize,
    pub smiles_only: PathTiming,
    pub geometry: PathTiming,
    pub reference: PathTiming,
    /// Calls to the 3D embedder made by the SMILES-only path.
    pub smiles_only_embed_calls: usize,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn wrap(index: usize) -> impl Fn(crate::Error) -> ScreenError {
    move |e| ScreenError::Record {
        index,
        source: Box::new(e),
    }
}

fn time_path(
    ds: &Dataset,
    repeat: usize,
    mut f: impl FnMut(usize) -> Result<f64, crate::Error>,
) -> Result<PathTiming, ScreenError> {
    let mut samples = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let start = Instant::now();
        for i in 0..ds.len() {
            let gap = f(i).map_err(wrap(ds.records[i].index))?;
            std::hint::black_box(gap);
        }
        samples.push(start.elapsed().as_secs_f64() * 1000.0 / ds.len().max(1) as f64);
    }
    Ok(PathTiming {
        median: median(&samples),
        samples,
    })
}

/// Times three ways of obtaining a gap for every record:
/// (a) SMILES → token encoder → head → solve with the stored overlap;
/// (b) SMILES → 3D embedding → both encoders fused → head → solve;
/// (c) SMILES → 3D embedding → reference Hamiltonian → solve.
pub fn bench_pipelines(model: &Model, ds: &Dataset, repeat: usize) -> Result<Timing, ScreenError> {
    let embed_cfg = EmbedConfig::default();
    let before = crate::oracle::embed_calls();
    let smiles_only = time_path(ds, repeat, |i| {
        let r = &ds.records[i];
        let p = Parsed::new(&r.smiles)?;
        let h = model.predict_h(&p, None)?;
        Ok(solve_gev(&h, &r.s(), r.electrons)?.gap_ev)
    })?;
    let smiles_only_embed_calls = crate::oracle::embed_calls() - before;
    let geometry = time_path(ds, repeat, |i| {
        let r = &ds.records[i];
        let p = Parsed::new(&r.smiles)?;
        let x = embed_3d(&p.molecule, r.index as u64, &embed_cfg)?;
        let h = model.predict_h(&p, Some(&x))?;
        let s = crate::physics::toy_overlap(&p.molecule.elements, &x)?;
        Ok(solve_gev(&h, &s, r.electrons)?.gap_ev)
    })?;
    let reference = time_path(ds, repeat, |i| {
        let r = &ds.records[i];
        let p = Parsed::new(&r.smiles)?;
        let x = embed_3d(&p.molecule, r.index as u64, &embed_cfg)?;
        let (h, s) = huckel_labels(&p.molecule.elements, &x)?;
        Ok(solve_gev(&h, &s, r.electrons)?.gap_ev)
    })?;
    Ok(Timing {
        repeat,
        molecules: ds.len(),
        smiles_only,
        geometry,
        reference,
        smiles_only_embed_calls,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub thresholds: Vec<f64>,
    pub molecules: usize,
    pub rows: Vec<ScreenRow>,
}
