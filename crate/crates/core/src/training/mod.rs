//! Pre-training and fine-tuning loops, evaluation, and checkpoints.

mod checkpoint;
mod model;
mod optim;

pub use checkpoint::{
    load_checkpoint, load_into, save_checkpoint, Checkpoint, CheckpointManifest, ParamEntry, RngState,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use model::{Model, ModelConfig};
pub use optim::Adam;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{contrastive_loss, fragment_vectors, stack_rows, LossForm};
use crate::basis::BlockLayout;
use crate::compensation::{compensate, disentangle, discrepancy_loss};
use crate::diff::{Tensor, Var};
use crate::hamiltonian::{finetune_loss, mae_mse, predict};
use crate::nn::{Session, Trainable};
use crate::oracle::Dataset;
use crate::parallel::par_map;
use crate::physics::{mae_blocks, mae_energies, orbital_similarity, solve_gev};
use crate::smiles::{mask_tokens, Parsed, Token};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint file {path}: {message}")]
    CorruptFile { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(format!("unknown stage {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Probability that a fragment stays unmasked.
    pub keep_prob: f64,
    pub seed: u64,
    pub loss_form: LossForm,
    /// Feed `t + v` to the head and freeze the token encoder.
    pub fusion: bool,
    /// When false, `t* = t` during pre-training.
    pub compensation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Finetune,
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            lambda1: 0.5,
            lambda2: 0.8,
            keep_prob: 0.85,
            seed: 0,
            loss_form: LossForm::LogSigmoid,
            fusion: false,
            compensation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lambda1 >= 0.0) {
            return bad("lambda1 must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.lambda2) {
            return bad("lambda2 must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return bad("keep_prob must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRow {
    pub step: usize,
    pub epoch: usize,
    pub discrepancy: f64,
    pub alignment: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub step: usize,
    pub epoch: usize,
    pub unmasked: f64,
    pub masked: f64,
    pub total: f64,
}

pub fn write_trace<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed record plus its target and layout.
struct Prepared {
    index: usize,
    parsed: Parsed,
    layout: BlockLayout,
    target: Tensor,
    fragments: Vec<Vec<usize>>,
}

fn prepare(ds: &Dataset) -> Result<Vec<Prepared>, TrainError> {
    ds.records
        .iter()
        .map(|r| {
            let parsed = Parsed::new(&r.smiles).map_err(|e| record_err(r.index, e.into()))?;
            let layout = BlockLayout::new(&parsed.molecule.elements);
            let fragments = parsed.molecule.fragment_atoms();
            Ok(Prepared {
                index: r.index,
                layout,
                target: r.h(),
                fragments,
                parsed,
            })
        })
        .collect()
}

fn record_err(index: usize, e: crate::Error) -> TrainError {
    TrainError::Record {
        index,
        source: Box::new(e),
    }
}

/// Result of a training run: the per-step trace and the final RNG position.
pub struct TrainOutcome<R> {
    pub trace: Vec<R>,
    pub rng: RngState,
}

fn batches(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(|c| c.to_vec()).collect()
}

/// Per-molecule discrepancy loss and fragment vectors for pre-training.
fn pretrain_molecule(
    s: &mut Session,
    model: &Model,
    p: &Prepared,
    coords: &[[f64; 3]],
    cfg: &TrainConfig,
) -> Result<(Var, Var, Var), crate::Error> {
    let mol = &p.parsed.molecule;
    let t = model.tok.forward(s, &p.parsed.tokens, &p.parsed.graph, mol)?;
    let v = model.geo.forward(s, &mol.elements, coords)?;
    let dd = disentangle(s, &model.dis, v, t)?;
    let t_star = if cfg.compensation {
        compensate(s, &model.gen, t, dd.v_minus)?.0
    } else {
        t
    };
    let ld = discrepancy_loss(s, v, t_star, t, dd.v_plus, cfg.lambda1)?;
    let (vf, tf) = fragment_vectors(s, &model.align, v, t_star, &p.fragments)?;
    Ok((ld, vf, tf))
}

/// `mean L^D + L^l` over one batch, built on `s`. Returns
/// `(total, mean discrepancy, contrastive)`.
pub fn pretrain_loss(
    s: &mut Session,
    model: &Model,
    ds: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<(Var, Var, Var), TrainError> {
    let prepared = prepare(&Dataset::new(batch.iter().map(|&i| ds.records[i].clone()).collect()))?;
    let coords: Vec<Vec<[f64; 3]>> = batch.iter().map(|&i| ds.coords(i).to_vec()).collect();
    let items: Vec<(&Prepared, &[[f64; 3]])> = prepared.iter().zip(coords.iter().map(|c| c.as_slice())).collect();
    pretrain_loss_on(s, model, &items, cfg)
}

fn pretrain_loss_on(
    s: &mut Session,
    model: &Model,
    items: &[(&Prepared, &[[f64; 3]])],
    cfg: &TrainConfig,
) -> Result<(Var, Var, Var), TrainError> {
    let mut ld_sum: Option<Var> = None;
    let (mut vs, mut ts) = (Vec::new(), Vec::new());
    for (p, coords) in items {
        let (ld, vf, tf) = pretrain_molecule(s, model, p, coords, cfg).map_err(|e| record_err(p.index, e))?;
        ld_sum = Some(match ld_sum {
            None => ld,
            Some(acc) => s.add(acc, ld).map_err(|e| record_err(p.index, e.into()))?,
        });
        vs.push(vf);
        ts.push(tf);
    }
    let ld_sum = ld_sum.ok_or(TrainError::EmptyDataset)?;
    let wrap = |e: crate::Error| record_err(items[0].0.index, e);
    let ld = s.scale(ld_sum, 1.0 / items.len() as f64);
    let vall = stack_rows(s, &vs).map_err(|e| wrap(e.into()))?;
    let tall = stack_rows(s, &ts).map_err(|e| wrap(e.into()))?;
    let log_tau = s.p(model.align.log_tau);
    let lc = contrastive_loss(s, vall, tall, log_tau, cfg.loss_form).map_err(|e| wrap(e.into()))?;
    let total = s.add(ld, lc).map_err(|e| wrap(e.into()))?;
    Ok((total, ld, lc))
}

/// Joint pre-training of both encoders, compensation and alignment on the
/// records of `ds` (coordinates required).
pub fn pretrain(model: &mut Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<PretrainRow>, TrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let prepared = prepare(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        for batch in batches(&mut rng, prepared.len(), cfg.batch_size) {
            let items: Vec<(&Prepared, &[[f64; 3]])> = batch.iter().map(|&i| (&prepared[i], ds.coords(i))).collect();
            let mut s = Session::new(&model.store, Trainable::All);
            let (total, ld, lc) = pretrain_loss_on(&mut s, model, &items, cfg)?;
            let row = PretrainRow {
                step: trace.len(),
                epoch,
                discrepancy: s.value(ld).item(),
                alignment: s.value(lc).item(),
                total: s.value(total).item(),
            };
            if !row.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: row.step });
            }
            let grads = s.backward(total);
            let grads = s.param_grads(&grads);
            drop(s);
            adam.step(&mut model.store, &grads);
            trace.push(row);
        }
    }
    Ok(TrainOutcome {
        trace,
        rng: RngState::capture(&rng),
    })
}

/// Fine-tunes the head (and token encoder) on SMILES input with fragment
/// masking. Coordinates are read only when `cfg.fusion` is set.
pub fn finetune(model: &mut Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<FinetuneRow>, TrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let prepared = prepare(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let trainable = if cfg.fusion {
        Trainable::AllExcept(vec!["tok.".into()])
    } else {
        Trainable::All
    };
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let masks: Vec<Vec<Token>> = prepared
            .iter()
            .map(|p| {
                let keep: Vec<bool> = p.parsed.fragments.iter().map(|_| rng.gen::<f64>() < cfg.keep_prob).collect();
                mask_tokens(&p.parsed.tokens, &p.parsed.fragments, &keep).expect("one flag per fragment")
            })
            .collect();
        for batch in batches(&mut rng, prepared.len(), cfg.batch_size) {
            let mut s = Session::new(&model.store, trainable.clone());
            let (mut total, mut unmasked, mut masked) = (None::<Var>, 0.0, 0.0);
            for &i in &batch {
                let p = &prepared[i];
                let coords = if cfg.fusion { Some(ds.coords(i)) } else { None };
                let step = |s: &mut Session| -> Result<(Var, f64, f64), crate::Error> {
                    let emb = model.embed(s, &p.parsed, &p.parsed.tokens, coords)?;
                    let h = predict(s, &model.head, emb, &p.layout)?;
                    let target = s.constant(p.target.clone());
                    let h_masked = if cfg.lambda2 == 1.0 {
                        None
                    } else if masks[i] == p.parsed.tokens {
                        Some(h)
                    } else {
                        let emb = model.embed(s, &p.parsed, &masks[i], coords)?;
                        Some(predict(s, &model.head, emb, &p.layout)?)
                    };
                    let loss = finetune_loss(s, target, h, h_masked, cfg.lambda2)?;
                    let a = mae_mse(s, h, target)?;
                    let b = match h_masked {
                        Some(hm) => {
                            let m = mae_mse(s, hm, target)?;
                            s.value(m).item()
                        }
                        None => f64::NAN,
                    };
                    Ok((loss, s.value(a).item(), b))
                };
                let (loss, a, b) = step(&mut s).map_err(|e| record_err(p.index, e))?;
                unmasked += a;
                masked += b;
                total = Some(match total {
                    None => loss,
                    Some(acc) => s.add(acc, loss).map_err(|e| record_err(p.index, e.into()))?,
                });
            }
            let k = batch.len() as f64;
            let total = s.scale(total.expect("non-empty batch"), 1.0 / k);
            let row = FinetuneRow {
                step: trace.len(),
                epoch,
                unmasked: unmasked / k,
                masked: masked / k,
                total: s.value(total).item(),
            };
            if !row.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: row.step });
            }
            let grads = s.backward(total);
            let grads = s.param_grads(&grads);
            drop(s);
            adam.step(&mut model.store, &grads);
            trace.push(row);
        }
    }
    Ok(TrainOutcome {
        trace,
        rng: RngState::capture(&rng),
    })
}

/// Held-out metrics over a dataset. Energies in Hartree except `gap_mae_ev`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae_diag: f64,
    pub mae_offdiag: f64,
    pub mae_all: f64,
    pub eps_mae: f64,
    pub psi: f64,
    pub gap_mae_ev: f64,
    pub fusion: bool,
}

/// Per-molecule evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub smiles: String,
    pub mae_diag: f64,
    pub mae_offdiag: f64,
    pub mae_all: f64,
    pub eps_mae: f64,
    pub psi: f64,
    pub gap_true_ev: f64,
    pub gap_pred_ev: f64,
}

/// Predicts every record, solving with the record's own overlap matrix.
pub fn predict_dataset(model: &Model, ds: &Dataset, fusion: bool, jobs: usize) -> Result<Vec<Prediction>, TrainError> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let coords: Vec<Option<Vec<[f64; 3]>>> =
        idx.iter().map(|&i| if fusion { Some(ds.coords(i).to_vec()) } else { None }).collect();
    let out = par_map(&idx, jobs, |&i| -> Result<Prediction, crate::Error> {
        let r = &ds.records[i];
        let p = Parsed::new(&r.smiles)?;
        let h = model.predict_h(&p, coords[i].as_deref())?;
        let truth = r.h();
        let s = r.s();
        let layout = BlockLayout::new(&r.elements);
        let m = mae_blocks(&h, &truth, &layout)?;
        let sp = solve_gev(&h, &s, r.electrons)?;
        let st = solve_gev(&truth, &s, r.electrons)?;
        Ok(Prediction {
            index: r.index,
            smiles: r.smiles.clone(),
            mae_diag: m.diag,
            mae_offdiag: m.offdiag,
            mae_all: m.all,
            eps_mae: mae_energies(&sp.energies, &st.energies, st.n_occ)?,
            psi: orbital_similarity(&sp.coeffs, &st.coeffs, &sp.energies, &st.energies, st.n_occ)?,
            gap_true_ev: r.gap_ev,
            gap_pred_ev: sp.gap_ev,
        })
    });
    out.into_iter()
        .zip(&ds.records)
        .map(|(r, rec)| r.map_err(|e| record_err(rec.index, e)))
        .collect()
}

/// Averages per-molecule metrics (each molecule weighted equally).
pub fn summarize(preds: &[Prediction], fusion: bool) -> EvalReport {
    let n = preds.len();
    let mean = |f: &dyn Fn(&Prediction) -> f64| preds.iter().map(f).sum::<f64>() / n.max(1) as f64;
    EvalReport {
        n,
        mae_diag: mean(&|p| p.mae_diag),
        mae_offdiag: mean(&|p| p.mae_offdiag),
        mae_all: mean(&|p| p.mae_all),
        eps_mae: mean(&|p| p.eps_mae),
        psi: mean(&|p| p.psi),
        gap_mae_ev: mean(&|p| (p.gap_pred_ev - p.gap_true_ev).abs()),
        fusion,
    }
}

pub fn evaluate(model: &Model, ds: &Dataset, fusion: bool, jobs: usize) -> Result<EvalReport, TrainError> {
    Ok(summarize(&predict_dataset(model, ds, fusion, jobs)?, fusion))
}
