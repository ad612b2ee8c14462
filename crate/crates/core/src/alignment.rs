//! Fragment-level alignment between the geometric and compensated token
//! embeddings with a sigmoid contrastive objective.

use std::rc::Rc;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tensor, Var};
use crate::nn::{ParamId, ParamStore, Session};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("contrastive loss needs at least one fragment pair")]
    EmptyBatch,
    #[error("fragment atom {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// `log(1 + exp(−y·cos/τ))`.
    #[default]
    LogSigmoid,
    /// `−1 / (1 + exp(y·cos/τ))`, kept for comparison only: minimising it
    /// pushes positive pairs apart.
    Literal,
}

impl FromStr for LossForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "log-sigmoid" => Ok(LossForm::LogSigmoid),
            "literal" => Ok(LossForm::Literal),
            _ => Err(format!("unknown loss form {s:?} (log-sigmoid, literal)")),
        }
    }
}

pub const INITIAL_TEMPERATURE: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct AlignParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// `ln τ`.
    pub log_tau: ParamId,
}

impl AlignParams {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: store.register_glorot("align.wq", d, d, 1.0, rng),
            wk: store.register_glorot("align.wk", d, d, 1.0, rng),
            wv: store.register_glorot("align.wv", d, d, 1.0, rng),
            log_tau: store.register("align.log_tau", Tensor::scalar(INITIAL_TEMPERATURE.ln())),
        }
    }

    pub fn temperature(&self, store: &ParamStore) -> f64 {
        store.get(self.log_tau).item().exp()
    }
}

/// Rows of `emb` for each fragment, in the given atom order.
pub fn segment_embeddings(emb: &Tensor, fragments: &[Vec<usize>]) -> Result<Vec<Tensor>, AlignmentError> {
    fragments
        .iter()
        .map(|atoms| {
            let mut data = Vec::with_capacity(atoms.len() * emb.cols());
            for &a in atoms {
                if a >= emb.rows() {
                    return Err(AlignmentError::IndexOutOfRange {
                        index: a,
                        len: emb.rows(),
                    });
                }
                data.extend_from_slice(emb.row_slice(a));
            }
            Ok(Tensor::from_vec(atoms.len(), emb.cols(), data)?)
        })
        .collect()
}

/// Differentiable counterpart of [`segment_embeddings`].
pub fn segment_vars(s: &mut Session, emb: Var, fragments: &[Vec<usize>]) -> Result<Vec<Var>, AlignmentError> {
    let n = s.shape(emb).0;
    fragments
        .iter()
        .map(|atoms| {
            if let Some(&a) = atoms.iter().find(|&&a| a >= n) {
                return Err(AlignmentError::IndexOutOfRange { index: a, len: n });
            }
            Ok(s.gather_rows(emb, Rc::new(atoms.clone()))?)
        })
        .collect()
}

/// `mean_rows(softmax(t* W_q (v W_k)ᵀ / √d) v W_v)`, one `1 × d` row.
pub fn contextual_pool(s: &mut Session, p: &AlignParams, t_l: Var, v_l: Var) -> Result<Var, DiffError> {
    if s.shape(t_l) != s.shape(v_l) {
        return Err(DiffError::ShapeMismatch {
            op: "contextual_pool",
            left: s.shape(t_l),
            right: s.shape(v_l),
        });
    }
    let d = s.shape(t_l).1;
    let (wq, wk, wv) = (s.p(p.wq), s.p(p.wk), s.p(p.wv));
    let q = s.matmul(t_l, wq)?;
    let k = s.matmul(v_l, wk)?;
    let val = s.matmul(v_l, wv)?;
    let kt = s.transpose(k);
    let logits = s.matmul(q, kt)?;
    let logits = s.scale(logits, 1.0 / (d as f64).sqrt());
    let att = s.row_softmax(logits);
    let out = s.matmul(att, val)?;
    Ok(s.mean_rows(out))
}

/// Sigmoid contrastive loss over all `(i, j)` pairs of fragment vectors,
/// `y = +1` on the diagonal and `−1` elsewhere. `v_frag` and `t_frag` are
/// `F × d` with row `i` of each describing the same fragment.
pub fn contrastive_loss(
    s: &mut Session,
    v_frag: Var,
    t_frag: Var,
    log_tau: Var,
    form: LossForm,
) -> Result<Var, AlignmentError> {
    let f = s.shape(v_frag).0;
    if f == 0 {
        return Err(AlignmentError::EmptyBatch);
    }
    if s.shape(v_frag) != s.shape(t_frag) {
        return Err(DiffError::ShapeMismatch {
            op: "contrastive_loss",
            left: s.shape(v_frag),
            right: s.shape(t_frag),
        }
        .into());
    }
    let a = s.normalize_rows(v_frag)?;
    let b = s.normalize_rows(t_frag)?;
    let bt = s.transpose(b);
    let cos = s.matmul(a, bt)?;
    let neg_log_tau = s.neg(log_tau);
    let inv_tau = s.exp(neg_log_tau);
    let logits = s.mul(cos, inv_tau)?;
    // −y ⊙ logits
    let neg_y = s.constant(Tensor::from_fn(f, f, |i, j| if i == j { -1.0 } else { 1.0 }));
    let z = s.mul(logits, neg_y)?;
    let per_pair = match form {
        LossForm::LogSigmoid => s.softplus(z),
        LossForm::Literal => {
            let sig = s.sigmoid(z);
            s.neg(sig)
        }
    };
    Ok(s.mean(per_pair))
}

/// One molecule's pooled fragment vectors: `(v side, t side)`, each `F × d`.
pub fn fragment_vectors(
    s: &mut Session,
    p: &AlignParams,
    v: Var,
    t_star: Var,
    fragments: &[Vec<usize>],
) -> Result<(Var, Var), AlignmentError> {
    let vs = segment_vars(s, v, fragments)?;
    let ts = segment_vars(s, t_star, fragments)?;
    let mut v_rows = Vec::with_capacity(vs.len());
    let mut t_rows = Vec::with_capacity(vs.len());
    for (vl, tl) in vs.into_iter().zip(ts) {
        v_rows.push(s.mean_rows(vl));
        t_rows.push(contextual_pool(s, p, tl, vl)?);
    }
    Ok((stack_rows(s, &v_rows)?, stack_rows(s, &t_rows)?))
}

/// Concatenates `1 × d` rows into a matrix.
pub fn stack_rows(s: &mut Session, rows: &[Var]) -> Result<Var, AlignmentError> {
    let (&first, rest) = rows.split_first().ok_or(AlignmentError::EmptyBatch)?;
    let mut acc = first;
    for &r in rest {
        acc = s.concat_rows(acc, r)?;
    }
    Ok(acc)
}
