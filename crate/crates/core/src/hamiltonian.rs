//! Symmetric Hamiltonian prediction from per-atom embeddings.
//!
//! Same-atom blocks come from a per-atom MLP with three outputs (ss, sp, pp).
//! Inter-atomic entries are `Σ_k z_ij[k] q_μ[k] q_ν[k]` where `z_ij` is a pair
//! MLP of `(t_i + t_j, |t_i − t_j|)` and `q_μ` projects the owning atom's row
//! with an s- or p-specific matrix. Every value lands in both `(μ, ν)` and
//! `(ν, μ)`, so the output is symmetric bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BlockLayout, OrbitalKind};
use crate::diff::{DiffError, MapEntry, Tensor, Var};
use crate::nn::{Mlp, ParamId, ParamStore, Session};
use crate::smiles::Element;

pub use crate::encoders::fuse_modalities;

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error("embedding has {got} rows but the layout has {expected} atoms")]
    AtomCountMismatch { expected: usize, got: usize },
    #[error("matrix file {path}: {message}")]
    BadMatrixFile { path: PathBuf, message: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    /// Width of the bilinear pair interaction.
    pub rank: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden: 32, rank: 16 }
    }
}

#[derive(Clone, Debug)]
pub struct HamHead {
    pub diag: Mlp,
    pub pair: Mlp,
    pub ws: ParamId,
    pub wp: ParamId,
}

impl HamHead {
    pub fn new(store: &mut ParamStore, d: usize, cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            diag: Mlp::new(store, "head.diag", d, cfg.hidden, 3, rng),
            pair: Mlp::new(store, "head.pair", 2 * d, cfg.hidden, cfg.rank, rng),
            ws: store.register_glorot("head.ws", d, cfg.rank, 1.0, rng),
            wp: store.register_glorot("head.wp", d, cfg.rank, 1.0, rng),
        }
    }
}

/// Index plan for one layout: which value feeds which matrix entries.
struct Plan {
    pair_a: Vec<usize>,
    pair_b: Vec<usize>,
    /// Orbital → row of `[t W_s; t W_p]`.
    orb_src: Vec<usize>,
    ent_pair: Vec<usize>,
    ent_mu: Vec<usize>,
    ent_nu: Vec<usize>,
    map: Vec<MapEntry>,
}

fn plan(layout: &BlockLayout) -> Plan {
    let n = layout.n_atoms();
    let n_orb = layout.n_orb;
    let mut pair_index = vec![vec![usize::MAX; n]; n];
    let (mut pair_a, mut pair_b) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            pair_index[i][j] = pair_a.len();
            pair_a.push(i);
            pair_b.push(j);
        }
    }
    let orb_src = (0..n_orb)
        .map(|o| match layout.kinds[o] {
            OrbitalKind::S => layout.atom_of[o],
            OrbitalKind::P => n + layout.atom_of[o],
        })
        .collect();
    let mut map = Vec::new();
    let mut sym = |src: usize, r: usize, c: usize| {
        map.push(MapEntry { src, dst: r * n_orb + c, coef: 1.0 });
        if r != c {
            map.push(MapEntry { src, dst: c * n_orb + r, coef: 1.0 });
        }
    };
    for a in 0..n {
        let o = layout.offsets[a];
        sym(3 * a, o, o);
        if layout.counts[a] == 2 {
            sym(3 * a + 1, o, o + 1);
            sym(3 * a + 2, o + 1, o + 1);
        }
    }
    let (mut ent_pair, mut ent_mu, mut ent_nu) = (Vec::new(), Vec::new(), Vec::new());
    for mu in 0..n_orb {
        for nu in mu + 1..n_orb {
            let (i, j) = (layout.atom_of[mu], layout.atom_of[nu]);
            if i == j {
                continue;
            }
            sym(3 * n + ent_pair.len(), mu, nu);
            ent_pair.push(pair_index[i][j]);
            ent_mu.push(mu);
            ent_nu.push(nu);
        }
    }
    Plan {
        pair_a,
        pair_b,
        orb_src,
        ent_pair,
        ent_mu,
        ent_nu,
        map,
    }
}

/// Predicted `n_orb × n_orb` Hamiltonian (Hartree) from `n_atoms × d` rows.
pub fn predict(s: &mut Session, head: &HamHead, emb: Var, layout: &BlockLayout) -> Result<Var, HamiltonianError> {
    let n = layout.n_atoms();
    if s.shape(emb).0 != n {
        return Err(HamiltonianError::AtomCountMismatch {
            expected: n,
            got: s.shape(emb).0,
        });
    }
    let p = plan(layout);
    let diag = head.diag.forward(s, emb)?;
    let mut values = s.reshape(diag, 3 * n, 1)?;
    if !p.ent_pair.is_empty() {
        let ti = s.gather_rows(emb, Rc::new(p.pair_a))?;
        let tj = s.gather_rows(emb, Rc::new(p.pair_b))?;
        let sum = s.add(ti, tj)?;
        let diff = s.sub(ti, tj)?;
        let diff = s.abs(diff);
        let inp = s.concat_cols(sum, diff)?;
        let z = head.pair.forward(s, inp)?;
        let (ws, wp) = (s.p(head.ws), s.p(head.wp));
        let qs = s.matmul(emb, ws)?;
        let qp = s.matmul(emb, wp)?;
        let q_all = s.concat_rows(qs, qp)?;
        let q = s.gather_rows(q_all, Rc::new(p.orb_src))?;
        let zg = s.gather_rows(z, Rc::new(p.ent_pair))?;
        let qa = s.gather_rows(q, Rc::new(p.ent_mu))?;
        let qb = s.gather_rows(q, Rc::new(p.ent_nu))?;
        let prod = s.mul(zg, qa)?;
        let prod = s.mul(prod, qb)?;
        let off = s.sum_cols(prod);
        values = s.concat_rows(values, off)?;
    }
    Ok(s.sparse_map(values, Rc::new(p.map), layout.n_orb, layout.n_orb)?)
}

/// `(λ₂/n) Σ(|H − H*| + (H − H*)²) + ((1 − λ₂)/n) Σ(|H̃ − H*| + (H̃ − H*)²)`.
/// `h_masked` may be omitted when `λ₂ = 1`.
pub fn finetune_loss(
    s: &mut Session,
    target: Var,
    h: Var,
    h_masked: Option<Var>,
    lambda2: f64,
) -> Result<Var, DiffError> {
    let first = mae_mse(s, h, target)?;
    let first = s.scale(first, lambda2);
    match h_masked {
        None => Ok(first),
        Some(hm) => {
            let second = mae_mse(s, hm, target)?;
            let second = s.scale(second, 1.0 - lambda2);
            s.add(first, second)
        }
    }
}

/// Mean of `|a − b| + (a − b)²`.
pub fn mae_mse(s: &mut Session, a: Var, b: Var) -> Result<Var, DiffError> {
    if s.shape(a) != s.shape(b) {
        return Err(DiffError::ShapeMismatch {
            op: "mae_mse",
            left: s.shape(a),
            right: s.shape(b),
        });
    }
    let d = s.sub(a, b)?;
    let ad = s.abs(d);
    let sq = s.square(d);
    let both = s.add(ad, sq)?;
    Ok(s.mean(both))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutSidecar {
    pub elements: Vec<Element>,
    pub offsets: Vec<usize>,
    pub counts: Vec<usize>,
    pub n_orb: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".layout.json");
    PathBuf::from(p)
}

/// Writes `n` as u64 LE, then the upper triangle row-major as f64 LE, plus a
/// `<path>.layout.json` sidecar.
pub fn write_matrix(path: &Path, h: &Tensor, elements: &[Element]) -> Result<(), HamiltonianError> {
    let layout = BlockLayout::new(elements);
    let n = h.rows();
    if n != layout.n_orb || h.cols() != n {
        return Err(HamiltonianError::BadMatrixFile {
            path: path.into(),
            message: format!("matrix is {}×{} but the layout has {} orbitals", n, h.cols(), layout.n_orb),
        });
    }
    let mut buf = Vec::with_capacity(8 + 4 * n * (n + 1));
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for i in 0..n {
        for j in i..n {
            buf.extend_from_slice(&h.get(i, j).to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    let side = LayoutSidecar {
        elements: elements.to_vec(),
        offsets: layout.offsets.clone(),
        counts: layout.counts.clone(),
        n_orb: n,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(Tensor, LayoutSidecar), HamiltonianError> {
    let bad = |message: String| HamiltonianError::BadMatrixFile {
        path: path.into(),
        message,
    };
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(bad("missing dimension header".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let want = 8 + 8 * n * (n + 1) / 2;
    if bytes.len() != want {
        return Err(bad(format!("expected {want} bytes for n = {n}, found {}", bytes.len())));
    }
    let vals: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let side: LayoutSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if side.n_orb != n {
        return Err(bad(format!("sidecar declares {} orbitals, matrix has {n}", side.n_orb)));
    }
    Ok((crate::oracle::from_upper(&vals, n), side))
}
