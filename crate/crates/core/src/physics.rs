//! Overlap construction, symmetric eigensolvers, the generalized problem
//! `HC = SCε` and the evaluation metrics built on its solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{orbital_list, BlockLayout, HARTREE_TO_EV};
use crate::diff::Tensor;
use crate::smiles::Element;

/// Conversion from Ångström to bohr.
pub const ANGSTROM_TO_BOHR: f64 = 1.889_726_124_6;

/// Largest tolerated `|A_ij - A_ji|` for input that must be symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Overlap eigenvalues at or below this are treated as singular.
pub const RIDGE: f64 = 1e-10;

pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not square: {0:?}")]
    NotSquare((usize, usize)),
    #[error("Jacobi iteration did not converge in {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix is not positive definite (eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("odd electron count {0}")]
    OddElectronCount(usize),
    #[error("{electrons} electrons do not leave an empty orbital among {n_orb}")]
    NoVirtualOrbital { electrons: usize, n_orb: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite coordinate on atom {0}")]
    NonFiniteCoordinate(usize),
}

fn square_dim(a: &Tensor) -> Result<usize, PhysicsError> {
    if a.rows() != a.cols() {
        return Err(PhysicsError::NotSquare(a.shape()));
    }
    Ok(a.rows())
}

fn same_dim(a: usize, b: usize) -> Result<(), PhysicsError> {
    if a != b {
        return Err(PhysicsError::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

/// Overlap of normalized s-type Gaussians centred on the atoms. Every orbital
/// (including the p-effective one) is treated as a normalized Gaussian of its
/// own exponent, so `S` is a Gram matrix with unit diagonal.
pub fn toy_overlap(elements: &[Element], coords: &[[f64; 3]]) -> Result<Tensor, PhysicsError> {
    same_dim(elements.len(), coords.len())?;
    if let Some(i) = coords.iter().position(|c| c.iter().any(|x| !x.is_finite())) {
        return Err(PhysicsError::NonFiniteCoordinate(i));
    }
    let layout = BlockLayout::new(elements);
    let orbs = orbital_list(elements);
    let n = layout.n_orb;
    let mut s = Tensor::identity(n);
    for mu in 0..n {
        for nu in mu + 1..n {
            let (a, b) = (layout.atom_of[mu], layout.atom_of[nu]);
            let r2 = dist2(&coords[a], &coords[b]) * ANGSTROM_TO_BOHR * ANGSTROM_TO_BOHR;
            let v = gaussian_overlap(orbs[mu].exponent, orbs[nu].exponent, r2);
            s.set(mu, nu, v);
            s.set(nu, mu, v);
        }
    }
    Ok(s)
}

/// `<g_a | g_b>` for unit-normalized 3D Gaussians, `r2` in bohr².
pub fn gaussian_overlap(a: f64, b: f64, r2: f64) -> f64 {
    let p = a + b;
    (2.0 * (a * b).sqrt() / p).powf(1.5) * (-a * b / p * r2).exp()
}

pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues ascend; eigenvector `k` is column `k`.
pub fn jacobi_eigh(a: &Tensor) -> Result<(Vec<f64>, Tensor), PhysicsError> {
    let n = square_dim(a)?;
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(PhysicsError::NotSymmetric(asym));
    }
    let mut m = a.data().to_vec();
    let mut v = Tensor::identity(n);
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sweep = 0;
    while n > 1 && scale > 0.0 {
        if sweep == MAX_SWEEPS {
            return Err(PhysicsError::NoConvergence(MAX_SWEEPS));
        }
        sweep += 1;
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale {
            break;
        }
        // early sweeps skip rotations that cannot matter yet
        let thresh = if sweep < 4 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 || apq.abs() < thresh {
                    continue;
                }
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, n, p, q, c, s);
                let vd = v.data_mut();
                for k in 0..n {
                    let (vkp, vkq) = (vd[k * n + p], vd[k * n + q]);
                    vd[k * n + p] = c * vkp - s * vkq;
                    vd[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let w: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let vs = Tensor::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok((w, vs))
}

/// `M <- Jᵀ M J` for the plane rotation `J` acting on `(p, q)`.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
        m[k * n + p] = c * mkp - s * mkq;
        m[k * n + q] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
        m[p * n + k] = c * mpk - s * mqk;
        m[q * n + k] = s * mpk + c * mqk;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
}

/// Symmetric inverse square root `S^{-1/2}`.
pub fn lowdin_inv_sqrt(s: &Tensor) -> Result<Tensor, PhysicsError> {
    let (w, v) = jacobi_eigh(s)?;
    if let Some(&bad) = w.iter().find(|&&x| x <= RIDGE) {
        return Err(PhysicsError::NotPositiveDefinite(bad));
    }
    let n = w.len();
    let inv: Vec<f64> = w.iter().map(|x| 1.0 / x.sqrt()).collect();
    let x = Tensor::from_fn(n, n, |i, j| (0..n).map(|k| v.get(i, k) * inv[k] * v.get(j, k)).sum());
    Ok(symmetrize(&x))
}

pub fn symmetrize(a: &Tensor) -> Tensor {
    // (i, j) and (j, i) must add in the same order to be bit-equal
    Tensor::from_fn(a.rows(), a.cols(), |i, j| {
        let (lo, hi) = (i.min(j), i.max(j));
        0.5 * (a.get(lo, hi) + a.get(hi, lo))
    })
}

/// Lower Cholesky factor; fails on the first non-positive pivot.
pub fn cholesky(a: &Tensor) -> Result<Tensor, PhysicsError> {
    let n = square_dim(a)?;
    let mut l = Tensor::zeros(n, n);
    for j in 0..n {
        let d = a.get(j, j) - (0..j).map(|k| l.get(j, k).powi(2)).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return Err(PhysicsError::NotPositiveDefinite(d));
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let x = a.get(i, j) - (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum::<f64>();
            l.set(i, j, x / djj);
        }
    }
    Ok(l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    /// Orbital energies in Hartree, ascending.
    pub energies: Vec<f64>,
    /// Columns are orbitals, S-orthonormal.
    pub coeffs: Tensor,
    pub n_occ: usize,
    pub homo: usize,
    pub lumo: usize,
    pub homo_energy: f64,
    pub lumo_energy: f64,
    pub gap_ev: f64,
}

/// Solves `HC = SCε` through `X = S^{-1/2}`: `eigh(XHX) = (ε, V)`, `C = XV`.
pub fn solve_gev(h: &Tensor, s: &Tensor, electrons: usize) -> Result<SpectralResult, PhysicsError> {
    let n = square_dim(h)?;
    same_dim(n, square_dim(s)?)?;
    if electrons % 2 == 1 {
        return Err(PhysicsError::OddElectronCount(electrons));
    }
    let n_occ = electrons / 2;
    if n_occ == 0 || n_occ >= n {
        return Err(PhysicsError::NoVirtualOrbital { electrons, n_orb: n });
    }
    let asym = h.max_asymmetry();
    if asym > SYMMETRY_TOL * h.max_abs().max(1.0) {
        return Err(PhysicsError::NotSymmetric(asym));
    }
    let x = lowdin_inv_sqrt(s)?;
    let xh = x.matmul(h).expect("square");
    let hp = symmetrize(&xh.matmul(&x).expect("square"));
    let (energies, v) = jacobi_eigh(&hp)?;
    let coeffs = x.matmul(&v).expect("square");
    let (homo, lumo) = (n_occ - 1, n_occ);
    Ok(SpectralResult {
        homo,
        lumo,
        homo_energy: energies[homo],
        lumo_energy: energies[lumo],
        gap_ev: (energies[lumo] - energies[homo]) * HARTREE_TO_EV,
        energies,
        coeffs,
        n_occ,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMae {
    pub diag: f64,
    pub offdiag: f64,
    pub all: f64,
}

/// Mean absolute error split by same-atom and cross-atom blocks. A block
/// class with no entries (a single atom has no cross-atom block) reports 0.
pub fn mae_blocks(pred: &Tensor, truth: &Tensor, layout: &BlockLayout) -> Result<BlockMae, PhysicsError> {
    let n = square_dim(pred)?;
    same_dim(n, square_dim(truth)?)?;
    same_dim(n, layout.n_orb)?;
    let (mut sd, mut nd, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..n {
        for c in 0..n {
            let e = (pred.get(r, c) - truth.get(r, c)).abs();
            if layout.is_diag(r, c) {
                sd += e;
                nd += 1;
            } else {
                so += e;
                no += 1;
            }
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok(BlockMae {
        diag: mean(sd, nd),
        offdiag: mean(so, no),
        all: mean(sd + so, nd + no),
    })
}

/// MAE over the lowest `n_occ` energies of each (ascending) spectrum.
pub fn mae_energies(pred: &[f64], truth: &[f64], n_occ: usize) -> Result<f64, PhysicsError> {
    same_dim(pred.len(), truth.len())?;
    if n_occ > pred.len() {
        return Err(PhysicsError::DimensionMismatch {
            left: n_occ,
            right: pred.len(),
        });
    }
    if n_occ == 0 {
        return Ok(0.0);
    }
    let total: f64 = pred[..n_occ].iter().zip(&truth[..n_occ]).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / n_occ as f64)
}

/// Mean `|cos|` between occupied orbitals paired by energy rank.
pub fn orbital_similarity(
    c_pred: &Tensor,
    c_true: &Tensor,
    e_pred: &[f64],
    e_true: &[f64],
    n_occ: usize,
) -> Result<f64, PhysicsError> {
    same_dim(c_pred.rows(), c_true.rows())?;
    same_dim(c_pred.cols(), c_true.cols())?;
    same_dim(c_pred.cols(), e_pred.len())?;
    same_dim(c_true.cols(), e_true.len())?;
    if n_occ > c_pred.cols() {
        return Err(PhysicsError::DimensionMismatch {
            left: n_occ,
            right: c_pred.cols(),
        });
    }
    if n_occ == 0 {
        return Ok(1.0);
    }
    let rank = |e: &[f64]| {
        let mut idx: Vec<usize> = (0..e.len()).collect();
        idx.sort_by(|&i, &j| e[i].total_cmp(&e[j]));
        idx
    };
    let (rp, rt) = (rank(e_pred), rank(e_true));
    let mut total = 0.0;
    for k in 0..n_occ {
        let a = c_pred.column(rp[k]);
        let b = c_true.column(rt[k]);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += (dot / (na * nb)).abs();
    }
    Ok(total / n_occ as f64)
}
