//! Geometry-to-token compensation: cross-modal attention splits `v` into a
//! token-relevant part `v⁺` and a residual `v⁻`; a small generator maps the
//! pooled residual to the parameters of an affine-plus-sinusoid transform
//! that turns `t` into `t*`.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{DiffError, MapEntry, Tensor, Var};
use crate::nn::{Linear, Mlp, ParamStore, Session};

/// Shear pairs in the affine map.
pub const DEFAULT_SHEAR_PAIRS: usize = 4;

/// Cross-modal attention and the two value projections.
#[derive(Clone, Debug)]
pub struct Disentangler {
    pub u: Mlp,
    pub t: Mlp,
    pub v_plus: Mlp,
    pub v_minus: Mlp,
}

impl Disentangler {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            u: Mlp::new(store, "dis.u", d, d, d, rng),
            t: Mlp::new(store, "dis.t", d, d, d, rng),
            v_plus: Mlp::new(store, "dis.v_plus", d, d, d, rng),
            v_minus: Mlp::new(store, "dis.v_minus", d, d, d, rng),
        }
    }
}

/// Row-softmax of the cosine between `U(v_i)` and `T(t_j)`.
pub fn attention_matrix(s: &mut Session, dis: &Disentangler, v: Var, t: Var) -> Result<Var, DiffError> {
    if s.shape(v) != s.shape(t) {
        return Err(DiffError::ShapeMismatch {
            op: "attention_matrix",
            left: s.shape(v),
            right: s.shape(t),
        });
    }
    let uv = dis.u.forward(s, v)?;
    let tt = dis.t.forward(s, t)?;
    let uv = s.normalize_rows(uv)?;
    let tt = s.normalize_rows(tt)?;
    let ttt = s.transpose(tt);
    let cos = s.matmul(uv, ttt)?;
    Ok(s.row_softmax(cos))
}

pub struct Disentangled {
    pub beta: Var,
    pub v_plus: Var,
    pub v_minus: Var,
}

/// `v⁺ = β V₊(v)` and `v⁻ = (I − β) V₋(v)`.
pub fn disentangle(s: &mut Session, dis: &Disentangler, v: Var, t: Var) -> Result<Disentangled, DiffError> {
    let beta = attention_matrix(s, dis, v, t)?;
    let vp = dis.v_plus.forward(s, v)?;
    let v_plus = s.matmul(beta, vp)?;
    let vm = dis.v_minus.forward(s, v)?;
    let bvm = s.matmul(beta, vm)?;
    let v_minus = s.sub(vm, bvm)?;
    Ok(Disentangled { beta, v_plus, v_minus })
}

/// Plain-value transform parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensationParams {
    /// One angle per adjacent plane `(i, i+1)`.
    pub angles: Vec<f64>,
    pub scales: Vec<f64>,
    /// `K × d`, row `k` is `p_k`.
    pub p: Tensor,
    /// `K × d`, row `k` is `w_k`.
    pub w: Tensor,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub omega: Vec<f64>,
    pub phi: Vec<f64>,
}

impl CompensationParams {
    /// Parameters for which the transform is the identity.
    pub fn neutral(d: usize, k: usize) -> Self {
        Self {
            angles: vec![0.0; d.saturating_sub(1)],
            scales: vec![1.0; d],
            p: Tensor::zeros(k, d),
            w: Tensor::zeros(k, d),
            b: vec![0.0; d],
            a: vec![0.0; d],
            omega: vec![1.0; d],
            phi: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.scales.len()
    }
}

/// Product of adjacent-plane Givens rotations `G(1,2) G(2,3) … G(d−1,d)`.
pub fn build_rotation(angles: &[f64]) -> Tensor {
    let d = angles.len() + 1;
    let mut r = Tensor::identity(d);
    for (i, &th) in angles.iter().enumerate() {
        let (sn, c) = th.sin_cos();
        for row in 0..d {
            let x = r.get(row, i);
            let y = r.get(row, i + 1);
            r.set(row, i, c * x + sn * y);
            r.set(row, i + 1, -sn * x + c * y);
        }
    }
    r
}

/// `A = R S H` with `S = diag(s)` and `H = I + Σ_k p_k w_kᵀ`.
pub fn build_affine(p: &CompensationParams) -> Tensor {
    let d = p.d();
    let r = build_rotation(&p.angles);
    let mut h = Tensor::identity(d);
    for k in 0..p.p.rows() {
        for i in 0..d {
            for j in 0..d {
                h.set(i, j, h.get(i, j) + p.p.get(k, i) * p.w.get(k, j));
            }
        }
    }
    let rs = Tensor::from_fn(d, d, |i, j| r.get(i, j) * p.scales[j]);
    rs.matmul(&h).expect("square factors")
}

/// `t*_i = A t_i + b + a ⊙ sin(ω ⊙ t_i + φ)` on plain values.
pub fn apply_compensation(t: &Tensor, p: &CompensationParams) -> Tensor {
    let a_mat = build_affine(p);
    let lin = t.matmul(&a_mat.transpose()).expect("width d");
    Tensor::from_fn(t.rows(), t.cols(), |i, j| {
        lin.get(i, j) + p.b[j] + p.a[j] * (p.omega[j] * t.get(i, j) + p.phi[j]).sin()
    })
}

/// Differentiable transform parameters, one set per molecule.
#[derive(Clone, Copy, Debug)]
pub struct GeneratedParams {
    pub angles: Var,
    pub scales: Var,
    pub p: Var,
    pub w: Var,
    pub b: Var,
    pub a: Var,
    pub omega: Var,
    pub phi: Var,
}

impl GeneratedParams {
    pub fn values(&self, s: &Session) -> CompensationParams {
        let row = |v: Var| s.value(v).data().to_vec();
        CompensationParams {
            angles: row(self.angles),
            scales: row(self.scales),
            p: s.value(self.p).clone(),
            w: s.value(self.w).clone(),
            b: row(self.b),
            a: row(self.a),
            omega: row(self.omega),
            phi: row(self.phi),
        }
    }

    /// Binds plain parameters as constants.
    pub fn constant(s: &mut Session, p: &CompensationParams) -> Self {
        let mut row = |v: &[f64]| s.constant(Tensor::row(v.to_vec()));
        let angles = row(&p.angles);
        let b = row(&p.b);
        let a = row(&p.a);
        let omega = row(&p.omega);
        let phi = row(&p.phi);
        let scales = row(&p.scales);
        let pv = s.constant(p.p.clone());
        let wv = s.constant(p.w.clone());
        Self {
            angles,
            scales,
            p: pv,
            w: wv,
            b,
            a,
            omega,
            phi,
        }
    }
}

/// Maps the pooled residual `mean(v⁻)` to transform parameters. Output layers
/// start at zero weight with biases at the neutral values.
#[derive(Clone, Debug)]
pub struct ParamGenerator {
    pub d: usize,
    pub k: usize,
    hidden: Linear,
    angles: Linear,
    scales: Linear,
    p: Linear,
    w: Linear,
    b: Linear,
    a: Linear,
    omega: Linear,
    phi: Linear,
}

impl ParamGenerator {
    pub fn new(store: &mut ParamStore, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = Linear::new(store, "gen.hidden", d, d, rng);
        let w_init = Tensor::from_fn(1, k * d, |_, _| rng.gen_range(-0.1..0.1));
        let mut head = |name: &str, out: usize, bias: Tensor| Linear {
            w: store.register(format!("gen.{name}.w"), Tensor::zeros(d, out)),
            b: store.register(format!("gen.{name}.b"), bias),
        };
        let angles = head("angles", d - 1, Tensor::zeros(1, d - 1));
        let scales = head("scales", d, Tensor::zeros(1, d));
        let p = head("p", k * d, Tensor::zeros(1, k * d));
        let b = head("b", d, Tensor::zeros(1, d));
        let a = head("a", d, Tensor::zeros(1, d));
        let omega = head("omega", d, Tensor::filled(1, d, 1.0));
        let phi = head("phi", d, Tensor::zeros(1, d));
        let w = head("w", k * d, w_init);
        Self {
            d,
            k,
            hidden,
            angles,
            scales,
            p,
            w,
            b,
            a,
            omega,
            phi,
        }
    }

    pub fn forward(&self, s: &mut Session, v_minus: Var) -> Result<GeneratedParams, DiffError> {
        let pooled = s.mean_rows(v_minus);
        let h = self.hidden.forward(s, pooled)?;
        let h = s.tanh(h);
        let angles = self.angles.forward(s, h)?;
        let raw = self.scales.forward(s, h)?;
        // softplus(0 + ln(e − 1)) = 1
        let raw = s.offset(raw, (std::f64::consts::E - 1.0).ln());
        let scales = s.softplus(raw);
        let p = self.p.forward(s, h)?;
        let p = s.reshape(p, self.k, self.d)?;
        let w = self.w.forward(s, h)?;
        let w = s.reshape(w, self.k, self.d)?;
        Ok(GeneratedParams {
            angles,
            scales,
            p,
            w,
            b: self.b.forward(s, h)?,
            a: self.a.forward(s, h)?,
            omega: self.omega.forward(s, h)?,
            phi: self.phi.forward(s, h)?,
        })
    }
}

/// Differentiable Givens product from a `1 × (d−1)` angle row.
pub fn rotation_var(s: &mut Session, angles: Var) -> Result<Var, DiffError> {
    let d = s.shape(angles).1 + 1;
    let cos = s.cos(angles);
    let sin = s.sin(angles);
    let cs = s.concat_rows(cos, sin)?;
    let mut r = s.constant(Tensor::identity(d));
    for i in 0..d - 1 {
        let mut rest = Tensor::identity(d);
        rest.set(i, i, 0.0);
        rest.set(i + 1, i + 1, 0.0);
        // cs is 2 × (d−1): cos at i, sin at (d−1) + i
        let (c, sn) = (i, d - 1 + i);
        let entries = vec![
            MapEntry { src: c, dst: i * d + i, coef: 1.0 },
            MapEntry { src: sn, dst: i * d + i + 1, coef: -1.0 },
            MapEntry { src: sn, dst: (i + 1) * d + i, coef: 1.0 },
            MapEntry { src: c, dst: (i + 1) * d + i + 1, coef: 1.0 },
        ];
        let block = s.sparse_map(cs, Rc::new(entries), d, d)?;
        let rest = s.constant(rest);
        let g = s.add(block, rest)?;
        r = s.matmul(r, g)?;
    }
    Ok(r)
}

/// Differentiable `A = R S H`.
pub fn affine_var(s: &mut Session, g: &GeneratedParams) -> Result<Var, DiffError> {
    let d = s.shape(g.scales).1;
    let r = rotation_var(s, g.angles)?;
    let rs = s.mul(r, g.scales)?;
    let pt = s.transpose(g.p);
    let pw = s.matmul(pt, g.w)?;
    let eye = s.constant(Tensor::identity(d));
    let h = s.add(eye, pw)?;
    s.matmul(rs, h)
}

/// Applies generated parameters to every row of `t`.
pub fn transform(s: &mut Session, t: Var, g: &GeneratedParams) -> Result<Var, DiffError> {
    let a = affine_var(s, g)?;
    let at = s.transpose(a);
    let lin = s.matmul(t, at)?;
    let lin = s.add(lin, g.b)?;
    let arg = s.mul(t, g.omega)?;
    let arg = s.add(arg, g.phi)?;
    let wave = s.sin(arg);
    let wave = s.mul(wave, g.a)?;
    s.add(lin, wave)
}

/// `t* = transform(t)` with parameters generated from `v⁻`.
pub fn compensate(
    s: &mut Session,
    gen: &ParamGenerator,
    t: Var,
    v_minus: Var,
) -> Result<(Var, GeneratedParams), DiffError> {
    if s.shape(t) != s.shape(v_minus) {
        return Err(DiffError::ShapeMismatch {
            op: "compensate",
            left: s.shape(t),
            right: s.shape(v_minus),
        });
    }
    let g = gen.forward(s, v_minus)?;
    Ok((transform(s, t, &g)?, g))
}

/// `D(v, t*) + λ₁ D(t, v⁺)` with `D` the mean smooth-L1 distance.
pub fn discrepancy_loss(s: &mut Session, v: Var, t_star: Var, t: Var, v_plus: Var, lambda1: f64) -> Result<Var, DiffError> {
    let first = s.smooth_l1(v, t_star)?;
    let second = s.smooth_l1(t, v_plus)?;
    let second = s.scale(second, lambda1);
    s.add(first, second)
}
