//! Helpers shared by the integration tests.
#![allow(dead_code)]

use molham::diff::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let x = rng.gen_range(-1.0..1.0);
            a.set(i, j, x);
            a.set(j, i, x);
        }
    }
    a
}

/// `BᵀB + n·δ·I` with a random `B`; well conditioned and SPD.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let b = Tensor::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut s = b.transpose().matmul(&b).unwrap();
    for i in 0..n {
        s.set(i, i, s.get(i, i) + 0.1 * n as f64);
    }
    // exact symmetry for the solver's input check
    Tensor::from_fn(n, n, |i, j| s.get(i.min(j), i.max(j)))
}

/// Eigenvalues by Householder tridiagonalisation followed by implicit QL
/// iteration with Wilkinson-style shifts. Independent of the Jacobi solver.
pub fn qr_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row_slice(i).to_vec()).collect();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| m[i][k]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.clone();
        v[0] -= alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        for t in v.iter_mut() {
            *t /= vn;
        }
        // M <- H M H with H = I - 2 v vᵀ on rows/cols k+1..n
        for j in 0..n {
            let dot: f64 = (0..v.len()).map(|i| v[i] * m[k + 1 + i][j]).sum();
            for i in 0..v.len() {
                m[k + 1 + i][j] -= 2.0 * v[i] * dot;
            }
        }
        for row in m.iter_mut() {
            let dot: f64 = (0..v.len()).map(|i| v[i] * row[k + 1 + i]).sum();
            for i in 0..v.len() {
                row[k + 1 + i] -= 2.0 * v[i] * dot;
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    let mut e: Vec<f64> = (0..n).map(|i| if i + 1 < n { m[i + 1][i] } else { 0.0 }).collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut mm = l;
            while mm + 1 < n {
                let dd = d[mm].abs() + d[mm + 1].abs();
                if e[mm].abs() <= f64::EPSILON * dd {
                    break;
                }
                mm += 1;
            }
            if mm == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "QL iteration stalled");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[mm] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..mm).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[mm] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[mm] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// `max |A_ij - B_ij|`
pub fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).max_abs()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Random proper rotation followed by a random translation.
pub fn rigid_motion(x: &[[f64; 3]], rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let (a, b, c): (f64, f64, f64) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
    let t = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
    let apply = |m: &[[f64; 3]; 3], p: [f64; 3]| {
        let mut o = [0.0; 3];
        for (i, oi) in o.iter_mut().enumerate() {
            *oi = (0..3).map(|k| m[i][k] * p[k]).sum();
        }
        o
    };
    x.iter()
        .map(|&p| {
            let q = apply(&rx, apply(&ry, apply(&rz, p)));
            [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
        })
        .collect()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &Tensor) -> f64 {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row_slice(i).to_vec()).collect();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(piv, col);
            det = -det;
        }
        det *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for k in col..n {
                m[r][k] -= f * m[col][k];
            }
        }
    }
    det
}

/// `tanh(x W1 + b1) W2 + b2` with plain matrices.
pub fn mlp_plain(store: &molham::nn::ParamStore, mlp: &molham::nn::Mlp, x: &Tensor) -> Tensor {
    let h = linear_plain(store, &mlp.l1, x).map(f64::tanh);
    linear_plain(store, &mlp.l2, &h)
}

pub fn linear_plain(store: &molham::nn::ParamStore, l: &molham::nn::Linear, x: &Tensor) -> Tensor {
    let xw = x.matmul(store.get(l.w)).unwrap();
    let b = store.get(l.b);
    Tensor::from_fn(xw.rows(), xw.cols(), |i, j| xw.get(i, j) + b.get(0, j))
}

pub fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let m = a.row_slice(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.row_slice(i).iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (j, x) in e.iter().enumerate() {
            out.set(i, j, x / z);
        }
    }
    out
}

pub fn normalize_rows(a: &Tensor) -> Tensor {
    Tensor::from_fn(a.rows(), a.cols(), |i, j| {
        let n: f64 = a.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        a.get(i, j) / n
    })
}
