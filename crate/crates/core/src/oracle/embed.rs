use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::OracleError;
use crate::smiles::Molecule;

thread_local! {
    static CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`embed_3d`] calls made on this thread.
pub fn embed_calls() -> usize {
    CALLS.with(Cell::get)
}

pub fn reset_embed_calls() {
    CALLS.with(|c| c.set(0));
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedConfig {
    pub bond_length: f64,
    pub repulsion_floor: f64,
    pub min_distance: f64,
    pub steps: usize,
    pub step_size: f64,
    pub reseeds: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            bond_length: 1.5,
            repulsion_floor: 2.2,
            min_distance: 0.7,
            steps: 400,
            step_size: 0.1,
            reseeds: 3,
        }
    }
}

/// Places atoms on a seeded random sphere and relaxes a spring energy by a
/// fixed number of gradient steps: bonded pairs are pulled to `bond_length`,
/// other pairs are pushed apart while closer than `repulsion_floor`.
pub fn embed_3d(mol: &Molecule, seed: u64, cfg: &EmbedConfig) -> Result<Vec<[f64; 3]>, OracleError> {
    CALLS.with(|c| c.set(c.get() + 1));
    let n = mol.len();
    let mut bonded = vec![false; n * n];
    for &(a, b) in &mol.bonds {
        bonded[a * n + b] = true;
        bonded[b * n + a] = true;
    }
    let mut best = 0.0;
    for attempt in 0..=cfg.reseeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let coords = relax(n, &bonded, &mut rng, cfg);
        let d = min_distance(&coords);
        if d >= cfg.min_distance {
            return Ok(coords);
        }
        best = d;
    }
    Err(OracleError::EmbedFailure {
        min_dist: best,
        attempts: cfg.reseeds + 1,
    })
}

fn relax(n: usize, bonded: &[bool], rng: &mut ChaCha8Rng, cfg: &EmbedConfig) -> Vec<[f64; 3]> {
    let radius = cfg.bond_length * (n as f64).cbrt();
    let mut x: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            // rejection-sample a direction inside the unit ball
            loop {
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let r2: f64 = p.iter().map(|v| v * v).sum();
                if r2 > 1e-4 && r2 <= 1.0 {
                    let s = radius / r2.sqrt();
                    break [p[0] * s, p[1] * s, p[2] * s];
                }
            }
        })
        .collect();
    let mut g = vec![[0.0; 3]; n];
    for _ in 0..cfg.steps {
        for gi in g.iter_mut() {
            *gi = [0.0; 3];
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
                // dE/dr for E = (r - target)^2, active on bonds always and on
                // non-bonded pairs only inside the floor
                let coef = if bonded[i * n + j] {
                    2.0 * (r - cfg.bond_length)
                } else if r < cfg.repulsion_floor {
                    2.0 * (r - cfg.repulsion_floor)
                } else {
                    continue;
                };
                for k in 0..3 {
                    let f = coef * d[k] / r;
                    g[i][k] += f;
                    g[j][k] -= f;
                }
            }
        }
        for i in 0..n {
            let norm = (g[i][0].powi(2) + g[i][1].powi(2) + g[i][2].powi(2)).sqrt();
            let scale = if norm * cfg.step_size > 0.3 { 0.3 / norm } else { cfg.step_size };
            for k in 0..3 {
                x[i][k] -= scale * g[i][k];
            }
        }
    }
    x
}

fn min_distance(x: &[[f64; 3]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            best = best.min(crate::physics::dist2(&x[i], &x[j]).sqrt());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::Parsed;

    #[test]
    fn diatomic_reaches_bond_length() {
        let m = Parsed::new("[H][H]").unwrap().molecule;
        let x = embed_3d(&m, 7, &EmbedConfig::default()).unwrap();
        let d = crate::physics::dist2(&x[0], &x[1]).sqrt();
        assert!((d - 1.5).abs() < 0.15, "{d}");
    }

    #[test]
    fn deterministic_and_counted() {
        reset_embed_calls();
        let m = Parsed::new("CC(=O)Oc1ccccc1").unwrap().molecule;
        let a = embed_3d(&m, 3, &EmbedConfig::default()).unwrap();
        let b = embed_3d(&m, 3, &EmbedConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(embed_calls(), 2);
        let c = embed_3d(&m, 4, &EmbedConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_atom() {
        let m = Parsed::new("[H]").unwrap().molecule;
        assert_eq!(embed_3d(&m, 0, &EmbedConfig::default()).unwrap().len(), 1);
    }
}
