use crate::basis::orbital_list;
use crate::diff::Tensor;
use crate::physics::{toy_overlap, PhysicsError};
use crate::smiles::Element;

/// Proportionality constant between off-diagonal H and overlap.
pub const WOLFSBERG_HELMHOLZ: f64 = 1.75;

/// Extended-Hückel style `(H, S)`: `H_μμ = e_μ`,
/// `H_μν = K S_μν (e_μ + e_ν) / 2`.
pub fn huckel_labels(elements: &[Element], coords: &[[f64; 3]]) -> Result<(Tensor, Tensor), PhysicsError> {
    let s = toy_overlap(elements, coords)?;
    let e: Vec<f64> = orbital_list(elements).iter().map(|o| o.onsite).collect();
    let n = e.len();
    let h = Tensor::from_fn(n, n, |i, j| {
        if i == j {
            e[i]
        } else {
            WOLFSBERG_HELMHOLZ * s.get(i, j) * (e[i] + e[j]) / 2.0
        }
    });
    Ok((h, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hydrogen_atom() {
        let (h, s) = huckel_labels(&[Element::H], &[[0.0; 3]]).unwrap();
        assert_eq!(h, Tensor::scalar(-0.5));
        assert_eq!(s, Tensor::scalar(1.0));
    }

    #[test]
    fn far_atoms_decouple() {
        let (h, _) = huckel_labels(&[Element::H, Element::C], &[[0.0; 3], [60.0, 0.0, 0.0]]).unwrap();
        assert_eq!(h.get(0, 1), 0.0);
        assert_eq!(h.get(0, 2), 0.0);
        assert_eq!(h.max_asymmetry(), 0.0);
    }
}
