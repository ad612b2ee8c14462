//! Minimal valence orbital basis and the atom-block layout of matrices over it.

use serde::{Deserialize, Serialize};

use crate::smiles::Element;

/// Hartree to electron-volt conversion.
pub const HARTREE_TO_EV: f64 = 27.2114;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrbitalKind {
    S,
    /// A single spherically averaged stand-in for the valence p shell.
    P,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbital {
    pub kind: OrbitalKind,
    /// Gaussian exponent in bohr⁻².
    pub exponent: f64,
    /// Onsite energy in Hartree.
    pub onsite: f64,
}

const fn ev(x: f64) -> f64 {
    x / HARTREE_TO_EV
}

/// Per-element orbitals: hydrogen carries one s function, every heavy atom
/// an s and a p-effective function. Heavy-atom onsite energies are the usual
/// extended-Hückel valence ionisation energies.
pub fn orbitals(e: Element) -> &'static [Orbital] {
    use OrbitalKind::{P, S};
    macro_rules! sp {
        ($as:expr, $es:expr, $ap:expr, $ep:expr) => {{
            const O: [Orbital; 2] = [
                Orbital { kind: S, exponent: $as, onsite: ev($es) },
                Orbital { kind: P, exponent: $ap, onsite: ev($ep) },
            ];
            &O
        }};
    }
    match e {
        Element::H => &[Orbital { kind: S, exponent: 0.30, onsite: -0.5 }],
        Element::B => sp!(0.45, -15.2, 0.16, -8.5),
        Element::C => sp!(0.55, -21.4, 0.20, -11.4),
        Element::N => sp!(0.65, -26.0, 0.24, -13.4),
        Element::O => sp!(0.75, -32.3, 0.28, -14.8),
        Element::F => sp!(0.90, -40.0, 0.33, -18.1),
        Element::P => sp!(0.40, -18.6, 0.15, -14.0),
        Element::S => sp!(0.45, -20.0, 0.17, -13.3),
        Element::Cl => sp!(0.50, -26.3, 0.19, -14.2),
        Element::Br => sp!(0.42, -22.07, 0.16, -13.1),
        Element::I => sp!(0.36, -18.0, 0.13, -12.7),
    }
}

/// Orbital offsets per atom for a matrix over the whole molecule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub offsets: Vec<usize>,
    pub counts: Vec<usize>,
    pub n_orb: usize,
    /// Owning atom of every orbital.
    pub atom_of: Vec<usize>,
    pub kinds: Vec<OrbitalKind>,
}

impl BlockLayout {
    pub fn new(elements: &[Element]) -> Self {
        let mut offsets = Vec::with_capacity(elements.len());
        let mut counts = Vec::with_capacity(elements.len());
        let mut atom_of = Vec::new();
        let mut kinds = Vec::new();
        for (i, &e) in elements.iter().enumerate() {
            offsets.push(atom_of.len());
            counts.push(orbitals(e).len());
            for o in orbitals(e) {
                atom_of.push(i);
                kinds.push(o.kind);
            }
        }
        Self {
            offsets,
            counts,
            n_orb: atom_of.len(),
            atom_of,
            kinds,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.offsets.len()
    }

    /// True when both orbitals sit on the same atom.
    pub fn is_diag(&self, r: usize, c: usize) -> bool {
        self.atom_of[r] == self.atom_of[c]
    }
}

/// Per-orbital parameters in layout order.
pub fn orbital_list(elements: &[Element]) -> Vec<Orbital> {
    elements.iter().flat_map(|&e| orbitals(e).iter().copied()).collect()
}
