use serde::{Deserialize, Serialize};

use super::fragment::Fragment;
use super::parse::MolGraph;
use super::Element;

/// A molecule with every hydrogen explicit. Graph atoms keep their indices;
/// implicit hydrogens follow, grouped by parent in parent order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub elements: Vec<Element>,
    /// Number of atoms that came from the graph itself.
    pub n_graph: usize,
    /// Graph atom an added hydrogen hangs off; `None` for graph atoms.
    pub parent: Vec<Option<usize>>,
    /// Connectivity of the expanded molecule.
    pub bonds: Vec<(usize, usize)>,
    /// Fragment index per expanded atom; hydrogens join their parent.
    pub fragment_of: Vec<usize>,
    pub n_fragments: usize,
    /// Electrons in bonding pairs: the sum of every atom's resolved valence.
    pub electrons: usize,
}

impl Molecule {
    pub fn from_graph(g: &MolGraph, frags: &[Fragment]) -> Self {
        let mut elements: Vec<Element> = g.atoms.iter().map(|a| a.element).collect();
        let mut parent = vec![None; g.atoms.len()];
        let mut bonds: Vec<(usize, usize)> = g.bonds.iter().map(|b| (b.a, b.b)).collect();
        let mut fragment_of = vec![0; g.atoms.len()];
        for f in frags {
            for &a in &f.atoms {
                fragment_of[a] = f.id;
            }
        }
        let mut electrons: usize = g.atoms.iter().map(|a| a.valence as usize).sum();
        for (i, a) in g.atoms.iter().enumerate() {
            for _ in 0..a.h_count {
                let h = elements.len();
                elements.push(Element::H);
                parent.push(Some(i));
                bonds.push((i, h));
                fragment_of.push(fragment_of[i]);
                electrons += 1;
            }
        }
        Self {
            n_graph: g.atoms.len(),
            elements,
            parent,
            bonds,
            fragment_of,
            n_fragments: frags.len().max(1),
            electrons,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Graph atom whose token row an expanded atom reads from.
    pub fn source_atom(&self, i: usize) -> usize {
        self.parent[i].unwrap_or(i)
    }

    /// Expanded atom indices of each fragment, ascending.
    pub fn fragment_atoms(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_fragments];
        for (i, &f) in self.fragment_of.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    pub fn contains(&self, e: Element) -> bool {
        self.elements.contains(&e)
    }
}

#[cfg(test)]
mod tests {
    use crate::smiles::{Element, Parsed};

    #[test]
    fn water_expansion() {
        let p = Parsed::new("O").unwrap();
        let m = &p.molecule;
        assert_eq!(m.elements, [Element::O, Element::H, Element::H]);
        assert_eq!(m.parent, [None, Some(0), Some(0)]);
        assert_eq!(m.electrons, 4);
        assert_eq!(m.source_atom(2), 0);
    }

    #[test]
    fn ethanol_expansion() {
        let m = Parsed::new("CCO").unwrap().molecule;
        assert_eq!(m.len(), 9);
        assert_eq!(m.bonds.len(), 8);
        assert_eq!(m.electrons, 16);
    }

    #[test]
    fn hydrogens_follow_parent_fragment() {
        let m = Parsed::new("CCOCC").unwrap().molecule;
        let f = m.fragment_atoms();
        assert_eq!(f.len(), 2);
        for (i, &fi) in m.fragment_of.iter().enumerate() {
            assert_eq!(fi, m.fragment_of[m.source_atom(i)]);
        }
        assert_eq!(f[0].len() + f[1].len(), 5 + 10);
    }

    #[test]
    fn aromatic_electron_parity() {
        for s in ["c1ccccc1", "c1ccncc1", "c1cc[nH]c1", "c1ccoc1", "c1ccsc1"] {
            let m = Parsed::new(s).unwrap().molecule;
            assert_eq!(m.electrons % 2, 0, "{s}");
        }
        assert_eq!(Parsed::new("[CH3]").unwrap().molecule.electrons % 2, 1);
    }
}
