use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tokenize::{parse_bracket, Token, TokenKind};
use super::{Element, SmilesError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's bond-order sum; aromatic bonds count once
    /// and the aromatic atom carries the extra unit.
    pub fn valence_units(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    /// Hydrogens attached to this atom (implicit ones resolved by valence).
    pub h_count: u8,
    /// Bonding valence this atom was resolved to.
    pub valence: u8,
    /// Index of the atom's own token.
    pub token: usize,
    pub bracket: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub in_ring: bool,
}

/// A parsed single-component molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Per atom: its token plus any ring-closure tokens (and bond symbols in
    /// front of them) written directly after it.
    pub atom_tokens: Vec<Vec<usize>>,
    pub n_tokens: usize,
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
}

fn bond_from_text(text: &str) -> Option<BondOrder> {
    match text {
        "-" | "/" | "\\" => Some(BondOrder::Single),
        "=" => Some(BondOrder::Double),
        "#" => Some(BondOrder::Triple),
        ":" => Some(BondOrder::Aromatic),
        _ => None,
    }
}

/// Builds the molecular graph, resolves implicit hydrogens and flags ring bonds.
pub fn parse(tokens: &[Token]) -> Result<MolGraph, SmilesError> {
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut atom_tokens: Vec<Vec<usize>> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branch_stack: Vec<Option<usize>> = Vec::new();
    let mut pending: Option<(BondOrder, usize)> = None;
    let mut rings: BTreeMap<String, OpenRing> = BTreeMap::new();

    let default_order = |atoms: &[Atom], a: usize, b: usize| {
        if atoms[a].aromatic && atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    };

    for (ti, tok) in tokens.iter().enumerate() {
        match tok.kind {
            TokenKind::Atom | TokenKind::BracketAtom => {
                let atom = if tok.kind == TokenKind::BracketAtom {
                    let b = parse_bracket(&tok.text, ti)?;
                    Atom {
                        element: b.element,
                        aromatic: b.aromatic,
                        charge: b.charge,
                        h_count: b.h_count,
                        valence: 0,
                        token: ti,
                        bracket: true,
                    }
                } else {
                    let aromatic = tok.text.chars().all(|c| c.is_ascii_lowercase());
                    let sym = if aromatic {
                        tok.text.to_ascii_uppercase()
                    } else {
                        tok.text.clone()
                    };
                    let element = Element::from_symbol(&sym).ok_or_else(|| SmilesError::UnknownSymbol {
                        symbol: tok.text.clone(),
                        position: ti,
                    })?;
                    Atom {
                        element,
                        aromatic,
                        charge: 0,
                        h_count: 0,
                        valence: 0,
                        token: ti,
                        bracket: false,
                    }
                };
                atoms.push(atom);
                atom_tokens.push(vec![ti]);
                let idx = atoms.len() - 1;
                if let Some(p) = prev {
                    let order = match pending.take() {
                        Some((o, _)) => o,
                        None => default_order(&atoms, p, idx),
                    };
                    bonds.push(Bond {
                        a: p,
                        b: idx,
                        order,
                        in_ring: false,
                    });
                } else if let Some((_, pos)) = pending {
                    return Err(SmilesError::DanglingBond { position: pos });
                }
                prev = Some(idx);
            }
            TokenKind::Bond => {
                if prev.is_none() || pending.is_some() {
                    return Err(SmilesError::DanglingBond { position: ti });
                }
                let order = bond_from_text(&tok.text).ok_or_else(|| SmilesError::UnknownSymbol {
                    symbol: tok.text.clone(),
                    position: ti,
                })?;
                pending = Some((order, ti));
            }
            TokenKind::RingClosure => {
                let cur = prev.ok_or(SmilesError::UnmatchedRingClosure { position: ti })?;
                let label = tok.text.trim_start_matches('%').to_string();
                let explicit = pending.take();
                if let Some((_, bpos)) = explicit {
                    atom_tokens[cur].push(bpos);
                }
                atom_tokens[cur].push(ti);
                match rings.remove(&label) {
                    Some(open) => {
                        if open.atom == cur
                            || bonds.iter().any(|b| {
                                (b.a == open.atom && b.b == cur) || (b.a == cur && b.b == open.atom)
                            })
                        {
                            return Err(SmilesError::UnmatchedRingClosure { position: ti });
                        }
                        let order = explicit
                            .map(|(o, _)| o)
                            .or(open.order)
                            .unwrap_or_else(|| default_order(&atoms, open.atom, cur));
                        bonds.push(Bond {
                            a: open.atom,
                            b: cur,
                            order,
                            in_ring: false,
                        });
                    }
                    None => {
                        rings.insert(
                            label,
                            OpenRing {
                                atom: cur,
                                order: explicit.map(|(o, _)| o),
                            },
                        );
                    }
                }
            }
            TokenKind::BranchOpen => {
                if prev.is_none() || pending.is_some() {
                    return Err(SmilesError::UnbalancedBranch { position: ti });
                }
                branch_stack.push(prev);
            }
            TokenKind::BranchClose => {
                if let Some((_, pos)) = pending {
                    return Err(SmilesError::DanglingBond { position: pos });
                }
                prev = branch_stack
                    .pop()
                    .ok_or(SmilesError::UnbalancedBranch { position: ti })?;
            }
            TokenKind::Mask => {
                return Err(SmilesError::UnknownSymbol {
                    symbol: tok.text.clone(),
                    position: ti,
                })
            }
        }
    }
    if let Some((_, pos)) = pending {
        return Err(SmilesError::DanglingBond { position: pos });
    }
    if !branch_stack.is_empty() {
        return Err(SmilesError::UnbalancedBranch {
            position: tokens.len(),
        });
    }
    if let Some((_, open)) = rings.into_iter().next() {
        return Err(SmilesError::UnmatchedRingClosure {
            position: atoms[open.atom].token,
        });
    }
    if atoms.is_empty() {
        return Err(SmilesError::Empty);
    }

    resolve_hydrogens(&mut atoms, &bonds)?;
    let mut graph = MolGraph {
        atoms,
        bonds,
        atom_tokens,
        n_tokens: tokens.len(),
    };
    mark_ring_bonds(&mut graph);
    Ok(graph)
}

fn resolve_hydrogens(atoms: &mut [Atom], bonds: &[Bond]) -> Result<(), SmilesError> {
    let mut sums = vec![0u8; atoms.len()];
    for b in bonds {
        sums[b.a] += b.order.valence_units();
        sums[b.b] += b.order.valence_units();
    }
    for (i, atom) in atoms.iter_mut().enumerate() {
        let allowed = atom.element.valences(atom.charge);
        if atom.bracket {
            let used = sums[i] + atom.h_count;
            atom.valence = allowed.iter().copied().find(|&v| v >= used).ok_or(
                SmilesError::ValenceExceeded {
                    atom: i,
                    element: atom.element,
                    valence: used,
                },
            )?;
            continue;
        }
        let v = allowed.iter().copied().find(|&v| v >= sums[i]).ok_or(
            SmilesError::ValenceExceeded {
                atom: i,
                element: atom.element,
                valence: sums[i],
            },
        )?;
        // one unit of an aromatic atom's valence belongs to the pi system
        let pi = u8::from(atom.aromatic);
        atom.h_count = v.saturating_sub(sums[i] + pi);
        atom.valence = v;
    }
    Ok(())
}

/// A bond is a ring bond iff it is not a bridge; bridges found by lowlink DFS.
fn mark_ring_bonds(g: &mut MolGraph) {
    let n = g.atoms.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, b) in g.bonds.iter().enumerate() {
        adj[b.a].push((b.b, bi));
        adj[b.b].push((b.a, bi));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; g.bonds.len()];
    let mut timer = 0;
    // iterative DFS: (node, parent edge, next neighbour cursor)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(&mut (u, pe, ref mut cursor)) = stack.last_mut() {
            if *cursor < adj[u].len() {
                let (w, ei) = adj[u][*cursor];
                *cursor += 1;
                if ei == pe {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, ei, 0));
                } else {
                    low[u] = low[u].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        is_bridge[pe] = true;
                    }
                }
            }
        }
    }
    for (b, bridge) in g.bonds.iter_mut().zip(is_bridge) {
        b.in_ring = !bridge;
    }
}

impl MolGraph {
    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element.is_heavy()).count()
    }

    /// Atom count once every attached hydrogen is made explicit.
    pub fn total_atom_count(&self) -> usize {
        self.atoms.len() + self.atoms.iter().map(|a| a.h_count as usize).sum::<usize>()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.bonds.iter().filter_map(move |b| {
            if b.a == atom {
                Some(b.b)
            } else if b.b == atom {
                Some(b.a)
            } else {
                None
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::tokenize;

    fn mol(s: &str) -> MolGraph {
        parse(&tokenize(s).unwrap()).unwrap()
    }

    fn hs(g: &MolGraph) -> Vec<u8> {
        g.atoms.iter().map(|a| a.h_count).collect()
    }

    #[test]
    fn ethanol_counts() {
        let g = mol("CCO");
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.bonds.len(), 2);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single && !b.in_ring));
        assert_eq!(hs(&g), [3, 2, 1]);
    }

    #[test]
    fn cyclopropane_ring_flags() {
        let g = mol("C1CC1");
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.bonds.len(), 3);
        assert!(g.bonds.iter().all(|b| b.in_ring));
        assert_eq!(hs(&g), [2, 2, 2]);
    }

    #[test]
    fn benzene_and_pyridine_hydrogens() {
        let g = mol("c1ccccc1");
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic && b.in_ring));
        assert_eq!(hs(&g), [1; 6]);
        let g = mol("c1ccncc1");
        assert_eq!(hs(&g), [1, 1, 1, 0, 1, 1]);
        let g = mol("c1cc[nH]c1");
        assert_eq!(hs(&g), [1, 1, 1, 1, 1]);
        let g = mol("c1ccoc1");
        assert_eq!(hs(&g)[3], 0);
    }

    #[test]
    fn naphthalene_junction_has_no_h() {
        let g = mol("c1ccc2ccccc2c1");
        let zero_h = g.atoms.iter().filter(|a| a.h_count == 0).count();
        assert_eq!(zero_h, 2);
        assert_eq!(g.bonds.len(), 11);
    }

    #[test]
    fn substituent_is_not_a_ring_bond() {
        let g = mol("Cc1ccccc1");
        assert!(!g.bonds[0].in_ring);
        assert!(g.bonds[1..].iter().all(|b| b.in_ring));
    }

    #[test]
    fn branches_and_multiple_bonds() {
        let g = mol("CC(=O)O");
        assert_eq!(g.bonds[1].order, BondOrder::Double);
        assert_eq!(g.bonds[2].a, 1);
        assert_eq!(hs(&g), [3, 0, 0, 1]);
        let g = mol("C#N");
        assert_eq!(hs(&g), [1, 0]);
        let g = mol("CS(=O)(=O)O");
        assert_eq!(g.atoms[1].valence, 6);
        let g = mol("CP(=O)(O)O");
        assert_eq!(g.atoms[1].valence, 5);
    }

    #[test]
    fn ring_bond_symbol_and_token_attribution() {
        let g = mol("C=1CCCCC1");
        assert_eq!(g.bonds.last().unwrap().order, BondOrder::Double);
        // "C" "=" "1": the bond symbol before the ring digit belongs to atom 0
        assert_eq!(g.atom_tokens[0], vec![0, 1, 2]);
        assert_eq!(g.atom_tokens[5], vec![7, 8]);
    }

    #[test]
    fn hydrogen_molecule() {
        let g = mol("[H][H]");
        assert_eq!(g.atoms.len(), 2);
        assert_eq!(g.bonds.len(), 1);
        assert_eq!(g.heavy_atom_count(), 0);
        assert_eq!(g.total_atom_count(), 2);
    }

    #[test]
    fn stereo_marks_are_ignored() {
        let g = mol("F/C=C\\F");
        assert_eq!(g.atoms.len(), 4);
        assert_eq!(g.bonds[1].order, BondOrder::Double);
        let g = mol("N[C@@H](C)C(=O)O");
        assert_eq!(g.atoms[1].h_count, 1);
    }

    #[test]
    fn error_paths() {
        let p = |s: &str| parse(&tokenize(s).unwrap());
        assert!(matches!(p("C1CC"), Err(SmilesError::UnmatchedRingClosure { .. })));
        assert!(matches!(p("1CC"), Err(SmilesError::UnmatchedRingClosure { .. })));
        assert!(matches!(p("CC(C"), Err(SmilesError::UnbalancedBranch { .. })));
        assert!(matches!(p("CC)C"), Err(SmilesError::UnbalancedBranch { .. })));
        assert!(matches!(p("(C)C"), Err(SmilesError::UnbalancedBranch { .. })));
        assert!(matches!(p("C(C)(C)(C)(C)C"), Err(SmilesError::ValenceExceeded { .. })));
        assert!(matches!(p("FC(F)(F)(F)F"), Err(SmilesError::ValenceExceeded { .. })));
        assert!(matches!(p("O=O=O"), Err(SmilesError::ValenceExceeded { .. })));
        assert!(matches!(p("CC="), Err(SmilesError::DanglingBond { .. })));
        assert!(matches!(p("C11"), Err(SmilesError::UnmatchedRingClosure { .. })));
    }

    #[test]
    fn charged_brackets() {
        let g = mol("C[N+](C)(C)C");
        assert_eq!(g.atoms[1].valence, 4);
        let g = mol("CC(=O)[O-]");
        assert_eq!(g.atoms[3].valence, 1);
        assert!(matches!(
            parse(&tokenize("C[O-](C)C").unwrap()),
            Err(SmilesError::ValenceExceeded { .. })
        ));
    }
}
