use serde::{Deserialize, Serialize};

use super::parse::{BondOrder, MolGraph};
use super::tokenize::{Token, TokenKind, MASK_TEXT};
use super::SmilesError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub id: usize,
    /// Member atoms, ascending.
    pub atoms: Vec<usize>,
    /// Tokens attributed to the member atoms, ascending.
    pub tokens: Vec<usize>,
}

/// Greedy cleavage in bond order: a bond is cut when it is an acyclic single
/// bond between heavy atoms and both resulting pieces keep at least two heavy
/// atoms. Fragments are numbered by their smallest atom index.
pub fn fragment(g: &MolGraph) -> Vec<Fragment> {
    let n = g.atoms.len();
    let mut cut = vec![false; g.bonds.len()];
    for (bi, b) in g.bonds.iter().enumerate() {
        if b.in_ring
            || b.order != BondOrder::Single
            || !g.atoms[b.a].element.is_heavy()
            || !g.atoms[b.b].element.is_heavy()
        {
            continue;
        }
        cut[bi] = true;
        let comp = components(g, &cut);
        let heavy = |root: usize| {
            (0..n)
                .filter(|&i| comp[i] == comp[root] && g.atoms[i].element.is_heavy())
                .count()
        };
        if heavy(b.a) < 2 || heavy(b.b) < 2 {
            cut[bi] = false;
        }
    }
    let comp = components(g, &cut);
    let mut order: Vec<usize> = Vec::new();
    for &c in &comp {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    order
        .iter()
        .enumerate()
        .map(|(id, &c)| {
            let atoms: Vec<usize> = (0..n).filter(|&i| comp[i] == c).collect();
            let mut tokens: Vec<usize> = atoms
                .iter()
                .flat_map(|&a| g.atom_tokens[a].iter().copied())
                .collect();
            tokens.sort_unstable();
            Fragment { id, atoms, tokens }
        })
        .collect()
}

/// Component label per atom, ignoring cut bonds. Labels are the smallest
/// atom index in each component.
fn components(g: &MolGraph, cut: &[bool]) -> Vec<usize> {
    let n = g.atoms.len();
    let mut label = vec![usize::MAX; n];
    for root in 0..n {
        if label[root] != usize::MAX {
            continue;
        }
        label[root] = root;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for (bi, b) in g.bonds.iter().enumerate() {
                if cut[bi] {
                    continue;
                }
                let w = if b.a == u {
                    b.b
                } else if b.b == u {
                    b.a
                } else {
                    continue;
                };
                if label[w] == usize::MAX {
                    label[w] = root;
                    stack.push(w);
                }
            }
        }
    }
    label
}

/// `{"0": [atoms...], "1": [...]}`
pub fn fragments_to_json(frags: &[Fragment]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = frags
        .iter()
        .map(|f| (f.id.to_string(), serde_json::json!(f.atoms)))
        .collect();
    serde_json::Value::Object(map)
}

/// Replaces the atom tokens of every fragment whose mask entry is `false`
/// with the mask token. Length and positions are preserved.
pub fn mask_tokens(tokens: &[Token], frags: &[Fragment], keep: &[bool]) -> Result<Vec<Token>, SmilesError> {
    if keep.len() != frags.len() {
        return Err(SmilesError::LengthMismatch {
            expected: frags.len(),
            got: keep.len(),
        });
    }
    let mut out = tokens.to_vec();
    for (f, &k) in frags.iter().zip(keep) {
        if k {
            continue;
        }
        for &ti in &f.tokens {
            let t = &mut out[ti];
            if matches!(t.kind, TokenKind::Atom | TokenKind::BracketAtom) {
                t.kind = TokenKind::Mask;
                t.text = MASK_TEXT.to_string();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::{parse, tokenize};

    fn frags(s: &str) -> Vec<Vec<usize>> {
        let g = parse(&tokenize(s).unwrap()).unwrap();
        fragment(&g).into_iter().map(|f| f.atoms).collect()
    }

    #[test]
    fn minimum_size_rule() {
        assert_eq!(frags("CCO"), vec![vec![0, 1, 2]]);
        assert_eq!(frags("C"), vec![vec![0]]);
    }

    #[test]
    fn diethyl_ether_rule_trace() {
        // C0-C1 leaves a lone methyl; C1-O2 leaves {0,1} | {2,3,4}; the rest
        // would leave singletons
        assert_eq!(frags("CCOCC"), vec![vec![0, 1], vec![2, 3, 4]]);
    }

    #[test]
    fn rings_are_never_cut() {
        assert_eq!(frags("c1ccccc1").len(), 1);
        assert_eq!(frags("C1CCCCC1").len(), 1);
        assert_eq!(frags("CCc1ccccc1"), vec![vec![0, 1], (2..8).collect()]);
    }

    #[test]
    fn double_bonds_are_never_cut() {
        assert_eq!(frags("CC=CC").len(), 1);
    }

    #[test]
    fn json_shape() {
        let g = parse(&tokenize("CCOCC").unwrap()).unwrap();
        let j = fragments_to_json(&fragment(&g));
        assert_eq!(j, serde_json::json!({"0": [0, 1], "1": [2, 3, 4]}));
    }

    #[test]
    fn masking() {
        let toks = tokenize("CCOCC").unwrap();
        let g = parse(&toks).unwrap();
        let f = fragment(&g);
        assert_eq!(mask_tokens(&toks, &f, &[true, true]).unwrap(), toks);
        let m = mask_tokens(&toks, &f, &[true, false]).unwrap();
        let kinds: Vec<_> = m.iter().map(|t| t.kind).collect();
        use TokenKind::*;
        assert_eq!(kinds, [Atom, Atom, Mask, Mask, Mask]);
        assert!(matches!(
            mask_tokens(&toks, &f, &[true]),
            Err(SmilesError::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn masking_keeps_structure_tokens() {
        let toks = tokenize("c1ccccc1").unwrap();
        let g = parse(&toks).unwrap();
        let f = fragment(&g);
        let m = mask_tokens(&toks, &f, &[false]).unwrap();
        assert_eq!(m.len(), 8);
        assert_eq!(m[1].kind, TokenKind::RingClosure);
        assert_eq!(m.iter().filter(|t| t.kind == TokenKind::Mask).count(), 6);
    }
}
