use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::basis::BlockLayout;
use crate::smiles::Parsed;

pub const CORPUS_SEED: u64 = 20_240_611;
pub const CORPUS_SIZE: usize = 2000;

const BUNDLED: &str = include_str!("../../data/corpus.smi");

/// Scaffolds; every `X` is replaced by a substituent.
const CORES: &[&str] = &[
    "CX",
    "CCX",
    "OCCX",
    "NCCX",
    "CC(C)X",
    "c1ccc(X)cc1",
    "c1cc(X)ccc1X",
    "c1ccc(X)c(X)c1",
    "c1ccnc(X)c1",
    "c1csc(X)c1",
    "c1coc(X)c1",
    "C1CCC(X)CC1",
    "C1CCN(X)CC1",
    "C1CC1X",
    "O=C(X)X",
    "O=C(X)NX",
    "XOCCOX",
    "XSX",
    "XS(=O)(=O)X",
    "XP(=O)(O)X",
    "XC=CX",
    "XC#CX",
    "XN(C)X",
    "c1ccc2cc(X)ccc2c1",
    "XC(=O)OX",
    "XCC(=O)X",
    "NC(X)C(=O)O",
    "XCSCX",
    "XOP(=O)(OC)OX",
    "c1nc(X)ncc1X",
];

/// Substituents; rings use label 9 so they never clash with scaffold rings.
const GROUPS: &[&str] = &[
    "C",
    "CC",
    "CCC",
    "C(C)C",
    "O",
    "OC",
    "N",
    "NC",
    "N(C)C",
    "F",
    "Cl",
    "Br",
    "I",
    "C(F)(F)F",
    "C#N",
    "C(=O)O",
    "C(=O)N",
    "C(=O)C",
    "S",
    "SC",
    "S(=O)(=O)N",
    "P(=O)(O)O",
    "c9ccccc9",
    "c9ccncc9",
    "c9ccsc9",
    "C9CC9",
    "C9CCCC9",
    "OCC",
    "CO",
    "CCO",
];

/// Combinatorial corpus of closed-shell molecules with 3 to 30 heavy atoms.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    let mut tries = 0usize;
    while out.len() < n && tries < 200 * n.max(1) {
        tries += 1;
        let core = CORES.choose(&mut rng).expect("cores");
        let mut s = String::new();
        for ch in core.chars() {
            if ch == 'X' {
                s.push_str(GROUPS.choose(&mut rng).expect("groups"));
            } else {
                s.push(ch);
            }
        }
        if seen.contains(&s) {
            continue;
        }
        let Ok(p) = Parsed::new(&s) else { continue };
        let heavy = p.graph.heavy_atom_count();
        let n_orb = BlockLayout::new(&p.molecule.elements).n_orb;
        let e = p.molecule.electrons;
        if !(3..=30).contains(&heavy) || e % 2 == 1 || e / 2 >= n_orb {
            continue;
        }
        seen.insert(s.clone());
        out.push(s);
    }
    out
}

/// The corpus shipped with the crate (identical to
/// `generate_corpus(CORPUS_SIZE, CORPUS_SEED)`).
pub fn bundled_corpus() -> Vec<String> {
    BUNDLED.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect()
}

/// Hex SHA-256 of the newline-joined corpus.
pub fn corpus_hash(corpus: &[String]) -> String {
    let mut h = Sha256::new();
    for (i, s) in corpus.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(s.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
