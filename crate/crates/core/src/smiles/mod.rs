//! SMILES tokenizer, graph parser, fragmenter and fragment masking.

mod element;
mod fragment;
mod molecule;
mod parse;
mod tokenize;

pub use element::Element;
pub use fragment::{fragment, fragments_to_json, mask_tokens, Fragment};
pub use molecule::Molecule;
pub use parse::{parse, Atom, Bond, BondOrder, MolGraph};
pub use tokenize::{detokenize, parse_bracket, tokenize, BracketAtom, Token, TokenKind, MASK_TEXT};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("unknown symbol {symbol:?} at {position}")]
    UnknownSymbol { symbol: String, position: usize },
    #[error("unterminated bracket atom starting at {position}")]
    UnterminatedBracket { position: usize },
    #[error("unmatched ring closure at token {position}")]
    UnmatchedRingClosure { position: usize },
    #[error("unbalanced branch at token {position}")]
    UnbalancedBranch { position: usize },
    #[error("atom {atom} ({element}) exceeds its allowed valence with {valence} bonds")]
    ValenceExceeded {
        atom: usize,
        element: Element,
        valence: u8,
    },
    #[error("bond symbol at token {position} is not between two atoms")]
    DanglingBond { position: usize },
    #[error("empty SMILES")]
    Empty,
    #[error("mask has {got} entries but there are {expected} fragments")]
    LengthMismatch { expected: usize, got: usize },
}

/// Everything derived from one SMILES string.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed {
    pub smiles: String,
    pub tokens: Vec<Token>,
    pub graph: MolGraph,
    pub fragments: Vec<Fragment>,
    pub molecule: Molecule,
}

impl Parsed {
    pub fn new(smiles: &str) -> Result<Self, SmilesError> {
        let tokens = tokenize(smiles)?;
        let graph = parse(&tokens)?;
        let fragments = fragment(&graph);
        let molecule = Molecule::from_graph(&graph, &fragments);
        Ok(Self {
            smiles: smiles.to_string(),
            tokens,
            graph,
            fragments,
            molecule,
        })
    }
}
