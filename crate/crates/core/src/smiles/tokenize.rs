use super::{Element, SmilesError};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Atom,
    Bond,
    RingClosure,
    BranchOpen,
    BranchClose,
    BracketAtom,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub position: usize,
}

pub const MASK_TEXT: &str = "[MASK]";

/// Contents of a bracket atom such as `[nH]` or `[NH4+]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BracketAtom {
    pub element: Element,
    pub aromatic: bool,
    pub h_count: u8,
    pub charge: i8,
}

/// Splits a SMILES string into tokens. Concatenating the token texts gives
/// back the input exactly.
pub fn tokenize(smiles: &str) -> Result<Vec<Token>, SmilesError> {
    if !smiles.is_ascii() {
        let (pos, ch) = smiles
            .char_indices()
            .find(|(_, c)| !c.is_ascii())
            .expect("non-ascii char");
        return Err(SmilesError::UnknownSymbol {
            symbol: ch.to_string(),
            position: pos,
        });
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let (kind, len) = match c {
            '[' => {
                let close = smiles[i..]
                    .find(']')
                    .ok_or(SmilesError::UnterminatedBracket { position: i })?;
                parse_bracket(&smiles[i..=i + close], i)?;
                (TokenKind::BracketAtom, close + 1)
            }
            'B' if bytes.get(i + 1) == Some(&b'r') => (TokenKind::Atom, 2),
            'C' if bytes.get(i + 1) == Some(&b'l') => (TokenKind::Atom, 2),
            'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' => (TokenKind::Atom, 1),
            'b' | 'c' | 'n' | 'o' | 'p' | 's' => (TokenKind::Atom, 1),
            '0'..='9' => (TokenKind::RingClosure, 1),
            '%' => {
                let ok = bytes.len() >= i + 3
                    && bytes[i + 1].is_ascii_digit()
                    && bytes[i + 2].is_ascii_digit();
                if !ok {
                    return Err(SmilesError::UnknownSymbol {
                        symbol: "%".into(),
                        position: i,
                    });
                }
                (TokenKind::RingClosure, 3)
            }
            '(' => (TokenKind::BranchOpen, 1),
            ')' => (TokenKind::BranchClose, 1),
            '-' | '=' | '#' | ':' | '/' | '\\' => (TokenKind::Bond, 1),
            _ => {
                return Err(SmilesError::UnknownSymbol {
                    symbol: c.to_string(),
                    position: i,
                })
            }
        };
        tokens.push(Token {
            kind,
            text: smiles[i..i + len].to_string(),
            position: tokens.len(),
        });
        i += len;
    }
    Ok(tokens)
}

/// Inverse of [`tokenize`].
pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

/// Parses `[...]` text. Isotopes and atom classes are rejected; chirality
/// marks are accepted and dropped.
pub fn parse_bracket(text: &str, position: usize) -> Result<BracketAtom, SmilesError> {
    let unknown = |s: &str| SmilesError::UnknownSymbol {
        symbol: s.to_string(),
        position,
    };
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or(SmilesError::UnterminatedBracket { position })?;
    let b = inner.as_bytes();
    let mut i;
    if b.first().is_some_and(u8::is_ascii_digit) {
        return Err(unknown(text));
    }
    // element symbol: two-letter halogens first, then one letter
    let (element, aromatic) = if inner.starts_with("Cl") || inner.starts_with("Br") {
        i = 2;
        (Element::from_symbol(&inner[..2]).expect("halogen"), false)
    } else {
        let c = *b.first().ok_or_else(|| unknown(text))? as char;
        i = 1;
        if c.is_ascii_lowercase() {
            let e = Element::from_symbol(&c.to_ascii_uppercase().to_string())
                .filter(|e| e.can_be_aromatic())
                .ok_or_else(|| unknown(text))?;
            (e, true)
        } else {
            let e = Element::from_symbol(&c.to_string()).ok_or_else(|| unknown(text))?;
            if b.get(1).is_some_and(u8::is_ascii_lowercase) {
                // two-letter element outside the supported set, e.g. [Se]
                return Err(unknown(text));
            }
            (e, false)
        }
    };
    while i < b.len() && b[i] == b'@' {
        i += 1;
    }
    if i < b.len() && b[i].is_ascii_uppercase() && b[i] != b'H' {
        // extended chirality like @TH1
        while i < b.len() && b[i].is_ascii_alphanumeric() && b[i] != b'H' {
            i += 1;
        }
    }
    let mut h_count = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        h_count = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            h_count = b[i] - b'0';
            i += 1;
        }
    }
    let mut charge = 0i8;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign: i8 = if b[i] == b'+' { 1 } else { -1 };
        let sym = b[i];
        i += 1;
        let mut mag = 1i8;
        if i < b.len() && b[i].is_ascii_digit() {
            mag = (b[i] - b'0') as i8;
            i += 1;
        } else {
            while i < b.len() && b[i] == sym {
                mag += 1;
                i += 1;
            }
        }
        charge = sign * mag;
    }
    if i != b.len() {
        return Err(unknown(text));
    }
    Ok(BracketAtom {
        element,
        aromatic,
        h_count,
        charge,
    })
}
