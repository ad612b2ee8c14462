use serde::{Deserialize, Serialize};
use std::fmt;

/// Elements accepted by the tokenizer (organic subset plus hydrogen).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    /// Dense index in `0..11`, stable across versions.
    pub fn index(self) -> usize {
        Element::ALL.iter().position(|e| *e == self).expect("listed")
    }

    pub fn is_heavy(self) -> bool {
        self != Element::H
    }

    /// Elements that may be written in lowercase (aromatic) form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    /// Allowed bonding valences for a given formal charge, ascending.
    pub fn valences(self, charge: i8) -> Vec<u8> {
        use Element::*;
        let shift = |base: &[u8], d: i8| -> Vec<u8> {
            base.iter()
                .filter_map(|&v| u8::try_from(v as i16 + d as i16).ok())
                .collect()
        };
        match (self, charge) {
            (_, 0) => match self {
                H | F | Cl | Br | I => vec![1],
                B => vec![3],
                C => vec![4],
                N | P => vec![3, 5],
                O => vec![2],
                S => vec![2, 4, 6],
            },
            (N | P, q) => shift(&[3, 5], q),
            (O | S, q) if q > 0 => shift(&[2], q),
            (O, q) => shift(&[2], q),
            (S, q) => shift(&[2, 4, 6], q),
            (C, q) => shift(&[4], -q.abs()),
            (B, q) => shift(&[3], -q),
            (H | F | Cl | Br | I, q) => shift(&[1], -q.abs()),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
