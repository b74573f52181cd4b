use std::fmt;
use std::str::FromStr;

use crate::error::ChemError;

/// Heavy atoms of the dialect. Hydrogens are implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    F,
    S,
    P,
}

impl Element {
    pub const ALL: [Element; 6] = [Element::C, Element::N, Element::O, Element::F, Element::S, Element::P];

    /// Maximum total bond order.
    pub fn valence_cap(self) -> u8 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F => 1,
            Element::S => 2,
            Element::P => 3,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::S => "S",
            Element::P => "P",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = ChemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL.into_iter().find(|e| e.symbol() == s).ok_or_else(|| ChemError::UnknownToken(s.to_string()))
    }
}
