use std::fmt;

use crate::element::Element;
use crate::error::{ChemError, Result};
use crate::graph::MolecularGraph;
use crate::groups::detect_functional_groups;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PropertyKind {
    HeavyAtomCount,
    HasRing,
    HasNitrogen,
    WienerIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyValue {
    Count(u64),
    Flag(bool),
}

impl PropertyValue {
    pub fn as_f64(self) -> f64 {
        match self {
            PropertyValue::Count(n) => n as f64,
            PropertyValue::Flag(b) => b as u8 as f64,
        }
    }
}

impl fmt::Display for PropertyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropertyValue::Count(n) => write!(f, "{n}"),
            PropertyValue::Flag(true) => f.write_str("True"),
            PropertyValue::Flag(false) => f.write_str("False"),
        }
    }
}

pub fn toy_property(g: &MolecularGraph, kind: PropertyKind) -> Result<PropertyValue> {
    Ok(match kind {
        PropertyKind::HeavyAtomCount => PropertyValue::Count(g.num_atoms() as u64),
        PropertyKind::HasRing => PropertyValue::Flag(detect_functional_groups(g)[5]),
        PropertyKind::HasNitrogen => PropertyValue::Flag(g.atoms().contains(&Element::N)),
        PropertyKind::WienerIndex => {
            let d = g.distances();
            let mut total = 0u64;
            for (i, row) in d.iter().enumerate() {
                for dist in &row[i + 1..] {
                    total += dist.ok_or(ChemError::Disconnected)? as u64;
                }
            }
            PropertyValue::Count(total)
        }
    })
}

/// First terminal O (lowest index) singly bonded to a C that has spare
/// valence.
pub fn oxidation_site(g: &MolecularGraph) -> Option<(usize, usize)> {
    (0..g.num_atoms()).find_map(|o| {
        if g.element(o) != Element::O {
            return None;
        }
        match g.neighbors(o).as_slice() {
            [(c, 1)] if g.element(*c) == Element::C && g.remaining_valence(*c) >= 1 => Some((o, g.bond_between(o, *c).unwrap())),
            _ => None,
        }
    })
}

/// Oxidizes the first site to C=O; graphs without a site come back unchanged.
pub fn toy_reaction_forward(g: &MolecularGraph) -> MolecularGraph {
    let mut h = g.clone();
    if let Some((_, bond)) = oxidation_site(g) {
        h.set_bond_order(bond, 2).expect("site has spare valence");
    }
    h
}
