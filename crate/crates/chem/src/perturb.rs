//! Structure perturbation used to build rejected responses.
//!
//! Substitution table, one rewrite per key:
//!
//! | key      | rewrite                                   |
//! |----------|-------------------------------------------|
//! | carbonyl | C=O becomes C-C                           |
//! | hydroxyl | terminal O becomes N                      |
//! | amine    | N becomes O, or C if O cannot hold it     |
//! | nitrile  | C#N becomes C=O                           |
//! | sulfur   | S becomes O                               |
//! | ring     | the ring bond is deleted                  |
//! | fluorine | F becomes O                               |
//! | carboxyl | the single-bonded O becomes N             |
//!
//! With no key present one bond has an endpoint moved to another atom.
//! Candidates must stay connected, stay encodable and change the fingerprint.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::element::Element;
use crate::fingerprint::fingerprint;
use crate::graph::MolecularGraph;
use crate::groups::{occurrences, FunctionalGroup, Site};
use crate::selfies::encode;

pub const MAX_ATTEMPTS: usize = 8;
/// Attempts after this many use the rewiring fallback even if keys exist.
const TABLE_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbed {
    pub graph: MolecularGraph,
    /// Nothing acceptable was found; `graph` is the input unchanged.
    pub degenerate: bool,
}

fn rewrite(g: &MolecularGraph, group: FunctionalGroup, site: Site) -> Option<MolecularGraph> {
    let mut h = g.clone();
    match (group, site) {
        (FunctionalGroup::Carbonyl, Site::Bond(i)) => {
            let b = h.bonds()[i];
            let o = if h.element(b.u) == Element::O { b.u } else { b.v };
            h.set_bond_order(i, 1).ok()?;
            h.set_element(o, Element::C).ok()?;
        }
        (FunctionalGroup::Nitrile, Site::Bond(i)) => {
            let b = h.bonds()[i];
            let n = if h.element(b.u) == Element::N { b.u } else { b.v };
            h.set_bond_order(i, 2).ok()?;
            h.set_element(n, Element::O).ok()?;
        }
        (FunctionalGroup::Ring, Site::Bond(i)) => {
            h.remove_bond(i);
        }
        (FunctionalGroup::Hydroxyl | FunctionalGroup::Carboxyl, Site::Atom(a)) => h.set_element(a, Element::N).ok()?,
        (FunctionalGroup::Amine, Site::Atom(a)) => {
            if h.set_element(a, Element::O).is_err() {
                h.set_element(a, Element::C).ok()?;
            }
        }
        (FunctionalGroup::Sulfur | FunctionalGroup::Fluorine, Site::Atom(a)) => h.set_element(a, Element::O).ok()?,
        _ => return None,
    }
    Some(h)
}

fn rewire(g: &MolecularGraph, rng: &mut impl Rng) -> Option<MolecularGraph> {
    if g.num_bonds() == 0 || g.num_atoms() < 3 {
        return None;
    }
    let i = rng.random_range(0..g.num_bonds());
    let b = g.bonds()[i];
    let (keep, _) = if rng.random_bool(0.5) { (b.u, b.v) } else { (b.v, b.u) };
    let targets: Vec<usize> = (0..g.num_atoms())
        .filter(|&w| w != b.u && w != b.v && g.bond_between(keep, w).is_none() && g.remaining_valence(w) >= b.order)
        .collect();
    let &w = targets.choose(rng)?;
    let mut h = g.clone();
    h.remove_bond(i);
    h.add_bond(keep, w, b.order).ok()?;
    Some(h)
}

pub fn perturb(g: &MolecularGraph, rng: &mut impl Rng) -> Perturbed {
    let sites: Vec<(FunctionalGroup, Site)> =
        FunctionalGroup::ALL.into_iter().flat_map(|grp| occurrences(g, grp).into_iter().map(move |s| (grp, s))).collect();
    let original = fingerprint(g);
    for attempt in 0..MAX_ATTEMPTS {
        let candidate = if !sites.is_empty() && attempt < TABLE_ATTEMPTS {
            let &(grp, site) = sites.choose(rng).unwrap();
            rewrite(g, grp, site)
        } else {
            rewire(g, rng)
        };
        if let Some(h) = candidate {
            if h.is_valid() && h.is_connected() && encode(&h).is_ok() && fingerprint(&h) != original {
                return Perturbed { graph: h, degenerate: false };
            }
        }
    }
    Perturbed { graph: g.clone(), degenerate: true }
}
