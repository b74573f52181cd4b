use crate::element::Element;
use crate::graph::MolecularGraph;

pub const NUM_GROUPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionalGroup {
    Carbonyl,
    Hydroxyl,
    Amine,
    Nitrile,
    Sulfur,
    Ring,
    Fluorine,
    Carboxyl,
}

impl FunctionalGroup {
    pub const ALL: [FunctionalGroup; NUM_GROUPS] = [
        FunctionalGroup::Carbonyl,
        FunctionalGroup::Hydroxyl,
        FunctionalGroup::Amine,
        FunctionalGroup::Nitrile,
        FunctionalGroup::Sulfur,
        FunctionalGroup::Ring,
        FunctionalGroup::Fluorine,
        FunctionalGroup::Carboxyl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionalGroup::Carbonyl => "carbonyl",
            FunctionalGroup::Hydroxyl => "hydroxyl",
            FunctionalGroup::Amine => "amine",
            FunctionalGroup::Nitrile => "nitrile",
            FunctionalGroup::Sulfur => "sulfur",
            FunctionalGroup::Ring => "ring",
            FunctionalGroup::Fluorine => "fluorine",
            FunctionalGroup::Carboxyl => "carboxyl",
        }
    }
}

pub type FunctionalGroupVector = [bool; NUM_GROUPS];

/// Where a group occurs: atoms for atom-centred keys, a bond index for the
/// bond-centred ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Atom(usize),
    Bond(usize),
}

fn is_terminal_single_o_on_c(g: &MolecularGraph, a: usize) -> Option<usize> {
    if g.element(a) != Element::O {
        return None;
    }
    match g.neighbors(a).as_slice() {
        [(c, 1)] if g.element(*c) == Element::C => Some(*c),
        _ => None,
    }
}

/// Bonds that lie on a cycle: removing them keeps their endpoints connected.
pub fn ring_bonds(g: &MolecularGraph) -> Vec<usize> {
    (0..g.num_bonds())
        .filter(|&i| {
            let b = g.bonds()[i];
            let mut h = g.clone();
            h.remove_bond(i);
            let comp = h.components();
            comp[b.u] == comp[b.v]
        })
        .collect()
}

/// Every occurrence of `group` in `g`.
pub fn occurrences(g: &MolecularGraph, group: FunctionalGroup) -> Vec<Site> {
    let el = |a: usize| g.element(a);
    let n = g.num_atoms();
    let bonds = g.bonds();
    match group {
        FunctionalGroup::Carbonyl => (0..bonds.len())
            .filter(|&i| {
                let b = bonds[i];
                b.order == 2 && matches!((el(b.u), el(b.v)), (Element::C, Element::O) | (Element::O, Element::C))
            })
            .map(Site::Bond)
            .collect(),
        FunctionalGroup::Hydroxyl => (0..n).filter(|&a| is_terminal_single_o_on_c(g, a).is_some()).map(Site::Atom).collect(),
        FunctionalGroup::Amine => {
            (0..n).filter(|&a| el(a) == Element::N && g.neighbors(a).iter().all(|&(_, o)| o == 1)).map(Site::Atom).collect()
        }
        FunctionalGroup::Nitrile => (0..bonds.len())
            .filter(|&i| {
                let b = bonds[i];
                b.order == 3 && matches!((el(b.u), el(b.v)), (Element::C, Element::N) | (Element::N, Element::C))
            })
            .map(Site::Bond)
            .collect(),
        FunctionalGroup::Sulfur => (0..n).filter(|&a| el(a) == Element::S).map(Site::Atom).collect(),
        FunctionalGroup::Ring => ring_bonds(g).into_iter().map(Site::Bond).collect(),
        FunctionalGroup::Fluorine => (0..n).filter(|&a| el(a) == Element::F).map(Site::Atom).collect(),
        // The single-bonded O of a C(=O)-O unit.
        FunctionalGroup::Carboxyl => (0..n)
            .filter(|&o| {
                el(o) == Element::O
                    && g.neighbors(o).iter().any(|&(c, order)| {
                        order == 1
                            && el(c) == Element::C
                            && g.neighbors(c).iter().any(|&(o2, ord2)| o2 != o && ord2 == 2 && el(o2) == Element::O)
                    })
            })
            .map(Site::Atom)
            .collect(),
    }
}

pub fn detect_functional_groups(g: &MolecularGraph) -> FunctionalGroupVector {
    let mut out = [false; NUM_GROUPS];
    for (k, grp) in FunctionalGroup::ALL.into_iter().enumerate() {
        out[k] = match grp {
            FunctionalGroup::Ring => g.num_bonds() + g.num_components() > g.num_atoms(),
            _ => !occurrences(g, grp).is_empty(),
        };
    }
    out
}
