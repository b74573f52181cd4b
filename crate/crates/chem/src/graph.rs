use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{ChemError, Result};

/// Undirected bond. `u < v` is not required; the orientation is kept because
/// the edge tokens of the encoder use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub u: usize,
    pub v: usize,
    pub order: u8,
}

impl Bond {
    pub fn other(&self, a: usize) -> usize {
        if self.u == a {
            self.v
        } else {
            self.u
        }
    }

    pub fn touches(&self, a: usize) -> bool {
        self.u == a || self.v == a
    }
}

/// Heavy-atom molecular graph with implicit hydrogens.
///
/// Mutating methods keep the graph valid: no self loops, at most one bond per
/// pair, orders in 1..=3 and per-atom bond order sums within the cap.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MolecularGraph {
    atoms: Vec<Element>,
    bonds: Vec<Bond>,
}

impl MolecularGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds and validates a graph from raw parts.
    pub fn from_parts(atoms: Vec<Element>, bonds: Vec<(usize, usize, u8)>) -> Result<Self> {
        let mut g = Self { atoms, bonds: Vec::with_capacity(bonds.len()) };
        for (u, v, order) in bonds {
            g.add_bond(u, v, order)?;
        }
        Ok(g)
    }

    pub fn atoms(&self) -> &[Element] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn element(&self, a: usize) -> Element {
        self.atoms[a]
    }

    pub fn add_atom(&mut self, el: Element) -> usize {
        self.atoms.push(el);
        self.atoms.len() - 1
    }

    pub fn add_bond(&mut self, u: usize, v: usize, order: u8) -> Result<usize> {
        let n = self.atoms.len();
        if u >= n || v >= n {
            return Err(ChemError::InvalidGraph(format!("bond ({u},{v}) out of range for {n} atoms")));
        }
        if u == v {
            return Err(ChemError::InvalidGraph(format!("self loop on atom {u}")));
        }
        if !(1..=3).contains(&order) {
            return Err(ChemError::InvalidGraph(format!("bond order {order}")));
        }
        if self.bond_between(u, v).is_some() {
            return Err(ChemError::InvalidGraph(format!("duplicate bond ({u},{v})")));
        }
        for a in [u, v] {
            if self.remaining_valence(a) < order {
                return Err(ChemError::InvalidGraph(format!("valence of atom {a} exceeded")));
            }
        }
        self.bonds.push(Bond { u, v, order });
        Ok(self.bonds.len() - 1)
    }

    pub fn bond_between(&self, u: usize, v: usize) -> Option<usize> {
        self.bonds.iter().position(|b| (b.u == u && b.v == v) || (b.u == v && b.v == u))
    }

    /// `(neighbor, order)` pairs sorted by neighbor index.
    pub fn neighbors(&self, a: usize) -> Vec<(usize, u8)> {
        let mut out: Vec<_> = self.bonds.iter().filter(|b| b.touches(a)).map(|b| (b.other(a), b.order)).collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, a: usize) -> usize {
        self.bonds.iter().filter(|b| b.touches(a)).count()
    }

    pub fn valence_used(&self, a: usize) -> u8 {
        self.bonds.iter().filter(|b| b.touches(a)).map(|b| b.order).sum()
    }

    pub fn remaining_valence(&self, a: usize) -> u8 {
        self.atoms[a].valence_cap().saturating_sub(self.valence_used(a))
    }

    /// Changes the order of an existing bond if both endpoints allow it.
    pub fn set_bond_order(&mut self, bond: usize, order: u8) -> Result<()> {
        let b = self.bonds[bond];
        if !(1..=3).contains(&order) {
            return Err(ChemError::InvalidGraph(format!("bond order {order}")));
        }
        for a in [b.u, b.v] {
            if self.valence_used(a) - b.order + order > self.atoms[a].valence_cap() {
                return Err(ChemError::InvalidGraph(format!("valence of atom {a} exceeded")));
            }
        }
        self.bonds[bond].order = order;
        Ok(())
    }

    /// Replaces an element if the new cap still covers the atom's bonds.
    pub fn set_element(&mut self, a: usize, el: Element) -> Result<()> {
        if self.valence_used(a) > el.valence_cap() {
            return Err(ChemError::InvalidGraph(format!("{el} cannot hold the bonds of atom {a}")));
        }
        self.atoms[a] = el;
        Ok(())
    }

    pub fn remove_bond(&mut self, bond: usize) -> Bond {
        self.bonds.remove(bond)
    }

    /// Re-checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let mut rebuilt = Self { atoms: self.atoms.clone(), bonds: Vec::new() };
        for b in &self.bonds {
            rebuilt.add_bond(b.u, b.v, b.order)?;
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Component label per atom, labels dense from 0 in order of first atom.
    pub fn components(&self) -> Vec<usize> {
        let n = self.atoms.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(a) = stack.pop() {
                for (w, _) in self.neighbors(a) {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn num_components(&self) -> usize {
        self.components().iter().max().map_or(0, |m| m + 1)
    }

    /// The empty graph counts as connected.
    pub fn is_connected(&self) -> bool {
        self.num_components() <= 1
    }

    /// All-pairs hop distances; `None` for unreachable pairs.
    pub fn distances(&self) -> Vec<Vec<Option<usize>>> {
        let n = self.atoms.len();
        let adj: Vec<Vec<usize>> = (0..n).map(|a| self.neighbors(a).into_iter().map(|(w, _)| w).collect()).collect();
        (0..n)
            .map(|s| {
                let mut d = vec![None; n];
                d[s] = Some(0);
                let mut queue = std::collections::VecDeque::from([s]);
                while let Some(a) = queue.pop_front() {
                    let da = d[a].unwrap();
                    for &w in &adj[a] {
                        if d[w].is_none() {
                            d[w] = Some(da + 1);
                            queue.push_back(w);
                        }
                    }
                }
                d
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphJson::from(self)).expect("graph json")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(text).map_err(|e| ChemError::Json(e.to_string()))?;
        raw.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomJson {
    el: String,
}

/// Wire form: `{"atoms":[{"el":"C"}, ...], "bonds":[[u, v, order], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    atoms: Vec<AtomJson>,
    bonds: Vec<[u64; 3]>,
}

impl From<&MolecularGraph> for GraphJson {
    fn from(g: &MolecularGraph) -> Self {
        Self {
            atoms: g.atoms.iter().map(|e| AtomJson { el: e.symbol().to_string() }).collect(),
            bonds: g.bonds.iter().map(|b| [b.u as u64, b.v as u64, b.order as u64]).collect(),
        }
    }
}

impl TryFrom<GraphJson> for MolecularGraph {
    type Error = ChemError;

    fn try_from(raw: GraphJson) -> Result<Self> {
        let atoms = raw
            .atoms
            .iter()
            .map(|a| a.el.parse::<Element>().map_err(|_| ChemError::Json(format!("unknown element `{}`", a.el))))
            .collect::<Result<Vec<_>>>()?;
        let bonds = raw
            .bonds
            .iter()
            .map(|&[u, v, o]| {
                let small = |x: u64| usize::try_from(x).map_err(|_| ChemError::Json("index too large".into()));
                let order = u8::try_from(o).map_err(|_| ChemError::Json(format!("bond order {o}")))?;
                Ok((small(u)?, small(v)?, order))
            })
            .collect::<Result<Vec<_>>>()?;
        MolecularGraph::from_parts(atoms, bonds)
    }
}

impl Serialize for MolecularGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MolecularGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = GraphJson::deserialize(d)?;
        MolecularGraph::try_from(raw).map_err(serde::de::Error::custom)
    }
}
