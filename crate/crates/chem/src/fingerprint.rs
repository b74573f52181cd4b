//! Path fingerprint: every simple path of 0 to 4 bonds is written as an
//! element/bond label such as `C=C-O`, the lexicographically smaller of the
//! two reading directions is kept, and each distinct label sets bit
//! `fnv1a64(label) mod 167`.

use std::collections::BTreeSet;

use crate::error::{ChemError, Result};
use crate::graph::MolecularGraph;

pub const FINGERPRINT_WIDTH: usize = 167;
pub const MAX_PATH_BONDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    bits: Vec<bool>,
}

impl Fingerprint {
    pub fn zeros(width: usize) -> Self {
        Self { bits: vec![false; width] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bond_char(order: u8) -> char {
    match order {
        1 => '-',
        2 => '=',
        _ => '#',
    }
}

/// Canonical labels of all simple paths with up to [`MAX_PATH_BONDS`] bonds.
pub fn path_labels(g: &MolecularGraph) -> BTreeSet<String> {
    let adj: Vec<Vec<(usize, u8)>> = (0..g.num_atoms()).map(|a| g.neighbors(a)).collect();
    let mut labels = BTreeSet::new();
    let mut path = Vec::new();
    let mut orders = Vec::new();
    fn label(g: &MolecularGraph, path: &[usize], orders: &[u8]) -> String {
        let mut s = String::new();
        for (i, &a) in path.iter().enumerate() {
            if i > 0 {
                s.push(bond_char(orders[i - 1]));
            }
            s.push_str(g.element(a).symbol());
        }
        s
    }
    fn walk(g: &MolecularGraph, adj: &[Vec<(usize, u8)>], path: &mut Vec<usize>, orders: &mut Vec<u8>, labels: &mut BTreeSet<String>) {
        let fwd = label(g, path, orders);
        let rev_path: Vec<usize> = path.iter().rev().copied().collect();
        let rev_orders: Vec<u8> = orders.iter().rev().copied().collect();
        let rev = label(g, &rev_path, &rev_orders);
        labels.insert(fwd.min(rev));
        if orders.len() == MAX_PATH_BONDS {
            return;
        }
        let last = *path.last().unwrap();
        for &(w, o) in &adj[last] {
            if !path.contains(&w) {
                path.push(w);
                orders.push(o);
                walk(g, adj, path, orders, labels);
                path.pop();
                orders.pop();
            }
        }
    }
    for a in 0..g.num_atoms() {
        path.push(a);
        walk(g, &adj, &mut path, &mut orders, &mut labels);
        path.pop();
    }
    labels
}

pub fn fingerprint(g: &MolecularGraph) -> Fingerprint {
    let mut fp = Fingerprint::zeros(FINGERPRINT_WIDTH);
    for l in path_labels(g) {
        fp.bits[(fnv1a64(l.as_bytes()) % FINGERPRINT_WIDTH as u64) as usize] = true;
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`, and 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.width() != b.width() {
        return Err(ChemError::WidthMismatch(a.width(), b.width()));
    }
    let (mut and, mut or) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        and += (x && y) as usize;
        or += (x || y) as usize;
    }
    Ok(if or == 0 { 1.0 } else { and as f64 / or as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(bits: &str) -> Fingerprint {
        Fingerprint::from_bits(bits.chars().map(|c| c == '1').collect())
    }

    #[test]
    fn tanimoto_examples() {
        assert_eq!(tanimoto(&fp("110"), &fp("011")).unwrap(), 1.0 / 3.0);
        assert_eq!(tanimoto(&fp("101"), &fp("101")).unwrap(), 1.0);
        assert_eq!(tanimoto(&fp("100"), &fp("010")).unwrap(), 0.0);
        assert_eq!(tanimoto(&fp("000"), &fp("000")).unwrap(), 1.0);
        assert_eq!(tanimoto(&fp("00"), &fp("000")), Err(ChemError::WidthMismatch(2, 3)));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn empty_graph_has_empty_fingerprint() {
        assert_eq!(fingerprint(&MolecularGraph::new()).count_ones(), 0);
    }
}
