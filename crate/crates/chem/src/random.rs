use rand::Rng;

use crate::element::Element;
use crate::graph::MolecularGraph;
use crate::selfies::{decode, SelfiesSequence, SelfiesToken, MAX_BRANCH, MAX_RING};

/// Element sampling weights, carbon heavy.
const ELEMENT_WEIGHTS: [(Element, u32); 6] =
    [(Element::C, 60), (Element::N, 12), (Element::O, 16), (Element::F, 4), (Element::S, 4), (Element::P, 4)];
const P_DOUBLE: f64 = 0.12;
const P_TRIPLE: f64 = 0.04;
const P_BRANCH: f64 = 0.2;
const P_RING: f64 = 0.08;

fn sample_element(rng: &mut impl Rng) -> Element {
    let total: u32 = ELEMENT_WEIGHTS.iter().map(|w| w.1).sum();
    let mut r = rng.random_range(0..total);
    for (el, w) in ELEMENT_WEIGHTS {
        if r < w {
            return el;
        }
        r -= w;
    }
    unreachable!()
}

/// Token string with at most `max_atoms` atom tokens.
pub fn random_tokens(rng: &mut impl Rng, max_atoms: usize) -> SelfiesSequence {
    let n = rng.random_range(1..=max_atoms.max(1));
    let mut tokens = Vec::new();
    for i in 0..n {
        let u: f64 = rng.random();
        let order = if u < P_TRIPLE {
            3
        } else if u < P_TRIPLE + P_DOUBLE {
            2
        } else {
            1
        };
        tokens.push(SelfiesToken::Atom { element: sample_element(rng), order });
        if i + 1 < n {
            if rng.random_bool(P_RING) {
                tokens.push(SelfiesToken::Ring(rng.random_range(1..=MAX_RING)));
            }
            if rng.random_bool(P_BRANCH) {
                tokens.push(SelfiesToken::Branch(rng.random_range(1..=MAX_BRANCH)));
            }
        }
    }
    SelfiesSequence::new(tokens)
}

/// Decodes a random token string, so the result is always valid.
pub fn random_graph(rng: &mut impl Rng, max_atoms: usize) -> MolecularGraph {
    decode(&random_tokens(rng, max_atoms))
}
