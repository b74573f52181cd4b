use moldiff_chem::fingerprint::{path_labels, Fingerprint};
use moldiff_chem::groups::occurrences;
use moldiff_chem::iso::isomorphic;
use moldiff_chem::props::oxidation_site;
use moldiff_chem::{
    decode, detect_functional_groups, encode, fingerprint, perturb, random_graph, tanimoto, toy_property, toy_reaction_forward, Element,
    FunctionalGroup, MolecularGraph, PropertyKind, PropertyValue, FINGERPRINT_WIDTH,
};
use moldiff_numerics::SeedStream;
use proptest::prelude::*;

fn dec(s: &str) -> MolecularGraph {
    decode(&s.parse().unwrap())
}

fn set_bits(fp: &Fingerprint) -> Vec<usize> {
    fp.bits().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

#[test]
fn fingerprint_bits_match_hand_enumeration() {
    // Path sets: ethane {C, C-C}; formaldehyde {C, O, C=O}. Bit positions are
    // FNV-1a 64 of each label mod 167, computed outside this crate.
    let ethane = dec("[C][C]");
    let carbonyl = dec("[C][=O]");
    assert_eq!(path_labels(&ethane).into_iter().collect::<Vec<_>>(), ["C", "C-C"]);
    assert_eq!(path_labels(&carbonyl).into_iter().collect::<Vec<_>>(), ["C", "C=O", "O"]);
    assert_eq!(set_bits(&fingerprint(&ethane)), vec![47, 111]);
    assert_eq!(set_bits(&fingerprint(&carbonyl)), vec![1, 111, 123]);
    assert_ne!(fingerprint(&ethane), fingerprint(&carbonyl));
    assert_eq!(fingerprint(&ethane).width(), FINGERPRINT_WIDTH);
    assert_eq!(fingerprint(&MolecularGraph::new()).count_ones(), 0);
}

#[test]
fn path_labels_use_canonical_direction() {
    // O-C-N read either way gives one label.
    let labels = path_labels(&dec("[O][C][N]"));
    assert!(labels.contains("N-C-O"));
    assert!(!labels.contains("O-C-N"));
}

#[test]
fn group_examples() {
    let v = detect_functional_groups(&dec("[C][=O]"));
    assert!(v[0] && !v[5]);
    assert_eq!(detect_functional_groups(&dec("[C][C][C][Ring2]")), [false, false, false, false, false, true, false, false]);
    assert_eq!(detect_functional_groups(&MolecularGraph::new()), [false; 8]);
}

#[test]
fn perturb_examples() {
    let seeds = SeedStream::new(5);
    for i in 0..20 {
        let p = perturb(&dec("[C][=O]"), &mut seeds.index(i).rng());
        assert!(!p.degenerate);
        assert!(!detect_functional_groups(&p.graph)[0]);
    }
    let p = perturb(&dec("[C]"), &mut seeds.rng());
    assert!(p.degenerate);
    assert_eq!(p.graph, dec("[C]"));
    let g = dec("[C][C][Branch1][=O][O][C][N]");
    assert_eq!(perturb(&g, &mut seeds.rng_for("x")), perturb(&g, &mut seeds.rng_for("x")));
}

#[test]
fn property_examples() {
    let triangle = dec("[C][C][C][Ring2]");
    assert_eq!(toy_property(&triangle, PropertyKind::WienerIndex).unwrap(), PropertyValue::Count(3));
    assert_eq!(toy_property(&dec("[C][C][C]"), PropertyKind::WienerIndex).unwrap(), PropertyValue::Count(4));
    assert_eq!(toy_property(&dec("[C][N]"), PropertyKind::HasNitrogen).unwrap(), PropertyValue::Flag(true));
    // Path of n atoms: n(n^2 - 1)/6, i.e. 4, 10, 20 for n = 3, 4, 5.
    for (n, w) in [(3, 4), (4, 10), (5, 20)] {
        assert_eq!(toy_property(&dec(&"[C]".repeat(n)), PropertyKind::WienerIndex).unwrap(), PropertyValue::Count(w));
    }
}

#[test]
fn reaction_examples() {
    assert_eq!(toy_reaction_forward(&dec("[C][O]")), dec("[C][=O]"));
    assert_eq!(toy_reaction_forward(&dec("[C][=O]")), dec("[C][=O]"));
    let two = dec("[O][C][C][O]");
    let out = toy_reaction_forward(&two);
    assert_eq!(out.bond_between(0, 1).map(|b| out.bonds()[b].order), Some(2));
    assert_eq!(out.bond_between(2, 3).map(|b| out.bonds()[b].order), Some(1));
}

#[test]
fn random_graph_examples() {
    let seeds = SeedStream::new(9);
    for i in 0..50 {
        assert_eq!(random_graph(&mut seeds.index(i).rng(), 1).num_atoms(), 1);
    }
    assert_eq!(random_graph(&mut seeds.rng(), 12), random_graph(&mut seeds.rng(), 12));
    let mut rng = seeds.rng_for("audit");
    for _ in 0..1000 {
        let g = random_graph(&mut rng, 16);
        assert!(g.is_valid() && g.is_connected() && g.num_atoms() <= 16);
    }
}

fn graph() -> impl Strategy<Value = MolecularGraph> {
    (any::<u64>(), 1usize..14).prop_map(|(seed, n)| random_graph(&mut SeedStream::new(seed).rng(), n))
}

fn bits() -> impl Strategy<Value = Fingerprint> {
    prop::collection::vec(any::<bool>(), 16).prop_map(Fingerprint::from_bits)
}

proptest! {
    #[test]
    fn perturb_is_valid_and_changes_fingerprint(g in graph(), seed in any::<u64>()) {
        let p = perturb(&g, &mut SeedStream::new(seed).rng());
        prop_assert!(p.graph.is_valid());
        if p.degenerate {
            prop_assert_eq!(&p.graph, &g);
        } else {
            prop_assert_ne!(fingerprint(&p.graph), fingerprint(&g));
            prop_assert!(encode(&p.graph).is_ok());
        }
    }

    #[test]
    fn tanimoto_is_symmetric_reflexive_bounded(a in bits(), b in bits()) {
        let ab = tanimoto(&a, &b).unwrap();
        prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn reaction_is_idempotent_with_one_site(g in graph()) {
        let sites = (0..g.num_atoms())
            .filter(|&o| g.element(o) == Element::O && matches!(g.neighbors(o).as_slice(), [(c, 1)] if g.element(*c) == Element::C && g.remaining_valence(*c) >= 1))
            .count();
        let once = toy_reaction_forward(&g);
        prop_assert!(once.is_valid());
        if sites <= 1 {
            prop_assert_eq!(toy_reaction_forward(&once), once.clone());
            prop_assert!(oxidation_site(&once).is_none());
        }
    }

    #[test]
    fn ring_key_agrees_with_cycle_rank(g in graph()) {
        let ring = detect_functional_groups(&g)[5];
        prop_assert_eq!(ring, !occurrences(&g, FunctionalGroup::Ring).is_empty());
    }

    #[test]
    fn json_round_trip(g in graph()) {
        let back = MolecularGraph::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert!(isomorphic(&back, &g));
    }
}
