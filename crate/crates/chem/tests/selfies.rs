use moldiff_chem::iso::isomorphic;
use moldiff_chem::selfies::ALPHABET_SIZE;
use moldiff_chem::{decode, encode, random_graph, ChemError, Element, MolecularGraph, SelfiesSequence, SelfiesToken, Vocab};
use moldiff_numerics::SeedStream;
use proptest::prelude::*;
use rand::Rng;

fn dec(s: &str) -> MolecularGraph {
    decode(&s.parse().unwrap())
}

/// Valence audit written against the raw bond list only.
fn valence_ok(g: &MolecularGraph) -> bool {
    let mut used = vec![0u32; g.num_atoms()];
    let mut seen = std::collections::HashSet::new();
    for b in g.bonds() {
        if b.u == b.v || !(1..=3).contains(&b.order) || !seen.insert((b.u.min(b.v), b.u.max(b.v))) {
            return false;
        }
        used[b.u] += b.order as u32;
        used[b.v] += b.order as u32;
    }
    let caps = |e: Element| match e {
        Element::C => 4,
        Element::N | Element::P => 3,
        Element::O | Element::S => 2,
        Element::F => 1,
    };
    g.atoms().iter().zip(&used).all(|(&e, &u)| u <= caps(e))
}

fn vocab() -> Vocab {
    Vocab::from_words(["a", "b"]).unwrap().with_selfies().unwrap().0
}

#[test]
fn tokenize_examples() {
    let v = vocab();
    assert_eq!(v.tokenize_selfies("[C][C]").unwrap(), vec![v.id("[C]").unwrap(); 2]);
    assert_eq!(v.tokenize_selfies("[C][=O]").unwrap(), vec![v.id("[C]").unwrap(), v.id("[=O]").unwrap()]);
    assert_eq!(v.tokenize_selfies("[C][Q]"), Err(ChemError::UnknownToken("[Q]".into())));
}

#[test]
fn decode_examples() {
    let g = dec("[C][C]");
    assert_eq!(g.atoms(), &[Element::C, Element::C]);
    assert_eq!(g.bonds().len(), 1);
    assert_eq!(g.bonds()[0].order, 1);

    let g = dec("[C][=O]");
    assert_eq!(g.atoms(), &[Element::C, Element::O]);
    assert_eq!(g.bonds()[0].order, 2);

    let g = dec("[C][C][C][Ring2]");
    assert_eq!(g.num_atoms(), 3);
    assert_eq!(g.num_bonds(), 3);
    assert!(g.bond_between(2, 0).is_some());

    let g = dec("[F][=C]");
    assert_eq!(g.atoms(), &[Element::F, Element::C]);
    assert_eq!(g.bonds()[0].order, 1);

    assert!(decode(&SelfiesSequence::default()).is_empty());
}

#[test]
fn random_strings_always_decode_to_valid_graphs() {
    let mut rng = SeedStream::new(7).rng_for("selfies-audit");
    let mut valid = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(0..=32);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..ALPHABET_SIZE)).collect();
        let g = decode(&SelfiesSequence::from_dialect_ids(&ids).unwrap());
        if valence_ok(&g) && g.is_connected() {
            valid += 1;
        }
    }
    assert_eq!(valid, 10_000);
}

#[test]
fn random_graphs_round_trip() {
    let mut rng = SeedStream::new(11).rng_for("roundtrip");
    let (mut checked, mut attempts) = (0, 0);
    while checked < 1000 {
        attempts += 1;
        let g = random_graph(&mut rng, 12);
        let Ok(s) = encode(&g) else { continue };
        let back = decode(&s);
        assert!(isomorphic(&g, &back), "{} does not round trip", s);
        checked += 1;
    }
    // The generator is biased toward encodable graphs.
    assert!(attempts < 1300, "only {checked} of {attempts} graphs were encodable");
}

#[test]
fn encode_examples() {
    let ethane = MolecularGraph::from_parts(vec![Element::C; 2], vec![(0, 1, 1)]).unwrap();
    assert_eq!(encode(&ethane).unwrap().render(), "[C][C]");
    let carbonyl = MolecularGraph::from_parts(vec![Element::C, Element::O], vec![(0, 1, 2)]).unwrap();
    assert_eq!(encode(&carbonyl).unwrap().render(), "[C][=O]");
    let split = MolecularGraph::from_parts(vec![Element::C; 3], vec![(0, 1, 1)]).unwrap();
    assert_eq!(encode(&split), Err(ChemError::Disconnected));
    let six_ring = MolecularGraph::from_parts(vec![Element::C; 6], (0..6).map(|i| (i, (i + 1) % 6, 1)).collect()).unwrap();
    assert!(isomorphic(&decode(&encode(&six_ring).unwrap()), &six_ring));
    let seven_ring = MolecularGraph::from_parts(vec![Element::C; 7], (0..7).map(|i| (i, (i + 1) % 7, 1)).collect()).unwrap();
    assert!(matches!(encode(&seven_ring), Err(ChemError::Inexpressible(_))));
}

#[test]
fn encoding_is_canonical_on_decoded_graphs() {
    let mut rng = SeedStream::new(3).rng_for("canon");
    for _ in 0..300 {
        let g = random_graph(&mut rng, 10);
        if let Ok(s) = encode(&g) {
            let canon = decode(&s);
            assert_eq!(encode(&canon).unwrap(), encode(&decode(&encode(&canon).unwrap())).unwrap());
        }
    }
}

fn any_sequence() -> impl Strategy<Value = SelfiesSequence> {
    prop::collection::vec(0..ALPHABET_SIZE, 0..40).prop_map(|ids| SelfiesSequence::from_dialect_ids(&ids).unwrap())
}

proptest! {
    #[test]
    fn decode_is_total_and_valid(seq in any_sequence()) {
        let g = decode(&seq);
        prop_assert!(valence_ok(&g));
        prop_assert!(g.is_connected());
    }

    #[test]
    fn render_then_tokenize_is_identity(seq in any_sequence()) {
        let v = vocab();
        let ids = v.encode_selfies(&seq);
        prop_assert_eq!(v.tokenize_selfies(&seq.render()).unwrap(), ids.clone());
        prop_assert_eq!(v.decode_selfies(&ids).unwrap(), seq);
    }

    #[test]
    fn decode_encode_is_isomorphic(seq in any_sequence()) {
        let g = decode(&seq);
        if let Ok(s) = encode(&g) {
            prop_assert!(isomorphic(&decode(&s), &g));
        }
    }

    #[test]
    fn parse_never_panics(text in "[\\[\\]A-Za-z0-9=#]{0,24}") {
        let _ = SelfiesSequence::parse(&text);
    }
}

#[test]
fn every_token_renders_and_parses() {
    for t in SelfiesToken::alphabet() {
        let s = SelfiesSequence::new(vec![t]);
        assert_eq!(SelfiesSequence::parse(&s.render()).unwrap(), s);
    }
}
