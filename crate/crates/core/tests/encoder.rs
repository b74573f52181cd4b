use moldiff_chem::{decode, Element, MolecularGraph, SelfiesSequence, NUM_GROUPS};
use moldiff_core::aligner::{Provenance, QFormer};
use moldiff_core::config::{AlignerConfig, EncoderConfig};
use moldiff_core::encoder::{
    func_group_loss, hybrid_concat, orthonormal_ids, recon_loss, FuncGroupHead, GraphEncoder, NodeIds, ReconDecoder, Segment, RECON_VOCAB,
};
use moldiff_numerics::layers::Ctx;
use moldiff_numerics::{grad_check, ParameterStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_cfg() -> EncoderConfig {
    EncoderConfig {
        d_g: 16,
        gine_layers: 2,
        gt_layers: 1,
        gt_heads: 2,
        id_dim: 12,
        func_hidden: 16,
        recon_heads: 2,
        ..EncoderConfig::default()
    }
}

fn graph(text: &str) -> MolecularGraph {
    decode(&text.parse::<SelfiesSequence>().unwrap())
}

/// Applies `perm` (new index of each old atom) to `g`.
fn permuted(g: &MolecularGraph, perm: &[usize]) -> MolecularGraph {
    let mut atoms = vec![Element::C; g.num_atoms()];
    for (old, &new) in perm.iter().enumerate() {
        atoms[new] = g.element(old);
    }
    let bonds = g.bonds().iter().map(|b| (perm[b.u], perm[b.v], b.order)).collect();
    MolecularGraph::from_parts(atoms, bonds).unwrap()
}

fn setup(cfg: &EncoderConfig) -> (GraphEncoder, ParameterStore) {
    let enc = GraphEncoder::new(cfg);
    let mut store = ParameterStore::new();
    enc.init(&mut store, &mut rng(1)).unwrap();
    (enc, store)
}

#[test]
fn hybrid_row_counts_and_segments() {
    let (enc, store) = setup(&small_cfg());
    for (text, rows) in [("[C][C][O]", 10), ("[C]", 4), ("[C][C][C][C][Ring3]", 14)] {
        let g = graph(text);
        assert_eq!(2 * g.num_atoms() + g.num_bonds() + 2, rows);
        let tape = Tape::new();
        let h = enc.forward(&Ctx::new(&tape, &store), &g, NodeIds::Eval).unwrap();
        assert_eq!(h.rows.rows(), rows, "{text}");
        assert_eq!(h.len(), rows);
        let mut covered = 0;
        for (_, r) in h.segments() {
            assert_eq!(r.start, covered);
            covered = r.end;
        }
        assert_eq!(covered, rows);
    }
    let tape = Tape::new();
    let h = enc.forward(&Ctx::new(&tape, &store), &graph("[C][C][O]"), NodeIds::Eval).unwrap();
    assert_eq!(h.segment_of(0).unwrap().name(), "h_g^GINE");
    assert_eq!(h.segment_of(1), Some(Segment::NodeGine));
    assert_eq!(h.segment_of(9), Some(Segment::EdgeGt));
    assert_eq!(h.segment_of(10), None);
}

#[test]
fn width_mismatch_rejected() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[1, 4]));
    let b = tape.constant(Tensor::zeros(&[2, 4]));
    let c = tape.constant(Tensor::zeros(&[2, 5]));
    assert!(hybrid_concat((a, b), (a, c, b)).is_err());
    assert!(hybrid_concat((a, b), (a, b, b)).is_ok());
}

#[test]
fn empty_graph_rejected() {
    let (enc, store) = setup(&small_cfg());
    let tape = Tape::new();
    assert!(enc.forward(&Ctx::new(&tape, &store), &MolecularGraph::new(), NodeIds::Eval).is_err());
}

#[test]
fn single_atom_without_layers_reads_out_its_embedding() {
    let cfg = EncoderConfig { gine_layers: 0, ..small_cfg() };
    let (enc, store) = setup(&cfg);
    let tape = Tape::new();
    let (hg, _) = enc.gine_forward(&Ctx::new(&tape, &store), &graph("[N]")).unwrap();
    let table = store.get("encoder.gine.atom").unwrap();
    assert_eq!(hg.value().data(), table.row(Element::N.index()));
}

#[test]
fn gine_is_permutation_equivariant() {
    let (enc, store) = setup(&small_cfg());
    let g = graph("[C][C][Branch1][O][=O][N][C][Ring2]");
    let perm: Vec<usize> = (0..g.num_atoms()).rev().collect();
    let p = permuted(&g, &perm);
    let tape = Tape::new();
    let cx = Ctx::new(&tape, &store);
    let (hg, hv) = enc.gine_forward(&cx, &g).unwrap();
    let (pg, pv) = enc.gine_forward(&cx, &p).unwrap();
    assert!(hg.value().max_abs_diff(&pg.value()) < 1e-9);
    for (old, &new) in perm.iter().enumerate() {
        let a = hv.value();
        let b = pv.value();
        assert!(a.row(old).iter().zip(b.row(new)).all(|(x, y)| (x - y).abs() < 1e-9));
    }
}

#[test]
fn identifiers_are_orthonormal() {
    for n in [1, 5, 12] {
        let p = orthonormal_ids(n, 12, &mut rng(n as u64)).unwrap();
        let ppt = p.matmul(&p.transpose()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ppt.get(i, j) - want).abs() < 1e-9);
            }
        }
    }
    assert!(orthonormal_ids(13, 12, &mut rng(0)).is_err());
}

#[test]
fn token_graph_counts() {
    let (enc, store) = setup(&small_cfg());
    let tape = Tape::new();
    let (hg, hv, he) = enc.tokengt_forward(&Ctx::new(&tape, &store), &graph("[C][O]"), NodeIds::Sample(3)).unwrap();
    assert_eq!((hg.rows(), hv.rows(), he.rows()), (1, 2, 1));
}

#[test]
fn token_graph_invariant_under_tied_relabeling() {
    let cfg = small_cfg();
    let (enc, store) = setup(&cfg);
    let g = graph("[C][C][Branch1][O][=O][N][C][Ring2]");
    let n = g.num_atoms();
    let perm: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect();
    let p_g = permuted(&g, &perm);
    let ids = orthonormal_ids(n, cfg.id_dim, &mut rng(5)).unwrap();
    let mut rows = vec![vec![0.0; cfg.id_dim]; n];
    for (old, &new) in perm.iter().enumerate() {
        rows[new] = ids.row(old).to_vec();
    }
    let ids_perm = Tensor::from_rows(&rows).unwrap();
    let tape = Tape::new();
    let cx = Ctx::new(&tape, &store);
    let (a, _, _) = enc.tokengt_forward(&cx, &g, NodeIds::Given(&ids)).unwrap();
    let (b, _, _) = enc.tokengt_forward(&cx, &p_g, NodeIds::Given(&ids_perm)).unwrap();
    assert!(a.value().max_abs_diff(&b.value()) < 1e-6);
}

#[test]
fn eval_identifiers_are_fixed() {
    let (enc, _) = setup(&small_cfg());
    assert_eq!(enc.node_ids(4, NodeIds::Eval).unwrap(), enc.node_ids(4, NodeIds::Eval).unwrap());
    assert_ne!(enc.node_ids(4, NodeIds::Sample(1)).unwrap(), enc.node_ids(4, NodeIds::Sample(2)).unwrap());
    assert!(enc.node_ids(4, NodeIds::Given(&Tensor::zeros(&[3, 12]))).is_err());
}

#[test]
fn group_loss_at_half_probability() {
    let head = FuncGroupHead::new(8, 8);
    let mut store = ParameterStore::new();
    head.init(&mut store, &mut rng(2)).unwrap();
    store.get_mut("pretrain.func.2.weight").unwrap().data_mut().fill(0.0);
    let tape = Tape::new();
    let cx = Ctx::new(&tape, &store);
    let h = cx.constant(moldiff_numerics::init::normal(&mut rng(3), &[4, 8], 0.0, 1.0));
    let y = [true, false, true, false, false, true, false, false];
    let l = func_group_loss(&cx, h, &y, &head).unwrap().item();
    assert!((l - NUM_GROUPS as f64 * 2f64.ln()).abs() < 1e-12, "{l}");
    assert!((l - 5.545).abs() < 1e-3);
}

#[test]
fn uniform_decoder_and_causality() {
    let dec = ReconDecoder::new(8, 8, 2, 2, 16);
    let mut store = ParameterStore::new();
    dec.init(&mut store, &mut rng(4)).unwrap();
    let h0 = moldiff_numerics::init::normal(&mut rng(5), &[3, 8], 0.0, 1.0);
    let s: SelfiesSequence = "[C][=O][N][C]".parse().unwrap();

    let mut flat = store.clone();
    flat.get_mut("pretrain.recon.out.weight").unwrap().data_mut().fill(0.0);
    let tape = Tape::new();
    let cx = Ctx::new(&tape, &flat);
    let l = recon_loss(&cx, cx.constant(h0.clone()), &s, &dec).unwrap().item();
    assert!((l - 4.0 * (RECON_VOCAB as f64).ln()).abs() < 1e-12, "{l}");

    let tape = Tape::new();
    let cx = Ctx::new(&tape, &store);
    let a = dec.logits(&cx, cx.constant(h0.clone()), &s).unwrap().value();
    let edited: SelfiesSequence = "[C][=O][O][C]".parse().unwrap();
    let b = dec.logits(&cx, cx.constant(h0), &edited).unwrap().value();
    for i in 0..=2 {
        assert_eq!(a.row(i), b.row(i), "row {i} must not see s_2");
    }
    assert_ne!(a.row(3), b.row(3));
}

fn composed_store() -> (GraphEncoder, QFormer, FuncGroupHead, ReconDecoder, ParameterStore) {
    let cfg = small_cfg();
    let enc = GraphEncoder::new(&cfg);
    let aligner = QFormer::new(&AlignerConfig { n_q: 4, heads: 2, depth: 1, reinit_after_pretrain: false }, cfg.d_g, 8);
    let head = FuncGroupHead::new(8, 8);
    let dec = ReconDecoder::new(8, 8, 1, 2, 16);
    let mut store = ParameterStore::new();
    enc.init(&mut store, &mut rng(7)).unwrap();
    aligner.init(&mut store, &mut rng(8)).unwrap();
    head.init(&mut store, &mut rng(9)).unwrap();
    dec.init(&mut store, &mut rng(10)).unwrap();
    (enc, aligner, head, dec, store)
}

#[allow(clippy::too_many_arguments)]
fn pretrain_objective<'t>(
    tape: &'t Tape,
    store: &'t ParameterStore,
    enc: &GraphEncoder,
    aligner: &QFormer,
    head: &FuncGroupHead,
    dec: &ReconDecoder,
    g: &MolecularGraph,
    ids: &Tensor,
) -> moldiff_numerics::Result<moldiff_numerics::Var<'t>> {
    let cx = Ctx::new(tape, store);
    let s = moldiff_chem::encode(g).unwrap();
    let y = moldiff_chem::detect_functional_groups(g);
    let h = enc.forward(&cx, g, NodeIds::Given(ids))?;
    let a = aligner.forward(&cx, &h, Provenance::Chosen)?.rows;
    func_group_loss(&cx, a, &y, head)?.add(recon_loss(&cx, a, &s, dec)?)
}

#[test]
fn pretraining_objective_gradients() {
    let (enc, aligner, head, dec, store) = composed_store();
    let g = graph("[C][C][Branch1][O][=O][N][C][Ring2]");
    let ids = enc.node_ids(g.num_atoms(), NodeIds::Eval).unwrap();
    let report = grad_check(|t, st| pretrain_objective(t, st, &enc, &aligner, &head, &dec, &g, &ids), &store, 1e-6, 200, 11).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");

    let grads =
        moldiff_numerics::gradcheck::analytic_gradients(&|t, st| pretrain_objective(t, st, &enc, &aligner, &head, &dec, &g, &ids), &store)
            .unwrap();
    for name in store.names().filter(|n| n.starts_with("encoder.")) {
        let norm = grads.get(name).map_or(0.0, |g| g.norm());
        assert!(norm > 0.0, "{name} has no gradient");
    }
}
