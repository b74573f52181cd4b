use moldiff_core::config::{SamplerConfig, Strategy};
use moldiff_core::sampler::{block_steps, sample, sample_block, sample_pure, schedule, truncate_eos, DenoiseTrace, SpecialTokens};
use moldiff_core::Result;
use moldiff_numerics::Tensor;

const MASK: usize = 0;
const EOS: usize = 1;
const V: usize = 12;

fn special() -> SpecialTokens {
    SpecialTokens { mask: MASK, eos: EOS, forbidden: vec![MASK, 2, 3, 4] }
}

fn cfg(gen_len: usize, steps: usize, strategy: Strategy) -> SamplerConfig {
    SamplerConfig { steps, gen_len, strategy, block_len: 8, temperature: 0.0, seed: 0, revisit: false }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^ (z >> 33)
}

/// Context-dependent pseudo-random logits.
fn hash_model(x: &[usize]) -> Result<Tensor> {
    let ctx = x.iter().fold(17u64, |h, &t| mix(h ^ t as u64));
    let mut data = Vec::with_capacity(x.len() * V);
    for i in 0..x.len() {
        for j in 0..V {
            data.push((mix(ctx ^ ((i * V + j) as u64) << 7) % 10_000) as f64 / 1000.0);
        }
    }
    Ok(Tensor::new(vec![x.len(), V], data)?)
}

/// One-hot logits for a fixed target, ignoring the input.
fn oracle(target: Vec<usize>) -> impl Fn(&[usize]) -> Result<Tensor> {
    move |x: &[usize]| {
        let mut t = Tensor::full(&[x.len(), V], -30.0);
        for (i, &tok) in target.iter().enumerate() {
            t.row_mut(i)[tok] = 30.0;
        }
        Ok(t)
    }
}

fn target_string(l: usize) -> Vec<usize> {
    (0..l).map(|i| 5 + (i * 7 + i / 3) % 7).collect()
}

fn grid() -> Vec<(usize, usize)> {
    [8usize, 32, 128].into_iter().flat_map(|l| [1, 4, 16, l].into_iter().map(move |t| (l, t))).collect()
}

fn check_schedule_and_monotone(out: &[usize], trace: &DenoiseTrace, l: usize, t: usize) {
    assert_eq!(trace.steps.len(), t);
    let mut seen = vec![None; l];
    for (k, s) in trace.steps.iter().enumerate() {
        assert_eq!(s.step, k + 1);
        assert_eq!(s.total_finalized, schedule(l, k + 1, t), "L={l} T={t} k={}", k + 1);
        for (&p, &tok) in s.finalized.iter().zip(&s.tokens) {
            assert!(seen[p].is_none(), "position {p} finalized twice");
            seen[p] = Some(tok);
        }
    }
    for (p, tok) in seen.iter().enumerate() {
        assert_eq!(Some(out[p]), *tok, "finalized token changed at {p}");
    }
    assert!(!out.contains(&MASK));
}

#[test]
fn schedule_arithmetic() {
    assert_eq!(schedule(8, 1, 1), 8);
    for k in 0..=8 {
        assert_eq!(schedule(8, k, 8), k);
    }
    // round(5·1/2) = 3 with halves up.
    assert_eq!(schedule(5, 1, 2), 3);
    assert_eq!(schedule(10, 1, 64), 0);
    assert_eq!(schedule(10, 64, 64), 10);
    assert_eq!(block_steps(64, 8, 32), 16);
    assert_eq!(block_steps(1, 8, 128), 1);
}

#[test]
fn contracts_over_grid() {
    for (l, t) in grid() {
        let c = cfg(l, t, Strategy::Pure);
        let (a, trace) = sample_pure(&hash_model, &c, &special()).unwrap();
        check_schedule_and_monotone(&a, &trace, l, t);
        let (b, trace_b) = sample_pure(&hash_model, &c, &special()).unwrap();
        assert_eq!(a, b, "greedy determinism L={l} T={t}");
        assert_eq!(trace, trace_b);
        let (o, _) = sample_pure(&oracle(target_string(l)), &c, &special()).unwrap();
        assert_eq!(o, target_string(l), "oracle L={l} T={t}");
    }
}

#[test]
fn one_step_is_one_shot_argmax() {
    let c = cfg(16, 1, Strategy::Pure);
    let (out, trace) = sample_pure(&hash_model, &c, &special()).unwrap();
    let logits = hash_model(&[MASK; 16]).unwrap();
    let argmax: Vec<usize> = (0..16)
        .map(|i| {
            (5..V).chain([EOS]).fold(EOS, |b, j| {
                if logits.row(i)[j] > logits.row(i)[b] || (logits.row(i)[j] == logits.row(i)[b] && j < b) {
                    j
                } else {
                    b
                }
            })
        })
        .collect();
    assert_eq!(out, argmax);
    assert_eq!(trace.model_calls(), 1);
}

#[test]
fn steps_equal_length_finalize_one_each() {
    let (_, trace) = sample_pure(&hash_model, &cfg(12, 12, Strategy::Pure), &special()).unwrap();
    assert!(trace.steps.iter().all(|s| s.finalized.len() == 1));
}

#[test]
fn confidence_ordering_on_replay() {
    let l = 16;
    let c = cfg(l, 5, Strategy::Pure);
    let (_, trace) = sample_pure(&hash_model, &c, &special()).unwrap();
    let mut x = vec![MASK; l];
    for s in &trace.steps {
        if !s.evaluated {
            continue;
        }
        let logits = hash_model(&x).unwrap();
        let conf = |i: usize| {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let best = (0..V).filter(|j| !special().forbidden.contains(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            (best - max).exp() / z
        };
        let lowest_kept =
            s.finalized
                .iter()
                .map(|&p| (conf(p), p))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 > a.1) { b } else { a });
        for p in (0..l).filter(|&p| x[p] == MASK && !s.finalized.contains(&p)) {
            let cp = conf(p);
            assert!(cp < lowest_kept.0 || (cp == lowest_kept.0 && p > lowest_kept.1), "step {}: remasked {p} beats kept", s.step);
        }
        for (&p, &tok) in s.finalized.iter().zip(&s.tokens) {
            x[p] = tok;
        }
    }
}

#[test]
fn forbidden_tokens_never_emitted() {
    let bad = |x: &[usize]| -> Result<Tensor> {
        let mut t = Tensor::zeros(&[x.len(), V]);
        for i in 0..x.len() {
            t.row_mut(i)[MASK] = 100.0;
            t.row_mut(i)[2] = 90.0;
            t.row_mut(i)[7] = 1.0;
        }
        Ok(t)
    };
    let (out, _) = sample_pure(&bad, &cfg(6, 3, Strategy::Pure), &special()).unwrap();
    assert_eq!(out, vec![7; 6]);
}

#[test]
fn single_block_matches_pure() {
    for (l, t) in grid() {
        let mut c = cfg(l, t, Strategy::Block);
        c.block_len = l;
        let (b, _) = sample_block(&hash_model, &c, &special()).unwrap();
        let (p, _) = sample_pure(&hash_model, &cfg(l, t, Strategy::Pure), &special()).unwrap();
        assert_eq!(b, p, "L={l} T={t}");
    }
}

#[test]
fn blocks_see_left_context() {
    // Block 2 copies token 0 of block 1 into every position.
    let keyed = |first: usize| {
        move |x: &[usize]| -> Result<Tensor> {
            let mut t = Tensor::zeros(&[x.len(), V]);
            for i in 0..x.len() {
                let tok = if i < 4 {
                    first
                } else if x[0] == MASK {
                    5
                } else {
                    x[0] + 1
                };
                t.row_mut(i)[tok] = 10.0;
            }
            Ok(t)
        }
    };
    let mut c = cfg(8, 8, Strategy::Block);
    c.block_len = 4;
    let (a, trace) = sample(&keyed(6), &c, &special()).unwrap();
    let (b, _) = sample(&keyed(8), &c, &special()).unwrap();
    assert_eq!(a, vec![6, 6, 6, 6, 7, 7, 7, 7]);
    assert_eq!(b, vec![8, 8, 8, 8, 9, 9, 9, 9]);
    for s in &trace.steps {
        let range = s.block * 4..s.block * 4 + 4;
        assert!(s.finalized.iter().all(|p| range.contains(p)), "{s:?}");
    }
}

#[test]
fn block_contracts_over_grid() {
    for (l, t) in grid() {
        let c = cfg(l, t, Strategy::Block);
        let (out, trace) = sample_block(&hash_model, &c, &special()).unwrap();
        assert!(!out.contains(&MASK), "L={l} T={t}");
        let (o, _) = sample_block(&oracle(target_string(l)), &c, &special()).unwrap();
        assert_eq!(o, target_string(l));
        // Within a block, finalization counts follow the per-block schedule.
        let blocks = l.div_ceil(c.block_len);
        for b in 0..blocks {
            let len = (l - b * c.block_len).min(c.block_len);
            let tb = block_steps(t, len, l);
            let steps: Vec<_> = trace.steps.iter().filter(|s| s.block == b).collect();
            assert_eq!(steps.len(), tb);
            for (k, s) in steps.iter().enumerate() {
                assert_eq!(s.total_finalized, schedule(len, k + 1, tb));
            }
        }
    }
}

#[test]
fn temperature_sampling_is_seeded() {
    let mut c = cfg(16, 4, Strategy::Pure);
    c.temperature = 1.0;
    c.seed = 3;
    let (a, _) = sample(&hash_model, &c, &special()).unwrap();
    let (b, _) = sample(&hash_model, &c, &special()).unwrap();
    assert_eq!(a, b);
    let outs: std::collections::HashSet<Vec<usize>> =
        (0..8).map(|s| sample(&hash_model, &SamplerConfig { seed: s, ..c.clone() }, &special()).unwrap().0).collect();
    assert!(outs.len() > 1);
}

#[test]
fn revisit_mode_terminates() {
    let mut c = cfg(10, 4, Strategy::Pure);
    c.revisit = true;
    let (out, trace) = sample(&hash_model, &c, &special()).unwrap();
    assert!(!out.contains(&MASK));
    assert_eq!(trace.steps.last().unwrap().total_finalized, 10);
}

#[test]
fn invalid_configs_rejected() {
    assert!(sample(&hash_model, &cfg(0, 4, Strategy::Pure), &special()).is_err());
    assert!(sample(&hash_model, &cfg(4, 0, Strategy::Pure), &special()).is_err());
    let mut c = cfg(4, 4, Strategy::Pure);
    c.temperature = -1.0;
    assert!(sample(&hash_model, &c, &special()).is_err());
}

#[test]
fn eos_truncation() {
    assert_eq!(truncate_eos(&[7, 8, EOS, 9], EOS), vec![7, 8]);
    assert_eq!(truncate_eos(&[7, 8], EOS), vec![7, 8]);
    assert!(truncate_eos(&[EOS, 7], EOS).is_empty());
}

#[test]
fn trace_dump_is_one_json_object_per_step() {
    let (_, trace) = sample_pure(&hash_model, &cfg(8, 4, Strategy::Pure), &special()).unwrap();
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.get("finalized").is_some() && v.get("confidences").is_some());
    }
}
