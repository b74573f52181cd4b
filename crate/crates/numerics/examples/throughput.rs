//! Rough forward+backward throughput of a small transformer stack.

use std::time::Instant;

use moldiff_numerics::layers::{Ctx, TransformerBlock};
use moldiff_numerics::{init, ParameterStore, SeedStream, Tape};

fn main() {
    let d: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(70);
    let layers = 3;
    let mut store = ParameterStore::new();
    let mut rng = SeedStream::new(1).rng();
    let blocks: Vec<_> = (0..layers).map(|i| TransformerBlock::new(&format!("b{i}"), d, 4, 4 * d)).collect();
    for b in &blocks {
        b.init(&mut store, &mut rng).unwrap();
    }
    let x = init::normal(&mut rng, &[n, d], 0.0, 1.0);
    let iters = 200;
    let start = Instant::now();
    for _ in 0..iters {
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &store);
        let mut h = tape.constant(x.clone());
        for b in &blocks {
            h = b.forward(&cx, h, None).unwrap();
        }
        let loss = h.sum();
        tape.backward(loss).unwrap();
    }
    let per = start.elapsed().as_secs_f64() / iters as f64;
    let flops = 6.0 * store.num_scalars() as f64 * n as f64;
    println!("d={d} n={n} params={} {:.3} ms/iter, ~{:.2} GFLOP/s", store.num_scalars(), per * 1e3, flops / per / 1e9);
}
