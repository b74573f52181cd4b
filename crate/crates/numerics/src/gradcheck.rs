//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::params::{Gradients, ParameterStore};
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn eval<F>(model_fn: &F, store: &ParameterStore) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &'t ParameterStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let loss = model_fn(&tape, store)?;
    Ok(loss.item())
}

/// Analytic gradients of `model_fn` at `store`.
pub fn analytic_gradients<F>(model_fn: &F, store: &ParameterStore) -> Result<Gradients>
where
    F: for<'t> Fn(&'t Tape, &'t ParameterStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let loss = model_fn(&tape, store)?;
    tape.backward(loss)
}

/// Compares backward-pass gradients against central differences with step
/// `eps` on `samples` coordinates drawn uniformly from all trainable entries.
pub fn grad_check<F>(model_fn: F, store: &ParameterStore, eps: f64, samples: usize, seed: u64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &'t ParameterStore) -> Result<Var<'t>>,
{
    let analytic = analytic_gradients(&model_fn, store)?;
    compare_gradients(model_fn, store, &analytic, eps, samples, seed)
}

/// Like [`grad_check`] but against caller-supplied analytic gradients.
pub fn compare_gradients<F>(
    model_fn: F,
    store: &ParameterStore,
    analytic: &Gradients,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &'t ParameterStore) -> Result<Var<'t>>,
{
    let first = eval(&model_fn, store)?;
    let second = eval(&model_fn, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministic { first, second });
    }
    let coords: Vec<(String, usize)> =
        store.iter().filter(|(n, _)| !store.is_frozen(n)).flat_map(|(n, t)| (0..t.len()).map(move |i| (n.to_string(), i))).collect();
    if coords.is_empty() {
        return Err(NumericsError::InvalidArgument("no trainable coordinates".into()));
    }
    let mut rng = SeedStream::new(seed).rng_for("gradcheck");
    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: None };
    let mut probe = store.clone();
    for _ in 0..samples {
        let (name, idx) = &coords[rng.random_range(0..coords.len())];
        let orig = store.get(name).expect("listed").data()[*idx];
        probe.get_mut(name).expect("listed").data_mut()[*idx] = orig + eps;
        let plus = eval(&model_fn, &probe)?;
        probe.get_mut(name).expect("listed").data_mut()[*idx] = orig - eps;
        let minus = eval(&model_fn, &probe)?;
        probe.get_mut(name).expect("listed").data_mut()[*idx] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(name).map_or(0.0, |g| g.data()[*idx]);
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = rel.max(report.max_relative_error);
            if rel >= report.max_relative_error {
                report.worst = Some((name.clone(), *idx, a, numeric));
            }
        }
    }
    Ok(report)
}
