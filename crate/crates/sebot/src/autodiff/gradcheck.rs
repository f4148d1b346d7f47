//! Central finite-difference gradient checking.

use crate::autodiff::{params::ParamStore, Tape, Tensor2};

/// Compare reverse-accumulated gradients of `f` against central finite
/// differences for every entry of every registered parameter. Returns the
/// maximum relative error, where the denominator is floored at 1e-3 so
/// near-zero gradients are checked absolutely at 1e-7 scale.
///
/// `f` must be deterministic across calls: dropout disabled (or fed from a
/// freshly reseeded stream inside `f`) and any sampled noise frozen.
pub fn gradcheck<F>(store: &mut ParamStore, f: F, h: f64) -> f64
where
    F: Fn(&Tape, &ParamStore) -> Tensor2,
{
    let tape = Tape::new();
    let loss = f(&tape, store);
    tape.backward(loss);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let analytic = tape.param_grad(store, name);
        let entries = analytic.data().len();
        for i in 0..entries {
            store.perturb(name, i, h);
            let plus = run_scalar(&f, store);
            store.perturb(name, i, -2.0 * h);
            let minus = run_scalar(&f, store);
            store.perturb(name, i, h);
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

fn run_scalar<F>(f: &F, store: &ParamStore) -> f64
where
    F: Fn(&Tape, &ParamStore) -> Tensor2,
{
    let tape = Tape::new();
    let out = f(&tape, store);
    tape.scalar(out)
}
