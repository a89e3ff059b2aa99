//! Central finite-difference oracle shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{ParamId, ParamStore};
use crate::{Tensor, Var};

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub(crate) fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Max relative error between backprop and central differences (step 1e-5)
/// over at most `samples` coordinates per input.
pub(crate) fn grad_check(
    inputs: &[Tensor<f64>],
    samples: usize,
    f: impl Fn(&[Var<f64>]) -> Var<f64>,
) -> f64 {
    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars);
    let grads = out.backward();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&vars[k]);
        let n = input.len();
        let picks: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in picks {
            let eval = |delta: f64| {
                let args: Vec<Var<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == k {
                            t.data_mut()[i] += delta;
                        }
                        Var::constant(t)
                    })
                    .collect();
                f(&args).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Like [`grad_check`] but over `samples` random scalar entries of the
/// parameters whose name starts with `prefix`.
pub(crate) fn param_grad_check(
    ps: &ParamStore<f64>,
    prefix: &str,
    samples: usize,
    seed: u64,
    f: impl Fn(&ParamStore<f64>) -> Var<f64>,
) -> f64 {
    let ps = ps.trainable();
    let grads = f(&ps).backward();
    let params: Vec<(ParamId, Var<f64>)> = ps
        .iter()
        .filter(|(_, name, _)| name.starts_with(prefix))
        .map(|(id, _, v)| (id, v.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (id, var) = &params[rng.gen_range(0..params.len())];
        let i = rng.gen_range(0..var.value().len());
        let analytic = grads.get_or_zeros(var).data()[i];
        let eval = |delta: f64| {
            let mut probe = ps.frozen();
            let mut t = var.value().clone();
            t.data_mut()[i] += delta;
            probe.set(*id, t);
            f(&probe).item()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}
