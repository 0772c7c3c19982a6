#![allow(dead_code)]

use gctaf::rng::Rng;
use gctaf::tensor::{Array, Tensor};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Smaller steps retried when a difference straddles a ReLU kink.
pub const FD_RETRY_STEPS: [f64; 2] = [1e-6, 1e-7];
/// Maximum accepted relative error between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-4;
/// Magnitude below which gradient entries are compared absolutely; round-off
/// in the difference quotient is about 1e-11 here.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

pub fn random_array(shape: &[usize], rng: &mut Rng) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Max relative error of the gradient of `f` w.r.t. every input element.
/// `f` must build a fresh graph from the given leaves and return a scalar.
pub fn gradcheck(inputs: &[Array], f: &dyn Fn(&[Tensor]) -> Tensor) -> f64 {
    let leaves: Vec<Tensor> = inputs.iter().map(|a| Tensor::from_array(a, true)).collect();
    let out = f(&leaves);
    out.backward().unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = leaves[i]
            .grad()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        for (j, &grad) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let perturbed: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let mut a = a.clone();
                        if k == i {
                            a.data_mut()[j] += delta;
                        }
                        Tensor::constant(&a)
                    })
                    .collect();
                f(&perturbed).item()
            };
            let central = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
            let mut err = rel_err(grad, central(FD_STEP));
            for h in FD_RETRY_STEPS {
                if err < FD_TOL {
                    break;
                }
                err = err.min(rel_err(grad, central(h)));
            }
            worst = worst.max(err);
        }
    }
    worst
}

/// Projects a tensor onto fixed random weights so every output element
/// contributes to the checked scalar.
pub fn project(y: &Tensor, seed: u64) -> Tensor {
    let w = random_array(y.shape(), &mut Rng::new(seed ^ 0xABCD));
    y.mul(&Tensor::constant(&w)).unwrap().sum().unwrap()
}
