#![allow(dead_code)]

use docdiff::numerics::{mean, mul, no_grad, scale, Tensor};
use docdiff::rng::{uniform_vec, Rng};

pub const FD_STEP: f32 = 1e-3;
/// Gradients smaller than this are compared absolutely: the forward pass runs
/// in f32, so the difference quotient carries ~1e-4 of rounding noise.
pub const FD_FLOOR: f64 = 1.0;

pub type Inputs = Vec<(Vec<usize>, Vec<f32>)>;

pub fn random_input(rng: &mut Rng, shape: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let n = shape.iter().product();
    (shape.to_vec(), uniform_vec(rng, n, 1.0))
}

fn weighted_sum(out: &Tensor, w: &[f32]) -> f64 {
    out.data().iter().zip(w).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Largest relative error between backprop and central differences of
/// `L = Σ w ⊙ f(inputs)` over every input coordinate.
pub fn fd_max_error(rng: &mut Rng, inputs: &Inputs, f: &dyn Fn(&[Tensor]) -> Tensor) -> f64 {
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(s, d)| Tensor::parameter(s, d.clone()).unwrap())
        .collect();
    let out = f(&params);
    let w = uniform_vec(rng, out.numel(), 1.0);
    let wt = Tensor::from_vec(out.shape(), w.clone()).unwrap();
    let loss = scale(&mean(&mul(&out, &wt).unwrap()), out.numel() as f32);
    loss.backward().unwrap();

    let eval = |vals: &[Vec<f32>]| -> f64 {
        no_grad(|| {
            let ts: Vec<Tensor> = inputs
                .iter()
                .zip(vals)
                .map(|((s, _), v)| Tensor::from_vec(s, v.clone()).unwrap())
                .collect();
            weighted_sum(&f(&ts), &w)
        })
    };
    let mut worst = 0.0f64;
    let mut vals: Vec<Vec<f32>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    for (i, p) in params.iter().enumerate() {
        // inputs the output does not depend on receive no gradient at all
        let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        for j in 0..vals[i].len() {
            let x = vals[i][j];
            let (xp, xm) = (x + FD_STEP, x - FD_STEP);
            vals[i][j] = xp;
            let lp = eval(&vals);
            vals[i][j] = xm;
            let lm = eval(&vals);
            vals[i][j] = x;
            let fd = (lp - lm) / (xp as f64 - xm as f64);
            let a = grad[j] as f64;
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}
