//! Shared test helpers: a central finite-difference gradient checker.
#![allow(dead_code)] // not every test binary uses every helper

use ctgage::tensor::{Tape, Tensor, VarId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds a graph from leaves and returns any output node.
pub type GraphFn<'a> = &'a dyn Fn(&mut Tape, &[VarId]) -> ctgage::Result<VarId>;

fn eval_weighted(inputs: &[Tensor], f: GraphFn, w: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids).expect("graph build failed");
    let shape = tape.value(out).shape.clone();
    let wt = tape.leaf(Tensor::new(shape, w.to_vec()).unwrap());
    let prod = tape.mul(out, wt).unwrap();
    let s = tape.sum_all(prod);
    tape.value(s).item()
}

/// Compares reverse-mode gradients against central finite differences for
/// a scalarized graph output (random fixed projection weights, so every
/// output coordinate contributes). Checks up to `max_coords` coordinates
/// per input, chosen at random. Relative tolerance `tol` on the scale
/// max(1, |numeric|).
pub fn check_gradients(
    inputs: &[Tensor],
    f: GraphFn,
    max_coords: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) {
    // projection weights sized from a probe run
    let out_len = {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids).expect("graph build failed");
        tape.value(out).len()
    };
    let w: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // analytic gradients
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids).expect("graph build failed");
    let shape = tape.value(out).shape.clone();
    let wt = tape.leaf(Tensor::new(shape, w.clone()).unwrap());
    let prod = tape.mul(out, wt).unwrap();
    let s = tape.sum_all(prod);
    tape.backward(s).unwrap();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id)).collect();

    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            for i in 0..max_coords {
                let j = rng.gen_range(i..n);
                coords.swap(i, j);
            }
            coords.truncate(max_coords);
        }
        for &c in &coords {
            let h = 1e-5 * input.data[c].abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[ii].data[c] += h;
            let mut minus = inputs.to_vec();
            minus[ii].data[c] -= h;
            let numeric = (eval_weighted(&plus, f, &w) - eval_weighted(&minus, f, &w)) / (2.0 * h);
            let a = analytic[ii][c];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            assert!(
                rel <= tol,
                "input {ii} coord {c}: analytic {a:.8e} vs numeric {numeric:.8e} (rel {rel:.3e})"
            );
        }
    }
}

/// Random tensor with entries bounded away from zero (so kinks in
/// relu/abs/max-pool are never within finite-difference reach).
pub fn rand_tensor_nonzero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Random strictly positive tensor (for divisors, scales).
pub fn rand_tensor_positive(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(0.4..1.6)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Finite-difference sweep over every differentiable operator and the
/// three loss terms, `fixtures` random fixtures each, tolerance `tol`.
pub fn operator_gradient_sweep(fixtures: u64, tol: f64) {
    use ctgage::loss::{self, LossWeights};
    use ctgage::tensor::Padding;

    let prior = {
        let labels: Vec<f64> = (0..40).map(|i| 220.0 + (i % 10) as f64 * 7.0).collect();
        loss::build_prior(&labels, 1.0, 1e-6).unwrap()
    };
    for seed in 0..fixtures {
        let rng = &mut ChaCha8Rng::seed_from_u64(7000 + seed);
        // convolution, both paddings, strided
        let x = rand_tensor_nonzero(vec![2, 3, 12], rng);
        let w = rand_tensor_nonzero(vec![4, 3, 5], rng);
        let b = rand_tensor_nonzero(vec![4], rng);
        check_gradients(
            &[x, w, b],
            &|t, i| t.conv1d(i[0], i[1], i[2], 1, Padding::Valid),
            12,
            tol,
            rng,
        );
        let x = rand_tensor_nonzero(vec![2, 2, 11], rng);
        let w = rand_tensor_nonzero(vec![3, 2, 4], rng);
        let b = rand_tensor_nonzero(vec![3], rng);
        check_gradients(
            &[x, w, b],
            &|t, i| t.conv1d(i[0], i[1], i[2], 2, Padding::Same),
            12,
            tol,
            rng,
        );
        // dense
        let x = rand_tensor_nonzero(vec![3, 6], rng);
        let w = rand_tensor_nonzero(vec![4, 6], rng);
        let b = rand_tensor_nonzero(vec![4], rng);
        check_gradients(&[x, w, b], &|t, i| t.dense(i[0], i[1], i[2]), 12, tol, rng);
        // batchnorm, train and eval
        let x = rand_tensor_nonzero(vec![3, 2, 7], rng);
        let g = rand_tensor_positive(vec![2], rng);
        let be = rand_tensor_nonzero(vec![2], rng);
        check_gradients(
            &[x.clone(), g.clone(), be.clone()],
            &|t, i| {
                let (y, _, _) =
                    t.batchnorm1d(i[0], i[1], i[2], 1e-5, true, &[0.0; 2], &[1.0; 2])?;
                Ok(y)
            },
            12,
            tol,
            rng,
        );
        check_gradients(
            &[x, g, be],
            &|t, i| {
                let (y, _, _) =
                    t.batchnorm1d(i[0], i[1], i[2], 1e-5, false, &[0.3, -0.2], &[1.4, 0.9])?;
                Ok(y)
            },
            12,
            tol,
            rng,
        );
        // elementwise: relu, sigmoid, abs, affine
        let x = rand_tensor_nonzero(vec![3, 4], rng);
        check_gradients(
            &[x],
            &|t, i| {
                let r = t.relu(i[0]);
                let s = t.sigmoid(r);
                let a = t.abs(s);
                Ok(t.affine(a, 2.5, -0.3))
            },
            12,
            tol,
            rng,
        );
        // pooling and channel scaling
        let x = rand_tensor_nonzero(vec![2, 3, 10], rng);
        check_gradients(&[x], &|t, i| t.max_pool1d(i[0], 3, 2), 16, tol, rng);
        let x = rand_tensor_nonzero(vec![2, 3, 10], rng);
        check_gradients(&[x], &|t, i| t.global_avg_pool(i[0]), 16, tol, rng);
        let x = rand_tensor_nonzero(vec![2, 3, 6], rng);
        let s = rand_tensor_positive(vec![2, 3], rng);
        check_gradients(&[x, s], &|t, i| t.scale_channels(i[0], i[1]), 12, tol, rng);
        // arithmetic
        let a = rand_tensor_nonzero(vec![2, 5], rng);
        let b = rand_tensor_positive(vec![2, 5], rng);
        check_gradients(
            &[a, b],
            &|t, i| {
                let s = t.add(i[0], i[1])?;
                let d = t.sub(s, i[0])?;
                let m = t.mul(d, i[0])?;
                t.div(m, i[1])
            },
            12,
            tol,
            rng,
        );
        // reductions, reshape, soft sort
        let x = rand_tensor_nonzero(vec![2, 6], rng);
        check_gradients(
            &[x],
            &|t, i| {
                let r = t.reshape(i[0], vec![3, 4])?;
                Ok(t.mean_all(r))
            },
            12,
            tol,
            rng,
        );
        let x = rand_tensor_nonzero(vec![7], rng);
        check_gradients(&[x], &|t, i| Ok(t.sum_all(i[0])), 7, tol, rng);
        let data: Vec<f64> = (0..6).map(|i| i as f64 * 0.8 + rng.gen_range(-0.3..0.3)).collect();
        let x = Tensor::new(vec![6], data).unwrap();
        check_gradients(&[x], &|t, i| t.soft_sort(i[0], 0.7), 6, tol, rng);
        // the three loss terms and their weighted sum
        let targets: Vec<f64> = (0..8).map(|_| rng.gen_range(220.0..290.0)).collect();
        let data: Vec<f64> = targets.iter().map(|t| t + rng.gen_range(1.0..9.0)).collect();
        let x = Tensor::new(vec![8], data).unwrap();
        let t2 = targets.clone();
        let t3 = targets.clone();
        check_gradients(
            &[x.clone()],
            &|t, i| loss::dist_loss(t, i[0], &prior, 1.0),
            8,
            tol,
            rng,
        );
        check_gradients(&[x.clone()], &|t, i| loss::point_loss(t, i[0], &targets), 8, tol, rng);
        check_gradients(&[x.clone()], &|t, i| loss::slope_loss(t, i[0], &t2, 1e-8), 8, tol, rng);
        check_gradients(
            &[x],
            &|t, i| {
                loss::total_loss(t, i[0], &t3, &prior, &LossWeights::default(), 1.0)
                    .map(|(v, _)| v)
            },
            8,
            tol,
            rng,
        );
    }
}
