//! The reverse-mode tape in isolation: build a small graph, run backward,
//! and compare one gradient against a finite difference.

use ctgage::tensor::{Tape, Tensor};

fn main() {
    // f(x) = mean(relu(x)^2) on a 1D vector
    let x_vals = vec![-1.5, 0.5, 2.0, -0.25, 1.0];
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![5], x_vals.clone()).unwrap());
    let r = tape.relu(x);
    let sq = tape.mul(r, r).unwrap();
    let loss = tape.mean_all(sq);
    println!("f(x) = {:.6}", tape.value(loss).item());

    tape.backward(loss).unwrap();
    let grad = tape.grad(x);
    println!("df/dx = {grad:?}");

    // finite-difference spot check on coordinate 2
    let f = |vals: &[f64]| {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![5], vals.to_vec()).unwrap());
        let r = t.relu(x);
        let sq = t.mul(r, r).unwrap();
        let l = t.mean_all(sq);
        t.value(l).item()
    };
    let h = 1e-6;
    let mut plus = x_vals.clone();
    plus[2] += h;
    let mut minus = x_vals;
    minus[2] -= h;
    let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
    println!("coordinate 2: analytic {:.8}, finite difference {:.8}", grad[2], numeric);

    // the differentiable sorter at two temperatures
    for temp in [1.0, 1e-3] {
        let mut t = Tape::new();
        let v = t.leaf(Tensor::new(vec![4], vec![3.0, 1.0, 4.0, 2.0]).unwrap());
        let sorted = t.soft_sort(v, temp).unwrap();
        println!("soft_sort(T={temp}): {:?}", t.value(sorted).data);
    }
}
