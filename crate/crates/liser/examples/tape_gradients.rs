//! Builds a small computation on the gradient tape, runs backpropagation,
//! and checks one analytic gradient against a central finite difference.
//!
//!     cargo run --example tape_gradients

use liser::tensor::{Tape, Tensor, TensorError};

fn loss_value(w_data: &[f64]) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?, false);
    let w = tape.leaf(Tensor::new(vec![2, 3], w_data.to_vec())?, true);
    let b = tape.leaf(Tensor::new(vec![2], vec![0.1, -0.2])?, false);
    let h = tape.linear(x, w, b)?;
    let a = tape.relu(h)?;
    let loss = tape.sum(a)?;
    Ok(tape.value(loss).item())
}

fn main() -> Result<(), TensorError> {
    let w_data = vec![0.3, -0.6, 0.9, 0.2, -0.4, 0.7];

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?, false);
    let w = tape.leaf(Tensor::new(vec![2, 3], w_data.clone())?, true);
    let b = tape.leaf(Tensor::new(vec![2], vec![0.1, -0.2])?, false);
    let h = tape.linear(x, w, b)?;
    let a = tape.relu(h)?;
    let loss = tape.sum(a)?;
    println!("loss = {:.6}", tape.value(loss).item());

    let mut grads = tape.backward(loss)?;
    let dw = grads.take(w).expect("w requires grad");
    println!("analytic dL/dW = {:?}", dw.data());

    // Central finite differences, one coordinate at a time.
    let h_step = 1e-6;
    let mut fd = Vec::new();
    for i in 0..w_data.len() {
        let mut plus = w_data.clone();
        let mut minus = w_data.clone();
        plus[i] += h_step;
        minus[i] -= h_step;
        fd.push((loss_value(&plus)? - loss_value(&minus)?) / (2.0 * h_step));
    }
    println!("numeric  dL/dW = {fd:?}");

    let worst = dw
        .data()
        .iter()
        .zip(&fd)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0_f64, f64::max);
    println!("largest difference: {worst:.2e}");
    assert!(worst < 1e-6, "gradients disagree with finite differences");
    Ok(())
}
