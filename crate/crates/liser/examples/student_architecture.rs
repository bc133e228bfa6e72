//! Prints the student network layer by layer, counts its parameters, and
//! runs one forward pass over a random input window.
//!
//!     cargo run --example student_architecture

use liser::model::{forward, ForwardMode, StudentParams, INPUT_BANDS, INPUT_FRAMES};
use liser::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let (k_s, k_v) = (8, 7);
    let mut params = StudentParams::init(k_s, k_v, 42).expect("valid class counts");

    println!("student network ({k_s} speech classes, {k_v} video classes)");
    println!("{:<16} {:>14} {:>9}", "parameter", "shape", "values");
    let mut total = 0usize;
    for p in params.trainable() {
        let shape = p
            .tensor
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        println!("{:<16} {:>14} {:>9}", p.name, shape, p.tensor.numel());
        total += p.tensor.numel();
    }
    println!("{:<16} {:>14} {:>9}", "total", "", total);
    assert_eq!(total, params.param_count());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..INPUT_BANDS * INPUT_FRAMES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Tensor::new(vec![1, 1, INPUT_BANDS, INPUT_FRAMES], data).unwrap();
    let logits = forward(&mut params, &batch, ForwardMode::Eval).expect("forward pass");
    println!("\nsupervised head logits: {:?}", logits[0].sup);
    println!("speech distill logits:  {:?}", logits[0].sd);
    println!("video distill logits:   {:?}", logits[0].vd);
}
