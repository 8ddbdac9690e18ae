#![allow(dead_code)]

use ewc::tasks::{Dataset, TaskData};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noisy copies of one random prototype per class; pixels in [0,1].
pub fn prototype_dataset(n: usize, side: usize, classes: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = side * side;
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..pixels).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect())
        .collect();
    // Prototypes are shared across calls with the same seed; examples use a second stream.
    let mut ex = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut images = Array2::zeros((n, pixels));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for p in 0..pixels {
            let v = protos[c][p] + noise * (ex.random::<f64>() - 0.5);
            images[[i, p]] = v.clamp(0.0, 1.0);
        }
        labels.push(c);
    }
    Dataset::new(images, labels, "prototypes").unwrap()
}

pub fn toy_task_data(side: usize, classes: usize, seed: u64) -> TaskData {
    let train = prototype_dataset(400, side, classes, 0.8, seed);
    let all_eval = prototype_dataset(200, side, classes, 0.8, seed);
    let valid = all_eval.select(&(0..100).collect::<Vec<_>>(), "valid");
    let test = all_eval.select(&(100..200).collect::<Vec<_>>(), "test");
    TaskData::new(train, valid, test)
}

/// The bundled MNIST test split.
pub fn mnist_test() -> Dataset {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset");
    let (images, labels) = ewc::tasks::mnist_paths(&dir, false);
    ewc::tasks::load_idx(images, labels).unwrap()
}

/// Relative error with a magnitude floor for coordinates near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
