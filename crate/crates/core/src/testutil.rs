use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, Label};
use crate::seed;

/// Two unit-variance Gaussian classes whose means differ by `separation`
/// along the first axis; labels alternate.
pub fn gaussians(n: usize, separation: f64, d: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        let mut row: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        row[0] += label.sign() * separation / 2.0;
        x.push(row);
        y.push(label);
    }
    Dataset::from_xy(x, y).unwrap()
}
