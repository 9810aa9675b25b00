#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use shiftauc::{Cohort, Role};

pub fn names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("x{i}")).collect()
}

/// Two covariates, a biomarker rounded to quarters (so ties occur) and at
/// least three subjects in each response class.
pub fn small_cohort(seed: u64, n: usize) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let x1: f64 = normal.sample(&mut rng);
        let x2: f64 = rng.random_range(0.0..2.0);
        let di = if i < 6 {
            (i % 2) as u8
        } else {
            u8::from(rng.random_bool(0.4))
        };
        let yi = 0.5 * x1 - 0.3 * x2 + f64::from(di) + normal.sample(&mut rng);
        x.extend([x1, x2]);
        y.push((yi * 4.0).round() / 4.0);
        d.push(di);
    }
    Cohort::from_parts(names(2), x, Some(y), Some(d), None, Role::Validation).unwrap()
}

/// Covariates only, shifted by `mean` in the first column.
pub fn covariates(seed: u64, n: usize, mean: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .flat_map(|_| {
            let a: f64 = mean + normal.sample(&mut rng);
            let b: f64 = rng.random_range(0.0..2.0);
            [a, b]
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
