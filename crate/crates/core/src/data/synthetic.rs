//! Seeded generators: the sparse linear signal task and random PSD kernel
//! families.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, KernelFamily, KernelSpec, SampleId};

/// `y = Σ_{j < informative} x_j + N(0, noise²)` with standard normal features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseSignal {
    pub d: usize,
    pub informative: usize,
    pub noise: f64,
}

impl SparseSignal {
    pub fn new(d: usize, informative: usize, noise: f64) -> Result<Self> {
        if informative > d || d == 0 {
            return Err(Error::Config(format!("{informative} informative features out of {d}")));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!("noise level must be nonnegative, got {noise}")));
        }
        Ok(SparseSignal { d, informative, noise })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let x: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(rng)).collect();
        let eps: f64 = StandardNormal.sample(rng);
        let signal: f64 = x[..self.informative].iter().sum();
        (x, signal + self.noise * eps)
    }

    pub fn dataset(&self, m: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let mut x = DMatrix::zeros(m, self.d);
        let mut y = DVector::zeros(m);
        for i in 0..m {
            let (row, label) = self.sample(rng);
            x.row_mut(i).copy_from_slice(&row);
            y[i] = label;
        }
        Dataset::new(x, y, None, Task::Regression).expect("generated values are finite")
    }
}

/// A kernel family of random PSD Grams and a random label vector.
#[derive(Clone, Debug)]
pub struct PsdInstance {
    pub family: KernelFamily,
    pub y: DVector<f64>,
}

/// Gram `K_k = B Bᵀ / (tr(B Bᵀ)/m)` with `B` an `m × r` standard normal
/// matrix and `r` uniform in `1..=m`, so each Gram has unit mean diagonal and
/// may be rank deficient. Labels are `N(0, 1)`.
pub fn random_psd_instance(rng: &mut ChaCha8Rng, m: usize, p: usize) -> Result<PsdInstance> {
    if m == 0 || p == 0 {
        return Err(Error::Config("instance needs m ≥ 1 and p ≥ 1".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let sample = SampleId(rng.random());
    let mut grams = Vec::with_capacity(p);
    for _ in 0..p {
        let r = rng.random_range(1..=m);
        let b = DMatrix::from_fn(m, r, |_, _| normal.sample(rng));
        let mut k = &b * b.transpose();
        let scale = k.trace() / m as f64;
        k /= scale;
        let k = (&k + k.transpose()) * 0.5;
        grams.push(GramMatrix::from_dense(k, sample)?);
    }
    let y = DVector::from_fn(m, |_, _| normal.sample(rng));
    let family = KernelFamily::from_parts(vec![KernelSpec::Linear; p], grams)?;
    Ok(PsdInstance { family, y })
}
