//! Base kernels, their Gram matrices, and nonnegative combinations of them.
//!
//! Rank-1 kernels (one feature column, or the constant offset) are stored in
//! factored form `v vᵀ`: with thousands of base kernels a dense copy per
//! kernel does not fit in memory. Every accessor behaves as if the matrix
//! were dense.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used by [`GramMatrix::is_psd`].
pub const PSD_RELATIVE_TOLERANCE: f64 = 1e-8;

fn default_offset() -> f64 {
    1.0
}

/// A base kernel function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-‖x − z‖² / (2σ²))`.
    Gaussian { bandwidth: f64 },
    /// `xᵀz`.
    Linear,
    /// `(xᵀz + offset)^degree`.
    Polynomial {
        degree: u32,
        #[serde(default = "default_offset")]
        offset: f64,
    },
    /// `x[i] · z[i]`: the rank-1 kernel of a single feature column.
    Rank1Feature { feature_index: usize },
    /// `1` for every pair of points.
    ConstantOffset,
}

impl KernelSpec {
    /// Checks the parameter invariants against a feature dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => Err(
                Error::Config(format!("gaussian bandwidth must be positive, got {bandwidth}")),
            ),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    Err(Error::Config("polynomial degree must be at least 1".into()))
                } else if !offset.is_finite() {
                    Err(Error::Config("polynomial offset must be finite".into()))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Rank1Feature { feature_index } if feature_index >= d => {
                Err(Error::Config(format!(
                    "rank1_feature index {feature_index} out of range for {d} features"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value without argument checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Linear => dot(x, z),
            KernelSpec::Polynomial { degree, offset } => {
                (dot(x, z) + offset).powi(degree as i32)
            }
            KernelSpec::Rank1Feature { feature_index } => x[feature_index] * z[feature_index],
            KernelSpec::ConstantOffset => 1.0,
        }
    }

    /// Whether the Gram matrix of this kernel has rank at most one.
    pub fn is_rank1(&self) -> bool {
        matches!(
            self,
            KernelSpec::Rank1Feature { .. } | KernelSpec::ConstantOffset
        )
    }

    /// Nonzero coordinates of the explicit feature map of `x`, in a space of
    /// dimension `d + 1` shared by all specs (coordinate `d` is the constant).
    /// `None` for kernels without a finite explicit map exposed here.
    pub fn feature_support(&self, x: &[f64]) -> Option<Vec<(usize, f64)>> {
        let d = x.len();
        match *self {
            KernelSpec::Linear => Some(
                x.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .collect(),
            ),
            KernelSpec::Rank1Feature { feature_index } => {
                let v = x[feature_index];
                Some(if v != 0.0 { vec![(feature_index, v)] } else { vec![] })
            }
            KernelSpec::ConstantOffset => Some(vec![(d, 1.0)]),
            KernelSpec::Gaussian { .. } | KernelSpec::Polynomial { .. } => None,
        }
    }
}

#[inline]
fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

/// Evaluates a kernel on two points.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::Shape(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            z.len()
        )));
    }
    spec.validate(x.len())?;
    Ok(spec.eval_unchecked(x, z))
}

/// Opaque fingerprint of the sample a Gram matrix was computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleId(pub u64);

impl SampleId {
    /// FNV-1a over the shape and the bit patterns of the entries.
    pub fn of_matrix(x: &DMatrix<f64>) -> Self {
        let mut h = Fnv::new();
        h.write(x.nrows() as u64);
        h.write(x.ncols() as u64);
        for v in x.iter() {
            h.write(v.to_bits());
        }
        SampleId(h.finish())
    }

    /// Identifier of the sub-sample selecting `rows` of this sample.
    pub fn restricted(self, rows: &[usize]) -> Self {
        let mut h = Fnv::new();
        h.write(self.0);
        h.write(rows.len() as u64);
        for &r in rows {
            h.write(r as u64);
        }
        SampleId(h.finish())
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, word: u64) {
        for byte in word.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(self) -> u64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
enum GramStorage {
    Dense(DMatrix<f64>),
    /// `v vᵀ`.
    Rank1(DVector<f64>),
}

/// Symmetric PSD matrix of kernel evaluations on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    storage: GramStorage,
    sample: SampleId,
}

impl GramMatrix {
    pub fn from_dense(entries: DMatrix<f64>, sample: SampleId) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Shape(format!(
                "Gram matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(GramMatrix {
            storage: GramStorage::Dense(entries),
            sample,
        })
    }

    pub fn from_rank1(factor: DVector<f64>, sample: SampleId) -> Self {
        GramMatrix {
            storage: GramStorage::Rank1(factor),
            sample,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.storage {
            GramStorage::Dense(k) => k.nrows(),
            GramStorage::Rank1(v) => v.len(),
        }
    }

    pub fn sample_id(&self) -> SampleId {
        self.sample
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            GramStorage::Dense(k) => k[(i, j)],
            GramStorage::Rank1(v) => v[i] * v[j],
        }
    }

    /// The factor `v` when the matrix is stored as `v vᵀ`.
    pub fn rank1_factor(&self) -> Option<&DVector<f64>> {
        match &self.storage {
            GramStorage::Rank1(v) => Some(v),
            GramStorage::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            GramStorage::Dense(k) => k.clone(),
            GramStorage::Rank1(v) => {
                let m = v.len();
                DMatrix::from_fn(m, m, |i, j| v[i] * v[j])
            }
        }
    }

    /// `αᵀ K α`.
    pub fn quad_form(&self, alpha: &DVector<f64>) -> f64 {
        match &self.storage {
            GramStorage::Dense(k) => alpha.dot(&(k * alpha)),
            GramStorage::Rank1(v) => {
                let s = v.dot(alpha);
                s * s
            }
        }
    }

    /// `K α`.
    pub fn mul_vec(&self, alpha: &DVector<f64>) -> DVector<f64> {
        match &self.storage {
            GramStorage::Dense(k) => k * alpha,
            GramStorage::Rank1(v) => v * v.dot(alpha),
        }
    }

    /// `target += weight · K`, adding `weight * entry(i, j)` to each entry.
    pub fn add_scaled_to(&self, target: &mut DMatrix<f64>, weight: f64) {
        let m = self.dim();
        debug_assert_eq!(target.nrows(), m);
        match &self.storage {
            GramStorage::Dense(k) => {
                for (t, s) in target.iter_mut().zip(k.iter()) {
                    *t += weight * *s;
                }
            }
            GramStorage::Rank1(v) => {
                let v = v.as_slice();
                for j in 0..m {
                    let vj = v[j];
                    let col = &mut target.as_mut_slice()[j * m..(j + 1) * m];
                    for (t, vi) in col.iter_mut().zip(v) {
                        *t += weight * (*vi * vj);
                    }
                }
            }
        }
    }

    /// Principal submatrix on `rows`.
    pub fn restrict(&self, rows: &[usize]) -> GramMatrix {
        let sample = self.sample.restricted(rows);
        let storage = match &self.storage {
            GramStorage::Dense(k) => {
                GramStorage::Dense(DMatrix::from_fn(rows.len(), rows.len(), |a, b| {
                    k[(rows[a], rows[b])]
                }))
            }
            GramStorage::Rank1(v) => {
                GramStorage::Rank1(DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r])))
            }
        };
        GramMatrix { storage, sample }
    }

    /// Largest asymmetry `|K[i,j] − K[j,i]| / max(1, |K[i,j]|)`.
    pub fn asymmetry(&self) -> f64 {
        match &self.storage {
            GramStorage::Rank1(_) => 0.0,
            GramStorage::Dense(k) => {
                let m = k.nrows();
                let mut worst = 0.0f64;
                for j in 0..m {
                    for i in 0..j {
                        let a = k[(i, j)];
                        let rel = (a - k[(j, i)]).abs() / a.abs().max(1.0);
                        worst = worst.max(rel);
                    }
                }
                worst
            }
        }
    }

    /// Smallest and largest eigenvalues.
    pub fn eigen_extremes(&self) -> (f64, f64) {
        eigen_extremes(&self.to_dense())
    }

    /// Symmetric to 1e-12 relative, nonnegative diagonal, and smallest
    /// eigenvalue no lower than `-1e-8` times the largest.
    pub fn is_psd(&self) -> bool {
        if self.asymmetry() > 1e-12 {
            return false;
        }
        if (0..self.dim()).any(|i| self.entry(i, i) < 0.0) {
            return false;
        }
        let (lo, hi) = self.eigen_extremes();
        lo >= -PSD_RELATIVE_TOLERANCE * hi.max(0.0)
    }
}

pub(crate) fn eigen_extremes(k: &DMatrix<f64>) -> (f64, f64) {
    if k.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(k.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if !x[(i, j)].is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {} at row {i}, column {j}",
                    x[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().cloned().collect())
        .collect()
}

/// Gram matrix of `spec` over the rows of `x`.
pub fn build_gram(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<GramMatrix> {
    check_finite(x)?;
    spec.validate(x.ncols())?;
    let sample = SampleId::of_matrix(x);
    Ok(build_gram_unchecked(spec, x, sample))
}

fn build_gram_unchecked(spec: &KernelSpec, x: &DMatrix<f64>, sample: SampleId) -> GramMatrix {
    let m = x.nrows();
    match *spec {
        KernelSpec::Rank1Feature { feature_index } => {
            GramMatrix::from_rank1(x.column(feature_index).into_owned(), sample)
        }
        KernelSpec::ConstantOffset => GramMatrix::from_rank1(DVector::from_element(m, 1.0), sample),
        _ => {
            let rows = rows_of(x);
            let mut k = DMatrix::zeros(m, m);
            for j in 0..m {
                for i in 0..=j {
                    let value = spec.eval_unchecked(&rows[i], &rows[j]);
                    k[(i, j)] = value;
                    k[(j, i)] = value;
                }
            }
            GramMatrix {
                storage: GramStorage::Dense(k),
                sample,
            }
        }
    }
}

/// Ordered base kernels together with their Gram matrices on one sample.
#[derive(Clone, Debug)]
pub struct KernelFamily {
    specs: Vec<KernelSpec>,
    grams: Vec<GramMatrix>,
    kappa0: f64,
    sample: SampleId,
    m: usize,
    /// Indices of the rank-1 Grams and their factors as columns (`m × r`).
    rank1_index: Vec<usize>,
    rank1_factors: DMatrix<f64>,
}

impl KernelFamily {
    /// Builds every base kernel over the rows of `x`.
    pub fn build(specs: Vec<KernelSpec>, x: &DMatrix<f64>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("kernel family is empty".into()));
        }
        check_finite(x)?;
        for spec in &specs {
            spec.validate(x.ncols())?;
        }
        let sample = SampleId::of_matrix(x);
        let grams = specs
            .iter()
            .map(|s| build_gram_unchecked(s, x, sample))
            .collect();
        Self::from_parts(specs, grams)
    }

    /// Assembles a family from precomputed Gram matrices.
    pub fn from_parts(specs: Vec<KernelSpec>, grams: Vec<GramMatrix>) -> Result<Self> {
        if grams.is_empty() || specs.len() != grams.len() {
            return Err(Error::Shape(format!(
                "{} specs for {} Gram matrices",
                specs.len(),
                grams.len()
            )));
        }
        let m = grams[0].dim();
        let sample = grams[0].sample_id();
        if grams.iter().any(|g| g.dim() != m || g.sample_id() != sample) {
            return Err(Error::Shape(
                "Gram matrices of a family must share one sample".into(),
            ));
        }
        let kappa0 = (0..m)
            .map(|i| grams.iter().map(|g| g.entry(i, i).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let rank1_index: Vec<usize> = (0..grams.len())
            .filter(|&k| grams[k].rank1_factor().is_some())
            .collect();
        let mut rank1_factors = DMatrix::zeros(m, rank1_index.len());
        for (c, &k) in rank1_index.iter().enumerate() {
            rank1_factors.set_column(c, grams[k].rank1_factor().expect("rank-1"));
        }
        Ok(KernelFamily {
            specs,
            grams,
            kappa0,
            sample,
            m,
            rank1_index,
            rank1_factors,
        })
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Sample size.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn specs(&self) -> &[KernelSpec] {
        &self.specs
    }

    pub fn grams(&self) -> &[GramMatrix] {
        &self.grams
    }

    pub fn sample_id(&self) -> SampleId {
        self.sample
    }

    /// `max_x (Σ_k K_k(x, x)²)^{1/2}` over the sample.
    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    /// The same kernels restricted to a sub-sample.
    pub fn restrict(&self, rows: &[usize]) -> KernelFamily {
        let grams = self.grams.iter().map(|g| g.restrict(rows)).collect();
        Self::from_parts(self.specs.clone(), grams).expect("restriction preserves shape")
    }

    /// The one-kernel family holding base kernel `k`.
    pub fn single(&self, k: usize) -> KernelFamily {
        Self::from_parts(vec![self.specs[k].clone()], vec![self.grams[k].clone()])
            .expect("single kernel family")
    }

    /// `Σ_k μ_k K_k[rows, cols]` read from the stored Gram matrices.
    pub fn combined_block(&self, mu: &DVector<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (g, &w) in self.grams.iter().zip(mu.iter()).filter(|(_, &w)| w != 0.0) {
            for (b, &c) in cols.iter().enumerate() {
                for (a, &r) in rows.iter().enumerate() {
                    out[(a, b)] += w * g.entry(r, c);
                }
            }
        }
        out
    }
}

/// `κ = κ0 · (‖μ0‖ + Λ)`, a bound on the diagonal of any combined kernel.
pub fn compute_kappa(family: &KernelFamily, mu_norm_bound: f64) -> f64 {
    family.kappa0() * mu_norm_bound
}

/// κ0 evaluated directly over an arbitrary set of points.
pub fn kappa0_over(specs: &[KernelSpec], points: &[&[f64]]) -> f64 {
    points
        .iter()
        .map(|x| {
            specs
                .iter()
                .map(|s| s.eval_unchecked(x, x).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn check_mu_len(family: &KernelFamily, mu: &DVector<f64>) -> Result<()> {
    if mu.len() != family.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} base kernels",
            mu.len(),
            family.len()
        )));
    }
    Ok(())
}

/// Writes `Σ_k μ_k K_k` into `out`, summing kernels in index order and
/// adding `μ_k · entry(i, j)` entry by entry.
fn combine_exact_into(family: &KernelFamily, mu: &DVector<f64>, out: &mut DMatrix<f64>) {
    out.fill(0.0);
    for (g, &w) in family.grams().iter().zip(mu.iter()) {
        if w != 0.0 {
            g.add_scaled_to(out, w);
        }
    }
}

/// Writes `Σ_k μ_k K_k` into `out`. The rank-1 kernels with nonzero weight
/// are summed as one product `V diag(μ) Vᵀ`, so entries can differ from
/// [`combine`] by rounding.
pub(crate) fn combine_into(family: &KernelFamily, mu: &DVector<f64>, out: &mut DMatrix<f64>) {
    let active: Vec<usize> = (0..family.rank1_index.len())
        .filter(|&c| mu[family.rank1_index[c]] != 0.0)
        .collect();
    if active.is_empty() {
        combine_exact_into(family, mu, out);
        return;
    }
    let m = family.m;
    let factors = &family.rank1_factors;
    let mut scaled = DMatrix::zeros(m, active.len());
    let mut right = DMatrix::zeros(active.len(), m);
    for (a, &c) in active.iter().enumerate() {
        let w = mu[family.rank1_index[c]];
        let col = factors.column(c);
        scaled.set_column(a, &(col * w));
        right.set_row(a, &col.transpose());
    }
    out.gemm(1.0, &scaled, &right, 0.0);
    for j in 0..m {
        for i in (j + 1)..m {
            out[(j, i)] = out[(i, j)];
        }
    }
    for (g, &w) in family.grams().iter().zip(mu.iter()) {
        if w != 0.0 && g.rank1_factor().is_none() {
            g.add_scaled_to(out, w);
        }
    }
}

/// Columns `K_k α` for every base kernel, as an `m × p` matrix.
pub(crate) fn kernel_products(family: &KernelFamily, alpha: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(family.m, family.len());
    for (k, g) in family.grams().iter().enumerate() {
        out.set_column(k, &g.mul_vec(alpha));
    }
    out
}

/// The combined Gram matrix `Σ_k μ_k K_k`.
pub fn combine(family: &KernelFamily, mu: &DVector<f64>) -> Result<GramMatrix> {
    check_mu_len(family, mu)?;
    if mu.iter().any(|&w| w < 0.0) {
        return Err(Error::Domain("kernel weights must be nonnegative".into()));
    }
    let m = family.m();
    let mut k = DMatrix::zeros(m, m);
    combine_exact_into(family, mu, &mut k);
    GramMatrix::from_dense(k, family.sample_id())
}

/// `Σ_k μ_k K_k(x_new[a], x_train[i])` as an `n_new × m` matrix.
pub fn cross_kernel(
    specs: &[KernelSpec],
    mu: &DVector<f64>,
    x_train: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if x_train.ncols() != x_new.ncols() {
        return Err(Error::Shape(format!(
            "training points have {} features, new points {}",
            x_train.ncols(),
            x_new.ncols()
        )));
    }
    if specs.len() != mu.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} base kernels",
            mu.len(),
            specs.len()
        )));
    }
    check_finite(x_new)?;
    for s in specs {
        s.validate(x_train.ncols())?;
    }
    let train = rows_of(x_train);
    let new = rows_of(x_new);
    let mut out = DMatrix::zeros(new.len(), train.len());
    for (a, z) in new.iter().enumerate() {
        for (i, x) in train.iter().enumerate() {
            let mut s = 0.0;
            for (spec, &w) in specs.iter().zip(mu.iter()) {
                if w != 0.0 {
                    s += w * spec.eval_unchecked(x, z);
                }
            }
            out[(a, i)] = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn linear_gram_of_orthonormal_rows_is_identity() {
        let g = build_gram(&KernelSpec::Linear, &mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(g.to_dense(), DMatrix::identity(2, 2));
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let x = mat(&[&[0.3, -1.0], &[2.0, 5.0], &[1.0, 1.0]]);
        for bw in [0.1, 1.0, 7.5] {
            let g = build_gram(&KernelSpec::Gaussian { bandwidth: bw }, &x).unwrap();
            for i in 0..3 {
                assert_eq!(g.entry(i, i), 1.0);
            }
        }
    }

    #[test]
    fn rank1_gram_is_outer_product() {
        let g = build_gram(
            &KernelSpec::Rank1Feature { feature_index: 0 },
            &mat(&[&[2.0], &[3.0]]),
        )
        .unwrap();
        assert_eq!(g.to_dense(), mat(&[&[4.0, 6.0], &[6.0, 9.0]]));
    }

    #[test]
    fn build_gram_rejects_bad_input() {
        let x = mat(&[&[1.0, f64::NAN]]);
        assert!(matches!(build_gram(&KernelSpec::Linear, &x), Err(Error::Data(_))));
        let x = mat(&[&[1.0, 2.0]]);
        assert!(matches!(
            build_gram(&KernelSpec::Rank1Feature { feature_index: 2 }, &x),
            Err(Error::Config(_))
        ));
        assert!(build_gram(&KernelSpec::Gaussian { bandwidth: 0.0 }, &x).is_err());
        assert!(build_gram(&KernelSpec::Polynomial { degree: 0, offset: 1.0 }, &x).is_err());
    }

    #[test]
    fn eval_kernel_examples() {
        assert_eq!(eval_kernel(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = KernelSpec::Polynomial { degree: 2, offset: 1.0 };
        assert_eq!(eval_kernel(&poly, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 4.0);
        let r1 = KernelSpec::Rank1Feature { feature_index: 1 };
        assert_eq!(eval_kernel(&r1, &[0.0, 5.0], &[0.0, 2.0]).unwrap(), 10.0);
        assert!(matches!(
            eval_kernel(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    fn two_identity_family() -> KernelFamily {
        let sample = SampleId(7);
        let i = DMatrix::identity(2, 2);
        KernelFamily::from_parts(
            vec![KernelSpec::Linear, KernelSpec::Linear],
            vec![
                GramMatrix::from_dense(i.clone(), sample).unwrap(),
                GramMatrix::from_dense(i, sample).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn combine_examples() {
        let fam = two_identity_family();
        let zero = combine(&fam, &DVector::zeros(2)).unwrap();
        assert_eq!(zero.to_dense(), DMatrix::zeros(2, 2));
        let two = combine(&fam, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(two.to_dense(), DMatrix::identity(2, 2) * 2.0);
        let single = fam.single(0);
        let scaled = combine(&single, &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(scaled.to_dense(), DMatrix::identity(2, 2) * 2.0);
        assert!(matches!(
            combine(&fam, &DVector::from_vec(vec![1.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kappa_examples() {
        let fam = two_identity_family();
        // κ0 = sqrt(1 + 1)
        assert!((fam.kappa0() - 2f64.sqrt()).abs() < 1e-15);
        let sample = SampleId(1);
        let g = GramMatrix::from_dense(DMatrix::identity(1, 1) * 2.0, sample).unwrap();
        let fam = KernelFamily::from_parts(vec![KernelSpec::Linear], vec![g]).unwrap();
        assert_eq!(fam.kappa0(), 2.0);
        assert_eq!(compute_kappa(&fam, 1.0), 2.0);
        // ‖μ0‖ = 2 for the all-ones vector in four dimensions, Λ = 3.
        assert_eq!(compute_kappa(&fam, 2.0 + 3.0), 10.0);
        let g = GramMatrix::from_dense(DMatrix::zeros(3, 3), sample).unwrap();
        let fam = KernelFamily::from_parts(vec![KernelSpec::Linear], vec![g]).unwrap();
        assert_eq!(compute_kappa(&fam, 5.0), 0.0);
    }

    #[test]
    fn family_rejects_mixed_samples() {
        let a = GramMatrix::from_dense(DMatrix::identity(2, 2), SampleId(1)).unwrap();
        let b = GramMatrix::from_dense(DMatrix::identity(2, 2), SampleId(2)).unwrap();
        assert!(KernelFamily::from_parts(vec![KernelSpec::Linear; 2], vec![a, b]).is_err());
    }

    #[test]
    fn rank1_storage_matches_dense_operations() {
        let x = mat(&[&[1.0, -2.0], &[0.5, 3.0], &[-1.5, 0.25]]);
        let g = build_gram(&KernelSpec::Rank1Feature { feature_index: 1 }, &x).unwrap();
        let dense = GramMatrix::from_dense(g.to_dense(), g.sample_id()).unwrap();
        let alpha = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        assert!((g.quad_form(&alpha) - dense.quad_form(&alpha)).abs() < 1e-14);
        assert!((g.mul_vec(&alpha) - dense.mul_vec(&alpha)).norm() < 1e-14);
        let rows = [2, 0];
        assert_eq!(g.restrict(&rows).to_dense(), dense.restrict(&rows).to_dense());
    }

    fn spec_strategy() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (0.1f64..5.0).prop_map(|bandwidth| KernelSpec::Gaussian { bandwidth }),
            Just(KernelSpec::Linear),
            (1u32..4, 0.0f64..2.0).prop_map(|(degree, offset)| KernelSpec::Polynomial { degree, offset }),
            (0usize..10).prop_map(|feature_index| KernelSpec::Rank1Feature { feature_index }),
            Just(KernelSpec::ConstantOffset),
        ]
    }

    fn data_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=30, 1usize..=10).prop_flat_map(|(m, d)| {
            proptest::collection::vec(-3.0f64..3.0, m * d)
                .prop_map(move |v| DMatrix::from_vec(m, d, v))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gram_is_symmetric_psd_and_matches_eval(spec in spec_strategy(), x in data_strategy()) {
            let spec = match spec {
                KernelSpec::Rank1Feature { feature_index } =>
                    KernelSpec::Rank1Feature { feature_index: feature_index % x.ncols() },
                s => s,
            };
            let g = build_gram(&spec, &x).unwrap();
            prop_assert!(g.asymmetry() <= 1e-12);
            prop_assert!(g.is_psd());
            let rows = rows_of(&x);
            for i in 0..x.nrows() {
                for j in 0..x.nrows() {
                    let e = eval_kernel(&spec, &rows[i], &rows[j]).unwrap();
                    prop_assert!((e - g.entry(i, j)).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn combine_matches_entrywise_loop(x in data_strategy(), weights in proptest::collection::vec(0.0f64..3.0, 5)) {
            let specs = vec![
                KernelSpec::Linear,
                KernelSpec::Gaussian { bandwidth: 1.3 },
                KernelSpec::Polynomial { degree: 2, offset: 1.0 },
                KernelSpec::Rank1Feature { feature_index: 0 },
                KernelSpec::ConstantOffset,
            ];
            let fam = KernelFamily::build(specs, &x).unwrap();
            let mu = DVector::from_vec(weights);
            let k = combine(&fam, &mu).unwrap();
            let m = x.nrows();
            for i in 0..m {
                for j in 0..m {
                    let mut s = 0.0;
                    for (g, &w) in fam.grams().iter().zip(mu.iter()) {
                        s += w * g.entry(i, j);
                    }
                    prop_assert_eq!(s, k.entry(i, j));
                }
            }
        }

        #[test]
        fn factored_combine_agrees_with_exact(
            x in data_strategy(),
            weights in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..3.0], 4),
        ) {
            let d = x.ncols();
            let specs = vec![
                KernelSpec::Rank1Feature { feature_index: 0 },
                KernelSpec::Gaussian { bandwidth: 0.9 },
                KernelSpec::Rank1Feature { feature_index: d - 1 },
                KernelSpec::ConstantOffset,
            ];
            let fam = KernelFamily::build(specs, &x).unwrap();
            let mu = DVector::from_vec(weights);
            let exact = combine(&fam, &mu).unwrap().to_dense();
            let mut fast = DMatrix::zeros(x.nrows(), x.nrows());
            combine_into(&fam, &mu, &mut fast);
            let scale = 1.0 + exact.amax();
            prop_assert!((&fast - &exact).amax() <= 1e-13 * scale);
            prop_assert_eq!(fast.clone(), fast.transpose());
        }
    }
}
