//! Dense vectors and matrices, stable probability kernels, and the seeded RNG.
//!
//! Everything is `f64`. Softmax-family kernels subtract the running maximum
//! before exponentiating, so logits of magnitude in the hundreds are safe.

use std::ops::Index;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec1D {
    data: Vec<f64>,
}

impl Vec1D {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyVector);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Vec1D"));
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len >= 1, "Vec1D must have at least one entry");
        Self {
            data: vec![0.0; len],
        }
    }

    /// One-hot vector of length `len` with a 1 at `index`.
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for {len} categories"
            )));
        }
        let mut v = Self::zeros(len);
        v.data[index] = 1.0;
        Ok(v)
    }

    /// Unchecked constructor for kernel outputs that are finite by construction.
    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vec1D) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dims("dot", self.len(), other.len()));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

impl Index<usize> for Vec1D {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims(
                "Matrix2D::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix2D"));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::dims("Matrix2D::from_rows", n_cols, bad.len()));
        }
        Self::new(n_rows, n_cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

/// Seeded generator: xoshiro256++ whose state is expanded from the `u64`
/// seed with SplitMix64. Same seed, same stream, on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

pub fn matvec(m: &Matrix2D, v: &Vec1D) -> Result<Vec1D> {
    if m.cols != v.len() {
        return Err(Error::dims("matvec", m.shape_string(), format!("vector of length {}", v.len())));
    }
    let out = (0..m.rows).map(|i| dot(m.row(i), v.as_slice())).collect();
    Ok(Vec1D::from_vec_unchecked(out))
}

pub fn softmax(z: &Vec1D) -> Vec1D {
    Vec1D::from_vec_unchecked(softmax_slice(z.as_slice()))
}

pub fn log_softmax(z: &Vec1D) -> Vec1D {
    Vec1D::from_vec_unchecked(log_softmax_slice(z.as_slice()))
}

/// Shannon entropy in nats; `0 log 0` is taken as 0.
pub fn entropy(p: &Vec1D) -> Result<f64> {
    check_distribution(p.as_slice())?;
    Ok(entropy_slice(p.as_slice()))
}

pub fn cosine_similarity(a: &Vec1D, b: &Vec1D) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("cosine_similarity", a.len(), b.len()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        let which = if na == 0.0 { "first" } else { "second" };
        return Err(Error::ZeroMagnitude(format!("{which} argument of cosine_similarity")));
    }
    let c = dot(a.as_slice(), b.as_slice()) / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}

/// Accepts entries `>= 0` summing to 1 within `1e-9`.
pub(crate) fn check_distribution(p: &[f64]) -> Result<()> {
    if let Some(bad) = p.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::NotADistribution(format!("entry {bad} is negative or NaN")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(format!("entries sum to {s}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = max_of(z);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

pub(crate) fn log_softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = max_of(z);
    let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - m - lse).collect()
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    p.iter()
        .filter(|v| **v > 0.0)
        .fold(0.0, |h, v| h - v * v.ln())
}

/// `c[m x n] = a[m x k] * b[n x k]^T`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: slice lengths checked above; strides describe in-bounds row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m x n] = a[k x m]^T * b[k x n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: see gemm_nt.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m x n] = a[m x k] * b[k x n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: see gemm_nt.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn v(xs: &[f64]) -> Vec1D {
        Vec1D::new(xs.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matvec_examples() {
        let id = Matrix2D::identity(2);
        assert_eq!(matvec(&id, &v(&[3.0, 4.0])).unwrap().as_slice(), &[3.0, 4.0]);

        let z = Matrix2D::zeros(2, 3);
        assert_eq!(matvec(&z, &v(&[1.0, -2.0, 5.0])).unwrap().as_slice(), &[0.0, 0.0]);

        let m = Matrix2D::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&m, &v(&[1.0, 1.0])).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let m = Matrix2D::zeros(2, 3);
        let err = matvec(&m, &v(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("length 2"), "{msg}");
    }

    #[test]
    fn vec_rejects_empty_and_non_finite() {
        assert!(matches!(Vec1D::new(vec![]), Err(Error::EmptyVector)));
        assert!(matches!(Vec1D::new(vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(Matrix2D::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert!(close(softmax(&v(&[0.0, 0.0])).as_slice(), &[0.5, 0.5], 1e-15));
        for c in [-300.0, 0.0, 2.5, 650.0] {
            let p = softmax(&v(&[c, c, c]));
            assert!(close(p.as_slice(), &[1.0 / 3.0; 3], 1e-15));
        }
        let p = softmax(&v(&[3f64.ln(), 0.0]));
        assert!(close(p.as_slice(), &[0.75, 0.25], 1e-15));
    }

    #[test]
    fn log_softmax_examples() {
        let l = log_softmax(&v(&[0.0, 0.0]));
        assert!(close(l.as_slice(), &[-(2f64.ln()); 2], 1e-15));
        let l = log_softmax(&v(&[3f64.ln(), 0.0]));
        assert!(close(l.as_slice(), &[0.75f64.ln(), 0.25f64.ln()], 1e-15));
        assert_eq!(log_softmax(&v(&[5.0])).as_slice(), &[0.0]);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&v(&[0.25; 4])).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&v(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
        // -(0.75 ln 0.75 + 0.25 ln 0.25)
        let h = entropy(&v(&[0.75, 0.25])).unwrap();
        assert!((h - 0.562_335_144_618_808_3).abs() < 1e-12, "{h}");
        assert!((h - 0.5623).abs() < 5e-5);
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(matches!(entropy(&v(&[0.5, 0.6])), Err(Error::NotADistribution(_))));
        assert!(matches!(entropy(&v(&[1.5, -0.5])), Err(Error::NotADistribution(_))));
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 2.0]), &v(&[2.0, 1.0])).unwrap();
        assert!((c - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_magnitude_is_an_error() {
        let err = cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::ZeroMagnitude(_)));
        assert!(cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut c = Rng::new(43);
        assert_ne!(xs[0], c.next_u64());
    }

    #[test]
    fn gemm_variants_match_naive() {
        let mut rng = Rng::new(3);
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let bt: Vec<f64> = (0..n * k).map(|_| rng.normal()).collect();
        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &bt, m, k, n, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] * bt[j * k + t]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // a^T with a viewed as k x m
        let at: Vec<f64> = (0..k * m).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        gemm_tn(&at, &b, m, k, n, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| at[t * m + i] * b[t * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        gemm_nn(&a, &b, m, k, n, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-700.0f64..700.0, 1..12)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in logits()) {
            let p = softmax(&v(&z));
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0 && *x <= 1.0));
        }

        #[test]
        fn softmax_shift_invariant(z in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
            let p = softmax(&v(&z));
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            let q = softmax(&v(&shifted));
            prop_assert!(close(p.as_slice(), q.as_slice(), 1e-12));
        }

        #[test]
        fn exp_log_softmax_is_softmax(z in logits()) {
            let p = softmax(&v(&z));
            let lp: Vec<f64> = log_softmax(&v(&z)).iter().map(|x| x.exp()).collect();
            prop_assert!(close(p.as_slice(), &lp, 1e-12));
        }

        #[test]
        fn entropy_of_softmax_is_bounded(z in logits()) {
            let p = softmax(&v(&z));
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (z.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn cosine_sign_matches_dot(
            pair in (1usize..9).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let (a, b) = pair;
            let (a, b) = (v(&a), v(&b));
            prop_assume!(a.norm() > 0.0 && b.norm() > 0.0);
            let c = cosine_similarity(&a, &b).unwrap();
            let d = a.dot(&b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert_eq!(c > 0.0, d > 0.0);
            prop_assert_eq!(c < 0.0, d < 0.0);
        }

        #[test]
        fn matvec_matches_scalar_loop(
            case in (1usize..9, 1usize..9).prop_flat_map(|(r, c)| (
                Just(r), Just(c),
                prop::collection::vec(-10.0f64..10.0, r * c),
                prop::collection::vec(-10.0f64..10.0, c),
            ))
        ) {
            let (r, c, data, x) = case;
            let m = Matrix2D::new(r, c, data.clone()).unwrap();
            let out = matvec(&m, &v(&x)).unwrap();
            for i in 0..r {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += data[i * c + j] * x[j];
                }
                prop_assert!((out[i] - acc).abs() <= 1e-12);
            }
        }
    }
}
