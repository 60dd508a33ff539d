//! Dense linear algebra and the softmax / cross-entropy primitives.
//!
//! Everything here works on `f64` with a fixed accumulation order (row-major,
//! left to right), so results are bit-reproducible for identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major values, validating shape and finiteness.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(shape_err("matrix", rows * cols, values.len()));
        }
        check_finite(&values, "matrix")?;
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(shape_err("matrix rows", c, bad.len()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Matrix made of the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    check_finite(z, "softmax input")?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

fn check_pair(p: &[f64], y: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    if p.len() != y.len() {
        return Err(shape_err("prediction/target length", p.len(), y.len()));
    }
    Ok(())
}

/// Cross-entropy `-sum_k y_k ln p_k` with `p_k` floored at [`PROB_FLOOR`].
///
/// For a one-hot `y` this is `-ln p_k` of the hot index. Soft targets (mixup)
/// use the same formula.
pub fn cross_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(p, y)?;
    let mut loss = 0.0;
    for (&pk, &yk) in p.iter().zip(y) {
        if yk != 0.0 {
            loss -= yk * pk.max(PROB_FLOOR).ln();
        }
    }
    Ok(loss)
}

/// Gradient of `cross_entropy(softmax(z), y)` with respect to the logits `z`:
/// `p - y`.
///
/// This is the loss gradient. The push/pull analysis writes the class
/// gradient with the opposite sign (`-g_k = sum (p_k - y_k)`).
pub fn grad_logits(p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_pair(p, y)?;
    Ok(p.iter().zip(y).map(|(a, b)| a - b).collect())
}

/// `W x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols {
        return Err(shape_err("affine input", w.cols, x.len()));
    }
    if b.len() != w.rows {
        return Err(shape_err("affine bias", w.rows, b.len()));
    }
    Ok(affine_unchecked(w, x, b))
}

pub(crate) fn affine_unchecked(w: &Matrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..w.rows)
        .map(|r| {
            let mut acc = 0.0;
            for (wi, xi) in w.row(r).iter().zip(x) {
                acc += wi * xi;
            }
            acc + b[r]
        })
        .collect()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // exp-normalize evaluated term by term without the max shift; fine for
    // the small logits used here.
    fn softmax_oracle(z: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        let mut y = vec![0.0; n];
        y[k] = 1.0;
        y
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for p in softmax(&[1.0, 1.0, 1.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let want = [0.090_030_573_170_380_46, 0.244_728_471_054_797_6, 0.665_240_955_774_821_8];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let oracle = softmax_oracle(&[1.0, 2.0, 3.0]);
        for (a, b) in p.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            softmax(&[0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, -1000.0, 999.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        let l = cross_entropy(&[0.5, 0.5], &one_hot(0, 2)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let l = cross_entropy(&p, &one_hot(0, 3)).unwrap();
        // -ln(0.0900305731703805) = 2.40760596444438
        assert!((l - 2.407_605_964_444_38).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_floor_and_errors() {
        let l = cross_entropy(&[0.0, 1.0], &one_hot(0, 2)).unwrap();
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-12);
        assert!(cross_entropy(&[0.5, 0.5], &[1.0]).is_err());
        assert!(grad_logits(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn grad_logits_examples() {
        assert_eq!(grad_logits(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            grad_logits(&[0.5, 0.5], &one_hot(0, 2)).unwrap(),
            vec![-0.5, 0.5]
        );
    }

    fn loss_of_logits(z: &[f64], y: &[f64]) -> f64 {
        cross_entropy(&softmax(z).unwrap(), y).unwrap()
    }

    #[test]
    fn grad_logits_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y = one_hot(rng.gen_range(0..n), n);
            let g = grad_logits(&softmax(&z).unwrap(), &y).unwrap();
            for i in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (loss_of_logits(&zp, &y) - loss_of_logits(&zm, &y)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn affine_examples() {
        let x = vec![1.5, -2.0, 0.25];
        assert_eq!(affine(&Matrix::identity(3), &x, &[0.0; 3]).unwrap(), x);
        let b = vec![0.1, 0.2];
        assert_eq!(affine(&Matrix::zeros(2, 3), &x, &b).unwrap(), b);
        assert!(affine(&Matrix::zeros(2, 3), &[1.0], &b).is_err());
        assert!(affine(&Matrix::zeros(2, 3), &x, &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Matrix::from_vec(3, 2, w).unwrap();
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = affine(&w, &x, &b).unwrap();
        for i in 0..3 {
            let mut want = b[i];
            for j in 0..2 {
                want += w.as_slice()[i * 2 + j] * x[j];
            }
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_validation() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(Matrix::from_vec(0, 1, vec![]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[3.0, 1.0, 2.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let p = softmax(&z).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn softmax_is_shift_invariant(
            z in prop::collection::vec(-50f64..50.0, 1..12),
            c in -100f64..100.0,
        ) {
            let p = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
