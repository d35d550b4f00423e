//! Row normalization, cosine similarity and the frame/text alignment
//! probability.

use crate::error::{Error, Result};
use crate::head::dot;
use crate::tensor::Tensor;

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales every row to unit length. Zero rows are an error.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm { row: r });
        }
        for v in out.row_mut(r) {
            *v /= n;
        }
    }
    Ok(out)
}

/// `n x m` matrix of cosines between rows of `a` and rows of `b`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "cosine_matrix row width".into(),
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let an = l2_normalize_rows(a)?;
    let bn = l2_normalize_rows(b)?;
    Ok(matmul_transposed(&an, &bn))
}

/// `a * b^T` for row-major matrices of equal width.
pub fn matmul_transposed(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), b.rows());
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ar = a.row(i);
        for j in 0..m {
            out.push(dot(ar, b.row(j)));
        }
    }
    Tensor::matrix(n, m, out).expect("shape follows from inputs")
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    if nb == 0.0 {
        return Err(Error::ZeroNorm { row: 1 });
    }
    Ok(dot(a, b) / (na * nb))
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Alignment probability between a unit frame embedding and a unit text
/// embedding: `logistic(scale * cos + bias)`.
pub fn pi_align(e_x: &[f64], e_t: &[f64], scale: f64, bias: f64) -> f64 {
    pi_from_cos(dot(e_x, e_t), scale, bias)
}

pub fn pi_from_cos(cos: f64, scale: f64, bias: f64) -> f64 {
    logistic(scale * cos + bias)
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn self_cosine_is_one() {
        let a = Tensor::matrix(1, 3, vec![1.0, 2.0, -2.0]).unwrap();
        assert_relative_eq!(cosine_matrix(&a, &a).unwrap().values()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_cosine_is_zero() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine_matrix(&a, &b).unwrap().values()[0], 0.0);
    }

    #[test]
    fn zero_row_is_error() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize_rows(&a), Err(Error::ZeroNorm { row: 1 })));
    }

    #[test]
    fn pi_examples() {
        assert_eq!(pi_from_cos(0.0, 1.0, 0.0), 0.5);
        // logistic(1.0) evaluated independently
        let reference = 1.0 / (1.0 + (-1.0f64).exp());
        assert_relative_eq!(pi_from_cos(0.3, 10.0, -2.0), reference, epsilon = 1e-15);
        let mut prev = 0.0;
        for scale in [1.0, 10.0, 100.0, 1000.0] {
            let p = pi_from_cos(1.0, scale, 0.0);
            assert!(p >= prev && p <= 1.0);
            prev = p;
        }
        assert_relative_eq!(prev, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn cosine_matches_scalar_formula(
            a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..5),
            b in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..5),
        ) {
            prop_assume!(a.iter().chain(&b).all(|r| norm(r) > 1e-3));
            let ta = Tensor::from_rows(&a).unwrap();
            let tb = Tensor::from_rows(&b).unwrap();
            let c = cosine_matrix(&ta, &tb).unwrap();
            for (i, ra) in a.iter().enumerate() {
                for (j, rb) in b.iter().enumerate() {
                    let d: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                    let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let expected = d / (na * nb);
                    prop_assert!((c.get2(i, j) - expected).abs() < 1e-12);
                    prop_assert!(c.get2(i, j).abs() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn pi_in_open_unit_interval(cos in -1.0f64..1.0, scale in 0.0f64..20.0, bias in -10.0f64..10.0) {
            let p = pi_from_cos(cos, scale, bias);
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn pi_increasing_in_cos(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, scale in 0.01f64..5.0) {
            prop_assume!(c1 < c2);
            prop_assert!(pi_from_cos(c1, scale, 0.0) <= pi_from_cos(c2, scale, 0.0));
        }
    }
}
