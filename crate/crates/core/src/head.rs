//! The frozen classification head: `y_i = x . w_i + b_i`.
//!
//! Dot products accumulate in `f64` in index order, so logits are
//! bit-reproducible for a given head and input.

use std::borrow::Cow;

use crate::dataset::{check_class_names, check_f32_finite};
use crate::error::{Error, FormatError, Result};

/// Tolerance on row norms for heads flagged as L2-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeadFlags {
    pub rows_l2_normalized: bool,
    pub bias_ignored: bool,
}

impl HeadFlags {
    pub const ORIGINAL: Self = Self {
        rows_l2_normalized: false,
        bias_ignored: false,
    };
    pub const COSINE: Self = Self {
        rows_l2_normalized: true,
        bias_ignored: true,
    };

    pub fn bits(self) -> u32 {
        u32::from(self.rows_l2_normalized) | (u32::from(self.bias_ignored) << 1)
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        if bits & !0b11 != 0 {
            return None;
        }
        Some(Self {
            rows_l2_normalized: bits & 1 != 0,
            bias_ignored: bits & 2 != 0,
        })
    }

    /// Unit rows and no bias: the head scores pure cosine similarity, and
    /// queries are L2-normalized before scoring.
    pub fn is_cosine(self) -> bool {
        self.rows_l2_normalized && self.bias_ignored
    }

    pub fn is_original(self) -> bool {
        self == Self::ORIGINAL
    }
}

/// An `N x M` dense layer with per-class bias and names.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    class_names: Vec<String>,
    flags: HeadFlags,
}

impl ClassifierHead {
    /// `weights` is row-major with one row of `dim` values per class.
    pub fn new(
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        class_names: Vec<String>,
        flags: HeadFlags,
    ) -> Result<Self, FormatError> {
        if dim == 0 || bias.is_empty() {
            return Err(FormatError::InvariantViolation(
                "head needs at least one class and one dimension".into(),
            ));
        }
        if weights.len() != bias.len() * dim {
            return Err(FormatError::InvariantViolation(format!(
                "{} weights do not form {} rows of width {dim}",
                weights.len(),
                bias.len()
            )));
        }
        if class_names.len() != bias.len() {
            return Err(FormatError::InvariantViolation(format!(
                "{} class names for {} rows",
                class_names.len(),
                bias.len()
            )));
        }
        check_f32_finite(&weights)?;
        check_f32_finite(&bias).map_err(|e| match e {
            FormatError::NonFiniteValue(i) => FormatError::NonFiniteValue(weights.len() + i),
            other => other,
        })?;
        check_class_names(&class_names)?;
        if flags.rows_l2_normalized {
            for (i, row) in weights.chunks_exact(dim).enumerate() {
                let norm = norm(row);
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(FormatError::InvariantViolation(format!(
                        "row {i} has norm {norm} but the head is flagged L2-normalized"
                    )));
                }
            }
        }
        if flags.bias_ignored {
            if let Some(i) = bias.iter().position(|&b| b != 0.0) {
                return Err(FormatError::InvariantViolation(format!(
                    "bias {i} is {} but the head is flagged bias-ignored",
                    bias[i]
                )));
            }
        }
        Ok(Self {
            dim,
            weights,
            bias,
            class_names,
            flags,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.dim)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn flags(&self) -> HeadFlags {
        self.flags
    }

    /// Returns a copy with one extra class; existing rows are copied bit-for-bit.
    pub(crate) fn with_class(&self, row: Vec<f64>, bias: f64, name: &str) -> Result<Self> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if self.class_index(name).is_some() {
            return Err(Error::DuplicateClassName(name.to_string()));
        }
        let mut weights = Vec::with_capacity(self.weights.len() + self.dim);
        weights.extend_from_slice(&self.weights);
        weights.extend(row);
        let mut biases = self.bias.clone();
        biases.push(bias);
        let mut names = self.class_names.clone();
        names.push(name.to_string());
        Ok(Self::new(self.dim, weights, biases, names, self.flags)?)
    }

    /// Raw logits `x . w_i + b_i`.
    pub fn logits(&self, x: &[f64]) -> Result<Logits> {
        self.check_dim(x)?;
        Ok(Logits(
            self.rows().zip(&self.bias).map(|(w, b)| dot(x, w) + b).collect(),
        ))
    }

    /// Top-1 class of the raw logits; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }

    /// The query as the head expects it: L2-normalized for cosine heads,
    /// untouched otherwise. A zero query stays zero.
    pub fn prepare_query<'a>(&self, x: &'a [f64]) -> Cow<'a, [f64]> {
        if self.flags.is_cosine() {
            Cow::Owned(l2_normalize(x).into_inner())
        } else {
            Cow::Borrowed(x)
        }
    }

    /// Top-1 class after `prepare_query`.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        self.predict(&self.prepare_query(x))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// One logit per head row, index-aligned with the head's classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest value; the first one wins a tie.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sequential `f64` dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Outcome of [`l2_normalize`]. A zero vector is passed through, not rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalized {
    Unit(Vec<f64>),
    Zero(Vec<f64>),
}

impl Normalized {
    pub fn is_zero(&self) -> bool {
        matches!(self, Normalized::Zero(_))
    }

    pub fn into_inner(self) -> Vec<f64> {
        match self {
            Normalized::Unit(v) | Normalized::Zero(v) => v,
        }
    }
}

pub fn l2_normalize(v: &[f64]) -> Normalized {
    let n = norm(v);
    if n > 0.0 {
        Normalized::Unit(v.iter().map(|x| x / n).collect())
    } else {
        Normalized::Zero(v.to_vec())
    }
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt of the product keeps cos(a, a) exactly 1
    Ok((dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn identity(n: usize, bias: Vec<f64>) -> ClassifierHead {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        ClassifierHead::new(n, w, bias, names(n), HeadFlags::ORIGINAL).unwrap()
    }

    fn random_head(rng: &mut Xoshiro256StarStar, n: usize, m: usize) -> ClassifierHead {
        let w = (0..n * m).map(|_| rng.next_normal()).collect();
        let b = (0..n).map(|_| rng.next_normal()).collect();
        ClassifierHead::new(m, w, b, names(n), HeadFlags::ORIGINAL).unwrap()
    }

    #[test]
    fn identity_logits() {
        let h = identity(2, vec![0.0, 0.0]);
        assert_eq!(h.logits(&[1.0, 0.0]).unwrap().values(), &[1.0, 0.0]);
    }

    #[test]
    fn bias_only_logits() {
        let h = identity(2, vec![0.5, -0.5]);
        assert_eq!(h.logits(&[0.0, 0.0]).unwrap().values(), &[0.5, -0.5]);
    }

    #[test]
    fn logits_match_scalar_loop() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        let h = random_head(&mut rng, 3, 4);
        let x: Vec<f64> = (0..4).map(|_| rng.next_normal()).collect();
        let got = h.logits(&x).unwrap();
        for i in 0..3 {
            let mut s = h.bias()[i];
            for (w, v) in h.row(i).iter().zip(&x) {
                s += w * v;
            }
            assert!((got.values()[i] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let h = identity(2, vec![0.0, 0.0]);
        assert!(matches!(
            h.logits(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(h.predict(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn predict_identity_and_ties() {
        let h = identity(3, vec![0.0; 3]);
        assert_eq!(h.predict(&[0.0, 1.0, 0.0]).unwrap(), 1);
        assert_eq!(argmax(&[0.0, 1.0, 3.0, 2.0, 0.5, 3.0]), 2);
    }

    #[test]
    fn predict_matches_oracle_argmax() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2);
        for _ in 0..50 {
            let h = random_head(&mut rng, 7, 5);
            let x: Vec<f64> = (0..5).map(|_| rng.next_normal()).collect();
            let oracle: Vec<f64> = (0..7)
                .map(|i| (0..5).map(|j| h.row(i)[j] * x[j]).sum::<f64>() + h.bias()[i])
                .collect();
            let mut best = 0;
            for i in 1..7 {
                if oracle[i] > oracle[best] {
                    best = i;
                }
            }
            assert_eq!(h.predict(&x).unwrap(), best);
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).into_inner();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_and_zero() {
        let u = l2_normalize(&[0.0, 1.0, 0.0]).into_inner();
        assert_eq!(u, vec![0.0, 1.0, 0.0]);
        let z = l2_normalize(&[0.0, 0.0]);
        assert!(z.is_zero());
        assert_eq!(z.into_inner(), vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_random_768() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let v: Vec<f64> = (0..768).map(|_| rng.normal(0.0, 5.0)).collect();
        let u = l2_normalize(&v).into_inner();
        assert!((norm(&u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[2.0, 1.0], &[2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut rng = Xoshiro256StarStar::seed_from_u64(4);
        let a: Vec<f64> = (0..9).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.next_normal()).collect();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        assert!((cosine_similarity(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn flag_invariants_enforced() {
        let err = ClassifierHead::new(
            2,
            vec![2.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            names(2),
            HeadFlags {
                rows_l2_normalized: true,
                bias_ignored: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::InvariantViolation(_)));
        let err = ClassifierHead::new(
            1,
            vec![1.0],
            vec![0.1],
            names(1),
            HeadFlags {
                rows_l2_normalized: false,
                bias_ignored: true,
            },
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::InvariantViolation(_)));
    }

    #[test]
    fn permuting_rows_permutes_logits() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let h = random_head(&mut rng, 4, 3);
        let perm = [2usize, 0, 3, 1];
        let w: Vec<f64> = perm.iter().flat_map(|&i| h.row(i).to_vec()).collect();
        let b: Vec<f64> = perm.iter().map(|&i| h.bias()[i]).collect();
        let n: Vec<String> = perm.iter().map(|&i| h.class_names()[i].clone()).collect();
        let p = ClassifierHead::new(3, w, b, n, HeadFlags::ORIGINAL).unwrap();
        let x = [0.3, -1.2, 0.7];
        let lh = h.logits(&x).unwrap();
        let lp = p.logits(&x).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(lp.values()[k].to_bits(), lh.values()[i].to_bits());
        }
    }

    #[test]
    fn logits_scale_with_input_when_bias_free() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(6);
        let w: Vec<f64> = (0..12).map(|_| rng.next_normal()).collect();
        let h = ClassifierHead::new(4, w, vec![0.0; 3], names(3), HeadFlags::ORIGINAL).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.next_normal()).collect();
        // Power-of-two scaling is exact in binary floating point.
        let scaled: Vec<f64> = x.iter().map(|v| v * 4.0).collect();
        let a = h.logits(&x).unwrap();
        let b = h.logits(&scaled).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert_eq!(v.to_bits(), (u * 4.0).to_bits());
        }
    }
}
