//! Class addition by weight imprinting.
//!
//! Two methods are supported:
//!
//! * **Quantile imprinting** (`Done`): the new row is the activation vector
//!   rank-remapped onto a reference profile built from the original weight
//!   matrix, and the new bias is the median original bias. The original
//!   rows and biases are never touched.
//! * **Linear imprinting** (`Qi`): rows are L2-normalized, biases dropped,
//!   and the L2-normalized activation vector becomes the new row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{l2_normalize, ClassifierHead, HeadFlags, Normalized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImprintMethod {
    Done,
    Qi,
}

impl fmt::Display for ImprintMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImprintMethod::Done => "done",
            ImprintMethod::Qi => "qi",
        })
    }
}

impl FromStr for ImprintMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "done" => Ok(ImprintMethod::Done),
            "qi" => Ok(ImprintMethod::Qi),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// The `M` reference weight values (sorted, largest first) and the median
/// bias of the original head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    sorted_weights: Vec<f64>,
    median_bias: f64,
    source_classes: usize,
    source_dim: usize,
}

impl ReferenceProfile {
    pub fn new(sorted_weights: Vec<f64>, median_bias: f64, source_classes: usize) -> Result<Self> {
        if sorted_weights.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = sorted_weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        if !median_bias.is_finite() {
            return Err(Error::NonFiniteValue(sorted_weights.len()));
        }
        if sorted_weights.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "reference weights must be non-increasing".into(),
            ));
        }
        Ok(Self {
            source_dim: sorted_weights.len(),
            sorted_weights,
            median_bias,
            source_classes,
        })
    }

    pub fn sorted_weights(&self) -> &[f64] {
        &self.sorted_weights
    }

    pub fn median_bias(&self) -> f64 {
        self.median_bias
    }

    pub fn dim(&self) -> usize {
        self.sorted_weights.len()
    }

    /// `(N, M)` of the head the profile was built from.
    pub fn source_dims(&self) -> (usize, usize) {
        (self.source_classes, self.source_dim)
    }

    /// Re-checks invariants after deserialization.
    pub fn validated(self) -> Result<Self> {
        let classes = self.source_classes;
        let dim = self.source_dim;
        let p = Self::new(self.sorted_weights, self.median_bias, classes)?;
        if dim != p.dim() {
            return Err(Error::InvalidArgument(format!(
                "profile records dim {dim} but holds {} values",
                p.dim()
            )));
        }
        Ok(p)
    }
}

/// Median of a sorted slice; an even count takes the midpoint of the two
/// central values.
fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Builds the reference profile from an original (unmodified) head.
///
/// All `N*M` weights are sorted largest first and cut into `M` consecutive
/// blocks of `N`; the profile holds the median of each block.
pub fn build_reference_profile(head: &ClassifierHead) -> Result<ReferenceProfile> {
    if head.num_classes() == 0 {
        return Err(Error::EmptyHead);
    }
    if !head.flags().is_original() {
        return Err(Error::HeadState(
            "the reference profile must come from the original head".into(),
        ));
    }
    let n = head.num_classes();
    let mut flat = head.weights().to_vec();
    flat.sort_unstable_by(|a, b| b.total_cmp(a));
    let sorted_weights = flat.chunks_exact(n).map(median_of_sorted).collect();

    let mut bias = head.bias().to_vec();
    bias.sort_unstable_by(|a, b| b.total_cmp(a));
    ReferenceProfile::new(sorted_weights, median_of_sorted(&bias), n)
}

/// Replaces each element of `x` by the reference value of the same rank.
///
/// Rank 0 is the largest element. Equal elements are ranked by position, so
/// the earlier one receives the larger reference value.
pub fn quantile_normalize(x: &[f64], profile: &ReferenceProfile) -> Result<Vec<f64>> {
    let reference = profile.sorted_weights();
    if x.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    // stable: ties keep ascending index order
    order.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).expect("finite"));
    let mut out = vec![0.0; x.len()];
    for (rank, &pos) in order.iter().enumerate() {
        out[pos] = reference[rank];
    }
    Ok(out)
}

/// Adds a class by quantile imprinting, building the profile from `head`.
///
/// `head` must be the original head; to add several classes one after
/// another, build the profile once and use [`add_class_done_with`].
pub fn add_class_done(head: &ClassifierHead, x_new: &[f64], class_name: &str) -> Result<ClassifierHead> {
    let profile = build_reference_profile(head)?;
    add_class_done_with(head, &profile, x_new, class_name)
}

/// Adds a class by quantile imprinting against a fixed profile.
pub fn add_class_done_with(
    head: &ClassifierHead,
    profile: &ReferenceProfile,
    x_new: &[f64],
    class_name: &str,
) -> Result<ClassifierHead> {
    if !head.flags().is_original() {
        return Err(Error::HeadState(
            "quantile imprinting needs a head with raw rows and biases".into(),
        ));
    }
    if head.dim() != profile.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: profile.dim(),
        });
    }
    let row = quantile_normalize(x_new, profile)?;
    head.with_class(row, profile.median_bias(), class_name)
}

/// Normalizes every row to unit length and zeroes every bias.
pub fn qi_modify_head(head: &ClassifierHead) -> Result<ClassifierHead> {
    if !head.flags().is_original() {
        return Err(Error::HeadState("head is already modified".into()));
    }
    let mut weights = Vec::with_capacity(head.weights().len());
    for (i, row) in head.rows().enumerate() {
        match l2_normalize(row) {
            Normalized::Unit(v) => weights.extend(v),
            Normalized::Zero(_) => return Err(Error::ZeroRow(i)),
        }
    }
    Ok(ClassifierHead::new(
        head.dim(),
        weights,
        vec![0.0; head.num_classes()],
        head.class_names().to_vec(),
        HeadFlags::COSINE,
    )?)
}

/// Appends the L2-normalized activation as a new row with zero bias.
pub fn add_class_qi(head: &ClassifierHead, x_new: &[f64], class_name: &str) -> Result<ClassifierHead> {
    if !head.flags().is_cosine() {
        return Err(Error::HeadState(
            "linear imprinting needs a head with unit rows and no bias".into(),
        ));
    }
    if x_new.len() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: x_new.len(),
        });
    }
    if let Some(i) = x_new.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    match l2_normalize(x_new) {
        Normalized::Unit(row) => head.with_class(row, 0.0, class_name),
        Normalized::Zero(_) => Err(Error::ZeroVector),
    }
}

/// Averages K support activations into the single vector to imprint.
///
/// `Done` averages the raw activations; `Qi` averages the L2-normalized ones.
pub fn aggregate_shots<V: AsRef<[f64]>>(shots: &[V], method: ImprintMethod) -> Result<Vec<f64>> {
    let first = shots.first().ok_or(Error::EmptyShotSet)?.as_ref();
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for shot in shots {
        let shot = shot.as_ref();
        if shot.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: shot.len(),
            });
        }
        let term = match method {
            ImprintMethod::Done => shot.to_vec(),
            ImprintMethod::Qi => l2_normalize(shot).into_inner(),
        };
        for (s, t) in sum.iter_mut().zip(term) {
            *s += t;
        }
    }
    let k = shots.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

/// A configured imprinting method bound to its reference state.
#[derive(Debug, Clone)]
pub enum Imprinter {
    Done(ReferenceProfile),
    Qi,
}

impl Imprinter {
    /// Readies `base` for imprinting: quantile imprinting keeps the head and
    /// captures its profile; linear imprinting applies the head modification
    /// unless it is already in place.
    pub fn prepare(method: ImprintMethod, base: &ClassifierHead) -> Result<(Self, ClassifierHead)> {
        match method {
            ImprintMethod::Done => Ok((Imprinter::Done(build_reference_profile(base)?), base.clone())),
            ImprintMethod::Qi if base.flags().is_cosine() => Ok((Imprinter::Qi, base.clone())),
            ImprintMethod::Qi => Ok((Imprinter::Qi, qi_modify_head(base)?)),
        }
    }

    pub fn method(&self) -> ImprintMethod {
        match self {
            Imprinter::Done(_) => ImprintMethod::Done,
            Imprinter::Qi => ImprintMethod::Qi,
        }
    }

    /// Aggregates `shots` and appends the resulting class to `head`.
    pub fn add<V: AsRef<[f64]>>(&self, head: &ClassifierHead, shots: &[V], name: &str) -> Result<ClassifierHead> {
        let x = aggregate_shots(shots, self.method())?;
        match self {
            Imprinter::Done(profile) => add_class_done_with(head, profile, &x, name),
            Imprinter::Qi => add_class_qi(head, &x, name),
        }
    }

    /// The row and bias this imprinter would append for `shots`, without a head.
    pub fn imprinted_row<V: AsRef<[f64]>>(&self, shots: &[V]) -> Result<(Vec<f64>, f64)> {
        let x = aggregate_shots(shots, self.method())?;
        match self {
            Imprinter::Done(profile) => Ok((quantile_normalize(&x, profile)?, profile.median_bias())),
            Imprinter::Qi => match l2_normalize(&x) {
                Normalized::Unit(v) => Ok((v, 0.0)),
                Normalized::Zero(_) => Err(Error::ZeroVector),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::norm;
    use crate::rng::Xoshiro256StarStar;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn hand_head() -> ClassifierHead {
        ClassifierHead::new(
            2,
            vec![4.0, 3.0, 2.0, 1.0],
            vec![1.0, 3.0],
            names(2),
            HeadFlags::ORIGINAL,
        )
        .unwrap()
    }

    fn profile(values: &[f64]) -> ReferenceProfile {
        ReferenceProfile::new(values.to_vec(), 0.0, 1).unwrap()
    }

    #[test]
    fn hand_profile() {
        let p = build_reference_profile(&hand_head()).unwrap();
        assert_eq!(p.sorted_weights(), &[3.5, 1.5]);
        assert_eq!(p.median_bias(), 2.0);
        assert_eq!(p.source_dims(), (2, 2));
    }

    #[test]
    fn odd_block_median_is_middle_element() {
        let h = ClassifierHead::new(
            2,
            vec![9.0, 1.0, 5.0, 7.0, 3.0, 2.0],
            vec![0.0, 1.0, 5.0],
            names(3),
            HeadFlags::ORIGINAL,
        )
        .unwrap();
        // sorted: 9 7 5 | 3 2 1
        let p = build_reference_profile(&h).unwrap();
        assert_eq!(p.sorted_weights(), &[7.0, 2.0]);
        assert_eq!(p.median_bias(), 1.0);
    }

    #[test]
    fn profile_rejects_modified_head() {
        let q = qi_modify_head(&hand_head()).unwrap();
        assert!(matches!(build_reference_profile(&q), Err(Error::HeadState(_))));
    }

    #[test]
    fn quantile_hand_cases() {
        let p = profile(&[0.5, 0.0, -0.5]);
        assert_eq!(quantile_normalize(&[3.0, 1.0, 2.0], &p).unwrap(), vec![0.5, -0.5, 0.0]);
        let p = profile(&[1.0, 0.0]);
        assert_eq!(quantile_normalize(&[7.0, 7.0], &p).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            quantile_normalize(&[1.0], &p),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            quantile_normalize(&[1.0, f64::NAN], &p),
            Err(Error::NonFiniteValue(1))
        ));
    }

    #[test]
    fn signed_zeros_tie() {
        let p = profile(&[1.0, 0.0]);
        assert_eq!(quantile_normalize(&[-0.0, 0.0], &p).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn quantile_matches_argsort_scatter() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(21);
        let mut reference: Vec<f64> = (0..64).map(|_| rng.next_normal()).collect();
        reference.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let p = profile(&reference);
        let x: Vec<f64> = (0..64).map(|_| rng.next_normal()).collect();
        // independent oracle: rank of each element counted directly
        let mut expected = vec![0.0; 64];
        for i in 0..64 {
            let rank = (0..64).filter(|&j| x[j] > x[i] || (x[j] == x[i] && j < i)).count();
            expected[i] = reference[rank];
        }
        assert_eq!(quantile_normalize(&x, &p).unwrap(), expected);
    }

    #[test]
    fn done_hand_case() {
        let h = hand_head();
        let out = add_class_done(&h, &[0.2, 0.9], "new").unwrap();
        assert_eq!(out.num_classes(), 3);
        assert_eq!(out.row(2), &[1.5, 3.5]);
        assert_eq!(out.bias()[2], 2.0);
        assert_eq!(&out.weights()[..4], h.weights());
        assert_eq!(&out.bias()[..2], h.bias());
        assert!(matches!(
            add_class_done(&out, &[0.1, 0.2], "new"),
            Err(Error::DuplicateClassName(_))
        ));
        assert!(matches!(
            add_class_done(&h, &[0.1], "x"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sequential_done_rows_share_multiset() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let w = (0..6 * 10).map(|_| rng.next_normal()).collect();
        let b = (0..6).map(|_| rng.normal(0.0, 0.1)).collect();
        let base = ClassifierHead::new(10, w, b, names(6), HeadFlags::ORIGINAL).unwrap();
        let p = build_reference_profile(&base).unwrap();
        let mut head = base.clone();
        for k in 0..8 {
            let x: Vec<f64> = (0..10).map(|_| rng.next_normal().max(0.0)).collect();
            head = add_class_done_with(&head, &p, &x, &format!("new{k}")).unwrap();
        }
        for k in 0..8 {
            let mut row = head.row(6 + k).to_vec();
            row.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert_eq!(row, p.sorted_weights());
        }
    }

    #[test]
    fn qi_modify_cases() {
        let h = ClassifierHead::new(2, vec![3.0, 4.0], vec![0.7], names(1), HeadFlags::ORIGINAL).unwrap();
        let q = qi_modify_head(&h).unwrap();
        assert!((q.row(0)[0] - 0.6).abs() < 1e-15 && (q.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(q.bias(), &[0.0]);
        assert_eq!(q.flags(), HeadFlags::COSINE);
        assert!(matches!(qi_modify_head(&q), Err(Error::HeadState(_))));

        let unit = ClassifierHead::new(
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            names(2),
            HeadFlags::ORIGINAL,
        )
        .unwrap();
        let q = qi_modify_head(&unit).unwrap();
        for (a, b) in q.weights().iter().zip(unit.weights()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = ClassifierHead::new(
            2,
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0],
            names(2),
            HeadFlags::ORIGINAL,
        )
        .unwrap();
        assert!(matches!(qi_modify_head(&zero), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn qi_modify_random_norms() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(8);
        let w = (0..20 * 30).map(|_| rng.normal(0.0, 3.0)).collect();
        let h = ClassifierHead::new(30, w, vec![1.0; 20], names(20), HeadFlags::ORIGINAL).unwrap();
        let q = qi_modify_head(&h).unwrap();
        for row in q.rows() {
            assert!((norm(row) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn qi_add_cases() {
        let base =
            qi_modify_head(&ClassifierHead::new(2, vec![1.0, 1.0], vec![0.3], names(1), HeadFlags::ORIGINAL).unwrap())
                .unwrap();
        let out = add_class_qi(&base, &[3.0, 4.0], "n").unwrap();
        assert!((out.row(1)[0] - 0.6).abs() < 1e-15);
        assert_eq!(out.bias()[1], 0.0);
        assert_eq!(out.row(0), base.row(0));
        let unit = add_class_qi(&base, &[0.0, 1.0], "u").unwrap();
        assert_eq!(unit.row(1), &[0.0, 1.0]);
        assert!(matches!(add_class_qi(&base, &[0.0, 0.0], "z"), Err(Error::ZeroVector)));
        assert!(matches!(
            add_class_qi(&hand_head(), &[1.0, 0.0], "z"),
            Err(Error::HeadState(_))
        ));

        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        let x: Vec<f64> = (0..2).map(|_| rng.normal(0.0, 10.0)).collect();
        let r = add_class_qi(&base, &x, "r").unwrap();
        assert!((norm(r.row(1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_cases() {
        let one = vec![vec![1.0, -2.0, 3.0]];
        assert_eq!(aggregate_shots(&one, ImprintMethod::Done).unwrap(), one[0]);
        let pair = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(aggregate_shots(&pair, ImprintMethod::Done).unwrap(), vec![0.5, 0.5]);
        let same = vec![vec![3.0, 4.0]; 5];
        assert_eq!(aggregate_shots(&same, ImprintMethod::Done).unwrap(), vec![3.0, 4.0]);
        let qi = aggregate_shots(&same, ImprintMethod::Qi).unwrap();
        assert!((qi[0] - 0.6).abs() < 1e-15 && (qi[1] - 0.8).abs() < 1e-15);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(
            aggregate_shots(&empty, ImprintMethod::Done),
            Err(Error::EmptyShotSet)
        ));
        let ragged = vec![vec![1.0], vec![1.0, 2.0]];
        assert!(matches!(
            aggregate_shots(&ragged, ImprintMethod::Qi),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("DONE".parse::<ImprintMethod>().unwrap(), ImprintMethod::Done);
        assert_eq!("qi".parse::<ImprintMethod>().unwrap(), ImprintMethod::Qi);
        assert!("linear".parse::<ImprintMethod>().is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(ReferenceProfile::new(vec![1.0, 2.0], 0.0, 1).is_err());
        assert!(ReferenceProfile::new(vec![], 0.0, 1).is_err());
        assert!(ReferenceProfile::new(vec![1.0], f64::INFINITY, 1).is_err());
    }
}
