//! Weight-space and activation-space analysis: PCA of head rows, value
//! histograms, central moments, and activation-vs-weight distribution gaps.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::head::{cosine_similarity, dot};

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n x n` matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues (unsorted) and the eigenvectors as columns of a
/// row-major `n x n` matrix. Stops when the off-diagonal Frobenius norm drops
/// below `1e-12` times the matrix norm (or 1), or after 100 sweeps.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() <= JACOBI_TOLERANCE * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[p * n + r];
                    let aqr = a[q * n + r];
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    (values, v)
}

/// Principal axes of a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    /// `k` orthonormal axes of length `M`, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each axis (1/(R-1) convention), non-increasing.
    pub explained_variance: Vec<f64>,
    /// One `k`-vector per input row.
    pub projections: Vec<Vec<f64>>,
    pub mean_row: Vec<f64>,
}

impl PcaResult {
    /// Coordinates of an arbitrary row in the fitted basis.
    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean_row.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean_row.len(),
                got: row.len(),
            });
        }
        let centered: Vec<f64> = row.iter().zip(&self.mean_row).map(|(x, m)| x - m).collect();
        Ok(self.components.iter().map(|c| dot(&centered, c)).collect())
    }

    /// Maps coordinates back to the input space (mean included).
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean_row.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out
    }
}

/// PCA of `rows` (row-major, `dim` columns) keeping `k` components.
///
/// Decomposes whichever of the `M x M` covariance or the `R x R` Gram matrix
/// is smaller. Each component is signed so its largest-magnitude entry is
/// positive.
pub fn pca(rows: &[f64], dim: usize, k: usize) -> Result<PcaResult> {
    if dim == 0 || rows.is_empty() || !rows.len().is_multiple_of(dim) {
        return Err(Error::EmptyInput);
    }
    let r = rows.len() / dim;
    if r < 2 {
        return Err(Error::DegenerateInput("PCA needs at least two rows".into()));
    }
    if k == 0 || k > r.min(dim) {
        return Err(Error::BadK { k, rows: r, cols: dim });
    }
    let mut mean_row = vec![0.0; dim];
    for row in rows.chunks_exact(dim) {
        for (m, v) in mean_row.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean_row {
        *m /= r as f64;
    }
    let centered: Vec<f64> = rows
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean_row).map(|(x, m)| x - m).collect::<Vec<_>>())
        .collect();
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("all rows are identical".into()));
    }
    let denom = (r - 1) as f64;

    let (mut values, mut axes) = if dim <= r {
        let mut cov = vec![0.0; dim * dim];
        for row in centered.chunks_exact(dim) {
            for i in 0..dim {
                for j in i..dim {
                    cov[i * dim + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / denom;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        let (values, vecs) = jacobi_eigen(&cov, dim);
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|c| (0..dim).map(|i| vecs[i * dim + c]).collect())
            .collect();
        (values, axes)
    } else {
        let mut gram = vec![0.0; r * r];
        for i in 0..r {
            for j in i..r {
                let g = dot(&centered[i * dim..(i + 1) * dim], &centered[j * dim..(j + 1) * dim]) / denom;
                gram[i * r + j] = g;
                gram[j * r + i] = g;
            }
        }
        let (values, vecs) = jacobi_eigen(&gram, r);
        // u is a unit eigenvector of the Gram matrix; X^T u is the matching axis.
        let axes = (0..r)
            .map(|c| {
                let mut axis = vec![0.0; dim];
                for i in 0..r {
                    let u = vecs[i * r + c];
                    for (a, x) in axis.iter_mut().zip(&centered[i * dim..(i + 1) * dim]) {
                        *a += u * x;
                    }
                }
                axis
            })
            .collect();
        (values, axes)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    values = order.iter().map(|&i| values[i].max(0.0)).collect();
    axes = order.into_iter().map(|i| std::mem::take(&mut axes[i])).collect();

    let floor = values[0] * 1e-12 * (r.max(dim) as f64);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (idx, axis) in axes.into_iter().enumerate().take(k) {
        let mut c = if values[idx] > floor { axis } else { vec![0.0; dim] };
        orthonormalize_against(&mut c, &components);
        if c.iter().all(|&v| v == 0.0) {
            // null direction: complete the basis from the standard axes
            c = (0..dim)
                .find_map(|e| {
                    let mut cand = vec![0.0; dim];
                    cand[e] = 1.0;
                    orthonormalize_against(&mut cand, &components);
                    cand.iter().any(|&v| v != 0.0).then_some(cand)
                })
                .expect("basis completion within dimension");
            values[idx] = 0.0;
        }
        fix_sign(&mut c);
        components.push(c);
    }
    let projections = centered
        .chunks_exact(dim)
        .map(|row| components.iter().map(|c| dot(row, c)).collect())
        .collect();
    values.truncate(k);
    Ok(PcaResult {
        components,
        explained_variance: values,
        projections,
        mean_row,
    })
}

/// Two passes of modified Gram-Schmidt, then normalization. Leaves `v` zero
/// when nothing independent remains.
fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) {
    let before = dot(v, v).sqrt();
    if before == 0.0 {
        return;
    }
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let after = dot(v, v).sqrt();
    if after <= before * 1e-10 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x /= after);
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width histogram over `[min, max]`; the maximum lands in the last bin.
/// A constant input gets bins of width 1 starting at its value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = (((v - min) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let edges = (0..=bins)
        .map(|i| {
            if i == bins && max > min {
                max
            } else {
                min + i as f64 * width
            }
        })
        .collect();
    Ok(Histogram { edges, counts })
}

/// Population central moments (1/n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// Needs at least 3 values and nonzero variance.
    pub skewness: Option<f64>,
    /// Excess kurtosis; needs at least 4 values and nonzero variance.
    pub excess_kurtosis: Option<f64>,
}

pub fn moments(values: &[f64]) -> Result<Moments> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewValues { got: n, needed: 2 });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let spread = m2 > 0.0;
    Ok(Moments {
        count: n,
        mean,
        variance: m2,
        skewness: (spread && n >= 3).then(|| m3 / m2.powf(1.5)),
        excess_kurtosis: (spread && n >= 4).then(|| m4 / (m2 * m2) - 3.0),
    })
}

/// Linear-interpolation quantile of ascending `sorted` at `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecileRow {
    pub quantile: f64,
    pub activation: f64,
    pub weight: f64,
    /// activation minus weight
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchReport {
    pub activations: Moments,
    pub weights: Moments,
    pub mean_gap: f64,
    pub variance_gap: f64,
    pub skewness_gap: Option<f64>,
    pub excess_kurtosis_gap: Option<f64>,
    pub deciles: Vec<DecileRow>,
}

/// Compares the element distribution of activations against that of weights.
pub fn distribution_mismatch(activations: &[f64], weights: &[f64]) -> Result<MismatchReport> {
    if activations.is_empty() || weights.is_empty() {
        return Err(Error::EmptyInput);
    }
    let a = moments(activations)?;
    let w = moments(weights)?;
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sa, sw) = (sorted(activations), sorted(weights));
    let deciles = (1..10)
        .map(|d| {
            let q = d as f64 / 10.0;
            let (av, wv) = (quantile_sorted(&sa, q), quantile_sorted(&sw, q));
            DecileRow {
                quantile: q,
                activation: av,
                weight: wv,
                gap: av - wv,
            }
        })
        .collect();
    let gap = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    Ok(MismatchReport {
        mean_gap: a.mean - w.mean,
        variance_gap: a.variance - w.variance,
        skewness_gap: gap(a.skewness, w.skewness),
        excess_kurtosis_gap: gap(a.excess_kurtosis, w.excess_kurtosis),
        activations: a,
        weights: w,
        deciles,
    })
}

/// Row-major matrix of cosine similarities between all pairs of rows.
pub fn cosine_matrix(rows: &[f64], dim: usize) -> Result<Vec<f64>> {
    let r = rows.len() / dim;
    let mut out = vec![0.0; r * r];
    for i in 0..r {
        for j in i..r {
            let c = cosine_similarity(&rows[i * dim..(i + 1) * dim], &rows[j * dim..(j + 1) * dim])?;
            out[i * r + j] = c;
            out[j * r + i] = c;
        }
    }
    Ok(out)
}
