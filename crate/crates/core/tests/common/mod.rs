//! Random fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use imprintlab::dataset::EmbeddingSet;
use imprintlab::head::{ClassifierHead, HeadFlags};
use imprintlab::rng::Xoshiro256StarStar;

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// A value exactly representable in f32; one draw in four comes from a
/// small integer grid so ties are common.
pub fn value(rng: &mut Xoshiro256StarStar) -> f64 {
    if rng.below(4) == 0 {
        rng.below(7) as f64 - 3.0
    } else {
        f64::from(rng.normal(0.0, 1.0) as f32)
    }
}

pub fn values(rng: &mut Xoshiro256StarStar, n: usize) -> Vec<f64> {
    (0..n).map(|_| value(rng)).collect()
}

pub fn random_head(rng: &mut Xoshiro256StarStar, n: usize, m: usize) -> ClassifierHead {
    ClassifierHead::new(
        m,
        values(rng, n * m),
        values(rng, n),
        names("c", n),
        HeadFlags::ORIGINAL,
    )
    .unwrap()
}

pub fn random_set(rng: &mut Xoshiro256StarStar, rows: usize, dim: usize, classes: usize) -> EmbeddingSet {
    let labels = (0..rows).map(|_| rng.below(classes as u64) as u32).collect();
    EmbeddingSet::new(dim, values(rng, rows * dim), labels, names("k", classes)).unwrap()
}

/// Descending sort, then the median of each consecutive block of `n`.
pub fn profile_oracle(weights: &[f64], bias: &[f64], n: usize, m: usize) -> (Vec<f64>, f64) {
    fn med(v: &[f64]) -> f64 {
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            (v[k / 2 - 1] + v[k / 2]) / 2.0
        }
    }
    let mut all = weights.to_vec();
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let blocks = (0..m).map(|j| med(&all[j * n..(j + 1) * n])).collect();
    let mut b = bias.to_vec();
    b.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (blocks, med(&b))
}

/// Position `p` receives the reference value at its descending rank, ties
/// broken toward the lower index.
pub fn quantile_oracle(x: &[f64], sorted_reference: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    // insertion sort keeps it independent of the library's sort
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && x[order[j - 1]] < x[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut out = vec![0.0; x.len()];
    for (rank, &p) in order.iter().enumerate() {
        out[p] = sorted_reference[rank];
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
