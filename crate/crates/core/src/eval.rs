//! Top-1 accuracy, interference, and N-way K-shot episodes.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::head::{ClassifierHead, HeadFlags};
use crate::imprint::{build_reference_profile, ImprintMethod, Imprinter};
use crate::rng::Xoshiro256StarStar;

/// Outcome of classifying a labeled query set with a (possibly extended) head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub new_classes: Vec<usize>,
    pub num_queries: u64,
    pub per_class_correct: Vec<u64>,
    pub per_class_total: Vec<u64>,
    /// Row-major `N x N`: true head class by predicted head class.
    #[serde(skip)]
    pub confusion: Vec<u64>,
    pub top1_accuracy: Option<f64>,
    /// Aligned with `new_classes`; `None` where a class had no queries.
    pub new_class_top1_accuracy: Vec<Option<f64>>,
    pub original_total: u64,
    pub original_correct: u64,
    pub original_top1_accuracy: Option<f64>,
    /// Original-class queries predicted as any new class.
    pub interference_count: u64,
    pub interference_fraction: Option<f64>,
}

impl EvalReport {
    pub fn num_classes(&self) -> usize {
        self.per_class_total.len()
    }

    pub fn confusion_count(&self, truth: usize, predicted: usize) -> u64 {
        self.confusion[truth * self.num_classes() + predicted]
    }

    /// Nonzero confusion cells as `(true, predicted, count)`, row-major.
    pub fn confusion_entries(&self) -> Vec<(usize, usize, u64)> {
        let n = self.num_classes();
        self.confusion
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i / n, i % n, c))
            .collect()
    }
}

fn fraction(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Classifies every query and tallies accuracy and interference.
///
/// Query labels are matched to head classes by name. Cosine heads get each
/// query L2-normalized first.
pub fn evaluate(head: &ClassifierHead, queries: &EmbeddingSet, new_class_indices: &[usize]) -> Result<EvalReport> {
    let n = head.num_classes();
    if queries.dim() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: queries.dim(),
        });
    }
    if let Some(&bad) = new_class_indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!(
            "new class index {bad} out of range for {n} classes"
        )));
    }
    let mut is_new = vec![false; n];
    for &i in new_class_indices {
        is_new[i] = true;
    }
    let label_map: Vec<Option<usize>> = queries
        .class_names()
        .iter()
        .map(|name| head.class_index(name))
        .collect();
    let truths = queries
        .labels()
        .iter()
        .map(|&l| label_map[l as usize].ok_or_else(|| Error::UnmappableLabel(queries.class_name(l).to_string())))
        .collect::<Result<Vec<_>>>()?;

    let predictions = (0..queries.len())
        .into_par_iter()
        .map(|i| head.classify(queries.row(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = vec![0u64; n * n];
    let mut per_class_total = vec![0u64; n];
    let mut per_class_correct = vec![0u64; n];
    let mut interference_count = 0;
    for (&truth, &pred) in truths.iter().zip(&predictions) {
        confusion[truth * n + pred] += 1;
        per_class_total[truth] += 1;
        if truth == pred {
            per_class_correct[truth] += 1;
        }
        if !is_new[truth] && is_new[pred] {
            interference_count += 1;
        }
    }
    let (mut original_total, mut original_correct) = (0, 0);
    for c in (0..n).filter(|&c| !is_new[c]) {
        original_total += per_class_total[c];
        original_correct += per_class_correct[c];
    }
    let correct: u64 = per_class_correct.iter().sum();
    Ok(EvalReport {
        class_names: head.class_names().to_vec(),
        new_classes: new_class_indices.to_vec(),
        num_queries: queries.len() as u64,
        top1_accuracy: fraction(correct, queries.len() as u64),
        new_class_top1_accuracy: new_class_indices
            .iter()
            .map(|&c| fraction(per_class_correct[c], per_class_total[c]))
            .collect(),
        original_top1_accuracy: fraction(original_correct, original_total),
        interference_fraction: fraction(interference_count, original_total),
        original_total,
        original_correct,
        interference_count,
        per_class_correct,
        per_class_total,
        confusion,
    })
}

/// Seeded N-way K-shot sampling configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub seed: u64,
    pub method: ImprintMethod,
}

impl EpisodeSpec {
    /// Five-way episodes with 15 queries per class, 100 episodes.
    pub fn standard(shots: usize, method: ImprintMethod, seed: u64) -> Self {
        Self {
            ways: 5,
            shots,
            queries_per_class: 15,
            episodes: 100,
            seed,
            method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.ways < 2 {
            return bad("ways must be at least 2");
        }
        if self.shots < 1 {
            return bad("shots must be at least 1");
        }
        if self.queries_per_class < 1 {
            return bad("queries per class must be at least 1");
        }
        if self.episodes < 1 {
            return bad("episodes must be at least 1");
        }
        Ok(())
    }
}

/// Which head an episode imprints into.
#[derive(Debug, Clone, Copy)]
pub enum EpisodeHead<'a> {
    /// A fresh head holding only the sampled classes. Quantile imprinting
    /// takes its reference profile from `reference`.
    Scratch { reference: Option<&'a ClassifierHead> },
    /// The sampled classes are appended to this head.
    Extend(&'a ClassifierHead),
}

/// Sampled composition and score of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Pool class indices in draw order.
    pub classes: Vec<u32>,
    /// Pool row indices, one list per sampled class.
    pub support: Vec<Vec<usize>>,
    pub queries: Vec<Vec<usize>>,
    pub correct: u64,
    pub total: u64,
}

impl EpisodeRecord {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub spec: EpisodeSpec,
    pub mean_accuracy: f64,
    /// Sample standard deviation over episodes divided by sqrt(E); `None`
    /// for a single episode.
    pub standard_error: Option<f64>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Draws the classes, support rows, and query rows of episode `index`.
///
/// Classes come from a partial Fisher-Yates shuffle of the sorted class
/// indices; each class's rows from a shuffle of its sorted row indices,
/// the first `shots` being support and the next `queries_per_class` queries.
pub fn sample_episode(
    pool: &EmbeddingSet,
    spec: &EpisodeSpec,
    index: usize,
) -> (Vec<u32>, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut rng = Xoshiro256StarStar::derive(spec.seed, index as u64);
    let all: Vec<u32> = (0..pool.num_classes() as u32).collect();
    let classes = rng.sample_without_replacement(&all, spec.ways);
    let mut support = Vec::with_capacity(spec.ways);
    let mut queries = Vec::with_capacity(spec.ways);
    for &c in &classes {
        let rows = pool.indices_of(c);
        let mut drawn = rng.sample_without_replacement(&rows, spec.shots + spec.queries_per_class);
        queries.push(drawn.split_off(spec.shots));
        support.push(drawn);
    }
    (classes, support, queries)
}

fn check_pool(pool: &EmbeddingSet, spec: &EpisodeSpec) -> Result<()> {
    spec.validate()?;
    if pool.num_classes() < spec.ways {
        return Err(Error::InsufficientClasses {
            available: pool.num_classes(),
            needed: spec.ways,
        });
    }
    let needed = spec.shots + spec.queries_per_class;
    let mut counts = vec![0usize; pool.num_classes()];
    for &l in pool.labels() {
        counts[l as usize] += 1;
    }
    if let Some((c, &available)) = counts.iter().enumerate().find(|(_, &n)| n < needed) {
        return Err(Error::InsufficientSamples {
            class: pool.class_name(c as u32).to_string(),
            available,
            needed,
        });
    }
    Ok(())
}

/// Runs `spec.episodes` independent episodes and summarizes their accuracy.
///
/// Every pool class must hold at least `shots + queries_per_class` rows.
/// Results depend only on the pool, the head, and the spec.
pub fn run_episodes(pool: &EmbeddingSet, setup: EpisodeHead<'_>, spec: &EpisodeSpec) -> Result<EpisodeSummary> {
    check_pool(pool, spec)?;
    let (imprinter, base) = match setup {
        EpisodeHead::Scratch { reference } => {
            let imprinter = match spec.method {
                ImprintMethod::Done => {
                    Imprinter::Done(build_reference_profile(reference.ok_or(Error::MissingReference)?)?)
                }
                ImprintMethod::Qi => Imprinter::Qi,
            };
            (imprinter, None)
        }
        EpisodeHead::Extend(head) => {
            let (imprinter, prepared) = Imprinter::prepare(spec.method, head)?;
            (imprinter, Some(prepared))
        }
    };
    if let Some(b) = &base {
        if b.dim() != pool.dim() {
            return Err(Error::DimensionMismatch {
                expected: b.dim(),
                got: pool.dim(),
            });
        }
    }
    if let Imprinter::Done(p) = &imprinter {
        if p.dim() != pool.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                got: pool.dim(),
            });
        }
    }

    let episodes = (0..spec.episodes)
        .into_par_iter()
        .map(|e| run_one(pool, &imprinter, base.as_ref(), spec, e))
        .collect::<Result<Vec<_>>>()?;

    let accs: Vec<f64> = episodes.iter().map(EpisodeRecord::accuracy).collect();
    let e = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / e;
    let standard_error = (accs.len() > 1).then(|| {
        let ss: f64 = accs.iter().map(|a| (a - mean).powi(2)).sum();
        (ss / (e - 1.0)).sqrt() / e.sqrt()
    });
    Ok(EpisodeSummary {
        spec: *spec,
        mean_accuracy: mean,
        standard_error,
        episodes,
    })
}

fn run_one(
    pool: &EmbeddingSet,
    imprinter: &Imprinter,
    base: Option<&ClassifierHead>,
    spec: &EpisodeSpec,
    index: usize,
) -> Result<EpisodeRecord> {
    let (classes, support, queries) = sample_episode(pool, spec, index);
    let shots_of = |k: usize| -> Vec<&[f64]> { support[k].iter().map(|&i| pool.row(i)).collect() };

    let (head, offset) = match base {
        Some(b) => {
            let mut head = b.clone();
            for (k, &c) in classes.iter().enumerate() {
                head = imprinter.add(&head, &shots_of(k), pool.class_name(c))?;
            }
            (head, b.num_classes())
        }
        None => {
            let mut weights = Vec::with_capacity(spec.ways * pool.dim());
            let mut bias = Vec::with_capacity(spec.ways);
            for k in 0..classes.len() {
                let (row, b) = imprinter.imprinted_row(&shots_of(k))?;
                weights.extend(row);
                bias.push(b);
            }
            let names = classes.iter().map(|&c| pool.class_name(c).to_string()).collect();
            let flags = match imprinter {
                Imprinter::Done(_) => HeadFlags::ORIGINAL,
                Imprinter::Qi => HeadFlags::COSINE,
            };
            (ClassifierHead::new(pool.dim(), weights, bias, names, flags)?, 0)
        }
    };

    let mut correct = 0;
    let mut total = 0;
    for (k, rows) in queries.iter().enumerate() {
        for &i in rows {
            if head.classify(pool.row(i))? == offset + k {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(EpisodeRecord {
        index,
        classes,
        support,
        queries,
        correct,
        total,
    })
}

/// One row of the accuracy-versus-shots table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotsRow {
    pub shots: usize,
    pub mean_accuracy: f64,
    pub standard_error: Option<f64>,
}

/// Runs the episode benchmark once per shot count, all with the template's seed.
pub fn accuracy_vs_shots(
    pool: &EmbeddingSet,
    setup: EpisodeHead<'_>,
    template: &EpisodeSpec,
    shot_list: &[usize],
) -> Result<Vec<ShotsRow>> {
    shot_list
        .iter()
        .map(|&shots| {
            let spec = EpisodeSpec { shots, ..*template };
            let s = run_episodes(pool, setup, &spec)?;
            Ok(ShotsRow {
                shots,
                mean_accuracy: s.mean_accuracy,
                standard_error: s.standard_error,
            })
        })
        .collect()
}
