//! Synthetic heads and embeddings that reproduce the activation/weight
//! distribution mismatch at desk scale.
//!
//! Each class has a prototype drawn from a standard normal, and the head row
//! of a class is its prototype (bell-shaped weights). A sample is the
//! prototype plus Gaussian noise of standard deviation `cluster_spread`;
//! `CnnLike` rectifies it (right-tailed activations with many exact zeros),
//! `VitLike` leaves it as is (activations shaped like the weights). Biases
//! are drawn from N(0, 0.01^2). All values are rounded to `f32`, so files
//! written from generated data reload identically.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::head::{ClassifierHead, HeadFlags};
use crate::imprint::{ImprintMethod, Imprinter};
use crate::rng::{SplitMix64, Xoshiro256StarStar};

/// Minimum top-1 accuracy a generated head must reach on its own training set.
pub const MIN_TRAIN_ACCURACY: f64 = 0.9;
const MAX_ATTEMPTS: u64 = 8;
const BIAS_SD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    CnnLike,
    VitLike,
}

impl SynthKind {
    /// Default noise level for the kind.
    pub fn default_spread(self) -> f64 {
        match self {
            SynthKind::CnnLike => 2.5,
            SynthKind::VitLike => 3.5,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::CnnLike => "cnn-like",
            SynthKind::VitLike => "vit-like",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn-like" | "cnn" => Ok(SynthKind::CnnLike),
            "vit-like" | "vit" => Ok(SynthKind::VitLike),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthPreset {
    pub kind: SynthKind,
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SynthPreset {
    pub fn new(kind: SynthKind, num_classes: usize, dim: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            kind,
            num_classes,
            dim,
            samples_per_class,
            cluster_spread: kind.default_spread(),
            seed,
        }
    }

    pub fn with_spread(self, cluster_spread: f64) -> Self {
        Self { cluster_spread, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "classes, dim and samples per class must be positive".into(),
            ));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::InvalidArgument("cluster spread must be positive".into()));
        }
        Ok(())
    }
}

/// A generated head with its training and test embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub head: ClassifierHead,
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    /// Held-out classes the head does not know, for imprinting.
    pub novel_train: Option<EmbeddingSet>,
    pub novel_test: Option<EmbeddingSet>,
}

fn q32(v: f64) -> f64 {
    f64::from(v as f32)
}

pub fn class_name(i: usize) -> String {
    format!("class_{i:03}")
}

pub fn novel_name(i: usize) -> String {
    format!("novel_{i:03}")
}

struct World {
    preset: SynthPreset,
    prototypes: Vec<Vec<f64>>,
}

impl World {
    fn new(preset: SynthPreset, total_classes: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256StarStar::derive(seed, 1);
        let prototypes = (0..total_classes)
            .map(|_| (0..preset.dim).map(|_| q32(rng.next_normal())).collect())
            .collect();
        Self { preset, prototypes }
    }

    fn sample(&self, class: usize, rng: &mut Xoshiro256StarStar) -> Vec<f64> {
        self.prototypes[class]
            .iter()
            .map(|&p| {
                let v = p + self.preset.cluster_spread * rng.next_normal();
                q32(match self.preset.kind {
                    SynthKind::CnnLike => v.max(0.0),
                    SynthKind::VitLike => v,
                })
            })
            .collect()
    }

    /// `per_class` samples for each class in `classes`, grouped by class.
    fn samples(&self, classes: std::ops::Range<usize>, names: Vec<String>, seed: u64, stream: u64) -> EmbeddingSet {
        let mut rng = Xoshiro256StarStar::derive(seed, stream);
        let per = self.preset.samples_per_class;
        let start = classes.start;
        let mut rows = Vec::with_capacity(classes.len() * per * self.preset.dim);
        let mut labels = Vec::with_capacity(classes.len() * per);
        for c in classes {
            for _ in 0..per {
                rows.extend(self.sample(c, &mut rng));
                labels.push((c - start) as u32);
            }
        }
        EmbeddingSet::new(self.preset.dim, rows, labels, names).expect("generated set is valid")
    }

    fn head(&self, seed: u64) -> ClassifierHead {
        let n = self.preset.num_classes;
        let mut rng = Xoshiro256StarStar::derive(seed, 2);
        let weights = self.prototypes[..n].iter().flatten().copied().collect();
        let bias = (0..n).map(|_| q32(rng.normal(0.0, BIAS_SD))).collect();
        let names = (0..n).map(class_name).collect();
        ClassifierHead::new(self.preset.dim, weights, bias, names, HeadFlags::ORIGINAL)
            .expect("generated head is valid")
    }
}

/// Generates a head and its train/test sets, plus `novel_classes` held-out
/// classes when nonzero.
///
/// The world is redrawn (up to 8 times) until the head reaches
/// [`MIN_TRAIN_ACCURACY`] on its training set.
pub fn generate_with_novel(preset: &SynthPreset, novel_classes: usize) -> Result<SynthData> {
    preset.validate()?;
    let n = preset.num_classes;
    let mut best = 0.0;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = SplitMix64::new(preset.seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64();
        let world = World::new(*preset, n + novel_classes, seed);
        let head = world.head(seed);
        let names: Vec<String> = (0..n).map(class_name).collect();
        let train = world.samples(0..n, names.clone(), seed, 3);
        let acc = evaluate(&head, &train, &[])?.top1_accuracy.unwrap_or(0.0);
        if acc < MIN_TRAIN_ACCURACY {
            best = f64::max(best, acc);
            continue;
        }
        let test = world.samples(0..n, names, seed, 4);
        let (novel_train, novel_test) = if novel_classes > 0 {
            let names: Vec<String> = (0..novel_classes).map(novel_name).collect();
            (
                Some(world.samples(n..n + novel_classes, names.clone(), seed, 5)),
                Some(world.samples(n..n + novel_classes, names, seed, 6)),
            )
        } else {
            (None, None)
        };
        return Ok(SynthData {
            head,
            train,
            test,
            novel_train,
            novel_test,
        });
    }
    Err(Error::UnsatisfiableSpec(format!(
        "best training accuracy {best:.3} after {MAX_ATTEMPTS} attempts, {MIN_TRAIN_ACCURACY} required"
    )))
}

pub fn generate(preset: &SynthPreset) -> Result<SynthData> {
    generate_with_novel(preset, 0)
}

/// Accuracy and interference of one imprinting method in one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub interference_fraction: f64,
    /// Mean top-1 accuracy over the new classes; `None` with no new classes.
    pub new_class_accuracy: Option<f64>,
    pub original_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterferenceRun {
    pub seed: u64,
    pub done: MethodOutcome,
    pub qi: MethodOutcome,
}

/// Imprints `new_classes` held-out classes from `shots` samples each, by both
/// methods, and measures how often original-class test queries land on them.
///
/// Support rows are the first `shots` training samples of each new class.
pub fn interference_experiment(preset: &SynthPreset, new_classes: usize, shots: usize) -> Result<InterferenceRun> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    if shots > preset.samples_per_class {
        return Err(Error::InvalidArgument(format!(
            "{shots} shots exceed {} samples per class",
            preset.samples_per_class
        )));
    }
    let data = generate_with_novel(preset, new_classes)?;
    let n = data.head.num_classes();
    let queries = match &data.novel_test {
        Some(novel) => data.test.concat(novel)?,
        None => data.test.clone(),
    };
    let new_indices: Vec<usize> = (n..n + new_classes).collect();

    let outcome = |method: ImprintMethod| -> Result<MethodOutcome> {
        let (imprinter, mut head) = Imprinter::prepare(method, &data.head)?;
        if let Some(novel) = &data.novel_train {
            for c in 0..new_classes as u32 {
                let rows = novel.indices_of(c);
                let support: Vec<&[f64]> = rows[..shots].iter().map(|&i| novel.row(i)).collect();
                head = imprinter.add(&head, &support, novel.class_name(c))?;
            }
        }
        let r = evaluate(&head, &queries, &new_indices)?;
        let accs: Vec<f64> = r.new_class_top1_accuracy.iter().flatten().copied().collect();
        Ok(MethodOutcome {
            interference_fraction: r.interference_fraction.unwrap_or(0.0),
            new_class_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
            original_accuracy: r.original_top1_accuracy.unwrap_or(0.0),
        })
    };
    Ok(InterferenceRun {
        seed: preset.seed,
        done: outcome(ImprintMethod::Done)?,
        qi: outcome(ImprintMethod::Qi)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterferenceSummary {
    pub preset: SynthPreset,
    pub new_classes: usize,
    pub shots: usize,
    pub runs: Vec<InterferenceRun>,
    pub median_done_interference: f64,
    pub median_qi_interference: f64,
    pub median_done_new_class_accuracy: Option<f64>,
    pub median_qi_new_class_accuracy: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    })
}

/// Runs [`interference_experiment`] for `seeds` consecutive seeds starting at
/// `preset.seed` and reports medians.
pub fn interference_sweep(
    preset: &SynthPreset,
    new_classes: usize,
    shots: usize,
    seeds: usize,
) -> Result<InterferenceSummary> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let runs = (0..seeds as u64)
        .into_par_iter()
        .map(|i| interference_experiment(&preset.with_seed(preset.seed.wrapping_add(i)), new_classes, shots))
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: &dyn Fn(&InterferenceRun) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>()).unwrap();
    let pick_acc = |f: &dyn Fn(&InterferenceRun) -> Option<f64>| median(&runs.iter().filter_map(f).collect::<Vec<_>>());
    Ok(InterferenceSummary {
        preset: *preset,
        new_classes,
        shots,
        median_done_interference: pick(&|r| r.done.interference_fraction),
        median_qi_interference: pick(&|r| r.qi.interference_fraction),
        median_done_new_class_accuracy: pick_acc(&|r| r.done.new_class_accuracy),
        median_qi_new_class_accuracy: pick_acc(&|r| r.qi.new_class_accuracy),
        runs,
    })
}
