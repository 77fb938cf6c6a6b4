use std::collections::HashSet;

use crate::error::FormatError;

/// Labeled final-dense-layer inputs: `len()` rows of `dim()` features each.
///
/// Values are held as `f64` but are always representable as finite `f32`,
/// so writing to EMB1 and reading back is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    rows: Vec<f64>,
    labels: Vec<u32>,
    class_names: Vec<String>,
}

impl EmbeddingSet {
    /// `rows` is row-major, `labels.len()` rows by `dim` columns.
    pub fn new(dim: usize, rows: Vec<f64>, labels: Vec<u32>, class_names: Vec<String>) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::InvariantViolation("dimension must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(FormatError::InvariantViolation("set must hold at least one row".into()));
        }
        if rows.len() != labels.len() * dim {
            return Err(FormatError::InvariantViolation(format!(
                "{} values do not form {} rows of width {dim}",
                rows.len(),
                labels.len()
            )));
        }
        check_f32_finite(&rows)?;
        check_class_names(&class_names)?;
        for (row, &label) in labels.iter().enumerate() {
            if label as usize >= class_names.len() {
                return Err(FormatError::LabelOutOfRange {
                    row,
                    label,
                    classes: class_names.len(),
                });
            }
        }
        Ok(Self {
            dim,
            rows,
            labels,
            class_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.rows
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, class: u32) -> &str {
        &self.class_names[class as usize]
    }

    pub fn class_index(&self, name: &str) -> Option<u32> {
        self.class_names.iter().position(|n| n == name).map(|i| i as u32)
    }

    /// Row indices carrying `class`, in file order.
    pub fn indices_of(&self, class: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// New set with the given rows, keeping every class name.
    pub fn select(&self, indices: &[usize]) -> Result<Self, FormatError> {
        let mut rows = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            rows.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.dim, rows, labels, self.class_names.clone())
    }

    /// Concatenates two sets, merging class names by string.
    pub fn concat(&self, other: &Self) -> Result<Self, FormatError> {
        if other.dim != self.dim {
            return Err(FormatError::InvariantViolation(format!(
                "cannot concatenate sets of width {} and {}",
                self.dim, other.dim
            )));
        }
        let mut names = self.class_names.clone();
        let remap: Vec<u32> = other
            .class_names
            .iter()
            .map(|n| match names.iter().position(|m| m == n) {
                Some(i) => i as u32,
                None => {
                    names.push(n.clone());
                    (names.len() - 1) as u32
                }
            })
            .collect();
        let mut rows = self.rows.clone();
        rows.extend_from_slice(&other.rows);
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().map(|&l| remap[l as usize]));
        Self::new(self.dim, rows, labels, names)
    }
}

pub(crate) fn check_f32_finite(values: &[f64]) -> Result<(), FormatError> {
    match values.iter().position(|v| !(*v as f32).is_finite()) {
        Some(i) => Err(FormatError::NonFiniteValue(i)),
        None => Ok(()),
    }
}

pub(crate) fn check_class_names(names: &[String]) -> Result<(), FormatError> {
    let mut seen = HashSet::with_capacity(names.len());
    for name in names {
        if name.is_empty() {
            return Err(FormatError::InvariantViolation("empty class name".into()));
        }
        if name.len() > usize::from(u16::MAX) {
            return Err(FormatError::InvariantViolation(format!(
                "class name of {} bytes exceeds the 65535-byte limit",
                name.len()
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(FormatError::DuplicateClassName(name.clone()));
        }
    }
    Ok(())
}
