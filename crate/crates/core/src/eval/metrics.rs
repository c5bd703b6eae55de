use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true categories, columns predicted ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(categories: usize) -> Self {
        Self { counts: vec![vec![0; categories]; categories] }
    }

    pub fn from_pairs(categories: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(categories);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.size();
        for i in [truth, predicted] {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub name: String,
    /// Number of clips whose true category this is.
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// All scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub total: u64,
    pub accuracy: f64,
    pub per_category: Vec<CategoryScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Always "macro": unweighted mean over categories with support.
    pub averaging: String,
    /// Protocol description (split, lengths, mapping, aggregation, ...).
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy and per-category / macro precision, recall and F1.
///
/// A category never predicted has precision 0. A category with no true
/// clips is left out of the macro means.
pub fn compute_metrics(confusion: &ConfusionMatrix, names: &[String]) -> Result<EvalReport> {
    let n = confusion.size();
    if names.len() != n {
        return Err(Error::Shape(format!("{} names for a {n}x{n} confusion matrix", names.len())));
    }
    let total = confusion.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation("confusion matrix is all zero".into()));
    }
    let mut per_category = Vec::with_capacity(n);
    for (i, name) in names.iter().enumerate() {
        let diag = confusion.counts[i][i] as f64;
        let row = confusion.row_sum(i);
        let col = confusion.column_sum(i);
        let precision = if col == 0 { 0.0 } else { diag / col as f64 };
        let recall = if row == 0 { 0.0 } else { diag / row as f64 };
        per_category.push(CategoryScore {
            name: name.clone(),
            support: row,
            precision: 100.0 * precision,
            recall: 100.0 * recall,
            f1: 100.0 * f1(precision, recall),
        });
    }
    let counted: Vec<&CategoryScore> = per_category.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&CategoryScore) -> f64| counted.iter().map(|c| f(c)).sum::<f64>() / counted.len() as f64;
    Ok(EvalReport {
        accuracy: 100.0 * confusion.trace() as f64 / total as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        confusion: confusion.clone(),
        total,
        per_category,
        averaging: "macro".into(),
        metadata: BTreeMap::new(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable summary.
    pub fn to_table(&self) -> String {
        let width = self.per_category.iter().map(|c| c.name.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        let _ = writeln!(s, "clips: {}  accuracy: {:.2}%", self.total, self.accuracy);
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>9}  {:>7}  {:>7}",
            "category", "support", "precision", "recall", "f1"
        );
        for c in &self.per_category {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8}  {:>9.2}  {:>7.2}  {:>7.2}",
                c.name, c.support, c.precision, c.recall, c.f1
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>9.2}  {:>7.2}  {:>7.2}",
            "macro", self.total, self.macro_precision, self.macro_recall, self.macro_f1
        );
        s
    }
}
