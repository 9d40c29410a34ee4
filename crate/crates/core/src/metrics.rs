//! Classification and segmentation metrics, stratified folds and
//! mean ± std aggregation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Tallies predictions against truth. Both maps must cover the same patients.
pub fn confusion(preds: &BTreeMap<String, bool>, truth: &BTreeMap<String, bool>) -> Result<ConfusionMatrix> {
    check_same_patients(preds.keys(), truth.keys())?;
    let mut c = ConfusionMatrix::default();
    for (id, &p) in preds {
        c.record(p, truth[id]);
    }
    Ok(c)
}

pub(crate) fn check_same_patients<'a>(
    a: impl Iterator<Item = &'a String>,
    b: impl Iterator<Item = &'a String>,
) -> Result<()> {
    let a: Vec<_> = a.collect();
    let b: Vec<_> = b.collect();
    if let Some(id) = a.iter().find(|id| !b.contains(id)) {
        return Err(Error::PatientMismatch(format!("patient {id} has a prediction but no truth label")));
    }
    if let Some(id) = b.iter().find(|id| !a.contains(id)) {
        return Err(Error::PatientMismatch(format!("patient {id} has a truth label but no prediction")));
    }
    Ok(())
}

/// Classification metrics; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "sensitivity", "specificity", "precision", "f1"];

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.sensitivity, self.specificity, self.precision, self.f1]
    }

    /// Mean of sensitivity and specificity, when both are defined.
    pub fn balanced(&self) -> Option<f64> {
        Some((self.sensitivity? + self.specificity?) / 2.0)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and sensitivity.
pub fn f1_score(precision: f64, sensitivity: f64) -> Option<f64> {
    let den = precision + sensitivity;
    (den > 0.0).then(|| 2.0 * precision * sensitivity / den)
}

pub fn metrics(c: &ConfusionMatrix) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(Error::InvalidParameter("confusion matrix is empty".into()));
    }
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) => f1_score(p, s),
        _ => None,
    };
    Ok(MetricReport {
        accuracy: ratio(c.tn + c.tp, c.total()),
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        precision,
        f1,
    })
}

/// Formats a metric, rendering undefined values as `n/a`.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and population standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Per-metric mean ± std across folds; `None` where the metric is undefined
/// in every fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub f1: Option<MeanStd>,
}

impl MetricSummary {
    pub fn values(&self) -> [Option<MeanStd>; 5] {
        [self.accuracy, self.sensitivity, self.specificity, self.precision, self.f1]
    }
}

pub fn aggregate(reports: &[MetricReport]) -> Result<MetricSummary> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter("cannot aggregate an empty report list".into()));
    }
    let column = |idx: usize| -> Result<Option<MeanStd>> {
        let vals: Vec<Option<f64>> = reports.iter().map(|r| r.values()[idx]).collect();
        let defined: Vec<f64> = vals.iter().flatten().copied().collect();
        if defined.is_empty() {
            Ok(None)
        } else if defined.len() == vals.len() {
            Ok(MeanStd::of(&defined))
        } else {
            Err(Error::InvalidParameter(format!(
                "{} is undefined in {} of {} reports",
                METRIC_NAMES[idx],
                vals.len() - defined.len(),
                vals.len()
            )))
        }
    };
    Ok(MetricSummary {
        accuracy: column(0)?,
        sensitivity: column(1)?,
        specificity: column(2)?,
        precision: column(3)?,
        f1: column(4)?,
    })
}

/// Like [`aggregate`], but each metric is averaged over the reports where
/// it is defined; the second value counts those reports per metric.
pub fn aggregate_defined(reports: &[MetricReport]) -> Result<(MetricSummary, [usize; 5])> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter("cannot aggregate an empty report list".into()));
    }
    let mut counts = [0usize; 5];
    let mut cols: [Option<MeanStd>; 5] = [None; 5];
    for (idx, col) in cols.iter_mut().enumerate() {
        let defined: Vec<f64> = reports.iter().filter_map(|r| r.values()[idx]).collect();
        counts[idx] = defined.len();
        *col = MeanStd::of(&defined);
    }
    let [accuracy, sensitivity, specificity, precision, f1] = cols;
    Ok((
        MetricSummary {
            accuracy,
            sensitivity,
            specificity,
            precision,
            f1,
        },
        counts,
    ))
}

/// Stratified k-fold partition of a cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    folds: BTreeMap<String, usize>,
    labels: BTreeMap<String, bool>,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.folds.get(patient).copied()
    }

    pub fn label_of(&self, patient: &str) -> Option<bool> {
        self.labels.get(patient).copied()
    }

    /// Patient → fold, in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.folds.iter().map(|(id, &f)| (id.as_str(), f))
    }

    /// Patients in one fold, in id order.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.iter().filter(|&(_, f)| f == fold).map(|(id, _)| id).collect()
    }

    /// `counts[fold][label as usize]`.
    pub fn class_counts(&self) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.k];
        for (id, &f) in &self.folds {
            counts[f][usize::from(self.labels[id])] += 1;
        }
        counts
    }
}

/// Shuffles each class with a seeded generator and deals it round-robin,
/// continuing the rotation across classes so fold sizes stay level too.
pub fn stratified_folds(patients: &[(String, bool)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let mut labels = BTreeMap::new();
    for (id, label) in patients {
        if labels.insert(id.clone(), *label).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate patient id {id}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for class in [false, true] {
        let mut ids: Vec<&String> = labels.iter().filter(|(_, &l)| l == class).map(|(id, _)| id).collect();
        if ids.len() < k {
            return Err(Error::InvalidParameter(format!(
                "k = {k} exceeds the {} patients labelled {}",
                ids.len(),
                u8::from(class)
            )));
        }
        ids.shuffle(&mut rng);
        for id in ids {
            folds.insert(id.clone(), next % k);
            next += 1;
        }
    }
    Ok(FoldAssignment { k, seed, folds, labels })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub jaccard: f64,
    pub dice: f64,
}

/// Jaccard and Dice of two equally sized binary masks; two empty masks
/// overlap perfectly.
pub fn seg_overlap(pred: &Mask2, reference: &Mask2) -> Result<Overlap> {
    if (pred.width(), pred.height()) != (reference.width(), reference.height()) {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}x{} and {}x{}",
            pred.width(),
            pred.height(),
            reference.width(),
            reference.height()
        )));
    }
    let (mut inter, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&p, &r) in pred.pixels().iter().zip(reference.pixels()) {
        inter += u64::from(p & r);
        a += u64::from(p);
        b += u64::from(r);
    }
    let union = a + b - inter;
    if union == 0 {
        return Ok(Overlap { jaccard: 1.0, dice: 1.0 });
    }
    Ok(Overlap {
        jaccard: inter as f64 / union as f64,
        dice: 2.0 * inter as f64 / (a + b) as f64,
    })
}
