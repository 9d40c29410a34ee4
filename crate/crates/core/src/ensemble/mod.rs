//! N/A ensemble diagnosis: a patient is positive when at least `a` of the
//! `n` per-view predictions are positive.

mod scorer;

pub use scorer::{threshold_scorer, ScorerConfig, ScoreDetail};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionMatrix, MetricReport};

/// Default per-view decision cutoff on `prob_abnormal`.
pub const DEFAULT_CUTOFF: f64 = 0.5;

/// One per-view classifier output; a row of the prediction interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub patient_id: String,
    pub view_angle_deg: f64,
    pub prob_abnormal: f64,
    pub label: u8,
    pub cutoff: f64,
}

impl ViewPrediction {
    /// Labels `prob` against `cutoff`.
    pub fn new(patient_id: impl Into<String>, view_angle_deg: f64, prob_abnormal: f64, cutoff: f64) -> Result<Self> {
        let p = Self {
            patient_id: patient_id.into(),
            view_angle_deg,
            prob_abnormal,
            label: u8::from(prob_abnormal >= cutoff),
            cutoff,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Predictions(format!("patient {} view {}: {why}", self.patient_id, self.view_angle_deg)));
        if self.patient_id.is_empty() {
            return bad("empty patient id".into());
        }
        if !self.view_angle_deg.is_finite() {
            return bad("non-finite view angle".into());
        }
        if !(0.0..=1.0).contains(&self.prob_abnormal) {
            return bad(format!("prob_abnormal {} outside [0, 1]", self.prob_abnormal));
        }
        if !self.cutoff.is_finite() {
            return bad("non-finite cutoff".into());
        }
        if self.label > 1 {
            return bad(format!("label {} is not 0 or 1", self.label));
        }
        if self.label != u8::from(self.prob_abnormal >= self.cutoff) {
            return bad(format!(
                "label {} disagrees with prob {} and cutoff {}",
                self.label, self.prob_abnormal, self.cutoff
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RuleFields")]
pub struct EnsembleRule {
    n: usize,
    a: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFields {
    n: usize,
    a: usize,
}

impl TryFrom<RuleFields> for EnsembleRule {
    type Error = Error;

    fn try_from(f: RuleFields) -> Result<Self> {
        Self::new(f.n, f.a)
    }
}

impl EnsembleRule {
    pub fn new(n: usize, a: usize) -> Result<Self> {
        if n == 0 || a == 0 || a > n {
            return Err(Error::InvalidParameter(format!("N/A rule needs 1 <= A <= N, got {n}/{a}")));
        }
        Ok(Self { n, a })
    }

    /// Majority voting expressed as an N/A rule.
    pub fn majority(n: usize) -> Result<Self> {
        Self::new(n, n / 2 + 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> usize {
        self.a
    }
}

impl std::fmt::Display for EnsembleRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.n, self.a)
    }
}

/// Per-view votes for one patient, ordered by view angle.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteVector {
    pub patient_id: String,
    pub angles: Vec<f64>,
    pub votes: Vec<bool>,
}

impl VoteVector {
    pub fn new(patient_id: impl Into<String>, votes: Vec<bool>) -> Self {
        let angles = (0..votes.len()).map(|i| i as f64).collect();
        Self {
            patient_id: patient_id.into(),
            angles,
            votes,
        }
    }

    /// Number of positive votes.
    pub fn k(&self) -> usize {
        self.votes.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Keeps only the requested angles, in the requested order.
    pub fn select(&self, angles: &[f64]) -> Result<Self> {
        let votes = angles
            .iter()
            .map(|a| {
                self.angles
                    .iter()
                    .position(|x| x == a)
                    .map(|i| self.votes[i])
                    .ok_or_else(|| Error::Predictions(format!("patient {} has no view at {a} deg", self.patient_id)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            patient_id: self.patient_id.clone(),
            angles: angles.to_vec(),
            votes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Negative,
    Positive,
}

impl Decision {
    pub fn is_positive(self) -> bool {
        self == Decision::Positive
    }
}

impl From<bool> for Decision {
    fn from(b: bool) -> Self {
        if b {
            Decision::Positive
        } else {
            Decision::Negative
        }
    }
}

/// Positive iff K >= A.
pub fn decide(v: &VoteVector, r: &EnsembleRule) -> Result<Decision> {
    if v.len() != r.n {
        return Err(Error::DimensionMismatch(format!(
            "patient {} has {} votes but the rule expects N = {}",
            v.patient_id,
            v.len(),
            r.n
        )));
    }
    Ok((v.k() >= r.a).into())
}

/// Positive iff K > n/2; an even split is negative.
pub fn majority_vote(v: &VoteVector) -> Decision {
    (2 * v.k() > v.len()).into()
}

/// Picks `n` of the available angles (sorted ascending), evenly spread:
/// index `round(i * (m - 1) / (n - 1))`, or the middle angle when `n = 1`.
/// Five views reduce to `[-60, 0, 60]` for n = 3 and `[0]` for n = 1.
pub fn spread_views(available: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = available.len();
    if n == 0 || n > m {
        return Err(Error::InvalidParameter(format!("cannot pick {n} of {m} views")));
    }
    let mut sorted = available.to_vec();
    sorted.sort_by(f64::total_cmp);
    if n == 1 {
        return Ok(vec![sorted[(m - 1) / 2]]);
    }
    Ok((0..n)
        .map(|i| sorted[((i * (m - 1)) as f64 / (n - 1) as f64).round() as usize])
        .collect())
}

/// Per-patient votes with the shared angle set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub angles: Vec<f64>,
    pub vectors: Vec<VoteVector>,
}

impl PredictionTable {
    /// Groups predictions by patient; every patient must have exactly one
    /// prediction per angle present anywhere in the table.
    pub fn from_predictions(preds: &[ViewPrediction]) -> Result<Self> {
        let mut angles: Vec<f64> = Vec::new();
        let mut by_patient: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
        for p in preds {
            p.validate()?;
            if !angles.contains(&p.view_angle_deg) {
                angles.push(p.view_angle_deg);
            }
            let entry = by_patient.entry(&p.patient_id).or_default();
            if entry.iter().any(|(a, _)| *a == p.view_angle_deg) {
                return Err(Error::Predictions(format!(
                    "duplicate prediction for patient {} at {} deg",
                    p.patient_id, p.view_angle_deg
                )));
            }
            entry.push((p.view_angle_deg, p.label == 1));
        }
        angles.sort_by(f64::total_cmp);
        let mut vectors = Vec::with_capacity(by_patient.len());
        for (id, mut views) in by_patient {
            if let Some(missing) = angles.iter().find(|a| !views.iter().any(|(x, _)| x == *a)) {
                return Err(Error::Predictions(format!("patient {id} is missing the view at {missing} deg")));
            }
            views.sort_by(|a, b| a.0.total_cmp(&b.0));
            vectors.push(VoteVector {
                patient_id: id.to_string(),
                angles: views.iter().map(|v| v.0).collect(),
                votes: views.iter().map(|v| v.1).collect(),
            });
        }
        Ok(Self { angles, vectors })
    }

    /// Restricts every patient to the given angles.
    pub fn select(&self, angles: &[f64]) -> Result<Self> {
        Ok(Self {
            angles: angles.to_vec(),
            vectors: self.vectors.iter().map(|v| v.select(angles)).collect::<Result<_>>()?,
        })
    }

    /// Restricts to `n` evenly spread views (all of them when `n` matches).
    pub fn for_n(&self, n: usize) -> Result<Self> {
        if n == self.angles.len() {
            return Ok(self.clone());
        }
        self.select(&spread_views(&self.angles, n)?)
    }
}

pub fn ingest_predictions(path: impl AsRef<Path>) -> Result<PredictionTable> {
    PredictionTable::from_predictions(&crate::tables::read_predictions(path)?)
}

/// Applies `rule` to every patient.
pub fn decide_all(vectors: &[VoteVector], rule: &EnsembleRule) -> Result<BTreeMap<String, bool>> {
    vectors
        .iter()
        .map(|v| Ok((v.patient_id.clone(), decide(v, rule)?.is_positive())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rule: EnsembleRule,
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
}

impl SweepRow {
    pub fn balanced(&self) -> Option<f64> {
        self.report.balanced()
    }
}

/// Metrics for every A in 1..=n on a fixed set of votes.
pub fn sweep_a(vectors: &[VoteVector], truth: &BTreeMap<String, bool>, n: usize) -> Result<Vec<SweepRow>> {
    (1..=n)
        .map(|a| {
            let rule = EnsembleRule::new(n, a)?;
            let decided = decide_all(vectors, &rule)?;
            if decided.len() != vectors.len() {
                return Err(Error::Predictions("duplicate patient in vote vectors".into()));
            }
            let confusion = metrics::confusion(&decided, truth)?;
            Ok(SweepRow {
                rule,
                confusion,
                report: metrics::metrics(&confusion)?,
            })
        })
        .collect()
}
