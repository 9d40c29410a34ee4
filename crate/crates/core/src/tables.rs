//! CSV interchange tables: per-view predictions, truth labels, patient
//! lists, fold assignments and per-patient decisions. All have a header row.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::ViewPrediction;
use crate::error::{Error, Result};
use crate::metrics::FoldAssignment;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[ViewPrediction]) -> Result<()> {
    write_rows(path.as_ref(), preds)
}

/// Reads and validates a prediction file.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ViewPrediction>> {
    let path = path.as_ref();
    let rows: Vec<ViewPrediction> =
        read_rows(path).map_err(|e| Error::Predictions(format!("{}: {e}", path.display())))?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    patient_id: String,
    label: u8,
}

fn to_bool(id: &str, v: u8, what: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::InvalidParameter(format!("patient {id}: {what} {other} is not 0 or 1"))),
    }
}

fn labels_to_map(rows: Vec<LabelRow>, what: &str) -> Result<BTreeMap<String, bool>> {
    let mut out = BTreeMap::new();
    for r in rows {
        let v = to_bool(&r.patient_id, r.label, what)?;
        if out.insert(r.patient_id.clone(), v).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate patient {} in {what} file", r.patient_id)));
        }
    }
    Ok(out)
}

/// `patient_id,label` with label 1 = abnormal. Also used for patient lists.
pub fn read_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, bool>> {
    labels_to_map(read_rows(path.as_ref())?, "label")
}

pub fn write_truth(path: impl AsRef<Path>, truth: &BTreeMap<String, bool>) -> Result<()> {
    write_rows(
        path.as_ref(),
        truth.iter().map(|(id, &l)| LabelRow {
            patient_id: id.clone(),
            label: u8::from(l),
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DecisionRow {
    patient_id: String,
    decision: u8,
}

/// `patient_id,decision` with decision 1 = positive.
pub fn write_decisions(path: impl AsRef<Path>, decisions: &BTreeMap<String, bool>) -> Result<()> {
    write_rows(
        path.as_ref(),
        decisions.iter().map(|(id, &d)| DecisionRow {
            patient_id: id.clone(),
            decision: u8::from(d),
        }),
    )
}

pub fn read_decisions(path: impl AsRef<Path>) -> Result<BTreeMap<String, bool>> {
    let rows: Vec<DecisionRow> = read_rows(path.as_ref())?;
    labels_to_map(
        rows.into_iter()
            .map(|r| LabelRow {
                patient_id: r.patient_id,
                label: r.decision,
            })
            .collect(),
        "decision",
    )
}

#[derive(Debug, Serialize)]
struct FoldRow<'a> {
    patient_id: &'a str,
    label: u8,
    fold: usize,
}

pub fn write_folds(path: impl AsRef<Path>, folds: &FoldAssignment) -> Result<()> {
    write_rows(
        path.as_ref(),
        folds.iter().map(|(id, fold)| FoldRow {
            patient_id: id,
            label: u8::from(folds.label_of(id).unwrap_or(false)),
            fold,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.csv");
        let rows = vec![
            ViewPrediction::new("p1", -60.0, 0.25, 0.5).unwrap(),
            ViewPrediction::new("p1", 0.0, 0.75, 0.5).unwrap(),
        ];
        write_predictions(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("patient_id,view_angle_deg,prob_abnormal,label,cutoff\n"));
        assert_eq!(read_predictions(&p).unwrap(), rows);
    }

    #[test]
    fn bad_prediction_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.csv");
        fs::write(&p, "patient_id,view_angle_deg,prob_abnormal,label,cutoff\np1,0,0.9,0,0.5\n").unwrap();
        assert!(read_predictions(&p).is_err());
        fs::write(&p, "patient_id,view_angle_deg,prob_abnormal\np1,0,0.9\n").unwrap();
        assert!(read_predictions(&p).is_err());
    }

    #[test]
    fn truth_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        let t: BTreeMap<String, bool> = [("a".into(), true), ("b".into(), false)].into();
        write_truth(&p, &t).unwrap();
        assert_eq!(read_truth(&p).unwrap(), t);
        fs::write(&p, "patient_id,label\na,2\n").unwrap();
        assert!(read_truth(&p).is_err());
        fs::write(&p, "patient_id,label\na,1\na,0\n").unwrap();
        assert!(read_truth(&p).is_err());
    }
}
