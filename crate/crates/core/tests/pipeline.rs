use std::fs;
use std::path::Path;

use dtsforge::drr::ProjectionGeometry;
use dtsforge::phantom::CohortOptions;
use dtsforge::pipeline::{run_pipeline, CohortSource, PipelineConfig, ScorerSource};

fn small(out: &Path, cohort: CohortSource) -> PipelineConfig {
    PipelineConfig {
        cohort,
        out_dir: out.to_path_buf(),
        target_mm: 4.0,
        geometry: ProjectionGeometry::default().with_detector_pixels([64, 64]).unwrap(),
        folds: 2,
        seed: 11,
        display_pixels: [64, 64],
        ..Default::default()
    }
}

fn read(dir: &Path, f: &str) -> Vec<u8> {
    fs::read(dir.join(f)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(f).display()))
}

#[test]
fn later_stages_resume_from_files_on_disk() {
    let root = tempfile::tempdir().unwrap();
    let first = root.path().join("first");
    let generated = CohortSource::Generate {
        n_normal: 2,
        n_abnormal: 2,
        options: CohortOptions {
            dims: [90, 75, 40],
            spacing_mm: 4.0,
            ..Default::default()
        },
    };
    let a = run_pipeline(&small(&first, generated)).unwrap();
    assert_eq!(a.predictions.len(), 4 * 5);
    assert_eq!(a.rules.len(), 2);
    for id in ["case_000", "case_003"] {
        for f in ["stripped.json", "subject_mask.json", "resampled.json", "lung.json"] {
            assert!(first.join("volumes").join(id).join(f).is_file(), "{id}/{f}");
        }
        assert!(first.join("overlays").join(id).join("view_+60.ppm").is_file());
    }

    // volumes written by the first run feed a second run unchanged
    let second = root.path().join("second");
    let b = run_pipeline(&small(&second, CohortSource::Directory { path: first.join("cohort") })).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(read(&first, "metrics.csv"), read(&second, "metrics.csv"));

    // scoring can be replaced by the predictions and activations on disk
    let mut cfg = small(&root.path().join("third"), CohortSource::Directory { path: first.join("cohort") });
    cfg.scorer = ScorerSource::External {
        predictions: first.join("predictions.csv"),
        activations: Some(first.join("activations")),
    };
    let c = run_pipeline(&cfg).unwrap();
    assert_eq!(a.rules, c.rules);
    for f in ["metrics.csv", "sweep_a.csv", "decisions/rule_5-2.csv", "overlays/case_001/view_-30.ppm"] {
        assert_eq!(read(&first, f), read(&cfg.out_dir, f), "{f}");
    }
}

#[test]
fn missing_inputs_fail_before_any_work() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small(root.path(), CohortSource::Directory { path: root.path().join("nowhere") });
    assert!(run_pipeline(&cfg).unwrap_err().to_string().contains("stage config"));
    cfg.cohort = CohortSource::Generate {
        n_normal: 2,
        n_abnormal: 2,
        options: CohortOptions::default(),
    };
    cfg.scorer = ScorerSource::External {
        predictions: root.path().join("missing.csv"),
        activations: None,
    };
    assert!(run_pipeline(&cfg).is_err());
    assert!(!root.path().join("truth.csv").exists());
}
