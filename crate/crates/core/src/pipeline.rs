//! End-to-end run over a cohort: bed removal, resampling, projection,
//! per-view scoring, ensemble decisions, cross-validated metrics and
//! activation overlays.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! config.json               resolved configuration
//! cohort/<id>/spec.json     generated phantoms (plus volumes when kept)
//! truth.csv
//! volumes/<id>/*.json       stripped / resampled volumes (when kept)
//! views/<id>/view_*.pgm     16-bit projections with JSON sidecars
//! masks/<id>/view_*.pgm     projected lung masks
//! display/<id>/view_*.pgm   8-bit display renderings
//! activations/<id>/view_*.act
//! overlays/<id>/view_*.ppm
//! predictions.csv
//! decisions/rule_<n>-<a>.csv
//! folds.csv
//! fold_metrics.csv          one row per rule and fold
//! metrics.csv               one row per rule
//! sweep_a.csv               every A for the full view set
//! ```
//!
//! Each patient runs its stages sequentially; patients run in parallel.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bed::{strip_bed_with, BedRemovalConfig};
use crate::cam::{self, ActivationMap, ChannelReduce};
use crate::drr::{
    self, project_binary_mask_with, AttenuationModel, AttenuationVolume, ProjectionGeometry, ProjectionImage,
    DEFAULT_MIN_PATH_MM,
};
use crate::ensemble::{self, threshold_scorer, EnsembleRule, PredictionTable, ScorerConfig, SweepRow, ViewPrediction};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{self, ConfusionMatrix, FoldAssignment, MetricReport, MetricSummary};
use crate::phantom::{self, CohortOptions, PhantomFiles};
use crate::tables;
use crate::volume::{self, BinaryVolume, CtVolume};

/// Where the patients come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CohortSource {
    /// Synthetic phantoms generated from the pipeline seed.
    Generate {
        n_normal: usize,
        n_abnormal: usize,
        #[serde(default)]
        options: CohortOptions,
    },
    /// A directory with `truth.csv` and one `<id>/` per patient holding
    /// `ct.json` and `lung_truth.json`.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerSource {
    Threshold {
        #[serde(default)]
        config: ScorerConfig,
    },
    /// Per-view predictions produced elsewhere; `activations`, if given,
    /// holds `<id>/view_<angle>.act` files for the overlays.
    External {
        predictions: PathBuf,
        #[serde(default)]
        activations: Option<PathBuf>,
    },
}

impl Default for ScorerSource {
    fn default() -> Self {
        ScorerSource::Threshold {
            config: ScorerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cohort: CohortSource,
    pub out_dir: PathBuf,
    pub bed_removal: BedRemovalConfig,
    pub target_mm: f64,
    pub geometry: ProjectionGeometry,
    pub min_path_mm: f64,
    /// Rules with fewer views than the geometry use an evenly spread subset.
    pub rules: Vec<EnsembleRule>,
    pub scorer: ScorerSource,
    pub folds: usize,
    pub seed: u64,
    pub overlays: bool,
    pub display_pixels: [usize; 2],
    /// Write CT and mask volumes for every intermediate stage.
    pub keep_volumes: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cohort: CohortSource::Generate {
                n_normal: 10,
                n_abnormal: 10,
                options: CohortOptions::default(),
            },
            out_dir: PathBuf::from("run"),
            bed_removal: BedRemovalConfig::default(),
            target_mm: 1.0,
            geometry: ProjectionGeometry::default(),
            min_path_mm: DEFAULT_MIN_PATH_MM,
            rules: vec![EnsembleRule::new(5, 2).expect("valid rule"), EnsembleRule::new(1, 1).expect("valid rule")],
            scorer: ScorerSource::default(),
            folds: 3,
            seed: 0,
            overlays: true,
            display_pixels: [512, 512],
            keep_volumes: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.bed_removal.validate()?;
        let views = self.geometry.n_views();
        if self.rules.is_empty() {
            return Err(Error::InvalidParameter("at least one ensemble rule is required".into()));
        }
        if let Some(r) = self.rules.iter().find(|r| r.n() > views) {
            return Err(Error::InvalidParameter(format!("rule {r} needs more than the {views} configured views")));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.target_mm.is_finite() && self.target_mm > 0.0) {
            return Err(Error::InvalidParameter(format!("target spacing must be positive, got {}", self.target_mm)));
        }
        if self.display_pixels.contains(&0) {
            return Err(Error::InvalidParameter("display size must be positive".into()));
        }
        match &self.scorer {
            ScorerSource::Threshold { config } => config.validate()?,
            ScorerSource::External { predictions, activations } => {
                if !predictions.is_file() {
                    return Err(Error::InvalidParameter(format!("missing predictions file {}", predictions.display())));
                }
                if let Some(dir) = activations.as_ref().filter(|d| !d.is_dir()) {
                    return Err(Error::InvalidParameter(format!("missing activation directory {}", dir.display())));
                }
            }
        }
        if let CohortSource::Directory { path } = &self.cohort {
            if !path.join("truth.csv").is_file() {
                return Err(Error::InvalidParameter(format!("{} has no truth.csv", path.display())));
            }
        }
        Ok(())
    }
}

/// Results for one ensemble rule.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleResult {
    pub rule: EnsembleRule,
    pub angles: Vec<f64>,
    pub decisions: BTreeMap<String, bool>,
    /// Confusion over the whole cohort.
    pub pooled: ConfusionMatrix,
    pub fold_reports: Vec<MetricReport>,
    /// Mean ± std over the folds where each metric is defined.
    pub summary: MetricSummary,
    pub defined_folds: [usize; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub truth: BTreeMap<String, bool>,
    pub predictions: Vec<ViewPrediction>,
    pub folds: FoldAssignment,
    pub rules: Vec<RuleResult>,
    pub sweep: Vec<SweepRow>,
}

impl PipelineReport {
    pub fn rule(&self, n: usize, a: usize) -> Option<&RuleResult> {
        self.rules.iter().find(|r| r.rule.n() == n && r.rule.a() == a)
    }
}

struct Subject {
    id: String,
    input: SubjectInput,
}

enum SubjectInput {
    Spec(Box<phantom::PhantomSpec>),
    Files(PhantomFiles),
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn prepare_cohort(cfg: &PipelineConfig) -> Result<(Vec<Subject>, BTreeMap<String, bool>)> {
    match &cfg.cohort {
        CohortSource::Generate {
            n_normal,
            n_abnormal,
            options,
        } => {
            let entries = phantom::generate_cohort(*n_normal, *n_abnormal, cfg.seed, options)?;
            let dir = cfg.out_dir.join("cohort");
            if cfg.keep_volumes {
                phantom::write_cohort(&entries, &dir)?;
            } else {
                // the spec alone regenerates the phantom exactly
                for e in &entries {
                    write_json(&PhantomFiles::in_dir(dir.join(&e.id)).spec, &e.spec)?;
                }
            }
            let truth = entries.iter().map(|e| (e.id.clone(), e.label().is_abnormal())).collect();
            let subjects = entries
                .into_iter()
                .map(|e| Subject {
                    id: e.id,
                    input: SubjectInput::Spec(Box::new(e.spec)),
                })
                .collect();
            Ok((subjects, truth))
        }
        CohortSource::Directory { path } => {
            let truth = tables::read_truth(path.join("truth.csv"))?;
            let subjects = truth
                .keys()
                .map(|id| Subject {
                    id: id.clone(),
                    input: SubjectInput::Files(PhantomFiles::in_dir(path.join(id))),
                })
                .collect();
            Ok((subjects, truth))
        }
    }
}

fn load_subject(s: &Subject) -> Result<(CtVolume, BinaryVolume)> {
    match &s.input {
        SubjectInput::Spec(spec) => {
            let p = phantom::generate(spec)?;
            Ok((p.volume, p.lung_truth))
        }
        SubjectInput::Files(f) => Ok((volume::load_volume(&f.ct)?, volume::load_binary_volume(&f.lung_truth)?)),
    }
}

fn view_path(root: &Path, kind: &str, id: &str, angle: f64, ext: &str) -> PathBuf {
    root.join(kind).join(id).join(format!("{}.{ext}", drr::view_stem(angle)))
}

/// Runs one patient through strip-bed → resample → project → score →
/// overlay. Returns the patient's per-view predictions when scoring here.
fn run_subject(cfg: &PipelineConfig, s: &Subject, external: Option<&[ViewPrediction]>) -> Result<Vec<ViewPrediction>> {
    let seq = Exec::Sequential;
    let id = s.id.as_str();
    let out = cfg.out_dir.as_path();
    let vol_dir = out.join("volumes").join(id);

    let (ct, lung) = load_subject(s).map_err(|e| e.in_stage("load", id))?;

    let (stripped, subject_mask) =
        strip_bed_with(&ct, &cfg.bed_removal, seq).map_err(|e| e.in_stage("strip-bed", id))?;
    drop(ct);
    if cfg.keep_volumes {
        volume::save_volume(&stripped, vol_dir.join("stripped.json"))
            .and_then(|_| volume::save_binary_volume(&subject_mask, vol_dir.join("subject_mask.json")))
            .map_err(|e| e.in_stage("strip-bed", id))?;
    }

    let resample = || -> Result<(CtVolume, BinaryVolume)> {
        let v = volume::resample_isotropic_with(&stripped, cfg.target_mm, seq)?;
        let l = volume::resample_binary(&lung, cfg.target_mm)?;
        if cfg.keep_volumes {
            volume::save_volume(&v, vol_dir.join("resampled.json"))?;
            volume::save_binary_volume(&l, vol_dir.join("lung.json"))?;
        }
        Ok((v, l))
    };
    let (v, lung) = resample().map_err(|e| e.in_stage("resample", id))?;

    let mu = AttenuationVolume::new(&v, &AttenuationModel::default()).map_err(|e| e.in_stage("project", id))?;
    drop(v);
    let mut preds = Vec::new();
    for &angle in cfg.geometry.view_angles_deg() {
        let view = drr::project_prepared(&mu, &cfg.geometry, angle, seq)
            .and_then(|p| drr::write_projection(&p, view_path(out, "views", id, angle, "pgm")).map(|_| p))
            .map_err(|e| e.in_stage("project", id))?;
        let lung_view = project_binary_mask_with(&lung, &cfg.geometry, angle, cfg.min_path_mm, seq)
            .and_then(|m| m.to_mask())
            .and_then(|m| drr::write_mask_pgm(&m, view_path(out, "masks", id, angle, "pgm")).map(|_| m))
            .map_err(|e| e.in_stage("project-mask", id))?;

        let activation = match (&cfg.scorer, external) {
            (ScorerSource::Threshold { config }, _) => {
                let d = threshold_scorer(id, &view, &lung_view, config).map_err(|e| e.in_stage("score", id))?;
                preds.push(d.prediction);
                Some(ActivationMap::new(d.height, d.width, 1, d.residual, id, angle).map_err(|e| e.in_stage("score", id))?)
            }
            (ScorerSource::External { activations, .. }, Some(rows)) => {
                let found: Vec<_> = rows
                    .iter()
                    .filter(|p| p.patient_id == id && p.view_angle_deg == angle)
                    .cloned()
                    .collect();
                if found.len() != 1 {
                    return Err(Error::Predictions(format!("expected one prediction at {angle} deg, found {}", found.len()))
                        .in_stage("score", id));
                }
                preds.extend(found);
                match activations {
                    Some(dir) => {
                        let path = dir.join(id).join(format!("{}.act", drr::view_stem(angle)));
                        Some(cam::read_activation(path).map_err(|e| e.in_stage("score", id))?)
                    }
                    None => None,
                }
            }
            (ScorerSource::External { .. }, None) => unreachable!("external predictions are loaded up front"),
        };

        if let (true, Some(a)) = (cfg.overlays, activation) {
            let overlay = || -> Result<()> {
                let base = drr::to_display(&view, cfg.display_pixels)?;
                drr::write_gray_pgm(&base, view_path(out, "display", id, angle, "pgm"))?;
                let lung_pm = ProjectionImage::from_mask(&lung_view, angle, cfg.geometry.clone());
                let feature = cam::align_mask(&lung_pm, a.h(), a.w())?;
                let refined = cam::refine(&a, &feature)?;
                let act_path = view_path(out, "activations", id, angle, "act");
                fs::create_dir_all(act_path.parent().expect("has parent")).map_err(|e| Error::io(&act_path, e))?;
                cam::write_activation(&act_path, &refined)?;
                let img = cam::render_overlay(&refined, &base, ChannelReduce::Max, Some(&feature))?;
                drr::write_rgb_ppm(&img, view_path(out, "overlays", id, angle, "ppm"))
            };
            overlay().map_err(|e| e.in_stage("overlay", id))?;
        }
    }
    Ok(preds)
}

#[derive(Serialize)]
struct MetricRow {
    rule: String,
    views: String,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    accuracy: String,
    sensitivity: String,
    specificity: String,
    precision: String,
    f1: String,
    accuracy_std: String,
    sensitivity_std: String,
    specificity_std: String,
    precision_std: String,
    f1_std: String,
    defined_folds: String,
}

#[derive(Serialize)]
struct FoldMetricRow {
    rule: String,
    fold: usize,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    accuracy: String,
    sensitivity: String,
    specificity: String,
    precision: String,
    f1: String,
}

#[derive(Serialize)]
struct SweepCsvRow {
    rule: String,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    accuracy: String,
    sensitivity: String,
    specificity: String,
    precision: String,
    f1: String,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn evaluate_rule(
    table: &PredictionTable,
    rule: &EnsembleRule,
    truth: &BTreeMap<String, bool>,
    folds: &FoldAssignment,
) -> Result<RuleResult> {
    let sub = table.for_n(rule.n())?;
    let decisions = ensemble::decide_all(&sub.vectors, rule)?;
    let pooled = metrics::confusion(&decisions, truth)?;
    let fold_reports = (0..folds.k)
        .map(|f| {
            let ids = folds.members(f);
            let pick = |m: &BTreeMap<String, bool>| -> BTreeMap<String, bool> {
                ids.iter().map(|id| (id.to_string(), m[*id])).collect()
            };
            metrics::metrics(&metrics::confusion(&pick(&decisions), &pick(truth))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (summary, defined_folds) = metrics::aggregate_defined(&fold_reports)?;
    Ok(RuleResult {
        rule: *rule,
        angles: sub.angles,
        decisions,
        pooled,
        fold_reports,
        summary,
        defined_folds,
    })
}

fn write_reports(out: &Path, report: &PipelineReport) -> Result<()> {
    tables::write_predictions(out.join("predictions.csv"), &report.predictions)?;
    tables::write_folds(out.join("folds.csv"), &report.folds)?;
    let mut rows = Vec::new();
    let mut fold_rows = Vec::new();
    for r in &report.rules {
        let name = r.rule.to_string();
        tables::write_decisions(
            out.join("decisions").join(format!("rule_{}-{}.csv", r.rule.n(), r.rule.a())),
            &r.decisions,
        )?;
        let s = r.summary.values();
        let mean = |i: usize| metrics::fmt_metric(s[i].map(|m| m.mean));
        let std = |i: usize| metrics::fmt_metric(s[i].map(|m| m.std));
        rows.push(MetricRow {
            rule: name.clone(),
            views: r.angles.iter().map(|a| format!("{a:+}")).collect::<Vec<_>>().join(" "),
            tp: r.pooled.tp,
            tn: r.pooled.tn,
            fp: r.pooled.fp,
            fn_: r.pooled.fn_,
            accuracy: mean(0),
            sensitivity: mean(1),
            specificity: mean(2),
            precision: mean(3),
            f1: mean(4),
            accuracy_std: std(0),
            sensitivity_std: std(1),
            specificity_std: std(2),
            precision_std: std(3),
            f1_std: std(4),
            defined_folds: r.defined_folds.map(|c| c.to_string()).join(" "),
        });
        for (f, rep) in r.fold_reports.iter().enumerate() {
            let ids = report.folds.members(f);
            let pick = |m: &BTreeMap<String, bool>| -> BTreeMap<String, bool> {
                ids.iter().map(|id| (id.to_string(), m[*id])).collect()
            };
            let c = metrics::confusion(&pick(&r.decisions), &pick(&report.truth))?;
            let v = rep.values().map(metrics::fmt_metric);
            let [accuracy, sensitivity, specificity, precision, f1] = v;
            fold_rows.push(FoldMetricRow {
                rule: name.clone(),
                fold: f,
                tp: c.tp,
                tn: c.tn,
                fp: c.fp,
                fn_: c.fn_,
                accuracy,
                sensitivity,
                specificity,
                precision,
                f1,
            });
        }
    }
    write_csv(&out.join("metrics.csv"), &rows)?;
    write_csv(&out.join("fold_metrics.csv"), &fold_rows)?;
    let sweep: Vec<SweepCsvRow> = report
        .sweep
        .iter()
        .map(|s| {
            let [accuracy, sensitivity, specificity, precision, f1] = s.report.values().map(metrics::fmt_metric);
            SweepCsvRow {
                rule: s.rule.to_string(),
                tp: s.confusion.tp,
                tn: s.confusion.tn,
                fp: s.confusion.fp,
                fn_: s.confusion.fn_,
                accuracy,
                sensitivity,
                specificity,
                precision,
                f1,
            }
        })
        .collect();
    write_csv(&out.join("sweep_a.csv"), &sweep)
}

/// Runs every stage and writes the report files. Identical configs give
/// byte-identical outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate().map_err(|e| e.in_stage("config", "pipeline"))?;
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;

    let (subjects, truth) = prepare_cohort(cfg).map_err(|e| e.in_stage("cohort", "cohort"))?;
    tables::write_truth(out.join("truth.csv"), &truth)?;
    let folds = {
        let labelled: Vec<(String, bool)> = truth.iter().map(|(k, &v)| (k.clone(), v)).collect();
        metrics::stratified_folds(&labelled, cfg.folds, cfg.seed).map_err(|e| e.in_stage("folds", "cohort"))?
    };

    let external = match &cfg.scorer {
        ScorerSource::External { predictions, .. } => {
            Some(tables::read_predictions(predictions).map_err(|e| e.in_stage("score", "cohort"))?)
        }
        ScorerSource::Threshold { .. } => None,
    };
    let per_subject = Exec::default().try_map_range(subjects.len(), |i| run_subject(cfg, &subjects[i], external.as_deref()))?;
    let predictions: Vec<ViewPrediction> = per_subject.into_iter().flatten().collect();

    let evaluate = || -> Result<PipelineReport> {
        let table = PredictionTable::from_predictions(&predictions)?;
        let rules = cfg
            .rules
            .iter()
            .map(|r| evaluate_rule(&table, r, &truth, &folds))
            .collect::<Result<Vec<_>>>()?;
        let sweep = ensemble::sweep_a(&table.vectors, &truth, table.angles.len())?;
        Ok(PipelineReport {
            truth: truth.clone(),
            predictions: predictions.clone(),
            folds: folds.clone(),
            rules,
            sweep,
        })
    };
    let report = evaluate().map_err(|e| e.in_stage("ensemble", "cohort"))?;
    write_reports(out, &report).map_err(|e| e.in_stage("metrics", "cohort"))?;
    Ok(report)
}
