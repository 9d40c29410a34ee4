use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dtsforge::bed::{strip_bed, BedRemovalConfig};
use dtsforge::cam::{self, ChannelReduce};
use dtsforge::drr::{self, AttenuationModel, ProjectionGeometry, ProjectionImage, ProjectionKind};
use dtsforge::ensemble::{self, threshold_scorer, EnsembleRule, ScorerConfig};
use dtsforge::metrics;
use dtsforge::phantom::{self, CohortOptions};
use dtsforge::pipeline::{self, PipelineConfig};
use dtsforge::{tables, volume, Mask2};

#[derive(Parser)]
#[command(name = "dtsforge", version, about = "Virtual tomosynthesis projections and N/A ensemble diagnosis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize one phantom spec.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a labelled phantom cohort with truth.csv.
    PhantomCohort {
        #[arg(long)]
        normal: usize,
        #[arg(long)]
        abnormal: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Add a dense block in front of every lesion along the frontal ray.
        #[arg(long)]
        occluded: bool,
        /// Volume size as `x,y,z`.
        #[arg(long, value_parser = parse_list::<3>)]
        dims: Option<[usize; 3]>,
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Remove the scanning bed slice by slice.
    StripBed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true, default_value_t = -500.0)]
        threshold: f64,
        #[arg(long, default_value_t = 5)]
        median: usize,
        #[arg(long, default_value_t = 2)]
        erode: usize,
        #[arg(long, default_value_t = 2)]
        dilate: usize,
    },
    /// Resample to isotropic spacing.
    Resample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        target: f64,
        /// Treat the input as a binary mask volume.
        #[arg(long)]
        binary: bool,
    },
    /// Cone-beam projections of a CT volume.
    Project {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Binary lung volume to project alongside.
        #[arg(long)]
        mask_in: Option<PathBuf>,
        #[arg(long)]
        mask_out_dir: Option<PathBuf>,
        /// Also write 8-bit display images here.
        #[arg(long)]
        display_dir: Option<PathBuf>,
        #[arg(long, value_parser = parse_list::<2>, default_value = "512,512")]
        display_pixels: [usize; 2],
    },
    /// Project a binary volume into view masks.
    ProjectMask {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = drr::DEFAULT_MIN_PATH_MM)]
        min_path: f64,
    },
    /// Threshold scorer over one patient's projected views.
    Score {
        #[arg(long)]
        views_dir: PathBuf,
        #[arg(long)]
        masks_dir: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        out: PathBuf,
        /// Scorer settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write mask-refined activation maps here.
        #[arg(long)]
        activations_dir: Option<PathBuf>,
    },
    /// Apply an N/A rule to per-view predictions.
    Ensemble {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        a: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics for every A at a fixed N.
    SweepA {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Metrics of patient-level decisions.
    Metrics {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Jaccard and Dice of two mask images.
    SegEval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Stratified k-fold assignment.
    Folds {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mask-refine an activation map and render it over a base image.
    RefineCam {
        #[arg(long)]
        act: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "max")]
        reduce: String,
        #[arg(long)]
        act_out: Option<PathBuf>,
    },
    /// Run every stage from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GeometryArgs {
    /// Geometry JSON; defaults to the standard sweep.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    views: Option<Vec<f64>>,
    /// Detector size as `width,height`.
    #[arg(long, value_parser = parse_list::<2>)]
    pixels: Option<[usize; 2]>,
}

impl GeometryArgs {
    fn resolve(&self) -> Result<ProjectionGeometry> {
        let mut g = match &self.geometry {
            Some(p) => drr::read_geometry(p).with_context(|| format!("reading geometry {}", p.display()))?,
            None => ProjectionGeometry::default(),
        };
        if let Some(v) = &self.views {
            g = g.with_views(v.clone())?;
        }
        if let Some(p) = &self.pixels {
            g = g.with_detector_pixels(*p)?;
        }
        Ok(g)
    }
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    target_mm: Option<f64>,
    /// Detector size as `width,height`.
    #[arg(long, value_parser = parse_list::<2>)]
    pixels: Option<[usize; 2]>,
    /// Rules as N/A, e.g. `5/2,1/1`.
    #[arg(long, value_delimiter = ',')]
    rules: Option<Vec<String>>,
    /// Score from an external prediction file instead of the threshold scorer.
    #[arg(long)]
    external_preds: Option<PathBuf>,
    #[arg(long)]
    no_overlays: bool,
    #[arg(long)]
    no_volumes: bool,
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected {N} comma-separated values"))
}

fn parse_rule(s: &str) -> Result<EnsembleRule> {
    let (n, a) = s.split_once('/').with_context(|| format!("rule {s:?} is not N/A"))?;
    Ok(EnsembleRule::new(n.trim().parse()?, a.trim().parse()?)?)
}

fn print_table(rows: &[(String, metrics::ConfusionMatrix, metrics::MetricReport)]) {
    println!("rule\ttp\ttn\tfp\tfn\t{}", metrics::METRIC_NAMES.join("\t"));
    for (name, c, r) in rows {
        let vals: Vec<String> = r.values().iter().map(|v| metrics::fmt_metric(*v)).collect();
        println!("{name}\t{}\t{}\t{}\t{}\t{}", c.tp, c.tn, c.fp, c.fn_, vals.join("\t"));
    }
}

fn view_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    out.sort();
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { spec, out_dir } => {
            let spec = phantom::read_spec(&spec).context("phantom: reading spec")?;
            let (p, _) = phantom::write_phantom(&spec, &out_dir).context("phantom: writing volumes")?;
            println!("{} phantom written to {}", if p.label.is_abnormal() { "abnormal" } else { "normal" }, out_dir.display());
        }
        Command::PhantomCohort {
            normal,
            abnormal,
            seed,
            out_dir,
            occluded,
            dims,
            spacing,
        } => {
            let mut opts = CohortOptions {
                occluded,
                ..Default::default()
            };
            if let Some(d) = dims {
                opts.dims = d;
            }
            if let Some(s) = spacing {
                opts.spacing_mm = s;
            }
            let entries = phantom::generate_cohort(normal, abnormal, seed, &opts).context("phantom-cohort")?;
            phantom::write_cohort(&entries, &out_dir).context("phantom-cohort: writing files")?;
            println!("{} phantoms written to {}", entries.len(), out_dir.display());
        }
        Command::StripBed {
            input,
            out,
            mask_out,
            threshold,
            median,
            erode,
            dilate,
        } => {
            let cfg = BedRemovalConfig {
                threshold_hu: threshold,
                median_kernel: median,
                erode_radius: erode,
                dilate_radius: dilate,
            };
            let v = volume::load_volume(&input).with_context(|| format!("strip-bed: loading {}", input.display()))?;
            let (stripped, mask) = strip_bed(&v, &cfg).context("strip-bed")?;
            volume::save_volume(&stripped, &out).context("strip-bed: writing volume")?;
            if let Some(m) = mask_out {
                volume::save_binary_volume(&mask, &m).context("strip-bed: writing mask")?;
            }
        }
        Command::Resample {
            input,
            out,
            target,
            binary,
        } => {
            if binary {
                let b = volume::load_binary_volume(&input).context("resample: loading mask")?;
                volume::save_binary_volume(&volume::resample_binary(&b, target)?, &out).context("resample: writing")?;
            } else {
                let v = volume::load_volume(&input).context("resample: loading volume")?;
                volume::save_volume(&volume::resample_isotropic(&v, target)?, &out).context("resample: writing")?;
            }
        }
        Command::Project {
            input,
            geometry,
            out_dir,
            mask_in,
            mask_out_dir,
            display_dir,
            display_pixels,
        } => {
            let g = geometry.resolve().context("project: geometry")?;
            let v = volume::load_volume(&input).with_context(|| format!("project: loading {}", input.display()))?;
            let views = drr::project_all_views(&v, &g, &AttenuationModel::default()).context("project")?;
            drr::write_geometry(&g, out_dir.join("geometry.json"))?;
            for p in &views {
                let stem = drr::view_stem(p.view_angle_deg());
                drr::write_projection(p, out_dir.join(format!("{stem}.pgm"))).context("project: writing view")?;
                if let Some(d) = &display_dir {
                    let img = drr::to_display(p, display_pixels)?;
                    drr::write_gray_pgm(&img, d.join(format!("{stem}.pgm"))).context("project: writing display")?;
                }
            }
            match (mask_in, mask_out_dir) {
                (Some(m), Some(dir)) => {
                    let b = volume::load_binary_volume(&m).context("project: loading mask volume")?;
                    write_mask_views(&b, &g, &dir, drr::DEFAULT_MIN_PATH_MM)?;
                }
                (None, None) => {}
                _ => bail!("--mask-in and --mask-out-dir go together"),
            }
        }
        Command::ProjectMask {
            input,
            geometry,
            out_dir,
            min_path,
        } => {
            let g = geometry.resolve().context("project-mask: geometry")?;
            let b = volume::load_binary_volume(&input).context("project-mask: loading mask volume")?;
            write_mask_views(&b, &g, &out_dir, min_path)?;
        }
        Command::Score {
            views_dir,
            masks_dir,
            patient,
            out,
            config,
            activations_dir,
        } => {
            let cfg: ScorerConfig = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("score: {}", p.display()))?,
                None => ScorerConfig::default(),
            };
            let mut preds = Vec::new();
            for path in view_files(&views_dir)? {
                let view = drr::read_projection(&path).with_context(|| format!("score: reading {}", path.display()))?;
                if view.kind() != ProjectionKind::Intensity {
                    continue;
                }
                let name = path.file_name().expect("file name");
                let mask = drr::read_mask_pgm(masks_dir.join(name))
                    .with_context(|| format!("score: no lung mask for {}", path.display()))?;
                let d = threshold_scorer(&patient, &view, &mask, &cfg).context("score")?;
                if let Some(dir) = &activations_dir {
                    let a = cam::ActivationMap::new(d.height, d.width, 1, d.residual.clone(), &patient, view.view_angle_deg())?;
                    fs::create_dir_all(dir)?;
                    cam::write_activation(dir.join(Path::new(name).with_extension("act")), &a)?;
                }
                preds.push(d.prediction);
            }
            if preds.is_empty() {
                bail!("score: no intensity views in {}", views_dir.display());
            }
            preds.sort_by(|a, b| a.view_angle_deg.total_cmp(&b.view_angle_deg));
            tables::write_predictions(&out, &preds).context("score: writing predictions")?;
            for p in &preds {
                println!("{:+}\t{:.4}\t{}", p.view_angle_deg, p.prob_abnormal, p.label);
            }
        }
        Command::Ensemble { preds, truth, n, a, out } => {
            let rule = EnsembleRule::new(n, a)?;
            let table = ensemble::ingest_predictions(&preds).context("ensemble: reading predictions")?;
            let table = table.for_n(n).context("ensemble: selecting views")?;
            let decisions = ensemble::decide_all(&table.vectors, &rule)?;
            if let Some(o) = &out {
                tables::write_decisions(o, &decisions)?;
            } else {
                for (id, d) in &decisions {
                    println!("{id}\t{}", u8::from(*d));
                }
            }
            if let Some(t) = truth {
                let truth = tables::read_truth(&t).context("ensemble: reading truth")?;
                let c = metrics::confusion(&decisions, &truth)?;
                print_table(&[(rule.to_string(), c, metrics::metrics(&c)?)]);
            }
        }
        Command::SweepA { preds, truth, n } => {
            let table = ensemble::ingest_predictions(&preds).context("sweep-a: reading predictions")?.for_n(n)?;
            let truth = tables::read_truth(&truth).context("sweep-a: reading truth")?;
            let rows = ensemble::sweep_a(&table.vectors, &truth, n)?;
            print_table(&rows.into_iter().map(|r| (r.rule.to_string(), r.confusion, r.report)).collect::<Vec<_>>());
        }
        Command::Metrics { preds, truth } => {
            let decisions = tables::read_decisions(&preds).context("metrics: reading decisions")?;
            let truth = tables::read_truth(&truth).context("metrics: reading truth")?;
            let c = metrics::confusion(&decisions, &truth)?;
            print_table(&[("decisions".into(), c, metrics::metrics(&c)?)]);
        }
        Command::SegEval { pred, reference } => {
            let p = drr::read_mask_pgm(&pred).context("seg-eval: reading prediction")?;
            let r = drr::read_mask_pgm(&reference).context("seg-eval: reading reference")?;
            let o = metrics::seg_overlap(&p, &r)?;
            // the same Jaccard is reported under both names
            println!("js\t{:.6}\niou\t{:.6}\ndice\t{:.6}", o.jaccard, o.jaccard, o.dice);
        }
        Command::Folds { patients, k, seed, out } => {
            let labels: BTreeMap<String, bool> = tables::read_truth(&patients).context("folds: reading patients")?;
            let list: Vec<(String, bool)> = labels.into_iter().collect();
            let f = metrics::stratified_folds(&list, k, seed)?;
            match out {
                Some(o) => tables::write_folds(&o, &f)?,
                None => {
                    println!("patient_id,label,fold");
                    for (id, fold) in f.iter() {
                        println!("{id},{},{fold}", u8::from(f.label_of(id).unwrap_or(false)));
                    }
                }
            }
        }
        Command::RefineCam {
            act,
            mask,
            base,
            out,
            reduce,
            act_out,
        } => {
            let a = cam::read_activation(&act).context("refine-cam: reading activation")?;
            let m = drr::read_mask_pgm(&mask).context("refine-cam: reading mask")?;
            let pm = ProjectionImage::from_mask(&m, a.view_angle_deg, ProjectionGeometry::default());
            let feature = cam::align_mask(&pm, a.h(), a.w())?;
            let refined = cam::refine(&a, &feature)?;
            let base = drr::read_gray_pgm(&base).context("refine-cam: reading base image")?;
            let img = cam::render_overlay(&refined, &base, reduce.parse::<ChannelReduce>()?, Some(&feature))?;
            drr::write_rgb_ppm(&img, &out).context("refine-cam: writing overlay")?;
            if let Some(p) = act_out {
                cam::write_activation(&p, &refined)?;
            }
        }
        Command::Pipeline(args) => run_pipeline(args)?,
    }
    Ok(())
}

fn write_mask_views(b: &volume::BinaryVolume, g: &ProjectionGeometry, dir: &Path, min_path: f64) -> Result<()> {
    for &angle in g.view_angles_deg() {
        let m: Mask2 = drr::project_binary_mask(b, g, angle, min_path)?.to_mask()?;
        drr::write_mask_pgm(&m, dir.join(format!("{}.pgm", drr::view_stem(angle)))).context("writing mask view")?;
    }
    Ok(())
}

fn run_pipeline(args: PipelineArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = args.out_dir {
        cfg.out_dir = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.folds {
        cfg.folds = k;
    }
    if let Some(t) = args.target_mm {
        cfg.target_mm = t;
    }
    if let Some(p) = args.pixels {
        cfg.geometry = cfg.geometry.with_detector_pixels(p)?;
    }
    if let Some(r) = args.rules {
        cfg.rules = r.iter().map(|s| parse_rule(s)).collect::<Result<_>>()?;
    }
    if let Some(p) = args.external_preds {
        cfg.scorer = pipeline::ScorerSource::External {
            predictions: p,
            activations: None,
        };
    }
    if args.no_overlays {
        cfg.overlays = false;
    }
    if args.no_volumes {
        cfg.keep_volumes = false;
    }
    let report = pipeline::run_pipeline(&cfg)?;
    let rows: Vec<_> = report
        .rules
        .iter()
        .map(|r| Ok((r.rule.to_string(), r.pooled, metrics::metrics(&r.pooled)?)))
        .collect::<Result<_>>()?;
    print_table(&rows);
    println!("reports written to {}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(t) = std::env::var("DTSFORGE_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = dtsforge::exec::configure_threads(n) {
                    eprintln!("error: DTSFORGE_THREADS: {e}");
                    return ExitCode::FAILURE;
                }
            }
            _ => {
                eprintln!("error: DTSFORGE_THREADS must be a positive integer, got {t:?}");
                return ExitCode::FAILURE;
            }
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
