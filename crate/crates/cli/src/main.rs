mod settings;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use seggraph_core::container::{
    labels_from_u32, labels_to_u32, list_shape_dirs, read_checkpoint, read_shape, write_checkpoint, Blob, Manifest, MAGIC,
};
use seggraph_core::gradsuite::{model_suite, primitive_suite, TOLERANCE};
use seggraph_core::metrics::{mean_iou, mean_sd, EvalReport, DEFAULT_SMALL_FRACTION};
use seggraph_core::pca::{export_pca_colors, write_colored_ply};
use seggraph_core::pipeline::{load_prepared, preprocess_dir, StageTimings};
use seggraph_core::study::{run_seed, SeedRun, StudyData};
use seggraph_core::synth::{class_prototypes, write_sample, CorpusIndex};
use seggraph_core::train::predict_labels;
use seggraph_core::{Ablation, Error, Model32, PreparedShape32, TrainConfig};

use settings::Settings;

/// Exit status 2 for usage errors, 1 for everything else.
#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
    usage: bool,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage".into(),
            message: message.into(),
            usage: true,
        }
    }

    fn runtime(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            usage: false,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::runtime(e.kind(), e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind, self.message)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "seggraph", version, about = "Few-shot 3D part segmentation over multi-view segment graphs")]
struct Cli {
    /// `key=value` configuration file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for per-shape work; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy, Default)]
struct AblationFlags {
    /// Mean-pool segment members instead of the attention encoder.
    #[arg(long)]
    no_segment_encoder: bool,
    /// Average segment features uniformly instead of by view quality.
    #[arg(long)]
    uniform_unpool: bool,
    #[arg(long)]
    no_overlap_edges: bool,
    #[arg(long)]
    no_adjacency_edges: bool,
    /// Skip graph propagation (drop both edge types).
    #[arg(long)]
    no_graph: bool,
    /// Point MLP baseline: head on projected point features only.
    #[arg(long)]
    no_segments: bool,
}

impl AblationFlags {
    fn apply(&self, mut a: Ablation) -> Ablation {
        if self.no_segment_encoder {
            a.segment_encoder = false;
        }
        if self.uniform_unpool {
            a.quality_unpool = false;
        }
        if self.no_overlap_edges || self.no_graph {
            a.overlap_edges = false;
        }
        if self.no_adjacency_edges || self.no_graph {
            a.adjacency_edges = false;
        }
        if self.no_segments {
            a = Ablation::mlp_baseline();
        }
        a
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        /// Output corpus directory.
        out: PathBuf,
        /// Corpus seed (overrides `corpus_seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Visibility, mask decomposition, lifting, pooling and graph building.
    Preprocess {
        /// Shape directory or corpus root.
        path: PathBuf,
    },
    /// Few-shot training, then evaluation on the test split.
    Train {
        /// Preprocessed corpus root.
        data: PathBuf,
        /// Checkpoint directory (one subdirectory per seed with `--seeds`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seeds; reports mean ± SD.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        shots: Option<usize>,
        /// Write per-seed results as JSON.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Per-point labels from a checkpoint.
    Predict {
        /// Preprocessed shape directory or corpus root.
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; receives `<shape>.sgb` label blobs.
        #[arg(long)]
        out: PathBuf,
    },
    /// mIoU of predicted against ground-truth labels, as JSON.
    Eval {
        /// Label file, directory of `<shape>.sgb` files, or shape directory.
        #[arg(long)]
        pred: PathBuf,
        /// Same forms as `--pred`; shape directories supply their labels.
        #[arg(long)]
        gt: PathBuf,
        /// Number of classes.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SMALL_FRACTION)]
        small_fraction: f64,
    },
    /// Finite-difference checks of every primitive and the end-to-end loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Color points by the top principal components of their features.
    ExportPca {
        /// Preprocessed shape directory.
        shape: PathBuf,
        /// Output PLY file.
        #[arg(long)]
        out: PathBuf,
        /// Use fused features of this model instead of the pooled inputs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| CliError::runtime("configuration", e.to_string()))
        .and_then(|pool| pool.install(|| run(cli)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(if e.usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let mut settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { out, seed } => {
            if let Some(seed) = seed {
                settings.synth.seed = seed;
            }
            synth(&out, &settings)
        }
        Command::Preprocess { path } => preprocess(&path, &settings),
        Command::Train {
            data,
            out,
            seed,
            seeds,
            epochs,
            lr,
            shots,
            report,
            ablation,
        } => {
            let t = &mut settings.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.lr = lr.unwrap_or(t.lr);
            t.shots = shots.unwrap_or(t.shots);
            t.ablation = ablation.apply(t.ablation);
            let multi = seeds.is_some();
            let seeds = seeds.unwrap_or_else(|| vec![seed.unwrap_or(t.seed)]);
            train(&data, out.as_deref(), &seeds, multi, report.as_deref(), &settings.train)
        }
        Command::Predict { data, checkpoint, out } => predict(&data, &checkpoint, &out),
        Command::Eval {
            pred,
            gt,
            k,
            small_fraction,
        } => eval(&pred, &gt, k, small_fraction),
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::ExportPca { shape, out, checkpoint } => export_pca(&shape, &out, checkpoint.as_deref()),
    }
}

fn synth(out: &Path, settings: &Settings) -> CliResult {
    let config = &settings.synth;
    config.validate()?;
    let index = CorpusIndex::for_config(config);
    index.write(out)?;
    let prototypes = class_prototypes(config);
    (0..config.num_shapes)
        .into_par_iter()
        .map(|i| write_sample(out, config, i, &prototypes).map(|_| ()))
        .collect::<Result<Vec<()>, _>>()?;
    out!(
        "wrote {} shapes ({} train, {} test) of `{}` to {}",
        config.num_shapes,
        index.train.len(),
        index.test.len(),
        index.category,
        out.display()
    );
    Ok(())
}

/// A shape directory itself, or every shape directory under a root.
fn shape_dirs(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.join(seggraph_core::container::MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::usage(format!("{} is not a shape directory or corpus root", path.display())));
    }
    let dirs = list_shape_dirs(path)?;
    if dirs.is_empty() {
        return Err(Error::MissingArtifact {
            shape: path.display().to_string(),
            what: "shape directories with a manifest".into(),
        }
        .into());
    }
    Ok(dirs)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn preprocess(path: &Path, settings: &Settings) -> CliResult {
    let dirs = shape_dirs(path)?;
    let results: Vec<StageTimings> = dirs
        .par_iter()
        .map(|d| preprocess_dir(d, &settings.preprocess))
        .collect::<Result<_, _>>()?;
    let mut total = StageTimings::default();
    for (dir, t) in dirs.iter().zip(&results) {
        out!(
            "{}: render {:.3}s masks {:.3}s build-graph {:.3}s",
            dir_name(dir),
            t.render,
            t.masks,
            t.build_graph
        );
        total.add(t);
    }
    out!(
        "total ({} shapes): render {:.3}s masks {:.3}s build-graph {:.3}s",
        dirs.len(),
        total.render,
        total.masks,
        total.build_graph
    );
    Ok(())
}

fn load_shapes(dirs: &[PathBuf]) -> CliResult<Vec<(Manifest, PreparedShape32)>> {
    Ok(dirs.par_iter().map(|d| load_prepared(d)).collect::<Result<_, _>>()?)
}

fn load_study(root: &Path) -> CliResult<StudyData<f32>> {
    let (train_dirs, test_dirs) = match CorpusIndex::read(root) {
        Ok(index) => (
            index.train.iter().map(|n| root.join(n)).collect(),
            index.test.iter().map(|n| root.join(n)).collect(),
        ),
        Err(Error::Io { .. }) => (shape_dirs(root)?, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let train = load_shapes(&train_dirs)?;
    let test = load_shapes(&test_dirs)?;
    let first = &train
        .first()
        .ok_or_else(|| CliError::runtime("configuration", "no training shapes"))?
        .0;
    let (category, classes) = (first.category.clone(), first.num_classes);
    if let Some((m, _)) = train.iter().chain(&test).find(|(m, _)| m.category != category || m.num_classes != classes) {
        return Err(CliError::runtime(
            "configuration",
            format!("corpus mixes categories: `{category}` and `{}`", m.category),
        ));
    }
    Ok(StudyData {
        category,
        classes,
        train: train.into_iter().map(|(_, s)| s).collect(),
        test: test.into_iter().map(|(_, s)| s).collect(),
    })
}

fn train(data: &Path, out: Option<&Path>, seeds: &[u64], multi: bool, report: Option<&Path>, base: &TrainConfig) -> CliResult {
    base.validate()?;
    let mut study = load_study(data)?;
    let has_test = !study.test.is_empty();
    if !has_test {
        // without a test split, report on the training pool
        study.test = study.train.clone();
    }
    let model_config = study.model_config()?;
    let runs: Vec<(u64, Model32, SeedRun)> = seeds
        .par_iter()
        .map(|&seed| {
            let config = TrainConfig {
                seed,
                category: study.category.clone(),
                ..base.clone()
            };
            run_seed(&study, &config).map(|(m, r)| (seed, m, r))
        })
        .collect::<Result<_, _>>()?;

    let split = if has_test { "test" } else { "train" };
    for (seed, model, run) in &runs {
        if let Some(out) = out {
            let dir = if multi { out.join(format!("seed_{seed}")) } else { out.to_path_buf() };
            write_checkpoint(&dir, &study.category, model_config, model.ablation, *seed, &model.params)?;
        }
        let first = run.loss_curve.first().copied().unwrap_or(f64::NAN);
        let last = run.loss_curve.last().copied().unwrap_or(f64::NAN);
        let small = run.report.small_miou.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        out!(
            "{} seed {seed} [{}]: train {:.2}s inference {:.2}s loss {first:.4} -> {last:.4} {split} miou {:.2} small {small}",
            study.category,
            base.ablation.label(),
            run.train_seconds,
            run.inference_seconds,
            100.0 * run.report.miou
        );
    }
    if multi {
        let mious: Vec<f64> = runs.iter().map(|(_, _, r)| 100.0 * r.report.miou).collect();
        let (mean, sd) = mean_sd(&mious).unwrap_or((f64::NAN, f64::NAN));
        let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        out!("{}: {split} miou {mean:.2} ± {sd:.2} over seeds {}", study.category, list.join(","));
    }
    if let Some(path) = report {
        let runs: Vec<&SeedRun> = runs.iter().map(|(_, _, r)| r).collect();
        let text = serde_json::to_string_pretty(&runs).map_err(|e| CliError::runtime("json", e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn predict(data: &Path, checkpoint: &Path, out: &Path) -> CliResult {
    let (ckpt, params) = read_checkpoint::<f32>(checkpoint)?;
    let model = Model32 {
        config: ckpt.model,
        ablation: ckpt.ablation,
        params,
    };
    let dirs = shape_dirs(data)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime("io", format!("{}: {e}", out.display())))?;
    let t = Instant::now();
    dirs.par_iter()
        .map(|dir| -> CliResult {
            let (_, shape) = load_prepared::<f32>(dir)?;
            let labels: Vec<i32> = predict_labels(&model, &shape)?.labels.iter().map(|&l| l as i32).collect();
            let path = out.join(format!("{}.sgb", dir_name(dir)));
            Blob::u32(vec![labels.len()], labels_to_u32(&labels))?.write(&path)?;
            Ok(())
        })
        .collect::<CliResult<Vec<()>>>()?;
    out!(
        "predicted {} shapes into {}: inference {:.2}s",
        dirs.len(),
        out.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Labels of one file: an SGB1 `u32` blob or whitespace-separated integers.
fn read_label_file(path: &Path) -> CliResult<Vec<i64>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))?;
    if bytes.starts_with(MAGIC) {
        let blob = Blob::decode(&bytes).map_err(|m| CliError::runtime("format", format!("{}: {m}", path.display())))?;
        return Ok(labels_from_u32(&blob.into_u32(path)?).into_iter().map(i64::from).collect());
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::runtime("format", format!("{}: not a label file", path.display())))?;
    text.split_whitespace()
        .map(|w| {
            w.parse::<i64>()
                .map_err(|_| CliError::runtime("format", format!("{}: bad label `{w}`", path.display())))
        })
        .collect()
}

fn read_shape_labels(dir: &Path) -> CliResult<Vec<i64>> {
    let inputs = read_shape(dir)?;
    let labels = inputs.cloud.labels.ok_or_else(|| Error::MissingArtifact {
        shape: dir_name(dir),
        what: "labels".into(),
    })?;
    Ok(labels.into_iter().map(i64::from).collect())
}

/// Named label sets found at `path`.
fn label_sets(path: &Path) -> CliResult<Vec<(String, Vec<i64>)>> {
    if path.is_file() {
        return Ok(vec![(stem(path), read_label_file(path)?)]);
    }
    if path.join(seggraph_core::container::MANIFEST_FILE).is_file() {
        return Ok(vec![(dir_name(path), read_shape_labels(path)?)]);
    }
    if !path.is_dir() {
        return Err(CliError::usage(format!("{} does not exist", path.display())));
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for p in entries {
        if p.join(seggraph_core::container::MANIFEST_FILE).is_file() {
            out.push((dir_name(&p), read_shape_labels(&p)?));
        } else if p.extension().is_some_and(|e| e == "sgb") {
            out.push((stem(&p), read_label_file(&p)?));
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn eval(pred: &Path, gt: &Path, k: usize, small_fraction: f64) -> CliResult {
    if k == 0 {
        return Err(CliError::usage("--k must be positive"));
    }
    let preds = label_sets(pred)?;
    let gts = label_sets(gt)?;
    let pairs: Vec<(&Vec<i64>, &Vec<i64>)> = if preds.len() == 1 && gts.len() == 1 {
        vec![(&preds[0].1, &gts[0].1)]
    } else {
        gts.iter()
            .map(|(name, g)| {
                preds
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, p)| (p, g))
                    .ok_or_else(|| {
                        Error::MissingArtifact {
                            shape: name.clone(),
                            what: format!("prediction in {}", pred.display()),
                        }
                        .into()
                    })
            })
            .collect::<CliResult<_>>()?
    };
    if pairs.is_empty() {
        return Err(Error::MissingArtifact {
            shape: gt.display().to_string(),
            what: "ground-truth labels".into(),
        }
        .into());
    }
    let scores = pairs
        .iter()
        .map(|(p, g)| mean_iou(p, g, k))
        .collect::<Result<Vec<_>, _>>()?;
    let category = gts.first().map(|(n, _)| n.clone()).unwrap_or_default();
    let report = EvalReport::from_shapes(if pairs.len() == 1 { category } else { dir_name(gt) }, &scores, small_fraction)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime("json", e.to_string()))?;
    out!("{text}");
    Ok(())
}

fn gradcheck(seed: u64) -> CliResult {
    let t = Instant::now();
    let mut failed = Vec::new();
    let mut line = |name: &str, r: &seggraph_core::nn::GradcheckReport| {
        let ok = r.passes(TOLERANCE) && r.checked > 0;
        out!(
            "{name:<28} max_rel_error {:.3e} checked {:>5} skipped {:>3} {}",
            r.max_rel_error,
            r.checked,
            r.skipped,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(name.to_string());
        }
    };
    for (name, r) in primitive_suite(seed)? {
        line(name, &r);
    }
    for (name, r) in model_suite(seed)? {
        line(&name, &r);
    }
    out!("gradcheck: {:.1}s, tolerance {TOLERANCE:e}", t.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime("gradcheck", format!("above tolerance: {}", failed.join(", "))))
    }
}

fn export_pca(shape_dir: &Path, out: &Path, checkpoint: Option<&Path>) -> CliResult {
    let (_, shape) = load_prepared::<f32>(shape_dir)?;
    let features = match checkpoint {
        Some(ckpt) => {
            let (c, params) = read_checkpoint::<f32>(ckpt)?;
            let model = Model32 {
                config: c.model,
                ablation: c.ablation,
                params,
            };
            model.embeddings(&shape)?
        }
        None => shape.point_features.clone(),
    };
    let (n, c) = (features.rows(), features.cols());
    let data: Vec<f64> = features.data().iter().map(|&x| f64::from(x)).collect();
    let colors = export_pca_colors(&data, n, c)?;
    let cloud = read_shape(shape_dir)?.cloud;
    write_colored_ply(out, &cloud.positions, &colors)?;
    out!("wrote {n} colored points to {}", out.display());
    Ok(())
}
