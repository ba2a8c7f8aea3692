//! The `spl` command-line driver.
//!
//! Settings resolve as flag, then `--config` file, then built-in default. The
//! config file holds one `key = value` per line, keys spelled like the long
//! flags without dashes (`latent-dim = 32`); `#` starts a comment.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::classifier::TrainConfig;
use crate::dataio::{
    format_dataset, generate_benchmark, l2_normalize_rows, load_feature_dataset, save_feature_dataset, split_roles,
    BenchmarkSpec, ClassCounts, DatasetMeta, FeatureSample, GroundTruth, LabelledSample, TargetSample,
};
use crate::error::{Error, Result};
use crate::norm_vae::VaeConfig;
use crate::pipeline::{run_ablation, run_method, Augment, IterationTrace, Method, PipelineConfig, Task};
use crate::projection::{format_projection, pca_project, ProjectionInput};
use crate::pseudo_label::format_selection;
use crate::report::{format_traces, ExperimentReport, ReportRow};

#[derive(Debug, Parser)]
#[command(name = "spl", version, about = "Selective pseudo-labelling for unsupervised domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one method on one source/target pair.
    Run(RunArgs),
    /// Write a synthetic source/target benchmark.
    Benchgen(BenchArgs),
    /// Run a grid of methods, seeds and iteration counts.
    Ablate(AblateArgs),
    /// Run norm-VAE-SPL and project real and synthetic features onto two principal axes.
    Project(RunArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat key=value file supplying defaults for any flag below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Task name used in reports; defaults to `<source stem>→<target stem>`.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Classifier epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Classifier learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Classifier batch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    vae_epochs: Option<usize>,
    #[arg(long)]
    vae_lr: Option<f64>,
    #[arg(long)]
    vae_batch: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// One of `cross`, `cross+recon`, `off`.
    #[arg(long)]
    augment: Option<String>,
    /// Scale every feature vector to unit L2 norm after loading.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One of `baseline`, `naive-spl`, `naive-spl-star`, `norm-vae-spl`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Also write the last iteration's synthetic features as `synthetic.csv`.
    #[arg(long)]
    dump_synthetic: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated methods, in table order. Default: all four.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated seeds. Default: 0,1,2,3,4.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated iteration counts. Default: 10.
    #[arg(long)]
    iterations: Option<String>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Source samples per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Target samples per class (majority classes when imbalanced). Defaults
    /// to `--per-class`.
    #[arg(long)]
    target_per_class: Option<usize>,
    /// Majority to minority ratio of the target classes; 1 means balanced.
    #[arg(long)]
    imbalance: Option<f64>,
    #[arg(long)]
    centroid_scale: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    translation: Option<f64>,
    #[arg(long)]
    rotation: Option<f64>,
    #[arg(long)]
    covariance_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Key-value settings read from `--config`.
#[derive(Debug, Default)]
struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, allowed)
    }

    fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim().replace('_', "-");
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!("config line {}: unknown key {key:?}", i + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    /// Flag if given, else file value, else `default`.
    fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        })
    }

    fn file_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("config key {key}: {e}"))))
            .transpose()
    }

    fn pick_bool(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.file_value(key)?.unwrap_or(false))
    }
}

const COMMON_KEYS: &[&str] = &[
    "source",
    "target",
    "task",
    "seed",
    "epochs",
    "lr",
    "batch",
    "vae-epochs",
    "vae-lr",
    "vae-batch",
    "latent-dim",
    "hidden-dim",
    "dropout",
    "augment",
    "normalize",
    "out",
];

/// Resolved settings shared by `run`, `ablate` and `project`.
struct Resolved {
    source: PathBuf,
    target: PathBuf,
    task: String,
    out: PathBuf,
    normalize: bool,
    config: PipelineConfig,
}

fn resolve_common(c: &CommonArgs, file: &ConfigFile, method: Method, iterations: usize) -> Result<Resolved> {
    let source: PathBuf = c
        .source
        .clone()
        .or(file.file_value("source")?)
        .ok_or_else(|| Error::Config("--source is required".into()))?;
    let target: PathBuf = c
        .target
        .clone()
        .or(file.file_value("target")?)
        .ok_or_else(|| Error::Config("--target is required".into()))?;
    let stem = |p: &Path| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let task = file.pick(c.task.clone(), "task", format!("{}→{}", stem(&source), stem(&target)))?;
    let out = file.pick(c.out.clone(), "out", PathBuf::from("."))?;
    let td = TrainConfig::default();
    let vd = VaeConfig::default();
    let augment: String = file.pick(c.augment.clone(), "augment", Augment::Cross.name().to_string())?;
    let config = PipelineConfig {
        method,
        iterations,
        classifier: TrainConfig {
            epochs: file.pick(c.epochs, "epochs", td.epochs)?,
            batch_size: file.pick(c.batch, "batch", td.batch_size)?,
            learning_rate: file.pick(c.lr, "lr", td.learning_rate)?,
            seed: 0,
        },
        vae: VaeConfig {
            epochs: file.pick(c.vae_epochs, "vae-epochs", vd.epochs)?,
            batch_size: file.pick(c.vae_batch, "vae-batch", vd.batch_size)?,
            learning_rate: file.pick(c.vae_lr, "vae-lr", vd.learning_rate)?,
            latent_dim: file.pick(c.latent_dim, "latent-dim", vd.latent_dim)?,
            hidden_dim: file.pick(c.hidden_dim, "hidden-dim", vd.hidden_dim)?,
            dropout: file.pick(c.dropout, "dropout", vd.dropout)?,
            seed: 0,
        },
        augment: augment.parse()?,
        seed: file.pick(c.seed, "seed", 0)?,
    };
    config.validate()?;
    Ok(Resolved {
        source,
        target,
        task,
        out,
        normalize: file.pick_bool(c.normalize, "normalize")?,
        config,
    })
}

struct Loaded {
    source: Vec<LabelledSample>,
    target: Vec<TargetSample>,
    truth: GroundTruth,
    meta: DatasetMeta,
}

fn load_pair(r: &Resolved) -> Result<Loaded> {
    let (mut s_rows, s_meta) = load_feature_dataset(&r.source)?;
    let (mut t_rows, t_meta) = load_feature_dataset(&r.target)?;
    if s_meta.dim != t_meta.dim {
        return Err(Error::Shape(format!("source dim {} but target dim {}", s_meta.dim, t_meta.dim)));
    }
    if s_meta.classes != t_meta.classes {
        return Err(Error::Shape(format!(
            "source has {} classes but target has {}",
            s_meta.classes, t_meta.classes
        )));
    }
    if r.normalize {
        l2_normalize_rows(&mut s_rows);
        l2_normalize_rows(&mut t_rows);
    }
    let check = |rows: &[FeatureSample], want: crate::dataio::Domain, path: &Path| -> Result<()> {
        match rows.iter().find(|s| s.domain != want) {
            Some(s) => Err(Error::Usage(format!(
                "{}: sample {} is tagged {} but the file is used as {}",
                path.display(),
                s.id,
                s.domain.tag(),
                want.tag()
            ))),
            None => Ok(()),
        }
    };
    check(&s_rows, crate::dataio::Domain::Source, &r.source)?;
    check(&t_rows, crate::dataio::Domain::Target, &r.target)?;
    s_rows.extend(t_rows);
    let (source, target, truth) = split_roles(&s_rows)?;
    Ok(Loaded {
        source,
        target,
        truth,
        meta: s_meta,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn truth_opt(truth: &GroundTruth) -> Option<&GroundTruth> {
    (!truth.is_empty()).then_some(truth)
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}%", 100.0 * a))
}

fn cmd_run(args: &RunArgs, project: bool) -> Result<()> {
    let mut keys = COMMON_KEYS.to_vec();
    keys.extend(["method", "iterations", "dump-synthetic"]);
    let file = ConfigFile::load(args.common.config.as_deref(), &keys)?;
    let default_method = if project { Method::NormVaeSpl } else { Method::NaiveSpl };
    let method: Method = match &args.method {
        Some(m) => m.parse()?,
        None => file.file_value::<String>("method")?.map_or(Ok(default_method), |m| m.parse())?,
    };
    let iterations = file.pick(args.iterations, "iterations", 10)?;
    let r = resolve_common(&args.common, &file, method, iterations)?;
    let data = load_pair(&r)?;
    ensure_dir(&r.out)?;

    let mut traces: Vec<IterationTrace> = Vec::new();
    let out = run_method(&data.source, &data.target, data.meta.classes, &r.config, truth_opt(&data.truth), |t| {
        eprintln!(
            "iteration {:>3}: selected {:>6}  synthetic {:>6}  target accuracy {}",
            t.iteration,
            t.selected_per_class.iter().sum::<usize>(),
            t.synthetic_count,
            fmt_acc(t.target_accuracy)
        );
        traces.push(t.clone());
    })?;

    write(&r.out, "trace.jsonl", &format_traces(&traces))?;
    if project {
        let mut inputs: Vec<ProjectionInput> = data.source.iter().map(ProjectionInput::from_labelled).collect();
        inputs.extend(data.target.iter().map(|t| ProjectionInput::from_target(t, data.truth.get(t.id))));
        inputs.extend(out.last_synthetic.iter().map(ProjectionInput::from_labelled));
        let points = pca_project(&inputs)?;
        write(&r.out, "projection.csv", &format_projection(&points))?;
        println!("wrote {} points to {}", points.len(), r.out.join("projection.csv").display());
        return Ok(());
    }

    let report = ExperimentReport::new(vec![ReportRow {
        task: r.task.clone(),
        method,
        seed: r.config.seed,
        iterations,
        initial_accuracy: out.initial_accuracy(),
        final_accuracy: out.final_accuracy(),
    }]);
    write(&r.out, "report.csv", &report.to_csv())?;
    write(&r.out, "report.md", &report.to_markdown())?;
    write(&r.out, "selected.csv", &format_selection(&out.selections))?;
    write(&r.out, "predictions.csv", &format_selection(&out.predictions))?;
    if file.pick_bool(args.dump_synthetic, "dump-synthetic")? {
        let rows: Vec<FeatureSample> = out
            .last_synthetic
            .iter()
            .map(|s| FeatureSample {
                id: s.id,
                domain: s.domain,
                label: Some(s.label),
                features: s.features.clone(),
            })
            .collect();
        write(&r.out, "synthetic.csv", &format_dataset(&rows, data.meta))?;
    }
    println!(
        "{} {}: source-only {} → final {}",
        r.task,
        method,
        fmt_acc(out.initial_accuracy()),
        fmt_acc(out.final_accuracy())
    );
    Ok(())
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::Config(format!("{what} {s:?}: {e}"))))
        .collect()
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let mut keys = COMMON_KEYS.to_vec();
    keys.extend(["methods", "seeds", "iterations"]);
    let file = ConfigFile::load(args.common.config.as_deref(), &keys)?;
    let all = Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
    let methods: Vec<Method> = parse_list(&file.pick(args.methods.clone(), "methods", all)?, "method")?;
    let seeds: Vec<u64> = parse_list(&file.pick(args.seeds.clone(), "seeds", "0,1,2,3,4".into())?, "seed")?;
    let t_values: Vec<usize> = parse_list(&file.pick(args.iterations.clone(), "iterations", "10".into())?, "iterations")?;
    if methods.is_empty() || seeds.is_empty() || t_values.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let r = resolve_common(&args.common, &file, methods[0], t_values[0])?;
    for &t in &t_values {
        PipelineConfig { iterations: t, ..r.config }.validate()?;
    }
    let data = load_pair(&r)?;
    ensure_dir(&r.out)?;
    let task = Task {
        name: &r.task,
        source: &data.source,
        target: &data.target,
        classes: data.meta.classes,
        truth: truth_opt(&data.truth),
    };
    let (report, traces) = run_ablation(task, &methods, &seeds, &t_values, &r.config)?;
    write(&r.out, "report.csv", &report.to_csv())?;
    write(&r.out, "report.md", &report.to_markdown())?;
    write(&r.out, "trace.jsonl", &format_traces(traces.iter().flatten()))?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn cmd_benchgen(args: &BenchArgs) -> Result<()> {
    let keys = [
        "classes",
        "dim",
        "per-class",
        "target-per-class",
        "imbalance",
        "centroid-scale",
        "spread",
        "translation",
        "rotation",
        "covariance-scale",
        "seed",
        "out",
    ];
    let file = ConfigFile::load(args.config.as_deref(), &keys)?;
    let d = BenchmarkSpec::default();
    let classes = file.pick(args.classes, "classes", d.classes)?;
    let per_class = file.pick(args.per_class, "per-class", d.source_counts.0[0])?;
    let target_per_class = file.pick(args.target_per_class, "target-per-class", per_class)?;
    let imbalance = file.pick(args.imbalance, "imbalance", 1.0)?;
    if !(imbalance >= 1.0 && imbalance.is_finite()) {
        return Err(Error::Config(format!("imbalance must be a finite ratio >= 1, got {imbalance}")));
    }
    let spec = BenchmarkSpec {
        classes,
        dim: file.pick(args.dim, "dim", d.dim)?,
        source_counts: ClassCounts::uniform(classes, per_class),
        target_counts: if imbalance == 1.0 {
            ClassCounts::uniform(classes, target_per_class)
        } else {
            ClassCounts::imbalanced(classes, target_per_class, imbalance)
        },
        centroid_scale: file.pick(args.centroid_scale, "centroid-scale", d.centroid_scale)?,
        spread: file.pick(args.spread, "spread", d.spread)?,
        translation: file.pick(args.translation, "translation", d.translation)?,
        rotation: file.pick(args.rotation, "rotation", d.rotation)?,
        covariance_scale: file.pick(args.covariance_scale, "covariance-scale", d.covariance_scale)?,
        seed: file.pick(args.seed, "seed", d.seed)?,
    };
    spec.validate()?;
    let out = file.pick(args.out.clone(), "out", PathBuf::from("."))?;
    ensure_dir(&out)?;
    let bench = generate_benchmark(&spec)?;
    save_feature_dataset(out.join("source.csv"), &bench.source_rows(), spec.meta())?;
    save_feature_dataset(out.join("target.csv"), &bench.target_rows(), spec.meta())?;
    println!(
        "wrote {} source and {} target samples to {}",
        bench.source.len(),
        bench.target.len(),
        out.display()
    );
    Ok(())
}

/// Exit status for an error: 2 for bad flags or settings, 1 for everything
/// else (unreadable or invalid data).
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, false),
        Command::Project(a) => cmd_run(a, true),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Benchgen(a) => cmd_benchgen(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let f = ConfigFile::parse("# comment\nseed = 7\nlatent_dim=3  # trailing\n\n", COMMON_KEYS).unwrap();
        assert_eq!(f.pick(None, "seed", 0u64).unwrap(), 7);
        assert_eq!(f.pick(Some(9), "seed", 0u64).unwrap(), 9);
        assert_eq!(f.pick(None, "latent-dim", 64usize).unwrap(), 3);
        assert_eq!(f.pick(None, "epochs", 100usize).unwrap(), 100);
        assert!(matches!(ConfigFile::parse("bogus = 1", COMMON_KEYS), Err(Error::Config(_))));
        assert!(matches!(ConfigFile::parse("seed 1", COMMON_KEYS), Err(Error::Config(_))));
        let bad = ConfigFile::parse("seed = x", COMMON_KEYS).unwrap();
        assert!(matches!(bad.pick(None, "seed", 0u64), Err(Error::Config(_))));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<u64>("0, 1,2,", "seed").unwrap(), vec![0, 1, 2]);
        assert!(parse_list::<Method>("naive-spl,nope", "method").is_err());
    }
}
