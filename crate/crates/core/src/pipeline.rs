//! The adaptation loop and its four variants.
//!
//! Every variant trains a source-only classifier, pseudo-labels all target
//! samples, and then for `k = 1..=T` selects a subset of the pseudo-labelled
//! targets, retrains from scratch on source plus selection, and relabels all
//! targets. The variants differ only in how the subset is chosen and whether
//! norm-VAE features are added:
//!
//! | method           | selection       | synthetic features |
//! |------------------|-----------------|--------------------|
//! | `baseline`       | all             | no                 |
//! | `naive-spl-star` | proportional    | no                 |
//! | `naive-spl`      | balanced        | no                 |
//! | `norm-vae-spl`   | balanced        | per `augment`      |

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_classifier_with_stream, ClassifierParams, TrainConfig};
use crate::dataio::{Domain, GroundTruth, LabelledSample, Origin, TargetSample};
use crate::error::{Error, Result};
use crate::norm_vae::{generate_batch, train_norm_vae_with_stream, VaeConfig, VaeFit};
use crate::pseudo_label::{
    assign_pseudo_labels, class_quotas, predicted_counts, select_subset, PseudoLabelRecord, QuotaRule,
};
use crate::report::{ExperimentReport, ReportRow};
use crate::tensor::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "naive-spl-star")]
    NaiveSplStar,
    #[serde(rename = "naive-spl")]
    NaiveSpl,
    #[serde(rename = "norm-vae-spl")]
    NormVaeSpl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::NaiveSplStar, Method::NaiveSpl, Method::NormVaeSpl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::NaiveSplStar => "naive-spl-star",
            Method::NaiveSpl => "naive-spl",
            Method::NormVaeSpl => "norm-vae-spl",
        }
    }

    pub fn quota_rule(self) -> QuotaRule {
        match self {
            Method::Baseline => QuotaRule::All,
            Method::NaiveSplStar => QuotaRule::Proportional,
            Method::NaiveSpl | Method::NormVaeSpl => QuotaRule::Balanced,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Which synthetic features norm-VAE-SPL adds to the classifier's training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augment {
    /// None; the run reduces to naive-SPL.
    #[serde(rename = "off")]
    Off,
    /// `x̂^{st}` for every source sample and `x̂^{ts}` for every selected
    /// target sample.
    #[serde(rename = "cross")]
    Cross,
    /// `Cross` plus the same-domain reconstructions `x̂^s` and `x̂^t`.
    #[serde(rename = "cross+recon")]
    CrossRecon,
}

impl Augment {
    pub fn name(self) -> &'static str {
        match self {
            Augment::Off => "off",
            Augment::Cross => "cross",
            Augment::CrossRecon => "cross+recon",
        }
    }
}

impl FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Augment::Off),
            "cross" => Ok(Augment::Cross),
            "cross+recon" => Ok(Augment::CrossRecon),
            _ => Err(Error::Config(format!("unknown augmentation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub iterations: usize,
    /// `seed` is ignored; classifier streams derive from `seed` below.
    pub classifier: TrainConfig,
    /// `seed` is ignored; VAE streams derive from `seed` below.
    pub vae: VaeConfig,
    /// Only consulted by [`Method::NormVaeSpl`].
    pub augment: Augment,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::NaiveSpl,
            iterations: 10,
            classifier: TrainConfig::default(),
            vae: VaeConfig::default(),
            augment: Augment::Cross,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        self.classifier.validate()?;
        self.vae.validate()
    }

    /// Augmentation actually applied, given the method.
    pub fn effective_augment(&self) -> Augment {
        match self.method {
            Method::NormVaeSpl => self.augment,
            _ => Augment::Off,
        }
    }
}

/// Audit record for one iteration. Accuracies are `None` without ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub method: Method,
    pub seed: u64,
    pub iteration: usize,
    pub iterations: usize,
    /// Per-class quota `N(c, k)`; empty at iteration 0.
    pub quotas: Vec<usize>,
    /// Per-class size of the selected set; empty at iteration 0.
    pub selected_per_class: Vec<usize>,
    pub synthetic_count: usize,
    pub vae_trained: bool,
    /// Accuracy of the pseudo-labels the selection was made from.
    pub pseudo_label_accuracy: Option<f64>,
    /// Accuracy of the selected pseudo-labels.
    pub selected_accuracy: Option<f64>,
    /// Target accuracy of this iteration's classifier.
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SplOutcome {
    /// Classifier trained at the last iteration.
    pub classifier: ClassifierParams,
    /// Final pseudo-labels, one per target sample in input order.
    pub predictions: Vec<PseudoLabelRecord>,
    pub traces: Vec<IterationTrace>,
    /// Selected set of every iteration, in iteration order.
    pub selections: Vec<PseudoLabelRecord>,
    /// Synthetic features used at the last iteration.
    pub last_synthetic: Vec<LabelledSample>,
}

impl SplOutcome {
    pub fn initial_accuracy(&self) -> Option<f64> {
        self.traces.first().and_then(|t| t.target_accuracy)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.traces.last().and_then(|t| t.target_accuracy)
    }

    /// Predicted class per target sample, input order.
    pub fn predicted_classes(&self) -> Vec<usize> {
        self.predictions.iter().map(|r| r.class).collect()
    }

    /// Inductive use: classify unseen target samples with the final classifier.
    pub fn predict(&self, samples: &[TargetSample]) -> Result<Vec<PseudoLabelRecord>> {
        assign_pseudo_labels(&self.classifier, samples, self.traces.len().saturating_sub(1))
    }
}

fn check_inputs(source: &[LabelledSample], target: &[TargetSample], classes: usize) -> Result<usize> {
    let dim = source.first().ok_or(Error::Empty("source set"))?.features.len();
    if target.is_empty() {
        return Err(Error::Empty("target set"));
    }
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    for s in source {
        if s.features.len() != dim {
            return Err(Error::Shape(format!("source sample {} has dim {}", s.id, s.features.len())));
        }
        if s.label >= classes {
            return Err(Error::LabelOutOfRange { label: s.label, classes });
        }
    }
    let mut ids = std::collections::HashSet::new();
    for t in target {
        if t.features.len() != dim {
            return Err(Error::Shape(format!(
                "target sample {} has dim {}, source has {dim}",
                t.id,
                t.features.len()
            )));
        }
        if !ids.insert(t.id) {
            return Err(Error::Usage(format!("duplicate target id {}", t.id)));
        }
    }
    Ok(dim)
}

fn records_accuracy(records: &[PseudoLabelRecord], truth: Option<&GroundTruth>) -> Option<f64> {
    truth?.accuracy(records.iter().map(|r| (r.sample_id, r.class)))
}

/// Runs the loop with an explicit selection rule and augmentation policy.
/// `on_trace` sees every trace as soon as it is produced.
pub fn run_spl(
    source: &[LabelledSample],
    target: &[TargetSample],
    classes: usize,
    config: &PipelineConfig,
    rule: QuotaRule,
    augment: Augment,
    truth: Option<&GroundTruth>,
    mut on_trace: impl FnMut(&IterationTrace),
) -> Result<SplOutcome> {
    config.validate()?;
    let dim = check_inputs(source, target, classes)?;
    let t_max = config.iterations;
    let root = RngStream::new(config.seed, "pipeline");
    let clf_stream = root.derive("classifier");
    let vae_stream = root.derive("norm-vae");
    let gen_stream = root.derive("generate");

    let by_id: std::collections::HashMap<u64, &TargetSample> = target.iter().map(|t| (t.id, t)).collect();

    let (mut classifier, _) = train_classifier_with_stream(source, classes, &config.classifier, &clf_stream.derive(0))?;
    let mut records = assign_pseudo_labels(&classifier, target, 0)?;
    let mut traces = Vec::with_capacity(t_max + 1);
    let trace0 = IterationTrace {
        method: config.method,
        seed: config.seed,
        iteration: 0,
        iterations: t_max,
        quotas: Vec::new(),
        selected_per_class: Vec::new(),
        synthetic_count: 0,
        vae_trained: false,
        pseudo_label_accuracy: None,
        selected_accuracy: None,
        target_accuracy: records_accuracy(&records, truth),
    };
    on_trace(&trace0);
    traces.push(trace0);

    let mut selections = Vec::new();
    let mut last_synthetic = Vec::new();
    for k in 1..=t_max {
        let quotas = class_quotas(rule, &records, classes, k, t_max)?;
        let selected = select_subset(&records, &quotas)?;
        let selected_samples: Vec<LabelledSample> = selected
            .iter()
            .map(|r| LabelledSample {
                id: r.sample_id,
                domain: Domain::Target,
                origin: Origin::Real,
                label: r.class,
                features: by_id[&r.sample_id].features.clone(),
            })
            .collect();

        let mut train_set: Vec<LabelledSample> = source.to_vec();
        train_set.extend(selected_samples.iter().cloned());

        let mut synthetic = Vec::new();
        let mut vae_trained = false;
        if augment != Augment::Off {
            let fit = train_norm_vae_with_stream(source, &selected_samples, &config.vae, &vae_stream.derive(k))?;
            if let VaeFit::Trained { params, .. } = fit {
                vae_trained = true;
                let gen = gen_stream.derive(k);
                synthetic.extend(generate_batch(&params, source, Domain::Source, Domain::Target, &gen.derive("st"))?);
                synthetic.extend(generate_batch(&params, &selected_samples, Domain::Target, Domain::Source, &gen.derive("ts"))?);
                if augment == Augment::CrossRecon {
                    synthetic.extend(generate_batch(&params, source, Domain::Source, Domain::Source, &gen.derive("ss"))?);
                    synthetic.extend(generate_batch(&params, &selected_samples, Domain::Target, Domain::Target, &gen.derive("tt"))?);
                }
            }
        }
        train_set.extend(synthetic.iter().cloned());

        let (next, _) = train_classifier_with_stream(&train_set, classes, &config.classifier, &clf_stream.derive(k))?;
        classifier = next;
        let pseudo_label_accuracy = records_accuracy(&records, truth);
        records = assign_pseudo_labels(&classifier, target, k)?;

        let trace = IterationTrace {
            method: config.method,
            seed: config.seed,
            iteration: k,
            iterations: t_max,
            quotas: quotas.iter().map(|q| q.quota).collect(),
            selected_per_class: predicted_counts(&selected, classes)?,
            synthetic_count: synthetic.len(),
            vae_trained,
            pseudo_label_accuracy,
            selected_accuracy: records_accuracy(&selected, truth),
            target_accuracy: records_accuracy(&records, truth),
        };
        on_trace(&trace);
        traces.push(trace);
        selections.extend(selected);
        last_synthetic = synthetic;
    }
    debug_assert_eq!(classifier.feature_dim(), dim);

    Ok(SplOutcome {
        classifier,
        predictions: records,
        traces,
        selections,
        last_synthetic,
    })
}

/// Balanced selection, no augmentation.
pub fn run_naive_spl(
    source: &[LabelledSample],
    target: &[TargetSample],
    classes: usize,
    config: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<SplOutcome> {
    run_spl(source, target, classes, config, QuotaRule::Balanced, Augment::Off, truth, |_| {})
}

/// Proportional selection, no augmentation.
pub fn run_naive_spl_star(
    source: &[LabelledSample],
    target: &[TargetSample],
    classes: usize,
    config: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<SplOutcome> {
    run_spl(source, target, classes, config, QuotaRule::Proportional, Augment::Off, truth, |_| {})
}

/// Every pseudo-labelled target sample is used at every iteration.
pub fn run_baseline(
    source: &[LabelledSample],
    target: &[TargetSample],
    classes: usize,
    config: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<SplOutcome> {
    run_spl(source, target, classes, config, QuotaRule::All, Augment::Off, truth, |_| {})
}

/// Balanced selection plus norm-VAE features per `config.augment`.
pub fn run_norm_vae_spl(
    source: &[LabelledSample],
    target: &[TargetSample],
    classes: usize,
    config: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<SplOutcome> {
    run_spl(source, target, classes, config, QuotaRule::Balanced, config.augment, truth, |_| {})
}

/// Dispatches on `config.method`.
pub fn run_method(
    source: &[LabelledSample],
    target: &[TargetSample],
    classes: usize,
    config: &PipelineConfig,
    truth: Option<&GroundTruth>,
    on_trace: impl FnMut(&IterationTrace),
) -> Result<SplOutcome> {
    run_spl(
        source,
        target,
        classes,
        config,
        config.method.quota_rule(),
        config.effective_augment(),
        truth,
        on_trace,
    )
}

/// One task for [`run_ablation`].
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub name: &'a str,
    pub source: &'a [LabelledSample],
    pub target: &'a [TargetSample],
    pub classes: usize,
    pub truth: Option<&'a GroundTruth>,
}

/// Runs the grid `methods × seeds × iteration counts` on `task`. Cells are
/// independent and run in parallel; rows come back in grid order
/// (method-major, then `T`, then seed). Traces are returned per cell in the
/// same order.
pub fn run_ablation(
    task: Task<'_>,
    methods: &[Method],
    seeds: &[u64],
    iteration_counts: &[usize],
    base: &PipelineConfig,
) -> Result<(ExperimentReport, Vec<Vec<IterationTrace>>)> {
    if methods.is_empty() || seeds.is_empty() || iteration_counts.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let cells: Vec<(Method, usize, u64)> = methods
        .iter()
        .flat_map(|&m| iteration_counts.iter().flat_map(move |&t| seeds.iter().map(move |&s| (m, t, s))))
        .collect();
    let results: Vec<Result<(ReportRow, Vec<IterationTrace>)>> = cells
        .par_iter()
        .map(|&(method, iterations, seed)| {
            let config = PipelineConfig {
                method,
                iterations,
                seed,
                ..*base
            };
            let out = run_method(task.source, task.target, task.classes, &config, task.truth, |_| {})?;
            let row = ReportRow {
                task: task.name.to_string(),
                method,
                seed,
                iterations,
                initial_accuracy: out.initial_accuracy(),
                final_accuracy: out.final_accuracy(),
            };
            Ok((row, out.traces))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for r in results {
        let (row, t) = r?;
        rows.push(row);
        traces.push(t);
    }
    Ok((ExperimentReport::new(rows), traces))
}

/// Stacks target features for prediction.
pub fn target_matrix(target: &[TargetSample]) -> Result<Matrix> {
    let dim = target.first().map_or(0, |t| t.features.len());
    Matrix::from_rows(dim, target.iter().map(|t| t.features.as_slice()))
}
