//! Softmax classifier over feature vectors: a single affine map
//! `d -> C` followed by softmax, trained with cross-entropy and Adam.

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataio::LabelledSample;
use crate::error::{Error, Result};
use crate::tensor::{cross_entropy_loss, softmax, softmax_rows, Adam, AdamConfig, DenseNet, Matrix, RngStream};

const CHECKPOINT_KIND: &str = "classifier";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    net: DenseNet,
    class_count: usize,
    feature_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

/// Mean cross-entropy before the first and after the last epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLoss {
    pub initial: f64,
    pub last: f64,
}

impl ClassifierParams {
    /// Wraps an existing single-layer net `d -> C`.
    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.layers().len() != 1 {
            return Err(Error::Config("classifier net must be a single affine layer".into()));
        }
        let class_count = net.output_dim();
        if class_count < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {class_count}")));
        }
        Ok(ClassifierParams {
            feature_dim: net.input_dim(),
            class_count,
            net,
        })
    }

    /// Glorot-initialised parameters.
    pub fn init(feature_dim: usize, class_count: usize, rng: &mut RngStream) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {class_count}")));
        }
        ClassifierParams::from_net(DenseNet::mlp(&[feature_dim, class_count], 0.0, rng)?)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim {
            return Err(Error::Shape(format!(
                "classifier expects dim {}, got {}",
                self.feature_dim,
                features.cols()
            )));
        }
        let mut unused = RngStream::new(0, "classifier/eval");
        Ok(self.net.forward(features, false, &mut unused)?.0)
    }

    pub fn to_json(&self) -> Result<String> {
        checkpoint::to_json(CHECKPOINT_KIND, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: ClassifierParams = checkpoint::from_json(CHECKPOINT_KIND, text)?;
        ClassifierParams::from_net(p.net)
    }
}

fn check_train_set(train_set: &[LabelledSample], class_count: usize) -> Result<usize> {
    let first = train_set.first().ok_or(Error::Empty("training set"))?;
    let dim = first.features.len();
    for s in train_set {
        if s.features.len() != dim {
            return Err(Error::Shape(format!(
                "sample {} has dim {}, expected {dim}",
                s.id,
                s.features.len()
            )));
        }
        if s.label >= class_count {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: class_count,
            });
        }
    }
    Ok(dim)
}

/// Trains from scratch on `train_set`. Initialisation and per-epoch
/// shuffling draw from `stream/init` and `stream/shuffle`; the set is first
/// sorted by [`LabelledSample::sort_key`], so input order does not matter.
pub fn train_classifier_with_stream(
    train_set: &[LabelledSample],
    class_count: usize,
    config: &TrainConfig,
    stream: &RngStream,
) -> Result<(ClassifierParams, TrainingLoss)> {
    config.validate()?;
    let dim = check_train_set(train_set, class_count)?;

    let mut order: Vec<&LabelledSample> = train_set.iter().collect();
    order.sort_by_key(|s| s.sort_key());
    let features = Matrix::from_rows(dim, order.iter().map(|s| s.features.as_slice()))?;
    let labels: Vec<usize> = order.iter().map(|s| s.label).collect();

    let mut params = ClassifierParams::init(dim, class_count, &mut stream.derive("init"))?;
    let mut shuffle = stream.derive("shuffle");
    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &params.net.layers().iter().flat_map(|l| [l.weight.data().len(), l.bias.len()]).collect::<Vec<_>>(),
    );

    let initial = mean_loss_on(&params, &features, &labels)?;
    let n = labels.len();
    let mut idx: Vec<usize> = (0..n).collect();
    // Dropout is zero, so train-mode forward passes never draw from this.
    let mut no_dropout = stream.derive("dropout");
    for _ in 0..config.epochs {
        shuffle.shuffle(&mut idx);
        for batch in idx.chunks(config.batch_size) {
            let x = Matrix::from_rows(dim, batch.iter().map(|&i| features.row(i)))?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, tape) = params.net.forward(&x, true, &mut no_dropout)?;
            let (_, grad) = cross_entropy_loss(&softmax_rows(&logits), &y)?;
            let (grads, _) = params.net.backward(&tape, &grad)?;
            adam.step(params.net.param_slices_mut(), grads.slices())?;
        }
    }
    let last = mean_loss_on(&params, &features, &labels)?;
    Ok((params, TrainingLoss { initial, last }))
}

/// [`train_classifier_with_stream`] on the stream `(config.seed, "classifier")`.
pub fn train_classifier(
    train_set: &[LabelledSample],
    class_count: usize,
    config: &TrainConfig,
) -> Result<ClassifierParams> {
    let stream = RngStream::new(config.seed, "classifier");
    Ok(train_classifier_with_stream(train_set, class_count, config, &stream)?.0)
}

fn mean_loss_on(params: &ClassifierParams, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let probs = softmax_rows(&params.logits(features)?);
    Ok(cross_entropy_loss(&probs, labels)?.0)
}

/// Mean cross-entropy of `params` on a labelled set.
pub fn mean_loss(params: &ClassifierParams, set: &[LabelledSample]) -> Result<f64> {
    let dim = check_train_set(set, params.class_count)?;
    let x = Matrix::from_rows(dim, set.iter().map(|s| s.features.as_slice()))?;
    let y: Vec<usize> = set.iter().map(|s| s.label).collect();
    mean_loss_on(params, &x, &y)
}

/// Argmax class and its softmax probability per row. Ties go to the lower
/// class index.
pub fn predict_with_confidence(params: &ClassifierParams, features: &Matrix) -> Result<Vec<Prediction>> {
    let logits = params.logits(features)?;
    Ok(logits
        .iter_rows()
        .map(|row| {
            let p = softmax(row);
            let mut best = 0;
            for (c, &v) in p.iter().enumerate().skip(1) {
                if v > p[best] {
                    best = c;
                }
            }
            Prediction {
                class: best,
                confidence: p[best],
            }
        })
        .collect())
}

/// Fraction of correctly predicted samples.
pub fn evaluate(params: &ClassifierParams, labelled_set: &[LabelledSample]) -> Result<f64> {
    if labelled_set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let x = Matrix::from_rows(params.feature_dim, labelled_set.iter().map(|s| s.features.as_slice()))?;
    let predicted: Vec<usize> = predict_with_confidence(params, &x)?.iter().map(|p| p.class).collect();
    let truth: Vec<usize> = labelled_set.iter().map(|s| s.label).collect();
    accuracy(&predicted, &truth)
}

/// `correct / total` for aligned prediction and truth vectors.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}
