//! Linear evaluation of frozen representations.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Dataset, DatasetSplits};
use crate::error::{Error, Result};
use crate::nn::{stack_batch, Encoder};

/// Samples per encoder forward pass when extracting features.
const FEATURE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Accuracy is measured every `eval_every` iterations and after the last.
    pub eval_every: usize,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 0.1,
            eval_every: 10,
            l2: 0.0,
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxProbe {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    mean: Array1<f64>,
    std: Array1<f64>,
    /// Classes with at least one training example; others are never predicted.
    allowed: Vec<bool>,
}

impl SoftmaxProbe {
    fn standardize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x - &self.mean;
        z /= &self.std;
        z
    }

    fn logits_std(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.weights) + &self.bias
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let z = self.standardize(x);
        self.argmax(&self.logits_std(&z))
    }

    fn argmax(&self, logits: &Array2<f64>) -> Vec<usize> {
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = None;
                for (k, &v) in row.iter().enumerate() {
                    if !self.allowed[k] {
                        continue;
                    }
                    match best {
                        Some((_, bv)) if bv >= v => {}
                        _ => best = Some((k, v)),
                    }
                }
                best.map_or(0, |(k, _)| k)
            })
            .collect()
    }
}

/// Accuracy and macro-F1 of one prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Macro-F1 over the classes that appear in either `truth` or `pred`.
pub fn score(truth: &[usize], pred: &[usize], classes: usize) -> Scores {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let mut f1_sum = 0.0;
    let mut present = 0;
    for k in 0..classes {
        if tp[k] + fp[k] + fn_[k] == 0 {
            continue;
        }
        present += 1;
        f1_sum += 2.0 * tp[k] as f64 / (2 * tp[k] + fp[k] + fn_[k]) as f64;
    }
    Scores {
        accuracy: correct as f64 / truth.len().max(1) as f64,
        macro_f1: if present == 0 { 0.0 } else { f1_sum / present as f64 },
    }
}

/// Scores of one monitored set at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub iteration: usize,
    pub scores: Vec<Scores>,
}

/// Fits a softmax classifier by full-batch gradient descent from zero
/// initialization, scoring every set in `monitor` along the way.
pub fn fit_probe(
    x: &Array2<f64>,
    y: &[usize],
    classes: usize,
    config: &ProbeConfig,
    monitor: &[(&Array2<f64>, &[usize])],
) -> Result<(SoftmaxProbe, Vec<ProbeTrace>)> {
    let (n, dim) = x.dim();
    if n == 0 || n != y.len() {
        return Err(Error::shape("probe training labels", n, y.len()));
    }
    if let Some(&bad) = y.iter().find(|&&k| k >= classes) {
        return Err(Error::Dataset(format!("label {bad} outside {classes} classes")));
    }
    if !(config.lr > 0.0) || config.eval_every == 0 {
        return Err(Error::InvalidArgument("probe needs lr > 0 and eval_every >= 1".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x
        .var_axis(Axis(0), 0.0)
        .mapv(|v| v.max(super::dataset::VARIANCE_FLOOR).sqrt());
    let mut allowed = vec![false; classes];
    for &k in y {
        allowed[k] = true;
    }
    let mut probe = SoftmaxProbe {
        weights: Array2::zeros((dim, classes)),
        bias: Array1::zeros(classes),
        mean,
        std,
        allowed,
    };
    let z = probe.standardize(x);
    let monitored: Vec<Array2<f64>> = monitor.iter().map(|(m, _)| probe.standardize(m)).collect();
    let mut onehot = Array2::<f64>::zeros((n, classes));
    for (i, &k) in y.iter().enumerate() {
        onehot[[i, k]] = 1.0;
    }
    let mut traces = Vec::new();
    let mut record = |probe: &SoftmaxProbe, iteration: usize| {
        let scores = monitored
            .iter()
            .zip(monitor)
            .map(|(mz, (_, my))| score(my, &probe.argmax(&probe.logits_std(mz)), classes))
            .collect();
        traces.push(ProbeTrace { iteration, scores });
    };
    for it in 1..=config.iterations {
        let mut p = probe.logits_std(&z);
        for mut row in p.axis_iter_mut(Axis(0)) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        p -= &onehot;
        p /= n as f64;
        let mut gw = z.t().dot(&p);
        if config.l2 > 0.0 {
            gw.scaled_add(config.l2, &probe.weights);
        }
        let gb = p.sum_axis(Axis(0));
        probe.weights.scaled_add(-config.lr, &gw);
        probe.bias.scaled_add(-config.lr, &gb);
        if it % config.eval_every == 0 || it == config.iterations {
            record(&probe, it);
        }
    }
    if config.iterations == 0 {
        record(&probe, 0);
    }
    Ok((probe, traces))
}

/// Representations of every sample, computed in eval mode.
pub fn extract_features(encoder: &Encoder, data: &Dataset) -> Result<Array2<f64>> {
    let mut enc = encoder.clone();
    let mut out: Option<Array2<f64>> = None;
    let samples = data.samples();
    for (c, chunk) in samples.chunks(FEATURE_CHUNK).enumerate() {
        let arrays: Vec<_> = chunk.iter().map(|s| s.values()).collect();
        let batch = stack_batch(&arrays)?;
        let rep = enc.forward(&batch, false)?;
        let o = out.get_or_insert_with(|| Array2::zeros((samples.len(), rep.ncols())));
        let start = c * FEATURE_CHUNK;
        o.slice_mut(s![start..start + chunk.len(), ..]).assign(&rep);
    }
    out.ok_or_else(|| Error::Dataset("no samples to embed".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEvalReport {
    /// Best test accuracy over all evaluation points, with its macro-F1.
    pub best_test: Scores,
    pub best_iteration: usize,
    /// Test scores at the evaluation point with the best validation accuracy.
    pub val_selected_test: Option<Scores>,
    pub val_selected_iteration: Option<usize>,
    pub final_test: Scores,
    pub train: Scores,
    /// Classes present in the test split but absent from training.
    pub unseen_classes: Vec<usize>,
    /// Pretraining epoch whose encoder was evaluated.
    pub encoder_epoch: usize,
}

/// Trains a linear classifier on frozen representations of the training
/// split and scores the test split. Uses the validation-selected encoder
/// snapshot when the checkpoint has one.
pub fn linear_evaluate(
    checkpoint: &Checkpoint,
    splits: &DatasetSplits,
    config: &ProbeConfig,
) -> Result<LinearEvalReport> {
    let (encoder, epoch) = match &checkpoint.selected {
        Some(sel) => (&sel.encoder, sel.epoch),
        None => (&checkpoint.model.encoder, checkpoint.epoch),
    };
    evaluate_encoder(encoder, splits, config).map(|mut r| {
        r.encoder_epoch = epoch;
        r
    })
}

pub fn evaluate_encoder(
    encoder: &Encoder,
    splits: &DatasetSplits,
    config: &ProbeConfig,
) -> Result<LinearEvalReport> {
    let test = splits
        .test
        .as_ref()
        .ok_or_else(|| Error::Dataset("linear evaluation needs a test split".into()))?;
    let classes = splits.train.classes().max(test.classes());
    let train_y = splits.train.require_labels()?;
    let test_y = test.require_labels()?;
    let train_x = extract_features(encoder, &splits.train)?;
    let test_x = extract_features(encoder, test)?;
    let val = match &splits.val {
        Some(v) => Some((extract_features(encoder, v)?, v.require_labels()?)),
        None => None,
    };
    evaluate_features(&train_x, &train_y, &test_x, &test_y, val.as_ref().map(|(x, y)| (x, y.as_slice())), classes, config)
}

/// [`evaluate_encoder`] on precomputed features.
pub fn evaluate_features(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    test_y: &[usize],
    val: Option<(&Array2<f64>, &[usize])>,
    classes: usize,
    config: &ProbeConfig,
) -> Result<LinearEvalReport> {
    let mut monitor: Vec<(&Array2<f64>, &[usize])> = vec![(test_x, test_y), (train_x, train_y)];
    if let Some(v) = val {
        monitor.push(v);
    }
    let (_, traces) = fit_probe(train_x, train_y, classes, config, &monitor)?;
    let best = traces
        .iter()
        .fold(None::<&ProbeTrace>, |acc, t| match acc {
            Some(a) if a.scores[0].accuracy >= t.scores[0].accuracy => Some(a),
            _ => Some(t),
        })
        .expect("at least one evaluation point");
    let selected = val.map(|_| {
        traces
            .iter()
            .fold(None::<&ProbeTrace>, |acc, t| match acc {
                Some(a) if a.scores[2].accuracy >= t.scores[2].accuracy => Some(a),
                _ => Some(t),
            })
            .expect("at least one evaluation point")
    });
    let last = traces.last().expect("at least one evaluation point");
    let mut seen = vec![false; classes];
    for &k in train_y {
        seen[k] = true;
    }
    let mut unseen: Vec<usize> = test_y.iter().copied().filter(|&k| !seen[k]).collect();
    unseen.sort_unstable();
    unseen.dedup();
    Ok(LinearEvalReport {
        best_test: best.scores[0],
        best_iteration: best.iteration,
        val_selected_test: selected.map(|t| t.scores[0]),
        val_selected_iteration: selected.map(|t| t.iteration),
        final_test: last.scores[0],
        train: last.scores[1],
        unseen_classes: unseen,
        encoder_epoch: 0,
    })
}
