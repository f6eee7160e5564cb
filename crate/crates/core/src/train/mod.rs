//! Optimization, evaluation and cross-validation.

mod adam;
mod classifier;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, NlmdaNet};
use crate::pipeline::{class_counts, stratified_holdout, stratified_kfold, EpochSet};
use crate::tensor::{Mode, Tape, Tensor, Var};

pub use adam::{Adam, AdamConfig};
pub use classifier::{Classifier, LogisticModel};
pub use metrics::{ci95_halfwidth, mean, FoldResult, RunMetrics};

/// Samples per forward pass when evaluating.
const EVAL_BATCH: usize = 64;

/// Share of each cross-validation training part held out for model selection.
pub const CV_VALIDATION_PERCENT: u32 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
    /// End training once validation accuracy reaches 1.0. No later epoch can
    /// replace such an epoch as the selected one, so the returned parameters
    /// are the same as those of a full run.
    pub stop_at_perfect_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
            stop_at_perfect_val: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, uses_batchnorm: bool) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || (uses_batchnorm && self.batch_size < 2) {
            return Err(Error::Config(format!(
                "batch size {} is too small{}",
                self.batch_size,
                if uses_batchnorm {
                    " for batch norm"
                } else {
                    ""
                }
            )));
        }
        Ok(())
    }
}

/// Per-epoch record of one [`fit`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    /// Mean training cross-entropy per sample, one entry per completed epoch.
    pub loss_curve: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl FitReport {
    pub fn best_val_accuracy(&self) -> f64 {
        self.val_accuracy[self.best_epoch]
    }
}

fn param_vars(tape: &mut Tape, model: &impl Classifier, trainable: bool) -> Vec<Var> {
    model
        .parameters()
        .into_iter()
        .map(|t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

/// Logits `[n, classes]` in evaluation mode.
pub fn predict_logits<M: Classifier>(model: &mut M, x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let mut out = Vec::with_capacity(n * model.n_classes());
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let mut tape = Tape::new();
        let vars = param_vars(&mut tape, model, false);
        let xv = tape.constant(x.select_rows(&idx)?);
        let logits = model.forward(&mut tape, &vars, xv, Mode::Eval)?;
        out.extend_from_slice(tape.value(logits).data());
    }
    Tensor::new([n, model.n_classes()], out)
}

/// Index of the largest logit in each row; ties go to the lower index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

/// Fraction of epochs whose predicted class equals the label.
pub fn evaluate<M: Classifier>(model: &mut M, set: &EpochSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let pred = argmax_rows(&predict_logits(model, &set.epochs)?);
    let correct = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / set.len() as f64)
}

/// Mini-batch index lists for one epoch. A trailing batch of one is dropped
/// when the model normalizes over the batch.
fn batches(order: &[usize], size: usize, drop_single: bool) -> Vec<&[usize]> {
    order
        .chunks(size)
        .filter(|b| !(drop_single && b.len() == 1))
        .collect()
}

/// One optimizer step on a batch; returns the mean loss.
fn train_step<M: Classifier>(
    model: &mut M,
    adam: &mut Adam,
    set: &EpochSet,
    idx: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = param_vars(&mut tape, model, true);
    let x = tape.constant(set.epochs.select_rows(idx)?);
    let labels: Vec<usize> = idx.iter().map(|&i| set.labels[i]).collect();
    let logits = model.forward(&mut tape, &vars, x, Mode::Train)?;
    let loss = tape.cross_entropy(logits, &labels)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("training loss became {value}")));
    }
    tape.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec()))
        })
        .collect();
    adam.step(&mut model.parameters_mut(), &grads)?;
    Ok(value)
}

/// Trains with Adam on shuffled mini-batches, scoring `val` after every epoch.
/// On return `model` holds the parameters of the epoch with the highest
/// validation accuracy, the earliest such epoch on ties.
pub fn fit<M: Classifier + Clone>(
    model: &mut M,
    train: &EpochSet,
    val: &EpochSet,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate(model.uses_batchnorm())?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be non-empty",
        ));
    }
    if class_counts(&train.labels)
        .iter()
        .filter(|&&n| n > 0)
        .count()
        < 2
    {
        return Err(Error::invalid("training set contains a single class"));
    }
    if let Some(&l) = train
        .labels
        .iter()
        .chain(&val.labels)
        .find(|&&l| l >= model.n_classes())
    {
        return Err(Error::invalid(format!(
            "label {l} is out of range for {} classes",
            model.n_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, &model.parameters())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = FitReport::default();
    let mut best: Option<(f64, M)> = None;
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut seen = 0;
        for idx in batches(&order, cfg.batch_size, model.uses_batchnorm()) {
            total += train_step(model, &mut adam, train, idx)? * idx.len() as f64;
            seen += idx.len();
        }
        report.loss_curve.push(total / seen as f64);
        let acc = evaluate(model, val)?;
        report.val_accuracy.push(acc);
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, model.clone()));
            report.best_epoch = epoch;
        }
        if cfg.stop_at_perfect_val && acc >= 1.0 {
            break;
        }
    }
    *model = best.expect("at least one epoch").1;
    Ok(report)
}

/// Stratified `k`-fold cross-validation. For each fold a model is built by
/// `make(fold, n_fit)`, where `n_fit` is the number of epochs it trains on
/// after a stratified validation share is set aside, then scored on the fold.
pub fn cross_validate_with<M, F>(
    set: &EpochSet,
    k: usize,
    cfg: &TrainConfig,
    jobs: usize,
    make: F,
) -> Result<RunMetrics>
where
    M: Classifier + Clone + Send,
    F: Fn(usize, usize) -> Result<M> + Sync,
{
    let plan = stratified_kfold(&set.labels, k, cfg.seed)?;
    let run_fold = |fold: usize| -> Result<FoldResult> {
        let test = set.subset(&plan.folds[fold])?;
        let (fit_idx, val_idx) = stratified_holdout(
            &plan.train_indices(fold),
            &set.labels,
            CV_VALIDATION_PERCENT,
            cfg.seed ^ fold as u64,
        )?;
        let mut model = make(fold, fit_idx.len())?;
        let report = fit(
            &mut model,
            &set.subset(&fit_idx)?,
            &set.subset(&val_idx)?,
            cfg,
        )?;
        Ok(FoldResult {
            accuracy: evaluate(&mut model, &test)?,
            report,
        })
    };
    let folds: Vec<FoldResult> = if jobs <= 1 {
        (0..k).map(run_fold).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| (0..k).into_par_iter().map(run_fold).collect::<Result<_>>())?
    };
    Ok(RunMetrics::from_folds(folds))
}

/// Cross-validates the network, deriving each fold's pooling width from its
/// training-set size.
pub fn cross_validate(
    set: &EpochSet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    k: usize,
    jobs: usize,
) -> Result<RunMetrics> {
    cross_validate_with(set, k, cfg, jobs, |_, n_fit| {
        NlmdaNet::new(ModelConfig {
            n_train: n_fit,
            ..model.clone()
        })
    })
}

/// Trains multinomial logistic regression on flattened epochs with
/// `train` (a stratified tenth held out for selection) and scores `test`.
pub fn baseline_logistic(train: &EpochSet, test: &EpochSet, cfg: &TrainConfig) -> Result<f64> {
    let n_classes = class_counts(&train.labels).len().max(2);
    let idx: Vec<usize> = (0..train.len()).collect();
    let (fit_idx, val_idx) =
        stratified_holdout(&idx, &train.labels, CV_VALIDATION_PERCENT, cfg.seed)?;
    let mut model = LogisticModel::new(train.channels(), train.samples(), n_classes)?;
    fit(
        &mut model,
        &train.subset(&fit_idx)?,
        &train.subset(&val_idx)?,
        cfg,
    )?;
    evaluate(&mut model, test)
}
