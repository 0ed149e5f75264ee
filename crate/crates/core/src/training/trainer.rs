use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{categorical_cross_entropy, l2_penalty, softmax_cross_entropy_grad, L2Convention};
use crate::data::{one_hot, shuffled, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::{Layer, Mode, Model, Trace};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    /// Loss/accuracy rows only.
    #[default]
    Metrics,
    /// Rows plus per-parameter weight and gradient statistics.
    Stats,
    /// Stats plus a checkpoint after every epoch (written by the caller).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 weight on the output layer kernel only.
    pub l2_lambda: f64,
    #[serde(default)]
    pub l2_convention: L2Convention,
    pub seed: u64,
    #[serde(default)]
    pub log_level: LogLevel,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Evaluate the train split every epoch (the val and test splits always are).
    #[serde(default = "yes")]
    pub eval_train: bool,
    /// Batch size used for evaluation passes.
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

fn yes() -> bool {
    true
}

fn default_eval_batch() -> usize {
    250
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            l2_lambda: 1e-3,
            l2_convention: L2Convention::Full,
            seed: 0,
            log_level: LogLevel::Metrics,
            adam: AdamConfig::default(),
            eval_train: true,
            eval_batch_size: default_eval_batch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::Config(format!(
                "batch size {} must be in 1..={train_len}",
                self.batch_size
            )));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval batch size must be positive".into()));
        }
        if self.l2_lambda.is_nan() || self.l2_lambda < 0.0 {
            return Err(Error::Config("l2 lambda must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// 1-based.
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub error: f64,
}

/// Summary statistics of one parameter tensor and its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub epoch: usize,
    pub param: String,
    pub weight_mean: f64,
    pub weight_std: f64,
    pub weight_l2: f64,
    pub grad_mean: f64,
    pub grad_std: f64,
    pub grad_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
    #[serde(default)]
    pub stats: Vec<ParamStats>,
}

impl RunRecord {
    pub fn final_row(&self, split: Split) -> Option<&MetricRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }

    pub fn epochs(&self) -> usize {
        self.rows.iter().map(|r| r.epoch).max().unwrap_or(0)
    }
}

/// Loss, analytic gradients (registry order) and the forward trace for one batch.
pub struct LossAndGrads {
    pub loss: f64,
    pub data_loss: f64,
    pub grads: Vec<Tensor>,
    pub trace: Trace,
}

/// Objective used for training: mean cross-entropy of a softmax-terminated
/// model plus the L2 penalty on the output kernel.
pub fn loss_and_grads(
    model: &Model,
    x: &Tensor,
    onehot: &Tensor,
    mode: Mode<'_>,
    l2_lambda: f64,
    l2_convention: L2Convention,
) -> Result<LossAndGrads> {
    let n_layers = model.layers().len();
    if !matches!(model.layers().last(), Some(Layer::Softmax)) {
        return Err(Error::InvalidArgument(
            "model must end with a softmax layer".into(),
        ));
    }
    let trace = model.forward(x, mode)?;
    let probs = trace.output();
    let data_loss = categorical_cross_entropy(probs, onehot)?;
    let dlogits = softmax_cross_entropy_grad(probs, onehot)?;
    let mut grads = model.backward(&trace, dlogits, n_layers - 1)?;
    let mut loss = data_loss;
    if l2_lambda > 0.0 {
        if let Some(k) = model.output_kernel_index() {
            let (pen, g) = l2_penalty(model.params()[k], l2_lambda, l2_convention);
            loss += pen;
            grads[k].axpy(1.0, &g)?;
        }
    }
    Ok(LossAndGrads {
        loss,
        data_loss,
        grads,
        trace,
    })
}

/// L2 penalty currently carried by the model's output kernel.
pub fn regularisation(model: &Model, lambda: f64, convention: L2Convention) -> f64 {
    match model.output_kernel_index() {
        Some(k) if lambda > 0.0 => l2_penalty(model.params()[k], lambda, convention).0,
        _ => 0.0,
    }
}

/// Eval-mode loss (cross-entropy plus L2 penalty) and accuracy over a split.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    split: Split,
    batch_size: usize,
    l2_lambda: f64,
    l2_convention: L2Convention,
) -> Result<(f64, f64)> {
    let idx = data.split(split);
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("{split} split is empty")));
    }
    let k = data.num_classes();
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = data.images(chunk);
        let labels = data.labels_of(chunk);
        let probs = model.predict(&x)?;
        total_loss += categorical_cross_entropy(&probs, &one_hot(&labels, k)?)? * chunk.len() as f64;
        for (row, &l) in probs.data().chunks_exact(k).zip(&labels) {
            if argmax(row) == l {
                correct += 1;
            }
        }
    }
    let n = idx.len() as f64;
    Ok((
        total_loss / n + regularisation(model, l2_lambda, l2_convention),
        correct as f64 / n,
    ))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Passed to the per-epoch observer of [`train_run_with`].
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub rows: &'a [MetricRow],
    pub stats: &'a [ParamStats],
    pub model: &'a Model,
}

pub fn train_run(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    train_run_with(model, data, cfg, |_| Ok(()))
}

/// Trains for `cfg.epochs` epochs, evaluating every split after each epoch.
///
/// Each epoch shuffles the train split with the run's shuffle stream, then
/// takes one Adam step per mini-batch (the last batch may be smaller).
/// Dropout masks come from a separate stream and initialisation is left to
/// the caller, so batch size changes do not perturb either.
///
/// A non-finite batch loss aborts with [`Error::Diverged`].
pub fn train_run_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<RunRecord> {
    let mut record = RunRecord::default();
    if cfg.epochs == 0 {
        return Ok(record);
    }
    let train_idx = data.split(Split::Train);
    cfg.validate(train_idx.len())?;
    let k = data.num_classes();
    if model.output_shape() != [k] {
        return Err(Error::Shape(format!(
            "model outputs {:?} but dataset has {k} classes",
            model.output_shape()
        )));
    }
    let names: Vec<String> = model.registry().into_iter().map(|p| p.name).collect();
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut adam = Adam::new(cfg.adam);

    for epoch in 1..=cfg.epochs {
        let order = shuffled(train_idx, &mut shuffle_rng);
        let mut last_grads = None;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.images(batch);
            let y = one_hot(&data.labels_of(batch), k)?;
            let out = loss_and_grads(
                model,
                &x,
                &y,
                Mode::Train(&mut dropout_rng),
                cfg.l2_lambda,
                cfg.l2_convention,
            )?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: out.loss,
                });
            }
            adam.step(&mut model.params_mut(), &out.grads, &names)?;
            model.project_constraints();
            last_grads = Some(out.grads);
        }

        let first = record.rows.len();
        for split in Split::ALL {
            if split == Split::Train && !cfg.eval_train {
                continue;
            }
            if data.split(split).is_empty() {
                continue;
            }
            let (loss, accuracy) = evaluate(
                model,
                data,
                split,
                cfg.eval_batch_size,
                cfg.l2_lambda,
                cfg.l2_convention,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            record.rows.push(MetricRow {
                epoch,
                split,
                loss,
                accuracy,
                error: 1.0 - accuracy,
            });
        }
        let first_stat = record.stats.len();
        if cfg.log_level != LogLevel::Metrics {
            if let Some(grads) = &last_grads {
                for ((name, w), g) in names.iter().zip(model.params()).zip(grads) {
                    let (wm, ws) = mean_std(w.data());
                    let (gm, gs) = mean_std(g.data());
                    record.stats.push(ParamStats {
                        epoch,
                        param: name.clone(),
                        weight_mean: wm,
                        weight_std: ws,
                        weight_l2: w.l2_norm(),
                        grad_mean: gm,
                        grad_std: gs,
                        grad_l2: g.l2_norm(),
                    });
                }
            }
        }
        observer(&EpochReport {
            epoch,
            rows: &record.rows[first..],
            stats: &record.stats[first_stat..],
            model,
        })?;
    }
    Ok(record)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
