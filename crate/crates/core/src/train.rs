//! Training loop, (β, p) grid search and validation-accuracy model selection.
//!
//! With an auxiliary loss and β > 0, each step extracts features once, runs
//! `n_passes` dropout+head passes, and minimizes
//! `task(s̄) + β · macc(s̄, c)`. Otherwise a single dropout pass feeds the
//! task loss directly.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::losses::{compose_total_with_grad, LossValue};
use crate::math::{softmax, softmax_backward};
use crate::mc;
use crate::metrics::{CalibrationReport, PredictionBatch};
use crate::nn::{CalibratableModel, DropoutMask, Gradients};

/// One point of the (β, dropout) grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub beta: f64,
    pub dropout: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("beta{}_p{}", self.beta, self.dropout)
    }
}

/// Per-epoch training record; serialized one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Example-weighted means of the minibatch loss components.
    pub train_loss: LossValue,
    pub val_accuracy: f64,
    pub val_ece: f64,
    pub val_sce: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Result of training one grid cell.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cell: Cell,
    /// Parameters from the epoch with the highest validation accuracy.
    pub best_model: CalibratableModel,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub log: TrainLog,
}

/// Momentum SGD with L2 weight decay.
struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Array2<f64>>,
}

impl Sgd {
    fn new(model: &CalibratableModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(model).0,
        }
    }

    fn step(&mut self, model: &mut CalibratableModel, grads: &Gradients, lr: f64) {
        for ((p, g), v) in model.params_mut().into_iter().zip(&grads.0).zip(&mut self.velocity) {
            let decay = self.weight_decay;
            ndarray::Zip::from(&mut *v).and(g).and(&*p).for_each(|v, &g, &p| {
                *v = self.momentum * *v + g + decay * p;
            });
            p.scaled_add(-lr, v);
        }
    }
}

/// Loss value and parameter gradients for one minibatch.
pub fn minibatch_gradients(
    model: &CalibratableModel,
    cfg: &RunConfig,
    beta: f64,
    inputs: &Array2<f64>,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(LossValue, Gradients)> {
    let (features, cache) = model.extract_features_cached(inputs.view())?;
    let (n, d) = features.dim();
    let p = model.dropout_rate();
    let (value, grad_f, gw, gb) = if cfg.auxiliary.is_some() && beta > 0.0 {
        let masks = (0..cfg.n_passes)
            .map(|_| DropoutMask::sample(n, d, p, rng))
            .collect::<Result<Vec<_>>>()?;
        let trace = mc::estimate_with_masks(&features, model, masks)?;
        let loss = compose_total_with_grad(&cfg.task, &trace.estimate, labels, beta)?;
        let g = mc::backward(&trace, &features, model, &loss.grad_mean_confidence, &loss.grad_certainty);
        (loss.value, g.features, g.head_weight, g.head_bias)
    } else {
        let mask = DropoutMask::sample(n, d, p, rng)?;
        let logits = model.head_forward(&features, &mask);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::numeric("non-finite logits"));
        }
        let probs = softmax(logits.view());
        let task = cfg.task.evaluate(&probs, labels)?;
        let grad_logits = softmax_backward(probs.view(), task.grad.view());
        let (gf, gw, gb) = model.head_backward(&features, &mask, grad_logits.view());
        let value = LossValue {
            total: task.value,
            task_term: task.value,
            macc_term: 0.0,
            beta,
        };
        (value, gf, gw, gb)
    };
    let extractor_grads = model.extractor_backward(&cache, grad_f);
    Ok((value, model.gradients(extractor_grads, gw, gb)))
}

/// Deterministic-forward predictions for a dataset.
pub fn predict(model: &CalibratableModel, data: &Dataset) -> Result<PredictionBatch> {
    let logits = model.forward_deterministic(data.inputs.view())?;
    PredictionBatch::from_logits(logits, data.labels.clone())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains one grid cell and keeps the most accurate validation epoch
/// (ties go to the earlier epoch).
pub fn train_cell(cfg: &RunConfig, split: &DatasetSplit, cell: Cell) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = &split.train;
    if train.is_empty() || split.val.is_empty() {
        return Err(Error::domain("training and validation splits must be non-empty"));
    }
    let mut model = CalibratableModel::build(cfg.model.arch, train.shape, train.n_classes, cell.dropout, cfg.seed)?;
    let mut opt = Sgd::new(&model, cfg.optimizer.momentum, cfg.optimizer.weight_decay);
    let mut order_rng = rng_for(cfg.seed, 2);
    let mut mask_rng = rng_for(cfg.seed, 3);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, CalibratableModel)> = None;
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let mut sums = [0.0; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let inputs = train.inputs.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (value, grads) = minibatch_gradients(&model, cfg, cell.beta, &inputs, &labels, &mut mask_rng)
                .map_err(|e| abort(epoch, step, cell, e))?;
            if !value.total.is_finite() || !grads.is_finite() {
                return Err(abort(epoch, step, cell, Error::numeric(format!("non-finite loss or gradient {value:?}"))));
            }
            opt.step(&mut model, &grads, lr);
            let w = chunk.len() as f64;
            sums[0] += w * value.total;
            sums[1] += w * value.task_term;
            sums[2] += w * value.macc_term;
            step += 1;
        }
        model.set_training_step(step);
        let n = train.len() as f64;
        let val = CalibrationReport::compute(&predict(&model, &split.val)?, cfg.bins)?;
        log.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: LossValue {
                total: sums[0] / n,
                task_term: sums[1] / n,
                macc_term: sums[2] / n,
                beta: cell.beta,
            },
            val_accuracy: val.accuracy,
            val_ece: val.ece,
            val_sce: val.sce,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val.accuracy > *acc) {
            best = Some((epoch, val.accuracy, model.clone()));
        }
    }
    let (best_epoch, best_val_accuracy, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        cell,
        best_model,
        best_epoch,
        best_val_accuracy,
        log,
    })
}

fn abort(epoch: usize, step: u64, cell: Cell, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::numeric(format!(
            "training aborted at epoch {epoch}, step {step}, beta {}, dropout {}: {msg}",
            cell.beta, cell.dropout
        )),
        other => other,
    }
}

/// Trains a config whose grids hold exactly one cell.
pub fn train(cfg: &RunConfig, split: &DatasetSplit) -> Result<TrainOutcome> {
    let cells = grid_cells(cfg);
    if cells.len() != 1 {
        return Err(Error::config(format!(
            "train expects a single (beta, dropout) cell, config has {}; use grid_search",
            cells.len()
        )));
    }
    train_cell(cfg, split, cells[0])
}

/// Every (β, p) cell, ordered by β then p ascending.
pub fn grid_cells(cfg: &RunConfig) -> Vec<Cell> {
    let mut betas = cfg.beta_grid();
    let mut ps = cfg.model.dropout.clone();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    betas
        .iter()
        .flat_map(|&beta| ps.iter().map(move |&dropout| Cell { beta, dropout }))
        .collect()
}

/// Outcome summary of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Ok {
        best_epoch: usize,
        best_val_accuracy: f64,
        final_val_ece: f64,
        final_val_sce: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    #[serde(flatten)]
    pub status: CellStatus,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub summaries: Vec<CellSummary>,
    /// Successful outcomes, in grid order.
    pub outcomes: Vec<TrainOutcome>,
    /// Index into `outcomes` of the selected cell.
    pub best: usize,
}

impl GridResult {
    pub fn best(&self) -> &TrainOutcome {
        &self.outcomes[self.best]
    }
}

/// Trains every grid cell (in parallel) and selects by validation accuracy;
/// ties go to the smaller β, then the smaller p. Failed cells are recorded
/// and skipped.
pub fn grid_search(cfg: &RunConfig, split: &DatasetSplit) -> Result<GridResult> {
    cfg.validate()?;
    let cells = grid_cells(cfg);
    let results: Vec<Result<TrainOutcome>> = cells.par_iter().map(|&c| train_cell(cfg, split, c)).collect();

    let mut summaries = Vec::with_capacity(cells.len());
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(out) => {
                let last = out.log.records.last().expect("at least one epoch");
                summaries.push(CellSummary {
                    cell: *cell,
                    status: CellStatus::Ok {
                        best_epoch: out.best_epoch,
                        best_val_accuracy: out.best_val_accuracy,
                        final_val_ece: last.val_ece,
                        final_val_sce: last.val_sce,
                    },
                });
                outcomes.push(out);
            }
            Err(e) => {
                failures.push(e.to_string());
                summaries.push(CellSummary {
                    cell: *cell,
                    status: CellStatus::Failed { error: e.to_string() },
                });
            }
        }
    }
    if outcomes.is_empty() {
        return Err(Error::numeric(format!("every grid cell failed: {}", failures.join("; "))));
    }
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate().skip(1) {
        if o.best_val_accuracy > outcomes[best].best_val_accuracy {
            best = i;
        }
    }
    Ok(GridResult {
        summaries,
        outcomes,
        best,
    })
}
