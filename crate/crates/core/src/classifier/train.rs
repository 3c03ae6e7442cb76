use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::mlp::{cross_entropy, Mlp, Mode};
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 64,
            dropout: 0.5,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            hidden: vec![512, 256],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Range(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Feature rows and class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
}

impl DataSplit {
    pub fn new(x: DMatrix<f64>, y: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Invalid(format!("{} rows for {} labels", x.nrows(), y.len())));
        }
        Ok(DataSplit { x, y })
    }

    pub fn from_rows(rows: &[Vec<f32>], y: Vec<usize>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Invalid(format!("ragged feature rows ({} vs {d})", r.len())));
        }
        DataSplit::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j] as f64), y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(idx.len(), self.x.ncols(), |i, j| self.x[(idx[i], j)]);
        (x, idx.iter().map(|&i| self.y[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience counter over validation losses; improvement means strictly lower
/// than the best so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best_loss: f64::INFINITY, best_epoch: 0, bad_epochs: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::NoImprovement
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

/// Structured training record: hyperparameters, per-epoch metrics and the
/// outcome, written as JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: TrainConfig,
    pub sizes: Vec<usize>,
    pub n_params: usize,
    pub adam: AdamConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Extra header fields supplied by the caller.
    pub provenance: BTreeMap<String, String>,
}

impl RunLog {
    pub fn write_jsonl<W: Write>(&self, mut sink: W) -> Result<()> {
        let header = json!({
            "record": "header",
            "config": self.config,
            "layer_sizes": self.sizes,
            "n_params": self.n_params,
            "init": "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases",
            "rng": "ChaCha8Rng::seed_from_u64",
            "optimizer": {"name": "adam", "config": self.adam},
            "n_train": self.n_train,
            "n_val": self.n_val,
            "provenance": self.provenance,
        });
        let io = |e| Error::io("<run log>", e);
        writeln!(sink, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for e in &self.epochs {
            let mut v = serde_json::to_value(e)?;
            v["record"] = json!("epoch");
            writeln!(sink, "{}", serde_json::to_string(&v)?).map_err(io)?;
        }
        let summary = json!({
            "record": "summary",
            "epochs_run": self.epochs.len(),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_early": self.stopped_early,
        });
        writeln!(sink, "{}", serde_json::to_string(&summary)?).map_err(io)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Mlp,
    pub log: RunLog,
}

const EVAL_CHUNK: usize = 1024;

/// Mean loss and accuracy in eval mode.
pub(crate) fn loss_and_accuracy(mlp: &Mlp, data: &DataSplit) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.rows(chunk);
        let z = mlp.predict_logits(&x)?;
        let (l, _) = cross_entropy(&z, &y)?;
        loss += l * chunk.len() as f64;
        correct += count_correct(&z, &y);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub(crate) fn argmax_rows(z: &DMatrix<f64>) -> Vec<usize> {
    z.row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn count_correct(z: &DMatrix<f64>, y: &[usize]) -> usize {
    argmax_rows(z).iter().zip(y).filter(|(p, t)| p == t).count()
}

/// Mini-batch training with per-epoch shuffling and early stopping.
///
/// Initialization draws from `ChaCha8Rng::seed_from_u64(seed)`; shuffling and
/// dropout use the same seed on stream 1.
pub fn train(train: &DataSplit, val: &DataSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("training and validation splits must be non-empty".into()));
    }
    let n_classes = 3;
    if let Some(&c) = train.y.iter().chain(&val.y).find(|&&c| c >= n_classes) {
        return Err(Error::Invalid(format!("class index {c} out of range")));
    }
    let mut sizes = vec![train.x.ncols()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(n_classes);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = Mlp::init(&sizes, cfg.dropout, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = mlp.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.rows(chunk);
            let (z, cache) = mlp.forward(&x, Mode::Train, &mut rng)?;
            let (loss, dz) = cross_entropy(&z, &y)?;
            let grads = mlp.backward(&cache, &dz)?;
            adam.step(&mut mlp, &grads);
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&z, &y);
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&mlp, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("validation loss diverged at epoch {epoch}")));
        }
        let decision = stopper.observe(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = mlp.clone();
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
            improved: decision == StopDecision::Improved,
        });
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }

    let log = RunLog {
        config: cfg.clone(),
        n_params: best.n_params(),
        sizes,
        adam: cfg.adam(),
        n_train: train.len(),
        n_val: val.len(),
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best_loss,
        stopped_early,
        provenance: BTreeMap::new(),
    };
    Ok(TrainOutcome { model: best, log })
}
