//! Loss, initialization, optimizer, data split and the training loop.

mod adadelta;
mod init;
mod loss;
mod split;

pub use adadelta::{Adadelta, DEFAULT_EPSILON, DEFAULT_RHO};
pub use init::{glorot_bound, glorot_init, glorot_sample, glorot_uniform};
pub use loss::{bce_gradient, bce_loss};
pub use split::{split_train_val, MIN_SPLIT_RECORDS};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{CharVocab, EmbeddingTable};
use crate::io::PostRecord;
use crate::metrics::compute_metrics;
use crate::model::{HybridModel, ModelConfig, PreparedRecord, Tables};
use crate::params::Gradients;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub max_epochs: usize,
    /// Training : validation proportions.
    pub split_ratio: (u32, u32),
    /// Probability at or above which a post counts as clickbait.
    pub threshold: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Fixed title length cap; by default the longest training title.
    pub max_title_len: Option<usize>,
    /// Stop after this many epochs without a validation-F1 improvement.
    pub patience: Option<usize>,
    /// Stop once the training accuracy of an epoch reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            seed: 0,
            max_epochs: 100,
            split_ratio: (4, 1),
            threshold: 0.5,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
            max_title_len: None,
            patience: Some(10),
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.split_ratio.0 == 0 || self.split_ratio.1 == 0 {
            return Err(Error::Config("split ratio parts must be positive".into()));
        }
        if self.max_title_len == Some(0) {
            return Err(Error::Config("title length cap must be at least 1".into()));
        }
        if !(0.0 < self.rho && self.rho < 1.0) || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "adadelta needs 0 < rho < 1 and epsilon > 0, got rho={} epsilon={}",
                self.rho, self.epsilon
            )));
        }
        Ok(())
    }
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches, measured before each
    /// batch's update.
    pub train_loss: f64,
    /// Accuracy of the same pre-update predictions.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (highest validation F1, earliest on
    /// ties).
    pub best_epoch: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub max_title_len: usize,
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: HybridModel,
    /// Parameters after the last epoch run.
    pub last: HybridModel,
    pub trace: TrainTrace,
}

/// Seed for the shuffle of one epoch, derived from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn labelled(records: &[PostRecord]) -> Result<()> {
    match records.iter().find(|r| r.label.is_none()) {
        Some(r) => Err(Error::MissingLabel { id: r.id.clone() }),
        None => Ok(()),
    }
}

/// Mini-batch Adadelta on mean binary cross-entropy.
///
/// The corpus is split into training and validation parts, `K` and the
/// character vocabulary are taken from the training part, and the model is
/// initialized with Glorot-uniform weights from `config.seed`. Each epoch
/// reshuffles the training part; the final partial batch is kept.
pub fn train(
    config: &TrainConfig,
    model_config: &ModelConfig,
    corpus: &[PostRecord],
    tables: &Tables,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    labelled(corpus)?;
    tables.check(model_config)?;

    let (train_records, val_records) = split_train_val(corpus, config.split_ratio, config.seed)?;
    let k = config.max_title_len.unwrap_or_else(|| {
        train_records
            .iter()
            .map(|r| r.post_title_tokens.len())
            .max()
            .unwrap_or(1)
            .max(1)
    });
    let vocab = CharVocab::from_tokens(
        train_records
            .iter()
            .flat_map(|r| r.post_title_tokens.iter().map(String::as_str)),
    );
    let mut model = HybridModel::new(
        model_config.clone(),
        vocab,
        k,
        &mut glorot_init(config.seed),
    )?;

    let prepare = |records: &[PostRecord]| {
        records
            .iter()
            .map(|r| PreparedRecord::new(r, tables))
            .collect::<Result<Vec<_>>>()
    };
    let train_set = prepare(&train_records)?;
    let val_set = prepare(&val_records)?;

    let mut optimizer = Adadelta::new(model.params(), config.rho, config.epsilon);
    let mut trace = TrainTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        train_size: train_set.len(),
        val_size: val_set.len(),
        max_title_len: k,
    };
    let mut best: Option<(f64, HybridModel)> = None;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(
            config.seed,
            epoch,
        )));

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(model.params());
            for &i in batch {
                let record = &train_set[i];
                let label = record.label.expect("checked above");
                let step = model.loss_and_gradients(&tables.words, record, label)?;
                loss_sum += step.loss;
                correct += usize::from((step.prob >= config.threshold) == (label == 1.0));
                grads.accumulate(&step.grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(model.params_mut(), &grads)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_accuracy = correct as f64 / train_set.len() as f64;

        let (val_loss, val_f1, val_accuracy) =
            evaluate_split(&model, &tables.words, &val_set, config.threshold)?;
        log::info!(
            "epoch {epoch}: loss {train_loss:.6} acc {train_accuracy:.4} | val loss {val_loss:.6} f1 {val_f1:.4} acc {val_accuracy:.4}"
        );
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_f1,
            val_accuracy,
        });

        if best.as_ref().is_none_or(|(f1, _)| val_f1 > *f1) {
            best = Some((val_f1, model.clone()));
            trace.best_epoch = epoch;
        }
        if config
            .patience
            .is_some_and(|p| epoch - trace.best_epoch >= p)
        {
            log::info!(
                "no validation improvement for {} epochs; stopping",
                epoch - trace.best_epoch
            );
            break;
        }
        if config
            .target_train_accuracy
            .is_some_and(|t| train_accuracy >= t)
        {
            break;
        }
    }

    let best = best.map_or_else(|| model.clone(), |(_, m)| m);
    Ok(TrainOutcome {
        model: best,
        last: model,
        trace,
    })
}

/// Mean loss, F1 and accuracy of `model` on prepared, labelled records.
/// An empty set scores zero throughout.
fn evaluate_split(
    model: &HybridModel,
    words: &EmbeddingTable,
    records: &[PreparedRecord],
    threshold: f64,
) -> Result<(f64, f64, f64)> {
    if records.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let mut probs = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut loss = 0.0;
    for r in records {
        let p = model.predict(words, r)?;
        let y = r.label.expect("labelled");
        loss += bce_loss(p, y)?;
        probs.push(p);
        labels.push(y as u8);
    }
    let m = compute_metrics(&probs, &labels, threshold)?;
    Ok((loss / records.len() as f64, m.f1, m.accuracy))
}

/// Probabilities for each record, in order.
pub fn predict_all(
    model: &HybridModel,
    tables: &Tables,
    records: &[PostRecord],
) -> Result<Vec<f64>> {
    tables.check(model.config())?;
    records
        .iter()
        .map(|r| model.predict(&tables.words, &PreparedRecord::new(r, tables)?))
        .collect()
}
