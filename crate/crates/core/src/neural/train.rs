use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AcousticModel, AdamState};
use crate::ctc::min_frames;
use crate::error::{Error, Result};
use crate::exec::parallel_map;
use crate::features::FeatureSequence;
use crate::io::write_bytes;

/// Smallest per-dimension standard deviation used for input standardization.
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Parameter(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A labelled feature sequence.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub features: FeatureSequence,
    pub labels: Vec<usize>,
}

/// One row of the training log. Epoch 0 evaluates the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Sentences left out because they have fewer frames than their labels need.
    pub skipped: Vec<String>,
}

/// Per-dimension mean and standard deviation over every training frame.
pub fn input_statistics(examples: &[Example], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut count = 0usize;
    for ex in examples {
        if ex.features.frame_dim != dim {
            return Err(Error::Data(format!(
                "{}: frame dim {} differs from {dim}",
                ex.id, ex.features.frame_dim
            )));
        }
        for row in ex.features.values.chunks(dim) {
            for (k, &v) in row.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("no training frames".into()));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    Ok((mean, std))
}

fn non_finite(ex: &Example, e: Error) -> Error {
    match e {
        Error::Numeric(_) => Error::NonFiniteLoss(ex.id.clone()),
        e => e,
    }
}

fn checked_loss(ex: &Example, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(ex.id.clone()))
    }
}

/// Mean CTC loss over `examples`.
pub fn mean_loss(model: &AcousticModel, examples: &[&Example], jobs: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let losses = parallel_map(jobs, examples, |ex| {
        model
            .loss(&ex.features, &ex.labels)
            .map_err(|e| non_finite(ex, e))
            .and_then(|l| checked_loss(ex, l))
    })?;
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

/// Mean loss and mean gradient of a batch. Per-sequence gradients are summed
/// in batch order, so the result does not depend on `jobs`.
pub fn batch_loss_grad(model: &AcousticModel, batch: &[&Example], jobs: usize) -> Result<(f64, Vec<f64>)> {
    let parts = parallel_map(jobs, batch, |ex| {
        let (loss, grad) = model
            .loss_and_grad(&ex.features, &ex.labels)
            .map_err(|e| non_finite(ex, e))?;
        checked_loss(ex, loss)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(ex.id.clone()));
        }
        Ok((loss, grad))
    })?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

fn feasible<'a>(examples: &'a [Example], skipped: &mut Vec<String>) -> Vec<&'a Example> {
    examples
        .iter()
        .filter(|ex| {
            let ok = ex.features.frames >= min_frames(&ex.labels).max(1) && !ex.labels.is_empty();
            if !ok {
                warn!(
                    "{}: {} frames cannot align {} labels, skipped",
                    ex.id,
                    ex.features.frames,
                    ex.labels.len()
                );
                skipped.push(ex.id.clone());
            }
            ok
        })
        .collect()
}

/// Trains `model` in place and leaves it at the parameters with the lowest
/// validation loss (epoch 0 being the initial model).
///
/// Batches group sequences of similar length (sorted by frame count) and
/// accumulate exact per-sequence gradients, so no padding is involved. The
/// batch order is reshuffled every epoch from `cfg.seed`.
pub fn train(
    model: &mut AcousticModel,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
    jobs: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut skipped = Vec::new();
    let train_ex = feasible(train_set, &mut skipped);
    let val_ex = feasible(validation, &mut skipped);
    if train_ex.is_empty() || val_ex.is_empty() {
        return Err(Error::Data("training and validation sets need usable sentences".into()));
    }

    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    order.sort_by_key(|&i| (train_ex[i].features.frames, i));
    let mut batches: Vec<Vec<&Example>> = order
        .chunks(cfg.batch_size)
        .map(|c| c.iter().map(|&i| train_ex[i]).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.param_count());
    let start = Instant::now();
    let first = EpochLog {
        epoch: 0,
        train_loss: mean_loss(model, &train_ex, jobs)?,
        val_loss: mean_loss(model, &val_ex, jobs)?,
        wall_ms: start.elapsed().as_millis(),
    };
    on_epoch(&first);
    let mut best = (0, first.val_loss, model.params.clone());
    let mut log = vec![first];

    for epoch in 1..=cfg.epochs {
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in &batches {
            let (loss, grad) = batch_loss_grad(model, batch, jobs)?;
            total += loss * batch.len() as f64;
            adam_step(&mut model.params, &grad, &mut adam, cfg.learning_rate, cfg.weight_decay)?;
        }
        let row = EpochLog {
            epoch,
            train_loss: total / train_ex.len() as f64,
            val_loss: mean_loss(model, &val_ex, jobs)?,
            wall_ms: start.elapsed().as_millis(),
        };
        info!(
            "epoch {epoch}: train {:.4} val {:.4} ({} ms)",
            row.train_loss, row.val_loss, row.wall_ms
        );
        on_epoch(&row);
        if row.val_loss < best.1 {
            best = (epoch, row.val_loss, model.params.clone());
        }
        log.push(row);
    }
    model.params = best.2;
    Ok(TrainReport {
        log,
        best_epoch: best.0,
        best_val_loss: best.1,
        skipped,
    })
}

/// Writes the log as CSV with header `epoch,train_loss,val_loss,wall_ms`.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss,wall_ms\n");
    for r in log {
        let _ = writeln!(text, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.wall_ms);
    }
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use crate::neural::ModelShape;
    use rand::Rng;

    /// Sequences whose frames point at their label: class k has a bump at input k.
    fn toy_examples(rng: &mut ChaCha8Rng, n: usize, prefix: &str) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let len = rng.gen_range(2..4);
                let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
                let mut values = Vec::new();
                let mut frames = 0;
                for &l in &labels {
                    for _ in 0..3 {
                        let mut row: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect();
                        row[l] += 1.0;
                        values.extend(row);
                        frames += 1;
                    }
                    let mut gap: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    gap[3] += 1.0;
                    values.extend(gap);
                    frames += 1;
                }
                Example {
                    id: format!("{prefix}{i}"),
                    features: FeatureSequence {
                        kind: FeatureKind::Spd,
                        frames,
                        frame_dim: 4,
                        hop_ms: 20.0,
                        values,
                    },
                    labels,
                }
            })
            .collect()
    }

    fn shape() -> ModelShape {
        ModelShape {
            layers: 1,
            hidden: 6,
            input_dim: 4,
            output_dim: 4,
        }
    }

    #[test]
    fn training_lowers_validation_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tr = toy_examples(&mut rng, 40, "t");
        let va = toy_examples(&mut rng, 10, "v");
        let mut model = AcousticModel::new(shape(), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            learning_rate: 0.02,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &tr, &va, &cfg, 1, |_| {}).unwrap();
        assert_eq!(report.log.len(), 16);
        assert!(report.best_val_loss < report.log[0].val_loss * 0.5);
        let val: Vec<&Example> = va.iter().collect();
        assert!((mean_loss(&model, &val, 1).unwrap() - report.best_val_loss).abs() < 1e-12);
    }

    #[test]
    fn runs_are_reproducible_across_worker_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tr = toy_examples(&mut rng, 12, "t");
        let va = toy_examples(&mut rng, 4, "v");
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.01,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let mut a = AcousticModel::new(shape(), 4).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &tr, &va, &cfg, 1, |_| {}).unwrap();
        let rb = train(&mut b, &tr, &va, &cfg, 2, |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        let strip = |r: &TrainReport| r.log.iter().map(|l| (l.train_loss, l.val_loss)).collect::<Vec<_>>();
        assert_eq!(strip(&ra), strip(&rb));
    }

    #[test]
    fn batch_gradient_is_the_mean_of_sequence_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex = toy_examples(&mut rng, 3, "b");
        let model = AcousticModel::new(shape(), 1).unwrap();
        let refs: Vec<&Example> = ex.iter().collect();
        let (loss, grad) = batch_loss_grad(&model, &refs, 1).unwrap();
        let mut sum = vec![0.0; grad.len()];
        let mut lsum = 0.0;
        for e in &ex {
            let (l, g) = model.loss_and_grad(&e.features, &e.labels).unwrap();
            lsum += l;
            sum.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        assert!((loss - lsum / 3.0).abs() < 1e-12);
        for (a, b) in grad.iter().zip(&sum) {
            assert!((a - b / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_names_the_sentence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tr = toy_examples(&mut rng, 4, "t");
        let va = toy_examples(&mut rng, 2, "v");
        tr[2].features.values[0] = f64::NAN;
        let mut model = AcousticModel::new(shape(), 1).unwrap();
        let err = train(&mut model, &tr, &va, &TrainConfig { epochs: 1, ..Default::default() }, 1, |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(ref id) if id == "t2"), "{err}");
    }

    #[test]
    fn infeasible_sentences_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tr = toy_examples(&mut rng, 4, "t");
        let va = toy_examples(&mut rng, 2, "v");
        tr[0].labels = vec![0; 50];
        let mut model = AcousticModel::new(shape(), 1).unwrap();
        let report = train(&mut model, &tr, &va, &TrainConfig { epochs: 1, ..Default::default() }, 1, |_| {}).unwrap();
        assert_eq!(report.skipped, vec!["t0".to_string()]);
    }

    #[test]
    fn config_is_validated() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn statistics_floor_constant_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ex = toy_examples(&mut rng, 3, "s");
        for e in &mut ex {
            for row in e.features.values.chunks_mut(4) {
                row[2] = 5.0;
            }
        }
        let (mean, std) = input_statistics(&ex, 4).unwrap();
        assert!((mean[2] - 5.0).abs() < 1e-12);
        assert_eq!(std[2], STD_FLOOR);
    }

    #[test]
    fn log_is_written_as_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let rows = [EpochLog {
            epoch: 0,
            train_loss: 1.5,
            val_loss: 2.0,
            wall_ms: 7,
        }];
        write_training_log(&p, &rows).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "epoch,train_loss,val_loss,wall_ms\n0,1.5,2,7\n");
    }
}
