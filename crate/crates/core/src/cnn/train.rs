//! Mini-batch gradient descent on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::CnnModel;
use super::patches::PatchSet;
use super::CnnError;

/// Samples per parallel work unit. Fixed so that the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Repeat positive patches until the classes are roughly balanced.
    pub oversample_positive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 0.001, batch: 64, seed: 0, oversample_positive: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each
    /// batch's update.
    pub train_accuracy: f64,
}

/// Loss, correct count and gradient of a batch, averaged over samples.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grad: Vec<f64>,
    pub mean_loss: f64,
    pub correct: usize,
}

pub fn batch_gradient(model: &CnnModel, batch: &[(&[f64], usize)]) -> Result<BatchGradient, CnnError> {
    if batch.is_empty() {
        return Err(CnnError::EmptyBatch);
    }
    let n = model.params().len();
    let scale = 1.0 / batch.len() as f64;
    let partial: Vec<(Vec<f64>, f64, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut loss = 0.0;
            let mut correct = 0;
            for &(x, label) in chunk {
                let (l, pred) = model.accumulate_gradient(x, label, scale, &mut g)?;
                loss += l;
                correct += usize::from(pred == label);
            }
            Ok((g, loss, correct))
        })
        .collect::<Result<_, CnnError>>()?;
    let mut iter = partial.into_iter();
    let (mut grad, mut loss, mut correct) = iter.next().expect("non-empty batch");
    for (g, l, c) in iter {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        loss += l;
        correct += c;
    }
    Ok(BatchGradient { grad, mean_loss: loss * scale, correct })
}

/// One plain gradient-descent step, `w <- w - lr * grad`. Returns the mean
/// loss and correct count measured before the update. A non-finite loss
/// leaves the model untouched.
pub fn train_step(model: &mut CnnModel, batch: &[(&[f64], usize)], lr: f64) -> Result<(f64, usize), CnnError> {
    let g = batch_gradient(model, batch)?;
    if !g.mean_loss.is_finite() || g.grad.iter().any(|v| !v.is_finite()) {
        return Err(CnnError::NonFiniteLoss);
    }
    model.params_mut().iter_mut().zip(&g.grad).for_each(|(w, d)| *w -= lr * d);
    Ok((g.mean_loss, g.correct))
}

/// Trains for `cfg.epochs` seeded, shuffled passes over `set`, normalizing
/// with `model_init.input_mean`.
pub fn train(
    model_init: CnnModel,
    set: &PatchSet<'_>,
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<EpochLog>), CnnError> {
    if set.is_empty() {
        return Err(CnnError::EmptyBatch);
    }
    if cfg.batch == 0 {
        return Err(CnnError::EmptyBatch);
    }
    let mut model = model_init;
    let mut order: Vec<usize> = (0..set.len()).collect();
    if cfg.oversample_positive {
        let pos: Vec<usize> = order.iter().copied().filter(|&i| set.patches[i].positive).collect();
        if !pos.is_empty() {
            let reps = (set.len() - pos.len()) / pos.len();
            for _ in 1..reps {
                order.extend_from_slice(&pos);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch) {
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| set.normalized(i, model.input_mean)).collect();
            let batch: Vec<(&[f64], usize)> =
                idx.iter().zip(&xs).map(|(&i, x)| (x.as_slice(), usize::from(set.patches[i].positive))).collect();
            let (l, c) = train_step(&mut model, &batch, cfg.lr)?;
            loss_sum += l * idx.len() as f64;
            correct += c;
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
        });
    }
    Ok((model, log))
}

/// Column order of [`log_csv`].
pub const LOG_HEADER: &str = "epoch,mean_loss,train_accuracy";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        s.push_str(&format!("{},{:.9},{:.6}\n", e.epoch, e.mean_loss, e.train_accuracy));
    }
    s
}
