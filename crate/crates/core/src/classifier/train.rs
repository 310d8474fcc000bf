use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{argmax, cross_entropy, OtsModel};
use super::sgd::{Sgd, SgdConfig};
use crate::dataio::SceneDataset;
use crate::error::{OtsError, Result};
use crate::numcore::{derive_seed, Grads, Parameterized, Tape};

/// Metrics for one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

/// Everything a training run produced.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub seed: u64,
    pub config: SgdConfig,
    pub epochs: Vec<EpochStats>,
    pub final_eval: Option<Evaluation>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.final_eval.as_ref().map(|e| e.accuracy)
    }

    /// One CSV row per epoch.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,eval_acc\n");
        for e in &self.epochs {
            let eval = e.eval_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.4e},{:.6},{:.6},{}",
                e.epoch, e.lr, e.train_loss, e.train_acc, eval
            );
        }
        out
    }
}

/// Accuracy overall, per class, and averaged over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub mean_class_accuracy: f64,
    pub samples: usize,
}

impl Evaluation {
    fn from_counts(correct: &[usize], total: &[usize]) -> Self {
        let samples: usize = total.iter().sum();
        let hits: usize = correct.iter().sum();
        let per_class: Vec<Option<f64>> = correct
            .iter()
            .zip(total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect();
        let seen: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean_class_accuracy = if seen.is_empty() {
            0.0
        } else {
            seen.iter().sum::<f64>() / seen.len() as f64
        };
        Self {
            accuracy: if samples == 0 { 0.0 } else { hits as f64 / samples as f64 },
            per_class,
            mean_class_accuracy,
            samples,
        }
    }
}

fn check_dataset(model: &OtsModel, data: &SceneDataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(OtsError::Usage(format!("{what} set is empty")));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= model.classes()) {
        return Err(OtsError::Usage(format!(
            "{what} set has label {bad} but the model has {} classes",
            model.classes()
        )));
    }
    Ok(())
}

/// Mini-batch SGD over `train_set`, shuffled per epoch from `seed`.
///
/// Gradients are accumulated sample by sample; the loss is the batch mean.
pub fn train(
    model: &mut OtsModel,
    train_set: &SceneDataset,
    eval_set: Option<&SceneDataset>,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(model, train_set, "training")?;
    if let Some(e) = eval_set {
        check_dataset(model, e, "evaluation")?;
    }

    let mut sgd = Sgd::new(*cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let mut grads = Grads::new();
            for &i in batch {
                let sample = train_set.sample(i);
                let x = sample.matrix();
                let y = train_set.labels()[i];
                let mut tape = Tape::new();
                let logits = model.forward_logits(&mut tape, x)?;
                if argmax(tape.value(logits).as_slice()) == y {
                    correct += 1;
                }
                let ce = cross_entropy(&mut tape, logits, y)?;
                let value = tape.scalar(ce);
                if !value.is_finite() {
                    return Err(OtsError::Config(format!(
                        "loss diverged at epoch {epoch} (sample {i})"
                    )));
                }
                loss_sum += value;
                let scaled = tape.scale(ce, inv);
                tape.backward_into(scaled, &mut grads)?;
            }
            model.zero_grads();
            grads.accumulate_into(model.params_mut());
            sgd.step(model.params_mut(), epoch);
        }

        let n = train_set.len() as f64;
        let eval_acc = match eval_set {
            Some(e) => Some(evaluate(model, e)?.accuracy),
            None => None,
        };
        epochs.push(EpochStats {
            epoch,
            lr: cfg.lr(epoch),
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            eval_acc,
        });
    }

    let final_eval = match eval_set {
        Some(e) => Some(evaluate(model, e)?),
        None => None,
    };
    Ok(TrainReport {
        seed,
        config: *cfg,
        epochs,
        final_eval,
    })
}

/// Thread count from `OTS_THREADS`, default 1.
fn thread_count() -> usize {
    std::env::var("OTS_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

/// Accuracy of `model` on `data`.
pub fn evaluate(model: &OtsModel, data: &SceneDataset) -> Result<Evaluation> {
    evaluate_sharded(model, data, thread_count())
}

/// Same as [`evaluate`] with an explicit number of worker threads.
pub fn evaluate_sharded(model: &OtsModel, data: &SceneDataset, threads: usize) -> Result<Evaluation> {
    check_dataset(model, data, "evaluation")?;
    let k = model.classes();
    let idx: Vec<usize> = (0..data.len()).collect();
    let shard = data.len().div_ceil(threads.max(1));

    let count = |chunk: &[usize]| -> Result<(Vec<usize>, Vec<usize>)> {
        let mut correct = vec![0; k];
        let mut total = vec![0; k];
        for &i in chunk {
            let y = data.labels()[i];
            total[y] += 1;
            if model.predict(&data.sample(i))? == y {
                correct[y] += 1;
            }
        }
        Ok((correct, total))
    };

    let parts: Vec<Result<(Vec<usize>, Vec<usize>)>> = if threads <= 1 {
        vec![count(&idx)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = idx.chunks(shard).map(|c| s.spawn(move || count(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };

    let mut correct = vec![0; k];
    let mut total = vec![0; k];
    for part in parts {
        let (c, t) = part?;
        for j in 0..k {
            correct[j] += c[j];
            total[j] += t[j];
        }
    }
    Ok(Evaluation::from_counts(&correct, &total))
}
