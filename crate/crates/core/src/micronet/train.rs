//! Mini-batch SGD with momentum on softmax cross-entropy.

use serde::{Deserialize, Serialize};

use super::backward::ParamGrads;
use super::Network;
use crate::error::{Error, Result};
use crate::par::{self, Threads};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// A labelled training example.
pub trait Labeled: Sync {
    fn input(&self) -> &Tensor;
    fn label(&self) -> usize;
}

impl Labeled for (Tensor, usize) {
    fn input(&self) -> &Tensor {
        &self.0
    }

    fn label(&self) -> usize {
        self.1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub seed: u64,
    /// Stop after the first epoch whose validation accuracy reaches this.
    pub target_accuracy: Option<f32>,
    pub threads: Threads,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            target_accuracy: None,
            threads: Threads::Pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f32,
    pub train_accuracy: f32,
    pub val_accuracy: Option<f32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainReport {
    pub fn final_val_accuracy(&self) -> Option<f32> {
        self.epochs.last().and_then(|e| e.val_accuracy)
    }

    pub fn best_val_accuracy(&self) -> Option<f32> {
        self.epochs.iter().filter_map(|e| e.val_accuracy).reduce(f32::max)
    }
}

/// Fraction of `data` whose argmax prediction equals the label.
pub fn accuracy<D: Labeled>(net: &Network, data: &[D], threads: Threads) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let hits = par::map_slice(data, threads, |d| net.predict(d.input()).map(|(c, _)| (c == d.label()) as usize))
        .into_iter()
        .sum::<Result<usize>>()?;
    Ok(hits as f32 / data.len() as f32)
}

struct SampleOut {
    loss: f32,
    correct: bool,
    grads: ParamGrads,
}

/// Trains `net` in place. The shuffle order comes from `cfg.seed`, and
/// per-example gradients are summed in example order, so the result does
/// not depend on the thread count.
pub fn train_sgd<D: Labeled>(net: &mut Network, train: &[D], val: &[D], cfg: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    for d in train.iter().chain(val) {
        net.check_input(d.input())?;
        net.check_class(d.label())?;
    }
    let mut rng = Prng::new(cfg.seed);
    let mut velocity = net.zero_grads();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let outs = par::map_slice(batch, cfg.threads, |&i| -> Result<SampleOut> {
                let d = &train[i];
                let trace = net.forward(d.input())?;
                let mut grads = net.zero_grads();
                let loss = net.loss_gradients(&trace, d.label(), &mut grads);
                Ok(SampleOut {
                    loss,
                    correct: trace.predicted() == d.label(),
                    grads,
                })
            });
            let mut total = net.zero_grads();
            let mut batch_loss = 0.0f64;
            for out in outs {
                let out = out?;
                batch_loss += out.loss as f64;
                correct += out.correct as usize;
                for ((tw, tb), (w, b)) in total.iter_mut().zip(&out.grads) {
                    tw.iter_mut().zip(w).for_each(|(t, v)| *t += v);
                    tb.iter_mut().zip(b).for_each(|(t, v)| *t += v);
                }
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss: batch_loss as f32,
                });
            }
            loss_sum += batch_loss;
            apply_update(net, &total, &mut velocity, cfg, batch.len())?;
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(accuracy(net, val, cfg.threads)?)
        };
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: (loss_sum / train.len() as f64) as f32,
            train_accuracy: correct as f32 / train.len() as f32,
            val_accuracy,
        });
        if let (Some(target), Some(acc)) = (cfg.target_accuracy, val_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(report)
}

fn apply_update(
    net: &mut Network,
    grads: &ParamGrads,
    velocity: &mut ParamGrads,
    cfg: &TrainConfig,
    batch: usize,
) -> Result<()> {
    let scale = 1.0 / batch as f32;
    for (p, ((gw, gb), (vw, vb))) in net.params.iter_mut().zip(grads.iter().zip(velocity.iter_mut())) {
        let step = |param: &Tensor, g: &[f32], v: &mut [f32]| -> Result<Tensor> {
            let mut data = param.data().to_vec();
            for ((x, &gi), vi) in data.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = cfg.momentum * *vi + gi * scale;
                *x -= cfg.lr * *vi;
            }
            Tensor::new(param.shape().to_vec(), data)
        };
        p.weight = step(&p.weight, gw, vw)?;
        p.bias = step(&p.bias, gb, vb)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::{NetKind, NetworkSpec};

    fn sample(seed: u64, label: usize) -> (Tensor, usize) {
        let mut rng = Prng::new(seed);
        (Tensor::from_fn(vec![3, 64, 64], |_| rng.next_f32()).unwrap(), label)
    }

    #[test]
    fn memorizes_one_example() {
        let mut net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 1).unwrap();
        let data = vec![sample(3, 2)];
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let report = train_sgd(&mut net, &data, &[], &cfg).unwrap();
        let last = report.epochs.last().unwrap();
        let trace = net.forward(&data[0].0).unwrap();
        let loss = -(trace.probabilities()[2] as f64).ln();
        assert!(loss < 0.01, "loss {loss}, last epoch {last:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = NetworkSpec { kind: NetKind::Net2D, num_classes: 4 };
        let data: Vec<_> = (0..6).map(|i| sample(i, i as usize % 4)).collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = Network::init_weights(spec, 1).unwrap();
        let mut b = a.clone();
        train_sgd(&mut a, &data, &[], &cfg).unwrap();
        train_sgd(&mut b, &data, &[], &TrainConfig { threads: Threads::Sequential, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        let mut net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 1).unwrap();
        let empty: Vec<(Tensor, usize)> = vec![];
        assert!(matches!(
            train_sgd(&mut net, &empty, &[], &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        let bad = vec![sample(1, 7)];
        assert!(train_sgd(&mut net, &bad, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 1).unwrap();
        let data: Vec<_> = (0..4).map(|i| sample(i, i as usize)).collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            lr: 1e6,
            ..TrainConfig::default()
        };
        let err = train_sgd(&mut net, &data, &[], &cfg).unwrap_err();
        assert!(
            matches!(err, Error::NonFiniteLoss { .. } | Error::NonFinite(_)),
            "{err}"
        );
    }
}
