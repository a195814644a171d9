//! Shared mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, Grads, Mode, OptimState, ParamStore, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    /// Examples (windows or pages) per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Stop early once training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 10,
            batch_size: 4,
            lr: 2e-3,
            weight_decay: 0.01,
            warmup_fraction: 0.05,
            seed: 0,
            target_train_accuracy: None,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction", "must lie in [0, 1]"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_macro_f1: Option<f64>,
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept, by dev Macro F1.
    pub best_epoch: Option<usize>,
    pub skipped_steps: usize,
    /// Groups whose gold token labels disagree (group-level training only).
    pub mixed_groups: usize,
}

impl TrainLog {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.train_accuracy)
    }
}

/// What the loop needs from a model.
pub trait Objective {
    fn n_examples(&self) -> usize;

    /// Add the gradient of the summed loss over example `i` into `g`.
    /// Returns the summed loss and the number of supervised targets.
    fn accumulate(&self, p: &ParamStore, i: usize, mode: &mut Mode, g: &mut Grads) -> Result<(f64, usize)>;

    /// Fraction of correctly predicted training targets.
    fn train_accuracy(&self, p: &ParamStore) -> Result<f64>;

    /// Dev Macro F1, or `None` without a dev set.
    fn dev_score(&self, p: &ParamStore) -> Result<Option<f64>>;
}

/// Train `params` in place. With a dev set the parameters of the best dev
/// epoch are restored at the end; otherwise the final ones are kept.
pub fn fit<O: Objective>(obj: &O, params: &mut ParamStore, hyper: &TrainHyper, dropout: f64) -> Result<TrainLog> {
    hyper.validate()?;
    let n = obj.n_examples();
    if n == 0 {
        return Err(Error::Input("empty training set".into()));
    }
    let steps_per_epoch = n.div_ceil(hyper.batch_size);
    let mut optim = OptimState::new(
        params,
        AdamWConfig {
            lr: hyper.lr,
            weight_decay: hyper.weight_decay,
            warmup_fraction: hyper.warmup_fraction,
            total_steps: steps_per_epoch * hyper.epochs,
            ..Default::default()
        },
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut g = params.zero_grads();
            let mut loss_sum = 0.0;
            let mut count = 0;
            for &i in batch {
                let mut mode = Mode::Train { rng: &mut drop_rng, dropout };
                let (l, c) = obj.accumulate(params, i, &mut mode, &mut g)?;
                loss_sum += l;
                count += c;
            }
            if count == 0 {
                continue;
            }
            let loss = loss_sum / count as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            g.scale(1.0 / count as f64);
            if let StepOutcome::Skipped = optim.step(params, &g) {
                log::warn!("step {step}: non-finite gradient, update skipped");
            }
            log.step_losses.push(loss);
            epoch_loss += loss;
            step += 1;
        }
        let dev = obj.dev_score(params)?;
        let train_accuracy = match hyper.target_train_accuracy {
            Some(_) => Some(obj.train_accuracy(params)?),
            None => None,
        };
        log::info!("epoch {epoch}: loss {:.4} dev {:?} train acc {:?}", epoch_loss / steps_per_epoch as f64, dev, train_accuracy);
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / steps_per_epoch as f64,
            dev_macro_f1: dev,
            train_accuracy,
        });
        if let Some(score) = dev {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, params.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        if let (Some(target), Some(acc)) = (hyper.target_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    log.skipped_steps = optim.skipped;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy_loss, Linear, Mat};

    /// Logistic regression on two separable points.
    struct Toy {
        layer: Linear,
        xs: Vec<[f64; 2]>,
        ys: Vec<usize>,
        nan: bool,
    }

    impl Toy {
        fn new(store: &mut ParamStore) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Toy {
                layer: Linear::new(store, "head", 2, 2, &mut rng),
                xs: vec![[1.0, 0.0], [0.0, 1.0], [1.0, 0.2], [0.1, 1.0]],
                ys: vec![0, 1, 0, 1],
                nan: false,
            }
        }
    }

    impl Objective for Toy {
        fn n_examples(&self) -> usize {
            self.xs.len()
        }

        fn accumulate(&self, p: &ParamStore, i: usize, _mode: &mut Mode, g: &mut Grads) -> Result<(f64, usize)> {
            let x = Mat::from_vec(1, 2, self.xs[i].to_vec());
            let mut logits = self.layer.forward(p, &x);
            if self.nan {
                logits.data[0] = f64::NAN;
            }
            let out = cross_entropy_loss(&logits, &[Some(self.ys[i])])?;
            self.layer.backward(p, &x, &out.grad, g);
            Ok((out.loss, 1))
        }

        fn train_accuracy(&self, p: &ParamStore) -> Result<f64> {
            let x = Mat::from_vec(4, 2, self.xs.iter().flatten().copied().collect());
            let logits = self.layer.forward(p, &x);
            let hits = (0..4).filter(|&r| crate::nn::argmax(logits.row(r)) == self.ys[r]).count();
            Ok(hits as f64 / 4.0)
        }

        fn dev_score(&self, _p: &ParamStore) -> Result<Option<f64>> {
            Ok(None)
        }
    }

    #[test]
    fn loss_falls_for_twenty_steps() {
        let mut store = ParamStore::new();
        let toy = Toy::new(&mut store);
        let hyper = TrainHyper { epochs: 20, batch_size: 4, lr: 1e-2, warmup_fraction: 0.0, weight_decay: 0.0, ..Default::default() };
        let log = fit(&toy, &mut store, &hyper, 0.0).unwrap();
        assert_eq!(log.step_losses.len(), 20);
        assert!(log.step_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", log.step_losses);
    }

    #[test]
    fn deterministic_and_stops_at_target() {
        let run = || {
            let mut store = ParamStore::new();
            let toy = Toy::new(&mut store);
            let hyper = TrainHyper { epochs: 200, batch_size: 2, lr: 5e-2, target_train_accuracy: Some(1.0), ..Default::default() };
            (fit(&toy, &mut store, &hyper, 0.0).unwrap(), store)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.final_train_accuracy(), Some(1.0));
        assert!(a.epochs.len() < 200);
    }

    #[test]
    fn nan_loss_reports_step_and_empty_set_errors() {
        let mut store = ParamStore::new();
        let mut toy = Toy::new(&mut store);
        toy.nan = true;
        let err = fit(&toy, &mut store, &TrainHyper::default(), 0.0).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 0 }));
        toy.xs.clear();
        assert!(fit(&toy, &mut store, &TrainHyper::default(), 0.0).is_err());
    }
}
