//! Minibatch SGD with classical momentum, plus evaluation.
//!
//! One master seed drives everything derived at train time (batch
//! shuffling); layer init and hash layouts are seeded at construction, so a
//! run is reproducible bit for bit given the same network, data, and config.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hash::hash_words;
use crate::network::{argmax_rows, Layer, LayerGradient, Network};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Master seed; shuffle order is derived from it.
    pub seed: u64,
    /// Evaluate on the test set every this many epochs (0 = never).
    pub eval_every: usize,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    /// Multiplier on the entry-count-normalized step of shared
    /// reconstruction parameters (see `VirtualLayer::shared_update_scale`).
    pub recon_boost: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 15,
            seed: 0,
            eval_every: 1,
            lr_decay: 0.99,
            recon_boost: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.lr_decay <= 0.0 {
            return Err(Error::Config("lr decay must be positive".into()));
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error_pct: f64,
    /// Test error when evaluated this epoch.
    pub test_error_pct: Option<f64>,
    /// Wall time of the epoch; reported for humans, excluded from
    /// deterministic artifacts.
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    /// Last evaluated test error, if any epoch was evaluated.
    pub fn final_test_error_pct(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.test_error_pct)
    }

    pub fn final_train_error_pct(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_error_pct)
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub error_pct: f64,
    pub mean_loss: f64,
}

/// Momentum state mirroring every trainable tensor of the network.
enum LayerVelocity {
    Dense {
        w: Array2<f64>,
        b: Vec<f64>,
    },
    Virtual {
        w: Vec<f64>,
        alpha: Vec<f64>,
        b: Vec<f64>,
        w_prime: Vec<f64>,
        hop_alphas: Vec<Vec<f64>>,
    },
}

fn velocity_for(net: &Network) -> Vec<LayerVelocity> {
    net.layers()
        .iter()
        .map(|layer| match layer {
            Layer::Dense(d) => LayerVelocity::Dense {
                w: Array2::zeros(d.weights().dim()),
                b: vec![0.0; d.bias().len()],
            },
            Layer::Virtual(v) => LayerVelocity::Virtual {
                w: vec![0.0; v.w().len()],
                alpha: vec![0.0; v.recon().map_or(0, |r| r.param_count())],
                b: vec![0.0; v.bias().len()],
                w_prime: vec![0.0; v.dual().map_or(0, |d| d.w_prime().len())],
                hop_alphas: v.hops().iter().map(|h| vec![0.0; h.recon().param_count()]).collect(),
            },
        })
        .collect()
}

#[inline]
fn momentum_step(theta: &mut [f64], vel: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
    for ((t, v), g) in theta.iter_mut().zip(vel.iter_mut()).zip(grad.iter()) {
        *v = mu * *v - lr * *g;
        *t += *v;
    }
}

fn apply_updates(
    net: &mut Network,
    grads: &[LayerGradient],
    velocity: &mut [LayerVelocity],
    lr: f64,
    mu: f64,
    recon_boost: f64,
) {
    for ((layer, grad), vel) in net.layers_mut().iter_mut().zip(grads).zip(velocity.iter_mut()) {
        match (layer, grad, vel) {
            (Layer::Dense(d), LayerGradient::Dense(g), LayerVelocity::Dense { w, b }) => {
                momentum_step(
                    d.weights_mut().as_slice_mut().unwrap(),
                    w.as_slice_mut().unwrap(),
                    g.d_w.as_slice().unwrap(),
                    lr,
                    mu,
                );
                momentum_step(d.bias_mut(), b, &g.d_b, lr, mu);
            }
            (
                Layer::Virtual(v),
                LayerGradient::Virtual(g),
                LayerVelocity::Virtual { w, alpha, b, w_prime, hop_alphas },
            ) => {
                let shared_lr = lr * recon_boost * v.shared_update_scale();
                momentum_step(v.w_mut(), w, &g.d_w, lr, mu);
                momentum_step(v.bias_mut(), b, &g.d_b, lr, mu);
                if !g.d_w_prime.is_empty() {
                    momentum_step(v.dual_w_prime_mut().unwrap(), w_prime, &g.d_w_prime, shared_lr, mu);
                }
                for (m, hop_grad) in g.d_hop_alphas.iter().enumerate() {
                    let hop_lr = lr * recon_boost * v.hop_update_scale(m);
                    momentum_step(v.hop_recon_params_mut(m), &mut hop_alphas[m], hop_grad, hop_lr, mu);
                }
                if let Some(recon) = v.recon_mut() {
                    if !g.d_alpha.is_empty() {
                        momentum_step(recon.params_mut(), alpha, &g.d_alpha, shared_lr, mu);
                    }
                }
            }
            _ => unreachable!("gradient list mismatches layer list"),
        }
    }
}

fn gather_batch(ds: &Dataset, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut x = Array2::zeros((idx.len(), ds.dim()));
    let mut y = Vec::with_capacity(idx.len());
    for (row, &s) in idx.iter().enumerate() {
        x.row_mut(row).assign(&ds.inputs.row(s));
        y.push(ds.labels[s]);
    }
    (x, y)
}

/// Shuffled-minibatch SGD over `cfg.epochs` epochs. Deterministic given
/// `(network, data, config)`; aborts with a diagnostic if the loss leaves
/// the finite range.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if train_set.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "training inputs",
            expected: net.input_dim(),
            got: train_set.dim(),
        });
    }

    let mut velocity = velocity_for(net);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hash_words(&[0x73687566], cfg.seed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut wrong = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let (x, y) = gather_batch(train_set, batch_idx);
            let trace = net.forward(&x)?;
            let (grads, loss) = net.backward(&trace, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            for (pred, &target) in argmax_rows(&trace.output).iter().zip(&y) {
                if *pred != target {
                    wrong += 1;
                }
            }
            loss_sum += loss * batch_idx.len() as f64;
            seen += batch_idx.len();
            apply_updates(net, &grads, &mut velocity, lr, cfg.momentum, cfg.recon_boost);
        }
        lr *= cfg.lr_decay;

        let test_error_pct = match test_set {
            Some(ts) if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 => {
                Some(evaluate(net, ts)?.error_pct)
            }
            _ => None,
        };
        log.rows.push(EpochRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_error_pct: 100.0 * wrong as f64 / seen as f64,
            test_error_pct,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

/// Argmax error rate and mean loss over a dataset.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Ok(EvalReport { error_pct: 0.0, mean_loss: 0.0 });
    }
    let chunk = 256usize;
    let mut wrong = 0usize;
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for batch_idx in idx.chunks(chunk) {
        let (x, y) = gather_batch(ds, batch_idx);
        let trace = net.forward(&x)?;
        loss_sum += net.loss(&trace.output, &y)? * batch_idx.len() as f64;
        for (pred, &target) in argmax_rows(&trace.output).iter().zip(&y) {
            if *pred != target {
                wrong += 1;
            }
        }
    }
    Ok(EvalReport {
        error_pct: 100.0 * wrong as f64 / ds.len() as f64,
        mean_loss: loss_sum / ds.len() as f64,
    })
}
