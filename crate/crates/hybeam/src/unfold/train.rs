use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::seed::{self, Rng};
use crate::transceiver::{capped_sample_size, sample_symbol_batch_with, HybridBeamformers, SymbolBatch, SystemConfig};
use crate::{Error, Result};

use super::network::{backward, forward, network_loss};
use super::params::{LayerGrad, UnfoldNetwork};

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iters: usize,
    pub step: f64,
    pub step_decay: f64,
    pub decay_every: usize,
    /// Stop once the best validation loss improved by less than this
    /// fraction over the last `patience` steps.
    pub tolerance: f64,
    pub patience: usize,
    pub sample_size: usize,
    pub normalize: bool,
    /// Leading layers kept fixed.
    pub frozen_layers: usize,
    /// Kernel widths are kept above this fraction of the loss width.
    pub rho_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            max_iters: 100,
            step: 0.02,
            step_decay: 0.5,
            decay_every: 10,
            tolerance: 1e-4,
            patience: 5,
            sample_size: 16,
            normalize: true,
            frozen_layers: 0,
            rho_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.sample_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch size, sample size and decay period must be positive".into()));
        }
        if !(self.step > 0.0) || !(self.step_decay > 0.0) || !(self.rho_floor > 0.0) {
            return Err(Error::Config("step, decay and kernel-width floor must be positive".into()));
        }
        Ok(())
    }

    /// Step size at iteration `t`.
    pub fn step_at(&self, t: usize) -> f64 {
        self.step * self.step_decay.powi((t / self.decay_every) as i32)
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainTracePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub network: UnfoldNetwork,
    pub trace: Vec<TrainTracePoint>,
    pub initial_validation_loss: f64,
    pub best_validation_loss: f64,
}

/// Deterministic starting state for a channel.
pub fn initial_state(sys: &SystemConfig, h: &ChannelRealization) -> Result<HybridBeamformers> {
    HybridBeamformers::channel_aligned(sys, h, &mut seed::stream(h.seed, 3))
}

struct Sample {
    h: ChannelRealization,
    bf0: HybridBeamformers,
}

fn prepare(sys: &SystemConfig, set: &[ChannelRealization]) -> Result<Vec<Sample>> {
    set.par_iter()
        .map(|h| {
            Ok(Sample {
                h: h.clone(),
                bf0: initial_state(sys, h)?,
            })
        })
        .collect()
}

fn mean_loss(net: &UnfoldNetwork, samples: &[Sample], batches: &[SymbolBatch]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .zip(batches)
        .map(|(s, b)| network_loss(net, &s.bf0, &s.h, b))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss of `net` over `channels`, each with its own batch drawn from `seed`.
pub fn evaluate_network(
    net: &UnfoldNetwork,
    sys: &SystemConfig,
    channels: &[ChannelRealization],
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("empty channel set".into()));
    }
    let samples = prepare(sys, channels)?;
    let batches = validation_batches(net, sys, samples.len(), sample_size, seed)?;
    mean_loss(net, &samples, &batches)
}

fn validation_batches(net: &UnfoldNetwork, sys: &SystemConfig, n: usize, j: usize, seed: u64) -> Result<Vec<SymbolBatch>> {
    (0..n)
        .map(|i| {
            let mut rng = seed::stream(seed::derive(seed, i as u64), 4);
            sample_symbol_batch_with(
                net.constellation,
                &sys.streams_per_user,
                capped_sample_size(net.constellation, &sys.streams_per_user, j),
                &mut rng,
            )
        })
        .collect()
}

fn accumulate(acc: &mut LayerGrad, g: &LayerGrad) {
    let mut a = acc.to_vec();
    for (x, y) in a.iter_mut().zip(g.to_vec()) {
        *x += y;
    }
    acc.assign(&a);
}

fn sgd(net: &mut UnfoldNetwork, grads: &[LayerGrad], step: f64, frozen: usize, rho_floor: f64) {
    let floor = rho_floor * net.rho;
    for (layer, g) in net.layers.iter_mut().zip(grads).skip(frozen) {
        let mut x = layer.to_vec();
        for (v, d) in x.iter_mut().zip(g.to_vec()) {
            *v -= step * d;
        }
        layer.assign(&x);
        for r in layer.rho_p.iter_mut().chain(&mut layer.rho_w).chain(&mut layer.rho_u) {
            *r = r.max(floor);
        }
        if let Some(t) = &mut layer.theta_f {
            t.rho = t.rho.max(floor);
        }
    }
}

/// Mini-batch SGD on the layer parameters. Each step draws `batch_size`
/// channels and one shared symbol batch, averages the parameter gradients
/// in a fixed order, and updates real and imaginary parts independently.
pub fn train(
    net: &UnfoldNetwork,
    sys: &SystemConfig,
    train_set: &[ChannelRealization],
    validation_set: &[ChannelRealization],
    cfg: &TrainConfig,
    seed: u64,
    observe: &mut dyn FnMut(&TrainTracePoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    net.check_system(sys)?;
    let train_samples = prepare(sys, train_set)?;
    let val_samples = prepare(sys, validation_set)?;
    let val_batches = validation_batches(net, sys, val_samples.len(), cfg.sample_size, seed::derive(seed, 1))?;

    let mut rng: Rng = seed::stream(seed, 0);
    let mut net = net.clone();
    let initial = mean_loss(&net, &val_samples, &val_batches)?;
    let mut best = (initial, net.clone());
    let mut history = vec![initial];
    let mut trace = Vec::new();
    let n = cfg.batch_size.min(train_samples.len());

    for t in 0..cfg.max_iters {
        let step = cfg.step_at(t);
        let batch = sample_symbol_batch_with(
            net.constellation,
            &sys.streams_per_user,
            capped_sample_size(net.constellation, &sys.streams_per_user, cfg.sample_size),
            &mut rng,
        )?;
        let picks = sample(&mut rng, train_samples.len(), n).into_vec();
        let results: Vec<_> = picks
            .par_iter()
            .map(|&i| {
                let s = &train_samples[i];
                let tape = forward(&net, &s.bf0, &s.h, &batch)?;
                backward(&net, &tape, &s.h, &batch, cfg.normalize)
            })
            .collect::<Result<_>>()?;
        let mut grads: Vec<LayerGrad> = net.layers.iter().map(|l| l.zeros_like()).collect();
        let mut train_loss = 0.0;
        for r in &results {
            train_loss += r.loss;
            for (a, g) in grads.iter_mut().zip(&r.layers) {
                accumulate(a, g);
            }
        }
        let inv = 1.0 / n as f64;
        for g in &mut grads {
            let scaled: Vec<f64> = g.to_vec().into_iter().map(|x| x * inv).collect();
            g.assign(&scaled);
        }
        if grads.iter().flat_map(|g| g.to_vec()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameter gradient at step {t}")));
        }
        sgd(&mut net, &grads, step, cfg.frozen_layers, cfg.rho_floor);

        let val = mean_loss(&net, &val_samples, &val_batches)?;
        let point = TrainTracePoint {
            epoch: t + 1,
            train_loss: train_loss * inv,
            validation_loss: val,
            step,
        };
        observe(&point);
        trace.push(point);
        if val < best.0 {
            best = (val, net.clone());
        }
        history.push(best.0);
        if history.len() > cfg.patience {
            let old = history[history.len() - 1 - cfg.patience];
            if old > 0.0 && (old - best.0) / old < cfg.tolerance {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        network: best.1,
        trace,
        initial_validation_loss: initial,
        best_validation_loss: best.0,
    })
}
