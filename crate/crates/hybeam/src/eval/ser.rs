use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::mser::{filtered_noise_std, stream_gains};
use crate::seed;
use crate::transceiver::{exhaustive_batch, offsets, sample_symbol_batch, Constellation, HybridBeamformers, SymbolBatch};
use crate::{CMat, Error, Result, C64};

/// Measured symbol error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerEstimate {
    pub ser: f64,
    pub symbol_errors: u64,
    pub trials: u64,
    pub std_error: f64,
}

impl SerEstimate {
    pub fn from_counts(symbol_errors: u64, trials: u64) -> Self {
        let ser = if trials == 0 { 0.0 } else { symbol_errors as f64 / trials as f64 };
        let std_error = if trials == 0 {
            0.0
        } else {
            (ser * (1.0 - ser) / trials as f64).sqrt()
        };
        SerEstimate {
            ser,
            symbol_errors,
            trials,
            std_error,
        }
    }
}

/// Stopping rule of the adaptive Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub min_errors: u64,
    pub max_symbols: u64,
    /// Symbol vectors simulated per channel per round.
    pub chunk: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            min_errors: 200,
            max_symbols: 10_000_000,
            chunk: 2048,
        }
    }
}

/// Noise-free gains and noise filters of one (state, channel) pair.
struct Link {
    /// `W_k^H U_k H_k F V` stacked over users: `D x D`.
    gains: CMat,
    /// `W_k^H U_k` per user.
    filters: Vec<CMat>,
    /// Detection gain per stream (`Re c`, QAM only).
    c: Vec<f64>,
    offsets: Vec<usize>,
    sigma: Vec<f64>,
}

impl Link {
    fn new(bf: &HybridBeamformers, h: &ChannelRealization, constellation: Constellation, noise_std: &[f64]) -> Result<Self> {
        let bf = if constellation.is_qam() {
            bf.phase_rotate_all(h)?
        } else {
            bf.clone()
        };
        let f = bf.analog_tx();
        let v = bf.stacked_tx();
        let streams = bf.streams_per_user();
        let d: usize = streams.iter().sum();
        let offs = offsets(&streams);
        let mut gains = CMat::zeros(d, d);
        let mut filters = Vec::new();
        for k in 0..bf.n_users() {
            let filt = bf.digital_rx[k].adjoint() * bf.analog_rx(k);
            let e = &filt * (&h.matrices[k] * (&f * &v));
            gains.view_mut((offs[k], 0), (streams[k], d)).copy_from(&e);
            filters.push(filt);
        }
        let c = (0..d).map(|g| gains[(g, g)].re).collect();
        if noise_std.len() != bf.n_users() {
            return Err(Error::Dimension("one noise level per user required".into()));
        }
        Ok(Link {
            gains,
            filters,
            c,
            offsets: offs,
            sigma: noise_std.to_vec(),
        })
    }

    /// Simulate `n` symbol vectors, returning (symbol errors, symbols).
    fn simulate(&self, constellation: Constellation, n: usize, rng: &mut seed::Rng) -> (u64, u64) {
        let d = self.gains.nrows();
        let points = constellation.points();
        let s = CMat::from_fn(d, n, |_, _| points[rng.random_range(0..points.len())]);
        let mut out = &self.gains * &s;
        for (k, filt) in self.filters.iter().enumerate() {
            let sd = self.sigma[k] / SQRT_2;
            let noise = DMatrix::from_fn(filt.ncols(), n, |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re * sd, im * sd)
            });
            let filtered = filt * noise;
            let mut rows = out.rows_mut(self.offsets[k], filt.nrows());
            rows += filtered;
        }
        let mut errors = 0;
        for j in 0..n {
            for g in 0..d {
                if constellation.detect(out[(g, j)], self.c[g]) != s[(g, j)] {
                    errors += 1;
                }
            }
        }
        (errors, (n * d) as u64)
    }
}

/// SER over `trials` random symbol vectors with complex Gaussian noise of
/// standard deviation `noise_std[k]` at user `k`. QAM states are rotated
/// before detection.
pub fn monte_carlo_ser(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    constellation: Constellation,
    noise_std: &[f64],
    trials: u64,
    seed: u64,
) -> Result<SerEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial required".into()));
    }
    let link = Link::new(bf, h, constellation, noise_std)?;
    let mut rng = seed::stream(seed, 3);
    let (mut errors, mut symbols) = (0, 0);
    let mut left = trials;
    while left > 0 {
        let n = left.min(4096);
        let (e, s) = link.simulate(constellation, n as usize, &mut rng);
        errors += e;
        symbols += s;
        left -= n;
    }
    Ok(SerEstimate::from_counts(errors, symbols))
}

/// Adaptive SER pooled over several links: rounds of `chunk` vectors per
/// link until `min_errors` errors or `max_symbols` symbols in total.
pub fn pooled_monte_carlo_ser(
    links: &[(&HybridBeamformers, &ChannelRealization)],
    constellation: Constellation,
    noise_std: &[f64],
    cfg: &MonteCarloConfig,
    seed: u64,
) -> Result<SerEstimate> {
    if links.is_empty() {
        return Err(Error::InvalidArgument("no links to evaluate".into()));
    }
    let prepared = links
        .iter()
        .map(|(b, h)| Link::new(b, h, constellation, noise_std))
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<_> = (0..prepared.len()).map(|i| seed::stream(seed, 1000 + i as u64)).collect();
    let (mut errors, mut symbols) = (0u64, 0u64);
    while errors < cfg.min_errors && symbols < cfg.max_symbols {
        for (link, rng) in prepared.iter().zip(rngs.iter_mut()) {
            let (e, s) = link.simulate(constellation, cfg.chunk, rng);
            errors += e;
            symbols += s;
        }
    }
    Ok(SerEstimate::from_counts(errors, symbols))
}

/// Analytical SER of one stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSer {
    /// Real plus imaginary error probability.
    pub bound: f64,
    /// With the product term: the exact SER under Gaussian noise.
    pub exact: f64,
}

/// Which symbol vectors to average over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SerSampling {
    Exhaustive,
    Sampled { size: usize, seed: u64 },
}

fn q_func(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Probability that one axis is detected wrongly for a Gaussian output with
/// mean `mean`, std `std`, transmitted level `level` and gain `c`.
fn axis_error(constellation: Constellation, mean: f64, std: f64, level: f64, c: f64) -> f64 {
    match constellation {
        Constellation::Qpsk => q_func(mean * level.signum() / std),
        Constellation::Qam { .. } => {
            let levels = constellation.levels();
            let (lo, hi) = (levels[0], levels[levels.len() - 1]);
            let mut p = 0.0;
            if level > lo {
                p += q_func((mean - c * (level - 1.0)) / std);
            }
            if level < hi {
                p += q_func((c * (level + 1.0) - mean) / std);
            }
            p
        }
    }
}

/// Per-stream SER from Gaussian tails with the true filtered noise level,
/// averaged over the symbol vectors selected by `sampling`. QAM states are
/// rotated first.
pub fn analytical_ser(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    constellation: Constellation,
    noise_std: &[f64],
    sampling: SerSampling,
) -> Result<Vec<StreamSer>> {
    let streams = bf.streams_per_user();
    let batch = match sampling {
        SerSampling::Exhaustive => exhaustive_batch(constellation, &streams)?,
        SerSampling::Sampled { size, seed } => sample_symbol_batch(constellation, &streams, size, seed)?,
    };
    stream_ser_on(bf, h, constellation, noise_std, &batch)
}

fn stream_ser_on(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    constellation: Constellation,
    noise_std: &[f64],
    batch: &SymbolBatch,
) -> Result<Vec<StreamSer>> {
    let bf = if constellation.is_qam() {
        bf.phase_rotate_all(h)?
    } else {
        bf.clone()
    };
    let streams = bf.streams_per_user();
    let offs = offsets(&streams);
    let mut out = Vec::new();
    for k in 0..bf.n_users() {
        for i in 0..streams[k] {
            let g = offs[k] + i;
            let gains = stream_gains(&bf, h, i, k);
            let row = nalgebra::RowDVector::from_vec(gains.clone());
            let outs = row * &batch.vectors;
            let std = filtered_noise_std(&bf, i, k, noise_std[k]);
            let c = gains[g].re;
            let (mut bound, mut exact) = (0.0, 0.0);
            for j in 0..batch.len() {
                let b = batch.vectors[(g, j)];
                let pr = axis_error(constellation, outs[j].re, std, b.re, c);
                let pi = axis_error(constellation, outs[j].im, std, b.im, c);
                bound += pr + pi;
                exact += pr + pi - pr * pi;
            }
            let n = batch.len() as f64;
            out.push(StreamSer {
                bound: bound / n,
                exact: exact / n,
            });
        }
    }
    Ok(out)
}

/// A fixed set of symbol vectors used to compare states: every vector when
/// there are at most 4096, otherwise 2048 distinct samples.
#[derive(Debug, Clone)]
pub struct SelectionBatch {
    batch: SymbolBatch,
}

impl SelectionBatch {
    pub fn new(constellation: Constellation, streams: &[usize], seed: u64) -> Result<Self> {
        let d: usize = streams.iter().sum();
        let total = (constellation.size() as f64).powi(d as i32);
        let batch = if total <= 4096.0 {
            exhaustive_batch(constellation, streams)?
        } else {
            sample_symbol_batch(constellation, streams, 2048, seed)?
        };
        Ok(SelectionBatch { batch })
    }

    /// Mean exact per-stream SER.
    pub fn score(
        &self,
        bf: &HybridBeamformers,
        h: &ChannelRealization,
        sys: &crate::transceiver::SystemConfig,
        constellation: Constellation,
    ) -> Result<f64> {
        let s = stream_ser_on(bf, h, constellation, &sys.noise_std_per_user, &self.batch)?;
        Ok(s.iter().map(|x| x.exact).sum::<f64>() / s.len() as f64)
    }
}
