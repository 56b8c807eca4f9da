//! Symbol-error-rate objective.
//!
//! The receiver output of stream `(i, k)` given symbol vector `s` is
//! Gaussian around the noise-free value `c^T s`; the error probability per
//! real dimension is a Gaussian tail. With a constant kernel width `rho`
//! and `J` sampled vectors the tails become
//! `T(-y / (sqrt(2) rho)) / (J sqrt(pi))` where `T(x) = int_{-inf}^x e^{-s^2} ds`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::chain::{self, Forward, Problem};
use crate::channel::ChannelRealization;
use crate::transceiver::{conditioned_batch, Constellation, HybridBeamformers, SymbolBatch};
use crate::{Error, Result, C64};

/// Constant kernel width and sample count of the density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub rho: f64,
    pub sample_size: usize,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config("kernel width must be positive".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        Ok(())
    }
}

/// `int_{-inf}^x exp(-s^2) ds = sqrt(pi)/2 * erfc(-x)`, clamped to `[0, sqrt(pi)]`.
pub fn tail_integral(x: f64) -> f64 {
    (0.5 * PI.sqrt() * libm::erfc(-x)).clamp(0.0, PI.sqrt())
}

/// [`tail_integral`] rejecting NaN.
pub fn tail_integral_checked(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidArgument("tail integral of NaN".into()));
    }
    Ok(tail_integral(x))
}

/// Gaussian-kernel density estimate from noise-free real outputs.
pub fn kernel_pdf(x: f64, outputs: &[f64], rho: f64) -> f64 {
    let norm = 1.0 / (outputs.len() as f64 * (2.0 * PI).sqrt() * rho);
    norm * outputs.iter().map(|&b| (-(x - b).powi(2) / (2.0 * rho * rho)).exp()).sum::<f64>()
}

/// Real or imaginary axis of a receiver output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Real,
    Imag,
}

impl Axis {
    pub fn of(self, z: C64) -> f64 {
        match self {
            Axis::Real => z.re,
            Axis::Imag => z.im,
        }
    }
}

/// Width of the Gaussian components of [`exact_pdf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactWidth {
    /// Standard deviation of one axis of the filtered noise,
    /// `sigma_k ||U_k^H w_ik|| / sqrt(2)`.
    Noise {
        sigma: f64,
    },
    Fixed(f64),
}

/// Row `i` of `W_k^H U_k H_k F V`: the gains from every stream to stream `(i, k)`.
pub fn stream_gains(bf: &HybridBeamformers, h: &ChannelRealization, i: usize, k: usize) -> Vec<C64> {
    let a = bf.digital_rx[k].column(i).adjoint() * bf.analog_rx(k) * &h.matrices[k] * bf.analog_tx() * bf.stacked_tx();
    a.iter().cloned().collect()
}

/// Standard deviation of one axis of the noise after combining stream `(i, k)`.
pub fn filtered_noise_std(bf: &HybridBeamformers, i: usize, k: usize, sigma: f64) -> f64 {
    let g = bf.analog_rx(k).adjoint() * bf.digital_rx[k].column(i);
    sigma * g.norm() / SQRT_2
}

/// Exact output density of one axis of stream `(i, k)` conditioned on its
/// own symbol `desired`, by enumerating the interfering symbols.
#[allow(clippy::too_many_arguments)]
pub fn exact_pdf(
    x: f64,
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    constellation: Constellation,
    i: usize,
    k: usize,
    desired: C64,
    axis: Axis,
    width: ExactWidth,
) -> Result<f64> {
    let streams = bf.streams_per_user();
    let g = crate::transceiver::offsets(&streams)[k] + i;
    let batch = conditioned_batch(constellation, &streams, g, desired)?;
    let gains = stream_gains(bf, h, i, k);
    let std = match width {
        ExactWidth::Noise { sigma } => filtered_noise_std(bf, i, k, sigma),
        ExactWidth::Fixed(w) => w,
    };
    let outputs: Vec<f64> = (0..batch.len())
        .map(|j| axis.of(gains.iter().zip(batch.vectors.column(j).iter()).map(|(a, b)| a * b).sum()))
        .collect();
    Ok(kernel_pdf(x, &outputs, std))
}

/// Per-stream error terms: real axis, imaginary axis and their sum, the
/// upper bound that drops the product term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerTerms {
    pub real: f64,
    pub imag: f64,
    pub bound: f64,
}

fn noise_free(gains: &[C64], batch: &SymbolBatch, j: usize) -> C64 {
    gains.iter().zip(batch.vectors.column(j).iter()).map(|(a, b)| a * b).sum()
}

/// QPSK terms of stream `(i, k)` over the vectors of `batch`.
pub fn ser_terms_qpsk(bf: &HybridBeamformers, h: &ChannelRealization, batch: &SymbolBatch, i: usize, k: usize, rho: f64) -> SerTerms {
    let gains = stream_gains(bf, h, i, k);
    let g = crate::transceiver::offsets(&batch.streams_per_user)[k] + i;
    let norm = 1.0 / (batch.len() as f64 * PI.sqrt());
    let (mut re, mut im) = (0.0, 0.0);
    for j in 0..batch.len() {
        let out = noise_free(&gains, batch, j);
        let b = batch.vectors[(g, j)];
        re += tail_integral(-out.re * b.re / (SQRT_2 * rho));
        im += tail_integral(-out.im * b.im / (SQRT_2 * rho));
    }
    let (re, im) = (re * norm, im * norm);
    SerTerms {
        real: re,
        imag: im,
        bound: re + im,
    }
}

/// Square-QAM terms of stream `(i, k)`; the stream's effective gain must
/// already be real and positive (see [`HybridBeamformers::phase_rotate`]).
pub fn ser_terms_qam(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
    i: usize,
    k: usize,
    rho: f64,
    constellation: Constellation,
) -> Result<SerTerms> {
    let gains = stream_gains(bf, h, i, k);
    let g = crate::transceiver::offsets(&batch.streams_per_user)[k] + i;
    let c = gains[g];
    if !(c.re > 0.0) || c.im.abs() > 1e-9 * c.norm() {
        return Err(Error::InvalidArgument(format!(
            "effective gain {c} of stream ({i}, {k}) is not real positive; rotate first"
        )));
    }
    let norm = constellation.phi() / (batch.len() as f64 * PI.sqrt());
    let (mut re, mut im) = (0.0, 0.0);
    for j in 0..batch.len() {
        let out = noise_free(&gains, batch, j);
        let b = batch.vectors[(g, j)];
        re += tail_integral(-(out.re - c.re * (b.re - 1.0)) / (SQRT_2 * rho));
        im += tail_integral(-(out.im - c.re * (b.im - 1.0)) / (SQRT_2 * rho));
    }
    let (re, im) = (re * norm, im * norm);
    Ok(SerTerms {
        real: re,
        imag: im,
        bound: re + im,
    })
}

/// Sum of all streams' bounds on one channel.
pub fn channel_loss(bf: &HybridBeamformers, h: &ChannelRealization, batch: &SymbolBatch, constellation: Constellation, rho: f64) -> f64 {
    let problem = Problem::new(&h.matrices, batch, constellation);
    let fwd = Forward::from_state(&problem, bf);
    chain::loss(&problem, &fwd, rho)
}

/// Mean over channels of the summed per-stream bounds.
pub fn loss(
    bf: &[HybridBeamformers],
    channels: &[ChannelRealization],
    batches: &[SymbolBatch],
    constellation: Constellation,
    rho: f64,
) -> Result<f64> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("empty channel batch".into()));
    }
    if bf.len() != channels.len() || batches.len() != channels.len() {
        return Err(Error::Dimension("one state and one symbol batch per channel required".into()));
    }
    let total: f64 = channels
        .iter()
        .zip(bf)
        .zip(batches)
        .map(|((h, b), s)| channel_loss(b, h, s, constellation, rho))
        .sum();
    Ok(total / channels.len() as f64)
}
