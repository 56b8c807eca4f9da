#![allow(dead_code)]

use hybeam::channel::{sample_channel, ChannelRealization, ClusteredChannelConfig};
use hybeam::seed;
use hybeam::transceiver::{HybridBeamformers, SystemConfig};
use hybeam::{CMat, RMat, C64};

/// The small gradient-check system: K=2, Nt=8, Rt=4, Nr=4, Rr=2, one stream each.
pub fn small_system(users: usize) -> SystemConfig {
    SystemConfig::uniform(8, 4, users, 4, 2, 1, 10.0)
}

pub fn small_instance(users: usize, seed_value: u64) -> (SystemConfig, ChannelRealization, HybridBeamformers) {
    let sys = small_system(users);
    let h = sample_channel(&ClusteredChannelConfig::new(sys.n_tx, sys.n_rx_per_user.clone()), seed_value).unwrap();
    let bf = HybridBeamformers::random(&sys, &mut seed::stream(seed_value, 77)).unwrap();
    (sys, h, bf)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Real coordinates `(Re, Im)` of a conjugate Wirtinger gradient.
pub fn split_grad(g: &CMat) -> Vec<f64> {
    g.iter().flat_map(|x| [2.0 * x.re, 2.0 * x.im]).collect()
}

pub fn flat_complex(m: &CMat) -> Vec<f64> {
    m.iter().flat_map(|x| [x.re, x.im]).collect()
}

pub fn unflat_complex(shape: (usize, usize), x: &[f64]) -> CMat {
    CMat::from_fn(shape.0, shape.1, |r, c| {
        let i = 2 * (c * shape.0 + r);
        C64::new(x[i], x[i + 1])
    })
}

pub fn flat_real(m: &RMat) -> Vec<f64> {
    m.iter().cloned().collect()
}

/// RMS magnitude of the effective stream gains; a kernel width of this size
/// keeps every loss term away from saturation.
pub fn output_scale(bf: &HybridBeamformers, h: &ChannelRealization) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for k in 0..bf.n_users() {
        for i in 0..bf.digital_tx[k].ncols() {
            for g in hybeam::mser::stream_gains(bf, h, i, k) {
                acc += g.norm_sqr();
                n += 1;
            }
        }
    }
    (acc / n as f64).sqrt()
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `K = 1`, one antenna everywhere and unit gains: the chain is the identity.
pub fn scalar_chain(gain: f64) -> (SystemConfig, ChannelRealization, HybridBeamformers) {
    let sys = SystemConfig::uniform(1, 1, 1, 1, 1, 1, 10.0);
    let h = ChannelRealization {
        matrices: vec![CMat::from_element(1, 1, C64::new(gain, 0.0))],
        seed: 0,
        model: hybeam::channel::ChannelModel::External,
    };
    let bf = HybridBeamformers {
        digital_tx: vec![CMat::from_element(1, 1, C64::new(1.0, 0.0))],
        digital_rx: vec![CMat::from_element(1, 1, C64::new(1.0, 0.0))],
        analog_rx_phase: vec![RMat::zeros(1, 1)],
        analog_tx_phase: RMat::zeros(1, 1),
    };
    (sys, h, bf)
}

/// Quadrature of the exact per-axis error densities of QPSK stream `i` of
/// user 0. Returns the union bound and the SER with the product term taken
/// per transmitted symbol.
pub fn error_quadrature(bf: &HybridBeamformers, h: &ChannelRealization, sigma: f64, i: usize) -> (f64, f64) {
    use hybeam::mser::{exact_pdf, filtered_noise_std, stream_gains, Axis, ExactWidth};
    use hybeam::transceiver::Constellation;
    let std = filtered_noise_std(bf, i, 0, sigma);
    let reach: f64 = stream_gains(bf, h, i, 0).iter().map(|g| g.norm()).sum::<f64>() + 12.0 * std;
    let points = Constellation::Qpsk.points();
    let (mut bound, mut ser) = (0.0, 0.0);
    for &b in &points {
        let mut axes = [0.0; 2];
        for (a, axis) in [Axis::Real, Axis::Imag].into_iter().enumerate() {
            let (lo, hi) = if axis.of(b) > 0.0 { (-reach, 0.0) } else { (0.0, reach) };
            axes[a] = simpson(
                &mut |x| exact_pdf(x, bf, h, Constellation::Qpsk, i, 0, b, axis, ExactWidth::Noise { sigma }).unwrap(),
                lo,
                hi,
                4000,
            );
        }
        bound += axes[0] + axes[1];
        ser += axes[0] + axes[1] - axes[0] * axes[1];
    }
    let n = points.len() as f64;
    (bound / n, ser / n)
}
