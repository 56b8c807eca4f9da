use hybeam::channel::{sample_channel, ClusteredChannelConfig};
use hybeam::eval::{finite_diff_gradient, pack_state, unpack_state};
use hybeam::gd::{gradients, Steps};
use hybeam::mser::{channel_loss, stream_gains};
use hybeam::seed;
use hybeam::transceiver::{sample_symbol_batch, Constellation, HybridBeamformers, SystemConfig};
use hybeam::unfold::{backward, forward, network_loss, NetworkShape, UnfoldNetwork};
use hybeam::{Error, Result};

const H: f64 = 1e-5;
const STATE_TOL: f64 = 1e-6;
const NETWORK_TOL: f64 = 1e-5;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn output_scale(bf: &HybridBeamformers, h: &hybeam::channel::ChannelRealization) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for k in 0..bf.n_users() {
        for g in stream_gains(bf, h, 0, k) {
            acc += g.norm_sqr();
            n += 1;
        }
    }
    (acc / n as f64).sqrt()
}

/// One line per check; fails when any relative error exceeds its tolerance.
pub fn run(seed_value: u64) -> Result<()> {
    let sys = SystemConfig::uniform(8, 4, 2, 4, 2, 1, 10.0);
    let h = sample_channel(&ClusteredChannelConfig::new(sys.n_tx, sys.n_rx_per_user.clone()), seed_value)?;
    let bf = HybridBeamformers::random(&sys, &mut seed::stream(seed_value, 77))?.scale_power(sys.power_budget)?;
    let batch = sample_symbol_batch(Constellation::Qpsk, &sys.streams_per_user, 16, seed_value + 1)?;
    let rho = output_scale(&bf, &h);
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();

    let g = gradients(&bf, &h, &batch, Constellation::Qpsk, rho);
    let mut analytic = Vec::new();
    for m in g.p_conj.iter().chain(&g.w_conj) {
        analytic.extend(m.iter().flat_map(|x| [2.0 * x.re, 2.0 * x.im]));
    }
    for m in &g.theta_u {
        analytic.extend(m.iter());
    }
    analytic.extend(g.theta_f.iter());
    let fd = finite_diff_gradient(
        &mut |x| channel_loss(&unpack_state(&bf, x), &h, &batch, Constellation::Qpsk, rho),
        &pack_state(&bf),
        H,
    )?;
    let e = rel_err(&analytic, &fd);
    println!("state gradients (P, W, theta_U, theta_F): relative error {e:.3e} (tolerance {STATE_TOL:.0e})");
    if e >= STATE_TOL {
        failed.push("state gradients");
    }
    worst = worst.max(e);

    let steps = Steps {
        p: 0.05,
        w: 0.05,
        theta_u: 0.02,
        theta_f: 0.02,
    };
    let net = UnfoldNetwork::perturbed_descent(
        NetworkShape::of(&sys),
        Constellation::Qpsk,
        2,
        steps,
        rho,
        sys.power_budget,
        0.3,
        &mut seed::stream(seed_value, 9),
    )?;
    let tape = forward(&net, &bf, &h, &batch)?;
    let grads = backward(&net, &tape, &h, &batch, false)?;
    for l in 0..net.n_layers() {
        let x0 = net.layers[l].to_vec();
        let fd = finite_diff_gradient(
            &mut |x| {
                let mut n = net.clone();
                n.layers[l].assign(x);
                network_loss(&n, &bf, &h, &batch).unwrap_or(f64::NAN)
            },
            &x0,
            H,
        )?;
        let e = rel_err(&grads.layers[l].to_vec(), &fd);
        println!(
            "layer {l} parameters ({} coordinates): relative error {e:.3e} (tolerance {NETWORK_TOL:.0e})",
            x0.len()
        );
        if e >= NETWORK_TOL {
            failed.push("layer parameters");
        }
        worst = worst.max(e);
    }

    if failed.is_empty() {
        println!("gradcheck passed; worst relative error {worst:.3e}");
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}
