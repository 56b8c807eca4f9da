use crate::chain::{self, Bars, Forward, Problem, StateCotangent};
use crate::channel::ChannelRealization;
use crate::transceiver::{HybridBeamformers, SymbolBatch};
use crate::{CMat, Result, C64};

use super::params::{LayerGrad, LayerParams, UnfoldNetwork};

/// Elementary operation of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// Rotate every stream's effective gain onto the positive real axis.
    Rotate,
    UpdateP,
    UpdateW,
    UpdateThetaU,
    /// Trainable analog precoder update; plain descent step in the last layer.
    UpdateThetaF,
    Scale,
}

#[derive(Debug, Clone)]
struct Entry {
    op: Op,
    layer: usize,
    input: HybridBeamformers,
}

/// Intermediate states recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    entries: Vec<Entry>,
    output: HybridBeamformers,
}

impl Tape {
    /// Network output (before the loss rotation for QAM).
    pub fn output(&self) -> &HybridBeamformers {
        &self.output
    }

    /// States at the layer boundaries, input first.
    pub fn layer_states(&self) -> Vec<HybridBeamformers> {
        let mut out = Vec::new();
        let mut last = None;
        for e in &self.entries {
            if last != Some(e.layer) {
                out.push(e.input.clone());
                last = Some(e.layer);
            }
        }
        out.push(self.output.clone());
        out
    }

    /// State right after the first `op` of `layer`.
    pub fn state_after(&self, layer: usize, op: Op) -> Option<&HybridBeamformers> {
        let pos = self.entries.iter().position(|e| e.layer == layer && e.op == op)?;
        Some(self.entries.get(pos + 1).map_or(&self.output, |e| &e.input))
    }
}

/// Loss gradient of every layer plus per-boundary state cotangents.
#[derive(Debug, Clone)]
pub struct NetworkGradient {
    pub loss: f64,
    pub layers: Vec<LayerGrad>,
    /// Cotangent of the state entering each layer; the last entry is the
    /// network output. Entries `1..` are normalised when requested.
    pub states: Vec<StateCotangent>,
}

fn layer_ops(qam: bool) -> Vec<Op> {
    let mut ops = Vec::new();
    for op in [Op::UpdateP, Op::UpdateW, Op::UpdateThetaU, Op::UpdateThetaF] {
        if qam {
            ops.push(Op::Rotate);
        }
        ops.push(op);
    }
    ops.push(Op::Scale);
    ops
}

fn apply(net: &UnfoldNetwork, problem: &Problem, op: Op, params: &LayerParams, x: &HybridBeamformers) -> Result<HybridBeamformers> {
    let mut out = x.clone();
    match op {
        Op::Rotate => {
            let fwd = Forward::from_state(problem, x);
            out.digital_rx = chain::rotated_combiners(&fwd)?;
        }
        Op::Scale => out = x.scale_power(net.power_budget)?,
        Op::UpdateP => {
            let fwd = Forward::from_state(problem, x);
            for (k, p) in params.p.iter().enumerate() {
                let g = chain::grad_p(problem, &fwd, k, params.rho_p[k]);
                out.digital_tx[k] = &x.digital_tx[k] - p.alpha.component_mul(&g) + &p.offset;
            }
        }
        Op::UpdateW => {
            let fwd = Forward::from_state(problem, x);
            for (k, p) in params.w.iter().enumerate() {
                let g = chain::grad_w(problem, &fwd, k, params.rho_w[k]);
                out.digital_rx[k] = &x.digital_rx[k] - p.alpha.component_mul(&g) + &p.offset;
            }
        }
        Op::UpdateThetaU => {
            let fwd = Forward::from_state(problem, x);
            for (k, p) in params.theta_u.iter().enumerate() {
                let gu = chain::grad_u(problem, &fwd, k, params.rho_u[k]);
                let g = chain::phase_cotangent(&gu, &fwd.u[k]);
                out.analog_rx_phase[k] = &x.analog_rx_phase[k] - p.alpha.component_mul(&g) + &p.offset;
            }
        }
        Op::UpdateThetaF => {
            let fwd = Forward::from_state(problem, x);
            match &params.theta_f {
                Some(t) => {
                    let g = chain::phase_cotangent(&chain::grad_f(problem, &fwd, t.rho), &fwd.f);
                    out.analog_tx_phase = &x.analog_tx_phase - t.param.alpha.component_mul(&g) + &t.param.offset;
                }
                None => {
                    let g = chain::phase_cotangent(&chain::grad_f(problem, &fwd, net.rho), &fwd.f);
                    out.analog_tx_phase = &x.analog_tx_phase - g * net.final_step_theta_f;
                }
            }
        }
    }
    Ok(out)
}

/// Run one layer.
pub fn forward_layer(
    net: &UnfoldNetwork,
    layer: usize,
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
) -> Result<HybridBeamformers> {
    let problem = Problem::new(&h.matrices, batch, net.constellation);
    let mut x = bf.clone();
    for op in layer_ops(net.constellation.is_qam()) {
        x = apply(net, &problem, op, &net.layers[layer], &x)?;
    }
    Ok(x)
}

/// Run every layer from `bf0`, recording the tape.
pub fn forward(net: &UnfoldNetwork, bf0: &HybridBeamformers, h: &ChannelRealization, batch: &SymbolBatch) -> Result<Tape> {
    let problem = Problem::new(&h.matrices, batch, net.constellation);
    let ops = layer_ops(net.constellation.is_qam());
    let mut entries = Vec::with_capacity(ops.len() * net.n_layers());
    let mut x = bf0.clone();
    for (l, params) in net.layers.iter().enumerate() {
        for &op in &ops {
            let y = apply(net, &problem, op, params, &x)?;
            entries.push(Entry { op, layer: l, input: x });
            x = y;
        }
    }
    Ok(Tape { entries, output: x })
}

/// Loss of the network output from `bf0`.
pub fn network_loss(net: &UnfoldNetwork, bf0: &HybridBeamformers, h: &ChannelRealization, batch: &SymbolBatch) -> Result<f64> {
    let tape = forward(net, bf0, h, batch)?;
    crate::gd::state_loss(tape.output(), h, batch, net.constellation, net.rho)
}

/// Rescale the state cotangent so that each of the `P`, `W` and `theta_U`
/// groups has total norm equal to its number of users and `theta_F` has
/// unit norm.
pub fn normalize_cotangent(cot: &mut StateCotangent) {
    fn rescale<T>(items: &mut [T], norm: impl Fn(&T) -> f64, scale: impl Fn(&mut T, f64)) {
        let total: f64 = items.iter().map(&norm).sum();
        if total > 0.0 && total.is_finite() {
            let s = items.len() as f64 / total;
            items.iter_mut().for_each(|x| scale(x, s));
        }
    }
    rescale(&mut cot.p, |m| m.norm(), |m, s| *m *= C64::new(s, 0.0));
    rescale(&mut cot.w, |m| m.norm(), |m, s| *m *= C64::new(s, 0.0));
    rescale(&mut cot.theta_u, |m| m.norm(), |m, s| *m *= s);
    let n = cot.theta_f.norm();
    if n > 0.0 && n.is_finite() {
        cot.theta_f /= n;
    }
}

fn pull_back(problem: &Problem, fwd: &Forward, bars: Bars, mut cot: StateCotangent) -> StateCotangent {
    let bars = chain::reverse(problem, fwd, bars);
    cot.add_assign(&chain::to_state(fwd, &bars));
    cot
}

fn rotate_vjp(problem: &Problem, x: &HybridBeamformers, cot: StateCotangent) -> Result<StateCotangent> {
    let fwd = Forward::from_state(problem, x);
    let mut bars = Bars::zeros(&fwd);
    let direct = chain::rotation_vjp(&fwd, &cot.w, &mut bars)?;
    Ok(pull_back(problem, &fwd, bars, StateCotangent { w: direct, ..cot }))
}

fn scale_vjp(x: &HybridBeamformers, power_budget: f64, mut cot: StateCotangent) -> StateCotangent {
    let v = x.stacked_tx();
    let f = x.analog_tx();
    let fv = &f * &v;
    let n = fv.norm_squared();
    let s = (power_budget / n).sqrt();
    let v_hat = crate::transceiver::hstack(&cot.p);
    let s_hat = 2.0 * v.iter().zip(v_hat.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
    let n_hat = s_hat * (-s / (2.0 * n));
    let x_hat = fv * C64::new(n_hat, 0.0);
    let f_hat = &x_hat * v.adjoint();
    let v_in = v_hat * C64::new(s, 0.0) + f.ad_mul(&x_hat);
    let mut o = 0;
    for p in cot.p.iter_mut() {
        let d = p.ncols();
        *p = v_in.columns(o, d).into_owned();
        o += d;
    }
    cot.theta_f += chain::phase_cotangent(&f_hat, &f);
    cot
}

fn cgrad(x: &CMat) -> CMat {
    x * C64::new(2.0, 0.0)
}

#[allow(clippy::too_many_arguments)]
fn update_vjp(
    net: &UnfoldNetwork,
    problem: &Problem,
    op: Op,
    params: &LayerParams,
    grad: &mut LayerGrad,
    x: &HybridBeamformers,
    cot: StateCotangent,
) -> Result<StateCotangent> {
    let fwd = Forward::from_state(problem, x);
    let mut bars = Bars::zeros(&fwd);
    match op {
        Op::UpdateP => {
            for (k, p) in params.p.iter().enumerate() {
                let rho = params.rho_p[k];
                let g = chain::grad_p(problem, &fwd, k, rho);
                let out = &cot.p[k];
                grad.p[k].alpha += cgrad(&-out.component_mul(&g.map(|z| z.conj())));
                grad.p[k].offset += cgrad(out);
                let lambda = -p.alpha.map(|z| z.conj()).component_mul(out);
                grad.rho_p[k] += chain::grad_p_vjp(problem, &fwd, k, rho, &lambda, &mut bars);
            }
        }
        Op::UpdateW => {
            for (k, p) in params.w.iter().enumerate() {
                let rho = params.rho_w[k];
                let g = chain::grad_w(problem, &fwd, k, rho);
                let out = &cot.w[k];
                grad.w[k].alpha += cgrad(&-out.component_mul(&g.map(|z| z.conj())));
                grad.w[k].offset += cgrad(out);
                let lambda = -p.alpha.map(|z| z.conj()).component_mul(out);
                grad.rho_w[k] += chain::grad_w_vjp(problem, &fwd, k, rho, &lambda, &mut bars);
            }
        }
        Op::UpdateThetaU => {
            for (k, p) in params.theta_u.iter().enumerate() {
                let rho = params.rho_u[k];
                let g = chain::phase_cotangent(&chain::grad_u(problem, &fwd, k, rho), &fwd.u[k]);
                let out = &cot.theta_u[k];
                grad.theta_u[k].alpha -= out.component_mul(&g);
                grad.theta_u[k].offset += out;
                let lambda = -p.alpha.component_mul(out);
                grad.rho_u[k] += chain::grad_theta_u_vjp(problem, &fwd, k, rho, &lambda, &mut bars);
            }
        }
        Op::UpdateThetaF => {
            let out = &cot.theta_f;
            match (&params.theta_f, &mut grad.theta_f) {
                (Some(t), Some(gt)) => {
                    let g = chain::phase_cotangent(&chain::grad_f(problem, &fwd, t.rho), &fwd.f);
                    gt.param.alpha -= out.component_mul(&g);
                    gt.param.offset += out;
                    let lambda = -t.param.alpha.component_mul(out);
                    gt.rho += chain::grad_theta_f_vjp(problem, &fwd, t.rho, &lambda, &mut bars);
                }
                _ => {
                    let lambda = out * -net.final_step_theta_f;
                    chain::grad_theta_f_vjp(problem, &fwd, net.rho, &lambda, &mut bars);
                }
            }
        }
        Op::Rotate | Op::Scale => unreachable!("not an update"),
    }
    Ok(pull_back(problem, &fwd, bars, cot))
}

/// Reverse pass: gradient of the loss of the network output with respect
/// to every layer's parameters. With `normalize`, the state cotangent is
/// rescaled by [`normalize_cotangent`] before entering each layer's
/// reverse sweep, so the result is no longer the exact gradient.
pub fn backward(net: &UnfoldNetwork, tape: &Tape, h: &ChannelRealization, batch: &SymbolBatch, normalize: bool) -> Result<NetworkGradient> {
    let problem = Problem::new(&h.matrices, batch, net.constellation);
    let out = &tape.output;

    let (loss, mut cot) = if net.constellation.is_qam() {
        let fwd0 = Forward::from_state(&problem, out);
        let rotated = HybridBeamformers {
            digital_rx: chain::rotated_combiners(&fwd0)?,
            ..out.clone()
        };
        let fwd = Forward::from_state(&problem, &rotated);
        let mut bars = Bars::zeros(&fwd);
        let loss = chain::loss_vjp(&problem, &fwd, net.rho, 1.0, &mut bars);
        let seed = pull_back(&problem, &fwd, bars, StateCotangent::zeros_like(out));
        (loss, rotate_vjp(&problem, out, seed)?)
    } else {
        let fwd = Forward::from_state(&problem, out);
        let mut bars = Bars::zeros(&fwd);
        let loss = chain::loss_vjp(&problem, &fwd, net.rho, 1.0, &mut bars);
        (loss, pull_back(&problem, &fwd, bars, StateCotangent::zeros_like(out)))
    };

    let n_layers = net.n_layers();
    let mut grads: Vec<LayerGrad> = net.layers.iter().map(|l| l.zeros_like()).collect();
    let mut states = vec![None; n_layers + 1];
    let mut current = None;
    for e in tape.entries.iter().rev() {
        if current != Some(e.layer) {
            if normalize {
                normalize_cotangent(&mut cot);
            }
            states[e.layer + 1] = Some(cot.clone());
            current = Some(e.layer);
        }
        cot = match e.op {
            Op::Rotate => rotate_vjp(&problem, &e.input, cot)?,
            Op::Scale => scale_vjp(&e.input, net.power_budget, cot),
            op => update_vjp(net, &problem, op, &net.layers[e.layer], &mut grads[e.layer], &e.input, cot)?,
        };
    }
    states[0] = Some(cot);
    Ok(NetworkGradient {
        loss,
        layers: grads,
        states: states.into_iter().map(|s| s.expect("every layer visited")).collect(),
    })
}
