use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::chain::{self, Forward, Problem};
use crate::channel::ChannelRealization;
use crate::gd::Steps;
use crate::seed::Rng;
use crate::transceiver::{Constellation, HybridBeamformers, SymbolBatch, SystemConfig};
use crate::{CMat, Error, RMat, Result, C64};

/// Dimensions a network is built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub n_tx: usize,
    pub n_rf_tx: usize,
    pub n_rx_per_user: Vec<usize>,
    pub n_rf_rx_per_user: Vec<usize>,
    pub streams_per_user: Vec<usize>,
}

impl NetworkShape {
    pub fn of(sys: &SystemConfig) -> Self {
        NetworkShape {
            n_tx: sys.n_tx,
            n_rf_tx: sys.n_rf_tx,
            n_rx_per_user: sys.n_rx_per_user.clone(),
            n_rf_rx_per_user: sys.n_rf_rx_per_user.clone(),
            streams_per_user: sys.streams_per_user.clone(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.streams_per_user.len()
    }
}

/// Step matrix and offset of a complex variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexParam {
    pub alpha: CMat,
    pub offset: CMat,
}

/// Step matrix and offset of a phase variable.
#[derive(Debug, Clone, PartialEq)]
pub struct RealParam {
    pub alpha: RMat,
    pub offset: RMat,
}

/// Trainable update of the analog precoder phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseUpdate {
    pub param: RealParam,
    pub rho: f64,
}

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub p: Vec<ComplexParam>,
    pub rho_p: Vec<f64>,
    pub w: Vec<ComplexParam>,
    pub rho_w: Vec<f64>,
    pub theta_u: Vec<RealParam>,
    pub rho_u: Vec<f64>,
    /// `None` in the last layer, which uses the plain descent step.
    pub theta_f: Option<PhaseUpdate>,
}

/// Gradient of the loss with respect to one layer's parameters. Complex
/// entries hold `dl/dRe + j dl/dIm`.
pub type LayerGrad = LayerParams;

fn cfill(r: usize, c: usize, v: f64) -> CMat {
    CMat::from_element(r, c, C64::new(v, 0.0))
}

impl LayerParams {
    /// Parameters that reproduce one descent iteration.
    pub fn descent(shape: &NetworkShape, steps: Steps, rho: f64, last: bool) -> Self {
        let k = shape.n_users();
        let zc = |r, c| CMat::zeros(r, c);
        LayerParams {
            p: (0..k)
                .map(|u| ComplexParam {
                    alpha: cfill(shape.n_rf_tx, shape.streams_per_user[u], steps.p),
                    offset: zc(shape.n_rf_tx, shape.streams_per_user[u]),
                })
                .collect(),
            rho_p: vec![rho; k],
            w: (0..k)
                .map(|u| ComplexParam {
                    alpha: cfill(shape.n_rf_rx_per_user[u], shape.streams_per_user[u], steps.w),
                    offset: zc(shape.n_rf_rx_per_user[u], shape.streams_per_user[u]),
                })
                .collect(),
            rho_w: vec![rho; k],
            theta_u: (0..k)
                .map(|u| RealParam {
                    alpha: RMat::from_element(shape.n_rf_rx_per_user[u], shape.n_rx_per_user[u], steps.theta_u),
                    offset: RMat::zeros(shape.n_rf_rx_per_user[u], shape.n_rx_per_user[u]),
                })
                .collect(),
            rho_u: vec![rho; k],
            theta_f: (!last).then(|| PhaseUpdate {
                param: RealParam {
                    alpha: RMat::from_element(shape.n_tx, shape.n_rf_tx, steps.theta_f),
                    offset: RMat::zeros(shape.n_tx, shape.n_rf_tx),
                },
                rho,
            }),
        }
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let zc = |p: &ComplexParam| ComplexParam {
            alpha: CMat::zeros(p.alpha.nrows(), p.alpha.ncols()),
            offset: CMat::zeros(p.offset.nrows(), p.offset.ncols()),
        };
        let zr = |p: &RealParam| RealParam {
            alpha: RMat::zeros(p.alpha.nrows(), p.alpha.ncols()),
            offset: RMat::zeros(p.offset.nrows(), p.offset.ncols()),
        };
        LayerParams {
            p: self.p.iter().map(zc).collect(),
            rho_p: vec![0.0; self.rho_p.len()],
            w: self.w.iter().map(zc).collect(),
            rho_w: vec![0.0; self.rho_w.len()],
            theta_u: self.theta_u.iter().map(zr).collect(),
            rho_u: vec![0.0; self.rho_u.len()],
            theta_f: self.theta_f.as_ref().map(|t| PhaseUpdate {
                param: zr(&t.param),
                rho: 0.0,
            }),
        }
    }

    /// Number of real trainable coordinates.
    pub fn real_count(&self) -> usize {
        let c: usize = self.p.iter().chain(&self.w).map(|p| 2 * (p.alpha.len() + p.offset.len())).sum();
        let r: usize = self.theta_u.iter().map(|p| p.alpha.len() + p.offset.len()).sum();
        let f = self.theta_f.as_ref().map_or(0, |t| t.param.alpha.len() + t.param.offset.len() + 1);
        c + r + f + self.rho_p.len() + self.rho_w.len() + self.rho_u.len()
    }

    /// Flatten in declaration order; complex entries as `(re, im)` pairs,
    /// matrices column-major.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.real_count());
        let cpush = |out: &mut Vec<f64>, m: &CMat| m.iter().for_each(|x| out.extend([x.re, x.im]));
        for p in &self.p {
            cpush(&mut out, &p.alpha);
            cpush(&mut out, &p.offset);
        }
        out.extend(&self.rho_p);
        for p in &self.w {
            cpush(&mut out, &p.alpha);
            cpush(&mut out, &p.offset);
        }
        out.extend(&self.rho_w);
        for p in &self.theta_u {
            out.extend(p.alpha.iter());
            out.extend(p.offset.iter());
        }
        out.extend(&self.rho_u);
        if let Some(t) = &self.theta_f {
            out.extend(t.param.alpha.iter());
            out.extend(t.param.offset.iter());
            out.push(t.rho);
        }
        out
    }

    /// Overwrite from a slice produced by [`LayerParams::to_vec`]; returns
    /// the number of values consumed.
    pub fn assign(&mut self, x: &[f64]) -> usize {
        let mut it = x.iter().cloned();
        let mut n = 0;
        let mut next = || {
            n += 1;
            it.next().expect("parameter slice too short")
        };
        fn cfill_from(m: &mut CMat, next: &mut dyn FnMut() -> f64) {
            for v in m.iter_mut() {
                let re = next();
                let im = next();
                *v = C64::new(re, im);
            }
        }
        for p in &mut self.p {
            cfill_from(&mut p.alpha, &mut next);
            cfill_from(&mut p.offset, &mut next);
        }
        self.rho_p.iter_mut().for_each(|r| *r = next());
        for p in &mut self.w {
            cfill_from(&mut p.alpha, &mut next);
            cfill_from(&mut p.offset, &mut next);
        }
        self.rho_w.iter_mut().for_each(|r| *r = next());
        for p in &mut self.theta_u {
            p.alpha.iter_mut().for_each(|v| *v = next());
            p.offset.iter_mut().for_each(|v| *v = next());
        }
        self.rho_u.iter_mut().for_each(|r| *r = next());
        if let Some(t) = &mut self.theta_f {
            t.param.alpha.iter_mut().for_each(|v| *v = next());
            t.param.offset.iter_mut().for_each(|v| *v = next());
            t.rho = next();
        }
        n
    }
}

/// The unfolded network.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldNetwork {
    pub shape: NetworkShape,
    pub constellation: Constellation,
    pub layers: Vec<LayerParams>,
    /// Step of the plain analog precoder update in the last layer.
    pub final_step_theta_f: f64,
    /// Kernel width of the last layer's analog precoder update and of the loss.
    pub rho: f64,
    pub power_budget: f64,
}

impl UnfoldNetwork {
    /// Network whose every layer is one descent iteration.
    pub fn descent(
        shape: NetworkShape,
        constellation: Constellation,
        n_layers: usize,
        steps: Steps,
        rho: f64,
        power_budget: f64,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        let layers = (0..n_layers)
            .map(|l| LayerParams::descent(&shape, steps, rho, l + 1 == n_layers))
            .collect();
        Ok(UnfoldNetwork {
            shape,
            constellation,
            layers,
            final_step_theta_f: steps.theta_f,
            rho,
            power_budget,
        })
    }

    /// Descent-initialised network with every step entry perturbed by up
    /// to `jitter` relative uniform noise.
    pub fn perturbed_descent(
        shape: NetworkShape,
        constellation: Constellation,
        n_layers: usize,
        steps: Steps,
        rho: f64,
        power_budget: f64,
        jitter: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut net = Self::descent(shape, constellation, n_layers, steps, rho, power_budget)?;
        let mut shake = |x: f64| x * (1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0));
        for layer in &mut net.layers {
            for p in layer.p.iter_mut().chain(layer.w.iter_mut()) {
                p.alpha.iter_mut().for_each(|a| a.re = shake(a.re));
            }
            for p in &mut layer.theta_u {
                p.alpha.iter_mut().for_each(|a| *a = shake(*a));
            }
            if let Some(t) = &mut layer.theta_f {
                t.param.alpha.iter_mut().for_each(|a| *a = shake(*a));
            }
        }
        Ok(net)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of real trainable coordinates allocated.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.real_count()).sum()
    }

    pub fn check_system(&self, sys: &SystemConfig) -> Result<()> {
        if NetworkShape::of(sys) != self.shape {
            return Err(Error::Dimension(format!(
                "network built for {:?} but the system is {:?}",
                self.shape,
                NetworkShape::of(sys)
            )));
        }
        Ok(())
    }
}

/// Closed-form trainable-parameter count quoted for this architecture:
/// `2KL(3 + Nt D + Nr D + Rr Nr) + 2(L-1) Rt Nt` for homogeneous users.
pub fn formula_param_count(shape: &NetworkShape, n_layers: usize) -> usize {
    let k = shape.n_users();
    let d = shape.streams_per_user[0];
    let (nt, rt) = (shape.n_tx, shape.n_rf_tx);
    let (nr, rr) = (shape.n_rx_per_user[0], shape.n_rf_rx_per_user[0]);
    2 * k * n_layers * (3 + nt * d + nr * d + rr * nr) + 2 * (n_layers - 1) * rt * nt
}

/// Layer parameters under which one layer started at `bf_t` moves `P`
/// exactly as two descent iterations would: descent steps everywhere, and
/// the `P` offset set to the second iteration's step at `bf_t1`, the
/// unscaled state after the first iteration.
pub fn two_step_params(
    shape: &NetworkShape,
    bf_t1: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    steps: Steps,
    rho: f64,
) -> Result<LayerParams> {
    let mut params = LayerParams::descent(shape, steps, rho, false);
    let problem = Problem::new(&h.matrices, batch, constellation);
    let mut state = bf_t1.clone();
    if constellation.is_qam() {
        let fwd = Forward::from_state(&problem, &state);
        state.digital_rx = chain::rotated_combiners(&fwd)?;
    }
    let fwd = Forward::from_state(&problem, &state);
    for k in 0..shape.n_users() {
        let g = chain::grad_p(&problem, &fwd, k, rho);
        params.p[k].offset = g * C64::new(-steps.p, 0.0);
    }
    Ok(params)
}
