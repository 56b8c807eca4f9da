//! Alternating gradient descent on the SER bound.
//!
//! One iteration updates `P`, then `W`, then `theta_U`, then `theta_F`, each
//! with the gradient evaluated at the state left by the previous update,
//! and finally rescales the precoders to the power budget. For QAM every
//! gradient evaluation is preceded by rotating each stream's gain onto the
//! positive real axis.

use serde::{Deserialize, Serialize};

use crate::chain::{self, Forward, Problem};
use crate::channel::ChannelRealization;
use crate::seed::{self, Rng};
use crate::transceiver::{capped_sample_size, sample_symbol_batch_with, Constellation, HybridBeamformers, SymbolBatch, SystemConfig};
use crate::{CMat, Error, RMat, Result, C64};

/// Step sizes and stopping rules of the descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdConfig {
    pub step_p: f64,
    pub step_w: f64,
    pub step_theta_u: f64,
    pub step_theta_f: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub sample_size: usize,
    /// Kernel width; `None` uses the noise standard deviation.
    pub rho: Option<f64>,
    pub restarts: usize,
    /// Reuse one symbol batch for every iteration.
    pub fixed_batch: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            step_p: 0.01,
            step_w: 0.01,
            step_theta_u: 0.005,
            step_theta_f: 0.005,
            max_iters: 500,
            tolerance: 1e-9,
            sample_size: 16,
            rho: None,
            restarts: 1,
            fixed_batch: false,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        let steps = [self.step_p, self.step_w, self.step_theta_u, self.step_theta_f];
        if steps.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0) {
                return Err(Error::Config("kernel width must be positive".into()));
            }
        }
        if self.restarts == 0 {
            return Err(Error::Config("at least one run is required".into()));
        }
        Ok(())
    }

    /// Kernel width for a system: explicit value or the first user's noise std.
    pub fn kernel_width(&self, sys: &SystemConfig) -> f64 {
        self.rho.unwrap_or(sys.noise_std_per_user[0])
    }
}

/// Gradients of the SER bound at one state.
///
/// Complex entries are conjugate Wirtinger derivatives `dL/dX*`; the
/// derivative with respect to `Re X` is `2 Re`, with respect to `Im X`
/// is `2 Im` of the stored value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub p_conj: Vec<CMat>,
    pub w_conj: Vec<CMat>,
    pub u_conj: Vec<CMat>,
    pub f_conj: CMat,
    pub theta_u: Vec<RMat>,
    pub theta_f: RMat,
    pub loss: f64,
}

impl GradientSet {
    /// `dL/dU_k`, the conjugate of `dL/dU_k*`.
    pub fn u(&self, k: usize) -> CMat {
        self.u_conj[k].map(|x| x.conj())
    }

    /// `dL/dF`.
    pub fn f(&self) -> CMat {
        self.f_conj.map(|x| x.conj())
    }

    /// `(dL/dRe P_k, dL/dIm P_k)`.
    pub fn p_split(&self, k: usize) -> (RMat, RMat) {
        split(&self.p_conj[k])
    }

    /// `(dL/dRe W_k, dL/dIm W_k)`.
    pub fn w_split(&self, k: usize) -> (RMat, RMat) {
        split(&self.w_conj[k])
    }
}

fn split(g: &CMat) -> (RMat, RMat) {
    (g.map(|x| 2.0 * x.re), g.map(|x| 2.0 * x.im))
}

/// All gradients at `bf` on one channel and symbol batch. For QAM the
/// state is expected to be rotated already.
pub fn gradients(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    rho: f64,
) -> GradientSet {
    let problem = Problem::new(&h.matrices, batch, constellation);
    let fwd = Forward::from_state(&problem, bf);
    gradients_at(&problem, &fwd, rho)
}

/// [`gradients`] for QPSK.
pub fn gradients_qpsk(bf: &HybridBeamformers, h: &ChannelRealization, batch: &SymbolBatch, rho: f64) -> GradientSet {
    gradients(bf, h, batch, Constellation::Qpsk, rho)
}

/// [`gradients`] for square QAM of the given order.
pub fn gradients_qam(bf: &HybridBeamformers, h: &ChannelRealization, batch: &SymbolBatch, order: u32, rho: f64) -> GradientSet {
    gradients(bf, h, batch, Constellation::Qam { order }, rho)
}

/// Gradients with respect to free complex `F`, `U_k` (not phase-derived),
/// used to check the analog gradients directly.
pub(crate) fn gradients_at(problem: &Problem, fwd: &Forward, rho: f64) -> GradientSet {
    let (loss, bars) = chain::gradient(problem, fwd, rho);
    let st = chain::to_state(fwd, &bars);
    GradientSet {
        p_conj: st.p,
        w_conj: st.w,
        u_conj: bars.u,
        f_conj: bars.f,
        theta_u: st.theta_u,
        theta_f: st.theta_f,
        loss,
    }
}

/// Gradients of the loss written directly in terms of complex `F` and
/// `U_k` matrices, which need not be unit-modulus.
pub fn gradients_free(
    f: &CMat,
    u: &[CMat],
    p: &[CMat],
    w: &[CMat],
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    rho: f64,
) -> GradientSet {
    let problem = Problem::new(&h.matrices, batch, constellation);
    let fwd = Forward::new(&problem, f.clone(), u.to_vec(), crate::transceiver::hstack(p), w.to_vec());
    gradients_at(&problem, &fwd, rho)
}

/// Loss with free complex `F`, `U_k`.
pub fn loss_free(
    f: &CMat,
    u: &[CMat],
    p: &[CMat],
    w: &[CMat],
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    rho: f64,
) -> f64 {
    let problem = Problem::new(&h.matrices, batch, constellation);
    let fwd = Forward::new(&problem, f.clone(), u.to_vec(), crate::transceiver::hstack(p), w.to_vec());
    chain::loss(&problem, &fwd, rho)
}

/// Step sizes of one alternating sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub p: f64,
    pub w: f64,
    pub theta_u: f64,
    pub theta_f: f64,
}

impl From<&GdConfig> for Steps {
    fn from(c: &GdConfig) -> Self {
        Steps {
            p: c.step_p,
            w: c.step_w,
            theta_u: c.step_theta_u,
            theta_f: c.step_theta_f,
        }
    }
}

fn rotated(problem: &Problem, bf: HybridBeamformers, constellation: Constellation) -> Result<(HybridBeamformers, Forward)> {
    let fwd = Forward::from_state(problem, &bf);
    if !constellation.is_qam() {
        return Ok((bf, fwd));
    }
    let w = chain::rotated_combiners(&fwd)?;
    let bf = HybridBeamformers { digital_rx: w, ..bf };
    let fwd = Forward::from_state(problem, &bf);
    Ok((bf, fwd))
}

/// One alternating sweep without the final power scaling.
pub fn alternating_update(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    steps: Steps,
    rho: f64,
) -> Result<HybridBeamformers> {
    let problem = Problem::new(&h.matrices, batch, constellation);
    let k_users = bf.n_users();
    let mu = |s: f64| C64::new(s, 0.0);

    let (mut bf, fwd) = rotated(&problem, bf.clone(), constellation)?;
    for k in 0..k_users {
        let g = chain::grad_p(&problem, &fwd, k, rho);
        bf.digital_tx[k] -= g * mu(steps.p);
    }
    let (mut bf, fwd) = rotated(&problem, bf, constellation)?;
    for k in 0..k_users {
        let g = chain::grad_w(&problem, &fwd, k, rho);
        bf.digital_rx[k] -= g * mu(steps.w);
    }
    let (mut bf, fwd) = rotated(&problem, bf, constellation)?;
    for k in 0..k_users {
        let g = chain::phase_cotangent(&chain::grad_u(&problem, &fwd, k, rho), &fwd.u[k]);
        bf.analog_rx_phase[k] -= g * steps.theta_u;
    }
    let (mut bf, fwd) = rotated(&problem, bf, constellation)?;
    let g = chain::phase_cotangent(&chain::grad_f(&problem, &fwd, rho), &fwd.f);
    bf.analog_tx_phase -= g * steps.theta_f;
    Ok(bf)
}

/// One full iteration: alternating sweep followed by power scaling.
pub fn gd_step(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    steps: Steps,
    rho: f64,
    power_budget: f64,
) -> Result<HybridBeamformers> {
    alternating_update(bf, h, batch, constellation, steps, rho)?.scale_power(power_budget)
}

/// Loss of `bf` on one channel and batch, after the QAM rotation when
/// applicable.
pub fn state_loss(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    batch: &SymbolBatch,
    constellation: Constellation,
    rho: f64,
) -> Result<f64> {
    let problem = Problem::new(&h.matrices, batch, constellation);
    let (_, fwd) = rotated(&problem, bf.clone(), constellation)?;
    Ok(chain::loss(&problem, &fwd, rho))
}

/// One row of a descent trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
}

/// Result of [`run_gd`].
#[derive(Debug, Clone)]
pub struct GdOutcome {
    pub state: HybridBeamformers,
    /// Loss per iteration of the selected run; entry 0 is the start.
    pub trace: Vec<TracePoint>,
    /// Which restart produced `state` (0 is the supplied start).
    pub restart: usize,
    /// Score used to pick among restarts (lower is better).
    pub score: f64,
    pub iterations: usize,
}

/// Descend from `bf0`, recording the loss of each iterate.
///
/// `observe` is called after every iteration with the iteration index and
/// state, e.g. to check invariants or log SER.
pub fn descend(
    bf0: &HybridBeamformers,
    h: &ChannelRealization,
    sys: &SystemConfig,
    constellation: Constellation,
    cfg: &GdConfig,
    rng: &mut Rng,
    observe: &mut dyn FnMut(usize, &HybridBeamformers),
) -> Result<(HybridBeamformers, Vec<TracePoint>)> {
    let rho = cfg.kernel_width(sys);
    let steps = Steps::from(cfg);
    let streams = sys.streams_per_user.clone();
    let j = capped_sample_size(constellation, &streams, cfg.sample_size);
    let mut batch = sample_symbol_batch_with(constellation, &streams, j, rng)?;
    let mut bf = bf0.clone();
    let mut trace = vec![TracePoint {
        iteration: 0,
        loss: state_loss(&bf, h, &batch, constellation, rho)?,
    }];
    for t in 1..=cfg.max_iters {
        if t > 1 && !cfg.fixed_batch {
            batch = sample_symbol_batch_with(constellation, &streams, j, rng)?;
        }
        bf = gd_step(&bf, h, &batch, constellation, steps, rho, sys.power_budget)?;
        if !bf.is_finite() {
            return Err(Error::Numeric(format!("non-finite state at iteration {t}")));
        }
        observe(t, &bf);
        let loss = state_loss(&bf, h, &batch, constellation, rho)?;
        let prev = trace.last().unwrap().loss;
        trace.push(TracePoint { iteration: t, loss });
        if (loss - prev).abs() < cfg.tolerance {
            break;
        }
    }
    Ok((bf, trace))
}

/// Run the descent from `bf0` and, when `cfg.restarts > 1`, from further
/// random starts, keeping the run whose final state has the lowest score
/// under `score` (typically an analytical SER).
pub fn run_gd_with(
    bf0: &HybridBeamformers,
    h: &ChannelRealization,
    sys: &SystemConfig,
    constellation: Constellation,
    cfg: &GdConfig,
    seed: u64,
    score: &dyn Fn(&HybridBeamformers) -> Result<f64>,
    observe: &mut dyn FnMut(usize, usize, &HybridBeamformers),
) -> Result<GdOutcome> {
    cfg.validate()?;
    bf0.check(sys)?;
    let mut best: Option<GdOutcome> = None;
    for r in 0..cfg.restarts {
        let mut rng = seed::stream(seed, r as u64);
        let start = if r == 0 {
            bf0.clone()
        } else {
            HybridBeamformers::random(sys, &mut rng)?
        };
        let (state, trace) = descend(&start, h, sys, constellation, cfg, &mut rng, &mut |t, b| observe(r, t, b))?;
        let s = score(&state)?;
        if best.as_ref().is_none_or(|b| s < b.score) {
            let iterations = trace.len() - 1;
            best = Some(GdOutcome {
                state,
                trace,
                restart: r,
                score: s,
                iterations,
            });
        }
    }
    Ok(best.unwrap())
}

/// [`run_gd_with`] scoring restarts by the analytical SER bound with the
/// true noise level over a fixed evaluation batch.
pub fn run_gd(
    bf0: &HybridBeamformers,
    h: &ChannelRealization,
    sys: &SystemConfig,
    constellation: Constellation,
    cfg: &GdConfig,
    seed: u64,
) -> Result<GdOutcome> {
    let eval = crate::eval::SelectionBatch::new(constellation, &sys.streams_per_user, seed::derive(seed, u64::MAX))?;
    let score = |b: &HybridBeamformers| eval.score(b, h, sys, constellation);
    run_gd_with(bf0, h, sys, constellation, cfg, seed, &score, &mut |_, _, _| {})
}
