//! Signal chain `E_k = W_k^H U_k H_k F V`, the kernel loss terms built on it,
//! and the reverse passes shared by gradient descent and the unfolded
//! network.
//!
//! Complex cotangents are conjugate Wirtinger derivatives `dl/dX*` of a real
//! scalar `l`; real cotangents are ordinary partial derivatives.

use std::f64::consts::PI;

use crate::mser::tail_integral;
use crate::transceiver::{offsets, unit_modulus, Constellation, HybridBeamformers, SymbolBatch};
use crate::{CMat, RMat, C64};

/// Coefficients of one loss term: `y = Re(kappa * (E s_j - delta E e_g)_i)`.
#[derive(Debug, Clone, Copy)]
struct TermSpec {
    kappa: C64,
    delta: C64,
}

/// Channel, batch and modulation; everything the loss needs except the state.
pub(crate) struct Problem<'a> {
    pub h: &'a [CMat],
    pub s: &'a CMat,
    streams: Vec<usize>,
    offsets: Vec<usize>,
    /// `spec[j * D + g]` holds the real and imaginary terms of stream `g`.
    spec: Vec<[TermSpec; 2]>,
    /// `omega / (J sqrt(pi))`.
    weight: f64,
}

impl<'a> Problem<'a> {
    pub fn new(h: &'a [CMat], batch: &'a SymbolBatch, constellation: Constellation) -> Self {
        let s = &batch.vectors;
        let d = s.nrows();
        let jn = s.ncols();
        let mut spec = Vec::with_capacity(d * jn);
        for j in 0..jn {
            for g in 0..d {
                let b = s[(g, j)];
                spec.push(match constellation {
                    Constellation::Qpsk => [
                        TermSpec {
                            kappa: C64::new(b.re, 0.0),
                            delta: C64::new(0.0, 0.0),
                        },
                        TermSpec {
                            kappa: C64::new(0.0, -b.im),
                            delta: C64::new(0.0, 0.0),
                        },
                    ],
                    Constellation::Qam { .. } => [
                        TermSpec {
                            kappa: C64::new(1.0, 0.0),
                            delta: C64::new(b.re - 1.0, 0.0),
                        },
                        TermSpec {
                            kappa: C64::new(0.0, -1.0),
                            delta: C64::new(0.0, b.im - 1.0),
                        },
                    ],
                });
            }
        }
        let omega = match constellation {
            Constellation::Qpsk => 1.0,
            Constellation::Qam { .. } => constellation.phi(),
        };
        Problem {
            h,
            s,
            streams: batch.streams_per_user.clone(),
            offsets: offsets(&batch.streams_per_user),
            spec,
            weight: omega / (jn as f64 * PI.sqrt()),
        }
    }

    pub fn n_users(&self) -> usize {
        self.streams.len()
    }

    fn dim(&self) -> usize {
        self.s.nrows()
    }

    fn batch_len(&self) -> usize {
        self.s.ncols()
    }

    /// `(X s_eff)_i` for every term of user `k`, indexed `(j * D_k + i) * 2 + part`.
    fn contract(&self, k: usize, x: &CMat) -> Vec<C64> {
        let xs = x * self.s;
        let (dk, off, d) = (self.streams[k], self.offsets[k], self.dim());
        let mut out = Vec::with_capacity(dk * self.batch_len() * 2);
        for j in 0..self.batch_len() {
            for i in 0..dk {
                let g = off + i;
                let sp = &self.spec[j * d + g];
                for t in sp {
                    out.push(xs[(i, j)] - t.delta * x[(i, g)]);
                }
            }
        }
        out
    }

    /// `sum_terms c_t e_i s_eff^H` for user `k`.
    fn assemble(&self, k: usize, coef: &[C64]) -> CMat {
        let (dk, off, d, jn) = (self.streams[k], self.offsets[k], self.dim(), self.batch_len());
        let mut xi = CMat::zeros(dk, jn);
        let mut corr = vec![C64::new(0.0, 0.0); dk];
        for j in 0..jn {
            for i in 0..dk {
                let sp = &self.spec[j * d + off + i];
                for (p, t) in sp.iter().enumerate() {
                    let c = coef[(j * dk + i) * 2 + p];
                    xi[(i, j)] += c;
                    corr[i] -= c * t.delta.conj();
                }
            }
        }
        let mut out = xi * self.s.adjoint();
        for (i, c) in corr.into_iter().enumerate() {
            out[(i, off + i)] += c;
        }
        out
    }

    fn kappa(&self, k: usize, idx: usize) -> C64 {
        let dk = self.streams[k];
        let (j, rest) = (idx / (2 * dk), idx % (2 * dk));
        let (i, p) = (rest / 2, rest % 2);
        self.spec[j * self.dim() + self.offsets[k] + i][p].kappa
    }
}

/// Intermediates of the forward chain.
#[derive(Clone)]
pub(crate) struct Forward {
    pub f: CMat,
    pub u: Vec<CMat>,
    pub v: CMat,
    pub w: Vec<CMat>,
    /// `H_k F`
    pub q: Vec<CMat>,
    /// `U_k H_k F`
    pub m: Vec<CMat>,
    /// `W_k^H U_k H_k F`
    pub a: Vec<CMat>,
    /// `A_k V`, the `D_k x D` matrix of effective gains
    pub e: Vec<CMat>,
    pub blocks: Vec<(usize, usize)>,
}

impl Forward {
    pub fn new(problem: &Problem, f: CMat, u: Vec<CMat>, v: CMat, w: Vec<CMat>) -> Self {
        let k = problem.n_users();
        let mut q = Vec::with_capacity(k);
        let mut m = Vec::with_capacity(k);
        let mut a = Vec::with_capacity(k);
        let mut e = Vec::with_capacity(k);
        for kk in 0..k {
            let qk = &problem.h[kk] * &f;
            let mk = &u[kk] * &qk;
            let ak = w[kk].ad_mul(&mk);
            e.push(&ak * &v);
            q.push(qk);
            m.push(mk);
            a.push(ak);
        }
        let blocks = problem.offsets.iter().cloned().zip(problem.streams.iter().cloned()).collect();
        Forward {
            f,
            u,
            v,
            w,
            q,
            m,
            a,
            e,
            blocks,
        }
    }

    pub fn from_state(problem: &Problem, bf: &HybridBeamformers) -> Self {
        let u = bf.analog_rx_phase.iter().map(unit_modulus).collect();
        Forward::new(problem, bf.analog_tx(), u, bf.stacked_tx(), bf.digital_rx.clone())
    }

    pub fn n_users(&self) -> usize {
        self.e.len()
    }
}

/// Per-term values of user `k`'s part of the loss at kernel width `rho`.
pub(crate) struct UserTerms {
    pub y: Vec<f64>,
    /// `dterm/dy`
    pub g: Vec<f64>,
    pub value: f64,
}

pub(crate) fn user_terms(problem: &Problem, fwd: &Forward, k: usize, rho: f64) -> UserTerms {
    let z = problem.contract(k, &fwd.e[k]);
    let scale = 1.0 / (std::f64::consts::SQRT_2 * rho);
    let gscale = -problem.weight / (std::f64::consts::SQRT_2 * rho);
    let mut y = Vec::with_capacity(z.len());
    let mut g = Vec::with_capacity(z.len());
    let mut value = 0.0;
    for (idx, zz) in z.iter().enumerate() {
        let yy = (problem.kappa(k, idx) * zz).re;
        let t = -yy * scale;
        value += problem.weight * tail_integral(t);
        g.push(gscale * (-t * t).exp());
        y.push(yy);
    }
    UserTerms { y, g, value }
}

/// `dL/dE_k*` for the given per-term derivatives.
fn gamma(problem: &Problem, k: usize, terms: &UserTerms) -> CMat {
    let coef: Vec<C64> = terms
        .g
        .iter()
        .enumerate()
        .map(|(idx, &g)| problem.kappa(k, idx).conj() * (g / 2.0))
        .collect();
    problem.assemble(k, &coef)
}

/// Pull a cotangent on `Gamma_k` back to `E_k`, returning `(E_hat, rho_hat)`.
fn gamma_vjp(problem: &Problem, k: usize, terms: &UserTerms, rho: f64, gamma_hat: &CMat) -> (CMat, f64) {
    let xi_hat = problem.contract(k, gamma_hat);
    let mut rho_hat = 0.0;
    let coef: Vec<C64> = xi_hat
        .iter()
        .enumerate()
        .map(|(idx, xh)| {
            let kappa = problem.kappa(k, idx);
            let g_hat = (kappa * xh).re;
            let (y, g) = (terms.y[idx], terms.g[idx]);
            let gg = g_hat * g;
            rho_hat += gg * (y * y / (rho * rho * rho) - 1.0 / rho);
            let y_hat = gg * (-y / (rho * rho));
            kappa.conj() * (y_hat / 2.0)
        })
        .collect();
    (problem.assemble(k, &coef), rho_hat)
}

/// Cotangents of every intermediate of the chain.
pub(crate) struct Bars {
    pub e: Vec<CMat>,
    pub a: Vec<CMat>,
    pub m: Vec<CMat>,
    pub q: Vec<CMat>,
    pub u: Vec<CMat>,
    pub f: CMat,
    pub v: CMat,
    pub w: Vec<CMat>,
}

impl Bars {
    pub fn zeros(fwd: &Forward) -> Self {
        let z = |m: &CMat| CMat::zeros(m.nrows(), m.ncols());
        Bars {
            e: fwd.e.iter().map(z).collect(),
            a: fwd.a.iter().map(z).collect(),
            m: fwd.m.iter().map(z).collect(),
            q: fwd.q.iter().map(z).collect(),
            u: fwd.u.iter().map(z).collect(),
            f: z(&fwd.f),
            v: z(&fwd.v),
            w: fwd.w.iter().map(z).collect(),
        }
    }
}

/// Cotangent of the optimisation state. Digital parts are `dl/dX*`, phases
/// are ordinary real derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCotangent {
    pub p: Vec<CMat>,
    pub w: Vec<CMat>,
    pub theta_u: Vec<RMat>,
    pub theta_f: RMat,
}

impl StateCotangent {
    pub fn zeros_like(bf: &HybridBeamformers) -> Self {
        StateCotangent {
            p: bf.digital_tx.iter().map(|m| CMat::zeros(m.nrows(), m.ncols())).collect(),
            w: bf.digital_rx.iter().map(|m| CMat::zeros(m.nrows(), m.ncols())).collect(),
            theta_u: bf.analog_rx_phase.iter().map(|m| RMat::zeros(m.nrows(), m.ncols())).collect(),
            theta_f: RMat::zeros(bf.analog_tx_phase.nrows(), bf.analog_tx_phase.ncols()),
        }
    }

    pub fn add_assign(&mut self, other: &StateCotangent) {
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            *a += b;
        }
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.theta_u.iter_mut().zip(&other.theta_u) {
            *a += b;
        }
        self.theta_f += &other.theta_f;
    }
}

pub(crate) fn phase_cotangent(x_hat: &CMat, x: &CMat) -> RMat {
    RMat::from_fn(x.nrows(), x.ncols(), |r, c| 2.0 * (x_hat[(r, c)] * x[(r, c)].conj()).im)
}

/// Propagate accumulated cotangents from `E` down to the matrices
/// `F, U_k, V, W_k`; the result holds `dl/dF*` in `f`, `dl/dU_k*` in `u`.
pub(crate) fn reverse(problem: &Problem, fwd: &Forward, mut b: Bars) -> Bars {
    for k in 0..fwd.n_users() {
        b.a[k] += &b.e[k] * fwd.v.adjoint();
        b.v += fwd.a[k].ad_mul(&b.e[k]);
        b.w[k] += &fwd.m[k] * b.a[k].adjoint();
        b.m[k] += &fwd.w[k] * &b.a[k];
        b.u[k] += &b.m[k] * fwd.q[k].adjoint();
        b.q[k] += fwd.u[k].ad_mul(&b.m[k]);
        b.f += problem.h[k].ad_mul(&b.q[k]);
    }
    b
}

/// Map matrix cotangents to the state parameterisation.
pub(crate) fn to_state(fwd: &Forward, b: &Bars) -> StateCotangent {
    StateCotangent {
        p: fwd.blocks.iter().map(|&(o, d)| b.v.columns(o, d).into_owned()).collect(),
        w: b.w.clone(),
        theta_u: b.u.iter().zip(&fwd.u).map(|(ub, u)| phase_cotangent(ub, u)).collect(),
        theta_f: phase_cotangent(&b.f, &fwd.f),
    }
}

/// Loss value at width `rho`.
pub(crate) fn loss(problem: &Problem, fwd: &Forward, rho: f64) -> f64 {
    (0..fwd.n_users()).map(|k| user_terms(problem, fwd, k, rho).value).sum()
}

/// Full first-order gradient at width `rho`: every matrix cotangent.
pub(crate) fn gradient(problem: &Problem, fwd: &Forward, rho: f64) -> (f64, Bars) {
    let mut bars = Bars::zeros(fwd);
    let mut value = 0.0;
    for k in 0..fwd.n_users() {
        let t = user_terms(problem, fwd, k, rho);
        value += t.value;
        bars.e[k] = gamma(problem, k, &t);
    }
    (value, reverse(problem, fwd, bars))
}

/// `dL/dP_k*` at width `rho`.
pub(crate) fn grad_p(problem: &Problem, fwd: &Forward, k: usize, rho: f64) -> CMat {
    let (o, d) = fwd.blocks[k];
    let mut g = CMat::zeros(fwd.v.nrows(), d);
    for kk in 0..fwd.n_users() {
        let t = user_terms(problem, fwd, kk, rho);
        let gam = gamma(problem, kk, &t);
        g += fwd.a[kk].ad_mul(&gam.columns(o, d).into_owned());
    }
    g
}

/// `dL/dW_k*` at width `rho`.
pub(crate) fn grad_w(problem: &Problem, fwd: &Forward, k: usize, rho: f64) -> CMat {
    let t = user_terms(problem, fwd, k, rho);
    let gam = gamma(problem, k, &t);
    &fwd.m[k] * (&fwd.v * gam.adjoint())
}

/// `dL/dU_k*` at width `rho`.
pub(crate) fn grad_u(problem: &Problem, fwd: &Forward, k: usize, rho: f64) -> CMat {
    let t = user_terms(problem, fwd, k, rho);
    let gam = gamma(problem, k, &t);
    let a1 = &gam * fwd.v.adjoint();
    (&fwd.w[k] * a1) * fwd.q[k].adjoint()
}

/// `dL/dF*` at width `rho`.
pub(crate) fn grad_f(problem: &Problem, fwd: &Forward, rho: f64) -> CMat {
    let mut g = CMat::zeros(fwd.f.nrows(), fwd.f.ncols());
    for k in 0..fwd.n_users() {
        let t = user_terms(problem, fwd, k, rho);
        let gam = gamma(problem, k, &t);
        let m1 = &fwd.w[k] * (&gam * fwd.v.adjoint());
        g += problem.h[k].ad_mul(&fwd.u[k].ad_mul(&m1));
    }
    g
}

/// Accumulate into `bars` the pull-back of a cotangent `lambda` on
/// `dL/dP_k*` (width `rho`); returns the cotangent of `rho`.
pub(crate) fn grad_p_vjp(problem: &Problem, fwd: &Forward, k: usize, rho: f64, lambda: &CMat, bars: &mut Bars) -> f64 {
    let (o, d) = fwd.blocks[k];
    let mut lam = CMat::zeros(fwd.v.nrows(), fwd.v.ncols());
    lam.columns_mut(o, d).copy_from(lambda);
    let mut rho_hat = 0.0;
    for kk in 0..fwd.n_users() {
        let t = user_terms(problem, fwd, kk, rho);
        let gam = gamma(problem, kk, &t);
        bars.a[kk] += &gam * lam.adjoint();
        let gam_hat = &fwd.a[kk] * &lam;
        let (e_hat, r) = gamma_vjp(problem, kk, &t, rho, &gam_hat);
        bars.e[kk] += e_hat;
        rho_hat += r;
    }
    rho_hat
}

/// Pull-back of a cotangent on `dL/dW_k*`.
pub(crate) fn grad_w_vjp(problem: &Problem, fwd: &Forward, k: usize, rho: f64, lambda: &CMat, bars: &mut Bars) -> f64 {
    let t = user_terms(problem, fwd, k, rho);
    let gam = gamma(problem, k, &t);
    let a1 = &gam * fwd.v.adjoint();
    bars.m[k] += lambda * &a1;
    let a1_hat = lambda.ad_mul(&fwd.m[k]);
    let gam_hat = &a1_hat * &fwd.v;
    bars.v += a1_hat.ad_mul(&gam);
    let (e_hat, r) = gamma_vjp(problem, k, &t, rho, &gam_hat);
    bars.e[k] += e_hat;
    r
}

/// Pull-back of a real cotangent on `dL/dtheta_U_k`.
pub(crate) fn grad_theta_u_vjp(problem: &Problem, fwd: &Forward, k: usize, rho: f64, lambda: &RMat, bars: &mut Bars) -> f64 {
    let t = user_terms(problem, fwd, k, rho);
    let gam = gamma(problem, k, &t);
    let a1 = &gam * fwd.v.adjoint();
    let m1 = &fwd.w[k] * &a1;
    let u1 = &m1 * fwd.q[k].adjoint();
    let u = &fwd.u[k];
    // gradient = 2 Im(u1 o conj U); X = u1 o conj U has cotangent j*lambda
    let u1_hat = CMat::from_fn(u.nrows(), u.ncols(), |r, c| C64::new(0.0, lambda[(r, c)]) * u[(r, c)]);
    bars.u[k] += CMat::from_fn(u.nrows(), u.ncols(), |r, c| C64::new(0.0, -lambda[(r, c)]) * u1[(r, c)]);
    let m1_hat = &u1_hat * &fwd.q[k];
    bars.q[k] += u1_hat.ad_mul(&m1);
    bars.w[k] += &m1_hat * a1.adjoint();
    let a1_hat = fwd.w[k].ad_mul(&m1_hat);
    let gam_hat = &a1_hat * &fwd.v;
    bars.v += a1_hat.ad_mul(&gam);
    let (e_hat, r) = gamma_vjp(problem, k, &t, rho, &gam_hat);
    bars.e[k] += e_hat;
    r
}

/// Pull-back of a real cotangent on `dL/dtheta_F`.
pub(crate) fn grad_theta_f_vjp(problem: &Problem, fwd: &Forward, rho: f64, lambda: &RMat, bars: &mut Bars) -> f64 {
    let f = &fwd.f;
    let k_users = fwd.n_users();
    let mut terms = Vec::with_capacity(k_users);
    let mut f1 = CMat::zeros(f.nrows(), f.ncols());
    for k in 0..k_users {
        let t = user_terms(problem, fwd, k, rho);
        let gam = gamma(problem, k, &t);
        let a1 = &gam * fwd.v.adjoint();
        let m1 = &fwd.w[k] * &a1;
        f1 += problem.h[k].ad_mul(&fwd.u[k].ad_mul(&m1));
        terms.push((t, gam, a1, m1));
    }
    let f1_hat = CMat::from_fn(f.nrows(), f.ncols(), |r, c| C64::new(0.0, lambda[(r, c)]) * f[(r, c)]);
    bars.f += CMat::from_fn(f.nrows(), f.ncols(), |r, c| C64::new(0.0, -lambda[(r, c)]) * f1[(r, c)]);
    let mut rho_hat = 0.0;
    for (k, (t, gam, a1, m1)) in terms.into_iter().enumerate() {
        let q1_hat = &problem.h[k] * &f1_hat;
        bars.u[k] += &m1 * q1_hat.adjoint();
        let m1_hat = &fwd.u[k] * &q1_hat;
        bars.w[k] += &m1_hat * a1.adjoint();
        let a1_hat = fwd.w[k].ad_mul(&m1_hat);
        let gam_hat = &a1_hat * &fwd.v;
        bars.v += a1_hat.ad_mul(&gam);
        let (e_hat, r) = gamma_vjp(problem, k, &t, rho, &gam_hat);
        bars.e[k] += e_hat;
        rho_hat += r;
    }
    rho_hat
}

/// Seed `bars` with the gradient of the loss at width `rho` itself.
pub(crate) fn loss_vjp(problem: &Problem, fwd: &Forward, rho: f64, weight: f64, bars: &mut Bars) -> f64 {
    let mut value = 0.0;
    for k in 0..fwd.n_users() {
        let t = user_terms(problem, fwd, k, rho);
        value += t.value;
        bars.e[k] += gamma(problem, k, &t) * C64::new(weight, 0.0);
    }
    value
}

/// Unit factors `c / |c|` of every stream's effective gain, per user.
pub(crate) fn rotation_factors(fwd: &Forward) -> crate::Result<Vec<Vec<C64>>> {
    fwd.blocks
        .iter()
        .enumerate()
        .map(|(k, &(o, d))| {
            (0..d)
                .map(|i| {
                    let c = fwd.e[k][(i, o + i)];
                    if c.norm() < 1e-14 {
                        Err(crate::Error::Degenerate(format!("stream ({i}, {k}) has vanishing gain")))
                    } else {
                        Ok(c / c.norm())
                    }
                })
                .collect()
        })
        .collect()
}

/// Combiners with every stream's gain rotated onto the positive real axis.
pub(crate) fn rotated_combiners(fwd: &Forward) -> crate::Result<Vec<CMat>> {
    let factors = rotation_factors(fwd)?;
    Ok(fwd
        .w
        .iter()
        .zip(factors)
        .map(|(w, f)| {
            let mut w = w.clone();
            for (i, u) in f.into_iter().enumerate() {
                for x in w.column_mut(i).iter_mut() {
                    *x *= u;
                }
            }
            w
        })
        .collect())
}

/// Pull a cotangent on the rotated combiners back through the rotation.
/// Adds the gain-dependent part to `bars.e` and returns the direct part
/// for the unrotated combiners.
pub(crate) fn rotation_vjp(fwd: &Forward, w_hat_out: &[CMat], bars: &mut Bars) -> crate::Result<Vec<CMat>> {
    let factors = rotation_factors(fwd)?;
    let mut direct = Vec::with_capacity(w_hat_out.len());
    for (k, &(o, _)) in fwd.blocks.iter().enumerate() {
        let w = &fwd.w[k];
        let wh = &w_hat_out[k];
        let mut dk = wh.clone();
        for (i, &u) in factors[k].iter().enumerate() {
            let c = fwd.e[k][(i, o + i)];
            let r = c.norm();
            let mut u_hat = C64::new(0.0, 0.0);
            for n in 0..w.nrows() {
                u_hat += wh[(n, i)] * w[(n, i)].conj();
                dk[(n, i)] = wh[(n, i)] * u.conj();
            }
            let c_hat = u_hat / (2.0 * r) - u_hat.conj() * u * u / (2.0 * r);
            bars.e[k][(i, o + i)] += c_hat;
        }
        direct.push(dk);
    }
    Ok(direct)
}
