//! System configuration, constellations, the hybrid beamformer state and the
//! end-to-end signal chain.

use std::collections::HashSet;

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::seed::{self, Rng};
use crate::{CMat, Error, RMat, Result, C64};

/// Dimensions, power budget and noise levels of the downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rf_tx: usize,
    pub n_rx_per_user: Vec<usize>,
    pub n_rf_rx_per_user: Vec<usize>,
    pub streams_per_user: Vec<usize>,
    #[serde(default = "one")]
    pub power_budget: f64,
    pub noise_std_per_user: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl SystemConfig {
    /// Homogeneous users with noise set from an SNR in dB (`P_T / sigma^2`).
    pub fn uniform(n_tx: usize, n_rf_tx: usize, users: usize, n_rx: usize, n_rf_rx: usize, streams: usize, snr_db: f64) -> Self {
        let mut cfg = SystemConfig {
            n_tx,
            n_rf_tx,
            n_rx_per_user: vec![n_rx; users],
            n_rf_rx_per_user: vec![n_rf_rx; users],
            streams_per_user: vec![streams; users],
            power_budget: 1.0,
            noise_std_per_user: vec![1.0; users],
        };
        cfg.set_snr_db(snr_db);
        cfg
    }

    pub fn set_snr_db(&mut self, snr_db: f64) {
        let sigma = noise_std_for_snr(self.power_budget, snr_db);
        self.noise_std_per_user.iter_mut().for_each(|s| *s = sigma);
    }

    pub fn n_users(&self) -> usize {
        self.streams_per_user.len()
    }

    pub fn total_streams(&self) -> usize {
        self.streams_per_user.iter().sum()
    }

    /// Index of user `k`'s first stream in the stacked stream vector.
    pub fn stream_offsets(&self) -> Vec<usize> {
        offsets(&self.streams_per_user)
    }

    /// Validate; returns warnings for violated recommendations.
    pub fn validate(&self) -> Result<Vec<String>> {
        let k = self.n_users();
        if k == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if self.n_rx_per_user.len() != k || self.n_rf_rx_per_user.len() != k || self.noise_std_per_user.len() != k {
            return Err(Error::Config("per-user lists must all have length K".into()));
        }
        if self.n_tx == 0 || self.n_rf_tx == 0 {
            return Err(Error::Config("n_tx and n_rf_tx must be positive".into()));
        }
        for u in 0..k {
            let (nr, rr, d) = (self.n_rx_per_user[u], self.n_rf_rx_per_user[u], self.streams_per_user[u]);
            if nr == 0 || rr == 0 || d == 0 {
                return Err(Error::Config(format!("user {u}: dimensions must be positive")));
            }
            if d > rr {
                return Err(Error::Config(format!("user {u}: streams ({d}) exceed receive RF chains ({rr})")));
            }
            if !(self.noise_std_per_user[u] > 0.0) {
                return Err(Error::Config(format!("user {u}: noise std must be positive")));
            }
        }
        if !(self.power_budget > 0.0) {
            return Err(Error::Config("power budget must be positive".into()));
        }
        let mut warnings = Vec::new();
        let rr: usize = self.n_rf_rx_per_user.iter().sum();
        if self.n_rf_tx < rr {
            warnings.push(format!("n_rf_tx = {} is below the total receive RF chains {rr}", self.n_rf_tx));
        }
        if self.n_rf_tx < self.total_streams() {
            warnings.push("fewer transmit RF chains than streams".to_string());
        }
        Ok(warnings)
    }
}

/// Noise standard deviation giving `snr_db = 10 log10(P_T / sigma^2)`.
pub fn noise_std_for_snr(power_budget: f64, snr_db: f64) -> f64 {
    (power_budget / 10f64.powf(snr_db / 10.0)).sqrt()
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&d| {
            let o = acc;
            acc += d;
            o
        })
        .collect()
}

/// Symbol alphabet. Points are unnormalised: QPSK is `+-1 +- j`, square
/// M-QAM uses levels `2n - sqrt(M) - 1` on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Constellation {
    Qpsk,
    Qam { order: u32 },
}

impl Constellation {
    pub fn validate(&self) -> Result<()> {
        if let Constellation::Qam { order } = *self {
            let side = (order as f64).sqrt().round() as u32;
            if side * side != order || order < 4 {
                return Err(Error::Config(format!("QAM order {order} is not a perfect square >= 4")));
            }
        }
        Ok(())
    }

    /// Levels per axis.
    pub fn side(&self) -> usize {
        match *self {
            Constellation::Qpsk => 2,
            Constellation::Qam { order } => (order as f64).sqrt().round() as usize,
        }
    }

    pub fn size(&self) -> usize {
        self.side() * self.side()
    }

    /// Real amplitudes on one axis, ascending.
    pub fn levels(&self) -> Vec<f64> {
        let s = self.side() as f64;
        (1..=self.side()).map(|n| 2.0 * n as f64 - s - 1.0).collect()
    }

    /// All points, real index major.
    pub fn points(&self) -> Vec<C64> {
        let lv = self.levels();
        lv.iter().flat_map(|&re| lv.iter().map(move |&im| C64::new(re, im))).collect()
    }

    /// Edge weight of the QAM error terms, `(2 sqrt(M) - 2) / sqrt(M)`.
    pub fn phi(&self) -> f64 {
        let s = self.side() as f64;
        (2.0 * s - 2.0) / s
    }

    pub fn is_qam(&self) -> bool {
        matches!(self, Constellation::Qam { .. })
    }

    /// Level decision on one axis with gain `c > 0`: window
    /// `c(F_m - 1) < x <= c(F_m + 1)`, outer windows half-infinite.
    pub fn detect_axis(&self, x: f64, c: f64) -> f64 {
        match self {
            Constellation::Qpsk => {
                if x > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Constellation::Qam { .. } => {
                let side = self.side();
                let levels = self.levels();
                for (m, &f) in levels.iter().enumerate() {
                    if m + 1 == side || x <= c * (f + 1.0) {
                        return f;
                    }
                }
                unreachable!()
            }
        }
    }

    /// Decision on a complex receiver output. `c` is ignored for QPSK.
    pub fn detect(&self, b: C64, c: f64) -> C64 {
        C64::new(self.detect_axis(b.re, c), self.detect_axis(b.im, c))
    }
}

/// Hybrid transceiver state: digital precoders and combiners, analog phases.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformers {
    /// `P_k`, `n_rf_tx x D_k`.
    pub digital_tx: Vec<CMat>,
    /// `W_k`, `n_rf_rx_k x D_k`.
    pub digital_rx: Vec<CMat>,
    /// `theta_U_k`, `n_rf_rx_k x n_rx_k`.
    pub analog_rx_phase: Vec<RMat>,
    /// `theta_F`, `n_tx x n_rf_tx`.
    pub analog_tx_phase: RMat,
}

pub(crate) fn unit_modulus(theta: &RMat) -> CMat {
    theta.map(|t| C64::from_polar(1.0, t))
}

pub(crate) fn hstack(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

impl HybridBeamformers {
    /// `F = exp(j theta_F)`.
    pub fn analog_tx(&self) -> CMat {
        unit_modulus(&self.analog_tx_phase)
    }

    /// `U_k = exp(j theta_U_k)`.
    pub fn analog_rx(&self, k: usize) -> CMat {
        unit_modulus(&self.analog_rx_phase[k])
    }

    /// `V = [P_1, ..., P_K]`.
    pub fn stacked_tx(&self) -> CMat {
        hstack(&self.digital_tx)
    }

    pub fn streams_per_user(&self) -> Vec<usize> {
        self.digital_tx.iter().map(|p| p.ncols()).collect()
    }

    pub fn n_users(&self) -> usize {
        self.digital_tx.len()
    }

    /// `||F V||_F^2`.
    pub fn transmit_power(&self) -> f64 {
        (self.analog_tx() * self.stacked_tx()).norm_squared()
    }

    /// Check shapes against a system configuration.
    pub fn check(&self, sys: &SystemConfig) -> Result<()> {
        let k = sys.n_users();
        let bad = |what: &str| Err(Error::Dimension(format!("beamformer {what} does not match the system")));
        if self.digital_tx.len() != k || self.digital_rx.len() != k || self.analog_rx_phase.len() != k {
            return bad("user count");
        }
        if self.analog_tx_phase.shape() != (sys.n_tx, sys.n_rf_tx) {
            return bad("theta_F");
        }
        for u in 0..k {
            let d = sys.streams_per_user[u];
            if self.digital_tx[u].shape() != (sys.n_rf_tx, d) {
                return bad("P");
            }
            if self.digital_rx[u].shape() != (sys.n_rf_rx_per_user[u], d) {
                return bad("W");
            }
            if self.analog_rx_phase[u].shape() != (sys.n_rf_rx_per_user[u], sys.n_rx_per_user[u]) {
                return bad("theta_U");
            }
        }
        Ok(())
    }

    /// Rescale the precoders so that `||F V||^2 = p_t`.
    pub fn scale_power(&self, p_t: f64) -> Result<Self> {
        let power = self.transmit_power();
        if !(power > 1e-300) || !power.is_finite() {
            return Err(Error::Degenerate(format!("cannot scale precoders with transmit power {power}")));
        }
        let s = (p_t / power).sqrt();
        let mut out = self.clone();
        for p in &mut out.digital_tx {
            *p *= C64::new(s, 0.0);
        }
        Ok(out)
    }

    /// `c = w^H U_k H_k F p` for stream `i` of user `k`.
    pub fn effective_gain(&self, h: &ChannelRealization, i: usize, k: usize) -> C64 {
        let f = self.analog_tx();
        let u = self.analog_rx(k);
        let a = u * (&h.matrices[k] * (f * self.digital_tx[k].column(i)));
        self.digital_rx[k].column(i).dotc(&a)
    }

    /// Remove the phase of stream `(i, k)`'s effective gain by rotating its
    /// digital combiner column, leaving every other stream untouched.
    pub fn phase_rotate(&self, h: &ChannelRealization, i: usize, k: usize) -> Result<Self> {
        let c = self.effective_gain(h, i, k);
        if c.norm() < 1e-14 {
            return Err(Error::Degenerate(format!("stream ({i}, {k}) has vanishing gain")));
        }
        let u = c / c.norm();
        let mut out = self.clone();
        for x in out.digital_rx[k].column_mut(i).iter_mut() {
            *x *= u;
        }
        Ok(out)
    }

    /// Rotate every stream in order `(1,1), (2,1), ..., (D_K, K)`.
    pub fn phase_rotate_all(&self, h: &ChannelRealization) -> Result<Self> {
        let mut out = self.clone();
        for k in 0..self.n_users() {
            for i in 0..self.digital_tx[k].ncols() {
                out = out.phase_rotate(h, i, k)?;
            }
        }
        Ok(out)
    }

    /// Largest deviation of an analog entry's modulus from one.
    pub fn unit_modulus_deviation(&self) -> f64 {
        let mut worst = self.analog_tx().iter().map(|x| (x.norm() - 1.0).abs()).fold(0.0, f64::max);
        for k in 0..self.n_users() {
            worst = self.analog_rx(k).iter().map(|x| (x.norm() - 1.0).abs()).fold(worst, f64::max);
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.digital_tx
            .iter()
            .chain(&self.digital_rx)
            .all(|m| m.iter().all(|x| x.re.is_finite() && x.im.is_finite()))
            && self.analog_rx_phase.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && self.analog_tx_phase.iter().all(|x| x.is_finite())
    }

    /// Random phases and complex Gaussian digital matrices, power-scaled.
    pub fn random(sys: &SystemConfig, rng: &mut Rng) -> Result<Self> {
        let tau = std::f64::consts::TAU;
        let mut phase = |r: usize, c: usize| RMat::from_fn(r, c, |_, _| rng.random::<f64>() * tau);
        let theta_f = phase(sys.n_tx, sys.n_rf_tx);
        let theta_u = (0..sys.n_users())
            .map(|k| phase(sys.n_rf_rx_per_user[k], sys.n_rx_per_user[k]))
            .collect();
        let mut gauss = |r: usize, c: usize| CMat::from_fn(r, c, |_, _| crate::channel::complex_normal(rng, 1.0));
        let p = sys.streams_per_user.iter().map(|&d| gauss(sys.n_rf_tx, d)).collect();
        let w = (0..sys.n_users())
            .map(|k| gauss(sys.n_rf_rx_per_user[k], sys.streams_per_user[k]))
            .collect();
        HybridBeamformers {
            digital_tx: p,
            digital_rx: w,
            analog_rx_phase: theta_u,
            analog_tx_phase: theta_f,
        }
        .scale_power(sys.power_budget)
    }

    /// Channel-alignment start: `theta_F` columns carry the phases of the
    /// strongest right singular vectors of the stacked channel,
    /// `theta_U_k` rows the conjugate phases of `H_k`'s strongest left
    /// singular vectors. Each `W_k` holds the strongest left singular
    /// vectors of the effective channel `U_k H_k F` and `V` is the
    /// regularized zero-forcing precoder for the resulting stream rows.
    pub fn channel_aligned(sys: &SystemConfig, h: &ChannelRealization, rng: &mut Rng) -> Result<Self> {
        let tau = std::f64::consts::TAU;
        let stacked = h.stacked();
        let right = sorted_singular_vectors(&stacked, false);
        let theta_f = RMat::from_fn(sys.n_tx, sys.n_rf_tx, |n, r| match right.get(r) {
            Some(v) if v[n].norm() > 1e-300 => v[n].arg(),
            _ => 0.0,
        });
        // columns beyond the channel rank get random phases
        let mut theta_f = theta_f;
        for r in right.len()..sys.n_rf_tx {
            for n in 0..sys.n_tx {
                theta_f[(n, r)] = rng.random::<f64>() * tau;
            }
        }
        let mut theta_u = Vec::with_capacity(sys.n_users());
        for k in 0..sys.n_users() {
            let left = sorted_singular_vectors(&h.matrices[k], true);
            let rr = sys.n_rf_rx_per_user[k];
            let mut t = RMat::zeros(rr, sys.n_rx_per_user[k]);
            for m in 0..rr {
                for n in 0..sys.n_rx_per_user[k] {
                    t[(m, n)] = match left.get(m) {
                        Some(v) if v[n].norm() > 1e-300 => -v[n].arg(),
                        _ => rng.random::<f64>() * tau,
                    };
                }
            }
            theta_u.push(t);
        }
        let mut bf = HybridBeamformers {
            digital_tx: Vec::new(),
            digital_rx: Vec::new(),
            analog_rx_phase: theta_u,
            analog_tx_phase: theta_f,
        };

        let f = bf.analog_tx();
        let offs = sys.stream_offsets();
        let d = sys.total_streams();
        let mut rows = CMat::zeros(d, sys.n_rf_tx);
        for k in 0..sys.n_users() {
            let g = bf.analog_rx(k) * &h.matrices[k] * &f;
            let left = sorted_singular_vectors(&g, true);
            let w = CMat::from_fn(sys.n_rf_rx_per_user[k], sys.streams_per_user[k], |r, c| match left.get(c) {
                Some(v) => v[r],
                None => identity_entry(r, c),
            });
            rows.rows_mut(offs[k], sys.streams_per_user[k]).copy_from(&(w.adjoint() * g));
            bf.digital_rx.push(w);
        }
        let gram = &rows * rows.adjoint();
        let noise = sys.noise_std_per_user.iter().map(|s| s * s).sum::<f64>() / sys.n_users() as f64;
        let trace: f64 = gram.diagonal().iter().map(|x| x.re).sum();
        let reg = (d as f64 * noise / sys.power_budget).max(1e-12 * trace / d as f64);
        let v = (gram + CMat::identity(d, d) * C64::new(reg, 0.0))
            .cholesky()
            .map(|c| rows.adjoint() * c.inverse())
            .filter(|v| v.iter().all(|x| x.is_finite()) && v.norm() > 1e-300)
            .unwrap_or_else(|| CMat::from_fn(sys.n_rf_tx, d, identity_entry));
        bf.digital_tx = (0..sys.n_users())
            .map(|k| v.columns(offs[k], sys.streams_per_user[k]).into_owned())
            .collect();
        bf.scale_power(sys.power_budget)
    }
}

fn identity_entry(r: usize, c: usize) -> C64 {
    if r == c {
        C64::new(1.0, 0.0)
    } else {
        C64::new(0.0, 0.0)
    }
}

/// Singular vectors ordered by decreasing singular value, skipping null
/// directions. `left` selects columns of U, otherwise columns of V.
fn sorted_singular_vectors(m: &CMat, left: bool) -> Vec<DVector<C64>> {
    let svd = m.clone().svd(left, !left);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let tol = svd.singular_values.iter().cloned().fold(0.0, f64::max) * 1e-12;
    order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol)
        .map(|i| {
            if left {
                svd.u.as_ref().unwrap().column(i).into_owned()
            } else {
                // v_t holds V^H, so row i conjugated is column i of V
                svd.v_t.as_ref().unwrap().row(i).adjoint()
            }
        })
        .collect()
}

/// A block of symbol vectors, stored as the columns of a `D x J` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBatch {
    pub vectors: CMat,
    pub streams_per_user: Vec<usize>,
}

impl SymbolBatch {
    pub fn new(vectors: CMat, streams_per_user: Vec<usize>) -> Result<Self> {
        if vectors.nrows() != streams_per_user.iter().sum::<usize>() {
            return Err(Error::Dimension("symbol vector length does not match the stream split".into()));
        }
        Ok(SymbolBatch { vectors, streams_per_user })
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// User `k`'s symbols `b_k` in vector `j`.
    pub fn user_slice(&self, j: usize, k: usize) -> DVector<C64> {
        let o = offsets(&self.streams_per_user)[k];
        self.vectors.view((o, j), (self.streams_per_user[k], 1)).column(0).into_owned()
    }
}

fn index_to_vector(points: &[C64], mut index: u64, d: usize) -> Vec<C64> {
    let m = points.len() as u64;
    (0..d)
        .map(|_| {
            let p = points[(index % m) as usize];
            index /= m;
            p
        })
        .collect()
}

/// `J` distinct symbol vectors drawn uniformly without replacement.
pub fn sample_symbol_batch(constellation: Constellation, streams_per_user: &[usize], j: usize, seed: u64) -> Result<SymbolBatch> {
    let mut rng = seed::stream(seed, 2);
    sample_symbol_batch_with(constellation, streams_per_user, j, &mut rng)
}

pub(crate) fn sample_symbol_batch_with(
    constellation: Constellation,
    streams_per_user: &[usize],
    j: usize,
    rng: &mut Rng,
) -> Result<SymbolBatch> {
    if j == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let d: usize = streams_per_user.iter().sum();
    let points = constellation.points();
    let m = points.len();
    let space = (m as f64).powi(d as i32);
    if (j as f64) > space {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {j} distinct vectors from {space} candidates"
        )));
    }
    let mut seen: HashSet<Vec<u16>> = HashSet::with_capacity(j);
    let mut out = CMat::zeros(d, j);
    let mut col = 0;
    while col < j {
        let idx: Vec<u16> = (0..d).map(|_| rng.random_range(0..m) as u16).collect();
        if seen.insert(idx.clone()) {
            for (r, &i) in idx.iter().enumerate() {
                out[(r, col)] = points[i as usize];
            }
            col += 1;
        }
    }
    SymbolBatch::new(out, streams_per_user.to_vec())
}

/// `j` limited to the number of distinct symbol vectors.
pub fn capped_sample_size(constellation: Constellation, streams_per_user: &[usize], j: usize) -> usize {
    let d: usize = streams_per_user.iter().sum();
    let space = (constellation.size() as f64).powi(d as i32);
    if (j as f64) > space {
        space as usize
    } else {
        j
    }
}

/// Largest enumeration the exhaustive routines accept.
pub const MAX_ENUMERATION: u64 = 1 << 16;

/// Every symbol vector of length `D`.
pub fn exhaustive_batch(constellation: Constellation, streams_per_user: &[usize]) -> Result<SymbolBatch> {
    let d: usize = streams_per_user.iter().sum();
    let points = constellation.points();
    let total = (points.len() as u64).checked_pow(d as u32).filter(|&n| n <= MAX_ENUMERATION);
    let total = total.ok_or_else(|| Error::InvalidArgument("enumeration exceeds 2^16 vectors".into()))?;
    let mut out = CMat::zeros(d, total as usize);
    for q in 0..total {
        for (r, p) in index_to_vector(&points, q, d).into_iter().enumerate() {
            out[(r, q as usize)] = p;
        }
    }
    SymbolBatch::new(out, streams_per_user.to_vec())
}

/// The `M^(D-1)` vectors whose entry `stream` equals `symbol`.
pub fn conditioned_batch(constellation: Constellation, streams_per_user: &[usize], stream: usize, symbol: C64) -> Result<SymbolBatch> {
    let d: usize = streams_per_user.iter().sum();
    if stream >= d {
        return Err(Error::InvalidArgument("stream index out of range".into()));
    }
    let points = constellation.points();
    let total = (points.len() as u64)
        .checked_pow(d as u32 - 1)
        .filter(|&n| n <= MAX_ENUMERATION)
        .ok_or_else(|| Error::InvalidArgument("enumeration exceeds 2^16 vectors".into()))?;
    let mut out = CMat::zeros(d, total as usize);
    for q in 0..total {
        let others = index_to_vector(&points, q, d - 1);
        let mut it = others.into_iter();
        for r in 0..d {
            out[(r, q as usize)] = if r == stream { symbol } else { it.next().unwrap() };
        }
    }
    SymbolBatch::new(out, streams_per_user.to_vec())
}

/// `b_k = W_k^H U_k (H_k F V s + n_k)` for every user; `noise = None`
/// gives the noise-free outputs.
pub fn receiver_output(
    bf: &HybridBeamformers,
    h: &ChannelRealization,
    s: &DVector<C64>,
    noise: Option<&[DVector<C64>]>,
) -> Result<Vec<DVector<C64>>> {
    let v = bf.stacked_tx();
    if s.len() != v.ncols() {
        return Err(Error::Dimension("symbol vector length does not match the precoders".into()));
    }
    if h.n_users() != bf.n_users() || h.n_tx() != bf.analog_tx_phase.nrows() {
        return Err(Error::Dimension("channel does not match the beamformers".into()));
    }
    let x = bf.analog_tx() * (v * s);
    let mut out = Vec::with_capacity(bf.n_users());
    for k in 0..bf.n_users() {
        let mut y = &h.matrices[k] * &x;
        if let Some(n) = noise {
            if n[k].len() != y.len() {
                return Err(Error::Dimension("noise vector length does not match the receiver".into()));
            }
            y += &n[k];
        }
        let u = bf.analog_rx(k);
        if u.ncols() != y.len() {
            return Err(Error::Dimension("analog combiner does not match the channel".into()));
        }
        out.push(bf.digital_rx[k].adjoint() * (u * y));
    }
    Ok(out)
}
