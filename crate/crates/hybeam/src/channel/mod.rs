//! Channel models.
//!
//! The clustered model sums `n_clusters * n_rays` planar-wave paths between
//! uniform linear arrays with half-wavelength spacing:
//!
//! `H = sqrt(Nt*Nr/(Nc*Nr_ays)) * sum alpha * a_r(theta_r) * a_t(theta_t)^H`.

pub(crate) mod dataset;

pub use dataset::{check_dimensions, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{self, Rng};
use crate::{CMat, Error, Result, C64};

/// How path angles are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AngleDistribution {
    /// Cluster centres uniform on `[-pi/2, pi/2]`, rays Laplacian around
    /// the centre with the given standard deviation in degrees.
    Clustered { ray_spread_deg: f64 },
    /// Every ray uniform on `[-pi/2, pi/2]`.
    Uniform,
    /// All paths at fixed angles (testing aid).
    Fixed { tx: f64, rx: f64 },
}

impl Default for AngleDistribution {
    fn default() -> Self {
        AngleDistribution::Clustered { ray_spread_deg: 7.5 }
    }
}

/// How complex path gains are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainDistribution {
    /// Circular complex Gaussian with the given variance.
    ComplexGaussian { variance: f64 },
    /// Every gain equal to one (testing aid).
    Unit,
}

impl Default for GainDistribution {
    fn default() -> Self {
        GainDistribution::ComplexGaussian { variance: 1.0 }
    }
}

/// Parameters of the clustered channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteredChannelConfig {
    pub n_clusters: usize,
    pub n_rays: usize,
    pub n_tx: usize,
    pub n_rx_per_user: Vec<usize>,
    #[serde(default)]
    pub angles: AngleDistribution,
    #[serde(default)]
    pub gains: GainDistribution,
}

impl ClusteredChannelConfig {
    pub fn new(n_tx: usize, n_rx_per_user: Vec<usize>) -> Self {
        ClusteredChannelConfig {
            n_clusters: 8,
            n_rays: 10,
            n_tx,
            n_rx_per_user,
            angles: AngleDistribution::default(),
            gains: GainDistribution::default(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_rx_per_user.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_rays == 0 {
            return Err(Error::Config("cluster and ray counts must be at least 1".into()));
        }
        if self.n_tx == 0 {
            return Err(Error::Config("n_tx must be at least 1".into()));
        }
        if self.n_rx_per_user.is_empty() {
            return Err(Error::Config("at least one user is required".into()));
        }
        if self.n_rx_per_user.contains(&0) {
            return Err(Error::Config("every user needs at least one antenna".into()));
        }
        match self.angles {
            AngleDistribution::Clustered { ray_spread_deg } if !(ray_spread_deg >= 0.0) => {
                return Err(Error::Config("ray spread must be non-negative".into()))
            }
            _ => {}
        }
        if let GainDistribution::ComplexGaussian { variance } = self.gains {
            if !(variance > 0.0) {
                return Err(Error::Config("gain variance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Which generator produced a realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    Clustered,
    Gaussian,
    /// Read back from a dataset file, which does not record provenance.
    External,
}

/// One draw of all users' channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `H_k`, each `n_rx_k x n_tx`.
    pub matrices: Vec<CMat>,
    pub seed: u64,
    pub model: ChannelModel,
}

impl ChannelRealization {
    pub fn n_users(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_tx(&self) -> usize {
        self.matrices.first().map_or(0, |h| h.ncols())
    }

    pub fn n_rx(&self, k: usize) -> usize {
        self.matrices[k].nrows()
    }

    /// All users' channels stacked vertically.
    pub fn stacked(&self) -> CMat {
        let rows: usize = self.matrices.iter().map(|h| h.nrows()).sum();
        let mut out = CMat::zeros(rows, self.n_tx());
        let mut r = 0;
        for h in &self.matrices {
            out.view_mut((r, 0), (h.nrows(), h.ncols())).copy_from(h);
            r += h.nrows();
        }
        out
    }

    /// Embed into a larger system: extra transmit antennas and receive
    /// antennas get zero columns/rows, extra users get all-zero channels.
    pub fn zero_padded(&self, n_tx: usize, n_rx_per_user: &[usize]) -> Result<Self> {
        if n_tx < self.n_tx() || n_rx_per_user.len() < self.n_users() {
            return Err(Error::Dimension("padding target is smaller than the channel".into()));
        }
        let mut matrices = Vec::with_capacity(n_rx_per_user.len());
        for (k, &nr) in n_rx_per_user.iter().enumerate() {
            let mut m = CMat::zeros(nr, n_tx);
            if let Some(h) = self.matrices.get(k) {
                if h.nrows() > nr {
                    return Err(Error::Dimension(format!("user {k} has {} antennas, target {nr}", h.nrows())));
                }
                m.view_mut((0, 0), (h.nrows(), h.ncols())).copy_from(h);
            }
            matrices.push(m);
        }
        Ok(ChannelRealization {
            matrices,
            seed: self.seed,
            model: self.model,
        })
    }
}

/// Channel estimation error level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsiErrorConfig {
    pub sigma_h: f64,
}

/// Unit-norm response of an `n`-element half-wavelength ULA.
pub fn steering_vector(angle: f64, n: usize) -> Result<DVector<C64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("steering vector length must be positive".into()));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let phase = PI * angle.sin();
    Ok(DVector::from_fn(n, |m, _| C64::from_polar(scale, phase * m as f64)))
}

pub(crate) fn complex_normal(rng: &mut Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

fn laplacian(rng: &mut Rng, std: f64) -> f64 {
    let b = std / std::f64::consts::SQRT_2;
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn uniform_angle(rng: &mut Rng) -> f64 {
    rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
}

/// Draw one realization of the clustered model.
pub fn sample_channel(config: &ClusteredChannelConfig, seed: u64) -> Result<ChannelRealization> {
    config.validate()?;
    let mut rng = seed::stream(seed, 0);
    let n_t = config.n_tx;
    let paths = (config.n_clusters * config.n_rays) as f64;
    let mut matrices = Vec::with_capacity(config.n_users());
    for &n_r in &config.n_rx_per_user {
        let norm = ((n_t * n_r) as f64 / paths).sqrt();
        let mut h = CMat::zeros(n_r, n_t);
        for _ in 0..config.n_clusters {
            let (centre_t, centre_r) = (uniform_angle(&mut rng), uniform_angle(&mut rng));
            for _ in 0..config.n_rays {
                let (theta_t, theta_r) = match config.angles {
                    AngleDistribution::Clustered { ray_spread_deg } => {
                        let std = ray_spread_deg.to_radians();
                        (centre_t + laplacian(&mut rng, std), centre_r + laplacian(&mut rng, std))
                    }
                    AngleDistribution::Uniform => (uniform_angle(&mut rng), uniform_angle(&mut rng)),
                    AngleDistribution::Fixed { tx, rx } => (tx, rx),
                };
                let gain = match config.gains {
                    GainDistribution::ComplexGaussian { variance } => complex_normal(&mut rng, variance),
                    GainDistribution::Unit => C64::new(1.0, 0.0),
                };
                let a_r = steering_vector(theta_r, n_r)?;
                let a_t = steering_vector(theta_t, n_t)?;
                h += (a_r * a_t.adjoint()) * (gain * norm);
            }
        }
        matrices.push(h);
    }
    Ok(ChannelRealization {
        matrices,
        seed,
        model: ChannelModel::Clustered,
    })
}

/// Draw a channel with i.i.d. unit-variance circular Gaussian entries.
pub fn sample_gaussian_channel(n_tx: usize, n_rx_per_user: &[usize], seed: u64) -> Result<ChannelRealization> {
    if n_tx == 0 || n_rx_per_user.is_empty() || n_rx_per_user.contains(&0) {
        return Err(Error::Config("gaussian channel needs positive dimensions".into()));
    }
    let mut rng = seed::stream(seed, 0);
    let matrices = n_rx_per_user
        .iter()
        .map(|&n_r| CMat::from_fn(n_r, n_tx, |_, _| complex_normal(&mut rng, 1.0)))
        .collect();
    Ok(ChannelRealization {
        matrices,
        seed,
        model: ChannelModel::Gaussian,
    })
}

/// Return the estimate `Hbar = H - sigma_h * dK` of a true channel `H`.
pub fn apply_csi_error(h: &ChannelRealization, cfg: CsiErrorConfig, seed: u64) -> Result<ChannelRealization> {
    if !(cfg.sigma_h >= 0.0) {
        return Err(Error::InvalidArgument("sigma_h must be non-negative".into()));
    }
    if cfg.sigma_h == 0.0 {
        return Ok(h.clone());
    }
    let mut rng = seed::stream(seed, 1);
    let matrices = h
        .matrices
        .iter()
        .map(|m| m.map(|x| x - complex_normal(&mut rng, 1.0) * cfg.sigma_h))
        .collect();
    Ok(ChannelRealization {
        matrices,
        seed: h.seed,
        model: h.model,
    })
}

/// Generator selection for datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ChannelSource {
    Clustered(ClusteredChannelConfig),
    Gaussian { n_tx: usize, n_rx_per_user: Vec<usize> },
}

impl ChannelSource {
    pub fn sample(&self, seed: u64) -> Result<ChannelRealization> {
        match self {
            ChannelSource::Clustered(cfg) => sample_channel(cfg, seed),
            ChannelSource::Gaussian { n_tx, n_rx_per_user } => sample_gaussian_channel(*n_tx, n_rx_per_user, seed),
        }
    }
}

/// Generate `count` realizations; realization `i` uses a seed derived from
/// `(master_seed, i)`, so the result does not depend on the thread count.
pub fn generate_dataset(source: &ChannelSource, count: usize, master_seed: u64) -> Result<Vec<ChannelRealization>> {
    (0..count)
        .into_par_iter()
        .map(|i| source.sample(seed::derive(master_seed, i as u64)))
        .collect()
}
