//! Scenario runners producing result CSVs and plots.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{read_results_csv, series_by_method, write_results_csv, write_svg_plot, ResultRow, XAxis};
use super::ser::{pooled_monte_carlo_ser, MonteCarloConfig, SerEstimate};
use crate::channel::{
    apply_csi_error, generate_dataset, AngleDistribution, ChannelRealization, ChannelSource, ClusteredChannelConfig, CsiErrorConfig,
    GainDistribution,
};
use crate::gd::{run_gd, GdConfig, Steps};
use crate::seed;
use crate::transceiver::{capped_sample_size, sample_symbol_batch_with, Constellation, HybridBeamformers, SystemConfig};
use crate::unfold::{forward, initial_state, train, NetworkShape, TrainConfig, TrainTracePoint, UnfoldNetwork};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SnrSweep,
    ImperfectCsi,
    Transfer,
    Generalization,
    LayerSweep,
    BatchSweep,
    StepSweep,
}

impl Scenario {
    fn x_axis(self) -> XAxis {
        match self {
            Scenario::ImperfectCsi => XAxis::SigmaH,
            Scenario::LayerSweep => XAxis::Layers,
            _ => XAxis::SnrDb,
        }
    }
}

/// Geometry of the clustered channel; array sizes come from the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub n_clusters: usize,
    pub n_rays: usize,
    pub angles: AngleDistribution,
    pub gains: GainDistribution,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            n_clusters: 8,
            n_rays: 10,
            angles: AngleDistribution::default(),
            gains: GainDistribution::default(),
        }
    }
}

impl ChannelSpec {
    pub fn clustered(&self, sys: &SystemConfig) -> ClusteredChannelConfig {
        ClusteredChannelConfig {
            n_clusters: self.n_clusters,
            n_rays: self.n_rays,
            n_tx: sys.n_tx,
            n_rx_per_user: sys.n_rx_per_user.clone(),
            angles: self.angles,
            gains: self.gains,
        }
    }
}

/// Which optimisers an experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    Unfold,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: Scenario,
    pub system: SystemConfig,
    pub constellation: Constellation,
    pub channel: ChannelSpec,
    pub methods: Vec<Method>,
    pub snr_db: Vec<f64>,
    pub sigma_h: Vec<f64>,
    pub layers: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub step_sizes: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train_channels: usize,
    pub validation_channels: usize,
    pub test_channels: usize,
    pub gd: GdConfig,
    pub train: TrainConfig,
    /// Relative jitter of the initial step matrices.
    pub init_jitter: f64,
    pub monte_carlo: MonteCarloConfig,
    /// Layers kept fixed when retraining on the target channel model.
    pub transfer_frozen_layers: usize,
    /// User count of the smaller system in the generalization scenario.
    pub generalization_users: usize,
    /// Result files of other methods drawn into the plot.
    pub baselines: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            scenario: Scenario::SnrSweep,
            system: SystemConfig::uniform(64, 8, 2, 8, 4, 3, 15.0),
            constellation: Constellation::Qpsk,
            channel: ChannelSpec::default(),
            methods: vec![Method::Gd, Method::Unfold],
            snr_db: vec![5.0, 15.0, 25.0],
            sigma_h: vec![0.0, 0.1, 0.2, 0.3],
            layers: vec![15],
            batch_sizes: vec![5, 10, 20],
            step_sizes: vec![0.005, 0.01, 0.02],
            seeds: vec![1],
            train_channels: 500,
            validation_channels: 50,
            test_channels: 100,
            gd: GdConfig::default(),
            train: TrainConfig::default(),
            init_jitter: 0.1,
            monte_carlo: MonteCarloConfig::default(),
            transfer_frozen_layers: 10,
            generalization_users: 1,
            baselines: Vec::new(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.constellation.validate()?;
        self.gd.validate()?;
        self.train.validate()?;
        self.channel.clustered(&self.system).validate()?;
        let empty = match self.scenario {
            Scenario::SnrSweep | Scenario::Transfer | Scenario::Generalization => self.snr_db.is_empty(),
            Scenario::ImperfectCsi => self.sigma_h.is_empty() || self.snr_db.is_empty(),
            Scenario::LayerSweep => self.layers.is_empty(),
            Scenario::BatchSweep => self.batch_sizes.is_empty(),
            Scenario::StepSweep => self.step_sizes.is_empty(),
        };
        if empty || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config(format!("empty grid for scenario {:?}", self.scenario)));
        }
        if self.layers.contains(&0) || self.batch_sizes.contains(&0) {
            return Err(Error::Config("layer counts and batch sizes must be positive".into()));
        }
        if self.step_sizes.iter().any(|&s| !(s > 0.0)) || self.sigma_h.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("step sizes must be positive and CSI errors non-negative".into()));
        }
        if self.test_channels == 0 || self.train_channels == 0 || self.validation_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.scenario == Scenario::Generalization
            && (self.generalization_users == 0 || self.generalization_users >= self.system.n_users())
        {
            return Err(Error::Config(
                "generalization users must be between 1 and the trained user count".into(),
            ));
        }
        Ok(())
    }

    fn layers_default(&self) -> usize {
        self.layers[0]
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub csv: PathBuf,
    pub svg: PathBuf,
    /// Training traces, labelled by grid point.
    pub traces: Vec<(String, Vec<TrainTracePoint>)>,
}

struct Sets {
    train: Vec<ChannelRealization>,
    validation: Vec<ChannelRealization>,
    test: Vec<ChannelRealization>,
}

fn sets(source: &ChannelSource, spec: &ExperimentSpec, seed_value: u64) -> Result<Sets> {
    Ok(Sets {
        train: generate_dataset(source, spec.train_channels, seed::derive(seed_value, 10))?,
        validation: generate_dataset(source, spec.validation_channels, seed::derive(seed_value, 11))?,
        test: generate_dataset(source, spec.test_channels, seed::derive(seed_value, 12))?,
    })
}

/// Descent-initialised network for `sys`.
pub fn initial_network(spec: &ExperimentSpec, sys: &SystemConfig, layers: usize, seed_value: u64) -> Result<UnfoldNetwork> {
    let mut rng = seed::stream(seed_value, 20);
    UnfoldNetwork::perturbed_descent(
        NetworkShape::of(sys),
        spec.constellation,
        layers,
        Steps::from(&spec.gd),
        spec.gd.kernel_width(sys),
        sys.power_budget,
        spec.init_jitter,
        &mut rng,
    )
}

/// Run descent on `designed[i]` and measure the pooled SER on `actual[i]`.
pub fn gd_ser(
    spec: &ExperimentSpec,
    sys: &SystemConfig,
    designed: &[ChannelRealization],
    actual: &[ChannelRealization],
    seed_value: u64,
) -> Result<SerEstimate> {
    let states: Vec<HybridBeamformers> = designed
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let bf0 = initial_state(sys, h)?;
            Ok(run_gd(&bf0, h, sys, spec.constellation, &spec.gd, seed::derive(seed_value, i as u64))?.state)
        })
        .collect::<Result<_>>()?;
    measure(spec, sys, &states, actual, seed_value)
}

/// Forward the network on `designed[i]` and measure the pooled SER on `actual[i]`.
pub fn unfold_states(
    net: &UnfoldNetwork,
    sys: &SystemConfig,
    designed: &[ChannelRealization],
    sample_size: usize,
    seed_value: u64,
) -> Result<Vec<HybridBeamformers>> {
    designed
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = seed::stream(seed::derive(seed_value, i as u64), 21);
            let batch = sample_symbol_batch_with(
                net.constellation,
                &sys.streams_per_user,
                capped_sample_size(net.constellation, &sys.streams_per_user, sample_size),
                &mut rng,
            )?;
            let bf0 = initial_state(sys, h)?;
            Ok(forward(net, &bf0, h, &batch)?.output().clone())
        })
        .collect()
}

fn measure(
    spec: &ExperimentSpec,
    sys: &SystemConfig,
    states: &[HybridBeamformers],
    actual: &[ChannelRealization],
    seed_value: u64,
) -> Result<SerEstimate> {
    let links: Vec<_> = states.iter().zip(actual).collect();
    pooled_monte_carlo_ser(
        &links,
        spec.constellation,
        &sys.noise_std_per_user,
        &spec.monte_carlo,
        seed::derive(seed_value, 30),
    )
}

fn unfold_ser(
    spec: &ExperimentSpec,
    net: &UnfoldNetwork,
    sys: &SystemConfig,
    designed: &[ChannelRealization],
    actual: &[ChannelRealization],
    seed_value: u64,
) -> Result<SerEstimate> {
    let states = unfold_states(net, sys, designed, spec.train.sample_size, seed_value)?;
    measure(spec, sys, &states, actual, seed_value)
}

/// Keep the first `users` users and restore the power budget.
pub fn truncate_users(bf: &HybridBeamformers, users: usize, power_budget: f64) -> Result<HybridBeamformers> {
    HybridBeamformers {
        digital_tx: bf.digital_tx[..users].to_vec(),
        digital_rx: bf.digital_rx[..users].to_vec(),
        analog_rx_phase: bf.analog_rx_phase[..users].to_vec(),
        analog_tx_phase: bf.analog_tx_phase.clone(),
    }
    .scale_power(power_budget)
}

/// Copy of `sys` restricted to its first `users` users.
pub fn restrict_users(sys: &SystemConfig, users: usize) -> SystemConfig {
    SystemConfig {
        n_rx_per_user: sys.n_rx_per_user[..users].to_vec(),
        n_rf_rx_per_user: sys.n_rf_rx_per_user[..users].to_vec(),
        streams_per_user: sys.streams_per_user[..users].to_vec(),
        noise_std_per_user: sys.noise_std_per_user[..users].to_vec(),
        ..sys.clone()
    }
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    rows: Vec<ResultRow>,
    traces: Vec<(String, Vec<TrainTracePoint>)>,
    log: &'a mut dyn FnMut(&str),
}

impl Runner<'_> {
    fn has(&self, m: Method) -> bool {
        self.spec.methods.contains(&m)
    }

    fn push(&mut self, method: &str, snr_db: f64, sigma_h: f64, layers: usize, iterations: usize, est: SerEstimate) {
        (self.log)(&format!(
            "{method}: snr {snr_db} dB, sigma_h {sigma_h}, layers {layers}: SER {:.4e} +- {:.1e} ({} symbols)",
            est.ser, est.std_error, est.trials
        ));
        self.rows.push(ResultRow {
            method: method.to_string(),
            snr_db,
            sigma_h,
            layers,
            iterations,
            ser: est.ser,
            std_error: est.std_error,
            trials: est.trials,
        });
    }

    fn train(
        &mut self,
        label: String,
        net: &UnfoldNetwork,
        sys: &SystemConfig,
        sets: &Sets,
        cfg: &TrainConfig,
        seed_value: u64,
    ) -> Result<UnfoldNetwork> {
        let log = &mut *self.log;
        let out = train(net, sys, &sets.train, &sets.validation, cfg, seed_value, &mut |p| {
            log(&format!(
                "  train {label} step {}: train {:.4e} validation {:.4e}",
                p.epoch, p.train_loss, p.validation_loss
            ))
        })?;
        self.traces.push((label, out.trace));
        Ok(out.network)
    }

    fn gd(
        &mut self,
        sys: &SystemConfig,
        designed: &[ChannelRealization],
        actual: &[ChannelRealization],
        seed_value: u64,
    ) -> Result<SerEstimate> {
        gd_ser(self.spec, sys, designed, actual, seed_value)
    }
}

/// Run the scenario grid, writing `<name>.csv`, `<name>.svg` and one
/// training-trace CSV per trained network into the output directory.
pub fn run_experiment(spec: &ExperimentSpec, log: &mut dyn FnMut(&str)) -> Result<ExperimentOutcome> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;
    let mut r = Runner {
        spec,
        rows: Vec::new(),
        traces: Vec::new(),
        log,
    };
    let l0 = spec.layers_default();
    let iters = spec.gd.max_iters;
    for &s in &spec.seeds {
        let mut sys = spec.system.clone();
        let clustered = ChannelSource::Clustered(spec.channel.clustered(&sys));
        match spec.scenario {
            Scenario::SnrSweep => {
                let data = sets(&clustered, spec, s)?;
                for &snr in &spec.snr_db {
                    sys.set_snr_db(snr);
                    if r.has(Method::Gd) {
                        let e = r.gd(&sys, &data.test, &data.test, s)?;
                        r.push("gd", snr, 0.0, 0, iters, e);
                    }
                    if r.has(Method::Unfold) {
                        let net = initial_network(spec, &sys, l0, s)?;
                        let net = r.train(format!("snr{snr}_seed{s}"), &net, &sys, &data, &spec.train, s)?;
                        let e = unfold_ser(spec, &net, &sys, &data.test, &data.test, s)?;
                        r.push("unfold", snr, 0.0, l0, 0, e);
                    }
                }
            }
            Scenario::ImperfectCsi => {
                let data = sets(&clustered, spec, s)?;
                let snr = spec.snr_db[0];
                sys.set_snr_db(snr);
                let net = if r.has(Method::Unfold) {
                    let net = initial_network(spec, &sys, l0, s)?;
                    Some(r.train(format!("csi_seed{s}"), &net, &sys, &data, &spec.train, s)?)
                } else {
                    None
                };
                for &sigma_h in &spec.sigma_h {
                    let estimated = data
                        .test
                        .iter()
                        .enumerate()
                        .map(|(i, h)| apply_csi_error(h, CsiErrorConfig { sigma_h }, seed::derive(s ^ 0xC5, i as u64)))
                        .collect::<Result<Vec<_>>>()?;
                    if r.has(Method::Gd) {
                        let e = r.gd(&sys, &estimated, &data.test, s)?;
                        r.push("gd", snr, sigma_h, 0, iters, e);
                    }
                    if let Some(net) = &net {
                        let e = unfold_ser(spec, net, &sys, &estimated, &data.test, s)?;
                        r.push("unfold", snr, sigma_h, l0, 0, e);
                    }
                }
            }
            Scenario::Transfer => {
                let source = sets(&clustered, spec, s)?;
                let gaussian = ChannelSource::Gaussian {
                    n_tx: sys.n_tx,
                    n_rx_per_user: sys.n_rx_per_user.clone(),
                };
                let target = sets(&gaussian, spec, seed::derive(s, 1))?;
                for &snr in &spec.snr_db {
                    sys.set_snr_db(snr);
                    if r.has(Method::Gd) {
                        let e = r.gd(&sys, &target.test, &target.test, s)?;
                        r.push("gd", snr, 0.0, 0, iters, e);
                    }
                    if r.has(Method::Unfold) {
                        let net = initial_network(spec, &sys, l0, s)?;
                        let net = r.train(format!("source_snr{snr}_seed{s}"), &net, &sys, &source, &spec.train, s)?;
                        let e = unfold_ser(spec, &net, &sys, &target.test, &target.test, s)?;
                        r.push("unfold_source", snr, 0.0, l0, 0, e);
                        let cfg = TrainConfig {
                            frozen_layers: spec.transfer_frozen_layers.min(l0 - 1),
                            ..spec.train.clone()
                        };
                        let tuned = r.train(format!("transfer_snr{snr}_seed{s}"), &net, &sys, &target, &cfg, s)?;
                        let e = unfold_ser(spec, &tuned, &sys, &target.test, &target.test, s)?;
                        r.push("unfold_transfer", snr, 0.0, l0, 0, e);
                    }
                }
            }
            Scenario::Generalization => {
                let data = sets(&clustered, spec, s)?;
                let k1 = spec.generalization_users;
                let small_source = ChannelSource::Clustered(spec.channel.clustered(&restrict_users(&sys, k1)));
                let small_test = generate_dataset(&small_source, spec.test_channels, seed::derive(s, 13))?;
                let padded = small_test
                    .iter()
                    .map(|h| h.zero_padded(sys.n_tx, &sys.n_rx_per_user))
                    .collect::<Result<Vec<_>>>()?;
                for &snr in &spec.snr_db {
                    sys.set_snr_db(snr);
                    let small = restrict_users(&sys, k1);
                    if r.has(Method::Gd) {
                        let e = r.gd(&sys, &data.test, &data.test, s)?;
                        r.push("gd", snr, 0.0, 0, iters, e);
                        let e = r.gd(&small, &small_test, &small_test, s)?;
                        r.push("gd_small", snr, 0.0, 0, iters, e);
                    }
                    if r.has(Method::Unfold) {
                        let net = initial_network(spec, &sys, l0, s)?;
                        let net = r.train(format!("general_snr{snr}_seed{s}"), &net, &sys, &data, &spec.train, s)?;
                        let e = unfold_ser(spec, &net, &sys, &data.test, &data.test, s)?;
                        r.push("unfold", snr, 0.0, l0, 0, e);
                        let states = unfold_states(&net, &sys, &padded, spec.train.sample_size, s)?
                            .iter()
                            .map(|b| truncate_users(b, k1, sys.power_budget))
                            .collect::<Result<Vec<_>>>()?;
                        let e = measure(spec, &small, &states, &small_test, s)?;
                        r.push("unfold_padded", snr, 0.0, l0, 0, e);
                    }
                }
            }
            Scenario::LayerSweep | Scenario::BatchSweep | Scenario::StepSweep => {
                let data = sets(&clustered, spec, s)?;
                let snr = spec.snr_db.first().copied().unwrap_or(15.0);
                sys.set_snr_db(snr);
                if r.has(Method::Gd) {
                    let e = r.gd(&sys, &data.test, &data.test, s)?;
                    r.push("gd", snr, 0.0, 0, iters, e);
                }
                if r.has(Method::Unfold) {
                    let points: Vec<(String, usize, TrainConfig)> = match spec.scenario {
                        Scenario::LayerSweep => spec.layers.iter().map(|&l| ("unfold".into(), l, spec.train.clone())).collect(),
                        Scenario::BatchSweep => spec
                            .batch_sizes
                            .iter()
                            .map(|&n| {
                                (
                                    format!("unfold_batch{n}"),
                                    l0,
                                    TrainConfig {
                                        batch_size: n,
                                        ..spec.train.clone()
                                    },
                                )
                            })
                            .collect(),
                        _ => spec
                            .step_sizes
                            .iter()
                            .map(|&mu| {
                                (
                                    format!("unfold_step{mu}"),
                                    l0,
                                    TrainConfig {
                                        step: mu,
                                        ..spec.train.clone()
                                    },
                                )
                            })
                            .collect(),
                    };
                    for (method, layers, cfg) in points {
                        let net = initial_network(spec, &sys, layers, s)?;
                        let net = r.train(format!("{method}_l{layers}_seed{s}"), &net, &sys, &data, &cfg, s)?;
                        let e = unfold_ser(spec, &net, &sys, &data.test, &data.test, s)?;
                        r.push(&method, snr, 0.0, layers, 0, e);
                    }
                }
            }
        }
    }
    let Runner { rows, traces, .. } = r;
    write_outputs(spec, rows, traces)
}

fn trace_path(dir: &Path, name: &str, label: &str) -> PathBuf {
    let safe: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(format!("{name}_trace_{safe}.csv"))
}

fn write_outputs(spec: &ExperimentSpec, rows: Vec<ResultRow>, traces: Vec<(String, Vec<TrainTracePoint>)>) -> Result<ExperimentOutcome> {
    let dir = &spec.output_dir;
    let csv = dir.join(format!("{}.csv", spec.name));
    let svg = dir.join(format!("{}.svg", spec.name));
    write_results_csv(&csv, &rows)?;
    for (label, trace) in &traces {
        let path = trace_path(dir, &spec.name, label);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        for p in trace {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let mut plotted = rows.clone();
    for b in &spec.baselines {
        plotted.extend(read_results_csv(b)?);
    }
    let axis = spec.scenario.x_axis();
    write_svg_plot(&svg, &spec.name, axis.label(), &series_by_method(&plotted, axis))?;
    Ok(ExperimentOutcome { rows, csv, svg, traces })
}
