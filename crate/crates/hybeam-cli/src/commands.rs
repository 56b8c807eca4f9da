use std::path::{Path, PathBuf};

use hybeam::channel::{check_dimensions, generate_dataset, load_dataset, save_dataset, ChannelRealization, ChannelSource};
use hybeam::eval::{pooled_monte_carlo_ser, run_experiment, unfold_states, write_results_csv, ResultRow};
use hybeam::gd::{run_gd, Steps};
use hybeam::seed;
use hybeam::transceiver::HybridBeamformers;
use hybeam::unfold::{initial_state, load_network, save_network, train, NetworkShape, UnfoldNetwork};
use hybeam::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, RESOLVED_CONFIG};

pub const TRAIN_SET: &str = "train.mserchan";
pub const VALIDATION_SET: &str = "validation.mserchan";
pub const TEST_SET: &str = "test.mserchan";
pub const NETWORK_FILE: &str = "network.mserunfd";

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub verbose: bool,
}

impl Ctx {
    pub fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn prepare_output(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| io(&self.out, e))?;
        let path = self.path(RESOLVED_CONFIG);
        std::fs::write(&path, self.cfg.to_toml()?).map_err(|e| io(&path, e))
    }

    fn dataset(&self, explicit: Option<PathBuf>, default: &str) -> Result<Vec<ChannelRealization>> {
        let path = explicit.unwrap_or_else(|| self.path(default));
        let set = load_dataset(&path)?;
        check_dimensions(&set, self.cfg.system.n_tx, &self.cfg.system.n_rx_per_user)?;
        self.log(&format!("loaded {} channels from {}", set.len(), path.display()));
        Ok(set)
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn generate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let source = ChannelSource::Clustered(cfg.channel.clustered(&cfg.system));
    let sets = [
        (TRAIN_SET, cfg.dataset.train, 10),
        (VALIDATION_SET, cfg.dataset.validation, 11),
        (TEST_SET, cfg.dataset.test, 12),
    ];
    for (name, count, index) in sets {
        let set = generate_dataset(&source, count, seed::derive(cfg.seed, index))?;
        let path = ctx.path(name);
        save_dataset(&path, &set)?;
        println!(
            "{}: {} channels, {} users, {} transmit antennas, receive antennas {:?}",
            path.display(),
            set.len(),
            cfg.system.n_users(),
            cfg.system.n_tx,
            cfg.system.n_rx_per_user
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct GdTraceRow {
    channel: usize,
    restart: usize,
    iteration: usize,
    loss: f64,
}

pub fn gd(ctx: &Ctx, dataset: Option<PathBuf>, limit: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut channels = ctx.dataset(dataset, TEST_SET)?;
    if let Some(n) = limit {
        channels.truncate(n);
    }
    let runs: Vec<_> = channels
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let bf0 = initial_state(&cfg.system, h)?;
            run_gd(&bf0, h, &cfg.system, cfg.constellation, &cfg.gd, seed::derive(cfg.seed, i as u64))
        })
        .collect::<Result<_>>()?;
    let trace: Vec<GdTraceRow> = runs
        .iter()
        .enumerate()
        .flat_map(|(channel, r)| {
            r.trace.iter().map(move |p| GdTraceRow {
                channel,
                restart: r.restart,
                iteration: p.iteration,
                loss: p.loss,
            })
        })
        .collect();
    write_csv(&ctx.path("gd_trace.csv"), &trace)?;
    let states: Vec<HybridBeamformers> = runs.iter().map(|r| r.state.clone()).collect();
    let iterations = runs.iter().map(|r| r.iterations).sum::<usize>() / runs.len().max(1);
    let row = measure(ctx, "gd", &states, &channels, 0, iterations)?;
    write_results_csv(&ctx.path("gd_ser.csv"), std::slice::from_ref(&row))?;
    println!("gd: SER {:.4e} +- {:.1e} over {} channels", row.ser, row.std_error, channels.len());
    Ok(())
}

fn measure(
    ctx: &Ctx,
    method: &str,
    states: &[HybridBeamformers],
    channels: &[ChannelRealization],
    layers: usize,
    iterations: usize,
) -> Result<ResultRow> {
    let cfg = &ctx.cfg;
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no channels to evaluate".into()));
    }
    let links: Vec<_> = states.iter().zip(channels).collect();
    let est = pooled_monte_carlo_ser(
        &links,
        cfg.constellation,
        &cfg.system.noise_std_per_user,
        &cfg.monte_carlo,
        seed::derive(cfg.seed, 30),
    )?;
    Ok(ResultRow {
        method: method.into(),
        snr_db: cfg.snr_db(),
        sigma_h: 0.0,
        layers,
        iterations,
        ser: est.ser,
        std_error: est.std_error,
        trials: est.trials,
    })
}

pub fn train_network(ctx: &Ctx, train_path: Option<PathBuf>, validation_path: Option<PathBuf>) -> Result<()> {
    let cfg = &ctx.cfg;
    let train_set = ctx.dataset(train_path, TRAIN_SET)?;
    let validation_set = ctx.dataset(validation_path, VALIDATION_SET)?;
    let net = UnfoldNetwork::perturbed_descent(
        NetworkShape::of(&cfg.system),
        cfg.constellation,
        cfg.network.layers,
        Steps::from(&cfg.gd),
        cfg.gd.kernel_width(&cfg.system),
        cfg.system.power_budget,
        cfg.network.init_jitter,
        &mut seed::stream(cfg.seed, 20),
    )?;
    let out = train(&net, &cfg.system, &train_set, &validation_set, &cfg.train, cfg.seed, &mut |p| {
        ctx.log(&format!(
            "epoch {}: train {:.4e} validation {:.4e}",
            p.epoch, p.train_loss, p.validation_loss
        ));
    })?;
    write_csv(&ctx.path("train_trace.csv"), &out.trace)?;
    let path = ctx.path(NETWORK_FILE);
    save_network(&path, &out.network)?;
    println!(
        "train: validation loss {:.4e} -> {:.4e} after {} steps; network written to {}",
        out.initial_validation_loss,
        out.best_validation_loss,
        out.trace.len(),
        path.display()
    );
    Ok(())
}

pub fn test_network(ctx: &Ctx, network: Option<PathBuf>, dataset: Option<PathBuf>) -> Result<()> {
    let cfg = &ctx.cfg;
    let net = load_network(&network.unwrap_or_else(|| ctx.path(NETWORK_FILE)))?;
    net.check_system(&cfg.system)?;
    if net.constellation != cfg.constellation {
        return Err(Error::Config(format!(
            "network trained for {:?} but the config uses {:?}",
            net.constellation, cfg.constellation
        )));
    }
    let channels = ctx.dataset(dataset, TEST_SET)?;
    let states = unfold_states(&net, &cfg.system, &channels, cfg.train.sample_size, cfg.seed)?;
    let row = measure(ctx, "unfold", &states, &channels, net.n_layers(), net.n_layers())?;
    write_results_csv(&ctx.path("test_ser.csv"), std::slice::from_ref(&row))?;
    println!(
        "test: SER {:.4e} +- {:.1e} over {} channels",
        row.ser,
        row.std_error,
        channels.len()
    );
    Ok(())
}

pub fn experiment(ctx: &Ctx) -> Result<()> {
    let mut spec = ctx
        .cfg
        .experiment
        .clone()
        .ok_or_else(|| Error::Config("the config has no [experiment] section".into()))?;
    spec.output_dir = ctx.out.clone();
    let outcome = run_experiment(&spec, &mut |m| ctx.log(m))?;
    for r in &outcome.rows {
        println!(
            "{:<20} snr {:>5.1} sigma_h {:.2} layers {:>3}: SER {:.4e}",
            r.method, r.snr_db, r.sigma_h, r.layers, r.ser
        );
    }
    println!("results: {} and {}", outcome.csv.display(), outcome.svg.display());
    Ok(())
}
