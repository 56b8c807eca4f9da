//! Acceptance report: one PASS/FAIL line per criterion. Data-set sizes are
//! reduced to desk scale; tolerances are not.

mod common;

use std::time::Instant;

use common::*;
use hybeam::channel::{sample_channel, ChannelRealization, ClusteredChannelConfig};
use hybeam::eval::{
    analytical_ser, finite_diff_gradient, monte_carlo_ser, pack_state, pooled_monte_carlo_ser, run_experiment, unfold_states, unpack_state,
    ExperimentSpec, Method, MonteCarloConfig, Scenario, SerEstimate, SerSampling,
};
use hybeam::gd::{alternating_update, gd_step, gradients, run_gd_with, GdConfig, Steps};
use hybeam::mser::channel_loss;
use hybeam::seed;
use hybeam::transceiver::{sample_symbol_batch, Constellation, HybridBeamformers, SymbolBatch, SystemConfig};
use hybeam::unfold::*;
use hybeam::Result;
use rand::Rng;

const QAM16: Constellation = Constellation::Qam { order: 16 };

const STEPS: Steps = Steps {
    p: 0.05,
    w: 0.05,
    theta_u: 0.02,
    theta_f: 0.02,
};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

/// Power and unit-modulus checks accumulated over every run.
#[derive(Default)]
struct Invariants {
    checked: usize,
    worst_power: f64,
    worst_modulus: f64,
}

impl Invariants {
    fn check(&mut self, bf: &HybridBeamformers, power_budget: f64) {
        self.checked += 1;
        self.worst_power = self.worst_power.max((bf.transmit_power() - power_budget).abs() / power_budget);
        self.worst_modulus = self.worst_modulus.max(bf.unit_modulus_deviation());
    }
}

fn max_abs_diff(a: &HybridBeamformers, b: &HybridBeamformers) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in a.digital_tx.iter().zip(&b.digital_tx).chain(a.digital_rx.iter().zip(&b.digital_rx)) {
        m = m.max((x - y).camax());
    }
    for (x, y) in a.analog_rx_phase.iter().zip(&b.analog_rx_phase) {
        m = m.max((x - y).amax());
    }
    m.max((&a.analog_tx_phase - &b.analog_tx_phase).amax())
}

struct Case {
    sys: SystemConfig,
    h: ChannelRealization,
    bf0: HybridBeamformers,
    batch: SymbolBatch,
    net: UnfoldNetwork,
}

/// Small instance with a two-user network whose offsets and kernel widths
/// are moved away from their descent values.
fn case(layers: usize, constellation: Constellation, seed_value: u64) -> Case {
    let (sys, h, bf) = small_instance(2, seed_value);
    let bf0 = bf.scale_power(sys.power_budget).unwrap();
    let batch = sample_symbol_batch(constellation, &sys.streams_per_user, 16, seed_value + 1).unwrap();
    let rho = output_scale(&bf0, &h);
    let mut rng = seed::stream(seed_value, 9);
    let mut net = UnfoldNetwork::perturbed_descent(
        NetworkShape::of(&sys),
        constellation,
        layers,
        STEPS,
        rho,
        sys.power_budget,
        0.3,
        &mut rng,
    )
    .unwrap();
    for layer in &mut net.layers {
        let mut x = layer.to_vec();
        for v in x.iter_mut() {
            if *v == 0.0 {
                *v = 0.01 * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        layer.assign(&x);
        for r in layer.rho_p.iter_mut().chain(&mut layer.rho_w).chain(&mut layer.rho_u) {
            *r *= 1.0 + 0.2 * rng.random::<f64>();
        }
    }
    Case { sys, h, bf0, batch, net }
}

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed_value in [1, 2, 3] {
        let (sys, h, bf) = small_instance(2, seed_value);
        let batch = sample_symbol_batch(Constellation::Qpsk, &sys.streams_per_user, 16, seed_value + 1).unwrap();
        let rho = output_scale(&bf, &h);
        let g = gradients(&bf, &h, &batch, Constellation::Qpsk, rho);
        let fd = finite_diff_gradient(
            &mut |x| channel_loss(&unpack_state(&bf, x), &h, &batch, Constellation::Qpsk, rho),
            &pack_state(&bf),
            1e-5,
        )
        .unwrap();
        // same layout as pack_state: P_k, W_k, theta_U_k, theta_F
        let mut blocks: Vec<Vec<f64>> = Vec::new();
        for m in g.p_conj.iter().chain(&g.w_conj) {
            blocks.push(split_grad(m));
        }
        for m in &g.theta_u {
            blocks.push(flat_real(m));
        }
        blocks.push(flat_real(&g.theta_f));
        let mut at = 0;
        for b in blocks {
            worst = worst.max(rel_err(&b, &fd[at..at + b.len()]));
            at += b.len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-6 && secs < 60.0,
        format!("worst relative error {worst:.2e} (< 1e-6), h = 1e-5, {secs:.1} s (< 60 s)"),
    )
}

fn backprop_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed_value in [11, 12] {
        let c = case(2, Constellation::Qpsk, seed_value);
        let tape = forward(&c.net, &c.bf0, &c.h, &c.batch).unwrap();
        let g = backward(&c.net, &tape, &c.h, &c.batch, false).unwrap();
        for l in 0..c.net.n_layers() {
            let fd = finite_diff_gradient(
                &mut |x| {
                    let mut net = c.net.clone();
                    net.layers[l].assign(x);
                    network_loss(&net, &c.bf0, &c.h, &c.batch).unwrap()
                },
                &c.net.layers[l].to_vec(),
                1e-5,
            )
            .unwrap();
            worst = worst.max(rel_err(&g.layers[l].to_vec(), &fd));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-5 && secs < 300.0,
        format!("L = 2, no normalization: worst relative error {worst:.2e} (< 1e-5), {secs:.1} s (< 300 s)"),
    )
}

fn descent_identity(inv: &mut Invariants) -> Verdict {
    let mut worst: f64 = 0.0;
    for (constellation, seed_value) in [(Constellation::Qpsk, 21), (QAM16, 22)] {
        let c = case(1, constellation, seed_value);
        let rho = c.net.rho;
        let net = UnfoldNetwork::descent(NetworkShape::of(&c.sys), constellation, 10, STEPS, rho, c.sys.power_budget).unwrap();
        let tape = forward(&net, &c.bf0, &c.h, &c.batch).unwrap();
        let mut bf = c.bf0.clone();
        for state in tape.layer_states().iter().skip(1) {
            bf = gd_step(&bf, &c.h, &c.batch, constellation, STEPS, rho, c.sys.power_budget).unwrap();
            inv.check(state, c.sys.power_budget);
            worst = worst.max(max_abs_diff(state, &bf));
        }
    }
    verdict(
        worst <= 1e-12,
        format!("L = 10, QPSK and 16-QAM: max element difference {worst:.2e} (<= 1e-12)"),
    )
}

fn two_step_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    for (constellation, seed_value) in [(Constellation::Qpsk, 31), (QAM16, 32)] {
        let c = case(1, constellation, seed_value);
        let rho = c.net.rho;
        let bf_t1 = alternating_update(&c.bf0, &c.h, &c.batch, constellation, STEPS, rho).unwrap();
        let bf_t2 = alternating_update(&bf_t1, &c.h, &c.batch, constellation, STEPS, rho).unwrap();
        let mut net = UnfoldNetwork::descent(NetworkShape::of(&c.sys), constellation, 1, STEPS, rho, c.sys.power_budget).unwrap();
        net.layers[0] = two_step_params(&NetworkShape::of(&c.sys), &bf_t1, &c.h, &c.batch, constellation, STEPS, rho).unwrap();
        let tape = forward(&net, &c.bf0, &c.h, &c.batch).unwrap();
        let after = tape.state_after(0, Op::UpdateP).unwrap();
        for k in 0..2 {
            worst = worst.max((&after.digital_tx[k] - &bf_t2.digital_tx[k]).camax());
        }
    }
    verdict(
        worst <= 1e-10,
        format!("one layer vs two descent iterations of P: {worst:.2e} (<= 1e-10)"),
    )
}

fn reference_system(snr_db: f64) -> SystemConfig {
    SystemConfig::uniform(64, 8, 2, 8, 4, 3, snr_db)
}

fn channels(sys: &SystemConfig, n: usize, base: u64) -> Vec<ChannelRealization> {
    let cfg = ClusteredChannelConfig::new(sys.n_tx, sys.n_rx_per_user.clone());
    (0..n)
        .map(|i| sample_channel(&cfg, seed::derive(base, i as u64)).unwrap())
        .collect()
}

fn pooled(states: &[HybridBeamformers], hs: &[ChannelRealization], sys: &SystemConfig, c: Constellation, seed_value: u64) -> SerEstimate {
    let links: Vec<_> = states.iter().zip(hs).collect();
    let mc = MonteCarloConfig {
        min_errors: 200,
        max_symbols: 3_000_000,
        chunk: 2048,
    };
    pooled_monte_carlo_ser(&links, c, &sys.noise_std_per_user, &mc, seed_value).unwrap()
}

struct ReferencePoint {
    snr_db: f64,
    gd: f64,
    unfold: f64,
}

/// Descent with restarts and a trained 15-layer network at each point.
fn reference_points(constellation: Constellation, points: &[(f64, f64)], inv: &mut Invariants) -> Vec<ReferencePoint> {
    const TEST: usize = 6;
    let gd_cfg = GdConfig {
        max_iters: 500,
        restarts: 50,
        ..GdConfig::default()
    };
    let train_cfg = TrainConfig {
        max_iters: 20,
        ..TrainConfig::default()
    };
    let mut out = Vec::new();
    for &(snr, _) in points {
        let sys = reference_system(snr);
        let test = channels(&sys, TEST, 1000);
        let train_set = channels(&sys, 60, 2000);
        let validation = channels(&sys, 10, 3000);
        let eval = hybeam::eval::SelectionBatch::new(constellation, &sys.streams_per_user, 5).unwrap();
        let mut states = Vec::new();
        for (i, h) in test.iter().enumerate() {
            let bf0 = initial_state(&sys, h).unwrap();
            let score = |b: &HybridBeamformers| eval.score(b, h, &sys, constellation);
            let mut seen = Vec::new();
            let run = run_gd_with(&bf0, h, &sys, constellation, &gd_cfg, i as u64, &score, &mut |_, _, b| {
                seen.push((b.transmit_power(), b.unit_modulus_deviation()))
            })
            .unwrap();
            for (p, m) in seen {
                inv.checked += 1;
                inv.worst_power = inv.worst_power.max((p - sys.power_budget).abs() / sys.power_budget);
                inv.worst_modulus = inv.worst_modulus.max(m);
            }
            states.push(run.state);
        }
        let gd = pooled(&states, &test, &sys, constellation, 7);

        let net = UnfoldNetwork::perturbed_descent(
            NetworkShape::of(&sys),
            constellation,
            15,
            Steps::from(&gd_cfg),
            gd_cfg.kernel_width(&sys),
            sys.power_budget,
            0.1,
            &mut seed::stream(1, 20),
        )
        .unwrap();
        let trained = train(&net, &sys, &train_set, &validation, &train_cfg, 1, &mut |_| {})
            .unwrap()
            .network;
        let unfold = unfold_states(&trained, &sys, &test, train_cfg.sample_size, 1).unwrap();
        for (bf, h) in unfold.iter().zip(&test) {
            let batch = sample_symbol_batch(constellation, &sys.streams_per_user, 16, 3).unwrap();
            for s in forward(&trained, &initial_state(&sys, h).unwrap(), h, &batch)
                .unwrap()
                .layer_states()
            {
                inv.check(&s, sys.power_budget);
            }
            inv.check(bf, sys.power_budget);
        }
        let un = pooled(&unfold, &test, &sys, constellation, 7);
        out.push(ReferencePoint {
            snr_db: snr,
            gd: gd.ser,
            unfold: un.ser,
        });
    }
    out
}

fn judge_points(points: &[ReferencePoint], targets: &[(f64, f64)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, &(_, target)) in points.iter().zip(targets) {
        let within = p.gd >= target / 2.0 && p.gd <= target * 2.0;
        let rel = if p.gd > 0.0 {
            (p.unfold - p.gd).abs() / p.gd
        } else if p.unfold == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        ok &= within && rel <= 0.15;
        parts.push(format!(
            "{} dB: gd {:.2e} (target {:.2e} x/2) unfold {:.2e} (rel {:.2})",
            p.snr_db, p.gd, target, p.unfold, rel
        ));
    }
    verdict(ok, parts.join("; "))
}

fn qpsk_reference(inv: &mut Invariants) -> Verdict {
    let targets = [(5.0, 4.11e-2), (15.0, 1.06e-2), (25.0, 1.09e-3)];
    let points = reference_points(Constellation::Qpsk, &targets, inv);
    judge_points(&points, &targets)
}

fn estimator_cross_validation() -> Verdict {
    let sys = SystemConfig::uniform(8, 4, 1, 4, 2, 2, 10.0);
    let h = sample_channel(&ClusteredChannelConfig::new(8, vec![4]), 3).unwrap();
    let bf = HybridBeamformers::channel_aligned(&sys, &h, &mut seed::stream(3, 1))
        .unwrap()
        .scale_power(sys.power_budget)
        .unwrap();
    let sigma = 0.5 * output_scale(&bf, &h);
    let an = analytical_ser(&bf, &h, Constellation::Qpsk, &[sigma], SerSampling::Exhaustive).unwrap();
    let exact = an.iter().map(|s| s.exact).sum::<f64>() / an.len() as f64;
    let mut quad = 0.0;
    for i in 0..2 {
        quad += error_quadrature(&bf, &h, sigma, i).1 / 2.0;
    }
    let mc = monte_carlo_ser(&bf, &h, Constellation::Qpsk, &[sigma], 1_000_000, 11).unwrap();
    let tol = 3.0 * mc.std_error;
    let ok = (mc.ser - exact).abs() < tol && (mc.ser - quad).abs() < tol && (exact - quad).abs() < tol;
    verdict(
        ok,
        format!(
            "K = 1, D = 2: monte carlo {:.5e}, analytical {exact:.5e}, quadrature {quad:.5e}, 3 s.e. = {tol:.1e}",
            mc.ser
        ),
    )
}

fn mid_system(users: usize, snr_db: f64) -> SystemConfig {
    SystemConfig::uniform(16, 4, users, 4, 2, 2, snr_db)
}

fn bound_tightness(inv: &mut Invariants) -> Verdict {
    let cfg = GdConfig {
        max_iters: 300,
        ..GdConfig::default()
    };
    let (mut count, mut worst) = (0, 0.0f64);
    for snr in [0.0, 5.0, 10.0] {
        let sys = mid_system(2, snr);
        for (i, h) in channels(&sys, 8, 4000).iter().enumerate() {
            let bf0 = initial_state(&sys, h).unwrap();
            let score = |_: &HybridBeamformers| Ok(0.0);
            let run = run_gd_with(&bf0, h, &sys, Constellation::Qpsk, &cfg, i as u64, &score, &mut |_, _, b| {
                inv.check(b, sys.power_budget)
            })
            .unwrap();
            let an = analytical_ser(&run.state, h, Constellation::Qpsk, &sys.noise_std_per_user, SerSampling::Exhaustive).unwrap();
            for s in an {
                if s.bound > 0.0 && s.bound < 0.02 {
                    count += 1;
                    worst = worst.max((s.bound - s.exact) / s.bound);
                }
            }
        }
    }
    verdict(
        count > 0 && worst < 0.01,
        format!("{count} converged streams with bound < 0.02: worst (bound - exact) / bound = {worst:.2e} (< 1e-2)"),
    )
}

fn qam(inv: &mut Invariants) -> Verdict {
    let phi = QAM16.phi();
    let mut worst: f64 = 0.0;
    let mut positive = true;
    for seed_value in 0..20 {
        let (_, h, bf) = small_instance(2, 500 + seed_value);
        let r = bf.phase_rotate_all(&h).unwrap();
        for k in 0..2 {
            let c = r.effective_gain(&h, 0, k);
            positive &= c.re > 0.0;
            worst = worst.max(c.im.abs() / c.norm());
        }
    }
    let targets = [(25.0, 9.8e-3)];
    let points = reference_points(QAM16, &targets, inv);
    let table = judge_points(&points, &targets);
    verdict(
        phi == 1.5 && positive && worst < 1e-12 && table.ok,
        format!(
            "phi = {phi}; rotated gains real positive: {positive}, |Im|/|c| <= {worst:.1e}; {}",
            table.detail
        ),
    )
}

fn param_count() -> Verdict {
    let grid = [
        (8, 4, 2, 4, 2, 1, 2),
        (8, 4, 2, 4, 2, 1, 15),
        (16, 4, 2, 4, 2, 2, 5),
        (64, 8, 2, 8, 4, 3, 15),
        (64, 8, 3, 8, 2, 2, 15),
        (128, 32, 8, 16, 4, 3, 15),
        (32, 6, 3, 4, 2, 2, 1),
        (16, 8, 4, 2, 2, 2, 3),
        (64, 16, 4, 8, 4, 4, 10),
        (128, 24, 6, 8, 5, 4, 7),
    ];
    let mut mismatched = Vec::new();
    for (nt, rt, k, nr, rr, d, l) in grid {
        let sys = SystemConfig::uniform(nt, rt, k, nr, rr, d, 10.0);
        let net = UnfoldNetwork::descent(NetworkShape::of(&sys), Constellation::Qpsk, l, STEPS, 1.0, 1.0).unwrap();
        let formula = formula_param_count(&net.shape, l);
        if formula != net.param_count() {
            mismatched.push(format!(
                "({nt},{rt},{k},{nr},{rr},{d},L={l}): formula {formula} vs allocated {}",
                net.param_count()
            ));
        }
    }
    let detail = if mismatched.is_empty() {
        "10 configurations match".to_string()
    } else {
        format!("{} of 10 differ, e.g. {}", mismatched.len(), mismatched[0])
    };
    verdict(mismatched.is_empty(), detail)
}

fn small_spec(name: &str, scenario: Scenario, dir: &std::path::Path) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        scenario,
        system: mid_system(2, 5.0),
        methods: vec![Method::Gd, Method::Unfold],
        snr_db: vec![5.0],
        layers: vec![15],
        train_channels: 40,
        validation_channels: 10,
        test_channels: 12,
        gd: GdConfig {
            max_iters: 200,
            ..GdConfig::default()
        },
        train: TrainConfig {
            max_iters: 10,
            ..TrainConfig::default()
        },
        monte_carlo: MonteCarloConfig {
            min_errors: 400,
            max_symbols: 2_000_000,
            chunk: 2048,
        },
        output_dir: dir.to_path_buf(),
        ..ExperimentSpec::default()
    }
}

fn csi_and_generalization() -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(|e| hybeam::Error::Io {
        path: "tempdir".into(),
        source: e,
    })?;
    let spec = ExperimentSpec {
        sigma_h: vec![0.0, 0.1, 0.2, 0.3],
        test_channels: 300,
        ..small_spec("csi", Scenario::ImperfectCsi, dir.path())
    };
    let csi = run_experiment(&spec, &mut |_| {})?;
    let mut monotone = true;
    let mut parts = Vec::new();
    for method in ["gd", "unfold"] {
        let rows: Vec<_> = csi.rows.iter().filter(|r| r.method == method).collect();
        for w in rows.windows(2) {
            let slack = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            monotone &= w[1].ser >= w[0].ser - slack;
        }
        parts.push(format!(
            "{method} {}",
            rows.iter().map(|r| format!("{:.2e}", r.ser)).collect::<Vec<_>>().join(" <= ")
        ));
    }

    let spec = ExperimentSpec {
        generalization_users: 1,
        snr_db: vec![0.0],
        test_channels: 200,
        ..small_spec("general", Scenario::Generalization, dir.path())
    };
    let gen = run_experiment(&spec, &mut |_| {})?;
    let find = |m: &str| gen.rows.iter().find(|r| r.method == m).map(|r| r.ser).unwrap_or(f64::NAN);
    let (small, padded) = (find("gd_small"), find("unfold_padded"));
    let ratio = if padded > 0.0 { 100.0 * small / padded } else { 100.0 };
    let loss = 100.0 - ratio;
    Ok(verdict(
        monotone && loss <= 5.0,
        format!(
            "sigma_h 0..0.3: {} (2 s.e. slack); zero-padded 1-of-2 users: gd {small:.2e}, unfold {padded:.2e}, ratio {ratio:.1}% (loss {loss:.1} <= 5 points)",
            parts.join(", ")
        ),
    ))
}

fn main() {
    let mut inv = Invariants::default();
    let mut results: Vec<(&str, Verdict)> = vec![
        ("gradient oracle", gradient_oracle()),
        ("backprop oracle", backprop_oracle()),
        ("descent specialization", descent_identity(&mut inv)),
        ("two-step layer identity", two_step_identity()),
    ];
    let table = qpsk_reference(&mut inv);
    results.push(("estimator cross-validation", estimator_cross_validation()));
    let tight = bound_tightness(&mut inv);
    let qam = qam(&mut inv);
    let params = param_count();
    let csi = csi_and_generalization().unwrap_or_else(|e| verdict(false, format!("error: {e}")));

    let structural = verdict(
        inv.worst_power < 1e-9 && inv.worst_modulus < 1e-12,
        format!(
            "{} states: worst relative power error {:.1e} (< 1e-9), unit-modulus deviation {:.1e} (< 1e-12)",
            inv.checked, inv.worst_power, inv.worst_modulus
        ),
    );
    results.insert(4, ("structural invariants", structural));
    results.insert(5, ("QPSK reference SER", table));
    results.push(("bound tightness", tight));
    results.push(("16-QAM", qam));
    results.push(("parameter count", params));
    results.push(("imperfect CSI and generalization", csi));

    let mut failed = 0;
    for (name, v) in &results {
        if !v.ok {
            failed += 1;
        }
        println!("{} {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
}
