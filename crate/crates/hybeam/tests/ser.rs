mod common;

use common::*;
use hybeam::eval::{analytical_ser, finite_diff_gradient, monte_carlo_ser, pack_state, unpack_state, SerEstimate, SerSampling};
use hybeam::seed;
use hybeam::transceiver::{Constellation, HybridBeamformers, SystemConfig};
use hybeam::C64;
use proptest::prelude::*;

fn q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[test]
fn noiseless_identity_chain_has_no_errors() {
    let (_, h, bf) = scalar_chain(1.0);
    for c in [Constellation::Qpsk, Constellation::Qam { order: 16 }] {
        let est = monte_carlo_ser(&bf, &h, c, &[1e-12], 20_000, 1).unwrap();
        assert_eq!(est.symbol_errors, 0);
    }
}

#[test]
fn qpsk_over_awgn_matches_closed_form() {
    let (_, h, bf) = scalar_chain(1.0);
    let sigma = 0.9;
    let p = q(1.0 / (sigma / 2f64.sqrt()));
    let expected = 2.0 * p - p * p;
    let est = monte_carlo_ser(&bf, &h, Constellation::Qpsk, &[sigma], 200_000, 7).unwrap();
    assert!((est.ser - expected).abs() < 3.0 * est.std_error, "{} vs {expected}", est.ser);
    let an = analytical_ser(&bf, &h, Constellation::Qpsk, &[sigma], SerSampling::Exhaustive).unwrap();
    assert!((an[0].exact - expected).abs() < 1e-14);
    assert!((an[0].bound - 2.0 * p).abs() < 1e-14);
}

#[test]
fn analytical_formula_examples() {
    // zero gain: both axes fail with probability one half
    let (_, h, bf) = scalar_chain(0.0);
    let an = analytical_ser(&bf, &h, Constellation::Qpsk, &[1.0], SerSampling::Exhaustive).unwrap();
    assert!((an[0].bound - 1.0).abs() < 1e-15);
    assert!((an[0].exact - 0.75).abs() < 1e-15);
    let (_, h, bf) = scalar_chain(1.0);
    let an = analytical_ser(&bf, &h, Constellation::Qpsk, &[1e-6], SerSampling::Exhaustive).unwrap();
    assert_eq!(an[0].bound, 0.0);
    assert_eq!(an[0].exact, 0.0);
}

#[test]
fn monte_carlo_analytical_and_quadrature_agree() {
    let sys = SystemConfig::uniform(8, 4, 1, 4, 2, 2, 10.0);
    let h = hybeam::channel::sample_channel(&hybeam::channel::ClusteredChannelConfig::new(8, vec![4]), 3).unwrap();
    let bf = HybridBeamformers::channel_aligned(&sys, &h, &mut seed::stream(3, 1))
        .unwrap()
        .scale_power(sys.power_budget)
        .unwrap();
    let sigma = 0.5 * output_scale(&bf, &h);
    let an = analytical_ser(&bf, &h, Constellation::Qpsk, &[sigma], SerSampling::Exhaustive).unwrap();
    let exact = an.iter().map(|s| s.exact).sum::<f64>() / 2.0;
    assert!(exact > 1e-3 && exact < 0.5, "{exact}");
    let mc = monte_carlo_ser(&bf, &h, Constellation::Qpsk, &[sigma], 200_000, 11).unwrap();
    assert!((mc.ser - exact).abs() < 3.0 * mc.std_error, "mc {} analytical {exact}", mc.ser);

    let mut quad = 0.0;
    for i in 0..2 {
        let (bound, ser) = error_quadrature(&bf, &h, sigma, i);
        assert!((bound - an[i].bound).abs() < 1e-8, "stream {i}: {bound} vs {}", an[i].bound);
        quad += ser / 2.0;
    }
    assert!((mc.ser - quad).abs() < 3.0 * mc.std_error, "mc {} quadrature {quad}", mc.ser);
}

#[test]
fn standard_error_shrinks_with_trials() {
    let (_, h, bf) = scalar_chain(1.0);
    let a = monte_carlo_ser(&bf, &h, Constellation::Qpsk, &[1.0], 50_000, 1).unwrap();
    let b = monte_carlo_ser(&bf, &h, Constellation::Qpsk, &[1.0], 200_000, 2).unwrap();
    let ratio = b.std_error / a.std_error;
    assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    assert_eq!(SerEstimate::from_counts(0, 0).ser, 0.0);
    assert!(monte_carlo_ser(&bf, &h, Constellation::Qpsk, &[1.0], 0, 1).is_err());
}

#[test]
fn finite_differences_of_a_quadratic() {
    let x = [0.3, -1.2, 2.5, 0.0];
    let g = finite_diff_gradient(&mut |v| v.iter().map(|a| a * a).sum(), &x, 1e-4).unwrap();
    for (gi, xi) in g.iter().zip(x) {
        assert!((gi - 2.0 * xi).abs() < 1e-9);
    }
}

#[test]
fn finite_differences_converge_at_second_order() {
    let f = |v: &[f64]| v[0].sin() * v[1].exp();
    let x = [0.7, 0.2];
    let truth = [0.7f64.cos() * 0.2f64.exp(), 0.7f64.sin() * 0.2f64.exp()];
    let err = |h: f64| {
        let g = finite_diff_gradient(&mut |v| f(v), &x, h).unwrap();
        g.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(1e-2), err(1e-3));
    assert!(fine < coarse / 50.0, "{coarse} {fine}");
}

#[test]
fn finite_differences_reject_bad_input() {
    assert!(finite_diff_gradient(&mut |v| v[0], &[1.0], 0.0).is_err());
    assert!(finite_diff_gradient(&mut |v| v[0], &[1.0], -1e-3).is_err());
    assert!(finite_diff_gradient(&mut |v| 1.0 / (v[0] - 1e-3), &[0.0], 1e-3).is_err());
}

#[test]
fn packed_state_round_trips() {
    let (_, _, bf) = small_instance(2, 5);
    let x = pack_state(&bf);
    // Re/Im of P (4x1) and W (2x1) per user, then 4x2 receive and 8x4 transmit phases
    assert_eq!(x.len(), 2 * (2 * 4 + 2 * 2) + 2 * 8 + 32);
    assert_eq!(unpack_state(&bf, &x), bf);
    let zero = unpack_state(&bf, &vec![0.0; x.len()]);
    assert_eq!(zero.digital_tx[0][(0, 0)], C64::new(0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bound_dominates_the_exact_ser(seed_value in 0u64..1000, scale in 0.05f64..2.0) {
        let (_, h, bf) = small_instance(2, seed_value);
        let sigma = scale * output_scale(&bf, &h);
        for c in [Constellation::Qpsk, Constellation::Qam { order: 16 }] {
            let an = analytical_ser(&bf, &h, c, &[sigma, sigma], SerSampling::Sampled { size: 16, seed: seed_value }).unwrap();
            for s in an {
                prop_assert!(s.exact <= s.bound + 1e-15);
                prop_assert!(s.exact >= 0.0 && s.exact <= 1.0);
            }
        }
    }
}
