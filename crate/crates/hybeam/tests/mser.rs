mod common;

use std::f64::consts::PI;

use common::*;
use hybeam::eval::{analytical_ser, SerSampling};
use hybeam::mser::*;
use hybeam::seed;
use hybeam::transceiver::*;
use hybeam::{CMat, C64};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn tail_by_quadrature(x: f64) -> f64 {
    simpson(&mut |s| (-s * s).exp(), -20.0, x, 40_000)
}

#[test]
fn tail_integral_matches_quadrature() {
    assert!((tail_integral(0.0) - PI.sqrt() / 2.0).abs() < 1e-15);
    assert!((tail_integral(60.0) - PI.sqrt()).abs() < 1e-15);
    assert!((tail_integral(-1.0) - 0.139_402_792_640_331).abs() < 1e-14);
    for x in [-3.0, -1.0, -0.25, 0.5, 2.0] {
        assert!((tail_integral(x) - tail_by_quadrature(x)).abs() < 1e-12, "x = {x}");
    }
}

#[test]
fn kernel_and_exact_pdf_examples() {
    assert!((kernel_pdf(0.0, &[0.0], 1.0) - 0.398_942_280_4).abs() < 1e-10);
    let (_, h, bf) = scalar_chain(1.0);
    let desired = C64::new(1.0, -1.0);
    for x in [-1.0, 0.3, 1.0, 2.5] {
        let p = exact_pdf(x, &bf, &h, Constellation::Qpsk, 0, 0, desired, Axis::Real, ExactWidth::Fixed(0.4)).unwrap();
        let expected = (-(x - 1.0f64).powi(2) / (2.0 * 0.16)).exp() / ((2.0 * PI).sqrt() * 0.4);
        assert!((p - expected).abs() < 1e-14);
    }
    let (_, h, bf) = small_instance(1, 3);
    let total = simpson(
        &mut |x| {
            exact_pdf(
                x,
                &bf,
                &h,
                Constellation::Qpsk,
                0,
                0,
                desired,
                Axis::Imag,
                ExactWidth::Noise { sigma: 0.3 },
            )
            .unwrap()
        },
        -40.0,
        40.0,
        40_000,
    );
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn full_batch_kernel_equals_exact_pdf() {
    let sys = SystemConfig::uniform(8, 4, 1, 4, 2, 2, 10.0);
    let (_, h, _) = small_instance(1, 4);
    let bf = HybridBeamformers::random(&sys, &mut seed::stream(4, 1)).unwrap();
    let desired = C64::new(-1.0, 1.0);
    let batch = conditioned_batch(Constellation::Qpsk, &[2], 0, desired).unwrap();
    assert_eq!(batch.len(), 4);
    let gains = stream_gains(&bf, &h, 0, 0);
    let outs: Vec<f64> = (0..batch.len())
        .map(|j| gains.iter().zip(batch.vectors.column(j).iter()).map(|(a, b)| a * b).sum::<C64>().re)
        .collect();
    for x in [-2.0, -0.5, 0.0, 0.7, 1.9] {
        let k = kernel_pdf(x, &outs, 0.25);
        let e = exact_pdf(x, &bf, &h, Constellation::Qpsk, 0, 0, desired, Axis::Real, ExactWidth::Fixed(0.25)).unwrap();
        assert!((k - e).abs() < 1e-10);
    }
}

#[test]
fn exact_pdf_matches_simulated_histogram() {
    let sys = SystemConfig::uniform(8, 4, 1, 4, 2, 2, 10.0);
    let (_, h, _) = small_instance(1, 6);
    let bf = HybridBeamformers::random(&sys, &mut seed::stream(6, 1)).unwrap();
    let sigma = 0.4;
    let desired = C64::new(1.0, 1.0);
    let gains = stream_gains(&bf, &h, 0, 0);
    let filt: Vec<C64> = (bf.analog_rx(0).adjoint() * bf.digital_rx[0].column(0)).iter().cloned().collect();
    let std = filtered_noise_std(&bf, 0, 0, sigma);
    let points = Constellation::Qpsk.points();
    let mut rng = seed::stream(6, 2);
    let draws = 1_000_000;
    let centre = gains[0].re * desired.re + gains[0].im * -desired.im;
    let spread = gains[1].norm() * 2f64.sqrt() + 4.0 * std;
    let (lo, hi) = (centre - spread, centre + spread);
    let bins = 20;
    let mut counts = vec![0u64; bins];
    for _ in 0..draws {
        let other = points[rng.random_range(0..4)];
        let mut out = gains[0] * desired + gains[1] * other;
        for g in &filt {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            out += g.conj() * C64::new(re, im) * (sigma / 2f64.sqrt());
        }
        let b = ((out.re - lo) / (hi - lo) * bins as f64).floor();
        if b >= 0.0 && (b as usize) < bins {
            counts[b as usize] += 1;
        }
    }
    let width = (hi - lo) / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let a = lo + i as f64 * width;
        let p = simpson(
            &mut |x| {
                exact_pdf(
                    x,
                    &bf,
                    &h,
                    Constellation::Qpsk,
                    0,
                    0,
                    desired,
                    Axis::Real,
                    ExactWidth::Noise { sigma },
                )
                .unwrap()
            },
            a,
            a + width,
            200,
        );
        let expected = p * draws as f64;
        let se = (draws as f64 * p * (1.0 - p)).sqrt().max(1.0);
        assert!((c as f64 - expected).abs() < 3.0 * se, "bin {i}: {c} vs {expected:.1} (se {se:.1})");
    }
}

#[test]
fn ser_term_examples() {
    let (_, h, bf) = scalar_chain(1.0);
    let b = C64::new(1.0, 1.0);
    let batch = SymbolBatch::new(CMat::from_element(1, 1, b), vec![1]).unwrap();
    let closed = 0.5 * libm::erfc(1.0 / 2f64.sqrt());
    let quad = simpson(&mut |x| (-x * x / 2.0).exp() / (2.0 * PI).sqrt(), 1.0, 40.0, 40_000);
    assert!((closed - quad).abs() < 1e-12);
    let t = ser_terms_qpsk(&bf, &h, &batch, 0, 0, 1.0);
    assert!((t.real - closed).abs() < 1e-14 && (t.imag - closed).abs() < 1e-14);
    assert!((t.real - 0.1587).abs() < 1e-4);
    assert!(ser_terms_qpsk(&bf, &h, &batch, 0, 0, 1e-6).real < 1e-300);

    let q = Constellation::Qam { order: 16 };
    let t = ser_terms_qam(&bf, &h, &batch, 0, 0, 1.0, q).unwrap();
    assert!((t.real - 1.5 * closed).abs() < 1e-14);
    assert!((t.real - 0.2380).abs() < 1e-4);
    let (_, h, bf) = small_instance(1, 2);
    assert!(ser_terms_qam(&bf, &h, &batch, 0, 0, 1.0, q).is_err());
}

#[test]
fn loss_is_sum_of_stream_terms() {
    let (sys, h, bf) = small_instance(2, 8);
    let batch = sample_symbol_batch(Constellation::Qpsk, &sys.streams_per_user, 16, 8).unwrap();
    let rho = 0.2;
    let mut hand = 0.0;
    for k in (0..2).rev() {
        hand += ser_terms_qpsk(&bf, &h, &batch, 0, k, rho).bound;
    }
    let one = channel_loss(&bf, &h, &batch, Constellation::Qpsk, rho);
    assert!((one - hand).abs() < 1e-14);
    let mean = loss(
        std::slice::from_ref(&bf),
        std::slice::from_ref(&h),
        std::slice::from_ref(&batch),
        Constellation::Qpsk,
        rho,
    )
    .unwrap();
    assert_eq!(mean, one);
    let twice = loss(
        &[bf.clone(), bf.clone()],
        &[h.clone(), h.clone()],
        &[batch.clone(), batch.clone()],
        Constellation::Qpsk,
        rho,
    )
    .unwrap();
    assert!((twice - one).abs() < 1e-15);
    assert!(loss(&[], &[], &[], Constellation::Qpsk, rho).is_err());
    assert!(loss(&[bf], &[h.clone(), h], &[batch], Constellation::Qpsk, rho).is_err());
}

#[test]
fn analytical_terms_match_integrated_exact_pdf() {
    let sys = SystemConfig::uniform(8, 4, 1, 4, 2, 2, 10.0);
    let (_, h, _) = small_instance(1, 9);
    let bf = HybridBeamformers::random(&sys, &mut seed::stream(9, 1)).unwrap();
    let sigma = 0.5;
    let an = analytical_ser(&bf, &h, Constellation::Qpsk, &[sigma], SerSampling::Exhaustive).unwrap();
    let std = filtered_noise_std(&bf, 0, 0, sigma);
    let reach = stream_gains(&bf, &h, 0, 0).iter().map(|g| g.norm()).sum::<f64>() * 2f64.sqrt() + 12.0 * std;
    let mut brute = 0.0;
    for desired in Constellation::Qpsk.points() {
        for axis in [Axis::Real, Axis::Imag] {
            let level = axis.of(desired);
            let (a, b) = if level > 0.0 { (-reach, 0.0) } else { (0.0, reach) };
            brute += simpson(
                &mut |x| exact_pdf(x, &bf, &h, Constellation::Qpsk, 0, 0, desired, axis, ExactWidth::Noise { sigma }).unwrap(),
                a,
                b,
                40_000,
            );
        }
    }
    brute /= 4.0;
    assert!((brute - an[0].bound).abs() < 1e-8, "{brute} vs {}", an[0].bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_is_bounded_monotone_and_symmetric(x in -30.0f64..30.0, d in 0.0f64..5.0) {
        let t = tail_integral(x);
        prop_assert!((0.0..=PI.sqrt()).contains(&t));
        prop_assert!(tail_integral(x + d) >= t);
        prop_assert!((t + tail_integral(-x) - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kernel_pdf_integrates_to_one(outs in prop::collection::vec(-3.0f64..3.0, 1..12), rho in 0.05f64..2.0) {
        let total = simpson(&mut |x| kernel_pdf(x, &outs, rho), -3.0 - 40.0 * rho, 3.0 + 40.0 * rho, 60_000);
        prop_assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ser_terms_ignore_batch_order(seed_value in any::<u64>(), rot in 1usize..15) {
        let (sys, h, bf) = small_instance(2, seed_value % 1000);
        let batch = sample_symbol_batch(Constellation::Qpsk, &sys.streams_per_user, 16, seed_value).unwrap();
        let mut cols: Vec<usize> = (0..16).collect();
        cols.rotate_left(rot);
        cols.swap(0, 7);
        let perm = SymbolBatch::new(batch.vectors.select_columns(&cols), batch.streams_per_user.clone()).unwrap();
        for k in 0..2 {
            let (a, b) = (ser_terms_qpsk(&bf, &h, &batch, 0, k, 0.3), ser_terms_qpsk(&bf, &h, &perm, 0, k, 0.3));
            prop_assert!((a.bound - b.bound).abs() < 1e-14);
        }
    }

    #[test]
    fn qpsk_terms_fall_as_margins_grow(g in 0.05f64..3.0, dg in 0.01f64..1.0, rho in 0.1f64..2.0) {
        let batch = exhaustive_batch(Constellation::Qpsk, &[1]).unwrap();
        let (_, h1, bf) = scalar_chain(g);
        let (_, h2, _) = scalar_chain(g + dg);
        let a = ser_terms_qpsk(&bf, &h1, &batch, 0, 0, rho);
        let b = ser_terms_qpsk(&bf, &h2, &batch, 0, 0, rho);
        prop_assert!(b.real < a.real && b.imag < a.imag);
    }
}
