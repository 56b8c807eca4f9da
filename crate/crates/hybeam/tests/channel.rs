use hybeam::channel::*;
use proptest::prelude::*;

fn small_config() -> ClusteredChannelConfig {
    ClusteredChannelConfig::new(8, vec![4, 4])
}

#[test]
fn clustered_second_moment_matches_array_gain() {
    let cfg = small_config();
    let n = 10_000;
    let data = generate_dataset(&ChannelSource::Clustered(cfg.clone()), n, 3).unwrap();
    for k in 0..2 {
        let mean: f64 = data.iter().map(|h| h.matrices[k].norm_squared()).sum::<f64>() / n as f64;
        let expected = (cfg.n_tx * cfg.n_rx_per_user[k]) as f64;
        assert!((mean / expected - 1.0).abs() < 0.05, "user {k}: {mean} vs {expected}");
    }
}

#[test]
fn gaussian_entries_have_unit_variance() {
    let data = generate_dataset(
        &ChannelSource::Gaussian {
            n_tx: 8,
            n_rx_per_user: vec![4],
        },
        2000,
        5,
    )
    .unwrap();
    let mean: f64 = data.iter().map(|h| h.matrices[0].norm_squared()).sum::<f64>() / (2000.0 * 32.0);
    assert!((mean - 1.0).abs() < 0.03);
    assert!(data.iter().all(|h| h.model == ChannelModel::Gaussian));
}

#[test]
fn csi_error_has_requested_variance() {
    let h = sample_channel(&small_config(), 1).unwrap();
    let sigma_h = 0.3;
    let draws = 10_000;
    let mut acc = 0.0;
    for s in 0..draws {
        let e = apply_csi_error(&h, CsiErrorConfig { sigma_h }, s).unwrap();
        acc += (&e.matrices[0] - &h.matrices[0]).norm_squared() / 32.0;
    }
    let var = acc / draws as f64;
    assert!((var / (sigma_h * sigma_h) - 1.0).abs() < 0.05, "{var}");
    let a = apply_csi_error(&h, CsiErrorConfig { sigma_h: 0.1 }, 9).unwrap();
    let b = apply_csi_error(&h, CsiErrorConfig { sigma_h: 0.1 }, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dataset_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    let data = generate_dataset(&ChannelSource::Clustered(small_config()), 500, 7).unwrap();
    save_dataset(&path, &data).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.len(), 500);
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.matrices, b.matrices);
    }
    check_dimensions(&back, 8, &[4, 4]).unwrap();
    assert!(check_dimensions(&back, 8, &[4]).is_err());

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], DATASET_MAGIC);
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    let err = load_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("truncated"), "{err}");
    std::fs::write(&path, &bytes[..20]).unwrap();
    assert!(load_dataset(&path).is_err());
    let mut bad = bytes.clone();
    bad[3] ^= 0xff;
    std::fs::write(&path, &bad).unwrap();
    assert!(load_dataset(&path).is_err());
    let mut long = bytes;
    long.extend([0u8; 16]);
    std::fs::write(&path, &long).unwrap();
    assert!(load_dataset(&path).is_err());
    assert!(load_dataset(&dir.path().join("missing.bin")).is_err());
    assert!(save_dataset(&path, &[]).is_err());
}

#[test]
fn generation_is_independent_of_thread_count() {
    let src = ChannelSource::Clustered(small_config());
    let a = generate_dataset(&src, 16, 99).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| generate_dataset(&src, 16, 99).unwrap());
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn steering_vectors_are_unit_norm(angle in -10.0f64..10.0, n in 1usize..130) {
        let v = steering_vector(angle, n).unwrap();
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channels_are_pure_functions_of_seed(seed in any::<u64>()) {
        let cfg = small_config();
        prop_assert_eq!(sample_channel(&cfg, seed).unwrap(), sample_channel(&cfg, seed).unwrap());
    }

    #[test]
    fn zero_csi_error_is_identity(seed in any::<u64>()) {
        let h = sample_channel(&small_config(), seed).unwrap();
        prop_assert_eq!(apply_csi_error(&h, CsiErrorConfig { sigma_h: 0.0 }, seed).unwrap().matrices, h.matrices);
    }
}
