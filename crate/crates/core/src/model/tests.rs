use super::*;
use crate::dataset::Channel;
use crate::normalize::NormMethod;

fn small_config() -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        output_dim: 3,
        hidden_dim: 8,
        num_layers: 2,
        dropout_rate: 0.0,
        in_len: 5,
        out_len: 3,
    }
}

fn random_input(config: &ModelConfig, rng: &mut Rng) -> Vec<Vec3> {
    (0..config.in_len)
        .map(|_| {
            [
                rng.uniform(-1.0, 1.0).unwrap(),
                rng.uniform(-1.0, 1.0).unwrap(),
                rng.uniform(-1.0, 1.0).unwrap(),
            ]
        })
        .collect()
}

#[test]
fn cell_hand_computed_one_dimensional() {
    // All six weights 0.5, x = 1, h_prev = 0:
    //   gate_reset = sigmoid(0.5), r = tanh(0.5), gate_update = sigmoid(0.5),
    //   u = 0, h = tanh(0.5) * (1 - sigmoid(0.5)).
    let mut w = GruLayerWeights::zeros(1, 1);
    for s in w.slices_mut() {
        s[0] = 0.5;
    }
    let h = gru_cell_forward(&[1.0], &[0.0], &w).unwrap();
    let expected = 0.5_f64.tanh() * (1.0 - 1.0 / (1.0 + (-0.5_f64).exp()));
    assert!((h[0] - expected).abs() <= 1e-15);
    assert!((h[0] - 0.17446802061504182).abs() <= 1e-12);
}

#[test]
fn cell_zero_weights_zero_hidden() {
    let w = GruLayerWeights::zeros(3, 4);
    let h = gru_cell_forward(&[0.7, -2.0, 5.0], &[0.0; 4], &w).unwrap();
    assert_eq!(h, vec![0.0; 4]);
}

#[test]
fn cell_output_shape() {
    let w = GruLayerWeights::zeros(3, 64);
    let h = gru_cell_forward(&[1.0, 2.0, 3.0], &[0.0; 64], &w).unwrap();
    assert_eq!(h.len(), 64);
}

#[test]
fn cell_rejects_dimension_mismatch() {
    let w = GruLayerWeights::zeros(3, 4);
    assert!(matches!(
        gru_cell_forward(&[1.0, 2.0], &[0.0; 4], &w),
        Err(ModelError::DimensionMismatch(_))
    ));
    assert!(matches!(
        gru_cell_forward(&[1.0, 2.0, 3.0], &[0.0; 3], &w),
        Err(ModelError::DimensionMismatch(_))
    ));
}

#[test]
fn update_gate_saturation_preserves_hidden() {
    // Large positive update-gate weights drive gate_update to 1, so the
    // new hidden collapses onto the previous hidden.
    let hidden = 6;
    let mut w = GruLayerWeights::zeros(3, hidden);
    let mut rng = Rng::new(51);
    for s in [
        w.reset_input.data_mut(),
        w.reset_hidden.data_mut(),
        w.cand_input.data_mut(),
        w.cand_hidden.data_mut(),
    ] {
        for v in s {
            *v = rng.uniform(-1.0, 1.0).unwrap();
        }
    }
    for s in [w.update_input.data_mut(), w.update_hidden.data_mut()] {
        for v in s {
            *v = 50.0;
        }
    }
    let x = [0.5, 0.25, 0.75];
    let h_prev: Vec<f64> = (0..hidden).map(|i| 0.1 + 0.05 * i as f64).collect();
    let h = gru_cell_forward(&x, &h_prev, &w).unwrap();
    for (a, b) in h.iter().zip(&h_prev) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn gate_ranges_over_random_forwards() {
    let config = small_config();
    let mut rng = Rng::new(7);
    for seed in 0..20 {
        let params = init_params(&config, seed).unwrap();
        let input = random_input(&config, &mut rng);
        let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
        for cell in tape.encoder.iter().chain(tape.decoder.iter()).flatten() {
            for g in cell.gate_reset.iter().chain(cell.gate_update.iter()) {
                assert!(*g > 0.0 && *g < 1.0);
            }
            for r in &cell.cand {
                assert!(*r > -1.0 && *r < 1.0);
            }
        }
    }
}

#[test]
fn forward_eval_is_bitwise_deterministic() {
    let config = small_config();
    let params = init_params(&config, 3).unwrap();
    let input = random_input(&config, &mut Rng::new(4));
    let (a, _) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    let (b, _) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(pa.map(f64::to_bits), pb.map(f64::to_bits));
    }
}

#[test]
fn forward_zero_params_repeats_bias() {
    let config = small_config();
    let mut params = ModelParams::zeros(&config);
    params.head_bias = vec![0.25, -1.5, 3.0];
    let input = random_input(&config, &mut Rng::new(10));
    let (out, _) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    assert_eq!(out.len(), config.out_len);
    for p in out {
        assert_eq!(p, [0.25, -1.5, 3.0]);
    }
}

#[test]
fn dropout_rate_zero_train_matches_eval() {
    let config = small_config();
    let params = init_params(&config, 5).unwrap();
    let input = random_input(&config, &mut Rng::new(6));
    let mut rng = Rng::new(99);
    let (train_out, tape) =
        model_forward(&input, &params, &config, ForwardMode::Train(&mut rng)).unwrap();
    let (eval_out, _) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    assert!(tape.dropout.is_none());
    for (a, b) in train_out.iter().zip(&eval_out) {
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }
    // With rate 0 the dropout rng is never consulted.
    assert_eq!(rng.next_u64(), Rng::new(99).next_u64());
}

#[test]
fn dropout_masks_scale_kept_units() {
    let config = ModelConfig {
        dropout_rate: 0.5,
        ..small_config()
    };
    let params = init_params(&config, 5).unwrap();
    let input = random_input(&config, &mut Rng::new(6));
    let mut rng = Rng::new(99);
    let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Train(&mut rng)).unwrap();
    let masks = tape.dropout.expect("train mode records masks");
    assert_eq!(masks.len(), config.num_layers - 1);
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for per_t in &masks {
        assert_eq!(per_t.len(), config.in_len);
        for mask in per_t {
            for &m in mask {
                if m == 0.0 {
                    dropped += 1;
                } else {
                    assert_eq!(m, 2.0); // 1 / (1 - 0.5)
                    kept += 1;
                }
            }
        }
    }
    assert!(kept > 0 && dropped > 0);
}

#[test]
fn backward_zero_d_output_gives_zero_grads() {
    let config = small_config();
    let params = init_params(&config, 8).unwrap();
    let input = random_input(&config, &mut Rng::new(9));
    let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    let grads =
        model_backward(&params, &config, &tape, &vec![[0.0; 3]; config.out_len]).unwrap();
    for slice in grads.param_slices() {
        assert!(slice.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn backward_bias_gradient_is_column_sum() {
    // With all-zero parameters the autoregressive path carries nothing, so
    // the head-bias gradient is exactly the column sum of d_output.
    let config = small_config();
    let params = ModelParams::zeros(&config);
    let input = random_input(&config, &mut Rng::new(11));
    let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    let d_output = vec![[1.0, -2.0, 0.5], [0.25, 4.0, -1.0], [3.0, 0.0, 2.0]];
    let grads = model_backward(&params, &config, &tape, &d_output).unwrap();
    let mut expect = [0.0; 3];
    for row in &d_output {
        for k in 0..3 {
            expect[k] += row[k];
        }
    }
    for k in 0..3 {
        assert!((grads.head_bias[k] - expect[k]).abs() <= 1e-15);
    }
}

#[test]
fn backward_rejects_stale_tape() {
    let config = small_config();
    let params = init_params(&config, 1).unwrap();
    let input = random_input(&config, &mut Rng::new(2));
    let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Eval).unwrap();
    let other = ModelConfig {
        out_len: 4,
        ..config
    };
    let other_params = init_params(&other, 1).unwrap();
    assert!(matches!(
        model_backward(&other_params, &other, &tape, &[[0.0; 3]; 4]),
        Err(ModelError::StaleTape(_))
    ));
}

/// Scalar loss L = sum_k c_k . y_k with fixed coefficients; its output
/// gradient is just c, which makes it a clean finite-difference target.
fn linear_loss(outputs: &[Vec3], coeffs: &[Vec3]) -> f64 {
    outputs
        .iter()
        .zip(coeffs)
        .map(|(y, c)| y[0] * c[0] + y[1] * c[1] + y[2] * c[2])
        .sum()
}

fn finite_difference_check(config: &ModelConfig, seed: u64, dropout_seed: Option<u64>) -> f64 {
    let mut data_rng = Rng::new(seed ^ 0x5eed);
    let params = init_params(config, seed).unwrap();
    let input = random_input(config, &mut data_rng);
    // Small coefficients keep the loss quantization noise of the central
    // difference below the 1e-8 absolute gradient floor; relative accuracy
    // for well-excited parameters is scale-invariant.
    let coeffs: Vec<Vec3> = (0..config.out_len)
        .map(|_| {
            [
                data_rng.uniform(-0.01, 0.01).unwrap(),
                data_rng.uniform(-0.01, 0.01).unwrap(),
                data_rng.uniform(-0.01, 0.01).unwrap(),
            ]
        })
        .collect();

    // Re-seeding the dropout rng per evaluation replays identical masks,
    // so the finite difference sees the same subnetwork as the analytic
    // backward pass.
    let forward = |p: &ModelParams| -> (Vec<Vec3>, TapeCache) {
        match dropout_seed {
            Some(s) => {
                let mut rng = Rng::new(s);
                model_forward(&input, p, config, ForwardMode::Train(&mut rng)).unwrap()
            }
            None => model_forward(&input, p, config, ForwardMode::Eval).unwrap(),
        }
    };

    let (_, tape) = forward(&params);
    let grads = model_backward(&params, config, &tape, &coeffs).unwrap();

    let eps = 1e-5;
    let mut max_rel = 0.0_f64;
    let n_slices = params.param_slices().len();
    for si in 0..n_slices {
        let slice_len = params.param_slices()[si].len();
        for i in 0..slice_len {
            let mut plus = params.clone();
            plus.param_slices_mut()[si][i] += eps;
            let mut minus = params.clone();
            minus.param_slices_mut()[si][i] -= eps;
            let lp = linear_loss(&forward(&plus).0, &coeffs);
            let lm = linear_loss(&forward(&minus).0, &coeffs);
            let fd = (lp - lm) / (2.0 * eps);
            let analytic = grads.param_slices()[si][i];
            let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[test]
fn gradients_match_finite_differences() {
    let config = small_config();
    for seed in 0..3 {
        let max_rel = finite_difference_check(&config, seed, None);
        assert!(max_rel < 1e-4, "seed {seed}: max relative error {max_rel}");
    }
}

#[test]
fn gradients_match_finite_differences_through_dropout() {
    let config = ModelConfig {
        dropout_rate: 0.4,
        ..small_config()
    };
    for seed in 0..2 {
        let max_rel = finite_difference_check(&config, seed, Some(1234 + seed));
        assert!(max_rel < 1e-4, "seed {seed}: max relative error {max_rel}");
    }
}

#[test]
fn init_params_determinism_and_bounds() {
    let config = ModelConfig {
        hidden_dim: 64,
        ..ModelConfig::default()
    };
    let a = init_params(&config, 42).unwrap();
    let b = init_params(&config, 42).unwrap();
    assert_eq!(a, b);
    let c = init_params(&config, 43).unwrap();
    assert_ne!(a, c);
    for slice in a.param_slices() {
        for v in slice {
            assert!(v.abs() < 0.125);
        }
    }
}

#[test]
fn checkpoint_round_trip_bitwise() {
    let config = ModelConfig {
        hidden_dim: 12,
        num_layers: 3,
        dropout_rate: 0.5,
        ..ModelConfig::default()
    };
    let params = init_params(&config, 77).unwrap();
    let stats_ref = NormStatsRef {
        channel: Channel::Velocity,
        method: NormMethod::MaxNorm,
        fingerprint: 0xDEAD_BEEF_1234_5678,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&params, &config, &stats_ref, &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt.config, config);
    assert_eq!(ckpt.stats_ref, stats_ref);
    for (a, b) in ckpt.params.param_slices().iter().zip(params.param_slices()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn checkpoint_detects_flipped_byte() {
    let config = small_config();
    let params = init_params(&config, 5).unwrap();
    let stats_ref = NormStatsRef {
        channel: Channel::Position,
        method: NormMethod::Whitening,
        fingerprint: 1,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&params, &config, &stats_ref, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::CorruptCheckpoint(_))
    ));
}

#[test]
fn checkpoint_rejects_future_version() {
    let config = small_config();
    let params = init_params(&config, 5).unwrap();
    let stats_ref = NormStatsRef {
        channel: Channel::Position,
        method: NormMethod::MaxNorm,
        fingerprint: 1,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&params, &config, &stats_ref, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 9; // version field
    std::fs::write(&path, &bytes).unwrap();
    // Checksum no longer matches either; both failures are acceptable, but
    // the version check runs first.
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::VersionMismatch { got: 9, .. })
    ));
}
