//! Structural properties of the aggregation network: identity at
//! initialization, receptive-field bounds, mask bookkeeping, and order
//! sensitivity.

use gltr::batchnorm::BnMode;
use gltr::dtp::{dtp_forward, DtpLayer};
use gltr::linear::Linear;
use gltr::network::{gltr_embed, GltrNetwork, ModelConfig};
use gltr::rng::SplitMix64;
use gltr::tensor::RealMatrix;
use gltr::tsa::{tsa_forward, TsaLayer};

fn random_matrix(seed: u64, rows: usize, cols: usize) -> RealMatrix {
    let mut rng = SplitMix64::new(seed);
    RealMatrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

#[test]
fn fresh_attention_is_identity_for_twenty_random_inputs() {
    for seed in 0..20u64 {
        let mut rng = SplitMix64::fork(0xf00d, seed);
        let layer = TsaLayer::random(12, 2, true, 1e-5, 0.1, &mut rng).unwrap();
        let t_len = 3 + (seed as usize % 14);
        let fp = random_matrix(500 + seed, 12, t_len);
        for mode in [BnMode::Training, BnMode::Inference] {
            let (out, _) = tsa_forward(&fp, &layer, mode).unwrap();
            assert!(
                out.data()
                    .iter()
                    .zip(fp.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "seed {seed}: fresh layer output differs from input"
            );
        }
    }
}

#[test]
fn pyramid_influence_stays_inside_widest_branch() {
    // N = 3, w = 3: the widest branch has dilation 4, reach 4 frames.
    let d = 3;
    let t_len = 20;
    let mut rng = SplitMix64::new(0xbea7);
    let layer = DtpLayer::random(d, 3, 3, &mut rng).unwrap();
    assert_eq!(layer.max_reach(), 4);
    let x = random_matrix(77, d, t_len);
    let base = dtp_forward(&x, &layer).unwrap();
    for s in 0..t_len {
        let mut perturbed = x.clone();
        for c in 0..d {
            *perturbed.at_mut(c, s) += 0.5;
        }
        let moved = dtp_forward(&perturbed, &layer).unwrap();
        for t in 0..t_len {
            let changed = (0..base.rows()).any(|row| {
                base.at(row, t).to_bits() != moved.at(row, t).to_bits()
            });
            if t.abs_diff(s) > layer.max_reach() {
                assert!(!changed, "frame {s} leaked into column {t}");
            }
            if t == s {
                assert!(changed, "perturbing frame {s} left its own column unchanged");
            }
        }
    }
}

#[test]
fn mask_vector_tracks_column_sums() {
    for (seed, mask_norm) in [(1u64, true), (2, false), (3, true)] {
        let mut rng = SplitMix64::new(seed);
        let layer = TsaLayer::random(8, 2, mask_norm, 1e-5, 0.1, &mut rng).unwrap();
        let fp = random_matrix(900 + seed, 8, 11);
        let (_, mask) = tsa_forward(&fp, &layer, BnMode::Inference).unwrap();
        for t in 0..11 {
            let col_sum: f64 = (0..11).map(|s| mask.m_matrix.at(s, t)).sum();
            assert!((mask.m_vector[t] - col_sum).abs() < 1e-12);
        }
    }
}

#[test]
fn avg_pool_baseline_ignores_frame_order_but_full_model_does_not() {
    let base_cfg = ModelConfig {
        frame_dim: 6,
        num_branches: 2,
        alpha: 2,
        use_dtp: false,
        use_tsa: false,
        ..ModelConfig::default()
    };
    let baseline = GltrNetwork::new(&base_cfg, 4, 11).unwrap();
    let full_cfg = ModelConfig { use_dtp: true, use_tsa: true, ..base_cfg };
    let mut full = GltrNetwork::new(&full_cfg, 4, 11).unwrap();
    let mut rng = SplitMix64::new(0x0dd);
    if let Some(tsa) = &mut full.tsa {
        tsa.out_proj = Linear::random(tsa.out_proj.out_features(), tsa.out_proj.in_features(), &mut rng);
    }

    let clip = random_matrix(1234, 6, 10);
    // Fixed non-identity permutation.
    let perm = [3usize, 7, 1, 9, 0, 5, 2, 8, 6, 4];
    let permuted = RealMatrix::from_fn(6, 10, |c, t| clip.at(c, perm[t]));

    let (a, _) = gltr_embed(&baseline, &clip, BnMode::Inference).unwrap();
    let (b, _) = gltr_embed(&baseline, &permuted, BnMode::Inference).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "baseline was order sensitive");
    }

    let (a, _) = gltr_embed(&full, &clip, BnMode::Inference).unwrap();
    let (b, _) = gltr_embed(&full, &permuted, BnMode::Inference).unwrap();
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-6, "full model ignored frame order (diff {diff})");
}

#[test]
fn finite_inputs_give_finite_embeddings() {
    let cfg = ModelConfig {
        frame_dim: 6,
        num_branches: 3,
        alpha: 2,
        ..ModelConfig::default()
    };
    for seed in 0..10u64 {
        let mut net = GltrNetwork::new(&cfg, 5, seed).unwrap();
        let mut rng = SplitMix64::fork(0xf17e, seed);
        if let Some(tsa) = &mut net.tsa {
            tsa.out_proj =
                Linear::random(tsa.out_proj.out_features(), tsa.out_proj.in_features(), &mut rng);
        }
        // Mix benign and extreme-but-finite magnitudes.
        let scale = 10f64.powi((seed as i32 % 7) - 3);
        let clip = RealMatrix::from_fn(6, 12, |_, _| rng.uniform(-scale, scale));
        for mode in [BnMode::Training, BnMode::Inference] {
            let (emb, mask) = gltr_embed(&net, &clip, mode).unwrap();
            assert!(emb.iter().all(|v| v.is_finite()), "seed {seed} mode {mode:?}");
            let mask = mask.unwrap();
            assert!(mask.m_matrix.all_finite());
            assert!(mask.m_vector.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn dense_mask_makes_every_output_column_depend_on_every_frame() {
    let mut rng = SplitMix64::new(0xe93);
    let mut layer = TsaLayer::random(8, 2, true, 1e-5, 0.1, &mut rng).unwrap();
    layer.out_proj = Linear::random(8, 4, &mut rng);
    let fp = random_matrix(31337, 8, 9);
    let (base, _) = tsa_forward(&fp, &layer, BnMode::Inference).unwrap();
    for s in 0..9 {
        let mut perturbed = fp.clone();
        for c in 0..8 {
            *perturbed.at_mut(c, s) += 0.25;
        }
        let (moved, _) = tsa_forward(&perturbed, &layer, BnMode::Inference).unwrap();
        for t in 0..9 {
            let changed = (0..8).any(|c| base.at(c, t) != moved.at(c, t));
            assert!(changed, "frame {s} did not reach output column {t}");
        }
    }
}
