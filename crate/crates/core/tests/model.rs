//! Encoder shape law, end-to-end gradients and the multi-task loss.

use emg2artic_core::corpus::Utterance;
use emg2artic_core::feature_targets::TARGET_DIMS;
use emg2artic_core::model::{
    eval_loss, forward_backward, total_loss, Batch, EncoderConfig, LossWeights, Mode, Model,
};
use emg2artic_nn::check::check_gradients;
use emg2artic_nn::{Graph, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn tiny() -> EncoderConfig {
    EncoderConfig {
        n_emg_channels: 2,
        hidden_dim: 8,
        n_transformer_layers: 1,
        n_heads: 2,
        phoneme_vocab: 5,
        ..EncoderConfig::default()
    }
}

fn ceil_law(t: usize) -> usize {
    t.div_ceil(2).div_ceil(2).div_ceil(2)
}

fn utterance(cfg: &EncoderConfig, t: usize, seed: u64) -> Utterance {
    let mut r = StdRng::seed_from_u64(seed);
    let c = cfg.n_emg_channels;
    let n = ceil_law(t);
    Utterance {
        id: format!("u{seed}"),
        n_channels: c,
        emg: (0..t * c).map(|_| r.random_range(-1.0..1.0)).collect(),
        emg_len: t,
        targets: (0..n * TARGET_DIMS).map(|_| r.random_range(-1.0..1.0)).collect(),
        n_frames: n,
        phonemes: (0..n).map(|_| r.random_range(0..cfg.phoneme_vocab)).collect(),
    }
}

#[test]
fn frame_counts_follow_ceil_law() {
    let cfg = EncoderConfig::default();
    assert_eq!(cfg.downsample_factor(), 8);
    assert_eq!(cfg.frames_for(800), Some(100));
    assert_eq!(cfg.frames_for(801), Some(101));
    assert_eq!(cfg.frames_for(689), Some(87));
    assert_eq!(cfg.frames_for(7), None);
    let mut r = StdRng::seed_from_u64(4);
    for _ in 0..200 {
        let t = r.random_range(8..=5000);
        assert_eq!(cfg.frames_for(t), Some(ceil_law(t)), "T={t}");
    }
}

#[test]
fn forward_shapes_match_frame_law() {
    let cfg = tiny();
    let model = Model::init(&cfg, 1).unwrap();
    for t in [8, 16, 33, 801] {
        let out = model.predict(&utterance(&cfg, t, t as u64)).unwrap();
        let n = ceil_law(t);
        assert_eq!(out.n_frames, n);
        assert_eq!(out.ema.len(), n * 12);
        assert_eq!(out.pitch.len(), n);
        assert_eq!(out.loudness.len(), n);
        assert_eq!(out.phoneme_logits.len(), n * cfg.phoneme_vocab);
    }
}

#[test]
fn encoder_rejects_bad_input() {
    let cfg = tiny();
    let model = Model::init(&cfg, 1).unwrap();
    let mut u = utterance(&cfg, 16, 0);
    u.n_channels = 1;
    u.emg.truncate(16);
    assert!(model.predict(&u).is_err());
    assert!(model.predict(&utterance(&cfg, 5, 0)).is_err());
    let bad = EncoderConfig {
        hidden_dim: 10,
        n_heads: 4,
        ..tiny()
    };
    assert!(Model::init(&bad, 0).is_err());
}

#[test]
fn widening_hidden_keeps_head_widths() {
    let base = tiny();
    let wide = EncoderConfig {
        hidden_dim: 16,
        ..tiny()
    };
    let u = utterance(&base, 40, 9);
    let a = Model::init(&base, 0).unwrap().predict(&u).unwrap();
    let b = Model::init(&wide, 0).unwrap().predict(&u).unwrap();
    assert_eq!(a.ema.len(), b.ema.len());
    assert_eq!(a.phoneme_logits.len(), b.phoneme_logits.len());
    let m = Model::init(&wide, 0).unwrap();
    assert_eq!(m.params.by_name("head.ema.w").unwrap().shape(), &[16, 12]);
}

#[test]
fn tiny_model_end_to_end_gradients() {
    let cfg = tiny();
    let model = Model::init(&cfg, 3).unwrap();
    let utts = [utterance(&cfg, 16, 1), utterance(&cfg, 13, 2)];
    let batch = Batch::collate(&[&utts[0], &utts[1]], &cfg).unwrap();
    let ids = model.trainable_ids();
    let inputs: Vec<Tensor> = ids.iter().map(|&id| model.params.get(id).clone()).collect();
    let weights = LossWeights::default();
    let report = check_gradients(&inputs, 1e-5, 1e-6, |g, vars| {
        let mut slots = vec![None; model.params.len()];
        for (id, v) in ids.iter().zip(vars) {
            slots[id.index()] = Some(*v);
        }
        let fwd = model
            .forward(g, &slots, &batch.emg, &batch.emg_lengths, Mode::Train)
            .expect("forward");
        Ok(total_loss(g, &fwd, &batch, &weights).expect("loss").0)
    })
    .unwrap();
    assert!(
        report.passes(1e-4),
        "max relative error {:.3e} at {:?}",
        report.max_rel_error,
        report.worst
    );
    assert!(report.checked > 500);
}

#[test]
fn forward_backward_is_deterministic_and_complete() {
    let cfg = tiny();
    let model = Model::init(&cfg, 5).unwrap();
    let u = utterance(&cfg, 40, 1);
    let batch = Batch::collate(&[&u], &cfg).unwrap();
    let w = LossWeights::default();
    let a = forward_backward(&model, &batch, &w).unwrap();
    let b = forward_backward(&model, &batch, &w).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grads, b.grads);
    assert_eq!(a.grads.len(), model.trainable_ids().len());
    assert_eq!(a.bn_stats.len(), 6);
}

#[test]
fn zero_weight_heads_get_zero_gradient() {
    let cfg = tiny();
    let model = Model::init(&cfg, 5).unwrap();
    let u = utterance(&cfg, 40, 1);
    let batch = Batch::collate(&[&u], &cfg).unwrap();
    let w = LossWeights {
        alpha_pitch: 0.0,
        alpha_loud: 1.0,
        alpha_phon: 0.0,
    };
    let step = forward_backward(&model, &batch, &w).unwrap();
    for (id, grad) in model.trainable_ids().into_iter().zip(&step.grads) {
        let name = &model.params.entry(id).name;
        if name.starts_with("head.pitch") || name.starts_with("head.phoneme") {
            assert!(grad.iter().all(|&g| g == 0.0), "{name}");
        }
        if name.starts_with("head.loudness") {
            assert!(grad.iter().any(|&g| g != 0.0), "{name}");
        }
    }
    assert_eq!(step.loss.total, step.loss.ema + step.loss.loudness);
}

#[test]
fn pitch_head_perturbation_is_isolated() {
    let cfg = tiny();
    let mut model = Model::init(&cfg, 8).unwrap();
    let u = utterance(&cfg, 64, 2);
    let before = model.predict(&u).unwrap();
    for name in ["head.pitch.w", "head.pitch.b"] {
        let id = model.params.id(name).unwrap();
        for v in model.params.get_mut(id).data_mut() {
            *v += 0.37;
        }
    }
    let after = model.predict(&u).unwrap();
    assert_eq!(before.ema, after.ema);
    assert_eq!(before.loudness, after.loudness);
    assert_eq!(before.phoneme_logits, after.phoneme_logits);
    assert_ne!(before.pitch, after.pitch);
}

#[test]
fn zero_hidden_gives_head_biases() {
    let cfg = tiny();
    let mut model = Model::init(&cfg, 8).unwrap();
    for name in ["final_ln.gamma", "final_ln.beta"] {
        let id = model.params.id(name).unwrap();
        model.params.get_mut(id).data_mut().fill(0.0);
    }
    for (name, value) in [("head.ema.b", 0.25), ("head.pitch.b", -1.5), ("head.loudness.b", 2.0)] {
        let id = model.params.id(name).unwrap();
        model.params.get_mut(id).data_mut().fill(value);
    }
    let out = model.predict(&utterance(&cfg, 24, 3)).unwrap();
    assert!(out.ema.iter().all(|&v| v == 0.25));
    assert!(out.pitch.iter().all(|&v| v == -1.5));
    assert!(out.loudness.iter().all(|&v| v == 2.0));
}

#[test]
fn unit_components_total_three() {
    let w = LossWeights::default();
    assert_eq!(w.combine(1.0, 1.0, 1.0, 1.0), 3.0);
    assert_eq!(w.combine(2.0, 3.0, 5.0, 7.0), 2.0 + 1.5 + 5.0 + 3.5);
    let (e, p, l, ph) = (0.7, 1.3, 0.2, 2.9);
    let no_pitch = LossWeights { alpha_pitch: 0.0, ..w };
    let no_loud = LossWeights { alpha_loud: 0.0, ..w };
    let no_phon = LossWeights { alpha_phon: 0.0, ..w };
    assert_eq!(no_pitch.combine(e, p, l, ph), e + l + 0.5 * ph);
    assert_eq!(no_loud.combine(e, p, l, ph), e + 0.5 * p + 0.5 * ph);
    assert_eq!(no_phon.combine(e, p, l, ph), e + 0.5 * p + l);
}

#[test]
fn graph_total_matches_weighted_terms() {
    let cfg = tiny();
    let model = Model::init(&cfg, 2).unwrap();
    let u = utterance(&cfg, 48, 4);
    let batch = Batch::collate(&[&u], &cfg).unwrap();
    for w in [
        LossWeights::default(),
        LossWeights {
            alpha_pitch: 0.0,
            alpha_loud: 1.0,
            alpha_phon: 0.0,
        },
        LossWeights {
            alpha_pitch: 0.5,
            alpha_loud: 0.0,
            alpha_phon: 0.5,
        },
    ] {
        let l = eval_loss(&model, &batch, &w).unwrap();
        assert_eq!(l.total, w.combine(l.ema, l.pitch, l.loudness, l.phoneme));
    }
}

#[test]
fn perfect_predictions_have_near_zero_loss() {
    let cfg = tiny();
    let model = Model::init(&cfg, 2).unwrap();
    let u = utterance(&cfg, 32, 4);
    let batch = Batch::collate(&[&u], &cfg).unwrap();
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g, false);
    let mut fwd = model.forward(&mut g, &vars, &batch.emg, &batch.emg_lengths, Mode::Eval).unwrap();
    let n = u.n_frames;
    let col = |lo: usize, hi: usize| -> Vec<f64> {
        u.targets.chunks_exact(TARGET_DIMS).flat_map(|r| r[lo..hi].to_vec()).collect()
    };
    fwd.ema = g.constant(Tensor::new(&[1, n, 12], col(0, 12)).unwrap());
    fwd.pitch = g.constant(Tensor::new(&[1, n, 1], col(12, 13)).unwrap());
    fwd.loudness = g.constant(Tensor::new(&[1, n, 1], col(13, 14)).unwrap());
    let v = cfg.phoneme_vocab;
    let logits = (0..n * v).map(|i| if u.phonemes[i / v] == i % v { 40.0 } else { 0.0 }).collect();
    fwd.phonemes = g.constant(Tensor::new(&[1, n, v], logits).unwrap());
    let (_, l) = total_loss(&mut g, &fwd, &batch, &LossWeights::default()).unwrap();
    assert!(l.total < 1e-6, "{l:?}");
}

/// Re-pads a batch to `t` samples per item.
fn pad_batch(batch: &Batch, cfg: &EncoderConfig, t: usize) -> Batch {
    let s = batch.emg.shape().to_vec();
    let (b, t0, c) = (s[0], s[1], s[2]);
    let tf0 = batch.targets.shape()[1];
    let tf = cfg.frames_for(t).unwrap();
    let mut emg = Tensor::zeros(&[b, t, c]);
    let mut targets = Tensor::zeros(&[b, tf, TARGET_DIMS]);
    let mut phonemes = vec![0; b * tf];
    for i in 0..b {
        emg.data_mut()[i * t * c..i * t * c + t0 * c].copy_from_slice(&batch.emg.data()[i * t0 * c..(i + 1) * t0 * c]);
        let n = tf0 * TARGET_DIMS;
        targets.data_mut()[i * tf * TARGET_DIMS..i * tf * TARGET_DIMS + n]
            .copy_from_slice(&batch.targets.data()[i * n..(i + 1) * n]);
        phonemes[i * tf..i * tf + tf0].copy_from_slice(&batch.phonemes[i * tf0..(i + 1) * tf0]);
    }
    Batch {
        emg,
        targets,
        phonemes,
        ..batch.clone()
    }
}

#[test]
fn padding_does_not_change_losses() {
    let cfg = EncoderConfig {
        n_emg_channels: 3,
        hidden_dim: 16,
        ..tiny()
    };
    let mut model = Model::init(&cfg, 11).unwrap();
    let utts = [utterance(&cfg, 77, 1), utterance(&cfg, 50, 2), utterance(&cfg, 61, 3)];
    let batch = Batch::collate(&[&utts[0], &utts[1], &utts[2]], &cfg).unwrap();
    let padded = pad_batch(&batch, &cfg, 130);
    let w = LossWeights::default();
    let a = forward_backward(&model, &batch, &w).unwrap();
    let b = forward_backward(&model, &padded, &w).unwrap();
    for (x, y) in [
        (a.loss.total, b.loss.total),
        (a.loss.ema, b.loss.ema),
        (a.loss.pitch, b.loss.pitch),
        (a.loss.loudness, b.loss.loudness),
        (a.loss.phoneme, b.loss.phoneme),
    ] {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    for (ga, gb) in a.grads.iter().zip(&b.grads) {
        for (x, y) in ga.iter().zip(gb) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
    model.update_running_stats(&a.bn_stats, 0.1).unwrap();
    let ea = eval_loss(&model, &batch, &w).unwrap();
    let eb = eval_loss(&model, &padded, &w).unwrap();
    assert!((ea.total - eb.total).abs() <= 1e-9);
}

#[test]
fn collate_crops_to_aligned_overlap() {
    let cfg = tiny();
    let mut u = utterance(&cfg, 80, 1);
    u.n_frames = 12;
    u.targets.truncate(12 * TARGET_DIMS);
    u.phonemes.truncate(12);
    let batch = Batch::collate(&[&u], &cfg).unwrap();
    assert_eq!(batch.loss_lengths, vec![10]);
    u.n_frames = 4;
    assert!(Batch::collate(&[&u], &cfg).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = tiny();
    let mut model = Model::init(&cfg, 21).unwrap();
    model.params.round_to_f32();
    let dir = tempfile::tempdir().unwrap();
    let w = LossWeights::default();
    model.save(&dir.path().join("a"), &w).unwrap();
    let (loaded, lw) = Model::load(&dir.path().join("a")).unwrap();
    assert_eq!(lw, w);
    let u = utterance(&cfg, 40, 3);
    assert_eq!(model.predict(&u).unwrap(), loaded.predict(&u).unwrap());
    loaded.save(&dir.path().join("b"), &lw).unwrap();
    for f in ["weights.bin", "manifest.json", "model_config.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let wide = EncoderConfig {
        hidden_dim: 16,
        ..tiny()
    };
    let other = Model::init(&wide, 0).unwrap();
    assert!(Model::from_params(cfg, other.params).is_err());
}
