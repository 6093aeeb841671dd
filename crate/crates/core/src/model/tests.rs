use super::*;
use crate::loss::{isolation_loss, isolation_loss_grad, BatchPartition, HypersphereSpec};
use crate::nn::{Adam, AdamConfig};
use crate::Label;

fn tiny(single_branch: bool, groups: usize) -> ModelConfig {
    ModelConfig {
        height: 8,
        width: 8,
        channels: 3,
        frames: 3,
        rgb_channels: 4,
        log_stem_channels: 2,
        log_channels: 4,
        fusion_channels: 4,
        groups,
        backbone: vec![6],
        hidden: 3,
        single_branch,
        dropout: 0.2,
        ..Default::default()
    }
}

fn frames<T: Real>(cfg: &ModelConfig, f: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[f, cfg.channels, cfg.height, cfg.width], |_| T::of(rng.gen_range(0.0..1.0)))
}

fn eval_embed<T: Real>(m: &Model<T>, x: &Tensor<T>) -> Tensor<T> {
    m.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0
}

#[test]
fn default_parameter_count_matches_closed_form() {
    let c = ModelConfig::default();
    let conv = |i: usize, o: usize, k: usize, g: usize| o * (i / g) * k * k + o;
    let lstm = |p: usize, d: usize| 4 * d * p + 4 * d + 4 * d * d;
    let mut expected = conv(3, 8, 3, 1) + conv(3, 8, 3, 1) + conv(8 * 3, 8, 1, 1) + conv(16, 16, 1, 2);
    expected += conv(16, 16, 3, 1) + conv(16, 32, 3, 1) + conv(32, 128, 3, 1);
    expected += 2 * lstm(128, 32);
    assert_eq!(expected, 85_960);
    let m = Model::<f32>::build(&c, 1).unwrap();
    assert_eq!(m.num_params(), expected);
    assert_eq!(m.embedding_dim(), 64);
}

#[test]
fn single_branch_has_no_frequency_parameters() {
    let m = Model::<f64>::build(&ModelConfig { single_branch: true, ..Default::default() }, 1).unwrap();
    assert!(m.params().iter().all(|(n, _)| !n.starts_with("log.")));
    assert_eq!(m.fusion.in_channels(), 8);
    let two = Model::<f64>::build(&ModelConfig::default(), 1).unwrap();
    assert_eq!(two.fusion.in_channels(), 16);
    assert!(two.params().iter().any(|(n, _)| n == "log.reduce.weight"));
}

#[test]
fn build_is_deterministic() {
    let a = Model::<f32>::build(&ModelConfig::default(), 42).unwrap();
    let b = Model::<f32>::build(&ModelConfig::default(), 42).unwrap();
    for ((_, p), (_, q)) in a.params().iter().zip(b.params()) {
        assert!(p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_ne!(a, Model::<f32>::build(&ModelConfig::default(), 43).unwrap());
}

#[test]
fn inconsistent_channel_arithmetic_is_rejected() {
    for bad in [
        ModelConfig { rgb_channels: 7, ..Default::default() },
        ModelConfig { fusion_channels: 15, ..Default::default() },
        ModelConfig { backbone: vec![8, 8, 8, 8, 8, 8], ..Default::default() },
        ModelConfig { backbone: vec![], ..Default::default() },
        ModelConfig { height: 30, ..Default::default() },
        ModelConfig { dropout: 1.0, ..Default::default() },
    ] {
        assert!(matches!(Model::<f32>::build(&bad, 0), Err(crate::Error::Config(_))), "{bad:?}");
    }
    assert!(serde_json::from_str::<ModelConfig>(r#"{"hidden": 4, "depth": 2}"#).is_err());
}

#[test]
fn learning_rate_table() {
    let mut m = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let map = m.assign_lr_scales();
    let expected: &[(&str, f64)] = &[
        ("rgb.weight", 1.0),
        ("rgb.bias", 1.0),
        ("log.stem.weight", 1.0),
        ("log.stem.bias", 1.0),
        ("log.reduce.weight", 1.0),
        ("log.reduce.bias", 1.0),
        ("fusion.weight", 1.0),
        ("fusion.bias", 1.0),
        ("block1.weight", 0.5),
        ("block1.bias", 0.5),
        ("block2.weight", 0.25),
        ("block2.bias", 0.25),
        ("block3.weight", 0.125),
        ("block3.bias", 0.125),
        ("head.fwd.input.weight", 1.0),
        ("head.fwd.input.bias", 1.0),
        ("head.fwd.recurrent.weight", 1.0),
        ("head.bwd.input.weight", 1.0),
        ("head.bwd.input.bias", 1.0),
        ("head.bwd.recurrent.weight", 1.0),
    ];
    assert_eq!(map.len(), expected.len());
    for (name, scale) in expected {
        assert_eq!(map[*name], *scale, "{name}");
    }
}

#[test]
fn embedding_dimension_for_every_configuration() {
    for single_branch in [false, true] {
        for groups in [1, 2] {
            for fusion in [RnnFusion::Cat, RnnFusion::Sum] {
                let cfg = ModelConfig { rnn_fusion: fusion, ..tiny(single_branch, groups) };
                let m = Model::<f64>::build(&cfg, 3).unwrap();
                let e = eval_embed(&m, &frames(&cfg, 3, 1));
                let d = if fusion == RnnFusion::Cat { 2 * cfg.hidden } else { cfg.hidden };
                assert_eq!(e.shape(), &[d]);
                assert_eq!(m.embedding_dim(), d);
            }
        }
    }
}

#[test]
fn single_frame_sequences_work() {
    let cfg = tiny(false, 2);
    let m = Model::<f64>::build(&cfg, 3).unwrap();
    assert_eq!(eval_embed(&m, &frames(&cfg, 1, 2)).len(), 2 * cfg.hidden);
}

#[test]
fn wrong_frame_shape_is_rejected() {
    let cfg = tiny(false, 2);
    let m = Model::<f64>::build(&cfg, 3).unwrap();
    let x = Tensor::<f64>::zeros(&[3, 3, 8, 10]);
    assert!(m.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn reversed_frames_swap_halves_with_tied_cells() {
    let cfg = tiny(false, 2);
    let mut m = Model::<f64>::build(&cfg, 5).unwrap();
    m.head.backward_cell = m.head.forward_cell.clone();
    let x = frames::<f64>(&cfg, 3, 4);
    let rev = Tensor::stack(&(0..3).rev().map(|t| x.slice_outer(t)).collect::<Vec<_>>()).unwrap();
    let (a, b) = (eval_embed(&m, &x), eval_embed(&m, &rev));
    let d = cfg.hidden;
    assert_eq!(&a.data()[..d], &b.data()[d..]);
    assert_eq!(&a.data()[d..], &b.data()[..d]);
    assert_ne!(a, b);
}

#[test]
fn eval_forward_is_deterministic_and_train_is_not() {
    let cfg = ModelConfig::default();
    let m = Model::<f32>::build(&cfg, 1).unwrap();
    let x = frames::<f32>(&cfg, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = m.forward(&x, Mode::Eval, &mut rng).unwrap().0;
    let b = m.forward(&x, Mode::Eval, &mut rng).unwrap().0;
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let t1 = m.forward(&x, Mode::Train, &mut rng).unwrap().0;
    let t2 = m.forward(&x, Mode::Train, &mut rng).unwrap().0;
    assert_ne!(t1, t2);
}

#[test]
fn single_branch_is_a_sub_network() {
    // With one fusion group, zeroing the fusion weights that read the
    // frequency branch reduces the two-branch model to the single-branch one.
    let two_cfg = tiny(false, 1);
    let one_cfg = tiny(true, 1);
    let mut two = Model::<f64>::build(&two_cfg, 9).unwrap();
    let mut one = Model::<f64>::build(&one_cfg, 9).unwrap();
    let (rgb, log, out) = (two_cfg.rgb_channels, two_cfg.log_channels, two_cfg.fusion_channels);
    for o in 0..out {
        for i in 0..rgb + log {
            let v = if i < rgb { 0.1 * (o as f64 + 1.0) - 0.05 * i as f64 } else { 0.0 };
            two.fusion.weight.value.data_mut()[o * (rgb + log) + i] = v;
            if i < rgb {
                one.fusion.weight.value.data_mut()[o * rgb + i] = v;
            }
        }
    }
    one.fusion.bias = two.fusion.bias.clone();
    assert_eq!(one.rgb, two.rgb);
    assert_eq!(one.blocks, two.blocks);
    assert_eq!(one.head, two.head);
    let x = frames::<f64>(&two_cfg, 3, 10);
    assert_eq!(eval_embed(&one, &x), eval_embed(&two, &x));
}

#[test]
fn frozen_branch_keeps_its_bits() {
    let cfg = tiny(false, 2);
    let mut m = Model::<f32>::build(&cfg, 2).unwrap();
    for (name, p) in m.params_mut() {
        if name.starts_with("rgb.") {
            p.lr_scale = 0.0;
        }
    }
    let before = m.rgb.clone();
    let x = frames::<f32>(&cfg, 3, 3);
    let (e, tape) = m.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    m.backward(&tape, &e.map(|v| v + 1.0));
    assert!(m.rgb.weight.grad.max_abs() > 0.0);
    let mut adam = Adam::new(AdamConfig::default());
    let mut params: Vec<&mut Param<f32>> = m.params_mut().into_iter().map(|(_, p)| p).collect();
    adam.step(&mut params, 1e-3).unwrap();
    assert_eq!(m.rgb.weight.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), before.weight.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(m.rgb.bias.value, before.bias.value);
    assert_ne!(m.fusion.weight.value, Model::<f32>::build(&cfg, 2).unwrap().fusion.weight.value);
}

/// Loss of a two-sequence batch (one per class) through the whole model,
/// with the ReLU pattern it passed through.
fn batch_loss(m: &Model<f64>, xs: &[Tensor<f64>], sphere: &HypersphereSpec) -> (f64, Vec<bool>) {
    let mut mask = Vec::new();
    let mut embs = Vec::new();
    for x in xs {
        let (e, tape) = m.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        mask.extend(tape.relu_mask());
        embs.push(e.into_data());
    }
    let part = BatchPartition::from_labels(&[Label::Natural, Label::Manipulated]).unwrap();
    (isolation_loss(&embs, &part, sphere).unwrap(), mask)
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let cfg = ModelConfig { dropout: 0.0, ..tiny(false, 2) };
    let mut m = Model::<f64>::build(&cfg, 11).unwrap();
    // Zero biases put ReLU inputs exactly on the kink wherever all inputs
    // are inactive; move them off it.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, p) in m.params_mut() {
        if name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
    }
    let xs = [frames::<f64>(&cfg, 3, 20), frames::<f64>(&cfg, 3, 21)];
    let embs: Vec<Vec<f64>> = xs.iter().map(|x| eval_embed(&m, x).into_data()).collect();
    let center: Vec<f64> = (0..embs[0].len()).map(|k| 0.5 * (embs[0][k] + embs[1][k]) + 0.01).collect();
    // Radii chosen so that both hinges are active.
    let sphere = HypersphereSpec::new(center, 1e-4, 10.0).unwrap();
    let part = BatchPartition::from_labels(&[Label::Natural, Label::Manipulated]).unwrap();
    let grads = isolation_loss_grad(&embs, &part, &sphere).unwrap();
    m.zero_grad();
    for (x, g) in xs.iter().zip(&grads) {
        let (_, tape) = m.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.backward(&tape, &Tensor::vector(g.clone()));
    }
    let analytic: Vec<(String, Tensor<f64>)> = m.params().into_iter().map(|(n, p)| (n, p.grad.clone())).collect();
    let eps = 1e-5;
    for (pi, (name, g)) in analytic.iter().enumerate() {
        let (mut worst, mut scale, mut checked) = (0.0f64, 0.0f64, 0usize);
        for k in (0..g.len()).step_by(1 + g.len() / 12) {
            let mut probe = m.clone();
            let orig = probe.params()[pi].1.value.data()[k];
            probe.params_mut()[pi].1.value.data_mut()[k] = orig + eps;
            let (up, mask_up) = batch_loss(&probe, &xs, &sphere);
            probe.params_mut()[pi].1.value.data_mut()[k] = orig - eps;
            let (down, mask_down) = batch_loss(&probe, &xs, &sphere);
            if mask_up != mask_down {
                continue;
            }
            let fd = (up - down) / (2.0 * eps);
            checked += 1;
            worst = worst.max((fd - g.data()[k]).abs());
            scale = scale.max(fd.abs()).max(g.data()[k].abs());
        }
        assert!(checked > 0, "{name}: every probe crossed a kink");
        assert!(worst <= 1e-4 * scale.max(1e-6), "{name}: abs err {worst}, scale {scale}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny(false, 2);
    let m = Model::<f32>::build(&cfg, 6).unwrap();
    let sphere = HypersphereSpec::new(vec![0.25; m.embedding_dim()], 0.1, 0.9).unwrap();
    let ck = Checkpoint { model: m, hypersphere: sphere, meta: serde_json::json!({"epoch": 3}) };
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &ck).unwrap();
    let back: Checkpoint<f32> = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.model, ck.model);
    assert_eq!(back.hypersphere, ck.hypersphere);
    assert_eq!(back.meta["epoch"], 3);
    let wide: Checkpoint<f64> = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(wide.model.params()[0].1.value, ck.model.params()[0].1.value.cast());

    let mut again = Vec::new();
    write_checkpoint(&mut again, &back).unwrap();
    assert_eq!(again, buf);

    assert!(read_checkpoint::<f32, _>(&mut &buf[..buf.len() - 3]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_checkpoint::<f32, _>(&mut bad.as_slice()).is_err());
    let wrong_dim = Checkpoint { hypersphere: HypersphereSpec::new(vec![0.0; 2], 0.1, 0.9).unwrap(), ..ck };
    assert!(write_checkpoint(&mut Vec::new(), &wrong_dim).is_err());
}
