mod common;

use common::*;
use denomamba::network::mirrored_widths;
use denomamba::{Ablation, DenoMambaModel, Error, ModelConfig, Tape, Tensor};

fn small(stages: usize, width: usize) -> ModelConfig {
    let mut c = ModelConfig::scaled(stages, width, 1, 2);
    c.seed = 5;
    c
}

fn image(h: usize, w: usize, seed: u64) -> Tensor {
    random(&[1, 1, h, w], seed).map(|v| 0.5 + 0.4 * v)
}

fn perturbed(cfg: &ModelConfig, seed: u64) -> DenoMambaModel {
    let mut m = DenoMambaModel::build(cfg).unwrap();
    perturb(&mut m.store, seed, 0.05);
    m
}

#[test]
fn desk_builds_and_forwards() {
    let m = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    let y = m.forward(&image(32, 32, 1)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 32, 32]);
    assert!(y.is_finite());
}

#[test]
fn forward_preserves_extents_and_width_schedule() {
    for stages in 1..=4 {
        let cfg = small(stages, 4);
        let m = DenoMambaModel::build(&cfg).unwrap();
        for (h, w) in [(32, 32), (64, 64), (16, 40)] {
            let (y, trace) = m.forward_traced(&image(h, w, 2)).unwrap();
            assert_eq!(y.shape(), &[1, 1, h, w]);
            assert_eq!(trace, cfg.shape_plan(h, w).unwrap(), "K={stages} {h}x{w}");
        }
    }
}

#[test]
fn single_stage_has_no_resampling() {
    let cfg = small(1, 4);
    let m = DenoMambaModel::build(&cfg).unwrap();
    assert!(m.store.iter().all(|p| !p.name().contains(".down") && !p.name().contains(".up")));
    let y = m.forward(&image(7, 5, 3)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 7, 5]);
}

#[test]
fn encoder_bottleneck_and_skips() {
    let cfg = small(3, 8);
    let m = perturbed(&cfg, 4);
    let tape = Tape::inference();
    let x = tape.constant(image(32, 32, 5));
    let e = m.embed(&tape, x).unwrap();
    let (bottleneck, skips) = m.encoder_forward(&tape, e).unwrap();
    assert_eq!(tape.shape(bottleneck), vec![1, 32, 8, 8]);
    assert_eq!(skips.len(), 3);
    assert_eq!(tape.shape(skips[0]), vec![1, 8, 32, 32]);
    assert_eq!(tape.shape(skips[1]), vec![1, 8, 32, 32]);
    assert_eq!(tape.shape(skips[2]), vec![1, 16, 16, 16]);
    assert_eq!(*tape.value(skips[0]), *tape.value(e));
}

#[test]
fn paper_preset_shapes() {
    let cfg = ModelConfig::paper();
    assert_eq!(cfg.enc_widths, vec![48, 96, 192, 384]);
    assert_eq!(cfg.dec_widths, vec![192, 96, 48, 48]);
    assert_eq!(cfg.enc_blocks, vec![4, 6, 6, 8]);
    assert_eq!(cfg.dec_blocks, vec![6, 6, 4, 2]);
    assert_eq!((cfg.state_size, cfg.conv_width, cfg.expansion), (16, 4, 2));
    let plan = cfg.shape_plan(256, 256).unwrap();
    let find = |l: &str| plan.iter().find(|s| s.label == l).unwrap().clone();
    let enc1 = find("enc1");
    assert_eq!((enc1.channels, enc1.height), (48, 256));
    let down = find("enc1.down");
    assert_eq!((down.channels, down.height), (96, 128));
    let up = find("dec4.up");
    assert_eq!((up.channels, up.height), (192, 64));
    let enc3 = find("enc3");
    assert_eq!((enc3.channels, enc3.height), (192, 64));
    assert_eq!(find("dec1").channels, 48);
}

#[test]
fn param_counts_match_hand_tally() {
    let mut configs = vec![ModelConfig::paper(), ModelConfig::desk(), small(1, 4), small(4, 6)];
    for a in Ablation::ALL {
        configs.push(ModelConfig::desk().with_ablation(a));
    }
    let mut odd = ModelConfig::scaled(3, 5, 2, 3);
    odd.enc_blocks = vec![1, 2, 3];
    odd.dec_blocks = vec![3, 1, 2];
    odd.conv_width = 4;
    odd.channel_bidirectional = true;
    configs.push(odd);
    for cfg in &configs {
        assert_eq!(DenoMambaModel::count_params(cfg).unwrap(), model_tally(cfg), "{cfg:?}");
    }
    for cfg in &configs[1..] {
        assert_eq!(DenoMambaModel::build(cfg).unwrap().param_count(), model_tally(cfg));
    }
}

#[test]
fn single_conv_tally() {
    // 3×3 conv 1→1 with bias.
    let mut b = denomamba::numerics::ParamBuilder::new(0);
    denomamba::blocks::layers::Conv::same(&mut b, "c", 1, 1, 3);
    assert_eq!(b.into_store().scalar_count(), 10);
}

#[test]
fn ablations_are_strictly_smaller() {
    let full = DenoMambaModel::count_params(&ModelConfig::desk()).unwrap();
    for a in Ablation::ALL {
        assert!(DenoMambaModel::count_params(&ModelConfig::desk().with_ablation(a)).unwrap() < full, "{a}");
    }
}

#[test]
fn capacity_is_monotone() {
    let count = |c: &ModelConfig| DenoMambaModel::count_params(c).unwrap();
    for stages in 1..4 {
        assert!(count(&small(stages + 1, 4)) > count(&small(stages, 4)));
    }
    for width in [2, 4, 8] {
        assert!(count(&small(3, width + 1)) > count(&small(3, width)));
    }
    for blocks in 1..3 {
        assert!(count(&ModelConfig::scaled(3, 4, blocks + 1, 2)) > count(&ModelConfig::scaled(3, 4, blocks, 2)));
    }
    let base = ModelConfig::desk();
    for k in 0..3 {
        let mut e = base.clone();
        e.enc_blocks[k] += 1;
        assert!(count(&e) > count(&base));
        let mut d = base.clone();
        d.dec_blocks[k] += 1;
        assert!(count(&d) > count(&base));
    }
}

#[test]
fn forward_is_deterministic() {
    let m = perturbed(&ModelConfig::desk(), 6);
    let x = image(32, 32, 7);
    let a = m.forward(&x).unwrap();
    let b = m.forward(&x).unwrap();
    assert_eq!(a.data(), b.data());
    let again = perturbed(&ModelConfig::desk(), 6);
    assert_eq!(again.forward(&x).unwrap().data(), a.data());
}

#[test]
fn batch_items_are_independent() {
    let m = perturbed(&small(2, 4), 8);
    let (x1, x2) = (image(16, 16, 9), image(16, 16, 10));
    let batch = Tensor::stack_batch(&[&x1, &x2]).unwrap();
    let y = m.forward(&batch).unwrap();
    let y1 = m.forward(&x1).unwrap();
    let y2 = m.forward(&x2).unwrap();
    assert!(max_abs_diff(&y.batch_item(0).unwrap(), &y1) < 1e-12);
    assert!(max_abs_diff(&y.batch_item(1).unwrap(), &y2) < 1e-12);
}

#[test]
fn zero_parameters_give_zero_output() {
    let mut m = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        m.store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
    }
    let y = m.forward(&image(32, 32, 11)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_decoder_inputs_with_zero_biases_give_zero() {
    let cfg = ModelConfig::desk();
    let mut m = perturbed(&cfg, 12);
    zero_matching(&mut m.store, &[".bias", ".beta"]);
    let tape = Tape::inference();
    let bottleneck = tape.constant(Tensor::zeros(&[1, 32, 8, 8]));
    let skips = vec![
        tape.constant(Tensor::zeros(&[1, 8, 32, 32])),
        tape.constant(Tensor::zeros(&[1, 8, 32, 32])),
        tape.constant(Tensor::zeros(&[1, 16, 16, 16])),
    ];
    let y = m.decoder_forward(&tape, bottleneck, &skips).unwrap();
    assert_eq!(tape.shape(y), vec![1, 8, 32, 32]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_skips_are_rejected() {
    let m = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    let tape = Tape::inference();
    let bottleneck = tape.constant(Tensor::zeros(&[1, 32, 8, 8]));
    let skips = vec![tape.constant(Tensor::zeros(&[1, 8, 32, 32])); 3];
    assert!(m.decoder_forward(&tape, bottleneck, &skips).is_err());
}

#[test]
fn skips_carry_information() {
    let m = perturbed(&ModelConfig::desk(), 13);
    let tape = Tape::inference();
    let x = tape.constant(image(32, 32, 14));
    let e = m.embed(&tape, x).unwrap();
    let (bottleneck, skips) = m.encoder_forward(&tape, e).unwrap();
    let with = m.project(&tape, m.decoder_forward(&tape, bottleneck, &skips).unwrap()).unwrap();
    let zeros: Vec<_> = skips.iter().map(|&s| tape.constant(Tensor::zeros(&tape.shape(s)))).collect();
    let without = m.project(&tape, m.decoder_forward(&tape, bottleneck, &zeros).unwrap()).unwrap();
    assert!(max_abs_diff(&tape.value(with), &tape.value(without)) > 1e-6);
    assert_eq!(*tape.value(with), m.forward(&image(32, 32, 14)).unwrap());
}

#[test]
fn indivisible_extents_name_the_divisor() {
    let m = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    for (h, w) in [(30, 32), (32, 18), (33, 33)] {
        match m.forward(&image(h, w, 15)) {
            Err(Error::Config(msg)) => assert!(msg.contains("multiples of 4"), "{msg}"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn multi_channel_input_is_rejected() {
    let m = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    assert!(matches!(m.forward(&Tensor::zeros(&[1, 2, 32, 32])), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn enumeration_is_stable() {
    let a = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    let b = DenoMambaModel::build(&ModelConfig::desk()).unwrap();
    let names = |m: &DenoMambaModel| m.store.iter().map(|p| p.name().to_string()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    assert_eq!(a.store.flatten(), b.store.flatten());
    let layout: Vec<String> = DenoMambaModel::layout(&ModelConfig::desk()).unwrap().into_iter().map(|s| s.name).collect();
    assert_eq!(layout, names(&a));
    let mut other = ModelConfig::desk();
    other.seed = 1;
    assert_ne!(DenoMambaModel::build(&other).unwrap().store.flatten(), a.store.flatten());
}

#[test]
fn down_and_up_shapes() {
    use denomamba::blocks::layers::{down_conv, UpConv};
    let mut b = denomamba::numerics::ParamBuilder::new(0);
    let down = down_conv(&mut b, "down", 4, 8);
    let up = UpConv::register(&mut b, "up", 8, 4);
    let store = b.into_store();
    let x = random(&[1, 4, 8, 8], 16);
    let d = eval(&x, |t, v| down.forward(t, &store, v));
    assert_eq!(d.shape(), &[1, 8, 4, 4]);
    let u = eval(&d, |t, v| up.forward(t, &store, v));
    assert_eq!(u.shape(), &[1, 4, 8, 8]);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let m = perturbed(&ModelConfig::desk(), 17);
    let back = DenoMambaModel::from_checkpoint_bytes(&m.to_checkpoint_bytes()).unwrap();
    let x = image(32, 32, 18);
    assert_eq!(m.forward(&x).unwrap().data(), back.forward(&x).unwrap().data());
    assert_eq!(back.config(), m.config());
}

#[test]
fn decoder_widths_mirror_encoder() {
    for stages in 1..=5 {
        let cfg = small(stages, 3);
        assert_eq!(cfg.dec_widths, mirrored_widths(&cfg.enc_widths));
    }
}
