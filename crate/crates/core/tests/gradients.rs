use eadnet::autograd::{ParamKind, ParamStore, Tape};
use eadnet::gradcheck::{check_op, GradcheckOptions, OPS};
use eadnet::layers::Mode;
use eadnet::{build_eadnet, ConvParams, EadnetConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_passes_a_short_suite() {
    let opts = GradcheckOptions {
        instances: 4,
        seed: 11,
        ..GradcheckOptions::default()
    };
    for op in OPS {
        let r = check_op(op, &opts).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 0);
    }
}

#[test]
fn corrupted_gradient_names_the_op() {
    let opts = GradcheckOptions {
        instances: 2,
        corrupt: Some("softmax".into()),
        ..GradcheckOptions::default()
    };
    let r = check_op("softmax", &opts).unwrap();
    assert!(!r.passed);
    assert_eq!(r.op, "softmax");
}

#[test]
fn prelu_slope_gradient_is_the_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full([1, 1, 1, 1], -2.0));
    let a = tape.leaf(Tensor::full([1, 1, 1, 1], 0.25));
    let y = tape.prelu(x, a).unwrap();
    let g = tape.backward(y, Tensor::full([1, 1, 1, 1], 1.0)).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[-2.0]);
    assert_eq!(g.get(x).unwrap().data(), &[0.25]);
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_fn([1, 2, 4, 4], |_, c, h, w| (c + h * w) as f64 * 0.1 - 0.4));
    let w = tape.leaf(Tensor::from_fn([2, 2, 3, 3], |n, c, h, w| ((n + c + h + w) % 3) as f64 - 1.0));
    let p = ConvParams::new(3, 3).bias(false).same_padding();
    let y = tape.conv2d(x, w, None, p).unwrap();
    let dims = tape.value(y).dims();
    let s1 = Tensor::from_fn(dims, |_, c, h, _| (c + h) as f64);
    let s2 = Tensor::from_fn(dims, |_, _, _, w| w as f64 - 1.5);
    let mut both = s1.clone();
    both.add_assign(&s2).unwrap();
    let g1 = tape.backward(y, s1).unwrap();
    let g2 = tape.backward(y, s2).unwrap();
    let g = tape.backward(y, both).unwrap();
    let mut expected = g1.get(x).unwrap().clone();
    expected.add_assign(g2.get(x).unwrap()).unwrap();
    assert!(g.get(x).unwrap().max_abs_diff(&expected) < 1e-12);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::zeros([1, 1, 2, 2]));
    assert!(tape.backward(x, Tensor::zeros([1, 1, 3, 3])).is_err());
    let mut other = Tape::<f32>::new();
    let far = {
        for _ in 0..3 {
            other.leaf(Tensor::zeros([1, 1, 1, 1]));
        }
        other.leaf(Tensor::zeros([1, 1, 1, 1]))
    };
    assert!(tape.backward(far, Tensor::zeros([1, 1, 1, 1])).is_err());
}

#[test]
fn network_gradients_reach_every_trainable_parameter() {
    let config = EadnetConfig {
        num_classes: 3,
        stage_channels: (8, 16, 24),
        ..EadnetConfig::default()
    }
    .with_blocks(1, 1);
    let mut store = ParamStore::<f32>::new();
    let model = build_eadnet(&config, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn([2, 3, 16, 16], |n, c, h, w| ((n + c * h + w) % 5) as f32 * 0.2));
    let out = model.forward(&mut tape, &store, x, Mode::Train).unwrap();
    let seed = Tensor::from_fn(tape.value(out.output).dims(), |_, c, h, w| ((c + h + w) % 3) as f32 - 1.0);
    let grads = tape.backward(out.output, seed).unwrap();
    store.zero_grad();
    tape.accumulate_into(&grads, &mut store).unwrap();
    for (name, e) in store.iter() {
        assert_eq!(e.trainable, !matches!(e.kind, ParamKind::BnRunningMean | ParamKind::BnRunningVar));
        if e.trainable {
            assert!(e.has_grad(), "{name} got no gradient");
        }
    }
}

#[test]
fn batch_members_are_independent_in_inference() {
    let config = EadnetConfig {
        num_classes: 5,
        ..EadnetConfig::default()
    }
    .with_blocks(1, 2);
    let mut store = ParamStore::<f32>::new();
    let model = build_eadnet(&config, &mut store, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let one = Tensor::from_fn([1, 3, 16, 24], |_, c, h, w| ((c * 7 + h * 3 + w) % 11) as f32 / 11.0);
    let mut two = one.data().to_vec();
    two.extend_from_slice(one.data());
    let out = model.predict(&store, &Tensor::new([2, 3, 16, 24], two).unwrap()).unwrap();
    let single = model.predict(&store, &one).unwrap();
    assert_eq!(out.sample(0), out.sample(1));
    let diff = out.sample(0).iter().zip(single.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(diff < 1e-5, "{diff}");
}
