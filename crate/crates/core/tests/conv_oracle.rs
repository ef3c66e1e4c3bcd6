use eadnet::ops::{conv2d, conv2d_backward, conv2d_naive};
use eadnet::{ConvParams, Tensor};
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![Just((1, 1)), Just((3, 1)), Just((1, 3)), Just((3, 3))]
}

prop_compose! {
    fn case()(
        k in kernel(),
        d in prop_oneof![Just(1usize), Just(2), Just(6), Just(12), Just(24)],
        depthwise in any::<bool>(),
        s in 1usize..=2,
        cin in 1usize..=3,
        cout in 1usize..=3,
        n in 1usize..=2,
        h in 1usize..=12,
        w in 1usize..=12,
        bias in any::<bool>(),
        seed in any::<u64>(),
    ) -> (Tensor<f32>, Tensor<f32>, Option<Vec<f32>>, ConvParams) {
        let cout = if depthwise { cin } else { cout };
        let p = ConvParams::new(k.0, k.1)
            .stride(s, s)
            .dilation(d, d)
            .groups(if depthwise { cin } else { 1 })
            .bias(bias)
            .same_padding();
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f32 / 1000.0 - 1.0
        };
        let x = Tensor::from_fn([n, cin, h, w], |_, _, _, _| next());
        let wt = Tensor::from_fn([cout, cin / p.groups, k.0, k.1], |_, _, _, _| next());
        let b = bias.then(|| (0..cout).map(|_| next()).collect());
        (x, wt, b, p)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn optimized_matches_naive((x, w, b, p) in case()) {
        let fast = conv2d(&x, &w, b.as_deref(), &p).unwrap();
        let slow = conv2d_naive(&x, &w, b.as_deref(), &p).unwrap();
        prop_assert_eq!(fast.dims(), slow.dims());
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-5, "diff {}", fast.max_abs_diff(&slow));
    }

    #[test]
    fn backward_is_the_adjoint((x, w, b, p) in case()) {
        // <conv(x), g> must equal <x, conv^T(g)> for the bias-free part.
        let x = x.cast::<f64>();
        let w = w.cast::<f64>();
        let out = conv2d(&x, &w, None, &p).unwrap();
        let g = Tensor::from_fn(out.dims(), |n, c, h, ww| ((n + 2 * c + 3 * h + 5 * ww) % 7) as f64 - 3.0);
        let grads = conv2d_backward(&x, &w, b.is_some(), &p, &g).unwrap();
        let lhs: f64 = out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(grads.input.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        let rhs_w: f64 = w.data().iter().zip(grads.weight.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs_w).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn dilated_vertical_impulse() {
    let mut x = Tensor::<f32>::zeros([1, 1, 9, 5]);
    x.plane_mut(0, 0)[4 * 5 + 2] = 1.0;
    let p = ConvParams::new(3, 1).dilation(2, 1).bias(false).same_padding();
    let y = conv2d(&x, &Tensor::full([1, 1, 3, 1], 1.0), None, &p).unwrap();
    let hits: Vec<(usize, usize)> = (0..9)
        .flat_map(|r| (0..5).map(move |c| (r, c)))
        .filter(|&(r, c)| y.at(0, 0, r, c) != 0.0)
        .collect();
    assert_eq!(hits, vec![(2, 2), (4, 2), (6, 2)]);
}
