use ducknet::data::augment::flip_horizontal;
use ducknet::data::synth::synth_sample;
use ducknet::data::{apply_augment, lanczos_resize, split_dataset, AugmentConfig, AugmentDraw};
use ducknet::metrics::confusion_counts;
use ducknet::tensor::{conv2d_backward, conv2d_forward, par, ConvParams, Padding};
use ducknet::verify::naive_conv2d;
use ducknet::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn values(len: usize, seed: u64) -> Vec<f32> {
    // cheap deterministic pseudo-random values in [-1, 1]
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect()
}

fn tensor(shape: Shape4, seed: u64) -> Tensor4<f32> {
    Tensor4::from_vec(shape, values(shape.len(), seed)).unwrap()
}

#[derive(Debug, Clone)]
struct ConvCase {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: (usize, usize),
    stride: usize,
    dilation: usize,
    same: bool,
    seed: u64,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (
        1..=2usize,
        1..=4usize,
        1..=9usize,
        1..=40usize,
        1..=40usize,
        prop::sample::select(vec![(1, 1), (3, 3), (1, 5), (5, 1), (2, 2), (3, 1)]),
        1..=2usize,
        1..=3usize,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(n, cin, cout, h, w, k, stride, dilation, same, seed)| ConvCase {
            n,
            cin,
            cout,
            h,
            w,
            k,
            stride,
            dilation,
            same: same && k.0 % 2 == 1 && k.1 % 2 == 1,
            seed,
        })
}

fn build(c: &ConvCase) -> Option<(Tensor4<f32>, ConvParams<f32>)> {
    let padding = if c.same { Padding::Same } else { Padding::Valid };
    let kernel = tensor(Shape4::new(c.cout, c.cin, c.k.0, c.k.1), c.seed);
    let bias = tensor(Shape4::new(c.cout, 1, 1, 1), c.seed ^ 1);
    let p = ConvParams::new(kernel, bias, (c.stride, c.stride), (c.dilation, c.dilation), padding).ok()?;
    let x = tensor(Shape4::new(c.n, c.cin, c.h, c.w), c.seed ^ 2);
    naive_conv2d(&x, &p)?;
    Some((x, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn conv_matches_oracle_in_both_modes(c in conv_case()) {
        let Some((x, p)) = build(&c) else { return Ok(()) };
        let want = naive_conv2d(&x, &p).unwrap();
        let par_out = conv2d_forward(&x, &p).unwrap();
        let seq_out = par::sequential(|| conv2d_forward(&x, &p).unwrap());
        prop_assert_eq!(par_out.data(), want.data());
        prop_assert_eq!(seq_out.data(), want.data());
    }

    #[test]
    fn conv_backward_is_mode_independent(c in conv_case()) {
        let Some((x, p)) = build(&c) else { return Ok(()) };
        let go = tensor(conv2d_forward(&x, &p).unwrap().shape(), c.seed ^ 3);
        let a = conv2d_backward(&x, &p, &go).unwrap();
        let b = par::sequential(|| conv2d_backward(&x, &p, &go).unwrap());
        prop_assert_eq!(a.input.data(), b.input.data());
        prop_assert_eq!(a.kernel.data(), b.kernel.data());
        prop_assert_eq!(a.bias.data(), b.bias.data());
    }

    #[test]
    fn metrics_are_bounded_and_consistent(
        bits in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..300),
        threshold in 0.05f64..0.95,
    ) {
        let n = bits.len();
        let pred = Tensor4::from_vec(Shape4::new(1, 1, 1, n), bits.iter().map(|b| b.0).collect()).unwrap();
        let gt = Tensor4::from_vec(
            Shape4::new(1, 1, 1, n),
            bits.iter().map(|b| if b.1 { 1.0 } else { 0.0 }).collect(),
        ).unwrap();
        let c = confusion_counts(&pred, &gt, threshold).unwrap();
        prop_assert_eq!(c.total(), n as u64);
        let m = c.metrics();
        prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        let j = m[1];
        prop_assert!((m[0] - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
    }

    #[test]
    fn split_partitions_ids(n in 3usize..150, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i:03}")).collect();
        let m = split_dataset(&ids, seed).unwrap();
        prop_assert_eq!(m.val.len(), n / 10);
        prop_assert_eq!(m.test.len(), n / 10);
        let mut all: Vec<String> = m.train.iter().chain(&m.val).chain(&m.test).cloned().collect();
        all.sort();
        prop_assert_eq!(all, ids.clone());
        let mut reversed = ids;
        reversed.reverse();
        prop_assert_eq!(split_dataset(&reversed, seed).unwrap(), m);
    }

    #[test]
    fn lanczos_preserves_constants(
        h in 1usize..40, w in 1usize..40, th in 1usize..60, tw in 1usize..60, v in 0.0f32..1.0,
    ) {
        let out = lanczos_resize(&vec![v; h * w], (h, w), (th, tw));
        prop_assert_eq!(out.len(), th * tw);
        prop_assert!(out.iter().all(|&o| (o - v).abs() <= 1e-6));
    }

    #[test]
    fn augmentation_keeps_masks_binary_and_flips_invert(seed in any::<u64>()) {
        let s = synth_sample(seed, 0, (24, 20));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = AugmentConfig::default().draw(&mut rng);
        let out = apply_augment(&s, &draw);
        prop_assert!(out.mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
        prop_assert!(out.image.data().iter().all(|v| v.is_finite()));
        let jitter_only = AugmentDraw { jitter: draw.jitter, ..AugmentDraw::IDENTITY };
        let jittered = apply_augment(&s, &jitter_only);
        prop_assert_eq!(jittered.mask.data(), s.mask.data());
        let mut plane = s.image.data()[..24 * 20].to_vec();
        flip_horizontal(&mut plane, 24, 20);
        flip_horizontal(&mut plane, 24, 20);
        prop_assert_eq!(&plane[..], &s.image.data()[..24 * 20]);
    }
}
