//! Rayon versus forced-sequential execution of the hot kernels.
//!
//! Build with `--no-default-features` to benchmark the crate without rayon
//! at all; the `rayon` variant then runs on the calling thread too.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ducknet::tensor::{conv2d_backward, conv2d_forward, init_weights, matmul, par, ConvParams, Padding};
use ducknet::{Shape4, Tensor4};
use std::hint::black_box;

fn tensor(shape: Shape4, seed: u64) -> Tensor4<f32> {
    Tensor4::from_vec(shape, init_weights(shape, seed)).unwrap()
}

/// Runs `f` once under each execution mode.
fn both(c: &mut Criterion, group: &str, id: &str, elements: u64, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.throughput(Throughput::Elements(elements));
    g.bench_function(BenchmarkId::new("rayon", id), |b| b.iter(&mut f));
    g.bench_function(BenchmarkId::new("sequential", id), |b| {
        b.iter(|| par::sequential(&mut f))
    });
    g.finish();
}

fn bench_matmul(c: &mut Criterion) {
    for &(m, k, n) in &[(64, 576, 1024), (256, 256, 256)] {
        let a = init_weights::<f32>(Shape4::new(1, 1, m, k), 1);
        let b = init_weights::<f32>(Shape4::new(1, 1, k, n), 2);
        let macs = (m * k * n) as u64;
        both(c, "matmul", &format!("{m}x{k}x{n}"), macs, || {
            black_box(matmul(black_box(&a), black_box(&b), m, k, n));
        });
    }
}

/// (label, input shape, out channels, kernel, dilation, stride)
type ConvCase = (&'static str, Shape4, usize, usize, usize, usize);

fn conv_cases() -> Vec<ConvCase> {
    vec![
        ("3x3 16ch 64px", Shape4::new(4, 16, 64, 64), 16, 3, 1, 1),
        ("3x3 d3 32ch 32px", Shape4::new(4, 32, 32, 32), 32, 3, 3, 1),
        ("1x1 32ch 32px", Shape4::new(4, 32, 32, 32), 64, 1, 1, 1),
        ("2x2 s2 16ch 64px", Shape4::new(4, 16, 64, 64), 32, 2, 1, 2),
    ]
}

fn params(input: Shape4, cout: usize, k: usize, d: usize, s: usize) -> ConvParams<f32> {
    let kernel = tensor(Shape4::new(cout, input.c, k, k), 3);
    let bias = tensor(Shape4::new(cout, 1, 1, 1), 4);
    let padding = if s == 1 { Padding::Same } else { Padding::Valid };
    ConvParams::new(kernel, bias, (s, s), (d, d), padding).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    for (label, shape, cout, k, d, s) in conv_cases() {
        let x = tensor(shape, 5);
        let p = params(shape, cout, k, d, s);
        let out = conv2d_forward(&x, &p).unwrap();
        let os = out.shape();
        let macs = (os.n * os.c * os.h * os.w * shape.c * k * k) as u64;
        both(c, "conv_forward", label, macs, || {
            black_box(conv2d_forward(black_box(&x), &p).unwrap());
        });
        let go = tensor(os, 6);
        both(c, "conv_backward", label, 2 * macs, || {
            black_box(conv2d_backward(black_box(&x), &p, &go).unwrap());
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_matmul, bench_conv
}
criterion_main!(benches);
