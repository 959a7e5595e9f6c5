//! Self-check suites: receptive fields, a direct-convolution oracle, a
//! metrics oracle and finite-difference gradient checks.

use crate::blocks::{
    build_duck, build_midscope, build_residual, build_residual_stack, build_separated, build_simple_double,
    build_widescope, Block, BlockSpec, ParamRole, DEFAULT_SEPARATED_N,
};
use crate::error::Result;
use crate::metrics::{self, confusion_counts, ConfusionCounts};
use crate::net::{DuckNet, NetSpec};
use crate::tensor::{
    activation, activation_backward, batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
    conv_output_dim, upsample_nearest_2x, upsample_nearest_2x_backward, Activation, BatchNormState, ConvParams, Mode,
    Padding, Scalar, Shape4, Tensor4,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    GradCheck,
    Rf,
    Metrics,
    ConvOracle,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gradcheck" => Ok(Suite::GradCheck),
            "rf" => Ok(Suite::Rf),
            "metrics" => Ok(Suite::Metrics),
            "conv-oracle" => Ok(Suite::ConvOracle),
            _ => Err(format!("unknown suite {s:?} (gradcheck, rf, metrics, conv-oracle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    fn push(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            detail: detail.into(),
            pass,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite) -> Result<Report> {
    match suite {
        Suite::Rf => Ok(rf_suite()),
        Suite::ConvOracle => Ok(conv_oracle_suite(500, 0x5eed)),
        Suite::Metrics => metrics_suite(1000, 0x5eed),
        Suite::GradCheck => gradcheck_suite(),
    }
}

// ---------------------------------------------------------------- rf

/// The simulated kernel sizes claimed for each block.
pub fn rf_claims() -> Vec<(&'static str, BlockSpec, usize)> {
    vec![
        ("residual x1", build_residual_stack(1, 1), 5),
        ("residual x2", build_residual_stack(1, 2), 9),
        ("residual x3", build_residual_stack(1, 3), 13),
        ("midscope", build_midscope(1), 7),
        ("widescope", build_widescope(1), 15),
    ]
}

pub fn rf_suite() -> Report {
    let mut r = Report::default();
    for (name, spec, claim) in rf_claims() {
        let (h, w) = spec.receptive_field();
        r.push(
            format!("rf {name}"),
            h == claim && w == claim,
            format!("claimed {claim}x{claim}, computed {h}x{w}"),
        );
    }
    r
}

// ---------------------------------------------------------------- conv oracle

/// Direct quadruple-loop convolution: each output accumulates
/// fused multiply-adds over (in-channel, kernel-row, kernel-col) in
/// ascending order, then adds the bias.
pub fn naive_conv2d<S: Scalar>(input: &Tensor4<S>, p: &ConvParams<S>) -> Option<Tensor4<S>> {
    let s = input.shape();
    let k = p.kernel.shape();
    let (oh, pt) = conv_output_dim(s.h, k.h, p.stride.0, p.dilation.0, p.padding)?;
    let (ow, pl) = conv_output_dim(s.w, k.w, p.stride.1, p.dilation.1, p.padding)?;
    let out = Tensor4::from_fn(Shape4::new(s.n, k.n, oh, ow), |n, co, oy, ox| {
        let mut acc = S::zero();
        for ci in 0..k.c {
            for i in 0..k.h {
                let Some(iy) = (oy * p.stride.0 + i * p.dilation.0)
                    .checked_sub(pt)
                    .filter(|&v| v < s.h)
                else {
                    continue;
                };
                for j in 0..k.w {
                    let Some(ix) = (ox * p.stride.1 + j * p.dilation.1)
                        .checked_sub(pl)
                        .filter(|&v| v < s.w)
                    else {
                        continue;
                    };
                    acc = p.kernel.at(co, ci, i, j).mul_add(input.at(n, ci, iy, ix), acc);
                }
            }
        }
        p.bias.data()[co] + acc
    });
    Some(out)
}

fn random_tensor<S: Scalar, R: Rng>(shape: Shape4, rng: &mut R) -> Tensor4<S> {
    Tensor4::from_fn(shape, |_, _, _, _| S::from_f64_lossy(rng.gen_range(-1.0..1.0)))
}

const ORACLE_KERNELS: [(usize, usize); 5] = [(1, 1), (2, 2), (3, 3), (1, 13), (13, 1)];

/// One random convolution configuration; `None` when it has no valid output.
fn random_conv_case<R: Rng>(rng: &mut R) -> Option<(Tensor4<f32>, ConvParams<f32>)> {
    let kernel = ORACLE_KERNELS[rng.gen_range(0..ORACLE_KERNELS.len())];
    let stride = [1, 2][rng.gen_range(0..2)];
    let dilation = [1, 2, 4][rng.gen_range(0..3)];
    let odd = kernel.0 % 2 == 1 && kernel.1 % 2 == 1;
    let padding = if odd && rng.gen_bool(0.6) {
        Padding::Same
    } else {
        Padding::Valid
    };
    let cin = rng.gen_range(1..=5);
    let cout = rng.gen_range(1..=20);
    let n = rng.gen_range(1..=2);
    // a quarter of the cases use planes large enough for the direct path
    let (h, w) = if rng.gen_bool(0.25) {
        (rng.gen_range(32..=48), rng.gen_range(32..=48))
    } else {
        (rng.gen_range(1..=20), rng.gen_range(1..=20))
    };
    let mut p = ConvParams::zeros(cout, cin, kernel, (stride, stride), (dilation, dilation), padding).ok()?;
    p.kernel = random_tensor(p.kernel.shape(), rng).with_grad();
    p.bias = random_tensor(p.bias.shape(), rng).with_grad();
    let shape = Shape4::new(n, cin, h, w);
    p.output_shape(shape).ok()?;
    Some((random_tensor(shape, rng), p))
}

pub fn conv_oracle_suite(configs: usize, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Report::default();
    let (mut tested, mut mismatched) = (0usize, Vec::new());
    while tested < configs {
        let Some((x, p)) = random_conv_case(&mut rng) else {
            continue;
        };
        tested += 1;
        let fast = conv2d_forward(&x, &p).expect("valid configuration");
        let slow = naive_conv2d(&x, &p).expect("valid configuration");
        let bad = fast
            .data()
            .iter()
            .zip(slow.data())
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
        if bad > 0 && mismatched.len() < 5 {
            let k = p.kernel.shape();
            mismatched.push(format!(
                "input {} kernel {}x{} stride {:?} dilation {:?} {:?}: {bad} elements differ",
                x.shape(),
                k.h,
                k.w,
                p.stride,
                p.dilation,
                p.padding
            ));
        }
    }
    let detail = if mismatched.is_empty() {
        format!("{tested} random configurations bit-identical to the direct oracle")
    } else {
        mismatched.join("; ")
    };
    r.push("conv oracle", mismatched.is_empty(), detail);
    r
}

// ---------------------------------------------------------------- metrics

/// Per-pixel double loop over a `h×w` pair.
pub fn naive_counts(pred: &[f64], gt: &[f64], h: usize, w: usize, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            match (pred[i] >= threshold, gt[i] >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Metric formulas written out independently of the library.
pub fn naive_metrics(c: &ConfusionCounts) -> [f64; 5] {
    let (tp, fp, fn_, tn) = (c.tp, c.fp, c.fn_, c.tn);
    [
        ratio(2 * tp, 2 * tp + fp + fn_),
        ratio(tp, tp + fp + fn_),
        ratio(tp, tp + fp),
        ratio(tp, tp + fn_),
        ratio(tp + tn, tp + tn + fp + fn_),
    ]
}

pub fn metrics_suite(pairs: usize, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Report::default();
    let (h, w) = (16, 16);
    let (mut oracle_bad, mut identity_bad) = (0usize, 0usize);
    for _ in 0..pairs {
        // vary foreground density so empty and full masks also occur
        let density = rng.gen_range(0.0..1.0f64).powi(2);
        let gt: Vec<f64> = (0..h * w)
            .map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 })
            .collect();
        let pred: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let shape = Shape4::new(1, 1, h, w);
        let c = confusion_counts(
            &Tensor4::from_vec(shape, pred.clone())?,
            &Tensor4::from_vec(shape, gt.clone())?,
            metrics::DEFAULT_THRESHOLD,
        )?;
        let expected = naive_counts(&pred, &gt, h, w, metrics::DEFAULT_THRESHOLD);
        if c != expected || c.metrics() != naive_metrics(&expected) {
            oracle_bad += 1;
        }
        let (d, j) = (c.dice(), c.jaccard());
        if (d - 2.0 * j / (1.0 + j)).abs() > 1e-12 {
            identity_bad += 1;
        }
    }
    r.push(
        "metrics oracle",
        oracle_bad == 0,
        format!("{pairs} random 16x16 pairs, {oracle_bad} differ from the double-loop recomputation"),
    );
    r.push(
        "dice-jaccard identity",
        identity_bad == 0,
        format!("dice = 2j/(1+j) violated on {identity_bad} of {pairs} pairs"),
    );
    let worked = ConfusionCounts {
        tp: 3,
        fp: 1,
        fn_: 2,
        tn: 10,
    }
    .metrics();
    let expected = [0.66667, 0.5, 0.75, 0.6, 0.8125];
    let ok = worked.iter().zip(expected).all(|(a, b)| (a - b).abs() <= 1e-5);
    r.push(
        "worked example tp=3 fp=1 fn=2 tn=10",
        ok,
        format!(
            "got {:.5} {:.5} {:.5} {:.5} {:.5}",
            worked[0], worked[1], worked[2], worked[3], worked[4]
        ),
    );
    Ok(r)
}

// ---------------------------------------------------------------- gradcheck

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`. Pairs where both values
/// are below 1e-7 in magnitude are compared absolutely instead (limit
/// 1e-9), since a structurally zero gradient leaves only rounding noise in
/// the difference quotient.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < 1e-7 && numeric.abs() < 1e-7 {
        return if diff <= 1e-9 { 0.0 } else { diff / 1e-9 * FD_TOLERANCE };
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest error over the sampled coordinates of one tensor.
#[derive(Debug, Clone, Default)]
pub struct GradStats {
    pub checked: usize,
    /// Coordinates re-probed with a smaller step to avoid a relu kink.
    pub fallbacks: usize,
    /// Coordinates skipped because every step crossed a kink.
    pub kinked: usize,
    pub max_err: f64,
    pub worst: String,
}

impl GradStats {
    fn record(&mut self, label: &str, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = grad_error(analytic, numeric);
        if e > self.max_err || self.worst.is_empty() {
            self.max_err = self.max_err.max(e);
            self.worst = format!("{label}: analytic {analytic:.6e}, numeric {numeric:.6e}");
        }
    }

    fn merge(&mut self, o: GradStats) {
        self.checked += o.checked;
        self.fallbacks += o.fallbacks;
        self.kinked += o.kinked;
        if o.max_err > self.max_err {
            self.max_err = o.max_err;
            self.worst = o.worst;
        }
    }

    fn check(&self, name: &str, tol: f64) -> Check {
        Check {
            name: format!("gradcheck {name}"),
            pass: self.max_err <= tol && self.checked > 0,
            detail: format!(
                "{} coordinates ({} at a reduced step, {} skipped at relu kinks), max rel. err {:.2e} (limit {tol:.0e}); worst {}",
                self.checked, self.fallbacks, self.kinked, self.max_err, self.worst
            ),
        }
    }
}

fn central_difference(data: &mut [f64], i: usize, mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = data[i];
    data[i] = orig + FD_STEP;
    let up = loss(data);
    data[i] = orig - FD_STEP;
    let down = loss(data);
    data[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn sample_coords<R: Rng>(len: usize, max: usize, rng: &mut R) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, max).into_vec()
    }
}

/// Checks the analytic gradient `analytic` of `loss` at `x` on up to
/// `max_coords` coordinates.
fn check_tensor<R: Rng>(
    label: &str,
    x: &Tensor4<f64>,
    analytic: &[f64],
    max_coords: usize,
    rng: &mut R,
    mut loss: impl FnMut(&Tensor4<f64>) -> f64,
) -> GradStats {
    let mut stats = GradStats::default();
    let mut probe = x.clone();
    for i in sample_coords(x.shape().len(), max_coords, rng) {
        let shape = probe.shape();
        let numeric = central_difference(probe.data_mut(), i, |d| {
            loss(&Tensor4::from_vec(shape, d.to_vec()).expect("same shape"))
        });
        stats.record(&format!("{label}[{i}]"), analytic[i], numeric);
    }
    stats
}

/// Weighted-sum loss `Σ w·y` with fixed random weights; its gradient is `w`.
fn weights_like<R: Rng>(shape: Shape4, rng: &mut R) -> Tensor4<f64> {
    random_tensor(shape, rng)
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn gradcheck_conv(rng: &mut ChaCha8Rng) -> Result<GradStats> {
    let x = random_tensor::<f64, _>(Shape4::new(2, 4, 5, 5), rng);
    let mut p = ConvParams::<f64>::zeros(3, 4, (3, 3), (1, 1), (2, 2), Padding::Same)?;
    p.kernel = random_tensor(p.kernel.shape(), rng).with_grad();
    p.bias = random_tensor(p.bias.shape(), rng).with_grad();
    let w = weights_like(p.output_shape(x.shape())?, rng);
    let g = conv2d_backward(&x, &p, &w)?;
    let mut stats = check_tensor("input", &x, g.input.data(), usize::MAX, rng, |x| {
        dot(&conv2d_forward(x, &p).unwrap(), &w)
    });
    let mut q = p.clone();
    stats.merge(check_tensor(
        "kernel",
        &p.kernel,
        g.kernel.data(),
        usize::MAX,
        rng,
        |k| {
            q.kernel = k.clone();
            dot(&conv2d_forward(&x, &q).unwrap(), &w)
        },
    ));
    let mut q = p.clone();
    stats.merge(check_tensor("bias", &p.bias, g.bias.data(), usize::MAX, rng, |b| {
        q.bias = b.clone();
        dot(&conv2d_forward(&x, &q).unwrap(), &w)
    }));
    Ok(stats)
}

fn gradcheck_batchnorm(rng: &mut ChaCha8Rng) -> Result<GradStats> {
    let x = random_tensor::<f64, _>(Shape4::new(2, 3, 4, 4), rng);
    let mut s = BatchNormState::<f64>::new(3);
    s.gamma = random_tensor(s.gamma.shape(), rng).with_grad();
    s.beta = random_tensor(s.beta.shape(), rng).with_grad();
    let w = weights_like(x.shape(), rng);
    let base = s.clone();
    let g = batchnorm_backward(&x, &s, &w)?;
    let run = |x: &Tensor4<f64>, st: &BatchNormState<f64>| {
        let mut st = st.clone();
        dot(&batchnorm_forward(x, &mut st).unwrap(), &w)
    };
    let mut stats = check_tensor("input", &x, g.input.data(), usize::MAX, rng, |x| run(x, &base));
    stats.merge(check_tensor(
        "gamma",
        &base.gamma,
        g.gamma.data(),
        usize::MAX,
        rng,
        |t| {
            let mut st = base.clone();
            st.gamma = t.clone();
            run(&x, &st)
        },
    ));
    stats.merge(check_tensor("beta", &base.beta, g.beta.data(), usize::MAX, rng, |t| {
        let mut st = base.clone();
        st.beta = t.clone();
        run(&x, &st)
    }));
    Ok(stats)
}

/// Inputs kept away from relu's kink so the difference quotient is smooth.
fn away_from_zero(x: Tensor4<f64>) -> Tensor4<f64> {
    x.map(|v| if v.abs() < 0.05 { v + 0.1_f64.copysign(v) } else { v })
}

fn gradcheck_activation(kind: Activation, rng: &mut ChaCha8Rng) -> Result<GradStats> {
    let x = away_from_zero(random_tensor::<f64, _>(Shape4::new(2, 3, 4, 4), rng).map(|v| 4.0 * v));
    let w = weights_like(x.shape(), rng);
    let y = activation(&x, kind);
    let g = activation_backward(&y, &w, kind)?;
    let mut stats = check_tensor("input", &x, g.data(), usize::MAX, rng, |x| {
        dot(&activation(x, kind), &w)
    });
    if kind == Activation::Sigmoid {
        let zero = Tensor4::<f64>::zeros(Shape4::new(1, 1, 1, 1));
        let one = Tensor4::filled(zero.shape(), 1.0);
        let g0 = activation_backward(&activation(&zero, kind), &one, kind)?;
        stats.merge(check_tensor("at zero", &zero, g0.data(), 1, rng, |x| {
            activation(x, kind).data()[0]
        }));
    }
    Ok(stats)
}

fn gradcheck_upsample(rng: &mut ChaCha8Rng) -> Result<GradStats> {
    let x = random_tensor::<f64, _>(Shape4::new(2, 2, 3, 4), rng);
    let w = weights_like(Shape4::new(2, 2, 6, 8), rng);
    let g = upsample_nearest_2x_backward(&w)?;
    Ok(check_tensor("input", &x, g.data(), usize::MAX, rng, |x| {
        dot(&upsample_nearest_2x(x), &w)
    }))
}

fn gradcheck_add(rng: &mut ChaCha8Rng) -> Result<GradStats> {
    let a = random_tensor::<f64, _>(Shape4::new(1, 2, 3, 3), rng);
    let b = random_tensor::<f64, _>(a.shape(), rng);
    let w = weights_like(a.shape(), rng);
    let (ga, gb) = crate::tensor::add_backward(&w);
    let mut stats = check_tensor("lhs", &a, ga.data(), usize::MAX, rng, |a| {
        dot(&crate::tensor::add(a, &b).unwrap(), &w)
    });
    stats.merge(check_tensor("rhs", &b, gb.data(), usize::MAX, rng, |b| {
        dot(&crate::tensor::add(&a, b).unwrap(), &w)
    }));
    Ok(stats)
}

fn gradcheck_dice(rng: &mut ChaCha8Rng) -> Result<GradStats> {
    let p = random_tensor::<f64, _>(Shape4::new(2, 1, 4, 4), rng).map(|v| 0.5 + 0.45 * v);
    let gt = random_tensor::<f64, _>(p.shape(), rng).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let (_, g) = metrics::dice_loss_soft(&p, &gt, metrics::DEFAULT_SMOOTH)?;
    Ok(check_tensor("pred", &p, g.data(), usize::MAX, rng, |p| {
        metrics::dice_loss_soft(p, &gt, metrics::DEFAULT_SMOOTH).unwrap().0
    }))
}

/// Anything with a training forward, a backward and named parameters.
trait Differentiable {
    fn forward(&mut self, x: &Tensor4<f64>) -> Tensor4<f64>;
    fn relu_pattern(&self) -> Vec<bool>;
    fn backward(&mut self, g: &Tensor4<f64>) -> Tensor4<f64>;
    fn visit(&mut self, f: &mut dyn FnMut(&str, ParamRole, &mut Tensor4<f64>));
}

impl Differentiable for Block<f64> {
    fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        Block::relu_pattern(self, &mut out);
        out
    }
    fn forward(&mut self, x: &Tensor4<f64>) -> Tensor4<f64> {
        Block::forward(self, x, Mode::Train).expect("block forward")
    }
    fn backward(&mut self, g: &Tensor4<f64>) -> Tensor4<f64> {
        self.zero_grad();
        Block::backward(self, g).expect("block backward")
    }
    fn visit(&mut self, f: &mut dyn FnMut(&str, ParamRole, &mut Tensor4<f64>)) {
        Block::visit(self, "block", f)
    }
}

impl Differentiable for DuckNet<f64> {
    fn relu_pattern(&self) -> Vec<bool> {
        DuckNet::relu_pattern(self)
    }
    fn forward(&mut self, x: &Tensor4<f64>) -> Tensor4<f64> {
        DuckNet::forward(self, x, Mode::Train).expect("network forward")
    }
    fn backward(&mut self, g: &Tensor4<f64>) -> Tensor4<f64> {
        self.zero_grad();
        DuckNet::backward(self, g).expect("network backward")
    }
    fn visit(&mut self, f: &mut dyn FnMut(&str, ParamRole, &mut Tensor4<f64>)) {
        DuckNet::visit(self, f)
    }
}

/// Steps tried, in order, when a probe at the default step flips a relu.
const FALLBACK_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

/// Outcome of probing one coordinate of a piecewise-linear module.
enum Probe {
    Smooth(f64),
    /// Every step tried crossed a relu kink.
    Kinked,
}

/// Central difference along the coordinate set by `set(m, value)`, at the
/// default step unless that step changes the relu pattern.
fn probe_coordinate<M: Differentiable>(
    m: &mut M,
    w: &Tensor4<f64>,
    base: &[bool],
    orig: f64,
    set: &mut dyn FnMut(&mut M, f64) -> Tensor4<f64>,
    fallbacks: &mut usize,
) -> Probe {
    for (attempt, h) in std::iter::once(FD_STEP).chain(FALLBACK_STEPS).enumerate() {
        let input = set(m, orig + h);
        let up = dot(&m.forward(&input), w);
        let up_pattern = m.relu_pattern();
        let input = set(m, orig - h);
        let down = dot(&m.forward(&input), w);
        let down_pattern = m.relu_pattern();
        set(m, orig);
        if up_pattern == base && down_pattern == base {
            if attempt > 0 {
                *fallbacks += 1;
            }
            return Probe::Smooth((up - down) / (2.0 * h));
        }
    }
    Probe::Kinked
}

/// Input gradient plus every trainable tensor, sampling up to `per_tensor`
/// coordinates of each. Coordinates whose probes cross a relu kink are
/// re-probed with smaller steps and skipped when no step avoids the kink.
fn gradcheck_module<M: Differentiable>(
    m: &mut M,
    x: &Tensor4<f64>,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> GradStats {
    let y = m.forward(x);
    let base = m.relu_pattern();
    let w = weights_like(y.shape(), rng);
    let gx = m.backward(&w);
    let mut stats = GradStats::default();

    let mut targets: Vec<(String, Vec<f64>)> = vec![("input".to_string(), gx.data().to_vec())];
    m.visit(&mut |name, role, t| {
        if role == ParamRole::Trainable {
            targets.push((name.to_string(), t.grad().expect("trainable grad").to_vec()));
        }
    });
    for (name, analytic) in targets {
        for i in sample_coords(analytic.len(), per_tensor, rng) {
            let mut probe_input = x.clone();
            let orig = if name == "input" {
                x.data()[i]
            } else {
                let mut v = 0.0;
                m.visit(&mut |n, _, t| {
                    if n == name {
                        v = t.data()[i];
                    }
                });
                v
            };
            let mut set = |m: &mut M, value: f64| -> Tensor4<f64> {
                if name == "input" {
                    probe_input.data_mut()[i] = value;
                } else {
                    m.visit(&mut |n, _, t| {
                        if n == name {
                            t.data_mut()[i] = value;
                        }
                    });
                }
                probe_input.clone()
            };
            match probe_coordinate(m, &w, &base, orig, &mut set, &mut stats.fallbacks) {
                Probe::Smooth(numeric) => stats.record(&format!("{name}[{i}]"), analytic[i], numeric),
                Probe::Kinked => stats.kinked += 1,
            }
        }
    }
    stats
}

/// Every block kind at F = 3 on a 1×2×12×12 input.
pub fn gradcheck_blocks(seed: u64) -> Result<Vec<(String, GradStats)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<BlockSpec> = vec![
        build_residual(3),
        build_residual_stack(3, 2),
        build_residual_stack(3, 3),
        build_midscope(3),
        build_widescope(3),
        build_separated(3, DEFAULT_SEPARATED_N)?,
        build_duck(3),
        build_simple_double(3),
    ];
    let mut out = Vec::new();
    for (i, spec) in specs.into_iter().enumerate() {
        let name = match (spec.kind.name(), spec.repeat) {
            ("residual", r) if r > 1 => format!("residual x{r}"),
            (n, _) => n.to_string(),
        };
        let mut block = Block::<f64>::new(spec, 2, seed.wrapping_add(i as u64))?;
        let x = random_tensor::<f64, _>(Shape4::new(1, 2, 12, 12), &mut rng);
        out.push((name, gradcheck_module(&mut block, &x, 12, &mut rng)));
    }
    Ok(out)
}

/// Depth-3, F = 2 network on a 1×3×32×32 input.
pub fn gradcheck_network(seed: u64, per_tensor: usize) -> Result<GradStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetSpec::new(2, (32, 32)).with_depth(3);
    let mut net = DuckNet::<f64>::new(spec, seed)?;
    let x = random_tensor::<f64, _>(Shape4::new(1, 3, 32, 32), &mut rng).map(|v| 0.5 + 0.5 * v);
    Ok(gradcheck_module(&mut net, &x, per_tensor, &mut rng))
}

pub fn gradcheck_primitives(seed: u64) -> Result<Vec<(String, GradStats)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        ("conv2d (dilation 2)".to_string(), gradcheck_conv(&mut rng)?),
        ("batchnorm".to_string(), gradcheck_batchnorm(&mut rng)?),
        ("relu".to_string(), gradcheck_activation(Activation::Relu, &mut rng)?),
        (
            "sigmoid".to_string(),
            gradcheck_activation(Activation::Sigmoid, &mut rng)?,
        ),
        ("upsample".to_string(), gradcheck_upsample(&mut rng)?),
        ("add".to_string(), gradcheck_add(&mut rng)?),
        ("soft dice loss".to_string(), gradcheck_dice(&mut rng)?),
    ])
}

pub fn gradcheck_suite() -> Result<Report> {
    let mut r = Report::default();
    for (name, stats) in gradcheck_primitives(11)?.into_iter().chain(gradcheck_blocks(12)?) {
        r.checks.push(stats.check(&name, FD_TOLERANCE));
    }
    r.checks
        .push(gradcheck_network(13, 4)?.check("network depth 3 F 2", FD_TOLERANCE));
    Ok(r)
}
