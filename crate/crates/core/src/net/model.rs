use super::spec::NetSpec;
use crate::blocks::{build_residual, Block, ConvLayer, LayerSpec, ParamCount, ParamRole, Visitor};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    activation, activation_backward, add, upsample_nearest_2x, upsample_nearest_2x_backward, Activation, Mode, Padding,
    Scalar, Shape4, Tensor4,
};

/// The full encoder-decoder.
///
/// Encoder: `t0 = block(x)`; for each level i ≥ 1 a strided 2×2 conv of the
/// previous main-path output is added to a strided 2×2 conv of the previous
/// secondary-path value (the raw input at level 1), and the sum feeds the
/// level block. The deepest level runs four residual blocks instead. The
/// decoder upsamples, adds the matching encoder output and applies a block
/// with half the channels; a 1×1 conv and sigmoid produce the probability map.
#[derive(Debug, Clone)]
pub struct DuckNet<S> {
    spec: NetSpec,
    stem: Block<S>,
    secondary: Vec<ConvLayer<S>>,
    down: Vec<ConvLayer<S>>,
    encoder: Vec<Block<S>>,
    bottleneck: Vec<Block<S>>,
    /// Ordered from the deepest level to level 0.
    decoder: Vec<Block<S>>,
    head: ConvLayer<S>,
    probs: Option<Tensor4<S>>,
}

fn down_conv<S: Scalar>(cin: usize, cout: usize, seed: u64) -> Result<ConvLayer<S>> {
    let layer = LayerSpec {
        kernel: (2, 2),
        dilation: (1, 1),
        stride: (2, 2),
    };
    ConvLayer::init(cin, cout, layer, Padding::Valid, false, seed)
}

impl<S: Scalar> DuckNet<S> {
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let d = spec.depth;
        let ch = |i: usize| spec.level_channels(i);
        let mut salt = 0u64;
        let mut next_seed = || {
            salt += 1;
            seed::mix(seed, salt)
        };

        let stem = Block::new(spec.level_block(ch(0)), spec.input_channels, next_seed())?;
        let mut secondary = Vec::with_capacity(d);
        let mut down = Vec::with_capacity(d);
        for i in 1..=d {
            let sec_in = if i == 1 { spec.input_channels } else { ch(i - 1) };
            secondary.push(down_conv(sec_in, ch(i), next_seed())?);
            down.push(down_conv(ch(i - 1), ch(i), next_seed())?);
        }
        let encoder = (1..d)
            .map(|i| Block::new(spec.level_block(ch(i)), ch(i), next_seed()))
            .collect::<Result<Vec<_>>>()?;
        let bottleneck = vec![
            Block::new(build_residual(ch(d)), ch(d), next_seed())?,
            Block::new(build_residual(ch(d)), ch(d), next_seed())?,
            Block::new(build_residual(ch(d - 1)), ch(d), next_seed())?,
            Block::new(build_residual(ch(d - 1)), ch(d - 1), next_seed())?,
        ];
        let decoder = (0..d)
            .rev()
            .map(|i| Block::new(spec.level_block(spec.decoder_channels(i)), ch(i), next_seed()))
            .collect::<Result<Vec<_>>>()?;
        let head = ConvLayer::init(ch(0), 1, LayerSpec::square(1, 1), Padding::Same, false, next_seed())?;

        let net = DuckNet {
            spec,
            stem,
            secondary,
            down,
            encoder,
            bottleneck,
            decoder,
            head,
            probs: None,
        };
        net.check_fusions()?;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    /// Walks the graph's shapes layer by layer and rejects any fusion whose
    /// operands differ.
    fn check_fusions(&self) -> Result<()> {
        let (h, w) = self.spec.input_size;
        let input = Shape4::new(1, self.spec.input_channels, h, w);
        let with_channels = |s: Shape4, c: usize| Shape4::new(s.n, c, s.h, s.w);
        let mismatch =
            |what: String, a: Shape4, b: Shape4| Error::shape("build_network", "fusion", format!("{what}: {a} + {b}"));

        let mut skips = vec![with_channels(input, self.stem.out_channels())];
        let mut secondary = input;
        let mut level_in = input;
        for i in 0..self.spec.depth {
            secondary = self.secondary[i].output_shape(secondary)?;
            let main = self.down[i].output_shape(*skips.last().unwrap())?;
            if main != secondary {
                return Err(mismatch(format!("encoder level {}", i + 1), main, secondary));
            }
            level_in = main;
            if i + 1 < self.spec.depth {
                skips.push(with_channels(main, self.encoder[i].out_channels()));
            }
        }
        let mut current = level_in;
        for b in &self.bottleneck {
            if current.c != b.in_channels() {
                return Err(mismatch(
                    "bottleneck".into(),
                    current,
                    with_channels(current, b.in_channels()),
                ));
            }
            current = with_channels(current, b.out_channels());
        }
        for (block, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = Shape4::new(current.n, current.c, current.h * 2, current.w * 2);
            if up != *skip || block.in_channels() != skip.c {
                return Err(mismatch("decoder".into(), up, *skip));
            }
            current = with_channels(up, block.out_channels());
        }
        if current.c != self.head.params.in_channels() {
            return Err(mismatch(
                "head".into(),
                current,
                with_channels(current, self.head.params.in_channels()),
            ));
        }
        Ok(())
    }

    /// Shape of the tensor entering the bottleneck, computed from the built
    /// downsampling layers.
    pub fn bottleneck_shape(&self, batch: usize) -> Result<Shape4> {
        let (h, w) = self.spec.input_size;
        let mut s = Shape4::new(batch, self.spec.input_channels, h, w);
        for conv in &self.secondary {
            s = conv.output_shape(s)?;
        }
        Ok(s)
    }

    pub fn forward(&mut self, images: &Tensor4<S>, mode: Mode) -> Result<Tensor4<S>> {
        let s = images.shape();
        let m = 1usize << self.spec.depth;
        if s.c != self.spec.input_channels
            || !s.h.is_multiple_of(m)
            || !s.w.is_multiple_of(m)
            || s.h == 0
            || s.w == 0
            || s.n == 0
        {
            return Err(Error::shape(
                "forward",
                if s.c != self.spec.input_channels {
                    "channel"
                } else {
                    "spatial"
                },
                format!(
                    "input {s} needs {} channels and sides divisible by {m}",
                    self.spec.input_channels
                ),
            ));
        }
        let d = self.spec.depth;
        let mut skips = Vec::with_capacity(d);
        skips.push(self.stem.forward(images, mode)?);
        let mut secondary = images.clone();
        let mut level_in = images.clone();
        for i in 0..d {
            secondary = self.secondary[i].forward(&secondary, mode)?;
            let main = self.down[i].forward(skips.last().unwrap(), mode)?;
            level_in = add(&main, &secondary)?;
            if i + 1 < d {
                skips.push(self.encoder[i].forward(&level_in, mode)?);
            }
        }
        let mut x = level_in;
        for b in &mut self.bottleneck {
            x = b.forward(&x, mode)?;
        }
        for (block, skip) in self.decoder.iter_mut().zip(skips.iter().rev()) {
            let u = add(&upsample_nearest_2x(&x), skip)?;
            x = block.forward(&u, mode)?;
        }
        let logits = self.head.forward(&x, mode)?;
        let probs = activation(&logits, Activation::Sigmoid);
        self.probs = (mode == Mode::Train).then(|| probs.clone());
        Ok(probs)
    }

    /// Backpropagates `grad` (w.r.t. the probabilities of the last training
    /// forward), accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        let probs = self
            .probs
            .as_ref()
            .ok_or_else(|| Error::Config("backward called without a training forward pass".into()))?;
        let d = self.spec.depth;
        let g_logits = activation_backward(probs, grad, Activation::Sigmoid)?;
        let mut g = self.head.backward(&g_logits)?;

        // skip_grads[i]: gradient reaching encoder output t_i through the decoder
        let mut skip_grads: Vec<Option<Tensor4<S>>> = vec![None; d];
        for (k, block) in self.decoder.iter_mut().enumerate().rev() {
            let level = d - 1 - k;
            let gu = block.backward(&g)?;
            g = upsample_nearest_2x_backward(&gu)?;
            skip_grads[level] = Some(gu);
        }
        for b in self.bottleneck.iter_mut().rev() {
            g = b.backward(&g)?;
        }

        // g is now the gradient w.r.t. the level-d fusion output
        let mut g_level = g;
        let mut g_secondary: Option<Tensor4<S>> = None;
        for i in (0..d).rev() {
            let g_sec_out = match g_secondary.take() {
                Some(extra) => add(&g_level, &extra)?,
                None => g_level.clone(),
            };
            g_secondary = Some(self.secondary[i].backward(&g_sec_out)?);
            let g_from_down = self.down[i].backward(&g_level)?;
            let g_t = match skip_grads[i].take() {
                Some(s) => add(&s, &g_from_down)?,
                None => g_from_down,
            };
            g_level = if i == 0 {
                self.stem.backward(&g_t)?
            } else {
                self.encoder[i - 1].backward(&g_t)?
            };
        }
        let g_input = g_secondary.expect("depth ≥ 1");
        add(&g_level, &g_input)
    }

    /// Visits every parameter and buffer in a stable order.
    pub fn visit(&mut self, f: &mut Visitor<'_, S>) {
        self.stem.visit("stem", f);
        for i in 0..self.spec.depth {
            self.secondary[i].visit(&format!("secondary{}", i + 1), f);
            self.down[i].visit(&format!("down{}", i + 1), f);
            if i + 1 < self.spec.depth {
                self.encoder[i].visit(&format!("encoder{}", i + 1), f);
            }
        }
        for (j, b) in self.bottleneck.iter_mut().enumerate() {
            b.visit(&format!("bottleneck{j}"), f);
        }
        let d = self.spec.depth;
        for (k, b) in self.decoder.iter_mut().enumerate() {
            b.visit(&format!("decoder{}", d - 1 - k), f);
        }
        self.head.visit("head", f);
    }

    /// Which relu units were active in the last training forward.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        self.stem.relu_pattern(&mut out);
        for b in self.encoder.iter().chain(&self.bottleneck).chain(&self.decoder) {
            b.relu_pattern(&mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, _, t| t.zero_grad());
    }

    pub fn param_count(&mut self) -> ParamCount {
        let mut count = ParamCount::default();
        self.visit(&mut |name, role, t| {
            if role == ParamRole::Trainable {
                if name.ends_with(".gamma") || name.ends_with(".beta") {
                    count.norm += t.shape().len();
                } else {
                    count.conv += t.shape().len();
                }
            }
        });
        count
    }
}

/// Builds a randomly initialised network.
pub fn build_network<S: Scalar>(spec: NetSpec, seed: u64) -> Result<DuckNet<S>> {
    DuckNet::new(spec, seed)
}
