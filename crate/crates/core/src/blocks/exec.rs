use super::spec::{BlockSpec, LayerSpec, NodeSpec, ParamCount};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    activation, activation_backward, add, batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
    init_weights, Activation, BatchNormState, ConvParams, Mode, Padding, Scalar, Shape4, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Trainable,
    /// Running statistics: saved with the model, never optimised.
    Buffer,
}

/// Named access to every parameter tensor, in a stable order.
pub type Visitor<'a, S> = dyn FnMut(&str, ParamRole, &mut Tensor4<S>) + 'a;

fn missing_forward(layer: &'static str) -> Error {
    Error::Config(format!(
        "{layer}: backward called without a cached training forward pass"
    ))
}

/// A convolution with optional fused relu; caches what backward needs.
#[derive(Debug, Clone)]
pub struct ConvLayer<S> {
    pub params: ConvParams<S>,
    pub relu: bool,
    input: Option<Tensor4<S>>,
    output: Option<Tensor4<S>>,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(params: ConvParams<S>, relu: bool) -> Self {
        ConvLayer {
            params,
            relu,
            input: None,
            output: None,
        }
    }

    /// Glorot-uniform kernel, zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        layer: LayerSpec,
        padding: Padding,
        relu: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut params = ConvParams::zeros(
            out_channels,
            in_channels,
            layer.kernel,
            layer.stride,
            layer.dilation,
            padding,
        )?;
        let shape = params.kernel.shape();
        params
            .kernel
            .data_mut()
            .copy_from_slice(&init_weights::<S>(shape, seed));
        Ok(ConvLayer::new(params, relu))
    }

    pub fn forward(&mut self, x: &Tensor4<S>, mode: Mode) -> Result<Tensor4<S>> {
        let mut y = conv2d_forward(x, &self.params)?;
        if self.relu {
            y = activation(&y, Activation::Relu);
        }
        if mode == Mode::Train {
            self.input = Some(x.clone());
            self.output = self.relu.then(|| y.clone());
        } else {
            self.input = None;
            self.output = None;
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        let input = self.input.as_ref().ok_or_else(|| missing_forward("conv"))?;
        let pre = match (&self.output, self.relu) {
            (Some(y), true) => activation_backward(y, grad, Activation::Relu)?,
            (None, true) => return Err(missing_forward("conv")),
            _ => grad.clone(),
        };
        let g = conv2d_backward(input, &self.params, &pre)?;
        self.params.kernel.accumulate_grad(g.kernel.data())?;
        self.params.bias.accumulate_grad(g.bias.data())?;
        Ok(g.input)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, S>) {
        f(
            &format!("{prefix}.kernel"),
            ParamRole::Trainable,
            &mut self.params.kernel,
        );
        f(&format!("{prefix}.bias"), ParamRole::Trainable, &mut self.params.bias);
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.params.output_shape(input)
    }

    /// Appends which relu units were active in the last training forward.
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        if let Some(y) = &self.output {
            out.extend(y.data().iter().map(|&v| v > S::zero()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormLayer<S> {
    pub state: BatchNormState<S>,
    input: Option<Tensor4<S>>,
}

impl<S: Scalar> NormLayer<S> {
    pub fn new(channels: usize) -> Self {
        NormLayer {
            state: BatchNormState::new(channels),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<S>, mode: Mode) -> Result<Tensor4<S>> {
        self.state.mode = mode;
        let y = batchnorm_forward(x, &mut self.state)?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        let input = self.input.as_ref().ok_or_else(|| missing_forward("batchnorm"))?;
        let g = batchnorm_backward(input, &self.state, grad)?;
        self.state.gamma.accumulate_grad(g.gamma.data())?;
        self.state.beta.accumulate_grad(g.beta.data())?;
        Ok(g.input)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, S>) {
        f(&format!("{prefix}.gamma"), ParamRole::Trainable, &mut self.state.gamma);
        f(&format!("{prefix}.beta"), ParamRole::Trainable, &mut self.state.beta);
        f(
            &format!("{prefix}.running_mean"),
            ParamRole::Buffer,
            &mut self.state.running_mean,
        );
        f(
            &format!("{prefix}.running_var"),
            ParamRole::Buffer,
            &mut self.state.running_var,
        );
    }
}

/// Executable instance of a [`NodeSpec`].
#[derive(Debug, Clone)]
pub enum Node<S> {
    Conv(ConvLayer<S>),
    Norm(NormLayer<S>),
    Seq(Vec<Node<S>>),
    Sum(Vec<(String, Node<S>)>),
}

impl<S: Scalar> Node<S> {
    /// Instantiates `spec` for `in_channels` inputs; returns the node and its
    /// output channel count. `counter` numbers convolutions for seeding.
    pub fn build(spec: &NodeSpec, in_channels: usize, seed: u64, counter: &mut u64) -> Result<(Self, usize)> {
        Ok(match spec {
            NodeSpec::Conv { filters, layer, relu } => {
                *counter += 1;
                let conv = ConvLayer::init(
                    in_channels,
                    *filters,
                    *layer,
                    Padding::Same,
                    *relu,
                    seed::mix(seed, *counter),
                )?;
                (Node::Conv(conv), *filters)
            }
            NodeSpec::Norm => (Node::Norm(NormLayer::new(in_channels)), in_channels),
            NodeSpec::Seq(nodes) => {
                let mut c = in_channels;
                let mut built = Vec::with_capacity(nodes.len());
                for n in nodes {
                    let (node, out) = Node::build(n, c, seed, counter)?;
                    built.push(node);
                    c = out;
                }
                (Node::Seq(built), c)
            }
            NodeSpec::Sum(branches) => {
                let mut out_channels = None;
                let mut built = Vec::with_capacity(branches.len());
                for (name, n) in branches {
                    let (node, out) = Node::build(n, in_channels, seed, counter)?;
                    if *out_channels.get_or_insert(out) != out {
                        return Err(Error::shape(
                            "block",
                            "channel",
                            format!("branch {name} produces {out} channels, expected {out_channels:?}"),
                        ));
                    }
                    built.push((name.clone(), node));
                }
                (Node::Sum(built), out_channels.unwrap_or(in_channels))
            }
        })
    }

    pub fn forward(&mut self, x: &Tensor4<S>, mode: Mode) -> Result<Tensor4<S>> {
        match self {
            Node::Conv(c) => c.forward(x, mode),
            Node::Norm(n) => n.forward(x, mode),
            Node::Seq(nodes) => {
                let mut iter = nodes.iter_mut();
                let Some(first) = iter.next() else {
                    return Ok(x.clone());
                };
                let mut y = first.forward(x, mode)?;
                for n in iter {
                    y = n.forward(&y, mode)?;
                }
                Ok(y)
            }
            Node::Sum(branches) => {
                let mut total: Option<Tensor4<S>> = None;
                for (_, b) in branches.iter_mut() {
                    let y = b.forward(x, mode)?;
                    total = Some(match total {
                        None => y,
                        Some(t) => add(&t, &y)?,
                    });
                }
                Ok(total.unwrap_or_else(|| x.clone()))
            }
        }
    }

    pub fn backward(&mut self, grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        match self {
            Node::Conv(c) => c.backward(grad),
            Node::Norm(n) => n.backward(grad),
            Node::Seq(nodes) => {
                let mut g = grad.clone();
                for n in nodes.iter_mut().rev() {
                    g = n.backward(&g)?;
                }
                Ok(g)
            }
            Node::Sum(branches) => {
                let mut total: Option<Tensor4<S>> = None;
                for (_, b) in branches.iter_mut() {
                    let g = b.backward(grad)?;
                    total = Some(match total {
                        None => g,
                        Some(t) => add(&t, &g)?,
                    });
                }
                Ok(total.unwrap_or_else(|| grad.clone()))
            }
        }
    }

    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        match self {
            Node::Conv(c) => c.relu_pattern(out),
            Node::Norm(_) => {}
            Node::Seq(nodes) => nodes.iter().for_each(|n| n.relu_pattern(out)),
            Node::Sum(branches) => branches.iter().for_each(|(_, n)| n.relu_pattern(out)),
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, S>) {
        match self {
            Node::Conv(c) => c.visit(prefix, f),
            Node::Norm(n) => n.visit(prefix, f),
            Node::Seq(nodes) => {
                for (i, n) in nodes.iter_mut().enumerate() {
                    n.visit(&format!("{prefix}.{i}"), f);
                }
            }
            Node::Sum(branches) => {
                for (name, n) in branches.iter_mut() {
                    n.visit(&format!("{prefix}.{name}"), f);
                }
            }
        }
    }
}

/// A block spec instantiated with parameters for a given input width.
#[derive(Debug, Clone)]
pub struct Block<S> {
    spec: BlockSpec,
    node: Node<S>,
    in_channels: usize,
    out_channels: usize,
}

impl<S: Scalar> Block<S> {
    pub fn new(spec: BlockSpec, in_channels: usize, seed: u64) -> Result<Self> {
        let mut counter = 0;
        let (node, out_channels) = Node::build(&spec.graph(), in_channels, seed, &mut counter)?;
        Ok(Block {
            spec,
            node,
            in_channels,
            out_channels,
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn param_count(&self) -> ParamCount {
        self.spec.param_count(self.in_channels)
    }

    pub fn forward(&mut self, x: &Tensor4<S>, mode: Mode) -> Result<Tensor4<S>> {
        if x.shape().c != self.in_channels {
            return Err(Error::shape(
                "block",
                "channel",
                format!(
                    "input {} for a block built for {} channels",
                    x.shape(),
                    self.in_channels
                ),
            ));
        }
        self.node.forward(x, mode)
    }

    /// Propagates `grad` (w.r.t. the last training-mode output), accumulating
    /// parameter gradients; returns the gradient w.r.t. the block input.
    pub fn backward(&mut self, grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.node.backward(grad)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, S>) {
        self.node.visit(prefix, f);
    }

    pub fn zero_grad(&mut self) {
        self.visit("", &mut |_, _, t| t.zero_grad());
    }

    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        self.node.relu_pattern(out);
    }
}

/// Runs `block` forward on `input`.
pub fn run_block<S: Scalar>(block: &mut Block<S>, input: &Tensor4<S>, mode: Mode) -> Result<Tensor4<S>> {
    block.forward(input, mode)
}
