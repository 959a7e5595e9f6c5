use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Residual,
    Midscope,
    Widescope,
    Separated,
    Duck,
    /// Two plain 3×3 convolutions; the drop-in ablation baseline for `Duck`.
    SimpleDouble,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Residual => "residual",
            BlockKind::Midscope => "midscope",
            BlockKind::Widescope => "widescope",
            BlockKind::Separated => "separated",
            BlockKind::Duck => "duck",
            BlockKind::SimpleDouble => "simple",
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BlockKind::Residual,
            BlockKind::Midscope,
            BlockKind::Widescope,
            BlockKind::Separated,
            BlockKind::Duck,
            BlockKind::SimpleDouble,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown block kind {s:?}")))
    }
}

/// One convolution of a block's main path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub stride: (usize, usize),
}

impl LayerSpec {
    pub const fn new(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        LayerSpec {
            kernel,
            dilation,
            stride: (1, 1),
        }
    }

    pub const fn square(k: usize, d: usize) -> Self {
        Self::new((k, k), (d, d))
    }
}

pub const DEFAULT_SEPARATED_N: usize = 13;
pub const WIDESCOPE_DILATIONS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub filters: usize,
    /// Main path of one unit (one residual unit for `Residual`; empty for `Duck`).
    pub layers: Vec<LayerSpec>,
    /// Number of chained units (residual stacks only).
    pub repeat: usize,
    /// Kernel length of the separated branch.
    pub separated_n: usize,
    /// Parallel branches, in summation order (`Duck` only).
    pub branches: Vec<BlockSpec>,
}

fn assert_filters(filters: usize) {
    assert!(filters >= 1, "a block needs at least one filter");
}

fn chain(kind: BlockKind, filters: usize, layers: Vec<LayerSpec>) -> BlockSpec {
    assert_filters(filters);
    BlockSpec {
        kind,
        filters,
        layers,
        repeat: 1,
        separated_n: 0,
        branches: Vec::new(),
    }
}

/// Two 3×3 conv+relu layers with a linear 1×1 shortcut, summed, then normalised.
pub fn build_residual(filters: usize) -> BlockSpec {
    build_residual_stack(filters, 1)
}

/// `repeat` residual units chained output→input.
pub fn build_residual_stack(filters: usize, repeat: usize) -> BlockSpec {
    assert!(repeat >= 1, "a residual stack needs at least one unit");
    BlockSpec {
        repeat,
        ..chain(BlockKind::Residual, filters, vec![LayerSpec::square(3, 1); 2])
    }
}

pub fn build_midscope(filters: usize) -> BlockSpec {
    chain(
        BlockKind::Midscope,
        filters,
        vec![LayerSpec::square(3, 1), LayerSpec::square(3, 2)],
    )
}

pub fn build_widescope(filters: usize) -> BlockSpec {
    build_widescope_with(filters, &WIDESCOPE_DILATIONS)
}

pub fn build_widescope_with(filters: usize, dilations: &[usize]) -> BlockSpec {
    chain(
        BlockKind::Widescope,
        filters,
        dilations.iter().map(|&d| LayerSpec::square(3, d)).collect(),
    )
}

/// A 1×N then N×1 conv+relu pair. `n` must be odd and at least 3.
pub fn build_separated(filters: usize, n: usize) -> Result<BlockSpec> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "separated block needs an odd kernel length ≥ 3, got {n}"
        )));
    }
    Ok(BlockSpec {
        separated_n: n,
        ..chain(
            BlockKind::Separated,
            filters,
            vec![LayerSpec::new((1, n), (1, 1)), LayerSpec::new((n, 1), (1, 1))],
        )
    })
}

pub fn build_duck(filters: usize) -> BlockSpec {
    build_duck_with(filters, DEFAULT_SEPARATED_N).expect("default separated length is valid")
}

/// Six parallel branches (widescope, midscope, residual ×1/×2/×3, separated)
/// between an input and an output normalisation.
pub fn build_duck_with(filters: usize, separated_n: usize) -> Result<BlockSpec> {
    assert_filters(filters);
    let branches = vec![
        build_widescope(filters),
        build_midscope(filters),
        build_residual_stack(filters, 1),
        build_residual_stack(filters, 2),
        build_residual_stack(filters, 3),
        build_separated(filters, separated_n)?,
    ];
    Ok(BlockSpec {
        kind: BlockKind::Duck,
        filters,
        layers: Vec::new(),
        repeat: 1,
        separated_n,
        branches,
    })
}

pub fn build_simple_double(filters: usize) -> BlockSpec {
    chain(BlockKind::SimpleDouble, filters, vec![LayerSpec::square(3, 1); 2])
}

/// Declarative computation graph of a block.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSpec {
    Conv {
        filters: usize,
        layer: LayerSpec,
        relu: bool,
    },
    Norm,
    Seq(Vec<NodeSpec>),
    /// Branches applied to the same input; outputs summed in list order.
    Sum(Vec<(String, NodeSpec)>),
}

/// Trainable parameter counts split by layer type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParamCount {
    /// Convolution weights and biases.
    pub conv: usize,
    /// Normalisation scale and shift.
    pub norm: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.conv + self.norm
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;
    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            conv: self.conv + o.conv,
            norm: self.norm + o.norm,
        }
    }
}

impl NodeSpec {
    fn relu_chain(filters: usize, layers: &[LayerSpec]) -> Vec<NodeSpec> {
        layers
            .iter()
            .map(|&layer| NodeSpec::Conv {
                filters,
                layer,
                relu: true,
            })
            .collect()
    }

    /// Receptive-field growth `Σ (k−1)·d` per axis (max over parallel branches).
    pub fn rf_growth(&self) -> (usize, usize) {
        match self {
            NodeSpec::Conv { layer, .. } => (
                (layer.kernel.0 - 1) * layer.dilation.0,
                (layer.kernel.1 - 1) * layer.dilation.1,
            ),
            NodeSpec::Norm => (0, 0),
            NodeSpec::Seq(nodes) => nodes.iter().fold((0, 0), |acc, n| {
                let g = n.rf_growth();
                (acc.0 + g.0, acc.1 + g.1)
            }),
            NodeSpec::Sum(branches) => branches.iter().fold((0, 0), |acc, (_, n)| {
                let g = n.rf_growth();
                (acc.0.max(g.0), acc.1.max(g.1))
            }),
        }
    }

    /// Output channel count and trainable parameters for `in_channels` inputs.
    pub fn param_count(&self, in_channels: usize) -> (usize, ParamCount) {
        match self {
            NodeSpec::Conv { filters, layer, .. } => (
                *filters,
                ParamCount {
                    conv: filters * (in_channels * layer.kernel.0 * layer.kernel.1 + 1),
                    norm: 0,
                },
            ),
            NodeSpec::Norm => (
                in_channels,
                ParamCount {
                    conv: 0,
                    norm: 2 * in_channels,
                },
            ),
            NodeSpec::Seq(nodes) => nodes.iter().fold((in_channels, ParamCount::default()), |(c, acc), n| {
                let (out, p) = n.param_count(c);
                (out, acc + p)
            }),
            NodeSpec::Sum(branches) => {
                branches
                    .iter()
                    .fold((in_channels, ParamCount::default()), |(_, acc), (_, n)| {
                        let (out, p) = n.param_count(in_channels);
                        (out, acc + p)
                    })
            }
        }
    }

    fn write_indented(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        let pad = "  ".repeat(depth);
        match self {
            NodeSpec::Conv { filters, layer, relu } => writeln!(
                f,
                "{pad}conv {}x{} dil {}x{} stride {}x{} filters {}{}",
                layer.kernel.0,
                layer.kernel.1,
                layer.dilation.0,
                layer.dilation.1,
                layer.stride.0,
                layer.stride.1,
                filters,
                if *relu { " relu" } else { "" }
            ),
            NodeSpec::Norm => writeln!(f, "{pad}batchnorm"),
            NodeSpec::Seq(nodes) => nodes.iter().try_for_each(|n| n.write_indented(f, depth)),
            NodeSpec::Sum(branches) => {
                writeln!(f, "{pad}sum of {}", branches.len())?;
                for (name, n) in branches {
                    writeln!(f, "{pad}  branch {name}")?;
                    n.write_indented(f, depth + 2)?;
                }
                Ok(())
            }
        }
    }
}

impl BlockSpec {
    pub fn graph(&self) -> NodeSpec {
        let f = self.filters;
        match self.kind {
            BlockKind::Residual => {
                let unit = NodeSpec::Seq(vec![
                    NodeSpec::Sum(vec![
                        ("main".into(), NodeSpec::Seq(NodeSpec::relu_chain(f, &self.layers))),
                        (
                            "shortcut".into(),
                            NodeSpec::Conv {
                                filters: f,
                                layer: LayerSpec::square(1, 1),
                                relu: false,
                            },
                        ),
                    ]),
                    NodeSpec::Norm,
                ]);
                NodeSpec::Seq(vec![unit; self.repeat])
            }
            BlockKind::Midscope | BlockKind::Widescope | BlockKind::Separated | BlockKind::SimpleDouble => {
                let mut nodes = NodeSpec::relu_chain(f, &self.layers);
                nodes.push(NodeSpec::Norm);
                NodeSpec::Seq(nodes)
            }
            BlockKind::Duck => NodeSpec::Seq(vec![
                NodeSpec::Norm,
                NodeSpec::Sum(self.branches.iter().map(|b| (b.branch_label(), b.graph())).collect()),
                NodeSpec::Norm,
            ]),
        }
    }

    fn branch_label(&self) -> String {
        match self.kind {
            BlockKind::Residual => format!("residual{}", self.repeat),
            k => k.name().to_string(),
        }
    }

    /// Stride-1 receptive field (rows, cols).
    pub fn receptive_field(&self) -> (usize, usize) {
        let (gh, gw) = self.graph().rf_growth();
        (1 + gh, 1 + gw)
    }

    pub fn param_count(&self, in_channels: usize) -> ParamCount {
        self.graph().param_count(in_channels).1
    }
}

pub fn receptive_field(spec: &BlockSpec) -> (usize, usize) {
    spec.receptive_field()
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "block {} filters {}", self.branch_label(), self.filters)?;
        self.graph().write_indented(f, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_kernel_sizes() {
        assert_eq!(build_residual(4).receptive_field(), (5, 5));
        assert_eq!(build_residual_stack(4, 2).receptive_field(), (9, 9));
        assert_eq!(build_residual_stack(4, 3).receptive_field(), (13, 13));
        assert_eq!(build_midscope(4).receptive_field(), (7, 7));
        assert_eq!(build_widescope(4).receptive_field(), (15, 15));
        assert_eq!(build_widescope_with(4, &[1, 1, 1]).receptive_field(), (7, 7));
        assert_eq!(build_separated(4, 13).unwrap().receptive_field(), (13, 13));
        assert_eq!(build_separated(4, 5).unwrap().receptive_field(), (5, 5));
        assert_eq!(build_duck(4).receptive_field(), (15, 15));
        assert_eq!(build_simple_double(4).receptive_field(), (5, 5));
        let single = chain(BlockKind::SimpleDouble, 1, vec![LayerSpec::square(3, 1)]);
        assert_eq!(single.receptive_field(), (3, 3));
    }

    #[test]
    fn duck_has_six_branches_in_fixed_order() {
        let d = build_duck(5);
        let kinds: Vec<_> = d.branches.iter().map(|b| (b.kind, b.repeat)).collect();
        assert_eq!(
            kinds,
            vec![
                (BlockKind::Widescope, 1),
                (BlockKind::Midscope, 1),
                (BlockKind::Residual, 1),
                (BlockKind::Residual, 2),
                (BlockKind::Residual, 3),
                (BlockKind::Separated, 1),
            ]
        );
        assert!(d.branches.iter().all(|b| b.filters == 5));
        assert!(d.branches.iter().flat_map(|b| &b.layers).all(|l| l.stride == (1, 1)));
    }

    #[test]
    fn separated_rejects_even_or_short_kernels() {
        assert!(build_separated(3, 4).is_err());
        assert!(build_separated(3, 1).is_err());
        assert!(build_duck_with(3, 12).is_err());
    }

    #[test]
    fn midscope_parameter_count() {
        for (cin, f) in [(3, 8), (16, 16), (1, 1)] {
            let p = build_midscope(f).param_count(cin);
            assert_eq!(p.conv, f * (cin * 9 + 1) + f * (f * 9 + 1));
            assert_eq!(p.norm, 2 * f);
        }
    }

    #[test]
    fn simple_double_is_cheaper_than_duck() {
        for f in [1, 3, 17, 34] {
            for cin in [3, f] {
                assert!(build_simple_double(f).param_count(cin).total() < build_duck(f).param_count(cin).total());
            }
        }
    }

    #[test]
    fn text_form_lists_layers() {
        let text = build_midscope(2).to_string();
        assert_eq!(
            text,
            "block midscope filters 2\n  conv 3x3 dil 1x1 stride 1x1 filters 2 relu\n  conv 3x3 dil 2x2 stride 1x1 filters 2 relu\n  batchnorm\n"
        );
        let duck = build_duck(2).to_string();
        assert_eq!(duck.lines().filter(|l| l.starts_with("    branch ")).count(), 6);
    }
}
