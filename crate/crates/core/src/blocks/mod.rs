//! The convolutional blocks: declarative specs, receptive-field analysis and
//! their executable counterparts.

mod exec;
mod spec;

pub use exec::{run_block, Block, ConvLayer, Node, NormLayer, ParamRole, Visitor};
pub use spec::{
    build_duck, build_duck_with, build_midscope, build_residual, build_residual_stack, build_separated,
    build_simple_double, build_widescope, build_widescope_with, receptive_field, BlockKind, BlockSpec, LayerSpec,
    NodeSpec, ParamCount, DEFAULT_SEPARATED_N, WIDESCOPE_DILATIONS,
};
