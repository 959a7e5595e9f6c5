use crate::blocks::{build_duck_with, build_simple_double, BlockKind, BlockSpec, DEFAULT_SEPARATED_N};
use crate::error::{Error, Result};
use crate::tensor::{conv_output_dim, Padding, Shape4};

/// Architecture hyper-parameters of the full encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    /// Base filter count F; level i uses F·2^i channels.
    pub filters: usize,
    /// Number of 2× downsampling levels.
    pub depth: usize,
    pub input_channels: usize,
    pub input_size: (usize, usize),
    /// `Duck` or the `SimpleDouble` ablation baseline.
    pub block_kind: BlockKind,
    pub separated_n: usize,
}

impl NetSpec {
    pub const DEFAULT_DEPTH: usize = 5;
    pub const DEFAULT_INPUT: usize = 352;

    pub fn new(filters: usize, input_size: (usize, usize)) -> Self {
        NetSpec {
            filters,
            depth: Self::DEFAULT_DEPTH,
            input_channels: 3,
            input_size,
            block_kind: BlockKind::Duck,
            separated_n: DEFAULT_SEPARATED_N,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_block(mut self, kind: BlockKind) -> Self {
        self.block_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.depth == 0 || self.input_channels == 0 {
            return Err(Error::Config(format!(
                "filters, depth and input channels must be positive: {self:?}"
            )));
        }
        if !matches!(self.block_kind, BlockKind::Duck | BlockKind::SimpleDouble) {
            return Err(Error::Config(format!(
                "network blocks must be duck or simple, got {}",
                self.block_kind.name()
            )));
        }
        let m = 1usize << self.depth;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be a positive multiple of {m} (2^{})",
                self.depth
            )));
        }
        Ok(())
    }

    /// Channels of encoder level `level`.
    pub fn level_channels(&self, level: usize) -> usize {
        self.filters << level
    }

    /// Output channels of the decoder block at `level`: F·2^max(level−1, 0).
    pub fn decoder_channels(&self, level: usize) -> usize {
        self.filters << level.saturating_sub(1)
    }

    pub fn level_block(&self, filters: usize) -> BlockSpec {
        match self.block_kind {
            BlockKind::SimpleDouble => build_simple_double(filters),
            _ => build_duck_with(filters, self.separated_n).expect("separated length validated"),
        }
    }

    /// Spatial extent after `levels` 2×2/stride-2 reductions.
    pub fn spatial_at(&self, levels: usize) -> Option<(usize, usize)> {
        let mut hw = self.input_size;
        for _ in 0..levels {
            hw = (
                conv_output_dim(hw.0, 2, 2, 1, Padding::Valid)?.0,
                conv_output_dim(hw.1, 2, 2, 1, Padding::Valid)?.0,
            );
        }
        Some(hw)
    }

    /// Shape entering the bottleneck for a batch of `n`.
    pub fn bottleneck_shape(&self, n: usize) -> Result<Shape4> {
        self.validate()?;
        let (h, w) = self.spatial_at(self.depth).expect("validated size");
        Ok(Shape4::new(n, self.level_channels(self.depth), h, w))
    }

    /// Every elementwise fusion in the graph as (name, left, right) shapes for
    /// a batch of one.
    pub fn fusion_points(&self) -> Result<Vec<(String, Shape4, Shape4)>> {
        self.validate()?;
        let mut points = Vec::new();
        for i in 1..=self.depth {
            let (h, w) = self.spatial_at(i).expect("validated size");
            let s = Shape4::new(1, self.level_channels(i), h, w);
            points.push((format!("encoder level {i}"), s, s));
        }
        let mut prev_channels = self.level_channels(self.depth - 1);
        for i in (0..self.depth).rev() {
            let (h, w) = self.spatial_at(i).expect("validated size");
            let up = Shape4::new(1, prev_channels, h, w);
            let skip = Shape4::new(1, self.level_channels(i), h, w);
            points.push((format!("decoder level {i}"), up, skip));
            prev_channels = self.decoder_channels(i);
        }
        Ok(points)
    }
}
