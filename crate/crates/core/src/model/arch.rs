use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution widths of the full-size blocks, each block closed by 2x2 max pooling.
pub const BLOCK_WIDTHS: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 512, 512], &[1024, 1024, 1024], &[2048, 2048, 2048]];
pub const FC_WIDTH: usize = 2048;
pub const OUTPUT_WIDTH: usize = 2;

/// How a patch is turned into network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputNorm {
    /// Raw samples in `[0, 1]`.
    None,
    /// Per patch: subtract each channel's mean, divide by the pooled standard
    /// deviation (floored at [`STD_FLOOR`]).
    #[default]
    Standardize,
}

pub const STD_FLOOR: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub include_block5: bool,
    /// Every convolution and hidden dense width is divided by this (minimum 1).
    /// 1 is the full-size network.
    pub width_divisor: usize,
    #[serde(default)]
    pub input_norm: InputNorm,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            include_block5: true,
            width_divisor: 1,
            input_norm: InputNorm::default(),
        }
    }
}

impl ArchitectureConfig {
    pub fn new(include_block5: bool, width_divisor: usize) -> Self {
        ArchitectureConfig {
            include_block5,
            width_divisor,
            input_norm: InputNorm::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_divisor == 0 {
            return Err(Error::InvalidConfig("width divisor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        if self.include_block5 {
            5
        } else {
            4
        }
    }

    /// Smallest patch side for which every pooled map stays non-empty.
    pub fn min_input(&self) -> usize {
        1 << self.block_count()
    }

    pub fn scaled(&self, width: usize) -> usize {
        (width / self.width_divisor.max(1)).max(1)
    }

    /// Scaled convolution widths, one list per block.
    pub fn conv_widths(&self) -> Vec<Vec<usize>> {
        BLOCK_WIDTHS[..self.block_count()]
            .iter()
            .map(|b| b.iter().map(|&w| self.scaled(w)).collect())
            .collect()
    }

    pub fn fc_width(&self) -> usize {
        self.scaled(FC_WIDTH)
    }
}

/// Output dimensions of one stage. Vectors have `height = width = 1` and
/// `spatial = false`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub spatial: bool,
}

impl LayerShape {
    fn spatial(name: impl Into<String>, height: usize, width: usize, channels: usize) -> Self {
        LayerShape {
            name: name.into(),
            height,
            width,
            channels,
            spatial: true,
        }
    }

    fn vector(name: impl Into<String>, len: usize) -> Self {
        LayerShape {
            name: name.into(),
            height: 1,
            width: 1,
            channels: len,
            spatial: false,
        }
    }
}

impl std::fmt::Display for LayerShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.spatial {
            write!(f, "{}: {}x{}x{}", self.name, self.height, self.width, self.channels)
        } else {
            write!(f, "{}: 1x{}", self.name, self.channels)
        }
    }
}

/// Stage-by-stage output dimensions for an `n x n x 3` input: the input, each
/// pooled block, the pooled vector, both hidden dense layers and the output.
pub fn output_shape(n: usize, config: &ArchitectureConfig) -> Result<Vec<LayerShape>> {
    config.validate()?;
    if n < config.min_input() {
        return Err(Error::InvalidInput(format!(
            "patch size {n} below the minimum {} for {} blocks",
            config.min_input(),
            config.block_count()
        )));
    }
    let mut shapes = vec![LayerShape::spatial("input", n, n, 3)];
    let mut side = n;
    let mut channels = 3;
    for (i, widths) in config.conv_widths().iter().enumerate() {
        side /= 2;
        if side == 0 {
            return Err(Error::InvalidInput(format!("patch size {n} pools to nothing in block {}", i + 1)));
        }
        channels = *widths.last().expect("blocks are non-empty");
        shapes.push(LayerShape::spatial(format!("block{}", i + 1), side, side, channels));
    }
    shapes.push(LayerShape::vector("gap", channels));
    shapes.push(LayerShape::vector("fc1", config.fc_width()));
    shapes.push(LayerShape::vector("fc2", config.fc_width()));
    shapes.push(LayerShape::vector("output", OUTPUT_WIDTH));
    Ok(shapes)
}
