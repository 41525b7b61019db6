use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three local convolutional detectors. They differ in depth, width and
/// topology so that transfer between them is not symmetric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    /// Three convolutions, single dense head.
    A1,
    /// Five convolutions, two-layer dense head.
    A2,
    /// Stem, one residual block, strided convolution.
    A3,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::A1, ArchId::A2, ArchId::A3];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::A1 => "A1",
            ArchId::A2 => "A2",
            ArchId::A3 => "A3",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(ArchId::A1),
            "A2" => Ok(ArchId::A2),
            "A3" => Ok(ArchId::A3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture {s:?} (expected A1, A2 or A3)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Maps pixel values from [0, 255] to [-1, 1].
    Normalize,
    Conv {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    AvgPool(usize),
    MaxPool(usize),
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// `body(x) + x`; the body must preserve shape.
    Residual(Vec<Layer>),
    Sigmoid,
}

impl Layer {
    fn conv(in_channels: usize, filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Layer::Conv {
            in_channels,
            filters,
            kernel,
            stride,
            padding,
        }
    }

    /// Weight then bias shapes, in the order parameters are stored.
    pub fn param_shapes(&self, out: &mut Vec<Vec<usize>>) {
        match self {
            Layer::Conv {
                in_channels,
                filters,
                kernel,
                ..
            } => {
                out.push(vec![*filters, *in_channels, *kernel, *kernel]);
                out.push(vec![*filters]);
            }
            Layer::Dense { inputs, outputs } => {
                out.push(vec![*outputs, *inputs]);
                out.push(vec![*outputs]);
            }
            Layer::Residual(body) => body.iter().for_each(|l| l.param_shapes(out)),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorArch {
    pub id: ArchId,
    pub resolution: usize,
    pub layers: Vec<Layer>,
}

impl DetectorArch {
    /// Builds the layer list for a square input of side `resolution`
    /// (a positive multiple of 16).
    pub fn new(id: ArchId, resolution: usize) -> Result<Self> {
        if resolution == 0 || resolution % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "detector resolution must be a positive multiple of 16, got {resolution}"
            )));
        }
        let side = resolution / 16;
        let flat = 16 * side * side;
        use Layer::*;
        let layers = match id {
            ArchId::A1 => vec![
                Normalize,
                Layer::conv(3, 8, 4, 2, 1),
                Relu,
                AvgPool(2),
                Layer::conv(8, 16, 3, 1, 1),
                Relu,
                AvgPool(2),
                Layer::conv(16, 16, 3, 1, 1),
                Relu,
                AvgPool(2),
                Flatten,
                Dense {
                    inputs: flat,
                    outputs: 1,
                },
                Sigmoid,
            ],
            ArchId::A2 => vec![
                Normalize,
                Layer::conv(3, 6, 4, 2, 1),
                Relu,
                AvgPool(2),
                Layer::conv(6, 12, 3, 1, 1),
                Relu,
                Layer::conv(12, 12, 3, 1, 1),
                Relu,
                AvgPool(2),
                Layer::conv(12, 16, 3, 1, 1),
                Relu,
                Layer::conv(16, 16, 3, 1, 1),
                Relu,
                AvgPool(2),
                Flatten,
                Dense {
                    inputs: flat,
                    outputs: 16,
                },
                Relu,
                Dense {
                    inputs: 16,
                    outputs: 1,
                },
                Sigmoid,
            ],
            ArchId::A3 => vec![
                Normalize,
                Layer::conv(3, 8, 4, 2, 1),
                Relu,
                AvgPool(2),
                Residual(vec![Layer::conv(8, 8, 3, 1, 1), Relu, Layer::conv(8, 8, 3, 1, 1)]),
                Relu,
                MaxPool(2),
                Layer::conv(8, 16, 4, 2, 1),
                Relu,
                Flatten,
                Dense {
                    inputs: flat,
                    outputs: 1,
                },
                Sigmoid,
            ],
        };
        Ok(Self {
            id,
            resolution,
            layers,
        })
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.param_shapes(&mut out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}
