use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of searchable blocks in the backbone.
pub const NUM_BLOCKS: usize = 14;
/// Number of candidate operations per block.
pub const NUM_OPS: usize = 9;
/// Spatial size of the input and output time-frequency grids.
pub const GRID: usize = 16;
/// Channel width inside the searchable region.
pub const DEFAULT_WIDTH: usize = 96;

/// Candidate operation of a searchable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    StdConvK3,
    StdConvK5,
    InvResK3E1,
    InvResK3E3,
    InvResK3E5,
    InvResK5E1,
    InvResK5E3,
    InvResK5E5,
    Skip,
}

impl BlockKind {
    /// All kinds in logit order.
    pub const ALL: [BlockKind; NUM_OPS] = [
        BlockKind::StdConvK3,
        BlockKind::StdConvK5,
        BlockKind::InvResK3E1,
        BlockKind::InvResK3E3,
        BlockKind::InvResK3E5,
        BlockKind::InvResK5E1,
        BlockKind::InvResK5E3,
        BlockKind::InvResK5E5,
        BlockKind::Skip,
    ];

    pub fn index(self) -> usize {
        BlockKind::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<BlockKind> {
        BlockKind::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::StdConvK3 => "std_conv_k3",
            BlockKind::StdConvK5 => "std_conv_k5",
            BlockKind::InvResK3E1 => "inv_res_k3_e1",
            BlockKind::InvResK3E3 => "inv_res_k3_e3",
            BlockKind::InvResK3E5 => "inv_res_k3_e5",
            BlockKind::InvResK5E1 => "inv_res_k5_e1",
            BlockKind::InvResK5E3 => "inv_res_k5_e3",
            BlockKind::InvResK5E5 => "inv_res_k5_e5",
            BlockKind::Skip => "skip",
        }
    }

    /// Spatial kernel size; 0 for skip.
    pub fn kernel(self) -> usize {
        match self {
            BlockKind::StdConvK3 | BlockKind::InvResK3E1 | BlockKind::InvResK3E3 | BlockKind::InvResK3E5 => 3,
            BlockKind::StdConvK5 | BlockKind::InvResK5E1 | BlockKind::InvResK5E3 | BlockKind::InvResK5E5 => 5,
            BlockKind::Skip => 0,
        }
    }

    /// Channel expansion of an inverted residual block.
    pub fn expansion(self) -> Option<usize> {
        match self {
            BlockKind::InvResK3E1 | BlockKind::InvResK5E1 => Some(1),
            BlockKind::InvResK3E3 | BlockKind::InvResK5E3 => Some(3),
            BlockKind::InvResK3E5 | BlockKind::InvResK5E5 => Some(5),
            _ => None,
        }
    }

    /// Conv layers of this block on a `channels x size x size` map.
    pub fn conv_layers(self, prefix: &str, channels: usize, size: usize) -> Vec<LayerDims> {
        let k = self.kernel();
        match (self, self.expansion()) {
            (BlockKind::Skip, _) => Vec::new(),
            (_, None) => vec![LayerDims::conv(format!("{prefix}.conv"), channels, channels, size, k, 1)],
            (_, Some(e)) => {
                let hidden = channels * e;
                vec![
                    LayerDims::conv(format!("{prefix}.expand"), channels, hidden, size, 1, 1),
                    LayerDims::depthwise(format!("{prefix}.dw"), hidden, size, k),
                    LayerDims::conv(format!("{prefix}.project"), hidden, channels, size, 1, 1),
                ]
            }
        }
    }

    pub fn macs(self, channels: usize, size: usize) -> u64 {
        self.conv_layers("", channels, size).iter().map(count_macs).sum()
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown block kind {s:?}")))
    }
}

/// Loop bounds of one convolution: `M` output channels, `C` input channels
/// per group, `E x F` output map, `R x S` kernel, stride `U`.
///
/// Depthwise layers have `C = 1` and one group per output channel.
/// Transposed convolutions are recorded with `E x F` equal to their input
/// map, which gives the same MAC count as the scatter formulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub name: String,
    pub m: usize,
    pub c: usize,
    pub e: usize,
    pub f: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub depthwise: bool,
}

impl LayerDims {
    /// A "same"-padded convolution on a square `size` map.
    pub fn conv(name: impl Into<String>, c: usize, m: usize, size: usize, k: usize, stride: usize) -> Self {
        LayerDims { name: name.into(), m, c, e: size, f: size, r: k, s: k, stride, depthwise: false }
    }

    pub fn depthwise(name: impl Into<String>, channels: usize, size: usize, k: usize) -> Self {
        LayerDims { name: name.into(), m: channels, c: 1, e: size, f: size, r: k, s: k, stride: 1, depthwise: true }
    }

    /// `[M, C, E, F, R, S]`.
    pub fn as_array(&self) -> [usize; 6] {
        [self.m, self.c, self.e, self.f, self.r, self.s]
    }
}

/// `M * C * E * F * R * S`.
pub fn count_macs(d: &LayerDims) -> u64 {
    d.as_array().iter().map(|&v| v as u64).product()
}

/// Layer type in a [`NetworkSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
    Maxpool,
    Upsample,
    Block(BlockKind),
}

impl LayerKind {
    fn label(self) -> String {
        match self {
            LayerKind::Conv => "conv".into(),
            LayerKind::Deconv => "deconv".into(),
            LayerKind::Maxpool => "maxpool".into(),
            LayerKind::Upsample => "upsample".into(),
            LayerKind::Block(b) => b.name().into(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "conv" => LayerKind::Conv,
            "deconv" => LayerKind::Deconv,
            "maxpool" => LayerKind::Maxpool,
            "upsample" => LayerKind::Upsample,
            other => LayerKind::Block(other.parse()?),
        })
    }
}

/// One entry of the ordered layer list.
///
/// Pooling uses `kernel = stride = 2`; upsampling stores its factor in
/// `stride`. Convolutions and deconvolutions use "same" padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub relu: bool,
}

impl LayerSpec {
    fn new(name: &str, kind: LayerKind, cin: usize, cout: usize, kernel: usize, stride: usize, relu: bool) -> Self {
        LayerSpec { name: name.into(), kind, in_channels: cin, out_channels: cout, kernel, stride, relu }
    }
}

/// A fully chosen encoder/decoder network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub output_channels: usize,
    pub grid: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The fixed stem and decoder around `blocks`, all blocks at `width` channels.
    ///
    /// Stem: conv k7 to 48, maxpool 2, conv k5 to `width`, maxpool 2.
    /// Decoder: deconv k5 to 48, upsample 2, deconv k7 to 96, upsample 2,
    /// then three k3 convs to 24 planes; the last one has no ReLU.
    pub fn backbone(input_channels: usize, width: usize, blocks: &[BlockKind]) -> Self {
        let mut layers = vec![
            LayerSpec::new("stem.conv1", LayerKind::Conv, input_channels, 48, 7, 1, true),
            LayerSpec::new("stem.pool1", LayerKind::Maxpool, 48, 48, 2, 2, false),
            LayerSpec::new("stem.conv2", LayerKind::Conv, 48, width, 5, 1, true),
            LayerSpec::new("stem.pool2", LayerKind::Maxpool, width, width, 2, 2, false),
        ];
        for (i, &b) in blocks.iter().enumerate() {
            layers.push(LayerSpec::new(&format!("b{i}"), LayerKind::Block(b), width, width, b.kernel(), 1, false));
        }
        layers.extend([
            LayerSpec::new("dec.deconv1", LayerKind::Deconv, width, 48, 5, 1, true),
            LayerSpec::new("dec.up1", LayerKind::Upsample, 48, 48, 1, 2, false),
            LayerSpec::new("dec.deconv2", LayerKind::Deconv, 48, 96, 7, 1, true),
            LayerSpec::new("dec.up2", LayerKind::Upsample, 96, 96, 1, 2, false),
            LayerSpec::new("dec.conv1", LayerKind::Conv, 96, 24, 3, 1, true),
            LayerSpec::new("dec.conv2", LayerKind::Conv, 24, 24, 3, 1, true),
            LayerSpec::new("dec.conv3", LayerKind::Conv, 24, 24, 3, 1, false),
        ]);
        NetworkSpec { input_channels, output_channels: 24, grid: GRID, layers }
    }

    /// Chosen operation of every searchable block, in order.
    pub fn blocks(&self) -> Vec<BlockKind> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Block(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    /// Channel width of the searchable region.
    pub fn width(&self) -> usize {
        self.layers.iter().find(|l| l.name == "stem.conv2").map_or(DEFAULT_WIDTH, |l| l.out_channels)
    }

    /// Every convolution the network executes, with loop bounds, in order.
    pub fn conv_layers(&self) -> Vec<LayerDims> {
        let mut size = self.grid;
        let mut out = Vec::new();
        for l in &self.layers {
            match l.kind {
                LayerKind::Conv => out.push(LayerDims::conv(&l.name, l.in_channels, l.out_channels, size, l.kernel, 1)),
                LayerKind::Deconv => {
                    out.push(LayerDims::conv(&l.name, l.in_channels, l.out_channels, size, l.kernel, 1))
                }
                LayerKind::Maxpool => size /= l.stride,
                LayerKind::Upsample => size *= l.stride,
                LayerKind::Block(b) => out.extend(b.conv_layers(&l.name, l.in_channels, size)),
            }
        }
        out
    }

    /// Number of conv layers; pooling, upsampling and skip blocks count 0.
    pub fn depth(&self) -> usize {
        self.conv_layers().len()
    }

    pub fn macs(&self) -> u64 {
        network_macs(self)
    }

    /// Check that channels and spatial sizes chain from input to a
    /// `24 x grid x grid` output.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        let mut size = self.grid;
        for l in &self.layers {
            if l.in_channels != channels {
                return Err(Error::Shape(format!("{}: expects {} channels, gets {channels}", l.name, l.in_channels)));
            }
            match l.kind {
                LayerKind::Conv | LayerKind::Deconv => {
                    if l.kernel % 2 == 0 || l.stride != 1 {
                        return Err(Error::Shape(format!("{}: needs an odd kernel and stride 1", l.name)));
                    }
                }
                LayerKind::Maxpool => {
                    if l.stride == 0 || size % l.stride != 0 || l.in_channels != l.out_channels {
                        return Err(Error::Shape(format!("{}: cannot pool a {size}x{size} map", l.name)));
                    }
                    size /= l.stride;
                }
                LayerKind::Upsample => {
                    if l.stride == 0 || l.in_channels != l.out_channels {
                        return Err(Error::Shape(format!("{}: bad upsampling layer", l.name)));
                    }
                    size *= l.stride;
                }
                LayerKind::Block(_) => {
                    if l.in_channels != l.out_channels || l.stride != 1 {
                        return Err(Error::Shape(format!("{}: blocks must keep channels and size", l.name)));
                    }
                }
            }
            channels = l.out_channels;
        }
        if channels != self.output_channels || size != self.grid {
            return Err(Error::Shape(format!(
                "network ends at {channels}x{size}x{size}, expected {}x{}x{}",
                self.output_channels, self.grid, self.grid
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let file = SpecFile {
            input_channels: self.input_channels,
            output_channels: self.output_channels,
            grid: self.grid,
            layer: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    name: l.name.clone(),
                    kind: l.kind.label(),
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    stride: l.stride,
                    relu: l.relu,
                })
                .collect(),
        };
        toml::to_string(&file).expect("network spec serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text).map_err(|e| Error::Param(format!("network spec: {e}")))?;
        let layers = file
            .layer
            .into_iter()
            .map(|r| {
                Ok(LayerSpec {
                    kind: LayerKind::parse(&r.kind)?,
                    name: r.name,
                    in_channels: r.in_channels,
                    out_channels: r.out_channels,
                    kernel: r.kernel,
                    stride: r.stride,
                    relu: r.relu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec {
            input_channels: file.input_channels,
            output_channels: file.output_channels,
            grid: file.grid,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        NetworkSpec::from_toml(&text).map_err(|e| Error::format(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    input_channels: usize,
    output_channels: usize,
    grid: usize,
    layer: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    kind: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    relu: bool,
}

pub fn network_macs(spec: &NetworkSpec) -> u64 {
    spec.conv_layers().iter().map(count_macs).sum()
}

/// MACs of everything outside the searchable blocks.
pub fn fixed_macs(input_channels: usize, width: usize) -> u64 {
    network_macs(&NetworkSpec::backbone(input_channels, width, &[]))
}

/// Spatial size inside the searchable region.
pub fn block_grid() -> usize {
    GRID / 4
}

/// Size of the block search space, `9^14`.
pub fn search_space_size() -> u128 {
    (NUM_OPS as u128).pow(NUM_BLOCKS as u32)
}
