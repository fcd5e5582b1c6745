//! VarGNet v1/v2 construction.
//!
//! Stage widths are read from embedded architecture tables, one column per
//! published width scale. A `DownSample` row with repeat `r` expands to one
//! stride-2 downsample block followed by `r - 1` normal blocks; a `Stage`
//! row with repeat `r` expands to `r` normal blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::graph::{BlockInfo, BlockKind, Layer, LayerKind, NetworkGraph};
use crate::tensor::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    V1,
    V2,
}

impl FromStr for Version {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Version::V1),
            "v2" => Ok(Version::V2),
            other => Err(Error::Config(format!("unknown version '{other}'"))),
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Version::V1 => "v1",
            Version::V2 => "v2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Conv1,
    Head,
    DownSample(usize),
    Stage(usize),
    Conv5,
}

struct ArchTable {
    scales: &'static [f64],
    rows: &'static [(Row, &'static [usize])],
}

const V1_TABLE: ArchTable = ArchTable {
    scales: &[0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
    rows: &[
        (Row::Conv1, &[8, 16, 24, 32, 40, 48, 56]),
        (Row::DownSample(3), &[16, 32, 48, 64, 80, 96, 112]),
        (Row::DownSample(1), &[32, 64, 96, 128, 160, 192, 224]),
        (Row::DownSample(1), &[64, 128, 192, 256, 320, 384, 448]),
        (Row::Stage(2), &[64, 128, 192, 256, 320, 384, 448]),
        (Row::DownSample(1), &[128, 256, 384, 512, 640, 768, 896]),
        (Row::Stage(1), &[128, 256, 384, 512, 640, 768, 896]),
        (Row::Conv5, &[1024, 1024, 1024, 1024, 1280, 1536, 1792]),
    ],
};

const V2_TABLE: ArchTable = ArchTable {
    scales: &[0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
    rows: &[
        (Row::Conv1, &[8, 16, 24, 32, 40, 48, 56, 64]),
        (Row::Head, &[8, 16, 24, 32, 40, 48, 56, 64]),
        (Row::DownSample(1), &[16, 32, 48, 64, 80, 96, 112, 128]),
        (Row::Stage(2), &[16, 32, 48, 64, 80, 96, 112, 128]),
        (Row::DownSample(1), &[32, 64, 96, 128, 160, 192, 224, 256]),
        (Row::Stage(6), &[32, 64, 96, 128, 160, 192, 224, 256]),
        (Row::DownSample(1), &[64, 128, 192, 256, 320, 384, 448, 512]),
        (Row::Stage(3), &[64, 128, 192, 256, 320, 384, 448, 512]),
        (Row::Conv5, &[1024, 1024, 1024, 1024, 1280, 1536, 1792, 2048]),
    ],
};

impl Version {
    fn table(self) -> &'static ArchTable {
        match self {
            Version::V1 => &V1_TABLE,
            Version::V2 => &V2_TABLE,
        }
    }

    /// Width scales with a published column.
    pub fn scales(self) -> &'static [f64] {
        self.table().scales
    }

    fn column(self, scale: f64) -> Result<usize> {
        self.scales()
            .iter()
            .position(|s| (s - scale).abs() < 1e-9)
            .ok_or_else(|| {
                Error::Config(format!(
                    "scale {scale} has no {self} column (known: {:?})",
                    self.scales()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub num_classes: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Stride of the first convolution; 1 gives the small-input variant.
    pub conv1_stride: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            num_classes: 1000,
            input_h: 224,
            input_w: 224,
            conv1_stride: 2,
        }
    }
}

/// Incremental graph construction with block bookkeeping.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    layers: Vec<Layer>,
    blocks: Vec<BlockInfo>,
    current: usize,
}

/// Reference to a tensor in a graph under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Input,
    Layer(usize),
}

impl Src {
    fn ids(self) -> Vec<usize> {
        match self {
            Src::Input => vec![],
            Src::Layer(id) => vec![id],
        }
    }

    fn id(self) -> Result<usize> {
        match self {
            Src::Layer(id) => Ok(id),
            Src::Input => Err(Error::Argument(
                "network input cannot feed a two-input layer".into(),
            )),
        }
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_block(&mut self, kind: BlockKind, c_in: usize, c_out: usize, g: usize) -> usize {
        let id = self.blocks.len();
        self.blocks.push(BlockInfo {
            id,
            kind,
            c_in,
            c_out,
            channels_per_group: g,
        });
        self.current = id;
        id
    }

    fn push(&mut self, kind: LayerKind, inputs: Vec<usize>) -> Src {
        let id = self.layers.len();
        self.layers.push(Layer {
            id,
            kind,
            inputs,
            block_id: self.current,
        });
        Src::Layer(id)
    }

    fn block_context(&self) -> String {
        match self.blocks.get(self.current) {
            Some(b) => format!("block {} ({})", b.id, b.kind),
            None => "no block".into(),
        }
    }

    /// Convolution with same-style padding, no bias.
    pub fn conv(
        &mut self,
        src: Src,
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        channels_per_group: usize,
    ) -> Result<Src> {
        let spec = ConvSpec::new(kernel, stride, c_in, c_out, channels_per_group).map_err(|e| {
            let e = match e {
                Error::Config(m) | Error::Argument(m) => m,
                other => other.to_string(),
            };
            Error::Config(format!(
                "{}: {kernel}x{kernel} conv {c_in}->{c_out} with G={channels_per_group}: {e}",
                self.block_context()
            ))
        })?;
        Ok(self.push(LayerKind::Conv(spec), src.ids()))
    }

    pub fn bn(&mut self, src: Src, channels: usize, activate: bool) -> Src {
        self.push(LayerKind::BnAct { channels, activate }, src.ids())
    }

    pub fn add(&mut self, a: Src, b: Src, relu: bool) -> Result<Src> {
        Ok(self.push(LayerKind::Add { relu }, vec![a.id()?, b.id()?]))
    }

    pub fn global_pool(&mut self, src: Src) -> Src {
        self.push(LayerKind::GlobalPool, src.ids())
    }

    pub fn fully_connected(&mut self, src: Src, c_in: usize, c_out: usize) -> Src {
        self.push(LayerKind::FullyConnected { c_in, c_out }, src.ids())
    }

    /// Variable group 3x3 conv expanding `c_in` to `expand`, BN+ReLU,
    /// then pointwise projection to `c_out` with BN and optional ReLU.
    #[allow(clippy::too_many_arguments)]
    fn separable(
        &mut self,
        src: Src,
        c_in: usize,
        expand: usize,
        c_out: usize,
        stride: usize,
        g: usize,
        project_relu: bool,
    ) -> Result<Src> {
        let x = self.conv(src, 3, stride, c_in, expand, g)?;
        let x = self.bn(x, expand, true);
        let x = self.conv(x, 1, 1, expand, c_out, expand)?;
        Ok(self.bn(x, c_out, project_relu))
    }

    /// Shape-preserving block: two expand/project pairs and a residual.
    pub fn normal_block(&mut self, src: Src, c: usize, g: usize) -> Result<Src> {
        self.begin_block(BlockKind::Normal, c, c, g);
        let x = self.separable(src, c, 2 * c, c, 1, g, false)?;
        let x = self.separable(x, c, 2 * c, c, 1, g, false)?;
        self.add(x, src, true)
    }

    /// Stride-2 block keeping the width; no residual since shapes differ.
    pub fn head_block(&mut self, src: Src, c: usize, g: usize) -> Result<Src> {
        self.begin_block(BlockKind::Head, c, c, g);
        let x = self.separable(src, c, 2 * c, c, 2, g, false)?;
        self.separable(x, c, 2 * c, c, 1, g, true)
    }

    /// Two stride-2 branches summed, then an expand/project pair with a
    /// residual from the branch sum. Doubles width, halves resolution.
    pub fn downsample_block(&mut self, src: Src, c_in: usize, g: usize) -> Result<Src> {
        let c_out = 2 * c_in;
        self.begin_block(BlockKind::Downsample, c_in, c_out, g);
        let a = self.separable(src, c_in, c_out, c_out, 2, g, false)?;
        let b = self.separable(src, c_in, c_out, c_out, 2, g, false)?;
        let merged = self.add(a, b, true)?;
        let x = self.separable(merged, c_out, 2 * c_out, c_out, 1, g, false)?;
        self.add(x, merged, true)
    }

    pub fn finish(
        self,
        name: impl Into<String>,
        scale: f64,
        channels_per_group: usize,
        num_classes: usize,
        input: TensorShape,
    ) -> NetworkGraph {
        NetworkGraph {
            name: name.into(),
            scale,
            channels_per_group,
            num_classes,
            input,
            blocks: self.blocks,
            layers: self.layers,
        }
    }
}

pub fn build(version: Version, scale: f64, g: usize, opts: &BuildOptions) -> Result<NetworkGraph> {
    if g == 0 {
        return Err(Error::Config("channels per group must be positive".into()));
    }
    if opts.num_classes == 0 {
        return Err(Error::Config("num_classes must be positive".into()));
    }
    if opts.conv1_stride != 1 && opts.conv1_stride != 2 {
        return Err(Error::Config("conv1 stride must be 1 or 2".into()));
    }
    if opts.input_h < 32 || opts.input_w < 32 {
        return Err(Error::Config(format!(
            "input {}x{} is below the 32x32 minimum",
            opts.input_h, opts.input_w
        )));
    }
    let table = version.table();
    let col = version.column(scale)?;
    let input = TensorShape::new(1, 3, opts.input_h, opts.input_w)?;

    let mut b = GraphBuilder::new();
    let mut x = Src::Input;
    let mut width = 3;
    for &(row, widths) in table.rows {
        let out = widths[col];
        match row {
            Row::Conv1 => {
                b.begin_block(BlockKind::Stem, width, out, width);
                x = b.conv(x, 3, opts.conv1_stride, width, out, width)?;
                x = b.bn(x, out, true);
            }
            Row::Head => x = b.head_block(x, width, g)?,
            Row::DownSample(repeat) => {
                if out != 2 * width {
                    return Err(Error::Config(format!(
                        "downsample row expects {} -> {}, table gives {out}",
                        width,
                        2 * width
                    )));
                }
                x = b.downsample_block(x, width, g)?;
                for _ in 1..repeat {
                    x = b.normal_block(x, out, g)?;
                }
            }
            Row::Stage(repeat) => {
                for _ in 0..repeat {
                    x = b.normal_block(x, out, g)?;
                }
            }
            Row::Conv5 => {
                b.begin_block(BlockKind::Tail, width, out, out);
                x = b.conv(x, 1, 1, width, out, width)?;
                x = b.bn(x, out, true);
            }
        }
        width = out;
    }
    b.begin_block(BlockKind::Classifier, width, opts.num_classes, width);
    let pooled = b.global_pool(x);
    b.fully_connected(pooled, width, opts.num_classes);

    let name = format!("vargnet_{version}_x{scale}_g{g}");
    let net = b.finish(name, scale, g, opts.num_classes, input);
    net.validate()?;
    Ok(net)
}

pub fn build_vargnet_v1(scale: f64, g: usize, num_classes: usize) -> Result<NetworkGraph> {
    build(Version::V1, scale, g, &BuildOptions { num_classes, ..Default::default() })
}

pub fn build_vargnet_v2(scale: f64, g: usize, num_classes: usize) -> Result<NetworkGraph> {
    build(Version::V2, scale, g, &BuildOptions { num_classes, ..Default::default() })
}
