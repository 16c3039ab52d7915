use crate::error::{Error, Result};
use crate::rl_core::NUM_ACTIONS;
use crate::tactile_image::{TACTILE_HEIGHT, TACTILE_WIDTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchVariant {
    Shallow,
    Deep,
    Custom,
}

impl ArchVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Shallow => "shallow",
            Self::Deep => "deep",
            Self::Custom => "custom",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Shallow => 0,
            Self::Deep => 1,
            Self::Custom => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        [Self::Shallow, Self::Deep, Self::Custom].into_iter().find(|v| v.code() == code)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    /// 2×2 max-pool after this layer's ReLU.
    pub pool_after: bool,
}

/// Shape of one image-branch activation, channel-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const JOINT_INPUTS: usize = 4;
pub const JOINT_WIDTH: usize = 32;
pub const HIDDEN_WIDTH: usize = 128;
/// Default scale for joint angles: the joint-limit magnitude.
pub const DEFAULT_ANGLE_SCALE: f64 = 2.0;
/// Default scale for joint velocities: the per-step joint delta.
pub const DEFAULT_VELOCITY_SCALE: f64 = 1.35e-4;

/// Layer layout of the two-branch Q-network.
///
/// The image branch is a stack of valid stride-1 convolutions, each followed
/// by ReLU and optionally a 2×2 max-pool. The joint branch is one dense ReLU
/// layer. Their outputs are concatenated and fed through `hidden` dense ReLU
/// layers and a final linear layer with `outputs` units.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkArch {
    pub variant: ArchVariant,
    pub input_height: usize,
    pub input_width: usize,
    pub convs: Vec<ConvSpec>,
    pub joint_width: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    /// Joint angles are divided by this before entering the network.
    pub angle_scale: f64,
    /// Joint velocities are divided by this before entering the network.
    pub velocity_scale: f64,
}

impl NetworkArch {
    /// Two convolutions: 8 filters 4×4 then pool, 16 filters 3×3.
    pub fn shallow() -> Self {
        Self::standard(
            ArchVariant::Shallow,
            vec![
                ConvSpec {
                    filters: 8,
                    kernel: 4,
                    pool_after: true,
                },
                ConvSpec {
                    filters: 16,
                    kernel: 3,
                    pool_after: false,
                },
            ],
        )
    }

    /// Ten convolutions: five 8-filter 4×4 then five 16-filter 3×3, with a
    /// single pool after the second layer. Further pools would shrink the
    /// 48×64 input below the remaining kernels.
    pub fn deep() -> Self {
        let convs = (0..10)
            .map(|i| ConvSpec {
                filters: if i < 5 { 8 } else { 16 },
                kernel: if i < 5 { 4 } else { 3 },
                pool_after: i == 1,
            })
            .collect();
        Self::standard(ArchVariant::Deep, convs)
    }

    fn standard(variant: ArchVariant, convs: Vec<ConvSpec>) -> Self {
        Self {
            variant,
            input_height: TACTILE_HEIGHT,
            input_width: TACTILE_WIDTH,
            convs,
            joint_width: JOINT_WIDTH,
            hidden: vec![HIDDEN_WIDTH],
            outputs: NUM_ACTIONS,
            angle_scale: DEFAULT_ANGLE_SCALE,
            velocity_scale: DEFAULT_VELOCITY_SCALE,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "shallow" => Ok(Self::shallow()),
            "deep" => Ok(Self::deep()),
            other => Err(Error::Config(format!("unknown architecture '{other}' (expected shallow or deep)"))),
        }
    }

    pub fn with_input_scales(mut self, angle_scale: f64, velocity_scale: f64) -> Self {
        self.angle_scale = angle_scale;
        self.velocity_scale = velocity_scale;
        self
    }

    pub fn input_shape(&self) -> FeatureShape {
        FeatureShape {
            channels: 1,
            height: self.input_height,
            width: self.input_width,
        }
    }

    /// Shapes after each conv layer (post-ReLU, before any pool).
    pub fn conv_shapes(&self) -> Result<Vec<FeatureShape>> {
        let mut shapes = Vec::with_capacity(self.convs.len());
        let mut cur = self.input_shape();
        for (i, c) in self.convs.iter().enumerate() {
            if c.kernel == 0 || c.filters == 0 || c.kernel > cur.height || c.kernel > cur.width {
                return Err(Error::Config(format!(
                    "conv{} ({}@{}x{}) does not fit its {}x{} input",
                    i + 1,
                    c.filters,
                    c.kernel,
                    c.kernel,
                    cur.height,
                    cur.width
                )));
            }
            let out = FeatureShape {
                channels: c.filters,
                height: cur.height + 1 - c.kernel,
                width: cur.width + 1 - c.kernel,
            };
            shapes.push(out);
            cur = if c.pool_after { pooled(out) } else { out };
            if cur.is_empty() {
                return Err(Error::Config(format!("pool after conv{} leaves an empty feature map", i + 1)));
            }
        }
        Ok(shapes)
    }

    /// Shape entering layer `i + 1` of the image branch (after any pool).
    pub fn feature_shapes(&self) -> Result<Vec<FeatureShape>> {
        Ok(self
            .conv_shapes()?
            .into_iter()
            .zip(&self.convs)
            .map(|(s, c)| if c.pool_after { pooled(s) } else { s })
            .collect())
    }

    /// Length of the flattened image-branch output.
    pub fn flat_len(&self) -> Result<usize> {
        Ok(self.feature_shapes()?.last().copied().unwrap_or_else(|| self.input_shape()).len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("network input must be non-empty".into()));
        }
        if self.joint_width == 0 || self.outputs == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("dense layer widths must be positive".into()));
        }
        if !(self.angle_scale > 0.0 && self.velocity_scale > 0.0) {
            return Err(Error::Config("input scales must be positive".into()));
        }
        self.conv_shapes().map(|_| ())
    }

    /// Parameter tensors in declaration order: each conv (weights, bias),
    /// the joint layer, the hidden layers, then the output layer.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind: LayerKind, n_out: usize, fan_in: usize| {
            let w_len = n_out * fan_in;
            layers.push(LayerSpec {
                name,
                kind,
                n_out,
                fan_in,
                w_offset: offset,
                b_offset: offset + w_len,
            });
            offset += w_len + n_out;
        };
        let mut in_shape = self.input_shape();
        for ((i, c), shape) in self.convs.iter().enumerate().zip(self.feature_shapes()?) {
            push(format!("conv{}", i + 1), LayerKind::Conv, c.filters, in_shape.channels * c.kernel * c.kernel);
            in_shape = shape;
        }
        push("joint".into(), LayerKind::Dense, self.joint_width, JOINT_INPUTS);
        let mut width = self.flat_len()? + self.joint_width;
        for (i, &h) in self.hidden.iter().enumerate() {
            push(format!("dense{}", i + 1), LayerKind::Dense, h, width);
            width = h;
        }
        push("output".into(), LayerKind::Dense, self.outputs, width);
        Ok(layers)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layers()?.last().map_or(0, |l| l.b_offset + l.n_out))
    }
}

fn pooled(s: FeatureShape) -> FeatureShape {
    FeatureShape {
        channels: s.channels,
        height: s.height / 2,
        width: s.width / 2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Dense,
}

/// Location of one layer's weights and bias inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Filters for a conv layer, units for a dense layer.
    pub n_out: usize,
    /// Weights per output unit.
    pub fan_in: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl LayerSpec {
    pub fn w_len(&self) -> usize {
        self.n_out * self.fan_in
    }

    pub fn weights(&self) -> std::ops::Range<usize> {
        self.w_offset..self.w_offset + self.w_len()
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        self.b_offset..self.b_offset + self.n_out
    }
}
