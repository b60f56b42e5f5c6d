//! Layer shapes and memory footprint of 4-block VGG-style audio embedding
//! stacks (two 3×3 convolutions per block, 2×2 pooling between blocks).

use serde::{Deserialize, Serialize};

use super::MlError;

pub const BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRounding {
    Floor,
    Ceil,
}

impl PoolRounding {
    fn halve(self, x: u32) -> u32 {
        match self {
            Self::Floor => x / 2,
            Self::Ceil => x.div_ceil(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quant {
    F32,
    I8,
}

impl Quant {
    pub fn bytes(self) -> u32 {
        match self {
            Self::F32 => 4,
            Self::I8 => 1,
        }
    }
}

impl std::str::FromStr for Quant {
    type Err = MlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "float" => Ok(Self::F32),
            "i8" | "int8" => Ok(Self::I8),
            other => Err(MlError::Spec(format!("unknown quantization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub bytes_per_element: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStackSpec {
    pub name: String,
    /// Input height (mel bands) and width (frames); one input channel.
    pub input_hw: (u32, u32),
    pub block_filters: [u32; BLOCKS],
    #[serde(default = "one")]
    pub width_factor: f64,
    pub pool_rounding: PoolRounding,
}

fn one() -> f64 {
    1.0
}

impl ConvStackSpec {
    /// Full-size stack on a 256 × 199 spectrogram.
    pub fn l3() -> Self {
        Self {
            name: "l3".into(),
            input_hw: (256, 199),
            block_filters: [64, 128, 256, 512],
            width_factor: 1.0,
            pool_rounding: PoolRounding::Floor,
        }
    }

    /// Half-width stack on a 64 × 51 spectrogram.
    pub fn sonyc_l3() -> Self {
        Self {
            name: "sonyc-l3".into(),
            input_hw: (64, 51),
            block_filters: [64, 128, 256, 512],
            width_factor: 0.5,
            pool_rounding: PoolRounding::Ceil,
        }
    }

    pub fn validate(&self) -> Result<(), MlError> {
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(MlError::Spec("input dimensions must be positive".into()));
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return Err(MlError::Spec(format!("width_factor {} must be positive", self.width_factor)));
        }
        if self.filters().contains(&0) {
            return Err(MlError::Spec("a block has zero filters after width scaling".into()));
        }
        Ok(())
    }

    /// Per-block filter counts after width scaling.
    pub fn filters(&self) -> [u32; BLOCKS] {
        self.block_filters.map(|f| (f64::from(f) * self.width_factor).round() as u32)
    }

    pub fn embedding_dim(&self) -> u32 {
        self.filters()[BLOCKS - 1]
    }
}

/// Row b = spatial size entering block b with block b's filter count.
pub fn layer_shapes(spec: &ConvStackSpec, quant: Quant) -> Result<Vec<LayerShape>, MlError> {
    spec.validate()?;
    let (mut h, mut w) = spec.input_hw;
    let mut out = Vec::with_capacity(BLOCKS);
    for (b, c) in spec.filters().into_iter().enumerate() {
        if h == 0 || w == 0 {
            return Err(MlError::Spec(format!("spatial size reaches zero at block {}", b + 1)));
        }
        out.push(LayerShape { height: h, width: w, channels: c, bytes_per_element: quant.bytes() });
        h = spec.pool_rounding.halve(h);
        w = spec.pool_rounding.halve(w);
    }
    Ok(out)
}

/// Whole KiB, rounded down.
pub fn activation_kib(s: &LayerShape) -> u64 {
    u64::from(s.height) * u64::from(s.width) * u64::from(s.channels) * u64::from(s.bytes_per_element) / 1024
}

/// Each row stands for two convolutions with the same output size.
pub fn total_activation_kib(spec: &ConvStackSpec, quant: Quant) -> Result<u64, MlError> {
    Ok(2 * layer_shapes(spec, quant)?.iter().map(activation_kib).sum::<u64>())
}

/// Weights plus biases of the eight 3×3 convolutions.
pub fn static_size_bytes(spec: &ConvStackSpec, bytes_per_weight: u64) -> Result<u64, MlError> {
    spec.validate()?;
    let mut cin = 1u64;
    let mut params = 0u64;
    for c in spec.filters() {
        let c = u64::from(c);
        params += 9 * cin * c + c;
        params += 9 * c * c + c;
        cin = c;
    }
    Ok(params * bytes_per_weight)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootprintRow {
    pub layers: String,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub kib: u64,
}

/// Table rows plus a `total` row, as printed by the CLI.
pub fn footprint_table(spec: &ConvStackSpec, quant: Quant) -> Result<Vec<FootprintRow>, MlError> {
    let shapes = layer_shapes(spec, quant)?;
    let mut rows: Vec<FootprintRow> = shapes
        .iter()
        .enumerate()
        .map(|(b, s)| FootprintRow {
            layers: format!("conv{}/conv{}", 2 * b + 1, 2 * b + 2),
            height: s.height,
            width: s.width,
            channels: s.channels,
            kib: activation_kib(s),
        })
        .collect();
    rows.push(FootprintRow {
        layers: "total".into(),
        height: 0,
        width: 0,
        channels: 0,
        kib: total_activation_kib(spec, quant)?,
    });
    Ok(rows)
}
