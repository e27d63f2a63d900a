//! Mixed-variable hyperparameter space of a convolutional network and its
//! training regime.
//!
//! A [`Configuration`] has a categorical part (number of convolutional
//! layers, number of fully connected layers, training optimizer) and a
//! quantitative part whose length depends on the categorical part: five
//! values per convolutional layer, one per fully connected layer and nine
//! training scalars. With the optimizer, the problem dimension is
//! `5·n_conv + n_fc + 10`.
//!
//! Every quantitative value is stored as `f64`. Whether a slot is integer or
//! real is a property of the [`SpaceBounds`], which makes a continuous
//! relaxation of the space a matter of swapping bounds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Number of non-architecture hyperparameters (optimizer + training scalars).
pub const TRAINING_DIMENSION: usize = 10;

/// Dimension of the complete problem for `n_conv` convolutional and `n_fc`
/// fully connected layers.
pub fn dimension(n_conv: i64, n_fc: i64) -> Result<usize> {
    if n_conv < 0 || n_fc < 0 {
        return Err(Error::NegativeLayerCount { n_conv, n_fc });
    }
    Ok(5 * n_conv as usize + n_fc as usize + TRAINING_DIMENSION)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam,
    Adagrad,
    RmsProp,
}

impl Optimizer {
    pub const ALL: [Optimizer; 4] = [
        Optimizer::Sgd,
        Optimizer::Adam,
        Optimizer::Adagrad,
        Optimizer::RmsProp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
            Optimizer::Adagrad => "adagrad",
            Optimizer::RmsProp => "rmsprop",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Optimizer::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::ParseConfig(format!("unknown optimizer `{s}`")))
    }
}

/// The five hyperparameters of one convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: f64,
    pub kernel_size: f64,
    pub stride: f64,
    pub padding: f64,
    /// Pooling size, 1 means no pooling.
    pub pooling: f64,
}

impl ConvLayer {
    pub fn new(
        out_channels: u32,
        kernel_size: u32,
        stride: u32,
        padding: u32,
        pooling: u32,
    ) -> Self {
        Self {
            out_channels: out_channels.into(),
            kernel_size: kernel_size.into(),
            stride: stride.into(),
            padding: padding.into(),
            pooling: pooling.into(),
        }
    }

    fn values(&self) -> [f64; 5] {
        [
            self.out_channels,
            self.kernel_size,
            self.stride,
            self.padding,
            self.pooling,
        ]
    }

    fn from_values(v: &[f64]) -> Self {
        Self {
            out_channels: v[0],
            kernel_size: v[1],
            stride: v[2],
            padding: v[3],
            pooling: v[4],
        }
    }
}

/// Training-regime scalars. Together with the optimizer they form the ten
/// non-architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub batch_size: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub grad_clip: f64,
    pub label_smoothing: f64,
    /// Fraction of the epoch budget the trainer is allowed to use.
    pub epoch_scale: f64,
}

impl TrainingParams {
    fn values(&self) -> [f64; 9] {
        [
            self.learning_rate,
            self.batch_size,
            self.dropout,
            self.weight_decay,
            self.momentum,
            self.lr_decay,
            self.grad_clip,
            self.label_smoothing,
            self.epoch_scale,
        ]
    }

    fn from_values(v: &[f64]) -> Self {
        Self {
            learning_rate: v[0],
            batch_size: v[1],
            dropout: v[2],
            weight_decay: v[3],
            momentum: v[4],
            lr_decay: v[5],
            grad_clip: v[6],
            label_smoothing: v[7],
            epoch_scale: v[8],
        }
    }
}

/// Kind of a quantitative slot. Convolutional and FC slots repeat per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotKind {
    OutChannels,
    KernelSize,
    Stride,
    Padding,
    Pooling,
    FcSize,
    LearningRate,
    BatchSize,
    Dropout,
    WeightDecay,
    Momentum,
    LrDecay,
    GradClip,
    LabelSmoothing,
    EpochScale,
}

impl SlotKind {
    pub const CONV: [SlotKind; 5] = [
        SlotKind::OutChannels,
        SlotKind::KernelSize,
        SlotKind::Stride,
        SlotKind::Padding,
        SlotKind::Pooling,
    ];

    pub const TRAINING: [SlotKind; 9] = [
        SlotKind::LearningRate,
        SlotKind::BatchSize,
        SlotKind::Dropout,
        SlotKind::WeightDecay,
        SlotKind::Momentum,
        SlotKind::LrDecay,
        SlotKind::GradClip,
        SlotKind::LabelSmoothing,
        SlotKind::EpochScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlotKind::OutChannels => "out_channels",
            SlotKind::KernelSize => "kernel_size",
            SlotKind::Stride => "stride",
            SlotKind::Padding => "padding",
            SlotKind::Pooling => "pooling",
            SlotKind::FcSize => "size",
            SlotKind::LearningRate => "learning_rate",
            SlotKind::BatchSize => "batch_size",
            SlotKind::Dropout => "dropout",
            SlotKind::WeightDecay => "weight_decay",
            SlotKind::Momentum => "momentum",
            SlotKind::LrDecay => "lr_decay",
            SlotKind::GradClip => "grad_clip",
            SlotKind::LabelSmoothing => "label_smoothing",
            SlotKind::EpochScale => "epoch_scale",
        }
    }
}

/// One quantitative slot of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Slot {
    pub kind: SlotKind,
    pub layer: Option<usize>,
}

impl Slot {
    pub fn name(&self) -> String {
        match (self.kind, self.layer) {
            (SlotKind::FcSize, Some(i)) => format!("fc{i}.size"),
            (kind, Some(i)) => format!("conv{i}.{}", kind.name()),
            (kind, None) => kind.name().to_string(),
        }
    }
}

/// Bounds and granularity of one slot kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotBounds {
    pub lower: f64,
    pub upper: f64,
    /// Smallest admissible step. Integer slots use 1.
    pub granularity: f64,
    pub integer: bool,
    /// Poll and mesh size of this slot at mesh index 0.
    pub initial_step: f64,
}

impl SlotBounds {
    pub const fn int(lower: f64, upper: f64, initial_step: f64) -> Self {
        Self {
            lower,
            upper,
            granularity: 1.0,
            integer: true,
            initial_step,
        }
    }

    pub const fn real(lower: f64, upper: f64, granularity: f64, initial_step: f64) -> Self {
        Self {
            lower,
            upper,
            granularity,
            integer: false,
            initial_step,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.lower && v <= self.upper
    }

    fn is_well_formed(&self) -> bool {
        self.lower <= self.upper && self.granularity > 0.0 && self.initial_step > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub min: usize,
    pub max: usize,
}

/// Bounds of every slot of the space plus the allowed optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceBounds {
    pub n_conv: LayerRange,
    pub n_fc: LayerRange,
    pub out_channels: SlotBounds,
    pub kernel_size: SlotBounds,
    pub stride: SlotBounds,
    pub padding: SlotBounds,
    pub pooling: SlotBounds,
    pub fc_size: SlotBounds,
    pub learning_rate: SlotBounds,
    pub batch_size: SlotBounds,
    pub dropout: SlotBounds,
    pub weight_decay: SlotBounds,
    pub momentum: SlotBounds,
    pub lr_decay: SlotBounds,
    pub grad_clip: SlotBounds,
    pub label_smoothing: SlotBounds,
    pub epoch_scale: SlotBounds,
    /// Cyclic order used by the optimizer neighbor.
    pub optimizers: Vec<Optimizer>,
}

impl Default for SpaceBounds {
    fn default() -> Self {
        Self {
            n_conv: LayerRange { min: 0, max: 8 },
            n_fc: LayerRange { min: 0, max: 6 },
            out_channels: SlotBounds::int(1.0, 128.0, 16.0),
            kernel_size: SlotBounds::int(1.0, 7.0, 2.0),
            stride: SlotBounds::int(1.0, 3.0, 1.0),
            padding: SlotBounds::int(0.0, 3.0, 1.0),
            pooling: SlotBounds::int(1.0, 3.0, 1.0),
            fc_size: SlotBounds::int(1.0, 1024.0, 128.0),
            learning_rate: SlotBounds::real(1e-5, 1.0, 1e-5, 0.0625),
            batch_size: SlotBounds::int(16.0, 512.0, 64.0),
            dropout: SlotBounds::real(0.0, 0.95, 1e-3, 0.125),
            weight_decay: SlotBounds::real(0.0, 0.1, 1e-5, 0.0078125),
            momentum: SlotBounds::real(0.0, 0.99, 1e-3, 0.125),
            lr_decay: SlotBounds::real(0.1, 1.0, 1e-3, 0.125),
            grad_clip: SlotBounds::real(0.1, 10.0, 1e-2, 1.0),
            label_smoothing: SlotBounds::real(0.0, 0.3, 1e-3, 0.0625),
            epoch_scale: SlotBounds::real(0.25, 1.0, 1e-3, 0.125),
            optimizers: Optimizer::ALL.to_vec(),
        }
    }
}

impl SpaceBounds {
    pub fn slot(&self, kind: SlotKind) -> &SlotBounds {
        match kind {
            SlotKind::OutChannels => &self.out_channels,
            SlotKind::KernelSize => &self.kernel_size,
            SlotKind::Stride => &self.stride,
            SlotKind::Padding => &self.padding,
            SlotKind::Pooling => &self.pooling,
            SlotKind::FcSize => &self.fc_size,
            SlotKind::LearningRate => &self.learning_rate,
            SlotKind::BatchSize => &self.batch_size,
            SlotKind::Dropout => &self.dropout,
            SlotKind::WeightDecay => &self.weight_decay,
            SlotKind::Momentum => &self.momentum,
            SlotKind::LrDecay => &self.lr_decay,
            SlotKind::GradClip => &self.grad_clip,
            SlotKind::LabelSmoothing => &self.label_smoothing,
            SlotKind::EpochScale => &self.epoch_scale,
        }
    }

    fn slot_mut(&mut self, kind: SlotKind) -> &mut SlotBounds {
        match kind {
            SlotKind::OutChannels => &mut self.out_channels,
            SlotKind::KernelSize => &mut self.kernel_size,
            SlotKind::Stride => &mut self.stride,
            SlotKind::Padding => &mut self.padding,
            SlotKind::Pooling => &mut self.pooling,
            SlotKind::FcSize => &mut self.fc_size,
            SlotKind::LearningRate => &mut self.learning_rate,
            SlotKind::BatchSize => &mut self.batch_size,
            SlotKind::Dropout => &mut self.dropout,
            SlotKind::WeightDecay => &mut self.weight_decay,
            SlotKind::Momentum => &mut self.momentum,
            SlotKind::LrDecay => &mut self.lr_decay,
            SlotKind::GradClip => &mut self.grad_clip,
            SlotKind::LabelSmoothing => &mut self.label_smoothing,
            SlotKind::EpochScale => &mut self.epoch_scale,
        }
    }

    fn all_kinds() -> impl Iterator<Item = SlotKind> {
        SlotKind::CONV
            .into_iter()
            .chain(std::iter::once(SlotKind::FcSize))
            .chain(SlotKind::TRAINING)
    }

    /// Same bounds with every slot made real-valued, with a granularity
    /// small enough to let the mesh refine far below the initial steps.
    pub fn continuous_relaxation(&self) -> Self {
        let mut out = self.clone();
        for kind in Self::all_kinds() {
            let b = out.slot_mut(kind);
            b.integer = false;
            b.granularity = (b.upper - b.lower).max(f64::EPSILON) * 1e-13;
        }
        out
    }

    /// Structural problems with the bounds themselves.
    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        for kind in Self::all_kinds() {
            if !self.slot(kind).is_well_formed() {
                problems.push(Violation::new(kind.name(), "malformed bounds"));
            }
        }
        if self.n_conv.min > self.n_conv.max {
            problems.push(Violation::new("n_conv", "min exceeds max"));
        }
        if self.n_fc.min > self.n_fc.max {
            problems.push(Violation::new("n_fc", "min exceeds max"));
        }
        if self.optimizers.len() < 2 {
            problems.push(Violation::new(
                "optimizer",
                "at least two optimizers required",
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfiguration(problems))
        }
    }

    fn midpoint(&self, kind: SlotKind) -> f64 {
        let b = self.slot(kind);
        let mid = 0.5 * (b.lower + b.upper);
        if b.integer {
            mid.floor()
        } else {
            mid
        }
    }

    /// A layer initialised at the midpoint of every convolutional slot.
    pub fn default_conv_layer(&self) -> ConvLayer {
        ConvLayer::from_values(&SlotKind::CONV.map(|k| self.midpoint(k)))
    }

    pub fn default_fc_size(&self) -> f64 {
        self.midpoint(SlotKind::FcSize)
    }
}

/// A bound or invariant breach, naming the offending slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub slot: String,
    pub message: String,
}

impl Violation {
    fn new(slot: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            slot: slot.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.slot, self.message)
    }
}

/// One point of the hyperparameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub n_conv: usize,
    pub conv_layers: Vec<ConvLayer>,
    pub n_fc: usize,
    pub fc_sizes: Vec<f64>,
    pub optimizer: Optimizer,
    pub training: TrainingParams,
}

/// Which categorical move produced a neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeighborKind {
    AddConv,
    RemoveConv,
    AddFc,
    RemoveFc,
    NextOptimizer,
}

impl Configuration {
    /// Default starting point: one convolutional and two fully connected layers.
    pub fn preset_p1() -> Self {
        Self::with_layers(vec![ConvLayer::new(16, 5, 1, 2, 2)], vec![128.0, 64.0])
    }

    /// `p1` with a second convolutional layer.
    pub fn preset_p2() -> Self {
        Self::with_layers(
            vec![
                ConvLayer::new(16, 5, 1, 2, 2),
                ConvLayer::new(32, 5, 1, 2, 2),
            ],
            vec![128.0, 64.0],
        )
    }

    /// Five convolutional layers and one fully connected layer.
    pub fn preset_p3() -> Self {
        Self::with_layers(
            vec![
                ConvLayer::new(16, 3, 1, 1, 2),
                ConvLayer::new(32, 3, 1, 1, 1),
                ConvLayer::new(32, 3, 1, 1, 2),
                ConvLayer::new(64, 3, 1, 1, 1),
                ConvLayer::new(64, 3, 1, 1, 1),
            ],
            vec![128.0],
        )
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "p1" => Ok(Self::preset_p1()),
            "p2" => Ok(Self::preset_p2()),
            "p3" => Ok(Self::preset_p3()),
            other => Err(Error::Settings(format!("unknown preset `{other}`"))),
        }
    }

    fn with_layers(conv_layers: Vec<ConvLayer>, fc_sizes: Vec<f64>) -> Self {
        Self {
            n_conv: conv_layers.len(),
            conv_layers,
            n_fc: fc_sizes.len(),
            fc_sizes,
            optimizer: Optimizer::Sgd,
            training: TrainingParams {
                learning_rate: 0.1,
                batch_size: 128.0,
                dropout: 0.5,
                weight_decay: 0.0,
                momentum: 0.9,
                lr_decay: 1.0,
                grad_clip: 5.0,
                label_smoothing: 0.0,
                epoch_scale: 1.0,
            },
        }
    }

    /// Problem dimension of this configuration, optimizer included.
    pub fn dimension(&self) -> usize {
        5 * self.n_conv + self.n_fc + TRAINING_DIMENSION
    }

    /// Quantitative slots in serialization order.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.dimension() - 1);
        for i in 0..self.conv_layers.len() {
            out.extend(SlotKind::CONV.map(|kind| Slot {
                kind,
                layer: Some(i),
            }));
        }
        for i in 0..self.fc_sizes.len() {
            out.push(Slot {
                kind: SlotKind::FcSize,
                layer: Some(i),
            });
        }
        out.extend(SlotKind::TRAINING.map(|kind| Slot { kind, layer: None }));
        out
    }

    /// Quantitative values in the order of [`Configuration::slots`].
    pub fn values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.conv_layers.iter().flat_map(|l| l.values()).collect();
        out.extend_from_slice(&self.fc_sizes);
        out.extend(self.training.values());
        out
    }

    /// Same categorical part with new quantitative values.
    ///
    /// Panics if `values` does not have one entry per slot.
    pub fn with_values(&self, values: &[f64]) -> Self {
        let n_conv = self.conv_layers.len();
        let n_fc = self.fc_sizes.len();
        assert_eq!(values.len(), 5 * n_conv + n_fc + 9, "value count mismatch");
        let conv_layers = values[..5 * n_conv]
            .chunks_exact(5)
            .map(ConvLayer::from_values)
            .collect();
        let fc_sizes = values[5 * n_conv..5 * n_conv + n_fc].to_vec();
        Self {
            n_conv: self.n_conv,
            conv_layers,
            n_fc: self.n_fc,
            fc_sizes,
            optimizer: self.optimizer,
            training: TrainingParams::from_values(&values[5 * n_conv + n_fc..]),
        }
    }

    /// Flat `name=value` serialization joined by `;`.
    pub fn serialize(&self) -> String {
        let mut tokens: Vec<String> = Vec::with_capacity(self.dimension());
        let values = self.values();
        let slots = self.slots();
        let split = 5 * self.conv_layers.len() + self.fc_sizes.len();
        for (slot, v) in slots[..split].iter().zip(&values[..split]) {
            tokens.push(format!("{}={}", slot.name(), v));
        }
        tokens.push(format!("optimizer={}", self.optimizer));
        for (slot, v) in slots[split..].iter().zip(&values[split..]) {
            tokens.push(format!("{}={}", slot.name(), v));
        }
        tokens.join(";")
    }

    /// Inverse of [`Configuration::serialize`].
    pub fn parse(s: &str) -> Result<Self> {
        let mut conv: Vec<[Option<f64>; 5]> = Vec::new();
        let mut fc: Vec<Option<f64>> = Vec::new();
        let mut training: [Option<f64>; 9] = [None; 9];
        let mut optimizer = None;

        for token in s.trim().split(';').filter(|t| !t.is_empty()) {
            let (name, value) = token
                .split_once('=')
                .ok_or_else(|| Error::ParseConfig(format!("token `{token}` has no `=`")))?;
            if name == "optimizer" {
                optimizer = Some(value.parse::<Optimizer>()?);
                continue;
            }
            let number: f64 = value.parse().map_err(|_| {
                Error::ParseConfig(format!("`{name}` has non-numeric value `{value}`"))
            })?;
            if let Some(rest) = name.strip_prefix("conv") {
                let (idx, field) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::ParseConfig(format!("bad slot name `{name}`")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::ParseConfig(format!("bad layer index in `{name}`")))?;
                let pos = SlotKind::CONV
                    .iter()
                    .position(|k| k.name() == field)
                    .ok_or_else(|| Error::ParseConfig(format!("unknown conv field `{field}`")))?;
                if conv.len() <= idx {
                    conv.resize(idx + 1, [None; 5]);
                }
                conv[idx][pos] = Some(number);
            } else if let Some(rest) = name.strip_prefix("fc") {
                let idx: usize = rest
                    .strip_suffix(".size")
                    .and_then(|i| i.parse().ok())
                    .ok_or_else(|| Error::ParseConfig(format!("bad slot name `{name}`")))?;
                if fc.len() <= idx {
                    fc.resize(idx + 1, None);
                }
                fc[idx] = Some(number);
            } else {
                let pos = SlotKind::TRAINING
                    .iter()
                    .position(|k| k.name() == name)
                    .ok_or_else(|| Error::ParseConfig(format!("unknown slot `{name}`")))?;
                training[pos] = Some(number);
            }
        }

        let missing = |what: String| Error::ParseConfig(format!("missing `{what}`"));
        let conv_layers = conv
            .iter()
            .enumerate()
            .map(|(i, fields)| {
                let mut v = [0.0; 5];
                for (j, f) in fields.iter().enumerate() {
                    v[j] =
                        f.ok_or_else(|| missing(format!("conv{i}.{}", SlotKind::CONV[j].name())))?;
                }
                Ok(ConvLayer::from_values(&v))
            })
            .collect::<Result<Vec<_>>>()?;
        let fc_sizes = fc
            .iter()
            .enumerate()
            .map(|(i, f)| f.ok_or_else(|| missing(format!("fc{i}.size"))))
            .collect::<Result<Vec<_>>>()?;
        let mut t = [0.0; 9];
        for (j, f) in training.iter().enumerate() {
            t[j] = f.ok_or_else(|| missing(SlotKind::TRAINING[j].name().to_string()))?;
        }
        Ok(Self {
            n_conv: conv_layers.len(),
            conv_layers,
            n_fc: fc_sizes.len(),
            fc_sizes,
            optimizer: optimizer.ok_or_else(|| missing("optimizer".into()))?,
            training: TrainingParams::from_values(&t),
        })
    }

    /// Checks list lengths, layer counts, optimizer membership and every
    /// slot against `bounds`.
    pub fn validate(&self, bounds: &SpaceBounds) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.conv_layers.len() != self.n_conv {
            out.push(Violation::new(
                "conv_layers",
                format!(
                    "length mismatch: {} layers for n_conv={}",
                    self.conv_layers.len(),
                    self.n_conv
                ),
            ));
        }
        if self.fc_sizes.len() != self.n_fc {
            out.push(Violation::new(
                "fc_sizes",
                format!(
                    "length mismatch: {} sizes for n_fc={}",
                    self.fc_sizes.len(),
                    self.n_fc
                ),
            ));
        }
        if self.n_conv < bounds.n_conv.min || self.n_conv > bounds.n_conv.max {
            out.push(Violation::new(
                "n_conv",
                format!("{} outside bounds", self.n_conv),
            ));
        }
        if self.n_fc < bounds.n_fc.min || self.n_fc > bounds.n_fc.max {
            out.push(Violation::new(
                "n_fc",
                format!("{} outside bounds", self.n_fc),
            ));
        }
        if !bounds.optimizers.contains(&self.optimizer) {
            out.push(Violation::new(
                "optimizer",
                format!("{} not allowed", self.optimizer),
            ));
        }
        for (slot, v) in self.slots().iter().zip(self.values()) {
            let b = bounds.slot(slot.kind);
            if !b.contains(v) {
                out.push(Violation::new(
                    slot.name(),
                    format!("{v} outside [{}, {}]", b.lower, b.upper),
                ));
            } else if b.integer && v.fract() != 0.0 {
                out.push(Violation::new(
                    slot.name(),
                    format!("{v} is not an integer"),
                ));
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Categorical neighborhood: add/remove a convolutional layer, add/remove
    /// a fully connected layer, switch to the next optimizer. Moves that
    /// would leave the layer-count range are omitted. New layers take the
    /// midpoint of their bounds; removals drop the last layer.
    pub fn neighbors(&self, bounds: &SpaceBounds) -> Result<Vec<(NeighborKind, Configuration)>> {
        self.validate(bounds).map_err(Error::InvalidConfiguration)?;
        let mut out = Vec::with_capacity(5);

        if self.n_conv < bounds.n_conv.max {
            let mut c = self.clone();
            c.conv_layers.push(bounds.default_conv_layer());
            c.n_conv += 1;
            out.push((NeighborKind::AddConv, c));
        }
        if self.n_conv > bounds.n_conv.min {
            let mut c = self.clone();
            c.conv_layers.pop();
            c.n_conv -= 1;
            out.push((NeighborKind::RemoveConv, c));
        }
        if self.n_fc < bounds.n_fc.max {
            let mut c = self.clone();
            c.fc_sizes.push(bounds.default_fc_size());
            c.n_fc += 1;
            out.push((NeighborKind::AddFc, c));
        }
        if self.n_fc > bounds.n_fc.min {
            let mut c = self.clone();
            c.fc_sizes.pop();
            c.n_fc -= 1;
            out.push((NeighborKind::RemoveFc, c));
        }
        let pos = bounds
            .optimizers
            .iter()
            .position(|o| *o == self.optimizer)
            .expect("validated optimizer");
        let mut c = self.clone();
        c.optimizer = bounds.optimizers[(pos + 1) % bounds.optimizers.len()];
        out.push((NeighborKind::NextOptimizer, c));

        Ok(out)
    }

    /// Snaps every quantitative slot to the mesh and clips it into bounds.
    /// Categorical slots are untouched. Idempotent.
    pub fn project_to_mesh(&self, mesh: &Mesh, bounds: &SpaceBounds) -> Configuration {
        let projected: Vec<f64> = self
            .slots()
            .iter()
            .zip(self.values())
            .map(|(slot, v)| {
                let b = bounds.slot(slot.kind);
                project_value(v, mesh.mesh_size(b), b)
            })
            .collect();
        self.with_values(&projected)
    }

    /// True if every quantitative value is a mesh point or a bound.
    pub fn is_on_mesh(&self, mesh: &Mesh, bounds: &SpaceBounds) -> bool {
        self.slots().iter().zip(self.values()).all(|(slot, v)| {
            let b = bounds.slot(slot.kind);
            b.contains(v) && project_value(v, mesh.mesh_size(b), b) == v
        })
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Configuration::parse(s)
    }
}

/// Nearest multiple of `step`, then clipped. Bound values are mesh points.
pub(crate) fn project_value(v: f64, step: f64, b: &SlotBounds) -> f64 {
    if v <= b.lower {
        return b.lower;
    }
    if v >= b.upper {
        return b.upper;
    }
    let snapped = (v / step).round() * step;
    snapped.clamp(b.lower, b.upper)
}
