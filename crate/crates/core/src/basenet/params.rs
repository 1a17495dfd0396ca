use rand_distr::{Distribution, Normal};

use super::{BaseNetError, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    /// Spectral input length `n`.
    pub bands: usize,
    /// Patch depth `p` (principal components).
    pub components: usize,
    /// Patch side `w`.
    pub window: usize,
    /// Number of classes `k`.
    pub classes: usize,
    pub spectral_width: usize,
    pub conv_channels: usize,
    pub hidden: usize,
}

impl Arch {
    pub const DEFAULT_SPECTRAL_WIDTH: usize = 64;
    pub const DEFAULT_CONV_CHANNELS: usize = 64;
    pub const DEFAULT_HIDDEN: usize = 128;

    pub fn new(bands: usize, components: usize, window: usize, classes: usize) -> Result<Self> {
        Self {
            bands,
            components,
            window,
            classes,
            spectral_width: Self::DEFAULT_SPECTRAL_WIDTH,
            conv_channels: Self::DEFAULT_CONV_CHANNELS,
            hidden: Self::DEFAULT_HIDDEN,
        }
        .validated()
    }

    pub fn with_widths(mut self, spectral_width: usize, conv_channels: usize, hidden: usize) -> Result<Self> {
        self.spectral_width = spectral_width;
        self.conv_channels = conv_channels;
        self.hidden = hidden;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let positive = [
            ("bands", self.bands),
            ("components", self.components),
            ("classes", self.classes),
            ("spectral_width", self.spectral_width),
            ("conv_channels", self.conv_channels),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(BaseNetError::Arch(format!("{name} must be at least 1")));
        }
        if self.window < 4 || !self.window.is_multiple_of(4) {
            return Err(BaseNetError::Arch(format!(
                "window must be a positive multiple of 4 (two 2x2 pools), got {}",
                self.window
            )));
        }
        Ok(self)
    }

    /// Length of the flattened spatial features: `(w/4)² · channels`.
    pub fn spatial_features(&self) -> usize {
        (self.window / 4).pow(2) * self.conv_channels
    }

    pub fn fusion_width(&self) -> usize {
        self.spectral_width + self.spatial_features()
    }

    pub fn shape_of(&self, p: Param) -> Vec<usize> {
        let c = self.conv_channels;
        match p {
            Param::SpeW => vec![self.spectral_width, self.bands],
            Param::SpeB => vec![self.spectral_width],
            Param::Conv1K => vec![1, 1, self.components, c],
            Param::Conv1B | Param::Conv2B | Param::Conv3B => vec![c],
            Param::Conv2K | Param::Conv3K => vec![3, 3, c, c],
            Param::Fc1W => vec![self.hidden, self.fusion_width()],
            Param::Fc1B => vec![self.hidden],
            Param::ClsW => vec![self.classes, self.hidden],
            Param::ClsB => vec![self.classes],
        }
    }

    fn fan_in(&self, p: Param) -> usize {
        let shape = self.shape_of(p);
        match p {
            Param::SpeW | Param::Fc1W | Param::ClsW => shape[1],
            Param::Conv1K | Param::Conv2K | Param::Conv3K => shape[0] * shape[1] * shape[2],
            _ => 0,
        }
    }
}

/// Parameter tensors in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    SpeW,
    SpeB,
    Conv1K,
    Conv1B,
    Conv2K,
    Conv2B,
    Conv3K,
    Conv3B,
    Fc1W,
    Fc1B,
    ClsW,
    ClsB,
}

impl Param {
    pub const ALL: [Param; 12] = [
        Param::SpeW,
        Param::SpeB,
        Param::Conv1K,
        Param::Conv1B,
        Param::Conv2K,
        Param::Conv2B,
        Param::Conv3K,
        Param::Conv3B,
        Param::Fc1W,
        Param::Fc1B,
        Param::ClsW,
        Param::ClsB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::SpeW => "spectral.weight",
            Param::SpeB => "spectral.bias",
            Param::Conv1K => "conv1.kernel",
            Param::Conv1B => "conv1.bias",
            Param::Conv2K => "conv2.kernel",
            Param::Conv2B => "conv2.bias",
            Param::Conv3K => "conv3.kernel",
            Param::Conv3B => "conv3.bias",
            Param::Fc1W => "fc1.weight",
            Param::Fc1B => "fc1.bias",
            Param::ClsW => "classifier.weight",
            Param::ClsB => "classifier.bias",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            Param::SpeB | Param::Conv1B | Param::Conv2B | Param::Conv3B | Param::Fc1B | Param::ClsB
        )
    }
}

/// A full BaseNet weight set. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNetParams {
    arch: Arch,
    tensors: Vec<Tensor>,
}

impl BaseNetParams {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            tensors: Param::ALL.iter().map(|&p| Tensor::zeros(&arch.shape_of(p))).collect(),
        }
    }

    pub fn from_tensors(arch: Arch, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != Param::ALL.len() {
            return Err(BaseNetError::Arch(format!(
                "expected {} parameter tensors, got {}",
                Param::ALL.len(),
                tensors.len()
            )));
        }
        for (&p, t) in Param::ALL.iter().zip(&tensors) {
            if t.shape() != arch.shape_of(p) {
                return Err(BaseNetError::Arch(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name(),
                    t.shape(),
                    arch.shape_of(p)
                )));
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn get(&self, p: Param) -> &Tensor {
        &self.tensors[p as usize]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Tensor {
        &mut self.tensors[p as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &BaseNetParams, factor: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, factor)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(factor));
    }

    pub fn check_same_shape(&self, other: &BaseNetParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(BaseNetError::Arch(format!(
                "parameter sets differ in architecture: {:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// He-normal weights (std `√(2 / fan_in)`), zero biases. Each tensor draws
/// from its own stream keyed by `(seed, tensor index)`.
pub fn init_params(seed: u64, arch: Arch) -> Result<BaseNetParams> {
    let arch = arch.validated()?;
    let tensors = Param::ALL
        .iter()
        .map(|&p| {
            let shape = arch.shape_of(p);
            if p.is_bias() {
                return Tensor::zeros(&shape);
            }
            let std = (2.0 / arch.fan_in(p) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut rng = stream(seed, Purpose::Init, &[p as u64]);
            let len = shape.iter().product();
            let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(shape, data).expect("init shape")
        })
        .collect();
    Ok(BaseNetParams { arch, tensors })
}
