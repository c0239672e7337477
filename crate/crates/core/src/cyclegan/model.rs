//! Generator and discriminator architectures and the four-network bundle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, PadMode, Tensor};

/// Residual encoder-decoder generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub base_filters: usize,
    pub n_downsample: usize,
    pub n_blocks: usize,
    /// Kernel size of the first and last convolutions.
    pub outer_kernel: usize,
}

/// Patch discriminator producing a realness logit map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub base_filters: usize,
    /// Number of stride-2 stages.
    pub n_layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 256² network input, 9 residual blocks, 64 base filters.
    Paper,
    /// 64² network input, 3 residual blocks, narrow layers; CPU-trainable.
    Desk,
    /// 8² input and about 1.6k parameters in total, for gradient checks.
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::param(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Side of the square network input.
    pub resolution: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl ArchConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ArchConfig {
                resolution: 256,
                generator: GeneratorConfig {
                    channels: 3,
                    base_filters: 64,
                    n_downsample: 2,
                    n_blocks: 9,
                    outer_kernel: 7,
                },
                discriminator: DiscriminatorConfig {
                    channels: 3,
                    base_filters: 64,
                    n_layers: 3,
                },
            },
            Preset::Desk => ArchConfig {
                resolution: 64,
                generator: GeneratorConfig {
                    channels: 3,
                    base_filters: 8,
                    n_downsample: 2,
                    n_blocks: 3,
                    outer_kernel: 7,
                },
                discriminator: DiscriminatorConfig {
                    channels: 3,
                    base_filters: 8,
                    n_layers: 2,
                },
            },
            Preset::Tiny => ArchConfig {
                resolution: 8,
                generator: GeneratorConfig {
                    channels: 3,
                    base_filters: 2,
                    n_downsample: 1,
                    n_blocks: 1,
                    outer_kernel: 3,
                },
                discriminator: DiscriminatorConfig {
                    channels: 3,
                    base_filters: 2,
                    n_layers: 1,
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let d = &self.discriminator;
        if g.channels != 1 && g.channels != 3 || g.channels != d.channels {
            return Err(Error::param("generator and discriminator must share 1 or 3 channels"));
        }
        if g.base_filters == 0 || d.base_filters == 0 || g.outer_kernel % 2 == 0 {
            return Err(Error::param("filters must be positive and the outer kernel odd"));
        }
        if self.resolution % (1 << g.n_downsample) != 0 {
            return Err(Error::param(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution, g.n_downsample
            )));
        }
        if self.resolution <= g.outer_kernel / 2 {
            return Err(Error::param("resolution too small for the outer kernel"));
        }
        let mut side = self.resolution;
        for _ in 0..d.n_layers {
            side /= 2;
        }
        if side < 3 {
            return Err(Error::param(format!(
                "resolution {} too small for {} discriminator stages",
                self.resolution, d.n_layers
            )));
        }
        Ok(())
    }
}

fn conv(i: usize, o: usize, k: usize, s: usize, p: usize, mode: PadMode, bias: bool) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
        pad_mode: mode,
        bias,
    }
}

/// Layers of the residual generator. Convolutions followed by instance
/// normalisation carry no bias (it would be cancelled by the normalisation).
pub fn generator_layers(cfg: &GeneratorConfig) -> Vec<LayerSpec> {
    let f = cfg.base_filters;
    let k = cfg.outer_kernel;
    let mut layers = vec![
        conv(cfg.channels, f, k, 1, k / 2, PadMode::Reflect, false),
        LayerSpec::InstanceNorm,
        LayerSpec::Relu,
    ];
    for i in 0..cfg.n_downsample {
        let (a, b) = (f << i, f << (i + 1));
        layers.extend([conv(a, b, 3, 2, 1, PadMode::Zero, false), LayerSpec::InstanceNorm, LayerSpec::Relu]);
    }
    let d = f << cfg.n_downsample;
    for _ in 0..cfg.n_blocks {
        layers.push(LayerSpec::Residual(vec![
            conv(d, d, 3, 1, 1, PadMode::Reflect, false),
            LayerSpec::InstanceNorm,
            LayerSpec::Relu,
            conv(d, d, 3, 1, 1, PadMode::Reflect, false),
            LayerSpec::InstanceNorm,
        ]));
    }
    for i in (0..cfg.n_downsample).rev() {
        let (a, b) = (f << (i + 1), f << i);
        layers.extend([
            LayerSpec::Upsample2x,
            conv(a, b, 3, 1, 1, PadMode::Reflect, false),
            LayerSpec::InstanceNorm,
            LayerSpec::Relu,
        ]);
    }
    layers.extend([conv(f, cfg.channels, k, 1, k / 2, PadMode::Reflect, true), LayerSpec::Tanh]);
    layers
}

pub fn discriminator_layers(cfg: &DiscriminatorConfig) -> Vec<LayerSpec> {
    let f = cfg.base_filters;
    let mut layers = vec![conv(cfg.channels, f, 4, 2, 1, PadMode::Zero, true), LayerSpec::LeakyRelu(0.2)];
    let mut ch = f;
    for i in 1..cfg.n_layers {
        let next = f << i.min(3);
        layers.extend([conv(ch, next, 4, 2, 1, PadMode::Zero, false), LayerSpec::InstanceNorm, LayerSpec::LeakyRelu(0.2)]);
        ch = next;
    }
    let next = f << cfg.n_layers.min(3);
    layers.extend([conv(ch, next, 4, 1, 1, PadMode::Zero, false), LayerSpec::InstanceNorm, LayerSpec::LeakyRelu(0.2)]);
    layers.push(conv(next, 1, 4, 1, 1, PadMode::Zero, true));
    layers
}

/// Anything that maps a batch of images to a batch of the same shape. Used
/// by the loss functions so that closed-form stand-ins (identity, negation)
/// can replace trained generators.
pub trait ImageMap {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
}

impl ImageMap for Network {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.predict(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl ImageMap for Identity {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Negation;

impl ImageMap for Negation {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(negate(x))
    }
}

/// Pixelwise `v ↦ -v`; maps the model range onto itself and is an involution.
pub fn negate(batch: &Tensor) -> Tensor {
    batch.neg()
}

/// The four networks: `g_pa` translates ultrasound to pseudo-anatomy,
/// `g_us` the reverse; `d_pa` and `d_us` judge realness in each domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchConfig,
    pub g_pa: Network,
    pub g_us: Network,
    pub d_pa: Network,
    pub d_us: Network,
}

impl ModelBundle {
    /// Random N(0, 0.02²) initialisation, deterministic in `seed`.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = generator_layers(&arch.generator);
        let d = discriminator_layers(&arch.discriminator);
        Ok(ModelBundle {
            g_pa: Network::init(g.clone(), 0.02, &mut rng),
            g_us: Network::init(g, 0.02, &mut rng),
            d_pa: Network::init(d.clone(), 0.02, &mut rng),
            d_us: Network::init(d, 0.02, &mut rng),
            arch,
        })
    }

    /// Zeroes the final convolution of both generators so that they start
    /// from the all-zero (mid-gray) image.
    pub fn zero_generator_outputs(&mut self) {
        self.g_pa.zero_last_conv();
        self.g_us.zero_last_conv();
    }

    pub fn param_count(&self) -> usize {
        self.g_pa.param_count() + self.g_us.param_count() + self.d_pa.param_count() + self.d_us.param_count()
    }

    /// Checks that a batch fits the generator input.
    pub fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let c = self.arch.generator.channels;
        let r = self.arch.resolution;
        if batch.n == 0 {
            return Err(Error::param("empty batch"));
        }
        if batch.c != c || batch.h != r || batch.w != r {
            return Err(Error::Shape(format!(
                "batch {:?} does not match architecture {c}x{r}x{r}",
                batch.shape()
            )));
        }
        let (lo, hi) = batch.min_max();
        if lo < -1.0 || hi > 1.0 {
            return Err(Error::Range {
                expected: "[-1, 1]".into(),
                min: lo,
                max: hi,
            });
        }
        Ok(())
    }

    /// `G_PA` on a batch in the model range.
    pub fn generate_pa(&self, batch: &Tensor) -> Result<Tensor> {
        generator_forward(&self.g_pa, self, batch)
    }
}

/// Runs a generator after validating the batch against the bundle's architecture.
pub fn generator_forward(gen: &Network, bundle: &ModelBundle, batch: &Tensor) -> Result<Tensor> {
    bundle.check_batch(batch)?;
    gen.predict(batch)
}
