use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InputSpec, LayerKind, LayerSpec, NetworkGraph};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Five 2x2 poolings.
const SIZE_MULTIPLE: usize = 32;
const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Vgg16Unet,
    SimpleUnet,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vgg16Unet => "vgg16-unet",
            Architecture::SimpleUnet => "simple-unet",
        }
    }

    pub fn default_base_filters(self) -> usize {
        match self {
            Architecture::Vgg16Unet => 64,
            Architecture::SimpleUnet => 16,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg16-unet" | "vgg16_unet" | "vgg16unet" => Ok(Architecture::Vgg16Unet),
            "simple-unet" | "simple_unet" | "unet" => Ok(Architecture::SimpleUnet),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub arch: Architecture,
    /// Odd kernel size of every conv except the final 1x1 projection.
    pub kernel_size: usize,
    /// Width of the first level. 64 reproduces VGG16; smaller values shrink
    /// every level proportionally.
    pub base_filters: usize,
    pub input_channels: usize,
    /// Square input side length.
    pub input_size: usize,
    pub seed: u64,
}

impl ArchConfig {
    pub fn vgg16_unet(input_size: usize) -> Self {
        Self {
            arch: Architecture::Vgg16Unet,
            kernel_size: 3,
            base_filters: 64,
            input_channels: 1,
            input_size,
            seed: 0,
        }
    }

    pub fn simple_unet(input_size: usize) -> Self {
        Self {
            arch: Architecture::SimpleUnet,
            kernel_size: 3,
            base_filters: 16,
            ..Self::vgg16_unet(input_size)
        }
    }

    pub fn with_kernel(mut self, k: usize) -> Self {
        self.kernel_size = k;
        self
    }

    pub fn with_base(mut self, base: usize) -> Self {
        self.base_filters = base;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.base_filters == 0 || self.input_channels == 0 {
            return Err(Error::Config(
                "base filters and input channels must be positive".into(),
            ));
        }
        if self.input_size == 0 || self.input_size % SIZE_MULTIPLE != 0 {
            return Err(Error::Divisibility {
                height: self.input_size,
                width: self.input_size,
                required: SIZE_MULTIPLE,
            });
        }
        Ok(())
    }
}

pub fn build(config: &ArchConfig) -> Result<NetworkGraph> {
    match config.arch {
        Architecture::Vgg16Unet => build_vgg16_unet(config),
        Architecture::SimpleUnet => build_simple_unet(config),
    }
}

/// Same layers and parameter shapes as [`build`], with every weight zero.
/// Cheap enough for inspecting the full-width models.
pub fn skeleton(config: &ArchConfig) -> Result<NetworkGraph> {
    let mut b = Builder::new(config)?;
    b.random_init = false;
    match config.arch {
        Architecture::Vgg16Unet => vgg16_unet(b),
        Architecture::SimpleUnet => simple_unet(b),
    }
}

/// Multiples of the base width for the 13 VGG16 encoder convs, per block.
const VGG_ENCODER: [&[usize]; 5] = [&[1, 1], &[2, 2], &[4, 4, 4], &[8, 8, 8], &[8, 8, 8]];
/// Decoder convs, deepest block first, three per block so that
/// 13 + 15 + 1 = 29 conv layers.
const VGG_DECODER: [&[usize]; 5] = [&[8, 8, 8], &[8, 8, 8], &[4, 4, 4], &[2, 2, 2], &[1, 1, 1]];

/// VGG16 encoder, mirrored five-block decoder with skip concatenations,
/// then a 1-filter 1x1 conv and a sigmoid.
pub fn build_vgg16_unet(config: &ArchConfig) -> Result<NetworkGraph> {
    let config = ArchConfig {
        arch: Architecture::Vgg16Unet,
        ..config.clone()
    };
    vgg16_unet(Builder::new(&config)?)
}

fn vgg16_unet(mut b: Builder) -> Result<NetworkGraph> {
    let base = b.config.base_filters;
    let k = b.config.kernel_size;

    let mut skips = Vec::new();
    for (bi, widths) in VGG_ENCODER.iter().enumerate() {
        let block = format!("enc{}", bi + 1);
        for (j, m) in widths.iter().enumerate() {
            b.conv_act(&block, j + 1, m * base, k)?;
        }
        skips.push(b.last());
        b.plain(&format!("{block}_pool"), LayerKind::MaxPool)?;
    }
    for (bi, widths) in VGG_DECODER.iter().enumerate() {
        let block = format!("dec{}", bi + 1);
        b.plain(&format!("{block}_up"), LayerKind::Upsample)?;
        let skip = skips[skips.len() - 1 - bi];
        b.plain(&format!("{block}_concat"), LayerKind::Concat { skip })?;
        for (j, m) in widths.iter().enumerate() {
            b.conv_act(&block, j + 1, m * base, k)?;
        }
    }
    b.head()?;
    Ok(b.finish())
}

/// Classic U-Net shape (four pooled levels plus a bottleneck, two convs per
/// level on each side) at reduced width: `base, 2*base, ..., 16*base`.
pub fn build_simple_unet(config: &ArchConfig) -> Result<NetworkGraph> {
    let config = ArchConfig {
        arch: Architecture::SimpleUnet,
        ..config.clone()
    };
    simple_unet(Builder::new(&config)?)
}

fn simple_unet(mut b: Builder) -> Result<NetworkGraph> {
    let base = b.config.base_filters;
    let k = b.config.kernel_size;

    let mut skips = Vec::new();
    for level in 0..4 {
        let block = format!("enc{}", level + 1);
        let width = base << level;
        b.conv_act(&block, 1, width, k)?;
        b.conv_act(&block, 2, width, k)?;
        skips.push(b.last());
        b.plain(&format!("{block}_pool"), LayerKind::MaxPool)?;
    }
    b.conv_act("bottleneck", 1, base << 4, k)?;
    b.conv_act("bottleneck", 2, base << 4, k)?;
    for level in 0..4 {
        let block = format!("dec{}", level + 1);
        let width = base << (3 - level);
        b.plain(&format!("{block}_up"), LayerKind::Upsample)?;
        let skip = skips[3 - level];
        b.plain(&format!("{block}_concat"), LayerKind::Concat { skip })?;
        b.conv_act(&block, 1, width, k)?;
        b.conv_act(&block, 2, width, k)?;
    }
    b.head()?;
    Ok(b.finish())
}

/// `n` draws from U(-bound, bound), generated in blocks so the output is
/// written once.
fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    // top 53 bits give a uniform draw on [0, 1)
    let unit = 1.0 / (1u64 << 53) as f64;
    let mut out = Vec::with_capacity(n);
    let mut block = [0u64; 512];
    while out.len() < n {
        let m = block.len().min(n - out.len());
        rng.fill(&mut block[..m]);
        out.extend(block[..m].iter().map(|&b| bound * (2.0 * (b >> 11) as f64 * unit - 1.0)));
    }
    out
}

struct Builder {
    config: ArchConfig,
    input: InputSpec,
    layers: Vec<LayerSpec>,
    params: ParamStore,
    shape: (usize, usize, usize),
    rng: ChaCha8Rng,
    random_init: bool,
}

impl Builder {
    fn new(config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let input = InputSpec {
            channels: config.input_channels,
            height: config.input_size,
            width: config.input_size,
        };
        Ok(Self {
            config: config.clone(),
            input,
            layers: Vec::new(),
            params: ParamStore::new(),
            shape: (input.channels, input.height, input.width),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            random_init: true,
        })
    }

    fn last(&self) -> usize {
        self.layers.len() - 1
    }

    fn push(&mut self, name: String, kind: LayerKind, output: (usize, usize, usize)) {
        let id = self.layers.len();
        self.layers.push(LayerSpec {
            id,
            name,
            kind,
            output,
        });
        self.shape = output;
    }

    fn plain(&mut self, name: &str, kind: LayerKind) -> Result<()> {
        let (c, h, w) = self.shape;
        let out = match &kind {
            LayerKind::MaxPool => (c, h / 2, w / 2),
            LayerKind::Upsample => (c, h * 2, w * 2),
            LayerKind::Concat { skip } => {
                let (sc, sh, sw) = self.layers[*skip].output;
                if (sh, sw) != (h, w) {
                    return Err(Error::Contract(format!(
                        "{name}: skip source {} is {sh}x{sw} but decoder is at {h}x{w}",
                        self.layers[*skip].name
                    )));
                }
                (sc + c, h, w)
            }
            LayerKind::Sigmoid => (c, h, w),
            LayerKind::Conv { .. } | LayerKind::Prelu { .. } => {
                unreachable!("parameterised layers go through conv/prelu")
            }
        };
        self.push(name.to_string(), kind, out);
        Ok(())
    }

    fn conv(&mut self, name: String, filters: usize, kernel: usize) -> Result<()> {
        let (cin, h, w) = self.shape;
        let fan_in = cin * kernel * kernel;
        // He-uniform bound for PReLU slope 0.25: U(-b, b), b = g / sqrt(fan_in)
        let gain = (6.0 / (1.0 + PRELU_INIT * PRELU_INIT)).sqrt();
        let bound = gain / (fan_in as f64).sqrt();
        let shape = [filters, cin, kernel, kernel];
        let w_t = if self.random_init {
            Tensor::new(shape.to_vec(), uniform(&mut self.rng, filters * fan_in, bound))?
        } else {
            Tensor::zeros(&shape)
        };
        let weight = self.params.insert(format!("{name}.weight"), w_t)?;
        let bias = self.params.insert(format!("{name}.bias"), Tensor::zeros(&[filters]))?;
        self.push(
            name,
            LayerKind::Conv {
                in_channels: cin,
                filters,
                kernel,
                weight,
                bias,
            },
            (filters, h, w),
        );
        Ok(())
    }

    fn prelu(&mut self, name: String) -> Result<ParamId> {
        let alpha = self
            .params
            .insert(format!("{name}.alpha"), Tensor::scalar(PRELU_INIT))?;
        let shape = self.shape;
        self.push(name, LayerKind::Prelu { alpha }, shape);
        Ok(alpha)
    }

    fn conv_act(&mut self, block: &str, j: usize, filters: usize, kernel: usize) -> Result<()> {
        self.conv(format!("{block}_conv{j}"), filters, kernel)?;
        self.prelu(format!("{block}_act{j}"))?;
        Ok(())
    }

    /// Final single-filter 1x1 projection and sigmoid.
    fn head(&mut self) -> Result<()> {
        self.conv("final_conv".into(), 1, 1)?;
        self.plain("final_sigmoid", LayerKind::Sigmoid)
    }

    fn finish(self) -> NetworkGraph {
        NetworkGraph::new(self.config, self.input, self.layers, self.params)
    }
}
