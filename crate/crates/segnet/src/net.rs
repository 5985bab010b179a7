use pgps_core::rng::{Domain, RngStream};
use pgps_core::Shape3;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conv::Conv3d;
use crate::error::{Error, Result};
use crate::tensor::{leaky_relu, leaky_relu_backward, upsample_nearest, upsample_nearest_backward, Tensor};

fn default_base_channels() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub pools_per_axis: [u32; 3],
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    pub num_classes: u16,
    pub seed: u64,
}

impl SegNetConfig {
    pub fn new(pools_per_axis: [u32; 3], num_classes: u16, seed: u64) -> Self {
        Self {
            pools_per_axis,
            base_channels: default_base_channels(),
            num_classes,
            seed,
        }
    }

    pub fn levels(&self) -> usize {
        self.pools_per_axis.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn divisors(&self) -> Shape3 {
        self.pools_per_axis.map(|p| 1usize << p)
    }

    /// Per-axis resampling factor between level `l - 1` and level `l`.
    fn factor(&self, level: usize) -> Shape3 {
        self.pools_per_axis.map(|p| if level as u32 <= p { 2 } else { 1 })
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn check_input(&self, dims: Shape3) -> Result<()> {
        let div = self.divisors();
        if (0..3).any(|a| dims[a] == 0 || !dims[a].is_multiple_of(div[a])) {
            return Err(Error::Indivisible { dims, divisor: div });
        }
        Ok(())
    }
}

/// Layer indices into [`SegNet::layers`].
#[derive(Debug, Clone)]
struct Layout {
    stem: usize,
    down: Vec<usize>,
    conv: Vec<usize>,
    up: Vec<usize>,
    head: usize,
}

/// Encoder-decoder with additive skips. Level `l` has `base * 2^l` channels;
/// the encoder goes down with strided convolutions and the decoder comes back
/// with a 1x1x1 projection and nearest upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub config: SegNetConfig,
    pub params: Vec<f64>,
    layers: Vec<(Conv3d, usize)>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    stem_pre: Tensor,
    enc: Vec<Tensor>,
    down_out: Vec<Tensor>,
    conv_pre: Vec<Tensor>,
    dec_pre: Vec<Tensor>,
    dec: Vec<Tensor>,
}

impl ForwardCache {
    /// Which side of the leaky-ReLU kink every pre-activation sits on.
    pub fn activation_pattern(&self) -> Vec<bool> {
        std::iter::once(&self.stem_pre)
            .chain(&self.conv_pre)
            .chain(&self.dec_pre)
            .flat_map(|t| t.data.iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl SegNet {
    /// He-initialised network; biases start at zero.
    pub fn new(config: SegNetConfig) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", config.num_classes)));
        }
        if config.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        let mut convs = vec![Conv3d::cube(1, config.base_channels, 3)];
        for l in 1..=config.levels() {
            convs.push(Conv3d::downsample(config.channels(l - 1), config.channels(l), config.factor(l)));
            convs.push(Conv3d::cube(config.channels(l), config.channels(l), 3));
        }
        for l in (1..=config.levels()).rev() {
            convs.push(Conv3d::cube(config.channels(l), config.channels(l - 1), 1));
        }
        convs.push(Conv3d::cube(config.base_channels, config.num_classes as usize, 1));

        let mut layers = Vec::with_capacity(convs.len());
        let mut offset = 0;
        for conv in convs {
            layers.push((conv, offset));
            offset += conv.param_count();
        }
        let mut params = vec![0.0; offset];
        for (index, (conv, start)) in layers.iter().enumerate() {
            let std = (2.0 / conv.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = RngStream::new(config.seed, Domain::Init, [index as u64, 0, 0]);
            for w in &mut params[*start..*start + conv.weight_count()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self { config, params, layers })
    }

    /// Rebuilds a network around existing parameters.
    pub fn with_params(config: SegNetConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::new(config)?;
        if params.len() != net.params.len() {
            return Err(Error::ParamCount {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Name and parameter range of every layer, in parameter order.
    pub fn layer_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let lay = self.layout();
        self.layers
            .iter()
            .enumerate()
            .map(|(index, (conv, start))| {
                let name = if index == lay.stem {
                    "stem".to_string()
                } else if index == lay.head {
                    "head".to_string()
                } else if let Some(l) = lay.down.iter().position(|&d| d == index) {
                    format!("down{}", l + 1)
                } else if let Some(l) = lay.conv.iter().position(|&c| c == index) {
                    format!("conv{}", l + 1)
                } else {
                    let l = lay.up.iter().position(|&u| u == index).expect("every layer has a role");
                    format!("up{}", l + 1)
                };
                (name, *start..*start + conv.param_count())
            })
            .collect()
    }

    fn layout(&self) -> Layout {
        let levels = self.config.levels();
        Layout {
            stem: 0,
            down: (0..levels).map(|l| 1 + 2 * l).collect(),
            conv: (0..levels).map(|l| 2 + 2 * l).collect(),
            // up[l - 1] maps level l to level l - 1
            up: (0..levels).map(|l| self.layers.len() - 2 - l).collect(),
            head: self.layers.len() - 1,
        }
    }

    fn layer(&self, index: usize) -> (Conv3d, &[f64]) {
        let (conv, start) = self.layers[index];
        (conv, &self.params[start..start + conv.param_count()])
    }

    /// Zeroes the final projection so every voxel starts at uniform class
    /// probabilities.
    pub fn zero_head(&mut self) {
        let (conv, start) = self.layers[self.layout().head];
        self.params[start..start + conv.param_count()].fill(0.0);
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if x.c != 1 {
            return Err(Error::Shape(format!("expected 1 input channel, got {}", x.c)));
        }
        self.config.check_input(x.dims)?;
        let lay = self.layout();
        let levels = self.config.levels();

        let (conv, p) = self.layer(lay.stem);
        let stem_pre = conv.forward(p, x);
        let mut enc = vec![leaky_relu(&stem_pre)];
        let mut down_out = Vec::with_capacity(levels);
        let mut conv_pre = Vec::with_capacity(levels);
        for l in 0..levels {
            let (conv, p) = self.layer(lay.down[l]);
            let d = conv.forward(p, &enc[l]);
            let (conv, p) = self.layer(lay.conv[l]);
            let c = conv.forward(p, &d);
            enc.push(leaky_relu(&c));
            down_out.push(d);
            conv_pre.push(c);
        }

        // dec[l] holds the decoder activation at level l for l < levels
        let mut dec_pre: Vec<Tensor> = Vec::with_capacity(levels);
        let mut dec: Vec<Tensor> = Vec::with_capacity(levels);
        for l in (1..=levels).rev() {
            let below = if l == levels { &enc[levels] } else { dec.last().expect("decoder level") };
            let (conv, p) = self.layer(lay.up[l - 1]);
            let mut pre = upsample_nearest(&conv.forward(p, below), self.config.factor(l));
            pre.add_assign(&enc[l - 1]);
            dec.push(leaky_relu(&pre));
            dec_pre.push(pre);
        }
        dec_pre.reverse();
        dec.reverse();

        let top = if levels == 0 { &enc[0] } else { &dec[0] };
        let (conv, p) = self.layer(lay.head);
        let logits = conv.forward(p, top);
        let cache = ForwardCache {
            input: x.clone(),
            stem_pre,
            enc,
            down_out,
            conv_pre,
            dec_pre,
            dec,
        };
        Ok((logits, cache))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Gradient of the loss with respect to every parameter, given the loss
    /// gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Vec<f64> {
        let lay = self.layout();
        let levels = self.config.levels();
        let mut grads = vec![0.0; self.params.len()];
        let slot = |index: usize, grads: &mut Vec<f64>, x: &Tensor, g: &Tensor, want: bool| {
            let (conv, start) = self.layers[index];
            let p = &self.params[start..start + conv.param_count()];
            conv.backward(p, x, g, &mut grads[start..start + conv.param_count()], want)
        };

        let top = if levels == 0 { &cache.enc[0] } else { &cache.dec[0] };
        let mut g_top = slot(lay.head, &mut grads, top, grad_logits, true).expect("input grad");

        let mut g_enc: Vec<Option<Tensor>> = vec![None; levels + 1];
        for l in 1..=levels {
            let mut g_pre = g_top;
            leaky_relu_backward(&cache.dec_pre[l - 1], &mut g_pre);
            let g_small = upsample_nearest_backward(&g_pre, self.config.factor(l));
            g_enc[l - 1] = Some(g_pre);
            let below = if l == levels { &cache.enc[levels] } else { &cache.dec[l] };
            g_top = slot(lay.up[l - 1], &mut grads, below, &g_small, true).expect("input grad");
        }
        if levels == 0 {
            g_enc[0] = Some(g_top);
        } else {
            g_enc[levels] = Some(g_top);
        }

        for l in (1..=levels).rev() {
            let mut g = g_enc[l].take().expect("encoder grad");
            leaky_relu_backward(&cache.conv_pre[l - 1], &mut g);
            let g_down = slot(lay.conv[l - 1], &mut grads, &cache.down_out[l - 1], &g, true).expect("input grad");
            let g_prev = slot(lay.down[l - 1], &mut grads, &cache.enc[l - 1], &g_down, true).expect("input grad");
            g_enc[l - 1].as_mut().expect("skip grad").add_assign(&g_prev);
        }

        let mut g = g_enc[0].take().expect("stem grad");
        leaky_relu_backward(&cache.stem_pre, &mut g);
        slot(lay.stem, &mut grads, &cache.input, &g, false);
        grads
    }

    /// Multiply-accumulates of one forward pass per input voxel.
    pub fn macs_per_voxel(&self) -> f64 {
        let lay = self.layout();
        let shrink = |level: usize| -> f64 {
            (1..=level).map(|l| self.config.factor(l).iter().product::<usize>() as f64).product()
        };
        let mut at_level = vec![(lay.stem, 0), (lay.head, 0)];
        for l in 0..self.config.levels() {
            at_level.extend([(lay.down[l], l + 1), (lay.conv[l], l + 1), (lay.up[l], l + 1)]);
        }
        at_level
            .into_iter()
            .map(|(index, level)| self.layers[index].0.weight_count() as f64 / shrink(level))
            .sum()
    }
}

/// Stacks single-channel patches of equal size into a `[n, 1, ...]` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a [f32]>, dims: Shape3) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        assert_eq!(img.len(), dims.iter().product::<usize>(), "patch size");
        data.extend(img.iter().map(|&v| v as f64));
        n += 1;
    }
    Tensor::from_data(n, 1, dims, data)
}
