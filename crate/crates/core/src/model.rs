//! Convolution-only U-Nets for the coarse predictor and the residual denoiser.
//!
//! Neither network has attention or normalization layers. The middle of the
//! U-Net is a stack of four dilated 3×3 convolutions. The denoiser is
//! conditioned on the timestep through a sinusoidal embedding and an MLP
//! whose output is projected into every encoder/decoder block, and on the
//! coarse prediction through channel concatenation with `x_t`.

use std::collections::BTreeMap;

use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::numerics::{
    add, add_channel_bias, concat_channels, conv2d, linear, no_grad, silu, upsample_nearest,
    Conv2dArgs, Tensor,
};
use crate::rng::{uniform_vec, Rng};
use crate::schedule::NoiseSchedule;

/// Named parameters in a stable (sorted) order.
pub type ParamSet = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub bottleneck_dilations: Vec<usize>,
    /// 0 disables timestep conditioning (coarse predictor).
    pub time_embed_dim: usize,
}

impl UNetConfig {
    /// Toy coarse predictor for `channels`-channel documents.
    pub fn coarse(channels: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            base_channels: 16,
            channel_multipliers: vec![1, 2, 4],
            bottleneck_dilations: vec![1, 2, 4, 8],
            time_embed_dim: 0,
        }
    }

    /// Toy denoiser: input is `x_t` concatenated with the condition.
    pub fn denoiser(channels: usize) -> Self {
        Self {
            in_channels: 2 * channels,
            time_embed_dim: 32,
            ..Self::coarse(channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.base_channels == 0
            || self.channel_multipliers.is_empty()
            || self.channel_multipliers.contains(&0)
        {
            return Err(Error::invalid(format!("degenerate U-Net config {self:?}")));
        }
        if self.bottleneck_dilations.len() != 4 || self.bottleneck_dilations.contains(&0) {
            return Err(Error::invalid(format!(
                "bottleneck needs exactly four positive dilations, got {:?}",
                self.bottleneck_dilations
            )));
        }
        if self.time_embed_dim % 2 == 1 {
            return Err(Error::invalid("time embedding dimension must be even"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.channel_multipliers.len()
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth() - 1)
    }

    /// Feature width of each encoder stage.
    pub fn widths(&self) -> Vec<usize> {
        self.channel_multipliers
            .iter()
            .map(|m| m * self.base_channels)
            .collect()
    }
}

/// Sinusoidal timestep features: `dim/2` sines then `dim/2` cosines over a
/// geometric frequency ladder from 1 down to 1e-4.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f32>> {
    if dim == 0 || dim % 2 == 1 {
        return Err(Error::invalid(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| {
            if half == 1 {
                1.0
            } else {
                1e-4f64.powf(i as f64 / (half - 1) as f64)
            }
        })
        .collect();
    let t = t as f64;
    let mut out: Vec<f32> = freqs.iter().map(|f| (t * f).sin() as f32).collect();
    out.extend(freqs.iter().map(|f| (t * f).cos() as f32));
    Ok(out)
}

/// Stateless architecture; parameters live in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNet {
    cfg: UNetConfig,
}

struct Layer<'a> {
    params: &'a ParamSet,
}

impl Layer<'_> {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    fn conv(&self, prefix: &str, x: &Tensor, args: Conv2dArgs) -> Result<Tensor> {
        conv2d(
            x,
            self.get(&format!("{prefix}.w"))?,
            Some(self.get(&format!("{prefix}.b"))?),
            args,
        )
    }

    fn dense(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        linear(
            x,
            self.get(&format!("{prefix}.w"))?,
            Some(self.get(&format!("{prefix}.b"))?),
        )
    }

    fn has(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }
}

const SAME3: Conv2dArgs = Conv2dArgs {
    stride: 1,
    padding: 1,
    dilation: 1,
};
const POINT: Conv2dArgs = Conv2dArgs {
    stride: 1,
    padding: 0,
    dilation: 1,
};
const DOWN: Conv2dArgs = Conv2dArgs {
    stride: 2,
    padding: 1,
    dilation: 1,
};

impl UNet {
    pub fn new(cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Every parameter name with its shape, in construction order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let cfg = &self.cfg;
        let widths = cfg.widths();
        let temb = cfg.time_embed_dim;
        let mut out = Vec::new();
        let mut conv = |name: String, o: usize, i: usize, k: usize| {
            out.push((format!("{name}.w"), vec![o, i, k, k]));
            out.push((format!("{name}.b"), vec![o]));
        };
        conv("in".into(), widths[0], cfg.in_channels, 3);
        let block = |conv: &mut dyn FnMut(String, usize, usize, usize), name: &str, cin: usize, cout: usize| {
            conv(format!("{name}.conv1"), cout, cin, 3);
            conv(format!("{name}.conv2"), cout, cout, 3);
            if cin != cout {
                conv(format!("{name}.skip"), cout, cin, 1);
            }
        };
        let mut cin = widths[0];
        for (i, &w) in widths.iter().enumerate() {
            block(&mut conv, &format!("enc{i}"), cin, w);
            if i + 1 < widths.len() {
                conv(format!("down{i}"), w, w, 3);
            }
            cin = w;
        }
        for j in 0..cfg.bottleneck_dilations.len() {
            conv(format!("mid{j}"), cin, cin, 3);
        }
        for i in (0..widths.len()).rev() {
            if i + 1 < widths.len() {
                conv(format!("up{i}"), widths[i], widths[i + 1], 3);
            }
            block(&mut conv, &format!("dec{i}"), 2 * widths[i], widths[i]);
        }
        conv("out".into(), cfg.out_channels, widths[0], 3);

        if temb > 0 {
            let mut dense = |name: String, o: usize, i: usize| {
                out.push((format!("{name}.w"), vec![o, i]));
                out.push((format!("{name}.b"), vec![o]));
            };
            dense("time.0".into(), temb, temb);
            dense("time.1".into(), temb, temb);
            for (i, &w) in widths.iter().enumerate() {
                dense(format!("enc{i}.temb"), w, temb);
                dense(format!("dec{i}.temb"), w, temb);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Weights uniform in `±1/√fan_in`, biases zero, output convolution zero.
    pub fn init(&self, rng: &mut Rng) -> ParamSet {
        let mut params = ParamSet::new();
        for (name, shape) in self.layout() {
            let n: usize = shape.iter().product();
            let data = if name.starts_with("out.") || name.ends_with(".b") {
                vec![0.0; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                uniform_vec(rng, n, 1.0 / (fan_in as f32).sqrt())
            };
            let t = Tensor::parameter(&shape, data).expect("layout shapes are positive");
            params.insert(name, t);
        }
        params
    }

    /// Forward pass. `x` must have spatial extents divisible by
    /// [`UNetConfig::divisor`]; `t` holds one timestep per sample when the net
    /// is time-conditioned.
    pub fn forward(&self, params: &ParamSet, x: &Tensor, t: Option<&[usize]>) -> Result<Tensor> {
        let cfg = &self.cfg;
        let [n, c, h, w] = crate::numerics::dims4("unet", x)?;
        if c != cfg.in_channels {
            return Err(Error::ShapeMismatch {
                op: "unet input channels",
                left: x.shape().to_vec(),
                right: vec![cfg.in_channels],
            });
        }
        let d = cfg.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::invalid(format!(
                "unet input {h}x{w} is not a multiple of {d}"
            )));
        }
        let layer = Layer { params };
        let temb = match (cfg.time_embed_dim, t) {
            (0, _) => None,
            (dim, Some(ts)) => {
                if ts.len() != n {
                    return Err(Error::invalid(format!(
                        "{} timesteps for a batch of {n}",
                        ts.len()
                    )));
                }
                let mut feats = Vec::with_capacity(n * dim);
                for &ti in ts {
                    feats.extend(time_embedding(ti, dim)?);
                }
                let e = Tensor::from_vec(&[n, dim], feats)?;
                let e = silu(&layer.dense("time.0", &e)?);
                Some(silu(&layer.dense("time.1", &e)?))
            }
            (_, None) => return Err(Error::invalid("time-conditioned U-Net needs timesteps")),
        };

        let block = |name: &str, x: &Tensor| -> Result<Tensor> {
            let mut h = silu(&layer.conv(&format!("{name}.conv1"), x, SAME3)?);
            if let Some(e) = &temb {
                let proj = layer.dense(&format!("{name}.temb"), e)?;
                h = add_channel_bias(&h, &proj)?;
            }
            let h = silu(&layer.conv(&format!("{name}.conv2"), &h, SAME3)?);
            let skip = if layer.has(&format!("{name}.skip.w")) {
                layer.conv(&format!("{name}.skip"), x, POINT)?
            } else {
                x.clone()
            };
            add(&h, &skip)
        };

        let depth = cfg.depth();
        let mut h = layer.conv("in", x, SAME3)?;
        let mut skips = Vec::with_capacity(depth);
        for i in 0..depth {
            h = block(&format!("enc{i}"), &h)?;
            skips.push(h.clone());
            if i + 1 < depth {
                h = silu(&layer.conv(&format!("down{i}"), &h, DOWN)?);
            }
        }
        h = self.bottleneck(&layer, h)?;
        for i in (0..depth).rev() {
            if i + 1 < depth {
                h = upsample_nearest(&h, 2)?;
                h = silu(&layer.conv(&format!("up{i}"), &h, SAME3)?);
            }
            h = concat_channels(&h, &skips[i])?;
            h = block(&format!("dec{i}"), &h)?;
        }
        layer.conv("out", &h, SAME3)
    }

    fn bottleneck(&self, layer: &Layer<'_>, mut h: Tensor) -> Result<Tensor> {
        for (j, &dil) in self.cfg.bottleneck_dilations.iter().enumerate() {
            let args = Conv2dArgs::new(1, dil, dil);
            let y = silu(&layer.conv(&format!("mid{j}"), &h, args)?);
            h = add(&h, &y)?;
        }
        Ok(h)
    }

    /// The dilated residual stack alone, applied to a feature map with the
    /// bottleneck's channel count.
    pub fn forward_bottleneck(&self, params: &ParamSet, h: &Tensor) -> Result<Tensor> {
        self.bottleneck(&Layer { params }, h.clone())
    }

    /// Inference on a single image of any size: pads by replication to the
    /// next valid extent, runs without recording a graph, crops back.
    pub fn apply(&self, params: &ParamSet, x: &ImageBuffer, t: Option<usize>) -> Result<ImageBuffer> {
        self.apply_many(params, &[x], t)
    }

    /// Inference on channel-concatenated inputs of equal size.
    pub fn apply_many(&self, params: &ParamSet, inputs: &[&ImageBuffer], t: Option<usize>) -> Result<ImageBuffer> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("no inputs"))?;
        let (w, h) = (first.width(), first.height());
        let d = self.cfg.divisor();
        let (pw, ph) = (w.div_ceil(d) * d, h.div_ceil(d) * d);
        let mut data = Vec::new();
        let mut channels = 0;
        for im in inputs {
            if (im.width(), im.height()) != (w, h) {
                return Err(Error::ShapeMismatch {
                    op: "unet inputs",
                    left: vec![h, w],
                    right: vec![im.height(), im.width()],
                });
            }
            channels += im.channels();
            data.extend(im.pad_replicate(pw, ph).into_pixels());
        }
        let x = Tensor::from_vec(&[1, channels, ph, pw], data)?;
        let ts = t.map(|t| [t]);
        let out = no_grad(|| self.forward(params, &x, ts.as_ref().map(|a| a.as_slice())))?;
        let out = ImageBuffer::from_tensor(&out, 0)?;
        if (pw, ph) == (w, h) {
            Ok(out)
        } else {
            out.crop(0, 0, w, h)
        }
    }
}

/// Deep copy of a parameter set as fresh leaves.
pub fn clone_params(params: &ParamSet) -> ParamSet {
    params
        .iter()
        .map(|(k, v)| (k.clone(), v.detach().into_parameter()))
        .collect()
}

/// What the denoiser is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Prediction {
    /// The clean residual `x_0` (default).
    #[default]
    Residual,
    /// The injected noise `ε`; ablation only.
    Noise,
}

impl Prediction {
    pub fn name(self) -> &'static str {
        match self {
            Prediction::Residual => "x0",
            Prediction::Noise => "eps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x0" => Ok(Prediction::Residual),
            "eps" => Ok(Prediction::Noise),
            _ => Err(Error::invalid(format!("unknown prediction type `{s}`"))),
        }
    }
}

/// Both networks, their EMA shadows and the noise schedule.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub coarse: UNet,
    pub denoiser: UNet,
    pub coarse_params: ParamSet,
    pub denoiser_params: ParamSet,
    pub ema_coarse: ParamSet,
    pub ema_denoiser: ParamSet,
    pub schedule: NoiseSchedule,
    pub prediction: Prediction,
}

impl ModelBundle {
    pub fn new(coarse: UNetConfig, denoiser: UNetConfig, schedule: NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        if denoiser.in_channels != 2 * coarse.out_channels || denoiser.out_channels != coarse.out_channels {
            return Err(Error::invalid(format!(
                "denoiser channels {}→{} do not match coarse output {}",
                denoiser.in_channels, denoiser.out_channels, coarse.out_channels
            )));
        }
        let coarse = UNet::new(coarse)?;
        let denoiser = UNet::new(denoiser)?;
        let coarse_params = coarse.init(rng);
        let denoiser_params = denoiser.init(rng);
        Ok(Self {
            ema_coarse: clone_params(&coarse_params),
            ema_denoiser: clone_params(&denoiser_params),
            coarse,
            denoiser,
            coarse_params,
            denoiser_params,
            schedule,
            prediction: Prediction::Residual,
        })
    }

    /// Default toy bundle for `channels`-channel documents.
    pub fn toy(channels: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(
            UNetConfig::coarse(channels),
            UNetConfig::denoiser(channels),
            NoiseSchedule::default_linear(),
            rng,
        )
    }

    pub fn channels(&self) -> usize {
        self.coarse.config().out_channels
    }

    pub fn param_count(&self) -> usize {
        self.coarse.param_count() + self.denoiser.param_count()
    }

    /// Coarse and denoiser parameters, live or EMA.
    pub fn weights(&self, ema: bool) -> (&ParamSet, &ParamSet) {
        if ema {
            (&self.ema_coarse, &self.ema_denoiser)
        } else {
            (&self.coarse_params, &self.denoiser_params)
        }
    }

    /// All live parameters with `cp.`/`den.` prefixes.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let cp = self.coarse_params.iter().map(|(k, v)| (format!("cp.{k}"), v.clone()));
        let den = self
            .denoiser_params
            .iter()
            .map(|(k, v)| (format!("den.{k}"), v.clone()));
        cp.chain(den).collect()
    }

    /// `x^C = C_θ(y)`, unclamped.
    pub fn cp_forward(&self, y: &ImageBuffer, ema: bool) -> Result<ImageBuffer> {
        if y.channels() != self.coarse.config().in_channels {
            return Err(Error::ShapeMismatch {
                op: "cp_forward channels",
                left: vec![y.channels()],
                right: vec![self.coarse.config().in_channels],
            });
        }
        self.coarse.apply(self.weights(ema).0, y, None)
    }

    /// `x̂_res = f_θ(x_t, t, cond)`.
    pub fn denoiser_forward(&self, x_t: &ImageBuffer, t: usize, cond: &ImageBuffer, ema: bool) -> Result<ImageBuffer> {
        if !x_t.same_shape(cond) {
            return Err(Error::ShapeMismatch {
                op: "denoiser_forward",
                left: vec![x_t.channels(), x_t.height(), x_t.width()],
                right: vec![cond.channels(), cond.height(), cond.width()],
            });
        }
        self.denoiser.apply_many(self.weights(ema).1, &[x_t, cond], Some(t))
    }
}
