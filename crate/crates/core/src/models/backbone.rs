//! Mobile inverted-bottleneck convolutional backbone with compound width /
//! depth scaling, and the fully connected head stack placed on top of it.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::nn::{dropout, global_avg_pool, swish, BatchNorm, Conv2d, Ctx, DepthwiseConv2d, Linear, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub width_multiplier: f64,
    pub depth_multiplier: f64,
    pub head_units: Vec<usize>,
    pub dropconnect_rate: f64,
    pub dropout_rate: f64,
    pub batch_norm: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            width_multiplier: 0.25,
            depth_multiplier: 0.5,
            head_units: vec![1024, 256, 32],
            dropconnect_rate: 0.2,
            dropout_rate: 0.2,
            batch_norm: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.depth_multiplier > 0.0) {
            return Err(Error::invalid("backbone multipliers must be positive"));
        }
        if self.head_units.is_empty() || self.head_units.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!(
                "head_units {:?} must be non-empty and strictly decreasing",
                self.head_units
            )));
        }
        if self.input_size < 16 {
            return Err(Error::invalid("input_size must be >= 16"));
        }
        for r in [self.dropconnect_rate, self.dropout_rate] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn round_filters(&self, filters: usize) -> usize {
        let divisor = 8usize;
        let f = filters as f64 * self.width_multiplier;
        let mut r = (((f + divisor as f64 / 2.0) as usize) / divisor * divisor).max(divisor);
        if (r as f64) < 0.9 * f {
            r += divisor;
        }
        r
    }

    fn round_repeats(&self, repeats: usize) -> usize {
        ((repeats as f64 * self.depth_multiplier).ceil() as usize).max(1)
    }

    /// Width of the pooled feature vector.
    pub fn feature_width(&self) -> usize {
        self.round_filters(1280)
    }
}

/// (expand ratio, output channels, repeats, stride, kernel) of the B0 stages.
const STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1, 3),
    (6, 24, 2, 2, 3),
    (6, 40, 2, 2, 5),
    (6, 80, 3, 2, 3),
    (6, 112, 3, 1, 5),
    (6, 192, 4, 2, 5),
    (6, 320, 1, 1, 3),
];

struct MaybeNorm(Option<BatchNorm>);

impl MaybeNorm {
    fn new(ps: &mut ParamStore, name: &str, c: usize, on: bool) -> Result<Self> {
        Ok(Self(if on { Some(BatchNorm::new(ps, name, c)?) } else { None }))
    }
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        match &self.0 {
            Some(bn) => bn.forward(x, ctx),
            None => Ok(x.clone()),
        }
    }
}

struct SqueezeExcite {
    reduce: Conv2d,
    expand: Conv2d,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let s = global_avg_pool(x)?.reshape((n, c, 1, 1))?;
        let s = swish(&self.reduce.forward(&s)?)?;
        let s = candle_nn::ops::sigmoid(&self.expand.forward(&s)?)?;
        Ok(x.broadcast_mul(&s)?)
    }
}

struct MbConv {
    expand: Option<(Conv2d, MaybeNorm)>,
    depthwise: DepthwiseConv2d,
    dw_norm: MaybeNorm,
    se: SqueezeExcite,
    project: Conv2d,
    project_norm: MaybeNorm,
    residual: bool,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        expand_ratio: usize,
        kernel: usize,
        stride: usize,
        bn: bool,
    ) -> Result<Self> {
        let mid = c_in * expand_ratio;
        let expand = if expand_ratio != 1 {
            Some((
                Conv2d::new(ps, &format!("{name}.expand"), c_in, mid, 1, 1, 0, !bn)?,
                MaybeNorm::new(ps, &format!("{name}.expand_bn"), mid, bn)?,
            ))
        } else {
            None
        };
        let squeezed = (c_in / 4).max(1);
        Ok(Self {
            expand,
            depthwise: DepthwiseConv2d::new(ps, &format!("{name}.dw"), mid, kernel, stride)?,
            dw_norm: MaybeNorm::new(ps, &format!("{name}.dw_bn"), mid, bn)?,
            se: SqueezeExcite {
                reduce: Conv2d::new(ps, &format!("{name}.se_reduce"), mid, squeezed, 1, 1, 0, true)?,
                expand: Conv2d::new(ps, &format!("{name}.se_expand"), squeezed, mid, 1, 1, 0, true)?,
            },
            project: Conv2d::new(ps, &format!("{name}.project"), mid, c_out, 1, 1, 0, !bn)?,
            project_norm: MaybeNorm::new(ps, &format!("{name}.project_bn"), c_out, bn)?,
            residual: stride == 1 && c_in == c_out,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut h = x.clone();
        if let Some((conv, norm)) = &self.expand {
            h = swish(&norm.forward(&conv.forward(&h)?, ctx)?)?;
        }
        h = swish(&self.dw_norm.forward(&self.depthwise.forward(&h)?, ctx)?)?;
        h = self.se.forward(&h)?;
        h = self.project_norm.forward(&self.project.forward(&h)?, ctx)?;
        if self.residual {
            h = (h + x)?;
        }
        Ok(h)
    }
}

/// Convolutional feature extractor ending in global average pooling.
pub struct Backbone {
    stem: Conv2d,
    stem_norm: MaybeNorm,
    blocks: Vec<MbConv>,
    head_conv: Conv2d,
    head_norm: MaybeNorm,
    feature_width: usize,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let bn = cfg.batch_norm;
        let stem_c = cfg.round_filters(32);
        let stem = Conv2d::new(ps, &format!("{name}.stem"), 3, stem_c, 3, 2, 1, !bn)?;
        let stem_norm = MaybeNorm::new(ps, &format!("{name}.stem_bn"), stem_c, bn)?;
        let mut blocks = Vec::new();
        let mut c_in = stem_c;
        for (si, &(expand, c, repeats, stride, kernel)) in STAGES.iter().enumerate() {
            let c_out = cfg.round_filters(c);
            for r in 0..cfg.round_repeats(repeats) {
                let s = if r == 0 { stride } else { 1 };
                blocks.push(MbConv::new(
                    ps,
                    &format!("{name}.stage{si}.block{r}"),
                    c_in,
                    c_out,
                    expand,
                    kernel,
                    s,
                    bn,
                )?);
                c_in = c_out;
            }
        }
        let feature_width = cfg.feature_width();
        Ok(Self {
            stem,
            stem_norm,
            blocks,
            head_conv: Conv2d::new(ps, &format!("{name}.head_conv"), c_in, feature_width, 1, 1, 0, !bn)?,
            head_norm: MaybeNorm::new(ps, &format!("{name}.head_bn"), feature_width, bn)?,
            feature_width,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// `(N, 3, S, S)` in `[-1, 1]` to `(N, feature_width)`.
    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut h = swish(&self.stem_norm.forward(&self.stem.forward(x)?, ctx)?)?;
        for b in &self.blocks {
            h = b.forward(&h, ctx)?;
        }
        h = swish(&self.head_norm.forward(&self.head_conv.forward(&h)?, ctx)?)?;
        global_avg_pool(&h)
    }
}

/// One head layer: linear (with dropconnect) -> batch norm -> swish -> dropout.
pub struct DenseLayer {
    linear: Linear,
    norm: MaybeNorm,
    dropout: f64,
}

impl DenseLayer {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize, cfg: &BackboneConfig) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(ps, &format!("{name}.fc"), input, output)?.with_dropconnect(cfg.dropconnect_rate),
            norm: MaybeNorm::new(ps, &format!("{name}.bn"), output, cfg.batch_norm)?,
            dropout: cfg.dropout_rate,
        })
    }

    pub fn out_features(&self) -> usize {
        self.linear.out_features()
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self.linear.forward(x, ctx)?;
        let h = swish(&self.norm.forward(&h, ctx)?)?;
        dropout(&h, self.dropout, ctx)
    }
}

/// Stack of [`DenseLayer`]s with the given widths.
pub struct HeadStack {
    pub layers: Vec<DenseLayer>,
}

impl HeadStack {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, units: &[usize], cfg: &BackboneConfig) -> Result<Self> {
        let mut layers = Vec::with_capacity(units.len());
        let mut width = input;
        for (i, &u) in units.iter().enumerate() {
            layers.push(DenseLayer::new(ps, &format!("{name}.dense{i}"), width, u, cfg)?);
            width = u;
        }
        Ok(Self { layers })
    }

    pub fn out_features(&self, input: usize) -> usize {
        self.layers.last().map(|l| l.out_features()).unwrap_or(input)
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, ctx)?;
        }
        Ok(h)
    }
}
