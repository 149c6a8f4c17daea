use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::nn::{dropout, leaky_relu, BatchNorm, Conv2d, ConvTranspose2d, Ctx, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pix2PixConfig {
    /// Square input side; a power of two, at least 64.
    pub input_size: usize,
    pub generator_filters: usize,
    pub discriminator_filters: usize,
    pub l1_weight: f64,
    pub dropout_rate: f64,
}

impl Default for Pix2PixConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            generator_filters: 16,
            discriminator_filters: 16,
            l1_weight: 100.0,
            dropout_rate: 0.5,
        }
    }
}

impl Pix2PixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 64 || !self.input_size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "pix2pix input_size {} must be a power of two >= 64",
                self.input_size
            )));
        }
        if self.generator_filters == 0 || self.discriminator_filters == 0 {
            return Err(Error::invalid("filter counts must be positive"));
        }
        if !(self.l1_weight >= 0.0) || !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("invalid l1_weight or dropout_rate"));
        }
        Ok(())
    }
}

struct Down {
    conv: Conv2d,
    norm: Option<BatchNorm>,
    activate: bool,
}

struct Up {
    conv: ConvTranspose2d,
    norm: Option<BatchNorm>,
    dropout: f64,
}

/// U-Net encoder/decoder with skip connections. Maps an RGB image in
/// `[-1, 1]` to a point-cloud image in `[0, 1]`.
pub struct Generator {
    pub store: ParamStore,
    pub config: Pix2PixConfig,
    downs: Vec<Down>,
    ups: Vec<Up>,
}

impl Generator {
    pub fn new(cfg: &Pix2PixConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed);
        let depth = cfg.input_size.trailing_zeros() as usize;
        let ngf = cfg.generator_filters;
        let ch: Vec<usize> = (0..depth).map(|i| ngf << i.min(3)).collect();
        let mut downs = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_in = if i == 0 { 3 } else { ch[i - 1] };
            let innermost = i == depth - 1;
            downs.push(Down {
                conv: Conv2d::new_gan(&mut ps, &format!("down{i}.conv"), c_in, ch[i], 4, 2, 1, true)?,
                norm: if i == 0 || innermost {
                    None
                } else {
                    Some(BatchNorm::new(&mut ps, &format!("down{i}.bn"), ch[i])?)
                },
                activate: i > 0,
            });
        }
        let mut ups = Vec::with_capacity(depth);
        for j in (0..depth).rev() {
            let c_in = if j == depth - 1 { ch[j] } else { 2 * ch[j] };
            let c_out = if j == 0 { 3 } else { ch[j - 1] };
            let drop = j + 3 >= depth && j > 0;
            ups.push(Up {
                conv: ConvTranspose2d::new_gan(&mut ps, &format!("up{j}.conv"), c_in, c_out, 4, 2, 1, true)?,
                norm: if j == 0 {
                    None
                } else {
                    Some(BatchNorm::new(&mut ps, &format!("up{j}.bn"), c_out)?)
                },
                dropout: if drop { cfg.dropout_rate } else { 0.0 },
            });
        }
        Ok(Self {
            store: ps,
            config: cfg.clone(),
            downs,
            ups,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut skips = Vec::with_capacity(self.downs.len());
        let mut h = x.clone();
        for d in &self.downs {
            if d.activate {
                h = leaky_relu(&h, 0.2)?;
            }
            h = d.conv.forward(&h)?;
            if let Some(bn) = &d.norm {
                h = bn.forward(&h, ctx)?;
            }
            skips.push(h.clone());
        }
        skips.pop();
        for u in &self.ups {
            h = u.conv.forward(&h.relu()?)?;
            if let Some(bn) = &u.norm {
                h = bn.forward(&h, ctx)?;
            }
            h = dropout(&h, u.dropout, ctx)?;
            if let Some(skip) = skips.pop() {
                h = Tensor::cat(&[&h, &skip], 1)?;
            }
        }
        Ok(((h.tanh()? + 1.0)? * 0.5)?)
    }
}

/// Patch discriminator over the channel-wise concatenation of an RGB image
/// and a point-cloud image. Returns one logit per receptive-field patch.
pub struct Discriminator {
    pub store: ParamStore,
    layers: Vec<(Conv2d, Option<BatchNorm>)>,
}

impl Discriminator {
    pub fn new(cfg: &Pix2PixConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed);
        let ndf = cfg.discriminator_filters;
        let spec = [
            (6, ndf, 2, false),
            (ndf, 2 * ndf, 2, true),
            (2 * ndf, 4 * ndf, 2, true),
            (4 * ndf, 8 * ndf, 1, true),
            (8 * ndf, 1, 1, false),
        ];
        let mut layers = Vec::with_capacity(spec.len());
        for (i, &(c_in, c_out, stride, bn)) in spec.iter().enumerate() {
            let conv = Conv2d::new_gan(&mut ps, &format!("d{i}.conv"), c_in, c_out, 4, stride, 1, true)?;
            let norm = if bn {
                Some(BatchNorm::new(&mut ps, &format!("d{i}.bn"), c_out)?)
            } else {
                None
            };
            layers.push((conv, norm));
        }
        Ok(Self { store: ps, layers })
    }

    /// `rgb` in `[-1, 1]`, `pc` in `[0, 1]` (rescaled internally).
    pub fn forward(&self, rgb: &Tensor, pc: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let pc = ((pc * 2.0)? - 1.0)?;
        let mut h = Tensor::cat(&[rgb, &pc], 1)?;
        let last = self.layers.len() - 1;
        for (i, (conv, norm)) in self.layers.iter().enumerate() {
            h = conv.forward(&h)?;
            if let Some(bn) = norm {
                h = bn.forward(&h, ctx)?;
            }
            if i != last {
                h = leaky_relu(&h, 0.2)?;
            }
        }
        Ok(h)
    }
}

pub struct Pix2PixModel {
    pub config: Pix2PixConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

pub fn build_pix2pix(cfg: &Pix2PixConfig, seed: u64) -> Result<Pix2PixModel> {
    Ok(Pix2PixModel {
        config: cfg.clone(),
        generator: Generator::new(cfg, seed)?,
        discriminator: Discriminator::new(cfg, seed.wrapping_add(1))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn cfg(size: usize) -> Pix2PixConfig {
        Pix2PixConfig {
            input_size: size,
            generator_filters: 4,
            discriminator_filters: 4,
            ..Pix2PixConfig::default()
        }
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let m = build_pix2pix(&cfg(128), 0).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 3, 128, 128), &Device::Cpu).unwrap();
        let y = m.generator.forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(y.dims(), &[1, 3, 128, 128]);
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn discriminator_emits_a_patch_grid() {
        let m = build_pix2pix(&cfg(64), 0).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 3, 64, 64), &Device::Cpu).unwrap();
        let y = Tensor::rand(0f32, 1.0, (2, 3, 64, 64), &Device::Cpu).unwrap();
        let d = m.discriminator.forward(&x, &y, &Ctx::eval()).unwrap();
        let (n, c, h, w) = d.dims4().unwrap();
        assert_eq!((n, c), (2, 1));
        assert!(h > 1 && h < 64 && w == h);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(build_pix2pix(&cfg(96), 0).is_err());
        assert!(build_pix2pix(&cfg(32), 0).is_err());
    }
}
