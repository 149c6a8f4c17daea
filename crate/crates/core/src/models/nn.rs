//! Small layer library on top of candle tensors.
//!
//! Parameters are created from a seeded generator so that model construction
//! is reproducible, and are registered by name in a [`ParamStore`] which also
//! handles checkpoint serialization.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable parameters plus non-trainable buffers (batch-norm
/// statistics).
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    buffers: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: Vec::new(),
            buffers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_unique(&self, name: &str) {
        debug_assert!(
            !self.vars.iter().chain(&self.buffers).any(|(n, _)| n == name),
            "duplicate parameter {name}"
        );
    }

    /// Normal(0, std) initialized parameter.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        self.check_unique(name);
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    /// Uniform(-bound, bound) initialized parameter.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        self.check_unique(name);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound) as f32)
            .collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_unique(name);
        let var = Var::from_tensor(&(Tensor::ones(shape, DType::F32, &self.device)? * value)?)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_unique(name);
        let var = Var::from_tensor(&(Tensor::ones(shape, DType::F32, &self.device)? * value)?)?;
        self.buffers.push((name.to_string(), var.clone()));
        Ok(var)
    }

    /// Trainable parameters, for the optimizer.
    pub fn trainable(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Copy of every parameter and buffer.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        let mut out = HashMap::new();
        for (n, v) in self.vars.iter().chain(&self.buffers) {
            out.insert(n.clone(), v.as_tensor().copy()?);
        }
        Ok(out)
    }

    /// Restores every entry of `snapshot` whose name (after stripping nothing)
    /// exists in this store. Returns how many tensors were set.
    pub fn restore(&self, snapshot: &HashMap<String, Tensor>) -> Result<usize> {
        self.restore_mapped(snapshot, |n| Some(n.to_string()))
    }

    /// Sets each local entry `n` from `snapshot[map(n)]` when present.
    pub fn restore_mapped(
        &self,
        snapshot: &HashMap<String, Tensor>,
        map: impl Fn(&str) -> Option<String>,
    ) -> Result<usize> {
        let mut count = 0;
        for (n, v) in self.vars.iter().chain(&self.buffers) {
            let Some(src) = map(n) else { continue };
            if let Some(t) = snapshot.get(&src) {
                if t.dims() != v.dims() {
                    return Err(Error::BundleIntegrity(format!(
                        "parameter {n}: checkpoint shape {:?}, model shape {:?}",
                        t.dims(),
                        v.dims()
                    )));
                }
                v.set(t)?;
                count += 1;
            }
        }
        Ok(count)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.snapshot()?, path)?;
        Ok(())
    }

    /// Loads a checkpoint; every local tensor must be present in the file.
    pub fn load(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &self.device)?;
        let total = self.vars.len() + self.buffers.len();
        let set = self.restore(&map)?;
        if set != total {
            return Err(Error::BundleIntegrity(format!(
                "{} provides {set} of {total} tensors",
                path.display()
            )));
        }
        Ok(())
    }
}

/// Forward-pass context: training flag plus the generator for stochastic
/// layers.
pub struct Ctx {
    pub train: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inverted-dropout keep mask scaled by `1 / (1 - rate)`.
    fn keep_mask(&mut self, shape: &[usize], rate: f64, device: &Device) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let scale = (1.0 / (1.0 - rate)) as f32;
        let data: Vec<f32> = (0..n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        Ok(Tensor::from_vec(data, shape, device)?)
    }
}

pub fn dropout(x: &Tensor, rate: f64, ctx: &mut Ctx) -> Result<Tensor> {
    if !ctx.train || rate <= 0.0 {
        return Ok(x.clone());
    }
    let mask = ctx.keep_mask(x.dims(), rate, x.device())?;
    Ok(x.mul(&mask)?)
}

pub fn swish(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Fully connected layer. With `dropconnect > 0`, training passes drop
/// individual weights rather than activations.
pub struct Linear {
    weight: Var,
    bias: Var,
    dropconnect: f64,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(&format!("{name}.weight"), &[output, input], bound)?,
            bias: ps.uniform(&format!("{name}.bias"), &[output], bound)?,
            dropconnect: 0.0,
        })
    }

    pub fn with_dropconnect(mut self, rate: f64) -> Self {
        self.dropconnect = rate;
        self
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let w = if ctx.train && self.dropconnect > 0.0 {
            let mask = ctx.keep_mask(w.dims(), self.dropconnect, w.device())?;
            w.mul(&mask)?
        } else {
            w.clone()
        };
        Ok(x.matmul(&w.t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Self {
            weight: ps.normal(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], std)?,
            bias: if bias {
                Some(ps.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
            } else {
                None
            },
            stride,
            padding,
        })
    }

    /// Normal(0, 0.02) weights, as customary for GAN components.
    pub fn new_gan(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        Ok(Self {
            weight: ps.normal(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], 0.02)?,
            bias: if bias {
                Some(ps.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
            } else {
                None
            },
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c_out, c_in, kh, kw) = self.weight.dims4()?;
        let y = if kh == 1 && kw == 1 && self.stride == 1 && self.padding == 0 {
            let (n, _, h, w) = x.dims4()?;
            let wm = self.weight.as_tensor().reshape((1, c_out, c_in))?;
            wm.broadcast_matmul(&x.reshape((n, c_in, h * w))?)?
                .reshape((n, c_out, h, w))?
        } else {
            x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?
        };
        add_channel_bias(y, self.bias.as_ref())
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Var>) -> Result<Tensor> {
    match bias {
        Some(b) => {
            let c = b.dims()[0];
            Ok(y.broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?)
        }
        None => Ok(y),
    }
}

/// Transposed convolution (kernel 4, stride 2, padding 1 doubles the size).
pub struct ConvTranspose2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new_gan(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        Ok(Self {
            weight: ps.normal(&format!("{name}.weight"), &[c_in, c_out, kernel, kernel], 0.02)?,
            bias: if bias {
                Some(ps.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
            } else {
                None
            },
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

/// Per-channel k x k convolution with "same" padding, computed by direct
/// loops (candle's grouped convolution dispatches one convolution per group).
pub struct DepthwiseConv2d {
    weight: Var,
    kernel: usize,
    stride: usize,
}

impl DepthwiseConv2d {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        let std = (2.0 / (kernel * kernel) as f64).sqrt();
        Ok(Self {
            weight: ps.normal(&format!("{name}.weight"), &[channels, kernel * kernel], std)?,
            kernel,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let op = DepthwiseOp {
            kernel: self.kernel,
            stride: self.stride,
        };
        Ok(x.contiguous()?.apply_op2(self.weight.as_tensor(), op)?)
    }
}

#[derive(Clone, Copy)]
struct DepthwiseOp {
    kernel: usize,
    stride: usize,
}

struct DwGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl DepthwiseOp {
    fn geom(&self, dims: &[usize]) -> DwGeom {
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        DwGeom {
            n,
            c,
            h,
            w,
            ho: h.div_ceil(self.stride),
            wo: w.div_ceil(self.stride),
        }
    }

    /// Calls `f(channel, tap, input_index, output_index)` for every in-bounds
    /// product term.
    fn for_each(&self, g: &DwGeom, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (k, s, p) = (self.kernel, self.stride, self.kernel / 2);
        for b in 0..g.n {
            for ch in 0..g.c {
                let plane_in = (b * g.c + ch) * g.h * g.w;
                let plane_out = (b * g.c + ch) * g.ho * g.wo;
                for oy in 0..g.ho {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let row_in = plane_in + iy as usize * g.w;
                        let row_out = plane_out + oy * g.wo;
                        for kx in 0..k {
                            let tap = ky * k + kx;
                            for ox in 0..g.wo {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                f(ch, tap, row_in + ix as usize, row_out + ox);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn contiguous_f32<'a>(s: &'a candle_core::CpuStorage, l: &candle_core::Layout) -> candle_core::Result<&'a [f32]> {
    let data = s.as_slice::<f32>()?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("depthwise conv expects contiguous input"),
    }
}

impl candle_core::CustomOp2 for DepthwiseOp {
    fn name(&self) -> &'static str {
        "depthwise-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &candle_core::CpuStorage,
        l1: &candle_core::Layout,
        s2: &candle_core::CpuStorage,
        l2: &candle_core::Layout,
    ) -> candle_core::Result<(candle_core::CpuStorage, candle_core::Shape)> {
        let x = contiguous_f32(s1, l1)?;
        let wt = contiguous_f32(s2, l2)?;
        let g = self.geom(l1.dims());
        let kk = self.kernel * self.kernel;
        let mut y = vec![0f32; g.n * g.c * g.ho * g.wo];
        self.for_each(&g, |ch, tap, i, o| y[o] += wt[ch * kk + tap] * x[i]);
        Ok((candle_core::CpuStorage::F32(y), (g.n, g.c, g.ho, g.wo).into()))
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        arg2: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let x: Vec<f32> = arg1.flatten_all()?.to_vec1()?;
        let wt: Vec<f32> = arg2.flatten_all()?.to_vec1()?;
        let gy: Vec<f32> = grad_res.flatten_all()?.to_vec1()?;
        let g = self.geom(arg1.dims());
        let kk = self.kernel * self.kernel;
        let mut gx = vec![0f32; x.len()];
        let mut gw = vec![0f32; wt.len()];
        self.for_each(&g, |ch, tap, i, o| {
            gx[i] += wt[ch * kk + tap] * gy[o];
            gw[ch * kk + tap] += x[i] * gy[o];
        });
        Ok((
            Some(Tensor::from_vec(gx, arg1.dims(), arg1.device())?),
            Some(Tensor::from_vec(gw, arg2.dims(), arg2.device())?),
        ))
    }
}

/// Batch normalization over the channel axis (dim 1) of 2-D or 4-D input.
pub struct BatchNorm {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: ps.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            running_mean: ps.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: ps.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let rank = x.rank();
        let c = x.dims()[1];
        let shape: Vec<usize> = if rank == 4 { vec![1, c, 1, 1] } else { vec![1, c] };
        let reduce = |t: &Tensor| -> Result<Tensor> {
            let mut m = t.mean_keepdim(0)?;
            if rank == 4 {
                m = m.mean_keepdim(2)?.mean_keepdim(3)?;
            }
            Ok(m)
        };
        let (mean, var) = if ctx.train {
            let mean = reduce(x)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = reduce(&centered.sqr()?)?;
            let count = x.elem_count() / c;
            let unbiased = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape.as_slice())?,
                self.running_var.as_tensor().reshape(shape.as_slice())?,
            )
        };
        let xhat = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.gamma.as_tensor().reshape(shape.as_slice())?)?
            .broadcast_add(&self.beta.as_tensor().reshape(shape.as_slice())?)?)
    }
}

/// Mean over the spatial dimensions: `(N, C, H, W) -> (N, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depthwise_matches_grouped_convolution() {
        let mut ps = ParamStore::new(1);
        for (k, stride, size) in [(3, 1, 7), (3, 2, 7), (5, 2, 8), (5, 1, 4)] {
            let dw = DepthwiseConv2d::new(&mut ps, &format!("dw{k}{stride}{size}"), 3, k, stride).unwrap();
            let x = Var::from_tensor(&Tensor::randn(0f32, 1.0, (2, 3, size, size), &Device::Cpu).unwrap()).unwrap();
            let kernel = dw.weight.as_tensor().reshape((3, 1, k, k)).unwrap();
            let ours = dw.forward(x.as_tensor()).unwrap();
            let reference = x.as_tensor().conv2d(&kernel, k / 2, stride, 1, 3).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let max_diff = |a: &Tensor, b: &Tensor| {
                (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
            };
            assert!(max_diff(&ours, &reference) < 1e-5);

            let probe = Tensor::randn(0f32, 1.0, ours.dims(), &Device::Cpu).unwrap();
            let g1 = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (reference * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            assert!(max_diff(g1.get(&x).unwrap(), g2.get(&x).unwrap()) < 1e-4);
            let gw1 = g1.get(&dw.weight).unwrap();
            let gw2 = g2.get(&dw.weight).unwrap();
            assert!(max_diff(gw1, gw2) < 1e-4);
        }
    }

    #[test]
    fn pointwise_conv_matches_general_path() {
        let mut ps = ParamStore::new(6);
        let conv = Conv2d::new(&mut ps, "pw", 4, 5, 1, 1, 0, true).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 4, 3, 3), &Device::Cpu).unwrap();
        let reference = x.conv2d(conv.weight.as_tensor(), 0, 1, 1, 1).unwrap();
        let reference = add_channel_bias(reference, conv.bias.as_ref()).unwrap();
        let diff = (conv.forward(&x).unwrap() - reference).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f32>().unwrap() < 1e-5);
    }

    #[test]
    fn batchnorm_normalizes_in_training_and_uses_running_stats_in_eval() {
        let mut ps = ParamStore::new(2);
        let bn = BatchNorm::new(&mut ps, "bn", 4).unwrap();
        let x = (Tensor::randn(0f32, 3.0, (16, 4), &Device::Cpu).unwrap() + 5.0).unwrap();
        let y = bn.forward(&x, &Ctx::train(0)).unwrap();
        let m = y.mean(0).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(m < 1e-4);
        let rm = bn.running_mean.as_tensor().mean_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(rm > 0.3 && rm < 0.7, "running mean moved by momentum: {rm}");
        let a = bn.forward(&x, &Ctx::eval()).unwrap();
        let b = bn.forward(&x, &Ctx::eval()).unwrap();
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut ps = ParamStore::new(3);
        let lin = Linear::new(&mut ps, "fc", 3, 2).unwrap();
        let snap = ps.snapshot().unwrap();
        let x = Tensor::ones((1, 3), DType::F32, &Device::Cpu).unwrap();
        let before = lin.forward(&x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        lin.weight.set(&lin.weight.as_tensor().zeros_like().unwrap()).unwrap();
        assert_eq!(ps.restore(&snap).unwrap(), 2);
        let after = lin.forward(&x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let mut ps = ParamStore::new(seed);
            Linear::new(&mut ps, "a", 5, 5).unwrap();
            ps.snapshot().unwrap()["a.weight"].to_vec2::<f32>().unwrap()
        };
        assert_eq!(build(4), build(4));
        assert_ne!(build(4), build(5));
    }
}
