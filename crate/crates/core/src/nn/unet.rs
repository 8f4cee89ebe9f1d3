//! Factorised (2+1)-D convolutional U-Net used as the noise predictor.

use serde::{Deserialize, Serialize};

use super::graph::{ConvSpec, Var};
use super::params::{Ctx, Init};
use super::tensor::{Real, Tensor};

/// Shape of the denoiser network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub levels: usize,
    pub temporal_kernel: usize,
    pub cond_dim: usize,
}

impl DenoiserArch {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            base_width: 32,
            levels: 2,
            temporal_kernel: 3,
            cond_dim: 64,
        }
    }

    /// Smallest configuration, used for gradient checks and smoke tests.
    pub fn tiny(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            base_width: 4,
            levels: 2,
            temporal_kernel: 3,
            cond_dim: 8,
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn emb_dim(&self) -> usize {
        4 * self.base_width
    }

    /// Spatial sizes must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.base_width > 0
            && self.levels >= 1
            && self.temporal_kernel % 2 == 1
            && self.cond_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("invalid denoiser arch {self:?}")))
        }
    }
}

fn groups_for(c: usize) -> usize {
    [4, 2, 1].into_iter().find(|g| c % g == 0).unwrap_or(1)
}

/// Sinusoidal embedding of integer timesteps, `[B, dim]`.
pub fn timestep_embedding<T: Real>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); t.len() * dim];
    for (b, &step) in t.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = step as f64 * freq;
            out[b * dim + i] = T::lit(a.sin());
            out[b * dim + half + i] = T::lit(a.cos());
        }
    }
    Tensor::from_vec(&[t.len(), dim], out)
}

struct Emb {
    time: Var,
    cond: Var,
}

fn conv<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, cin: usize, cout: usize, spec: ConvSpec, gain: f64) -> Var {
    let [a, b, c] = spec.kernel;
    let w = ctx.p(
        &format!("{name}.w"),
        &[cout, cin, a, b, c],
        Init::FanIn {
            fan_in: cin * a * b * c,
            gain,
        },
    );
    let bias = ctx.p(&format!("{name}.b"), &[cout], Init::Zeros);
    ctx.g.conv3d(x, w, Some(bias), spec)
}

fn linear<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, nin: usize, nout: usize, gain: f64) -> Var {
    let w = ctx.p(&format!("{name}.w"), &[nout, nin], Init::FanIn { fan_in: nin, gain });
    let b = ctx.p(&format!("{name}.b"), &[nout], Init::Zeros);
    ctx.g.linear(x, w, b)
}

fn norm<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, c: usize) -> Var {
    let gamma = ctx.p(&format!("{name}.gamma"), &[c], Init::Ones);
    let beta = ctx.p(&format!("{name}.beta"), &[c], Init::Zeros);
    ctx.g.group_norm(x, gamma, beta, groups_for(c))
}

/// Spatial 1x3x3 convolution followed by a temporal kx1x1 convolution.
fn conv21<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, cin: usize, cout: usize, kt: usize, gain: f64) -> Var {
    let s = conv(
        ctx,
        &format!("{name}.spatial"),
        x,
        cin,
        cout,
        ConvSpec::same([1, 3, 3]),
        2f64.sqrt(),
    );
    conv(
        ctx,
        &format!("{name}.temporal"),
        s,
        cout,
        cout,
        ConvSpec::same([kt, 1, 1]),
        gain,
    )
}

fn res_block<T: Real>(
    ctx: &mut Ctx<'_, T>,
    name: &str,
    x: Var,
    cin: usize,
    cout: usize,
    arch: &DenoiserArch,
    emb: &Emb,
) -> Var {
    let e = arch.emb_dim();
    let kt = arch.temporal_kernel;
    let h = norm(ctx, &format!("{name}.norm1"), x, cin);
    let h = ctx.g.silu(h);
    let h = conv21(ctx, &format!("{name}.conv1"), h, cin, cout, kt, 1.0);
    let tb = linear(ctx, &format!("{name}.time_bias"), emb.time, e, cout, 1.0);
    let h = ctx.g.channel_bias(h, tb);
    let h = norm(ctx, &format!("{name}.norm2"), h, cout);
    let scale = linear(ctx, &format!("{name}.film_scale"), emb.cond, e, cout, 0.1);
    let shift = linear(ctx, &format!("{name}.film_shift"), emb.cond, e, cout, 0.1);
    let h = ctx.g.scale_shift(h, scale, shift);
    let h = ctx.g.silu(h);
    let h = conv21(ctx, &format!("{name}.conv2"), h, cout, cout, kt, 0.2);
    let skip = if cin == cout {
        x
    } else {
        conv(
            ctx,
            &format!("{name}.skip"),
            x,
            cin,
            cout,
            ConvSpec::same([1, 1, 1]),
            1.0,
        )
    };
    ctx.g.add(skip, h)
}

/// Runs the U-Net. `x` is `[B, in_channels, N, h, w]`, `t_emb` the sinusoidal
/// embedding `[B, base_width]` and `cond` the conditioning vector `[B, cond_dim]`.
/// Returns the noise prediction `[B, out_channels, N, h, w]`.
pub fn unet_forward<T: Real>(ctx: &mut Ctx<'_, T>, arch: &DenoiserArch, x: Var, t_emb: Var, cond: Var) -> Var {
    let e = arch.emb_dim();
    let time = linear(ctx, "time.fc1", t_emb, arch.base_width, e, 1.0);
    let time = ctx.g.silu(time);
    let time = linear(ctx, "time.fc2", time, e, e, 1.0);
    let time = ctx.g.silu(time);
    let c = linear(ctx, "cond.fc", cond, arch.cond_dim, e, 1.0);
    let c = ctx.g.silu(c);
    let emb = Emb { time, cond: c };

    let w0 = arch.width(0);
    let mut h = conv(ctx, "stem", x, arch.in_channels, w0, ConvSpec::same([1, 1, 1]), 1.0);
    h = res_block(ctx, "down0", h, w0, w0, arch, &emb);
    let mut skips = vec![h];
    for l in 1..arch.levels {
        let (wi, wo) = (arch.width(l - 1), arch.width(l));
        h = conv(ctx, &format!("down{l}.pool"), h, wi, wo, ConvSpec::spatial_down(), 1.0);
        h = res_block(ctx, &format!("down{l}"), h, wo, wo, arch, &emb);
        skips.push(h);
    }
    skips.pop();
    for l in (0..arch.levels - 1).rev() {
        let (wi, wo) = (arch.width(l + 1), arch.width(l));
        let u = ctx.g.upsample2(h);
        let u = conv(ctx, &format!("up{l}.conv"), u, wi, wo, ConvSpec::same([1, 3, 3]), 1.0);
        let s = skips.pop().expect("skip per level");
        let cat = ctx.g.concat(u, s);
        h = res_block(ctx, &format!("up{l}"), cat, 2 * wo, wo, arch, &emb);
    }
    let h = norm(ctx, "out.norm", h, w0);
    let h = ctx.g.silu(h);
    conv(
        ctx,
        "out.conv",
        h,
        w0,
        arch.out_channels,
        ConvSpec::same([1, 1, 1]),
        0.1,
    )
}
