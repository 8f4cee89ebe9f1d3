//! Reference optical flow: coarse-to-fine Horn–Schunck with per-level warping,
//! flow resampling between grids, and backward warping.

use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::video::{resize_plane, FlowField, FrameSequence, ResolutionTag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimatorConfig {
    pub pyramid_levels: usize,
    /// Smoothness weight; image intensities are on the 0..255 scale.
    pub smoothness_alpha: f32,
    pub iterations_per_level: usize,
    pub convergence_eps: f32,
}

impl Default for FlowEstimatorConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            smoothness_alpha: 15.0,
            iterations_per_level: 100,
            convergence_eps: 1e-4,
        }
    }
}

impl FlowEstimatorConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let max_levels = ((h.min(w) as f64) / 8.0).log2().floor().max(0.0) as usize;
        if self.pyramid_levels == 0
            || self.iterations_per_level == 0
            || !(self.smoothness_alpha > 0.0)
            || !(self.convergence_eps > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid flow config {self:?}")));
        }
        if self.pyramid_levels > max_levels.max(1) {
            return Err(Error::InvalidArgument(format!(
                "{} pyramid levels exceed the limit {max_levels} for {h}x{w}",
                self.pyramid_levels
            )));
        }
        Ok(())
    }
}

/// A single-channel image plane.
#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f32>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    fn sample(&self, y: f32, x: f32) -> f32 {
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let r0 = self.v[y0 * self.w + x0] * (1.0 - fx) + self.v[y0 * self.w + x1] * fx;
        let r1 = self.v[y1 * self.w + x0] * (1.0 - fx) + self.v[y1 * self.w + x1] * fx;
        r0 * (1.0 - fy) + r1 * fy
    }

    /// Separable [1 2 1]/4 blur with replicated borders.
    fn blur(&self) -> Plane {
        let mut tmp = vec![0.0; self.v.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                tmp[y as usize * self.w + x as usize] =
                    0.25 * self.at(y, x - 1) + 0.5 * self.at(y, x) + 0.25 * self.at(y, x + 1);
            }
        }
        let t = Plane { v: tmp, ..*self };
        let mut out = vec![0.0; self.v.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                out[y as usize * self.w + x as usize] =
                    0.25 * t.at(y - 1, x) + 0.5 * t.at(y, x) + 0.25 * t.at(y + 1, x);
            }
        }
        Plane { v: out, ..*self }
    }

    /// Blur then 2x2 average.
    fn down(&self) -> Plane {
        let b = self.blur();
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (2 * y, 2 * x);
                v[y * w + x] = 0.25
                    * (b.v[sy * b.w + sx]
                        + b.v[sy * b.w + sx + 1]
                        + b.v[(sy + 1) * b.w + sx]
                        + b.v[(sy + 1) * b.w + sx + 1]);
            }
        }
        Plane { h, w, v }
    }
}

fn gray_plane(frame: ArrayView3<'_, f32>) -> Plane {
    let (_, h, w) = frame.dim();
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            v.push(255.0 * (0.299 * frame[[0, y, x]] + 0.587 * frame[[1, y, x]] + 0.114 * frame[[2, y, x]]));
        }
    }
    Plane { h, w, v }
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base.blur()];
    for _ in 1..levels {
        let next = out.last().expect("non-empty").down();
        out.push(next);
    }
    out
}

/// Refines `(u, v)` on one pyramid level.
fn refine_level(prev: &Plane, next: &Plane, u: &mut [f32], v: &mut [f32], cfg: &FlowEstimatorConfig) {
    let (h, w) = (prev.h, prev.w);
    let mut warped = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            warped[i] = prev.sample(y as f32 - v[i], x as f32 - u[i]);
        }
    }
    let avg = Plane {
        h,
        w,
        v: warped.iter().zip(&next.v).map(|(a, b)| 0.5 * (a + b)).collect(),
    };
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    let mut it = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            ix[i] = 0.5 * (avg.at(y, x + 1) - avg.at(y, x - 1));
            iy[i] = 0.5 * (avg.at(y + 1, x) - avg.at(y - 1, x));
            it[i] = next.v[i] - warped[i];
        }
    }
    let u0 = u.to_vec();
    let v0 = v.to_vec();
    let a2 = cfg.smoothness_alpha * cfg.smoothness_alpha;
    let mut nu = vec![0.0; h * w];
    let mut nv = vec![0.0; h * w];
    let local_mean = |f: &[f32], y: isize, x: isize| -> f32 {
        let g =
            |yy: isize, xx: isize| f[yy.clamp(0, h as isize - 1) as usize * w + xx.clamp(0, w as isize - 1) as usize];
        (g(y - 1, x) + g(y + 1, x) + g(y, x - 1) + g(y, x + 1)) / 6.0
            + (g(y - 1, x - 1) + g(y - 1, x + 1) + g(y + 1, x - 1) + g(y + 1, x + 1)) / 12.0
    };
    for _ in 0..cfg.iterations_per_level {
        let mut max_change = 0.0f32;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                let ub = local_mean(u, y, x);
                let vb = local_mean(v, y, x);
                let r = ix[i] * (ub - u0[i]) + iy[i] * (vb - v0[i]) + it[i];
                let d = a2 + ix[i] * ix[i] + iy[i] * iy[i];
                nu[i] = ub - ix[i] * r / d;
                nv[i] = vb - iy[i] * r / d;
                max_change = max_change.max((nu[i] - u[i]).abs()).max((nv[i] - v[i]).abs());
            }
        }
        u.copy_from_slice(&nu);
        v.copy_from_slice(&nv);
        if max_change < cfg.convergence_eps {
            break;
        }
    }
}

/// Flow between two frames (`3 x H x W`), returned as `2 x H x W` backward flow.
pub fn estimate_pair(prev: ArrayView3<'_, f32>, next: ArrayView3<'_, f32>, cfg: &FlowEstimatorConfig) -> Array3<f32> {
    let (_, h, w) = prev.dim();
    let p0 = pyramid(gray_plane(prev), cfg.pyramid_levels);
    let p1 = pyramid(gray_plane(next), cfg.pyramid_levels);
    let top = cfg.pyramid_levels - 1;
    let mut u = vec![0.0; p0[top].h * p0[top].w];
    let mut v = u.clone();
    for lvl in (0..cfg.pyramid_levels).rev() {
        if lvl < top {
            let (ch, cw) = (p0[lvl + 1].h, p0[lvl + 1].w);
            let (fh, fw) = (p0[lvl].h, p0[lvl].w);
            u = resize_plane(&u, ch, cw, fh, fw)
                .into_iter()
                .map(|a| a * fw as f32 / cw as f32)
                .collect();
            v = resize_plane(&v, ch, cw, fh, fw)
                .into_iter()
                .map(|a| a * fh as f32 / ch as f32)
                .collect();
        }
        refine_level(&p0[lvl], &p1[lvl], &mut u, &mut v, cfg);
    }
    let mut out = Array3::zeros((2, h, w));
    for y in 0..h {
        for x in 0..w {
            out[[0, y, x]] = u[y * w + x];
            out[[1, y, x]] = v[y * w + x];
        }
    }
    out
}

/// Per-frame backward flow at native resolution. Frame 0 is identically zero.
pub fn estimate_flow(seq: &FrameSequence, cfg: &FlowEstimatorConfig) -> Result<FlowField> {
    let n = seq.n_frames();
    if n < 2 {
        return Err(Error::InvalidArgument("flow needs at least two frames".into()));
    }
    if seq.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite pixel value".into()));
    }
    let (h, w) = (seq.height(), seq.width());
    cfg.validate(h, w)?;
    let mut data = Array4::zeros((n, 2, h, w));
    for i in 1..n {
        let f = estimate_pair(seq.frame(i - 1), seq.frame(i), cfg);
        data.index_axis_mut(Axis(0), i).assign(&f);
    }
    FlowField::new(data, ResolutionTag::Native)
}

/// Bilinear resample to `h x w`, rescaling vectors so they stay in target-pixel units.
pub fn resample_flow(flow: &FlowField, h: usize, w: usize) -> Result<FlowField> {
    let (sh, sw) = (flow.height(), flow.width());
    if sh < 4 || sw < 4 || h < 4 || w < 4 {
        return Err(Error::InvalidArgument(format!(
            "flow resample {sh}x{sw} -> {h}x{w} below 4"
        )));
    }
    let mut data = crate::video::resize_tensor(&flow.data, h, w);
    let (kx, ky) = (w as f32 / sw as f32, h as f32 / sh as f32);
    data.index_axis_mut(Axis(1), 0).mapv_inplace(|v| v * kx);
    data.index_axis_mut(Axis(1), 1).mapv_inplace(|v| v * ky);
    FlowField::new(data, flow.resolution)
}

/// Backward warp: `out(p) = frame(p - flow(p))`, bilinear with border clamp.
pub fn warp_by_flow(frame: ArrayView3<'_, f32>, flow: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
    let (c, h, w) = frame.dim();
    if flow.dim() != (2, h, w) {
        return Err(Error::Shape(format!(
            "flow {:?} does not match frame {h}x{w}",
            flow.dim()
        )));
    }
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        let plane = Plane {
            h,
            w,
            v: frame.index_axis(Axis(0), ch).iter().copied().collect(),
        };
        for y in 0..h {
            for x in 0..w {
                out[[ch, y, x]] = plane.sample(y as f32 - flow[[1, y, x]], x as f32 - flow[[0, y, x]]);
            }
        }
    }
    Ok(out)
}

/// Smooth random texture for tests and demos: a sum of seeded sinusoids in `[0, 1]`.
pub fn smooth_texture(h: usize, w: usize, seed: u64) -> Array3<f32> {
    shifted_texture(h, w, seed, 0.0, 0.0)
}

/// Continuous version of [`smooth_texture`] sampled at `(y - dy, x - dx)`; used to build exact shifts.
pub fn shifted_texture(h: usize, w: usize, seed: u64, dx: f32, dy: f32) -> Array3<f32> {
    let base = smooth_texture_fn(seed);
    Array3::from_shape_fn((3, h, w), |(c, y, x)| base(c, y as f32 - dy, x as f32 - dx))
}

fn smooth_texture_fn(seed: u64) -> impl Fn(usize, f32, f32) -> f32 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f32, f32, f32, [f32; 3])> = (0..8)
        .map(|_| {
            let period = rng.gen_range(12.0f32..28.0);
            let theta = rng.gen_range(0.0..std::f32::consts::TAU);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let amp = [
                rng.gen_range(0.2f32..1.0),
                rng.gen_range(0.2f32..1.0),
                rng.gen_range(0.2f32..1.0),
            ];
            (
                std::f32::consts::TAU / period * theta.cos(),
                std::f32::consts::TAU / period * theta.sin(),
                phase,
                amp,
            )
        })
        .collect();
    move |c, y, x| {
        let s: f32 = waves
            .iter()
            .map(|(kx, ky, ph, a)| a[c] * (kx * x + ky * y + ph).sin())
            .sum();
        (0.5 + s / 8.0).clamp(0.0, 1.0)
    }
}
