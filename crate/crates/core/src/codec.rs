//! Training-free invertible latent codec: a 2-D orthonormal Haar transform of
//! non-overlapping `patch x patch` blocks, coefficients packed into channels.
//!
//! Channel `c * patch^2 + i * patch + j` of the latent holds coefficient `(i, j)`
//! of colour channel `c`; coefficient `(0, 0)` is the block DC term `sum / patch`.

use ndarray::{s, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::video::{FrameSequence, DEFAULT_FPS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    #[default]
    OrthonormalHaar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub patch: usize,
    pub mode: CodecMode,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            patch: 4,
            mode: CodecMode::OrthonormalHaar,
        }
    }
}

impl CodecConfig {
    /// 256x256 -> 32x32 and 320x512 -> 40x64 both imply 8x8 blocks.
    pub fn paper_scale() -> Self {
        Self {
            patch: 8,
            ..Self::default()
        }
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.patch.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "patch {} is not a power of two",
                self.patch
            )));
        }
        Ok(())
    }

    /// Patch size implied by a latent channel count, if any.
    pub fn from_channels(c: usize) -> Option<Self> {
        let p2 = c / 3;
        let p = (p2 as f64).sqrt().round() as usize;
        (c % 3 == 0 && p * p == p2 && p.is_power_of_two()).then(|| Self {
            patch: p,
            mode: CodecMode::OrthonormalHaar,
        })
    }
}

/// `N x C x h x w` latent.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub data: Array4<f32>,
    pub patch: usize,
    pub source_hw: (usize, usize),
}

impl LatentTensor {
    pub fn n_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.data.dim().2, self.data.dim().3)
    }
}

/// Orthonormal Haar matrix of size `p` (power of two); rows are basis vectors.
pub fn haar_matrix(p: usize) -> Array2<f64> {
    assert!(p.is_power_of_two());
    let mut h = Array2::from_elem((1, 1), 1.0);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    while h.nrows() < p {
        let n = h.nrows();
        let mut next = Array2::zeros((2 * n, 2 * n));
        for i in 0..n {
            for j in 0..n {
                next[[i, 2 * j]] = h[[i, j]] * r;
                next[[i, 2 * j + 1]] = h[[i, j]] * r;
            }
            next[[n + i, 2 * i]] = r;
            next[[n + i, 2 * i + 1]] = -r;
        }
        h = next;
    }
    h
}

/// Encodes raw `N x 3 x H x W` data.
pub fn encode_array(data: &Array4<f32>, cfg: &CodecConfig) -> Result<LatentTensor> {
    cfg.validate()?;
    let (n, c, hh, ww) = data.dim();
    let p = cfg.patch;
    if c != 3 {
        return Err(Error::Shape(format!("encoder expects 3 channels, got {c}")));
    }
    if hh % p != 0 || ww % p != 0 {
        return Err(Error::Shape(format!("{hh}x{ww} not divisible by patch {p}")));
    }
    let hm = haar_matrix(p);
    let (h, w) = (hh / p, ww / p);
    let mut out = Array4::zeros((n, 3 * p * p, h, w));
    let mut block = Array2::<f64>::zeros((p, p));
    for f in 0..n {
        for col in 0..3 {
            for by in 0..h {
                for bx in 0..w {
                    for i in 0..p {
                        for j in 0..p {
                            block[[i, j]] = f64::from(data[[f, col, by * p + i, bx * p + j]]);
                        }
                    }
                    let coef = hm.dot(&block).dot(&hm.t());
                    for i in 0..p {
                        for j in 0..p {
                            out[[f, col * p * p + i * p + j, by, bx]] = coef[[i, j]] as f32;
                        }
                    }
                }
            }
        }
    }
    Ok(LatentTensor {
        data: out,
        patch: p,
        source_hw: (hh, ww),
    })
}

pub fn encode(seq: &FrameSequence, cfg: &CodecConfig) -> Result<LatentTensor> {
    encode_array(seq.data(), cfg)
}

/// Exact inverse of [`encode_array`]; no clamping.
pub fn decode_array(z: &Array4<f32>, cfg: &CodecConfig) -> Result<Array4<f32>> {
    cfg.validate()?;
    let (n, c, h, w) = z.dim();
    let p = cfg.patch;
    if c != cfg.latent_channels() {
        return Err(Error::Shape(format!(
            "latent has {c} channels, codec expects {}",
            cfg.latent_channels()
        )));
    }
    let hm = haar_matrix(p);
    let mut out = Array4::zeros((n, 3, h * p, w * p));
    let mut coef = Array2::<f64>::zeros((p, p));
    for f in 0..n {
        for col in 0..3 {
            for by in 0..h {
                for bx in 0..w {
                    for i in 0..p {
                        for j in 0..p {
                            coef[[i, j]] = f64::from(z[[f, col * p * p + i * p + j, by, bx]]);
                        }
                    }
                    let block = hm.t().dot(&coef).dot(&hm);
                    for i in 0..p {
                        for j in 0..p {
                            out[[f, col, by * p + i, bx * p + j]] = block[[i, j]] as f32;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Decodes to a frame sequence whose values may leave `[0, 1]`; clamp at the evaluation boundary.
pub fn decode(z: &LatentTensor, cfg: &CodecConfig) -> Result<FrameSequence> {
    Ok(FrameSequence::new_unchecked(
        decode_array(&z.data, cfg)?,
        DEFAULT_FPS,
        "decoded",
    ))
}

/// `z_f`: the first frame's latent tiled `n` times along the frame axis.
pub fn replicate_first_frame_latent(seq: &FrameSequence, n: usize, cfg: &CodecConfig) -> Result<LatentTensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("replication count must be at least 1".into()));
    }
    let first = encode_array(&seq.data().slice(s![0..1, .., .., ..]).to_owned(), cfg)?;
    let frame = first.data.index_axis(Axis(0), 0);
    let views = vec![frame; n];
    let data = ndarray::stack(Axis(0), &views).expect("equal shapes");
    Ok(LatentTensor { data, ..first })
}
