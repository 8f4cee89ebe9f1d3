//! Video and flow carriers, their on-disk formats, frame sampling and resizing.
//!
//! Binary layout shared by `PCVF` (video / latent) and `PCFF` (flow) files:
//!
//! ```text
//! magic [4]u8 | version u16 | N u32 | C u32 | H u32 | W u32 | (PCFF only: tag u8) | N*C*H*W f32
//! ```
//!
//! All integers and floats are little-endian, data in C order (frame, channel, row, col).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PCVF_MAGIC: &[u8; 4] = b"PCVF";
pub const PCFF_MAGIC: &[u8; 4] = b"PCFF";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_FPS: f32 = 8.0;

/// `N x 3 x H x W` video with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    data: Array4<f32>,
    pub fps: f32,
    pub source_id: String,
}

impl FrameSequence {
    /// Validated constructor: three channels, at least one frame, finite values in `[0, 1]`.
    pub fn new(data: Array4<f32>, fps: f32, source_id: impl Into<String>) -> Result<Self> {
        let seq = Self::new_unchecked(data, fps, source_id);
        seq.validate()?;
        Ok(seq)
    }

    /// Skips the value-range check. Decoder output lives here until the
    /// final clamp at the evaluation boundary.
    pub fn new_unchecked(data: Array4<f32>, fps: f32, source_id: impl Into<String>) -> Self {
        Self {
            data,
            fps,
            source_id: source_id.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, _, _) = self.data.dim();
        if n == 0 {
            return Err(Error::Shape("frame sequence has no frames".into()));
        }
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Format(format!("frame value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn n_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(Axis(0), i)
    }

    /// One-frame sequence holding frame `i`.
    pub fn single(&self, i: usize) -> FrameSequence {
        Self::new_unchecked(
            self.data.slice(s![i..i + 1, .., .., ..]).to_owned(),
            self.fps,
            self.source_id.clone(),
        )
    }

    pub fn from_frame(frame: Array3<f32>, fps: f32, source_id: impl Into<String>) -> Result<Self> {
        Self::new(frame.insert_axis(Axis(0)), fps, source_id)
    }

    pub fn clamped(mut self) -> Self {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self
    }

    /// Frames in reverse order.
    pub fn reversed(&self) -> Self {
        Self::new_unchecked(
            self.data.slice(s![..;-1, .., .., ..]).to_owned(),
            self.fps,
            self.source_id.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionTag {
    Native = 0,
    Latent = 1,
}

/// `N x 2 x h x w` backward optical flow in pixels/frame at its own resolution.
///
/// Channel 0 is horizontal displacement, channel 1 vertical. Frame `i` maps
/// frame `i - 1` onto frame `i`: content at `p` in frame `i` came from `p - f_i(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub data: Array4<f32>,
    pub resolution: ResolutionTag,
}

impl FlowField {
    pub fn new(data: Array4<f32>, resolution: ResolutionTag) -> Result<Self> {
        if data.dim().1 != 2 {
            return Err(Error::Shape(format!("flow needs 2 channels, got {}", data.dim().1)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite flow value".into()));
        }
        Ok(Self { data, resolution })
    }

    pub fn zeros(n: usize, h: usize, w: usize, resolution: ResolutionTag) -> Self {
        Self {
            data: Array4::zeros((n, 2, h, w)),
            resolution,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    /// Mean vector magnitude of frame `i`.
    pub fn mean_magnitude(&self, i: usize) -> f32 {
        let f = self.data.index_axis(Axis(0), i);
        let (h, w) = (f.dim().1, f.dim().2);
        let mut acc = 0.0f64;
        for r in 0..h {
            for c in 0..w {
                acc += f64::from(f[[0, r, c]].hypot(f[[1, r, c]]));
            }
        }
        (acc / (h * w) as f64) as f32
    }
}

fn write_header(out: &mut impl Write, magic: &[u8; 4], dims: (usize, usize, usize, usize)) -> std::io::Result<()> {
    out.write_all(magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [dims.0, dims.1, dims.2, dims.3] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_payload(out: &mut impl Write, data: &Array4<f32>) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn read_tensor_file(path: &Path, magic: &[u8; 4]) -> Result<(Array4<f32>, Option<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let m = cur.take(4)?;
    if m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?} in {}, expected {:?}",
            String::from_utf8_lossy(m),
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|d| d as usize);
    let tag = if magic == PCFF_MAGIC {
        Some(cur.take(1)?[0])
    } else {
        None
    };
    let n: usize = dims.iter().product();
    let payload = cur.take(n * 4)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value in {}", path.display())));
    }
    let arr =
        Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), data).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((arr, tag))
}

/// Writes any `N x C x H x W` tensor as PCVF.
pub fn write_pcvf(data: &Array4<f32>, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_header(&mut w, PCVF_MAGIC, data.dim())
        .and_then(|_| write_payload(&mut w, &data.as_standard_layout().to_owned()))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a PCVF tensor without range validation (latents use this).
pub fn read_pcvf(path: &Path) -> Result<Array4<f32>> {
    Ok(read_tensor_file(path, PCVF_MAGIC)?.0)
}

pub fn write_flow(flow: &FlowField, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_header(&mut w, PCFF_MAGIC, flow.data.dim())
        .and_then(|_| w.write_all(&[flow.resolution as u8]))
        .and_then(|_| write_payload(&mut w, &flow.data.as_standard_layout().to_owned()))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let (data, tag) = read_tensor_file(path, PCFF_MAGIC)?;
    let resolution = match tag {
        Some(0) => ResolutionTag::Native,
        Some(1) => ResolutionTag::Latent,
        other => return Err(Error::Format(format!("bad resolution tag {other:?}"))),
    };
    FlowField::new(data, resolution)
}

/// 8-bit quantizer used for PNG output: round half up.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn frame_to_image(frame: ArrayView3<'_, f32>) -> image::RgbImage {
    let (_, h, w) = frame.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            quantize_u8(frame[[0, y, x]]),
            quantize_u8(frame[[1, y, x]]),
            quantize_u8(frame[[2, y, x]]),
        ])
    })
}

fn image_to_frame(img: &image::RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = f32::from(p[c]) / 255.0;
        }
    }
    out
}

pub fn write_png(frame: ArrayView3<'_, f32>, path: &Path) -> Result<()> {
    frame_to_image(frame).save(path)?;
    Ok(())
}

/// Reads one RGB image as a `3 x H x W` frame.
pub fn read_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(image_to_frame(&img.to_rgb8()))
}

/// All frames side by side in one PNG, for previews.
pub fn sprite_strip_png(seq: &FrameSequence) -> Result<Vec<u8>> {
    let (n, h, w) = (seq.n_frames(), seq.height(), seq.width());
    let mut strip = image::RgbImage::new((n * w) as u32, h as u32);
    for i in 0..n {
        image::imageops::replace(&mut strip, &frame_to_image(seq.frame(i)), (i * w) as i64, 0);
    }
    let mut out = std::io::Cursor::new(Vec::new());
    strip.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Writes `seq` as PCVF when `path` ends in `.pcvf`, otherwise as a PNG frame directory.
pub fn write_sequence(seq: &FrameSequence, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "pcvf") {
        return write_pcvf(&seq.data, path);
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    for i in 0..seq.n_frames() {
        write_png(seq.frame(i), &path.join(frame_file_name(i + 1)))?;
    }
    Ok(())
}

/// Reads a PCVF file or a directory of `frame_%06d.png` files numbered from 1.
pub fn read_sequence(path: &Path) -> Result<FrameSequence> {
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if !path.is_dir() {
        return FrameSequence::new(read_pcvf(path)?, DEFAULT_FPS, source_id);
    }
    let mut indices = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let name = entry.map_err(|e| Error::io(path, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|r| r.strip_suffix(".png"))
            .and_then(|d| d.parse::<usize>().ok())
        {
            indices.push(idx);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::Format(format!("no frame_*.png files in {}", path.display())));
    }
    for (k, idx) in indices.iter().enumerate() {
        if *idx != k + 1 {
            return Err(Error::Format(format!("missing frame {} in {}", k + 1, path.display())));
        }
    }
    let mut frames = Vec::with_capacity(indices.len());
    for idx in &indices {
        let f = read_png(&path.join(frame_file_name(*idx)))?;
        if let Some(first) = frames.first() {
            let first: &Array3<f32> = first;
            if first.dim() != f.dim() {
                return Err(Error::Shape(format!(
                    "frame {idx} is {:?}, frame 1 is {:?}",
                    f.dim(),
                    first.dim()
                )));
            }
        }
        frames.push(f);
    }
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    FrameSequence::new(data, DEFAULT_FPS, source_id)
}

/// Indices `floor(k (N-1) / (n-1))`, `k = 0..n`.
pub fn sample_indices(total: usize, n: usize) -> Result<Vec<usize>> {
    if n < 2 || n > total {
        return Err(Error::InvalidArgument(format!("cannot sample {n} frames from {total}")));
    }
    Ok((0..n).map(|k| k * (total - 1) / (n - 1)).collect())
}

/// Uniformly samples `n` frames; first and last frames are always kept.
pub fn sample_frames(seq: &FrameSequence, n: usize) -> Result<FrameSequence> {
    let idx = sample_indices(seq.n_frames(), n)?;
    let data = seq.data.select(Axis(0), &idx);
    Ok(FrameSequence::new_unchecked(data, seq.fps, seq.source_id.clone()))
}

/// Bilinear resize of one row-major plane, align-corners = false, border clamp.
pub fn resize_plane(src: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    let sy = h as f32 / nh as f32;
    let sx = w as f32 / nw as f32;
    let coord = |dst: usize, scale: f32, n: usize| -> (usize, usize, f32) {
        let p = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f32);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f32)
    };
    let cols: Vec<_> = (0..nw).map(|x| coord(x, sx, w)).collect();
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        let (y0, y1, fy) = coord(y, sy, h);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out[y * nw + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Resizes every plane of an `N x C x H x W` tensor.
pub fn resize_tensor(data: &Array4<f32>, nh: usize, nw: usize) -> Array4<f32> {
    let (n, c, h, w) = data.dim();
    if (h, w) == (nh, nw) {
        return data.clone();
    }
    let std = data.as_standard_layout();
    let flat = std.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(n * c * nh * nw);
    for plane in flat.chunks_exact(h * w) {
        out.extend(resize_plane(plane, h, w, nh, nw));
    }
    Array4::from_shape_vec((n, c, nh, nw), out).expect("resize shape")
}

/// Per-frame bilinear resize with values clamped to `[0, 1]`.
pub fn resize_bilinear(seq: &FrameSequence, height: usize, width: usize) -> Result<FrameSequence> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidArgument(format!("target size {height}x{width} below 8")));
    }
    let mut data = resize_tensor(&seq.data, height, width);
    data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(FrameSequence::new_unchecked(data, seq.fps, seq.source_id.clone()))
}
