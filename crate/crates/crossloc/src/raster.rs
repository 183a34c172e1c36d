//! Image containers, interpolated sampling, and warping.
//!
//! All pixel data lives in unit-interval `f64` scalars, row-major with
//! interleaved channels. Integer coordinates address pixel centers. Samples
//! that fall outside the image read zero ("black"), matching the treatment of
//! unobservable regions as low-correlation content downstream.

use std::path::Path;

use thiserror::Error;

use crate::homography::Homography;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("grid shape {grid_h}x{grid_w} does not match its coordinate buffers ({len_x}, {len_y})")]
    GridShapeMismatch {
        grid_h: usize,
        grid_w: usize,
        len_x: usize,
        len_y: usize,
    },
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    DataLengthMismatch {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("non-finite sample at data index {index}")]
    NonFinite { index: usize },
    #[error("empty image (zero dimension)")]
    EmptyImage,
    #[error("unsupported channel count {0} for 8-bit raster output (use 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
}

/// H×W×C raster of unit-interval intensities.
///
/// Invariants: `data.len() == height*width*channels`, every value finite and
/// clamped to `[0, 1]` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Zero-filled image.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Constant-valued image; `value` is clamped to `[0, 1]`.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Wraps raw row-major data. Values are clamped to `[0, 1]`; NaN is
    /// rejected because it cannot be clamped meaningfully.
    pub fn from_data(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if data.len() != height * width * channels {
            return Err(RasterError::DataLengthMismatch {
                height,
                width,
                channels,
                got: data.len(),
            });
        }
        for (i, v) in data.iter_mut().enumerate() {
            if v.is_nan() {
                return Err(RasterError::NonFinite { index: i });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Channel slice of the pixel at row `y`, column `x`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    /// Overwrites the pixel at row `y`, column `x`, clamping to `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.channels);
        let base = (y * self.width + x) * self.channels;
        for (dst, &v) in self.data[base..base + self.channels].iter_mut().zip(values) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// Mean intensity of a pixel across channels.
    #[inline]
    pub fn luminance(&self, y: usize, x: usize) -> f64 {
        let px = self.pixel(y, x);
        px.iter().sum::<f64>() / px.len() as f64
    }
}

/// Per-output-pixel fractional source coordinates for [`warp_by_grid`].
///
/// Coordinates may lie outside the source image; those taps read zero. Grids
/// depend only on camera configuration, so callers should build them once and
/// reuse them across input images.
#[derive(Debug, Clone)]
pub struct GridMap {
    height: usize,
    width: usize,
    source_x: Vec<f64>,
    source_y: Vec<f64>,
}

impl GridMap {
    pub fn new(
        height: usize,
        width: usize,
        source_x: Vec<f64>,
        source_y: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if source_x.len() != height * width || source_y.len() != height * width {
            return Err(RasterError::GridShapeMismatch {
                grid_h: height,
                grid_w: width,
                len_x: source_x.len(),
                len_y: source_y.len(),
            });
        }
        Ok(Self {
            height,
            width,
            source_x,
            source_y,
        })
    }

    /// Builds the grid realizing `h` as an inverse warp: output pixel `(u, v)`
    /// samples the source at `h⁻¹·(u, v)`.
    pub fn from_homography(h: &Homography, out_height: usize, out_width: usize) -> Self {
        let mut source_x = Vec::with_capacity(out_height * out_width);
        let mut source_y = Vec::with_capacity(out_height * out_width);
        for v in 0..out_height {
            for u in 0..out_width {
                let (sx, sy) = h.apply_inverse_raw(u as f64, v as f64);
                source_x.push(sx);
                source_y.push(sy);
            }
        }
        Self {
            height: out_height,
            width: out_width,
            source_x,
            source_y,
        }
    }

    /// Identity grid: output pixel `(u, v)` samples source `(u, v)`.
    pub fn identity(height: usize, width: usize) -> Self {
        let mut source_x = Vec::with_capacity(height * width);
        let mut source_y = Vec::with_capacity(height * width);
        for v in 0..height {
            for u in 0..width {
                source_x.push(u as f64);
                source_y.push(v as f64);
            }
        }
        Self {
            height,
            width,
            source_x,
            source_y,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Source coordinates for output pixel `(u, v)` as `(x, y)`.
    #[inline]
    pub fn source(&self, v: usize, u: usize) -> (f64, f64) {
        let i = v * self.width + u;
        (self.source_x[i], self.source_y[i])
    }
}

/// Bilinear interpolation of the 4 enclosing pixels at fractional `(x, y)`.
///
/// Neighbors outside the image contribute zero; a tap fully outside (or with
/// non-finite coordinates) yields the zero vector. Out-of-bounds is defined
/// behavior, not an error.
pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; img.channels()];
    bilinear_sample_into(img, x, y, &mut out);
    out
}

/// Allocation-free form of [`bilinear_sample`]; `out.len()` must equal the
/// channel count.
#[inline]
pub fn bilinear_sample_into(img: &ImageBuffer, x: f64, y: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), img.channels());
    out.iter_mut().for_each(|v| *v = 0.0);
    if !x.is_finite() || !y.is_finite() {
        return;
    }
    let w = img.width() as isize;
    let h = img.height() as isize;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as isize;
    let y0 = y0 as isize;
    // (dx, dy, weight) over the 4 enclosing pixels
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (tx, ty, wgt) in taps {
        if tx < 0 || ty < 0 || tx >= w || ty >= h || wgt == 0.0 {
            continue;
        }
        let px = img.pixel(ty as usize, tx as usize);
        for (o, &v) in out.iter_mut().zip(px) {
            *o += wgt * v;
        }
    }
}

/// Warps `img` through `grid`: `out(u, v) = bilinear_sample(img, grid(u, v))`.
pub fn warp_by_grid(img: &ImageBuffer, grid: &GridMap) -> Result<ImageBuffer, RasterError> {
    if grid.source_x.len() != grid.height * grid.width
        || grid.source_y.len() != grid.height * grid.width
    {
        return Err(RasterError::GridShapeMismatch {
            grid_h: grid.height,
            grid_w: grid.width,
            len_x: grid.source_x.len(),
            len_y: grid.source_y.len(),
        });
    }
    let mut out = ImageBuffer::new(grid.height, grid.width, img.channels());
    let mut px = vec![0.0; img.channels()];
    for v in 0..grid.height {
        for u in 0..grid.width {
            let (sx, sy) = grid.source(v, u);
            bilinear_sample_into(img, sx, sy, &mut px);
            out.set_pixel(v, u, &px);
        }
    }
    Ok(out)
}

/// Inverse warp by a homography: each output pixel samples the source at the
/// inverse-mapped location. Singular maps are rejected at [`Homography`]
/// construction, so `h` is always invertible here.
pub fn warp_by_homography(
    img: &ImageBuffer,
    h: &Homography,
    out_height: usize,
    out_width: usize,
) -> Result<ImageBuffer, RasterError> {
    let mut out = ImageBuffer::new(out_height, out_width, img.channels());
    let mut px = vec![0.0; img.channels()];
    for v in 0..out_height {
        for u in 0..out_width {
            let (sx, sy) = h.apply_inverse_raw(u as f64, v as f64);
            bilinear_sample_into(img, sx, sy, &mut px);
            out.set_pixel(v, u, &px);
        }
    }
    Ok(out)
}

/// Exact lossless rotation by `quarters` × 90° clockwise.
pub fn rotate_quarter(img: &ImageBuffer, quarters: u8) -> ImageBuffer {
    let q = quarters % 4;
    if q == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (oh, ow) = if q % 2 == 0 { (h, w) } else { (w, h) };
    let mut out = ImageBuffer::new(oh, ow, img.channels());
    for y in 0..oh {
        for x in 0..ow {
            // inverse map of the clockwise rotation
            let (sy, sx) = match q {
                1 => (h - 1 - x, y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (x, w - 1 - y),
            };
            out.set_pixel(y, x, img.pixel(sy, sx));
        }
    }
    out
}

/// Loads an 8-bit PNG (grayscale or RGB) into unit-interval scalars.
pub fn load_image(path: &Path) -> Result<ImageBuffer, RasterError> {
    let img = image::open(path)?;
    let (buf, channels) = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data: Vec<f64> = g.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            return ImageBuffer::from_data(h, w, 1, data);
        }
        other => (other.to_rgb8(), 3),
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data: Vec<f64> = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
    ImageBuffer::from_data(h, w, channels, data)
}

/// Writes an image as 8-bit PNG. Only 1- and 3-channel images map onto the
/// format; intensities are rounded to the nearest of 256 levels.
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<(), RasterError> {
    if img.is_empty() {
        return Err(RasterError::EmptyImage);
    }
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let w = img.width() as u32;
    let h = img.height() as u32;
    match img.channels() {
        1 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
            let buf: image::GrayImage = image::ImageBuffer::from_raw(w, h, raw)
                .expect("length checked by ImageBuffer invariant");
            buf.save(path)?;
        }
        3 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
            let buf: image::RgbImage = image::ImageBuffer::from_raw(w, h, raw)
                .expect("length checked by ImageBuffer invariant");
            buf.save(path)?;
        }
        c => return Err(RasterError::UnsupportedChannels(c)),
    }
    Ok(())
}
