//! Feature extraction surrogates, the all-pairs correlation volume, its
//! stride-2 pooled companion, and windowed slice sampling around projected
//! coordinates.
//!
//! The built-in extractors L2-normalize every spatial position so correlation
//! values are comparable across images (the flag can be dropped when feeding
//! features from elsewhere). Volumes are materialized densely: at the default
//! 16×16 grid that is 65 536 entries, trivial memory.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::homography::PointGrid;
use crate::raster::ImageBuffer;

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("image {img_h}x{img_w} not divisible by feature grid {grid_h}x{grid_w}")]
    IndivisibleDims {
        img_h: usize,
        img_w: usize,
        grid_h: usize,
        grid_w: usize,
    },
    #[error("feature shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("volume trailing dims {0}x{1} must be even for stride-2 pooling")]
    OddDims(usize, usize),
    #[error("search radius must be at least 1")]
    RadiusTooSmall,
    #[error("coordinate grid {0}x{1} does not match volume leading dims {2}x{3}")]
    CoordShapeMismatch(usize, usize, usize, usize),
    #[error("binary dump i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("binary dump header is malformed")]
    BadHeader,
}

/// Dense `D×H×W` feature map, stored position-major (`(i, j, d)` layout).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Feature vector at grid position `(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.width + j) * self.channels;
        &self.data[base..base + self.channels]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let base = (i * self.width + j) * self.channels;
        &mut self.data[base..base + self.channels]
    }
}

/// Classical stand-ins for a learned backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Per-block channel means; D equals the image channel count.
    AvgPool,
    /// Per-block mean intensity plus horizontal/vertical gradient-magnitude
    /// means; D = 3.
    Gradient,
}

/// Fraction of exactly-zero pixels above which a block counts as blank.
/// Zero is the out-of-bounds fill value, so it marks unobservable content;
/// a block dominated by fill carries a content-shifted descriptor that reads
/// as a biased flow downstream, so it is dropped to the zero vector instead.
const BLANK_BLOCK_FRACTION: f64 = 0.25;

/// Block-pooled features on an `grid_h×grid_w` grid. Image dimensions must be
/// divisible by the grid. With `normalize`, every position is scaled to unit
/// L2 norm; blank regions (blocks dominated by exact-zero fill) become the
/// zero vector.
pub fn extract_features(
    img: &ImageBuffer,
    grid_h: usize,
    grid_w: usize,
    mode: FeatureMode,
    normalize: bool,
) -> Result<FeatureMap, CorrelationError> {
    if grid_h == 0
        || grid_w == 0
        || img.height() % grid_h != 0
        || img.width() % grid_w != 0
    {
        return Err(CorrelationError::IndivisibleDims {
            img_h: img.height(),
            img_w: img.width(),
            grid_h,
            grid_w,
        });
    }
    let by = img.height() / grid_h;
    let bx = img.width() / grid_w;
    let block = (by * bx) as f64;

    let channels = match mode {
        FeatureMode::AvgPool => img.channels(),
        FeatureMode::Gradient => 3,
    };
    let mut fm = FeatureMap::new(channels, grid_h, grid_w, vec![0.0; channels * grid_h * grid_w]);

    match mode {
        FeatureMode::AvgPool => {
            for i in 0..grid_h {
                for j in 0..grid_w {
                    let out = fm.at_mut(i, j);
                    for y in i * by..(i + 1) * by {
                        for x in j * bx..(j + 1) * bx {
                            for (c, o) in out.iter_mut().enumerate() {
                                *o += img.pixel(y, x)[c];
                            }
                        }
                    }
                    for o in out.iter_mut() {
                        *o /= block;
                    }
                }
            }
        }
        FeatureMode::Gradient => {
            // central differences on the luminance; border gradients are zero
            let h = img.height();
            let w = img.width();
            let lum = |y: usize, x: usize| img.luminance(y, x);
            for i in 0..grid_h {
                for j in 0..grid_w {
                    let (mut m, mut gx, mut gy) = (0.0, 0.0, 0.0);
                    for y in i * by..(i + 1) * by {
                        for x in j * bx..(j + 1) * bx {
                            m += lum(y, x);
                            if x > 0 && x + 1 < w {
                                gx += ((lum(y, x + 1) - lum(y, x - 1)) / 2.0).abs();
                            }
                            if y > 0 && y + 1 < h {
                                gy += ((lum(y + 1, x) - lum(y - 1, x)) / 2.0).abs();
                            }
                        }
                    }
                    let out = fm.at_mut(i, j);
                    out[0] = m / block;
                    out[1] = gx / block;
                    out[2] = gy / block;
                }
            }
        }
    }

    // blank-region pass: normalization would otherwise erase how much of a
    // block is unobservable fill
    for i in 0..grid_h {
        for j in 0..grid_w {
            let mut blank = 0usize;
            for y in i * by..(i + 1) * by {
                for x in j * bx..(j + 1) * bx {
                    if img.pixel(y, x).iter().all(|&v| v == 0.0) {
                        blank += 1;
                    }
                }
            }
            if blank as f64 > BLANK_BLOCK_FRACTION * block {
                fm.at_mut(i, j).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    if normalize {
        for i in 0..grid_h {
            for j in 0..grid_w {
                let v = fm.at_mut(i, j);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
            }
        }
    }
    Ok(fm)
}

/// 4-D correlation volume `C[i, j, k, l]`: ReLU'd dot products between every
/// ground position `(i, j)` and satellite position `(k, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    data: Vec<f64>,
}

impl CorrelationVolume {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.h, self.w, self.kh, self.kw)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.w + j) * self.kh + k) * self.kw + l]
    }

    /// The `(k, l)` map for one ground position, row-major.
    pub fn map_at(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.w + j) * self.kh * self.kw;
        &self.data[base..base + self.kh * self.kw]
    }

    /// Bilinear tap of the `(k, l)` plane at fractional `(x=l, y=k)`; taps
    /// outside the plane read zero.
    #[inline]
    pub fn sample_plane(&self, i: usize, j: usize, x: f64, y: f64) -> f64 {
        if !x.is_finite() || !y.is_finite() {
            return 0.0;
        }
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = x - x0f;
        let fy = y - y0f;
        let x0 = x0f as isize;
        let y0 = y0f as isize;
        let mut acc = 0.0;
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (tx, ty, wgt) in taps {
            if tx < 0 || ty < 0 || tx >= self.kw as isize || ty >= self.kh as isize || wgt == 0.0 {
                continue;
            }
            acc += wgt * self.at(i, j, ty as usize, tx as usize);
        }
        acc
    }
}

/// All-pairs correlation: `C[i,j,k,l] = max(0, ⟨fg(i,j), fs(k,l)⟩)`.
///
/// Dot products accumulate channel-by-channel in index order, so results are
/// bitwise reproducible against a plain nested-loop evaluation.
pub fn correlate(
    fg: &FeatureMap,
    fs: &FeatureMap,
) -> Result<CorrelationVolume, CorrelationError> {
    if fg.shape() != fs.shape() {
        return Err(CorrelationError::ShapeMismatch(fg.shape(), fs.shape()));
    }
    let (d, h, w) = fg.shape();
    let mut data = Vec::with_capacity(h * w * h * w);
    for i in 0..h {
        for j in 0..w {
            let a = fg.at(i, j);
            for k in 0..h {
                for l in 0..w {
                    let b = fs.at(k, l);
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += a[c] * b[c];
                    }
                    data.push(dot.max(0.0));
                }
            }
        }
    }
    Ok(CorrelationVolume {
        h,
        w,
        kh: h,
        kw: w,
        data,
    })
}

/// Stride-2 average pooling over the last two dimensions; leading dims are
/// untouched. Requires even trailing dims.
pub fn pool_half(c: &CorrelationVolume) -> Result<CorrelationVolume, CorrelationError> {
    if c.kh % 2 != 0 || c.kw % 2 != 0 {
        return Err(CorrelationError::OddDims(c.kh, c.kw));
    }
    let (kh2, kw2) = (c.kh / 2, c.kw / 2);
    let mut data = Vec::with_capacity(c.h * c.w * kh2 * kw2);
    for i in 0..c.h {
        for j in 0..c.w {
            for k in 0..kh2 {
                for l in 0..kw2 {
                    let s = c.at(i, j, 2 * k, 2 * l)
                        + c.at(i, j, 2 * k, 2 * l + 1)
                        + c.at(i, j, 2 * k + 1, 2 * l)
                        + c.at(i, j, 2 * k + 1, 2 * l + 1);
                    data.push(s / 4.0);
                }
            }
        }
    }
    Ok(CorrelationVolume {
        h: c.h,
        w: c.w,
        kh: kh2,
        kw: kw2,
        data,
    })
}

/// Which volume a slice is sampled from; the half-scale lookup multiplies the
/// projected coordinates by ½ so both volumes are probed around the same
/// physical location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceScale {
    Full,
    Half,
}

impl SliceScale {
    fn factor(self) -> f64 {
        match self {
            SliceScale::Full => 1.0,
            SliceScale::Half => 0.5,
        }
    }
}

/// `H×W×(2r+1)×(2r+1)` window of correlations centered at projected
/// coordinates; taps outside the volume are zero.
///
/// Slices remember where their taps came from (`centers`, `src_dims`) so
/// consumers can tell observable zeros from out-of-volume fill.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSlice {
    h: usize,
    w: usize,
    r: usize,
    data: Vec<f64>,
    // center coordinates (x, y) in source-volume units, per cell; empty for
    // synthetic slices
    centers: Vec<(f64, f64)>,
    src_dims: Option<(usize, usize)>,
}

/// Builds a slice from raw window data laid out `(i, j, dv+r, du+r)`;
/// intended for synthetic updater inputs. Carries no source-volume metadata,
/// so every tap counts as observable.
pub fn slice_from_raw(h: usize, w: usize, r: usize, data: Vec<f64>) -> CorrelationSlice {
    let side = 2 * r + 1;
    assert_eq!(data.len(), h * w * side * side);
    CorrelationSlice {
        h,
        w,
        r,
        data,
        centers: Vec::new(),
        src_dims: None,
    }
}

impl CorrelationSlice {
    pub fn radius(&self) -> usize {
        self.r
    }

    /// Per-axis ranges of window offsets whose taps lie fully inside the
    /// source volume: `((lo_u, hi_u), (lo_v, hi_v))`, possibly asymmetric
    /// near the volume border and empty (`lo > hi`) when the whole axis is
    /// out of view. Synthetic slices report the full window.
    pub fn observable_range(&self, i: usize, j: usize) -> ((i64, i64), (i64, i64)) {
        let r = self.r as i64;
        let (Some((kh, kw)), false) = (self.src_dims, self.centers.is_empty()) else {
            return ((-r, r), (-r, r));
        };
        let (cu, cv) = self.centers[i * self.w + j];
        let axis = |c: f64, n: usize| -> (i64, i64) {
            if !c.is_finite() {
                return (1, 0);
            }
            let lo = ((0.0 - c).ceil() as i64).max(-r);
            let hi = (((n - 1) as f64 - c).floor() as i64).min(r);
            (lo, hi)
        };
        (axis(cu, kw), axis(cv, kh))
    }

    pub fn side(&self) -> usize {
        2 * self.r + 1
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.h, self.w, self.side(), self.side())
    }

    /// Window value at offset `(du, dv)` from the center, `|du|,|dv| ≤ r`.
    #[inline]
    pub fn at_offset(&self, i: usize, j: usize, du: i64, dv: i64) -> f64 {
        let side = self.side();
        let dy = (dv + self.r as i64) as usize;
        let dx = (du + self.r as i64) as usize;
        self.data[((i * self.w + j) * side + dy) * side + dx]
    }

    /// Largest window entry for cell `(i, j)`.
    pub fn max_at(&self, i: usize, j: usize) -> f64 {
        let side = self.side();
        let base = (i * self.w + j) * side * side;
        self.data[base..base + side * side]
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// Samples `(2r+1)²` windows of `c`'s trailing plane around
/// `coords(i,j)·scale`, bilinearly interpolated with zero fill.
pub fn sample_slices(
    c: &CorrelationVolume,
    coords: &PointGrid,
    r: usize,
    scale: SliceScale,
) -> Result<CorrelationSlice, CorrelationError> {
    if r < 1 {
        return Err(CorrelationError::RadiusTooSmall);
    }
    if coords.height() != c.h || coords.width() != c.w {
        return Err(CorrelationError::CoordShapeMismatch(
            coords.height(),
            coords.width(),
            c.h,
            c.w,
        ));
    }
    let side = 2 * r + 1;
    let factor = scale.factor();
    let mut data = Vec::with_capacity(c.h * c.w * side * side);
    let mut centers = Vec::with_capacity(c.h * c.w);
    for i in 0..c.h {
        for j in 0..c.w {
            let (cu, cv) = coords.point(i, j);
            let (cu, cv) = (cu * factor, cv * factor);
            centers.push((cu, cv));
            for dv in -(r as i64)..=r as i64 {
                for du in -(r as i64)..=r as i64 {
                    data.push(c.sample_plane(i, j, cu + du as f64, cv + dv as f64));
                }
            }
        }
    }
    Ok(CorrelationSlice {
        h: c.h,
        w: c.w,
        r,
        data,
        centers,
        src_dims: Some((c.kh, c.kw)),
    })
}

const DUMP_MAGIC: &[u8; 4] = b"CXD1";

/// Writes a flat binary dump: magic, dim count, dims, then row-major f64
/// little-endian scalars. Shared by feature maps and volumes for oracle
/// cross-checking in other tooling.
pub fn write_dump(path: &Path, dims: &[usize], data: &[f64]) -> Result<(), CorrelationError> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DUMP_MAGIC)?;
    f.write_all(&(dims.len() as u64).to_le_bytes())?;
    for &d in dims {
        f.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump written by [`write_dump`].
pub fn read_dump(path: &Path) -> Result<(Vec<usize>, Vec<f64>), CorrelationError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(CorrelationError::BadHeader);
    }
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b8)?;
    let ndims = u64::from_le_bytes(b8) as usize;
    if ndims > 8 {
        return Err(CorrelationError::BadHeader);
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        f.read_exact(&mut b8)?;
        dims.push(u64::from_le_bytes(b8) as usize);
    }
    let total: usize = dims.iter().product();
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        f.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok((dims, data))
}

impl FeatureMap {
    pub fn write_dump(&self, path: &Path) -> Result<(), CorrelationError> {
        write_dump(path, &[self.channels, self.height, self.width], &self.data)
    }
}

impl CorrelationVolume {
    pub fn write_dump(&self, path: &Path) -> Result<(), CorrelationError> {
        write_dump(path, &[self.h, self.w, self.kh, self.kw], &self.data)
    }
}
