//! Projective-map algebra: point projection, 4-corner displacement
//! parameterization, direct linear transforms, and the scale/rotation helper
//! matrices.
//!
//! Corner order for displacement cubes is fixed as top-left, top-right,
//! bottom-right, bottom-left of the reference frame extents `(0,0)`, `(w,0)`,
//! `(w,h)`, `(0,h)`. Serialized homographies are 9 numbers row-major.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

const DET_EPS: f64 = 1e-12;
const W_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HomographyError {
    #[error("matrix is singular or nearly singular (|det| = {det:.3e})")]
    Singular { det: f64 },
    #[error("matrix cannot be normalized: |H33| = {h33:.3e}")]
    Normalization { h33: f64 },
    #[error("point ({u}, {v}) projects to the line at infinity")]
    PointAtInfinity { u: f64, v: f64 },
    #[error("displaced corner quadrilateral is degenerate (three corners collinear)")]
    DegenerateQuad,
    #[error("weighted DLT needs at least 4 positively weighted points, got {0}")]
    TooFewPoints(usize),
    #[error("design matrix is rank deficient (degenerate point configuration)")]
    RankDeficient,
    #[error("point/weight list lengths differ: {src}, {dst}, {weights}")]
    LengthMismatch {
        src: usize,
        dst: usize,
        weights: usize,
    },
}

/// 3×3 projective map with unit bottom-right entry.
///
/// Invariants: invertible (`|det| > 1e-12`) and normalized so `H33 = 1`.
/// The inverse is precomputed at construction so warps never re-factorize.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    // exact matrix inverse of `m`, deliberately not H33-normalized
    m_inv: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
            m_inv: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
            m_inv: Matrix3::new(1.0, 0.0, -tx, 0.0, 1.0, -ty, 0.0, 0.0, 1.0),
        }
    }

    /// Validates invertibility, normalizes `H33 = 1`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(HomographyError::Singular { det });
        }
        let h33 = m[(2, 2)];
        if h33.abs() <= DET_EPS {
            return Err(HomographyError::Normalization { h33 });
        }
        let m = m / h33;
        let m_inv = m
            .try_inverse()
            .ok_or(HomographyError::Singular { det })?;
        Ok(Self { m, m_inv })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, HomographyError> {
        Self::from_matrix(Matrix3::from_row_slice(&[
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        ]))
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, HomographyError> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Row-major 9-number form used in result documents.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Projective application without degeneracy checks. A vanishing
    /// denominator yields non-finite coordinates, which samplers treat as
    /// out-of-bounds.
    #[inline]
    pub fn apply_raw(&self, u: f64, v: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[(2, 0)] * u + m[(2, 1)] * v + m[(2, 2)];
        (
            (m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)]) / w,
            (m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)]) / w,
        )
    }

    /// Same as [`apply_raw`](Self::apply_raw) through the precomputed inverse.
    #[inline]
    pub fn apply_inverse_raw(&self, u: f64, v: f64) -> (f64, f64) {
        let m = &self.m_inv;
        let w = m[(2, 0)] * u + m[(2, 1)] * v + m[(2, 2)];
        (
            (m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)]) / w,
            (m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)]) / w,
        )
    }

    /// Checked projection of a single point.
    pub fn project_point(&self, u: f64, v: f64) -> Result<(f64, f64), HomographyError> {
        let m = &self.m;
        let w = m[(2, 0)] * u + m[(2, 1)] * v + m[(2, 2)];
        if w.abs() < W_EPS {
            return Err(HomographyError::PointAtInfinity { u, v });
        }
        Ok((
            (m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)]) / w,
            (m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)]) / w,
        ))
    }

    /// Normalized inverse. Fails when the inverse cannot carry `H33 = 1`.
    pub fn inverse(&self) -> Result<Self, HomographyError> {
        Self::from_matrix(self.m_inv)
    }
}

/// `compose(a, b)` applies `b` first, then `a` (matrix product `a·b`),
/// renormalized to `H33 = 1`.
pub fn compose(a: &Homography, b: &Homography) -> Result<Homography, HomographyError> {
    Homography::from_matrix(a.m * b.m)
}

/// Normalized matrix inverse; see [`Homography::inverse`].
pub fn invert(h: &Homography) -> Result<Homography, HomographyError> {
    h.inverse()
}

/// Isotropic scaling about the origin; `scale` must be positive.
pub fn scale_homography(scale: f64) -> Homography {
    assert!(scale > 0.0, "scale must be positive, got {scale}");
    Homography {
        m: Matrix3::new(scale, 0.0, 0.0, 0.0, scale, 0.0, 0.0, 0.0, 1.0),
        m_inv: Matrix3::new(1.0 / scale, 0.0, 0.0, 0.0, 1.0 / scale, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Rotation by `gamma_deg` about `center`, clockwise in image coordinates
/// (y grows downward): at 90° a point east of the center maps south of it.
pub fn rotation_homography(gamma_deg: f64, center: (f64, f64)) -> Homography {
    let g = gamma_deg.to_radians();
    let (s, c) = g.sin_cos();
    let (uc, vc) = center;
    let m = Matrix3::new(
        c,
        -s,
        uc * (1.0 - c) + vc * s,
        s,
        c,
        vc * (1.0 - c) - uc * s,
        0.0,
        0.0,
        1.0,
    );
    Homography::from_matrix(m).expect("rotation is always invertible")
}

/// Conjugates a feature-grid-frame homography into the image-pixel frame.
///
/// Feature cell `(i, j)` sits at image pixel `((j+0.5)·stride, (i+0.5)·stride)`,
/// so the change of frame is `S·H·S⁻¹` with `S = scale(stride)∘translate(½)`.
pub fn feature_to_image_frame(
    h: &Homography,
    stride: f64,
) -> Result<Homography, HomographyError> {
    let s = frame_scale(stride);
    let s_inv = s.try_inverse().expect("frame scaling is invertible");
    Homography::from_matrix(s * h.m * s_inv)
}

/// Inverse of [`feature_to_image_frame`].
pub fn image_to_feature_frame(
    h: &Homography,
    stride: f64,
) -> Result<Homography, HomographyError> {
    let s = frame_scale(stride);
    let s_inv = s.try_inverse().expect("frame scaling is invertible");
    Homography::from_matrix(s_inv * h.m * s)
}

fn frame_scale(stride: f64) -> Matrix3<f64> {
    Matrix3::new(
        stride,
        0.0,
        stride * 0.5,
        0.0,
        stride,
        stride * 0.5,
        0.0,
        0.0,
        1.0,
    )
}

/// Displacements of the 4 reference-frame corners, in pixels.
///
/// Order: top-left, top-right, bottom-right, bottom-left. The zero cube is the
/// identity homography.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerDisplacement {
    pub d: [[f64; 2]; 4],
}

impl CornerDisplacement {
    pub fn zero() -> Self {
        Self { d: [[0.0; 2]; 4] }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut d = self.d;
        for i in 0..4 {
            d[i][0] += other.d[i][0];
            d[i][1] += other.d[i][1];
        }
        Self { d }
    }

    pub fn max_abs(&self) -> f64 {
        self.d
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |acc: f64, &v| acc.max(v.abs()))
    }

    /// Mean Euclidean distance between this cube's corner positions and
    /// `other`'s — the MACE-style corner error.
    pub fn mean_corner_error(&self, other: &Self) -> f64 {
        self.d
            .iter()
            .zip(other.d.iter())
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum::<f64>()
            / 4.0
    }

    /// Sum of the 4 corner displacement-error magnitudes.
    pub fn total_corner_error(&self, other: &Self) -> f64 {
        self.mean_corner_error(other) * 4.0
    }
}

/// Reference-frame corner positions for extents `(w, h)`: TL, TR, BR, BL.
pub fn frame_corners(frame: (f64, f64)) -> [(f64, f64); 4] {
    let (w, h) = frame;
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
}

/// Dense coordinate set, one `(u, v)` per grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid {
    height: usize,
    width: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PointGrid {
    /// Regular pixel-center lattice of an `h×w` feature map: position `(i, j)`
    /// carries coordinate `(j, i)`.
    pub fn lattice(height: usize, width: usize) -> Self {
        let mut xs = Vec::with_capacity(height * width);
        let mut ys = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                xs.push(j as f64);
                ys.push(i as f64);
            }
        }
        Self {
            height,
            width,
            xs,
            ys,
        }
    }

    pub fn from_points(
        height: usize,
        width: usize,
        xs: Vec<f64>,
        ys: Vec<f64>,
    ) -> Result<Self, HomographyError> {
        if xs.len() != height * width || ys.len() != height * width {
            return Err(HomographyError::LengthMismatch {
                src: height * width,
                dst: xs.len(),
                weights: ys.len(),
            });
        }
        Ok(Self {
            height,
            width,
            xs,
            ys,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.width + j;
        (self.xs[k], self.ys[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().zip(self.ys.iter()).map(|(&x, &y)| (x, y))
    }
}

/// Projects every grid point: homogeneous multiply then perspective divide.
/// Errors if any point lands on the line at infinity.
pub fn project_points(h: &Homography, grid: &PointGrid) -> Result<PointGrid, HomographyError> {
    let mut xs = Vec::with_capacity(grid.xs.len());
    let mut ys = Vec::with_capacity(grid.ys.len());
    for (x, y) in grid.iter() {
        let (px, py) = h.project_point(x, y)?;
        xs.push(px);
        ys.push(py);
    }
    Ok(PointGrid {
        height: grid.height,
        width: grid.width,
        xs,
        ys,
    })
}

/// Unique homography sending each frame corner to `corner + d`, by direct
/// solve of the exactly determined 8×8 system (no normalization needed at
/// this conditioning).
pub fn dlt_from_corners(
    d: &CornerDisplacement,
    frame: (f64, f64),
) -> Result<Homography, HomographyError> {
    let src = frame_corners(frame);
    let dst: Vec<(f64, f64)> = src
        .iter()
        .zip(d.d.iter())
        .map(|(&(x, y), dd)| (x + dd[0], y + dd[1]))
        .collect();
    if quad_is_degenerate(&dst, frame) {
        return Err(HomographyError::DegenerateQuad);
    }

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (k, (&(x, y), &(xp, yp))) in src.iter().zip(dst.iter()).enumerate() {
        let r = 2 * k;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -xp * x;
        a[(r, 7)] = -xp * y;
        b[r] = xp;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -yp * x;
        a[(r + 1, 7)] = -yp * y;
        b[r + 1] = yp;
    }
    let lu = a.lu();
    let h = lu.solve(&b).ok_or(HomographyError::DegenerateQuad)?;
    Homography::from_matrix(Matrix3::new(
        h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
    ))
}

fn quad_is_degenerate(corners: &[(f64, f64)], frame: (f64, f64)) -> bool {
    let scale = (frame.0 * frame.1).max(1.0);
    for i in 0..4 {
        let (ax, ay) = corners[i];
        let (bx, by) = corners[(i + 1) % 4];
        let (cx, cy) = corners[(i + 2) % 4];
        let cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
        if cross.abs() < 1e-9 * scale {
            return true;
        }
    }
    false
}

/// Exact inverse of [`dlt_from_corners`]: `dᵢ = H·cornerᵢ − cornerᵢ`.
pub fn corners_from_homography(
    h: &Homography,
    frame: (f64, f64),
) -> Result<CornerDisplacement, HomographyError> {
    let mut d = [[0.0; 2]; 4];
    for (k, &(x, y)) in frame_corners(frame).iter().enumerate() {
        let (px, py) = h.project_point(x, y)?;
        d[k] = [px - x, py - y];
    }
    Ok(CornerDisplacement { d })
}

/// Weighted least-squares homography over `src → dst` correspondences,
/// minimizing the weighted algebraic error with Hartley normalization of both
/// point sets before the solve. Weights must be non-negative; zero-weight
/// points are annihilated.
pub fn weighted_dlt(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    weights: &[f64],
) -> Result<Homography, HomographyError> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(HomographyError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
            weights: weights.len(),
        });
    }
    let active: Vec<usize> = (0..src.len()).filter(|&i| weights[i] > 0.0).collect();
    if active.len() < 4 {
        return Err(HomographyError::TooFewPoints(active.len()));
    }

    let t_src = hartley_transform(&active, src)?;
    let t_dst = hartley_transform(&active, dst)?;

    // accumulate AᵀA over weighted rows; the null-space eigenvector of this
    // 9×9 Gram matrix is the algebraic least-squares solution
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for &i in &active {
        let w = weights[i].sqrt();
        let (x, y) = apply_affine(&t_src, src[i]);
        let (xp, yp) = apply_affine(&t_dst, dst[i]);
        let row1 = [
            w * x,
            w * y,
            w,
            0.0,
            0.0,
            0.0,
            -w * xp * x,
            -w * xp * y,
            -w * xp,
        ];
        let row2 = [
            0.0,
            0.0,
            0.0,
            w * x,
            w * y,
            w,
            -w * yp * x,
            -w * yp * y,
            -w * yp,
        ];
        for row in [row1, row2] {
            for r in 0..9 {
                for c in 0..9 {
                    ata[(r, c)] += row[r] * row[c];
                }
            }
        }
    }

    let eig = nalgebra::SymmetricEigen::new(ata);
    let (mut min_i, mut min_v) = (0usize, f64::INFINITY);
    let mut max_v: f64 = 0.0;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < min_v {
            min_v = ev;
            min_i = i;
        }
        max_v = max_v.max(ev.abs());
    }
    // eigenvalues of AᵀA are squared singular values; rank-8 needs a clear gap
    if max_v <= 0.0 || min_v.max(0.0) > 1e-12 * max_v && {
        let mut second = f64::INFINITY;
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if i != min_i && ev < second {
                second = ev;
            }
        }
        second <= 1e-10 * max_v
    } {
        return Err(HomographyError::RankDeficient);
    }
    let hvec = eig.eigenvectors.column(min_i);
    let h_norm = Matrix3::new(
        hvec[0], hvec[1], hvec[2], hvec[3], hvec[4], hvec[5], hvec[6], hvec[7], hvec[8],
    );

    let t_dst_inv = t_dst
        .try_inverse()
        .expect("similarity transforms are invertible");
    let h = t_dst_inv * h_norm * t_src;
    if h[(2, 2)].abs() <= DET_EPS || h.determinant().abs() <= DET_EPS {
        return Err(HomographyError::RankDeficient);
    }
    Homography::from_matrix(h)
}

/// Weighted least-squares affine map (projective row fixed at `[0, 0, 1]`).
/// Extrapolates linearly, which keeps far-from-support corners stable where
/// a full projective fit would let them swing; used by estimators when the
/// observable support does not reach the whole frame.
pub fn weighted_affine(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    weights: &[f64],
) -> Result<Homography, HomographyError> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(HomographyError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
            weights: weights.len(),
        });
    }
    let active: Vec<usize> = (0..src.len()).filter(|&i| weights[i] > 0.0).collect();
    if active.len() < 3 {
        return Err(HomographyError::TooFewPoints(active.len()));
    }
    // normal equations for [a b tx; c d ty]; x and y rows decouple
    let mut g = SMatrix::<f64, 3, 3>::zeros();
    let mut bx = SVector::<f64, 3>::zeros();
    let mut by = SVector::<f64, 3>::zeros();
    for &i in &active {
        let w = weights[i];
        let (x, y) = src[i];
        let row = [x, y, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                g[(r, c)] += w * row[r] * row[c];
            }
            bx[r] += w * row[r] * dst[i].0;
            by[r] += w * row[r] * dst[i].1;
        }
    }
    let lu = g.lu();
    let px = lu.solve(&bx).ok_or(HomographyError::RankDeficient)?;
    let py = lu.solve(&by).ok_or(HomographyError::RankDeficient)?;
    Homography::from_matrix(Matrix3::new(
        px[0], px[1], px[2], py[0], py[1], py[2], 0.0, 0.0, 1.0,
    ))
}

/// Similarity moving the point cloud's centroid to the origin with mean
/// distance √2 (Hartley conditioning).
fn hartley_transform(
    active: &[usize],
    pts: &[(f64, f64)],
) -> Result<Matrix3<f64>, HomographyError> {
    let n = active.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for &i in active {
        cx += pts[i].0;
        cy += pts[i].1;
    }
    cx /= n;
    cy /= n;
    let mut mean_dist = 0.0;
    for &i in active {
        mean_dist += ((pts[i].0 - cx).powi(2) + (pts[i].1 - cy).powi(2)).sqrt();
    }
    mean_dist /= n;
    if mean_dist <= 1e-12 {
        return Err(HomographyError::RankDeficient);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

#[inline]
fn apply_affine(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let v = t * Vector3::new(p.0, p.1, 1.0);
    (v[0], v[1])
}
