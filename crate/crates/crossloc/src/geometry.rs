//! Camera-model projections: panorama↔sphere↔equirectangular math, the
//! panorama→BEV spherical transform, front-view→BEV projection with tilt, and
//! the roll/pitch/yaw attitude extension.
//!
//! Angles cross the API boundary in degrees and are converted to radians
//! internally. The BEV looks straight down from the camera through a tangent
//! plane at the sphere's south pole, so at zero attitude it only ever sees the
//! lower hemisphere.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::homography::Homography;
use crate::raster::GridMap;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("camera ray is the zero vector")]
    ZeroRay,
    #[error("field of view {0}° outside (0°, 90°)")]
    InvalidFov(f64),
    #[error("camera dimension must be positive")]
    EmptyCamera,
}

/// Equirectangular panorama dimensions.
///
/// Standard panoramas satisfy `width = 2·height`; other shapes (CVUSA-style
/// crops) are accepted — callers should zero-pad to 2:1 before projecting,
/// see [`pad_to_equirect`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanoCamera {
    pub width: usize,
    pub height: usize,
}

impl PanoCamera {
    pub fn new(width: usize, height: usize) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyCamera);
        }
        Ok(Self { width, height })
    }

    /// True for the standard 2:1 equirectangular aspect ratio.
    pub fn is_standard_aspect(&self) -> bool {
        self.width == 2 * self.height
    }
}

/// Bird's-eye-view virtual camera: a `width×height` tangent-plane image with
/// view-cone half-angle `fov_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevCamera {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl BevCamera {
    pub fn new(width: usize, height: usize, fov_deg: f64) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyCamera);
        }
        if !(fov_deg > 0.0 && fov_deg < 90.0) {
            return Err(GeometryError::InvalidFov(fov_deg));
        }
        Ok(Self {
            width,
            height,
            fov_deg,
        })
    }

    /// Focal length in pixels: `f = 0.5·W_b / tan(fov)`.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / self.fov_deg.to_radians().tan()
    }
}

/// Front-view (pinhole) camera with a small tilt of the imaging plane off
/// vertical; `fov_deg` is the half-angle subtended by half the image height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontCamera {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub tilt_deg: f64,
}

/// Quantities derived from a [`FrontCamera`], all in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontDerived {
    /// Focal length `f = (H_f/2)/tan(fov)`.
    pub f: f64,
    /// Angle between the image plane and the ray to the image bottom edge.
    pub varphi: f64,
    /// Elevation of the bottom-edge→camera segment above the ground plane.
    pub delta: f64,
    /// Distance from the optical center to the image bottom edge.
    pub l0: f64,
    /// Height of the optical center over the ground plane.
    pub h: f64,
    /// Forward ground distance from the camera foot to the image bottom edge.
    pub f_prime: f64,
}

impl FrontCamera {
    pub fn new(
        width: usize,
        height: usize,
        fov_deg: f64,
        tilt_deg: f64,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyCamera);
        }
        if !(fov_deg > 0.0 && fov_deg < 90.0) {
            return Err(GeometryError::InvalidFov(fov_deg));
        }
        Ok(Self {
            width,
            height,
            fov_deg,
            tilt_deg,
        })
    }

    pub fn derived(&self) -> FrontDerived {
        let fov = self.fov_deg.to_radians();
        let theta = self.tilt_deg.to_radians();
        let hf = self.height as f64;
        let f = (hf / 2.0) / fov.tan();
        let varphi = std::f64::consts::FRAC_PI_2 - fov;
        let delta = std::f64::consts::FRAC_PI_2 - (varphi - theta);
        let l0 = (f * f + (hf / 2.0) * (hf / 2.0)).sqrt();
        FrontDerived {
            f,
            varphi,
            delta,
            l0,
            h: l0 * delta.sin(),
            f_prime: l0 * delta.cos(),
        }
    }
}

/// Ground-camera attitude as roll/pitch/yaw in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attitude {
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
}

impl Attitude {
    pub fn zero() -> Self {
        Self {
            roll_deg: 0.0,
            pitch_deg: 0.0,
            yaw_deg: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.roll_deg == 0.0 && self.pitch_deg == 0.0 && self.yaw_deg == 0.0
    }

    /// Rotation matrix `Rz(yaw)·Ry(pitch)·Rx(roll)`; orthonormal with unit
    /// determinant.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let a = self.roll_deg.to_radians();
        let b = self.pitch_deg.to_radians();
        let g = self.yaw_deg.to_radians();
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sg, cg) = g.sin_cos();
        Matrix3::new(
            cg * cb,
            cg * sb * sa - sg * ca,
            cg * sb * ca + sg * sa,
            sg * cb,
            sg * sb * sa + cg * ca,
            sg * sb * ca - cg * sa,
            -sb,
            cb * sa,
            cb * ca,
        )
    }
}

/// Camera-frame ray in pixel-scaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRay {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Spherical direction: azimuth `phi ∈ [−π, π]`, elevation
/// `theta ∈ [−π/2, π/2]`, both radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub phi: f64,
    pub theta: f64,
}

/// Normalized equirectangular coordinates in `[−1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquirectCoord {
    pub x: f64,
    pub y: f64,
}

/// `phi = atan2(y, x)`, `theta = atan2(z, √(x²+y²))`.
///
/// The exact zero ray is rejected; the nadir ray `(0, 0, −f)` is fine and
/// adopts `atan2(0, 0) = 0` for its azimuth.
pub fn ray_to_spherical(ray: CameraRay) -> Result<SphericalCoord, GeometryError> {
    if ray.x == 0.0 && ray.y == 0.0 && ray.z == 0.0 {
        return Err(GeometryError::ZeroRay);
    }
    Ok(SphericalCoord {
        phi: ray.y.atan2(ray.x),
        theta: ray.z.atan2((ray.x * ray.x + ray.y * ray.y).sqrt()),
    })
}

/// `x₂ = −phi/π`, `y₂ = theta/(π/2)`. The sign flip on `x₂` reflects that a
/// panorama shows the scene as viewed outward from the optical center.
pub fn spherical_to_equirect(s: SphericalCoord) -> EquirectCoord {
    EquirectCoord {
        x: -s.phi / std::f64::consts::PI,
        y: s.theta / std::f64::consts::FRAC_PI_2,
    }
}

/// `u_p = (x₂+1)·W_p/2 ∈ [0, W_p]`, `v_p = (−y₂+1)·H_p/2 ∈ [0, H_p]`.
pub fn equirect_to_pano_pixel(e: EquirectCoord, cam: &PanoCamera) -> (f64, f64) {
    (
        (e.x + 1.0) * cam.width as f64 / 2.0,
        (-e.y + 1.0) * cam.height as f64 / 2.0,
    )
}

/// Camera-frame ray of a BEV pixel: `x₁ = −v_b + H_b/2`, `y₁ = −u_b + W_b/2`,
/// `z₁ = −f`.
pub fn bev_pixel_to_ray(u_b: f64, v_b: f64, cam: &BevCamera) -> CameraRay {
    CameraRay {
        x: -v_b + cam.height as f64 / 2.0,
        y: -u_b + cam.width as f64 / 2.0,
        z: -cam.focal(),
    }
}

/// Full spherical transform: BEV pixel → panorama pixel, composing ray
/// construction, attitude rotation, spherical conversion, and the
/// equirectangular mapping. At zero attitude this equals
/// [`spherical_map_closed_form`] exactly.
pub fn spherical_map(
    u_b: f64,
    v_b: f64,
    bev: &BevCamera,
    pano: &PanoCamera,
    attitude: &Attitude,
) -> (f64, f64) {
    let ray = bev_pixel_to_ray(u_b, v_b, bev);
    let ray = if attitude.is_zero() {
        ray
    } else {
        let r = attitude.rotation_matrix() * Vector3::new(ray.x, ray.y, ray.z);
        CameraRay {
            x: r[0],
            y: r[1],
            z: r[2],
        }
    };
    // the zero ray cannot arise here: z = −f < 0 always
    let s = SphericalCoord {
        phi: ray.y.atan2(ray.x),
        theta: ray.z.atan2((ray.x * ray.x + ray.y * ray.y).sqrt()),
    };
    equirect_to_pano_pixel(spherical_to_equirect(s), pano)
}

/// Closed-form spherical transform at zero attitude:
///
/// `u_p = [1 − atan2(W_b/2−u_b, H_b/2−v_b)/π]·W_p/2`
/// `v_p = [0.5 − atan2(−f, √((W_b/2−u_b)² + (H_b/2−v_b)²))/π]·H_p`
pub fn spherical_map_closed_form(
    u_b: f64,
    v_b: f64,
    bev: &BevCamera,
    pano: &PanoCamera,
) -> (f64, f64) {
    let du = bev.width as f64 / 2.0 - u_b;
    let dv = bev.height as f64 / 2.0 - v_b;
    let f = bev.focal();
    let u_p = (1.0 - du.atan2(dv) / std::f64::consts::PI) * pano.width as f64 / 2.0;
    let v_p =
        (0.5 - (-f).atan2((du * du + dv * dv).sqrt()) / std::f64::consts::PI) * pano.height as f64;
    (u_p, v_p)
}

/// Per-pixel BEV←panorama sampling grid; feed to `warp_by_grid` to produce
/// the BEV image. Grids depend only on the cameras and attitude, so build
/// once per configuration and reuse across input images.
pub fn build_bev_grid(bev: &BevCamera, pano: &PanoCamera, attitude: &Attitude) -> GridMap {
    let mut xs = Vec::with_capacity(bev.height * bev.width);
    let mut ys = Vec::with_capacity(bev.height * bev.width);
    for v in 0..bev.height {
        for u in 0..bev.width {
            let (x, y) = spherical_map(u as f64, v as f64, bev, pano, attitude);
            xs.push(x);
            ys.push(y);
        }
    }
    GridMap::new(bev.height, bev.width, xs, ys).expect("grid shape is consistent by construction")
}

/// Front-view→BEV pixel map via the sine rule and top-view similar triangles.
///
/// The BEV plane is horizontal through the image bottom edge; pixel
/// `(u_b, H_b)` touches the bottom edge, smaller `v_b` reaches further
/// forward. Grazing rays produce out-of-range (possibly non-finite)
/// coordinates, which downstream sampling fills with zero.
pub fn front_view_map(
    u_b: f64,
    v_b: f64,
    front: &FrontCamera,
    bev_size: (usize, usize),
) -> (f64, f64) {
    let d = front.derived();
    let theta = front.tilt_deg.to_radians();
    let (bev_h, bev_w) = (bev_size.0 as f64, bev_size.1 as f64);
    let hf = front.height as f64;
    let wf = front.width as f64;

    let forward = d.f_prime + bev_h - v_b; // ground distance from the camera foot
    let theta2 = (d.h / forward).atan();
    let theta3 = std::f64::consts::FRAC_PI_2 + theta - theta2;
    let v_f = hf - (theta2.sin() / theta3.sin()) * (bev_h - v_b);
    // lateral ratio = image-point forward coordinate over ground forward coordinate
    let u_f = wf / 2.0 - ((d.f_prime + (hf - v_f) * theta.sin()) / forward) * (bev_w / 2.0 - u_b);
    (u_f, v_f)
}

/// Per-pixel front-view sampling grid at the target BEV size (natively
/// `6·W_f` square for the intended field of view).
pub fn build_front_grid(front: &FrontCamera, target: (usize, usize)) -> GridMap {
    let (h, w) = target;
    let mut xs = Vec::with_capacity(h * w);
    let mut ys = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let (x, y) = front_view_map(u as f64, v as f64, front, target);
            xs.push(x);
            ys.push(y);
        }
    }
    GridMap::new(h, w, xs, ys).expect("grid shape is consistent by construction")
}

/// Front-view grid with a post-projection homography applied (the scale and
/// rotation matrices that bring the native `6·W_f` BEV to the network input
/// size): output pixel `p` maps through `post⁻¹` into the native BEV frame,
/// then through [`front_view_map`]. One interpolation pass instead of two.
pub fn build_front_grid_with(
    front: &FrontCamera,
    native: (usize, usize),
    post: &Homography,
    out: (usize, usize),
) -> GridMap {
    let (h, w) = out;
    let mut xs = Vec::with_capacity(h * w);
    let mut ys = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let (nu, nv) = post.apply_inverse_raw(u as f64, v as f64);
            let (x, y) = front_view_map(nu, nv, front, native);
            xs.push(x);
            ys.push(y);
        }
    }
    GridMap::new(h, w, xs, ys).expect("grid shape is consistent by construction")
}

/// Zero-pads a cropped panorama to the standard 2:1 aspect ratio, centering
/// the crop vertically (excess row goes to the top).
pub fn pad_to_equirect(img: &crate::raster::ImageBuffer) -> crate::raster::ImageBuffer {
    let w = img.width();
    let target_h = w / 2 + (w % 2);
    if img.height() >= target_h {
        return img.clone();
    }
    let pad_total = target_h - img.height();
    let pad_top = pad_total / 2 + (pad_total % 2);
    let mut out = crate::raster::ImageBuffer::new(target_h, w, img.channels());
    for y in 0..img.height() {
        for x in 0..w {
            out.set_pixel(y + pad_top, x, img.pixel(y, x));
        }
    }
    out
}
