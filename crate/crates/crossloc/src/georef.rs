//! Web Mercator projection between WGS84 GPS and global/patch pixel
//! coordinates, plus label correction for VIGOR-style metadata.
//!
//! All geodetic arithmetic runs in 64-bit floats; single precision truncates
//! the five significant decimal places of GPS coordinates once trigonometry
//! is involved. GPS enters and leaves in degrees; Mercator math uses radians.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Latitude bound (degrees) beyond which the Mercator projection diverges.
pub const MAX_LAT_DEG: f64 = 85.05113;

/// Web Mercator sphere radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Pixels per tile edge.
pub const TILE_SIZE: f64 = 256.0;

const MAX_ZOOM: u8 = 23;

#[derive(Debug, Error)]
pub enum GeorefError {
    #[error("latitude {0}° at or beyond the Mercator bound ±{MAX_LAT_DEG}°")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0}° outside [−180°, 180°]")]
    LongitudeOutOfRange(f64),
    #[error("zoom {0} outside [0, {MAX_ZOOM}]")]
    ZoomOutOfRange(u8),
    #[error("global pixel ({x}, {y}) outside the zoom-{zoom} world square")]
    PixelOutOfRange { x: f64, y: f64, zoom: u8 },
    #[error("patch size must be positive")]
    EmptyPatch,
}

/// WGS84 position in degrees; latitude restricted to the Mercator-safe band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsCoord {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GpsCoord {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeorefError> {
        if !lat_deg.is_finite() || lat_deg.abs() >= MAX_LAT_DEG {
            return Err(GeorefError::LatitudeOutOfRange(lat_deg));
        }
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(GeorefError::LongitudeOutOfRange(lon_deg));
        }
        Ok(Self { lat_deg, lon_deg })
    }
}

/// Fractional pixel position in the zoom-level world raster of side
/// `256·2^zoom`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPixel {
    pub x: f64,
    pub y: f64,
    pub zoom: u8,
}

/// A satellite patch: center GPS, zoom level (20 for VIGOR, 19 for KITTI),
/// and square pixel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub center: GpsCoord,
    pub zoom: u8,
    pub size: u32,
}

impl PatchMeta {
    pub fn new(center: GpsCoord, zoom: u8, size: u32) -> Result<Self, GeorefError> {
        if zoom > MAX_ZOOM {
            return Err(GeorefError::ZoomOutOfRange(zoom));
        }
        if size == 0 {
            return Err(GeorefError::EmptyPatch);
        }
        Ok(Self { center, zoom, size })
    }
}

/// Fractional pixel position within a patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelLabel {
    pub u: f64,
    pub v: f64,
}

fn world_size(zoom: u8) -> f64 {
    TILE_SIZE * f64::powi(2.0, zoom as i32)
}

/// GPS → global pixels:
/// `x = (256/2π)·2^zoom·(lon+π)`, `y = (256/2π)·2^zoom·(π − ln tan(π/4 + lat/2))`.
pub fn gps_to_global(g: GpsCoord, zoom: u8) -> Result<GlobalPixel, GeorefError> {
    if zoom > MAX_ZOOM {
        return Err(GeorefError::ZoomOutOfRange(zoom));
    }
    if g.lat_deg.abs() >= MAX_LAT_DEG {
        return Err(GeorefError::LatitudeOutOfRange(g.lat_deg));
    }
    let k = world_size(zoom) / std::f64::consts::TAU;
    let lon = g.lon_deg.to_radians();
    let lat = g.lat_deg.to_radians();
    Ok(GlobalPixel {
        x: k * (lon + std::f64::consts::PI),
        y: k * (std::f64::consts::PI - (std::f64::consts::FRAC_PI_4 + lat / 2.0).tan().ln()),
        zoom,
    })
}

/// Exact algebraic inverse of [`gps_to_global`].
pub fn global_to_gps(p: GlobalPixel) -> Result<GpsCoord, GeorefError> {
    if p.zoom > MAX_ZOOM {
        return Err(GeorefError::ZoomOutOfRange(p.zoom));
    }
    let size = world_size(p.zoom);
    if !p.x.is_finite() || !p.y.is_finite() || p.x < 0.0 || p.x > size || p.y < 0.0 || p.y > size {
        return Err(GeorefError::PixelOutOfRange {
            x: p.x,
            y: p.y,
            zoom: p.zoom,
        });
    }
    let k = size / std::f64::consts::TAU;
    let lon = p.x / k - std::f64::consts::PI;
    let lat = 2.0 * ((std::f64::consts::PI - p.y / k).exp().atan() - std::f64::consts::FRAC_PI_4);
    GpsCoord::new(lat.to_degrees(), lon.to_degrees())
}

/// Patch-relative pixel of a GPS coordinate: anchored by the difference of
/// global pixels between the point and the patch center, offset to the patch
/// middle. Labels may fall outside the patch; the caller decides what to do.
pub fn gps_to_patch_pixel(meta: &PatchMeta, g: GpsCoord) -> Result<PixelLabel, GeorefError> {
    let pg = gps_to_global(g, meta.zoom)?;
    let pc = gps_to_global(meta.center, meta.zoom)?;
    let half = meta.size as f64 / 2.0;
    Ok(PixelLabel {
        u: half + (pg.x - pc.x),
        v: half + (pg.y - pc.y),
    })
}

/// Inverse of [`gps_to_patch_pixel`]; errors if the pixel leaves the world
/// square or the Mercator-safe latitude band.
pub fn patch_pixel_to_gps(meta: &PatchMeta, p: PixelLabel) -> Result<GpsCoord, GeorefError> {
    let pc = gps_to_global(meta.center, meta.zoom)?;
    let half = meta.size as f64 / 2.0;
    global_to_gps(GlobalPixel {
        x: pc.x + (p.u - half),
        y: pc.y + (p.v - half),
        zoom: meta.zoom,
    })
}

/// Ground resolution in meters per pixel at a given latitude:
/// `(2π·R·cos lat)/(256·2^zoom)`.
pub fn ground_resolution(lat_deg: f64, zoom: u8) -> Result<f64, GeorefError> {
    if zoom > MAX_ZOOM {
        return Err(GeorefError::ZoomOutOfRange(zoom));
    }
    if !lat_deg.is_finite() || lat_deg.abs() >= MAX_LAT_DEG {
        return Err(GeorefError::LatitudeOutOfRange(lat_deg));
    }
    Ok(std::f64::consts::TAU * EARTH_RADIUS_M * lat_deg.to_radians().cos() / world_size(zoom))
}

/// Recomputes a label from the ground-truth GPS through Web Mercator and
/// reports the metric distance to the legacy label, using the local ground
/// resolution at the patch center latitude.
pub fn correct_label(
    meta: &PatchMeta,
    ground_gps: GpsCoord,
    legacy: PixelLabel,
) -> Result<(PixelLabel, f64), GeorefError> {
    let corrected = gps_to_patch_pixel(meta, ground_gps)?;
    let res = ground_resolution(meta.center.lat_deg, meta.zoom)?;
    let dist = (corrected.u - legacy.u).hypot(corrected.v - legacy.v) * res;
    Ok((corrected, dist))
}
