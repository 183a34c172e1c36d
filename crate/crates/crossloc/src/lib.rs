//! Cross-view geo-localization toolkit.
//!
//! Warps ground-level imagery (equirectangular panoramas or front-view frames)
//! into a bird's-eye view through geometry-constrained projection, aligns the
//! BEV with a geo-referenced satellite patch using a correlation-driven
//! iterative homography estimator, and reads out a metric GPS fix plus camera
//! heading through Web Mercator math.
//!
//! Module map:
//! - [`raster`] — image containers, bilinear sampling, grid/homography warps
//! - [`geometry`] — panorama↔sphere↔BEV projections, front-view→BEV, attitude
//! - [`georef`] — Web Mercator GPS↔pixel conversion and label correction
//! - [`homography`] — projective algebra, 4-corner parameterization, DLT
//! - [`correlation`] — feature extraction, all-pairs correlation volumes, slices
//! - [`estimator`] — recurrent homography estimation, localization readout
//! - [`metrics`] — training losses and evaluation metrics
//! - [`synth`] — synthetic scenes, panorama rendering, benchmark harness

pub mod correlation;
pub mod estimator;
pub mod geometry;
pub mod georef;
pub mod homography;
pub mod metrics;
pub mod raster;
pub mod synth;
