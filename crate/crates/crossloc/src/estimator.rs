//! Recurrent homography estimation over correlation volumes, with a
//! pluggable residual updater, GPS/heading readout, confidence maps, and
//! 4-rotation disambiguation.
//!
//! The loop follows the iterative scheme: project the feature lattice through
//! the current homography, sample correlation windows at both scales around
//! the projected coordinates, ask the updater for a residual 4-corner
//! displacement, accumulate it, and re-solve the homography by DLT. The
//! homography estimated on the feature grid is conjugated by the block stride
//! before any pixel/GPS readout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{
    correlate, extract_features, pool_half, sample_slices, CorrelationError, CorrelationSlice,
    CorrelationVolume, FeatureMode, SliceScale,
};
use crate::georef::{patch_pixel_to_gps, GeorefError, GpsCoord, PatchMeta, PixelLabel};
use crate::homography::{
    compose, corners_from_homography, dlt_from_corners, feature_to_image_frame, project_points,
    rotation_homography, CornerDisplacement, Homography, HomographyError, PointGrid,
};
use crate::metrics::wrap_heading_deg;
use crate::raster::{rotate_quarter, ImageBuffer, RasterError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("BEV {0}x{1} and satellite {2}x{3} sizes differ; resize to a common size first")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("degenerate displacement cube at iteration {step}: {source}")]
    DegenerateCube {
        step: usize,
        source: HomographyError,
        trace: Vec<IterationState>,
    },
    #[error("projected lattice left the projective plane at iteration {step}: {source}")]
    ProjectionFailed {
        step: usize,
        source: HomographyError,
        trace: Vec<IterationState>,
    },
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Georef(#[from] GeorefError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Updater selection; the trained CNN of the original design is replaced by
/// a classical soft-argmax flow reader behind the same contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdaterKind {
    SoftArgmax,
}

/// Loop configuration. Defaults: K = 6 iterations (use 10 for the smaller
/// front-view overlap), search radius r = 4, 16×16 feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub iterations: usize,
    pub radius: usize,
    pub grid: (usize, usize),
    pub feature_mode: FeatureMode,
    pub normalize_features: bool,
    pub updater: UpdaterKind,
    /// Softmax temperature of the classical updater, on unit-normalized
    /// correlation values.
    pub tau_updater: f64,
    /// Temperature of the confidence softmax.
    pub tau_confidence: f64,
    /// Orientation-prior envelope in feature cells, used by rotation
    /// disambiguation: a branch whose estimated cube exceeds this bound had
    /// to leave the prior's range (±45° ≈ 8.7 cells on a 16×16 grid, plus
    /// offset margin) to align, so it cannot be the intended solution even
    /// when its alignment is self-consistent. Quarter turns sit at ≥16 cells.
    pub max_cube_cells: f64,
    /// Convergence tolerance in feature cells: once an update falls below
    /// this, the loop holds its state for the remaining iterations. Updates
    /// this small are beneath the flow reader's noise floor, and iterating
    /// on them only random-walks the corners.
    pub min_update_cells: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            iterations: 6,
            radius: 4,
            grid: (16, 16),
            feature_mode: FeatureMode::AvgPool,
            normalize_features: true,
            updater: UpdaterKind::SoftArgmax,
            tau_updater: 0.03,
            tau_confidence: 0.05,
            max_cube_cells: 12.0,
            min_update_cells: 0.05,
        }
    }
}

impl EstimatorConfig {
    /// Front-view defaults: more iterations for the smaller overlap.
    pub fn front_view() -> Self {
        Self {
            iterations: 10,
            ..Self::default()
        }
    }
}

/// One loop step: the accumulated cube, its DLT homography (the loop
/// invariant `H^k = dlt(D^k)` holds by construction), and the corner error
/// against ground truth when one was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub step: usize,
    pub cube: CornerDisplacement,
    pub homography: Homography,
    pub corner_error: Option<f64>,
}

/// Residual estimator contract: given the lattice, its projection, and the
/// correlation windows at both scales, produce a corner-displacement update.
/// Zero correlation everywhere must produce a zero update.
pub trait ResidualUpdater {
    fn residual(
        &self,
        x: &PointGrid,
        x_proj: &PointGrid,
        s: &CorrelationSlice,
        s_half: &CorrelationSlice,
        h_prev: &Homography,
        frame: (f64, f64),
    ) -> Result<CornerDisplacement, EstimatorError>;
}

/// Classical correlation reader: per-cell soft-argmax flow inside the
/// full-resolution window, range-extended through the pooled volume when the
/// peak sits on the window rim, fit to a homography by correlation-weighted
/// DLT. Cells with zero correlation carry zero weight, so unobservable
/// content cannot pull the fit.
#[derive(Debug, Clone, Copy)]
pub struct SoftArgmaxUpdater {
    pub tau: f64,
}

/// Pseudo-weight of each identity corner anchor in the residual fit.
const CORNER_ANCHOR_WEIGHT: f64 = 0.2;


impl SoftArgmaxUpdater {
    /// Window maximum over the observable taps, with ties broken toward the
    /// window center (so a uniform window peaks at zero offset). Returns
    /// `None` when no observable tap is positive.
    fn window_peak(s: &CorrelationSlice, i: usize, j: usize) -> Option<(i64, i64, f64)> {
        let ((lu, hu), (lv, hv)) = s.observable_range(i, j);
        if lu > hu || lv > hv {
            return None;
        }
        let mut best = (i64::MAX, i64::MAX);
        let mut best_v = f64::NEG_INFINITY;
        for dv in lv..=hv {
            for du in lu..=hu {
                let v = s.at_offset(i, j, du, dv);
                let closer =
                    du.abs() + dv.abs() < best.0.abs().saturating_add(best.1.abs());
                if v > best_v || (v == best_v && closer) {
                    best_v = v;
                    best = (du, dv);
                }
            }
        }
        if best_v <= 0.0 {
            None
        } else {
            Some((best.0, best.1, best_v))
        }
    }

    /// Sub-tap offset of a 1-D peak from its two neighbors. Uses the larger
    /// of the linear (tent) and parabolic estimates by magnitude: the tent
    /// form is exact on the piecewise-linear surfaces bilinear slice
    /// sampling produces, the parabola on rounded correlation bumps, and
    /// each underestimates on the other's surface, so the combination never
    /// overshoots. `None` on plateaus.
    fn peak_fraction(a: f64, b: f64, c: f64) -> Option<f64> {
        let lo = a.min(c);
        let tent_denom = 2.0 * (b - lo);
        if tent_denom <= 1e-12 {
            return None;
        }
        let tent = ((c - a) / tent_denom).clamp(-0.5, 0.5);
        let parab_denom = 2.0 * b - a - c;
        let parab = if parab_denom > 1e-12 {
            (0.5 * (c - a) / parab_denom).clamp(-0.5, 0.5)
        } else {
            tent
        };
        Some(if parab.abs() > tent.abs() { parab } else { tent })
    }

    /// Displacement read from one window; `None` when no observable tap is
    /// positive.
    ///
    /// Refinements over a plain softmax of the zero-padded window, each
    /// forced by measurement: the peak is searched over observable taps only
    /// and the sub-tap fraction is read per axis from the peak's immediate
    /// neighbors (a full-window exponential center-of-mass both leaks
    /// correlation sidelobes into the flow at any temperature and biases
    /// partially observable windows inward, while its small-signal gain
    /// stays well under ½ — too slow for the loop's six iterations). The
    /// soft center-of-mass over the peak's 3×3 neighborhood at `tau` remains
    /// the fallback wherever the peak neighborhood is flat.
    fn window_flow(s: &CorrelationSlice, i: usize, j: usize, tau: f64) -> Option<(f64, f64)> {
        let ((lu, hu), (lv, hv)) = s.observable_range(i, j);
        let (pu, pv, peak_val) = Self::window_peak(s, i, j)?;

        // a unit peak on unit-normalized features is an exact match — any
        // genuine sub-tap offset would mix neighbors and pull it below 1 —
        // so neighbor asymmetry there is texture, not displacement
        if peak_val >= 1.0 - 1e-9 {
            return Some((pu as f64, pv as f64));
        }

        let tent_u = if pu > lu && pu < hu {
            Self::peak_fraction(
                s.at_offset(i, j, pu - 1, pv),
                peak_val,
                s.at_offset(i, j, pu + 1, pv),
            )
        } else {
            Some(0.0)
        };
        let tent_v = if pv > lv && pv < hv {
            Self::peak_fraction(
                s.at_offset(i, j, pu, pv - 1),
                peak_val,
                s.at_offset(i, j, pu, pv + 1),
            )
        } else {
            Some(0.0)
        };
        if let (Some(fu), Some(fv)) = (tent_u, tent_v) {
            return Some((pu as f64 + fu, pv as f64 + fv));
        }

        // flat peak neighborhood: soft center of mass over the observable 3×3
        let mut wsum = 0.0;
        let mut fu = 0.0;
        let mut fv = 0.0;
        for dv in (pv - 1).max(lv)..=(pv + 1).min(hv) {
            for du in (pu - 1).max(lu)..=(pu + 1).min(hu) {
                let w = ((s.at_offset(i, j, du, dv) - peak_val) / tau).exp();
                wsum += w;
                fu += w * du as f64;
                fv += w * dv as f64;
            }
        }
        let (cu, cv) = (fu / wsum, fv / wsum);
        match (tent_u, tent_v) {
            (Some(fu), None) => Some((pu as f64 + fu, cv)),
            (None, Some(fv)) => Some((cu, pv as f64 + fv)),
            _ => Some((cu, cv)),
        }
    }

    /// True when the peak sits at the physical window radius, meaning the
    /// true offset may lie beyond what this window can see.
    fn peak_on_rim(s: &CorrelationSlice, i: usize, j: usize) -> bool {
        let r = s.radius() as i64;
        match Self::window_peak(s, i, j) {
            Some((pu, pv, _)) => pu.abs() == r || pv.abs() == r,
            None => false,
        }
    }
}

impl ResidualUpdater for SoftArgmaxUpdater {
    fn residual(
        &self,
        _x: &PointGrid,
        x_proj: &PointGrid,
        s: &CorrelationSlice,
        s_half: &CorrelationSlice,
        h_prev: &Homography,
        frame: (f64, f64),
    ) -> Result<CornerDisplacement, EstimatorError> {
        let (h, w) = (x_proj.height(), x_proj.width());
        let mut src = Vec::with_capacity(h * w);
        let mut dst = Vec::with_capacity(h * w);
        let mut weights = Vec::with_capacity(h * w);
        let mut any = false;
        for i in 0..h {
            for j in 0..w {
                let p = x_proj.point(i, j);
                let fine_max = s.max_at(i, j);
                // weight = max correlation of the slice the flow was read
                // from; pooled peaks are naturally lower, which downweights
                // the coarser range-extended reads
                let (flow, weight) = if fine_max <= 0.0 {
                    ((0.0, 0.0), 0.0)
                } else if Self::peak_on_rim(s, i, j) {
                    // the true offset may exceed the window; the pooled
                    // volume's taps reach twice as far
                    match Self::window_flow(s_half, i, j, self.tau) {
                        Some((fu, fv)) => ((2.0 * fu, 2.0 * fv), s_half.max_at(i, j)),
                        None => ((0.0, 0.0), 0.0),
                    }
                } else {
                    (
                        Self::window_flow(s, i, j, self.tau).unwrap_or((0.0, 0.0)),
                        fine_max,
                    )
                };
                any = any || weight > 0.0;
                src.push(p);
                dst.push((p.0 + flow.0, p.1 + flow.1));
                weights.push(weight.max(0.0));
            }
        }
        if !any {
            return Ok(CornerDisplacement::zero());
        }
        // small identity anchors at the frame corners: where zero-fill leaves
        // a frame side without weighty cells the projective terms are
        // unconstrained there, and without anchors the fitted corners swing
        // freely from iteration to iteration; observed regions out-vote the
        // anchors by two orders of magnitude
        let n_data = src.len();
        for &(cx, cy) in crate::homography::frame_corners(frame).iter() {
            src.push((cx, cy));
            dst.push((cx, cy));
            weights.push(CORNER_ANCHOR_WEIGHT);
        }
        let fit = |w: &[f64]| match crate::homography::weighted_dlt(&src, &dst, w) {
            // a rank-deficient configuration may still support an affine fit
            Err(HomographyError::RankDeficient) => {
                crate::homography::weighted_affine(&src, &dst, w)
            }
            other => other,
        };
        let mut h_fit = match fit(&weights) {
            Ok(h) => h,
            // too few usable cells carry no motion information; do not
            // hallucinate an update
            Err(HomographyError::TooFewPoints(_)) | Err(HomographyError::RankDeficient) => {
                return Ok(CornerDisplacement::zero())
            }
            Err(e) => return Err(e.into()),
        };
        // iteratively trimmed refits: flows far off the consensus are
        // partial-content or mismatched reads that plain least squares has
        // no tolerance for. The threshold tracks the residual scale, so
        // early iterations (fit still underestimating large motion) keep
        // the large flows that carry it, while near convergence the floor
        // cuts everything that disagrees by more than ~¾ cell.
        let mut active = weights.clone();
        for _ in 0..2 {
            let mut residuals: Vec<f64> = Vec::with_capacity(n_data);
            for k in 0..n_data {
                if active[k] > 0.0 {
                    let (cx, cy) = h_fit.apply_raw(src[k].0, src[k].1);
                    residuals.push((cx - dst[k].0).hypot(cy - dst[k].1));
                }
            }
            if residuals.is_empty() {
                break;
            }
            residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = residuals[residuals.len() / 2];
            let threshold = (3.0 * median).max(0.5);
            let mut dropped = false;
            for k in 0..n_data {
                if active[k] <= 0.0 {
                    continue;
                }
                let (cx, cy) = h_fit.apply_raw(src[k].0, src[k].1);
                if (cx - dst[k].0).hypot(cy - dst[k].1) > threshold {
                    active[k] = 0.0;
                    dropped = true;
                }
            }
            match fit(&active) {
                Ok(h) => h_fit = h,
                Err(HomographyError::TooFewPoints(_)) | Err(HomographyError::RankDeficient) => {
                    break
                }
                Err(e) => return Err(e.into()),
            }
            if !dropped {
                break;
            }
        }
        let h_new = compose(&h_fit, h_prev)?;
        let c_new = corners_from_homography(&h_new, frame)?;
        let c_prev = corners_from_homography(h_prev, frame)?;
        let mut d = [[0.0; 2]; 4];
        for k in 0..4 {
            d[k][0] = c_new.d[k][0] - c_prev.d[k][0];
            d[k][1] = c_new.d[k][1] - c_prev.d[k][1];
        }
        Ok(CornerDisplacement { d })
    }
}

fn make_updater(cfg: &EstimatorConfig) -> SoftArgmaxUpdater {
    match cfg.updater {
        UpdaterKind::SoftArgmax => SoftArgmaxUpdater {
            tau: cfg.tau_updater,
        },
    }
}

/// Everything a run produces: the feature-frame homography, the per-step
/// trace, the correlation volume (for confidence readout), and the stride
/// from feature cells to image pixels.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub homography_feat: Homography,
    pub trace: Vec<IterationState>,
    pub volume: CorrelationVolume,
    pub stride: (f64, f64),
}

impl RunOutput {
    /// Loop homography conjugated into the image-pixel frame.
    pub fn homography_image(&self) -> Result<Homography, HomographyError> {
        debug_assert!((self.stride.0 - self.stride.1).abs() < 1e-12);
        feature_to_image_frame(&self.homography_feat, self.stride.0)
    }
}

/// Runs the recurrent estimation loop. `gt_cube` is optional ground truth
/// (in feature cells) used only for per-step corner-error diagnostics.
pub fn run_traced(
    bev: &ImageBuffer,
    sat: &ImageBuffer,
    cfg: &EstimatorConfig,
    gt_cube: Option<&CornerDisplacement>,
) -> Result<RunOutput, EstimatorError> {
    if bev.height() != sat.height() || bev.width() != sat.width() {
        return Err(EstimatorError::SizeMismatch(
            bev.height(),
            bev.width(),
            sat.height(),
            sat.width(),
        ));
    }
    let (gh, gw) = cfg.grid;
    let fg = extract_features(bev, gh, gw, cfg.feature_mode, cfg.normalize_features)?;
    let fs = extract_features(sat, gh, gw, cfg.feature_mode, cfg.normalize_features)?;
    let volume = correlate(&fg, &fs)?;
    let volume_half = pool_half(&volume)?;

    let lattice = PointGrid::lattice(gh, gw);
    let frame = (gw as f64, gh as f64);
    let updater = make_updater(cfg);

    let mut cube = CornerDisplacement::zero();
    let mut h = Homography::identity();
    let mut trace: Vec<IterationState> = Vec::with_capacity(cfg.iterations);

    let mut settled = false;
    for step in 1..=cfg.iterations {
        if !settled {
            let projected = match project_points(&h, &lattice) {
                Ok(p) => p,
                Err(source) => {
                    return Err(EstimatorError::ProjectionFailed {
                        step,
                        source,
                        trace,
                    })
                }
            };
            let s = sample_slices(&volume, &projected, cfg.radius, SliceScale::Full)?;
            let s_half = sample_slices(&volume_half, &projected, cfg.radius, SliceScale::Half)?;
            let delta = updater.residual(&lattice, &projected, &s, &s_half, &h, frame)?;
            if delta.max_abs() < cfg.min_update_cells {
                settled = true;
            } else {
                cube = cube.add(&delta);
                h = match dlt_from_corners(&cube, frame) {
                    Ok(h) => h,
                    Err(source) => {
                        return Err(EstimatorError::DegenerateCube {
                            step,
                            source,
                            trace,
                        })
                    }
                };
            }
            #[cfg(debug_assertions)]
            {
                let back = corners_from_homography(&h, frame).expect("cube frame is finite");
                debug_assert!(back.mean_corner_error(&cube) < 1e-9);
            }
        }
        trace.push(IterationState {
            step,
            cube,
            homography: h.clone(),
            corner_error: gt_cube.map(|g| cube.mean_corner_error(g)),
        });
    }

    Ok(RunOutput {
        homography_feat: h,
        trace,
        volume,
        stride: (
            bev.width() as f64 / gw as f64,
            bev.height() as f64 / gh as f64,
        ),
    })
}

/// Spec-shaped entry point: returns the final feature-frame homography and
/// the full iteration trace.
pub fn run(
    bev: &ImageBuffer,
    sat: &ImageBuffer,
    cfg: &EstimatorConfig,
) -> Result<(Homography, Vec<IterationState>), EstimatorError> {
    let out = run_traced(bev, sat, cfg, None)?;
    Ok((out.homography_feat, out.trace))
}

/// Satellite-pixel fix plus GPS and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationFix {
    pub u_s: f64,
    pub v_s: f64,
    pub gps: GpsCoord,
    /// Degrees clockwise from north (satellite "up"), in `[−180, 180)`.
    pub theta_deg: f64,
}

/// Projects the BEV center through `h` (image-pixel frame) for the position
/// fix, and a point `axis_offset` pixels up the central axis for the
/// heading: `θ` is the clockwise angle from satellite north to the projected
/// axis direction. Satellite image pixels must coincide with patch pixels.
pub fn localize(
    h_img: &Homography,
    meta: &PatchMeta,
    bev_size: (usize, usize),
    axis_offset: f64,
) -> Result<LocalizationFix, EstimatorError> {
    let (hh, ww) = (bev_size.0 as f64, bev_size.1 as f64);
    let center = (ww / 2.0, hh / 2.0);
    let (u_s, v_s) = h_img.project_point(center.0, center.1)?;
    let (u_a, v_a) = h_img.project_point(center.0, center.1 - axis_offset)?;
    let gps = patch_pixel_to_gps(meta, PixelLabel { u: u_s, v: v_s })?;
    let theta_deg = wrap_heading_deg((u_a - u_s).atan2(-(v_a - v_s)).to_degrees());
    Ok(LocalizationFix {
        u_s,
        v_s,
        gps,
        theta_deg,
    })
}

/// Softmax of the center cell's correlation map: a dense localization
/// probability distribution over the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    probs: Vec<f64>,
}

impl ConfidenceMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn at(&self, k: usize, l: usize) -> f64 {
        self.probs[k * self.width + l]
    }

    /// Grid cell with maximal probability, `(k, l)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Probability mass at the cell containing satellite pixel `(u, v)` given
    /// the pixel-per-cell stride; 0 when the pixel falls off the grid.
    pub fn mass_at_pixel(&self, u: f64, v: f64, stride: (f64, f64)) -> f64 {
        if !u.is_finite() || !v.is_finite() || u < 0.0 || v < 0.0 {
            return 0.0;
        }
        let l = (u / stride.0).floor() as usize;
        let k = (v / stride.1).floor() as usize;
        if k >= self.height || l >= self.width {
            return 0.0;
        }
        self.at(k, l)
    }
}

/// Confidence scalar for a homography: probability mass at the cell where
/// `h` sends the center cell's content. The confidence map describes the
/// center feature cell, whose content centroid sits half a cell off the
/// image center on an even grid; anchoring the readout there keeps the
/// scalar on the map's own peak.
fn confidence_mass(
    map: &ConfidenceMap,
    h_img: &Homography,
    stride: (f64, f64),
    grid: (usize, usize),
) -> f64 {
    let cu = (grid.1 / 2) as f64 * stride.0 + stride.0 / 2.0;
    let cv = (grid.0 / 2) as f64 * stride.1 + stride.1 / 2.0;
    let (au, av) = h_img.apply_raw(cu, cv);
    map.mass_at_pixel(au, av, stride)
}

/// Softmax over `C[i_c, j_c, ·, ·]/τ` with `(i_c, j_c)` the feature-grid
/// center. The map sums to 1.
pub fn confidence(c: &CorrelationVolume, tau: f64) -> ConfidenceMap {
    let (h, w, kh, kw) = c.dims();
    let center = c.map_at(h / 2, w / 2);
    let mut max = f64::NEG_INFINITY;
    for &v in center {
        max = max.max(v / tau);
    }
    let mut probs: Vec<f64> = center.iter().map(|&v| (v / tau - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    ConfidenceMap {
        height: kh,
        width: kw,
        probs,
    }
}

/// Full localization answer for one BEV/satellite pair.
#[derive(Debug, Clone)]
pub struct LocalizationResult {
    pub u_s: f64,
    pub v_s: f64,
    pub gps: GpsCoord,
    /// Heading in degrees clockwise from north, composed with any rotation
    /// applied during disambiguation.
    pub theta_deg: f64,
    /// Probability mass at the predicted cell.
    pub confidence: f64,
    pub confidence_map: ConfidenceMap,
    /// Homography in image pixels, mapping ORIGINAL (unrotated) BEV
    /// coordinates onto the satellite patch.
    pub homography_img: Homography,
    pub trace: Vec<IterationState>,
    /// Quarter-turns of clockwise rotation applied to the BEV before the
    /// winning run (0 unless disambiguation was requested).
    pub applied_rotation_deg: f64,
}

/// One-shot alignment: run the loop, rescale to pixels, localize, and attach
/// the confidence readout. `axis_offset` defaults to a quarter of the image
/// height.
pub fn align(
    bev: &ImageBuffer,
    sat: &ImageBuffer,
    cfg: &EstimatorConfig,
    meta: &PatchMeta,
    axis_offset: Option<f64>,
) -> Result<LocalizationResult, EstimatorError> {
    let out = run_traced(bev, sat, cfg, None)?;
    let h_img = out.homography_image()?;
    let axis = axis_offset.unwrap_or(bev.height() as f64 / 4.0);
    let fix = localize(&h_img, meta, (bev.height(), bev.width()), axis)?;
    let map = confidence(&out.volume, cfg.tau_confidence);
    let mass = confidence_mass(&map, &h_img, out.stride, cfg.grid);
    Ok(LocalizationResult {
        u_s: fix.u_s,
        v_s: fix.v_s,
        gps: fix.gps,
        theta_deg: fix.theta_deg,
        confidence: mass,
        confidence_map: map,
        homography_img: h_img,
        trace: out.trace,
        applied_rotation_deg: 0.0,
    })
}

/// Runs the estimator on the BEV rotated by 0°, 90°, 180°, 270° and keeps the
/// most confident branch; ties break toward the smallest rotation. The
/// returned homography and heading are composed back into the original BEV
/// frame, so `theta_deg` reports the camera's true heading regardless of the
/// branch that won.
pub fn disambiguate_rotations(
    bev: &ImageBuffer,
    sat: &ImageBuffer,
    cfg: &EstimatorConfig,
    meta: &PatchMeta,
    axis_offset: Option<f64>,
) -> Result<LocalizationResult, EstimatorError> {
    let axis = axis_offset.unwrap_or(bev.height() as f64 / 4.0);
    let mut branches: Vec<(f64, bool, u8, RunOutput)> = Vec::with_capacity(4);
    for q in 0..4u8 {
        let rotated = rotate_quarter(bev, q);
        let out = run_traced(&rotated, sat, cfg, None)?;
        let h_img = out.homography_image()?;
        let _fix = localize(&h_img, meta, (rotated.height(), rotated.width()), axis)?;
        let map = confidence(&out.volume, cfg.tau_confidence);
        let mass = confidence_mass(&map, &h_img, out.stride, cfg.grid);
        let in_envelope =
            out.trace.last().map_or(true, |s| s.cube.max_abs() <= cfg.max_cube_cells);
        branches.push((mass, in_envelope, q, out));
    }
    // the estimator is strong enough to absorb a quarter or half turn into
    // the homography itself, and such a solution is self-consistent, so raw
    // confidence cannot demote it; the orientation prior can. A branch whose
    // estimate left the prior envelope is not the intended alignment, so
    // in-envelope branches are preferred, then maximal confidence, then the
    // smallest rotation (scan order keeps ties deterministic).
    let any_in = branches.iter().any(|(_, ok, _, _)| *ok);
    let mut best: Option<(f64, u8, RunOutput)> = None;
    for (mass, ok, q, out) in branches {
        if any_in && !ok {
            continue;
        }
        if best.as_ref().map_or(true, |(m, _, _)| mass > *m) {
            best = Some((mass, q, out));
        }
    }
    let (_, q, out) = best.expect("four branches always run");

    // compose the applied rotation into the original frame; the pixel
    // rotation pivots about ((W−1)/2, (H−1)/2)
    let rot_deg = 90.0 * q as f64;
    let pivot = (
        (bev.width() as f64 - 1.0) / 2.0,
        (bev.height() as f64 - 1.0) / 2.0,
    );
    let h_winner = out.homography_image()?;
    let h_orig = if q == 0 {
        h_winner
    } else {
        compose(&h_winner, &rotation_homography(rot_deg, pivot))?
    };
    let fix = localize(&h_orig, meta, (bev.height(), bev.width()), axis)?;
    let map = confidence(&out.volume, cfg.tau_confidence);
    let mass = confidence_mass(&map, &out.homography_image()?, out.stride, cfg.grid);
    Ok(LocalizationResult {
        u_s: fix.u_s,
        v_s: fix.v_s,
        gps: fix.gps,
        theta_deg: fix.theta_deg,
        confidence: mass,
        confidence_map: map,
        homography_img: h_orig,
        trace: out.trace,
        applied_rotation_deg: rot_deg,
    })
}
