//! The hybrid training objective (position, orientation, and infoNCE terms)
//! and the evaluation metrics: meter-level localization error, orientation
//! error, lateral/longitudinal decomposition, and recall summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::CorrelationVolume;
use crate::georef::{gps_to_global, ground_resolution, GeorefError, GpsCoord, PixelLabel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot summarize an empty record list")]
    EmptyRecords,
    #[error("ground-truth cell ({0}, {1}) outside the correlation map")]
    CellOutOfRange(usize, usize),
    #[error(transparent)]
    Georef(#[from] GeorefError),
}

/// Weights of the hybrid objective; defaults follow the VIGOR training recipe
/// (`α₁ = 0.1`, `α₂ = 10`, `α₃ = 1.0`, `τ = 4`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_dis: f64,
    pub alpha_ori: f64,
    pub alpha_info: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_dis: 0.1,
            alpha_ori: 10.0,
            alpha_info: 1.0,
            tau: 4.0,
        }
    }
}

/// Wraps an angle to `(−180°, 180°]`.
fn wrap_half_open_high(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Wraps an angle to `[−180°, 180°)`, the heading convention.
pub fn wrap_heading_deg(deg: f64) -> f64 {
    (deg + 180.0).rem_euclid(360.0) - 180.0
}

/// Squared pixel distance `(u−u*)² + (v−v*)²` — the position term is squared,
/// with no square root.
pub fn loss_dis(pred: &PixelLabel, gt: &PixelLabel) -> f64 {
    (pred.u - gt.u).powi(2) + (pred.v - gt.v).powi(2)
}

/// Absolute wrapped angular difference in degrees.
pub fn loss_ori(theta_deg: f64, theta_star_deg: f64) -> f64 {
    wrap_half_open_high(theta_deg - theta_star_deg).abs()
}

/// infoNCE over the center cell's correlation map:
/// `−log softmax(C[i_c, j_c, ·, ·]/τ)` at the ground-truth cell.
///
/// Evaluated through a max-subtracted log-sum-exp, which also makes the loss
/// exactly invariant under adding a constant to all correlations whenever the
/// shifted values are exactly representable.
pub fn loss_info(
    c: &CorrelationVolume,
    gt_cell: (usize, usize),
    tau: f64,
) -> Result<f64, MetricsError> {
    let (h, w, kh, kw) = c.dims();
    let (gk, gl) = gt_cell;
    if gk >= kh || gl >= kw {
        return Err(MetricsError::CellOutOfRange(gk, gl));
    }
    let center = c.map_at(h / 2, w / 2);
    let mut max = f64::NEG_INFINITY;
    for &v in center {
        max = max.max(v / tau);
    }
    let mut sum = 0.0;
    for &v in center {
        sum += (v / tau - max).exp();
    }
    let lse = max + sum.ln();
    Ok(lse - center[gk * kw + gl] / tau)
}

/// Weighted sum `α₁·dis + α₂·ori + α₃·info`.
pub fn hybrid_loss(dis: f64, ori: f64, info: f64, w: &LossWeights) -> f64 {
    w.alpha_dis * dis + w.alpha_ori * ori + w.alpha_info * info
}

/// Euclidean distance in meters between two GPS fixes, through the local Web
/// Mercator metric at `lat_ref_deg` (global pixel delta × ground resolution;
/// the zoom level cancels).
pub fn localization_error_m(
    pred: GpsCoord,
    gt: GpsCoord,
    lat_ref_deg: f64,
) -> Result<f64, MetricsError> {
    const ZOOM: u8 = 20;
    let a = gps_to_global(pred, ZOOM)?;
    let b = gps_to_global(gt, ZOOM)?;
    let res = ground_resolution(lat_ref_deg, ZOOM)?;
    Ok((a.x - b.x).hypot(a.y - b.y) * res)
}

/// East/north error components in meters between two GPS fixes, in the local
/// Mercator metric at `lat_ref_deg`.
pub fn error_east_north_m(
    pred: GpsCoord,
    gt: GpsCoord,
    lat_ref_deg: f64,
) -> Result<(f64, f64), MetricsError> {
    const ZOOM: u8 = 20;
    let a = gps_to_global(pred, ZOOM)?;
    let b = gps_to_global(gt, ZOOM)?;
    let res = ground_resolution(lat_ref_deg, ZOOM)?;
    // global y grows southward
    Ok(((a.x - b.x) * res, (b.y - a.y) * res))
}

/// Splits an east/north error vector into components orthogonal to
/// (`lateral`) and along (`longitudinal`) the ground-truth heading, both as
/// absolute values. Heading is degrees clockwise from north.
pub fn lateral_longitudinal(err_east: f64, err_north: f64, heading_deg: f64) -> (f64, f64) {
    let (s, c) = heading_deg.to_radians().sin_cos();
    // driving direction in (east, north) coords
    let longitudinal = err_east * s + err_north * c;
    let lateral = err_east * c - err_north * s;
    (lateral.abs(), longitudinal.abs())
}

/// One prediction versus its ground truth, with the derived error terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pred_gps: GpsCoord,
    pub pred_theta_deg: f64,
    pub gt_gps: GpsCoord,
    pub gt_theta_deg: f64,
    pub loc_err_m: f64,
    pub ori_err_deg: f64,
    pub lateral_m: f64,
    pub longitudinal_m: f64,
}

impl EvalRecord {
    /// Derives the error terms in the local Mercator metric at the
    /// ground-truth latitude.
    pub fn new(
        pred_gps: GpsCoord,
        pred_theta_deg: f64,
        gt_gps: GpsCoord,
        gt_theta_deg: f64,
    ) -> Result<Self, MetricsError> {
        let lat_ref = gt_gps.lat_deg;
        let loc_err_m = localization_error_m(pred_gps, gt_gps, lat_ref)?;
        let (e, n) = error_east_north_m(pred_gps, gt_gps, lat_ref)?;
        let (lateral_m, longitudinal_m) = lateral_longitudinal(e, n, gt_theta_deg);
        Ok(Self {
            pred_gps,
            pred_theta_deg,
            gt_gps,
            gt_theta_deg,
            loc_err_m,
            ori_err_deg: loss_ori(pred_theta_deg, gt_theta_deg),
            lateral_m,
            longitudinal_m,
        })
    }
}

/// Recall thresholds; defaults are 1 m/5 m for localization and 1°/5° for
/// orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub loc_m: [f64; 2],
    pub ori_deg: [f64; 2],
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            loc_m: [1.0, 5.0],
            ori_deg: [1.0, 5.0],
        }
    }
}

/// Aggregate report mirroring the benchmark table columns: mean/median
/// errors plus recall at both thresholds for lateral, longitudinal, and
/// orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub mean_loc_m: f64,
    pub median_loc_m: f64,
    pub mean_ori_deg: f64,
    pub median_ori_deg: f64,
    pub recall_lateral: [f64; 2],
    pub recall_longitudinal: [f64; 2],
    pub recall_ori: [f64; 2],
}

/// Median with the even-count convention: mean of the two central values.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn recall(values: impl Iterator<Item = f64> + Clone, threshold: f64) -> f64 {
    let total = values.clone().count();
    let hits = values.filter(|&v| v <= threshold).count();
    100.0 * hits as f64 / total as f64
}

/// Folds records into the aggregate report. Recalls are percentages.
pub fn summarize(records: &[EvalRecord], thresholds: &Thresholds) -> Result<EvalReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut loc: Vec<f64> = records.iter().map(|r| r.loc_err_m).collect();
    let mut ori: Vec<f64> = records.iter().map(|r| r.ori_err_deg).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let lat = records.iter().map(|r| r.lateral_m);
    let lon = records.iter().map(|r| r.longitudinal_m);
    let orid = records.iter().map(|r| r.ori_err_deg);
    Ok(EvalReport {
        count: records.len(),
        mean_loc_m: mean(&loc),
        mean_ori_deg: mean(&ori),
        recall_lateral: [
            recall(lat.clone(), thresholds.loc_m[0]),
            recall(lat, thresholds.loc_m[1]),
        ],
        recall_longitudinal: [
            recall(lon.clone(), thresholds.loc_m[0]),
            recall(lon, thresholds.loc_m[1]),
        ],
        recall_ori: [
            recall(orid.clone(), thresholds.ori_deg[0]),
            recall(orid, thresholds.ori_deg[1]),
        ],
        median_loc_m: median(&mut loc),
        median_ori_deg: median(&mut ori),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{correlate, FeatureMap};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume_from(data: Vec<f64>, h: usize, w: usize) -> CorrelationVolume {
        // build an h×w×h×w volume whose center map equals `data` by
        // correlating 1-channel features (values ≥ 0 so ReLU is inert);
        // only the center map is read by loss_info
        let mut fg = vec![0.0; h * w];
        fg[(h / 2) * w + w / 2] = 1.0;
        let fgm = FeatureMap::new(1, h, w, fg);
        let fsm = FeatureMap::new(1, h, w, data);
        correlate(&fgm, &fsm).unwrap()
    }

    #[test]
    fn loss_dis_anchors() {
        let a = PixelLabel { u: 10.0, v: 20.0 };
        assert_eq!(loss_dis(&a, &a), 0.0);
        let b = PixelLabel { u: 13.0, v: 24.0 };
        assert_eq!(loss_dis(&a, &b), 25.0);
        assert_eq!(loss_dis(&b, &a), 25.0);
    }

    #[test]
    fn loss_ori_wraps() {
        assert_eq!(loss_ori(42.0, 42.0), 0.0);
        assert_abs_diff_eq!(loss_ori(170.0, -170.0), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_ori(-170.0, 170.0), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            loss_ori(33.0 + 360.0, 12.0),
            loss_ori(33.0, 12.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn loss_info_uniform_is_log_count() {
        let c = volume_from(vec![0.25; 256], 16, 16);
        let l = loss_info(&c, (3, 7), 4.0).unwrap();
        assert_abs_diff_eq!(l, 256.0_f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn loss_info_sharp_peak_tends_to_zero() {
        let mut data = vec![0.0; 64];
        data[2 * 8 + 5] = 1.0;
        let c = volume_from(data, 8, 8);
        let l = loss_info(&c, (2, 5), 1e-3).unwrap();
        assert!(l < 1e-12, "loss {l}");
    }

    #[test]
    fn loss_info_matches_logsumexp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..50 {
            let data: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
            let c = volume_from(data.clone(), 8, 8);
            let tau = rng.gen_range(0.5..8.0);
            let cell = (rng.gen_range(0..8), rng.gen_range(0..8));
            // direct softmax evaluation
            let sum: f64 = data.iter().map(|&v| (v / tau).exp()).sum();
            let want = -((data[cell.0 * 8 + cell.1] / tau).exp() / sum).ln();
            let got = loss_info(&c, cell, tau).unwrap();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_info_shift_invariant_exactly() {
        // dyadic correlations, power-of-two shift and τ: the max-subtracted
        // differences are bitwise identical, so the loss is exactly equal
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let quant = f64::powi(2.0, 20);
        let data: Vec<f64> =
            (0..64).map(|_| (rng.gen::<f64>() * quant).floor() / quant).collect();
        let shifted: Vec<f64> = data.iter().map(|&v| v + 0.25).collect();
        let a = loss_info(&volume_from(data, 8, 8), (4, 4), 4.0).unwrap();
        let b = loss_info(&volume_from(shifted, 8, 8), (4, 4), 4.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_info_rejects_out_of_range_cell() {
        let c = volume_from(vec![0.1; 64], 8, 8);
        assert!(loss_info(&c, (8, 0), 4.0).is_err());
    }

    #[test]
    fn hybrid_loss_anchor() {
        let w = LossWeights::default();
        assert_eq!(hybrid_loss(0.0, 0.0, 0.0, &w), 0.0);
        let v = hybrid_loss(25.0, 2.0, 5.5452, &w);
        assert_abs_diff_eq!(v, 28.0452, epsilon = 1e-9);
        // monotone non-decreasing in each part
        assert!(hybrid_loss(26.0, 2.0, 5.5452, &w) >= v);
        assert!(hybrid_loss(25.0, 2.1, 5.5452, &w) >= v);
        assert!(hybrid_loss(25.0, 2.0, 5.6, &w) >= v);
        // linear in each part
        let base = hybrid_loss(1.0, 0.0, 0.0, &w);
        assert_abs_diff_eq!(hybrid_loss(2.0, 0.0, 0.0, &w), 2.0 * base, epsilon = 1e-12);
    }

    #[test]
    fn localization_error_anchors() {
        let g = GpsCoord::new(0.0, 0.0).unwrap();
        assert_eq!(localization_error_m(g, g, 0.0).unwrap(), 0.0);

        // 10 global pixels apart at the equator, zoom 20
        let meta_zoom = 20u8;
        let p = gps_to_global(g, meta_zoom).unwrap();
        let g2 = crate::georef::global_to_gps(crate::georef::GlobalPixel {
            x: p.x + 10.0,
            y: p.y,
            zoom: meta_zoom,
        })
        .unwrap();
        let want = 10.0 * ground_resolution(0.0, 20).unwrap();
        assert_abs_diff_eq!(
            localization_error_m(g2, g, 0.0).unwrap(),
            want,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(localization_error_m(g2, g, 0.0).unwrap(), 1.4929, epsilon = 1e-4);
    }

    #[test]
    fn localization_error_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..200 {
            let base = GpsCoord::new(rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0))
                .unwrap();
            let jitter = |rng: &mut ChaCha8Rng| {
                GpsCoord::new(
                    base.lat_deg + rng.gen_range(-0.001..0.001),
                    base.lon_deg + rng.gen_range(-0.001..0.001),
                )
                .unwrap()
            };
            let (a, b, c) = (jitter(&mut rng), jitter(&mut rng), jitter(&mut rng));
            let ab = localization_error_m(a, b, base.lat_deg).unwrap();
            let bc = localization_error_m(b, c, base.lat_deg).unwrap();
            let ac = localization_error_m(a, c, base.lat_deg).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn lateral_longitudinal_decomposition() {
        // error aligned with heading → purely longitudinal
        let (lat, lon) = lateral_longitudinal(3.0, 0.0, 90.0);
        assert_abs_diff_eq!(lat, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lon, 3.0, epsilon = 1e-12);
        // orthogonal error → purely lateral
        let (lat, lon) = lateral_longitudinal(0.0, 2.0, 90.0);
        assert_abs_diff_eq!(lat, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lon, 0.0, epsilon = 1e-12);
        // rotation is an isometry
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        for _ in 0..200 {
            let e: f64 = rng.gen_range(-5.0..5.0);
            let n: f64 = rng.gen_range(-5.0..5.0);
            let h = rng.gen_range(-180.0..180.0);
            let (lat, lon) = lateral_longitudinal(e, n, h);
            assert_abs_diff_eq!(lat * lat + lon * lon, e * e + n * n, epsilon = 1e-12);
        }
    }

    #[test]
    fn summarize_single_zero_record() {
        let g = GpsCoord::new(40.0, -74.0).unwrap();
        let rec = EvalRecord::new(g, 33.0, g, 33.0).unwrap();
        let rep = summarize(&[rec], &Thresholds::default()).unwrap();
        assert_eq!(rep.count, 1);
        assert_eq!(rep.mean_loc_m, 0.0);
        assert_eq!(rep.median_loc_m, 0.0);
        assert_eq!(rep.recall_lateral, [100.0, 100.0]);
        assert_eq!(rep.recall_longitudinal, [100.0, 100.0]);
        assert_eq!(rep.recall_ori, [100.0, 100.0]);
    }

    #[test]
    fn summarize_two_records_median_is_midpoint() {
        let gt = GpsCoord::new(0.0, 0.0).unwrap();
        let res = ground_resolution(0.0, 20).unwrap();
        let east = |m: f64| {
            let p = gps_to_global(gt, 20).unwrap();
            crate::georef::global_to_gps(crate::georef::GlobalPixel {
                x: p.x + m / res,
                y: p.y,
                zoom: 20,
            })
            .unwrap()
        };
        let r1 = EvalRecord::new(east(0.5), 0.0, gt, 0.0).unwrap();
        let r2 = EvalRecord::new(east(10.0), 0.0, gt, 0.0).unwrap();
        let rep = summarize(&[r1, r2], &Thresholds::default()).unwrap();
        assert_abs_diff_eq!(rep.mean_loc_m, 5.25, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.median_loc_m, 5.25, epsilon = 1e-9);
        // heading 0 ⇒ east error is lateral
        assert_eq!(rep.recall_lateral, [50.0, 50.0]);
        assert!(summarize(&[], &Thresholds::default()).is_err());
    }

    #[test]
    fn summarize_matches_statistics_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let gt = GpsCoord::new(10.0, 10.0).unwrap();
        let mut records = Vec::new();
        for _ in 0..31 {
            let pred = GpsCoord::new(
                gt.lat_deg + rng.gen_range(-0.0001..0.0001),
                gt.lon_deg + rng.gen_range(-0.0001..0.0001),
            )
            .unwrap();
            let theta = rng.gen_range(-10.0..10.0);
            records.push(EvalRecord::new(pred, theta, gt, 0.0).unwrap());
        }
        let rep = summarize(&records, &Thresholds::default()).unwrap();

        // independent statistics: simple sort/scan
        let mut loc: Vec<f64> = records.iter().map(|r| r.loc_err_m).collect();
        loc.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = loc.iter().sum::<f64>() / loc.len() as f64;
        assert_abs_diff_eq!(rep.mean_loc_m, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.median_loc_m, loc[15], epsilon = 1e-12);
        let r1 = records.iter().filter(|r| r.ori_err_deg <= 1.0).count() as f64
            / records.len() as f64
            * 100.0;
        assert_abs_diff_eq!(rep.recall_ori[0], r1, epsilon = 1e-12);
    }

    #[test]
    fn heading_wrap_conventions() {
        assert_eq!(wrap_heading_deg(180.0), -180.0);
        assert_eq!(wrap_heading_deg(-180.0), -180.0);
        assert_abs_diff_eq!(wrap_heading_deg(190.0), -170.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_heading_deg(360.0 + 5.0), 5.0, epsilon = 1e-12);
    }
}
